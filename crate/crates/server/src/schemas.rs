//! JSON Schemas (draft 2020-12) for request and response bodies, served
//! under `/schemas/v1/<name>.json`. Cross-references are relative URIs.

pub const VERSION: &str = "v1";

pub const V1: &[(&str, &str)] = &[
    ("ack", include_str!("../schemas/v1/ack.json")),
    ("code_decision", include_str!("../schemas/v1/code_decision.json")),
    ("code_group", include_str!("../schemas/v1/code_group.json")),
    ("codebook", include_str!("../schemas/v1/codebook.json")),
    ("codebook_export", include_str!("../schemas/v1/codebook_export.json")),
    ("comparison_snapshot", include_str!("../schemas/v1/comparison_snapshot.json")),
    ("data_unit", include_str!("../schemas/v1/data_unit.json")),
    ("decision_input", include_str!("../schemas/v1/decision_input.json")),
    ("error", include_str!("../schemas/v1/error.json")),
    ("gate_status", include_str!("../schemas/v1/gate_status.json")),
    ("group_draft", include_str!("../schemas/v1/group_draft.json")),
    ("groups_input", include_str!("../schemas/v1/groups_input.json")),
    ("groups_view", include_str!("../schemas/v1/groups_view.json")),
    ("metrics_report", include_str!("../schemas/v1/metrics_report.json")),
    ("new_project", include_str!("../schemas/v1/new_project.json")),
    ("open_code_entry", include_str!("../schemas/v1/open_code_entry.json")),
    ("open_code_input", include_str!("../schemas/v1/open_code_input.json")),
    ("phase_input", include_str!("../schemas/v1/phase_input.json")),
    ("progress_event", include_str!("../schemas/v1/progress_event.json")),
    ("progress_report", include_str!("../schemas/v1/progress_report.json")),
    ("project", include_str!("../schemas/v1/project.json")),
    ("project_list", include_str!("../schemas/v1/project_list.json")),
    ("project_view", include_str!("../schemas/v1/project_view.json")),
    ("roster", include_str!("../schemas/v1/roster.json")),
    ("suggestion_set", include_str!("../schemas/v1/suggestion_set.json")),
];

/// Paths of every published schema.
pub fn index() -> Vec<String> {
    V1.iter().map(|(name, _)| format!("/schemas/{VERSION}/{name}.json")).collect()
}

pub fn get(version: &str, file: &str) -> Option<&'static str> {
    if version != VERSION {
        return None;
    }
    let name = file.strip_suffix(".json").unwrap_or(file);
    V1.iter().find(|(n, _)| *n == name).map(|(_, body)| *body)
}
