use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cqa_core::model::CoderId;
use cqa_core::{Settings, Store, Workspace};
use cqa_server::schemas;
use jsonschema::{Retrieve, Uri};
use reqwest::{Client, Method, Response, StatusCode};
use serde_json::{json, Value};

struct Schemas;

impl Retrieve for Schemas {
    fn retrieve(&self, uri: &Uri<String>) -> Result<Value, Box<dyn std::error::Error + Send + Sync>> {
        let file = uri.path().as_str().rsplit('/').next().unwrap_or_default().to_owned();
        let body = schemas::get(schemas::VERSION, &file).ok_or_else(|| format!("unknown schema {uri}"))?;
        Ok(serde_json::from_str(body)?)
    }
}

fn assert_schema(name: &str, body: &Value) {
    let schema: Value = serde_json::from_str(schemas::get("v1", name).unwrap()).unwrap();
    let validator = jsonschema::options().with_retriever(Schemas).build(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{body:#}");
}

struct Harness {
    base: String,
    client: Client,
    tokens: [String; 3],
}

impl Harness {
    async fn start() -> Self {
        let store = Arc::new(Store::in_memory());
        let tokens = ["ann", "bob", "eve"].map(|c| store.issue_token(&CoderId::new(c)).unwrap());
        let ws = Arc::new(Workspace::from_settings(store, &Settings::default()).unwrap());
        let addr: SocketAddr = cqa_server::spawn("127.0.0.1:0".parse().unwrap(), ws).await.unwrap();
        Self {
            base: format!("http://{addr}"),
            client: Client::new(),
            tokens,
        }
    }

    fn request(&self, who: usize, method: Method, path: &str) -> reqwest::RequestBuilder {
        self.client
            .request(method, format!("{}{path}", self.base))
            .bearer_auth(&self.tokens[who])
    }

    async fn json(&self, who: usize, method: Method, path: &str, body: Option<Value>, version: Option<u64>) -> (StatusCode, Value) {
        let mut req = self.request(who, method, path);
        if let Some(b) = body {
            req = req.json(&b);
        }
        if let Some(v) = version {
            req = req.header("If-Version", v.to_string());
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let body = resp.json().await.unwrap_or(Value::Null);
        if !status.is_success() {
            assert_schema("error", &body);
        }
        (status, body)
    }

    async fn create(&self) -> (String, u64) {
        let source = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/book_reviews.txt"),
        )
        .unwrap();
        let body = json!({
            "name": "reviews",
            "source": source,
            "granularity": "paragraph",
            "coders": ["ann", "bob"],
        });
        assert_schema("new_project", &body);
        let resp = self.request(0, Method::POST, "/projects").json(&body).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::CREATED);
        assert_eq!(resp.headers()["x-project-version"], "1");
        let view: Value = resp.json().await.unwrap();
        assert_schema("project_view", &view);
        assert_eq!(view["units"].as_array().unwrap().len(), 15);
        (view["project"]["project_id"].as_str().unwrap().to_owned(), 1)
    }

    async fn code(&self, who: usize, id: &str, unit: usize, text: &str) -> u64 {
        let body = json!({ "code_text": text, "certainty": 4 });
        assert_schema("open_code_input", &body);
        let (status, ack) = self
            .json(who, Method::PUT, &format!("/projects/{id}/units/u{unit}/code"), Some(body), None)
            .await;
        assert_eq!(status, StatusCode::OK, "{ack}");
        assert_schema("ack", &ack);
        assert_schema("open_code_entry", &ack["entry"]);
        ack["version"].as_u64().unwrap()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_schemas_are_public() {
    let h = Harness::start().await;
    let resp = h.client.get(format!("{}/health", h.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let index: Value = h.client.get(format!("{}/schemas", h.base)).send().await.unwrap().json().await.unwrap();
    let paths = index["schemas"].as_array().unwrap();
    assert_eq!(paths.len(), schemas::V1.len());
    for path in paths {
        let resp = h.client.get(format!("{}{}", h.base, path.as_str().unwrap())).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK, "{path}");
        let schema: Value = resp.json().await.unwrap();
        jsonschema::options().with_retriever(Schemas).build(&schema).unwrap();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_or_unknown_token_is_unauthenticated() {
    let h = Harness::start().await;
    let resp = h.client.get(format!("{}/projects", h.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = h
        .client
        .get(format!("{}/projects", h.base))
        .bearer_auth("not-a-token")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let body: Value = resp.json().await.unwrap();
    assert_schema("error", &body);
    assert_eq!(body["error"], "Unauthenticated");
}

#[tokio::test(flavor = "multi_thread")]
async fn codes_are_hidden_before_the_gate() {
    let h = Harness::start().await;
    let (id, _) = h.create().await;
    h.code(0, &id, 0, "zqsecret practical guide").await;

    let (status, bob_view) = h.json(1, Method::GET, &format!("/projects/{id}"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("project_view", &bob_view);
    let raw = bob_view.to_string();
    assert!(!raw.contains("zqsecret"));
    assert!(!raw.contains("\"coder_id\":\"ann\""));

    let (status, err) = h.json(1, Method::GET, &format!("/projects/{id}/snapshot"), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "GateNotPassed");
    let (status, _) = h.json(1, Method::POST, &format!("/projects/{id}/calculate"), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, err) = h.json(2, Method::GET, &format!("/projects/{id}"), None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "NotFound");
    let (_, list) = h.json(2, Method::GET, "/projects", None, None).await;
    assert_schema("project_list", &list);
    assert!(list["projects"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn version_checks_and_idempotency() {
    let h = Harness::start().await;
    let (id, _) = h.create().await;
    let mut v = 0;
    for i in 0..15 {
        h.code(0, &id, i, "practical guide").await;
        v = h.code(1, &id, i, "practical starter guide").await;
    }
    let path = format!("/projects/{id}/phase");
    let (status, err) = h.json(0, Method::POST, &path, Some(json!({"to": "discussion"})), None).await;
    assert_eq!(status, StatusCode::PRECONDITION_REQUIRED);
    assert_eq!(err["error"], "PreconditionRequired");
    let (status, err) = h.json(0, Method::POST, &path, Some(json!({"to": "discussion"})), Some(v - 1)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "VersionConflict");
    let (status, ack) = h.json(0, Method::POST, &path, Some(json!({"to": "discussion"})), Some(v)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["version"], v + 1);

    let decide = |key: &'static str| {
        h.request(1, Method::PUT, &format!("/projects/{id}/units/u0/decision"))
            .header("If-Version", (v + 1).to_string())
            .header("Idempotency-Key", key)
            .json(&json!({"decision_text": "practical guide", "provenance": "coder_a"}))
    };
    let first: Response = decide("k1").send().await.unwrap();
    assert_eq!(first.headers()["x-project-version"], (v + 2).to_string().as_str());
    let first: Value = first.json().await.unwrap();
    let again: Value = decide("k1").send().await.unwrap().json().await.unwrap();
    assert_eq!(first["sequence_no"], again["sequence_no"]);
    assert_eq!(again["duplicate"], true);
    assert_schema("code_decision", &first["decision"]);

    let (status, err) = h
        .json(0, Method::PUT, &format!("/projects/{id}/units/u0/decision"), Some(json!({"decision_text": 5})), Some(v + 2))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "ValidationFailed");
}

#[tokio::test(flavor = "multi_thread")]
async fn three_phase_session_over_http() {
    let h = Harness::start().await;
    let (id, _) = h.create().await;
    let mut seen = vec![1u64];
    for i in 0..15 {
        seen.push(h.code(0, &id, i, ["practical guide", "dated advice", "clear finance"][i % 3]).await);
        seen.push(h.code(1, &id, i, ["practical starter guide", "thin content", "clear finance"][i % 3]).await);
    }
    let (_, progress) = h.json(0, Method::GET, &format!("/projects/{id}/progress"), None, None).await;
    assert_schema("progress_report", &progress);
    assert_eq!(progress["gate_enabled"], true);
    let (_, gate) = h.json(1, Method::GET, &format!("/projects/{id}/gate"), None, None).await;
    assert_schema("gate_status", &gate);

    let mut v = *seen.last().unwrap();
    let (_, ack) = h.json(1, Method::POST, &format!("/projects/{id}/phase"), Some(json!({"to": "discussion"})), Some(v)).await;
    v = ack["version"].as_u64().unwrap();
    seen.push(v);

    let (status, snap) = h.json(0, Method::POST, &format!("/projects/{id}/calculate"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("comparison_snapshot", &snap);
    let rows: Vec<&Value> = snap["rows"].as_array().unwrap().iter().collect();
    assert_eq!(rows.len(), 15);
    let order: Vec<&Value> = rows.iter().map(|r| &r["unit_id"]).collect();
    let ranking: Vec<&Value> = snap["report"]["ranking"].as_array().unwrap().iter().collect();
    assert_eq!(order, ranking);
    let (_, report) = h.json(1, Method::GET, &format!("/projects/{id}/report"), None, None).await;
    assert_schema("metrics_report", &report);
    assert_eq!(report, snap["report"]);

    let (status, versions) = h.json(0, Method::POST, &format!("/projects/{id}/units/u1/suggestions/decision"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("suggestion_set", &versions);
    assert_eq!(versions["items"].as_array().unwrap().len(), 3);

    let decisions = ["practical business guide", "uneven advice", "accessible finance", "honest stories"];
    for i in 0..15 {
        let body = json!({"decision_text": decisions[i % 4], "provenance": "custom"});
        assert_schema("decision_input", &body);
        let (status, ack) = h
            .json(i % 2, Method::PUT, &format!("/projects/{id}/units/u{i}/decision"), Some(body), Some(v))
            .await;
        assert_eq!(status, StatusCode::OK, "{ack}");
        v = ack["version"].as_u64().unwrap();
        seen.push(v);
    }
    let (_, ack) = h.json(0, Method::POST, &format!("/projects/{id}/replace"), None, Some(v)).await;
    assert_eq!(ack["replaced"], 15);
    v = ack["version"].as_u64().unwrap();
    seen.push(v);
    let (_, snap) = h.json(1, Method::POST, &format!("/projects/{id}/calculate"), None, None).await;
    assert_eq!(snap["report"]["kappa"], 1.0);
    assert_eq!(snap["report"]["agreement_rate"], 1.0);

    let (_, ack) = h.json(1, Method::POST, &format!("/projects/{id}/phase"), Some(json!({"to": "grouping"})), Some(v)).await;
    v = ack["version"].as_u64().unwrap();
    seen.push(v);
    let (status, draft) = h.json(0, Method::POST, &format!("/projects/{id}/ai-groups"), None, None).await;
    assert_eq!(status, StatusCode::OK, "{draft}");
    assert_schema("group_draft", &draft);
    let body = json!({"groups": draft["groups"]});
    assert_schema("groups_input", &body);
    let (status, ack) = h.json(0, Method::PUT, &format!("/projects/{id}/groups"), Some(body), Some(v)).await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    seen.push(ack["version"].as_u64().unwrap());
    let (_, groups) = h.json(1, Method::GET, &format!("/projects/{id}/groups"), None, None).await;
    assert_schema("groups_view", &groups);

    let (_, export) = h.json(1, Method::GET, &format!("/projects/{id}/export?format=json"), None, None).await;
    assert_schema("codebook_export", &export);
    let csv = h
        .request(0, Method::GET, &format!("/projects/{id}/export?format=csv"))
        .send()
        .await
        .unwrap();
    assert!(csv.headers()["content-type"].to_str().unwrap().starts_with("text/csv"));
    let csv = csv.text().await.unwrap();
    assert_eq!(csv.lines().next(), Some("group,decision,unit_index,provenance"));
    assert_eq!(csv.lines().count(), 16);

    assert!(seen.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
}

/// Reads server-sent events until `pred` matches one or the timeout passes.
async fn next_event(resp: &mut Response, buf: &mut String, wait: Duration) -> Option<(String, Value)> {
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        if let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut name = String::new();
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_owned();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim());
                }
            }
            if name.is_empty() {
                continue;
            }
            return Some((name, serde_json::from_str(&data).unwrap()));
        }
        let chunk = tokio::time::timeout_at(deadline, resp.chunk()).await.ok()?.ok()??;
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn progress_stream_emits_only_changes() {
    let h = Harness::start().await;
    let (id, _) = h.create().await;
    let path = format!("/projects/{id}/progress/stream");

    let resp = h.request(2, Method::GET, &path).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let mut resp = h.request(0, Method::GET, &path).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut buf = String::new();
    let (name, snapshot) = next_event(&mut resp, &mut buf, Duration::from_secs(2)).await.unwrap();
    assert_eq!(name, "snapshot");
    assert_schema("progress_report", &snapshot);
    assert!(next_event(&mut resp, &mut buf, Duration::from_millis(300)).await.is_none());

    for i in 0..5 {
        h.code(1, &id, i, "practical guide").await;
    }
    let mut last = None;
    while let Some((name, data)) = next_event(&mut resp, &mut buf, Duration::from_secs(2)).await {
        assert_eq!(name, "progress");
        assert_schema("progress_event", &data);
        assert_eq!(data["coder"], "bob");
        let done = data["progress"].as_f64() == Some(5.0 / 15.0);
        last = Some(data);
        if done {
            break;
        }
    }
    assert_eq!(last.unwrap()["progress"].as_f64(), Some(5.0 / 15.0));
}
