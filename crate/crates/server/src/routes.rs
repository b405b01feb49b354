use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cqa_core::model::{CodeGroup, CoderId, DecisionProvenance, Phase, ProjectId, UnitId};
use cqa_core::service::{Ack, NewProject, WriteOptions};
use cqa_core::workflow::OpenCodeInput;
use cqa_core::Workspace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::{progress, schemas, AppState, IDEMPOTENCY_KEY, IF_VERSION, VERSION_HEADER};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schemas", get(schema_index))
        .route("/schemas/{version}/{name}", get(schema))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(load_project))
        .route("/projects/{id}/units/{unit}/code", put(submit_code))
        .route("/projects/{id}/progress", get(progress))
        .route("/projects/{id}/progress/stream", get(progress_stream))
        .route("/projects/{id}/gate", get(gate))
        .route("/projects/{id}/phase", post(advance_phase))
        .route("/projects/{id}/calculate", post(calculate))
        .route("/projects/{id}/report", get(report))
        .route("/projects/{id}/snapshot", get(snapshot))
        .route("/projects/{id}/units/{unit}/decision", put(finalize_decision))
        .route("/projects/{id}/replace", post(replace_all))
        .route("/projects/{id}/undo", post(undo_all))
        .route("/projects/{id}/groups", get(groups).put(save_groups))
        .route("/projects/{id}/ai-groups", post(ai_groups))
        .route("/projects/{id}/units/{unit}/suggestions/{kind}", post(suggest))
        .route("/projects/{id}/export", get(export))
        .with_state(state)
}

/// Authenticated coder, resolved from the bearer token.
pub struct Coder(pub CoderId);

impl FromRequestParts<AppState> for Coder {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::unauthenticated("missing Authorization header"))?;
        let token = header
            .to_str()
            .ok()
            .and_then(|h| h.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::unauthenticated("expected `Bearer <token>`"))?;
        state
            .workspace
            .store()
            .resolve_token(token)
            .map(Coder)
            .ok_or_else(|| ApiError::unauthenticated("unknown token"))
    }
}

/// JSON body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(ApiError::validation(rejection.body_text())),
        }
    }
}

/// Query string whose rejections use the API error shape.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        match Query::<T>::from_request_parts(parts, state).await {
            Ok(Query(v)) => Ok(Params(v)),
            Err(rejection) => Err(ApiError::validation(rejection.body_text())),
        }
    }
}

fn if_version(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    headers
        .get(IF_VERSION)
        .map(|v| {
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ApiError::validation("If-Version must be a non-negative integer"))
        })
        .transpose()
}

fn write_options(headers: &HeaderMap, version_required: bool) -> Result<WriteOptions, ApiError> {
    let expected_version = if_version(headers)?;
    if version_required && expected_version.is_none() {
        return Err(ApiError::precondition_required());
    }
    let mutation_id = headers
        .get(IDEMPOTENCY_KEY)
        .map(|v| {
            v.to_str()
                .map(str::to_owned)
                .map_err(|_| ApiError::validation("Idempotency-Key must be visible ASCII"))
        })
        .transpose()?;
    Ok(WriteOptions {
        expected_version,
        mutation_id,
    })
}

async fn run<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, cqa_core::Error> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn with_version(version: u64, status: StatusCode, body: Value) -> Response {
    let mut response = (status, Json(body)).into_response();
    response
        .headers_mut()
        .insert(VERSION_HEADER, HeaderValue::from(version));
    response
}

fn acknowledged(ack: Ack, extra: Value) -> Response {
    let mut body = json!({
        "version": ack.version,
        "sequence_no": ack.sequence_no,
        "duplicate": ack.duplicate,
    });
    if let (Value::Object(out), Value::Object(more)) = (&mut body, extra) {
        out.extend(more);
    }
    with_version(ack.version, StatusCode::OK, body)
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Runs a mutation on the blocking pool, then publishes fresh progress.
async fn mutate<T>(
    state: &AppState,
    coder: CoderId,
    project: ProjectId,
    f: impl FnOnce(&Workspace, &CoderId, &ProjectId) -> Result<(Ack, T), cqa_core::Error> + Send + 'static,
) -> Result<(Ack, T), ApiError>
where
    T: Send + 'static,
{
    let ws = state.workspace.clone();
    let id = project.clone();
    let (ack, out, report) = run(move || {
        let (ack, out) = f(&ws, &coder, &project)?;
        let report = ws.progress(&coder, &project).ok();
        Ok((ack, out, report))
    })
    .await?;
    if let Some(report) = report {
        state.hub.publish(&id, report);
    }
    Ok((ack, out))
}

#[derive(Deserialize)]
struct ThresholdQuery {
    threshold: Option<f64>,
}

impl ThresholdQuery {
    fn checked(&self) -> Result<Option<f64>, ApiError> {
        match self.threshold {
            Some(t) if !(0.0..=1.0).contains(&t) => Err(ApiError::validation("threshold must lie in [0, 1]")),
            t => Ok(t),
        }
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn schema_index() -> Json<Value> {
    Json(json!({ "schemas": schemas::index() }))
}

async fn schema(Path((version, name)): Path<(String, String)>) -> Result<Response, ApiError> {
    let body = schemas::get(&version, &name)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("no schema {version}/{name}")))?;
    Ok(([(CONTENT_TYPE, "application/schema+json")], body).into_response())
}

async fn list_projects(state: axum::extract::State<AppState>, Coder(coder): Coder) -> Result<Json<Value>, ApiError> {
    let ws = state.workspace.clone();
    let projects = run(move || Ok(ws.list_projects(&coder))).await?;
    Ok(Json(json!({ "projects": projects })))
}

async fn create_project(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    headers: HeaderMap,
    Body(new): Body<NewProject>,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, false)?;
    let ws = state.workspace.clone();
    let view = run(move || ws.create_project(&coder, new, opts.mutation_id)).await?;
    Ok(with_version(view.project.version, StatusCode::CREATED, to_value(&view)))
}

async fn load_project(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Response, ApiError> {
    let ws = state.workspace.clone();
    let view = run(move || ws.project(&coder, &id)).await?;
    Ok(with_version(view.project.version, StatusCode::OK, to_value(&view)))
}

async fn submit_code(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path((id, unit)): Path<(ProjectId, UnitId)>,
    headers: HeaderMap,
    Body(input): Body<OpenCodeInput>,
) -> Result<Response, ApiError> {
    // Coders write disjoint entries, so the version check is optional here.
    let opts = write_options(&headers, false)?;
    let (ack, entry) = mutate(&state, coder, id, move |ws, c, p| {
        ws.submit_open_code(c, p, &unit, &input, opts)
    })
    .await?;
    Ok(acknowledged(ack, json!({ "entry": entry })))
}

async fn progress(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Response, ApiError> {
    let ws = state.workspace.clone();
    let report = run(move || ws.progress(&coder, &id)).await?;
    Ok(with_version(report.version, StatusCode::OK, to_value(&report)))
}

async fn progress_stream(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Response, ApiError> {
    let ws = state.workspace.clone();
    let project = id.clone();
    let current = run(move || ws.progress(&coder, &project)).await?;
    let rx = state.hub.subscribe(&id, current);
    Ok(progress::stream(rx).into_response())
}

async fn gate(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Json<Value>, ApiError> {
    let ws = state.workspace.clone();
    let gate = run(move || ws.gate(&coder, &id)).await?;
    Ok(Json(to_value(gate)))
}

#[derive(Deserialize)]
struct PhaseBody {
    to: Phase,
}

async fn advance_phase(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    headers: HeaderMap,
    Body(body): Body<PhaseBody>,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, true)?;
    let (ack, ()) = mutate(&state, coder, id, move |ws, c, p| {
        ws.advance_phase(c, p, body.to, opts).map(|a| (a, ()))
    })
    .await?;
    Ok(acknowledged(ack, json!({ "phase": body.to })))
}

async fn calculate(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    Params(q): Params<ThresholdQuery>,
) -> Result<Response, ApiError> {
    let threshold = q.checked()?;
    let ws = state.workspace.clone();
    let snapshot = run(move || {
        ws.calculate(&coder, &id, threshold)?;
        ws.snapshot(&coder, &id, threshold)
    })
    .await?;
    Ok(with_version(snapshot.version, StatusCode::OK, to_value(&snapshot)))
}

async fn report(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    Params(q): Params<ThresholdQuery>,
) -> Result<Response, ApiError> {
    let threshold = q.checked()?;
    let ws = state.workspace.clone();
    let report = run(move || ws.report(&coder, &id, threshold)).await?;
    Ok(with_version(report.computed_at_version, StatusCode::OK, to_value(&report)))
}

async fn snapshot(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    Params(q): Params<ThresholdQuery>,
) -> Result<Response, ApiError> {
    let threshold = q.checked()?;
    let ws = state.workspace.clone();
    let snapshot = run(move || ws.snapshot(&coder, &id, threshold)).await?;
    Ok(with_version(snapshot.version, StatusCode::OK, to_value(&snapshot)))
}

#[derive(Deserialize)]
struct DecisionBody {
    decision_text: String,
    provenance: DecisionProvenance,
}

async fn finalize_decision(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path((id, unit)): Path<(ProjectId, UnitId)>,
    headers: HeaderMap,
    Body(body): Body<DecisionBody>,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, true)?;
    let (ack, decision) = mutate(&state, coder, id, move |ws, c, p| {
        ws.finalize_decision(c, p, &unit, &body.decision_text, body.provenance, opts)
    })
    .await?;
    Ok(acknowledged(ack, json!({ "decision": decision })))
}

async fn replace_all(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, true)?;
    let (ack, replaced) = mutate(&state, coder, id, move |ws, c, p| ws.replace_all(c, p, opts)).await?;
    Ok(acknowledged(ack, json!({ "replaced": replaced })))
}

async fn undo_all(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, true)?;
    let (ack, restored) = mutate(&state, coder, id, move |ws, c, p| ws.undo_all(c, p, opts)).await?;
    Ok(acknowledged(ack, json!({ "restored": restored })))
}

async fn groups(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Response, ApiError> {
    let ws = state.workspace.clone();
    let groups = run(move || ws.groups(&coder, &id)).await?;
    Ok(with_version(groups.version, StatusCode::OK, to_value(&groups)))
}

#[derive(Deserialize)]
struct GroupsBody {
    groups: Vec<CodeGroup>,
}

async fn save_groups(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    headers: HeaderMap,
    Body(body): Body<GroupsBody>,
) -> Result<Response, ApiError> {
    let opts = write_options(&headers, true)?;
    let (ack, ()) = mutate(&state, coder, id, move |ws, c, p| {
        ws.save_groups(c, p, &body.groups, opts).map(|a| (a, ()))
    })
    .await?;
    Ok(acknowledged(ack, json!({})))
}

async fn ai_groups(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
) -> Result<Response, ApiError> {
    let ws = state.workspace.clone();
    let draft = run(move || ws.ai_groups(&coder, &id)).await?;
    Ok(with_version(draft.version, StatusCode::OK, to_value(&draft)))
}

async fn suggest(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path((id, unit, kind)): Path<(ProjectId, UnitId, String)>,
) -> Result<Json<Value>, ApiError> {
    let ws = state.workspace.clone();
    let set = match kind.as_str() {
        "open-codes" => run(move || ws.suggest_open_codes(&coder, &id, &unit)).await?,
        "relevant-codes" => run(move || ws.suggest_relevant_codes(&coder, &id, &unit)).await?,
        "decision" => run(move || ws.suggest_decision(&coder, &id, &unit)).await?,
        other => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "NotFound",
                format!("unknown suggestion kind `{other}`"),
            ))
        }
    };
    Ok(Json(to_value(set)))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    state: axum::extract::State<AppState>,
    Coder(coder): Coder,
    Path(id): Path<ProjectId>,
    Params(q): Params<ExportQuery>,
) -> Result<Response, ApiError> {
    let csv = match q.format.as_deref() {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => return Err(ApiError::validation(format!("unknown export format `{other}`"))),
    };
    let ws = state.workspace.clone();
    let export = run(move || ws.export(&coder, &id)).await?;
    let mut response = if csv {
        ([(CONTENT_TYPE, "text/csv; charset=utf-8")], export.to_csv()).into_response()
    } else {
        Json(to_value(&export)).into_response()
    };
    response
        .headers_mut()
        .insert(VERSION_HEADER, HeaderValue::from(export.version));
    Ok(response)
}
