//! HTTP/JSON API over the protocol, the event log and a read-only sandbox.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sqlaudit_core::corpus::Corpus;
use sqlaudit_core::exec::{ExecutionBackend, ResultTable, SqliteBackend, Value};
use sqlaudit_core::forge::{forge_tie_free_instance, forge_tie_instance, random_instance, ForgeOptions};
use sqlaudit_core::instance::{DbInstance, Provenance};
use sqlaudit_core::sql::{parse_and_resolve, parse_sql, print_sql, DbSchema, Dialect};

use crate::protocol::{build_spec, Event, LabelSubmission, ProtocolError, Round, SchemaView, Session, TaskInput};
use crate::store::{EventLog, StoreError};

#[derive(Debug, Default)]
pub struct ServiceConfig {
    /// Event log file; sessions live only in memory when absent.
    pub store: Option<PathBuf>,
    /// Required as bearer token on session management calls when set.
    pub admin_token: Option<String>,
    /// Source of questions, schemas and databases for corpus examples.
    pub corpus: Option<Corpus>,
    pub query_timeout: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                details: None,
            },
        }
    }

    fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ProtocolError> for ApiError {
    fn from(e: ProtocolError) -> Self {
        use ProtocolError::*;
        let status = match &e {
            TooFewAnnotators | BadAnnotators | EmptyTask(_) | UnknownExample(_) => StatusCode::BAD_REQUEST,
            UnknownSession(_) | UnknownTask(_) | UnknownCandidate(_) => StatusCode::NOT_FOUND,
            NotAMember(_) => StatusCode::FORBIDDEN,
            MissingExplanation => StatusCode::UNPROCESSABLE_ENTITY,
            DuplicateSession(_) | SessionFinalized | NotDisagreementTask(_) | RoundIncomplete { .. } | WrongRound { .. } | NotFinalized => {
                StatusCode::CONFLICT
            }
        };
        let mut err = ApiError::new(status, e.code(), e.to_string());
        if let RoundIncomplete { missing } = &e {
            err.body.details = Some(json!({ "missing": missing }));
        }
        err
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct Service {
    sessions: RwLock<BTreeMap<String, Arc<RwLock<Session>>>>,
    task_owner: RwLock<HashMap<String, String>>,
    log: Mutex<EventLog>,
    sandbox: RwLock<HashMap<String, Arc<DbInstance>>>,
    next_instance: AtomicU64,
    corpus: Option<Corpus>,
    admin_token: Option<String>,
    backend: SqliteBackend,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn new_token() -> String {
    let bytes: [u8; 16] = rand::thread_rng().gen();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn canonical_sql(text: &str) -> String {
    parse_sql(text, Dialect::BenchmarkLenient).map_or_else(|_| text.trim().to_string(), |ast| print_sql(&ast))
}

impl Service {
    /// Open the service, replaying the event log if one is configured.
    pub fn open(config: ServiceConfig) -> Result<Arc<Service>, StoreError> {
        let (log, events) = match &config.store {
            Some(path) => EventLog::open(path)?,
            None => (EventLog::in_memory(), Vec::new()),
        };
        let svc = Service {
            sessions: RwLock::new(BTreeMap::new()),
            task_owner: RwLock::new(HashMap::new()),
            log: Mutex::new(log),
            sandbox: RwLock::new(HashMap::new()),
            next_instance: AtomicU64::new(1),
            corpus: config.corpus,
            admin_token: config.admin_token,
            backend: SqliteBackend {
                timeout: config.query_timeout.unwrap_or(Duration::from_secs(10)),
            },
        };
        for ev in events {
            svc.replay(ev);
        }
        Ok(Arc::new(svc))
    }

    fn replay(&self, ev: Event) {
        match ev {
            Event::Created { spec, tokens } => self.insert(Session::new(spec, tokens)),
            other => {
                if let Some(s) = self.sessions.read().unwrap().get(other.session_id()) {
                    s.write().unwrap().apply(other);
                }
            }
        }
    }

    fn insert(&self, session: Session) {
        let mut owners = self.task_owner.write().unwrap();
        for t in &session.spec.tasks {
            owners.insert(t.task_id.clone(), session.id().to_string());
        }
        self.sessions
            .write()
            .unwrap()
            .insert(session.id().to_string(), Arc::new(RwLock::new(session)));
    }

    fn session(&self, id: &str) -> Result<Arc<RwLock<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownSession(id.to_string()).into())
    }

    fn require_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match &self.admin_token {
            Some(t) if bearer(headers) != Some(t.as_str()) => Err(ApiError::unauthorized()),
            _ => Ok(()),
        }
    }

    fn require_annotator(&self, session: &Session, annotator: &str, headers: &HeaderMap) -> Result<(), ApiError> {
        if !session.is_member(annotator) {
            return Err(ProtocolError::NotAMember(annotator.to_string()).into());
        }
        match session.tokens.get(annotator) {
            Some(t) if bearer(headers) == Some(t.as_str()) => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }

    /// Admin, or an annotator of any session.
    fn require_any(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(token) = bearer(headers) else {
            return if self.admin_token.is_none() { Ok(()) } else { Err(ApiError::unauthorized()) };
        };
        if self.admin_token.as_deref().is_none_or(|t| t == token) {
            return Ok(());
        }
        let sessions = self.sessions.read().unwrap();
        if sessions.values().any(|s| s.read().unwrap().tokens.values().any(|t| t == token)) {
            Ok(())
        } else {
            Err(ApiError::unauthorized())
        }
    }

    /// Validate, persist, then apply: the log never holds a rejected event.
    fn mutate(&self, session_id: &str, plan: impl FnOnce(&Session) -> Result<Event, ProtocolError>) -> Result<Event, ApiError> {
        let s = self.session(session_id)?;
        let mut guard = s.write().unwrap();
        let ev = plan(&guard)?;
        self.log.lock().unwrap().append(&ev)?;
        guard.apply(ev.clone());
        Ok(ev)
    }

    fn task_inputs(&self, req: &CreateSession) -> Result<Vec<TaskInput>, ProtocolError> {
        if !req.tasks.is_empty() {
            return Ok(req
                .tasks
                .iter()
                .cloned()
                .map(|mut t| {
                    t.candidates.values_mut().for_each(|sql| *sql = canonical_sql(sql));
                    t
                })
                .collect());
        }
        req.example_ids
            .iter()
            .map(|id| {
                let from_corpus = match &self.corpus {
                    Some(c) => Some(c.example(id).ok_or_else(|| ProtocolError::UnknownExample(id.clone()))?),
                    None => None,
                };
                let question = match (req.questions.get(id), from_corpus) {
                    (Some(q), _) => q.clone(),
                    (None, Some(ex)) => ex.question.clone(),
                    (None, None) => return Err(ProtocolError::UnknownExample(id.clone())),
                };
                let schema_view = match (req.schemas.get(id), from_corpus) {
                    (Some(s), _) => s.clone(),
                    (None, Some(ex)) => self
                        .corpus
                        .as_ref()
                        .and_then(|c| c.schemas.get(&ex.database_id))
                        .map(SchemaView::from)
                        .unwrap_or_default(),
                    (None, None) => SchemaView::default(),
                };
                let candidates = req
                    .candidate_sets
                    .iter()
                    .filter_map(|(source, sqls)| sqls.get(id).map(|sql| (source.clone(), canonical_sql(sql))))
                    .collect();
                Ok(TaskInput {
                    example_id: id.clone(),
                    question,
                    schema_view,
                    candidates,
                })
            })
            .collect()
    }

    fn create_session(&self, req: CreateSession) -> Result<SessionCreated, ApiError> {
        let inputs = self.task_inputs(&req)?;
        let mut sessions = self.sessions.write().unwrap();
        let session_id = match &req.session_id {
            Some(id) if sessions.contains_key(id) => return Err(ProtocolError::DuplicateSession(id.clone()).into()),
            Some(id) if id.trim().is_empty() || id.contains('/') => return Err(ApiError::bad_request("invalid session id")),
            Some(id) => id.clone(),
            None => (sessions.len() + 1..)
                .map(|n| format!("s{n}"))
                .find(|id| !sessions.contains_key(id))
                .expect("unbounded"),
        };
        let spec = build_spec(&session_id, req.annotators.clone(), req.seed, inputs)?;
        let tokens: BTreeMap<String, String> = spec.annotators.iter().map(|a| (a.clone(), new_token())).collect();
        let ev = Event::Created {
            spec: spec.clone(),
            tokens: tokens.clone(),
        };
        self.log.lock().unwrap().append(&ev)?;
        let session = Session::new(spec, tokens.clone());
        let created = SessionCreated {
            session_id: session_id.clone(),
            round: Round::One,
            tasks: session.spec.tasks.len(),
            tokens,
        };
        let mut owners = self.task_owner.write().unwrap();
        for t in &session.spec.tasks {
            owners.insert(t.task_id.clone(), session_id.clone());
        }
        sessions.insert(session_id, Arc::new(RwLock::new(session)));
        Ok(created)
    }

    fn schema_for(&self, database_id: Option<&str>, explicit: Option<DbSchema>) -> Result<DbSchema, ApiError> {
        if let Some(s) = explicit {
            return Ok(s);
        }
        let id = database_id.ok_or_else(|| ApiError::bad_request("either schema or database_id is required"))?;
        self.corpus
            .as_ref()
            .and_then(|c| c.schemas.get(id))
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownDatabase", format!("unknown database {id}")))
    }

    fn build_instance(&self, req: CreateInstance) -> Result<DbInstance, ApiError> {
        let schema = self.schema_for(req.database_id.as_deref(), req.schema)?;
        let invalid = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidInstance", m);
        if let Some(tables) = req.tables {
            let mut inst = DbInstance::empty(schema, Provenance::Loaded);
            for (name, rows) in tables {
                let table = inst.schema.table(&name).ok_or_else(|| invalid(format!("unknown table {name}")))?;
                let canonical = table.name.clone();
                inst.tables.insert(canonical, rows);
            }
            inst.validate().map_err(|e| invalid(e.to_string()))?;
            return Ok(inst);
        }
        if let Some(f) = req.forge {
            let forge_err = |e: sqlaudit_core::forge::ForgeError| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "CannotForge", e.to_string());
            if f.mode == ForgeMode::Random {
                return random_instance(&schema, f.seed, f.rows).map_err(forge_err);
            }
            let sql = f.sql.ok_or_else(|| ApiError::bad_request("forging a tie needs the query in `sql`"))?;
            let ast = parse_and_resolve(&sql, &schema).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", e.to_string()))?;
            let opts = ForgeOptions {
                seed: f.seed,
                target_id: "sandbox".into(),
                ..ForgeOptions::default()
            };
            return match f.mode {
                ForgeMode::Tie => forge_tie_instance(&schema, &ast, &opts),
                _ => forge_tie_free_instance(&schema, &ast, &opts),
            }
            .map_err(forge_err);
        }
        let loaded = self
            .corpus
            .as_ref()
            .and_then(|c| c.instance(&schema.database_id).ok().flatten());
        Ok(loaded.unwrap_or_else(|| DbInstance::empty(schema, Provenance::Loaded)))
    }

    fn sandbox_instance(&self, id: &str) -> Result<Arc<DbInstance>, ApiError> {
        self.sandbox
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownInstance", format!("unknown instance {id}")))
    }
}

// Request and response bodies ------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    pub session_id: Option<String>,
    pub annotators: Vec<String>,
    pub seed: u64,
    pub example_ids: Vec<String>,
    /// Source name to (example id to SQL).
    pub candidate_sets: BTreeMap<String, BTreeMap<String, String>>,
    pub questions: BTreeMap<String, String>,
    pub schemas: BTreeMap<String, SchemaView>,
    /// Fully specified tasks, used instead of the fields above when present.
    pub tasks: Vec<TaskInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub round: Round,
    pub tasks: usize,
    pub tokens: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
pub struct AnnotatorQuery {
    pub annotator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(flatten)]
    pub submission: LabelSubmission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub task_id: String,
    pub candidate_id: String,
    pub round: Round,
    pub history: usize,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct FinalizeRequest {
    /// Finalize even if some round-two labels are missing.
    pub skip_missing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Advanced {
    pub round: Round,
    pub disagreement_tasks: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeMode {
    Random,
    Tie,
    TieFree,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ForgeRequest {
    pub mode: ForgeMode,
    #[serde(default)]
    pub sql: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rows")]
    pub rows: usize,
}

fn default_rows() -> usize {
    5
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct CreateInstance {
    pub database_id: Option<String>,
    pub schema: Option<DbSchema>,
    pub tables: Option<BTreeMap<String, Vec<Vec<Value>>>>,
    pub forge: Option<ForgeRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub instance_id: String,
    pub database_id: String,
    pub provenance: Provenance,
    /// Rows per table; empty for file-backed databases.
    pub row_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExecuteRequest {
    pub instance_id: String,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteResponse {
    pub instance_id: String,
    pub row_count: usize,
    #[serde(flatten)]
    pub result: ResultTable,
}

// Handlers -------------------------------------------------------------

type Svc = State<Arc<Service>>;

async fn create_session(State(svc): Svc, headers: HeaderMap, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult<SessionCreated> {
    svc.require_admin(&headers)?;
    let Json(req) = body?;
    Ok(Json(svc.create_session(req)?))
}

async fn list_tasks(
    State(svc): Svc,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<AnnotatorQuery>, QueryRejection>,
) -> ApiResult<crate::protocol::TaskQueue> {
    let Query(q) = q?;
    let s = svc.session(&id)?;
    let s = s.read().unwrap();
    svc.require_annotator(&s, &q.annotator, &headers)?;
    Ok(Json(s.task_queue(&q.annotator)?))
}

async fn get_task(
    State(svc): Svc,
    Path(task_id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<AnnotatorQuery>, QueryRejection>,
) -> ApiResult<crate::protocol::TaskView> {
    let Query(q) = q?;
    let owner = svc.task_owner.read().unwrap().get(&task_id).cloned();
    let owner = owner.ok_or_else(|| ApiError::from(ProtocolError::UnknownTask(task_id.clone())))?;
    let s = svc.session(&owner)?;
    let s = s.read().unwrap();
    svc.require_annotator(&s, &q.annotator, &headers)?;
    Ok(Json(s.task_view(&q.annotator, &task_id)?))
}

async fn submit_label(State(svc): Svc, headers: HeaderMap, body: Result<Json<LabelRequest>, JsonRejection>) -> ApiResult<LabelAck> {
    let Json(req) = body?;
    let session_id = match req.session_id {
        Some(id) => id,
        None => svc
            .task_owner
            .read()
            .unwrap()
            .get(&req.submission.task_id)
            .cloned()
            .ok_or_else(|| ApiError::from(ProtocolError::UnknownTask(req.submission.task_id.clone())))?,
    };
    {
        let s = svc.session(&session_id)?;
        let s = s.read().unwrap();
        svc.require_annotator(&s, &req.submission.annotator, &headers)?;
    }
    let ev = svc.mutate(&session_id, |s| s.check_label(req.submission, now_millis()))?;
    let Event::Labeled { record, .. } = ev else { unreachable!("check_label yields a label event") };
    let s = svc.session(&session_id)?;
    let history = s
        .read()
        .unwrap()
        .history
        .iter()
        .filter(|r| r.task_id == record.task_id && r.annotator_id == record.annotator_id && r.candidate_id == record.candidate_id)
        .count();
    Ok(Json(LabelAck {
        task_id: record.task_id,
        candidate_id: record.candidate_id,
        round: record.round,
        history,
        timestamp: record.timestamp,
    }))
}

async fn advance(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Advanced> {
    svc.require_admin(&headers)?;
    let ev = svc.mutate(&id, Session::plan_advance)?;
    let Event::Advanced { disagreements, .. } = ev else { unreachable!("plan_advance yields an advance event") };
    Ok(Json(Advanced {
        round: Round::Two,
        disagreement_tasks: disagreements.into_keys().collect(),
    }))
}

async fn finalize(
    State(svc): Svc,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Option<Json<FinalizeRequest>>,
) -> ApiResult<crate::protocol::AccuracyReport> {
    svc.require_admin(&headers)?;
    let skip = body.is_some_and(|Json(b)| b.skip_missing);
    svc.mutate(&id, |s| s.plan_finalize(skip))?;
    let s = svc.session(&id)?;
    let report = s.read().unwrap().report()?;
    Ok(Json(report))
}

async fn report(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<crate::protocol::AccuracyReport> {
    svc.require_admin(&headers)?;
    let s = svc.session(&id)?;
    let report = s.read().unwrap().report()?;
    Ok(Json(report))
}

fn info(id: &str, inst: &DbInstance) -> InstanceInfo {
    InstanceInfo {
        instance_id: id.to_string(),
        database_id: inst.schema.database_id.clone(),
        provenance: inst.provenance.clone(),
        row_counts: inst.tables.iter().map(|(t, rows)| (t.clone(), rows.len())).collect(),
    }
}

async fn create_instance(State(svc): Svc, headers: HeaderMap, body: Result<Json<CreateInstance>, JsonRejection>) -> ApiResult<InstanceInfo> {
    svc.require_any(&headers)?;
    let Json(req) = body?;
    let worker = svc.clone();
    let inst = tokio::task::spawn_blocking(move || worker.build_instance(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let id = format!("sbx-{}", svc.next_instance.fetch_add(1, Ordering::Relaxed));
    let out = info(&id, &inst);
    svc.sandbox.write().unwrap().insert(id, Arc::new(inst));
    Ok(Json(out))
}

async fn get_instance(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<serde_json::Value> {
    svc.require_any(&headers)?;
    let inst = svc.sandbox_instance(&id)?;
    Ok(Json(json!({
        "info": info(&id, &inst),
        "schema": SchemaView::from(&inst.schema),
        "tables": inst.tables,
    })))
}

async fn execute(State(svc): Svc, headers: HeaderMap, body: Result<Json<ExecuteRequest>, JsonRejection>) -> ApiResult<ExecuteResponse> {
    svc.require_any(&headers)?;
    let Json(req) = body?;
    let inst = svc.sandbox_instance(&req.instance_id)?;
    if let Err(e) = parse_sql(&req.sql, Dialect::BenchmarkLenient) {
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "ParseError", e.to_string());
        err.body.details = e.offset().map(|o| json!({ "offset": o }));
        return Err(err);
    }
    let backend = svc.backend.clone();
    let sql = req.sql.clone();
    let result = tokio::task::spawn_blocking(move || backend.execute_once(&inst, &sql))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    match result {
        Ok(table) => Ok(Json(ExecuteResponse {
            instance_id: req.instance_id,
            row_count: table.len(),
            result: table,
        })),
        Err(e) => {
            let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ExecutionError", e.to_string());
            err.body.details = Some(json!({ "backend_code": e.code, "category": e.category }));
            Err(err)
        }
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id/tasks", get(list_tasks))
        .route("/sessions/:id/advance", post(advance))
        .route("/sessions/:id/finalize", post(finalize))
        .route("/sessions/:id/report", get(report))
        .route("/tasks/:id", get(get_task))
        .route("/labels", post(submit_label))
        .route("/sandbox/instances", post(create_instance))
        .route("/sandbox/instances/:id", get(get_instance))
        .route("/sandbox/execute", post(execute))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route") })
        .with_state(svc)
}

/// Serve the API on a bound listener until the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, svc: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}
