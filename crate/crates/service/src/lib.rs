//! HTTP front for reader-study sessions.
//!
//! Sessions live under `sessions_dir/<id>/` as `session.json` (the trial
//! plan, written once) plus `log.jsonl` (one scored trial per line, append
//! only). Restarting the service replays every log.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use anthro_observer::io::{read_stack, write_json, Manifest, Sidecar, MANIFEST_FILE};
use anthro_observer::study::{
    create_session, render_frame, session_id, study_results, Session, SessionState, SessionView, StudyPlan,
    StudyResults, MAX_SCORE,
};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

const SESSION_FILE: &str = "session.json";
const LOG_FILE: &str = "log.jsonl";
const KEY_FILE: &str = "token.key";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] anthro_observer::Error),
    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("results are hidden until every trial is scored ({scored}/{total})")]
    Blinded { scored: usize, total: usize },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use anthro_observer::Error as E;
        match self {
            ServiceError::Core(E::Validation(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Core(E::NotFound(_)) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Core(E::Conflict(_)) => StatusCode::CONFLICT,
            ServiceError::Core(E::InsufficientData(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Blinded { .. } => StatusCode::FORBIDDEN,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.to_string() }));
        (self.status(), body).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// Dataset plus live sessions. Each session has its own lock, so writes to
/// one session never wait on another.
pub struct Store {
    data_dir: PathBuf,
    sessions_dir: PathBuf,
    stacks: HashMap<u64, Sidecar>,
    manifest: Manifest,
    key: Vec<u8>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl Store {
    /// Open a dataset directory (with `manifest.json`) and replay every
    /// session found under `sessions_dir`.
    pub fn open(data_dir: &Path, sessions_dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&data_dir.join(MANIFEST_FILE))?;
        fs::create_dir_all(sessions_dir).map_err(io_err(sessions_dir))?;
        let key_path = sessions_dir.join(KEY_FILE);
        let key = match fs::read(&key_path) {
            Ok(k) => k,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let k: [u8; 32] = rand::random();
                fs::write(&key_path, k).map_err(io_err(&key_path))?;
                k.to_vec()
            }
            Err(e) => return Err(io_err(&key_path)(e)),
        };
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(sessions_dir).map_err(io_err(sessions_dir))? {
            let dir = entry.map_err(io_err(sessions_dir))?.path();
            if !dir.join(SESSION_FILE).is_file() {
                continue;
            }
            let state = load_session(&dir)?;
            sessions.insert(state.session.session_id.clone(), Arc::new(Mutex::new(state)));
        }
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            sessions_dir: sessions_dir.to_path_buf(),
            stacks: manifest.stacks.iter().map(|s| (s.stack_id, s.clone())).collect(),
            manifest,
            key,
            sessions: RwLock::new(sessions),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.sessions_dir.join(id)
    }

    pub fn create(&self, plan: &StudyPlan) -> Result<SessionView> {
        let mut map = self.sessions.write().expect("session map poisoned");
        let id = loop {
            let id = session_id(plan.order_seed, rand::random());
            if !map.contains_key(&id) {
                break id;
            }
        };
        let session = create_session(plan, &self.manifest, &id, &self.key)?;
        let dir = self.session_dir(&id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join(SESSION_FILE), &session)?;
        let log = dir.join(LOG_FILE);
        fs::File::create(&log).map_err(io_err(&log))?;
        let state = SessionState::new(session);
        let view = state.blinded_view();
        map.insert(id, Arc::new(Mutex::new(state)));
        Ok(view)
    }

    pub fn view(&self, id: &str) -> Result<SessionView> {
        let s = self.session(id)?;
        let state = s.lock().expect("session poisoned");
        Ok(state.blinded_view())
    }

    /// Validate, append to the log (synced), then record in memory.
    pub fn submit(&self, id: &str, trial: &str, req: &ScoreRequest) -> Result<ScoreAck> {
        let s = self.session(id)?;
        let mut state = s.lock().expect("session poisoned");
        let index = state.session.trial(trial)?.index;
        let score = u8::try_from(req.score)
            .ok()
            .filter(|&v| v <= MAX_SCORE)
            .ok_or_else(|| {
                anthro_observer::Error::Validation(format!("score {} outside 0..={MAX_SCORE}", req.score))
            })?;
        let rec = state.record_for(index, score, req.response_time_ms)?;
        let path = self.session_dir(id).join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(rec.to_json_line()?.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))?;
        state.apply(rec)?;
        Ok(ScoreAck {
            trial: index,
            n_scored: state.n_scored(),
            n_trials: state.session.trials.len(),
            complete: state.is_complete(),
        })
    }

    /// Slice `frame` (1-based) of a trial's stack as an 8-bit grayscale PNG.
    pub fn frame_png(&self, id: &str, trial: &str, frame: usize) -> Result<Vec<u8>> {
        let stack_id = {
            let s = self.session(id)?;
            let state = s.lock().expect("session poisoned");
            state.session.trial(trial)?.stack_id
        };
        let sidecar = self
            .stacks
            .get(&stack_id)
            .ok_or_else(|| anthro_observer::Error::NotFound(format!("stack for trial {trial}")))?;
        let stack = read_stack(&self.data_dir, sidecar)?;
        let pixels = render_frame(&stack, sidecar, frame)?;
        encode_png(&pixels, stack.dims.cols as u32, stack.dims.rows as u32)
    }

    pub fn results(&self, id: &str) -> Result<StudyResults> {
        let s = self.session(id)?;
        let state = s.lock().expect("session poisoned");
        if !state.is_complete() {
            return Err(ServiceError::Blinded {
                scored: state.n_scored(),
                total: state.session.trials.len(),
            });
        }
        Ok(study_results(&state)?)
    }
}

/// Rebuild a session from its directory.
pub fn load_session(dir: &Path) -> Result<SessionState> {
    let path = dir.join(SESSION_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let session: Session = serde_json::from_str(&text).map_err(anthro_observer::Error::from)?;
    let log = dir.join(LOG_FILE);
    match fs::File::open(&log) {
        Ok(f) => Ok(SessionState::replay(session, BufReader::new(f))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SessionState::new(session)),
        Err(e) => Err(io_err(&log)(e)),
    }
}

pub fn encode_png(pixels: &[u8], width: u32, height: u32) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header()?;
    w.write_image_data(pixels)?;
    w.finish()?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    /// Signed so that out-of-range values get a validation error rather than
    /// a decoding failure.
    pub score: i64,
    #[serde(default)]
    pub response_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAck {
    pub trial: usize,
    pub n_scored: usize,
    pub n_trials: usize,
    pub complete: bool,
}

type AppState = Arc<Store>;

async fn create_handler(State(store): State<AppState>, Json(plan): Json<StudyPlan>) -> Result<Response> {
    let view = store.create(&plan)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn view_handler(State(store): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>> {
    Ok(Json(store.view(&id)?))
}

async fn frame_handler(
    State(store): State<AppState>,
    UrlPath((id, trial, frame)): UrlPath<(String, String, usize)>,
) -> Result<Response> {
    let png = tokio::task::spawn_blocking(move || store.frame_png(&id, &trial, frame))
        .await
        .expect("frame task panicked")?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn score_handler(
    State(store): State<AppState>,
    UrlPath((id, trial)): UrlPath<(String, String)>,
    Json(req): Json<ScoreRequest>,
) -> Result<Json<ScoreAck>> {
    Ok(Json(store.submit(&id, &trial, &req)?))
}

async fn results_handler(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StudyResults>> {
    Ok(Json(store.results(&id)?))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_handler))
        .route("/api/sessions/{id}", get(view_handler))
        .route("/api/sessions/{id}/trials/{k}/frames/{f}", get(frame_handler))
        .route("/api/sessions/{id}/trials/{k}/score", post(score_handler))
        .route("/api/sessions/{id}/results", get(results_handler))
        .with_state(store)
}

/// Serve until the process is stopped.
pub async fn serve(store: Arc<Store>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
