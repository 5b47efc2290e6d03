//! Session registry backed by one JSON-lines log per session.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tokio::sync::RwLock;

use crate::session::{LogRecord, Session, SessionError, SessionResult};

pub type SessionHandle = Arc<RwLock<Session>>;

pub struct Store {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

fn io_err(e: std::io::Error) -> SessionError {
    SessionError::Internal(format!("session storage: {e}"))
}

pub fn new_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> SessionResult<Store> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err)?;
        Ok(Store { dir, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn not_found(id: &str) -> SessionError {
        SessionError::NotFound(format!("session {id} not found"))
    }

    /// Persists the creation record and registers the session.
    pub fn insert(&self, session: Session, created: &LogRecord) -> SessionResult<SessionHandle> {
        let path = self.path(&session.id);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(io_err)?;
        writeln!(f, "{}", serde_json::to_string(created).map_err(|e| SessionError::Internal(e.to_string()))?).map_err(io_err)?;
        f.sync_data().map_err(io_err)?;
        let handle = Arc::new(RwLock::new(session));
        let id = handle.try_read().expect("fresh lock").id.clone();
        self.sessions.lock().expect("registry lock").insert(id, handle.clone());
        Ok(handle)
    }

    /// Appends one record to a session's log.
    pub fn append(&self, id: &str, record: &LogRecord) -> SessionResult<()> {
        let mut f = OpenOptions::new().append(true).open(self.path(id)).map_err(io_err)?;
        writeln!(f, "{}", serde_json::to_string(record).map_err(|e| SessionError::Internal(e.to_string()))?).map_err(io_err)?;
        f.sync_data().map_err(io_err)
    }

    pub fn read_log(&self, id: &str) -> SessionResult<Vec<LogRecord>> {
        let f = fs::File::open(self.path(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Self::not_found(id),
            _ => io_err(e),
        })?;
        BufReader::new(f)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .enumerate()
            .map(|(k, line)| {
                let line = line.map_err(io_err)?;
                serde_json::from_str(&line).map_err(|e| SessionError::Internal(format!("session {id} log line {}: {e}", k + 1)))
            })
            .collect()
    }

    fn cached(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    /// Looks a session up, replaying it from disk on first access. Replay
    /// is CPU-bound and should run off the async executor.
    pub fn get_blocking(&self, id: &str) -> SessionResult<SessionHandle> {
        if !valid_id(id) {
            return Err(Self::not_found(id));
        }
        if let Some(h) = self.cached(id) {
            return Ok(h);
        }
        let session = Session::replay(&self.read_log(id)?)?;
        let mut map = self.sessions.lock().expect("registry lock");
        Ok(map.entry(id.to_string()).or_insert_with(|| Arc::new(RwLock::new(session))).clone())
    }

    pub fn is_cached(&self, id: &str) -> bool {
        self.cached(id).is_some()
    }

    /// Forgets a session and removes its log.
    pub fn remove(&self, id: &str) -> SessionResult<()> {
        if !valid_id(id) {
            return Err(Self::not_found(id));
        }
        let cached = self.sessions.lock().expect("registry lock").remove(id).is_some();
        match fs::remove_file(self.path(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && cached => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Self::not_found(id)),
            Err(e) => Err(io_err(e)),
        }
    }

    /// Drops every in-memory session; later lookups replay from disk.
    pub fn evict_all(&self) {
        self.sessions.lock().expect("registry lock").clear();
    }
}
