use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use unmix_core::pipeline::Session;
use unmix_core::Result;

/// On-disk form of a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StoredSession {
    #[serde(default)]
    pub idempotency_key: Option<String>,
    pub session: Session,
}

pub(crate) type SessionHandle = Arc<tokio::sync::Mutex<StoredSession>>;

pub(crate) struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    /// Serialises creation so that one idempotency key maps to one session.
    keys: tokio::sync::Mutex<HashMap<String, String>>,
}

impl SessionStore {
    pub fn open(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut keys = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let stored: StoredSession = serde_json::from_slice(&fs::read(&path)?)?;
            let id = stored.session.id().to_owned();
            if let Some(k) = &stored.idempotency_key {
                keys.insert(k.clone(), id.clone());
            }
            sessions.insert(id, Arc::new(tokio::sync::Mutex::new(stored)));
        }
        Ok(Self {
            dir,
            sessions: RwLock::new(sessions),
            keys: tokio::sync::Mutex::new(keys),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().get(id).cloned()
    }

    /// Inserts the session built by `make` unless `key` was seen before; returns
    /// the session id and whether it is new.
    pub async fn create(
        &self,
        key: Option<String>,
        make: impl FnOnce(String) -> Result<Session>,
    ) -> Result<(String, bool)> {
        let mut keys = self.keys.lock().await;
        if let Some(id) = key.as_ref().and_then(|k| keys.get(k)) {
            return Ok((id.clone(), false));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let stored = StoredSession {
            idempotency_key: key.clone(),
            session: make(id.clone())?,
        };
        self.persist(&stored)?;
        self.sessions
            .write()
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(stored)));
        if let Some(k) = key {
            keys.insert(k, id.clone());
        }
        Ok((id, true))
    }

    /// Atomically replaces the session file.
    pub fn persist(&self, stored: &StoredSession) -> Result<()> {
        write_atomic(&self.dir, stored.session.id(), &serde_json::to_vec(stored)?)?;
        Ok(())
    }
}

fn write_atomic(dir: &Path, id: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!(".{id}.json.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, dir.join(format!("{id}.json")))
}
