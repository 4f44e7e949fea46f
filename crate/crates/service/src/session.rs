//! In-memory session registry. Each session sits behind its own mutex so that
//! exchanges on one session run one at a time in arrival order, while distinct
//! sessions proceed concurrently.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use gib_core::cohort::{PatientRecord, Sex};
use gib_core::router::ChatExchange;
use gib_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub patient: PatientRecord,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    transcript: Vec<ChatExchange>,
    transcript_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub patient: PatientSummary,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub patient: PatientRecord,
    pub created_at: u64,
    pub exchange_count: usize,
    pub transcript: Vec<ChatExchange>,
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
}

impl Session {
    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            patient: self.patient.clone(),
            created_at: self.created_at,
            exchange_count: self.transcript.len(),
            transcript: self.transcript.clone(),
            transcript_path: self.transcript_path.clone(),
        }
    }

    pub fn transcript(&self) -> &[ChatExchange] {
        &self.transcript
    }

    /// Writes the exchange to the JSONL log (if any) before recording it.
    pub fn append(&mut self, exchange: ChatExchange) -> ServiceResult<()> {
        if let Some(path) = &self.transcript_path {
            let mut line = serde_json::to_string(&exchange).map_err(Error::from)?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(Error::from)?;
        }
        self.transcript.push(exchange);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    transcript_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(transcript_dir: Option<PathBuf>) -> ServiceResult<Self> {
        if let Some(dir) = &transcript_dir {
            fs::create_dir_all(dir).map_err(Error::from)?;
        }
        Ok(SessionStore {
            sessions: RwLock::default(),
            transcript_dir,
        })
    }

    pub fn create(&self, patient: PatientRecord) -> ServiceResult<SessionCreated> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let created = SessionCreated {
            id: id.clone(),
            patient: PatientSummary {
                id: patient.id.clone(),
                age: patient.age,
                sex: patient.sex,
            },
            created_at,
        };
        let session = Session {
            transcript_path: self.transcript_dir.as_ref().map(|d| d.join(format!("{id}.jsonl"))),
            id: id.clone(),
            patient,
            created_at,
            transcript: Vec::new(),
        };
        self.sessions
            .write()
            .map_err(|_| ServiceError::Worker("session registry lock poisoned".into()))?
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(created)
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .map_err(|_| ServiceError::Worker("session registry lock poisoned".into()))?
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn lock(session: &Mutex<Session>) -> ServiceResult<std::sync::MutexGuard<'_, Session>> {
    session
        .lock()
        .map_err(|_| ServiceError::Worker("session lock poisoned".into()))
}
