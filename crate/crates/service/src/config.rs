//! Service configuration: a JSON file, then `GIB_*` environment overrides.
//! The remote API key is only ever read from the environment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_KEY_ENV: &str = "GIB_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// When set, guideline queries are embedded remotely with this model.
    #[serde(default)]
    pub embedding_model: Option<String>,
}

fn default_key_env() -> String {
    DEFAULT_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    30
}

fn default_bind() -> String {
    DEFAULT_BIND.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub artifact: PathBuf,
    pub store: PathBuf,
    /// Directory of patient JSON bundles that sessions can be opened on.
    #[serde(default)]
    pub patients_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    /// Per-session JSONL transcripts are appended here when set.
    #[serde(default)]
    pub transcript_dir: Option<PathBuf>,
    /// Prompt template directory; the built-in set is used otherwise.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(artifact: impl Into<PathBuf>, store: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            artifact: artifact.into(),
            store: store.into(),
            patients_dir: None,
            backend: BackendKind::Offline,
            remote: None,
            bind: default_bind(),
            log_path: None,
            transcript_dir: None,
            prompts_dir: None,
        }
    }

    pub fn from_file(path: &Path) -> ServiceResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `GIB_ARTIFACT`, `GIB_STORE`, `GIB_PATIENTS_DIR`, `GIB_BACKEND`,
    /// `GIB_BIND`, `GIB_LOG_PATH`, `GIB_REMOTE_URL` and `GIB_REMOTE_MODEL`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> ServiceResult<()> {
        if let Some(v) = env("GIB_ARTIFACT") {
            self.artifact = v.into();
        }
        if let Some(v) = env("GIB_STORE") {
            self.store = v.into();
        }
        if let Some(v) = env("GIB_PATIENTS_DIR") {
            self.patients_dir = Some(v.into());
        }
        if let Some(v) = env("GIB_BACKEND") {
            self.backend = match v.to_ascii_lowercase().as_str() {
                "offline" => BackendKind::Offline,
                "remote" => BackendKind::Remote,
                other => return Err(ServiceError::Config(format!("GIB_BACKEND: unknown backend {other:?}"))),
            };
        }
        if let Some(v) = env("GIB_BIND") {
            self.bind = v;
        }
        if let Some(v) = env("GIB_LOG_PATH") {
            self.log_path = Some(v.into());
        }
        let url = env("GIB_REMOTE_URL");
        let model = env("GIB_REMOTE_MODEL");
        if url.is_some() || model.is_some() {
            let remote = self.remote.get_or_insert_with(|| RemoteConfig {
                base_url: String::new(),
                model: String::new(),
                api_key_env: default_key_env(),
                timeout_secs: default_timeout(),
                embedding_model: None,
            });
            if let Some(u) = url {
                remote.base_url = u;
            }
            if let Some(m) = model {
                remote.model = m;
            }
        }
        Ok(())
    }

    /// Checks startup invariants and returns the API key when the remote
    /// backend is selected.
    pub fn validate(&self, env: impl Fn(&str) -> Option<String>) -> ServiceResult<Option<String>> {
        for (what, path) in [("artifact", &self.artifact), ("store", &self.store)] {
            if !path.is_file() {
                return Err(ServiceError::Config(format!("{what} {} does not exist", path.display())));
            }
        }
        if let Some(dir) = &self.patients_dir {
            if !dir.is_dir() {
                return Err(ServiceError::Config(format!("patients dir {} does not exist", dir.display())));
            }
        }
        if let Some(dir) = &self.prompts_dir {
            if !dir.is_dir() {
                return Err(ServiceError::Config(format!("prompts dir {} does not exist", dir.display())));
            }
        }
        if self.backend == BackendKind::Offline {
            return Ok(None);
        }
        let remote = self
            .remote
            .as_ref()
            .ok_or_else(|| ServiceError::Config("remote backend selected without a remote section".into()))?;
        if remote.base_url.is_empty() || remote.model.is_empty() {
            return Err(ServiceError::Config("remote backend needs base_url and model".into()));
        }
        match env(&remote.api_key_env) {
            Some(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(ServiceError::Config(format!("remote backend selected but {} is not set", remote.api_key_env))),
        }
    }
}
