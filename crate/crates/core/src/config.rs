//! Static configuration file.
//!
//! Values are layered: built-in defaults, then the TOML file, then the
//! backend URL environment variables, then command-line flags (applied by the
//! caller on the returned struct).
//!
//! ```toml
//! [segment]
//! max_tokens = 512
//! overlap = 100
//!
//! [fusion]
//! w_lex = 0.5
//! w_sem = 0.5
//! arm_k = 100
//! final_k = 10
//!
//! [index]
//! dim = 64
//! quantize = true
//!
//! [backends.nli]
//! kind = "http"
//! endpoint = "http://localhost:9000"
//! timeout = 30
//!
//! [server]
//! addr = "127.0.0.1:8080"
//! cors_origins = ["http://localhost:5173"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendConfig, BackendError, Backends, EMBED_URL_ENV, GEN_URL_ENV, NLI_URL_ENV};
use crate::hybrid::FusionConfig;
use crate::lexical::Bm25Params;
use crate::segment::SegmenterConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexSettings {
    /// Embedding width of the reference embedder.
    pub dim: usize,
    pub quantize: bool,
    pub bm25: Bm25Params,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            dim: crate::backends::reference::DEFAULT_DIM,
            quantize: true,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub embed: BackendConfig,
    pub generate: BackendConfig,
    pub nli: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub evidence_sentences: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { evidence_sentences: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSettings {
    pub addr: String,
    /// Allowed browser origins; `["*"]` allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSettings {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// Defaults to `<index>/feedback.log`.
    pub feedback_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub segment: SegmenterConfig,
    pub fusion: FusionConfig,
    pub index: IndexSettings,
    pub backends: BackendsConfig,
    pub verify: VerifySettings,
    pub server: ServerSettings,
    pub paths: PathSettings,
}

impl Config {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Defaults, overlaid by `path` when given, then by the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Backend URL variables switch the matching role to http, keeping any
    /// timeout or generation settings from the file.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        for (var, role) in [
            (EMBED_URL_ENV, &mut self.backends.embed),
            (GEN_URL_ENV, &mut self.backends.generate),
            (NLI_URL_ENV, &mut self.backends.nli),
        ] {
            if let Some(url) = get(var).filter(|u| !u.trim().is_empty()) {
                role.kind = crate::backends::BackendKind::Http;
                role.endpoint = Some(url.trim().to_string());
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.segment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.index.dim == 0 {
            return Err(ConfigError::Invalid("index.dim must be positive".into()));
        }
        for (role, b) in [
            ("embed", &self.backends.embed),
            ("generate", &self.backends.generate),
            ("nli", &self.backends.nli),
        ] {
            b.validate()
                .map_err(|e| ConfigError::Invalid(format!("backends.{role}: {e}")))?;
        }
        Ok(())
    }

    pub fn build_backends(&self) -> Result<Backends, BackendError> {
        Backends::from_configs(
            &self.backends.embed,
            &self.backends.generate,
            &self.backends.nli,
            self.index.dim,
        )
    }
}
