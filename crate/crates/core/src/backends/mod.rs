//! Contracts for the three model roles and their implementations.
//!
//! Every role has a deterministic reference implementation (used for tests
//! and offline runs) and, with the `http` feature, a JSON-over-POST client:
//!
//! | role      | route       | request                                        | response                 |
//! |-----------|-------------|------------------------------------------------|--------------------------|
//! | embedder  | `/embed`    | `{text}`                                       | `{values: [f32]}`        |
//! | generator | `/generate` | `{prompt, max_new_tokens, repetition_penalty}` | `{text}`                 |
//! | NLI       | `/nli`      | `{claim, evidence}`                            | `{label, confidence}`    |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::json::sig9;
use crate::vector::Embedding;

#[cfg(feature = "http")]
pub mod http;
pub mod reference;

pub const EMBED_URL_ENV: &str = "VERIFAI_EMBED_URL";
pub const GEN_URL_ENV: &str = "VERIFAI_GEN_URL";
pub const NLI_URL_ENV: &str = "VERIFAI_NLI_URL";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("input text is empty or has no tokens")]
    EmptyInput,
    #[error("{endpoint}: transport error: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("{endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("invalid backend config: {0}")]
    Config(String),
}

/// The three NLI classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NliClass {
    #[serde(rename = "SUPPORT")]
    Support,
    #[serde(rename = "CONTRADICT")]
    Contradict,
    #[serde(rename = "NO_EVIDENCE")]
    NoEvidence,
}

impl NliClass {
    pub const ALL: [NliClass; 3] = [NliClass::Support, NliClass::Contradict, NliClass::NoEvidence];

    pub fn as_str(self) -> &'static str {
        match self {
            NliClass::Support => "SUPPORT",
            NliClass::Contradict => "CONTRADICT",
            NliClass::NoEvidence => "NO_EVIDENCE",
        }
    }
}

impl fmt::Display for NliClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid label {0:?}; expected one of SUPPORT, CONTRADICT, NO_EVIDENCE")]
pub struct InvalidLabel(pub String);

impl FromStr for NliClass {
    type Err = InvalidLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NliClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| InvalidLabel(s.to_string()))
    }
}

/// One classifier decision for a (claim, evidence) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliLabel {
    pub value: NliClass,
    #[serde(serialize_with = "sig9")]
    pub confidence: f64,
}

impl NliLabel {
    pub fn certain(value: NliClass) -> Self {
        Self {
            value,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    pub repetition_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 1000,
            repetition_penalty: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    /// Output was cut at `max_new_tokens`.
    pub truncated: bool,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
    fn describe(&self) -> String;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, BackendError>;
    fn describe(&self) -> String;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait NliClassifier: Send + Sync {
    fn classify(&self, claim: &str, title: &str, abstract_text: &str) -> Result<NliLabel, BackendError>;
    fn describe(&self) -> String;
    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_new_tokens: usize,
    pub repetition_penalty: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let gen = GenerationParams::default();
        Self {
            kind: BackendKind::Reference,
            endpoint: None,
            timeout: Duration::from_secs(30),
            max_new_tokens: gen.max_new_tokens,
            repetition_penalty: gen.repetition_penalty,
        }
    }
}

impl BackendConfig {
    pub fn http(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    /// `endpoint` is required for `http` and forbidden for `reference`.
    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.kind, &self.endpoint) {
            (BackendKind::Http, None) => Err(BackendError::Config("http backend needs an endpoint".into())),
            (BackendKind::Reference, Some(_)) => Err(BackendError::Config(
                "reference backend does not take an endpoint".into(),
            )),
            _ if self.max_new_tokens == 0 => Err(BackendError::Config("max_new_tokens must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            max_new_tokens: self.max_new_tokens,
            repetition_penalty: self.repetition_penalty,
        }
    }

    /// Reference config unless `var` is set, in which case an http config
    /// pointing at its value.
    pub fn from_env_var(var: &str) -> Self {
        match std::env::var(var) {
            Ok(url) if !url.trim().is_empty() => Self::http(url.trim()),
            _ => Self::default(),
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// One configured backend per role.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn Generator>,
    pub nli: Arc<dyn NliClassifier>,
    pub generation: GenerationParams,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("embedder", &self.embedder.describe())
            .field("generator", &self.generator.describe())
            .field("nli", &self.nli.describe())
            .field("generation", &self.generation)
            .finish()
    }
}

impl Backends {
    /// All reference backends with the given embedding dimension.
    pub fn reference(dim: usize) -> Self {
        Self {
            embedder: Arc::new(reference::ReferenceEmbedder::new(dim)),
            generator: Arc::new(reference::ReferenceGenerator::default()),
            nli: Arc::new(reference::ReferenceNli::default()),
            generation: GenerationParams::default(),
        }
    }

    /// Builds backends from per-role configs. `dim` sizes the reference
    /// embedder; it is ignored for an http embedder.
    pub fn from_configs(
        embed: &BackendConfig,
        generate: &BackendConfig,
        nli: &BackendConfig,
        dim: usize,
    ) -> Result<Self, BackendError> {
        embed.validate()?;
        generate.validate()?;
        nli.validate()?;
        let embedder: Arc<dyn Embedder> = match embed.kind {
            BackendKind::Reference => Arc::new(reference::ReferenceEmbedder::new(dim)),
            BackendKind::Http => http_embedder(embed, dim)?,
        };
        let generator: Arc<dyn Generator> = match generate.kind {
            BackendKind::Reference => Arc::new(reference::ReferenceGenerator::default()),
            BackendKind::Http => http_generator(generate)?,
        };
        let nli_backend: Arc<dyn NliClassifier> = match nli.kind {
            BackendKind::Reference => Arc::new(reference::ReferenceNli::default()),
            BackendKind::Http => http_nli(nli)?,
        };
        Ok(Self {
            embedder,
            generator,
            nli: nli_backend,
            generation: generate.generation_params(),
        })
    }

    /// Reads `VERIFAI_EMBED_URL`, `VERIFAI_GEN_URL` and `VERIFAI_NLI_URL`;
    /// unset variables select the reference backend for that role.
    pub fn from_env(dim: usize) -> Result<Self, BackendError> {
        Self::from_configs(
            &BackendConfig::from_env_var(EMBED_URL_ENV),
            &BackendConfig::from_env_var(GEN_URL_ENV),
            &BackendConfig::from_env_var(NLI_URL_ENV),
            dim,
        )
    }
}

#[cfg(feature = "http")]
fn http_embedder(cfg: &BackendConfig, dim: usize) -> Result<Arc<dyn Embedder>, BackendError> {
    Ok(Arc::new(http::HttpEmbedder::new(cfg, dim)?))
}

#[cfg(feature = "http")]
fn http_generator(cfg: &BackendConfig) -> Result<Arc<dyn Generator>, BackendError> {
    Ok(Arc::new(http::HttpGenerator::new(cfg)?))
}

#[cfg(feature = "http")]
fn http_nli(cfg: &BackendConfig) -> Result<Arc<dyn NliClassifier>, BackendError> {
    Ok(Arc::new(http::HttpNli::new(cfg)?))
}

#[cfg(not(feature = "http"))]
fn http_embedder(_: &BackendConfig, _: usize) -> Result<Arc<dyn Embedder>, BackendError> {
    Err(BackendError::Config("built without the `http` feature".into()))
}

#[cfg(not(feature = "http"))]
fn http_generator(_: &BackendConfig) -> Result<Arc<dyn Generator>, BackendError> {
    Err(BackendError::Config("built without the `http` feature".into()))
}

#[cfg(not(feature = "http"))]
fn http_nli(_: &BackendConfig) -> Result<Arc<dyn NliClassifier>, BackendError> {
    Err(BackendError::Config("built without the `http` feature".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_strings_round_trip() {
        for c in NliClass::ALL {
            assert_eq!(c.as_str().parse::<NliClass>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("Supports".parse::<NliClass>().is_err());
    }

    #[test]
    fn endpoint_required_iff_http() {
        assert!(BackendConfig::default().validate().is_ok());
        assert!(BackendConfig::http("http://x").validate().is_ok());
        let mut c = BackendConfig::http("http://x");
        c.endpoint = None;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::default();
        c.endpoint = Some("http://x".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn generation_defaults() {
        let p = BackendConfig::default().generation_params();
        assert_eq!(p.max_new_tokens, 1000);
        assert_eq!(p.repetition_penalty, 1.1);
        assert_eq!(BackendConfig::default().timeout, Duration::from_secs(30));
    }
}
