//! Blocking JSON-over-POST clients for externally served models.
//!
//! Payload text is passed through untouched in both directions.

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendConfig, BackendError, Embedder, Generation, GenerationParams, Generator, NliClass, NliClassifier,
    NliLabel,
};
use crate::vector::Embedding;

#[derive(Debug, Clone)]
struct JsonClient {
    client: Client,
    base: String,
}

impl JsonClient {
    fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let base = cfg
            .endpoint
            .as_deref()
            .expect("validated http config has an endpoint")
            .trim_end_matches('/')
            .to_string();
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, base })
    }

    fn url(&self, route: &str) -> String {
        format!("{}{route}", self.base)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, body: &Req) -> Result<Resp, BackendError> {
        let endpoint = self.url(route);
        let resp = self
            .client
            .post(&endpoint)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| BackendError::Transport {
            endpoint: endpoint.clone(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                endpoint,
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol {
            endpoint,
            message: e.to_string(),
        })
    }

    /// Any HTTP answer from the base URL counts as reachable.
    fn ping(&self) -> Result<(), BackendError> {
        self.client
            .get(&self.base)
            .send()
            .map(|_| ())
            .map_err(|e| BackendError::Transport {
                endpoint: self.base.clone(),
                message: e.to_string(),
            })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    values: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    http: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    /// `dim` is the width every response must have.
    pub fn new(cfg: &BackendConfig, dim: usize) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new(cfg)?,
            dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let resp: EmbedResponse = self.http.post("/embed", &EmbedRequest { text })?;
        let protocol = |message: String| BackendError::Protocol {
            endpoint: self.http.url("/embed"),
            message,
        };
        if resp.values.len() != self.dim {
            return Err(protocol(format!(
                "expected {} values, got {}",
                self.dim,
                resp.values.len()
            )));
        }
        Embedding::new(resp.values).map_err(|e| protocol(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("http({})", self.http.url("/embed"))
    }

    fn health(&self) -> Result<(), BackendError> {
        self.http.ping()
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
    repetition_penalty: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    truncated: bool,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    http: JsonClient,
}

impl HttpGenerator {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new(cfg)?,
        })
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, BackendError> {
        let resp: GenerateResponse = self.http.post(
            "/generate",
            &GenerateRequest {
                prompt,
                max_new_tokens: params.max_new_tokens,
                repetition_penalty: params.repetition_penalty,
            },
        )?;
        Ok(Generation {
            text: resp.text,
            truncated: resp.truncated,
        })
    }

    fn describe(&self) -> String {
        format!("http({})", self.http.url("/generate"))
    }

    fn health(&self) -> Result<(), BackendError> {
        self.http.ping()
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    claim: &'a str,
    evidence: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    label: String,
    confidence: f64,
}

#[derive(Debug, Clone)]
pub struct HttpNli {
    http: JsonClient,
}

impl HttpNli {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: JsonClient::new(cfg)?,
        })
    }
}

impl NliClassifier for HttpNli {
    /// Evidence is sent as `title + " " + abstract`.
    fn classify(&self, claim: &str, title: &str, abstract_text: &str) -> Result<NliLabel, BackendError> {
        let evidence = format!("{title} {abstract_text}");
        let resp: NliResponse = self.http.post(
            "/nli",
            &NliRequest {
                claim,
                evidence: &evidence,
            },
        )?;
        let protocol = |message: String| BackendError::Protocol {
            endpoint: self.http.url("/nli"),
            message,
        };
        let value: NliClass = resp.label.parse().map_err(|e: super::InvalidLabel| protocol(e.to_string()))?;
        if !(0.0..=1.0).contains(&resp.confidence) {
            return Err(protocol(format!("confidence {} outside [0, 1]", resp.confidence)));
        }
        Ok(NliLabel {
            value,
            confidence: resp.confidence,
        })
    }

    fn describe(&self) -> String {
        format!("http({})", self.http.url("/nli"))
    }

    fn health(&self) -> Result<(), BackendError> {
        self.http.ping()
    }
}
