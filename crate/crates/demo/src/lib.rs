//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything runs in the browser against the 20-abstract fixture corpus
//! with the offline reference backends. Results cross the boundary as JSON
//! strings; the plain Rust functions below are what the bindings wrap.

use citeqa_core::backends::Backends;
use citeqa_core::claims::parse_text;
use citeqa_core::corpus::{ingest_corpus, Corpus, DocumentLookup};
use citeqa_core::engine::{BuildOptions, ClaimReport, Engine};
use citeqa_core::hybrid::FusedResult;
use citeqa_core::prompt::{bundle_from_ids, PromptBundle, PromptTemplate, MAX_DOCS};
use citeqa_core::segment::{window_bounds, SegmenterConfig, Tokenizer, WhitespaceTokenizer};
use citeqa_core::verify::{verify_parsed, VerifyOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const CORPUS_JSONL: &str = include_str!("../../../fixtures/corpus_20.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    pub index: usize,
    pub token_start: usize,
    pub token_end: usize,
    /// Tokens shared with the previous window.
    pub overlap_with_previous: usize,
    pub text: String,
}

/// Overlapping token windows of `text`.
pub fn windows(text: &str, max_tokens: usize, overlap: usize) -> Result<Vec<Window>, String> {
    let cfg = SegmenterConfig::new(max_tokens, overlap).map_err(|e| e.to_string())?;
    let tokenizer = WhitespaceTokenizer;
    let tokens = tokenizer.tokenize(text);
    let mut prev_end = 0usize;
    Ok(window_bounds(tokens.len(), &cfg)
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            let w = Window {
                index,
                token_start: start,
                token_end: end,
                overlap_with_previous: if index == 0 { 0 } else { prev_end.saturating_sub(start) },
                text: tokenizer.window_text(text, &tokens[start..end]),
            };
            prev_end = end;
            w
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct BundleRow {
    pub local_index: u32,
    pub doc_id: String,
    pub title: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub bundle: Vec<BundleRow>,
    pub claims: Vec<ClaimReport>,
    pub dangling: Vec<citeqa_core::claims::DanglingRef>,
}

/// In-memory engine over the fixture corpus.
pub struct DemoEngine {
    engine: Engine,
}

impl DemoEngine {
    pub fn new() -> Result<Self, String> {
        let (docs, _) = ingest_corpus([("corpus_20.jsonl".to_string(), CORPUS_JSONL.as_bytes())])
            .map_err(|e| e.to_string())?;
        let corpus = Corpus::new(docs).map_err(|e| e.to_string())?;
        let engine = Engine::in_memory(corpus, Backends::reference(64), &BuildOptions::default())
            .map_err(|e| e.to_string())?;
        Ok(Self { engine })
    }

    pub fn documents(&self) -> Vec<BundleRow> {
        self.engine
            .corpus()
            .docs()
            .iter()
            .enumerate()
            .map(|(i, d)| BundleRow {
                local_index: i as u32 + 1,
                doc_id: d.doc_id.clone(),
                title: d.title.clone(),
            })
            .collect()
    }

    /// Hybrid search with lexical weight `w_lex` (semantic weight `1 - w_lex`).
    pub fn search(&mut self, query: &str, w_lex: f64, k: usize) -> Result<Vec<FusedResult>, String> {
        let fusion = self.engine.fusion().with_lexical_weight(w_lex);
        fusion.validate().map_err(|e| e.to_string())?;
        self.engine.set_fusion(fusion);
        self.engine.search(query, k).map_err(|e| e.to_string())
    }

    fn bundle(&self, question: &str, k: usize) -> Result<PromptBundle, String> {
        let hits = self.engine.search(question, k.clamp(1, MAX_DOCS)).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        bundle_from_ids(PromptTemplate::Serving, question, &ids, self.engine.corpus() as &dyn DocumentLookup)
            .map_err(|e| e.to_string())
    }

    /// Reference-generator answer for `question`, as a starting point to edit.
    pub fn draft(&self, question: &str, k: usize) -> Result<String, String> {
        let bundle = self.bundle(question, k)?;
        let b = self.engine.backends();
        b.generator
            .generate(&bundle.rendered, &b.generation)
            .map(|g| g.text)
            .map_err(|e| e.to_string())
    }

    /// Parses `answer` against the bundle retrieved for `question` and
    /// verifies every claim.
    pub fn verify(&self, question: &str, answer: &str, k: usize) -> Result<Verification, String> {
        let bundle = self.bundle(question, k)?;
        let parsed = parse_text(answer, &bundle);
        let docs = bundle.documents();
        let b = self.engine.backends();
        let verdicts = verify_parsed(&parsed, &docs, b.nli.as_ref(), b.embedder.as_ref(), VerifyOptions::default());
        Ok(Verification {
            bundle: bundle
                .docs
                .iter()
                .map(|d| BundleRow {
                    local_index: d.local_index,
                    doc_id: d.doc_id.clone(),
                    title: d.title.clone(),
                })
                .collect(),
            claims: parsed.claims.into_iter().zip(verdicts).map(|(c, v)| ClaimReport::new(c, v)).collect(),
            dangling: parsed.dangling,
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[wasm_bindgen(js_name = segmentWindows)]
pub fn segment_windows(text: &str, max_tokens: usize, overlap: usize) -> Result<String, JsError> {
    windows(text, max_tokens, overlap)
        .map(|w| to_json(&w))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Demo {
    inner: DemoEngine,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        DemoEngine::new().map(|inner| Demo { inner }).map_err(|e| JsError::new(&e))
    }

    pub fn documents(&self) -> String {
        to_json(&self.inner.documents())
    }

    pub fn search(&mut self, query: &str, w_lex: f64, k: usize) -> Result<String, JsError> {
        self.inner.search(query, w_lex, k).map(|r| to_json(&r)).map_err(|e| JsError::new(&e))
    }

    pub fn draft(&self, question: &str, k: usize) -> Result<String, JsError> {
        self.inner.draft(question, k).map_err(|e| JsError::new(&e))
    }

    pub fn verify(&self, question: &str, answer: &str, k: usize) -> Result<String, JsError> {
        self.inner.verify(question, answer, k).map(|v| to_json(&v)).map_err(|e| JsError::new(&e))
    }
}
