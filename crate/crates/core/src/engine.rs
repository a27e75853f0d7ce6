//! Query pipeline over a built index: hybrid retrieval, prompt assembly,
//! generation, claim parsing and verification.
//!
//! An index directory holds `manifest.json` plus the `lex/` and `vec/`
//! subdirectories. The corpus lives in its own directory and is passed in
//! when the engine is opened.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Backends};
use crate::claims::{parse_claims, CitationGroup, Claim, DanglingRef};
use crate::corpus::{Corpus, DocumentLookup};
use crate::hybrid::{fuse, FusedResult, FusionConfig};
use crate::json::sig9;
use crate::lexical::{Bm25Params, LexicalError, LexicalIndex};
use crate::prompt::{build_prompt, GeneratedAnswer, PromptError, MAX_DOCS};
use crate::segment::{segment, SegmentError, SegmenterConfig, Tokenizer, WhitespaceTokenizer};
use crate::text::analyze;
use crate::vector::{build_vector, VectorError, VectorIndex};
use crate::verify::{verify_parsed, Evidence, RefVerdict, Verdict, VerdictAggregate, VerifyOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("segmentation of {doc_id}: {source}")]
    Segment {
        doc_id: String,
        #[source]
        source: SegmentError,
    },
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("index manifest: {0}")]
    Manifest(String),
    #[error("{stage} backend failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("k must be between 1 and {max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("question is empty")]
    EmptyQuestion,
}

impl EngineError {
    /// Caller mistakes, as opposed to failures of the engine or a backend.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            EngineError::InvalidK { .. }
                | EngineError::EmptyQuestion
                | EngineError::Prompt(PromptError::NoResults)
        )
    }

    /// Pipeline stage a backend failure happened in.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            EngineError::Backend { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieval,
    Generation,
    Parsing,
    Verification,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Retrieval => "retrieval",
            Stage::Generation => "generation",
            Stage::Parsing => "parsing",
            Stage::Verification => "verification",
        })
    }
}

/// Build settings and counts recorded next to the index files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub doc_count: usize,
    pub segment_count: usize,
    pub dim: usize,
    pub quantized: bool,
    pub segment: SegmenterConfig,
    pub bm25: Bm25Params,
    pub embedder: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub docs: usize,
    pub segments: usize,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub segment: SegmenterConfig,
    pub bm25: Bm25Params,
    pub quantize: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            segment: SegmenterConfig::default(),
            bm25: Bm25Params::default(),
            quantize: true,
        }
    }
}

/// Builds both arms over `corpus` and writes them under `dir`.
pub fn build_index(
    corpus: &Corpus,
    backends: &Backends,
    opts: &BuildOptions,
    dir: &Path,
) -> Result<BuildReport, EngineError> {
    let (lexical, vector, manifest) = build_in_memory(corpus, backends, opts)?;
    write_index(dir, &lexical, &vector, &manifest)?;
    Ok(BuildReport {
        docs: manifest.doc_count,
        segments: manifest.segment_count,
    })
}

fn build_in_memory(
    corpus: &Corpus,
    backends: &Backends,
    opts: &BuildOptions,
) -> Result<(LexicalIndex, VectorIndex, IndexManifest), EngineError> {
    opts.segment.validate().map_err(|source| EngineError::Segment {
        doc_id: String::new(),
        source,
    })?;
    let lexical = LexicalIndex::build(corpus.docs(), opts.bm25)?;
    let tokenizer = WhitespaceTokenizer;
    let segments = segment_corpus(corpus, &opts.segment, &tokenizer)?;
    let vector = build_vector(&segments, backends.embedder.as_ref(), opts.quantize)?;
    let manifest = IndexManifest {
        format_version: MANIFEST_VERSION,
        doc_count: corpus.len(),
        segment_count: segments.len(),
        dim: vector.dim(),
        quantized: vector.quantization().is_some(),
        segment: opts.segment,
        bm25: opts.bm25,
        embedder: backends.embedder.describe(),
    };
    Ok((lexical, vector, manifest))
}

/// Segments every document in corpus order.
pub fn segment_corpus(
    corpus: &Corpus,
    cfg: &SegmenterConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<crate::segment::Segment>, EngineError> {
    let mut out = Vec::new();
    for doc in corpus.docs() {
        out.extend(segment(doc, cfg, tokenizer).map_err(|source| EngineError::Segment {
            doc_id: doc.doc_id.clone(),
            source,
        })?);
    }
    Ok(out)
}

fn write_index(
    dir: &Path,
    lexical: &LexicalIndex,
    vector: &VectorIndex,
    manifest: &IndexManifest,
) -> Result<(), EngineError> {
    fs::create_dir_all(dir).map_err(|e| EngineError::Manifest(format!("{}: {e}", dir.display())))?;
    lexical.write(dir)?;
    vector.write(dir)?;
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))
}

pub fn read_manifest(dir: &Path) -> Result<IndexManifest, EngineError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))?;
    let m: IndexManifest =
        serde_json::from_str(&text).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(EngineError::Manifest(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    Ok(m)
}

/// Per-stage wall-clock time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(serialize_with = "sig9")]
    pub retrieval_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub generation_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub parsing_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub verification_ms: f64,
}

/// One row of the bundle table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub local_index: u32,
    pub doc_id: String,
    pub title: String,
}

/// A claim together with its verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub claim_id: usize,
    pub text: String,
    pub refs: Vec<String>,
    pub char_span: (usize, usize),
    pub citations: Vec<CitationGroup>,
    pub aggregate: VerdictAggregate,
    pub per_ref: Vec<RefVerdict>,
    pub evidence: Vec<Evidence>,
}

impl ClaimReport {
    pub fn new(claim: Claim, verdict: Verdict) -> Self {
        Self {
            claim_id: claim.claim_id,
            text: claim.text,
            refs: claim.refs,
            char_span: claim.char_span,
            citations: claim.citations,
            aggregate: verdict.aggregate,
            per_ref: verdict.per_ref,
            evidence: verdict.evidence,
        }
    }
}

/// Reviewer label shown next to an engine verdict; never replaces it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedOverride {
    pub claim_id: usize,
    pub doc_id: String,
    pub label: crate::backends::NliClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub question: String,
    pub answer: String,
    pub truncated: bool,
    pub bundle: Vec<BundleEntry>,
    pub retrieval: Vec<FusedResult>,
    pub claims: Vec<ClaimReport>,
    pub dangling: Vec<DanglingRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<AppliedOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// An opened index plus the corpus and backends needed to answer.
pub struct Engine {
    corpus: Corpus,
    lexical: LexicalIndex,
    vector: VectorIndex,
    backends: Backends,
    fusion: FusionConfig,
    verify: VerifyOptions,
    manifest: IndexManifest,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("manifest", &self.manifest)
            .field("backends", &self.backends)
            .field("fusion", &self.fusion)
            .finish()
    }
}

impl Engine {
    /// Opens an index written by [`build_index`].
    pub fn open(index_dir: &Path, corpus: Corpus, backends: Backends) -> Result<Self, EngineError> {
        let manifest = read_manifest(index_dir)?;
        let lexical = LexicalIndex::open(index_dir)?;
        let vector = VectorIndex::open(index_dir)?;
        if lexical.num_docs() != corpus.len() || manifest.doc_count != corpus.len() {
            return Err(EngineError::Manifest(format!(
                "index covers {} documents but the corpus has {}",
                manifest.doc_count,
                corpus.len()
            )));
        }
        if backends.embedder.dim() != vector.dim() {
            return Err(EngineError::Manifest(format!(
                "embedder produces {} dimensions but the index stores {}",
                backends.embedder.dim(),
                vector.dim()
            )));
        }
        Ok(Self {
            corpus,
            lexical,
            vector,
            backends,
            fusion: FusionConfig::default(),
            verify: VerifyOptions::default(),
            manifest,
        })
    }

    /// Builds both indexes in memory without touching disk.
    pub fn in_memory(corpus: Corpus, backends: Backends, opts: &BuildOptions) -> Result<Self, EngineError> {
        let (lexical, vector, manifest) = build_in_memory(&corpus, &backends, opts)?;
        Ok(Self {
            corpus,
            lexical,
            vector,
            backends,
            fusion: FusionConfig::default(),
            verify: VerifyOptions::default(),
            manifest,
        })
    }

    pub fn with_fusion(mut self, fusion: FusionConfig) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn set_fusion(&mut self, fusion: FusionConfig) {
        self.fusion = fusion;
    }

    pub fn with_verify_options(mut self, verify: VerifyOptions) -> Self {
        self.verify = verify;
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn lexical(&self) -> &LexicalIndex {
        &self.lexical
    }

    pub fn vector(&self) -> &VectorIndex {
        &self.vector
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn fusion(&self) -> &FusionConfig {
        &self.fusion
    }

    /// Hybrid search returning at most `k` documents. A query without any
    /// indexable term retrieves nothing.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<FusedResult>, EngineError> {
        if analyze(query).is_empty() {
            return Ok(Vec::new());
        }
        let arm_k = self.fusion.arm_k;
        let lex = self.lexical.search(query, arm_k);
        let sem = match self.backends.embedder.embed(query) {
            Ok(q) => self.vector.search(&q, arm_k)?,
            Err(BackendError::EmptyInput) => Vec::new(),
            Err(source) => {
                return Err(EngineError::Backend {
                    stage: Stage::Retrieval,
                    source,
                })
            }
        };
        let cfg = FusionConfig {
            final_k: k,
            ..self.fusion
        };
        Ok(fuse(&lex, &sem, &cfg))
    }

    /// Retrieves up to `k` documents and asks the generator.
    pub fn answer(&self, question: &str, k: usize) -> Result<(GeneratedAnswer, Vec<FusedResult>), EngineError> {
        let mut timings = StageTimings::default();
        self.answer_timed(question, k, &mut timings)
    }

    fn answer_timed(
        &self,
        question: &str,
        k: usize,
        timings: &mut StageTimings,
    ) -> Result<(GeneratedAnswer, Vec<FusedResult>), EngineError> {
        if question.trim().is_empty() {
            return Err(EngineError::EmptyQuestion);
        }
        if !(1..=MAX_DOCS).contains(&k) {
            return Err(EngineError::InvalidK { k, max: MAX_DOCS });
        }
        let t = Instant::now();
        let results = self.search(question, k)?;
        let bundle = build_prompt(question, &results, &self.corpus)?;
        timings.retrieval_ms = ms(t);

        let t = Instant::now();
        let generation = self
            .backends
            .generator
            .generate(&bundle.rendered, &self.backends.generation)
            .map_err(|source| EngineError::Backend {
                stage: Stage::Generation,
                source,
            })?;
        timings.generation_ms = ms(t);
        Ok((
            GeneratedAnswer {
                text: generation.text,
                bundle,
                truncated: generation.truncated,
            },
            results,
        ))
    }

    /// Full pipeline. Timings are only embedded in the response when
    /// `include_timings` is set, so that responses stay reproducible.
    pub fn ask(&self, question: &str, k: usize, include_timings: bool) -> Result<AskResponse, EngineError> {
        let (mut response, timings) = self.ask_timed(question, k)?;
        response.timings = include_timings.then_some(timings);
        Ok(response)
    }

    /// Full pipeline, returning the stage timings beside the response.
    pub fn ask_timed(&self, question: &str, k: usize) -> Result<(AskResponse, StageTimings), EngineError> {
        let mut timings = StageTimings::default();
        let (answer, retrieval) = self.answer_timed(question, k, &mut timings)?;

        let t = Instant::now();
        let parsed = parse_claims(&answer);
        timings.parsing_ms = ms(t);

        let t = Instant::now();
        let verdicts = verify_parsed(
            &parsed,
            &self.corpus as &dyn DocumentLookup,
            self.backends.nli.as_ref(),
            self.backends.embedder.as_ref(),
            self.verify,
        );
        timings.verification_ms = ms(t);

        let claims = parsed
            .claims
            .into_iter()
            .zip(verdicts)
            .map(|(c, v)| ClaimReport::new(c, v))
            .collect();
        let bundle = answer
            .bundle
            .docs
            .iter()
            .map(|d| BundleEntry {
                local_index: d.local_index,
                doc_id: d.doc_id.clone(),
                title: d.title.clone(),
            })
            .collect();
        let response = AskResponse {
            question: answer.bundle.question.clone(),
            answer: answer.text,
            truncated: answer.truncated,
            bundle,
            retrieval,
            claims,
            dangling: parsed.dangling,
            overrides: Vec::new(),
            timings: None,
        };
        Ok((response, timings))
    }

    /// Readiness of each backend, keyed by role.
    pub fn health(&self) -> BTreeMap<&'static str, Result<String, String>> {
        let b = &self.backends;
        BTreeMap::from([
            ("embedder", b.embedder.health().map(|_| b.embedder.describe()).map_err(|e| e.to_string())),
            ("generator", b.generator.health().map(|_| b.generator.describe()).map_err(|e| e.to_string())),
            ("nli", b.nli.health().map(|_| b.nli.describe()).map_err(|e| e.to_string())),
        ])
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}
