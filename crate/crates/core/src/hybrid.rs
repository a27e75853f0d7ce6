//! Min-max normalisation and weighted fusion of the two retrieval arms.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::json::sig9;
use crate::lexical::LexicalHit;
use crate::vector::SemanticHit;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionConfigError {
    #[error("fusion weights must lie in [0, 1] and sum to 1 (w_lex={w_lex}, w_sem={w_sem})")]
    Weights { w_lex: f64, w_sem: f64 },
    #[error("fusion.{0} must be at least 1")]
    ZeroK(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub w_lex: f64,
    pub w_sem: f64,
    /// Candidates fetched from each arm before fusion.
    pub arm_k: usize,
    pub final_k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            w_lex: 0.5,
            w_sem: 0.5,
            arm_k: 100,
            final_k: 10,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionConfigError> {
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        if !in_unit(self.w_lex) || !in_unit(self.w_sem) || (self.w_lex + self.w_sem - 1.0).abs() > 1e-9 {
            return Err(FusionConfigError::Weights {
                w_lex: self.w_lex,
                w_sem: self.w_sem,
            });
        }
        if self.arm_k == 0 {
            return Err(FusionConfigError::ZeroK("arm_k"));
        }
        if self.final_k == 0 {
            return Err(FusionConfigError::ZeroK("final_k"));
        }
        Ok(())
    }

    /// Config with lexical weight `w_lex` and the complement on the semantic arm.
    pub fn with_lexical_weight(self, w_lex: f64) -> Self {
        Self {
            w_lex,
            w_sem: 1.0 - w_lex,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedResult {
    pub doc_id: String,
    #[serde(serialize_with = "sig9")]
    pub fused: f64,
    #[serde(serialize_with = "sig9")]
    pub lex_norm: f64,
    #[serde(serialize_with = "sig9")]
    pub sem_norm: f64,
    /// Highest-scoring segment of the document in the semantic arm.
    pub best_segment: Option<u32>,
}

/// `(s - min) / (max - min)` over the candidate set; when every score is
/// equal (including a single candidate) each maps to 1.0.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let Some(&first) = scores.first() else {
        return Vec::new();
    };
    let (min, max) = scores
        .iter()
        .fold((first, first), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let range = max - min;
    if range == 0.0 {
        return vec![1.0; scores.len()];
    }
    scores
        .iter()
        .map(|&s| ((s - min) / range).clamp(0.0, 1.0))
        .collect()
}

/// Collapses segment hits to one score per document (the maximum), keeping
/// the winning segment. Equal scores keep the lowest segment index.
pub fn best_segment_per_doc(sem: &[SemanticHit]) -> BTreeMap<&str, (f64, u32)> {
    let mut best: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
    for h in sem {
        best.entry(h.doc_id.as_str())
            .and_modify(|cur| {
                if h.raw_score > cur.0 || (h.raw_score == cur.0 && h.seg_index < cur.1) {
                    *cur = (h.raw_score, h.seg_index);
                }
            })
            .or_insert((h.raw_score, h.seg_index));
    }
    best
}

/// Fuses arm results into one ranking of at most `cfg.final_k` documents.
///
/// Each arm is normalised independently over its own candidates; a
/// document missing from an arm scores 0 there.
pub fn fuse(lex: &[LexicalHit], sem: &[SemanticHit], cfg: &FusionConfig) -> Vec<FusedResult> {
    let lex_norm = normalize_scores(&lex.iter().map(|h| h.raw_score).collect::<Vec<_>>());
    let per_doc = best_segment_per_doc(sem);
    let sem_norm = normalize_scores(&per_doc.values().map(|v| v.0).collect::<Vec<_>>());

    let mut merged: HashMap<&str, FusedResult> = HashMap::new();
    for (h, n) in lex.iter().zip(lex_norm) {
        merged.insert(
            &h.doc_id,
            FusedResult {
                doc_id: h.doc_id.clone(),
                fused: 0.0,
                lex_norm: n,
                sem_norm: 0.0,
                best_segment: None,
            },
        );
    }
    for ((doc_id, (_, seg)), n) in per_doc.iter().zip(sem_norm) {
        let entry = merged.entry(doc_id).or_insert_with(|| FusedResult {
            doc_id: doc_id.to_string(),
            fused: 0.0,
            lex_norm: 0.0,
            sem_norm: 0.0,
            best_segment: None,
        });
        entry.sem_norm = n;
        entry.best_segment = Some(*seg);
    }
    let mut out: Vec<FusedResult> = merged
        .into_values()
        .map(|mut r| {
            r.fused = (cfg.w_lex * r.lex_norm + cfg.w_sem * r.sem_norm).clamp(0.0, 1.0);
            r
        })
        .collect();
    out.sort_by(|a, b| b.fused.total_cmp(&a.fused).then_with(|| a.doc_id.cmp(&b.doc_id)));
    out.truncate(cfg.final_k);
    out
}
