//! Claim verification: one NLI call per (claim, cited document), folded into
//! a claim-level verdict, plus the abstract sentences closest to the claim.

use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, NliClass, NliClassifier, NliLabel};
use crate::claims::{parse_claims, Claim, ParsedAnswer};
use crate::corpus::{DocumentLookup, DocumentRecord};
use crate::json::sig9;
use crate::prompt::GeneratedAnswer;
use crate::text::sentence_spans;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictAggregate {
    Supported,
    Contradicted,
    Unsupported,
    Unreferenced,
}

/// Folds per-reference labels into a claim verdict: any CONTRADICT wins,
/// then any SUPPORT; an empty set means the claim cited nothing.
pub fn aggregate(labels: &[NliClass]) -> VerdictAggregate {
    if labels.is_empty() {
        VerdictAggregate::Unreferenced
    } else if labels.contains(&NliClass::Contradict) {
        VerdictAggregate::Contradicted
    } else if labels.contains(&NliClass::Support) {
        VerdictAggregate::Supported
    } else {
        VerdictAggregate::Unsupported
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefVerdict {
    pub doc_id: String,
    pub label: NliLabel,
    /// Set when the check could not run; the label is then NO_EVIDENCE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    /// Position of the sentence within the abstract.
    pub index: usize,
    pub text: String,
    #[serde(serialize_with = "sig9")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub doc_id: String,
    pub sentences: Vec<ScoredSentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim_id: usize,
    pub per_ref: Vec<RefVerdict>,
    pub aggregate: VerdictAggregate,
    pub evidence: Vec<Evidence>,
}

/// Abstract sentences ranked by embedding dot product with the claim.
/// Ties keep sentence order; `n` larger than the sentence count returns all.
/// Sentences without any token score 0.
pub fn most_similar_sentences(
    claim: &str,
    doc: &DocumentRecord,
    n: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<ScoredSentence>, crate::backends::BackendError> {
    let query = embedder.embed(claim)?;
    let mut scored = Vec::new();
    for (index, (s, e)) in sentence_spans(&doc.abstract_text).into_iter().enumerate() {
        let text = &doc.abstract_text[s..e];
        let score = match embedder.embed(text) {
            Ok(v) => query.dot(v.values()),
            Err(crate::backends::BackendError::EmptyInput) => 0.0,
            Err(e) => return Err(e),
        };
        scored.push(ScoredSentence {
            index,
            text: text.to_string(),
            score,
        });
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    scored.truncate(n);
    Ok(scored)
}

/// Options for verification.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Evidence sentences returned per reference.
    pub evidence_sentences: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { evidence_sentences: 1 }
    }
}

fn check_ref(
    claim: &Claim,
    doc_id: &str,
    corpus: &dyn DocumentLookup,
    nli: &dyn NliClassifier,
    embedder: &dyn Embedder,
    opts: VerifyOptions,
) -> (RefVerdict, Evidence) {
    let Some(doc) = corpus.lookup(doc_id) else {
        let error = Some(format!("document {doc_id:?} not found"));
        return (
            RefVerdict {
                doc_id: doc_id.to_string(),
                label: NliLabel::certain(NliClass::NoEvidence),
                error: error.clone(),
            },
            Evidence {
                doc_id: doc_id.to_string(),
                sentences: Vec::new(),
                error,
            },
        );
    };
    let verdict = match nli.classify(&claim.text, &doc.title, &doc.abstract_text) {
        Ok(label) => RefVerdict {
            doc_id: doc_id.to_string(),
            label,
            error: None,
        },
        Err(e) => RefVerdict {
            doc_id: doc_id.to_string(),
            label: NliLabel::certain(NliClass::NoEvidence),
            error: Some(e.to_string()),
        },
    };
    let evidence = match most_similar_sentences(&claim.text, doc, opts.evidence_sentences, embedder) {
        Ok(sentences) => Evidence {
            doc_id: doc_id.to_string(),
            sentences,
            error: None,
        },
        Err(e) => Evidence {
            doc_id: doc_id.to_string(),
            sentences: Vec::new(),
            error: Some(e.to_string()),
        },
    };
    (verdict, evidence)
}

/// Verifies one claim. Makes exactly one NLI call per resolvable reference
/// and none for an unreferenced claim.
pub fn verify_claim(
    claim: &Claim,
    corpus: &dyn DocumentLookup,
    nli: &dyn NliClassifier,
    embedder: &dyn Embedder,
    opts: VerifyOptions,
) -> Verdict {
    let run = |id: &String| check_ref(claim, id, corpus, nli, embedder, opts);
    #[cfg(feature = "parallel")]
    let pairs: Vec<(RefVerdict, Evidence)> = {
        use rayon::prelude::*;
        claim.refs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<(RefVerdict, Evidence)> = claim.refs.iter().map(run).collect();

    let (per_ref, evidence): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let labels: Vec<NliClass> = per_ref.iter().map(|r| r.label.value).collect();
    Verdict {
        claim_id: claim.claim_id,
        aggregate: aggregate(&labels),
        per_ref,
        evidence,
    }
}

/// Parses an answer and verifies each claim, in claim order.
pub fn verify_answer(
    answer: &GeneratedAnswer,
    corpus: &dyn DocumentLookup,
    nli: &dyn NliClassifier,
    embedder: &dyn Embedder,
    opts: VerifyOptions,
) -> (ParsedAnswer, Vec<Verdict>) {
    let parsed = parse_claims(answer);
    let verdicts = verify_parsed(&parsed, corpus, nli, embedder, opts);
    (parsed, verdicts)
}

pub fn verify_parsed(
    parsed: &ParsedAnswer,
    corpus: &dyn DocumentLookup,
    nli: &dyn NliClassifier,
    embedder: &dyn Embedder,
    opts: VerifyOptions,
) -> Vec<Verdict> {
    parsed
        .claims
        .iter()
        .map(|c| verify_claim(c, corpus, nli, embedder, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::reference::{ReferenceEmbedder, ReferenceNli};
    use crate::corpus::Corpus;

    fn claim(refs: &[&str], text: &str) -> Claim {
        Claim {
            claim_id: 0,
            text: text.into(),
            refs: refs.iter().map(|s| s.to_string()).collect(),
            citations: Vec::new(),
            char_span: (0, text.len()),
        }
    }

    #[test]
    fn aggregation_examples() {
        use NliClass::*;
        assert_eq!(aggregate(&[Support, NoEvidence]), VerdictAggregate::Supported);
        assert_eq!(aggregate(&[Support, Contradict]), VerdictAggregate::Contradicted);
        assert_eq!(aggregate(&[NoEvidence]), VerdictAggregate::Unsupported);
        assert_eq!(aggregate(&[]), VerdictAggregate::Unreferenced);
    }

    #[test]
    fn missing_document_degrades_to_no_evidence() {
        let corpus = Corpus::new(vec![DocumentRecord::new("a", "T", "Fever fell.")]).unwrap();
        let v = verify_claim(
            &claim(&["a", "ghost"], "Fever fell."),
            &corpus,
            &ReferenceNli::default(),
            &ReferenceEmbedder::default(),
            VerifyOptions::default(),
        );
        assert_eq!(v.aggregate, VerdictAggregate::Supported);
        assert_eq!(v.per_ref[1].label.value, NliClass::NoEvidence);
        assert!(v.per_ref[1].error.as_deref().unwrap().contains("ghost"));
    }

    #[test]
    fn similar_sentences_rank_identical_first() {
        let doc = DocumentRecord::new(
            "a",
            "T",
            "Cats sleep a lot. Insulin lowers blood glucose. Dogs bark at night.",
        );
        let e = ReferenceEmbedder::default();
        let ranked = most_similar_sentences("Insulin lowers blood glucose.", &doc, 1, &e).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].text, "Insulin lowers blood glucose.");
        assert!((ranked[0].score - 1.0).abs() < 1e-6);
        let all = most_similar_sentences("Insulin lowers blood glucose.", &doc, 10, &e).unwrap();
        assert_eq!(all.len(), 3);
    }
}
