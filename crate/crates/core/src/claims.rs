//! Splits a generated answer into sentence-level claims and resolves their
//! `[n]` citations through the prompt bundle.
//!
//! Every citation run in the answer ends up either attached to the claim it
//! sits in (or directly follows) or reported as dangling when its number is
//! outside the bundle.

use serde::{Deserialize, Serialize};

use crate::prompt::{GeneratedAnswer, PromptBundle};
use crate::text::{citation_run_at, normalize_ws, sentence_spans};

/// One `[n][m]...` run inside a claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationGroup {
    /// Byte span in the raw answer.
    pub span: (usize, usize),
    pub local_indices: Vec<u32>,
    /// Byte offset in the claim text where the run was removed.
    pub text_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: usize,
    /// Sentence text with citation runs removed and whitespace normalised.
    pub text: String,
    /// Resolved doc_ids, in order of first citation, without repeats.
    pub refs: Vec<String>,
    pub citations: Vec<CitationGroup>,
    /// Byte span of the sentence in the raw answer.
    pub char_span: (usize, usize),
}

impl Claim {
    pub fn is_unreferenced(&self) -> bool {
        self.refs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingRef {
    pub claim_id: usize,
    pub local_index: u32,
    /// Span of the citation run carrying the index.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ParsedAnswer {
    pub claims: Vec<Claim>,
    pub dangling: Vec<DanglingRef>,
}

/// Parses `answer.text` against `answer.bundle`.
pub fn parse_claims(answer: &GeneratedAnswer) -> ParsedAnswer {
    parse_text(&answer.text, &answer.bundle)
}

/// Parses raw answer text against a bundle.
pub fn parse_text(text: &str, bundle: &PromptBundle) -> ParsedAnswer {
    let mut parsed = ParsedAnswer::default();
    for (claim_id, (start, end)) in sentence_spans(text).into_iter().enumerate() {
        let sentence = &text[start..end];
        let mut body = String::with_capacity(sentence.len());
        let mut citations = Vec::new();
        let mut refs: Vec<String> = Vec::new();
        let mut pos = 0;
        while pos < sentence.len() {
            if let Some(run) = citation_run_at(sentence, pos) {
                let trimmed = body.trim_end().len();
                body.truncate(trimmed);
                let span = (start + run.start, start + run.end);
                for &n in &run.indices {
                    match bundle.doc_id_for(n) {
                        Some(id) => {
                            if !refs.iter().any(|r| r == id) {
                                refs.push(id.to_string());
                            }
                        }
                        None => parsed.dangling.push(DanglingRef {
                            claim_id,
                            local_index: n,
                            span,
                        }),
                    }
                }
                citations.push((span, run.indices, body.len()));
                pos = run.end;
                continue;
            }
            let c = sentence[pos..].chars().next().expect("in bounds");
            body.push(c);
            pos += c.len_utf8();
        }
        // Normalising whitespace shifts offsets; recompute them against the
        // normalised text by counting preserved non-whitespace characters.
        let normalized = normalize_ws(&body);
        let citations = citations
            .into_iter()
            .map(|(span, local_indices, raw_offset)| CitationGroup {
                span,
                local_indices,
                text_offset: map_offset(&body, &normalized, raw_offset),
            })
            .collect();
        parsed.claims.push(Claim {
            claim_id,
            text: normalized,
            refs,
            citations,
            char_span: (start, end),
        });
    }
    parsed
}

/// Offset in `normalized` corresponding to `offset` in `raw`, where
/// `normalized == normalize_ws(raw)`.
fn map_offset(raw: &str, normalized: &str, offset: usize) -> usize {
    let visible = raw[..offset].chars().filter(|c| !c.is_whitespace()).count();
    if visible == 0 {
        return 0;
    }
    let mut seen = 0;
    for (i, c) in normalized.char_indices() {
        if !c.is_whitespace() {
            seen += 1;
            if seen == visible {
                return i + c.len_utf8();
            }
        }
    }
    normalized.len()
}

/// Reinserts each claim's citation runs at their recorded offsets.
pub fn reconstruct(text: &str, parsed: &ParsedAnswer) -> Vec<String> {
    parsed
        .claims
        .iter()
        .map(|c| {
            let mut out = c.text.clone();
            for g in c.citations.iter().rev() {
                let run = &text[g.span.0..g.span.1];
                out.insert_str(g.text_offset, &format!(" {run}"));
            }
            out
        })
        .collect()
}
