//! Overlapping token windows over document text.

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("empty document text")]
    EmptyText,
    #[error("invalid segmenter config: max_tokens={max_tokens}, overlap={overlap}")]
    InvalidConfig { max_tokens: usize, overlap: usize },
}

/// Byte range of one token inside its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// Splits text into tokens and renders a window of them back to text.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan>;

    /// Text of a contiguous token window. The default joins tokens with a
    /// single space; subword tokenizers should slice the source instead.
    fn window_text(&self, text: &str, window: &[TokenSpan]) -> String {
        let len = window.iter().map(|t| t.end - t.start + 1).sum();
        let mut out = String::with_capacity(len);
        for (i, t) in window.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&text[t.start..t.end]);
        }
        out
    }
}

/// Reference tokenizer: maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(TokenSpan { start: s, end: i });
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(TokenSpan {
                start: s,
                end: text.len(),
            });
        }
        spans
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub max_tokens: usize,
    pub overlap: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            overlap: 100,
        }
    }
}

impl SegmenterConfig {
    pub fn new(max_tokens: usize, overlap: usize) -> Result<Self, SegmentError> {
        let cfg = Self {
            max_tokens,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.max_tokens == 0 || self.overlap >= self.max_tokens {
            return Err(SegmentError::InvalidConfig {
                max_tokens: self.max_tokens,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.max_tokens - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub seg_index: u32,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

/// Window boundaries `[start, end)` for a document of `token_count` tokens.
///
/// Windows start every `stride` tokens; the last one ends at the document
/// end and may be shorter than `max_tokens`.
pub fn window_bounds(token_count: usize, cfg: &SegmenterConfig) -> Vec<(usize, usize)> {
    if token_count == 0 {
        return Vec::new();
    }
    let stride = cfg.stride();
    let mut bounds = Vec::with_capacity(token_count.div_ceil(stride));
    let mut start = 0;
    loop {
        let end = (start + cfg.max_tokens).min(token_count);
        bounds.push((start, end));
        if end == token_count {
            break;
        }
        start += stride;
    }
    bounds
}

/// Segments one document.
pub fn segment(
    doc: &DocumentRecord,
    cfg: &SegmenterConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Segment>, SegmentError> {
    cfg.validate()?;
    let tokens = tokenizer.tokenize(&doc.text);
    if tokens.is_empty() {
        return Err(SegmentError::EmptyText);
    }
    Ok(window_bounds(tokens.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| Segment {
            doc_id: doc.doc_id.clone(),
            seg_index: i as u32,
            token_start: start,
            token_end: end,
            text: tokenizer.window_text(&doc.text, &tokens[start..end]),
        })
        .collect())
}
