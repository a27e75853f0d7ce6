//! Inverted index with BM25 scoring over whole-document text.
//!
//! Scoring uses the non-negative IDF variant
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·|d| / avgdl))
//! ```
//!
//! where the sum runs over the distinct analyzed query terms in first
//! occurrence order.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::binio::{read_header, read_str, write_header, write_str};
use crate::corpus::DocumentRecord;
use crate::text::analyze;

pub const LEX_DIR: &str = "lex";
const FORMAT_VERSION: u32 = 1;
const TERMS_MAGIC: &[u8; 4] = b"CQLT";
const POSTINGS_MAGIC: &[u8; 4] = b"CQLP";
const DOCLENS_MAGIC: &[u8; 4] = b"CQLD";
const IDS_MAGIC: &[u8; 4] = b"CQLI";

#[derive(Debug, thiserror::Error)]
pub enum LexicalError {
    #[error("cannot build a lexical index over an empty corpus")]
    EmptyCorpus,
    #[error("duplicate doc_id {0:?}")]
    DuplicateId(String),
    #[error("lexical index io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt lexical index: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub term_freq: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalHit {
    pub doc_id: String,
    pub raw_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct TermEntry {
    term: String,
    offset: u64,
    df: u32,
}

/// Immutable BM25 index. Safe to share between threads once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalIndex {
    params: Bm25Params,
    /// Sorted by term for binary search.
    terms: Vec<TermEntry>,
    postings: Vec<Posting>,
    doc_lens: Vec<u32>,
    doc_ids: Vec<String>,
    avg_len: f64,
}

impl LexicalIndex {
    pub fn build(docs: &[DocumentRecord], params: Bm25Params) -> Result<Self, LexicalError> {
        if docs.is_empty() {
            return Err(LexicalError::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(docs.len());
        let mut inverted: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        for (ord, doc) in docs.iter().enumerate() {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(LexicalError::DuplicateId(doc.doc_id.clone()));
            }
            let tokens = analyze(&doc.text);
            doc_lens.push(tokens.len() as u32);
            doc_ids.push(doc.doc_id.clone());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, term_freq) in tf {
                inverted.entry(term).or_default().push(Posting {
                    doc_ordinal: ord as u32,
                    term_freq,
                });
            }
        }
        let mut terms = Vec::with_capacity(inverted.len());
        let mut postings = Vec::new();
        for (term, list) in inverted {
            terms.push(TermEntry {
                term,
                offset: postings.len() as u64,
                df: list.len() as u32,
            });
            postings.extend(list);
        }
        Ok(Self::assemble(params, terms, postings, doc_lens, doc_ids))
    }

    fn assemble(
        params: Bm25Params,
        terms: Vec<TermEntry>,
        postings: Vec<Posting>,
        doc_lens: Vec<u32>,
        doc_ids: Vec<String>,
    ) -> Self {
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_len = total as f64 / doc_lens.len().max(1) as f64;
        Self {
            params,
            terms,
            postings,
            doc_lens,
            doc_ids,
            avg_len,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    fn postings_for(&self, term: &str) -> Option<&[Posting]> {
        let i = self
            .terms
            .binary_search_by(|e| e.term.as_str().cmp(term))
            .ok()?;
        let e = &self.terms[i];
        let start = e.offset as usize;
        Some(&self.postings[start..start + e.df as usize])
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.postings_for(term).map_or(0, |p| p.len() as u32)
    }

    pub fn idf(&self, df: u32) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avg_len;
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Top `k` documents for `query`. Only documents matching at least one
    /// query term are returned; a query with no terms yields no hits.
    pub fn search(&self, query: &str, k: usize) -> Vec<LexicalHit> {
        let mut seen = HashSet::new();
        let terms: Vec<String> = analyze(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut scores = vec![0.0f64; self.num_docs()];
        let mut touched = Vec::new();
        for term in &terms {
            let Some(list) = self.postings_for(term) else {
                continue;
            };
            let idf = self.idf(list.len() as u32);
            for p in list {
                let slot = &mut scores[p.doc_ordinal as usize];
                if *slot == 0.0 {
                    touched.push(p.doc_ordinal);
                }
                *slot += idf * self.term_weight(p.term_freq, self.doc_lens[p.doc_ordinal as usize]);
            }
        }
        let mut hits: Vec<LexicalHit> = touched
            .into_iter()
            .map(|ord| LexicalHit {
                doc_id: self.doc_ids[ord as usize].clone(),
                raw_score: scores[ord as usize],
            })
            .collect();
        hits.sort_by(|a, b| {
            b.raw_score
                .total_cmp(&a.raw_score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(k);
        hits
    }

    /// Writes the four index files under `dir/lex/`.
    pub fn write(&self, dir: &Path) -> Result<(), LexicalError> {
        let lex = dir.join(LEX_DIR);
        fs::create_dir_all(&lex).map_err(io_at(&lex))?;

        write_file(&lex.join("terms"), |w| {
            write_header(w, TERMS_MAGIC, FORMAT_VERSION)?;
            w.write_f64::<LittleEndian>(self.params.k1)?;
            w.write_f64::<LittleEndian>(self.params.b)?;
            w.write_u32::<LittleEndian>(self.terms.len() as u32)?;
            for e in &self.terms {
                write_str(w, &e.term)?;
                w.write_u64::<LittleEndian>(e.offset)?;
                w.write_u32::<LittleEndian>(e.df)?;
            }
            Ok(())
        })?;
        write_file(&lex.join("postings"), |w| {
            write_header(w, POSTINGS_MAGIC, FORMAT_VERSION)?;
            w.write_u64::<LittleEndian>(self.postings.len() as u64)?;
            for p in &self.postings {
                w.write_u32::<LittleEndian>(p.doc_ordinal)?;
                w.write_u32::<LittleEndian>(p.term_freq)?;
            }
            Ok(())
        })?;
        write_file(&lex.join("doclens"), |w| {
            write_header(w, DOCLENS_MAGIC, FORMAT_VERSION)?;
            w.write_u32::<LittleEndian>(self.doc_lens.len() as u32)?;
            for &l in &self.doc_lens {
                w.write_u32::<LittleEndian>(l)?;
            }
            Ok(())
        })?;
        write_file(&lex.join("ids"), |w| {
            write_header(w, IDS_MAGIC, FORMAT_VERSION)?;
            w.write_u32::<LittleEndian>(self.doc_ids.len() as u32)?;
            for id in &self.doc_ids {
                write_str(w, id)?;
            }
            Ok(())
        })
    }

    /// Opens an index written by [`LexicalIndex::write`].
    pub fn open(dir: &Path) -> Result<Self, LexicalError> {
        let lex = dir.join(LEX_DIR);
        let (params, terms) = read_file(&lex.join("terms"), |r| {
            read_header(r, TERMS_MAGIC, FORMAT_VERSION)?;
            let k1 = r.read_f64::<LittleEndian>()?;
            let b = r.read_f64::<LittleEndian>()?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut terms = Vec::with_capacity(n);
            for _ in 0..n {
                let term = read_str(r)?;
                let offset = r.read_u64::<LittleEndian>()?;
                let df = r.read_u32::<LittleEndian>()?;
                terms.push(TermEntry { term, offset, df });
            }
            Ok((Bm25Params { k1, b }, terms))
        })?;
        let postings = read_file(&lex.join("postings"), |r| {
            read_header(r, POSTINGS_MAGIC, FORMAT_VERSION)?;
            let n = r.read_u64::<LittleEndian>()? as usize;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let doc_ordinal = r.read_u32::<LittleEndian>()?;
                let term_freq = r.read_u32::<LittleEndian>()?;
                v.push(Posting {
                    doc_ordinal,
                    term_freq,
                });
            }
            Ok(v)
        })?;
        let doc_lens = read_file(&lex.join("doclens"), |r| {
            read_header(r, DOCLENS_MAGIC, FORMAT_VERSION)?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            (0..n).map(|_| r.read_u32::<LittleEndian>()).collect::<io::Result<Vec<u32>>>()
        })?;
        let doc_ids = read_file(&lex.join("ids"), |r| {
            read_header(r, IDS_MAGIC, FORMAT_VERSION)?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            (0..n).map(|_| read_str(r)).collect::<io::Result<Vec<_>>>()
        })?;

        if doc_lens.len() != doc_ids.len() || doc_ids.is_empty() {
            return Err(LexicalError::Corrupt(format!(
                "{} document lengths for {} ids",
                doc_lens.len(),
                doc_ids.len()
            )));
        }
        let n_docs = doc_ids.len() as u32;
        for e in &terms {
            let end = e.offset + e.df as u64;
            if end > postings.len() as u64 {
                return Err(LexicalError::Corrupt(format!(
                    "postings for {:?} run past the postings table",
                    e.term
                )));
            }
        }
        if postings.iter().any(|p| p.doc_ordinal >= n_docs) {
            return Err(LexicalError::Corrupt("posting references unknown document".into()));
        }
        Ok(Self::assemble(params, terms, postings, doc_lens, doc_ids))
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> LexicalError {
    let path = path.display().to_string();
    move |source| LexicalError::Io {
        path: path.clone(),
        source,
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), LexicalError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    body(&mut w).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}

fn read_file<T>(
    path: &Path,
    body: impl FnOnce(&mut BufReader<File>) -> io::Result<T>,
) -> Result<T, LexicalError> {
    let mut r = BufReader::new(File::open(path).map_err(io_at(path))?);
    let value = body(&mut r).map_err(io_at(path))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_at(path))? != 0 {
        return Err(LexicalError::Corrupt(format!(
            "trailing bytes in {}",
            path.display()
        )));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[(&str, &str)]) -> Vec<DocumentRecord> {
        texts
            .iter()
            .map(|(id, abs)| DocumentRecord::new(*id, "", *abs))
            .collect()
    }

    #[test]
    fn term_only_in_one_doc() {
        let idx = LexicalIndex::build(
            &docs(&[("A", "aspirin lowers fever"), ("B", "statins lower cholesterol")]),
            Bm25Params::default(),
        )
        .unwrap();
        let hits = idx.search("aspirin", 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "A");
        assert!(hits[0].raw_score > 0.0);
    }

    #[test]
    fn term_in_every_doc_ties_break_by_id() {
        let idx = LexicalIndex::build(
            &docs(&[("c", "cell x"), ("a", "cell y"), ("b", "cell z")]),
            Bm25Params::default(),
        )
        .unwrap();
        let hits = idx.search("cell", 10);
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert!(hits.windows(2).all(|w| w[0].raw_score == w[1].raw_score));
        assert!(idx.idf(3) < idx.idf(1));
    }

    #[test]
    fn empty_query_and_empty_corpus() {
        let idx = LexicalIndex::build(&docs(&[("a", "x y")]), Bm25Params::default()).unwrap();
        assert!(idx.search("?? !!", 5).is_empty());
        assert!(matches!(
            LexicalIndex::build(&[], Bm25Params::default()),
            Err(LexicalError::EmptyCorpus)
        ));
    }

    #[test]
    fn k_truncates() {
        let idx = LexicalIndex::build(
            &docs(&[("a", "x"), ("b", "x x"), ("c", "x y")]),
            Bm25Params::default(),
        )
        .unwrap();
        assert_eq!(idx.search("x", 2).len(), 2);
    }

    #[test]
    fn write_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = LexicalIndex::build(
            &docs(&[("a", "alpha beta"), ("b", "beta gamma gamma")]),
            Bm25Params::default(),
        )
        .unwrap();
        idx.write(dir.path()).unwrap();
        let back = LexicalIndex::open(dir.path()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.search("gamma beta", 5), idx.search("gamma beta", 5));
    }

    #[test]
    fn open_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let idx = LexicalIndex::build(&docs(&[("a", "x")]), Bm25Params::default()).unwrap();
        idx.write(dir.path()).unwrap();
        let ids = dir.path().join(LEX_DIR).join("ids");
        let mut bytes = fs::read(&ids).unwrap();
        bytes[0] = b'Z';
        fs::write(&ids, bytes).unwrap();
        let err = LexicalIndex::open(dir.path()).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }
}
