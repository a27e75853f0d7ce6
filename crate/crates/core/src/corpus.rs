//! Corpus ingestion: JSON-lines records in, validated documents out.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate doc_id {doc_id:?} at {source_name}:{line}")]
    DuplicateId {
        doc_id: String,
        source_name: String,
        line: usize,
    },
    #[error("malformed record at {source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// One corpus article in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// `title + " " + abstract`, the field both indexes see.
    pub text: String,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        let title = title.into();
        let abstract_text = abstract_text.into();
        let text = format!("{title} {abstract_text}");
        Self {
            doc_id: doc_id.into(),
            title,
            abstract_text,
            text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_seen: usize,
    pub kept: usize,
    pub excluded_no_abstract: usize,
    pub kept_fraction: f64,
}

impl CorpusStats {
    fn from_counts(total_seen: usize, kept: usize) -> Self {
        let kept_fraction = if total_seen == 0 {
            0.0
        } else {
            kept as f64 / total_seen as f64
        };
        Self {
            total_seen,
            kept,
            excluded_no_abstract: total_seen - kept,
            kept_fraction,
        }
    }
}

/// Source-side record. Unknown fields (such as a previously derived
/// `text`) are ignored, which makes ingestion idempotent.
#[derive(Deserialize)]
struct SourceRecord {
    doc_id: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default, rename = "abstract")]
    abstract_text: Option<String>,
}

/// Streams records from every `(name, reader)` source in order.
///
/// Records whose abstract is missing or whitespace-only are excluded and
/// counted; a missing title is read as empty. Duplicate IDs are rejected
/// even when the earlier occurrence was itself excluded.
pub fn ingest_corpus<I, R>(sources: I) -> Result<(Vec<DocumentRecord>, CorpusStats), CorpusError>
where
    I: IntoIterator<Item = (String, R)>,
    R: BufRead,
{
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    let mut total = 0usize;
    for (name, reader) in sources {
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::Malformed {
                source_name: name.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| CorpusError::Malformed {
                source_name: name.clone(),
                line: line_no,
                message,
            };
            let rec: SourceRecord =
                serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            let doc_id = match rec.doc_id {
                Some(id) if !id.trim().is_empty() => id,
                _ => return Err(malformed("missing or empty doc_id".into())),
            };
            if !seen.insert(doc_id.clone()) {
                return Err(CorpusError::DuplicateId {
                    doc_id,
                    source_name: name,
                    line: line_no,
                });
            }
            total += 1;
            let abstract_text = rec.abstract_text.unwrap_or_default();
            if abstract_text.trim().is_empty() {
                continue;
            }
            docs.push(DocumentRecord::new(
                doc_id,
                rec.title.unwrap_or_default(),
                abstract_text,
            ));
        }
    }
    let stats = CorpusStats::from_counts(total, docs.len());
    Ok((docs, stats))
}

/// Ingests a set of JSON-lines files.
pub fn ingest_files(paths: &[PathBuf]) -> Result<(Vec<DocumentRecord>, CorpusStats), CorpusError> {
    let mut sources = Vec::with_capacity(paths.len());
    for p in paths {
        let f = File::open(p).map_err(|source| CorpusError::Io {
            path: p.display().to_string(),
            source,
        })?;
        sources.push((p.display().to_string(), BufReader::new(f)));
    }
    ingest_corpus(sources)
}

/// Lookup of a document's evidence fields by ID.
pub trait DocumentLookup: Sync {
    fn lookup(&self, doc_id: &str) -> Option<&DocumentRecord>;
}

/// An ingested corpus with an ID index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<DocumentRecord>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate IDs.
    pub fn new(docs: Vec<DocumentRecord>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    doc_id: d.doc_id.clone(),
                    source_name: "<memory>".into(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn docs(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    /// Writes `corpus.jsonl` and `stats.json` into `dir`.
    pub fn save(&self, dir: &Path, stats: &CorpusStats) -> Result<(), CorpusError> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| CorpusError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(CORPUS_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for d in &self.docs {
            let line = serde_json::to_string(d).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        let stats_path = dir.join(STATS_FILE);
        let body = serde_json::to_string_pretty(stats).expect("stats serialize");
        fs::write(&stats_path, body + "\n").map_err(io_err(&stats_path))?;
        Ok(())
    }

    /// Loads a corpus directory written by [`Corpus::save`].
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let (docs, _) = ingest_files(&[dir.join(CORPUS_FILE)])?;
        Self::new(docs)
    }
}

impl DocumentLookup for Corpus {
    fn lookup(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.get(doc_id)
    }
}
