//! Append-only log of reviewer feedback.
//!
//! Each line of `feedback.log` is `<crc32 as 8 hex digits> <event JSON>`.
//! A dedicated writer thread drains a queue of pending events, assigns
//! strictly increasing IDs, appends and syncs the batch, and only then
//! acknowledges each caller.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::backends::NliClass;
use crate::corpus::DocumentLookup;
use crate::prompt::{render, PromptTemplate};
use crate::scifact::{EvidenceDoc, NliExample};

pub const FEEDBACK_FILE: &str = "feedback.log";

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("invalid label {0:?}; allowed labels: SUPPORT, CONTRADICT, NO_EVIDENCE")]
    InvalidLabel(String),
    #[error("invalid feedback event: {0}")]
    Invalid(String),
    #[error("feedback log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("feedback log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("document {0:?} referenced by feedback is not in the corpus")]
    UnknownDocument(String),
    #[error("feedback store is closed")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackKind {
    LabelOverride,
    AnswerEdit,
}

impl std::str::FromStr for FeedbackKind {
    type Err = FeedbackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "LABEL_OVERRIDE" => Ok(Self::LabelOverride),
            "ANSWER_EDIT" => Ok(Self::AnswerEdit),
            _ => Err(FeedbackError::Invalid(format!(
                "unknown kind {s:?}; expected LABEL_OVERRIDE or ANSWER_EDIT"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    /// Assigned by the store; ignored on input.
    #[serde(default)]
    pub event_id: u64,
    /// Assigned by the store; ignored on input.
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    pub question: String,
    #[serde(default)]
    pub claim_id: Option<usize>,
    /// Claim text the override applies to.
    #[serde(default)]
    pub claim_text: Option<String>,
    /// Reference whose label is overridden.
    #[serde(default)]
    pub doc_id: Option<String>,
    pub kind: FeedbackKind,
    pub old_value: String,
    pub new_value: String,
    /// Local index → doc_id table of the answer under review.
    #[serde(default)]
    pub bundle_ref: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
}

impl FeedbackEvent {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        if self.question.trim().is_empty() {
            return Err(FeedbackError::Invalid("question is empty".into()));
        }
        match self.kind {
            FeedbackKind::LabelOverride => {
                self.new_value
                    .parse::<NliClass>()
                    .map_err(|_| FeedbackError::InvalidLabel(self.new_value.clone()))?;
                if self.claim_id.is_none() {
                    return Err(FeedbackError::Invalid("LABEL_OVERRIDE requires claim_id".into()));
                }
                if self.claim_text.as_deref().is_none_or(|t| t.trim().is_empty()) {
                    return Err(FeedbackError::Invalid("LABEL_OVERRIDE requires claim_text".into()));
                }
                let Some(doc_id) = &self.doc_id else {
                    return Err(FeedbackError::Invalid("LABEL_OVERRIDE requires doc_id".into()));
                };
                if !self.bundle_ref.is_empty() && !self.bundle_ref.values().any(|d| d == doc_id) {
                    return Err(FeedbackError::Invalid(format!(
                        "doc_id {doc_id:?} is not in bundle_ref"
                    )));
                }
            }
            FeedbackKind::AnswerEdit => {
                if self.new_value.trim().is_empty() {
                    return Err(FeedbackError::Invalid("ANSWER_EDIT requires a non-empty new_value".into()));
                }
            }
        }
        Ok(())
    }
}

fn encode_line(ev: &FeedbackEvent) -> String {
    let json = serde_json::to_string(ev).expect("event serializes");
    format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes()))
}

fn decode_line(line: &str, line_no: usize) -> Result<FeedbackEvent, FeedbackError> {
    let corrupt = |message: String| FeedbackError::Corrupt { line: line_no, message };
    let (crc, json) = line.split_once(' ').ok_or_else(|| corrupt("missing checksum".into()))?;
    let expected = u32::from_str_radix(crc, 16).map_err(|e| corrupt(e.to_string()))?;
    if crc32fast::hash(json.as_bytes()) != expected {
        return Err(corrupt("checksum mismatch".into()));
    }
    serde_json::from_str(json).map_err(|e| corrupt(e.to_string()))
}

/// Reads every complete line of a log. A trailing line without a newline is
/// a torn write and is ignored.
pub fn replay(path: &Path) -> Result<Vec<FeedbackEvent>, FeedbackError> {
    let mut contents = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut contents).map_err(|source| FeedbackError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(FeedbackError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    }
    let complete = match contents.rfind('\n') {
        Some(i) => &contents[..=i],
        None => "",
    };
    let mut events: Vec<FeedbackEvent> = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        let ev = decode_line(line, i + 1)?;
        if let Some(prev) = events.last() {
            if ev.event_id <= prev.event_id {
                return Err(FeedbackError::Corrupt {
                    line: i + 1,
                    message: format!("event_id {} does not follow {}", ev.event_id, prev.event_id),
                });
            }
        }
        events.push(ev);
    }
    Ok(events)
}

type Reply = mpsc::SyncSender<Result<u64, FeedbackError>>;

struct Pending {
    event: FeedbackEvent,
    reply: Reply,
}

/// Key under which a label override applies at read time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OverrideKey {
    pub question: String,
    pub claim_id: usize,
    pub doc_id: String,
}

pub struct FeedbackStore {
    path: PathBuf,
    events: Arc<RwLock<Vec<FeedbackEvent>>>,
    tx: Mutex<Option<mpsc::Sender<Pending>>>,
    writer: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for FeedbackStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackStore").field("path", &self.path).finish()
    }
}

impl FeedbackStore {
    /// Opens (or creates) the log at `path`, replaying existing events.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FeedbackError> {
        let path = path.into();
        let existing = replay(&path)?;
        let io_err = |source| FeedbackError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path).map_err(io_err)?;
        // Drop a torn tail so new lines start on a clean boundary.
        let len = file.metadata().map_err(io_err)?.len();
        let complete_len: u64 = existing.iter().map(|e| encode_line(e).len() as u64).sum();
        if len != complete_len {
            file.set_len(complete_len).map_err(io_err)?;
        }
        let next_id = existing.last().map_or(1, |e| e.event_id + 1);
        let events = Arc::new(RwLock::new(existing));
        let (tx, rx) = mpsc::channel::<Pending>();
        let writer_events = Arc::clone(&events);
        let writer_path = path.display().to_string();
        let writer = std::thread::Builder::new()
            .name("feedback-writer".into())
            .spawn(move || writer_loop(rx, file, next_id, writer_events, writer_path))
            .map_err(io_err)?;
        Ok(Self {
            path,
            events,
            tx: Mutex::new(Some(tx)),
            writer: Some(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates, appends and syncs one event; returns its ID.
    pub fn record(&self, event: FeedbackEvent) -> Result<u64, FeedbackError> {
        event.validate()?;
        let (reply, answer) = mpsc::sync_channel(1);
        {
            let guard = self.tx.lock().expect("sender lock");
            let tx = guard.as_ref().ok_or(FeedbackError::Closed)?;
            tx.send(Pending { event, reply }).map_err(|_| FeedbackError::Closed)?;
        }
        answer.recv().map_err(|_| FeedbackError::Closed)?
    }

    /// Snapshot of all stored events in ID order.
    pub fn events(&self) -> Vec<FeedbackEvent> {
        self.events.read().expect("events lock").clone()
    }

    /// Latest override label per (question, claim, reference).
    pub fn latest_overrides(&self) -> HashMap<OverrideKey, NliClass> {
        let mut out = HashMap::new();
        for ev in self.events.read().expect("events lock").iter() {
            if ev.kind != FeedbackKind::LabelOverride {
                continue;
            }
            if let (Some(claim_id), Some(doc_id), Ok(label)) =
                (ev.claim_id, ev.doc_id.clone(), ev.new_value.parse::<NliClass>())
            {
                out.insert(
                    OverrideKey {
                        question: ev.question.clone(),
                        claim_id,
                        doc_id,
                    },
                    label,
                );
            }
        }
        out
    }

    /// Stops the writer after draining queued events.
    pub fn close(&mut self) {
        self.tx.lock().expect("sender lock").take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

impl Drop for FeedbackStore {
    fn drop(&mut self) {
        self.close();
    }
}

fn writer_loop(
    rx: mpsc::Receiver<Pending>,
    mut file: File,
    mut next_id: u64,
    events: Arc<RwLock<Vec<FeedbackEvent>>>,
    path: String,
) {
    while let Ok(first) = rx.recv() {
        let mut batch = vec![first];
        batch.extend(rx.try_iter().take(1023));
        let now = Utc::now();
        let mut buf = String::new();
        let mut stamped = Vec::with_capacity(batch.len());
        for (i, p) in batch.iter().enumerate() {
            let mut ev = p.event.clone();
            ev.event_id = next_id + i as u64;
            ev.timestamp = Some(
                DateTime::parse_from_rfc3339(&now.to_rfc3339_opts(SecondsFormat::Millis, true))
                    .expect("rfc3339 round trip")
                    .with_timezone(&Utc),
            );
            buf.push_str(&encode_line(&ev));
            stamped.push(ev);
        }
        let result = file.write_all(buf.as_bytes()).and_then(|_| file.sync_data());
        match result {
            Ok(()) => {
                next_id += batch.len() as u64;
                events.write().expect("events lock").extend(stamped.iter().cloned());
                for (p, ev) in batch.into_iter().zip(stamped) {
                    let _ = p.reply.send(Ok(ev.event_id));
                }
            }
            Err(e) => {
                for p in batch {
                    let _ = p.reply.send(Err(FeedbackError::Io {
                        path: path.clone(),
                        source: io::Error::new(e.kind(), e.to_string()),
                    }));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExportFormat {
    #[default]
    Jsonl,
}

/// Prompt / corrected answer pair for generator fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEditExample {
    pub prompt: String,
    pub answer: String,
}

/// Label overrides as NLI examples, keeping the latest override for each
/// (claim, document) pair, in order of first appearance.
pub fn export_label_overrides(
    events: &[FeedbackEvent],
    corpus: &dyn DocumentLookup,
) -> Result<Vec<NliExample>, FeedbackError> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut latest: HashMap<(String, String), NliExample> = HashMap::new();
    for ev in events.iter().filter(|e| e.kind == FeedbackKind::LabelOverride) {
        let claim = ev.claim_text.clone().unwrap_or_default();
        let doc_id = ev.doc_id.clone().unwrap_or_default();
        let doc = corpus
            .lookup(&doc_id)
            .ok_or_else(|| FeedbackError::UnknownDocument(doc_id.clone()))?;
        let label = ev
            .new_value
            .parse::<NliClass>()
            .map_err(|_| FeedbackError::InvalidLabel(ev.new_value.clone()))?;
        let key = (claim.clone(), doc_id.clone());
        if !latest.contains_key(&key) {
            order.push(key.clone());
        }
        latest.insert(
            key,
            NliExample {
                claim,
                evidence_doc: EvidenceDoc {
                    doc_id,
                    title: doc.title.clone(),
                    abstract_text: doc.abstract_text.clone(),
                },
                label,
            },
        );
    }
    Ok(order.into_iter().map(|k| latest.remove(&k).expect("present")).collect())
}

/// Answer edits as (prompt, edited answer) pairs; the prompt is re-rendered
/// from the recorded bundle table.
pub fn export_answer_edits(
    events: &[FeedbackEvent],
    corpus: &dyn DocumentLookup,
) -> Result<Vec<AnswerEditExample>, FeedbackError> {
    events
        .iter()
        .filter(|e| e.kind == FeedbackKind::AnswerEdit)
        .map(|ev| {
            let docs = ev
                .bundle_ref
                .iter()
                .map(|(&i, id)| {
                    corpus
                        .lookup(id)
                        .map(|d| (i, d.title.clone(), d.abstract_text.clone()))
                        .ok_or_else(|| FeedbackError::UnknownDocument(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AnswerEditExample {
                prompt: render(PromptTemplate::Serving, &ev.question, &docs),
                answer: ev.new_value.clone(),
            })
        })
        .collect()
}

/// Writes the export for `kind` as JSON lines; returns the record count.
pub fn export<W: Write>(
    events: &[FeedbackEvent],
    kind: FeedbackKind,
    _format: ExportFormat,
    corpus: &dyn DocumentLookup,
    out: &mut W,
) -> Result<usize, FeedbackError> {
    let io_err = |source| FeedbackError::Io {
        path: "<export>".into(),
        source,
    };
    let lines: Vec<String> = match kind {
        FeedbackKind::LabelOverride => export_label_overrides(events, corpus)?
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializes"))
            .collect(),
        FeedbackKind::AnswerEdit => export_answer_edits(events, corpus)?
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializes"))
            .collect(),
    };
    for l in &lines {
        writeln!(out, "{l}").map_err(io_err)?;
    }
    Ok(lines.len())
}
