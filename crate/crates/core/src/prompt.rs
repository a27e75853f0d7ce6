//! Prompt assembly with prompt-local citation numbers.
//!
//! Documents are always numbered `[1]..[n]` inside the prompt and mapped
//! back to their stable IDs through the [`PromptBundle`]; generators follow
//! small local numbers far more reliably than external identifiers.

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentLookup, DocumentRecord};
use crate::hybrid::FusedResult;

/// Upper bound on documents placed in one prompt.
pub const MAX_DOCS: usize = 10;

/// Serving instruction, placed before the question and the abstracts.
pub const SERVING_HEADER: &str =
    "Respond to the Instruction using only the information provided in the relevant abstracts in ```Papers``` below.";

/// Instruction used when building question-answering training data.
pub const DATASET_HEADER: &str = "Please carefully read the question and use the provided research papers to support your answers. When making a statement, indicate the corresponding abstract number in square brackets (e.g., [1][2]). Note that some abstracts may appear to be strictly related to the instructions, while others may not be relevant at all.";

const PAPERS_MARKER: &str = "\n\nPapers:\n";
const ANSWER_MARKER: &str = "\n\nAnswer:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no retrieval results")]
    NoResults,
    #[error("{0} documents exceed the prompt limit of {MAX_DOCS}")]
    TooManyDocs(usize),
    #[error("document {0:?} is not in the corpus")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    #[default]
    Serving,
    DatasetBuilding,
}

impl PromptTemplate {
    fn header(self) -> &'static str {
        match self {
            PromptTemplate::Serving => SERVING_HEADER,
            PromptTemplate::DatasetBuilding => DATASET_HEADER,
        }
    }

    fn question_label(self) -> &'static str {
        match self {
            PromptTemplate::Serving => "Instruction: ",
            PromptTemplate::DatasetBuilding => "Question: ",
        }
    }
}

/// Renders a prompt from `(local_index, title, abstract)` triples.
///
/// ```text
/// <header>
///
/// Instruction: <question>
///
/// Papers:
/// [1] <title> <abstract>
///
/// [2] <title> <abstract>
///
/// Answer:
/// ```
pub fn render(template: PromptTemplate, question: &str, docs: &[(u32, String, String)]) -> String {
    let papers = docs
        .iter()
        .map(|(i, title, abs)| format!("[{i}] {title} {abs}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!(
        "{}\n\n{}{}{PAPERS_MARKER}{papers}{ANSWER_MARKER}",
        template.header(),
        template.question_label(),
        question.trim()
    )
}

/// Question and numbered paper texts recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub question: String,
    pub papers: Vec<(u32, String)>,
}

/// Inverse of [`render`] for either template. Returns `None` when the text
/// does not have the rendered shape.
pub fn parse_rendered(prompt: &str) -> Option<RenderedPrompt> {
    let (head, rest) = prompt.split_once(PAPERS_MARKER)?;
    let question = [PromptTemplate::Serving, PromptTemplate::DatasetBuilding]
        .into_iter()
        .find_map(|t| head.split_once(&format!("\n\n{}", t.question_label())))
        .map(|(_, q)| q.trim().to_string())?;
    let body = rest.strip_suffix(ANSWER_MARKER)?;
    let mut papers = Vec::new();
    let mut cursor = body;
    let mut index = 1u32;
    while let Some(after) = cursor.strip_prefix(&format!("[{index}] ")) {
        let next = format!("\n\n[{}] ", index + 1);
        match after.find(&next) {
            Some(pos) => {
                papers.push((index, after[..pos].to_string()));
                cursor = &after[pos + 2..];
            }
            None => {
                papers.push((index, after.to_string()));
                cursor = "";
            }
        }
        index += 1;
    }
    cursor.is_empty().then_some(RenderedPrompt { question, papers })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDoc {
    pub local_index: u32,
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

/// The rendered prompt together with its local-index ↔ doc_id table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub question: String,
    pub docs: Vec<BundleDoc>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn doc_id_for(&self, local_index: u32) -> Option<&str> {
        let i = (local_index as usize).checked_sub(1)?;
        self.docs.get(i).map(|d| d.doc_id.as_str())
    }

    /// `(local_index, doc_id)` rows in prompt order.
    pub fn table(&self) -> Vec<(u32, &str)> {
        self.docs.iter().map(|d| (d.local_index, d.doc_id.as_str())).collect()
    }

    /// Lookup of bundle documents as corpus records, for verification
    /// without the full corpus.
    pub fn documents(&self) -> BundleDocuments {
        BundleDocuments(
            self.docs
                .iter()
                .map(|d| DocumentRecord::new(d.doc_id.clone(), d.title.clone(), d.abstract_text.clone()))
                .collect(),
        )
    }
}

/// Owned records of a bundle.
#[derive(Debug, Clone)]
pub struct BundleDocuments(Vec<DocumentRecord>);

impl DocumentLookup for BundleDocuments {
    fn lookup(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.0.iter().find(|d| d.doc_id == doc_id)
    }
}

/// Builds the serving prompt from fused results, numbering documents in
/// fused rank order.
pub fn build_prompt(
    question: &str,
    results: &[FusedResult],
    corpus: &dyn DocumentLookup,
) -> Result<PromptBundle, PromptError> {
    build_prompt_with(PromptTemplate::Serving, question, results, corpus)
}

pub fn build_prompt_with(
    template: PromptTemplate,
    question: &str,
    results: &[FusedResult],
    corpus: &dyn DocumentLookup,
) -> Result<PromptBundle, PromptError> {
    let ids: Vec<&str> = results.iter().map(|r| r.doc_id.as_str()).collect();
    bundle_from_ids(template, question, &ids, corpus)
}

/// Same as [`build_prompt_with`] for an explicit ordered list of IDs.
pub fn bundle_from_ids(
    template: PromptTemplate,
    question: &str,
    doc_ids: &[&str],
    corpus: &dyn DocumentLookup,
) -> Result<PromptBundle, PromptError> {
    if doc_ids.is_empty() {
        return Err(PromptError::NoResults);
    }
    if doc_ids.len() > MAX_DOCS {
        return Err(PromptError::TooManyDocs(doc_ids.len()));
    }
    let mut docs = Vec::with_capacity(doc_ids.len());
    for (i, id) in doc_ids.iter().enumerate() {
        let rec = corpus
            .lookup(id)
            .ok_or_else(|| PromptError::UnknownDocument(id.to_string()))?;
        docs.push(BundleDoc {
            local_index: i as u32 + 1,
            doc_id: rec.doc_id.clone(),
            title: rec.title.clone(),
            abstract_text: rec.abstract_text.clone(),
        });
    }
    let triples: Vec<(u32, String, String)> = docs
        .iter()
        .map(|d| (d.local_index, d.title.clone(), d.abstract_text.clone()))
        .collect();
    let rendered = render(template, question, &triples);
    Ok(PromptBundle {
        question: question.trim().to_string(),
        docs,
        rendered,
    })
}

/// Generator output plus the bundle needed to resolve its citations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub bundle: PromptBundle,
    pub truncated: bool,
}
