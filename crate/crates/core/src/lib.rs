//! Verifiable question answering over scientific abstracts.
//!
//! The crate is organised along the request path:
//!
//! * [`corpus`] loads and filters abstract records,
//! * [`segment`] cuts document text into overlapping token windows,
//! * [`lexical`] and [`vector`] are the two retrieval arms,
//! * [`hybrid`] normalises and fuses their scores,
//! * [`backends`] defines the embedder / generator / NLI contracts,
//! * [`prompt`] renders the numbered-abstract prompt,
//! * [`claims`] parses generated answers into referenced claims,
//! * [`verify`] checks each claim against its cited abstracts,
//! * [`engine`] wires everything into a single query pipeline.
//!
//! [`scifact`] and [`feedback`] are the dataset-side utilities: cleaning and
//! splitting NLI training data, and logging reviewer corrections.

pub mod backends;
mod binio;
pub mod claims;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod feedback;
pub mod hybrid;
pub mod json;
pub mod lexical;
pub mod prompt;
pub mod scifact;
pub mod segment;
pub mod text;
pub mod vector;
pub mod verify;

pub use backends::{Embedder, Generator, NliClassifier, NliClass, NliLabel};
pub use claims::{parse_claims, Claim, ParsedAnswer};
pub use corpus::{ingest_corpus, Corpus, CorpusStats, DocumentRecord};
pub use engine::{AskResponse, Engine};
pub use hybrid::{fuse, normalize_scores, FusedResult, FusionConfig};
pub use lexical::{LexicalHit, LexicalIndex};
pub use prompt::{build_prompt, GeneratedAnswer, PromptBundle};
pub use segment::{segment, Segment, SegmenterConfig};
pub use vector::{Embedding, SemanticHit, VectorIndex};
pub use verify::{verify_answer, verify_claim, Verdict, VerdictAggregate};
