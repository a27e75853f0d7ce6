//! Deterministic stand-ins for the model backends.
//!
//! They are pure functions of their inputs and configuration, which is what
//! lets the end-to-end pipeline be golden-file tested.

use std::collections::{HashMap, HashSet};

use super::{BackendError, Embedder, Generation, GenerationParams, Generator, NliClass, NliClassifier, NliLabel};
use crate::prompt::parse_rendered;
use crate::text::{analyze, sentences};
use crate::vector::Embedding;

/// Default reference embedding width.
pub const DEFAULT_DIM: usize = 64;

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed bag of words: every analyzed token adds one to bucket
/// `fnv1a(token) mod dim`, then the vector is L2-normalised.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for ReferenceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let tokens = analyze(text);
        if tokens.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut counts = vec![0f64; self.dim];
        for t in &tokens {
            counts[self.bucket(t)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let values = counts.into_iter().map(|c| (c / norm) as f32).collect();
        Ok(Embedding::new(values).expect("finite by construction"))
    }

    fn describe(&self) -> String {
        format!("reference-hash-bow(dim={})", self.dim)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "by", "can", "do", "does", "for", "from",
    "has", "have", "how", "in", "is", "it", "its", "of", "on", "or", "that", "the", "their",
    "there", "these", "this", "to", "was", "were", "what", "when", "which", "who", "why", "with",
];

/// Content terms of a question: analyzed tokens minus stop words.
fn content_terms(text: &str) -> HashSet<String> {
    analyze(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Sentence emitted when no abstract clears the relevance threshold.
pub const NO_ANSWER: &str = "The provided abstracts do not contain enough information to answer the question.";

/// Template generator: for every abstract whose text covers at least
/// `threshold` of the question's content terms, it copies the sentence with
/// the most question terms and cites the abstract's number.
#[derive(Debug, Clone)]
pub struct ReferenceGenerator {
    pub threshold: f64,
}

impl Default for ReferenceGenerator {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl ReferenceGenerator {
    fn compose(&self, prompt: &str) -> String {
        let Some(parsed) = parse_rendered(prompt) else {
            return NO_ANSWER.to_string();
        };
        let question = content_terms(&parsed.question);
        if question.is_empty() {
            return NO_ANSWER.to_string();
        }
        let mut out = Vec::new();
        for (index, paper) in &parsed.papers {
            let paper_terms: HashSet<String> = analyze(paper).into_iter().collect();
            let covered = question.intersection(&paper_terms).count();
            if (covered as f64) / (question.len() as f64) < self.threshold {
                continue;
            }
            let best = sentences(paper)
                .into_iter()
                .map(|s| {
                    let hits = analyze(s).into_iter().filter(|t| question.contains(t)).collect::<HashSet<_>>().len();
                    (hits, s)
                })
                .fold(None::<(usize, &str)>, |best, cur| match best {
                    Some(b) if b.0 >= cur.0 => Some(b),
                    _ => Some(cur),
                });
            if let Some((_, sentence)) = best {
                let body = sentence.trim_end_matches(['.', '!', '?']).trim_end();
                out.push(format!("{body} [{index}]."));
            }
        }
        if out.is_empty() {
            NO_ANSWER.to_string()
        } else {
            out.join(" ")
        }
    }
}

impl Generator for ReferenceGenerator {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, BackendError> {
        let text = self.compose(prompt);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() > params.max_new_tokens {
            return Ok(Generation {
                text: tokens[..params.max_new_tokens].join(" "),
                truncated: true,
            });
        }
        Ok(Generation {
            text,
            truncated: false,
        })
    }

    fn describe(&self) -> String {
        format!("reference-template(threshold={})", self.threshold)
    }
}

const NEGATIONS: &[&str] = &["not", "no"];
const DO_SUPPORT: &[&str] = &["do", "does", "did"];

/// Crude suffix stripping so that "reduces", "reduce" and "reduced" match.
fn stem(token: &str) -> &str {
    for suffix in ["es", "ed", "s", "e"] {
        if let Some(s) = token.strip_suffix(suffix) {
            if s.len() >= 3 {
                return s;
            }
        }
    }
    token
}

fn stems(tokens: &[String]) -> Vec<&str> {
    tokens.iter().map(|t| stem(t)).collect()
}

/// Rule-based NLI used offline and in tests.
///
/// Rules, in priority order:
/// 1. an explicit override for the normalised claim,
/// 2. the claim's tokens occur contiguously in title + abstract → SUPPORT,
/// 3. the claim is an evidence sentence with one inserted `not`/`no`
///    (optionally with do-support, "does not reduce" vs "reduces") → CONTRADICT,
/// 4. otherwise NO_EVIDENCE.
#[derive(Debug, Clone, Default)]
pub struct ReferenceNli {
    overrides: HashMap<String, NliClass>,
}

impl ReferenceNli {
    pub fn with_overrides<I, S>(overrides: I) -> Self
    where
        I: IntoIterator<Item = (S, NliClass)>,
        S: AsRef<str>,
    {
        Self {
            overrides: overrides
                .into_iter()
                .map(|(k, v)| (analyze(k.as_ref()).join(" "), v))
                .collect(),
        }
    }

    fn is_negated_copy(claim: &[String], sentence: &[String]) -> bool {
        let sentence = stems(sentence);
        claim.iter().enumerate().any(|(i, tok)| {
            if !NEGATIONS.contains(&tok.as_str()) {
                return false;
            }
            let without: Vec<String> = claim[..i].iter().chain(&claim[i + 1..]).cloned().collect();
            if stems(&without) == sentence {
                return true;
            }
            i > 0 && DO_SUPPORT.contains(&claim[i - 1].as_str()) && {
                let without: Vec<String> = claim[..i - 1].iter().chain(&claim[i + 1..]).cloned().collect();
                stems(&without) == sentence
            }
        })
    }

    pub fn rule(&self, claim: &str, title: &str, abstract_text: &str) -> NliClass {
        let claim_tokens = analyze(claim);
        if let Some(&c) = self.overrides.get(&claim_tokens.join(" ")) {
            return c;
        }
        if claim_tokens.is_empty() {
            return NliClass::NoEvidence;
        }
        let evidence = format!("{title} {abstract_text}");
        let evidence_tokens = analyze(&evidence);
        if evidence_tokens
            .windows(claim_tokens.len())
            .any(|w| w == claim_tokens.as_slice())
        {
            return NliClass::Support;
        }
        let contradicted = sentences(title)
            .into_iter()
            .chain(sentences(abstract_text))
            .any(|s| Self::is_negated_copy(&claim_tokens, &analyze(s)));
        if contradicted {
            NliClass::Contradict
        } else {
            NliClass::NoEvidence
        }
    }
}

impl NliClassifier for ReferenceNli {
    fn classify(&self, claim: &str, title: &str, abstract_text: &str) -> Result<NliLabel, BackendError> {
        Ok(NliLabel::certain(self.rule(claim, title, abstract_text)))
    }

    fn describe(&self) -> String {
        format!("reference-rules(overrides={})", self.overrides.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render, PromptTemplate};

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let e = ReferenceEmbedder::default();
        let a = e.embed("Aspirin reduces fever in adults").unwrap();
        let b = e.embed("Aspirin reduces fever in adults").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values().iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(matches!(e.embed("  ?? "), Err(BackendError::EmptyInput)));
    }

    #[test]
    fn disjoint_collision_free_texts_are_orthogonal() {
        let e = ReferenceEmbedder::default();
        let left = ["insulin", "glucose"];
        let right = ["tumor", "radiation"];
        // fixture check: the four tokens land in four distinct buckets
        let buckets: HashSet<usize> = left.iter().chain(&right).map(|t| e.bucket(t)).collect();
        assert_eq!(buckets.len(), 4, "fixture must be collision free");
        let a = e.embed(&left.join(" ")).unwrap();
        let b = e.embed(&right.join(" ")).unwrap();
        assert_eq!(a.dot(b.values()), 0.0);
    }

    #[test]
    fn nli_rules() {
        let nli = ReferenceNli::default();
        let abs = "Metformin reduces hepatic glucose output. Effects persist for weeks.";
        assert_eq!(nli.rule("Metformin reduces hepatic glucose output.", "T", abs), NliClass::Support);
        assert_eq!(
            nli.rule("Metformin does not reduce hepatic glucose output.", "T", abs),
            NliClass::Contradict
        );
        assert_eq!(nli.rule("Effects do not persist for weeks", "T", abs), NliClass::Contradict);
        assert_eq!(nli.rule("Effects persist not for weeks", "T", abs), NliClass::Contradict);
        assert_eq!(nli.rule("Ibuprofen cures migraines.", "T", abs), NliClass::NoEvidence);
        assert_eq!(nli.rule("...", "T", abs), NliClass::NoEvidence);
    }

    #[test]
    fn substring_must_align_on_tokens() {
        let nli = ReferenceNli::default();
        assert_eq!(nli.rule("rate", "", "The pirate sailed."), NliClass::NoEvidence);
        assert_eq!(nli.rule("pirate SAILED!", "", "The pirate sailed."), NliClass::Support);
    }

    #[test]
    fn overrides_take_priority() {
        let nli = ReferenceNli::with_overrides([("X causes Y.", NliClass::Contradict)]);
        assert_eq!(nli.rule("x causes y", "", "X causes Y."), NliClass::Contradict);
    }

    #[test]
    fn generator_cites_relevant_abstracts_only() {
        let docs = vec![
            (1, "Aspirin and fever".to_string(), "Aspirin reduces fever in children. It is cheap.".to_string()),
            (2, "Statins".to_string(), "Statins lower cholesterol.".to_string()),
        ];
        let prompt = render(PromptTemplate::Serving, "Does aspirin reduce fever?", &docs);
        let g = ReferenceGenerator::default()
            .generate(&prompt, &GenerationParams::default())
            .unwrap();
        assert_eq!(g.text, "Aspirin and fever Aspirin reduces fever in children [1].");
        assert!(!g.truncated);
    }

    #[test]
    fn generator_truncates_at_token_budget() {
        let docs = vec![(1, "T".to_string(), "alpha beta gamma delta.".to_string())];
        let prompt = render(PromptTemplate::Serving, "alpha beta", &docs);
        let params = GenerationParams {
            max_new_tokens: 2,
            ..GenerationParams::default()
        };
        let g = ReferenceGenerator::default().generate(&prompt, &params).unwrap();
        assert!(g.truncated);
        assert_eq!(g.text.split_whitespace().count(), 2);
    }

    #[test]
    fn generator_without_relevant_docs() {
        let docs = vec![(1, "T".to_string(), "Unrelated text.".to_string())];
        let prompt = render(PromptTemplate::Serving, "What lowers blood pressure?", &docs);
        let g = ReferenceGenerator::default()
            .generate(&prompt, &GenerationParams::default())
            .unwrap();
        assert_eq!(g.text, NO_ANSWER);
        assert_eq!(
            ReferenceGenerator::default()
                .generate("garbage", &GenerationParams::default())
                .unwrap()
                .text,
            NO_ANSWER
        );
    }
}
