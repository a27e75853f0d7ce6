//! NLI dataset preparation: cleaning raw claim entries into single-document
//! examples, a seeded stratified 80/10/10 split, and per-label metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, NliClass, NliClassifier};
use crate::text::normalize_ws;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum ScifactError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("claim {claim_id} cites unknown document {doc_id}")]
    UnknownDoc { claim_id: i64, doc_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

/// A labelled claim that may cite several documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawClaimEntry {
    pub claim: String,
    pub label: NliClass,
    pub docs: Vec<EvidenceDoc>,
}

/// A claim paired with exactly one evidence document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliExample {
    pub claim: String,
    pub evidence_doc: EvidenceDoc,
    pub label: NliClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_entries: usize,
    pub dropped_no_citation: usize,
    pub duplicates_removed: usize,
    pub output_examples: usize,
}

/// Splits every multi-document entry into one example per document, drops
/// entries citing nothing, and removes repeated (claim, document, label)
/// triples after whitespace normalisation. First occurrences keep their
/// order. Applying `clean` to its own output changes nothing.
pub fn clean(raw: &[RawClaimEntry]) -> (Vec<NliExample>, CleanReport) {
    let mut report = CleanReport {
        input_entries: raw.len(),
        ..CleanReport::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for entry in raw {
        if entry.docs.is_empty() {
            report.dropped_no_citation += 1;
            continue;
        }
        for doc in &entry.docs {
            let example = NliExample {
                claim: normalize_ws(&entry.claim),
                evidence_doc: EvidenceDoc {
                    doc_id: doc.doc_id.clone(),
                    title: normalize_ws(&doc.title),
                    abstract_text: normalize_ws(&doc.abstract_text),
                },
                label: entry.label,
            };
            if seen.insert(example.clone()) {
                out.push(example);
            } else {
                report.duplicates_removed += 1;
            }
        }
    }
    report.output_examples = out.len();
    (out, report)
}

impl From<NliExample> for RawClaimEntry {
    fn from(e: NliExample) -> Self {
        Self {
            claim: e.claim,
            label: e.label,
            docs: vec![e.evidence_doc],
        }
    }
}

#[derive(Deserialize)]
struct ScifactCorpusRow {
    doc_id: i64,
    title: String,
    #[serde(rename = "abstract")]
    sentences: Vec<String>,
}

#[derive(Deserialize)]
struct ScifactEvidence {
    label: String,
}

#[derive(Deserialize)]
struct ScifactClaimRow {
    id: i64,
    claim: String,
    evidence: Option<BTreeMap<String, Vec<ScifactEvidence>>>,
    #[serde(default)]
    cited_doc_ids: Vec<i64>,
}

/// Converts the public SciFact release (`claims_*.jsonl` + `corpus.jsonl`)
/// into raw entries: one entry per evidence document with its label, and
/// one NO_EVIDENCE entry citing all documents for claims without evidence.
/// Claim files without an `evidence` field (the unlabelled test split) are
/// rejected.
pub fn from_scifact<C: BufRead, D: BufRead>(claims: C, corpus: D) -> Result<Vec<RawClaimEntry>, ScifactError> {
    let mut docs = HashMap::new();
    for (i, line) in corpus.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ScifactCorpusRow = serde_json::from_str(&line).map_err(|e| ScifactError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.insert(
            row.doc_id,
            EvidenceDoc {
                doc_id: row.doc_id.to_string(),
                title: row.title,
                abstract_text: row.sentences.join(" "),
            },
        );
    }
    let lookup = |claim_id: i64, id: i64| {
        docs.get(&id).cloned().ok_or(ScifactError::UnknownDoc {
            claim_id,
            doc_id: id.to_string(),
        })
    };
    let mut out = Vec::new();
    for (i, line) in claims.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ScifactError::Parse { line: i + 1, message };
        let row: ScifactClaimRow = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let evidence = row
            .evidence
            .ok_or_else(|| parse_err("claim has no evidence field (unlabelled split?)".into()))?;
        if evidence.is_empty() {
            let cited = row
                .cited_doc_ids
                .iter()
                .map(|&d| lookup(row.id, d))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(RawClaimEntry {
                claim: row.claim,
                label: NliClass::NoEvidence,
                docs: cited,
            });
            continue;
        }
        for (doc_id, sets) in evidence {
            let id: i64 = doc_id.parse().map_err(|_| parse_err(format!("bad doc id {doc_id:?}")))?;
            let label = sets
                .first()
                .map(|s| s.label.parse::<NliClass>())
                .transpose()
                .map_err(|e| parse_err(e.to_string()))?
                .unwrap_or(NliClass::NoEvidence);
            out.push(RawClaimEntry {
                claim: row.claim.clone(),
                label,
                docs: vec![lookup(row.id, id)?],
            });
        }
    }
    Ok(out)
}

/// Counts per label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub no_evidence: usize,
    pub support: usize,
    pub contradict: usize,
}

impl LabelCounts {
    pub fn of(examples: &[NliExample]) -> Self {
        let mut c = Self::default();
        for e in examples {
            *c.get_mut(e.label) += 1;
        }
        c
    }

    pub fn get(&self, label: NliClass) -> usize {
        match label {
            NliClass::Support => self.support,
            NliClass::Contradict => self.contradict,
            NliClass::NoEvidence => self.no_evidence,
        }
    }

    fn get_mut(&mut self, label: NliClass) -> &mut usize {
        match label {
            NliClass::Support => &mut self.support,
            NliClass::Contradict => &mut self.contradict,
            NliClass::NoEvidence => &mut self.no_evidence,
        }
    }

    pub fn total(&self) -> usize {
        self.no_evidence + self.support + self.contradict
    }

    /// Share of `label` in percent (0 for an empty set).
    pub fn percent(&self, label: NliClass) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.get(label) as f64 / t as f64,
        }
    }
}

/// Report column order: NO_EVIDENCE, SUPPORT, CONTRADICT.
const REPORT_ORDER: [NliClass; 3] = [NliClass::NoEvidence, NliClass::Support, NliClass::Contradict];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<NliExample>,
    pub validation: Vec<NliExample>,
    pub test: Vec<NliExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub seed: u64,
    pub global: LabelCounts,
    pub train: LabelCounts,
    pub validation: LabelCounts,
    pub test: LabelCounts,
}

impl fmt::Display for SplitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<11} {:>7} {:>18} {:>18} {:>18}",
            "split", "total", "NO_EVIDENCE", "SUPPORT", "CONTRADICT"
        )?;
        for (name, c) in [
            ("all", &self.global),
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            write!(f, "{name:<11} {:>7}", c.total())?;
            for l in REPORT_ORDER {
                write!(f, " {:>8} ({:>6.2}%)", c.get(l), c.percent(l))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Split sizes for `n` examples: 10% validation and 10% test (rounded half
/// up), the rest training.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let tenth = (n + 5) / 10;
    let tenth = tenth.min(n / 2);
    [n - 2 * tenth, tenth, tenth]
}

/// Integer allocation `alloc[label][split]` whose rows sum to the label
/// counts and columns to the split sizes, with every cell equal to the floor
/// or ceiling of its proportional quota `count · size / n`.
fn allocate(label_counts: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let n: usize = label_counts.iter().sum();
    let (rows, cols) = (label_counts.len(), sizes.len());
    if n == 0 {
        return vec![vec![0; cols]; rows];
    }
    let mut alloc = vec![vec![0; cols]; rows];
    let mut rem = vec![vec![0; cols]; rows];
    for l in 0..rows {
        for s in 0..cols {
            let q = label_counts[l] * sizes[s];
            alloc[l][s] = q / n;
            rem[l][s] = q % n;
        }
    }
    let mut row_need: Vec<usize> = (0..rows).map(|l| label_counts[l] - alloc[l].iter().sum::<usize>()).collect();
    let mut col_need: Vec<usize> = (0..cols)
        .map(|s| sizes[s] - (0..rows).map(|l| alloc[l][s]).sum::<usize>())
        .collect();

    // Bipartite b-matching by augmenting paths: rows -> candidate cells
    // (fractional remainder) -> columns. A feasible rounding always exists.
    let mut bumped = vec![vec![false; cols]; rows];
    loop {
        let Some(src) = (0..rows).find(|&l| row_need[l] > 0) else {
            break;
        };
        // BFS over the residual graph from row `src` to any column with spare need.
        let mut prev_row_of_col: Vec<Option<usize>> = vec![None; cols];
        let mut prev_col_of_row: Vec<Option<usize>> = vec![None; rows];
        let mut row_seen = vec![false; rows];
        row_seen[src] = true;
        let mut queue = std::collections::VecDeque::from([src]);
        let mut target = None;
        'bfs: while let Some(l) = queue.pop_front() {
            let mut order: Vec<usize> = (0..cols).collect();
            order.sort_by(|&a, &b| rem[l][b].cmp(&rem[l][a]).then(a.cmp(&b)));
            for s in order {
                if rem[l][s] == 0 || bumped[l][s] || prev_row_of_col[s].is_some() {
                    continue;
                }
                prev_row_of_col[s] = Some(l);
                if col_need[s] > 0 {
                    target = Some(s);
                    break 'bfs;
                }
                // Walk back along a bumped cell to another row.
                for l2 in 0..rows {
                    if bumped[l2][s] && !row_seen[l2] {
                        row_seen[l2] = true;
                        prev_col_of_row[l2] = Some(s);
                        queue.push_back(l2);
                    }
                }
            }
        }
        let Some(mut s) = target else {
            unreachable!("proportional rounding is always feasible");
        };
        col_need[s] -= 1;
        loop {
            let l = prev_row_of_col[s].expect("path");
            bumped[l][s] = true;
            match prev_col_of_row[l] {
                Some(prev_s) => {
                    bumped[l][prev_s] = false;
                    s = prev_s;
                }
                None => {
                    row_need[l] -= 1;
                    break;
                }
            }
        }
    }
    for l in 0..rows {
        for s in 0..cols {
            if bumped[l][s] {
                alloc[l][s] += 1;
            }
        }
    }
    alloc
}

/// Seeded, label-stratified 80/10/10 split. The three parts partition the
/// input; each keeps the input order.
pub fn split_and_report(examples: &[NliExample], seed: u64) -> (DatasetSplit, SplitReport) {
    let sizes = split_sizes(examples.len());
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, e) in examples.iter().enumerate() {
        let slot = NliClass::ALL.iter().position(|&l| l == e.label).expect("known label");
        by_label[slot].push(i);
    }
    let counts: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let alloc = allocate(&counts, &sizes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; examples.len()];
    for (l, idx) in by_label.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let mut it = idx.iter();
        for (split, &take) in alloc[l].iter().enumerate() {
            for &i in it.by_ref().take(take) {
                assignment[i] = split;
            }
        }
    }
    let mut parts: [Vec<NliExample>; 3] = Default::default();
    for (e, &s) in examples.iter().zip(&assignment) {
        parts[s].push(e.clone());
    }
    let [train, validation, test] = parts;
    let report = SplitReport {
        seed,
        global: LabelCounts::of(examples),
        train: LabelCounts::of(&train),
        validation: LabelCounts::of(&validation),
        test: LabelCounts::of(&test),
    };
    (
        DatasetSplit {
            train,
            validation,
            test,
        },
        report,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliMetrics {
    /// `confusion[gold][predicted]`, indexed in [`NliClass::ALL`] order.
    pub confusion: [[usize; 3]; 3],
    pub per_label: BTreeMap<NliClass, LabelMetrics>,
    /// Support-weighted averages.
    pub weighted: LabelMetrics,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics from `(gold, predicted)` pairs.
pub fn metrics_from_pairs(pairs: &[(NliClass, NliClass)]) -> NliMetrics {
    let pos = |c: NliClass| NliClass::ALL.iter().position(|&x| x == c).expect("known label");
    let mut confusion = [[0usize; 3]; 3];
    for &(g, p) in pairs {
        confusion[pos(g)][pos(p)] += 1;
    }
    let total = pairs.len();
    let mut per_label = BTreeMap::new();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for (i, &label) in NliClass::ALL.iter().enumerate() {
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let m = LabelMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        };
        let w = ratio(support, total);
        wp += w * m.precision;
        wr += w * m.recall;
        wf += w * m.f1;
        per_label.insert(label, m);
    }
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    NliMetrics {
        confusion,
        per_label,
        weighted: LabelMetrics {
            precision: wp,
            recall: wr,
            f1: wf,
            support: total,
        },
        accuracy: ratio(correct, total),
    }
}

/// Runs `backend` over `test` and scores its predictions.
pub fn evaluate_nli(backend: &dyn NliClassifier, test: &[NliExample]) -> Result<NliMetrics, BackendError> {
    let pairs = test
        .iter()
        .map(|e| {
            backend
                .classify(&e.claim, &e.evidence_doc.title, &e.evidence_doc.abstract_text)
                .map(|p| (e.label, p.value))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(metrics_from_pairs(&pairs))
}

impl fmt::Display for NliMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            "label", "precision", "recall", "f1", "support"
        )?;
        for l in REPORT_ORDER {
            let m = &self.per_label[&l];
            writeln!(
                f,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                l.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            )?;
        }
        let w = &self.weighted;
        writeln!(
            f,
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "weighted", w.precision, w.recall, w.f1, w.support
        )?;
        writeln!(f, "accuracy {:.4}", self.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::NliLabel;
    use proptest::prelude::*;

    fn doc(id: &str) -> EvidenceDoc {
        EvidenceDoc {
            doc_id: id.into(),
            title: format!("title {id}"),
            abstract_text: format!("abstract {id}"),
        }
    }

    fn entry(claim: &str, label: NliClass, ids: &[&str]) -> RawClaimEntry {
        RawClaimEntry {
            claim: claim.into(),
            label,
            docs: ids.iter().map(|i| doc(i)).collect(),
        }
    }

    fn example(i: usize, label: NliClass) -> NliExample {
        NliExample {
            claim: format!("claim {i}"),
            evidence_doc: doc(&i.to_string()),
            label,
        }
    }

    #[test]
    fn multi_citation_no_evidence_splits() {
        let (out, report) = clean(&[entry("c", NliClass::NoEvidence, &["1", "2", "3"])]);
        assert_eq!(out.len(), 3);
        assert_eq!(report.output_examples, 3);
        assert!(out.iter().all(|e| e.label == NliClass::NoEvidence));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let (out, report) = clean(&[
            entry("Same  claim", NliClass::Support, &["1"]),
            entry("Same claim", NliClass::Support, &["1"]),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(report.duplicates_removed, 1);
    }

    #[test]
    fn zero_citations_are_dropped_and_counted() {
        let (out, report) = clean(&[entry("c", NliClass::Support, &[])]);
        assert!(out.is_empty());
        assert_eq!(report.dropped_no_citation, 1);
    }

    #[test]
    fn sizes_for_hundred() {
        assert_eq!(split_sizes(100), [80, 10, 10]);
        assert_eq!(split_sizes(0), [0, 0, 0]);
        assert_eq!(split_sizes(1), [1, 0, 0]);
        assert_eq!(split_sizes(15), [11, 2, 2]);
    }

    #[test]
    fn split_is_seeded() {
        let ex: Vec<_> = (0..50)
            .map(|i| example(i, NliClass::ALL[i % 3]))
            .collect();
        let (a, _) = split_and_report(&ex, 7);
        let (b, _) = split_and_report(&ex, 7);
        let (c, _) = split_and_report(&ex, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn majority_backend_metrics() {
        struct Always(NliClass);
        impl NliClassifier for Always {
            fn classify(&self, _: &str, _: &str, _: &str) -> Result<NliLabel, BackendError> {
                Ok(NliLabel::certain(self.0))
            }
            fn describe(&self) -> String {
                "always".into()
            }
        }
        let test: Vec<_> = [NliClass::Support, NliClass::Support, NliClass::Contradict, NliClass::NoEvidence]
            .iter()
            .enumerate()
            .map(|(i, &l)| example(i, l))
            .collect();
        let m = evaluate_nli(&Always(NliClass::Support), &test).unwrap();
        assert_eq!(m.per_label[&NliClass::Support].recall, 1.0);
        assert_eq!(m.per_label[&NliClass::Contradict].recall, 0.0);
        assert_eq!(m.per_label[&NliClass::NoEvidence].recall, 0.0);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let pairs: Vec<_> = NliClass::ALL.iter().flat_map(|&l| [(l, l), (l, l)]).collect();
        let m = metrics_from_pairs(&pairs);
        for lm in m.per_label.values() {
            assert_eq!((lm.precision, lm.recall, lm.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(m.weighted.f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn scifact_native_format() {
        let corpus = r#"{"doc_id": 1, "title": "T1", "abstract": ["S one.", "S two."], "structured": false}
{"doc_id": 2, "title": "T2", "abstract": ["Other."], "structured": false}
{"doc_id": 3, "title": "T3", "abstract": ["Third."], "structured": false}"#;
        let claims = r#"{"id": 5, "claim": "A", "evidence": {"1": [{"sentences": [0], "label": "SUPPORT"}]}, "cited_doc_ids": [1]}
{"id": 6, "claim": "B", "evidence": {}, "cited_doc_ids": [2, 3]}
{"id": 7, "claim": "C", "evidence": {"3": [{"sentences": [0], "label": "CONTRADICT"}], "1": [{"sentences": [1], "label": "SUPPORT"}]}, "cited_doc_ids": [1, 3]}"#;
        let raw = from_scifact(claims.as_bytes(), corpus.as_bytes()).unwrap();
        assert_eq!(raw.len(), 4);
        assert_eq!(raw[0].docs[0].abstract_text, "S one. S two.");
        assert_eq!(raw[1].label, NliClass::NoEvidence);
        assert_eq!(raw[1].docs.len(), 2);
        let (clean_out, _) = clean(&raw);
        assert_eq!(clean_out.len(), 5);
        let bad = r#"{"id": 8, "claim": "D", "cited_doc_ids": [1]}"#;
        assert!(from_scifact(bad.as_bytes(), corpus.as_bytes()).is_err());
    }

    fn label_strategy() -> impl Strategy<Value = NliClass> {
        prop_oneof![
            Just(NliClass::Support),
            Just(NliClass::Contradict),
            Just(NliClass::NoEvidence)
        ]
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(entries in proptest::collection::vec(
            ("[ab ]{1,4}", label_strategy(), proptest::collection::vec("[0-3]", 0..4)), 0..20)) {
            let raw: Vec<RawClaimEntry> = entries.iter().map(|(c, l, ids)| {
                let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
                entry(c, *l, &ids)
            }).collect();
            let (once, _) = clean(&raw);
            let again: Vec<RawClaimEntry> = once.iter().cloned().map(Into::into).collect();
            let (twice, report) = clean(&again);
            prop_assert_eq!(&twice, &once);
            prop_assert_eq!(report.duplicates_removed, 0);
        }

        #[test]
        fn split_partitions_with_stratified_ratios(labels in proptest::collection::vec(label_strategy(), 0..300), seed in any::<u64>()) {
            let ex: Vec<_> = labels.iter().enumerate().map(|(i, &l)| example(i, l)).collect();
            let (split, report) = split_and_report(&ex, seed);
            let n = ex.len();
            let sizes = split_sizes(n);
            prop_assert_eq!([split.train.len(), split.validation.len(), split.test.len()], sizes);
            let mut all: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).map(|e| e.claim.clone()).collect();
            all.sort();
            let mut expected: Vec<_> = ex.iter().map(|e| e.claim.clone()).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            for (part, size) in [(&report.train, sizes[0]), (&report.validation, sizes[1]), (&report.test, sizes[2])] {
                for l in NliClass::ALL {
                    let quota = report.global.get(l) as f64 * size as f64 / n.max(1) as f64;
                    prop_assert!((part.get(l) as f64 - quota).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn weighted_f1_between_label_extremes(pairs in proptest::collection::vec((label_strategy(), label_strategy()), 1..60)) {
            let m = metrics_from_pairs(&pairs);
            let f1s: Vec<f64> = m.per_label.values().map(|x| x.f1).collect();
            let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.weighted.f1 >= lo - 1e-12 && m.weighted.f1 <= hi + 1e-12);
        }
    }
}
