use std::io::BufReader;

use citeqa_core::backends::{BackendError, NliClass, NliClassifier, NliLabel};
use citeqa_core::scifact::{
    clean, evaluate_nli, metrics_from_pairs, split_and_report, EvidenceDoc, NliExample, RawClaimEntry,
};

fn raw_fixture() -> Vec<RawClaimEntry> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/scifact_raw_10.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn cleaning_fixture_counts() {
    let raw = raw_fixture();
    assert_eq!(raw.len(), 10);
    let (examples, report) = clean(&raw);
    // 1 + 0 + 0 + 1 + 3 + 0 + 0 + 2 + 1 + 1, counted entry by entry
    assert_eq!(examples.len(), 9);
    assert_eq!(report.dropped_no_citation, 1);
    assert_eq!(report.duplicates_removed, 4);
    assert_eq!(report.output_examples, 9);
    let no_evidence_statins = examples
        .iter()
        .filter(|e| e.claim == "Statins raise LDL." && e.label == NliClass::NoEvidence)
        .count();
    assert_eq!(no_evidence_statins, 3);
    assert_eq!(clean(&raw).0, examples);
}

fn example(i: usize, label: NliClass) -> NliExample {
    NliExample {
        claim: format!("claim {i}"),
        evidence_doc: EvidenceDoc {
            doc_id: format!("doc{i}"),
            title: "t".into(),
            abstract_text: label.as_str().into(),
        },
        label,
    }
}

#[test]
fn hundred_examples_split_80_10_10_with_stratification() {
    let labels = [(NliClass::NoEvidence, 36), (NliClass::Support, 42), (NliClass::Contradict, 22)];
    let mut all = Vec::new();
    for (label, n) in labels {
        for _ in 0..n {
            all.push(example(all.len(), label));
        }
    }
    let (split, report) = split_and_report(&all, 42);
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (80, 10, 10));
    for (subset, counts) in [(&split.train, report.train), (&split.validation, report.validation), (&split.test, report.test)] {
        for (label, n) in labels {
            let quota = n as f64 * subset.len() as f64 / 100.0;
            assert!((counts.get(label) as f64 - quota).abs() <= 1.0, "{label}: {} vs {quota}", counts.get(label));
        }
    }
    let mut union: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).cloned().collect();
    union.sort_by(|a, b| a.claim.cmp(&b.claim));
    let mut sorted = all.clone();
    sorted.sort_by(|a, b| a.claim.cmp(&b.claim));
    assert_eq!(union, sorted);
    assert_eq!(split_and_report(&all, 42).0, split);
    assert_ne!(split_and_report(&all, 7).0.test, split.test);
}

#[test]
fn nine_example_confusion_matrix() {
    use NliClass::*;
    let pairs = [
        (Support, Support),
        (Support, Support),
        (Support, Support),
        (Support, Contradict),
        (Contradict, Contradict),
        (Contradict, Contradict),
        (NoEvidence, NoEvidence),
        (NoEvidence, Support),
        (NoEvidence, Support),
    ];
    let m = metrics_from_pairs(&pairs);
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    // SUPPORT: tp 3, predicted 5, gold 4
    close(m.per_label[&Support].precision, 3.0 / 5.0);
    close(m.per_label[&Support].recall, 3.0 / 4.0);
    close(m.per_label[&Support].f1, 2.0 / 3.0);
    // CONTRADICT: tp 2, predicted 3, gold 2
    close(m.per_label[&Contradict].precision, 2.0 / 3.0);
    close(m.per_label[&Contradict].recall, 1.0);
    close(m.per_label[&Contradict].f1, 0.8);
    // NO_EVIDENCE: tp 1, predicted 1, gold 3
    close(m.per_label[&NoEvidence].precision, 1.0);
    close(m.per_label[&NoEvidence].recall, 1.0 / 3.0);
    close(m.per_label[&NoEvidence].f1, 0.5);
    close(m.weighted.precision, (4.0 * 0.6 + 2.0 * 2.0 / 3.0 + 3.0) / 9.0);
    close(m.weighted.recall, 6.0 / 9.0);
    close(m.weighted.f1, (4.0 * 2.0 / 3.0 + 2.0 * 0.8 + 3.0 * 0.5) / 9.0);
    close(m.accuracy, 6.0 / 9.0);
    assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 9);
}

struct Always(NliClass);

impl NliClassifier for Always {
    fn classify(&self, _: &str, _: &str, _: &str) -> Result<NliLabel, BackendError> {
        Ok(NliLabel::certain(self.0))
    }
    fn describe(&self) -> String {
        "always".into()
    }
}

struct Oracle;

impl NliClassifier for Oracle {
    fn classify(&self, _: &str, _: &str, abstract_text: &str) -> Result<NliLabel, BackendError> {
        Ok(NliLabel::certain(abstract_text.parse().unwrap()))
    }
    fn describe(&self) -> String {
        "oracle".into()
    }
}

#[test]
fn majority_and_perfect_backends() {
    let test: Vec<_> = [NliClass::Support, NliClass::Support, NliClass::Contradict, NliClass::NoEvidence]
        .into_iter()
        .enumerate()
        .map(|(i, l)| example(i, l))
        .collect();
    let m = evaluate_nli(&Always(NliClass::Support), &test).unwrap();
    assert_eq!(m.per_label[&NliClass::Support].recall, 1.0);
    assert_eq!(m.per_label[&NliClass::Contradict].recall, 0.0);
    assert_eq!(m.per_label[&NliClass::NoEvidence].recall, 0.0);

    let m = evaluate_nli(&Oracle, &test).unwrap();
    for l in NliClass::ALL {
        assert_eq!(m.per_label[&l].f1, 1.0);
    }
    assert_eq!((m.weighted.f1, m.accuracy), (1.0, 1.0));
}

#[test]
fn native_format_conversion() {
    let corpus = r#"{"doc_id": 11, "title": "Aspirin", "abstract": ["Aspirin lowers fever.", "It is cheap."]}
{"doc_id": 12, "title": "Statins", "abstract": ["Statins lower LDL."]}
"#;
    let claims = r#"{"id": 1, "claim": "Aspirin lowers fever.", "evidence": {"11": [{"sentences": [0], "label": "SUPPORT"}]}, "cited_doc_ids": [11]}
{"id": 2, "claim": "Statins raise LDL.", "evidence": {"12": [{"sentences": [0], "label": "CONTRADICT"}]}, "cited_doc_ids": [12]}
{"id": 3, "claim": "Coffee cures colds.", "evidence": {}, "cited_doc_ids": [11, 12]}
"#;
    let raw = citeqa_core::scifact::from_scifact(BufReader::new(claims.as_bytes()), BufReader::new(corpus.as_bytes())).unwrap();
    let (examples, _) = clean(&raw);
    let labels: Vec<NliClass> = examples.iter().map(|e| e.label).collect();
    assert_eq!(labels, [NliClass::Support, NliClass::Contradict, NliClass::NoEvidence, NliClass::NoEvidence]);
    assert_eq!(examples[0].evidence_doc.abstract_text, "Aspirin lowers fever. It is cheap.");
}
