use std::sync::atomic::{AtomicUsize, Ordering};

use citeqa_core::backends::reference::ReferenceEmbedder;
use citeqa_core::backends::{BackendError, NliClass, NliClassifier, NliLabel};
use citeqa_core::claims::{parse_text, Claim};
use citeqa_core::corpus::{Corpus, DocumentRecord};
use citeqa_core::prompt::{bundle_from_ids, GeneratedAnswer, PromptTemplate};
use citeqa_core::verify::{
    aggregate, most_similar_sentences, verify_answer, verify_claim, VerdictAggregate, VerifyOptions,
};

/// Returns the label named by the abstract and counts calls.
#[derive(Default)]
struct Scripted {
    calls: AtomicUsize,
}

impl NliClassifier for Scripted {
    fn classify(&self, _claim: &str, _title: &str, abstract_text: &str) -> Result<NliLabel, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if abstract_text == "FAIL" {
            return Err(BackendError::Transport { endpoint: "scripted".into(), message: "scripted failure".into() });
        }
        Ok(NliLabel::certain(abstract_text.parse().unwrap()))
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

fn label_corpus() -> Corpus {
    let mut docs = Vec::new();
    for label in NliClass::ALL {
        for i in 0..3 {
            docs.push(DocumentRecord::new(format!("{label}-{i}"), "t", label.as_str()));
        }
    }
    docs.push(DocumentRecord::new("broken", "t", "FAIL"));
    Corpus::new(docs).unwrap()
}

fn claim_citing(refs: Vec<String>) -> Claim {
    Claim {
        claim_id: 0,
        text: "Some claim.".into(),
        refs,
        citations: Vec::new(),
        char_span: (0, 11),
    }
}

fn expected(labels: &[NliClass]) -> VerdictAggregate {
    let count = |l| labels.iter().filter(|&&x| x == l).count();
    match (labels.len(), count(NliClass::Contradict), count(NliClass::Support)) {
        (0, _, _) => VerdictAggregate::Unreferenced,
        (_, c, _) if c > 0 => VerdictAggregate::Contradicted,
        (_, _, s) if s > 0 => VerdictAggregate::Supported,
        _ => VerdictAggregate::Unsupported,
    }
}

fn multisets(max: usize) -> Vec<Vec<NliClass>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for m in &frontier {
            let last = m.last().map_or(0, |l| NliClass::ALL.iter().position(|x| x == l).unwrap());
            for l in &NliClass::ALL[last..] {
                let mut m2: Vec<NliClass> = m.clone();
                m2.push(*l);
                next.push(m2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn truth_table_and_call_count() {
    let sets = multisets(3);
    assert_eq!(sets.len(), 1 + 3 + 6 + 10);
    let corpus = label_corpus();
    let embedder = ReferenceEmbedder::default();
    for labels in sets {
        assert_eq!(aggregate(&labels), expected(&labels), "{labels:?}");
        let mut used = [0usize; 3];
        let refs: Vec<String> = labels
            .iter()
            .map(|l| {
                let i = NliClass::ALL.iter().position(|x| x == l).unwrap();
                used[i] += 1;
                format!("{l}-{}", used[i] - 1)
            })
            .collect();
        let nli = Scripted::default();
        let v = verify_claim(&claim_citing(refs.clone()), &corpus, &nli, &embedder, VerifyOptions::default());
        assert_eq!(v.aggregate, expected(&labels), "{labels:?}");
        assert_eq!(nli.calls.load(Ordering::SeqCst), refs.len());
        let got: Vec<&str> = v.per_ref.iter().map(|r| r.doc_id.as_str()).collect();
        assert_eq!(got, refs);
    }
}

#[test]
fn adding_labels_is_monotone() {
    for labels in multisets(3) {
        let before = aggregate(&labels);
        let mut with_support = labels.clone();
        with_support.push(NliClass::Support);
        if before == VerdictAggregate::Supported {
            assert_eq!(aggregate(&with_support), VerdictAggregate::Supported);
        }
        let mut with_contra = labels.clone();
        with_contra.push(NliClass::Contradict);
        assert_eq!(aggregate(&with_contra), VerdictAggregate::Contradicted);
    }
}

#[test]
fn backend_error_is_recorded_as_no_evidence() {
    let nli = Scripted::default();
    let v = verify_claim(
        &claim_citing(vec!["broken".into(), "SUPPORT-0".into()]),
        &label_corpus(),
        &nli,
        &ReferenceEmbedder::default(),
        VerifyOptions::default(),
    );
    assert_eq!(v.per_ref[0].label.value, NliClass::NoEvidence);
    assert!(v.per_ref[0].error.as_deref().unwrap().contains("scripted failure"));
    assert_eq!(v.aggregate, VerdictAggregate::Supported);
}

#[test]
fn answer_calls_equal_total_refs() {
    let corpus = label_corpus();
    let bundle = bundle_from_ids(
        PromptTemplate::Serving,
        "q",
        &["SUPPORT-0", "CONTRADICT-0", "NO_EVIDENCE-0"],
        &corpus,
    )
    .unwrap();
    let answer = GeneratedAnswer {
        text: "First [1][2]. Second [3] and [1]. Third. Fourth [9].".into(),
        bundle,
        truncated: false,
    };
    let nli = Scripted::default();
    let (parsed, verdicts) = verify_answer(&answer, &corpus, &nli, &ReferenceEmbedder::default(), VerifyOptions::default());
    let total: usize = parsed.claims.iter().map(|c| c.refs.len()).sum();
    assert_eq!(total, 4);
    assert_eq!(nli.calls.load(Ordering::SeqCst), total);
    let aggregates: Vec<_> = verdicts.iter().map(|v| v.aggregate).collect();
    assert_eq!(
        aggregates,
        [
            VerdictAggregate::Contradicted,
            VerdictAggregate::Supported,
            VerdictAggregate::Unreferenced,
            VerdictAggregate::Unreferenced
        ]
    );
    assert_eq!(parsed.dangling.len(), 1);
    assert!(verdicts.iter().enumerate().all(|(i, v)| v.claim_id == i));
    assert_eq!(parse_text(&answer.text, &answer.bundle), parsed);
}

#[test]
fn evidence_ranking_matches_pairwise_scoring() {
    let doc = DocumentRecord::new(
        "d",
        "t",
        "Insulin lowers glucose in adults. Glucose rose after meals in children. Sleep was unchanged.",
    );
    let e = ReferenceEmbedder::default();
    let claim = "Insulin lowers glucose in children.";
    let ranked = most_similar_sentences(claim, &doc, 10, &e).unwrap();

    use citeqa_core::backends::Embedder;
    let q = e.embed(claim).unwrap();
    let mut oracle: Vec<(f64, usize)> = citeqa_core::text::sentences(&doc.abstract_text)
        .iter()
        .enumerate()
        .map(|(i, s)| (q.dot(e.embed(s).unwrap().values()), i))
        .collect();
    oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let got: Vec<usize> = ranked.iter().map(|s| s.index).collect();
    let want: Vec<usize> = oracle.iter().map(|o| o.1).collect();
    assert_eq!(got, want);
    assert_eq!(ranked.len(), 3);
}
