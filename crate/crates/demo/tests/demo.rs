use citeqa_demo::{windows, DemoEngine};

#[test]
fn windows_follow_stride_and_cover_text() {
    let text: Vec<String> = (0..25).map(|i| format!("t{i}")).collect();
    let w = windows(&text.join(" "), 10, 3).unwrap();
    let bounds: Vec<(usize, usize)> = w.iter().map(|w| (w.token_start, w.token_end)).collect();
    assert_eq!(bounds, [(0, 10), (7, 17), (14, 24), (21, 25)]);
    assert_eq!(w[0].overlap_with_previous, 0);
    assert!(w[1..3].iter().all(|w| w.overlap_with_previous == 3));
    assert_eq!(w[3].text, "t21 t22 t23 t24");
    assert!(windows("a b", 3, 3).is_err());
    assert!(windows("", 5, 1).unwrap().is_empty());
}

#[test]
fn slider_endpoints_follow_single_arms() {
    let mut demo = DemoEngine::new().unwrap();
    assert_eq!(demo.documents().len(), 20);
    let lex = demo.search("aspirin fever children", 1.0, 20).unwrap();
    assert!(lex.iter().all(|r| r.fused == r.lex_norm));
    let sem = demo.search("aspirin fever children", 0.0, 20).unwrap();
    assert!(sem.iter().all(|r| r.fused == r.sem_norm));
    assert!(demo.search("aspirin", 1.5, 5).is_err());
}

#[test]
fn draft_verifies_and_edits_are_flagged() {
    let demo = DemoEngine::new().unwrap();
    let q = "Does aspirin reduce fever in children?";
    let draft = demo.draft(q, 3).unwrap();
    let v = demo.verify(q, &draft, 3).unwrap();
    assert_eq!(v.bundle[0].doc_id, "PMID:1001");
    assert!(!v.claims.is_empty());

    let edited = "Aspirin does not reduce fever in children with viral infections [1]. Ibuprofen is blue [7].";
    let v = demo.verify(q, edited, 3).unwrap();
    let json = serde_json::to_value(&v).unwrap();
    assert_eq!(json["claims"][0]["aggregate"], "CONTRADICTED");
    assert_eq!(json["claims"][1]["aggregate"], "UNREFERENCED");
    assert_eq!(json["dangling"][0]["local_index"], 7);
}
