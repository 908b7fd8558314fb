use leveler_core::corpus::{ingest, permute_pairs, SEED_CORPUS};
use leveler_core::readability::Scorer;

#[test]
fn seed_corpus_ingests_cleanly() {
    let out = ingest(SEED_CORPUS.as_bytes(), &Scorer::bundled()).unwrap();
    assert_eq!(out.report.records, 30);
    assert_eq!(out.report.articles, 30);
    assert_eq!(out.report.sets, 10);
    assert!(out.report.skipped.is_empty());
    assert_eq!(permute_pairs(&out.articles).len(), 10 * 3 * 2);
}

// Recomputed outside this crate from the committed frequency table and
// model file: 8 sentences, 53 tokens, msl 6.625, mlwf -2.567955267598071.
#[test]
fn first_seed_document_score_is_frozen() {
    let first = SEED_CORPUS.lines().next().unwrap();
    let rec: serde_json::Value = serde_json::from_str(first).unwrap();
    let r = Scorer::bundled().score(rec["text"].as_str().unwrap()).unwrap();
    assert_eq!((r.sentence_count, r.token_count), (8, 53));
    assert!((r.msl - 6.625).abs() < 1e-12);
    assert!((r.mlwf - -2.567955267598071).abs() < 1e-12);
    assert!((r.score - 489.4453073897787).abs() < 1e-9);
}
