use std::collections::BTreeSet;

use leveler_core::alignment;
use serde_json::Value;

const DOCS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs");

#[test]
fn openapi_lists_every_route() {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(format!("{DOCS}/openapi.json")).unwrap()).unwrap();
    let paths: BTreeSet<&str> = doc["paths"].as_object().unwrap().keys().map(String::as_str).collect();
    let want: BTreeSet<&str> = [
        "/health",
        "/score",
        "/pairs",
        "/pairs/{id}",
        "/sessions",
        "/sessions/{id}",
        "/sessions/{id}/text",
        "/sessions/{id}/undo",
        "/sessions/{id}/locks",
        "/sessions/{id}/merge",
        "/bank",
        "/bank/{id}",
        "/align",
        "/generate",
        "/runs",
        "/runs/{id}",
        "/runs/{id}/report",
        "/runs/{id}/scatter",
    ]
    .into_iter()
    .collect();
    assert_eq!(paths, want);

    let schemas = doc["components"]["schemas"].as_object().unwrap();
    let text = doc.to_string();
    for (name, _) in schemas {
        assert!(text.contains(&format!("#/components/schemas/{name}")), "{name} is never referenced");
    }
}

#[test]
fn alignment_doc_example_is_current() {
    let md = std::fs::read_to_string(format!("{DOCS}/alignment-map.md")).unwrap();
    let start = md.find("```json").unwrap() + 7;
    let end = start + md[start..].find("```").unwrap();
    let example: Value = serde_json::from_str(&md[start..end]).unwrap();
    let got = alignment::align_texts(
        "The fox ran. It jumped over the log and kept going.",
        "The fox ran. It jumped over the log. It kept going. The moon was bright.",
    );
    assert_eq!(serde_json::to_value(got).unwrap(), example);
}
