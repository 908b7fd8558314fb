mod common;

use std::time::Instant;

use leveler_core::alignment;
use leveler_core::harness::{BankFilter, Candidate};
use leveler_core::metrics::RunReport;
use leveler_core::readability::Scorer;
use leveler_service::{AppState, ServiceConfig};
use serde_json::{json, Value};

use common::*;

fn fixture_text() -> String {
    "Honeybees spend most of the day visiting flowers. They carry pollen from one blossom to the next, \
     which lets plants form seeds. Farmers rely on them for apples, almonds and berries."
        .to_string()
}

#[test]
fn score_is_the_library_report_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = start_default(dir.path());
    let c = Client::new(&base);
    let r = c.post("/score", &json!({"text": fixture_text()}));
    assert_eq!(r.status, 200);
    let lib = Scorer::bundled().score(&fixture_text()).unwrap();
    assert_eq!(r.body, serde_json::to_string(&lib).unwrap());
}

#[test]
fn bad_requests_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = start_default(dir.path());
    let c = Client::new(&base);

    let r = c.post_raw("/score", "{not json");
    assert_eq!((r.status, r.code()), (400, "malformed_body".to_string()));
    let r = c.post("/score", &json!({"txt": "x"}));
    assert_eq!((r.status, r.code()), (400, "malformed_body".to_string()));
    let r = c.post("/score", &json!({"text": "   "}));
    assert_eq!((r.status, r.code()), (400, "unscorable".to_string()));
    let r = c.get("/bank?min_score=abc");
    assert_eq!((r.status, r.code()), (400, "malformed_query".to_string()));

    for path in ["/sessions/nope", "/runs/nope", "/runs/nope/report", "/runs/nope/scatter", "/pairs/0:0:0", "/bank/nope"] {
        let r = c.get(path);
        assert_eq!((r.status, r.code()), (404, "not_found".to_string()), "{path}");
    }
    let r = c.post("/sessions", &json!({"pair_id": "99:1:2"}));
    assert_eq!(r.status, 404);
}

#[test]
fn align_is_the_library_map_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = start_default(dir.path());
    let c = Client::new(&base);
    let (a, b) = ("The cat slept. It was warm.", "The cat slept all day. It was warm. Then it woke.");
    let r = c.post("/align", &json!({"base": a, "candidate": b}));
    assert_eq!(r.status, 200);
    assert_eq!(r.body, serde_json::to_string(&alignment::align_texts(a, b)).unwrap());
}

#[test]
fn session_edit_lock_merge_undo() {
    let dir = tempfile::tempdir().unwrap();
    let (base, state) = start_default(dir.path());
    let c = Client::new(&base);
    let pair = state.workbench().corpus.test[0].clone();

    let r = c.post("/sessions", &json!({"pair_id": pair.pair_id}));
    assert_eq!(r.status, 201);
    let s = r.json();
    let id = s["session_id"].as_str().unwrap().to_string();
    assert_eq!(s["text"], pair.source_text);
    assert_eq!(s["target_score"], pair.target_score);
    assert_eq!(s["undo_depth"], 0);

    let text = "The dog ran home. It was late. Mother waited at the door.";
    let r = c.put(&format!("/sessions/{id}/text"), &json!({"text": text}));
    assert_eq!(r.status, 200);
    let lib = Scorer::bundled().score(text).unwrap();
    assert_eq!(r.json()["report"], serde_json::to_value(&lib).unwrap());

    let r = c.post(&format!("/sessions/{id}/locks"), &json!({"spans": [{"start": 18, "end": 30, "reason": "fact"}]}));
    assert_eq!(r.status, 200);
    let r = c.post(&format!("/sessions/{id}/locks"), &json!({"spans": [{"start": 5, "end": 500}]}));
    assert_eq!((r.status, r.code()), (400, "invalid_lock".to_string()));

    let candidate = "The dog ran home. It was very late at night. Mother waited at the door.";
    let map = c.post("/align", &json!({"base": text, "candidate": candidate})).json();
    let link = map["links"]
        .as_array()
        .unwrap()
        .iter()
        .position(|l| l["source"] == json!([1]))
        .unwrap();
    let before = c.get(&format!("/sessions/{id}")).body;
    let r = c.post(
        &format!("/sessions/{id}/merge"),
        &json!({"candidate_text": candidate, "replacements": [{"link": link, "side": "candidate"}]}),
    );
    assert_eq!((r.status, r.code()), (409, "lock_violation".to_string()));
    assert_eq!(c.get(&format!("/sessions/{id}")).body, before);

    let r = c.put(&format!("/sessions/{id}/text"), &json!({"text": "Something else entirely."}));
    assert_eq!((r.status, r.code()), (409, "lock_violation".to_string()));
    assert_eq!(c.get(&format!("/sessions/{id}")).body, before);

    c.post(&format!("/sessions/{id}/locks"), &json!({"spans": []}));
    let r = c.post(
        &format!("/sessions/{id}/merge"),
        &json!({
            "candidate_text": candidate,
            "replacements": [{"link": link, "side": "candidate"}],
            "similarity_matrix_digest": "stale",
        }),
    );
    assert_eq!((r.status, r.code()), (409, "stale_alignment".to_string()));
    let r = c.post(
        &format!("/sessions/{id}/merge"),
        &json!({
            "candidate_text": candidate,
            "replacements": [{"link": link, "side": "candidate"}],
            "similarity_matrix_digest": map["similarity_matrix_digest"],
        }),
    );
    assert_eq!(r.status, 200);
    let merged = r.json();
    assert_eq!(merged["session"]["text"], candidate);
    assert_eq!(
        merged["session"]["report"],
        serde_json::to_value(Scorer::bundled().score(candidate).unwrap()).unwrap()
    );

    let depth = merged["session"]["undo_depth"].as_u64().unwrap();
    assert_eq!(depth, 4);
    for _ in 0..depth {
        assert_eq!(c.post(&format!("/sessions/{id}/undo"), &json!({})).status, 200);
    }
    let s = c.get(&format!("/sessions/{id}")).json();
    assert_eq!(s["text"], pair.source_text);
    assert_eq!(s["locks"], json!([]));
    let r = c.post(&format!("/sessions/{id}/undo"), &json!({}));
    assert_eq!((r.status, r.code()), (409, "nothing_to_undo".to_string()));
}

#[test]
fn sessions_are_isolated_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let (base, state) = start_default(dir.path());
    let pair_id = state.workbench().corpus.test[0].pair_id.clone();
    let ids: Vec<String> = (0..4)
        .map(|_| {
            Client::new(&base).post("/sessions", &json!({"pair_id": pair_id})).json()["session_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    std::thread::scope(|scope| {
        for (n, id) in ids.iter().enumerate() {
            let base = base.clone();
            scope.spawn(move || {
                let c = Client::new(&base);
                for step in 0..15 {
                    let r = c.put(&format!("/sessions/{id}/text"), &json!({"text": format!("Session {n} step {step}.")}));
                    assert_eq!(r.status, 200);
                }
            });
        }
    });
    let c = Client::new(&base);
    for (n, id) in ids.iter().enumerate() {
        let s = c.get(&format!("/sessions/{id}")).json();
        assert_eq!(s["text"], format!("Session {n} step 14."));
        assert_eq!(s["undo_depth"], 15);
        assert_eq!(s["revision"], 15);
    }
}

#[test]
fn generate_fills_the_bank_and_patches_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let (base, state) = start_default(dir.path());
    let c = Client::new(&base);
    let pair = state.workbench().corpus.test[0].clone();

    let r = c.post(
        "/generate",
        &json!({"pair_id": pair.pair_id, "providers": ["oracle", "echo"], "method": "zero-shot", "k": 2}),
    );
    assert_eq!(r.status, 202, "{}", r.body);
    let run_id = r.json()["run_id"].as_str().unwrap().to_string();
    let status = c.wait_for_run(&run_id);
    assert_eq!(status["state"], "done");
    assert_eq!(status["embeddings"], "done");
    assert_eq!(status["candidate_ids"].as_array().unwrap().len(), 4);

    let r = c.get(&format!("/bank?pair_id={}", pair.pair_id));
    assert_eq!(r.status, 200);
    let got: Vec<Candidate> = serde_json::from_str(&r.body).unwrap();
    let lib = leveler_core::harness::bank_query(&state.workbench().bank, &BankFilter::for_pair(&pair.pair_id));
    assert_eq!(got, lib);
    assert_eq!(got.len(), 4);
    assert_eq!(got[0].provider, "oracle");
    assert_eq!(got[0].output_text, pair.target_text);
    assert!(got.windows(2).all(|w| w[0].distance_to_target() <= w[1].distance_to_target()));
    for cand in &got {
        let bert = cand.evaluation.bert_like.as_ref().expect("patched");
        assert!((0.0..=1.0 + 1e-12).contains(&bert.f1));
        assert!(cand.evaluation.semantic_similarity.is_some());
    }

    let echo_score = Scorer::bundled().score(&pair.source_text).unwrap().score;
    let r = c.get(&format!(
        "/bank?pair_id={}&provider=echo&method=zero-shot&min_score={}&max_score={}",
        pair.pair_id,
        echo_score - 1.0,
        echo_score + 1.0
    ));
    let echo: Vec<Candidate> = serde_json::from_str(&r.body).unwrap();
    assert_eq!(echo.len(), 2);
    assert!(echo.iter().all(|c| c.provider == "echo"));
    let one = c.get(&format!("/bank/{}", echo[0].candidate_id));
    assert_eq!(serde_json::from_str::<Candidate>(&one.body).unwrap(), echo[0]);

    let r = c.get(&format!("/runs/{run_id}/report"));
    assert_eq!(r.status, 200);
    let reports: Vec<RunReport> = serde_json::from_str(&r.body).unwrap();
    assert_eq!(reports, state.workbench().runs.load(&run_id).unwrap().reports());
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.support == 1 && r.failures == 0));

    let r = c.get(&format!("/runs/{run_id}/scatter"));
    assert_eq!(r.status, 200);
    assert!(r.headers["content-type"].to_str().unwrap().starts_with("text/csv"));
    let lines: Vec<&str> = r.body.lines().collect();
    assert_eq!(lines[0], leveler_core::harness::SCATTER_COLUMNS.join(","));
    assert_eq!(lines.len(), 3);

    assert!(c.get("/runs").json().as_array().unwrap().contains(&Value::from(run_id)));
}

#[test]
fn generate_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (base, state) = start_default(dir.path());
    let c = Client::new(&base);
    let test_pair = state.workbench().corpus.test[0].pair_id.clone();
    let train_pair = state.workbench().corpus.train[0].pair_id.clone();

    let cases = [
        (json!({"pair_id": train_pair, "providers": ["oracle"], "method": "zero-shot"}), 400, "train_pair"),
        (json!({"pair_id": test_pair, "providers": ["nobody"], "method": "zero-shot"}), 400, "unknown_provider"),
        (json!({"pair_id": test_pair, "providers": [], "method": "zero-shot"}), 400, "invalid_request"),
        (json!({"pair_id": test_pair, "providers": ["oracle"], "method": "zero-shot", "k": 0}), 400, "invalid_request"),
        (json!({"pair_id": test_pair, "providers": ["oracle"], "method": "seven_shot"}), 400, "malformed_body"),
        (json!({"pair_id": "1:1:1", "providers": ["oracle"], "method": "zero-shot"}), 404, "not_found"),
    ];
    for (body, status, code) in cases {
        let r = c.post("/generate", &body);
        assert_eq!((r.status, r.code().as_str()), (status, code), "{body}");
    }
}

#[test]
fn sessions_survive_a_snapshot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("sessions.jsonl");
    let config = ServiceConfig {
        snapshot_path: Some(snap.clone()),
        ..Default::default()
    };
    let state = AppState::new(workbench(dir.path()), config.clone());
    let base = start(state.clone());
    let c = Client::new(&base);
    let pair_id = state.workbench().corpus.valid[0].pair_id.clone();
    let id = c.post("/sessions", &json!({"pair_id": pair_id})).json()["session_id"].as_str().unwrap().to_string();
    c.put(&format!("/sessions/{id}/text"), &json!({"text": "A new draft. It is short."}));
    c.post(&format!("/sessions/{id}/locks"), &json!({"spans": [{"start": 0, "end": 12}]}));
    let before = c.get(&format!("/sessions/{id}")).body;

    assert_eq!(state.snapshot_if_dirty().unwrap(), Some(1));
    assert_eq!(state.snapshot_if_dirty().unwrap(), None);

    let restored = AppState::new(workbench(dir.path()), config);
    let base2 = start(restored.clone());
    let c2 = Client::new(&base2);
    let deadline = Instant::now() + std::time::Duration::from_secs(10);
    while restored.session_count() == 0 {
        assert!(Instant::now() < deadline);
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    assert_eq!(c2.get(&format!("/sessions/{id}")).body, before);
    c2.post(&format!("/sessions/{id}/undo"), &json!({}));
    assert_eq!(c2.get(&format!("/sessions/{id}")).json()["text"], "A new draft. It is short.");
    assert_eq!(c2.get(&format!("/sessions/{id}")).json()["locks"], json!([]));
}

#[test]
fn cors_allows_the_configured_origin() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        cors_origin: Some("http://localhost:5173".into()),
        ..Default::default()
    };
    let base = start(AppState::new(workbench(dir.path()), config));
    let c = Client::new(&base);
    let r = c.options("/score", "http://localhost:5173");
    assert_eq!(r.headers["access-control-allow-origin"], "http://localhost:5173");
    let r = c.options("/score", "http://elsewhere.example");
    assert_eq!(r.headers["access-control-allow-origin"], "http://localhost:5173");
}

fn thousand_words() -> String {
    let words = [
        "river", "stone", "garden", "light", "teacher", "market", "ancient", "story", "water", "forest",
    ];
    let mut sentences = Vec::new();
    let mut n = 0;
    while n < 1000 {
        let len = 8 + sentences.len() % 9;
        let s: Vec<&str> = (0..len).map(|i| words[(n + i * 7) % words.len()]).collect();
        n += len;
        sentences.push(format!("The {}.", s.join(" ")));
    }
    sentences.join(" ")
}

#[test]
fn score_latency_p50_under_50ms_for_1000_words() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = start_default(dir.path());
    let c = Client::new(&base);
    let text = thousand_words();
    assert!(text.split_whitespace().count() >= 1000);
    let body = json!({"text": text});
    assert_eq!(c.post("/score", &body).status, 200);
    let mut times: Vec<f64> = (0..41)
        .map(|_| {
            let t = Instant::now();
            assert_eq!(c.post("/score", &body).status, 200);
            t.elapsed().as_secs_f64() * 1000.0
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p50 = times[times.len() / 2];
    assert!(p50 < 50.0, "p50 {p50:.2} ms");
}
