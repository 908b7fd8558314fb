mod common;

use std::collections::HashMap;

use leveler_core::readability::{calibrate, ScorerModel};
use leveler_core::rng::SplitMix64;
use leveler_core::textproc::build_frequency_table;

use common::*;

type Fixture = (Vec<String>, Vec<Vec<Vec<String>>>, HashMap<String, u64>, u64);

/// Random texts with their word lists, plus the frequency counts of the
/// whole collection.
fn fixture(seed: u64, n: usize) -> Fixture {
    let mut rng = SplitMix64::new(seed);
    let mut texts = Vec::new();
    let mut words = Vec::new();
    for _ in 0..n {
        let sentences = 1 + rng.next_below(5) as usize;
        let mut t = Vec::new();
        let mut w = Vec::new();
        for _ in 0..sentences {
            let len = 1 + rng.next_below(15) as usize;
            let (s, ws) = sentence(&mut rng, len, &VOCAB);
            t.push(s);
            w.push(ws);
        }
        texts.push(join_sentences(&t));
        words.push(w);
    }
    let mut counts = HashMap::new();
    let mut total = 0;
    for w in words.iter().flatten().flatten() {
        *counts.entry(w.clone()).or_insert(0) += 1;
        total += 1;
    }
    (texts, words, counts, total)
}

#[test]
fn recovers_known_coefficients() {
    let (texts, words, counts, total) = fixture(3, 60);
    let freq = build_frequency_table(&texts, 0.5).unwrap();
    let truth = (650.0, 180.0, 900.0);
    let labeled: Vec<(String, f64)> = texts
        .iter()
        .zip(&words)
        .map(|(t, w)| {
            let (msl, mlwf) = oracle_features(w, &counts, total);
            (t.clone(), truth.0 * msl.log10() + truth.1 * mlwf + truth.2)
        })
        .collect();
    let cal = calibrate(&labeled, &freq).unwrap();
    let m = &cal.model;
    for (got, want) in [(m.alpha, truth.0), (m.beta, truth.1), (m.gamma, truth.2)] {
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!(cal.rmse < 1e-6);
    assert!((cal.r2 - 1.0).abs() < 1e-9);
}

#[test]
fn noisy_fit_matches_normal_equations() {
    let (texts, words, counts, total) = fixture(4, 40);
    let freq = build_frequency_table(&texts, 0.5).unwrap();
    let mut rng = SplitMix64::new(99);
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let labeled: Vec<(String, f64)> = texts
        .iter()
        .zip(&words)
        .map(|(t, w)| {
            let (msl, mlwf) = oracle_features(w, &counts, total);
            let noise = rng.next_below(201) as f64 - 100.0;
            let y = 500.0 * msl.log10() + 120.0 * mlwf + 800.0 + noise;
            rows.push([msl.log10(), mlwf, 1.0]);
            ys.push(y);
            (t.clone(), y)
        })
        .collect();
    let want = oracle_least_squares(&rows, &ys);
    let m = calibrate(&labeled, &freq).unwrap().model;
    for (got, want) in [m.alpha, m.beta, m.gamma].into_iter().zip(want) {
        assert!(((got - want) / want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn model_text_round_trips() {
    let mut m = ScorerModel::new(813.25, -399.5, -1203.125);
    m.freq_table = "abc".into();
    m.fit_rmse = Some(70.5);
    let parsed: ScorerModel = m.to_string().parse().unwrap();
    assert_eq!(parsed, m);
}
