//! Evaluation metrics.
//!
//! Score targeting: absolute error, match within ±50 points, and whether the
//! score moved in the intended direction. Content preservation against the
//! source text: greedy token-matching similarity over embeddings
//! (BERTScore-style, no IDF weighting), whole-text cosine similarity, and
//! token-level normalized edit distance (0 = identical).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LeveledPair;
use crate::prompting::PromptMethod;
use crate::providers::Embedder;
use crate::textproc;

/// Half-width of the match window, in score points.
pub const MATCH_WINDOW: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("unscorable: {0}")]
    Unscorable(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("empty run")]
    EmptyRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexileMetrics {
    pub abs_error: f64,
    pub is_match: bool,
    /// `None` when the intended score equals the source score.
    pub direction_ok: Option<bool>,
}

pub fn lexile_metrics(intended: f64, source: f64, resulting: f64) -> LexileMetrics {
    let abs_error = (resulting - intended).abs();
    let direction_ok = if intended == source {
        None
    } else {
        Some(sign(resulting - source) == sign(intended - source))
    };
    LexileMetrics {
        abs_error,
        is_match: abs_error <= MATCH_WINDOW,
        direction_ok,
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Levenshtein distance over arbitrary token sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token Levenshtein divided by the longer token count; 0 for two empty
/// token sequences.
pub fn normalized_token_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    normalized_token_distance(&textproc::word_tokens(a), &textproc::word_tokens(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertLike {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy matching of candidate tokens against reference tokens by
/// embedding cosine (clamped to `[0, 1]`).
pub fn bert_like_score(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<BertLike, MetricError> {
    let cand = textproc::word_tokens(candidate);
    let refs = textproc::word_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return Err(MetricError::Unscorable("empty text".into()));
    }
    let mut vocab: Vec<String> = cand.iter().chain(&refs).cloned().collect();
    vocab.sort();
    vocab.dedup();
    let vectors = embedder
        .embed(&vocab)
        .map_err(|e| MetricError::Embedding(e.to_string()))?;
    if vectors.len() != vocab.len() {
        return Err(MetricError::Embedding("embedding count mismatch".into()));
    }
    let lookup = |t: &String| &vectors[vocab.binary_search(t).expect("token is in vocabulary")];
    let sims: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| {
            let cv = lookup(c);
            refs.iter().map(|r| dot(cv, lookup(r)).clamp(0.0, 1.0)).collect()
        })
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..refs.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / refs.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BertLike { precision, recall, f1 })
}

/// Cosine between whole-text embeddings.
pub fn semantic_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, MetricError> {
    if candidate.trim().is_empty() || reference.trim().is_empty() {
        return Err(MetricError::Unscorable("empty text".into()));
    }
    let v = embedder
        .embed(&[candidate.to_string(), reference.to_string()])
        .map_err(|e| MetricError::Embedding(e.to_string()))?;
    if v.len() != 2 {
        return Err(MetricError::Embedding("embedding count mismatch".into()));
    }
    Ok(dot(&v[0], &v[1]).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Evaluated,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub pair_id: String,
    pub source_score: f64,
    pub intended_score: f64,
    pub resulting_score: Option<f64>,
    pub abs_error: Option<f64>,
    #[serde(rename = "match")]
    pub is_match: Option<bool>,
    pub direction_ok: Option<bool>,
    pub bert_like: Option<BertLike>,
    pub semantic_similarity: Option<f64>,
    pub normalized_edit_distance: Option<f64>,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PairEvaluation {
    /// A pair whose generation failed; excluded from Support.
    pub fn unsupported(pair: &LeveledPair, reason: impl Into<String>) -> Self {
        Self {
            pair_id: pair.pair_id.clone(),
            source_score: pair.source_score,
            intended_score: pair.target_score,
            resulting_score: None,
            abs_error: None,
            is_match: None,
            direction_ok: None,
            bert_like: None,
            semantic_similarity: None,
            normalized_edit_distance: None,
            status: EvalStatus::Unsupported,
            note: Some(reason.into()),
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.status == EvalStatus::Evaluated
    }
}

/// Score-only evaluation: targeting metrics and edit distance, no
/// embeddings. Cheap enough for interactive use.
pub fn evaluate_fast(pair: &LeveledPair, output: &str, resulting_score: f64) -> PairEvaluation {
    let lm = lexile_metrics(pair.target_score, pair.source_score, resulting_score);
    PairEvaluation {
        pair_id: pair.pair_id.clone(),
        source_score: pair.source_score,
        intended_score: pair.target_score,
        resulting_score: Some(resulting_score),
        abs_error: Some(lm.abs_error),
        is_match: Some(lm.is_match),
        direction_ok: lm.direction_ok,
        bert_like: None,
        semantic_similarity: None,
        normalized_edit_distance: Some(normalized_edit_distance(&pair.source_text, output)),
        status: EvalStatus::Evaluated,
        note: None,
    }
}

/// Embedding metrics for `output` against the pair's source text. Failures
/// leave the field absent.
pub fn embedding_metrics(
    pair: &LeveledPair,
    output: &str,
    embedder: &dyn Embedder,
) -> (Option<BertLike>, Option<f64>) {
    let bert = bert_like_score(output, &pair.source_text, embedder)
        .map_err(|e| tracing::warn!(pair_id = %pair.pair_id, error = %e, "bert-like score unavailable"))
        .ok();
    let sim = semantic_similarity(output, &pair.source_text, embedder)
        .map_err(|e| tracing::warn!(pair_id = %pair.pair_id, error = %e, "semantic similarity unavailable"))
        .ok();
    (bert, sim)
}

pub fn evaluate_pair(
    pair: &LeveledPair,
    output: &str,
    resulting_score: f64,
    embedder: &dyn Embedder,
) -> PairEvaluation {
    let mut ev = evaluate_fast(pair, output, resulting_score);
    let (bert, sim) = embedding_metrics(pair, output, embedder);
    ev.bert_like = bert;
    ev.semantic_similarity = sim;
    ev
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub provider: String,
    pub method: PromptMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: PromptMethod,
    pub provider: String,
    pub n_shots: usize,
    pub support: usize,
    pub failures: usize,
    pub degraded: bool,
    pub mae: Option<f64>,
    pub match_rate: Option<f64>,
    pub direction_rate: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub semantic_similarity: Option<f64>,
    pub normalized_edit_distance: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn rate(values: impl Iterator<Item = bool>) -> Option<f64> {
    mean(values.map(|b| if b { 1.0 } else { 0.0 }))
}

impl RunReport {
    /// A report with no evaluated pairs.
    pub fn empty(meta: &ReportMeta, failures: usize, degraded: bool) -> Self {
        Self {
            method: meta.method,
            provider: meta.provider.clone(),
            n_shots: meta.method.n_shots(),
            support: 0,
            failures,
            degraded,
            mae: None,
            match_rate: None,
            direction_rate: None,
            precision: None,
            recall: None,
            f1: None,
            semantic_similarity: None,
            normalized_edit_distance: None,
        }
    }
}

/// Means and rates over evaluated pairs. Direction rate excludes pairs
/// where it does not apply.
pub fn aggregate(evals: &[PairEvaluation], meta: &ReportMeta) -> Result<RunReport, MetricError> {
    let ok: Vec<&PairEvaluation> = evals.iter().filter(|e| e.is_evaluated()).collect();
    if ok.is_empty() {
        return Err(MetricError::EmptyRun);
    }
    let bert = || ok.iter().filter_map(|e| e.bert_like);
    Ok(RunReport {
        method: meta.method,
        provider: meta.provider.clone(),
        n_shots: meta.method.n_shots(),
        support: ok.len(),
        failures: evals.len() - ok.len(),
        degraded: false,
        mae: mean(ok.iter().filter_map(|e| e.abs_error)),
        match_rate: rate(ok.iter().filter_map(|e| e.is_match)),
        direction_rate: rate(ok.iter().filter_map(|e| e.direction_ok)),
        precision: mean(bert().map(|b| b.precision)),
        recall: mean(bert().map(|b| b.recall)),
        f1: mean(bert().map(|b| b.f1)),
        semantic_similarity: mean(ok.iter().filter_map(|e| e.semantic_similarity)),
        normalized_edit_distance: mean(ok.iter().filter_map(|e| e.normalized_edit_distance)),
    })
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "Method",
    "Model",
    "#Shot",
    "Support",
    "MAE",
    "Match",
    "Direction",
    "P",
    "R",
    "F1",
    "SemanticSim",
    "NormEditDist",
];

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Table-style CSV: one header row, one row per report.
pub fn write_reports_csv<W: Write>(reports: &[RunReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in reports {
        let cells = [
            r.method.family().to_string(),
            csv_field(&r.provider),
            r.n_shots.to_string(),
            r.support.to_string(),
            fmt_opt(r.mae, |v| format!("{v:.1}")),
            fmt_opt(r.match_rate, pct),
            fmt_opt(r.direction_rate, pct),
            fmt_opt(r.precision, pct),
            fmt_opt(r.recall, pct),
            fmt_opt(r.f1, pct),
            fmt_opt(r.semantic_similarity, |v| format!("{v:.3}")),
            fmt_opt(r.normalized_edit_distance, |v| format!("{v:.3}")),
        ];
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// JSON array of objects keyed by the table columns, in column order.
pub fn reports_json(reports: &[RunReport]) -> serde_json::Value {
    use serde_json::{Map, Value};
    let rows = reports
        .iter()
        .map(|r| {
            let mut m = Map::new();
            let num = |v: Option<f64>| v.map(Value::from).unwrap_or(Value::Null);
            m.insert("Method".into(), r.method.family().into());
            m.insert("Model".into(), r.provider.clone().into());
            m.insert("#Shot".into(), r.n_shots.into());
            m.insert("Support".into(), r.support.into());
            m.insert("MAE".into(), num(r.mae));
            m.insert("Match".into(), num(r.match_rate));
            m.insert("Direction".into(), num(r.direction_rate));
            m.insert("P".into(), num(r.precision));
            m.insert("R".into(), num(r.recall));
            m.insert("F1".into(), num(r.f1));
            m.insert("SemanticSim".into(), num(r.semantic_similarity));
            m.insert("NormEditDist".into(), num(r.normalized_edit_distance));
            Value::Object(m)
        })
        .collect();
    Value::Array(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{LexicalEmbedder, ProviderError};

    #[test]
    fn lexile_examples() {
        let m = lexile_metrics(700.0, 900.0, 850.0);
        assert_eq!(m.abs_error, 150.0);
        assert!(!m.is_match);
        assert_eq!(m.direction_ok, Some(true));

        assert!(lexile_metrics(800.0, 600.0, 840.0).is_match);
        assert!(lexile_metrics(800.0, 600.0, 850.0).is_match);
        assert!(!lexile_metrics(800.0, 600.0, 851.0).is_match);
        assert!(lexile_metrics(800.0, 600.0, 750.0).is_match);

        assert_eq!(lexile_metrics(800.0, 800.0, 900.0).direction_ok, None);
        assert_eq!(lexile_metrics(900.0, 800.0, 800.0).direction_ok, Some(false));
        assert_eq!(lexile_metrics(900.0, 800.0, 700.0).direction_ok, Some(false));
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(normalized_edit_distance("the cat sat", "the cat sat"), 0.0);
        assert_eq!(normalized_edit_distance("a b c", "x y z"), 1.0);
        assert!((normalized_edit_distance("a b c", "a c") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
        assert_eq!(normalized_edit_distance("", "a b"), 1.0);
        assert_eq!(levenshtein(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']), 3);
    }

    #[test]
    fn bert_like_self_match_and_orthogonal() {
        let e = LexicalEmbedder::default();
        let b = bert_like_score("The cat sat on the mat.", "The cat sat on the mat.", &e).unwrap();
        assert!((b.precision - 1.0).abs() < 1e-12);
        assert!((b.recall - 1.0).abs() < 1e-12);
        assert!((b.f1 - 1.0).abs() < 1e-12);
    }

    struct Axis;
    impl Embedder for Axis {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Ok(texts
                .iter()
                .map(|t| if t.starts_with('a') { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
                .collect())
        }
    }

    struct Broken;
    impl Embedder for Broken {
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Err(ProviderError::Provider("down".into()))
        }
    }

    #[test]
    fn bert_like_orthogonal_tokens() {
        let b = bert_like_score("apple", "zebra", &Axis).unwrap();
        assert_eq!((b.precision, b.recall, b.f1), (0.0, 0.0, 0.0));
        assert!(bert_like_score("", "zebra", &Axis).is_err());
    }

    #[test]
    fn semantic_similarity_cases() {
        let e = LexicalEmbedder::default();
        assert!((semantic_similarity("Same text here.", "Same text here.", &e).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            semantic_similarity("", "x", &e),
            Err(MetricError::Unscorable(_))
        ));
    }

    fn pair(src: f64, tgt: f64) -> LeveledPair {
        LeveledPair {
            pair_id: "p".into(),
            set_id: 1,
            source_article_id: 1,
            target_article_id: 2,
            source_text: "alpha beta gamma".into(),
            source_score: src,
            target_text: "alpha gamma".into(),
            target_score: tgt,
        }
    }

    #[test]
    fn embedding_failure_keeps_other_metrics() {
        let ev = evaluate_pair(&pair(900.0, 700.0), "alpha gamma", 720.0, &Broken);
        assert!(ev.is_evaluated());
        assert_eq!(ev.bert_like, None);
        assert_eq!(ev.semantic_similarity, None);
        assert_eq!(ev.abs_error, Some(20.0));
        assert!((ev.normalized_edit_distance.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    fn with_error(err: f64, is_match: bool) -> PairEvaluation {
        let mut e = evaluate_fast(&pair(900.0, 700.0), "x", 700.0 + err);
        e.is_match = Some(is_match);
        e
    }

    #[test]
    fn aggregate_means_and_rates() {
        let meta = ReportMeta {
            provider: "m".into(),
            method: PromptMethod::ZeroShot,
        };
        let r = aggregate(&[with_error(100.0, true), with_error(300.0, false)], &meta).unwrap();
        assert_eq!(r.mae, Some(200.0));
        assert_eq!(r.support, 2);

        let evals = vec![
            with_error(0.0, true),
            with_error(0.0, false),
            with_error(0.0, false),
            with_error(0.0, true),
            PairEvaluation::unsupported(&pair(900.0, 700.0), "context_overflow"),
        ];
        let r = aggregate(&evals, &meta).unwrap();
        assert_eq!(r.match_rate, Some(0.5));
        assert_eq!((r.support, r.failures), (4, 1));
        assert_eq!(r.precision, None);

        let only_failed = vec![PairEvaluation::unsupported(&pair(1.0, 2.0), "x")];
        assert_eq!(aggregate(&only_failed, &meta), Err(MetricError::EmptyRun));
    }

    #[test]
    fn direction_rate_skips_not_applicable() {
        let meta = ReportMeta {
            provider: "m".into(),
            method: PromptMethod::FewShot(3),
        };
        let mut a = evaluate_fast(&pair(800.0, 800.0), "x", 900.0);
        a.pair_id = "a".into();
        let b = evaluate_fast(&pair(900.0, 700.0), "x", 800.0);
        let r = aggregate(&[a, b], &meta).unwrap();
        assert_eq!(r.direction_rate, Some(1.0));
        assert_eq!(r.n_shots, 3);
    }

    #[test]
    fn csv_columns() {
        let meta = ReportMeta {
            provider: "gpt".into(),
            method: PromptMethod::FewShot(3),
        };
        let r = aggregate(&[with_error(50.0, true)], &meta).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Method,Model,#Shot,Support,MAE,Match,Direction,P,R,F1,SemanticSim,NormEditDist"
        );
        assert!(lines.next().unwrap().starts_with("Few-shot,gpt,3,1,50.0,100.00%,100.00%,"));
        let json = reports_json(&[r]);
        let keys: Vec<&String> = json[0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 12);
    }
}
