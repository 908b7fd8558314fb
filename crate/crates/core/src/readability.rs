//! Lexile-style readability scoring.
//!
//! A text's score is
//!
//! ```text
//! clamp(alpha * log10(mean sentence length) + beta * mean log10 word frequency + gamma)
//! ```
//!
//! The coefficients are never hard-coded: they come from [`calibrate`], an
//! ordinary least-squares fit against reference scores. The bundled default
//! model (`data/default_model.txt`) is the fit on the bundled seed corpus.
//! It is a stand-in scale, not the commercial analyzer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{self, FrequencyTable, TokenizedText};

pub const DEFAULT_CLAMP: (f64, f64) = (0.0, 2000.0);

const BUNDLED_MODEL: &str = include_str!("../data/default_model.txt");
const BUNDLED_FREQ: &str = include_str!("../data/seed_freq.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("unscorable: empty")]
    Empty,
    #[error("non-finite intermediate value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate calibration set: {0}")]
    DegenerateCalibration(String),
    #[error("calibration needs at least 3 labeled documents, got {0}")]
    TooFewDocuments(usize),
    #[error("labeled document {index} is unusable: {reason}")]
    BadLabel { index: usize, reason: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Digest or name of the frequency table used at fit time.
    pub freq_table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_r2: Option<f64>,
}

impl ScorerModel {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            clamp_min: DEFAULT_CLAMP.0,
            clamp_max: DEFAULT_CLAMP.1,
            freq_table: String::new(),
            fit_rmse: None,
            fit_r2: None,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("clamp_min", self.clamp_min),
            ("clamp_max", self.clamp_max),
        ] {
            if !v.is_finite() {
                return Err(ScoreError::InvalidModel(format!("{name} is not finite")));
            }
        }
        if self.clamp_min >= self.clamp_max {
            return Err(ScoreError::InvalidModel(format!(
                "clamp range [{}, {}] is empty",
                self.clamp_min, self.clamp_max
            )));
        }
        Ok(())
    }

    /// Unclamped linear predictor.
    pub fn predict(&self, msl: f64, mlwf: f64) -> f64 {
        self.alpha * msl.log10() + self.beta * mlwf + self.gamma
    }

    pub fn bundled() -> Self {
        BUNDLED_MODEL.parse().expect("bundled model file is valid")
    }
}

impl fmt::Display for ScorerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha={}", self.alpha)?;
        writeln!(f, "beta={}", self.beta)?;
        writeln!(f, "gamma={}", self.gamma)?;
        writeln!(f, "clamp_min={}", self.clamp_min)?;
        writeln!(f, "clamp_max={}", self.clamp_max)?;
        writeln!(f, "freq_table={}", self.freq_table)?;
        if let Some(rmse) = self.fit_rmse {
            writeln!(f, "fit_rmse={rmse}")?;
        }
        if let Some(r2) = self.fit_r2 {
            writeln!(f, "fit_r2={r2}")?;
        }
        Ok(())
    }
}

impl FromStr for ScorerModel {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut kv = BTreeMap::new();
        for line in s.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ScoreError::InvalidModel(format!("expected key=value, got {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |key: &str| -> Result<f64, ScoreError> {
            kv.get(key)
                .ok_or_else(|| ScoreError::InvalidModel(format!("missing {key}")))?
                .parse::<f64>()
                .map_err(|e| ScoreError::InvalidModel(format!("{key}: {e}")))
        };
        let opt = |key: &str| -> Result<Option<f64>, ScoreError> {
            kv.get(key)
                .map(|v| v.parse::<f64>())
                .transpose()
                .map_err(|e| ScoreError::InvalidModel(format!("{key}: {e}")))
        };
        let model = ScorerModel {
            alpha: num("alpha")?,
            beta: num("beta")?,
            gamma: num("gamma")?,
            clamp_min: opt("clamp_min")?.unwrap_or(DEFAULT_CLAMP.0),
            clamp_max: opt("clamp_max")?.unwrap_or(DEFAULT_CLAMP.1),
            freq_table: kv.get("freq_table").cloned().unwrap_or_default(),
            fit_rmse: opt("fit_rmse")?,
            fit_r2: opt("fit_r2")?,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityReport {
    pub score: f64,
    /// Mean sentence length in tokens.
    pub msl: f64,
    /// Mean log10 word frequency.
    pub mlwf: f64,
    pub token_count: usize,
    pub sentence_count: usize,
}

fn features(t: &TokenizedText, freq: &FrequencyTable) -> Result<(f64, f64), ScoreError> {
    let msl = textproc::mean_sentence_length(t).map_err(|_| ScoreError::Empty)?;
    let mlwf = textproc::mean_log_word_frequency(t, freq).map_err(|_| ScoreError::Empty)?;
    if !(msl.is_finite() && msl > 0.0) {
        return Err(ScoreError::NonFinite("mean sentence length"));
    }
    if !mlwf.is_finite() {
        return Err(ScoreError::NonFinite("mean log word frequency"));
    }
    Ok((msl, mlwf))
}

pub fn score_tokenized(
    t: &TokenizedText,
    model: &ScorerModel,
    freq: &FrequencyTable,
) -> Result<ReadabilityReport, ScoreError> {
    let (msl, mlwf) = features(t, freq)?;
    let raw = model.predict(msl, mlwf);
    if !raw.is_finite() {
        return Err(ScoreError::NonFinite("score"));
    }
    Ok(ReadabilityReport {
        score: raw.clamp(model.clamp_min, model.clamp_max),
        msl,
        mlwf,
        token_count: t.token_count,
        sentence_count: t.sentence_count(),
    })
}

pub fn score(
    text: &str,
    model: &ScorerModel,
    freq: &FrequencyTable,
) -> Result<ReadabilityReport, ScoreError> {
    score_tokenized(&textproc::tokenize(text), model, freq)
}

/// A model paired with the frequency table it scores against.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub model: ScorerModel,
    pub freq: FrequencyTable,
}

impl Scorer {
    pub fn new(model: ScorerModel, freq: FrequencyTable) -> Self {
        if !model.freq_table.is_empty() && model.freq_table != freq.digest() {
            tracing::warn!(
                expected = %model.freq_table,
                actual = %freq.digest(),
                "scorer model was fitted against a different frequency table"
            );
        }
        Self { model, freq }
    }

    /// The default model and the seed frequency table it was fitted with.
    pub fn bundled() -> Self {
        let freq: FrequencyTable = BUNDLED_FREQ.parse().expect("bundled frequency table is valid");
        Self::new(ScorerModel::bundled(), freq)
    }

    pub fn score(&self, text: &str) -> Result<ReadabilityReport, ScoreError> {
        score(text, &self.model, &self.freq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: ScorerModel,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

/// Least-squares fit of reference scores on `[log10(msl), mlwf, 1]`.
pub fn calibrate<S: AsRef<str>>(
    labeled: &[(S, f64)],
    freq: &FrequencyTable,
) -> Result<Calibration, ScoreError> {
    if labeled.len() < 3 {
        return Err(ScoreError::TooFewDocuments(labeled.len()));
    }
    let mut rows = Vec::with_capacity(labeled.len());
    let mut ys = Vec::with_capacity(labeled.len());
    for (index, (text, reference)) in labeled.iter().enumerate() {
        if !reference.is_finite() {
            return Err(ScoreError::BadLabel {
                index,
                reason: "reference score is not finite".into(),
            });
        }
        let (msl, mlwf) = features(&textproc::tokenize(text.as_ref()), freq).map_err(|e| {
            ScoreError::BadLabel {
                index,
                reason: e.to_string(),
            }
        })?;
        rows.push([msl.log10(), mlwf, 1.0]);
        ys.push(*reference);
    }
    let coef = least_squares_3(&rows, &ys)?;
    let mut model = ScorerModel::new(coef[0], coef[1], coef[2]);
    model.freq_table = freq.digest();

    let n = ys.len() as f64;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (row, y) in rows.iter().zip(&ys) {
        let fitted = coef[0] * row[0] + coef[1] * row[1] + coef[2];
        sse += (y - fitted).powi(2);
        sst += (y - mean_y).powi(2);
    }
    let rmse = (sse / n).sqrt();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    model.fit_rmse = Some(rmse);
    model.fit_r2 = Some(r2);
    Ok(Calibration {
        model,
        rmse,
        r2,
        n: ys.len(),
    })
}

/// Householder QR solve of the `n x 3` least-squares problem.
#[allow(clippy::needless_range_loop)]
fn least_squares_3(rows: &[[f64; 3]], ys: &[f64]) -> Result<[f64; 3], ScoreError> {
    let n = rows.len();
    let mut a: Vec<[f64; 3]> = rows.to_vec();
    let mut b = ys.to_vec();
    let col_norms: Vec<f64> = (0..3)
        .map(|k| a.iter().map(|r| r[k] * r[k]).sum::<f64>().sqrt())
        .collect();

    for k in 0..3 {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let scale = col_norms[k].max(1.0);
        if norm <= 1e-10 * scale {
            return Err(ScoreError::DegenerateCalibration(format!(
                "feature column {k} is linearly dependent on the others"
            )));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..3 {
            let dot: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[i][j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..n).map(|i| v[i - k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            b[i] -= f * v[i - k];
        }
    }

    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = b[k];
        for j in k + 1..3 {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ScoreError::DegenerateCalibration("solution is not finite".into()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::build_frequency_table;

    fn freq() -> FrequencyTable {
        build_frequency_table(
            &["the cat sat on the mat. the dog ran. a bird sang in the tree."],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_model_scores_intercept() {
        let m = ScorerModel::new(0.0, 0.0, 500.0);
        let r = score("Anything goes here. Truly.", &m, &freq()).unwrap();
        assert_eq!(r.score, 500.0);
        assert_eq!(r.sentence_count, 2);
    }

    #[test]
    fn empty_text_is_unscorable() {
        let m = ScorerModel::new(1.0, 1.0, 1.0);
        assert_eq!(score("", &m, &freq()), Err(ScoreError::Empty));
        assert_eq!(score("  \n ", &m, &freq()), Err(ScoreError::Empty));
        assert_eq!(score("... !!", &m, &freq()), Err(ScoreError::Empty));
    }

    #[test]
    fn longer_sentences_score_higher() {
        let m = ScorerModel::new(600.0, 0.0, 100.0);
        let f = freq();
        let short = score("The cat sat. The dog ran.", &m, &f).unwrap();
        let long = score("The cat sat the cat sat. The dog ran the dog ran.", &m, &f).unwrap();
        assert!(long.score > short.score);
    }

    #[test]
    fn clamps_into_range() {
        let m = ScorerModel::new(0.0, 0.0, 5000.0);
        assert_eq!(score("Hi.", &m, &freq()).unwrap().score, 2000.0);
        let m = ScorerModel::new(0.0, 0.0, -5.0);
        assert_eq!(score("Hi.", &m, &freq()).unwrap().score, 0.0);
    }

    #[test]
    fn report_matches_formula() {
        let m = ScorerModel::new(700.0, -250.0, 300.0);
        let r = score("The cat sat on the mat. A bird sang.", &m, &freq()).unwrap();
        let expected = 700.0 * r.msl.log10() - 250.0 * r.mlwf + 300.0;
        assert_eq!(r.score, expected.clamp(0.0, 2000.0));
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = ScorerModel::new(712.25, -301.5, 88.125);
        m.freq_table = "abc123".into();
        m.fit_rmse = Some(12.5);
        let text = m.to_string();
        assert!(text.contains("alpha=712.25\n"));
        assert!(text.contains("freq_table=abc123\n"));
        assert_eq!(text.parse::<ScorerModel>().unwrap(), m);
    }

    #[test]
    fn model_file_rejects_bad_clamp() {
        let err = "alpha=1\nbeta=1\ngamma=1\nclamp_min=10\nclamp_max=10\n"
            .parse::<ScorerModel>()
            .unwrap_err();
        assert!(matches!(err, ScoreError::InvalidModel(_)));
        assert!("alpha=1\nbeta=1\n".parse::<ScorerModel>().is_err());
    }

    #[test]
    fn calibrate_needs_three_documents() {
        let docs = [("The cat sat.", 100.0), ("The dog ran.", 200.0)];
        assert_eq!(calibrate(&docs, &freq()), Err(ScoreError::TooFewDocuments(2)));
    }

    #[test]
    fn calibrate_rejects_identical_features() {
        let docs = [
            ("The cat sat.", 100.0),
            ("The cat sat.", 200.0),
            ("The cat sat.", 300.0),
        ];
        assert!(matches!(
            calibrate(&docs, &freq()),
            Err(ScoreError::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn calibrate_rejects_unscorable_label() {
        let docs = [("The cat sat.", 100.0), ("", 200.0), ("A bird.", 300.0)];
        assert!(matches!(
            calibrate(&docs, &freq()),
            Err(ScoreError::BadLabel { index: 1, .. })
        ));
    }

    #[test]
    fn bundled_scorer_loads() {
        let s = Scorer::bundled();
        assert_eq!(s.model.freq_table, s.freq.digest());
        assert!(s.score("The cat sat on the mat.").is_ok());
    }
}
