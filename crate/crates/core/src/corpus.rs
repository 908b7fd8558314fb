//! Leveled-text corpora.
//!
//! A corpus is a collection of topic sets; each set holds two or more
//! articles covering the same topic at different readability levels.
//! Splitting happens by set so that no topic leaks between train and test,
//! and parallel pairs are every ordered pair of distinct articles in a set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::readability::{self, Calibration, ScoreError, Scorer};
use crate::rng::SplitMix64;
use crate::textproc::{self, FrequencyTable};

/// The small hand-written corpus the default scorer is fitted on.
pub const SEED_CORPUS: &str = include_str!("../data/seed_corpus.jsonl");

/// Minimum number of sets for a 90/5/5 split to be meaningful.
pub const MIN_SETS_FOR_SPLIT: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate article (set {set_id}, article {article_id}) on line {line}")]
    Duplicate {
        set_id: u32,
        article_id: u32,
        line: usize,
    },
    #[error("set {set_id} has conflicting titles {first:?} and {second:?}")]
    TitleMismatch {
        set_id: u32,
        first: String,
        second: String,
    },
    #[error("need at least {MIN_SETS_FOR_SPLIT} sets to split, got {0}")]
    TooFewSets(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("calibration failed: {0}")]
    Calibration(#[from] ScoreError),
    #[error("record {0} has no reference score")]
    Unlabeled(usize),
}

/// One article of the archive format. `score: null` means "compute at
/// ingest".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub set_id: u32,
    pub article_id: u32,
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub set_id: u32,
    pub article_id: u32,
    pub title: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveledPair {
    pub pair_id: String,
    pub set_id: u32,
    pub source_article_id: u32,
    pub target_article_id: u32,
    pub source_text: String,
    pub source_score: f64,
    pub target_text: String,
    pub target_score: f64,
}

impl LeveledPair {
    pub fn make_id(set_id: u32, source: u32, target: u32) -> String {
        format!("{set_id}:{source}:{target}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub set_id: u32,
    pub article_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub articles: usize,
    pub sets: usize,
    pub skipped: Vec<SkippedRecord>,
}

impl IngestReport {
    pub fn warning_count(&self) -> usize {
        self.skipped.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub articles: Vec<Article>,
    pub report: IngestReport,
}

/// Reads a JSONL archive, scoring every article whose score is `null`.
///
/// Records with no scorable text, or whose text duplicates another article
/// of the same set, are skipped and listed in the report.
pub fn ingest<R: BufRead>(reader: R, scorer: &Scorer) -> Result<Ingested, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArchiveRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push((idx + 1, rec));
    }

    let mut seen = HashMap::new();
    let mut titles: HashMap<u32, String> = HashMap::new();
    for (line, rec) in &records {
        if seen.insert((rec.set_id, rec.article_id), *line).is_some() {
            return Err(CorpusError::Duplicate {
                set_id: rec.set_id,
                article_id: rec.article_id,
                line: *line,
            });
        }
        match titles.get(&rec.set_id) {
            Some(t) if t != &rec.title => {
                return Err(CorpusError::TitleMismatch {
                    set_id: rec.set_id,
                    first: t.clone(),
                    second: rec.title.clone(),
                })
            }
            Some(_) => {}
            None => {
                titles.insert(rec.set_id, rec.title.clone());
            }
        }
    }

    let scored = score_records(&records, scorer);

    let mut report = IngestReport {
        records: records.len(),
        ..Default::default()
    };
    let mut articles = Vec::with_capacity(records.len());
    let mut texts_by_set: HashMap<u32, BTreeSet<&str>> = HashMap::new();
    for ((line, rec), outcome) in records.iter().zip(scored) {
        let skip = |reason: String| SkippedRecord {
            line: *line,
            set_id: rec.set_id,
            article_id: rec.article_id,
            reason,
        };
        let score = match outcome {
            Ok(s) => s,
            Err(reason) => {
                tracing::warn!(line, set_id = rec.set_id, article_id = rec.article_id, %reason, "skipping article");
                report.skipped.push(skip(reason));
                continue;
            }
        };
        if !texts_by_set.entry(rec.set_id).or_default().insert(rec.text.as_str()) {
            tracing::warn!(line, set_id = rec.set_id, "skipping article with duplicate text");
            report.skipped.push(skip("text duplicates another article in the set".into()));
            continue;
        }
        articles.push(Article {
            set_id: rec.set_id,
            article_id: rec.article_id,
            title: rec.title.clone(),
            text: rec.text.clone(),
            score,
        });
    }
    articles.sort_by_key(|a| (a.set_id, a.article_id));
    report.articles = articles.len();
    report.sets = articles.iter().map(|a| a.set_id).collect::<BTreeSet<_>>().len();
    Ok(Ingested { articles, report })
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<ArchiveRecord>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Builds a frequency table from the records' texts and fits the scorer to
/// their reference scores. Every record must carry a score.
pub fn fit_scorer(records: &[ArchiveRecord], smoothing: f64) -> Result<(FrequencyTable, Calibration), CorpusError> {
    let mut labeled = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        labeled.push((r.text.as_str(), r.score.ok_or(CorpusError::Unlabeled(i))?));
    }
    let texts: Vec<&str> = labeled.iter().map(|(t, _)| *t).collect();
    let freq = textproc::build_frequency_table(&texts, smoothing)
        .map_err(|e| ScoreError::InvalidModel(e.to_string()))?;
    let cal = readability::calibrate(&labeled, &freq)?;
    Ok((freq, cal))
}

fn score_one(rec: &ArchiveRecord, scorer: &Scorer) -> Result<f64, String> {
    if textproc::word_tokens(&rec.text).is_empty() {
        return Err("unscorable: empty".into());
    }
    match rec.score {
        Some(s) if s.is_finite() => Ok(s),
        Some(_) => Err("score is not finite".into()),
        None => scorer.score(&rec.text).map(|r| r.score).map_err(|e| e.to_string()),
    }
}

fn score_records(records: &[(usize, ArchiveRecord)], scorer: &Scorer) -> Vec<Result<f64, String>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8);
    if workers <= 1 || records.len() < 64 {
        return records.iter().map(|(_, r)| score_one(r, scorer)).collect();
    }
    let chunk = records.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|(_, r)| score_one(r, scorer)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    })
}

pub fn write_articles<W: Write>(articles: &[Article], mut w: W) -> Result<(), CorpusError> {
    for a in articles {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_articles<R: BufRead>(reader: R) -> Result<Vec<Article>, CorpusError> {
    read_jsonl(reader)
}

pub fn write_pairs<W: Write>(pairs: &[LeveledPair], mut w: W) -> Result<(), CorpusError> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<LeveledPair>, CorpusError> {
    read_jsonl(reader)
}

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitManifest {
    pub fn split_of(&self, set_id: u32) -> Option<Split> {
        if self.train.binary_search(&set_id).is_ok() {
            Some(Split::Train)
        } else if self.valid.binary_search(&set_id).is_ok() {
            Some(Split::Valid)
        } else if self.test.binary_search(&set_id).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn sets(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Split sizes for `n` sets: `floor(0.90 n)` train and `floor(0.05 n)` for
/// each of valid and test, with the remainder going to test first, then
/// valid.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 90 / 100;
    let mut valid = n * 5 / 100;
    let mut test = n * 5 / 100;
    let mut rest = n - train - valid - test;
    let mut to_test = true;
    while rest > 0 {
        if to_test {
            test += 1;
        } else {
            valid += 1;
        }
        to_test = !to_test;
        rest -= 1;
    }
    (train, valid, test)
}

/// Partitions set ids into train/valid/test after a seeded SplitMix64
/// shuffle of the ascending id list. Each list in the manifest is sorted.
pub fn split_by_set(articles: &[Article], seed: u64) -> Result<SplitManifest, CorpusError> {
    let ids: Vec<u32> = articles
        .iter()
        .map(|a| a.set_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    split_set_ids(ids, seed)
}

pub fn split_set_ids(mut ids: Vec<u32>, seed: u64) -> Result<SplitManifest, CorpusError> {
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < MIN_SETS_FOR_SPLIT {
        return Err(CorpusError::TooFewSets(ids.len()));
    }
    SplitMix64::new(seed).shuffle(&mut ids);
    let (n_train, n_valid, _) = split_sizes(ids.len());
    let mut train = ids[..n_train].to_vec();
    let mut valid = ids[n_train..n_train + n_valid].to_vec();
    let mut test = ids[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(SplitManifest {
        train,
        valid,
        test,
        ratios: [0.90, 0.05, 0.05],
        seed,
    })
}

/// Every ordered pair of distinct articles within each set.
pub fn permute_pairs(articles: &[Article]) -> Vec<LeveledPair> {
    let mut by_set: BTreeMap<u32, Vec<&Article>> = BTreeMap::new();
    for a in articles {
        by_set.entry(a.set_id).or_default().push(a);
    }
    let mut pairs = Vec::new();
    for (set_id, mut members) in by_set {
        members.sort_by_key(|a| a.article_id);
        for src in &members {
            for tgt in &members {
                if src.article_id == tgt.article_id {
                    continue;
                }
                pairs.push(LeveledPair {
                    pair_id: LeveledPair::make_id(set_id, src.article_id, tgt.article_id),
                    set_id,
                    source_article_id: src.article_id,
                    target_article_id: tgt.article_id,
                    source_text: src.text.clone(),
                    source_score: src.score,
                    target_text: tgt.text.clone(),
                    target_score: tgt.score,
                });
            }
        }
    }
    pairs
}

/// Pairs for the sets assigned to `split`.
pub fn pairs_for_split(articles: &[Article], manifest: &SplitManifest, split: Split) -> Vec<LeveledPair> {
    let members: Vec<Article> = articles
        .iter()
        .filter(|a| manifest.split_of(a.set_id) == Some(split))
        .cloned()
        .collect();
    permute_pairs(&members)
}
