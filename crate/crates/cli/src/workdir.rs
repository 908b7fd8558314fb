//! On-disk layout of a workbench directory:
//!
//! ```text
//! articles.jsonl          ingested articles
//! split.json              set-wise split manifest
//! pairs/{train,valid,test}.jsonl
//! model/model.txt, model/freq.tsv   calibrated scorer (optional)
//! bank/                   response bank
//! runs/<run_id>/          run records and exports
//! sessions.jsonl          service session snapshots
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use leveler_core::corpus::{self, Article, LeveledPair, Split, SplitManifest};
use leveler_core::harness::{BenchCorpus, ResponseBank, RunStore};
use leveler_core::readability::{Scorer, ScorerModel};
use leveler_core::textproc::FrequencyTable;

pub const MODEL_FILE: &str = "model.txt";
pub const FREQ_FILE: &str = "freq.tsv";

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.path("model")
    }

    fn pairs_path(&self, split: Split) -> PathBuf {
        self.path("pairs").join(format!("{split}.jsonl"))
    }

    /// The calibrated scorer in `model/` if there is one, else the bundled
    /// default.
    pub fn scorer(&self) -> Result<Scorer> {
        let dir = self.model_dir();
        if !dir.join(MODEL_FILE).is_file() {
            return Ok(Scorer::bundled());
        }
        load_scorer(&dir)
    }

    pub fn write_articles(&self, articles: &[Article]) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let path = self.path("articles.jsonl");
        corpus::write_articles(articles, BufWriter::new(File::create(&path)?))?;
        Ok(path)
    }

    pub fn articles(&self) -> Result<Vec<Article>> {
        let path = self.path("articles.jsonl");
        let f = File::open(&path).with_context(|| format!("{} (run `corpus ingest` first)", path.display()))?;
        Ok(corpus::read_articles(BufReader::new(f))?)
    }

    pub fn write_manifest(&self, m: &SplitManifest) -> Result<PathBuf> {
        let path = self.path("split.json");
        fs::write(&path, serde_json::to_vec_pretty(m)?)?;
        Ok(path)
    }

    pub fn manifest(&self) -> Result<SplitManifest> {
        let path = self.path("split.json");
        let bytes = fs::read(&path).with_context(|| format!("{} (run `corpus split` first)", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_pairs(&self, split: Split, pairs: &[LeveledPair]) -> Result<PathBuf> {
        fs::create_dir_all(self.path("pairs"))?;
        let path = self.pairs_path(split);
        corpus::write_pairs(pairs, BufWriter::new(File::create(&path)?))?;
        Ok(path)
    }

    pub fn corpus(&self) -> Result<BenchCorpus> {
        let read = |split| -> Result<Vec<LeveledPair>> {
            let path = self.pairs_path(split);
            let f = File::open(&path).with_context(|| format!("{} (run `corpus pairs` first)", path.display()))?;
            Ok(corpus::read_pairs(BufReader::new(f))?)
        };
        Ok(BenchCorpus {
            train: read(Split::Train)?,
            valid: read(Split::Valid)?,
            test: read(Split::Test)?,
        })
    }

    pub fn bank(&self) -> Result<ResponseBank> {
        Ok(ResponseBank::open(self.path("bank"))?)
    }

    pub fn runs(&self) -> RunStore {
        RunStore::new(self.path("runs"))
    }
}

pub fn load_scorer(dir: &Path) -> Result<Scorer> {
    let model: ScorerModel = fs::read_to_string(dir.join(MODEL_FILE))?
        .parse()
        .with_context(|| format!("{}", dir.join(MODEL_FILE).display()))?;
    let freq: FrequencyTable = fs::read_to_string(dir.join(FREQ_FILE))?
        .parse()
        .with_context(|| format!("{}", dir.join(FREQ_FILE).display()))?;
    Ok(Scorer::new(model, freq))
}
