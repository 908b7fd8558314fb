//! Benchmark runs, the response bank and scatter exports.
//!
//! A run samples evaluation pairs, renders one prompt per pair and method,
//! asks every provider for `k` candidates and stores each successful one in
//! the [`ResponseBank`]. Reports follow single-response semantics: only the
//! first draw of each request is aggregated; the extra draws exist for
//! curators browsing the bank.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LeveledPair, Split};
use crate::metrics::{self, BertLike, PairEvaluation, ReportMeta, RunReport, MATCH_WINDOW};
use crate::prompting::{self, PromptBundle, PromptMethod, PromptTemplates, ShotSelectionPolicy};
use crate::providers::{self, Embedder, GenerationRequest, GenerationStatus, Provider, ProviderConfig};
use crate::readability::{ReadabilityReport, Scorer};
use crate::rng::SplitMix64;

pub const BANK_LOG: &str = "bank.jsonl";
pub const BANK_INDEX: &str = "bank.index.json";
pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run spec: {0}")]
    InvalidSpec(String),
    #[error("empty sample")]
    EmptySample,
    #[error("sample size {requested} exceeds the {available} pairs in the split")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("bank log line {line}: {message}")]
    CorruptBank { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] providers::ProviderError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn default_k() -> usize {
    1
}

fn default_window() -> f64 {
    prompting::DEFAULT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub split: Split,
    pub sample_size: usize,
    pub providers: Vec<ProviderConfig>,
    pub methods: Vec<PromptMethod>,
    #[serde(default = "default_k")]
    pub over_generation_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exemplar qualification window, in score points.
    #[serde(default = "default_window")]
    pub window: f64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return bad(format!("run_id {:?} must be a non-empty [A-Za-z0-9._-] name", self.run_id));
        }
        if self.split == Split::Train {
            return bad("runs evaluate on the valid or test split, not train".into());
        }
        if self.sample_size == 0 {
            return Err(HarnessError::EmptySample);
        }
        if self.over_generation_k == 0 {
            return bad("over_generation_k must be at least 1".into());
        }
        if self.providers.is_empty() {
            return bad("no providers".into());
        }
        if self.methods.is_empty() {
            return bad("no prompt methods".into());
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return bad(format!("window {} must be finite and positive", self.window));
        }
        let mut names = HashSet::new();
        for p in &self.providers {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate provider name {:?}", p.name));
            }
        }
        Ok(())
    }
}

/// Pairs of each split, as produced by the corpus module.
#[derive(Debug, Clone, Default)]
pub struct BenchCorpus {
    pub train: Vec<LeveledPair>,
    pub valid: Vec<LeveledPair>,
    pub test: Vec<LeveledPair>,
}

impl BenchCorpus {
    pub fn split(&self, split: Split) -> &[LeveledPair] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Seeded uniform sample without replacement, returned in `pair_id` order.
pub fn sample_pairs(pairs: &[LeveledPair], size: usize, seed: u64) -> Result<Vec<LeveledPair>, HarnessError> {
    if size == 0 || pairs.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    if size > pairs.len() {
        return Err(HarnessError::SampleTooLarge {
            requested: size,
            available: pairs.len(),
        });
    }
    let mut sorted: Vec<&LeveledPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    SplitMix64::new(seed).shuffle(&mut sorted);
    let mut picked: Vec<LeveledPair> = sorted.into_iter().take(size).cloned().collect();
    picked.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(picked)
}

// ---------------------------------------------------------------------------
// Candidates and the bank

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub run_id: String,
    pub pair_id: String,
    pub provider: String,
    pub method: PromptMethod,
    /// 0 for the first response to a request.
    pub draw: usize,
    pub shot_ids: Vec<String>,
    pub output_text: String,
    pub source_score: f64,
    pub intended_score: f64,
    pub report: Option<ReadabilityReport>,
    pub evaluation: PairEvaluation,
    pub created_at: String,
}

impl Candidate {
    pub fn resulting_score(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.score)
    }

    /// Distance to the intended score; unscorable candidates sort last.
    pub fn distance_to_target(&self) -> f64 {
        self.resulting_score()
            .map(|s| (s - self.intended_score).abs())
            .unwrap_or(f64::INFINITY)
    }
}

/// Content address of a candidate. The draw index is part of the key so
/// that `k` identical responses still yield `k` bank entries.
pub fn candidate_id(pair_id: &str, provider: &str, method: PromptMethod, draw: usize, output: &str) -> String {
    let key = format!("{pair_id}\n{provider}\n{method}\n{draw}\n{output}");
    crate::sha256_hex(key)[..24].to_string()
}

/// Embedding metrics computed after the fact and attached to a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPatch {
    pub candidate_id: String,
    pub bert_like: Option<BertLike>,
    pub semantic_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum BankRecord {
    Candidate(Candidate),
    Metrics(MetricsPatch),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankFilter {
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub method: Option<PromptMethod>,
    #[serde(default)]
    pub min_score: Option<f64>,
    #[serde(default)]
    pub max_score: Option<f64>,
}

impl BankFilter {
    pub fn for_pair(pair_id: &str) -> Self {
        Self {
            pair_id: Some(pair_id.to_string()),
            ..Default::default()
        }
    }

    pub fn matches(&self, c: &Candidate) -> bool {
        if self.pair_id.as_ref().is_some_and(|p| p != &c.pair_id)
            || self.provider.as_ref().is_some_and(|p| p != &c.provider)
            || self.method.is_some_and(|m| m != c.method)
        {
            return false;
        }
        if self.min_score.is_none() && self.max_score.is_none() {
            return true;
        }
        let Some(s) = c.resulting_score() else {
            return false;
        };
        self.min_score.is_none_or(|lo| s >= lo) && self.max_score.is_none_or(|hi| s <= hi)
    }
}

type IndexKey = (String, String, String);

#[derive(Debug, Default)]
struct BankState {
    candidates: Vec<Candidate>,
    by_id: HashMap<String, usize>,
    index: BTreeMap<IndexKey, Vec<usize>>,
}

impl BankState {
    fn apply(&mut self, rec: BankRecord) -> bool {
        match rec {
            BankRecord::Candidate(c) => {
                if self.by_id.contains_key(&c.candidate_id) {
                    return false;
                }
                let pos = self.candidates.len();
                self.by_id.insert(c.candidate_id.clone(), pos);
                self.index
                    .entry((c.pair_id.clone(), c.provider.clone(), c.method.to_string()))
                    .or_default()
                    .push(pos);
                self.candidates.push(c);
                true
            }
            BankRecord::Metrics(p) => {
                let Some(&pos) = self.by_id.get(&p.candidate_id) else {
                    tracing::warn!(candidate_id = %p.candidate_id, "metrics patch for unknown candidate");
                    return false;
                };
                let ev = &mut self.candidates[pos].evaluation;
                ev.bert_like = p.bert_like;
                ev.semantic_similarity = p.semantic_similarity;
                true
            }
        }
    }
}

/// Append-only JSONL log of [`BankRecord`]s with an in-memory index keyed by
/// (pair, provider, method).
///
/// Writes are serialized through one writer; readers never block each other
/// and always see a prefix of the log. A torn final line, left by a crash
/// mid-append, is dropped when the bank is opened.
#[derive(Debug)]
pub struct ResponseBank {
    dir: Option<PathBuf>,
    writer: Mutex<Option<File>>,
    state: RwLock<BankState>,
}

impl ResponseBank {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            writer: Mutex::new(None),
            state: RwLock::new(BankState::default()),
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let path = dir.join(BANK_LOG);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut state = BankState::default();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&mut file);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    tracing::warn!(line = line_no, "dropping incomplete trailing bank record");
                    break;
                }
                if !line.trim().is_empty() {
                    let rec: BankRecord = serde_json::from_str(&line).map_err(|e| HarnessError::CorruptBank {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    state.apply(rec);
                }
                good_len += n as u64;
            }
        }
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
        }
        file.seek(io::SeekFrom::End(0))?;
        let bank = Self {
            dir: Some(dir),
            writer: Mutex::new(Some(file)),
            state: RwLock::new(state),
        };
        bank.write_index()?;
        Ok(bank)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn append(&self, rec: BankRecord) -> Result<bool, HarnessError> {
        let mut writer = self.writer.lock().expect("bank writer poisoned");
        let fresh = match &rec {
            BankRecord::Candidate(c) => !self.contains(&c.candidate_id),
            BankRecord::Metrics(p) => {
                if !self.contains(&p.candidate_id) {
                    return Err(HarnessError::UnknownCandidate(p.candidate_id.clone()));
                }
                true
            }
        };
        if !fresh {
            return Ok(false);
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Ok(self.state.write().expect("bank state poisoned").apply(rec))
    }

    /// Stores a candidate unless one with the same id exists. Returns whether
    /// it was new.
    pub fn insert(&self, candidate: Candidate) -> Result<bool, HarnessError> {
        self.append(BankRecord::Candidate(candidate))
    }

    pub fn patch_metrics(&self, patch: MetricsPatch) -> Result<(), HarnessError> {
        self.append(BankRecord::Metrics(patch)).map(|_| ())
    }

    pub fn contains(&self, candidate_id: &str) -> bool {
        self.state
            .read()
            .expect("bank state poisoned")
            .by_id
            .contains_key(candidate_id)
    }

    pub fn get(&self, candidate_id: &str) -> Option<Candidate> {
        let state = self.state.read().expect("bank state poisoned");
        state.by_id.get(candidate_id).map(|&i| state.candidates[i].clone())
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("bank state poisoned").candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates matching `filter`, closest to their intended score first,
    /// ties by `candidate_id`.
    pub fn query(&self, filter: &BankFilter) -> Vec<Candidate> {
        let state = self.state.read().expect("bank state poisoned");
        let positions: Vec<usize> = match (&filter.pair_id, &filter.provider, filter.method) {
            (Some(pair), Some(provider), Some(method)) => state
                .index
                .get(&(pair.clone(), provider.clone(), method.to_string()))
                .cloned()
                .unwrap_or_default(),
            (Some(pair), _, _) => state
                .index
                .range((pair.clone(), String::new(), String::new())..)
                .take_while(|((p, _, _), _)| p == pair)
                .flat_map(|(_, v)| v.iter().copied())
                .collect(),
            _ => (0..state.candidates.len()).collect(),
        };
        let mut out: Vec<Candidate> = positions
            .into_iter()
            .map(|i| &state.candidates[i])
            .filter(|c| filter.matches(c))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            a.distance_to_target()
                .total_cmp(&b.distance_to_target())
                .then_with(|| a.candidate_id.cmp(&b.candidate_id))
        });
        out
    }

    /// Writes the sidecar index (`pair|provider|method` to candidate ids).
    /// It is derived data; the log alone is authoritative.
    pub fn write_index(&self) -> Result<(), HarnessError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let index: BTreeMap<String, Vec<String>> = {
            let state = self.state.read().expect("bank state poisoned");
            state
                .index
                .iter()
                .map(|((p, pr, m), v)| {
                    (
                        format!("{p}|{pr}|{m}"),
                        v.iter().map(|&i| state.candidates[i].candidate_id.clone()).collect(),
                    )
                })
                .collect()
        };
        let tmp = dir.join(format!("{BANK_INDEX}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&index)?)?;
        fs::rename(tmp, dir.join(BANK_INDEX))?;
        Ok(())
    }
}

/// Filtered, ordered view of a bank.
pub fn bank_query(bank: &ResponseBank, filter: &BankFilter) -> Vec<Candidate> {
    bank.query(filter)
}

// ---------------------------------------------------------------------------
// Running

/// Shared, read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct BenchEnv<'a> {
    pub scorer: &'a Scorer,
    pub templates: &'a PromptTemplates,
    /// `None` skips embedding metrics; they can be patched in later.
    pub embedder: Option<&'a dyn Embedder>,
    pub bank: &'a ResponseBank,
}

/// Outcome of one request (pair, provider, method) across its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub pair_id: String,
    pub shot_ids: Vec<String>,
    pub estimated_tokens: usize,
    /// Status of each draw, in order.
    pub statuses: Vec<GenerationStatus>,
    /// Provider calls made across all draws, retries included.
    pub calls: u32,
    pub candidate_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-(provider, method) results. `evaluations` holds one entry per sampled
/// pair, from the first draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub provider: String,
    pub method: PromptMethod,
    pub report: RunReport,
    pub evaluations: Vec<PairEvaluation>,
    pub requests: Vec<RequestLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub spec: RunSpec,
    pub started_at: String,
    pub finished_at: String,
    pub sample: Vec<String>,
    pub series: Vec<SeriesResult>,
    /// Candidates new to the bank in this run.
    pub new_candidates: usize,
}

impl RunRecord {
    pub fn reports(&self) -> Vec<RunReport> {
        self.series.iter().map(|s| s.report.clone()).collect()
    }
}

fn now() -> String {
    chrono::DateTime::<chrono::Utc>::from(std::time::SystemTime::now()).to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct WorkItem<'a> {
    pair: &'a LeveledPair,
    method: PromptMethod,
}

struct ItemOutcome {
    evaluation: PairEvaluation,
    log: RequestLog,
    new_candidates: usize,
}

fn render(
    item: &WorkItem<'_>,
    train: &[LeveledPair],
    window: f64,
    templates: &PromptTemplates,
) -> Result<PromptBundle, String> {
    match item.method {
        PromptMethod::ZeroShot => Ok(templates.render_zero_shot(item.pair)),
        PromptMethod::FewShot(n) => {
            let mut policy = ShotSelectionPolicy::new(n);
            policy.window = window;
            let shots = prompting::select_shots(item.pair, train, &policy).map_err(|e| e.to_string())?;
            if shots.is_empty() {
                return Err("no qualifying exemplars".into());
            }
            templates.render_few_shot(item.pair, &shots).map_err(|e| e.to_string())
        }
    }
}

fn evaluate(env: &BenchEnv<'_>, pair: &LeveledPair, output: &str) -> (Option<ReadabilityReport>, PairEvaluation) {
    match env.scorer.score(output) {
        Ok(report) => {
            let ev = match env.embedder {
                Some(e) => metrics::evaluate_pair(pair, output, report.score, e),
                None => metrics::evaluate_fast(pair, output, report.score),
            };
            (Some(report), ev)
        }
        Err(e) => (None, PairEvaluation::unsupported(pair, format!("output {e}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_item(
    env: &BenchEnv<'_>,
    run_id: &str,
    provider: &dyn Provider,
    item: &WorkItem<'_>,
    train: &[LeveledPair],
    window: f64,
    k: usize,
) -> Result<ItemOutcome, HarnessError> {
    let pair = item.pair;
    let mut log = RequestLog {
        pair_id: pair.pair_id.clone(),
        shot_ids: Vec::new(),
        estimated_tokens: 0,
        statuses: Vec::new(),
        calls: 0,
        candidate_ids: Vec::new(),
        error: None,
    };
    let prompt = match render(item, train, window, env.templates) {
        Ok(p) => p,
        Err(reason) => {
            log.error = Some(reason.clone());
            return Ok(ItemOutcome {
                evaluation: PairEvaluation::unsupported(pair, reason),
                log,
                new_candidates: 0,
            });
        }
    };
    log.shot_ids = prompt.shots_used.clone();
    log.estimated_tokens = prompt.estimated_tokens;

    let mut first = None;
    let mut new_candidates = 0;
    for draw in 0..k {
        let result = providers::generate(provider, &GenerationRequest { prompt: &prompt, pair });
        log.statuses.push(result.status);
        log.calls += result.attempt_count;
        let evaluation = match result.output_text {
            Some(text) => {
                let (report, evaluation) = evaluate(env, pair, &text);
                let candidate = Candidate {
                    candidate_id: candidate_id(&pair.pair_id, provider.name(), item.method, draw, &text),
                    run_id: run_id.to_string(),
                    pair_id: pair.pair_id.clone(),
                    provider: provider.name().to_string(),
                    method: item.method,
                    draw,
                    shot_ids: prompt.shots_used.clone(),
                    output_text: text,
                    source_score: pair.source_score,
                    intended_score: pair.target_score,
                    report,
                    evaluation: evaluation.clone(),
                    created_at: now(),
                };
                log.candidate_ids.push(candidate.candidate_id.clone());
                if env.bank.insert(candidate)? {
                    new_candidates += 1;
                }
                evaluation
            }
            None => {
                let reason = format!(
                    "{}: {}",
                    serde_json::to_value(result.status)?.as_str().unwrap_or("error"),
                    result.error.unwrap_or_default()
                );
                if log.error.is_none() {
                    log.error = Some(reason.clone());
                }
                PairEvaluation::unsupported(pair, reason)
            }
        };
        if first.is_none() {
            first = Some(evaluation);
        }
        // A prompt that does not fit will not fit on the next draw either.
        if result.status == GenerationStatus::ContextOverflow {
            break;
        }
    }
    Ok(ItemOutcome {
        evaluation: first.expect("k >= 1"),
        log,
        new_candidates,
    })
}

/// Runs every (pair, method) for one provider on `max_in_flight` workers.
fn run_provider(
    env: &BenchEnv<'_>,
    spec: &RunSpec,
    provider: &dyn Provider,
    items: &[WorkItem<'_>],
    train: &[LeveledPair],
) -> Result<Vec<ItemOutcome>, HarnessError> {
    let workers = provider.config().max_in_flight.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ItemOutcome, HarnessError>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = run_item(
                    env,
                    &spec.run_id,
                    provider,
                    &items[i],
                    train,
                    spec.window,
                    spec.over_generation_k,
                );
                results.lock().expect("results poisoned")[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

fn summarize(provider: &str, method: PromptMethod, outcomes: Vec<&ItemOutcome>) -> SeriesResult {
    let meta = ReportMeta {
        provider: provider.to_string(),
        method,
    };
    let evaluations: Vec<PairEvaluation> = outcomes.iter().map(|o| o.evaluation.clone()).collect();
    let requests: Vec<RequestLog> = outcomes.iter().map(|o| o.log.clone()).collect();
    let attempted: Vec<&RequestLog> = requests.iter().filter(|r| r.calls > 0).collect();
    let degraded = !attempted.is_empty()
        && attempted.iter().all(|r| {
            matches!(
                r.statuses.first(),
                Some(GenerationStatus::ProviderError | GenerationStatus::Timeout)
            )
        })
        && evaluations.iter().all(|e| !e.is_evaluated());
    let report = match metrics::aggregate(&evaluations, &meta) {
        Ok(r) => r,
        Err(_) => RunReport::empty(&meta, evaluations.len(), degraded),
    };
    if degraded {
        tracing::warn!(provider, %method, "every request failed; report marked degraded");
    }
    SeriesResult {
        provider: provider.to_string(),
        method,
        report,
        evaluations,
        requests,
    }
}

/// Runs `spec` on already-sampled pairs. Providers run concurrently, each
/// under its own in-flight limit. Results are ordered by provider, then
/// method, as listed in the spec.
pub fn run_on_pairs(
    spec: &RunSpec,
    pairs: &[LeveledPair],
    train: &[LeveledPair],
    providers: &[Arc<dyn Provider>],
    env: &BenchEnv<'_>,
) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    if pairs.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    if providers.len() != spec.providers.len() {
        return Err(HarnessError::InvalidSpec(format!(
            "{} providers supplied for {} configured",
            providers.len(),
            spec.providers.len()
        )));
    }
    let started_at = now();
    let items: Vec<WorkItem<'_>> = pairs
        .iter()
        .flat_map(|pair| spec.methods.iter().map(move |&method| WorkItem { pair, method }))
        .collect();

    let per_provider: Vec<Result<Vec<ItemOutcome>, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = providers
            .iter()
            .map(|p| {
                let items = &items;
                scope.spawn(move || run_provider(env, spec, p.as_ref(), items, train))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("provider worker panicked"))
            .collect()
    });

    let mut series = Vec::new();
    let mut new_candidates = 0;
    for (provider, outcomes) in providers.iter().zip(per_provider) {
        let outcomes = outcomes?;
        new_candidates += outcomes.iter().map(|o| o.new_candidates).sum::<usize>();
        for &method in &spec.methods {
            let of_method: Vec<&ItemOutcome> = items
                .iter()
                .zip(&outcomes)
                .filter(|(it, _)| it.method == method)
                .map(|(_, o)| o)
                .collect();
            series.push(summarize(provider.name(), method, of_method));
        }
    }
    env.bank.write_index()?;
    Ok(RunRecord {
        run_id: spec.run_id.clone(),
        spec: spec.clone(),
        started_at,
        finished_at: now(),
        sample: pairs.iter().map(|p| p.pair_id.clone()).collect(),
        series,
        new_candidates,
    })
}

/// Samples the spec's split and runs every provider and method over it.
pub fn run_benchmark(
    spec: &RunSpec,
    corpus: &BenchCorpus,
    providers: &[Arc<dyn Provider>],
    env: &BenchEnv<'_>,
) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    let sample = sample_pairs(corpus.split(spec.split), spec.sample_size, spec.seed)?;
    run_on_pairs(spec, &sample, &corpus.train, providers, env)
}

/// Directory of persisted run records, one subdirectory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Writes `run.json`, `report.csv` and `scatter.csv`.
    pub fn save(&self, record: &RunRecord) -> Result<PathBuf, HarnessError> {
        let dir = self.run_dir(&record.run_id);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{RUN_RECORD}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
        fs::rename(&tmp, dir.join(RUN_RECORD))?;
        metrics::write_reports_csv(&record.reports(), File::create(dir.join("report.csv"))?)?;
        write_scatter_csv(&export_scatter(record), File::create(dir.join("scatter.csv"))?)?;
        Ok(dir)
    }

    pub fn load(&self, run_id: &str) -> Result<RunRecord, HarnessError> {
        let path = self.run_dir(run_id).join(RUN_RECORD);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(HarnessError::UnknownRun(run_id.into())),
            Err(e) => return Err(e.into()),
        };
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Ids of all saved runs, sorted.
    pub fn list(&self) -> Result<Vec<String>, HarnessError> {
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if entry.path().join(RUN_RECORD).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

// ---------------------------------------------------------------------------
// Scatter export

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub pair_id: String,
    pub source: f64,
    pub intended: f64,
    pub resulting: f64,
    pub intended_shift: f64,
    pub resulting_shift: f64,
    #[serde(rename = "match")]
    pub is_match: bool,
}

impl ScatterPoint {
    pub fn in_band(&self) -> bool {
        (self.resulting - self.intended).abs() <= MATCH_WINDOW
    }

    /// Both shifts have the same sign (first or third quadrant).
    pub fn right_direction(&self) -> bool {
        self.intended_shift * self.resulting_shift > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSeries {
    pub provider: String,
    pub method: PromptMethod,
    pub points: Vec<ScatterPoint>,
}

/// One point per evaluated pair of each series.
pub fn export_scatter(record: &RunRecord) -> Vec<ScatterSeries> {
    record
        .series
        .iter()
        .map(|s| ScatterSeries {
            provider: s.provider.clone(),
            method: s.method,
            points: s
                .evaluations
                .iter()
                .filter(|e| e.is_evaluated())
                .filter_map(|e| {
                    let resulting = e.resulting_score?;
                    Some(ScatterPoint {
                        pair_id: e.pair_id.clone(),
                        source: e.source_score,
                        intended: e.intended_score,
                        resulting,
                        intended_shift: e.intended_score - e.source_score,
                        resulting_shift: resulting - e.source_score,
                        is_match: (resulting - e.intended_score).abs() <= MATCH_WINDOW,
                    })
                })
                .collect(),
        })
        .collect()
}

pub const SCATTER_COLUMNS: [&str; 9] = [
    "provider",
    "method",
    "pair_id",
    "source",
    "intended",
    "resulting",
    "intended_shift",
    "resulting_shift",
    "match",
];

pub fn write_scatter_csv<W: Write>(series: &[ScatterSeries], mut w: W) -> io::Result<()> {
    writeln!(w, "{}", SCATTER_COLUMNS.join(","))?;
    for s in series {
        for p in &s.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                metrics::csv_field(&s.provider),
                s.method,
                metrics::csv_field(&p.pair_id),
                p.source,
                p.intended,
                p.resulting,
                p.intended_shift,
                p.resulting_shift,
                p.is_match
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterKind {
    /// Resulting against intended score, with the match band.
    Score,
    /// Resulting shift against intended shift, both relative to the source.
    Shift,
}

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 48.0;

/// Minimal standalone SVG rendering of one series.
pub fn scatter_svg(series: &ScatterSeries, kind: ScatterKind) -> String {
    let xy: Vec<(f64, f64, bool)> = series
        .points
        .iter()
        .map(|p| match kind {
            ScatterKind::Score => (p.intended, p.resulting, p.is_match),
            ScatterKind::Shift => (p.intended_shift, p.resulting_shift, p.right_direction()),
        })
        .collect();
    let (lo, hi) = match kind {
        ScatterKind::Score => (0.0, 2000.0),
        ScatterKind::Shift => {
            let m = xy
                .iter()
                .flat_map(|&(x, y, _)| [x.abs(), y.abs()])
                .fold(100.0_f64, f64::max);
            let m = (m / 100.0).ceil() * 100.0;
            (-m, m)
        }
    };
    let plot = SVG_SIZE - 2.0 * SVG_MARGIN;
    let px = |v: f64| SVG_MARGIN + (v - lo) / (hi - lo) * plot;
    let py = |v: f64| SVG_SIZE - SVG_MARGIN - (v - lo) / (hi - lo) * plot;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n"
    ));
    s.push_str(&format!(
        "<title>{} {} ({})</title>\n",
        xml_escape(&series.provider),
        series.method,
        match kind {
            ScatterKind::Score => "score",
            ScatterKind::Shift => "shift",
        }
    ));
    s.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"#888\"/>\n",
        m = SVG_MARGIN
    ));
    match kind {
        ScatterKind::Score => {
            let w = MATCH_WINDOW;
            s.push_str(&format!(
                "<polygon class=\"band\" points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"#cde\" fill-opacity=\"0.6\"/>\n",
                px(lo), py(lo + w),
                px(hi - w), py(hi),
                px(hi), py(hi - w),
                px(lo + w), py(lo),
            ));
        }
        ScatterKind::Shift => {
            s.push_str(&format!(
                "<line class=\"axis\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888\"/>\n",
                px(0.0), py(lo), px(0.0), py(hi)
            ));
            s.push_str(&format!(
                "<line class=\"axis\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888\"/>\n",
                px(lo), py(0.0), px(hi), py(0.0)
            ));
        }
    }
    s.push_str(&format!(
        "<line class=\"diagonal\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>\n",
        px(lo), py(lo), px(hi), py(hi)
    ));
    for (x, y, good) in xy {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
            px(x.clamp(lo, hi)),
            py(y.clamp(lo, hi)),
            if good { "#2a7" } else { "#c33" }
        ));
    }
    let (xl, yl) = match kind {
        ScatterKind::Score => ("intended score", "resulting score"),
        ScatterKind::Shift => ("intended shift", "resulting shift"),
    };
    s.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"12\">{xl}</text>\n",
        SVG_SIZE / 2.0,
        SVG_SIZE - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {:.0})\">{yl}</text>\n",
        SVG_SIZE / 2.0,
        SVG_SIZE / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
