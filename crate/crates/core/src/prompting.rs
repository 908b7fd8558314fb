//! Few-shot exemplar selection and prompt rendering.
//!
//! Templates are plain text files with `{SLOT}` placeholders
//! (`templates/*.txt`). The few-shot prompt is an intro section, one example
//! section per shot, then a task section, separated by blank lines.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LeveledPair;
use crate::textproc;

/// Default qualification window in score points.
pub const DEFAULT_WINDOW: f64 = 50.0;

const ZERO_SHOT: &str = include_str!("../templates/zero_shot.txt");
const FEW_SHOT_INTRO: &str = include_str!("../templates/few_shot_intro.txt");
const FEW_SHOT_EXAMPLE: &str = include_str!("../templates/few_shot_example.txt");
const FEW_SHOT_TASK: &str = include_str!("../templates/few_shot_task.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("use zero-shot renderer")]
    NoShots,
    #[error("qualification window must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        source: std::io::Error,
    },
}

/// Zero-shot or few-shot with a shot count. Serialized as `"zero-shot"` or
/// `"few-shot:N"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PromptMethod {
    ZeroShot,
    FewShot(usize),
}

impl PromptMethod {
    pub fn n_shots(self) -> usize {
        match self {
            PromptMethod::ZeroShot => 0,
            PromptMethod::FewShot(n) => n,
        }
    }

    /// Label used in report tables.
    pub fn family(self) -> &'static str {
        match self {
            PromptMethod::ZeroShot => "Zero-shot",
            PromptMethod::FewShot(_) => "Few-shot",
        }
    }
}

impl fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptMethod::ZeroShot => f.write_str("zero-shot"),
            PromptMethod::FewShot(n) => write!(f, "few-shot:{n}"),
        }
    }
}

impl std::str::FromStr for PromptMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero-shot" {
            return Ok(PromptMethod::ZeroShot);
        }
        let n = s
            .strip_prefix("few-shot:")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| format!("unknown method {s:?}; expected zero-shot or few-shot:N"))?;
        if n == 0 {
            return Err("few-shot needs at least one shot".into());
        }
        Ok(PromptMethod::FewShot(n))
    }
}

impl TryFrom<String> for PromptMethod {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PromptMethod> for String {
    fn from(m: PromptMethod) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotOrdering {
    #[default]
    ShortestFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSelectionPolicy {
    pub window: f64,
    pub n_shots: usize,
    #[serde(default)]
    pub ordering: ShotOrdering,
}

impl ShotSelectionPolicy {
    pub fn new(n_shots: usize) -> Self {
        Self {
            window: DEFAULT_WINDOW,
            n_shots,
            ordering: ShotOrdering::ShortestFirst,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(PromptError::InvalidWindow(self.window));
        }
        if !matches!(self.n_shots, 0 | 1 | 3 | 5) {
            tracing::warn!(n_shots = self.n_shots, "unusual shot count; 0, 1, 3 or 5 are typical");
        }
        Ok(())
    }
}

/// A training pair qualifies when both its source and target scores lie
/// within `window` of the pair's (inclusive).
pub fn qualifies(pair: &LeveledPair, candidate: &LeveledPair, window: f64) -> bool {
    (candidate.source_score - pair.source_score).abs() <= window
        && (candidate.target_score - pair.target_score).abs() <= window
}

/// Length used to rank exemplars: tokens in source plus target.
pub fn pair_token_length(pair: &LeveledPair) -> usize {
    textproc::word_tokens(&pair.source_text).len() + textproc::word_tokens(&pair.target_text).len()
}

/// Picks up to `n_shots` qualifying training pairs, shortest first, ties
/// broken by ascending `pair_id`.
pub fn select_shots<'a>(
    pair: &LeveledPair,
    train: &'a [LeveledPair],
    policy: &ShotSelectionPolicy,
) -> Result<Vec<&'a LeveledPair>, PromptError> {
    policy.validate()?;
    if policy.n_shots == 0 {
        return Ok(Vec::new());
    }
    let mut qualifying: Vec<(usize, &LeveledPair)> = train
        .iter()
        .filter(|t| t.pair_id != pair.pair_id && qualifies(pair, t, policy.window))
        .map(|t| (pair_token_length(t), t))
        .collect();
    qualifying.sort_by(|a, b| match a.0.cmp(&b.0) {
        Ordering::Equal => a.1.pair_id.cmp(&b.1.pair_id),
        other => other,
    });
    if qualifying.len() < policy.n_shots {
        tracing::warn!(
            pair_id = %pair.pair_id,
            wanted = policy.n_shots,
            found = qualifying.len(),
            "fewer qualifying exemplars than requested"
        );
    }
    Ok(qualifying
        .into_iter()
        .take(policy.n_shots)
        .map(|(_, p)| p)
        .collect())
}

/// The `{TASK}` slot value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskVerb {
    #[serde(rename = "simplify it")]
    Simplify,
    #[serde(rename = "complicate it")]
    Complicate,
}

impl TaskVerb {
    pub fn for_pair(pair: &LeveledPair) -> Self {
        if pair.target_score < pair.source_score {
            TaskVerb::Simplify
        } else {
            TaskVerb::Complicate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskVerb::Simplify => "simplify it",
            TaskVerb::Complicate => "complicate it",
        }
    }
}

impl fmt::Display for TaskVerb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub rendered_text: String,
    pub shots_used: Vec<String>,
    pub task_verb: TaskVerb,
    pub estimated_tokens: usize,
}

impl PromptBundle {
    pub fn n_shots(&self) -> usize {
        self.shots_used.len()
    }
}

/// Rough token estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Scores are rendered as whole numbers, the way Lexile measures are
/// written.
pub fn format_score(score: f64) -> String {
    format!("{}", score.round() as i64)
}

/// Replaces known `{SLOT}` placeholders in one left-to-right pass, so slot
/// syntax inside substituted text is never expanded.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub zero_shot: String,
    pub intro: String,
    pub example: String,
    pub task: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptTemplates {
    pub fn bundled() -> Self {
        Self {
            zero_shot: strip_final_newline(ZERO_SHOT).to_string(),
            intro: strip_final_newline(FEW_SHOT_INTRO).to_string(),
            example: strip_final_newline(FEW_SHOT_EXAMPLE).to_string(),
            task: strip_final_newline(FEW_SHOT_TASK).to_string(),
        }
    }

    /// Loads `zero_shot.txt`, `few_shot_intro.txt`, `few_shot_example.txt`
    /// and `few_shot_task.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path)
                .map(|s| strip_final_newline(&s).to_string())
                .map_err(|source| PromptError::Template {
                    path: path.display().to_string(),
                    source,
                })
        };
        Ok(Self {
            zero_shot: read("zero_shot.txt")?,
            intro: read("few_shot_intro.txt")?,
            example: read("few_shot_example.txt")?,
            task: read("few_shot_task.txt")?,
        })
    }

    pub fn render_zero_shot(&self, pair: &LeveledPair) -> PromptBundle {
        let verb = TaskVerb::for_pair(pair);
        let src = format_score(pair.source_score);
        let tgt = format_score(pair.target_score);
        let text = fill(
            &self.zero_shot,
            &[
                ("SOURCE-TEXT", &pair.source_text),
                ("SOURCE-LEXILE", &src),
                ("TARGET-LEXILE", &tgt),
                ("TASK", verb.as_str()),
            ],
        );
        bundle(text, Vec::new(), verb)
    }

    pub fn render_few_shot(
        &self,
        pair: &LeveledPair,
        shots: &[&LeveledPair],
    ) -> Result<PromptBundle, PromptError> {
        if shots.is_empty() {
            return Err(PromptError::NoShots);
        }
        let verb = TaskVerb::for_pair(pair);
        let mut sections = Vec::with_capacity(shots.len() + 2);
        sections.push(self.intro.clone());
        for shot in shots {
            let src = format_score(shot.source_score);
            let tgt = format_score(shot.target_score);
            sections.push(fill(
                &self.example,
                &[
                    ("SOURCE-TEXT", &shot.source_text),
                    ("SOURCE-LEXILE", &src),
                    ("TARGET-TEXT", &shot.target_text),
                    ("TARGET-LEXILE", &tgt),
                ],
            ));
        }
        let src = format_score(pair.source_score);
        let tgt = format_score(pair.target_score);
        sections.push(fill(
            &self.task,
            &[
                ("SOURCE-TEXT", &pair.source_text),
                ("SOURCE-LEXILE", &src),
                ("TARGET-LEXILE", &tgt),
                ("TASK", verb.as_str()),
            ],
        ));
        let ids = shots.iter().map(|s| s.pair_id.clone()).collect();
        Ok(bundle(sections.join("\n\n"), ids, verb))
    }
}

fn bundle(rendered_text: String, shots_used: Vec<String>, task_verb: TaskVerb) -> PromptBundle {
    let estimated_tokens = estimate_tokens(&rendered_text);
    PromptBundle {
        rendered_text,
        shots_used,
        task_verb,
        estimated_tokens,
    }
}

pub fn render_zero_shot(pair: &LeveledPair) -> PromptBundle {
    PromptTemplates::bundled().render_zero_shot(pair)
}

pub fn render_few_shot(pair: &LeveledPair, shots: &[&LeveledPair]) -> Result<PromptBundle, PromptError> {
    PromptTemplates::bundled().render_few_shot(pair, shots)
}
