//! Monotone sentence alignment, edit dispersion and sentence-level merging.
//!
//! Alignment is a global dynamic program over sentence indices. Allowed link
//! shapes and their values:
//!
//! - 1-1: token-set Dice similarity of the two sentences;
//! - 1-2 and 2-1: Dice of the single sentence against the union of the pair,
//!   minus [`GAP_PENALTY`] for the extra sentence;
//! - 1-0 and 0-1: minus [`GAP_PENALTY`].
//!
//! The program maximizes the summed link values. Charging the penalty on
//! merged shapes keeps a removed sentence from being absorbed into a
//! neighbour's 2-1 link.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::levenshtein;
use crate::textproc::{self, Sentence, TokenizedText};

/// Cost of an unmatched sentence, as a fraction of the best possible link
/// similarity (Dice tops out at 1).
pub const GAP_PENALTY: f64 = 0.35;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("edit dispersion needs at least 2 source sentences, got {0}")]
    TooFewSentences(usize),
    #[error("replacement refers to unknown link {0}")]
    UnknownLink(usize),
    #[error("link {0} is replaced more than once")]
    OverlappingReplacements(usize),
    #[error("replacements for links {0:?} overlap locked spans")]
    LockViolation(Vec<usize>),
    #[error("invalid lock span {start}..{end}: {reason}")]
    InvalidLock {
        start: usize,
        end: usize,
        reason: String,
    },
    #[error("alignment does not match the texts ({0})")]
    StaleAlignment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkLabel {
    Unchanged,
    Modified,
    Inserted,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Source (base) sentence indices, ascending; empty for insertions.
    pub source: Vec<usize>,
    /// Candidate sentence indices, ascending; empty for deletions.
    pub candidate: Vec<usize>,
    pub label: LinkLabel,
    /// Token-level Levenshtein distance between the two sides.
    pub edit_distance: usize,
    /// Dice similarity of the two sides; 0 for insertions and deletions.
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub links: Vec<Link>,
    pub source_sentences: usize,
    pub candidate_sentences: usize,
    /// Summed link values (see module docs).
    pub score: f64,
    pub similarity_matrix_digest: String,
}

impl AlignmentMap {
    pub fn count(&self, label: LinkLabel) -> usize {
        self.links.iter().filter(|l| l.label == label).count()
    }
}

fn token_set<'a>(sentences: &[&'a Sentence]) -> BTreeSet<&'a str> {
    sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect()
}

/// Dice coefficient of two token sets; 1 for two empty sets.
pub fn dice(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    OneOne,
    OneTwo,
    TwoOne,
    OneZero,
    ZeroOne,
}

impl Shape {
    const ALL: [Shape; 5] = [
        Shape::OneOne,
        Shape::OneTwo,
        Shape::TwoOne,
        Shape::OneZero,
        Shape::ZeroOne,
    ];

    fn steps(self) -> (usize, usize) {
        match self {
            Shape::OneOne => (1, 1),
            Shape::OneTwo => (1, 2),
            Shape::TwoOne => (2, 1),
            Shape::OneZero => (1, 0),
            Shape::ZeroOne => (0, 1),
        }
    }
}

/// Dice similarity of source `[i0, i1)` against candidate `[j0, j1)`.
fn link_similarity(a: &TokenizedText, b: &TokenizedText, i0: usize, i1: usize, j0: usize, j1: usize) -> f64 {
    let sa: Vec<&Sentence> = a.sentences[i0..i1].iter().collect();
    let sb: Vec<&Sentence> = b.sentences[j0..j1].iter().collect();
    dice(&token_set(&sa), &token_set(&sb))
}

/// DP value of a link of the given shape ending at `(i, j)`.
fn link_value(a: &TokenizedText, b: &TokenizedText, shape: Shape, i: usize, j: usize) -> f64 {
    let (di, dj) = shape.steps();
    match shape {
        Shape::OneZero | Shape::ZeroOne => -GAP_PENALTY,
        Shape::OneOne => link_similarity(a, b, i - di, i, j - dj, j),
        Shape::OneTwo | Shape::TwoOne => link_similarity(a, b, i - di, i, j - dj, j) - GAP_PENALTY,
    }
}

fn side_tokens(t: &TokenizedText, range: std::ops::Range<usize>) -> Vec<&str> {
    t.sentences[range]
        .iter()
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect()
}

fn similarity_digest(a: &TokenizedText, b: &TokenizedText) -> String {
    let mut buf = format!("{}x{}\n", a.sentence_count(), b.sentence_count());
    for sa in &a.sentences {
        let ta = token_set(&[sa]);
        let row: Vec<String> = b
            .sentences
            .iter()
            .map(|sb| format!("{:.12}", dice(&ta, &token_set(&[sb]))))
            .collect();
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    crate::sha256_hex(buf)[..16].to_string()
}

pub fn align(a: &TokenizedText, b: &TokenizedText) -> AlignmentMap {
    let n = a.sentence_count();
    let m = b.sentence_count();
    let mut best = vec![vec![f64::NEG_INFINITY; m + 1]; n + 1];
    let mut back: Vec<Vec<Option<Shape>>> = vec![vec![None; m + 1]; n + 1];
    best[0][0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            for shape in Shape::ALL {
                let (di, dj) = shape.steps();
                if di > i || dj > j {
                    continue;
                }
                let prev = best[i - di][j - dj];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let v = prev + link_value(a, b, shape, i, j);
                if v > best[i][j] {
                    best[i][j] = v;
                    back[i][j] = Some(shape);
                }
            }
        }
    }

    let mut links = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let shape = back[i][j].expect("every cell is reachable");
        let (di, dj) = shape.steps();
        let (i0, j0) = (i - di, j - dj);
        let src = side_tokens(a, i0..i);
        let cand = side_tokens(b, j0..j);
        let edit_distance = levenshtein(&src, &cand);
        let label = match shape {
            Shape::OneZero => LinkLabel::Deleted,
            Shape::ZeroOne => LinkLabel::Inserted,
            _ if edit_distance == 0 => LinkLabel::Unchanged,
            _ => LinkLabel::Modified,
        };
        let similarity = if di == 0 || dj == 0 {
            0.0
        } else {
            link_similarity(a, b, i0, i, j0, j)
        };
        links.push(Link {
            source: (i0..i).collect(),
            candidate: (j0..j).collect(),
            label,
            edit_distance,
            similarity,
        });
        i = i0;
        j = j0;
    }
    links.reverse();
    AlignmentMap {
        links,
        source_sentences: n,
        candidate_sentences: m,
        score: best[n][m],
        similarity_matrix_digest: similarity_digest(a, b),
    }
}

pub fn align_texts(base: &str, candidate: &str) -> AlignmentMap {
    align(&textproc::tokenize(base), &textproc::tokenize(candidate))
}

/// Gini coefficient, 0 for an all-zero (or empty) sample.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    // sum_i sum_j |x_i - x_j| = 2 * sum_k (2k - n + 1) x_(k) over sorted x
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| (2.0 * k as f64 - n as f64 + 1.0) * x)
        .sum();
    weighted / (n as f64 * total)
}

/// Per-source-sentence edit distances. Insertions count toward the nearest
/// preceding source sentence (the first one if nothing precedes); a link
/// spanning two source sentences splits its distance evenly.
pub fn per_sentence_edits(map: &AlignmentMap) -> Vec<f64> {
    let mut edits = vec![0.0; map.source_sentences];
    if edits.is_empty() {
        return edits;
    }
    let mut last_source = None;
    for link in &map.links {
        if link.source.is_empty() {
            edits[last_source.unwrap_or(0)] += link.edit_distance as f64;
        } else {
            let share = link.edit_distance as f64 / link.source.len() as f64;
            for &s in &link.source {
                edits[s] += share;
            }
            last_source = link.source.last().copied();
        }
    }
    edits
}

/// Gini coefficient of per-source-sentence edit distances: 0 when edits are
/// spread evenly, approaching 1 when concentrated in one sentence.
pub fn edit_dispersion(map: &AlignmentMap) -> Result<f64, AlignError> {
    if map.source_sentences < 2 {
        return Err(AlignError::TooFewSentences(map.source_sentences));
    }
    Ok(gini(&per_sentence_edits(map)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub reason: String,
}

impl LockSpan {
    pub fn new(start: usize, end: usize, reason: &str) -> Self {
        Self {
            start,
            end,
            reason: reason.to_string(),
        }
    }

    fn blocks(&self, start: usize, end: usize) -> bool {
        if start == end {
            self.start < start && start < self.end
        } else {
            start < self.end && self.start < end
        }
    }
}

/// Checks that spans are non-empty, in bounds, on character boundaries and
/// pairwise disjoint.
pub fn validate_locks(text: &str, locks: &[LockSpan]) -> Result<(), AlignError> {
    let invalid = |l: &LockSpan, reason: &str| AlignError::InvalidLock {
        start: l.start,
        end: l.end,
        reason: reason.to_string(),
    };
    let mut sorted: Vec<&LockSpan> = locks.iter().collect();
    sorted.sort_by_key(|l| (l.start, l.end));
    for l in &sorted {
        if l.start >= l.end {
            return Err(invalid(l, "empty or reversed range"));
        }
        if l.end > text.len() {
            return Err(invalid(l, "out of bounds"));
        }
        if !text.is_char_boundary(l.start) || !text.is_char_boundary(l.end) {
            return Err(invalid(l, "not on a character boundary"));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(invalid(w[1], "overlaps another lock"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Base,
    Candidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub link: usize,
    pub side: Side,
}

struct Edit {
    link: usize,
    start: usize,
    end: usize,
    text: String,
}

fn span_text<'a>(text: &'a str, t: &TokenizedText, idx: &[usize]) -> &'a str {
    match (idx.first(), idx.last()) {
        (Some(&f), Some(&l)) => &text[t.sentences[f].start..t.sentences[l].end],
        _ => "",
    }
}

/// Substitutes chosen candidate sentences into `base`.
///
/// `map` must be the alignment of `base` against `candidate`. Replacements
/// choosing [`Side::Base`] are no-ops. If any replacement touches a locked
/// span the whole merge fails and nothing is applied.
pub fn merge(
    base: &str,
    candidate: &str,
    map: &AlignmentMap,
    replacements: &[Replacement],
    locks: &[LockSpan],
) -> Result<String, AlignError> {
    validate_locks(base, locks)?;
    let bt = textproc::tokenize(base);
    let ct = textproc::tokenize(candidate);
    if bt.sentence_count() != map.source_sentences || ct.sentence_count() != map.candidate_sentences {
        return Err(AlignError::StaleAlignment(format!(
            "map is {}x{}, texts are {}x{}",
            map.source_sentences,
            map.candidate_sentences,
            bt.sentence_count(),
            ct.sentence_count()
        )));
    }

    let mut seen = BTreeSet::new();
    for r in replacements {
        if r.link >= map.links.len() {
            return Err(AlignError::UnknownLink(r.link));
        }
        if !seen.insert(r.link) {
            return Err(AlignError::OverlappingReplacements(r.link));
        }
    }

    let mut edits = Vec::new();
    for r in replacements.iter().filter(|r| r.side == Side::Candidate) {
        let link = &map.links[r.link];
        let (start, end) = if link.source.is_empty() {
            let prev = map.links[..r.link]
                .iter()
                .rev()
                .find_map(|l| l.source.last().copied());
            let at = prev.map(|s| bt.sentences[s].end).unwrap_or(0);
            (at, at)
        } else {
            (
                bt.sentences[link.source[0]].start,
                bt.sentences[*link.source.last().unwrap()].end,
            )
        };
        edits.push(Edit {
            link: r.link,
            start,
            end,
            text: span_text(candidate, &ct, &link.candidate).to_string(),
        });
    }

    let violations: Vec<usize> = edits
        .iter()
        .filter(|e| locks.iter().any(|l| l.blocks(e.start, e.end)))
        .map(|e| e.link)
        .collect();
    if !violations.is_empty() {
        return Err(AlignError::LockViolation(violations));
    }

    edits.sort_by_key(|e| std::cmp::Reverse((e.start, e.link)));
    let mut out = base.to_string();
    for e in edits {
        if e.start == e.end {
            if e.text.is_empty() {
                continue;
            }
            let insertion = if e.start == 0 {
                format!("{} ", e.text)
            } else {
                format!(" {}", e.text)
            };
            out.insert_str(e.start, &insertion);
        } else if e.text.is_empty() {
            let (mut s, mut t) = (e.start, e.end);
            let trailing = out[t..].len() - out[t..].trim_start().len();
            if t + trailing < out.len() {
                t += trailing;
            } else {
                s -= out[..s].len() - out[..s].trim_end().len();
                t = out.len();
            }
            out.replace_range(s..t, "");
        } else {
            out.replace_range(e.start..e.end, &e.text);
        }
    }
    Ok(out)
}
