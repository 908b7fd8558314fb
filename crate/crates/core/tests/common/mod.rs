//! Independent oracles and synthetic fixtures shared by the integration
//! tests and the acceptance suite. Nothing here calls into the code under
//! test except for the RNG and plain data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use leveler_core::corpus::{Article, LeveledPair};
use leveler_core::rng::SplitMix64;

/// Words that are not on the abbreviation list and contain no apostrophes,
/// so a generated text's tokens are exactly its lowercased words.
pub const VOCAB: [&str; 24] = [
    "apple", "river", "stone", "cloud", "garden", "window", "bright", "quiet", "green", "yellow", "forest",
    "market", "teacher", "simple", "rapid", "ancient", "story", "light", "water", "paper", "little", "large",
    "happy", "early",
];

pub fn pick<'a>(rng: &mut SplitMix64, items: &[&'a str]) -> &'a str {
    items[rng.next_below(items.len() as u64) as usize]
}

/// A sentence of `len` vocabulary words: capitalized, ending in a period.
pub fn sentence(rng: &mut SplitMix64, len: usize, vocab: &[&str]) -> (String, Vec<String>) {
    let words: Vec<String> = (0..len).map(|_| pick(rng, vocab).to_string()).collect();
    let mut text = words.join(" ");
    let first = text[..1].to_uppercase();
    text.replace_range(..1, &first);
    text.push('.');
    (text, words)
}

pub fn join_sentences(sentences: &[String]) -> String {
    sentences.join(" ")
}

// ---------------------------------------------------------------------------
// Edit distance

/// Top-down memoized Levenshtein.
pub fn oracle_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

// ---------------------------------------------------------------------------
// Exemplar selection

/// Qualifying pairs by repeated minimum extraction on (length, pair_id).
/// `lengths` maps pair ids to their known token counts.
pub fn oracle_select_shots(
    pair: &LeveledPair,
    train: &[LeveledPair],
    lengths: &HashMap<String, usize>,
    n: usize,
    window: f64,
) -> Vec<String> {
    let mut pool: Vec<&LeveledPair> = train
        .iter()
        .filter(|t| t.pair_id != pair.pair_id)
        .filter(|t| {
            let ds = t.source_score - pair.source_score;
            let dt = t.target_score - pair.target_score;
            -window <= ds && ds <= window && -window <= dt && dt <= window
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < n && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (li, lb) = (lengths[&pool[i].pair_id], lengths[&pool[best].pair_id]);
            if li < lb || (li == lb && pool[i].pair_id < pool[best].pair_id) {
                best = i;
            }
        }
        out.push(pool.swap_remove(best).pair_id.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// Sentence alignment

pub const GAP: f64 = 0.35;

pub fn oracle_dice(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.iter().filter(|w| b.contains(*w)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

fn set_of(sents: &[Vec<String>], range: std::ops::Range<usize>) -> BTreeSet<&str> {
    sents[range].iter().flatten().map(String::as_str).collect()
}

/// Value of a link covering `a[i0..i1]` and `b[j0..j1]`.
pub fn oracle_link_value(a: &[Vec<String>], b: &[Vec<String>], i0: usize, i1: usize, j0: usize, j1: usize) -> f64 {
    let (n, m) = (i1 - i0, j1 - j0);
    match (n, m) {
        (1, 0) | (0, 1) => -GAP,
        (1, 1) => oracle_dice(&set_of(a, i0..i1), &set_of(b, j0..j1)),
        (1, 2) | (2, 1) => oracle_dice(&set_of(a, i0..i1), &set_of(b, j0..j1)) - GAP,
        _ => panic!("shape {n}-{m} is not allowed"),
    }
}

/// Best total value over every monotone segmentation, by exhaustive search.
pub fn oracle_best_alignment(a: &[Vec<String>], b: &[Vec<String>]) -> f64 {
    fn go(a: &[Vec<String>], b: &[Vec<String>], i: usize, j: usize) -> f64 {
        if i == a.len() && j == b.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for (di, dj) in [(1, 1), (1, 2), (2, 1), (1, 0), (0, 1)] {
            if i + di <= a.len() && j + dj <= b.len() {
                let v = oracle_link_value(a, b, i, i + di, j, j + dj) + go(a, b, i + di, j + dj);
                best = best.max(v);
            }
        }
        best
    }
    go(a, b, 0, 0)
}

// ---------------------------------------------------------------------------
// Calibration

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Least squares through the normal equations, solved by Cramer's rule.
pub fn oracle_least_squares(rows: &[[f64; 3]], ys: &[f64]) -> [f64; 3] {
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (r, y) in rows.iter().zip(ys) {
        for i in 0..3 {
            xty[i] += r[i] * y;
            for j in 0..3 {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    let d = det3(xtx);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = xtx;
        for i in 0..3 {
            mk[i][k] = xty[i];
        }
        *o = det3(mk) / d;
    }
    out
}

/// Features of a text made of known word lists, with smoothing 0.5.
pub fn oracle_features(sentences: &[Vec<String>], counts: &HashMap<String, u64>, total: u64) -> (f64, f64) {
    let tokens: Vec<&String> = sentences.iter().flatten().collect();
    let msl = tokens.len() as f64 / sentences.len() as f64;
    let mlwf = tokens
        .iter()
        .map(|w| ((counts.get(*w).copied().unwrap_or(0) as f64 + 0.5) / (total as f64 + 0.5)).log10())
        .sum::<f64>()
        / tokens.len() as f64;
    (msl, mlwf)
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Text at a difficulty level: higher levels use longer sentences and rarer
/// words.
pub fn leveled_text(rng: &mut SplitMix64, level: usize) -> String {
    let easy = &VOCAB[..8];
    let hard = &VOCAB[8..];
    let (len, vocab): (usize, &[&str]) = match level {
        0 => (4, easy),
        1 => (8, &VOCAB[..]),
        _ => (14, hard),
    };
    let n = 3 + rng.next_below(3) as usize;
    let sentences: Vec<String> = (0..n)
        .map(|_| {
            let k = len + rng.next_below(3) as usize;
            sentence(rng, k, vocab).0
        })
        .collect();
    join_sentences(&sentences)
}

/// `sets` topic sets of `per_set` articles, scored with `score`.
pub fn synthetic_articles(sets: u32, per_set: u32, seed: u64, score: impl Fn(&str) -> f64) -> Vec<Article> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();
    for set_id in 1..=sets {
        for article_id in 1..=per_set {
            let text = leveled_text(&mut rng, (article_id - 1) as usize);
            out.push(Article {
                set_id,
                article_id,
                title: format!("Topic {set_id}"),
                score: score(&text),
                text,
            });
        }
    }
    out
}
