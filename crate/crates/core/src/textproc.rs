//! Tokenization, sentence segmentation and word-frequency tables.
//!
//! Everything here is deterministic and allocation-light; all other modules
//! build on [`tokenize`].
//!
//! Segmentation rule: a sentence ends at a run of `.`, `!` or `?` (plus any
//! closing quotes or brackets) that is followed either by end of text or by
//! whitespace and then an uppercase letter. A lone `.` after a word from the
//! abbreviation list (`data/abbreviations.txt`) never ends a sentence.
//!
//! Tokens are maximal runs of letters, digits and apostrophes, lowercased,
//! with leading and trailing apostrophes trimmed. Hyphens, punctuation and
//! whitespace separate tokens and are not part of any token.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default additive smoothing for unseen words.
pub const DEFAULT_SMOOTHING: f64 = 0.5;

const ABBREVIATIONS_DATA: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("empty text")]
    EmptyText,
    #[error("smoothing count must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("frequency table parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

/// One segmented sentence: its tokens and the byte span it covers in the
/// original string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedText {
    pub sentences: Vec<Sentence>,
    pub token_count: usize,
}

impl TokenizedText {
    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }

    /// Sentence texts joined by single spaces.
    pub fn reconstruct(&self, source: &str) -> String {
        self.sentences
            .iter()
            .map(|s| s.text(source))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn abbreviations() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATIONS_DATA
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | ')' | ']' | '}' | '\u{201D}' | '\u{2019}' | '\u{00BB}'
    )
}

/// Splits `text` into lowercased word tokens, ignoring sentence structure.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    push_tokens(text, &mut out);
    out
}

fn push_tokens(text: &str, out: &mut Vec<String>) {
    for run in text.split(|c: char| !is_token_char(c)) {
        let trimmed = run.trim_matches(|c| c == '\'' || c == '\u{2019}');
        if trimmed.is_empty() {
            continue;
        }
        let token: String = trimmed
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| if c == '\u{2019}' { '\'' } else { c })
            .collect();
        out.push(token);
    }
}

/// True when the word ending right before byte `dot` is on the
/// abbreviation list.
fn ends_with_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .char_indices()
        .rev()
        .take_while(|&(_, c)| c.is_alphanumeric() || c == '.')
        .last()
        .map(|(i, _)| i);
    let Some(start) = word_start else {
        return false;
    };
    let word = before[start..].to_lowercase();
    abbreviations().contains(word.as_str())
}

/// Byte offsets `(start, end)` of each sentence, before dropping token-free
/// fragments.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |k: usize| if k < n { chars[k].0 } else { text.len() };

    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut k = 0;
    while k < n {
        let c = chars[k].1;
        if start.is_none() {
            if c.is_whitespace() {
                k += 1;
                continue;
            }
            start = Some(k);
        }
        if !is_terminal(c) {
            k += 1;
            continue;
        }
        let run_start = k;
        let mut j = k;
        while j < n && is_terminal(chars[j].1) {
            j += 1;
        }
        while j < n && is_closer(chars[j].1) {
            j += 1;
        }
        let mut after = j;
        while after < n && chars[after].1.is_whitespace() {
            after += 1;
        }
        let boundary = if j == n {
            true
        } else if after > j {
            after == n || chars[after].1.is_uppercase()
        } else {
            false
        };
        let single_dot = c == '.' && (run_start + 1 == n || !is_terminal(chars[run_start + 1].1));
        if boundary && !(single_dot && ends_with_abbreviation(text, byte_at(run_start))) {
            spans.push((byte_at(start.unwrap()), byte_at(j)));
            start = None;
            k = j;
        } else {
            k = j.max(k + 1);
        }
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        if end > byte_at(s) {
            spans.push((byte_at(s), end));
        }
    }
    spans
}

/// Segments `text` into sentences of lowercased tokens.
///
/// Fragments that contain no tokens (for example a stray `...`) are not
/// reported as sentences; their characters stay in the gaps between spans.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut sentences = Vec::new();
    let mut token_count = 0;
    for (start, end) in sentence_spans(text) {
        let mut tokens = Vec::new();
        push_tokens(&text[start..end], &mut tokens);
        if tokens.is_empty() {
            continue;
        }
        token_count += tokens.len();
        sentences.push(Sentence { tokens, start, end });
    }
    TokenizedText {
        sentences,
        token_count,
    }
}

pub fn mean_sentence_length(t: &TokenizedText) -> Result<f64, TextError> {
    if t.sentences.is_empty() {
        return Err(TextError::EmptyText);
    }
    Ok(t.token_count as f64 / t.sentences.len() as f64)
}

/// Mean over tokens of `log10` of the smoothed relative frequency. Always
/// `<= 0`.
pub fn mean_log_word_frequency(t: &TokenizedText, f: &FrequencyTable) -> Result<f64, TextError> {
    if t.token_count == 0 {
        return Err(TextError::EmptyText);
    }
    let sum: f64 = t.tokens().map(|w| f.log_frequency(w)).sum();
    Ok(sum / t.token_count as f64)
}

/// Word counts with additive smoothing for unseen words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    entries: BTreeMap<String, u64>,
    total: u64,
    smoothing: f64,
}

impl FrequencyTable {
    pub fn new(smoothing: f64) -> Result<Self, TextError> {
        if !(smoothing.is_finite() && smoothing > 0.0) {
            return Err(TextError::InvalidSmoothing(smoothing));
        }
        Ok(Self {
            entries: BTreeMap::new(),
            total: 0,
            smoothing,
        })
    }

    pub fn add_text(&mut self, text: &str) {
        for token in word_tokens(text) {
            *self.entries.entry(token).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.entries.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A table with no observations gives every word probability 1.
    pub fn is_degenerate(&self) -> bool {
        self.total == 0
    }

    pub fn relative_frequency(&self, word: &str) -> f64 {
        (self.count(word) as f64 + self.smoothing) / (self.total as f64 + self.smoothing)
    }

    pub fn log_frequency(&self, word: &str) -> f64 {
        self.relative_frequency(word).log10()
    }

    /// Sets the count of one word, adjusting the total.
    pub fn set_count(&mut self, word: &str, count: u64) {
        let old = self.entries.insert(word.to_string(), count).unwrap_or(0);
        self.total = self.total - old + count;
        if count == 0 {
            self.entries.remove(word);
        }
    }

    /// Entries sorted by descending count, ties by word.
    pub fn sorted_entries(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.entries.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Writes the `#total<TAB>N` header and one `word<TAB>count` line per
    /// entry.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#total\t{}", self.total)?;
        for (word, count) in self.sorted_entries() {
            writeln!(w, "{word}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, smoothing: f64) -> Result<Self, TextError> {
        let mut table = Self::new(smoothing)?;
        let mut declared = None;
        for (idx, line) in r.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| TextError::Io(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('\t').ok_or_else(|| TextError::Parse {
                line: lineno,
                message: "expected a tab separator".into(),
            })?;
            let value: u64 = value.trim().parse().map_err(|_| TextError::Parse {
                line: lineno,
                message: format!("bad count {value:?}"),
            })?;
            if key == "#total" {
                declared = Some(value);
                continue;
            }
            if table.entries.insert(key.to_string(), value).is_some() {
                return Err(TextError::Parse {
                    line: lineno,
                    message: format!("duplicate word {key:?}"),
                });
            }
            table.total += value;
        }
        match declared {
            Some(n) if n == table.total => Ok(table),
            Some(n) => Err(TextError::Parse {
                line: 1,
                message: format!("header total {n} does not match summed counts {}", table.total),
            }),
            None => Err(TextError::Parse {
                line: 1,
                message: "missing #total header".into(),
            }),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table is valid UTF-8")
    }

    /// Content digest of the serialized table, used to tie a scorer model to
    /// the table it was fitted with.
    pub fn digest(&self) -> String {
        crate::sha256_hex(self.to_tsv())[..16].to_string()
    }
}

impl fmt::Display for FrequencyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

impl FromStr for FrequencyTable {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::read_from(s.as_bytes(), DEFAULT_SMOOTHING)
    }
}

/// Counts every token of every text.
pub fn build_frequency_table<S: AsRef<str>>(
    texts: &[S],
    smoothing: f64,
) -> Result<FrequencyTable, TextError> {
    let mut table = FrequencyTable::new(smoothing)?;
    for text in texts {
        table.add_text(text.as_ref());
    }
    if table.is_degenerate() {
        tracing::warn!("frequency table built from an empty corpus; every word gets probability 1");
    }
    Ok(table)
}
