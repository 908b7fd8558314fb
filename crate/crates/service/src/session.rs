//! Curator editing sessions: a working text, its locks and a bounded undo
//! history. All operations are synchronous and leave the session untouched
//! on error.

use std::collections::VecDeque;

use leveler_core::alignment::{self, AlignError, AlignmentMap, LockSpan, Replacement};
use leveler_core::corpus::LeveledPair;
use leveler_core::readability::{ReadabilityReport, Scorer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HISTORY: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("{0}")]
    LockViolation(String),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("nothing to undo")]
    NothingToUndo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Snapshot {
    text: String,
    locks: Vec<LockSpan>,
}

/// Full session state, history included. This is what snapshots persist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub pair_id: String,
    pub source_score: f64,
    pub target_score: f64,
    pub text: String,
    pub locks: Vec<LockSpan>,
    pub report: Option<ReadabilityReport>,
    /// Why the working text cannot be scored, when it cannot.
    pub unscorable: Option<String>,
    pub revision: u64,
    history: VecDeque<Snapshot>,
    history_limit: usize,
}

/// What the API returns for a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub pair_id: String,
    pub source_score: f64,
    pub target_score: f64,
    pub text: String,
    pub locks: Vec<LockSpan>,
    pub report: Option<ReadabilityReport>,
    pub unscorable: Option<String>,
    pub revision: u64,
    pub undo_depth: usize,
}

impl Session {
    /// Opens a session on the pair's source text.
    pub fn new(session_id: String, pair: &LeveledPair, scorer: &Scorer, history_limit: usize) -> Self {
        let mut s = Self {
            session_id,
            pair_id: pair.pair_id.clone(),
            source_score: pair.source_score,
            target_score: pair.target_score,
            text: pair.source_text.clone(),
            locks: Vec::new(),
            report: None,
            unscorable: None,
            revision: 0,
            history: VecDeque::new(),
            history_limit,
        };
        s.rescore(scorer);
        s
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            pair_id: self.pair_id.clone(),
            source_score: self.source_score,
            target_score: self.target_score,
            text: self.text.clone(),
            locks: self.locks.clone(),
            report: self.report.clone(),
            unscorable: self.unscorable.clone(),
            revision: self.revision,
            undo_depth: self.history.len(),
        }
    }

    pub fn undo_depth(&self) -> usize {
        self.history.len()
    }

    fn rescore(&mut self, scorer: &Scorer) {
        match scorer.score(&self.text) {
            Ok(r) => {
                self.report = Some(r);
                self.unscorable = None;
            }
            Err(e) => {
                self.report = None;
                self.unscorable = Some(e.to_string());
            }
        }
    }

    fn commit(&mut self, text: String, locks: Vec<LockSpan>, scorer: &Scorer) {
        if self.history_limit > 0 {
            if self.history.len() == self.history_limit {
                self.history.pop_front();
            }
            self.history.push_back(Snapshot {
                text: std::mem::take(&mut self.text),
                locks: std::mem::take(&mut self.locks),
            });
        }
        self.text = text;
        self.locks = locks;
        self.revision += 1;
        self.rescore(scorer);
    }

    /// Replaces the working text. Every locked passage must survive the edit
    /// verbatim; locks move with their text.
    pub fn set_text(&mut self, text: String, scorer: &Scorer) -> Result<(), SessionError> {
        let locks = reanchor(&self.text, &text, &self.locks)?;
        self.commit(text, locks, scorer);
        Ok(())
    }

    pub fn set_locks(&mut self, locks: Vec<LockSpan>, scorer: &Scorer) -> Result<(), SessionError> {
        alignment::validate_locks(&self.text, &locks)?;
        let mut locks = locks;
        locks.sort_by_key(|l| (l.start, l.end));
        self.commit(self.text.clone(), locks, scorer);
        Ok(())
    }

    /// Aligns the working text against `candidate` and applies the chosen
    /// replacements. Returns the alignment the link indices referred to.
    pub fn merge(
        &mut self,
        candidate: &str,
        replacements: &[Replacement],
        scorer: &Scorer,
    ) -> Result<AlignmentMap, SessionError> {
        let map = alignment::align_texts(&self.text, candidate);
        let merged = alignment::merge(&self.text, candidate, &map, replacements, &self.locks)?;
        let locks = reanchor(&self.text, &merged, &self.locks)?;
        self.commit(merged, locks, scorer);
        Ok(map)
    }

    pub fn undo(&mut self, scorer: &Scorer) -> Result<(), SessionError> {
        let prev = self.history.pop_back().ok_or(SessionError::NothingToUndo)?;
        self.text = prev.text;
        self.locks = prev.locks;
        self.revision += 1;
        self.rescore(scorer);
        Ok(())
    }
}

/// Moves each lock to the same-numbered occurrence of its passage in `new`,
/// or failing that the one closest to its old offset. Locks stay in order
/// and disjoint.
fn reanchor(old: &str, new: &str, locks: &[LockSpan]) -> Result<Vec<LockSpan>, SessionError> {
    let mut sorted = locks.to_vec();
    sorted.sort_by_key(|l| (l.start, l.end));
    let mut out = Vec::with_capacity(sorted.len());
    let mut floor = 0;
    for l in sorted {
        let passage = &old[l.start..l.end];
        let ordinal = old[..l.start].match_indices(passage).count();
        let found: Vec<usize> = new.match_indices(passage).map(|(i, _)| i).filter(|&i| i >= floor).collect();
        let same_ordinal = new.match_indices(passage).nth(ordinal).map(|(i, _)| i).filter(|&i| i >= floor);
        let at = same_ordinal
            .or_else(|| found.iter().copied().min_by_key(|&i| i.abs_diff(l.start)))
            .ok_or_else(|| {
                SessionError::LockViolation(format!("locked passage {passage:?} at {}..{} was changed", l.start, l.end))
            })?;
        floor = at + passage.len();
        out.push(LockSpan {
            start: at,
            end: floor,
            reason: l.reason,
        });
    }
    Ok(out)
}
