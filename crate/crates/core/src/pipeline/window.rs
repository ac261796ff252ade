//! Sliding-window visibility state for one selection session.

use std::collections::HashSet;

use indexmap::IndexSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowExhausted {
    #[error("frozen set covers all {0} cards")]
    CorpusCovered(usize),
    #[error("round limit {0} reached")]
    RoundLimit(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowState {
    /// Rejected finalists, in freeze order. Excluded from every retrieval.
    pub frozen: IndexSet<String>,
    /// Ids the reasoning model can currently see.
    pub current_visible: Vec<String>,
    /// Finalists whose full cards go to refinement.
    pub refinement_pool: Vec<String>,
    pub selected: Option<String>,
    pub round: u32,
    corpus_size: usize,
    max_rounds: u32,
}

impl WindowState {
    pub fn new(corpus_size: usize, max_rounds: u32) -> Self {
        Self {
            frozen: IndexSet::new(),
            current_visible: Vec::new(),
            refinement_pool: Vec::new(),
            selected: None,
            round: 1,
            corpus_size,
            max_rounds,
        }
    }

    pub fn is_frozen(&self, id: &str) -> bool {
        self.frozen.contains(id)
    }

    pub fn frozen_set(&self) -> HashSet<String> {
        self.frozen.iter().cloned().collect()
    }

    pub fn set_visible(&mut self, ids: Vec<String>) {
        debug_assert!(ids.iter().all(|id| !self.is_frozen(id)));
        self.current_visible = ids;
    }

    /// Promotes `pool` to refinement; pool members leave the visible list.
    pub fn set_pool(&mut self, pool: Vec<String>) {
        self.current_visible.retain(|id| !pool.contains(id));
        self.refinement_pool = pool;
    }

    pub fn select(&mut self, id: Option<String>) {
        self.selected = id;
    }

    /// Freezes the pool and the selected model, clears the per-round state and
    /// advances to the next round.
    pub fn freeze_and_slide(&mut self) -> Result<(), WindowExhausted> {
        let pool = std::mem::take(&mut self.refinement_pool);
        self.frozen.extend(pool);
        if let Some(selected) = self.selected.take() {
            self.frozen.insert(selected);
        }
        self.current_visible.clear();
        self.round += 1;
        if self.frozen.len() >= self.corpus_size {
            return Err(WindowExhausted::CorpusCovered(self.corpus_size));
        }
        if self.round > self.max_rounds {
            return Err(WindowExhausted::RoundLimit(self.max_rounds));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reject_freezes_pool() {
        let mut w = WindowState::new(30, 3);
        w.set_visible(ids(&["a", "b", "c", "d"]));
        w.set_pool(ids(&["a", "b", "c"]));
        assert_eq!(w.current_visible, ids(&["d"]));
        w.select(Some("a".into()));
        w.freeze_and_slide().unwrap();
        assert_eq!(w.frozen.iter().cloned().collect::<Vec<_>>(), ids(&["a", "b", "c"]));
        assert_eq!(w.round, 2);
        assert!(w.refinement_pool.is_empty() && w.selected.is_none() && w.current_visible.is_empty());
    }

    #[test]
    fn small_corpus_exhausts() {
        let mut w = WindowState::new(5, 3);
        w.set_pool(ids(&["a", "b", "c"]));
        w.select(Some("a".into()));
        w.freeze_and_slide().unwrap();
        w.set_pool(ids(&["d", "e"]));
        w.select(Some("d".into()));
        assert_eq!(w.freeze_and_slide().unwrap_err(), WindowExhausted::CorpusCovered(5));
    }

    #[test]
    fn round_limit() {
        let mut w = WindowState::new(100, 1);
        w.set_pool(ids(&["a"]));
        assert_eq!(w.freeze_and_slide().unwrap_err(), WindowExhausted::RoundLimit(1));
    }
}
