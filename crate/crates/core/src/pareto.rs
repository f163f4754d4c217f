//! Archive of mined patterns and Pareto selection over (frequency, rating).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::Pattern;

pub const DEFAULT_ARCHIVE_CAPACITY: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParetoError {
    #[error("empty front")]
    EmptyFront,
    #[error("objectives must be finite and non-negative (frequency {0}, rating {1})")]
    BadObjective(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPattern {
    pub pattern: Pattern,
    pub text: String,
    pub frequency: f64,
    pub rating: f64,
    pub source_epoch: usize,
}

impl ScoredPattern {
    pub fn new(pattern: Pattern, frequency: f64, rating: f64, source_epoch: usize) -> Result<Self, ParetoError> {
        if !(frequency.is_finite() && rating.is_finite() && frequency >= 0.0 && rating >= 0.0) {
            return Err(ParetoError::BadObjective(frequency, rating));
        }
        Ok(ScoredPattern { text: pattern.to_string(), pattern, frequency, rating, source_epoch })
    }

    pub fn dominates(&self, other: &ScoredPattern) -> bool {
        self.frequency >= other.frequency
            && self.rating >= other.rating
            && (self.frequency > other.frequency || self.rating > other.rating)
    }

    fn merge(&mut self, other: &ScoredPattern) {
        self.frequency = self.frequency.max(other.frequency);
        self.rating = self.rating.max(other.rating);
        self.source_epoch = self.source_epoch.min(other.source_epoch);
    }

    pub fn entry(&self) -> FrontEntry {
        FrontEntry { pattern: self.text.clone(), frequency: self.frequency, rating: self.rating, epoch: self.source_epoch }
    }
}

/// Serialized form used in the output file and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub pattern: String,
    pub frequency: f64,
    pub rating: f64,
    pub epoch: usize,
}

/// Collapses duplicates by canonical text, keeping the component-wise maximum.
pub fn dedupe(items: &[ScoredPattern]) -> Vec<ScoredPattern> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<ScoredPattern> = Vec::new();
    for s in items {
        match index.get(s.text.as_str()) {
            Some(&i) => out[i].merge(s),
            None => {
                index.insert(&s.text, out.len());
                out.push(s.clone());
            }
        }
    }
    out
}

/// Non-dominated members, ordered by frequency then rating (both descending) then text.
pub fn pareto_front(archive: &[ScoredPattern]) -> Vec<ScoredPattern> {
    let mut items = dedupe(archive);
    items.sort_by(|a, b| {
        b.frequency
            .total_cmp(&a.frequency)
            .then(b.rating.total_cmp(&a.rating))
            .then_with(|| a.text.cmp(&b.text))
    });
    let mut front = Vec::new();
    let mut best_higher_freq = f64::NEG_INFINITY;
    let mut i = 0;
    while i < items.len() {
        let f = items[i].frequency;
        let mut j = i;
        while j < items.len() && items[j].frequency == f {
            j += 1;
        }
        let group_max = items[i].rating;
        for s in &items[i..j] {
            if s.rating == group_max && s.rating > best_higher_freq {
                front.push(s.clone());
            }
        }
        best_higher_freq = best_higher_freq.max(group_max);
        i = j;
    }
    front
}

/// Top `k` of a front by `frequency / max_frequency + rating / scale`, ties broken
/// by earlier epoch and then canonical text.
pub fn rank_front(front: &[ScoredPattern], k: usize, max_frequency: f64, scale: u32) -> Result<Vec<ScoredPattern>, ParetoError> {
    if front.is_empty() {
        return Err(ParetoError::EmptyFront);
    }
    let score = |s: &ScoredPattern| {
        let f = if max_frequency > 0.0 { s.frequency / max_frequency } else { 0.0 };
        f + s.rating / scale as f64
    };
    let mut ranked: Vec<(f64, &ScoredPattern)> = front.iter().map(|s| (score(s), s)).collect();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.source_epoch.cmp(&b.1.source_epoch))
            .then_with(|| a.1.text.cmp(&b.1.text))
    });
    Ok(ranked.into_iter().take(k).map(|(_, s)| s.clone()).collect())
}

/// Bounded archive; when full, a dominated member is evicted first.
#[derive(Debug, Clone)]
pub struct Archive {
    capacity: usize,
    items: Vec<ScoredPattern>,
    index: HashMap<String, usize>,
}

impl Default for Archive {
    fn default() -> Self {
        Archive::new(DEFAULT_ARCHIVE_CAPACITY)
    }
}

impl Archive {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "archive capacity must be positive");
        Archive { capacity, items: Vec::new(), index: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ScoredPattern] {
        &self.items
    }

    pub fn max_frequency(&self) -> f64 {
        self.items.iter().map(|s| s.frequency).fold(0.0, f64::max)
    }

    pub fn insert(&mut self, s: ScoredPattern) {
        if let Some(&i) = self.index.get(&s.text) {
            self.items[i].merge(&s);
            return;
        }
        self.index.insert(s.text.clone(), self.items.len());
        self.items.push(s);
        if self.items.len() > self.capacity {
            self.evict();
        }
    }

    fn evict(&mut self) {
        let front: std::collections::HashSet<String> = pareto_front(&self.items).into_iter().map(|s| s.text).collect();
        let weakest = |pool: &mut dyn Iterator<Item = (usize, &ScoredPattern)>| {
            pool.min_by(|a, b| {
                (a.1.frequency + a.1.rating)
                    .total_cmp(&(b.1.frequency + b.1.rating))
                    .then(b.1.source_epoch.cmp(&a.1.source_epoch))
                    .then_with(|| b.1.text.cmp(&a.1.text))
            })
            .map(|(i, _)| i)
        };
        let victim = weakest(&mut self.items.iter().enumerate().filter(|(_, s)| !front.contains(&s.text)))
            .or_else(|| weakest(&mut self.items.iter().enumerate()))
            .expect("non-empty archive");
        self.items.swap_remove(victim);
        self.index.clear();
        for (i, s) in self.items.iter().enumerate() {
            self.index.insert(s.text.clone(), i);
        }
    }

    pub fn front(&self) -> Vec<ScoredPattern> {
        pareto_front(&self.items)
    }

    /// Ranked front as output entries; empty archive gives an empty list.
    pub fn top(&self, k: usize, scale: u32) -> Vec<FrontEntry> {
        let front = self.front();
        rank_front(&front, k, self.max_frequency(), scale)
            .map(|v| v.iter().map(ScoredPattern::entry).collect())
            .unwrap_or_default()
    }
}
