//! Counting pattern matches in a window and the adjacent-window frequency estimate.
//!
//! Match semantics: every tuple of records `(r_1, ..., r_k)` with strictly
//! increasing timestamps, matching event types, span `ts(r_k) - ts(r_1)` within
//! the pattern's time window, and all conditions satisfied counts once.
//! Counting stops at a caller-provided cap.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{CmpOp, ConditionTarget, EventSchema, Pattern, PatternError};
use crate::stream::{EventStream, Record, Window};

pub const DEFAULT_COUNT_CAP: u64 = 10_000;
pub const DEFAULT_EQUALITY_EPS: f64 = 1e-6;

/// Frequency weights for windows `i`, `i - j` and `i - 2j`.
pub const FREQUENCY_WEIGHTS: [f64; 3] = [0.5, 0.25, 0.25];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("pattern formula not completed (contains holes)")]
    HasHoles,
    #[error("pattern has no events")]
    Empty,
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCount {
    pub count: u64,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy)]
enum Rhs {
    Event(usize),
    Constant(f64),
}

#[derive(Debug, Clone, Copy)]
struct Check {
    owner: usize,
    attr: usize,
    op: CmpOp,
    rhs: Rhs,
}

/// A hole-free pattern resolved against a schema.
#[derive(Debug, Clone)]
pub struct CompiledPattern {
    types: Vec<usize>,
    within: f64,
    /// `checks[m]`: conditions that become decidable once position `m` is bound.
    checks: Vec<Vec<Check>>,
    eq_eps: f64,
}

impl CompiledPattern {
    pub fn compile(p: &Pattern, schema: &EventSchema, eq_eps: f64) -> Result<Self, MatchError> {
        if p.events.is_empty() {
            return Err(MatchError::Empty);
        }
        if p.has_holes() {
            return Err(MatchError::HasHoles);
        }
        p.validate(schema, None)?;
        let mut types = Vec::with_capacity(p.events.len());
        let mut checks = vec![Vec::new(); p.events.len()];
        for (i, ev) in p.events.iter().enumerate() {
            types.push(schema.type_index(&ev.event_type).ok_or_else(|| PatternError::UnknownEventType(ev.event_type.clone()))?);
            for c in &ev.conditions {
                let attr = schema.attr_index(&c.attribute).ok_or_else(|| PatternError::UnknownAttribute(c.attribute.clone()))?;
                let (rhs, ready_at) = match c.target {
                    ConditionTarget::EventRef(k) => (Rhs::Event(k), i.max(k)),
                    ConditionTarget::Constant(v) => (Rhs::Constant(v), i),
                    ConditionTarget::Hole(_) => return Err(MatchError::HasHoles),
                };
                checks[ready_at].push(Check { owner: i, attr, op: c.op, rhs });
            }
        }
        Ok(CompiledPattern { types, within: p.within_seconds, checks, eq_eps })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    fn checks_pass(&self, m: usize, bound: &[usize], records: &[Record]) -> bool {
        self.checks[m].iter().all(|c| {
            let Some(lhs) = records[bound[c.owner]].attr(c.attr) else { return false };
            let rhs = match c.rhs {
                Rhs::Constant(v) => v,
                Rhs::Event(k) => match records[bound[k]].attr(c.attr) {
                    Some(v) => v,
                    None => return false,
                },
            };
            c.op.eval(lhs, rhs, self.eq_eps)
        })
    }

    /// Number of matches in `records` (assumed ts-sorted), stopping at `cap`.
    pub fn count(&self, records: &[Record], cap: u64) -> MatchCount {
        let mut bound = vec![0usize; self.types.len()];
        let mut count = 0u64;
        for start in 0..records.len() {
            if records[start].event_type != self.types[0] {
                continue;
            }
            bound[0] = start;
            if !self.checks_pass(0, &bound, records) {
                continue;
            }
            if self.extend(1, start, records, &mut bound, &mut count, cap) {
                return MatchCount { count: cap, capped: true };
            }
        }
        MatchCount { count, capped: false }
    }

    /// Returns true once the cap is reached.
    fn extend(&self, m: usize, prev: usize, records: &[Record], bound: &mut [usize], count: &mut u64, cap: u64) -> bool {
        if m == self.types.len() {
            *count += 1;
            return *count >= cap;
        }
        let t0 = records[bound[0]].ts;
        let prev_ts = records[prev].ts;
        for r in prev + 1..records.len() {
            let rec = &records[r];
            if rec.ts - t0 > self.within {
                break;
            }
            if rec.ts <= prev_ts || rec.event_type != self.types[m] {
                continue;
            }
            bound[m] = r;
            if self.checks_pass(m, bound, records) && self.extend(m + 1, r, records, bound, count, cap) {
                return true;
            }
        }
        false
    }
}

/// Counts matches of a hole-free pattern in a window.
pub fn count_matches(p: &Pattern, w: &Window, schema: &EventSchema, cap: u64) -> Result<MatchCount, MatchError> {
    Ok(CompiledPattern::compile(p, schema, DEFAULT_EQUALITY_EPS)?.count(&w.records, cap))
}

/// Adjacent-window frequency: `0.5*c(i) + 0.25*c(i-j) + 0.25*c(i-2j)`. Windows before
/// the start of the stream are replaced by the nearest available one (window 0).
pub fn frequency(i: usize, jump_interval: usize, mut get_count: impl FnMut(usize) -> f64) -> f64 {
    FREQUENCY_WEIGHTS
        .iter()
        .enumerate()
        .map(|(k, w)| w * get_count(i.saturating_sub(k * jump_interval)))
        .sum()
}

/// Pattern reward: frequency times rating.
pub fn reward(frequency: f64, rating: f64) -> f64 {
    frequency * rating
}

/// Memoized per-(pattern text, window) counts.
#[derive(Debug, Default, Clone)]
pub struct FrequencyCache {
    counts: HashMap<(String, usize), MatchCount>,
}

impl FrequencyCache {
    pub fn get(&self, key: &str, window: usize) -> Option<MatchCount> {
        self.counts.get(&(key.to_string(), window)).copied()
    }

    pub fn insert(&mut self, key: String, window: usize, count: MatchCount) {
        self.counts.insert((key, window), count);
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn clear(&mut self) {
        self.counts.clear();
    }
}

/// Frequency and reward over a finite stream, with a count cache.
#[derive(Debug, Clone)]
pub struct FrequencyEstimator {
    schema: EventSchema,
    stream: EventStream,
    window_len: usize,
    jump_interval: usize,
    cap: u64,
    eq_eps: f64,
    cache: FrequencyCache,
}

impl FrequencyEstimator {
    pub fn new(schema: EventSchema, stream: EventStream, window_len: usize, jump_interval: usize, cap: u64, eq_eps: f64) -> Self {
        FrequencyEstimator { schema, stream, window_len, jump_interval, cap, eq_eps, cache: FrequencyCache::default() }
    }

    pub fn schema(&self) -> &EventSchema {
        &self.schema
    }

    pub fn stream(&self) -> &EventStream {
        &self.stream
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn jump_interval(&self) -> usize {
        self.jump_interval
    }

    pub fn window_count(&self) -> usize {
        self.stream.window_count(self.window_len)
    }

    pub fn eq_eps(&self) -> f64 {
        self.eq_eps
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn window_records(&self, i: usize) -> &[Record] {
        let start = (i * self.window_len).min(self.stream.len());
        let end = (start + self.window_len).min(self.stream.len());
        &self.stream.records()[start..end]
    }

    pub fn compile(&self, p: &Pattern) -> Result<CompiledPattern, MatchError> {
        CompiledPattern::compile(p, &self.schema, self.eq_eps)
    }

    /// Uncached frequency of a compiled pattern around window `i`.
    pub fn frequency_of(&self, compiled: &CompiledPattern, i: usize) -> f64 {
        frequency(i, self.jump_interval, |w| compiled.count(self.window_records(w), self.cap).count as f64)
    }

    /// Cached frequency keyed by canonical text.
    pub fn frequency(&mut self, p: &Pattern, i: usize) -> Result<f64, MatchError> {
        let key = p.to_string();
        let compiled = self.compile(p)?;
        let mut total = 0.0;
        for (k, w) in FREQUENCY_WEIGHTS.iter().enumerate() {
            let idx = i.saturating_sub(k * self.jump_interval);
            let c = match self.cache.get(&key, idx) {
                Some(c) => c,
                None => {
                    let c = compiled.count(self.window_records(idx), self.cap);
                    self.cache.insert(key.clone(), idx, c);
                    c
                }
            };
            total += w * c.count as f64;
        }
        Ok(total)
    }

    pub fn reward(&mut self, p: &Pattern, i: usize, rating: f64) -> Result<f64, MatchError> {
        Ok(reward(self.frequency(p, i)?, rating))
    }

    pub fn cache(&self) -> &FrequencyCache {
        &self.cache
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::parse_pattern;

    fn schema() -> EventSchema {
        EventSchema::from_names(&["A", "B"], &["x"], &["<", ">", "=", "!="]).unwrap()
    }

    fn window(records: &[(f64, usize, Option<f64>)]) -> Window {
        Window {
            index: 0,
            records: records.iter().map(|&(ts, t, x)| Record { ts, event_type: t, attrs: vec![x] }).collect(),
        }
    }

    #[test]
    fn single_candidate_tuple() {
        let s = schema();
        let w = window(&[(0.0, 0, Some(1.0)), (1.0, 1, Some(1.0))]);
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE a.x = b.x WITHIN 10s", &s).unwrap();
        assert_eq!(count_matches(&p, &w, &s, 100).unwrap(), MatchCount { count: 1, capped: false });
        let tight = parse_pattern("EVENTS SEQ(A a, B b) WHERE a.x = b.x WITHIN 0.5s", &s).unwrap();
        assert_eq!(count_matches(&tight, &w, &s, 100).unwrap().count, 0);
    }

    #[test]
    fn equal_timestamps_do_not_chain() {
        let s = schema();
        let w = window(&[(0.0, 0, None), (0.0, 1, None), (1.0, 1, None)]);
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE true WITHIN 10s", &s).unwrap();
        assert_eq!(count_matches(&p, &w, &s, 100).unwrap().count, 1);
    }

    #[test]
    fn missing_attribute_fails_condition() {
        let s = schema();
        let w = window(&[(0.0, 0, None), (1.0, 1, Some(1.0))]);
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE b.x != a.x WITHIN 10s", &s).unwrap();
        assert_eq!(count_matches(&p, &w, &s, 100).unwrap().count, 0);
    }

    #[test]
    fn forward_reference_checked_when_bound() {
        let s = schema();
        let w = window(&[(0.0, 0, Some(1.0)), (1.0, 1, Some(2.0)), (2.0, 1, Some(0.0))]);
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE a.x < b.x WITHIN 10s", &s).unwrap();
        assert_eq!(count_matches(&p, &w, &s, 100).unwrap().count, 1);
    }

    #[test]
    fn cap_is_flagged() {
        let s = schema();
        let recs: Vec<_> = (0..20).map(|i| (i as f64, i % 2, Some(0.0))).collect();
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE true WITHIN 100s", &s).unwrap();
        let full = count_matches(&p, &window(&recs), &s, 10_000).unwrap();
        assert_eq!(full, MatchCount { count: 55, capped: false });
        assert_eq!(count_matches(&p, &window(&recs), &s, 7).unwrap(), MatchCount { count: 7, capped: true });
    }

    #[test]
    fn holes_are_rejected() {
        let s = schema();
        let p = parse_pattern("EVENTS SEQ(A a) WHERE a.x < ?1 WITHIN 1s", &s).unwrap();
        assert_eq!(count_matches(&p, &window(&[]), &s, 10), Err(MatchError::HasHoles));
        assert_eq!(MatchError::HasHoles.to_string(), "pattern formula not completed (contains holes)");
    }

    #[test]
    fn frequency_weights() {
        assert_eq!(frequency(2, 1, |_| 4.0), 4.0);
        let counts = [0.0, 4.0, 8.0];
        assert_eq!(frequency(2, 1, |w| counts[w]), 5.0);
        assert_eq!(frequency(0, 3, |_| 6.0), 6.0);
        // window 1 with jump 1: windows 1, 0, 0
        let counts = [2.0, 10.0];
        assert_eq!(frequency(1, 1, |w| counts[w]), 0.5 * 10.0 + 0.25 * 2.0 + 0.25 * 2.0);
        assert_eq!(FREQUENCY_WEIGHTS.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn reward_is_product() {
        assert_eq!(reward(5.0, 10.0), 50.0);
        assert_eq!(reward(0.0, 37.0), 0.0);
    }

    #[test]
    fn estimator_cache_agrees_with_recomputation() {
        let s = schema();
        let recs: Vec<Record> = (0..30)
            .map(|i| Record { ts: i as f64 * 0.5, event_type: i % 2, attrs: vec![Some((i % 5) as f64)] })
            .collect();
        let mut est = FrequencyEstimator::new(s.clone(), EventStream::new(recs).unwrap(), 10, 1, 1000, 1e-6);
        let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE a.x < b.x WITHIN 3s", &s).unwrap();
        let first = est.frequency(&p, 2).unwrap();
        assert_eq!(est.cache().len(), 3);
        let again = est.frequency(&p, 2).unwrap();
        let compiled = est.compile(&p).unwrap();
        assert_eq!(first, again);
        assert_eq!(first, est.frequency_of(&compiled, 2));
    }
}
