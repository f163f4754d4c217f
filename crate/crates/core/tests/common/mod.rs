//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

pub mod grad;
pub mod runs;

use cepmine_core::agent::{Agent, AgentConfig, EpisodeEnv};
use cepmine_core::pareto::ScoredPattern;
use cepmine_core::pattern::{ActionSpace, CmpOp, ConditionTarget, EventSchema, Pattern};
use cepmine_core::rank::Prediction;
use cepmine_core::stream::{window_embedding_len, Record};
use cepmine_core::synth::random_pattern;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn schema() -> EventSchema {
    EventSchema::from_names(&["A", "B", "C"], &["x", "y"], &["<", ">", "=", "!=", "<=", ">="]).unwrap()
}

fn holds(op: CmpOp, l: f64, r: f64, eps: f64) -> bool {
    match op.symbol() {
        "<" => l < r,
        ">" => l > r,
        "<=" => l <= r,
        ">=" => l >= r,
        "=" => (l - r).abs() <= eps,
        "!=" => (l - r).abs() > eps,
        other => panic!("operator {other}"),
    }
}

/// Counts matches by enumerating every index tuple.
pub fn brute_force_count(p: &Pattern, records: &[Record], schema: &EventSchema, eps: f64) -> u64 {
    let k = p.events.len();
    let n = records.len();
    if k == 0 || k > n {
        return 0;
    }
    let types: Vec<usize> = p.events.iter().map(|e| schema.type_index(&e.event_type).unwrap()).collect();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut total = 0;
    loop {
        let tuple: Vec<&Record> = idx.iter().map(|&i| &records[i]).collect();
        let ordered = tuple.windows(2).all(|w| w[1].ts > w[0].ts);
        let typed = tuple.iter().zip(&types).all(|(r, &t)| r.event_type == t);
        let span = tuple[k - 1].ts - tuple[0].ts <= p.within_seconds;
        if ordered && typed && span {
            let ok = p.events.iter().enumerate().all(|(i, ev)| {
                ev.conditions.iter().all(|c| {
                    let a = schema.attr_index(&c.attribute).unwrap();
                    let lhs = tuple[i].attrs[a];
                    let rhs = match c.target {
                        ConditionTarget::Constant(v) => Some(v),
                        ConditionTarget::EventRef(j) => tuple[j].attrs[a],
                        ConditionTarget::Hole(_) => panic!("hole"),
                    };
                    matches!((lhs, rhs), (Some(l), Some(r)) if holds(c.op, l, r, eps))
                })
            });
            if ok {
                total += 1;
            }
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return total;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Window of up to `max_len` records with small integer attributes, some
/// missing, and occasional timestamp ties.
pub fn random_window<R: Rng>(rng: &mut R, schema: &EventSchema, max_len: usize) -> Vec<Record> {
    let n = rng.random_range(0..=max_len);
    let mut ts = 0.0;
    (0..n)
        .map(|_| {
            ts += [0.0, 0.5, 1.0, 1.0, 2.0][rng.random_range(0..5)];
            Record {
                ts,
                event_type: rng.random_range(0..schema.event_types().len()),
                attrs: (0..schema.attributes().len())
                    .map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(0..5) as f64) })
                    .collect(),
            }
        })
        .collect()
}

/// Random hole-free pattern with integer constants in `0..5`.
pub fn random_int_pattern<R: Rng>(space: &ActionSpace, rng: &mut R) -> Pattern {
    let within = [1.0, 2.0, 3.0, 5.0][rng.random_range(0..4)];
    let p = random_pattern(space, within, (0.0, 5.0), true, rng);
    p.fill_holes(|_, _, _| rng.random_range(0..5) as f64)
}

/// O(n^2) dominance scan after collapsing duplicates by text.
pub fn brute_force_front(items: &[ScoredPattern]) -> Vec<(String, f64, f64)> {
    let mut merged: Vec<(String, f64, f64)> = Vec::new();
    for s in items {
        match merged.iter_mut().find(|m| m.0 == s.text) {
            Some(m) => {
                m.1 = m.1.max(s.frequency);
                m.2 = m.2.max(s.rating);
            }
            None => merged.push((s.text.clone(), s.frequency, s.rating)),
        }
    }
    let mut front: Vec<(String, f64, f64)> = merged
        .iter()
        .filter(|p| !merged.iter().any(|q| q.1 >= p.1 && q.2 >= p.2 && (q.1 > p.1 || q.2 > p.2)))
        .cloned()
        .collect();
    front.sort_by(|a, b| a.0.cmp(&b.0));
    front
}

/// Candidate order rebuilt from per-rank groups: within each predicted rank
/// the `cap` least certain are kept; kept ones come first, then the rest,
/// each part by ascending certainty (index breaks ties).
pub fn brute_force_candidates(preds: &[Prediction], cap: usize) -> Vec<usize> {
    let key = |i: usize| (preds[i].certainty, i);
    let less = |a: usize, b: usize| key(a).0 < key(b).0 || (key(a).0 == key(b).0 && a < b);
    let mut kept = Vec::new();
    let mut rest = Vec::new();
    for i in 0..preds.len() {
        let ahead = (0..preds.len()).filter(|&j| preds[j].rank == preds[i].rank && less(j, i)).count();
        if ahead < cap {
            kept.push(i);
        } else {
            rest.push(i);
        }
    }
    let by_key = |v: &mut Vec<usize>| v.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
    by_key(&mut kept);
    by_key(&mut rest);
    kept.extend(rest);
    kept
}

/// Central finite-difference derivative of `f` at parameter `i`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// One-step environment over two event types: choosing `A` pays 1, anything else 0.
pub struct BanditEnv {
    embedding: Vec<f64>,
}

impl BanditEnv {
    pub fn new(schema: &EventSchema) -> Self {
        BanditEnv { embedding: vec![0.5; window_embedding_len(schema)] }
    }
}

impl EpisodeEnv for BanditEnv {
    fn window_embedding(&self) -> &[f64] {
        &self.embedding
    }
    fn reward(&mut self, p: &Pattern) -> f64 {
        if p.events.first().is_some_and(|e| e.event_type == "A") {
            1.0
        } else {
            0.0
        }
    }
}

/// Policy probability of the paying event after `episodes` updates from `seed`.
pub fn bandit_probability(seed: u64, episodes: usize) -> f64 {
    let schema = EventSchema::from_names(&["A", "B"], &["x"], &["<"]).unwrap();
    let space = ActionSpace::new(schema.clone(), 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(space, 5.0, AgentConfig::default(), &mut rng);
    let mut env = BanditEnv::new(&schema);
    for _ in 0..episodes {
        let mut ep = agent.run_episode(&mut env, &mut rng).unwrap();
        if !ep.steps.is_empty() {
            agent.update(&mut ep).unwrap();
        }
    }
    let state = agent.state(env.window_embedding(), &Pattern::empty(5.0));
    agent.event_policy(&state.0).unwrap()[0]
}
