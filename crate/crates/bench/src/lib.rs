//! Seeded fixtures shared by the criterion benches.

use cepmine_core::pareto::ScoredPattern;
use cepmine_core::pattern::{parse_pattern, ActionSpace, Pattern};
use cepmine_core::stream::EventStream;
use cepmine_core::synth::{generate_stream, random_pattern, TargetsFile};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn corpus() -> TargetsFile {
    TargetsFile::default_corpus()
}

pub fn stream(rows: usize) -> EventStream {
    let records = generate_stream(&corpus(), rows, &mut rng(1)).expect("corpus generates");
    EventStream::new(records).expect("ordered stream")
}

pub fn space() -> ActionSpace {
    ActionSpace::new(corpus().schema, 3, 2)
}

pub fn target(index: usize) -> Pattern {
    let c = corpus();
    parse_pattern(&c.targets[index], &c.schema).expect("target parses")
}

/// Hole-free random patterns, empty ones skipped.
pub fn random_patterns(n: usize, seed: u64) -> Vec<Pattern> {
    let space = space();
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = random_pattern(&space, 5.0, (0.0, 100.0), false, &mut r);
        if !p.is_empty() {
            out.push(p);
        }
    }
    out
}

/// Scored patterns with frequency and rating spread over their ranges.
pub fn scored(n: usize, seed: u64) -> Vec<ScoredPattern> {
    random_patterns(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let f = ((i * 7919) % 1000) as f64 / 1000.0;
            let r = ((i * 104_729) % 5 + 1) as f64;
            ScoredPattern::new(p, f, r, 0).expect("finite scores")
        })
        .collect()
}
