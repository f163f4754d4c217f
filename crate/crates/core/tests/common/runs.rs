//! Seeded end-to-end runs on the synthetic corpus and the planted-constant
//! completion benchmark.

use cepmine_core::active::SimulatedExpert;
use cepmine_core::agent::AgentConfig;
use cepmine_core::bayes::{complete, BayesBudget, HoleSlot, SearchSpace};
use cepmine_core::config::{ExpertConfig, ExpertKind, MatcherConfig, Paths, RunConfig, Schedule};
use cepmine_core::matcher::CompiledPattern;
use cepmine_core::pattern::{parse_pattern, ActionSpace, EventSchema, MiningConfig};
use cepmine_core::rank::{LabeledSet, PredictorConfig};
use cepmine_core::stream::{EventStream, Record};
use cepmine_core::synth::{generate_stream, random_pattern, TargetsFile};
use cepmine_core::{render_pattern, MetricsRecord, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Triangular};

#[derive(Debug, Clone, Copy)]
pub struct RunSpec {
    pub seed: u64,
    pub sigma: f64,
    pub scale: u32,
    pub epochs: usize,
    pub episodes: usize,
    pub interact_every: usize,
    pub rows: usize,
}

impl RunSpec {
    pub fn new(seed: u64, sigma: f64, scale: u32, epochs: usize, episodes: usize) -> Self {
        RunSpec { seed, sigma, scale, epochs, episodes, interact_every: 10, rows: 1000 }
    }
}

pub fn corpus_config(spec: &RunSpec) -> RunConfig {
    let corpus = TargetsFile::default_corpus();
    RunConfig {
        mining: MiningConfig {
            schema: corpus.schema.clone(),
            max_len: 3,
            max_conds: 2,
            within_seconds: 5.0,
            scale: spec.scale,
            jump_interval: 1,
            window_len: 40,
            seed: spec.seed,
        },
        matcher: MatcherConfig::default(),
        expert: ExpertConfig { kind: ExpertKind::Simulated, sigma: spec.sigma, scale: None, targets: corpus.targets.clone(), timeout_seconds: 1.0 },
        schedule: Schedule {
            epochs: spec.epochs,
            episodes_per_epoch: spec.episodes,
            interact_every_episodes: spec.interact_every,
            predictor_epochs: 20,
            bootstrap_labels: 20,
            ..Schedule::default()
        },
        agent: AgentConfig::default(),
        predictor: PredictorConfig { hidden: [64, 32, 32], ..PredictorConfig::default() },
        bayes: BayesBudget::default(),
        paths: Paths { data: "unused.csv".into(), d0: None, dprime: None, output_dir: "unused".into() },
    }
}

pub fn corpus_stream(rows: usize, seed: u64) -> EventStream {
    let corpus = TargetsFile::default_corpus();
    let records = generate_stream(&corpus, rows, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    EventStream::new(records).unwrap()
}

/// Held-out set labeled by the noise-free ground truth: random formulas plus
/// the targets, all from a seed disjoint from any run.
pub fn ground_truth_dprime(scale: u32, n: usize) -> LabeledSet {
    let corpus = TargetsFile::default_corpus();
    let space = ActionSpace::new(corpus.schema.clone(), 3, 2);
    let targets = corpus.parsed_targets().unwrap();
    let gt = SimulatedExpert::new(targets.clone(), 0.0, scale, ChaCha8Rng::seed_from_u64(0));
    let mut rng = ChaCha8Rng::seed_from_u64(0xD00D);
    let mut set = LabeledSet::new();
    for t in &targets {
        set.insert(t.clone(), gt.ground_truth(t));
    }
    while set.len() < n {
        let p = random_pattern(&space, 5.0, corpus.value_range, false, &mut rng);
        if !p.is_empty() {
            let r = gt.ground_truth(&p);
            set.insert(p, r);
        }
    }
    set
}

/// Runs `spec.epochs` epochs in memory and returns the per-epoch metrics.
pub fn run_synthetic(spec: &RunSpec, dprime: Option<LabeledSet>) -> Vec<MetricsRecord> {
    run_synthetic_with(spec, dprime, |_| {})
}

/// As [`run_synthetic`], with a hook that edits the config before the run.
pub fn run_synthetic_with(spec: &RunSpec, dprime: Option<LabeledSet>, edit: impl FnOnce(&mut RunConfig)) -> Vec<MetricsRecord> {
    let mut cfg = corpus_config(spec);
    edit(&mut cfg);
    let stream = corpus_stream(spec.rows, spec.seed);
    let mut trainer = Trainer::new(cfg, stream, None, dprime, None).unwrap();
    (0..spec.epochs).map(|_| trainer.run_epoch().unwrap()).collect()
}

/// Landscape of the planted-constant benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Planting {
    /// Every `B.x` equals the optimum: the count is flat zero outside it.
    Plateau,
    /// `B.x` drawn from a triangle centered on the optimum: the count rises toward it.
    Tent,
}

pub const PLANTED_OPTIMUM: f64 = 7.0;
pub const PLANTED_EPS: f64 = 0.5;

pub fn planted_schema() -> EventSchema {
    EventSchema::from_names(&["A", "B"], &["x"], &["<", ">", "="]).unwrap()
}

pub fn planted_stream(planting: Planting, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tent = Triangular::new(PLANTED_OPTIMUM - 3.0, PLANTED_OPTIMUM + 3.0, PLANTED_OPTIMUM).unwrap();
    let mut out = Vec::new();
    for i in 0..200 {
        let ts = i as f64;
        let is_b = i % 2 == 1;
        let x = match (is_b, planting) {
            (false, _) => rng.random_range(0.0..20.0),
            (true, Planting::Plateau) => PLANTED_OPTIMUM,
            (true, Planting::Tent) => tent.sample(&mut rng),
        };
        out.push(Record { ts, event_type: usize::from(is_b), attrs: vec![Some(x)] });
    }
    out
}

pub fn planted_space() -> SearchSpace {
    SearchSpace { slots: vec![HoleSlot { hole: 1, attribute: "x".into(), lower: 0.0, upper: 20.0 }] }
}

/// Match count of the planted formula with its hole set to `x`.
pub fn planted_objective(records: &[Record]) -> impl Fn(&[f64]) -> f64 + '_ {
    let schema = planted_schema();
    let formula = parse_pattern("EVENTS SEQ(A a, B b) WHERE b.x = ?1 WITHIN 2s", &schema).unwrap();
    let space = planted_space();
    move |x: &[f64]| {
        let p = space.instantiate(&formula, x);
        CompiledPattern::compile(&p, &schema, PLANTED_EPS).unwrap().count(records, u64::MAX).count as f64
    }
}

/// Hole value returned by the Bayesian search.
pub fn planted_bayes(records: &[Record], seed: u64) -> f64 {
    let schema = planted_schema();
    let formula = parse_pattern("EVENTS SEQ(A a, B b) WHERE b.x = ?1 WITHIN 2s", &schema).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = complete(&formula, &planted_space(), planted_objective(records), BayesBudget::default(), &mut rng).unwrap();
    assert!(c.evaluations <= 30);
    assert!(!c.pattern.has_holes(), "{}", render_pattern(&c.pattern));
    c.best_x[0]
}

/// Hole value of the best of 30 uniform draws (first best kept on ties).
pub fn planted_uniform(records: &[Record], seed: u64) -> f64 {
    let f = planted_objective(records);
    let space = planted_space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..30 {
        let x = space.sample(&mut rng);
        let y = f(&x);
        if best.map_or(true, |(b, _)| y > b) {
            best = Some((y, x[0]));
        }
    }
    best.unwrap().1
}

/// Fraction of `runs` seeded runs whose recovered value lies within tolerance of the optimum.
pub fn recovery_rate(planting: Planting, runs: u64, search: impl Fn(&[Record], u64) -> f64) -> f64 {
    let hits = (0..runs)
        .filter(|&seed| {
            let records = planted_stream(planting, seed);
            (search(&records, 1000 + seed) - PLANTED_OPTIMUM).abs() <= PLANTED_EPS
        })
        .count();
    hits as f64 / runs as f64
}
