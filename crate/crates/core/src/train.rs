//! Training loop: episodes over stream windows, Bayesian completion of mined
//! formulas, interaction points with the expert, and per-epoch outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{Receiver, Sender};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{interaction_point, ActiveError, ExpertOracle, InteractionParams, LiveExpert, SimulatedExpert};
use crate::agent::{Agent, AgentCheckpoint, AgentError, EpisodeEnv};
use crate::bayes::{complete, extract_holes, BayesError};
use crate::config::{ExpertKind, RunConfig, RunConfigError};
use crate::matcher::{FrequencyEstimator, MatchError};
use crate::pareto::{Archive, ParetoError, ScoredPattern};
use crate::pattern::{parse_pattern, ActionSpace, EventSchema, Pattern, PatternError};
use crate::rank::{LabeledSet, PredictorCheckpoint, RankError, RankPredictor};
use crate::session::{RatingMsg, RunStatus, SessionEvent};
use crate::stream::{attribute_medians, attribute_ranges, embed_window, read_stream, AttributeScales, EventStream, StreamError, Window};
use crate::synth::random_pattern;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] RunConfigError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("epoch {epoch}, episode {episode}: {source}")]
    At { epoch: usize, episode: usize, source: Box<TrainError> },
    #[error("{0}")]
    Setup(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean of frequency times ground-truth rating over the epoch's mined patterns.
    pub mean_weighted_reward: f64,
    pub mean_frequency: f64,
    pub acc_train: Option<f64>,
    pub acc_dprime: Option<f64>,
    /// Expert answers received so far, re-ratings included.
    pub queries: u64,
    pub labeled: usize,
    pub unique_patterns: usize,
    pub episodes: usize,
    pub skipped_interactions: usize,
}

/// Connection to the expert service.
pub struct SessionLink {
    pub events: Sender<SessionEvent>,
    /// Required when the expert is live.
    pub ratings: Option<Receiver<RatingMsg>>,
}

/// Episode environment over one window: rewards are the frequency of the
/// pattern (holes set to window medians) times its predicted rating.
struct WindowEnv<'a> {
    embedding: Vec<f64>,
    window: usize,
    medians: Vec<Option<f64>>,
    schema: &'a EventSchema,
    estimator: &'a mut FrequencyEstimator,
    predictor: &'a RankPredictor,
    error: Option<TrainError>,
}

fn resolve_with(p: &Pattern, schema: &EventSchema, values: &[Option<f64>]) -> Pattern {
    p.fill_holes(|_, _, c| schema.attr_index(&c.attribute).and_then(|a| values[a]).unwrap_or(0.0))
}

impl EpisodeEnv for WindowEnv<'_> {
    fn window_embedding(&self) -> &[f64] {
        &self.embedding
    }

    fn reward(&mut self, pattern: &Pattern) -> f64 {
        let resolved = resolve_with(pattern, self.schema, &self.medians);
        let result = self
            .estimator
            .frequency(&resolved, self.window)
            .map_err(TrainError::from)
            .and_then(|f| Ok(f * self.predictor.predict(&resolved)?.rank as f64));
        match result {
            Ok(r) => r,
            Err(e) => {
                self.error.get_or_insert(e);
                0.0
            }
        }
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// All mutable state of a run.
pub struct Trainer {
    config: RunConfig,
    space: ActionSpace,
    estimator: FrequencyEstimator,
    scales: AttributeScales,
    ranges: Vec<Option<(f64, f64)>>,
    agent: Agent,
    predictor: RankPredictor,
    labeled: LabeledSet,
    dprime: Option<LabeledSet>,
    archive: Archive,
    ground_truth: Option<SimulatedExpert>,
    oracle: Box<dyn ExpertOracle>,
    events: Option<Sender<SessionEvent>>,
    episode_rng: ChaCha8Rng,
    bayes_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    epoch: usize,
    global_episode: usize,
    queries: u64,
    skipped: usize,
    recent_accuracy: f64,
    new_patterns: Vec<Pattern>,
}

impl Trainer {
    /// Builds a trainer from in-memory inputs. Without `d0`, a simulated expert
    /// rates its targets plus `schedule.bootstrap_labels` random patterns.
    pub fn new(
        config: RunConfig,
        stream: EventStream,
        d0: Option<LabeledSet>,
        dprime: Option<LabeledSet>,
        link: Option<SessionLink>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if stream.is_empty() {
            return Err(TrainError::Setup("data stream is empty".into()));
        }
        let m = &config.mining;
        let schema = m.schema.clone();
        let space = ActionSpace::new(schema.clone(), m.max_len, m.max_conds);
        let n_attrs = schema.attributes().len();
        let mut scales = AttributeScales::new(n_attrs);
        scales.observe(stream.records());
        let ranges = attribute_ranges(stream.records(), n_attrs);
        let estimator = FrequencyEstimator::new(
            schema.clone(),
            stream,
            m.window_len,
            m.jump_interval,
            config.matcher.count_cap,
            config.matcher.equality_eps,
        );

        let seed = m.seed;
        let mut init_rng = derived_rng(seed, 1);
        let agent = Agent::new(space.clone(), m.within_seconds, config.agent.clone(), &mut init_rng);
        let constant_scales = (0..n_attrs).map(|a| scales.scale(a)).collect();
        let mut predictor = RankPredictor::new(space.clone(), m.scale, constant_scales, config.predictor.clone(), &mut init_rng);

        let targets = config
            .expert
            .targets
            .iter()
            .map(|t| parse_pattern(t, &schema))
            .collect::<Result<Vec<_>, _>>()?;
        let ground_truth = (!targets.is_empty()).then(|| SimulatedExpert::new(targets.clone(), 0.0, m.scale, derived_rng(seed, 2)));
        let (oracle, events): (Box<dyn ExpertOracle>, Option<Sender<SessionEvent>>) = match config.expert.kind {
            ExpertKind::Simulated => (
                Box::new(SimulatedExpert::new(targets.clone(), config.expert.sigma, m.scale, derived_rng(seed, 3))),
                link.map(|l| l.events),
            ),
            ExpertKind::Live => {
                let link = link.ok_or_else(|| TrainError::Setup("a live expert needs a session".into()))?;
                let ratings = link.ratings.ok_or_else(|| TrainError::Setup("a live expert needs a rating channel".into()))?;
                let timeout = Duration::from_secs_f64(config.expert.timeout_seconds);
                (Box::new(LiveExpert::new(link.events.clone(), ratings, timeout)), Some(link.events))
            }
        };

        let mut train_rng = derived_rng(seed, 4);
        let labeled = match d0 {
            Some(d) => d,
            None => {
                let mut d = LabeledSet::new();
                if config.expert.kind == ExpertKind::Simulated {
                    let mut boot = SimulatedExpert::new(targets.clone(), config.expert.sigma, m.scale, derived_rng(seed, 5));
                    let mut pool = targets.clone();
                    let range = ranges.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.0), hi.max(r.1)));
                    let range = if range.0 <= range.1 { range } else { (0.0, 1.0) };
                    for _ in 0..config.schedule.bootstrap_labels {
                        pool.push(random_pattern(&space, m.within_seconds, range, false, &mut init_rng));
                    }
                    for p in pool {
                        let r = boot.rate(&p);
                        d.insert(p, r);
                    }
                }
                d
            }
        };
        if !labeled.is_empty() {
            predictor.train_on(&labeled, config.schedule.predictor_epochs, &mut train_rng)?;
        }
        let archive = Archive::new(config.schedule.archive_capacity);
        let trainer = Trainer {
            space,
            estimator,
            scales,
            ranges,
            agent,
            predictor,
            labeled,
            dprime,
            archive,
            ground_truth,
            oracle,
            events,
            episode_rng: derived_rng(seed, 6),
            bayes_rng: derived_rng(seed, 7),
            train_rng,
            epoch: 0,
            global_episode: 0,
            queries: 0,
            skipped: 0,
            recent_accuracy: 0.0,
            new_patterns: Vec::new(),
            config,
        };
        trainer.publish(SessionEvent::Status(RunStatus::Training));
        Ok(trainer)
    }

    fn publish(&self, e: SessionEvent) {
        if let Some(tx) = &self.events {
            let _ = tx.send(e);
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn predictor(&self) -> &RankPredictor {
        &self.predictor
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    fn window(&self, i: usize) -> Window {
        Window { index: i, records: self.estimator.window_records(i).to_vec() }
    }

    /// Ground-truth rating when targets are known, otherwise the archive rating.
    fn weight_of(&self, p: &Pattern, fallback: f64) -> f64 {
        match &self.ground_truth {
            Some(gt) => gt.ground_truth(p) as f64,
            None => fallback,
        }
    }

    /// Runs one episode and the interaction point that may follow it.
    /// Returns the mined pattern's frequency and weighted reward, if any.
    fn episode(&mut self) -> Result<Option<(f64, f64)>, TrainError> {
        let n_windows = self.estimator.window_count();
        let i = self.global_episode % n_windows;
        self.global_episode += 1;
        let window = self.window(i);
        let schema = self.config.mining.schema.clone();
        let embedding = embed_window(&window, &schema, &self.scales);
        let medians = attribute_medians(&window.records, schema.attributes().len());

        let mut env = WindowEnv {
            embedding,
            window: i,
            medians: medians.clone(),
            schema: &schema,
            estimator: &mut self.estimator,
            predictor: &self.predictor,
            error: None,
        };
        let mut episode = self.agent.run_episode(&mut env, &mut self.episode_rng)?;
        if let Some(e) = env.error.take() {
            return Err(e);
        }
        let mut mined = None;
        if !episode.steps.is_empty() {
            let formula = &episode.pattern;
            let completed = match extract_holes(formula, &schema, &self.ranges) {
                Ok(space) => {
                    let estimator = &self.estimator;
                    let objective = |x: &[f64]| match estimator.compile(&space.instantiate(formula, x)) {
                        Ok(c) => estimator.frequency_of(&c, i),
                        Err(_) => 0.0,
                    };
                    complete(formula, &space, objective, self.config.bayes, &mut self.bayes_rng)?.pattern
                }
                Err(BayesError::Unobserved(..)) => resolve_with(formula, &schema, &medians),
                Err(e) => return Err(e.into()),
            };
            let freq = self.estimator.frequency(&completed, i)?;
            let rating = match self.labeled.rating_of(&completed) {
                Some(r) => r as f64,
                None => self.predictor.predict(&completed)?.rank as f64,
            };
            let weighted = freq * self.weight_of(&completed, rating);
            self.archive.insert(ScoredPattern::new(completed.clone(), freq, rating, self.epoch)?);
            self.new_patterns.push(completed);
            self.agent.update(&mut episode)?;
            mined = Some((freq, weighted));
        }

        if self.global_episode % self.config.schedule.interact_every_episodes == 0 {
            self.interact()?;
        }
        Ok(mined)
    }

    fn interact(&mut self) -> Result<(), TrainError> {
        let s = &self.config.schedule;
        let params = InteractionParams {
            budget: s.query_budget,
            max_per_rank: s.max_per_rank,
            recent_accuracy: self.recent_accuracy,
            train_epochs: s.predictor_epochs,
        };
        let patterns = std::mem::take(&mut self.new_patterns);
        let out = interaction_point(&mut self.labeled, &patterns, &mut self.predictor, self.oracle.as_mut(), &params, &mut self.train_rng)?;
        if out.skipped {
            self.skipped += 1;
        }
        self.queries += out.answered as u64;
        if let Some(a) = out.query_accuracy {
            self.recent_accuracy = a;
        }
        self.publish(SessionEvent::Status(RunStatus::Training));
        Ok(())
    }

    /// Runs one epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<MetricsRecord, TrainError> {
        let epoch = self.epoch;
        let mut weighted = Vec::new();
        let mut freqs = Vec::new();
        for ep in 0..self.config.schedule.episodes_per_epoch {
            match self.episode() {
                Ok(Some((f, w))) => {
                    freqs.push(f);
                    weighted.push(w);
                }
                Ok(None) => {}
                Err(e) => return Err(TrainError::At { epoch, episode: ep, source: Box::new(e) }),
            }
        }
        self.estimator.clear_cache();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let acc_train = if self.labeled.is_empty() { None } else { Some(self.predictor.accuracy_on(&self.labeled)?) };
        let acc_dprime = match &self.dprime {
            Some(d) if !d.is_empty() => Some(self.predictor.accuracy_on(d)?),
            _ => None,
        };
        let record = MetricsRecord {
            epoch,
            mean_weighted_reward: mean(&weighted),
            mean_frequency: mean(&freqs),
            acc_train,
            acc_dprime,
            queries: self.queries,
            labeled: self.labeled.len(),
            unique_patterns: self.archive.len(),
            episodes: self.config.schedule.episodes_per_epoch,
            skipped_interactions: self.skipped,
        };
        self.epoch += 1;
        self.publish(SessionEvent::Metrics(record.clone()));
        self.publish(SessionEvent::TopPatterns(self.archive.top(self.config.schedule.top_k, self.config.mining.scale)));
        Ok(record)
    }

    pub fn finish(&self, ok: bool) {
        self.publish(SessionEvent::Status(if ok { RunStatus::Finished } else { RunStatus::Failed }));
    }

    /// Writes checkpoints, the labeled set and the ranked front into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck).map_err(io_err(&ck))?;
        let meta = CheckpointMeta {
            schema: self.config.mining.schema.clone(),
            max_len: self.space.max_len(),
            max_conds: self.space.max_conds(),
            scale: self.config.mining.scale,
            epochs_done: self.epoch,
        };
        write_json(&ck.join("meta.json"), &meta)?;
        write_json(&ck.join("agent.json"), &self.agent.to_checkpoint())?;
        write_json(&ck.join("predictor.json"), &self.predictor.to_checkpoint())?;
        let labeled = ck.join("labeled.jsonl");
        self.labeled.save(&labeled).map_err(io_err(&labeled))?;
        let front = self.archive.front();
        let entries = self.archive.top(front.len().max(1), self.config.mining.scale);
        write_json(&dir.join("patterns.json"), &entries)
    }
}

/// Shape information stored next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema: EventSchema,
    pub max_len: usize,
    pub max_conds: usize,
    pub scale: u32,
    pub epochs_done: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| TrainError::Json { path: path.display().to_string(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, TrainError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| TrainError::Json { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
}

/// Full run from a config: reads inputs, trains, and writes `metrics.jsonl`,
/// `timing.jsonl`, `patterns.json`, `run_config.json` and `checkpoints/`.
pub fn train(config: &RunConfig, link: Option<SessionLink>) -> Result<TrainSummary, TrainError> {
    config.validate()?;
    config.check_files()?;
    let schema = &config.mining.schema;
    let stream = read_stream(&config.paths.data, schema)?;
    let scale = config.mining.scale;
    let d0 = match &config.paths.d0 {
        Some(p) => Some(LabeledSet::load(p, schema, scale)?),
        None => None,
    };
    let dprime = match &config.paths.dprime {
        Some(p) => Some(LabeledSet::load(p, schema, scale)?),
        None => None,
    };
    let out = config.paths.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    write_json(&out.join("run_config.json"), config)?;

    let mut trainer = Trainer::new(config.clone(), stream, d0, dprime, link)?;
    trainer.save(&out)?;
    let metrics_path = out.join("metrics.jsonl");
    let timing_path = out.join("timing.jsonl");
    let mut metrics_file = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let mut timing_file = BufWriter::new(File::create(&timing_path).map_err(io_err(&timing_path))?);
    metrics_file.flush().map_err(io_err(&metrics_path))?;
    let mut metrics = Vec::new();
    for _ in 0..config.schedule.epochs {
        let started = Instant::now();
        let record = match trainer.run_epoch() {
            Ok(r) => r,
            Err(e) => {
                trainer.finish(false);
                return Err(e);
            }
        };
        let line = serde_json::to_string(&record).expect("metrics serialize");
        writeln!(metrics_file, "{line}").and_then(|_| metrics_file.flush()).map_err(io_err(&metrics_path))?;
        let timing = serde_json::json!({"epoch": record.epoch, "seconds": started.elapsed().as_secs_f64()});
        writeln!(timing_file, "{timing}").and_then(|_| timing_file.flush()).map_err(io_err(&timing_path))?;
        trainer.save(&out)?;
        log::info!(
            "epoch {} reward {:.3} acc {:?} queries {}",
            record.epoch,
            record.mean_weighted_reward,
            record.acc_train,
            record.queries
        );
        metrics.push(record);
    }
    trainer.finish(true);
    Ok(TrainSummary { output_dir: out, metrics })
}

/// Balanced accuracies of a saved predictor, with per-pattern predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc_train: Option<f64>,
    pub acc_dprime: f64,
    pub n_train: usize,
    pub n_dprime: usize,
    pub predictions: Vec<EvalPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPrediction {
    pub pattern: String,
    pub predicted: u32,
    pub certainty: f64,
    pub label: u32,
}

/// Loads `meta.json`, `predictor.json` and `labeled.jsonl` from a checkpoint
/// directory and scores the predictor on a D' file.
pub fn evaluate(checkpoint_dir: &Path, dprime_file: &Path) -> Result<EvalReport, TrainError> {
    let meta: CheckpointMeta = read_json(&checkpoint_dir.join("meta.json"))?;
    let space = ActionSpace::new(meta.schema.clone(), meta.max_len, meta.max_conds);
    let ck: PredictorCheckpoint = read_json(&checkpoint_dir.join("predictor.json"))?;
    if ck.scale != meta.scale {
        return Err(TrainError::Setup(format!("predictor scale {} differs from run scale {}", ck.scale, meta.scale)));
    }
    let predictor = RankPredictor::from_checkpoint(space, ck)?;
    let dprime = LabeledSet::load(dprime_file, &meta.schema, meta.scale)?;
    if dprime.is_empty() {
        return Err(TrainError::Setup(format!("{}: no labeled patterns", dprime_file.display())));
    }
    let labeled_path = checkpoint_dir.join("labeled.jsonl");
    let train_set = if labeled_path.is_file() { Some(LabeledSet::load(&labeled_path, &meta.schema, meta.scale)?) } else { None };
    let acc_train = match &train_set {
        Some(d) if !d.is_empty() => Some(predictor.accuracy_on(d)?),
        _ => None,
    };
    let mut predictions = Vec::with_capacity(dprime.len());
    for l in dprime.items() {
        let pr = predictor.predict(&l.pattern)?;
        predictions.push(EvalPrediction { pattern: l.pattern.to_string(), predicted: pr.rank, certainty: pr.certainty, label: l.rating });
    }
    Ok(EvalReport {
        acc_train,
        acc_dprime: predictor.accuracy_on(&dprime)?,
        n_train: train_set.map_or(0, |d| d.len()),
        n_dprime: dprime.len(),
        predictions,
    })
}

/// Restores the agent saved in a checkpoint directory.
pub fn load_agent(checkpoint_dir: &Path) -> Result<Agent, TrainError> {
    let meta: CheckpointMeta = read_json(&checkpoint_dir.join("meta.json"))?;
    let space = ActionSpace::new(meta.schema, meta.max_len, meta.max_conds);
    let ck: AgentCheckpoint = read_json(&checkpoint_dir.join("agent.json"))?;
    Ok(Agent::from_checkpoint(space, ck)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExpertConfig, MatcherConfig, Paths, Schedule};
    use crate::pattern::MiningConfig;
    use crate::synth::{generate_stream, TargetsFile};

    fn config(dir: &Path, epochs: usize) -> RunConfig {
        let corpus = TargetsFile::default_corpus();
        RunConfig {
            mining: MiningConfig {
                schema: corpus.schema.clone(),
                max_len: 3,
                max_conds: 2,
                within_seconds: 5.0,
                scale: 5,
                jump_interval: 1,
                window_len: 40,
                seed: 0,
            },
            matcher: MatcherConfig::default(),
            expert: ExpertConfig { kind: ExpertKind::Simulated, sigma: 0.0, scale: None, targets: corpus.targets.clone(), timeout_seconds: 1.0 },
            schedule: Schedule { epochs, episodes_per_epoch: 20, interact_every_episodes: 10, predictor_epochs: 5, bootstrap_labels: 10, ..Schedule::default() },
            agent: crate::agent::AgentConfig { trunk_hidden: 32, head_hidden: 16, ..Default::default() },
            predictor: crate::rank::PredictorConfig { hidden: [32, 16, 16], ..Default::default() },
            bayes: crate::bayes::BayesBudget::default(),
            paths: Paths { data: dir.join("data.csv"), d0: None, dprime: None, output_dir: dir.join("out") },
        }
    }

    fn write_data(dir: &Path) {
        let corpus = TargetsFile::default_corpus();
        let records = generate_stream(&corpus, 400, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let f = File::create(dir.join("data.csv")).unwrap();
        crate::stream::write_stream(f, &corpus.schema, &records).unwrap();
    }

    #[test]
    fn zero_epochs_writes_empty_metrics_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path());
        let cfg = config(dir.path(), 0);
        let s = train(&cfg, None).unwrap();
        assert!(s.metrics.is_empty());
        assert_eq!(std::fs::read_to_string(s.output_dir.join("metrics.jsonl")).unwrap(), "");
        assert!(s.output_dir.join("checkpoints/agent.json").is_file());
        assert!(s.output_dir.join("checkpoints/predictor.json").is_file());
        load_agent(&s.output_dir.join("checkpoints")).unwrap();
    }

    #[test]
    fn short_run_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path());
        let mut cfg = config(dir.path(), 2);
        let a = train(&cfg, None).unwrap();
        let first = std::fs::read(a.output_dir.join("metrics.jsonl")).unwrap();
        cfg.paths.output_dir = dir.path().join("out2");
        let b = train(&cfg, None).unwrap();
        assert_eq!(first, std::fs::read(b.output_dir.join("metrics.jsonl")).unwrap());
        assert_eq!(a.metrics.len(), 2);
        assert!(a.metrics[1].queries >= a.metrics[0].queries);
        let patterns: Vec<crate::pareto::FrontEntry> =
            serde_json::from_str(&std::fs::read_to_string(a.output_dir.join("patterns.json")).unwrap()).unwrap();
        for e in &patterns {
            parse_pattern(&e.pattern, &cfg.mining.schema).unwrap();
        }
    }

    #[test]
    fn evaluate_rejects_empty_dprime() {
        let dir = tempfile::tempdir().unwrap();
        write_data(dir.path());
        let s = train(&config(dir.path(), 0), None).unwrap();
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(evaluate(&s.output_dir.join("checkpoints"), &empty).is_err());
        let report = evaluate(&s.output_dir.join("checkpoints"), &s.output_dir.join("checkpoints/labeled.jsonl")).unwrap();
        assert_eq!(Some(report.acc_dprime), report.acc_train);
    }
}
