//! Run configuration: a single JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::QueryBudget;
use crate::agent::AgentConfig;
use crate::bayes::BayesBudget;
use crate::matcher::{DEFAULT_COUNT_CAP, DEFAULT_EQUALITY_EPS};
use crate::pareto::DEFAULT_ARCHIVE_CAPACITY;
use crate::pattern::{parse_pattern, MiningConfig};
use crate::rank::PredictorConfig;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub count_cap: u64,
    pub equality_eps: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig { count_cap: DEFAULT_COUNT_CAP, equality_eps: DEFAULT_EQUALITY_EPS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    Simulated,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub kind: ExpertKind,
    #[serde(default)]
    pub sigma: f64,
    /// Must equal `mining.scale` when present.
    #[serde(default)]
    pub scale: Option<u32>,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
}

fn default_timeout() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub interact_every_episodes: usize,
    pub query_budget: QueryBudget,
    pub max_per_rank: usize,
    pub predictor_epochs: usize,
    /// Random patterns rated by the simulated expert when no D_0 file is given.
    pub bootstrap_labels: usize,
    pub archive_capacity: usize,
    pub top_k: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 1,
            episodes_per_epoch: 500,
            interact_every_episodes: 100,
            query_budget: QueryBudget { x1: 2, x2: 10 },
            max_per_rank: 3,
            predictor_epochs: 20,
            bootstrap_labels: 20,
            archive_capacity: DEFAULT_ARCHIVE_CAPACITY,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    #[serde(default)]
    pub d0: Option<PathBuf>,
    #[serde(default)]
    pub dprime: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mining: MiningConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    pub expert: ExpertConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub bayes: BayesBudget,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads a config file; relative paths are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Read { path: shown.clone(), source })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| RunConfigError::Parse { path: shown, source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// Checks values and cross-field constraints; files are checked separately.
    pub fn validate(&self) -> Result<(), RunConfigError> {
        let bad = |m: String| Err(RunConfigError::Invalid(m));
        self.mining.validate().map_err(|e| RunConfigError::Invalid(e.to_string()))?;
        if let Some(s) = self.expert.scale {
            if s != self.mining.scale {
                return bad(format!("expert.scale {s} differs from mining.scale {}", self.mining.scale));
            }
        }
        if !(self.expert.sigma.is_finite() && self.expert.sigma >= 0.0) {
            return bad("expert.sigma must be finite and non-negative".into());
        }
        if self.expert.kind == ExpertKind::Simulated && self.expert.targets.is_empty() {
            return bad("a simulated expert needs at least one target".into());
        }
        if !(self.expert.timeout_seconds > 0.0) {
            return bad("expert.timeout_seconds must be positive".into());
        }
        for (i, t) in self.expert.targets.iter().enumerate() {
            let p = parse_pattern(t, &self.mining.schema).map_err(|e| RunConfigError::Invalid(format!("expert.targets[{i}]: {e}")))?;
            if p.has_holes() {
                return bad(format!("expert.targets[{i}] contains holes"));
            }
        }
        let s = &self.schedule;
        if s.episodes_per_epoch == 0 || s.interact_every_episodes == 0 || s.max_per_rank == 0 || s.archive_capacity == 0 || s.top_k == 0 {
            return bad("schedule counts must be positive".into());
        }
        if s.query_budget.x1 > s.query_budget.x2 {
            return bad("schedule.query_budget needs x1 <= x2".into());
        }
        if self.matcher.count_cap == 0 || !(self.matcher.equality_eps >= 0.0) {
            return bad("matcher.count_cap must be positive and equality_eps non-negative".into());
        }
        let a = &self.agent;
        if !(a.gamma > 0.0 && a.gamma <= 1.0) || !(a.lr > 0.0) || !(a.ucb_c >= 0.0) || !(a.reward_scale > 0.0) || a.trunk_hidden == 0 || a.head_hidden == 0 {
            return bad("agent settings out of range".into());
        }
        let p = &self.predictor;
        if !(p.lr > 0.0) || !(0.0..1.0).contains(&p.dropout) || p.hidden.contains(&0) || p.batch_size == 0 {
            return bad("predictor settings out of range".into());
        }
        let b = &self.bayes;
        if b.iterations == 0 || b.proposals == 0 || b.patience == 0 || b.pool == 0 {
            return bad("bayes budget values must be positive".into());
        }
        Ok(())
    }

    /// Fails when an input file named by the config is missing.
    pub fn check_files(&self) -> Result<(), RunConfigError> {
        let mut files = vec![("paths.data", &self.paths.data)];
        if let Some(p) = &self.paths.d0 {
            files.push(("paths.d0", p));
        }
        if let Some(p) = &self.paths.dprime {
            files.push(("paths.dprime", p));
        }
        for (key, f) in files {
            if !f.is_file() {
                return Err(RunConfigError::Invalid(format!("{key}: {} does not exist", f.display())));
            }
        }
        Ok(())
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data);
        fix(&mut self.output_dir);
        if let Some(p) = self.d0.as_mut() {
            fix(p);
        }
        if let Some(p) = self.dprime.as_mut() {
            fix(p);
        }
    }
}
