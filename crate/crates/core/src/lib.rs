//! Reinforcement-learning driven mining of complex-event-processing patterns.
//!
//! An actor-critic agent builds patterns event by event over windows of a
//! stream. Rewards combine a pattern's match frequency with the rating a learned
//! predictor expects from a domain expert; the predictor is refined through
//! periodic expert queries. Constant placeholders are filled by Bayesian
//! optimization and the final output is the Pareto front over frequency and
//! rating.

pub mod active;
pub mod agent;
pub mod bayes;
pub mod config;
pub mod matcher;
pub mod nn;
pub mod pareto;
pub mod pattern;
pub mod rank;
pub mod session;
pub mod stream;
pub mod synth;
pub mod train;

pub use active::{ExpertOracle, QueryBudget, SimulatedExpert};
pub use agent::{Agent, AgentConfig, Episode, EpisodeEnv, TerminalReason};
pub use config::RunConfig;
pub use matcher::{count_matches, frequency, reward, CompiledPattern, FrequencyEstimator, MatchCount};
pub use pareto::{Archive, FrontEntry, ScoredPattern};
pub use pattern::{
    parse_pattern, render_pattern, ActionSpace, CmpOp, Condition, ConditionTarget, EventSchema, MiningConfig, Pattern,
    PatternEvent,
};
pub use rank::{LabeledSet, Prediction, RankPredictor};
pub use session::{PendingQuery, RatingMsg, RunStatus, SessionEvent, SessionState};
pub use stream::{read_stream, EventStream, Record, Window};
pub use train::{evaluate, train, MetricsRecord, Trainer};
