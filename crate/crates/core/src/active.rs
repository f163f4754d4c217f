//! Expert interaction: candidate ordering, query budget, interaction points and oracles.

use std::collections::HashSet;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{ConditionTarget, Pattern};
use crate::rank::{balanced_accuracy, LabeledSet, Prediction, RankError, RankPredictor};
use crate::session::{PendingQuery, RatingMsg, SessionEvent};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("expert did not answer within {0:?}")]
    Timeout(Duration),
    #[error("expert channel closed")]
    Disconnected,
}

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("invalid query budget [{0}, {1}]")]
    Budget(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBudget {
    pub x1: usize,
    pub x2: usize,
}

impl QueryBudget {
    pub fn new(x1: usize, x2: usize) -> Result<Self, ActiveError> {
        if x1 > x2 {
            return Err(ActiveError::Budget(x1, x2));
        }
        Ok(QueryBudget { x1, x2 })
    }
}

/// `x1 + round((x2 - x1) * (1 - accuracy))`, clamped to `[x1, x2]`.
pub fn choose_query_count(budget: QueryBudget, accuracy: f64) -> usize {
    let span = (budget.x2 - budget.x1) as f64;
    let n = budget.x1 as f64 + (span * (1.0 - accuracy.clamp(0.0, 1.0))).round();
    (n as usize).clamp(budget.x1, budget.x2)
}

/// Least certain first; a pattern whose predicted rank already has `max_per_rank`
/// kept patterns ahead of it moves to the tail. Returns indices into `preds`.
pub fn candidate_order(preds: &[Prediction], max_per_rank: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[a].certainty.total_cmp(&preds[b].certainty));
    let mut counts = std::collections::HashMap::new();
    let (mut kept, mut demoted) = (Vec::new(), Vec::new());
    for i in idx {
        let c = counts.entry(preds[i].rank).or_insert(0usize);
        if *c >= max_per_rank {
            demoted.push(i);
        } else {
            *c += 1;
            kept.push(i);
        }
    }
    kept.extend(demoted);
    kept
}

/// Orders hole-free patterns for querying.
pub fn select_candidates(patterns: &[Pattern], rp: &RankPredictor, max_per_rank: usize) -> Result<Vec<(Pattern, Prediction)>, RankError> {
    let preds = patterns.iter().map(|p| rp.predict(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(candidate_order(&preds, max_per_rank)
        .into_iter()
        .map(|i| (patterns[i].clone(), preds[i]))
        .collect())
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] { dp[i - 1][j - 1] + 1 } else { dp[i - 1][j].max(dp[i][j - 1]) };
        }
    }
    dp[a.len()][b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum TargetKind {
    Constant,
    Event(usize),
}

fn signatures(p: &Pattern) -> HashSet<(usize, String, &'static str, TargetKind)> {
    let mut out = HashSet::new();
    for (i, ev) in p.events.iter().enumerate() {
        for c in &ev.conditions {
            let kind = match c.target {
                ConditionTarget::EventRef(k) => TargetKind::Event(k),
                ConditionTarget::Constant(_) | ConditionTarget::Hole(_) => TargetKind::Constant,
            };
            out.insert((i, c.attribute.clone(), c.op.symbol(), kind));
        }
    }
    out
}

/// Structural similarity in `[0, 1]`: 0.6 of the event-type LCS ratio plus
/// 0.4 of the Jaccard index of condition shapes (constants ignored).
pub fn similarity(p: &Pattern, q: &Pattern) -> f64 {
    let ta: Vec<&str> = p.events.iter().map(|e| e.event_type.as_str()).collect();
    let tb: Vec<&str> = q.events.iter().map(|e| e.event_type.as_str()).collect();
    let longest = ta.len().max(tb.len());
    let seq = if longest == 0 { 1.0 } else { lcs_len(&ta, &tb) as f64 / longest as f64 };
    let (sa, sb) = (signatures(p), signatures(q));
    let union = sa.union(&sb).count();
    let jac = if union == 0 { 1.0 } else { sa.intersection(&sb).count() as f64 / union as f64 };
    0.6 * seq + 0.4 * jac
}

/// Maps a similarity to a rating in `1..=scale`.
pub fn rating_from_similarity(sim: f64, scale: u32) -> u32 {
    ((scale as f64 * sim).round() as i64).clamp(1, scale as i64) as u32
}

/// Answers rating queries.
pub trait ExpertOracle {
    /// One rating per query, in order.
    fn rate_batch(&mut self, queries: &[(Pattern, Prediction)]) -> Result<Vec<u32>, OracleError>;
}

/// Noisy expert whose ground truth is similarity to the nearest target pattern.
#[derive(Debug, Clone)]
pub struct SimulatedExpert {
    targets: Vec<Pattern>,
    sigma: f64,
    scale: u32,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl SimulatedExpert {
    pub fn new(targets: Vec<Pattern>, sigma: f64, scale: u32, rng: ChaCha8Rng) -> Self {
        assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and non-negative");
        assert!(scale >= 1);
        let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma"));
        SimulatedExpert { targets, sigma, scale, noise, rng }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn targets(&self) -> &[Pattern] {
        &self.targets
    }

    pub fn best_similarity(&self, p: &Pattern) -> f64 {
        self.targets.iter().map(|t| similarity(p, t)).fold(0.0, f64::max)
    }

    pub fn ground_truth(&self, p: &Pattern) -> u32 {
        rating_from_similarity(self.best_similarity(p), self.scale)
    }

    /// One draw of the labeling distortion.
    pub fn distortion(&mut self) -> f64 {
        match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }

    pub fn rate(&mut self, p: &Pattern) -> u32 {
        let noisy = self.ground_truth(p) as f64 + self.distortion();
        (noisy.round() as i64).clamp(1, self.scale as i64) as u32
    }
}

impl ExpertOracle for SimulatedExpert {
    fn rate_batch(&mut self, queries: &[(Pattern, Prediction)]) -> Result<Vec<u32>, OracleError> {
        Ok(queries.iter().map(|(p, _)| self.rate(p)).collect())
    }
}

/// Expert reached through the HTTP service: queries go out on one channel,
/// ratings come back on another.
#[derive(Debug)]
pub struct LiveExpert {
    events: Sender<SessionEvent>,
    ratings: Receiver<RatingMsg>,
    timeout: Duration,
    next_id: u64,
}

impl LiveExpert {
    pub fn new(events: Sender<SessionEvent>, ratings: Receiver<RatingMsg>, timeout: Duration) -> Self {
        LiveExpert { events, ratings, timeout, next_id: 1 }
    }
}

impl ExpertOracle for LiveExpert {
    fn rate_batch(&mut self, queries: &[(Pattern, Prediction)]) -> Result<Vec<u32>, OracleError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let first = self.next_id;
        let pending: Vec<PendingQuery> = queries
            .iter()
            .enumerate()
            .map(|(i, (p, pr))| PendingQuery {
                id: first + i as u64,
                pattern_text: p.to_string(),
                predicted_rank: pr.rank,
                certainty: pr.certainty,
            })
            .collect();
        self.next_id += queries.len() as u64;
        self.events.send(SessionEvent::Queries(pending)).map_err(|_| OracleError::Disconnected)?;

        let mut answers: Vec<Option<u32>> = vec![None; queries.len()];
        let deadline = Instant::now() + self.timeout;
        while answers.iter().any(Option::is_none) {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.ratings.recv_timeout(left) {
                Ok(msg) => {
                    if msg.id >= first && msg.id < self.next_id {
                        answers[(msg.id - first) as usize] = Some(msg.rating);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    let _ = self.events.send(SessionEvent::QueriesClosed);
                    return Err(OracleError::Timeout(self.timeout));
                }
                Err(RecvTimeoutError::Disconnected) => return Err(OracleError::Disconnected),
            }
        }
        Ok(answers.into_iter().map(|a| a.expect("all answered")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionOutcome {
    pub requested: usize,
    pub answered: usize,
    pub skipped: bool,
    /// Balanced accuracy of the pre-update predictions on the new labels.
    pub query_accuracy: Option<f64>,
}

pub struct InteractionParams {
    pub budget: QueryBudget,
    pub max_per_rank: usize,
    pub recent_accuracy: f64,
    pub train_epochs: usize,
}

/// One interaction point: query the expert on the chosen candidates, merge the
/// answers into `labeled` and continue training the predictor on it.
pub fn interaction_point<O: ExpertOracle + ?Sized, R: Rng + ?Sized>(
    labeled: &mut LabeledSet,
    new_patterns: &[Pattern],
    rp: &mut RankPredictor,
    oracle: &mut O,
    params: &InteractionParams,
    rng: &mut R,
) -> Result<InteractionOutcome, ActiveError> {
    let mut seen = HashSet::new();
    let unique: Vec<Pattern> = new_patterns
        .iter()
        .filter(|p| !p.has_holes() && seen.insert(p.to_string()))
        .cloned()
        .collect();
    let n = choose_query_count(params.budget, params.recent_accuracy);
    let mut queries = select_candidates(&unique, rp, params.max_per_rank)?;
    queries.truncate(n);
    let mut outcome = InteractionOutcome { requested: queries.len(), answered: 0, skipped: false, query_accuracy: None };
    if !queries.is_empty() {
        match oracle.rate_batch(&queries) {
            Ok(ratings) => {
                let preds: Vec<u32> = queries.iter().map(|(_, pr)| pr.rank).collect();
                outcome.query_accuracy = balanced_accuracy(&preds, &ratings, rp.scale()).ok();
                for ((p, _), r) in queries.into_iter().zip(&ratings) {
                    labeled.insert(p, *r);
                }
                outcome.answered = ratings.len();
            }
            Err(e) => {
                log::warn!("interaction skipped: {e}");
                outcome.skipped = true;
                return Ok(outcome);
            }
        }
    }
    if !labeled.is_empty() {
        rp.train_on(labeled, params.train_epochs, rng)?;
    }
    Ok(outcome)
}
