//! State shared between a training run and the expert-facing service.
//!
//! The trainer publishes [`SessionEvent`]s; the service folds them into a
//! [`SessionState`] and turns accepted ratings into [`RatingMsg`]s.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::FrontEntry;
use crate::pattern::EventSchema;
use crate::train::MetricsRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub id: u64,
    pub pattern_text: String,
    pub predicted_rank: u32,
    pub certainty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMsg {
    pub id: u64,
    pub rating: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Training,
    WaitingForExpert,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Queries(Vec<PendingQuery>),
    /// Outstanding queries expired; they can no longer be answered.
    QueriesClosed,
    Metrics(MetricsRecord),
    TopPatterns(Vec<FrontEntry>),
    Status(RunStatus),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("rating {rating} outside 1..={scale}")]
    OutOfRange { rating: i64, scale: u32 },
    #[error("unknown query {0}")]
    UnknownQuery(u64),
    #[error("query {0} already answered")]
    AlreadyAnswered(u64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub scale: u32,
    pub schema: EventSchema,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    scale: u32,
    schema: EventSchema,
    status: RunStatus,
    pending: BTreeMap<u64, PendingQuery>,
    answered: HashSet<u64>,
    metrics: Vec<MetricsRecord>,
    top: Vec<FrontEntry>,
    ratings_accepted: u64,
}

impl SessionState {
    pub fn new(schema: EventSchema, scale: u32) -> Self {
        SessionState {
            scale,
            schema,
            status: RunStatus::Idle,
            pending: BTreeMap::new(),
            answered: HashSet::new(),
            metrics: Vec::new(),
            top: Vec::new(),
            ratings_accepted: 0,
        }
    }

    pub fn apply(&mut self, event: SessionEvent) {
        match event {
            SessionEvent::Queries(qs) => {
                for q in qs {
                    self.pending.insert(q.id, q);
                }
                self.status = RunStatus::WaitingForExpert;
            }
            SessionEvent::QueriesClosed => {
                self.answered.extend(self.pending.keys().copied());
                self.pending.clear();
                if self.status == RunStatus::WaitingForExpert {
                    self.status = RunStatus::Training;
                }
            }
            SessionEvent::Metrics(m) => self.metrics.push(m),
            SessionEvent::TopPatterns(t) => self.top = t,
            SessionEvent::Status(s) => self.status = s,
        }
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo { scale: self.scale, schema: self.schema.clone(), status: self.status }
    }

    pub fn pending(&self) -> Vec<PendingQuery> {
        self.pending.values().cloned().collect()
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn top(&self, k: usize) -> Vec<FrontEntry> {
        self.top.iter().take(k).cloned().collect()
    }

    pub fn ratings_accepted(&self) -> u64 {
        self.ratings_accepted
    }

    /// Validates a rating and removes the query from the pending set.
    pub fn submit(&mut self, id: u64, rating: i64) -> Result<RatingMsg, SubmitError> {
        if self.answered.contains(&id) {
            return Err(SubmitError::AlreadyAnswered(id));
        }
        if !self.pending.contains_key(&id) {
            return Err(SubmitError::UnknownQuery(id));
        }
        if rating < 1 || rating > self.scale as i64 {
            return Err(SubmitError::OutOfRange { rating, scale: self.scale });
        }
        self.pending.remove(&id);
        self.answered.insert(id);
        self.ratings_accepted += 1;
        if self.pending.is_empty() && self.status == RunStatus::WaitingForExpert {
            self.status = RunStatus::Training;
        }
        Ok(RatingMsg { id, rating: rating as u32 })
    }
}
