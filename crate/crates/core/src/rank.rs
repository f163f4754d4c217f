//! Rating classifier: predicts an expert rank in `1..=scale` with a certainty.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Activation, DenseNet, GradientSet, NetCheckpoint, NnError, Optimizer, OptimizerKind};
use crate::pattern::{parse_pattern, ActionSpace, ConditionTarget, EventSchema, Pattern, PatternError};
use crate::stream::{encode_partial_pattern, pattern_encoding_len};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("pattern contains holes")]
    HasHoles,
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("rating {rating} outside 1..={scale}")]
    RatingOutOfRange { rating: u32, scale: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Feature length: partial-pattern encoding plus one constant per condition slot.
pub fn feature_len(space: &ActionSpace) -> usize {
    pattern_encoding_len(space) + space.max_len() * space.max_conds()
}

/// Pattern features. Constants are divided by the per-attribute scale;
/// slots without a constant stay zero.
pub fn featurize(p: &Pattern, space: &ActionSpace, constant_scales: &[f64]) -> Result<Vec<f64>, RankError> {
    if p.has_holes() {
        return Err(RankError::HasHoles);
    }
    let mut out = encode_partial_pattern(p, space);
    let mc = space.max_conds();
    let mut constants = vec![0.0; space.max_len() * mc];
    for (t, ev) in p.events.iter().enumerate().take(space.max_len()) {
        for (j, c) in ev.conditions.iter().enumerate().take(mc) {
            if let ConditionTarget::Constant(v) = c.target {
                let scale = space
                    .schema()
                    .attr_index(&c.attribute)
                    .and_then(|a| constant_scales.get(a).copied())
                    .unwrap_or(1.0);
                constants[t * mc + j] = v / scale;
            }
        }
    }
    out.extend(constants);
    Ok(out)
}

/// Macro-averaged recall over the ranks present in `labels`.
pub fn balanced_accuracy(predictions: &[u32], labels: &[u32], scale: u32) -> Result<f64, RankError> {
    if predictions.len() != labels.len() {
        return Err(RankError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(RankError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 1 || l > scale) {
        return Err(RankError::RatingOutOfRange { rating: bad, scale });
    }
    let classes: BTreeSet<u32> = labels.iter().copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let (hit, n) = predictions
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .fold((0usize, 0usize), |(h, n), (&p, _)| (h + usize::from(p == c), n + 1));
        total += hit as f64 / n as f64;
    }
    Ok(total / classes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub hidden: [usize; 3],
    pub dropout: f64,
    pub activation: Activation,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden: [256, 128, 64],
            dropout: 0.2,
            activation: Activation::Relu,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 30,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub rank: u32,
    pub certainty: f64,
}

#[derive(Debug, Clone)]
pub struct RankPredictor {
    space: ActionSpace,
    scale: u32,
    constant_scales: Vec<f64>,
    config: PredictorConfig,
    net: DenseNet,
    optimizer: Optimizer,
}

impl RankPredictor {
    pub fn new<R: Rng + ?Sized>(
        space: ActionSpace,
        scale: u32,
        constant_scales: Vec<f64>,
        config: PredictorConfig,
        rng: &mut R,
    ) -> Self {
        assert!(scale >= 2, "scale must be at least 2");
        let [h1, h2, h3] = config.hidden;
        let net = DenseNet::mlp(&[feature_len(&space), h1, h2, h3, scale as usize], config.activation, config.dropout, rng);
        let optimizer = Optimizer::new(config.optimizer, config.lr, &net);
        RankPredictor { space, scale, constant_scales, config, net, optimizer }
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn features(&self, p: &Pattern) -> Result<Vec<f64>, RankError> {
        featurize(p, &self.space, &self.constant_scales)
    }

    /// Class probabilities in eval mode; index `k` is rank `k + 1`.
    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, RankError> {
        Ok(nn::softmax(&self.net.predict(features)?))
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<Prediction, RankError> {
        let p = self.probabilities(features)?;
        let (k, &certainty) = p
            .iter()
            .enumerate()
            .fold((0, &p[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
        Ok(Prediction { rank: k as u32 + 1, certainty })
    }

    pub fn predict(&self, p: &Pattern) -> Result<Prediction, RankError> {
        self.predict_features(&self.features(p)?)
    }

    /// Mean cross-entropy over `(features, rating)` in eval mode.
    pub fn loss(&self, data: &[(Vec<f64>, u32)]) -> Result<f64, RankError> {
        if data.is_empty() {
            return Err(RankError::Empty);
        }
        let mut total = 0.0;
        for (x, r) in data {
            total += nn::cross_entropy(&self.probabilities(x)?, self.class_of(*r)?);
        }
        Ok(total / data.len() as f64)
    }

    fn class_of(&self, rating: u32) -> Result<usize, RankError> {
        if rating < 1 || rating > self.scale {
            return Err(RankError::RatingOutOfRange { rating, scale: self.scale });
        }
        Ok(rating as usize - 1)
    }

    /// Continues training from the current parameters. Returns the eval-mode
    /// loss before training followed by the loss after each epoch.
    pub fn train<R: Rng + ?Sized>(&mut self, data: &[(Vec<f64>, u32)], epochs: usize, rng: &mut R) -> Result<Vec<f64>, RankError> {
        let mut history = vec![self.loss(data)?];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let batch = self.config.batch_size.max(1);
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                let mut grads = GradientSet::zeros_like(&self.net);
                for &i in chunk {
                    let (x, r) = &data[i];
                    let class = self.class_of(*r)?;
                    let (logits, cache) = self.net.forward(x, true, rng)?;
                    let mut g = nn::softmax(&logits);
                    g[class] -= 1.0;
                    let (gs, _) = self.net.backward(&cache, &g)?;
                    grads.add_assign(&gs);
                }
                grads.scale(1.0 / chunk.len() as f64);
                self.optimizer.apply(&mut self.net, &grads, None)?;
            }
            history.push(self.loss(data)?);
        }
        Ok(history)
    }

    /// Featurizes a labeled set and trains on it.
    pub fn train_on<R: Rng + ?Sized>(&mut self, labeled: &LabeledSet, epochs: usize, rng: &mut R) -> Result<Vec<f64>, RankError> {
        let data = labeled
            .items()
            .iter()
            .map(|l| Ok((self.features(&l.pattern)?, l.rating)))
            .collect::<Result<Vec<_>, RankError>>()?;
        self.train(&data, epochs, rng)
    }

    /// Balanced accuracy of this predictor on a labeled set.
    pub fn accuracy_on(&self, labeled: &LabeledSet) -> Result<f64, RankError> {
        let mut preds = Vec::with_capacity(labeled.len());
        let mut labels = Vec::with_capacity(labeled.len());
        for l in labeled.items() {
            preds.push(self.predict(&l.pattern)?.rank);
            labels.push(l.rating);
        }
        balanced_accuracy(&preds, &labels, self.scale)
    }

    pub fn to_checkpoint(&self) -> PredictorCheckpoint {
        PredictorCheckpoint {
            version: nn::CHECKPOINT_VERSION,
            scale: self.scale,
            constant_scales: self.constant_scales.clone(),
            config: self.config.clone(),
            net: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(space: ActionSpace, ck: PredictorCheckpoint) -> Result<Self, RankError> {
        if ck.constant_scales.len() != space.schema().attributes().len() {
            return Err(RankError::Checkpoint("constant scales do not match the schema".into()));
        }
        let [h1, h2, h3] = ck.config.hidden;
        let dims = [feature_len(&space), h1, h2, h3, ck.scale as usize];
        let net = DenseNet::from_checkpoint(ck.net, Some(&dims))?;
        let optimizer = Optimizer::new(ck.config.optimizer, ck.config.lr, &net);
        Ok(RankPredictor { space, scale: ck.scale, constant_scales: ck.constant_scales, config: ck.config, net, optimizer })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCheckpoint {
    pub version: u32,
    pub scale: u32,
    pub constant_scales: Vec<f64>,
    pub config: PredictorConfig,
    pub net: NetCheckpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPattern {
    pub pattern: Pattern,
    pub rating: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledLine {
    pattern: String,
    rating: u32,
}

/// Labeled patterns keyed by canonical text; re-labeling replaces the old entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    items: Vec<LabeledPattern>,
}

impl LabeledSet {
    pub fn new() -> Self {
        LabeledSet::default()
    }

    pub fn items(&self) -> &[LabeledPattern] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts or replaces; returns true if an older rating was overwritten.
    pub fn insert(&mut self, pattern: Pattern, rating: u32) -> bool {
        let text = pattern.to_string();
        let old = self.items.iter().position(|l| l.pattern.to_string() == text);
        if let Some(i) = old {
            self.items.remove(i);
        }
        self.items.push(LabeledPattern { pattern, rating });
        old.is_some()
    }

    pub fn rating_of(&self, p: &Pattern) -> Option<u32> {
        let text = p.to_string();
        self.items.iter().find(|l| l.pattern.to_string() == text).map(|l| l.rating)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for l in &self.items {
            let line = LabeledLine { pattern: l.pattern.to_string(), rating: l.rating };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()
    }

    /// Reads `{"pattern": text, "rating": n}` lines; blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(r: R, schema: &EventSchema, scale: u32) -> Result<Self, RankError> {
        let mut set = LabeledSet::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| RankError::Labels { line: i + 1, message };
            let raw: LabeledLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if raw.rating < 1 || raw.rating > scale {
                return Err(bad(format!("rating {} outside 1..={scale}", raw.rating)));
            }
            let p = parse_pattern(&raw.pattern, schema).map_err(|e| bad(e.to_string()))?;
            if p.has_holes() {
                return Err(bad("labeled pattern contains holes".into()));
            }
            set.insert(p, raw.rating);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>, schema: &EventSchema, scale: u32) -> Result<Self, RankError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f), schema, scale)
    }
}
