//! Synthetic data: random patterns and noise streams with planted target patterns.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::CompiledPattern;
use crate::pattern::{
    parse_pattern, ActionSpace, CmpOp, Condition, ConditionAction, ConditionTarget, EventSchema, Pattern, PatternError, TargetSlot,
};
use crate::stream::Record;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("target {index}: {source}")]
    Target { index: usize, source: PatternError },
    #[error("target {0} contains holes")]
    TargetHoles(usize),
    #[error("could not build a matching instance of target {0}")]
    Unsatisfiable(usize),
    #[error("planting_rate must be in [0, 1]")]
    Rate,
    #[error("no targets")]
    NoTargets,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Uniformly random valid pattern. Constant slots become holes when `holes` is set,
/// otherwise constants are drawn from `constant_range` and rounded to 3 decimals.
pub fn random_pattern<R: Rng + ?Sized>(space: &ActionSpace, within: f64, constant_range: (f64, f64), holes: bool, rng: &mut R) -> Pattern {
    let schema = space.schema();
    let mut p = Pattern::empty(within);
    let len = rng.random_range(1..=space.max_len());
    for t in 0..len {
        let ty = schema.event_types().choose(rng).expect("non-empty schema");
        p.push_event(ty.clone());
        let n = rng.random_range(0..=space.max_conds());
        let mut options: Vec<(usize, usize, TargetSlot)> = space
            .condition_actions()
            .iter()
            .filter_map(|a| match *a {
                ConditionAction::Cond { attr, op, slot } => match slot {
                    TargetSlot::Event(k) if k >= t => None,
                    _ => Some((attr, op, slot)),
                },
                ConditionAction::Nop => None,
            })
            .collect();
        for _ in 0..n.min(options.len()) {
            let (attr, op, slot) = options.swap_remove(rng.random_range(0..options.len()));
            let target = match ActionSpace::slot_position(t, slot) {
                Some(k) => ConditionTarget::EventRef(k),
                None if holes => ConditionTarget::Hole(p.next_hole_id()),
                None => ConditionTarget::Constant((rng.random_range(constant_range.0..=constant_range.1) * 1000.0).round() / 1000.0),
            };
            p.events[t].conditions.push(Condition { attribute: schema.attributes()[attr].clone(), op: schema.operators()[op], target });
        }
    }
    p
}

/// Generator description: schema, target patterns and planting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    pub schema: EventSchema,
    pub targets: Vec<String>,
    pub planting_rate: f64,
    #[serde(default = "default_value_range")]
    pub value_range: (f64, f64),
    #[serde(default = "default_time_step")]
    pub time_step: f64,
}

fn default_value_range() -> (f64, f64) {
    (0.0, 100.0)
}

fn default_time_step() -> f64 {
    1.0
}

impl TargetsFile {
    /// Four event types, two attributes, two planted targets.
    pub fn default_corpus() -> Self {
        TargetsFile {
            schema: EventSchema::from_names(&["A", "B", "C", "D"], &["x", "y"], &["<", ">", "="]).expect("valid schema"),
            targets: vec![
                "EVENTS SEQ(A a, B b) WHERE b.x > a.x WITHIN 5s".into(),
                "EVENTS SEQ(C a, D b, A c) WHERE a.y < 40 AND c.x > b.x WITHIN 5s".into(),
            ],
            planting_rate: 0.1,
            value_range: default_value_range(),
            time_step: default_time_step(),
        }
    }

    pub fn parsed_targets(&self) -> Result<Vec<Pattern>, SynthError> {
        if self.targets.is_empty() {
            return Err(SynthError::NoTargets);
        }
        self.targets
            .iter()
            .enumerate()
            .map(|(index, t)| {
                let p = parse_pattern(t, &self.schema).map_err(|source| SynthError::Target { index, source })?;
                if p.has_holes() {
                    return Err(SynthError::TargetHoles(index));
                }
                Ok(p)
            })
            .collect()
    }
}

fn satisfy<R: Rng + ?Sized>(op: CmpOp, rhs: f64, rng: &mut R) -> f64 {
    let d = round2(rng.random_range(0.5..5.0));
    match op {
        CmpOp::Lt | CmpOp::Le => rhs - d,
        CmpOp::Gt | CmpOp::Ge | CmpOp::Ne => rhs + d,
        CmpOp::Eq => rhs,
    }
}

/// Attribute rows for one instance of `target`, checked against the matcher.
fn plant<R: Rng + ?Sized>(target: &Pattern, compiled: &CompiledPattern, spec: &TargetsFile, index: usize, rng: &mut R) -> Result<Vec<Record>, SynthError> {
    let schema = &spec.schema;
    let (lo, hi) = spec.value_range;
    for _ in 0..200 {
        let mut rows: Vec<Vec<Option<f64>>> = Vec::with_capacity(target.len());
        for (k, ev) in target.events.iter().enumerate() {
            let mut attrs: Vec<Option<f64>> = (0..schema.attributes().len()).map(|_| Some(round2(rng.random_range(lo..=hi)))).collect();
            for c in &ev.conditions {
                let a = schema.attr_index(&c.attribute).expect("validated");
                let rhs = match c.target {
                    ConditionTarget::Constant(v) => Some(v),
                    ConditionTarget::EventRef(j) if j < k => rows[j][a],
                    _ => None,
                };
                if let Some(rhs) = rhs {
                    attrs[a] = Some(satisfy(c.op, rhs, rng));
                }
            }
            rows.push(attrs);
        }
        let records: Vec<Record> = target
            .events
            .iter()
            .zip(rows)
            .enumerate()
            .map(|(k, (ev, attrs))| Record {
                ts: k as f64 * spec.time_step,
                event_type: schema.type_index(&ev.event_type).expect("validated"),
                attrs,
            })
            .collect();
        if compiled.count(&records, 1).count >= 1 {
            return Ok(records);
        }
    }
    Err(SynthError::Unsatisfiable(index))
}

/// `rows` records: uniform noise with target instances inserted at rate `planting_rate`
/// per position. Timestamps advance by `time_step`.
pub fn generate_stream<R: Rng + ?Sized>(spec: &TargetsFile, rows: usize, rng: &mut R) -> Result<Vec<Record>, SynthError> {
    if !(0.0..=1.0).contains(&spec.planting_rate) {
        return Err(SynthError::Rate);
    }
    let targets = spec.parsed_targets()?;
    let compiled = targets
        .iter()
        .enumerate()
        .map(|(index, t)| CompiledPattern::compile(t, &spec.schema, 0.0).map_err(|_| SynthError::TargetHoles(index)))
        .collect::<Result<Vec<_>, _>>()?;
    let (lo, hi) = spec.value_range;
    let n_types = spec.schema.event_types().len();
    let n_attrs = spec.schema.attributes().len();
    let mut out: Vec<Record> = Vec::with_capacity(rows);
    while out.len() < rows {
        let base = out.len() as f64 * spec.time_step;
        if rng.random::<f64>() < spec.planting_rate {
            let i = rng.random_range(0..targets.len());
            for mut r in plant(&targets[i], &compiled[i], spec, i, rng)? {
                r.ts += base;
                out.push(r);
            }
        } else {
            out.push(Record {
                ts: base,
                event_type: rng.random_range(0..n_types),
                attrs: (0..n_attrs).map(|_| Some(round2(rng.random_range(lo..=hi)))).collect(),
            });
        }
    }
    out.truncate(rows);
    Ok(out)
}
