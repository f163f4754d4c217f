//! Fills constant holes of a pattern formula by Bayesian optimization of an objective
//! (the match count of the instantiated pattern).

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::pattern::{EventSchema, Pattern};

pub const BOUND_MARGIN: f64 = 0.05;
pub const LENGTH_SCALE_FRACTION: f64 = 0.2;
pub const NOISE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("attribute `{0}` never observed; cannot bound hole ?{1}")]
    Unobserved(String, u32),
    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoleSlot {
    pub hole: u32,
    pub attribute: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SearchSpace {
    pub slots: Vec<HoleSlot>,
}

impl SearchSpace {
    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.slots.iter().zip(x).all(|(s, &v)| v >= s.lower && v <= s.upper)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.slots.iter().map(|s| rng.random_range(s.lower..=s.upper)).collect()
    }

    /// Pattern with each hole replaced by the matching coordinate of `x`.
    pub fn instantiate(&self, p: &Pattern, x: &[f64]) -> Pattern {
        p.fill_holes(|id, _, _| {
            let i = self.slots.iter().position(|s| s.hole == id).expect("hole in search space");
            x[i]
        })
    }
}

/// One slot per hole, bounded by the observed attribute range widened by 5% on each side.
/// `ranges[a]` is the observed `(min, max)` of attribute `a`.
pub fn extract_holes(p: &Pattern, schema: &EventSchema, ranges: &[Option<(f64, f64)>]) -> Result<SearchSpace, BayesError> {
    let mut slots = Vec::new();
    for (_, c, id) in p.holes() {
        let range = schema.attr_index(&c.attribute).and_then(|a| ranges.get(a).copied().flatten());
        let (lo, hi) = range.ok_or_else(|| BayesError::Unobserved(c.attribute.clone(), id))?;
        let width = hi - lo;
        let margin = if width > 0.0 { BOUND_MARGIN * width } else { (BOUND_MARGIN * lo.abs()).max(1.0) };
        slots.push(HoleSlot { hole: id, attribute: c.attribute.clone(), lower: lo - margin, upper: hi + margin });
    }
    Ok(SearchSpace { slots })
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BayesError> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return Err(BayesError::NotPositiveDefinite);
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    for i in 0..b.len() {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn solve_upper_t(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Gaussian-process regression with a fixed RBF kernel on standardized targets.
#[derive(Debug, Clone)]
pub struct Surrogate {
    length_scales: Vec<f64>,
    noise: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl Surrogate {
    pub fn new(length_scales: Vec<f64>) -> Self {
        Surrogate {
            length_scales,
            noise: NOISE_VARIANCE,
            x: Vec::new(),
            y: Vec::new(),
            y_mean: 0.0,
            y_std: 1.0,
            chol: Vec::new(),
            alpha: Vec::new(),
        }
    }

    /// Length scales set to a fixed fraction of each slot's width.
    pub fn for_space(space: &SearchSpace) -> Self {
        Surrogate::new(space.slots.iter().map(|s| LENGTH_SCALE_FRACTION * (s.upper - s.lower)).collect())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn observations(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).zip(&self.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        (-0.5 * d2).exp()
    }

    pub fn observe(&mut self, x: Vec<f64>, y: f64) -> Result<(), BayesError> {
        self.x.push(x);
        self.y.push(y);
        self.refit()
    }

    fn refit(&mut self) -> Result<(), BayesError> {
        let n = self.y.len();
        self.y_mean = self.y.iter().sum::<f64>() / n as f64;
        let var = self.y.iter().map(|v| (v - self.y_mean).powi(2)).sum::<f64>() / n as f64;
        self.y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = self.y.iter().map(|v| (v - self.y_mean) / self.y_std).collect();
        let mut jitter = 0.0;
        loop {
            let k: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| self.kernel(&self.x[i], &self.x[j]) + if i == j { self.noise + jitter } else { 0.0 })
                        .collect()
                })
                .collect();
            match cholesky(&k) {
                Ok(l) => {
                    self.alpha = solve_upper_t(&l, &solve_lower(&l, &ys));
                    self.chol = l;
                    return Ok(());
                }
                Err(e) if jitter > 1e-2 => return Err(e),
                Err(_) => jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 },
            }
        }
    }

    /// Posterior mean and standard deviation in objective units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        if self.x.is_empty() {
            return (0.0, 1.0);
        }
        let ks: Vec<f64> = self.x.iter().map(|xi| self.kernel(xi, x)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = solve_lower(&self.chol, &ks);
        let var = (1.0 - v.iter().map(|a| a * a).sum::<f64>()).max(1e-12);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }

    pub fn best(&self) -> Option<f64> {
        self.y.iter().copied().reduce(f64::max)
    }

    /// Expected improvement over the best observation (maximization).
    pub fn expected_improvement(&self, x: &[f64]) -> f64 {
        let Some(best) = self.best() else { return 0.0 };
        let (mu, sd) = self.predict(x);
        let n = Normal::standard();
        let z = (mu - best) / sd;
        ((mu - best) * n.cdf(z) + sd * n.pdf(z)).max(0.0)
    }
}

/// `k` proposals: the top-`k` distinct points of a uniform pool by expected
/// improvement, or `k` uniform samples when nothing has been observed.
pub fn propose<R: Rng + ?Sized>(surrogate: &Surrogate, space: &SearchSpace, k: usize, pool: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(k >= 1, "k must be positive");
    if surrogate.is_empty() {
        return (0..k).map(|_| space.sample(rng)).collect();
    }
    let mut scored: Vec<(f64, Vec<f64>)> = (0..pool.max(k))
        .map(|_| {
            let x = space.sample(rng);
            (surrogate.expected_improvement(&x), x)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (_, x) in scored {
        if out.len() == k {
            break;
        }
        if !out.contains(&x) && !surrogate.x.contains(&x) {
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesBudget {
    pub iterations: usize,
    pub proposals: usize,
    pub patience: usize,
    pub pool: usize,
}

impl Default for BayesBudget {
    fn default() -> Self {
        BayesBudget { iterations: 10, proposals: 3, patience: 5, pool: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub pattern: Pattern,
    pub best_value: f64,
    pub best_x: Vec<f64>,
    /// Running best after each iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Searches the hole values that maximize `objective`.
pub fn complete<F, R>(p: &Pattern, space: &SearchSpace, mut objective: F, budget: BayesBudget, rng: &mut R) -> Result<Completion, BayesError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if space.is_empty() {
        let v = objective(&[]);
        return Ok(Completion { pattern: p.clone(), best_value: v, best_x: Vec::new(), history: vec![v], evaluations: 1 });
    }
    let mut gp = Surrogate::for_space(space);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut evaluations = 0;
    for _ in 0..budget.iterations {
        let mut improved = false;
        for x in propose(&gp, space, budget.proposals, budget.pool, rng) {
            let y = objective(&x);
            evaluations += 1;
            if best.as_ref().map_or(true, |(b, _)| y > *b) {
                best = Some((y, x.clone()));
                improved = true;
            }
            gp.observe(x, y)?;
        }
        history.push(best.as_ref().map(|b| b.0).unwrap_or(f64::NEG_INFINITY));
        stale = if improved { 0 } else { stale + 1 };
        if stale >= budget.patience {
            break;
        }
    }
    let (best_value, best_x) = best.expect("at least one evaluation");
    Ok(Completion { pattern: space.instantiate(p, &best_x), best_value, best_x, history, evaluations })
}
