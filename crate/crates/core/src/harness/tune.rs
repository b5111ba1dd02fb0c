//! Hyperparameter tuners over finite grids: exhaustive, random, gradientless
//! descent (GLD) and its coordinate-wise variant (CGLD).
//!
//! All tuners work in cell-index space. GLD proposes one point per radius of
//! a halving ladder, drawn uniformly from the ball of that radius around the
//! incumbent, snapped to the nearest cell. CGLD draws the same proposals but
//! along one axis at a time, cycling through the axes.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::TunerKind;
use crate::error::{Error, Result};

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Stop once a value within `tolerance · |optimum|` of `optimum` is seen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub optimum: f64,
    pub tolerance: f64,
}

impl Target {
    pub fn reached(&self, value: f64) -> bool {
        value <= self.optimum + self.tolerance * self.optimum.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerSpec {
    pub kind: TunerKind,
    /// Maximum objective evaluations (ignored by the exhaustive tuner).
    pub budget: usize,
    /// Smallest radius of the ladder, in cells.
    pub min_radius: f64,
    pub target: Option<Target>,
}

impl TunerSpec {
    pub fn new(kind: TunerKind, budget: usize) -> Self {
        Self {
            kind,
            budget,
            min_radius: 1.0,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub cell: Vec<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Vec<usize>,
    pub best_value: f64,
    /// Distinct objective evaluations.
    pub trials: usize,
    pub trials_to_target: Option<usize>,
    /// The budget ran out before the target was reached.
    pub exhausted: bool,
    /// Evaluations in the order they happened.
    pub history: Vec<Trial>,
}

struct Evaluator<F> {
    objective: F,
    cache: HashMap<Vec<usize>, f64>,
    history: Vec<Trial>,
    best: Option<(Vec<usize>, f64)>,
    target: Option<Target>,
    trials_to_target: Option<usize>,
}

impl<F: FnMut(&[usize]) -> f64> Evaluator<F> {
    fn eval(&mut self, cell: &[usize]) -> f64 {
        if let Some(&v) = self.cache.get(cell) {
            return v;
        }
        let v = (self.objective)(cell);
        self.cache.insert(cell.to_vec(), v);
        self.history.push(Trial {
            cell: cell.to_vec(),
            value: v,
        });
        if self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((cell.to_vec(), v));
        }
        if self.trials_to_target.is_none() && self.target.is_some_and(|t| t.reached(v)) {
            self.trials_to_target = Some(self.history.len());
        }
        v
    }

    fn trials(&self) -> usize {
        self.history.len()
    }

    fn done(&self, budget: usize) -> bool {
        self.trials_to_target.is_some() || self.trials() >= budget
    }
}

fn cells(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut flat| {
            let mut cell = vec![0; dims.len()];
            for a in (0..dims.len()).rev() {
                cell[a] = flat % dims[a];
                flat /= dims[a];
            }
            cell
        })
        .collect()
}

fn radius_ladder(dims: &[usize], min_radius: f64) -> Vec<f64> {
    let mut r = dims.iter().copied().max().unwrap_or(1).saturating_sub(1).max(1) as f64;
    let mut out = Vec::new();
    while r >= min_radius {
        out.push(r);
        r /= 2.0;
    }
    if out.is_empty() {
        out.push(min_radius);
    }
    out
}

/// Uniform draw from the ball of radius `r` in the coordinates listed in `axes`.
fn ball_offset<R: Rng + ?Sized>(rng: &mut R, ndim: usize, axes: &[usize], r: f64) -> Vec<f64> {
    let mut dir: Vec<f64> = axes.iter().map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scale = r * rng.random::<f64>().powf(1.0 / axes.len() as f64) / norm;
    for d in &mut dir {
        *d *= scale;
    }
    let mut out = vec![0.0; ndim];
    for (&a, d) in axes.iter().zip(dir) {
        out[a] = d;
    }
    out
}

fn snap(dims: &[usize], cell: &[usize], offset: &[f64]) -> Vec<usize> {
    cell.iter()
        .zip(offset)
        .zip(dims)
        .map(|((&c, &o), &n)| ((c as f64 + o).round().max(0.0) as usize).min(n - 1))
        .collect()
}

/// Minimizes `objective` over the grid with `dims` cells per axis.
pub fn tune<F, R>(dims: &[usize], spec: &TunerSpec, rng: &mut R, objective: F) -> Result<TuneResult>
where
    F: FnMut(&[usize]) -> f64,
    R: Rng + ?Sized,
{
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config(format!("tuning domain {dims:?} is empty")));
    }
    if !(spec.min_radius > 0.0) {
        return Err(Error::Config("minimum radius must be positive".into()));
    }
    let domain: usize = dims.iter().product();
    let budget = spec.budget.min(domain);
    let mut ev = Evaluator {
        objective,
        cache: HashMap::new(),
        history: Vec::new(),
        best: None,
        target: spec.target,
        trials_to_target: None,
    };
    match spec.kind {
        TunerKind::Grid => {
            for cell in cells(dims) {
                ev.eval(&cell);
            }
        }
        TunerKind::Random => {
            let mut all = cells(dims);
            all.shuffle(rng);
            for cell in all {
                if ev.done(budget) {
                    break;
                }
                ev.eval(&cell);
            }
        }
        TunerKind::Gld | TunerKind::Cgld => {
            let ladder = radius_ladder(dims, spec.min_radius);
            let mut x: Vec<usize> = dims.iter().map(|&n| rng.random_range(0..n)).collect();
            let mut fx = ev.eval(&x);
            let all_axes: Vec<usize> = (0..dims.len()).collect();
            // Proposals can keep landing on cached cells; cap the idle iterations.
            let max_iters = 100 * domain.max(budget);
            let mut iter = 0;
            while !ev.done(budget) && iter < max_iters && ev.trials() < domain {
                let axes = match spec.kind {
                    TunerKind::Cgld => vec![iter % dims.len()],
                    _ => all_axes.clone(),
                };
                let mut best = (x.clone(), fx);
                for &r in &ladder {
                    if ev.done(budget) {
                        break;
                    }
                    let offset = ball_offset(rng, dims.len(), &axes, r);
                    let cand = snap(dims, &x, &offset);
                    let v = ev.eval(&cand);
                    if v < best.1 {
                        best = (cand, v);
                    }
                }
                (x, fx) = best;
                iter += 1;
            }
        }
    }
    let (best, best_value) = ev.best.clone().expect("at least one evaluation");
    let exhausted = match spec.target {
        Some(_) => ev.trials_to_target.is_none(),
        None => spec.kind != TunerKind::Grid && ev.trials() >= budget && budget < domain,
    };
    if exhausted {
        log::warn!("tuning budget exhausted after {} trials", ev.trials());
    }
    Ok(TuneResult {
        best,
        best_value,
        trials: ev.trials(),
        trials_to_target: ev.trials_to_target,
        exhausted,
        history: ev.history,
    })
}
