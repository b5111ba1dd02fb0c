//! A stochastic one-dimensional problem on `[0, 1]` where Adam provably
//! fails to converge.
//!
//! With probability `p` the sampled loss is `C·w²/2`, otherwise `−w`, so the
//! stochastic gradient is `C·w` or `−1`. The expected gradient
//! `pCw − (1 − p)` vanishes near the middle of the domain, yet a rare large
//! gradient barely moves an adaptive method while the frequent `−1` pushes it
//! toward `w = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{project_box, EpsKind, EpsSchedule, LrSchedule, Method, OptimConfig, Optimizer};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProblem {
    pub c: f64,
    pub delta: f64,
}

impl Default for SynthProblem {
    fn default() -> Self {
        Self { c: 999.0, delta: 1.0 }
    }
}

impl SynthProblem {
    pub fn new(c: f64, delta: f64) -> Result<Self> {
        let prob = Self { c, delta };
        let p = prob.p();
        if !(delta > 0.0) || !(p > 0.0 && p < 1.0) || c <= (1.0 - p) / p {
            return Err(Error::Config(format!(
                "synthetic problem needs delta > 0 and C > (1-p)/p, got C={c}, delta={delta}"
            )));
        }
        Ok(prob)
    }

    /// Probability of the large-gradient branch.
    pub fn p(&self) -> f64 {
        (1.0 + self.delta) / (self.c + 1.0)
    }

    /// Point where the expected gradient vanishes.
    pub fn stationary_point(&self) -> f64 {
        let p = self.p();
        (1.0 - p) / (self.c * p)
    }

    /// Expected gradient at `w`.
    pub fn grad(&self, w: f64) -> f64 {
        let p = self.p();
        p * self.c * w - (1.0 - p)
    }

    /// One stochastic gradient sample.
    pub fn instant_grad<R: Rng + ?Sized>(&self, w: f64, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.p() {
            self.c * w
        } else {
            -1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub step: u64,
    pub w: f64,
    /// Mean of `‖∇f(w_i)‖²` over the iterates visited so far.
    pub running_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub records: Vec<SynthRecord>,
    pub final_w: f64,
    pub running_mean: f64,
}

/// Runs `steps` projected optimizer steps from `w_init`, logging every
/// `log_every` steps (and always the last one).
pub fn synth_run(
    problem: &SynthProblem,
    cfg: &OptimConfig,
    steps: u64,
    w_init: f64,
    seed: u64,
    log_every: u64,
) -> Result<SynthRun> {
    if !(0.0..=1.0).contains(&w_init) {
        return Err(Error::Config(format!("initial point {w_init} outside [0, 1]")));
    }
    let mut rng = crate::seeded(seed);
    let mut opt = Optimizer::new(cfg.clone())?;
    let mut params = vec![Tensor::scalar(w_init)];
    let mut grad = vec![Tensor::scalar(0.0)];
    let mut acc = 0.0;
    let mut records = Vec::new();
    let log_every = log_every.max(1);
    for t in 1..=steps {
        let w = params[0].data()[0];
        let full = problem.grad(w);
        acc += full * full;
        grad[0].data_mut()[0] = problem.instant_grad(w, &mut rng);
        opt.step(&mut params, &grad)?;
        project_box(&mut params, 0.0, 1.0);
        if t % log_every == 0 || t == steps {
            records.push(SynthRecord {
                step: t,
                w: params[0].data()[0],
                running_mean: acc / t as f64,
            });
        }
    }
    let running_mean = if steps == 0 { 0.0 } else { acc / steps as f64 };
    Ok(SynthRun {
        records,
        final_w: params[0].data()[0],
        running_mean,
    })
}

/// Optimizer presets for the convergence comparison. All use `β₁ = 0` and
/// `β₂ = 0.99`.
pub mod presets {
    use super::*;

    fn base(method: Method, lr: LrSchedule, horizon: u64) -> OptimConfig {
        let mut cfg = OptimConfig::new(method, 0.0);
        cfg.lr = lr;
        cfg.beta1 = 0.0;
        cfg.beta2 = 0.99;
        cfg.eps = EpsSchedule::constant(1e-8);
        cfg.horizon = horizon;
        cfg
    }

    /// Adam with a fixed `ε = 1e-8` and `α = 1e-3`.
    pub fn adam(horizon: u64) -> OptimConfig {
        base(Method::Adam, LrSchedule::Constant { base: 1e-3 }, horizon)
    }

    /// Adam with `ε_t = t^{3/2}` and `α_t = 0.01·ε_t/√T`.
    pub fn adam_growing_eps(horizon: u64) -> OptimConfig {
        let mut cfg = base(Method::Adam, LrSchedule::EpsProportional { scale: 0.01 }, horizon);
        cfg.eps = EpsSchedule {
            kind: EpsKind::SqrtTCubed,
            base: 1.0,
        };
        cfg
    }

    /// Delayed Adam with `ε = 1e-8` and `α_t = 0.016 / t^{0.55}`.
    pub fn delayed_adam(horizon: u64) -> OptimConfig {
        base(
            Method::DelayedAdam,
            LrSchedule::InvPower {
                base: 0.016,
                power: 0.55,
            },
            horizon,
        )
    }

    /// AMSGrad with `ε = 1e-8` and `α = 1e-2`.
    pub fn amsgrad(horizon: u64) -> OptimConfig {
        base(Method::AmsGrad, LrSchedule::Constant { base: 1e-2 }, horizon)
    }

    /// SGD with `α_t = 0.005/√t`.
    pub fn sgd(horizon: u64) -> OptimConfig {
        base(
            Method::Sgd,
            LrSchedule::InvPower {
                base: 0.005,
                power: 0.5,
            },
            horizon,
        )
    }
}
