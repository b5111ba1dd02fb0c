//! First-order optimizers sharing one update template:
//! `w ← w − α_t · η_t ⊙ m_t`, where adaptive methods set
//! `η_t = 1 / (√v + ε_t)` and SGD uses `η_t = 1`.
//!
//! Delayed variants (Delayed Adam, AvaGrad) build `η_t` from the second
//! moment *before* folding in the current gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    Adam,
    AmsGrad,
    DelayedAdam,
    AvaGrad,
    AvaGradW,
    AdamW,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => Method::Sgd,
            "adam" => Method::Adam,
            "amsgrad" => Method::AmsGrad,
            "delayed-adam" => Method::DelayedAdam,
            "avagrad" => Method::AvaGrad,
            "avagradw" => Method::AvaGradW,
            "adamw" => Method::AdamW,
            other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        })
    }
}

impl Method {
    fn decoupled_decay(self) -> bool {
        matches!(self, Method::AvaGradW | Method::AdamW)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpsKind {
    Constant,
    SqrtT,
    SqrtTCubed,
    /// `T^p1 · t^p2`.
    Power { p1: f64, p2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub kind: EpsKind,
    pub base: f64,
}

impl EpsSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            kind: EpsKind::Constant,
            base,
        }
    }

    /// `ε_t` at step `t ≥ 1` of a run with horizon `horizon`.
    pub fn at(&self, t: u64, horizon: u64) -> f64 {
        let t = t.max(1) as f64;
        match self.kind {
            EpsKind::Constant => self.base,
            EpsKind::SqrtT => self.base * t.sqrt(),
            EpsKind::SqrtTCubed => self.base * t.powf(1.5),
            EpsKind::Power { p1, p2 } => self.base * (horizon as f64).powf(p1) * t.powf(p2),
        }
    }

    /// Warning for power schedules whose exponents sum below one half, which
    /// falls outside the regime with a `O(1/√T)` guarantee.
    pub fn warning(&self) -> Option<String> {
        match self.kind {
            EpsKind::Power { p1, p2 } if p1 + p2 < 0.5 => Some(format!(
                "eps schedule exponents p1 + p2 = {} < 0.5; convergence guarantee does not apply",
                p1 + p2
            )),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.base > 0.0) || !self.base.is_finite() {
            return Err(Error::Config(format!("eps must be positive, got {}", self.base)));
        }
        if let EpsKind::Power { p2, .. } = self.kind {
            if p2 < 0.0 {
                return Err(Error::Config("eps schedule must be nondecreasing in t".into()));
            }
        }
        Ok(())
    }
}

/// Global learning-rate schedule `α_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant { base: f64 },
    /// `base / t^power`.
    InvPower { base: f64, power: f64 },
    /// Multiplies by `factor` every `every` steps.
    StepDecay { base: f64, every: u64, factor: f64 },
    /// `scale · ε_t / √T`, tying the step size to the eps schedule.
    EpsProportional { scale: f64 },
}

impl LrSchedule {
    pub fn at(&self, t: u64, eps_t: f64, horizon: u64) -> f64 {
        let tf = t.max(1) as f64;
        match *self {
            LrSchedule::Constant { base } => base,
            LrSchedule::InvPower { base, power } => base / tf.powf(power),
            LrSchedule::StepDecay { base, every, factor } => {
                let k = if every == 0 { 0 } else { (t.max(1) - 1) / every };
                base * factor.powi(k as i32)
            }
            LrSchedule::EpsProportional { scale } => scale * eps_t / (horizon.max(1) as f64).sqrt(),
        }
    }
}

/// How AvaGrad normalizes `η_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvaNorm {
    /// One norm over every parameter.
    #[default]
    Global,
    /// A separate norm per parameter tensor.
    PerTensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: Method,
    pub lr: LrSchedule,
    pub beta1: f64,
    /// Use `β₁/√t` instead of a constant `β₁`.
    pub beta1_decay: bool,
    pub beta2: f64,
    pub eps: EpsSchedule,
    pub weight_decay: f64,
    pub bias_correction: bool,
    /// SGD momentum.
    pub momentum: f64,
    /// Horizon `T` used by schedules that depend on it.
    pub horizon: u64,
    pub ava_norm: AvaNorm,
}

impl OptimConfig {
    pub fn new(method: Method, lr: f64) -> Self {
        Self {
            method,
            lr: LrSchedule::Constant { base: lr },
            beta1: if method == Method::Sgd { 0.0 } else { 0.9 },
            beta1_decay: false,
            beta2: 0.999,
            eps: EpsSchedule::constant(1e-8),
            weight_decay: 0.0,
            bias_correction: false,
            momentum: 0.0,
            horizon: 1,
            ava_norm: AvaNorm::Global,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(Method::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(Method::Adam, lr)
    }

    pub fn validate(&self) -> Result<()> {
        self.eps.validate()?;
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config(format!("beta1 must lie in [0, 1), got {}", self.beta1)));
        }
        if !(0.0..=1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("beta2 must lie in [0, 1], got {}", self.beta2)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Moment accumulators, allocated lazily on the first step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub vhat: Vec<Tensor>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    state: OptimState,
    warnings: Vec<String>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let warnings: Vec<String> = cfg.eps.warning().into_iter().collect();
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            cfg,
            state: OptimState::default(),
            warnings,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimState {
        &self.state
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// Learning rate and eps that the next step will use.
    pub fn next_rates(&self) -> (f64, f64) {
        let t = self.state.step + 1;
        let eps = self.cfg.eps.at(t, self.cfg.horizon);
        (self.cfg.lr.at(t, eps, self.cfg.horizon), eps)
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { param: i, index: j });
            }
        }
        if self.state.m.is_empty() {
            self.state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.state.v = self.state.m.clone();
            if self.cfg.method == Method::AmsGrad {
                self.state.vhat = self.state.m.clone();
            }
        } else if self.state.m.len() != params.len() {
            return Err(Error::Shape("parameter list changed between steps".into()));
        }

        self.state.step += 1;
        let t = self.state.step;
        let (lr, eps) = {
            let eps = self.cfg.eps.at(t, self.cfg.horizon);
            (self.cfg.lr.at(t, eps, self.cfg.horizon), eps)
        };
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps_t must be positive, got {eps}")));
        }
        let cfg = &self.cfg;
        let beta1 = if cfg.beta1_decay {
            cfg.beta1 / (t as f64).sqrt()
        } else {
            cfg.beta1
        };
        let beta2 = cfg.beta2;

        // Coupled L2 for every method without decoupled decay.
        let effective: Vec<Tensor> = if cfg.weight_decay > 0.0 && !cfg.method.decoupled_decay() {
            grads
                .iter()
                .zip(params.iter())
                .map(|(g, p)| g.zip_map(p, |a, w| a + cfg.weight_decay * w))
                .collect()
        } else {
            grads.to_vec()
        };

        let (c1, c2) = if cfg.bias_correction {
            (
                1.0 - cfg.beta1.powi(t as i32),
                1.0 - beta2.powi(t as i32),
            )
        } else {
            (1.0, 1.0)
        };

        let st = &mut self.state;
        match cfg.method {
            Method::Sgd => {
                for ((p, g), buf) in params.iter_mut().zip(&effective).zip(&mut st.m) {
                    for ((w, &gi), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                        *b = cfg.momentum * *b + gi;
                        *w -= lr * *b;
                    }
                }
            }
            Method::Adam | Method::AdamW | Method::AmsGrad => {
                let ams = cfg.method == Method::AmsGrad;
                for i in 0..params.len() {
                    let g = effective[i].data();
                    let m = st.m[i].data_mut();
                    let v = st.v[i].data_mut();
                    for j in 0..g.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    }
                    let denom_src: &[f64] = if ams {
                        let vh = st.vhat[i].data_mut();
                        for j in 0..g.len() {
                            vh[j] = vh[j].max(v[j]);
                        }
                        st.vhat[i].data()
                    } else {
                        st.v[i].data()
                    };
                    let m = st.m[i].data();
                    let w = params[i].data_mut();
                    for j in 0..g.len() {
                        let denom = (denom_src[j] / c2).sqrt() + eps;
                        w[j] -= lr * (m[j] / c1) / denom;
                    }
                }
            }
            Method::DelayedAdam | Method::AvaGrad | Method::AvaGradW => {
                // η from the previous second moment.
                let eta: Vec<Tensor> = st
                    .v
                    .iter()
                    .map(|v| v.map(|x| 1.0 / ((x / c2).sqrt() + eps)))
                    .collect();
                let scales: Vec<f64> = if cfg.method == Method::DelayedAdam {
                    vec![1.0; eta.len()]
                } else {
                    match cfg.ava_norm {
                        AvaNorm::Global => {
                            let d: usize = eta.iter().map(Tensor::len).sum();
                            let sq: f64 = eta.iter().map(|e| e.dot(e)).sum();
                            let norm = (sq / d as f64).sqrt();
                            assert!(norm > 0.0, "eta norm vanished");
                            vec![1.0 / norm; eta.len()]
                        }
                        AvaNorm::PerTensor => eta
                            .iter()
                            .map(|e| {
                                let norm = (e.dot(e) / e.len() as f64).sqrt();
                                assert!(norm > 0.0, "eta norm vanished");
                                1.0 / norm
                            })
                            .collect(),
                    }
                };
                for i in 0..params.len() {
                    let g = effective[i].data();
                    let m = st.m[i].data_mut();
                    let e = eta[i].data();
                    let w = params[i].data_mut();
                    for j in 0..g.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        w[j] -= lr * scales[i] * e[j] * (m[j] / c1);
                    }
                    let v = st.v[i].data_mut();
                    for j in 0..g.len() {
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    }
                }
            }
        }

        if cfg.method.decoupled_decay() {
            decoupled_decay(params, lr, cfg.weight_decay);
        }
        Ok(())
    }
}

/// `w ← w − α·λ·w`.
pub fn decoupled_decay(params: &mut [Tensor], lr: f64, weight_decay: f64) {
    if weight_decay == 0.0 {
        return;
    }
    for p in params {
        for w in p.data_mut() {
            *w -= lr * weight_decay * *w;
        }
    }
}

/// Clamps every entry into `[lo, hi]`.
pub fn project_box(params: &mut [Tensor], lo: f64, hi: f64) {
    for p in params {
        for w in p.data_mut() {
            *w = w.clamp(lo, hi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(x)]
    }

    #[test]
    fn sgd_plain_step() {
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1)).unwrap();
        let mut w = one(1.0);
        opt.step(&mut w, &one(2.0)).unwrap();
        assert!((w[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_buffer() {
        let mut cfg = OptimConfig::sgd(1.0);
        cfg.momentum = 0.9;
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut w = one(0.0);
        opt.step(&mut w, &one(1.0)).unwrap();
        assert_eq!(opt.state().m[0].data()[0], 1.0);
        opt.step(&mut w, &one(1.0)).unwrap();
        assert!((opt.state().m[0].data()[0] - 1.9).abs() < 1e-15);
        assert!((w[0].data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_sign_step() {
        let mut cfg = OptimConfig::adam(1.0);
        cfg.beta1 = 0.0;
        cfg.beta2 = 0.0;
        cfg.eps = EpsSchedule::constant(f64::MIN_POSITIVE);
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut w = one(0.0);
        opt.step(&mut w, &one(2.0)).unwrap();
        assert!((w[0].data()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_moments() {
        let mut opt = Optimizer::new(OptimConfig::adam(1e-3)).unwrap();
        let mut w = one(0.0);
        opt.step(&mut w, &one(1.0)).unwrap();
        assert!((opt.state().m[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((opt.state().v[0].data()[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn delayed_adam_first_denominator_is_eps() {
        let mut cfg = OptimConfig::new(Method::DelayedAdam, 1e-6);
        cfg.beta1 = 0.0;
        cfg.eps = EpsSchedule::constant(1e-2);
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut w = one(0.0);
        opt.step(&mut w, &one(3.0)).unwrap();
        assert!((w[0].data()[0] + 1e-6 * 3.0 / 1e-2).abs() < 1e-18);
    }

    #[test]
    fn avagrad_single_parameter_collapses_to_momentum_step() {
        let mut cfg = OptimConfig::new(Method::AvaGrad, 0.5);
        cfg.beta1 = 0.0;
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut w = one(1.0);
        for g in [2.0, -3.0, 0.25] {
            let before = w[0].data()[0];
            opt.step(&mut w, &one(g)).unwrap();
            assert!((w[0].data()[0] - (before - 0.5 * g)).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_examples() {
        let mut w = one(10.0);
        decoupled_decay(&mut w, 1.0, 0.0);
        assert_eq!(w[0].data()[0], 10.0);
        decoupled_decay(&mut w, 1.0, 0.1);
        assert_eq!(w[0].data()[0], 9.0);
    }

    #[test]
    fn eps_schedules() {
        assert_eq!(EpsSchedule::constant(1e-8).at(999, 1), 1e-8);
        let cubed = EpsSchedule {
            kind: EpsKind::SqrtTCubed,
            base: 1.0,
        };
        assert_eq!(cubed.at(4, 1), 8.0);
        let pw = EpsSchedule {
            kind: EpsKind::Power { p1: 0.5, p2: 0.0 },
            base: 3.0,
        };
        for t in [1, 7, 100] {
            assert!((pw.at(t, 100) - 30.0).abs() < 1e-12);
        }
        let weak = EpsSchedule {
            kind: EpsKind::Power { p1: 0.1, p2: 0.2 },
            base: 1.0,
        };
        assert!(weak.warning().is_some());
        assert!(pw.warning().is_none());
    }

    #[test]
    fn rejects_nonpositive_eps_and_nan_gradients() {
        let mut cfg = OptimConfig::adam(1e-3);
        cfg.eps = EpsSchedule::constant(0.0);
        assert!(Optimizer::new(cfg).is_err());
        let mut opt = Optimizer::new(OptimConfig::adam(1e-3)).unwrap();
        let mut w = vec![Tensor::zeros(&[2]), Tensor::zeros(&[3])];
        let g = vec![Tensor::zeros(&[2]), Tensor::vector(vec![0.0, f64::NAN, 0.0])];
        let err = opt.step(&mut w, &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { param: 1, index: 1 }));
    }

    #[test]
    fn step_decay_schedule() {
        let s = LrSchedule::StepDecay {
            base: 1.0,
            every: 10,
            factor: 0.2,
        };
        assert_eq!(s.at(10, 0.0, 1), 1.0);
        assert!((s.at(11, 0.0, 1) - 0.2).abs() < 1e-15);
    }
}
