//! Learned mixed-precision quantization (SMOL).
//!
//! A `p`-bit weight is a signed fixed-point value `Σ_{j≤p} b_j·2^{1−j}` with
//! `b_j ∈ {±1}`, i.e. an odd multiple of `2^{1−p}` in `(−2, 2)`. Precisions
//! are learned through a noise proxy: each weight is perturbed by
//! `σ(s)·ε` with `ε ~ U(±1)`, and a penalty on `log₂(1 + e^{−s})` (the
//! continuous bit count) pushes the tolerated noise up. After training,
//! `s` is mapped to integer precisions, weights that are closer to 0 than to
//! their quantized value get zero bits, and the model is fine-tuned with a
//! straight-through estimator.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::nn::{Activation, Dataset, DenseNet};
use crate::optim::{OptimConfig, Optimizer};
use crate::tensor::Tensor;

/// Largest precision that may be enumerated explicitly.
pub const PRECISION_CAP: u32 = 16;

/// Every value representable with `p` bits, ascending.
pub fn representable_values(p: u32) -> Result<Vec<f64>> {
    if p > PRECISION_CAP {
        return Err(Error::PrecisionCap {
            requested: p,
            cap: PRECISION_CAP,
        });
    }
    if p == 0 {
        return Ok(vec![0.0]);
    }
    let unit = 2f64.powi(1 - p as i32);
    let kmax = (1i64 << p) - 1;
    Ok((-kmax..=kmax).step_by(2).map(|k| k as f64 * unit).collect())
}

/// Nearest `p`-bit value to `w`. Exact midpoints go to the smaller magnitude
/// (and to `+2^{1−p}` at zero, where both neighbors tie).
pub fn quantize_q(w: f64, p: u32) -> f64 {
    if p == 0 {
        return 0.0;
    }
    if p > 60 {
        let bound = 2.0 - 2f64.powi(1 - p as i32);
        return w.clamp(-bound, bound);
    }
    let unit = 2f64.powi(1 - p as i32);
    let kmax = ((1u64 << p) - 1) as f64;
    let x = (w / unit).clamp(-kmax, kmax);
    let f = x.floor();
    let lower = if f.rem_euclid(2.0) == 1.0 { f } else { f - 1.0 };
    let upper = lower + 2.0;
    let (dl, du) = (x - lower, upper - x);
    let k = if dl < du {
        lower
    } else if du < dl {
        upper
    } else if lower.abs() < upper.abs() {
        lower
    } else {
        upper
    };
    k.clamp(-kmax, kmax) * unit
}

/// Value of a signed bitstring.
pub fn bits_value(bits: &[i8]) -> f64 {
    bits.iter()
        .enumerate()
        .map(|(j, &b)| f64::from(b) * 2f64.powi(-(j as i32)))
        .sum()
}

/// Shortest signed bitstring encoding `w`, with its length.
pub fn v_inverse(w: f64) -> Result<(Vec<i8>, u32)> {
    if w == 0.0 {
        return Ok((Vec::new(), 0));
    }
    for p in 1..=PRECISION_CAP {
        if quantize_q(w, p) != w {
            continue;
        }
        let mut rest = w;
        let mut bits = Vec::with_capacity(p as usize);
        for j in 0..p {
            let b: i8 = if rest >= 0.0 { 1 } else { -1 };
            rest -= f64::from(b) * 2f64.powi(-(j as i32));
            bits.push(b);
        }
        debug_assert_eq!(rest, 0.0);
        return Ok((bits, p));
    }
    Err(Error::NotRepresentable(w))
}

/// Score that starts training at `p_init` bits: `−ln(2^{p_init−1} − 1)`.
/// One bit maps to `+∞` (no noise tolerance needed beyond `σ = 1`).
pub fn s_init(p_init: u32) -> f64 {
    -(2f64.powi(p_init as i32 - 1) - 1.0).ln()
}

/// Continuous bit count `log₂(1 + e^{−s})`.
pub fn continuous_bits(s: f64) -> f64 {
    softplus(-s) / LN_2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    Round,
    Floor,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" => Ok(Rounding::Round),
            "floor" => Ok(Rounding::Floor),
            other => Err(Error::Config(format!("unknown rounding `{other}`"))),
        }
    }
}

/// Integer precision for score `s`: `1 + round(log₂(1 + e^{−s}))`.
pub fn precision_from_score(s: f64, rounding: Rounding) -> u32 {
    let c = continuous_bits(s);
    let r = match rounding {
        Rounding::Round => c.round(),
        Rounding::Floor => c.floor(),
    };
    1 + r.max(0.0) as u32
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    PerParameter,
    PerLayer,
    PerNetwork,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-parameter" | "parameter" => Ok(Granularity::PerParameter),
            "per-layer" | "layer" => Ok(Granularity::PerLayer),
            "per-network" | "network" => Ok(Granularity::PerNetwork),
            other => Err(Error::Config(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Learnable precision scores over the network's weights (biases stay in
/// full precision).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionState {
    pub granularity: Granularity,
    /// One score per group.
    pub s: Tensor,
    /// Group of every weight entry, flat over layers in order.
    pub group: Vec<usize>,
    /// Weight shapes, one per layer.
    pub shapes: Vec<Vec<usize>>,
}

impl PrecisionState {
    pub fn new(net: &DenseNet, granularity: Granularity, p_init: u32) -> Result<Self> {
        if p_init == 0 {
            return Err(Error::Config("initial precision must be at least 1 bit".into()));
        }
        let shapes: Vec<Vec<usize>> = net
            .weight_indices()
            .iter()
            .map(|&i| net.params()[i].shape().to_vec())
            .collect();
        let mut group = Vec::new();
        let mut next = 0;
        for (l, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            match granularity {
                Granularity::PerParameter => {
                    group.extend(next..next + n);
                    next += n;
                }
                Granularity::PerLayer => group.extend(std::iter::repeat_n(l, n)),
                Granularity::PerNetwork => group.extend(std::iter::repeat_n(0, n)),
            }
        }
        let groups = match granularity {
            Granularity::PerParameter => next,
            Granularity::PerLayer => shapes.len(),
            Granularity::PerNetwork => 1,
        };
        Ok(Self {
            granularity,
            s: Tensor::full(&[groups], s_init(p_init)),
            group,
            shapes,
        })
    }

    pub fn groups(&self) -> usize {
        self.s.len()
    }

    pub fn group_sizes(&self) -> Vec<f64> {
        let mut sizes = vec![0.0; self.groups()];
        for &g in &self.group {
            sizes[g] += 1.0;
        }
        sizes
    }

    /// Flat group indices covering layer `l`.
    fn layer_groups(&self, l: usize) -> Vec<usize> {
        let start: usize = self.shapes[..l].iter().map(|s| s.iter().product::<usize>()).sum();
        let n: usize = self.shapes[l].iter().product();
        self.group[start..start + n].to_vec()
    }
}

/// Integer bit widths per weight entry, flat over layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionMap {
    pub bits: Vec<u32>,
    pub shapes: Vec<Vec<usize>>,
}

impl PrecisionMap {
    pub fn uniform(net: &DenseNet, p: u32) -> Self {
        let shapes: Vec<Vec<usize>> = net
            .weight_indices()
            .iter()
            .map(|&i| net.params()[i].shape().to_vec())
            .collect();
        let n = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        Self {
            bits: vec![p; n],
            shapes,
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.bits.iter().map(|&b| u64::from(b)).sum()
    }

    /// Average bits per parameter.
    pub fn bpp(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.total_bits() as f64 / self.bits.len() as f64
    }

    /// Size reduction relative to 32-bit floats.
    pub fn compression_ratio(&self) -> f64 {
        32.0 / self.bpp()
    }

    fn layer_slices(&self) -> Vec<&[u32]> {
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut start = 0;
        for s in &self.shapes {
            let n: usize = s.iter().product();
            out.push(&self.bits[start..start + n]);
            start += n;
        }
        out
    }
}

/// Integer precisions from the scores, expanded to every weight.
pub fn finalize_precisions(state: &PrecisionState, rounding: Rounding) -> PrecisionMap {
    let per_group: Vec<u32> = state
        .s
        .data()
        .iter()
        .map(|&s| precision_from_score(s, rounding))
        .collect();
    PrecisionMap {
        bits: state.group.iter().map(|&g| per_group[g]).collect(),
        shapes: state.shapes.clone(),
    }
}

/// Layer weights as one flat vector.
pub fn flat_weights(net: &DenseNet, params: &[Tensor]) -> Vec<f64> {
    net.weight_indices()
        .iter()
        .flat_map(|&i| params[i].data().iter().copied())
        .collect()
}

/// Sets `p = 0` wherever `|w| < |w − Q(w, p)|`.
pub fn zero_precision_allocate(
    weights: &[f64],
    map: &PrecisionMap,
    granularity: Granularity,
) -> Result<PrecisionMap> {
    if granularity != Granularity::PerParameter {
        return Err(Error::Granularity(format!("{granularity:?}")));
    }
    if weights.len() != map.bits.len() {
        return Err(Error::Shape(format!(
            "{} weights but {} precisions",
            weights.len(),
            map.bits.len()
        )));
    }
    let bits = weights
        .iter()
        .zip(&map.bits)
        .map(|(&w, &p)| if w.abs() < (w - quantize_q(w, p)).abs() { 0 } else { p })
        .collect();
    Ok(PrecisionMap {
        bits,
        shapes: map.shapes.clone(),
    })
}

/// Parameters with every weight replaced by `Q(w, p)`.
pub fn quantize_params(net: &DenseNet, params: &[Tensor], map: &PrecisionMap) -> Vec<Tensor> {
    let mut out = params.to_vec();
    for (l, bits) in map.layer_slices().into_iter().enumerate() {
        let wi = net.weight_indices()[l];
        for (w, &p) in out[wi].data_mut().iter_mut().zip(bits) {
            *w = quantize_q(*w, p);
        }
    }
    out
}

/// Clips weights to `±(2 − σ(s))` so perturbed weights stay within `[−2, 2]`.
pub fn clip_weights(net: &DenseNet, params: &mut [Tensor], state: &PrecisionState) {
    let sig: Vec<f64> = state.s.data().iter().map(|&s| sigmoid(s)).collect();
    let mut k = 0;
    for &wi in net.weight_indices() {
        for w in params[wi].data_mut() {
            let bound = 2.0 - sig[state.group[k]];
            *w = w.clamp(-bound, bound);
            k += 1;
        }
    }
}

/// Uniform `[−1, 1]` noise for every weight entry, one set per sample.
pub fn sample_noise<R: Rng + ?Sized>(state: &PrecisionState, samples: usize, rng: &mut R) -> Vec<Vec<Tensor>> {
    (0..samples)
        .map(|_| {
            state
                .shapes
                .iter()
                .map(|s| Tensor::uniform(s, -1.0, 1.0, rng))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SmolLoss {
    pub loss: f64,
    pub data_loss: f64,
    pub param_grads: Vec<Tensor>,
    pub score_grads: Tensor,
}

/// `mean_k L(f(w + σ(s)⊙ε_k)) + λ Σ_g |g|·log₂(1 + e^{−s_g})` for the given
/// noise samples. The penalty is weighted by group size so every weight
/// contributes its own bit count whatever the granularity.
pub fn smol_loss(
    net: &DenseNet,
    params: &[Tensor],
    state: &PrecisionState,
    lambda: f64,
    data: &Dataset,
    noise: &[Vec<Tensor>],
) -> Result<SmolLoss> {
    if noise.is_empty() {
        return Err(Error::Config("need at least one noise sample".into()));
    }
    let np = params.len();
    let mut tape = Tape::new();
    let base: Vec<_> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect();
    let sv = tape.param(ParamId(np), state.s.clone());
    let sig = tape.sigmoid(sv);
    let scales: Vec<_> = (0..state.shapes.len())
        .map(|l| tape.gather(sig, state.layer_groups(l), &state.shapes[l]))
        .collect();
    let mut total = None;
    for eps in noise {
        let mut vars = base.clone();
        for (l, &wi) in net.weight_indices().iter().enumerate() {
            let e = tape.input(eps[l].clone());
            let pert = tape.mul(scales[l], e);
            vars[wi] = tape.add(base[wi], pert);
        }
        let out = net.record_forward(&mut tape, &vars, &data.inputs)?;
        let l = net.record_loss(&mut tape, out, &data.targets)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let data_loss = tape.scale(total.expect("nonempty noise"), 1.0 / noise.len() as f64);
    let neg = tape.neg(sv);
    let sp = tape.softplus(neg);
    let bits = tape.scale(sp, 1.0 / LN_2);
    let sizes = tape.input(Tensor::vector(state.group_sizes()));
    let weighted = tape.mul(bits, sizes);
    let pen = tape.sum(weighted);
    let reg = tape.scale(pen, lambda);
    let loss = tape.add(data_loss, reg);
    let mut grads = tape.backward_scalar(loss)?;
    Ok(SmolLoss {
        loss: tape.scalar(loss),
        data_loss: tape.scalar(data_loss),
        param_grads: params
            .iter()
            .enumerate()
            .map(|(i, p)| grads.take_or_zeros(ParamId(i), p.shape()))
            .collect(),
        score_grads: grads.take_or_zeros(ParamId(np), state.s.shape()),
    })
}

/// Loss at `Q(w, p)` and the straight-through gradient for `w`.
pub fn ste_grad(
    net: &DenseNet,
    params: &[Tensor],
    map: &PrecisionMap,
    data: &Dataset,
) -> Result<(f64, Vec<Tensor>)> {
    let mut probe = net.clone();
    probe.set_params(quantize_params(net, params, map))?;
    probe.loss_and_grad(data)
}

/// Straight-through fine-tuning at fixed precisions. Zero-bit weights are
/// frozen. Returns the updated parameters and the loss at `Q(w, p)` before
/// each step and after the last one.
pub fn ste_finetune(
    net: &DenseNet,
    params: &[Tensor],
    map: &PrecisionMap,
    data: &Dataset,
    optim: &OptimConfig,
    steps: usize,
) -> Result<(Vec<Tensor>, Vec<f64>)> {
    let mut opt = Optimizer::new(optim.clone())?;
    let mut work = params.to_vec();
    let mut losses = Vec::with_capacity(steps + 1);
    let slices: Vec<Vec<u32>> = map.layer_slices().into_iter().map(<[u32]>::to_vec).collect();
    for _ in 0..steps {
        let (loss, mut grads) = ste_grad(net, &work, map, data)?;
        losses.push(loss);
        for (l, bits) in slices.iter().enumerate() {
            let wi = net.weight_indices()[l];
            for (g, &p) in grads[wi].data_mut().iter_mut().zip(bits) {
                if p == 0 {
                    *g = 0.0;
                }
            }
        }
        let before = work.clone();
        opt.step(&mut work, &grads)?;
        for (l, bits) in slices.iter().enumerate() {
            let wi = net.weight_indices()[l];
            let old = before[wi].data();
            for (j, (w, &p)) in work[wi].data_mut().iter_mut().zip(bits).enumerate() {
                if p == 0 {
                    *w = old[j];
                }
            }
        }
    }
    losses.push(net.loss_with(&quantize_params(net, &work, map), data)?);
    Ok((work, losses))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmolConfig {
    pub lambda: f64,
    pub p_init: u32,
    pub granularity: Granularity,
    /// Noise samples per step.
    pub samples: usize,
    pub steps: usize,
    /// Share of `steps` spent learning precisions; the rest fine-tunes.
    pub precision_fraction: f64,
    pub rounding: Rounding,
    pub zero_precision: bool,
    /// Optimizer for the scores; defaults to Adam at 1e-2 without decay.
    pub score_optim: Option<OptimConfig>,
}

impl Default for SmolConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            p_init: 8,
            granularity: Granularity::PerParameter,
            samples: 1,
            steps: 200,
            precision_fraction: 0.5,
            rounding: Rounding::Round,
            zero_precision: true,
            score_optim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmolResult {
    pub params: Vec<Tensor>,
    pub state: PrecisionState,
    pub precisions: PrecisionMap,
    /// Loss of the quantized model after fine-tuning.
    pub final_loss: f64,
    pub history: Vec<(usize, f64)>,
}

/// Full pipeline: precision learning, finalization, optional zero-bit
/// allocation, then straight-through fine-tuning.
pub fn smol_train(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SmolConfig,
    optim: &OptimConfig,
    seed: u64,
) -> Result<SmolResult> {
    if !(0.0..=1.0).contains(&cfg.precision_fraction) || cfg.samples == 0 {
        return Err(Error::Config("precision fraction must lie in [0, 1] and samples >= 1".into()));
    }
    let mut rng = crate::seeded(seed);
    let mut state = PrecisionState::new(net, cfg.granularity, cfg.p_init)?;
    let mut params = net.params().to_vec();
    let train_steps = (cfg.steps as f64 * cfg.precision_fraction).round() as usize;
    let tune_steps = cfg.steps - train_steps;
    let mut wopt = Optimizer::new(optim.clone())?;
    let mut score_cfg = cfg.score_optim.clone().unwrap_or_else(|| OptimConfig::adam(1e-2));
    score_cfg.weight_decay = 0.0;
    let mut sopt = Optimizer::new(score_cfg)?;
    let mut history = Vec::new();
    clip_weights(net, &mut params, &state);
    for t in 0..train_steps {
        let noise = sample_noise(&state, cfg.samples, &mut rng);
        let out = smol_loss(net, &params, &state, cfg.lambda, data, &noise)?;
        history.push((t, out.loss));
        wopt.step(&mut params, &out.param_grads)?;
        let mut s = vec![state.s.clone()];
        sopt.step(&mut s, std::slice::from_ref(&out.score_grads))?;
        state.s = s.pop().expect("one score tensor");
        clip_weights(net, &mut params, &state);
    }
    let mut precisions = finalize_precisions(&state, cfg.rounding);
    if cfg.zero_precision && cfg.granularity == Granularity::PerParameter {
        precisions = zero_precision_allocate(&flat_weights(net, &params), &precisions, cfg.granularity)?;
    }
    let (params, losses) = ste_finetune(net, &params, &precisions, data, optim, tune_steps)?;
    for (k, l) in losses.iter().enumerate() {
        history.push((train_steps + k, *l));
    }
    let final_loss = *losses.last().expect("at least one loss");
    Ok(SmolResult {
        params,
        state,
        precisions,
        final_loss,
        history,
    })
}

/// Value range used to scale activation noise and place quantization levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationRange {
    pub lo: f64,
    pub hi: f64,
    /// Width `M` of the activation's output range.
    pub span: f64,
}

/// Range of a bounded activation. ReLU needs a clip value `M` and quantizes
/// over `[0, M/2]`; sigmoid uses `[0, 1]` and tanh `[−1, 1]`.
pub fn activation_range(act: Activation, clip: Option<f64>) -> Result<ActivationRange> {
    match (act, clip) {
        (Activation::Relu, Some(m)) if m > 0.0 => Ok(ActivationRange {
            lo: 0.0,
            hi: m / 2.0,
            span: m,
        }),
        (Activation::Sigmoid, _) => Ok(ActivationRange {
            lo: 0.0,
            hi: 1.0,
            span: 1.0,
        }),
        (Activation::Tanh, _) => Ok(ActivationRange {
            lo: -1.0,
            hi: 1.0,
            span: 2.0,
        }),
        (act, _) => Err(Error::Config(format!(
            "activation {act:?} is unbounded; quantizing it needs a positive clip value"
        ))),
    }
}

/// Training-time perturbation `u + (M/2)·σ(s)·ε` with `ε ~ U(±1)`.
pub fn perturb_activations<R: Rng + ?Sized>(
    u: &Tensor,
    s_act: f64,
    range: ActivationRange,
    rng: &mut R,
) -> Tensor {
    let scale = 0.5 * range.span * sigmoid(s_act);
    u.map(|x| x + scale * rng.random_range(-1.0..=1.0))
}

/// The `2^p` evenly spaced levels used after training.
pub fn activation_levels(p: u32, range: ActivationRange) -> Result<Vec<f64>> {
    if p == 0 || p > PRECISION_CAP {
        return Err(Error::PrecisionCap {
            requested: p,
            cap: PRECISION_CAP,
        });
    }
    let n = 1usize << p;
    let step = (range.hi - range.lo) / (n - 1) as f64;
    Ok((0..n).map(|k| range.lo + k as f64 * step).collect())
}

/// Maps each activation to the nearest level after clamping to the range.
pub fn quantize_activations(u: &Tensor, p: u32, range: ActivationRange) -> Result<Tensor> {
    if p == 0 || p > PRECISION_CAP {
        return Err(Error::PrecisionCap {
            requested: p,
            cap: PRECISION_CAP,
        });
    }
    let n = (1u64 << p) as f64 - 1.0;
    let step = (range.hi - range.lo) / n;
    Ok(u.map(|x| {
        let k = ((x.clamp(range.lo, range.hi) - range.lo) / step).round();
        range.lo + k * step
    }))
}
