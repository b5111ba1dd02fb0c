//! Weight sparsification: Continuous Sparsification (CS) and the baselines
//! it is compared against.
//!
//! CS relaxes a binary mask to `σ(β·s)` and anneals `β` from 1 to `β_final`
//! so the soft mask hardens into `H(s)`. Ticket search repeats this over
//! rounds, keeping an early weight iterate `ŵ` to retrain the final mask
//! from. Masks cover layer weights only; biases are never pruned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape};
use crate::error::{Error, Result};
use crate::math::{heaviside, sigmoid};
use crate::nn::{Dataset, DenseNet};
use crate::optim::{OptimConfig, Optimizer};
use crate::tensor::Tensor;

/// Hyperparameters shared by the mask-learning methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beta_final: f64,
    pub lambda: f64,
    pub s_init: f64,
    pub rounds: usize,
    /// Steps per round.
    pub steps: usize,
    /// Step of round 1 whose weights are kept for rewinding (0 = initialization).
    pub rewind_step: usize,
    /// Masked fine-tuning steps after the search (CS pruning only).
    pub finetune_steps: usize,
    /// Optimizer for mask parameters; defaults to the weight optimizer without decay.
    pub mask_optim: Option<OptimConfig>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beta_final: 200.0,
            lambda: 1e-8,
            s_init: 0.0,
            rounds: 1,
            steps: 100,
            rewind_step: 0,
            finetune_steps: 0,
            mask_optim: None,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta_final > 1.0) {
            return Err(Error::Config(format!(
                "beta_final must exceed 1, got {}",
                self.beta_final
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps per round must be at least 1".into()));
        }
        if self.rewind_step > self.steps {
            return Err(Error::Config(format!(
                "rewind step {} beyond round length {}",
                self.rewind_step, self.steps
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    fn mask_optimizer(&self, weights: &OptimConfig) -> Result<Optimizer> {
        let mut cfg = self.mask_optim.clone().unwrap_or_else(|| weights.clone());
        cfg.weight_decay = 0.0;
        Optimizer::new(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStat {
    pub round: usize,
    pub sparsity: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseResult {
    /// Binary mask per layer weight.
    pub masks: Vec<Tensor>,
    /// Parameters at the end of the search.
    pub weights: Vec<Tensor>,
    /// Early iterate to retrain the mask from, when the method keeps one.
    pub rewind: Option<Vec<Tensor>>,
    pub sparsity: f64,
    /// Loss of the masked final weights.
    pub final_loss: f64,
    /// Mask logits at the end of the search, when the method learns them.
    pub scores: Option<Vec<Tensor>>,
    /// Fraction of soft-mask entries inside `(0.01, 0.99)` at `β_final`.
    pub undecided: Option<f64>,
    pub rounds: Vec<RoundStat>,
}

/// `β` after `step` of `steps` annealing steps: `β_final^{step/steps}`.
pub fn beta_at(step: usize, steps: usize, beta_final: f64) -> f64 {
    beta_final.powf(step as f64 / steps as f64)
}

/// The between-rounds reset `s ← min(β·s, s_init)`.
pub fn reset_scores(s: &mut [Tensor], beta: f64, s_init: f64) {
    for t in s {
        for v in t.data_mut() {
            *v = (beta * *v).min(s_init);
        }
    }
}

/// `1 − (Σm)/d` over all mask entries.
pub fn sparsity(masks: &[Tensor]) -> f64 {
    let d: usize = masks.iter().map(Tensor::len).sum();
    if d == 0 {
        return 0.0;
    }
    let kept: f64 = masks.iter().map(Tensor::sum).sum();
    1.0 - kept / d as f64
}

/// `H(s)` elementwise.
pub fn hard_masks(s: &[Tensor]) -> Vec<Tensor> {
    s.iter().map(|t| t.map(heaviside)).collect()
}

/// Fraction of `σ(β·s)` entries strictly inside `(0.01, 0.99)`.
pub fn undecided_fraction(s: &[Tensor], beta: f64) -> f64 {
    let n: usize = s.iter().map(Tensor::len).sum();
    let soft = s
        .iter()
        .flat_map(|t| t.data())
        .filter(|&&v| {
            let m = sigmoid(beta * v);
            m > 0.01 && m < 0.99
        })
        .count();
    soft as f64 / n.max(1) as f64
}

/// All-ones masks shaped like the network's weights.
pub fn dense_masks(net: &DenseNet) -> Vec<Tensor> {
    net.weight_indices()
        .iter()
        .map(|&i| Tensor::ones(net.params()[i].shape()))
        .collect()
}

/// Parameters with every layer weight multiplied by its mask.
pub fn apply_masks(net: &DenseNet, params: &[Tensor], masks: &[Tensor]) -> Vec<Tensor> {
    let mut out = params.to_vec();
    for (l, &wi) in net.weight_indices().iter().enumerate() {
        out[wi] = params[wi].zip_map(&masks[l], |w, m| w * m);
    }
    out
}

/// Alternative smooth gates `b̂(β, s)` that tend to `H(s)` as `β` grows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Sigmoid,
    /// `½(1 + erf(βs))`
    Erf,
    /// `½(1 + (2/π)·atan(βs))`
    Arctan,
    /// `½(1 + s / (β⁻¹ + |s|^k)^{1/k})`
    Algebraic { k: f64 },
}

impl Gate {
    pub fn value(self, beta: f64, s: f64) -> f64 {
        match self {
            Gate::Sigmoid => sigmoid(beta * s),
            Gate::Erf => 0.5 * (1.0 + libm::erf(beta * s)),
            Gate::Arctan => 0.5 * (1.0 + std::f64::consts::FRAC_2_PI * (beta * s).atan()),
            Gate::Algebraic { k } => 0.5 * (1.0 + s / (1.0 / beta + s.abs().powf(k)).powf(1.0 / k)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsLoss {
    /// Data loss plus the mask penalty.
    pub loss: f64,
    pub data_loss: f64,
    pub param_grads: Vec<Tensor>,
    pub score_grads: Vec<Tensor>,
}

/// `L(f(σ(βs)⊙θ)) + λ‖σ(βs)‖₁` and its exact gradients.
pub fn cs_loss(
    net: &DenseNet,
    params: &[Tensor],
    s: &[Tensor],
    beta: f64,
    lambda: f64,
    data: &Dataset,
) -> Result<CsLoss> {
    cs_loss_inner(net, params, s, None, beta, lambda, data)
}

fn cs_loss_inner(
    net: &DenseNet,
    params: &[Tensor],
    s: &[Tensor],
    alive: Option<&[Tensor]>,
    beta: f64,
    lambda: f64,
    data: &Dataset,
) -> Result<CsLoss> {
    let np = params.len();
    let mut tape = Tape::new();
    let mut vars: Vec<_> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect();
    let mut penalty = None;
    for (l, &wi) in net.weight_indices().iter().enumerate() {
        let sv = tape.param(ParamId(np + l), s[l].clone());
        let scaled = tape.scale(sv, beta);
        let mut gate = tape.sigmoid(scaled);
        if let Some(alive) = alive {
            let a = tape.input(alive[l].clone());
            gate = tape.mul(gate, a);
        }
        vars[wi] = tape.mul(vars[wi], gate);
        let total = tape.sum(gate);
        penalty = Some(match penalty {
            None => total,
            Some(acc) => tape.add(acc, total),
        });
    }
    let out = net.record_forward(&mut tape, &vars, &data.inputs)?;
    let data_loss = net.record_loss(&mut tape, out, &data.targets)?;
    let loss = match penalty {
        Some(p) => {
            let reg = tape.scale(p, lambda);
            tape.add(data_loss, reg)
        }
        None => data_loss,
    };
    let mut grads = tape.backward_scalar(loss)?;
    let param_grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| grads.take_or_zeros(ParamId(i), p.shape()))
        .collect();
    let score_grads = s
        .iter()
        .enumerate()
        .map(|(l, t)| grads.take_or_zeros(ParamId(np + l), t.shape()))
        .collect();
    Ok(CsLoss {
        loss: tape.scalar(loss),
        data_loss: tape.scalar(data_loss),
        param_grads,
        score_grads,
    })
}

/// Restores entries whose `alive` flag is 0 to their previous values.
fn restore_dead(values: &mut [Tensor], before: &[Tensor], alive: &[Tensor]) {
    for ((v, b), a) in values.iter_mut().zip(before).zip(alive) {
        for ((x, &y), &keep) in v.data_mut().iter_mut().zip(b.data()).zip(a.data()) {
            if keep == 0.0 {
                *x = y;
            }
        }
    }
}

struct RoundOutcome {
    loss: f64,
    captured: Option<Vec<Tensor>>,
}

/// One annealing round: `steps` joint updates with `β` growing to `β_final`.
#[allow(clippy::too_many_arguments)]
fn cs_round(
    net: &DenseNet,
    params: &mut Vec<Tensor>,
    s: &mut Vec<Tensor>,
    alive: Option<&[Tensor]>,
    cfg: &SearchConfig,
    optim: &OptimConfig,
    data: &Dataset,
    capture_at: Option<usize>,
    train_weights: bool,
) -> Result<RoundOutcome> {
    let mut wopt = Optimizer::new(optim.clone())?;
    let mut sopt = cfg.mask_optimizer(optim)?;
    let mut captured = (capture_at == Some(0)).then(|| params.clone());
    let mut loss = f64::NAN;
    for t in 1..=cfg.steps {
        let beta = beta_at(t - 1, cfg.steps, cfg.beta_final);
        let out = cs_loss_inner(net, params, s, alive, beta, cfg.lambda, data)?;
        loss = out.loss;
        if train_weights {
            wopt.step(params, &out.param_grads)?;
        }
        let before = alive.map(|_| s.clone());
        sopt.step(s, &out.score_grads)?;
        if let (Some(alive), Some(before)) = (alive, before) {
            restore_dead(s, &before, alive);
        }
        if capture_at == Some(t) {
            captured = Some(params.clone());
        }
    }
    Ok(RoundOutcome { loss, captured })
}

/// Single-round Continuous Sparsification with optional masked fine-tuning.
pub fn cs_prune(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
) -> Result<SparseResult> {
    let single = SearchConfig {
        rounds: 1,
        ..cfg.clone()
    };
    let mut result = cs_search(net, data, &single, optim, true)?;
    result.rewind = None;
    if cfg.finetune_steps > 0 {
        let (weights, _) =
            train_masked(net, &result.weights, &result.masks, data, optim, cfg.finetune_steps)?;
        result.final_loss = net.loss_with(&apply_masks(net, &weights, &result.masks), data)?;
        result.weights = weights;
    }
    Ok(result)
}

/// Ticket search with CS: `rounds` annealing rounds without weight rewinding,
/// resetting `s ← min(β·s, s_init)` and `β ← 1` between rounds.
pub fn cs_ticket_search(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
) -> Result<SparseResult> {
    cs_search(net, data, cfg, optim, true)
}

fn cs_search(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
    train_weights: bool,
) -> Result<SparseResult> {
    cfg.validate()?;
    if cfg.rounds == 0 {
        return Err(Error::Config("ticket search needs at least one round".into()));
    }
    let mut params = net.params().to_vec();
    let mut s: Vec<Tensor> = net
        .weight_indices()
        .iter()
        .map(|&i| Tensor::full(params[i].shape(), cfg.s_init))
        .collect();
    let mut rewind = None;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 1..=cfg.rounds {
        if r > 1 {
            reset_scores(&mut s, cfg.beta_final, cfg.s_init);
        }
        let capture = (r == 1).then_some(cfg.rewind_step);
        let out = cs_round(net, &mut params, &mut s, None, cfg, optim, data, capture, train_weights)?;
        if out.captured.is_some() {
            rewind = out.captured;
        }
        let masks = hard_masks(&s);
        let sp = sparsity(&masks);
        log::debug!("cs round {r}: loss {:.5} sparsity {:.4}", out.loss, sp);
        rounds.push(RoundStat {
            round: r,
            sparsity: sp,
            loss: out.loss,
        });
    }
    let masks = hard_masks(&s);
    let final_loss = net.loss_with(&apply_masks(net, &params, &masks), data)?;
    Ok(SparseResult {
        sparsity: sparsity(&masks),
        undecided: Some(undecided_fraction(&s, cfg.beta_final)),
        masks,
        weights: params,
        rewind,
        final_loss,
        scores: Some(s),
        rounds,
    })
}

/// Trains `params` for `steps` with pruned weights held at zero. Returns the
/// masked weights and the final loss.
pub fn train_masked(
    net: &DenseNet,
    params: &[Tensor],
    masks: &[Tensor],
    data: &Dataset,
    optim: &OptimConfig,
    steps: usize,
) -> Result<(Vec<Tensor>, f64)> {
    let mut opt = Optimizer::new(optim.clone())?;
    let mut work = apply_masks(net, params, masks);
    let mut probe = net.clone();
    for _ in 0..steps {
        probe.set_params(work.clone())?;
        let (_, mut grads) = probe.loss_and_grad(data)?;
        for (l, &wi) in net.weight_indices().iter().enumerate() {
            grads[wi] = grads[wi].zip_map(&masks[l], |g, m| g * m);
        }
        opt.step(&mut work, &grads)?;
        work = apply_masks(net, &work, masks);
    }
    let loss = net.loss_with(&work, data)?;
    Ok((work, loss))
}

/// Marks the `τ` fraction of surviving entries with the smallest scores as
/// pruned. The count is `⌊τ·n⌋`, at least 1 when more than one entry
/// survives; ties go to the lower flat index.
pub fn prune_lowest(scores: &[Tensor], alive: &mut [Tensor], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("pruning rate must lie in (0, 1), got {tau}")));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (l, (sc, al)) in scores.iter().zip(alive.iter()).enumerate() {
        for (j, (&v, &a)) in sc.data().iter().zip(al.data()).enumerate() {
            if a != 0.0 {
                candidates.push((v, l, j));
            }
        }
    }
    let n = candidates.len();
    let mut count = (tau * n as f64).floor() as usize;
    if n > 1 {
        count = count.max(1);
    }
    if n > 0 && count >= n {
        return Err(Error::AllPruned);
    }
    // Stable sort keeps flat-index order among equal scores.
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(_, l, j) in candidates.iter().take(count) {
        alive[l].data_mut()[j] = 0.0;
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpConfig {
    pub tau: f64,
    pub rounds: usize,
    pub steps: usize,
    pub rewind_step: usize,
    /// Skip rewinding between rounds.
    pub continued: bool,
}

/// Iterative magnitude pruning with global ranking and rewinding to the
/// round-1 iterate at `rewind_step`.
pub fn imp(net: &DenseNet, data: &Dataset, cfg: &ImpConfig, optim: &OptimConfig) -> Result<SparseResult> {
    if cfg.rewind_step > cfg.steps {
        return Err(Error::Config("rewind step beyond round length".into()));
    }
    let mut masks = dense_masks(net);
    let mut params = net.params().to_vec();
    let mut rewind = (cfg.rewind_step == 0).then(|| params.clone());
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 1..=cfg.rounds {
        if r == 1 && cfg.rewind_step > 0 {
            let (w, _) = train_masked(net, &params, &masks, data, optim, cfg.rewind_step)?;
            rewind = Some(w.clone());
            let (w, _) = train_masked(net, &w, &masks, data, optim, cfg.steps - cfg.rewind_step)?;
            params = w;
        } else {
            params = train_masked(net, &params, &masks, data, optim, cfg.steps)?.0;
        }
        let magnitudes: Vec<Tensor> = net
            .weight_indices()
            .iter()
            .map(|&wi| params[wi].map(f64::abs))
            .collect();
        prune_lowest(&magnitudes, &mut masks, cfg.tau)?;
        let loss = net.loss_with(&apply_masks(net, &params, &masks), data)?;
        rounds.push(RoundStat {
            round: r,
            sparsity: sparsity(&masks),
            loss,
        });
        if !cfg.continued {
            params = rewind.clone().expect("rewind point captured in round 1");
        }
    }
    let final_loss = net.loss_with(&apply_masks(net, &params, &masks), data)?;
    Ok(SparseResult {
        sparsity: sparsity(&masks),
        masks,
        weights: params,
        rewind,
        final_loss,
        scores: None,
        undecided: None,
        rounds,
    })
}

/// Bernoulli sample of `σ(s)` for live entries; dead entries are 0.
pub fn sample_masks<R: Rng + ?Sized>(s: &[Tensor], alive: &[Tensor], rng: &mut R) -> Vec<Tensor> {
    s.iter()
        .zip(alive)
        .map(|(st, al)| {
            let data = st
                .data()
                .iter()
                .zip(al.data())
                .map(|(&v, &a)| {
                    if a != 0.0 && rng.random::<f64>() < sigmoid(v) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            Tensor::new(st.shape().to_vec(), data).expect("mask shape")
        })
        .collect()
}

/// Stochastic objective with a sampled mask and straight-through gradients
/// for `s`. Dead entries contribute neither to the forward pass nor the penalty.
#[allow(clippy::too_many_arguments)]
fn iss_loss(
    net: &DenseNet,
    params: &[Tensor],
    s: &[Tensor],
    alive: &[Tensor],
    sampled: &[Tensor],
    lambda: f64,
    data: &Dataset,
) -> Result<CsLoss> {
    let np = params.len();
    let mut tape = Tape::new();
    let mut vars: Vec<_> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect();
    let mut penalty = None;
    for (l, &wi) in net.weight_indices().iter().enumerate() {
        let sv = tape.param(ParamId(np + l), s[l].clone());
        let prob = tape.sigmoid(sv);
        let a = tape.input(alive[l].clone());
        let live_prob = tape.mul(prob, a);
        let m = tape.straight_through(live_prob, sampled[l].clone());
        vars[wi] = tape.mul(vars[wi], m);
        let total = tape.sum(live_prob);
        penalty = Some(match penalty {
            None => total,
            Some(acc) => tape.add(acc, total),
        });
    }
    let out = net.record_forward(&mut tape, &vars, &data.inputs)?;
    let data_loss = net.record_loss(&mut tape, out, &data.targets)?;
    let loss = match penalty {
        Some(p) => {
            let reg = tape.scale(p, lambda);
            tape.add(data_loss, reg)
        }
        None => data_loss,
    };
    let mut grads = tape.backward_scalar(loss)?;
    Ok(CsLoss {
        loss: tape.scalar(loss),
        data_loss: tape.scalar(data_loss),
        param_grads: params
            .iter()
            .enumerate()
            .map(|(i, p)| grads.take_or_zeros(ParamId(i), p.shape()))
            .collect(),
        score_grads: s
            .iter()
            .enumerate()
            .map(|(l, t)| grads.take_or_zeros(ParamId(np + l), t.shape()))
            .collect(),
    })
}

/// Iterative Stochastic Sparsification. Between rounds every entry whose
/// score fell below `s_init` is removed for good.
pub fn iss(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
    seed: u64,
) -> Result<SparseResult> {
    iss_inner(net, data, cfg, optim, seed, true)
}

fn iss_inner(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
    seed: u64,
    train_weights: bool,
) -> Result<SparseResult> {
    if cfg.steps == 0 || cfg.rounds == 0 || cfg.rewind_step > cfg.steps {
        return Err(Error::Config("ISS needs rounds >= 1 and 0 <= rewind step <= steps >= 1".into()));
    }
    let mut rng = crate::seeded(seed);
    let mut params = net.params().to_vec();
    let mut s: Vec<Tensor> = net
        .weight_indices()
        .iter()
        .map(|&i| Tensor::full(params[i].shape(), cfg.s_init))
        .collect();
    let mut alive = dense_masks(net);
    let mut rewind = (cfg.rewind_step == 0).then(|| params.clone());
    let mut rounds = Vec::new();
    for r in 1..=cfg.rounds {
        if r > 1 {
            for (st, al) in s.iter().zip(alive.iter_mut()) {
                for (&v, a) in st.data().iter().zip(al.data_mut()) {
                    if v < cfg.s_init {
                        *a = 0.0;
                    }
                }
            }
        }
        let mut wopt = Optimizer::new(optim.clone())?;
        let mut sopt = cfg.mask_optimizer(optim)?;
        let mut loss = f64::NAN;
        for t in 1..=cfg.steps {
            let sampled = sample_masks(&s, &alive, &mut rng);
            let out = iss_loss(net, &params, &s, &alive, &sampled, cfg.lambda, data)?;
            loss = out.loss;
            if train_weights {
                wopt.step(&mut params, &out.param_grads)?;
            }
            let before = s.clone();
            sopt.step(&mut s, &out.score_grads)?;
            restore_dead(&mut s, &before, &alive);
            if r == 1 && t == cfg.rewind_step {
                rewind = Some(params.clone());
            }
        }
        rounds.push(RoundStat {
            round: r,
            sparsity: sparsity(&alive),
            loss,
        });
    }
    let masks = sample_masks(&s, &alive, &mut rng);
    let final_loss = net.loss_with(&apply_masks(net, &params, &masks), data)?;
    Ok(SparseResult {
        sparsity: sparsity(&masks),
        masks,
        weights: params,
        rewind,
        final_loss,
        scores: Some(s),
        undecided: None,
        rounds,
    })
}

/// Sequential CS: each round anneals a CS mask over the surviving weights,
/// then permanently removes the `τ` fraction with the lowest scores. Weights
/// are rewound and surviving scores reset to `s_init` between rounds.
pub fn sequential_cs(
    net: &DenseNet,
    data: &Dataset,
    tau: f64,
    cfg: &SearchConfig,
    optim: &OptimConfig,
) -> Result<SparseResult> {
    let mut alive = dense_masks(net);
    let mut params = net.params().to_vec();
    if cfg.rounds == 0 {
        let final_loss = net.loss(data)?;
        return Ok(SparseResult {
            sparsity: 0.0,
            masks: alive,
            weights: params,
            rewind: None,
            final_loss,
            scores: None,
            undecided: None,
            rounds: Vec::new(),
        });
    }
    cfg.validate()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("pruning rate must lie in (0, 1), got {tau}")));
    }
    let mut rewind = None;
    let mut s = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 1..=cfg.rounds {
        s = alive.iter().map(|a| Tensor::full(a.shape(), cfg.s_init)).collect();
        let capture = (r == 1).then_some(cfg.rewind_step);
        let out = cs_round(net, &mut params, &mut s, Some(&alive), cfg, optim, data, capture, true)?;
        if out.captured.is_some() {
            rewind = out.captured;
        }
        prune_lowest(&s, &mut alive, tau)?;
        rounds.push(RoundStat {
            round: r,
            sparsity: sparsity(&alive),
            loss: out.loss,
        });
        params = rewind.clone().expect("rewind point captured in round 1");
    }
    let final_loss = net.loss_with(&apply_masks(net, &params, &alive), data)?;
    Ok(SparseResult {
        sparsity: sparsity(&alive),
        masks: alive,
        weights: params,
        rewind,
        final_loss,
        scores: Some(s),
        undecided: None,
        rounds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupermaskMethod {
    /// Continuous Sparsification with frozen weights.
    Cs,
    /// Single-round stochastic sparsification with frozen weights.
    Ss,
}

/// Learns a mask over frozen initial weights.
pub fn supermask_search(
    net: &DenseNet,
    data: &Dataset,
    cfg: &SearchConfig,
    optim: &OptimConfig,
    method: SupermaskMethod,
    seed: u64,
) -> Result<SparseResult> {
    let mut result = match method {
        SupermaskMethod::Cs => cs_search(net, data, cfg, optim, false)?,
        SupermaskMethod::Ss => {
            let single = SearchConfig {
                rounds: 1,
                ..cfg.clone()
            };
            iss_inner(net, data, &single, optim, seed, false)?
        }
    };
    result.rewind = Some(net.params().to_vec());
    Ok(result)
}
