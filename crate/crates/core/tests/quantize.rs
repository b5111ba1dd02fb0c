//! Quantizer oracles, zero-bit allocation, precision bookkeeping and the
//! noise-proxy loss.

use proptest::prelude::*;
use rand::Rng;
use slimnet::autodiff::max_relative_error;
use slimnet::math::sigmoid;
use slimnet::optim::OptimConfig;
use slimnet::quantize::{
    activation_levels, activation_range, bits_value, clip_weights, continuous_bits, finalize_precisions,
    perturb_activations, precision_from_score, quantize_activations, quantize_params, quantize_q,
    representable_values, s_init, smol_loss, smol_train, ste_finetune, ste_grad, v_inverse, zero_precision_allocate,
    Granularity, PrecisionMap, PrecisionState, Rounding, SmolConfig,
};
use slimnet::{finite_diff_grad, seeded, Activation, Dataset, DenseNet, LossKind, Targets, Tensor};

/// Every signed bitstring of length `p`, as `±1` digits.
fn bitstrings(p: u32) -> Vec<Vec<i8>> {
    (0u32..1 << p)
        .map(|code| (0..p).map(|j| if code >> j & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// Value of `b` under `v_j = 2^{1−j}` for `j = 1..p`.
fn decode(bits: &[i8]) -> f64 {
    bits.iter()
        .enumerate()
        .map(|(j, &b)| f64::from(b) * 2f64.powi(-(j as i32)))
        .sum()
}

/// Nearest enumerated value; ties go to the smaller magnitude, then to the
/// positive value.
fn brute_force_q(w: f64, p: u32) -> f64 {
    if p == 0 {
        return 0.0;
    }
    let mut best = f64::NAN;
    let mut best_dist = f64::INFINITY;
    for bits in bitstrings(p) {
        let v = decode(&bits);
        let d = (w - v).abs();
        let better = d < best_dist
            || (d == best_dist && (v.abs() < best.abs() || (v.abs() == best.abs() && v > best)));
        if better {
            best = v;
            best_dist = d;
        }
    }
    best
}

#[test]
fn quantizer_equals_enumeration_on_dense_grid() {
    for p in 0..=4 {
        for k in 0..=4000 {
            let w = (k as f64 - 2000.0) / 1000.0;
            assert_eq!(quantize_q(w, p), brute_force_q(w, p), "w = {w}, p = {p}");
        }
    }
}

#[test]
fn representable_sets_match_enumeration() {
    for p in 1..=8 {
        let mut enumerated: Vec<f64> = bitstrings(p).iter().map(|b| decode(b)).collect();
        enumerated.sort_by(f64::total_cmp);
        assert_eq!(representable_values(p).unwrap(), enumerated);
    }
    assert_eq!(representable_values(1).unwrap(), vec![-1.0, 1.0]);
    assert_eq!(representable_values(2).unwrap(), vec![-1.5, -0.5, 0.5, 1.5]);
    assert_eq!(representable_values(0).unwrap(), vec![0.0]);
    assert!(representable_values(17).is_err());
}

#[test]
fn worked_quantization_example() {
    assert_eq!(quantize_q(0.2, 2), 0.5);
    assert!(((0.2 - quantize_q(0.2, 2)).abs() - 0.3).abs() < 1e-15);
}

#[test]
fn representable_values_are_fixed_points_and_inverse_is_minimal() {
    for p in 1..=4 {
        for bits in bitstrings(p) {
            let v = decode(&bits);
            assert_eq!(quantize_q(v, p), v);
            let (inv, q) = v_inverse(v).unwrap();
            assert_eq!(bits_value(&inv), v);
            assert_eq!(inv.len() as u32, q);
            let minimal = (1..=p).find(|&r| bitstrings(r).iter().any(|b| decode(b) == v)).unwrap();
            assert_eq!(q, minimal, "value {v}");
        }
    }
    assert_eq!(v_inverse(1.5).unwrap(), (vec![1, 1], 2));
    assert_eq!(v_inverse(-1.0).unwrap(), (vec![-1], 1));
}

fn single_map(p: u32) -> PrecisionMap {
    PrecisionMap {
        bits: vec![p],
        shapes: vec![vec![1, 1]],
    }
}

#[test]
fn zero_bit_allocation_worked_examples() {
    let zpa = zero_precision_allocate(&[0.2], &single_map(2), Granularity::PerParameter).unwrap();
    assert_eq!(zpa.bits, vec![0]);
    let before = (0.2 - quantize_q(0.2, 2)).abs();
    let after = (0.2 - quantize_q(0.2, 0)).abs();
    assert!((before - after - 0.1).abs() < 1e-15);

    let kept = zero_precision_allocate(&[1.0], &single_map(1), Granularity::PerParameter).unwrap();
    assert_eq!(kept.bits, vec![1]);
    for g in [Granularity::PerLayer, Granularity::PerNetwork] {
        assert!(zero_precision_allocate(&[0.2], &single_map(2), g).is_err());
    }
}

#[test]
fn zero_bit_allocation_never_increases_error() {
    let mut rng = seeded(1);
    let n = 100_000;
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
    let bits: Vec<u32> = (0..n).map(|_| rng.random_range(1..=8)).collect();
    let map = PrecisionMap {
        bits: bits.clone(),
        shapes: vec![vec![n, 1]],
    };
    let zpa = zero_precision_allocate(&weights, &map, Granularity::PerParameter).unwrap();
    let mut zeroed = 0;
    for ((&w, &p), &q) in weights.iter().zip(&bits).zip(&zpa.bits) {
        assert!((w - quantize_q(w, q)).abs() <= (w - quantize_q(w, p)).abs());
        zeroed += usize::from(q == 0);
    }
    assert!(zeroed > 0);
}

#[test]
fn score_precision_round_trip() {
    for p in 1..=16 {
        assert_eq!(precision_from_score(s_init(p), Rounding::Round), p, "p = {p}");
        assert_eq!(precision_from_score(s_init(p), Rounding::Floor), p, "p = {p}");
    }
    assert!((sigmoid(s_init(8)) - 2f64.powi(-7)).abs() <= 1e-12);
    assert_eq!(precision_from_score(-(127f64).ln(), Rounding::Round), 8);
    assert_eq!(precision_from_score(0.0, Rounding::Round), 2);
    assert!((continuous_bits(-(127f64).ln()) - 7.0).abs() < 1e-12);
}

#[test]
fn floor_rounding_is_never_above_round() {
    for k in -200..200 {
        let s = k as f64 * 0.05;
        assert!(precision_from_score(s, Rounding::Floor) <= precision_from_score(s, Rounding::Round));
    }
}

fn small_net(seed: u64, bias: bool) -> (DenseNet, Dataset) {
    let mut rng = seeded(seed);
    let net = DenseNet::random(&[3, 5, 2], Activation::Tanh, Activation::Identity, bias, LossKind::Mse, &mut rng).unwrap();
    let data = Dataset::new(
        Tensor::randn(&[8, 3], 1.0, &mut rng),
        Targets::Values(Tensor::randn(&[8, 2], 1.0, &mut rng)),
    )
    .unwrap();
    (net, data)
}

#[test]
fn clip_examples_and_safety_sweep() {
    let net = DenseNet::from_parts(
        vec![slimnet::LayerSpec {
            inputs: 1,
            outputs: 2,
            activation: Activation::Identity,
            bias: false,
        }],
        vec![Tensor::matrix(1, 2, vec![3.0, 1.2]).unwrap()],
        LossKind::Mse,
    )
    .unwrap();
    let mut state = PrecisionState::new(&net, Granularity::PerNetwork, 2).unwrap();
    state.s = Tensor::vector(vec![0.0]);
    let mut params = net.params().to_vec();
    clip_weights(&net, &mut params, &state);
    assert_eq!(params[0].data(), &[1.5, 1.2]);

    let mut rng = seeded(2);
    let (net, _) = small_net(3, true);
    let mut state = PrecisionState::new(&net, Granularity::PerParameter, 4).unwrap();
    let groups = state.groups();
    let mut checked = 0;
    while checked < 100_000 {
        state.s = Tensor::randn(&[groups], 3.0, &mut rng);
        let mut params: Vec<Tensor> = net.params().iter().map(|p| Tensor::randn(p.shape(), 2.0, &mut rng)).collect();
        clip_weights(&net, &mut params, &state);
        let mut k = 0;
        for &wi in net.weight_indices() {
            for &w in params[wi].data() {
                let sig = sigmoid(state.s.data()[state.group[k]]);
                assert!(w.abs() + sig <= 2.0 + 1e-15);
                k += 1;
                checked += 1;
            }
        }
    }
}

#[test]
fn bpp_accounts_for_every_bit() {
    let map = PrecisionMap {
        bits: vec![0, 3, 8, 1, 0, 4],
        shapes: vec![vec![2, 3]],
    };
    assert_eq!(map.bpp() * 6.0, map.total_bits() as f64);
    assert_eq!(map.total_bits(), 16);
    assert!((map.compression_ratio() - 32.0 / (16.0 / 6.0)).abs() < 1e-12);
}

fn frozen_noise(state: &PrecisionState, seed: u64, samples: usize) -> Vec<Vec<Tensor>> {
    let mut rng = seeded(seed);
    slimnet::quantize::sample_noise(state, samples, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn smol_gradients_match_finite_differences(seed in any::<u64>(), pick in 0usize..3) {
        let granularity = [Granularity::PerParameter, Granularity::PerLayer, Granularity::PerNetwork][pick];
        let (net, data) = small_net(seed, true);
        let mut state = PrecisionState::new(&net, granularity, 3).unwrap();
        let mut rng = seeded(seed ^ 9);
        state.s = Tensor::randn(&[state.groups()], 1.0, &mut rng);
        let noise = frozen_noise(&state, seed ^ 10, 2);
        let lambda = 0.01;
        let out = smol_loss(&net, net.params(), &state, lambda, &data, &noise).unwrap();
        let np = net.params().len();
        let mut inputs = net.params().to_vec();
        inputs.push(state.s.clone());
        let numeric = finite_diff_grad(
            |ps| {
                let mut st = state.clone();
                st.s = ps[np].clone();
                Ok(smol_loss(&net, &ps[..np], &st, lambda, &data, &noise)?.loss)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        let analytic: Vec<&Tensor> = out.param_grads.iter().chain(std::iter::once(&out.score_grads)).collect();
        for (a, n) in analytic.iter().zip(&numeric) {
            let err = max_relative_error(a, n, 1e-3);
            prop_assert!(err <= 1e-4, "relative error {err:e}");
        }
    }
}

#[test]
fn vanishing_noise_recovers_clean_loss() {
    let (net, data) = small_net(4, true);
    let mut state = PrecisionState::new(&net, Granularity::PerParameter, 8).unwrap();
    state.s = Tensor::full(&[state.groups()], -40.0);
    let noise = frozen_noise(&state, 5, 3);
    let out = smol_loss(&net, net.params(), &state, 0.0, &data, &noise).unwrap();
    assert!((out.data_loss - net.loss(&data).unwrap()).abs() < 1e-12);
}

#[test]
fn penalty_at_eight_bit_initialization_is_seven_bits_per_weight() {
    let (net, data) = small_net(6, true);
    let lambda = 0.01;
    for g in [Granularity::PerParameter, Granularity::PerLayer, Granularity::PerNetwork] {
        let state = PrecisionState::new(&net, g, 8).unwrap();
        let noise = frozen_noise(&state, 7, 1);
        let out = smol_loss(&net, net.params(), &state, lambda, &data, &noise).unwrap();
        let expected = 7.0 * lambda * net.weight_count() as f64;
        assert!((out.loss - out.data_loss - expected).abs() < 1e-9);
    }
}

#[test]
fn network_granularity_matches_uniform_per_parameter_scores() {
    let (net, data) = small_net(8, true);
    let mut per_param = PrecisionState::new(&net, Granularity::PerParameter, 5).unwrap();
    let mut per_net = PrecisionState::new(&net, Granularity::PerNetwork, 5).unwrap();
    let noise = frozen_noise(&per_param, 11, 2);
    let lr = 0.05;
    let mut pa = net.params().to_vec();
    let mut pb = net.params().to_vec();
    for step in 0..20 {
        let a = smol_loss(&net, &pa, &per_param, 0.01, &data, &noise).unwrap();
        let b = smol_loss(&net, &pb, &per_net, 0.01, &data, &noise).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12, "step {step}");
        for (ga, gb) in a.param_grads.iter().zip(&b.param_grads) {
            assert!(ga.max_abs_diff(gb) < 1e-12);
        }
        assert!((a.score_grads.sum() - b.score_grads.data()[0]).abs() < 1e-10);
        // Step the weights identically and keep the per-parameter scores uniform.
        for (p, g) in pa.iter_mut().zip(&a.param_grads) {
            *p = p.zip_map(g, |w, d| w - lr * d);
        }
        pb = pa.clone();
        let next = per_net.s.data()[0] - 0.1 * b.score_grads.data()[0];
        per_net.s = Tensor::vector(vec![next]);
        per_param.s = Tensor::full(&[per_param.groups()], next);
    }
}

#[test]
fn high_precision_straight_through_matches_plain_training() {
    let (net, data) = small_net(12, true);
    let optim = OptimConfig::sgd(0.05);
    let map = PrecisionMap::uniform(&net, 14);
    let clipped: Vec<Tensor> = net.params().iter().map(|p| p.map(|w| w.clamp(-1.9, 1.9))).collect();
    let (ste, _) = ste_finetune(&net, &clipped, &map, &data, &optim, 100).unwrap();
    let mut plain = net.clone();
    plain.set_params(clipped).unwrap();
    let mut opt = slimnet::optim::Optimizer::new(optim).unwrap();
    let mut work = plain.params().to_vec();
    for _ in 0..100 {
        plain.set_params(work.clone()).unwrap();
        let (_, g) = plain.loss_and_grad(&data).unwrap();
        opt.step(&mut work, &g).unwrap();
    }
    for (a, b) in ste.iter().zip(&work) {
        assert!(a.max_abs_diff(b) <= 1e-3);
    }
}

#[test]
fn zero_bit_network_is_constant_but_still_has_gradients() {
    let (mut net, data) = small_net(13, true);
    let mut params = net.params().to_vec();
    for i in net.bias_indices().iter().flatten() {
        params[*i] = params[*i].map(|_| 0.3);
    }
    net.set_params(params).unwrap();
    let map = PrecisionMap::uniform(&net, 0);
    let q = quantize_params(&net, net.params(), &map);
    let out = net.forward_with(&q, &data.inputs).unwrap();
    let first = out.row(0).to_vec();
    assert!((0..out.rows()).all(|i| out.row(i) == first.as_slice()));
    let (_, grads) = ste_grad(&net, net.params(), &map, &data).unwrap();
    let last = *net.weight_indices().last().unwrap();
    assert!(grads[last].norm() > 0.0);
}

/// Least squares with orthogonal design columns and an optimum that is
/// exactly representable, so each coordinate's quantized value walks
/// monotonically onto the optimum.
#[test]
fn quantized_loss_decreases_on_convex_problem() {
    let hadamard = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    let rows: Vec<f64> = (0..3).flat_map(|_| hadamard.iter().flatten().copied()).collect();
    let x = Tensor::matrix(12, 4, rows).unwrap();
    let unit = 2f64.powi(-7);
    let truth = Tensor::matrix(4, 1, vec![37.0 * unit, -81.0 * unit, 101.0 * unit, 13.0 * unit]).unwrap();
    let y = x.matmul(&truth);
    let data = Dataset::new(x, Targets::Values(y)).unwrap();
    let net = DenseNet::from_parts(
        vec![slimnet::LayerSpec {
            inputs: 4,
            outputs: 1,
            activation: Activation::Identity,
            bias: false,
        }],
        vec![Tensor::zeros(&[4, 1])],
        LossKind::Mse,
    )
    .unwrap();
    let map = PrecisionMap::uniform(&net, 8);
    let (w, losses) = ste_finetune(&net, net.params(), &map, &data, &OptimConfig::sgd(0.05), 200).unwrap();
    assert_eq!(losses.len(), 201);
    for pair in losses.windows(2) {
        assert!(pair[1] <= pair[0], "{} -> {}", pair[0], pair[1]);
    }
    assert!(losses[200] < 1e-3 * losses[0]);
    assert_eq!(quantize_params(&net, &w, &map)[0].data(), truth.data());
}

#[test]
fn full_pipeline_reduces_bits_and_stays_accurate() {
    let (net, data) = small_net(15, true);
    let cfg = SmolConfig {
        lambda: 1e-3,
        steps: 300,
        ..SmolConfig::default()
    };
    let out = smol_train(&net, &data, &cfg, &OptimConfig::adam(0.01), 1).unwrap();
    assert!(out.precisions.bpp() < 8.0);
    assert!(out.final_loss.is_finite());
    let again = smol_train(&net, &data, &cfg, &OptimConfig::adam(0.01), 1).unwrap();
    assert_eq!(out, again);
}

#[test]
fn finalize_expands_groups() {
    let (net, _) = small_net(16, true);
    let mut state = PrecisionState::new(&net, Granularity::PerLayer, 8).unwrap();
    state.s = Tensor::vector(vec![s_init(3), s_init(6)]);
    let map = finalize_precisions(&state, Rounding::Round);
    assert_eq!(map.bits.len(), net.weight_count());
    assert_eq!(map.bits[..15], [3; 15]);
    assert_eq!(map.bits[15..], [6; 10]);
}

#[test]
fn activation_levels_and_quantization_error() {
    let relu = activation_range(Activation::Relu, Some(6.0)).unwrap();
    let levels = activation_levels(4, relu).unwrap();
    assert_eq!(levels.len(), 16);
    for (k, v) in levels.iter().enumerate() {
        assert!((v - k as f64 / 5.0).abs() < 1e-12);
    }
    assert!(activation_range(Activation::Relu, None).is_err());

    let mut rng = seeded(17);
    for (act, clip) in [(Activation::Tanh, None), (Activation::Sigmoid, None), (Activation::Relu, Some(4.0))] {
        let range = activation_range(act, clip).unwrap();
        for p in 1..=6 {
            let half = 0.5 * (range.hi - range.lo) / ((1u64 << p) - 1) as f64;
            let u = Tensor::uniform(&[200], range.lo, range.hi, &mut rng);
            let q = quantize_activations(&u, p, range).unwrap();
            assert!(u.max_abs_diff(&q) <= half + 1e-12);
        }
    }
    let u = Tensor::uniform(&[50], -1.0, 1.0, &mut rng);
    let tanh = activation_range(Activation::Tanh, None).unwrap();
    let still = perturb_activations(&u, -60.0, tanh, &mut rng);
    assert!(u.max_abs_diff(&still) < 1e-20);
}
