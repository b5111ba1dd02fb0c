//! Soft parameter sharing through weight templates, and network folding.
//!
//! Every layer's weight is a mix of `k` shared templates,
//! `W^(l) = Σ_i α^(l)_i T^(i)`. Layers whose coefficient vectors point the
//! same way (high absolute cosine similarity) compute the same function up
//! to scale, so they can be merged into one template and executed as a loop.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dataset, Targets};
use crate::tensor::Tensor;

/// Added to squared norms inside the regularizer so near-zero columns keep
/// finite gradients.
pub const COSINE_STABILIZER: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    /// `k × d`, one flattened template per row.
    pub templates: Tensor,
    /// `k × L`, one coefficient column per layer.
    pub coeffs: Tensor,
    /// Shape every layer's weight takes.
    pub weight_shape: Vec<usize>,
}

impl TemplateBank {
    pub fn new(templates: Tensor, coeffs: Tensor, weight_shape: Vec<usize>) -> Result<Self> {
        let d: usize = weight_shape.iter().product();
        if templates.ndim() != 2 || coeffs.ndim() != 2 {
            return Err(Error::Shape("templates and coefficients must be matrices".into()));
        }
        if templates.cols() != d {
            return Err(Error::Shape(format!(
                "templates hold {} entries, layer weights need {d}",
                templates.cols()
            )));
        }
        if templates.rows() != coeffs.rows() {
            return Err(Error::Shape(format!(
                "{} templates but coefficients for {}",
                templates.rows(),
                coeffs.rows()
            )));
        }
        Ok(Self {
            templates,
            coeffs,
            weight_shape,
        })
    }

    pub fn random<R: Rng + ?Sized>(k: usize, layers: usize, weight_shape: Vec<usize>, rng: &mut R) -> Result<Self> {
        let d: usize = weight_shape.iter().product();
        let fan_in = weight_shape.first().copied().unwrap_or(1) as f64;
        let templates = Tensor::randn(&[k, d], 1.0 / fan_in.sqrt(), rng);
        let coeffs = Tensor::randn(&[k, layers], 1.0 / (k as f64).sqrt(), rng);
        Self::new(templates, coeffs, weight_shape)
    }

    pub fn k(&self) -> usize {
        self.templates.rows()
    }

    pub fn layers(&self) -> usize {
        self.coeffs.cols()
    }

    /// Values stored by the bank: `k·d + k·L`.
    pub fn stored_values(&self) -> usize {
        self.templates.len() + self.coeffs.len()
    }

    /// Values a network without sharing would store: `L·d`.
    pub fn unshared_values(&self) -> usize {
        self.layers() * self.templates.cols()
    }
}

/// `W^(l) = Σ_i α^(l)_i T^(i)` for every layer.
pub fn effective_weights(bank: &TemplateBank) -> Vec<Tensor> {
    let all = bank.coeffs.transpose().matmul(&bank.templates);
    (0..bank.layers())
        .map(|l| {
            Tensor::new(bank.weight_shape.clone(), all.row(l).to_vec()).expect("template shape")
        })
        .collect()
}

/// Records the effective weights on a tape from coefficient and template vars.
pub fn record_effective_weights(tape: &mut Tape, coeffs: Var, templates: Var, shape: &[usize]) -> Vec<Var> {
    let at = tape.transpose(coeffs);
    let all = tape.matmul(at, templates);
    let layers = tape.value(all).rows();
    (0..layers)
        .map(|l| {
            let r = tape.row(all, l);
            tape.reshape(r, shape)
        })
        .collect()
}

fn column(m: &Tensor, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m.at(i, j)).collect()
}

/// Layer similarity matrix: absolute cosine similarity between coefficient columns.
pub fn compute_lsm(coeffs: &Tensor) -> Result<Tensor> {
    let l = coeffs.cols();
    let cols: Vec<Vec<f64>> = (0..l).map(|j| column(coeffs, j)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroCoefficients(j));
    }
    let mut s = Tensor::zeros(&[l, l]);
    for a in 0..l {
        s.set(a, a, 1.0);
        for b in a + 1..l {
            let same = cols[a] == cols[b] || cols[a].iter().zip(&cols[b]).all(|(x, y)| *x == -*y);
            let dot: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            // Rounding can leave exact duplicates a hair below 1.
            let v = if same { 1.0 } else { (dot.abs() / (norms[a] * norms[b])).min(1.0) };
            s.set(a, b, v);
            s.set(b, a, v);
        }
    }
    Ok(s)
}

/// Comma-separated rows of a matrix.
pub fn matrix_to_csv(m: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups layers by transitive closure over pairs with similarity `≥ τ`.
/// Group ids are 0-based and numbered by first appearance.
pub fn group_layers(lsm: &Tensor, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {tau}")));
    }
    let l = lsm.rows();
    let mut uf = UnionFind::new(l);
    for a in 0..l {
        for b in a + 1..l {
            if lsm.at(a, b) >= tau {
                uf.union(a, b);
            }
        }
    }
    let mut ids = vec![usize::MAX; l];
    let mut next = 0;
    let mut out = Vec::with_capacity(l);
    for a in 0..l {
        let r = uf.find(a);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        out.push(ids[r]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// Group of each layer.
    pub groups: Vec<usize>,
    /// `n × L` one-hot coefficients.
    pub coeffs: Tensor,
    /// `n × k` reparameterization matrix.
    pub b: Tensor,
    /// `‖α^(l) − Bᵀ α′^(l)‖` per layer.
    pub residuals: Vec<f64>,
}

impl FoldResult {
    pub fn group_count(&self) -> usize {
        self.coeffs.rows()
    }

    /// Folded templates `T′ = B T`.
    pub fn templates(&self, bank: &TemplateBank) -> Tensor {
        self.b.matmul(&bank.templates)
    }

    /// `Bᵀ α′`, the coefficients the folded network effectively uses.
    pub fn reconstructed_coeffs(&self) -> Tensor {
        self.b.transpose().matmul(&self.coeffs)
    }

    pub fn program(&self) -> String {
        program_notation(&self.groups)
    }
}

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).expect("matrix shape")
}

/// One-hot coefficients per group and `Bᵀ = α α′ᵀ (α′ α′ᵀ)⁻¹`.
pub fn reparameterize(coeffs: &Tensor, groups: &[usize]) -> Result<FoldResult> {
    let l = coeffs.cols();
    if groups.len() != l {
        return Err(Error::Shape(format!("{} group ids for {l} layers", groups.len())));
    }
    let n = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut onehot = Tensor::zeros(&[n, l]);
    for (layer, &g) in groups.iter().enumerate() {
        onehot.set(g, layer, 1.0);
    }
    let a = to_dmatrix(coeffs);
    let ap = to_dmatrix(&onehot);
    let gram = &ap * ap.transpose();
    let inv = gram
        .try_inverse()
        .expect("one-hot gram matrix is diagonal with nonzero group sizes");
    let bt = &a * ap.transpose() * inv;
    let recon = &bt * &ap;
    let residuals = (0..l).map(|j| (a.column(j) - recon.column(j)).norm()).collect();
    Ok(FoldResult {
        groups: groups.to_vec(),
        coeffs: onehot,
        b: from_dmatrix(&bt.transpose()),
        residuals,
    })
}

/// The exact change of basis `(α, T) → ((Bᵀ)⁻¹ α, B T)` for invertible `B`.
pub fn change_basis(bank: &TemplateBank, b: &Tensor) -> Result<TemplateBank> {
    let bm = to_dmatrix(b);
    let inv_t = bm
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Config("basis change matrix is singular".into()))?;
    let coeffs = from_dmatrix(&(inv_t * to_dmatrix(&bank.coeffs)));
    let templates = from_dmatrix(&(bm * to_dmatrix(&bank.templates)));
    TemplateBank::new(templates, coeffs, bank.weight_shape.clone())
}

/// Compact program text: runs of a repeated block become `[..]xN`, single
/// repeated layers `gNxM`. Groups are printed 1-based.
pub fn program_notation(groups: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < groups.len() {
        let rest = groups.len() - i;
        let mut best = (1, 1);
        for len in 1..=rest / 2 {
            let mut reps = 1;
            while i + (reps + 1) * len <= groups.len()
                && groups[i..i + len] == groups[i + reps * len..i + (reps + 1) * len]
            {
                reps += 1;
            }
            if reps > 1 && reps * len > best.0 * best.1 {
                best = (len, reps);
            }
        }
        let (len, reps) = best;
        let block: Vec<String> = groups[i..i + len].iter().map(|g| format!("g{}", g + 1)).collect();
        parts.push(match (len, reps) {
            (_, 1) => block.join(" "),
            (1, r) => format!("{}x{r}", block[0]),
            (_, r) => format!("[{}]x{r}", block.join(" ")),
        });
        i += len * reps;
    }
    parts.join(" ")
}

/// A stack of square bias-free layers whose weights come from a template bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedNet {
    pub bank: TemplateBank,
    pub activation: Activation,
}

impl SharedNet {
    pub fn random<R: Rng + ?Sized>(
        width: usize,
        layers: usize,
        templates: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            bank: TemplateBank::random(templates, layers, vec![width, width], rng)?,
            activation,
        })
    }

    pub fn width(&self) -> usize {
        self.bank.weight_shape[0]
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.cols() != self.width() {
            return Err(Error::Layer {
                layer: 0,
                detail: format!("input shape {:?}, expected [n, {}]", x.shape(), self.width()),
            });
        }
        Ok(())
    }

    /// Applies `weights` in order, each followed by the activation.
    pub fn run(&self, weights: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let act = self.activation;
        let mut h = x.clone();
        for w in weights {
            h = h.matmul(w).map(|v| act.apply(v));
        }
        Ok(h)
    }

    /// Weight-mixing execution.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(&effective_weights(&self.bank), x)
    }

    /// Template-layer execution: apply every template, then mix the outputs.
    pub fn forward_templates(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let shape = &self.bank.weight_shape;
        let templates: Vec<Tensor> = (0..self.bank.k())
            .map(|i| Tensor::new(shape.clone(), self.bank.templates.row(i).to_vec()).expect("template shape"))
            .collect();
        let act = self.activation;
        let mut h = x.clone();
        for l in 0..self.bank.layers() {
            let mut mixed = Tensor::zeros(&[h.rows(), self.width()]);
            for (i, t) in templates.iter().enumerate() {
                let a = self.bank.coeffs.at(i, l);
                let out = h.matmul(t);
                for (m, o) in mixed.data_mut().iter_mut().zip(out.data()) {
                    *m += a * o;
                }
            }
            h = mixed.map(|v| act.apply(v));
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutput {
    pub output: Tensor,
    /// Largest absolute difference from the unfolded network.
    pub deviation: f64,
}

/// Runs the folded program: layer `l` applies the folded template of its group.
pub fn fold_and_execute(net: &SharedNet, fold: &FoldResult, x: &Tensor) -> Result<FoldOutput> {
    if fold.groups.len() != net.bank.layers() {
        return Err(Error::Shape("fold does not match the network depth".into()));
    }
    let folded = fold.templates(&net.bank);
    let shape = &net.bank.weight_shape;
    let per_group: Vec<Tensor> = (0..fold.group_count())
        .map(|g| Tensor::new(shape.clone(), folded.row(g).to_vec()).expect("template shape"))
        .collect();
    let program: Vec<Tensor> = fold.groups.iter().map(|&g| per_group[g].clone()).collect();
    let output = net.run(&program, x)?;
    let reference = net.forward(x)?;
    Ok(FoldOutput {
        deviation: output.max_abs_diff(&reference),
        output,
    })
}

#[derive(Clone, Debug)]
pub struct RegularizedLoss {
    pub loss: f64,
    pub data_loss: f64,
    /// Sum of all LSM entries (stabilized).
    pub similarity: f64,
    pub coeff_grad: Tensor,
    pub template_grad: Tensor,
}

/// Records the stabilized sum of all LSM entries.
fn record_similarity_sum(tape: &mut Tape, coeffs: Var) -> Var {
    let l = tape.value(coeffs).cols();
    let at = tape.transpose(coeffs);
    let gram = tape.matmul(at, coeffs);
    let diag = tape.diag(gram);
    let shifted = tape.offset(diag, COSINE_STABILIZER);
    let norms = tape.sqrt(shifted);
    let col = tape.reshape(norms, &[l, 1]);
    let row = tape.reshape(norms, &[1, l]);
    let outer = tape.matmul(col, row);
    let abs = tape.abs(gram);
    let cos = tape.div(abs, outer);
    tape.sum(cos)
}

/// `L − λ_R Σ S` with MSE data loss on the shared network.
pub fn recurrence_regularized_loss(net: &SharedNet, lambda_r: f64, data: &Dataset) -> Result<RegularizedLoss> {
    if lambda_r < 0.0 {
        return Err(Error::Config("recurrence weight must be nonnegative".into()));
    }
    let Targets::Values(target) = &data.targets else {
        return Err(Error::Config("shared networks train on value targets".into()));
    };
    net.check(&data.inputs)?;
    let mut tape = Tape::new();
    let coeffs = tape.param(ParamId(0), net.bank.coeffs.clone());
    let templates = tape.param(ParamId(1), net.bank.templates.clone());
    let weights = record_effective_weights(&mut tape, coeffs, templates, &net.bank.weight_shape);
    let mut h = tape.input(data.inputs.clone());
    for w in weights {
        h = tape.matmul(h, w);
        h = match net.activation {
            Activation::Identity => h,
            Activation::Relu => tape.relu(h),
            Activation::Sigmoid => tape.sigmoid(h),
            Activation::Tanh => tape.tanh(h),
        };
    }
    let data_loss = tape.mse(h, target.clone());
    let sim = record_similarity_sum(&mut tape, coeffs);
    let reg = tape.scale(sim, -lambda_r);
    let loss = tape.add(data_loss, reg);
    let mut grads = tape.backward_scalar(loss)?;
    Ok(RegularizedLoss {
        loss: tape.scalar(loss),
        data_loss: tape.scalar(data_loss),
        similarity: tape.scalar(sim),
        coeff_grad: grads.take_or_zeros(ParamId(0), net.bank.coeffs.shape()),
        template_grad: grads.take_or_zeros(ParamId(1), net.bank.templates.shape()),
    })
}

/// Mean off-diagonal LSM entry, or 0 for a single layer.
pub fn mean_off_diagonal(lsm: &Tensor) -> f64 {
    let l = lsm.rows();
    if l < 2 {
        return 0.0;
    }
    let total: f64 = lsm.sum() - (0..l).map(|i| lsm.at(i, i)).sum::<f64>();
    total / (l * (l - 1)) as f64
}
