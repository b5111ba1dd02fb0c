//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its parents, so the node list is topologically ordered by construction.
//! [`Tape::backward`] walks it once in reverse.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Identifies a trainable leaf so gradients can be looked up after backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Square(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    Diag(Var),
    StraightThrough(Var),
    Mse(Var, Tensor),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter id. Parameters that never reached the
/// differentiated output are absent.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.by_param.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Takes the gradient for `id`, or zeros of `shape` if the parameter was unused.
    pub fn take_or_zeros(&mut self, id: ParamId, shape: &[usize]) -> Tensor {
        self.by_param
            .remove(&id)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.by_param.iter()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First element of a value; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Records a constant that receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// `x[i, j] + b[j]` for an `n × m` matrix and a length-`m` bias.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        let m = xv.cols();
        assert_eq!(bv.len(), m, "bias of length {} for {} columns", bv.len(), m);
        let mut out = xv.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[k % m];
        }
        self.push(out, Op::AddBias(x, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .reshape(shape)
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        self.push(v, Op::Reshape(a))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let v = Tensor::vector(self.value(a).row(i).to_vec());
        self.push(v, Op::Row(a, i))
    }

    /// `out[k] = a[index[k]]` over flat storage, shaped `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Var {
        let src = self.value(a).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let v = Tensor::new(shape.to_vec(), data).unwrap_or_else(|e| panic!("gather: {e}"));
        self.push(v, Op::Gather(a, index))
    }

    pub fn diag(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows();
        assert_eq!(n, t.cols(), "diag of a non-square matrix");
        let v = Tensor::vector((0..n).map(|i| t.at(i, i)).collect());
        self.push(v, Op::Diag(a))
    }

    /// Uses `forward` as the value but routes the incoming gradient to
    /// `surrogate` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, surrogate: Var, forward: Tensor) -> Var {
        assert_eq!(
            self.value(surrogate).shape(),
            forward.shape(),
            "straight-through value must match its surrogate's shape"
        );
        self.push(forward, Op::StraightThrough(surrogate))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse target shape");
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Mse(pred, target))
    }

    /// Softmax cross-entropy averaged over the rows of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let z = self.value(logits);
        let (n, c) = (z.rows(), z.cols());
        assert_eq!(labels.len(), n, "one label per row");
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label {y} out of range for {c} classes");
            let row = z.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy(logits, labels),
        )
    }

    /// Binary cross-entropy on logits, averaged over all elements.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), target.shape(), "bce target shape");
        let loss = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum::<f64>()
            / z.len() as f64;
        self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, target))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::Shape(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                out_shape
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed);
        let mut grads = Gradients::default();

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match grads.by_param.get_mut(id) {
                    Some(acc) => accumulate(acc, &g),
                    None => {
                        grads.by_param.insert(*id, g);
                    }
                },
                Op::Add(a, b) => {
                    send(&mut adj, *a, g.clone());
                    send(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut adj, *b, g.map(|x| -x));
                    send(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    send(&mut adj, *a, ga);
                    send(&mut adj, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = g.zip_map(bv, |x, y| x / y);
                    let gb = g
                        .zip_map(&node.value, |x, q| x * q)
                        .zip_map(bv, |x, y| -x / y);
                    send(&mut adj, *a, ga);
                    send(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => send(&mut adj, *a, g.map(|x| c * x)),
                Op::Offset(a) => send(&mut adj, *a, g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    send(&mut adj, *a, ga);
                    send(&mut adj, *b, gb);
                }
                Op::Transpose(a) => send(&mut adj, *a, g.transpose()),
                Op::AddBias(x, b) => {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for (k, &v) in g.data().iter().enumerate() {
                        gb[k % m] += v;
                    }
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), gb)?;
                    send(&mut adj, *b, gb);
                    send(&mut adj, *x, g);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    send(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    send(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    send(&mut adj, *a, ga);
                }
                Op::Exp(a) => send(&mut adj, *a, g.zip_map(&node.value, |x, y| x * y)),
                Op::Ln(a) => send(&mut adj, *a, g.zip_map(self.value(*a), |x, v| x / v)),
                Op::Sqrt(a) => {
                    send(&mut adj, *a, g.zip_map(&node.value, |x, y| x / (2.0 * y)))
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| {
                        if v > 0.0 {
                            x
                        } else if v < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    send(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    send(&mut adj, *a, g.zip_map(self.value(*a), |x, v| 2.0 * x * v))
                }
                Op::Softplus(a) => {
                    send(&mut adj, *a, g.zip_map(self.value(*a), |x, v| x * sigmoid(v)))
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    send(&mut adj, *a, Tensor::full(self.value(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let s = g.data()[0] / src.len() as f64;
                    send(&mut adj, *a, Tensor::full(src.shape(), s));
                }
                Op::Reshape(a) => {
                    let ga = g.reshape(self.value(*a).shape())?;
                    send(&mut adj, *a, ga);
                }
                Op::Row(a, i) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    let c = src.cols();
                    ga.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.data());
                    send(&mut adj, *a, ga);
                }
                Op::Gather(a, index) => {
                    let mut ga = Tensor::zeros(self.value(*a).shape());
                    let dst = ga.data_mut();
                    for (&i, &v) in index.iter().zip(g.data()) {
                        dst[i] += v;
                    }
                    send(&mut adj, *a, ga);
                }
                Op::Diag(a) => {
                    let n = g.len();
                    let mut ga = Tensor::zeros(&[n, n]);
                    for i in 0..n {
                        ga.set(i, i, g.data()[i]);
                    }
                    send(&mut adj, *a, ga);
                }
                Op::StraightThrough(a) => send(&mut adj, *a, g),
                Op::Mse(p, target) => {
                    let pv = self.value(*p);
                    let k = 2.0 * g.data()[0] / pv.len() as f64;
                    send(&mut adj, *p, pv.zip_map(target, |a, b| k * (a - b)));
                }
                Op::SoftmaxCrossEntropy(z, labels) => {
                    let zv = self.value(*z);
                    let (n, c) = (zv.rows(), zv.cols());
                    let k = g.data()[0] / n as f64;
                    let mut gz = Tensor::zeros(&[n, c]);
                    for (i, &y) in labels.iter().enumerate() {
                        let row = zv.row(i);
                        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / denom;
                            let t = if j == y { 1.0 } else { 0.0 };
                            gz.set(i, j, k * (p - t));
                        }
                    }
                    send(&mut adj, *z, gz);
                }
                Op::BceWithLogits(z, target) => {
                    let zv = self.value(*z);
                    let k = g.data()[0] / zv.len() as f64;
                    send(&mut adj, *z, zv.zip_map(target, |x, y| k * (sigmoid(x) - y)));
                }
            }
        }
        Ok(grads)
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        self.backward(output, Tensor::scalar(1.0))
    }
}

fn accumulate(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn send(adj: &mut [Option<Tensor>], to: Var, g: Tensor) {
    match &mut adj[to.0] {
        Some(acc) => accumulate(acc, &g),
        slot @ None => *slot = Some(g),
    }
}

/// Central-difference estimate of the gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {step} must be positive")));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = loss(&work)?;
            work[p].data_mut()[i] = orig - step;
            let down = loss(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
