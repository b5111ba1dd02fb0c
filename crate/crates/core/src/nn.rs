//! Fully-connected networks built on the tape.
//!
//! Parameters live in one flat list ordered layer by layer (weight, then
//! bias when present) so optimizers and compression methods can address them
//! by index. Weights are stored `inputs × outputs`; a batch is `n × inputs`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
    BinaryCrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "binary-cross-entropy" | "bce" => Ok(LossKind::BinaryCrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Real-valued targets shaped like the network output.
    Values(Tensor),
    /// One class index per row.
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.is_empty() || targets.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let c = self.inputs.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.inputs.row(i));
        }
        let inputs = Tensor::matrix(idx.len(), c, data).expect("subset rows");
        let targets = match &self.targets {
            Targets::Values(t) => {
                let k = t.cols();
                let mut d = Vec::with_capacity(idx.len() * k);
                for &i in idx {
                    d.extend_from_slice(t.row(i));
                }
                Targets::Values(Tensor::matrix(idx.len(), k, d).expect("subset targets"))
            }
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        };
        Dataset { inputs, targets }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    weight_index: Vec<usize>,
    bias_index: Vec<Option<usize>>,
    loss: LossKind,
}

impl DenseNet {
    /// Builds a network from explicit parameters, checking that shapes compose.
    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<Tensor>, loss: LossKind) -> Result<Self> {
        let mut weight_index = Vec::with_capacity(layers.len());
        let mut bias_index = Vec::with_capacity(layers.len());
        let mut next = 0;
        for (l, spec) in layers.iter().enumerate() {
            if l > 0 && layers[l - 1].outputs != spec.inputs {
                return Err(Error::Layer {
                    layer: l,
                    detail: format!(
                        "expects {} inputs but the previous layer emits {}",
                        spec.inputs,
                        layers[l - 1].outputs
                    ),
                });
            }
            let w = params.get(next).ok_or_else(|| Error::Layer {
                layer: l,
                detail: "missing weight".into(),
            })?;
            if w.shape() != [spec.inputs, spec.outputs] {
                return Err(Error::Layer {
                    layer: l,
                    detail: format!(
                        "weight shape {:?}, expected [{}, {}]",
                        w.shape(),
                        spec.inputs,
                        spec.outputs
                    ),
                });
            }
            weight_index.push(next);
            next += 1;
            if spec.bias {
                let b = params.get(next).ok_or_else(|| Error::Layer {
                    layer: l,
                    detail: "missing bias".into(),
                })?;
                if b.shape() != [spec.outputs] {
                    return Err(Error::Layer {
                        layer: l,
                        detail: format!("bias shape {:?}, expected [{}]", b.shape(), spec.outputs),
                    });
                }
                bias_index.push(Some(next));
                next += 1;
            } else {
                bias_index.push(None);
            }
        }
        if next != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors supplied, layers use {}",
                params.len(),
                next
            )));
        }
        Ok(Self {
            layers,
            params,
            weight_index,
            bias_index,
            loss,
        })
    }

    /// Random network with weights drawn from `N(0, 1/fan_in)` and zero biases.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        bias: bool,
        loss: LossKind,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        let mut params = Vec::new();
        for l in 0..n {
            let (i, o) = (sizes[l], sizes[l + 1]);
            layers.push(LayerSpec {
                inputs: i,
                outputs: o,
                activation: if l + 1 == n { output } else { hidden },
                bias,
            });
            params.push(Tensor::randn(&[i, o], 1.0 / (i as f64).sqrt(), rng));
            if bias {
                params.push(Tensor::zeros(&[o]));
            }
        }
        Self::from_parts(layers, params, loss)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Replaces all parameters; shapes must match the current ones.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("replacement parameters do not match the network".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Index of each layer's weight in the flat parameter list.
    pub fn weight_indices(&self) -> &[usize] {
        &self.weight_index
    }

    pub fn bias_indices(&self) -> &[Option<usize>] {
        &self.bias_index
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[self.weight_index[layer]]
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Number of weight entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.weight_index.iter().map(|&i| self.params[i].len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| Error::Config("network has no layers".into()))?;
        if x.ndim() != 2 || x.cols() != first.inputs {
            return Err(Error::Layer {
                layer: 0,
                detail: format!("input shape {:?}, expected [n, {}]", x.shape(), first.inputs),
            });
        }
        Ok(())
    }

    /// Forward pass without recording.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params, x)
    }

    /// Forward pass using `params` in place of the network's own parameters.
    pub fn forward_with(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            h = h.matmul(&params[self.weight_index[l]]);
            if let Some(bi) = self.bias_index[l] {
                let b = params[bi].data();
                let m = spec.outputs;
                for (k, v) in h.data_mut().iter_mut().enumerate() {
                    *v += b[k % m];
                }
            }
            let act = spec.activation;
            h = h.map(|v| act.apply(v));
        }
        Ok(h)
    }

    /// Records every parameter on the tape as `ParamId(index)`.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect()
    }

    /// Records the forward pass using `vars` (one per parameter) so callers
    /// can substitute transformed weights.
    pub fn record_forward(&self, tape: &mut Tape, vars: &[Var], x: &Tensor) -> Result<Var> {
        self.check_input(x)?;
        let mut h = tape.input(x.clone());
        for (l, spec) in self.layers.iter().enumerate() {
            h = tape.matmul(h, vars[self.weight_index[l]]);
            if let Some(bi) = self.bias_index[l] {
                h = tape.add_bias(h, vars[bi]);
            }
            h = spec.activation.record(tape, h);
        }
        Ok(h)
    }

    /// Records the data loss for `out` against `targets`.
    ///
    /// Cross-entropy losses operate on pre-activation logits, so the output
    /// layer's activation should be identity for them.
    pub fn record_loss(&self, tape: &mut Tape, out: Var, targets: &Targets) -> Result<Var> {
        match (self.loss, targets) {
            (LossKind::Mse, Targets::Values(t)) => Ok(tape.mse(out, t.clone())),
            (LossKind::BinaryCrossEntropy, Targets::Values(t)) => {
                Ok(tape.bce_with_logits(out, t.clone()))
            }
            (LossKind::CrossEntropy, Targets::Classes(c)) => {
                Ok(tape.softmax_cross_entropy(out, c.clone()))
            }
            (kind, _) => Err(Error::Config(format!("targets do not fit loss {kind:?}"))),
        }
    }

    /// Loss at the current parameters.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        self.loss_with(&self.params, data)
    }

    pub fn loss_with(&self, params: &[Tensor], data: &Dataset) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.input(p.clone())).collect();
        let out = self.record_forward(&mut tape, &vars, &data.inputs)?;
        let loss = self.record_loss(&mut tape, out, &data.targets)?;
        Ok(tape.scalar(loss))
    }

    /// Loss and one gradient per parameter (zeros for unused parameters).
    pub fn loss_and_grad(&self, data: &Dataset) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = self.record_forward(&mut tape, &vars, &data.inputs)?;
        let loss = self.record_loss(&mut tape, out, &data.targets)?;
        let mut grads = tape.backward_scalar(loss)?;
        let g = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| grads.take_or_zeros(ParamId(i), p.shape()))
            .collect();
        Ok((tape.scalar(loss), g))
    }

    /// Fraction of rows classified correctly. Class targets use argmax;
    /// value targets with a single column use a 0.5 threshold on the sigmoid.
    pub fn accuracy_with(&self, params: &[Tensor], data: &Dataset) -> Result<f64> {
        let out = self.forward_with(params, &data.inputs)?;
        Ok(accuracy(&out, &data.targets))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        self.accuracy_with(&self.params, data)
    }
}

/// Classification accuracy of raw outputs against targets.
pub fn accuracy(out: &Tensor, targets: &Targets) -> f64 {
    let n = out.rows();
    let correct = match targets {
        Targets::Classes(c) => (0..n)
            .filter(|&i| argmax(out.row(i)) == c[i])
            .count(),
        Targets::Values(t) => (0..n)
            .filter(|&i| {
                out.row(i)
                    .iter()
                    .zip(t.row(i))
                    .all(|(&z, &y)| (z >= 0.0) == (y >= 0.5))
            })
            .count(),
    };
    correct as f64 / n as f64
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
