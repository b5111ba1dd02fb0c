//! Differentiable model compression and adaptive optimization at desk scale.
//!
//! The crate is layered bottom-up: [`tensor`] and [`autodiff`] form the
//! numeric substrate, [`nn`] builds dense networks on it, and the method
//! modules ([`optim`], [`sparsify`], [`quantize`], [`share`]) train and
//! compress those networks. [`tasks`] supplies problems and datasets and
//! [`harness`] wires everything into reproducible runs.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod math;
pub mod nn;
pub mod optim;
pub mod quantize;
pub mod share;
pub mod sparsify;
pub mod tasks;
pub mod tensor;

pub use autodiff::{finite_diff_grad, Gradients, ParamId, Tape, Var};
pub use error::{Error, Result};
pub use nn::{Activation, Dataset, DenseNet, LayerSpec, LossKind, Targets};
pub use tensor::Tensor;

/// Deterministic generator used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate's seeded generator.
pub fn seeded(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
