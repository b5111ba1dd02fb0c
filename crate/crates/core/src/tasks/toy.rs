//! Small seeded datasets for fast training checks.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, Targets};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    Regression,
    Blobs,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(ToyKind::Regression),
            "blobs" => Ok(ToyKind::Blobs),
            other => Err(Error::Config(format!("unknown toy dataset `{other}`"))),
        }
    }
}

/// `y = X w⋆ + noise·N(0,1)` with `X` and `w⋆` standard normal.
/// Returns the dataset and `w⋆` as a `d × 1` matrix.
pub fn toy_regression(n: usize, d: usize, noise: f64, seed: u64) -> Result<(Dataset, Tensor)> {
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = crate::seeded(seed);
    let x = Tensor::randn(&[n, d], 1.0, &mut rng);
    let w = Tensor::randn(&[d, 1], 1.0, &mut rng);
    let mut y = x.matmul(&w);
    if noise > 0.0 {
        for v in y.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += noise * e;
        }
    }
    Ok((Dataset::new(x, Targets::Values(y))?, w))
}

/// Isotropic Gaussian blobs with unit spread whose centers are pairwise
/// `separation` apart. Classes are assigned round-robin.
pub fn toy_blobs(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    if classes < 2 || classes > d {
        return Err(Error::Config(format!(
            "blobs need 2 <= classes <= dimension, got {classes} classes in {d} dimensions"
        )));
    }
    let mut rng = crate::seeded(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let mut x = Tensor::randn(&[n, d], 1.0, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for (i, &c) in labels.iter().enumerate() {
        let v = x.at(i, c) + radius;
        x.set(i, c, v);
    }
    Dataset::new(x, Targets::Classes(labels))
}

/// Defaults used by the CLI: noiseless regression or 3 well-separated blobs.
pub fn toy_dataset(kind: ToyKind, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    match kind {
        ToyKind::Regression => Ok(toy_regression(n, d, 0.0, seed)?.0),
        ToyKind::Blobs => toy_blobs(n, d, 3.min(d.max(2)), 10.0, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_requests_fail() {
        assert!(matches!(toy_dataset(ToyKind::Blobs, 0, 4, 1), Err(Error::EmptyDataset)));
        assert!(matches!(toy_dataset(ToyKind::Regression, 0, 4, 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(
            toy_dataset(ToyKind::Blobs, 30, 4, 9).unwrap(),
            toy_dataset(ToyKind::Blobs, 30, 4, 9).unwrap()
        );
    }
}
