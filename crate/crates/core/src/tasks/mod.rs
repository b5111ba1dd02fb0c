//! Problems and datasets: the one-dimensional stochastic problem on which
//! Adam fails to converge, shortest-path grids, and small toy datasets.

pub mod grid;
pub mod synth;
pub mod toy;

pub use grid::{generate_grid, GridSample};
pub use synth::{synth_run, SynthProblem, SynthRecord, SynthRun};
pub use toy::{toy_blobs, toy_dataset, toy_regression, ToyKind};

use crate::error::{Error, Result};

/// `2·TP / (|y| + |ŷ|)`, or 0 when both are empty.
pub fn f1_score(y: &[bool], y_hat: &[bool]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "f1 over {} labels and {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let tp = y.iter().zip(y_hat).filter(|(a, b)| **a && **b).count();
    let pos = y.iter().filter(|a| **a).count() + y_hat.iter().filter(|a| **a).count();
    if pos == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let y = [true, true, false, false];
        assert_eq!(f1_score(&y, &y).unwrap(), 1.0);
        assert_eq!(f1_score(&y, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(f1_score(&y, &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(f1_score(&[false; 3], &[false; 3]).unwrap(), 0.0);
        assert!(f1_score(&y, &[true]).is_err());
    }
}
