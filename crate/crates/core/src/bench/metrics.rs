//! Error metrics of the benchmark.

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Pooled normalised squared error `Σ_k‖truth_k − est_k‖² / Σ_k‖truth_k‖²`.
pub fn nmse(truth: &[Vector], est: &[Vector]) -> Result<f64> {
    if truth.len() != est.len() || truth.iter().zip(est).any(|(t, e)| t.len() != e.len()) {
        return Err(Error::DimensionMismatch("truth and estimate sequences differ in shape".into()));
    }
    let reference: f64 = truth.iter().map(|t| t.norm_squared()).sum();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let error: f64 = truth.iter().zip(est).map(|(t, e)| (t - e).norm_squared()).sum();
    Ok(error / reference)
}

/// `10·log10(value)`.
pub fn to_db(value: f64) -> f64 {
    10.0 * value.log10()
}

/// Indices whose magnitude exceeds `threshold`.
pub fn support_of(u: &Vector, threshold: f64) -> Vec<usize> {
    u.iter().enumerate().filter(|(_, v)| v.abs() > threshold).map(|(i, _)| i).collect()
}

/// Support-estimation threshold as a fraction of `σ_u`.
pub const SUPPORT_THRESHOLD: f64 = 0.8;

/// False support recovery rate: the mean over steps of the Hamming distance
/// between the true support and the entries of `est` above `0.8·σ_u`, divided by `m`.
pub fn fsrr(true_supports: &[Vec<usize>], est: &[Vector], sigma_u: f64) -> Result<f64> {
    if true_supports.len() != est.len() || est.is_empty() {
        return Err(Error::DimensionMismatch("support and estimate sequences differ in length".into()));
    }
    if !(sigma_u > 0.0) {
        return Err(Error::InvalidParameter("sigma_u must be positive".into()));
    }
    let mut total = 0.0;
    for (support, u) in true_supports.iter().zip(est) {
        let m = u.len();
        let mut truth = vec![false; m];
        for &i in support {
            if i >= m {
                return Err(Error::DimensionMismatch(format!("support index {i} exceeds {m}")));
            }
            truth[i] = true;
        }
        let distance = u
            .iter()
            .zip(&truth)
            .filter(|(v, t)| (v.abs() > SUPPORT_THRESHOLD * sigma_u) != **t)
            .count();
        total += distance as f64 / m as f64;
    }
    Ok(total / est.len() as f64)
}
