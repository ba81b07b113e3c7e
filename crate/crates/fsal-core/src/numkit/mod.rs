//! Deterministic dense numerics: matrices, seeded RNG streams, Adam, and the
//! L1 proximal step.
//!
//! Everything in here is pure: the same inputs produce bitwise-identical
//! outputs, which the rest of the crate relies on for reproducible runs.

mod adam;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use matrix::Matrix;
pub use rng::{rng_derive, RngStream};

use crate::error::{Error, Result};

/// Soft-thresholding (proximal operator of `t * ||w||_1`).
///
/// Each entry is shrunk toward zero by `t`; entries with `|w_i| <= t` become
/// exactly zero.
pub fn soft_threshold(w: &[f64], t: f64) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "soft_threshold requires t >= 0, got {t}"
        )));
    }
    Ok(w.iter()
        .map(|&v| {
            if v > t {
                v - t
            } else if v < -t {
                v + t
            } else {
                0.0
            }
        })
        .collect())
}

/// Dot product; panics on length mismatch (programmer error).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distance between two vectors.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sq_dist length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Numerically stable binary cross-entropy given a logit.
///
/// Equals `-y*ln(sigmoid(l)) - (1-y)*ln(1-sigmoid(l))`.
pub fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of a slice; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n-1 denominator); 0 when n < 2.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_full_shrinkage() {
        assert_eq!(soft_threshold(&[0.3], 0.5).unwrap(), vec![0.0]);
    }

    #[test]
    fn soft_threshold_symmetric() {
        assert_eq!(soft_threshold(&[2.0, -2.0], 0.5).unwrap(), vec![1.5, -1.5]);
    }

    #[test]
    fn soft_threshold_identity_at_zero() {
        let mut rng = rng_derive(11, &[0]);
        let w: Vec<f64> = (0..32).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        assert_eq!(soft_threshold(&w, 0.0).unwrap(), w);
    }

    #[test]
    fn soft_threshold_rejects_negative_t() {
        assert!(soft_threshold(&[1.0], -0.1).is_err());
    }

    #[test]
    fn soft_threshold_composes_additively() {
        // soft(soft(w,a),b) == soft(w,a+b) for a,b >= 0
        let mut rng = rng_derive(12, &[0]);
        for _ in 0..200 {
            let w: Vec<f64> = (0..8).map(|_| rng.next_f64() * 6.0 - 3.0).collect();
            let a = rng.next_f64();
            let b = rng.next_f64();
            let lhs = soft_threshold(&soft_threshold(&w, a).unwrap(), b).unwrap();
            let rhs = soft_threshold(&w, a + b).unwrap();
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn bce_matches_naive_formula() {
        for &(l, y) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 1.0), (-7.0, 1.0)] {
            let p = sigmoid(l);
            let naive = -y * p.ln() - (1.0 - y) * (1.0 - p).ln();
            assert!((bce_with_logit(l, y) - naive).abs() < 1e-12);
        }
    }
}
