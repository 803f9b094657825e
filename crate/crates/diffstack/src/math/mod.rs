//! Dense linear algebra, activations, deterministic RNG and the
//! reverse-mode gradient tape shared by every cell family.

pub mod matrix;
pub mod rng;
pub mod tape;

pub use matrix::Matrix;
pub use rng::RngStream;
pub use tape::{Node, ParamId, ParamStore, Tape};

/// Scale of the hidden activation `f1(x) = 1.7519 * tanh(2x/3)`.
pub const TANH_SCALE: f64 = 1.7519;
/// Input slope of `f1`.
pub const TANH_SLOPE: f64 = 2.0 / 3.0;

/// `1.7519 * tanh(2x/3)`, the hidden activation, elementwise.
pub fn scaled_tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| scaled_tanh_scalar(v)).collect()
}

#[inline]
pub fn scaled_tanh_scalar(x: f64) -> f64 {
    TANH_SCALE * (TANH_SLOPE * x).tanh()
}

/// Numerically safe softmax (max-subtraction).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "softmax of empty vector");
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Logistic sigmoid, elementwise.
pub fn logistic(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| logistic_scalar(v)).collect()
}

#[inline]
pub fn logistic_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `n` i.i.d. draws from N(mu, sigma2). `sigma2 = 0` yields the constant `mu`.
pub fn gaussian(rng: &mut RngStream, mu: f64, sigma2: f64, n: usize) -> crate::Result<Vec<f64>> {
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(crate::Error::Config(format!(
            "negative or non-finite variance {sigma2}"
        )));
    }
    if sigma2 == 0.0 {
        return Ok(vec![mu; n]);
    }
    Ok((0..n).map(|_| rng.gaussian(mu, sigma2)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_tanh_odd_and_asymptote() {
        assert_eq!(scaled_tanh_scalar(0.0), 0.0);
        assert!((scaled_tanh_scalar(50.0) - TANH_SCALE).abs() < 1e-9);
        assert!((scaled_tanh_scalar(-50.0) + TANH_SCALE).abs() < 1e-9);
        for x in [-3.0, -0.2, 0.7, 12.0] {
            assert!(scaled_tanh_scalar(x).abs() < TANH_SCALE);
            assert_eq!(scaled_tanh_scalar(x), -scaled_tanh_scalar(-x));
        }
    }

    #[test]
    fn scaled_tanh_matches_high_precision_reference() {
        // 1.7519 * tanh(1.0), tanh(1) evaluated to 20 digits externally.
        let tanh1 = 0.761_594_155_955_764_888_12_f64;
        assert!((scaled_tanh_scalar(1.5) - TANH_SCALE * tanh1).abs() < 1e-15);
    }

    #[test]
    fn softmax_symmetry_and_overflow_safety() {
        let u = softmax(&[0.0, 0.0, 0.0]);
        for v in &u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0] > 1.0 - 1e-12 && big[1] < 1e-12);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let s = softmax(&[1.0, 2.0, 3.0]);
        let z: f64 = [1.0_f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, &x) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((s[i] - (x as f64).exp() / z).abs() < 1e-12);
        }
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_identities() {
        assert_eq!(logistic_scalar(0.0), 0.5);
        for x in [-4.0, -0.3, 0.9, 7.0] {
            assert!((logistic_scalar(-x) - (1.0 - logistic_scalar(x))).abs() < 1e-15);
        }
        // sigma(2) against a direct evaluation.
        assert!((logistic_scalar(2.0) - 1.0 / (1.0 + (-2.0_f64).exp())).abs() < 1e-16);
    }

    #[test]
    fn gaussian_contract() {
        let mut rng = RngStream::new(7);
        assert_eq!(gaussian(&mut rng, 1.5, 0.0, 4).unwrap(), vec![1.5; 4]);
        assert!(gaussian(&mut rng, 0.0, -1.0, 4).is_err());

        let draws = gaussian(&mut rng, 0.0, 1.0, 1_000_000).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.01, "sample mean {mean} too far from 0");

        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        assert_eq!(a.gaussian(0.0, 1.0), b.gaussian(0.0, 1.0));
    }
}
