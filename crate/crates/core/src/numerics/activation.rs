//! Activation functions.
//!
//! The default activation is the Gaussian-error linear unit computed
//! through the error function, `x * Phi(x)` with the exact standard-normal
//! CDF, rather than the tanh approximation. Derived test values stay
//! framework-independent that way.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF via the complementary error function, which keeps
/// full precision in the lower tail where `1 + erf` would cancel.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian-error linear unit: `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// The activation used in FFN layers and patch neurons; carried as a
/// config value everywhere rather than hard-coded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_derivative(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        m.map(|v| self.apply(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent standard-normal CDF oracle: Simpson quadrature of the
    /// density from -12 (the tail below is ~1e-33, far under tolerance).
    fn cdf_oracle(x: f64) -> f64 {
        let lo = -12.0f64;
        if x <= lo {
            return 0.0;
        }
        let n = 20_000; // even
        let h = (x - lo) / n as f64;
        let phi = |t: f64| FRAC_1_SQRT_2PI * (-0.5 * t * t).exp();
        let mut acc = phi(lo) + phi(x);
        for i in 1..n {
            let t = lo + i as f64 * h;
            acc += phi(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn gelu_zero_fixed_point() {
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_at_one_matches_cdf_oracle() {
        let expected = 1.0 * cdf_oracle(1.0);
        assert!((gelu(1.0) - expected).abs() < 1e-9, "gelu(1)={}", gelu(1.0));
        assert!((gelu(1.0) - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn gelu_negative_tail_vanishes() {
        // |gelu(-10)| = 10 * Phi(-10) ~ 7.6e-23
        assert!(gelu(-10.0).abs() < 1e-20);
        assert!(gelu(-10.0) < 0.0);
    }

    #[test]
    fn gelu_monotone_from_minus_0_7() {
        let mut prev = gelu(-0.7);
        let mut x = -0.7;
        while x < 20.0 {
            x += 0.01;
            let y = gelu(x);
            assert!(y >= prev - 1e-15, "non-monotone at x={x}");
            prev = y;
        }
    }

    #[test]
    fn gelu_approaches_identity() {
        for &x in &[10.0, 15.0, 25.0, 40.0] {
            assert!((gelu(x) - x).abs() <= 1e-12, "x={x}");
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 1.7, 6.0] {
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_derivative(x) - numeric).abs() < 1e-8, "x={x}");
        }
    }
}
