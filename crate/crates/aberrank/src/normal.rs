//! Standard normal density, distribution function, and quantile.
//!
//! The distribution function is computed from `libm`'s complementary error
//! function, which is accurate to a couple of ulps across the whole range;
//! the worst-case solvers and the bivariate quadrature lean on that. The
//! quantile takes `statrs`'s inverse as a starting guess and polishes it
//! with two Newton steps against the high-precision `cdf`, which brings it
//! to full double accuracy.

use statrs::distribution::{ContinuousCDF, Normal};

const INV_SQRT_2PI: f64 = 0.3989422804014326779399460599343818684;
const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal density φ(x).
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * INV_SQRT_2)
}

/// Upper-tail probability 1 − Φ(x), accurate far into the tail where the
/// naive `1 - cdf(x)` would cancel.
pub fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * INV_SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    let guess = Normal::new(0.0, 1.0)
        .expect("standard normal parameters are valid")
        .inverse_cdf(p);
    let mut x = guess;
    for _ in 0..2 {
        let density = pdf(x);
        if density <= 0.0 {
            break;
        }
        // Work in whichever tail keeps the residual away from cancellation.
        let step = if p <= 0.5 {
            (cdf(x) - p) / density
        } else {
            ((1.0 - p) - upper_tail(x)) / density
        };
        x -= step;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_matches_reference_points() {
        assert_abs_diff_eq!(cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(1.959963984540054), 0.975, epsilon = 1e-14);
        assert_abs_diff_eq!(cdf(-1.2815515655446004), 0.10, epsilon = 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.95, 0.999999] {
            let x = quantile(p);
            let back = if p <= 0.5 { cdf(x) } else { 1.0 - upper_tail(x) };
            assert_abs_diff_eq!(back, p, epsilon = 1e-13 * p.max(1.0 - p).max(1e-3));
        }
        assert_abs_diff_eq!(quantile(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile(0.95), 1.6448536269514722, epsilon = 1e-12);
    }

    #[test]
    fn upper_tail_is_precise_far_out() {
        // 1 - cdf(8) underflows to ~0 in naive evaluation order; the
        // complementary form keeps ~15 digits.
        let p = upper_tail(8.0);
        assert!(p > 6.2e-16 && p < 6.3e-16, "got {p}");
    }

    #[test]
    fn pdf_is_symmetric() {
        assert_abs_diff_eq!(pdf(1.3), pdf(-1.3), epsilon = 1e-16);
        assert_abs_diff_eq!(pdf(0.0), 0.3989422804014327, epsilon = 1e-15);
    }
}
