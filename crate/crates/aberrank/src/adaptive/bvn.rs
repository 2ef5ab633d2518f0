//! Bivariate normal orthant probability and the equicoordinate quantile.
//!
//! For standard bivariate normal `(X1, X2)` with correlation rho, the
//! orthant probability is reduced to one dimension by conditioning:
//!
//! ```text
//! P(X1 <= q, X2 <= q) = integral phi(x) * Phi((q - rho x)/sqrt(1-rho^2)) dx
//!                       over x in (-inf, q]
//! ```
//!
//! evaluated by adaptive Simpson quadrature to 1e-10 absolute. The inner
//! distribution function turns into a steep sigmoid centered at `x = q/rho`
//! as |rho| -> 1, so the integration range is split there before the
//! adaptive pass.
//!
//! The quantile `Q(rho, alpha)` solves `P(X1 <= Q, X2 <= Q) = 1 - alpha`.
//! It is found by safeguarded Newton iteration inside the bracket
//! `[Phi^-1(1-alpha), Phi^-1(1-alpha/2)]` (the perfectly-correlated and
//! Bonferroni endpoints), using the closed-form derivative
//! `d/dq P = 2 phi(q) Phi(q sqrt((1-rho)/(1+rho)))`.

use crate::normal;

/// Correlations within this distance of +-1 are treated as the degenerate
/// boundary cases, where the orthant probability has a closed form.
const RHO_CLAMP: f64 = 1e-9;

const QUAD_TOL: f64 = 1e-10;

fn integrand(x: f64, q: f64, rho: f64, inv_s: f64) -> f64 {
    normal::pdf(x) * normal::cdf((q - rho * x) * inv_s)
}

/// Recursive adaptive Simpson with error control tuned for smooth tails.
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `P(X1 <= q, X2 <= q)` for standard bivariate normal with correlation rho.
///
/// Correlations within 1e-9 of +-1 take the exact degenerate limits
/// (`Phi(q)` and `max(0, 2Phi(q)-1)`); the general quadrature would be off
/// by O(sqrt(1-rho^2)) there.
pub fn orthant_probability(q: f64, rho: f64) -> f64 {
    if rho >= 1.0 - RHO_CLAMP {
        return normal::cdf(q);
    }
    if rho <= -(1.0 - RHO_CLAMP) {
        return (2.0 * normal::cdf(q) - 1.0).max(0.0);
    }
    let s = (1.0 - rho * rho).sqrt();
    let inv_s = 1.0 / s;
    // Below -9 the outer density contributes < 1e-18 to the integral.
    let lo = -9.0f64;
    if q <= lo {
        return 0.0;
    }
    let f = |x: f64| integrand(x, q, rho, inv_s);
    // Split where the inner sigmoid lives: (q - rho x)/s sweeps through 0
    // at x = q/rho, over an x-width of order s/|rho|.
    let mut cuts = vec![lo, q];
    if rho.abs() > 1e-12 {
        let center = q / rho;
        let width = 10.0 * s / rho.abs();
        for t in [center - width, center, center + width] {
            if t > lo && t < q {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += integrate(f, w[0], w[1], QUAD_TOL / 4.0);
    }
    total.clamp(0.0, 1.0)
}

/// Equicoordinate quantile: the Q with `P(X1 <= Q, X2 <= Q) = 1 - alpha`,
/// to absolute accuracy 1e-8. Requires `alpha` in (0, 0.5); `rho` outside
/// [-1, 1] is clamped in.
pub fn joint_quantile(rho: f64, alpha: f64) -> f64 {
    assert!(
        alpha > 0.0 && alpha < 0.5,
        "joint_quantile needs alpha in (0, 0.5), got {alpha}"
    );
    let rho = rho.clamp(-1.0 + RHO_CLAMP, 1.0 - RHO_CLAMP);
    let target = 1.0 - alpha;
    // Monotonicity of the orthant probability in rho pins Q between the
    // perfectly-correlated case (Q = z_{1-alpha}) and the Bonferroni bound.
    let mut lo = normal::quantile(1.0 - alpha) - 1e-7;
    let mut hi = normal::quantile(1.0 - alpha / 2.0) + 1e-7;
    let slope_scale = (0.5 * (1.0 - rho) / (1.0 + rho)).max(0.0).sqrt() * std::f64::consts::SQRT_2;
    let mut q = 0.5 * (lo + hi);
    for _ in 0..80 {
        let p = orthant_probability(q, rho);
        if p > target {
            hi = q;
        } else {
            lo = q;
        }
        if hi - lo <= 1e-10 {
            break;
        }
        // Newton step off the closed-form derivative, safeguarded by the
        // shrinking bracket.
        let dp = 2.0 * normal::pdf(q) * normal::cdf(q * slope_scale);
        let newton = if dp > 1e-300 { q - (p - target) / dp } else { f64::NAN };
        q = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use approx::assert_abs_diff_eq;

    #[test]
    fn orthant_closed_forms() {
        // Independence: product of marginals.
        for q in [-0.5, 0.0, 1.3, 2.4] {
            assert_abs_diff_eq!(
                orthant_probability(q, 0.0),
                normal::cdf(q).powi(2),
                epsilon = 1e-10
            );
        }
        // Perfect correlation: min of the marginals.
        for q in [0.0, 1.6449, 2.0] {
            assert_abs_diff_eq!(orthant_probability(q, 1.0), normal::cdf(q), epsilon = 1e-8);
        }
        // Perfect anticorrelation: max(0, 2 Phi(q) - 1).
        for q in [0.5, 1.96, 3.0] {
            assert_abs_diff_eq!(
                orthant_probability(q, -1.0),
                (2.0 * normal::cdf(q) - 1.0).max(0.0),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn orthant_is_monotone_in_rho() {
        let q = 1.7;
        let mut prev = 0.0;
        for k in 0..=20 {
            let rho = -1.0 + 2.0 * k as f64 / 20.0;
            let p = orthant_probability(q, rho);
            assert!(p >= prev - 1e-12, "rho={rho}: {p} < {prev}");
            prev = p;
        }
    }

    #[test]
    fn quantile_closed_forms() {
        // rho = 1: the single-test critical value.
        assert_abs_diff_eq!(
            joint_quantile(1.0, 0.05),
            normal::quantile(0.95),
            epsilon = 1e-7
        );
        assert!((joint_quantile(1.0, 0.05) - 1.6449).abs() < 1e-3);
        // rho = 0: Phi(Q)^2 = 0.95.
        assert_abs_diff_eq!(
            joint_quantile(0.0, 0.05),
            normal::quantile(0.95f64.sqrt()),
            epsilon = 1e-7
        );
        assert!((joint_quantile(0.0, 0.05) - 1.9545).abs() < 1e-3);
        // rho = -1: the Bonferroni endpoint.
        assert_abs_diff_eq!(
            joint_quantile(-1.0, 0.05),
            normal::quantile(0.975),
            epsilon = 1e-7
        );
    }

    #[test]
    fn quantile_satisfies_the_orthant_equation() {
        for &alpha in &[0.01, 0.05, 0.2, 0.4] {
            for &rho in &[-0.999, -0.7, -0.2, 0.0, 0.3, 0.9, 0.999] {
                let q = joint_quantile(rho, alpha);
                let p = orthant_probability(q, rho);
                assert_abs_diff_eq!(p, 1.0 - alpha, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn quantile_sits_between_the_slepian_bounds_and_decreases_in_rho() {
        let alpha = 0.05;
        let z1 = normal::quantile(1.0 - alpha);
        let z2 = normal::quantile(1.0 - alpha / 2.0);
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let rho = -1.0 + 2.0 * k as f64 / 10.0;
            let q = joint_quantile(rho, alpha);
            assert!(q >= z1 - 1e-9 && q <= z2 + 1e-9);
            assert!(q <= prev + 1e-9, "quantile must decrease in rho");
            prev = q;
        }
    }
}
