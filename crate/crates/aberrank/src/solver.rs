//! Box-constrained quasi-Newton minimization and smooth-max helpers.
//!
//! The adaptive-test programs all reduce to minimizing a smooth function of
//! per-unit weights over a box `[lo, hi]^n` (the sensitivity model's
//! feasible odds region). This module provides a projected L-BFGS: the
//! two-loop recursion proposes a direction, steps are projected back onto
//! the box, and an Armijo backtracking line search on the projected path
//! guarantees decrease. The convergence measure is the projected-gradient
//! residual `|| P(x - grad) - x ||_inf`, which is zero exactly at a KKT
//! point of the box problem.
//!
//! Pointwise maxima (the two-statistic objectives) are smoothed with a
//! log-sum-exp of temperature tau, which overestimates the true maximum by
//! at most `tau * ln 2`; callers anneal tau downward and evaluate the true
//! piecewise objective at the final iterate, so smoothing never biases a
//! reported value, only the search path.

pub(crate) struct SolveOptions {
    pub max_iter: usize,
    /// Convergence threshold on the projected-gradient sup-norm.
    pub kkt_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 10_000,
            kkt_tol: 1e-6,
        }
    }
}

pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for j in 0..x.len() {
        x[j] = x[j].clamp(lo[j], hi[j]);
    }
}

fn projected_gradient_residual(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for j in 0..x.len() {
        let step = (x[j] - g[j]).clamp(lo[j], hi[j]) - x[j];
        r = r.max(step.abs());
    }
    r
}

const HISTORY: usize = 8;

/// Minimizes `f` over the box `[lo, hi]`, starting from `x0` (projected in
/// if needed). `f` writes the gradient into its second argument and returns
/// the value. Non-convergence is reported, not an error: the best iterate
/// found is always returned.
pub(crate) fn minimize_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &SolveOptions,
) -> Solution
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);

    // L-BFGS memory: displacement/gradient-change pairs and 1/(s'y).
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut kkt = projected_gradient_residual(&x, &g, lo, hi);
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];

    for iter in 0..opts.max_iter {
        if kkt <= opts.kkt_tol {
            return Solution {
                x,
                kkt_residual: kkt,
                converged: true,
                iterations: iter,
            };
        }

        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha_c = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alpha_c[i] = a;
            axpy(-a, &y_hist[i], &mut d);
        }
        if k > 0 {
            let sy = 1.0 / rho_hist[k - 1];
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 {
                let scale = sy / yy;
                d.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for i in 0..k {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            axpy(alpha_c[i] - b, &s_hist[i], &mut d);
        }
        // Zero every component that pushes against a bound the iterate
        // already sits on. Projection would clamp those moves away anyway,
        // and leaving them in can make the projected step non-descending
        // even though the raw direction is downhill.
        clip_outward(&mut d, &x, lo, hi);
        // Fall back to projected steepest descent when the model direction
        // fails to point downhill (stale memory, or the clipping above
        // removed the useful part).
        let mut dg = dot(&d, &g);
        if !dg.is_finite() || dg >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            clip_outward(&mut d, &x, lo, hi);
            dg = dot(&d, &g);
            if !dg.is_finite() || dg >= 0.0 {
                // No feasible descent direction left.
                return Solution {
                    x,
                    kkt_residual: kkt,
                    converged: kkt <= opts.kkt_tol,
                    iterations: iter,
                };
            }
        }

        // Backtracking Armijo on the projected path.
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut ft = fx;
        for _ls in 0..60 {
            for j in 0..n {
                xt[j] = (x[j] + alpha * d[j]).clamp(lo[j], hi[j]);
            }
            let pred: f64 = (0..n).map(|j| g[j] * (xt[j] - x[j])).sum();
            if pred >= 0.0 {
                // The projected step is not a descent direction at this
                // scale; shrink and retry (near-bound curvature effects).
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break;
                }
                continue;
            }
            ft = f(&xt, &mut gt);
            if ft <= fx + 1e-4 * pred {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No progress possible along this direction; report where we are.
            return Solution {
                x,
                kkt_residual: kkt,
                converged: kkt <= opts.kkt_tol,
                iterations: iter,
            };
        }

        let s: Vec<f64> = (0..n).map(|j| xt[j] - x[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| gt[j] - g[j]).collect();
        let sy = dot(&s, &y);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm && sy > 0.0 {
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }

        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        kkt = projected_gradient_residual(&x, &g, lo, hi);
    }

    Solution {
        x,
        kkt_residual: kkt,
        converged: kkt <= opts.kkt_tol,
        iterations: opts.max_iter,
    }
}

fn clip_outward(d: &mut [f64], x: &[f64], lo: &[f64], hi: &[f64]) {
    for j in 0..d.len() {
        if (x[j] <= lo[j] && d[j] < 0.0) || (x[j] >= hi[j] && d[j] > 0.0) {
            d[j] = 0.0;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for j in 0..y.len() {
        y[j] += a * x[j];
    }
}

/// Stable `tau * ln(sum exp(v/tau))` with the softmax weights; approaches
/// `max(values)` from above as tau -> 0.
pub(crate) fn smooth_max(values: &[f64], tau: f64, weights: &mut [f64]) -> f64 {
    debug_assert!(tau > 0.0 && values.len() == weights.len());
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (w, &v) in weights.iter_mut().zip(values) {
        *w = ((v - m) / tau).exp();
        sum += *w;
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    m + tau * sum.ln()
}
