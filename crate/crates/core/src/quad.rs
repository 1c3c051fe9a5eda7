//! Tensorized Gauss–Legendre quadrature over axis-aligned boxes.
//!
//! Used for masses and moments of truncated Gaussians whose covariance is not
//! diagonal. Node counts double adaptively until the integral stabilizes to a
//! relative tolerance, capped at 2^14 nodes per axis.

use crate::error::{FactorError, Result};

/// Relative tolerance at which adaptive refinement stops.
pub const QUAD_REL_TOL: f64 = 1e-8;
/// Maximum nodes per axis for adaptive refinement.
pub const QUAD_MAX_NODES: usize = 1 << 14;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre recurrence; accurate to
/// machine precision for the node counts used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            dp = (n as f64) * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integrates `m` simultaneous components of `f` over a finite box with a
/// fixed `n`-per-axis tensor rule. `f(x, out)` writes the integrand values
/// into `out`.
fn tensor_integral<F>(f: &F, bounds: &[(f64, f64)], n: usize, m: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = bounds.len();
    let (nodes, weights) = gauss_legendre(n);
    // Per-axis affine maps from [-1,1] to [lo,hi].
    let mid: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let half: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();
    let jac: f64 = half.iter().product();

    let mut acc = vec![0.0; m];
    let mut x = vec![0.0; d];
    let mut vals = vec![0.0; m];
    let mut idx = vec![0usize; d];
    loop {
        let mut w = jac;
        for k in 0..d {
            x[k] = mid[k] + half[k] * nodes[idx[k]];
            w *= weights[idx[k]];
        }
        f(&x, &mut vals);
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += w * v;
        }
        // Odometer over the d axes.
        let mut k = 0;
        loop {
            if k == d {
                return acc;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Adaptively integrates `m` components of `f` over a finite box.
///
/// Node counts double from 16 per axis until every component changes by at
/// most `QUAD_REL_TOL` relative to its magnitude (with an absolute floor tied
/// to the first component, which callers use for the mass).
pub fn adaptive_box_integral<F>(f: F, bounds: &[(f64, f64)], m: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(FactorError::QuadratureNonConvergence(
                "box must be clipped to finite bounds before quadrature".into(),
            ));
        }
        if lo >= hi {
            return Ok(vec![0.0; m]);
        }
    }
    let mut n = 16usize;
    let mut prev = tensor_integral(&f, bounds, n, m);
    while n < QUAD_MAX_NODES {
        n *= 2;
        let cur = tensor_integral(&f, bounds, n, m);
        let scale = cur[0].abs().max(1e-300);
        let converged = cur
            .iter()
            .zip(&prev)
            .all(|(c, p)| (c - p).abs() <= QUAD_REL_TOL * c.abs().max(scale));
        prev = cur;
        if converged {
            return Ok(prev);
        }
    }
    Err(FactorError::QuadratureNonConvergence(format!(
        "no convergence with {QUAD_MAX_NODES} nodes per axis"
    )))
}
