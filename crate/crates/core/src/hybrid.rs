//! Hybrid discrete/continuous factors: indicators, truncations and
//! conditional tables of continuous factors.
//!
//! An [`IndicatorFactor`] is 1 on an axis-aligned half-open box `[lo, hi)`
//! and 0 elsewhere, optionally selected per discrete assignment. Multiplying
//! a Gaussian by a box yields a [`TruncatedGaussian`], which stays exact
//! under further multiplication and under marginalization of untruncated
//! axes; its moments come from closed-form normal-tail expressions when the
//! covariance is diagonal and from adaptive Gauss-Legendre quadrature for
//! correlated 2-D bases. A [`ConditionalFactor`] maps every assignment of a
//! discrete scope to a continuous factor and is the working representation
//! for switching state-space models.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{FactorError, Result};
use crate::factor::Factor;
use crate::gaussian::CanonicalGaussian;
use crate::gaussian::MomentGaussian;
use crate::table::TableFactor;
use crate::variable::{index_tuples, Assignment, Scope, Value};
use crate::quad::adaptive_box_integral;

/// Half-open interval per axis, aligned to a continuous scope's canonical
/// order. `(-inf, inf)` marks an unconstrained axis.
pub type BoxBounds = Vec<(f64, f64)>;

/// Standardized depth at which a one-sided slab switches from the closed
/// moment identities to shifted quadrature. Beyond this the identities
/// cancel to fewer digits than the slab's mass deserves; the quadrature has
/// no cancellation at any depth.
const TAIL_SWITCH: f64 = 12.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

pub(crate) fn normal_cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln(1 - e^d)` for `d <= 0`, stable at both ends.
fn log1mexp(d: f64) -> f64 {
    if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

/// Log of the standard normal upper tail `ln(1 - Phi(x))`, relatively
/// accurate over the whole line; survives depths where `erfc` underflows.
pub(crate) fn normal_log_sf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 36.0 {
        return (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    // Tail series: Phi_bar(x) = phi(x)/x * (1 - x^-2 + 3x^-4 - 15x^-6 + 105x^-8 ...);
    // the truncation error at x = 36 is below 1e-10 relative.
    let inv2 = (x * x).recip();
    let series = inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)));
    -0.5 * x * x - x.ln() - LN_SQRT_2PI + series.ln_1p()
}

fn check_bounds(bounds: &BoxBounds, dim: usize) -> Result<()> {
    if bounds.len() != dim {
        return Err(FactorError::ConfigInvalid(format!(
            "box has {} axes but the scope has {dim}",
            bounds.len()
        )));
    }
    for &(lo, hi) in bounds {
        if lo.is_nan() || hi.is_nan() {
            return Err(FactorError::ConfigInvalid("box bounds must not be NaN".into()));
        }
    }
    Ok(())
}

fn box_is_empty(bounds: &BoxBounds) -> bool {
    bounds.iter().any(|&(lo, hi)| lo >= hi)
}

fn box_is_everything(bounds: &BoxBounds) -> bool {
    bounds
        .iter()
        .all(|&(lo, hi)| lo == f64::NEG_INFINITY && hi == f64::INFINITY)
}

pub(crate) fn point_in_box(x: &[f64], bounds: &BoxBounds) -> bool {
    x.iter()
        .zip(bounds)
        .all(|(&v, &(lo, hi))| v >= lo && v < hi)
}

/// Pads bounds from `from` onto the superscope `sup`, new axes unconstrained.
pub(crate) fn pad_bounds(from: &Scope, bounds: &BoxBounds, sup: &Scope) -> BoxBounds {
    sup.iter()
        .map(|v| match from.index_of(v.name()) {
            Some(i) => bounds[i],
            None => (f64::NEG_INFINITY, f64::INFINITY),
        })
        .collect()
}

pub(crate) fn intersect_bounds(a: &BoxBounds, b: &BoxBounds) -> BoxBounds {
    a.iter()
        .zip(b)
        .map(|(&(alo, ahi), &(blo, bhi))| (alo.max(blo), ahi.min(bhi)))
        .collect()
}

/// 1-D truncated-normal summary `(log_prob, mean, var)` for `N(mu, sigma^2)`
/// restricted to `[lo, hi)`.
///
/// The mass is returned in log scale so slabs arbitrarily deep in a tail
/// keep their (tiny but meaningful) probability; the mean and variance come
/// from the closed identities up to [`TAIL_SWITCH`] standard deviations and
/// from a shifted 1-D quadrature beyond, where the identities cancel.
fn trunc_normal_1d(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    let a = if lo == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        (lo - mu) / sigma
    };
    let b = if hi == f64::INFINITY {
        f64::INFINITY
    } else {
        (hi - mu) / sigma
    };
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Ok((0.0, mu, sigma * sigma));
    }

    if b <= -TAIL_SWITCH || a >= TAIL_SWITCH {
        // Whole slab deep in one tail: mirror into the upper tail and
        // integrate against the density shifted by its in-slab peak.
        let flip = b <= -TAIL_SWITCH;
        let (alpha, beta) = if flip { (-b, -a) } else { (a, b) };
        let (log_z, m_std, var_std) = far_slab_1d(alpha, beta);
        if log_z == f64::NEG_INFINITY {
            return Err(FactorError::ZeroMass(format!(
                "truncation [{lo}, {hi}) of N({mu}, {}) has vanishing mass",
                sigma * sigma
            )));
        }
        let mean = if flip {
            mu - sigma * m_std
        } else {
            mu + sigma * m_std
        };
        return Ok((log_z, mean, sigma * sigma * var_std));
    }

    // log z = ln(Phi(b) - Phi(a)), differenced on whichever side keeps the
    // operands small.
    let log_z = if a == f64::NEG_INFINITY || (b != f64::INFINITY && a + b <= 0.0) {
        let lfb = normal_log_sf(-b);
        let lfa = normal_log_sf(-a);
        lfb + log1mexp(lfa - lfb)
    } else {
        let lsa = normal_log_sf(a);
        let lsb = normal_log_sf(b);
        lsa + log1mexp(lsb - lsa)
    };
    if log_z == f64::NEG_INFINITY || log_z.is_nan() {
        return Err(FactorError::ZeroMass(format!(
            "truncation [{lo}, {hi}) of N({mu}, {}) has vanishing mass",
            sigma * sigma
        )));
    }

    // Density-over-mass ratios through the log scale stay accurate however
    // small the slab mass is.
    let ra = if a.is_infinite() {
        0.0
    } else {
        (-0.5 * a * a - LN_SQRT_2PI - log_z).exp()
    };
    let rb = if b.is_infinite() {
        0.0
    } else {
        (-0.5 * b * b - LN_SQRT_2PI - log_z).exp()
    };
    let r1 = ra - rb;
    let apa = if a.is_infinite() { 0.0 } else { a * ra };
    let bpb = if b.is_infinite() { 0.0 } else { b * rb };
    let r2 = apa - bpb;
    let mean = mu + sigma * r1;
    let var = sigma * sigma * (1.0 + r2 - r1 * r1);
    if !(var > 0.0) {
        return Err(FactorError::Degenerate(format!(
            "truncated variance collapsed numerically on [{lo}, {hi})"
        )));
    }
    Ok((log_z, mean, var))
}

/// Standardized moments of `N(0,1)` restricted to `[alpha, beta]` with
/// `alpha >= TAIL_SWITCH`: `(log_mass, mean, var)`.
///
/// Substituting `u = x - alpha` gives integrals of `u^k exp(-alpha u - u^2/2)`
/// whose integrand is O(1), so composite Simpson needs no tail arithmetic;
/// everything beyond 45 decay lengths is below 1e-19 relative.
fn far_slab_1d(alpha: f64, beta: f64) -> (f64, f64, f64) {
    let len = (beta - alpha).min(45.0 / alpha);
    const STEPS: usize = 2000;
    let h = len / STEPS as f64;
    let mut s = [0.0f64; 3];
    for i in 0..=STEPS {
        let u = i as f64 * h;
        let w = if i == 0 || i == STEPS {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = (-u * (alpha + 0.5 * u)).exp();
        s[0] += w * g;
        s[1] += w * u * g;
        s[2] += w * u * u * g;
    }
    let i0 = s[0] * h / 3.0;
    let i1 = s[1] * h / 3.0;
    let i2 = s[2] * h / 3.0;
    if !(i0 > 0.0) {
        return (f64::NEG_INFINITY, alpha, 0.0);
    }
    let m1 = i1 / i0;
    let log_z = -0.5 * alpha * alpha - LN_SQRT_2PI + i0.ln();
    (log_z, alpha + m1, (i2 / i0 - m1 * m1).max(0.0))
}

/// Log-mass and (optionally) mean/covariance of `base` restricted to
/// `bounds`. The mass stays in log scale end to end: a box holding `e^-900`
/// of a unit-weight base reports -900, not an underflowed zero.
fn box_moments(
    base: &CanonicalGaussian,
    bounds: &BoxBounds,
    want_moments: bool,
) -> Result<(f64, Option<(DVector<f64>, DMatrix<f64>)>)> {
    let m = base.to_moment().map_err(|_| {
        FactorError::NotIntegrable("truncated base is not positive definite".into())
    })?;
    let n = base.dim();
    if box_is_everything(bounds) {
        let mean_cov = want_moments.then(|| (m.mean().clone(), m.cov().clone()));
        return Ok((m.log_weight(), mean_cov));
    }

    // Axes with no finite bound marginalize out exactly; the box problem
    // then lives on the constrained axes alone, and the full moments come
    // back through the conditional linear map. Without this split a mostly
    // unconstrained factor would trip the correlated-dimension limit below.
    let cons: Vec<usize> = (0..n)
        .filter(|&i| bounds[i].0.is_finite() || bounds[i].1.is_finite())
        .collect();
    if cons.len() < n {
        let free: Vec<usize> = (0..n).filter(|i| !cons.contains(i)).collect();
        let mean_c = m.mean().select_rows(&cons);
        let cov_cc = m.cov().select_rows(&cons).select_columns(&cons);
        let bounds_c: BoxBounds = cons.iter().map(|&i| bounds[i]).collect();
        let scope_c = Scope::new(cons.iter().map(|&i| base.scope().vars()[i].clone()))?;
        let marginal = MomentGaussian::new(scope_c, mean_c.clone(), cov_cc.clone(), m.log_weight())?
            .to_canonical()?;
        let (log_mass, sub) = box_moments(&marginal, &bounds_c, want_moments)?;
        if !want_moments {
            return Ok((log_mass, None));
        }
        let (mean_c_t, cov_cc_t) = sub.expect("moments were requested");
        let chol = cov_cc.clone().cholesky().ok_or_else(|| {
            FactorError::NotIntegrable("constrained marginal is not positive definite".into())
        })?;
        let cov_fc = m.cov().select_rows(&free).select_columns(&cons);
        let b_mat = chol.solve(&cov_fc.transpose()).transpose();
        let mean_f_t = m.mean().select_rows(&free) + &b_mat * (&mean_c_t - &mean_c);
        let cond_cov =
            m.cov().select_rows(&free).select_columns(&free) - &b_mat * cov_fc.transpose();
        let cov_ff_t = cond_cov + &b_mat * &cov_cc_t * b_mat.transpose();
        let cov_fc_t = &b_mat * &cov_cc_t;
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for (a, &i) in cons.iter().enumerate() {
            mean[i] = mean_c_t[a];
            for (b, &j) in cons.iter().enumerate() {
                cov[(i, j)] = cov_cc_t[(a, b)];
            }
        }
        for (a, &i) in free.iter().enumerate() {
            mean[i] = mean_f_t[a];
            for (b, &j) in free.iter().enumerate() {
                cov[(i, j)] = cov_ff_t[(a, b)];
            }
            for (b, &j) in cons.iter().enumerate() {
                cov[(i, j)] = cov_fc_t[(a, b)];
                cov[(j, i)] = cov_fc_t[(a, b)];
            }
        }
        return Ok((log_mass, Some((mean, cov))));
    }

    let diag = {
        let scale = m.cov().amax().max(1e-300);
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                off = off.max(m.cov()[(i, j)].abs());
            }
        }
        off <= 1e-12 * scale
    };

    if diag {
        let mut log_mass = m.log_weight();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            let sigma = m.cov()[(i, i)].sqrt();
            let (lz, mu_t, var_t) =
                trunc_normal_1d(m.mean()[i], sigma, bounds[i].0, bounds[i].1)?;
            log_mass += lz;
            mean[i] = mu_t;
            cov[(i, i)] = var_t;
        }
        return Ok((log_mass, want_moments.then_some((mean, cov))));
    }

    if n > 2 {
        return Err(FactorError::Unsupported(
            "correlated truncated Gaussians beyond 2 dimensions".into(),
        ));
    }

    // Correlated 2-D: adaptive tensor quadrature of the density shifted by
    // its in-box peak, so the integrand is O(1) no matter how little of the
    // Gaussian the box captures.
    let det = m.cov()[(0, 0)] * m.cov()[(1, 1)] - m.cov()[(0, 1)] * m.cov()[(1, 0)];
    if !(det > 0.0) {
        return Err(FactorError::NotIntegrable(
            "truncated base is not positive definite".into(),
        ));
    }
    let k = [
        [m.cov()[(1, 1)] / det, -m.cov()[(0, 1)] / det],
        [-m.cov()[(1, 0)] / det, m.cov()[(0, 0)] / det],
    ];
    // Coordinate ascent on the log-density over the box; converges to the
    // constrained maximizer for a concave quadratic.
    let mut peak = [
        m.mean()[0].clamp(bounds[0].0, bounds[0].1),
        m.mean()[1].clamp(bounds[1].0, bounds[1].1),
    ];
    for _ in 0..200 {
        let p0 = m.mean()[0] - k[0][1] * (peak[1] - m.mean()[1]) / k[0][0];
        peak[0] = p0.clamp(bounds[0].0, bounds[0].1);
        let p1 = m.mean()[1] - k[1][0] * (peak[0] - m.mean()[0]) / k[1][1];
        peak[1] = p1.clamp(bounds[1].0, bounds[1].1);
    }
    let shift = base.log_density(&peak);
    if !shift.is_finite() {
        return Err(FactorError::ZeroMass("box mass underflowed".into()));
    }
    // Quadrature window: from the peak, keep ~50 decay lengths per axis
    // (capped at 9 marginal deviations for boxes through the bulk).
    let mut window = Vec::with_capacity(n);
    for i in 0..n {
        let sigma = m.cov()[(i, i)].sqrt();
        let depth = (peak[i] - m.mean()[i]).abs() / sigma;
        let extent = sigma * (50.0 / depth.max(50.0 / 9.0));
        window.push((
            bounds[i].0.max(peak[i] - extent),
            bounds[i].1.min(peak[i] + extent),
        ));
    }
    let n_out = if want_moments { 6 } else { 1 };
    let vals = adaptive_box_integral(
        |x, out| {
            let f = (base.log_density(x) - shift).exp();
            out[0] = f;
            if out.len() > 1 {
                out[1] = x[0] * f;
                out[2] = x[1] * f;
                out[3] = x[0] * x[0] * f;
                out[4] = x[0] * x[1] * f;
                out[5] = x[1] * x[1] * f;
            }
        },
        &window,
        n_out,
    )?;
    let scaled = vals[0];
    if !(scaled > 0.0) {
        return Err(FactorError::ZeroMass("box mass underflowed".into()));
    }
    let log_mass = shift + scaled.ln();
    if !want_moments {
        return Ok((log_mass, None));
    }
    let mean = DVector::from_vec(vec![vals[1] / scaled, vals[2] / scaled]);
    let cov = DMatrix::from_row_slice(
        2,
        2,
        &[
            vals[3] / scaled - mean[0] * mean[0],
            vals[4] / scaled - mean[0] * mean[1],
            vals[4] / scaled - mean[0] * mean[1],
            vals[5] / scaled - mean[1] * mean[1],
        ],
    );
    Ok((log_mass, Some((mean, cov))))
}

/// A Gaussian restricted to an axis-aligned half-open box.
///
/// The factor value is `base(x)` inside the box and 0 outside. The base may
/// be improper (indefinite `K`) while the factor only multiplies and
/// conditions; any mass or moment query requires a positive-definite base.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    base: CanonicalGaussian,
    bounds: BoxBounds,
    log_mass: Option<f64>,
}

impl TruncatedGaussian {
    /// Restricts a normalizable Gaussian to a box. The box must have
    /// positive volume and retain positive mass.
    pub fn truncate(base: &CanonicalGaussian, bounds: BoxBounds) -> Result<Self> {
        check_bounds(&bounds, base.dim())?;
        if base.dim() == 0 {
            return Err(FactorError::Unsupported(
                "cannot truncate an empty-scope factor".into(),
            ));
        }
        if box_is_empty(&bounds) {
            return Err(FactorError::ZeroMass("box is empty".into()));
        }
        let (log_mass, _) = box_moments(base, &bounds, false)?;
        Ok(TruncatedGaussian {
            base: base.clone(),
            bounds,
            log_mass: Some(log_mass),
        })
    }

    /// Internal constructor that tolerates improper bases (mass left
    /// unknown). The box must still be nonempty.
    pub(crate) fn new_lazy(base: CanonicalGaussian, bounds: BoxBounds) -> Result<Self> {
        check_bounds(&bounds, base.dim())?;
        if box_is_empty(&bounds) {
            return Err(FactorError::ZeroMass("box is empty".into()));
        }
        let log_mass = match box_moments(&base, &bounds, false) {
            Ok((lm, _)) => Some(lm),
            Err(FactorError::NotIntegrable(_)) => None,
            Err(FactorError::ZeroMass(m)) => return Err(FactorError::ZeroMass(m)),
            Err(e) => return Err(e),
        };
        Ok(TruncatedGaussian {
            base,
            bounds,
            log_mass,
        })
    }

    pub fn scope(&self) -> &Scope {
        self.base.scope()
    }

    pub fn base(&self) -> &CanonicalGaussian {
        &self.base
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    /// True when every axis is unconstrained.
    pub fn is_unbounded(&self) -> bool {
        box_is_everything(&self.bounds)
    }

    /// Natural log of the total mass; requires a positive-definite base.
    pub fn log_mass(&self) -> Result<f64> {
        self.log_mass.ok_or_else(|| {
            FactorError::NotIntegrable("truncated base is not positive definite".into())
        })
    }

    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let x = self.base.point_from(at)?;
        if point_in_box(&x, &self.bounds) {
            Ok(self.base.log_density(&x).exp())
        } else {
            Ok(0.0)
        }
    }

    /// Product with a Gaussian: the base multiplies, the box is padded to the
    /// union scope.
    pub fn multiply_canonical(&self, other: &CanonicalGaussian) -> Result<TruncatedGaussian> {
        let base = self.base.multiply(other)?;
        let bounds = pad_bounds(self.scope(), &self.bounds, base.scope());
        TruncatedGaussian::new_lazy(base, bounds)
    }

    /// Product with another truncated Gaussian: bases multiply, boxes
    /// intersect on the union scope.
    pub fn multiply_truncated(&self, other: &TruncatedGaussian) -> Result<TruncatedGaussian> {
        let base = self.base.multiply(&other.base)?;
        let a = pad_bounds(self.scope(), &self.bounds, base.scope());
        let b = pad_bounds(other.scope(), &other.bounds, base.scope());
        TruncatedGaussian::new_lazy(base, intersect_bounds(&a, &b))
    }

    /// Restricts to an additional box over a subset of the scope.
    pub fn multiply_box(&self, box_scope: &Scope, bounds: &BoxBounds) -> Result<TruncatedGaussian> {
        if !box_scope.is_subset_of(self.scope()) {
            return Err(FactorError::ScopeMismatch(format!(
                "box scope {} is not a subset of {}",
                box_scope,
                self.scope()
            )));
        }
        let padded = pad_bounds(box_scope, bounds, self.scope());
        TruncatedGaussian::new_lazy(self.base.clone(), intersect_bounds(&self.bounds, &padded))
    }

    /// Integrates out the named variables.
    ///
    /// Closed under marginalization only for unconstrained axes; integrating
    /// all variables yields the scalar mass. Anything else is unsupported.
    pub fn sum_out(&self, names: &[&str]) -> Result<Factor> {
        for n in names {
            if !self.scope().contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }
        if names.len() == self.scope().len() {
            let mass = self.log_mass()?.exp();
            return Ok(Factor::Table(TableFactor::scalar(mass)?));
        }
        let constrained: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| {
                let i = self.scope().index_of(n).unwrap();
                !(self.bounds[i].0 == f64::NEG_INFINITY && self.bounds[i].1 == f64::INFINITY)
            })
            .collect();
        if !constrained.is_empty() {
            return Err(FactorError::Unsupported(format!(
                "cannot marginalize truncated axes {constrained:?} in closed form"
            )));
        }
        let base = self.base.sum_out(names)?;
        let bounds: BoxBounds = self
            .scope()
            .iter()
            .zip(&self.bounds)
            .filter(|(v, _)| !names.contains(&v.name()))
            .map(|(_, &b)| b)
            .collect();
        if box_is_everything(&bounds) {
            return Ok(Factor::Canonical(base));
        }
        Ok(Factor::Truncated(TruncatedGaussian::new_lazy(base, bounds)?))
    }

    /// Conditions on the scope variables present in `evidence`.
    pub fn reduce(&self, evidence: &Assignment) -> Result<Factor> {
        let fixed: Vec<usize> = (0..self.scope().len())
            .filter(|&i| evidence.contains(self.scope().vars()[i].name()))
            .collect();
        if fixed.is_empty() {
            return Ok(Factor::Truncated(self.clone()));
        }
        let mut inside = true;
        for &i in &fixed {
            let v = evidence.real_for(&self.scope().vars()[i])?;
            let (lo, hi) = self.bounds[i];
            if !(v >= lo && v < hi) {
                inside = false;
            }
        }
        let base = self.base.reduce(evidence)?;
        let remaining: Vec<(usize, (f64, f64))> = (0..self.scope().len())
            .filter(|i| !fixed.contains(i))
            .map(|i| (i, self.bounds[i]))
            .collect();
        if !inside {
            if remaining.is_empty() {
                return Ok(Factor::Table(TableFactor::scalar(0.0)?));
            }
            let scope = Scope::new(
                remaining
                    .iter()
                    .map(|&(i, _)| self.scope().vars()[i].clone()),
            )?;
            return Ok(Factor::zero_continuous(&scope));
        }
        if remaining.is_empty() {
            return Ok(Factor::Table(TableFactor::scalar(base.g().exp())?));
        }
        let bounds: BoxBounds = remaining.iter().map(|&(_, b)| b).collect();
        if box_is_everything(&bounds) {
            return Ok(Factor::Canonical(base));
        }
        Ok(Factor::Truncated(TruncatedGaussian::new_lazy(base, bounds)?))
    }

    /// Scales the factor by `exp(log_c)`.
    pub fn scale_log(&self, log_c: f64) -> TruncatedGaussian {
        TruncatedGaussian {
            base: self.base.scale_log(log_c),
            bounds: self.bounds.clone(),
            log_mass: self.log_mass.map(|m| m + log_c),
        }
    }

    /// Moment-form Gaussian with the same mass, mean and covariance.
    pub fn moment_match(&self) -> Result<MomentGaussian> {
        let (log_mass, moments) = box_moments(&self.base, &self.bounds, true)?;
        let (mean, cov) = moments.expect("moments requested");
        MomentGaussian::new(self.scope().clone(), mean, cov, log_mass)
    }

    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<TruncatedGaussian> {
        let base = self.base.rename(mapping)?;
        // Bounds follow their variables into the new canonical order.
        let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); self.bounds.len()];
        for (i, v) in self.scope().iter().enumerate() {
            let new_name = mapping
                .iter()
                .find(|(old, _)| *old == v.name())
                .map_or(v.name(), |(_, new)| *new);
            bounds[base.scope().index_of(new_name).unwrap()] = self.bounds[i];
        }
        Ok(TruncatedGaussian {
            base,
            bounds,
            log_mass: self.log_mass,
        })
    }
}

/// Indicator of axis-aligned boxes, optionally selected by discrete
/// variables.
///
/// With an empty discrete scope this is a single box over the continuous
/// scope. With selectors, each discrete assignment picks its own box (dense
/// table of regions in row-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorFactor {
    discrete_scope: Scope,
    continuous_scope: Scope,
    scope: Scope,
    regions: Vec<BoxBounds>,
}

impl IndicatorFactor {
    /// Indicator with per-assignment regions; `regions` is dense over the
    /// discrete scope in row-major order.
    pub fn new(
        discrete_scope: Scope,
        continuous_scope: Scope,
        regions: Vec<BoxBounds>,
    ) -> Result<Self> {
        if continuous_scope.is_empty() {
            return Err(FactorError::ConfigInvalid(
                "indicator needs at least one continuous variable".into(),
            ));
        }
        if continuous_scope.iter().any(|v| v.is_discrete()) {
            return Err(FactorError::DomainMismatch(
                "indicator continuous scope contains a discrete variable".into(),
            ));
        }
        if discrete_scope.iter().any(|v| v.is_continuous()) {
            return Err(FactorError::DomainMismatch(
                "indicator discrete scope contains a continuous variable".into(),
            ));
        }
        let expect = discrete_scope.table_len()?;
        if regions.len() != expect {
            return Err(FactorError::ConfigInvalid(format!(
                "discrete scope has {expect} assignments but {} regions given",
                regions.len()
            )));
        }
        for r in &regions {
            check_bounds(r, continuous_scope.len())?;
        }
        let scope = discrete_scope.union(&continuous_scope)?;
        Ok(IndicatorFactor {
            discrete_scope,
            continuous_scope,
            scope,
            regions,
        })
    }

    /// Single box without discrete selectors.
    pub fn region(continuous_scope: Scope, bounds: BoxBounds) -> Result<Self> {
        IndicatorFactor::new(Scope::empty(), continuous_scope, vec![bounds])
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn discrete_scope(&self) -> &Scope {
        &self.discrete_scope
    }

    pub fn continuous_scope(&self) -> &Scope {
        &self.continuous_scope
    }

    pub fn regions(&self) -> &[BoxBounds] {
        &self.regions
    }

    pub fn has_selectors(&self) -> bool {
        !self.discrete_scope.is_empty()
    }

    /// The single region of a selector-free indicator.
    pub fn sole_region(&self) -> Result<&BoxBounds> {
        if self.has_selectors() {
            return Err(FactorError::Unsupported(
                "indicator has discrete selectors".into(),
            ));
        }
        Ok(&self.regions[0])
    }

    /// True when the factor is identically zero (its only region is empty).
    pub fn is_zero(&self) -> bool {
        !self.has_selectors() && box_is_empty(&self.regions[0])
    }

    fn discrete_flat(&self, at: &Assignment) -> Result<usize> {
        let strides = self.discrete_scope.strides()?;
        let mut flat = 0;
        for (v, s) in self.discrete_scope.iter().zip(strides) {
            flat += at.index_for(v)? * s;
        }
        Ok(flat)
    }

    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let region = &self.regions[self.discrete_flat(at)?];
        let x: Result<Vec<f64>> = self.continuous_scope.iter().map(|v| at.real_for(v)).collect();
        Ok(if point_in_box(&x?, region) { 1.0 } else { 0.0 })
    }

    /// Conditions on any subset of scope variables present in `evidence`.
    ///
    /// Fixing all discrete selectors leaves a plain box indicator; fixing all
    /// continuous variables leaves a 0/1 table over the remaining selectors.
    pub fn reduce(&self, evidence: &Assignment) -> Result<Factor> {
        let fixed_disc: Vec<&str> = self
            .discrete_scope
            .iter()
            .filter(|v| evidence.contains(v.name()))
            .map(|v| v.name())
            .collect();
        let fixed_cont: Vec<usize> = (0..self.continuous_scope.len())
            .filter(|&i| evidence.contains(self.continuous_scope.vars()[i].name()))
            .collect();

        // Slice the region table along fixed selectors.
        let kept_disc = self.discrete_scope.without(&fixed_disc);
        let mut regions: Vec<BoxBounds> = Vec::new();
        let strides = self.discrete_scope.strides()?;
        for idx in index_tuples(&kept_disc) {
            let mut flat = 0usize;
            let mut k = 0usize;
            for (pos, v) in self.discrete_scope.iter().enumerate() {
                let i = if fixed_disc.contains(&v.name()) {
                    evidence.index_for(v)?
                } else {
                    k += 1;
                    idx[k - 1]
                };
                flat += i * strides[pos];
            }
            regions.push(self.regions[flat].clone());
        }

        // Restrict each region along fixed continuous axes.
        let kept_cont_vars: Vec<_> = (0..self.continuous_scope.len())
            .filter(|i| !fixed_cont.contains(i))
            .collect();
        let mut new_regions: Vec<BoxBounds> = Vec::with_capacity(regions.len());
        for r in &regions {
            let mut inside = true;
            for &i in &fixed_cont {
                let v = evidence.real_for(&self.continuous_scope.vars()[i])?;
                let (lo, hi) = r[i];
                if !(v >= lo && v < hi) {
                    inside = false;
                }
            }
            let projected: BoxBounds = kept_cont_vars.iter().map(|&i| r[i]).collect();
            if inside {
                new_regions.push(projected);
            } else {
                // This branch is identically zero: an empty box.
                new_regions.push(vec![(0.0, 0.0); kept_cont_vars.len().max(1)]);
            }
        }

        if kept_cont_vars.is_empty() {
            // Fully fixed continuous part: a 0/1 table over the remaining
            // selectors (or a scalar).
            let values: Vec<f64> = new_regions
                .iter()
                .map(|r| if box_is_empty(r) { 0.0 } else { 1.0 })
                .collect();
            return Ok(Factor::Table(TableFactor::new(kept_disc, values)?));
        }
        let kept_cont = Scope::new(
            kept_cont_vars
                .iter()
                .map(|&i| self.continuous_scope.vars()[i].clone()),
        )?;
        Ok(Factor::Indicator(IndicatorFactor::new(
            kept_disc,
            kept_cont,
            new_regions,
        )?))
    }

    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<IndicatorFactor> {
        let map_name = |n: &str| -> String {
            mapping
                .iter()
                .find(|(old, _)| *old == n)
                .map_or(n.to_string(), |(_, new)| new.to_string())
        };
        let disc =
            Scope::new(self.discrete_scope.iter().map(|v| {
                Variable::discrete(map_name(v.name()), v.cardinality().unwrap())
            }))?;
        let cont_vars: Vec<Variable> = self
            .continuous_scope
            .iter()
            .map(|v| Variable::continuous(map_name(v.name())))
            .collect();
        let cont = Scope::new(cont_vars.iter().cloned())?;
        if disc.len() != self.discrete_scope.len() || cont.len() != self.continuous_scope.len() {
            return Err(FactorError::ConfigInvalid(
                "rename collapses distinct variables".into(),
            ));
        }
        // Permute every region into the new continuous order. The discrete
        // table must also be re-strided if selector order changed.
        let cont_perm: Vec<usize> = self
            .continuous_scope
            .iter()
            .map(|v| cont.index_of(&map_name(v.name())).unwrap())
            .collect();
        let regions_renamed: Vec<BoxBounds> = self
            .regions
            .iter()
            .map(|r| {
                let mut out = vec![(f64::NEG_INFINITY, f64::INFINITY); r.len()];
                for (i, &b) in r.iter().enumerate() {
                    out[cont_perm[i]] = b;
                }
                out
            })
            .collect();
        let old_strides = self.discrete_scope.strides()?;
        let new_strides = disc.strides()?;
        let mut regions = vec![BoxBounds::new(); regions_renamed.len()];
        for idx in index_tuples(&self.discrete_scope) {
            let old_flat: usize = idx.iter().zip(&old_strides).map(|(&i, &s)| i * s).sum();
            let mut new_flat = 0usize;
            for (pos, v) in self.discrete_scope.iter().enumerate() {
                let new_pos = disc.index_of(&map_name(v.name())).unwrap();
                new_flat += idx[pos] * new_strides[new_pos];
            }
            regions[new_flat] = regions_renamed[old_flat].clone();
        }
        IndicatorFactor::new(disc, cont, regions)
    }
}

use crate::variable::Variable;

/// A dense table of continuous factors indexed by a discrete scope.
///
/// Represents `f(d, x) = branch[d](x)`. Branch factors carry their own mass,
/// so discrete CPT weights live inside the branches rather than in a
/// separate table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFactor {
    discrete_scope: Scope,
    continuous_scope: Scope,
    scope: Scope,
    branches: Vec<Factor>,
}

impl ConditionalFactor {
    /// Builds a conditional factor; `branches` is dense over the discrete
    /// scope in row-major order and every branch must be a continuous-family
    /// factor over exactly `continuous_scope`.
    pub fn new(discrete_scope: Scope, continuous_scope: Scope, branches: Vec<Factor>) -> Result<Self> {
        if discrete_scope.is_empty() {
            return Err(FactorError::ConfigInvalid(
                "conditional factor needs a nonempty discrete scope".into(),
            ));
        }
        if discrete_scope.iter().any(|v| v.is_continuous()) {
            return Err(FactorError::DomainMismatch(
                "conditional discrete scope contains a continuous variable".into(),
            ));
        }
        if continuous_scope.is_empty() || continuous_scope.iter().any(|v| v.is_discrete()) {
            return Err(FactorError::ConfigInvalid(
                "conditional factor needs a purely continuous branch scope".into(),
            ));
        }
        let expect = discrete_scope.table_len()?;
        if branches.len() != expect {
            return Err(FactorError::ConfigInvalid(format!(
                "discrete scope has {expect} assignments but {} branches given",
                branches.len()
            )));
        }
        for b in &branches {
            if !b.is_continuous_family() {
                return Err(FactorError::Unsupported(format!(
                    "conditional branch must be a continuous factor, got {}",
                    b.repr_name()
                )));
            }
            if b.scope() != &continuous_scope {
                return Err(FactorError::ScopeMismatch(format!(
                    "branch scope {} does not match {}",
                    b.scope(),
                    continuous_scope
                )));
            }
        }
        let scope = discrete_scope.union(&continuous_scope)?;
        Ok(ConditionalFactor {
            discrete_scope,
            continuous_scope,
            scope,
            branches,
        })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn discrete_scope(&self) -> &Scope {
        &self.discrete_scope
    }

    pub fn continuous_scope(&self) -> &Scope {
        &self.continuous_scope
    }

    pub fn branches(&self) -> &[Factor] {
        &self.branches
    }

    fn discrete_flat(&self, at: &Assignment) -> Result<usize> {
        let strides = self.discrete_scope.strides()?;
        let mut flat = 0;
        for (v, s) in self.discrete_scope.iter().zip(strides) {
            flat += at.index_for(v)? * s;
        }
        Ok(flat)
    }

    /// Branch for a full discrete assignment.
    pub fn branch_at(&self, at: &Assignment) -> Result<&Factor> {
        Ok(&self.branches[self.discrete_flat(at)?])
    }

    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        self.branch_at(at)?.evaluate(at)
    }

    /// Mass of every branch as a discrete table.
    pub fn branch_mass_table(&self) -> Result<TableFactor> {
        let values: Result<Vec<f64>> = self.branches.iter().map(Factor::mass).collect();
        TableFactor::new(self.discrete_scope.clone(), values?)
    }

    /// Product with any factor the branch algebra supports.
    pub fn multiply(&self, other: &Factor) -> Result<ConditionalFactor> {
        match other {
            Factor::Table(t) => self.multiply_table(t),
            Factor::Sparse(s) => self.multiply_table(&s.to_dense()?),
            Factor::Conditional(c) => self.multiply_conditional(c),
            Factor::Indicator(ind) if ind.has_selectors() => {
                self.multiply_conditional(&indicator_to_conditional(ind)?)
            }
            other => {
                // A purely continuous factor multiplies into every branch.
                let branches: Result<Vec<Factor>> = self
                    .branches
                    .iter()
                    .map(|b| b.multiply(other))
                    .collect();
                let branches = branches?;
                let cont = self.continuous_scope.union(other.scope())?;
                ConditionalFactor::new(self.discrete_scope.clone(), cont, branches)
            }
        }
    }

    fn multiply_table(&self, t: &TableFactor) -> Result<ConditionalFactor> {
        if let Some(v) = t.scope().iter().find(|v| v.is_continuous()) {
            return Err(FactorError::DomainMismatch(format!(
                "`{}` is continuous; expected a discrete table",
                v.name()
            )));
        }
        let disc = self.discrete_scope.union(t.scope())?;
        let mut branches = Vec::with_capacity(disc.table_len()?);
        for idx in index_tuples(&disc) {
            let at: Assignment = disc
                .iter()
                .zip(&idx)
                .map(|(v, &i)| (v.name().to_string(), Value::Index(i)))
                .collect();
            let w = t.evaluate(&project(&at, t.scope()))?;
            let b = self.branch_at(&at)?;
            branches.push(if w == 0.0 {
                Factor::zero_continuous(&self.continuous_scope)
            } else {
                b.scale_log(w.ln())?
            });
        }
        ConditionalFactor::new(disc, self.continuous_scope.clone(), branches)
    }

    fn multiply_conditional(&self, other: &ConditionalFactor) -> Result<ConditionalFactor> {
        let disc = self.discrete_scope.union(&other.discrete_scope)?;
        let cont = self.continuous_scope.union(&other.continuous_scope)?;
        let mut branches = Vec::with_capacity(disc.table_len()?);
        for idx in index_tuples(&disc) {
            let at: Assignment = disc
                .iter()
                .zip(&idx)
                .map(|(v, &i)| (v.name().to_string(), Value::Index(i)))
                .collect();
            let a = self.branch_at(&at)?;
            let b = other.branch_at(&at)?;
            let prod = a.multiply(b)?;
            branches.push(pad_continuous(&prod, &cont)?);
        }
        ConditionalFactor::new(disc, cont, branches)
    }

    /// Integrates or sums out the named variables; see module docs for the
    /// discrete/continuous split.
    pub fn sum_out(&self, names: &[&str]) -> Result<Factor> {
        let disc_names: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| self.discrete_scope.contains(n))
            .collect();
        let cont_names: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| self.continuous_scope.contains(n))
            .collect();
        for n in names {
            if !self.scope.contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }

        // Continuous part first: branch-wise marginalization.
        let after_cont: Factor = if cont_names.len() == self.continuous_scope.len() {
            // All continuous variables integrate to branch masses.
            Factor::Table(self.branch_mass_table()?)
        } else if cont_names.is_empty() {
            Factor::Conditional(self.clone())
        } else {
            let branches: Result<Vec<Factor>> = self
                .branches
                .iter()
                .map(|b| b.sum_out(&cont_names))
                .collect();
            let cont = self.continuous_scope.without(&cont_names);
            Factor::Conditional(ConditionalFactor::new(
                self.discrete_scope.clone(),
                cont,
                branches?,
            )?)
        };

        if disc_names.is_empty() {
            return Ok(after_cont);
        }
        match after_cont {
            Factor::Table(t) => Ok(Factor::Table(t.sum_out(&disc_names)?)),
            Factor::Conditional(c) => c.sum_out_discrete(&disc_names),
            _ => unreachable!("continuous sum-out of a conditional yields table or conditional"),
        }
    }

    /// Sums out discrete variables by combining branches with addition,
    /// yielding mixtures (or a plain mixture factor when nothing discrete
    /// remains).
    fn sum_out_discrete(&self, names: &[&str]) -> Result<Factor> {
        let kept = self.discrete_scope.without(names);
        let strides = self.discrete_scope.strides()?;
        let mut groups: Vec<Vec<&Factor>> = vec![Vec::new(); kept.table_len()?];
        let kept_strides = kept.strides()?;
        for idx in index_tuples(&self.discrete_scope) {
            let flat: usize = idx.iter().zip(&strides).map(|(&i, &s)| i * s).sum();
            let mut kept_flat = 0usize;
            for (pos, v) in self.discrete_scope.iter().enumerate() {
                if let Some(kpos) = kept.index_of(v.name()) {
                    kept_flat += idx[pos] * kept_strides[kpos];
                }
            }
            groups[kept_flat].push(&self.branches[flat]);
        }
        let mut combined = Vec::with_capacity(groups.len());
        for group in groups {
            let mut acc: Option<Factor> = None;
            for f in group {
                acc = Some(match acc {
                    None => f.clone(),
                    Some(a) => a.add(f)?,
                });
            }
            combined.push(acc.expect("dense table has no empty groups"));
        }
        if kept.is_empty() {
            Ok(combined.pop().expect("single group"))
        } else {
            Ok(Factor::Conditional(ConditionalFactor::new(
                kept,
                self.continuous_scope.clone(),
                combined,
            )?))
        }
    }

    /// Conditions on the scope variables present in `evidence`.
    pub fn reduce(&self, evidence: &Assignment) -> Result<Factor> {
        let fixed_disc: Vec<&str> = self
            .discrete_scope
            .iter()
            .filter(|v| evidence.contains(v.name()))
            .map(|v| v.name())
            .collect();
        let has_cont_evidence = self
            .continuous_scope
            .iter()
            .any(|v| evidence.contains(v.name()));

        let kept_disc = self.discrete_scope.without(&fixed_disc);
        // Slice branches along fixed selectors.
        let strides = self.discrete_scope.strides()?;
        let mut sliced: Vec<Factor> = Vec::new();
        for idx in index_tuples(&kept_disc) {
            let mut flat = 0usize;
            let mut k = 0usize;
            for (pos, v) in self.discrete_scope.iter().enumerate() {
                let i = if fixed_disc.contains(&v.name()) {
                    evidence.index_for(v)?
                } else {
                    k += 1;
                    idx[k - 1]
                };
                flat += i * strides[pos];
            }
            let b = &self.branches[flat];
            sliced.push(if has_cont_evidence { b.reduce(evidence)? } else { b.clone() });
        }

        let cont_fixed_all = self
            .continuous_scope
            .iter()
            .all(|v| evidence.contains(v.name()));
        if kept_disc.is_empty() {
            return Ok(sliced.pop().expect("single branch"));
        }
        if cont_fixed_all {
            // Branches reduced to scalars: a table over the kept selectors.
            let values: Result<Vec<f64>> = sliced
                .iter()
                .map(|f| {
                    f.as_scalar().ok_or_else(|| {
                        FactorError::Unsupported("branch did not reduce to a scalar".into())
                    })
                })
                .collect();
            return Ok(Factor::Table(TableFactor::new(kept_disc, values?)?));
        }
        let cont = sliced[0].scope().clone();
        Ok(Factor::Conditional(ConditionalFactor::new(
            kept_disc, cont, sliced,
        )?))
    }

    /// Total mass: sum of branch masses.
    pub fn log_mass(&self) -> Result<f64> {
        let total = self.branch_mass_table()?.total_mass();
        if total <= 0.0 {
            return Err(FactorError::ZeroMass("all branches have zero mass".into()));
        }
        Ok(total.ln())
    }

    pub fn scale_log(&self, log_c: f64) -> Result<ConditionalFactor> {
        let branches: Result<Vec<Factor>> =
            self.branches.iter().map(|b| b.scale_log(log_c)).collect();
        ConditionalFactor::new(
            self.discrete_scope.clone(),
            self.continuous_scope.clone(),
            branches?,
        )
    }

    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<ConditionalFactor> {
        let map_name = |n: &str| -> String {
            mapping
                .iter()
                .find(|(old, _)| *old == n)
                .map_or(n.to_string(), |(_, new)| new.to_string())
        };
        let disc = Scope::new(self.discrete_scope.iter().map(|v| {
            Variable::discrete(map_name(v.name()), v.cardinality().unwrap())
        }))?;
        if disc.len() != self.discrete_scope.len() {
            return Err(FactorError::ConfigInvalid(
                "rename collapses distinct variables".into(),
            ));
        }
        let branches_renamed: Result<Vec<Factor>> =
            self.branches.iter().map(|b| b.rename(mapping)).collect();
        let branches_renamed = branches_renamed?;
        // Re-stride the branch table if selector order changed.
        let old_strides = self.discrete_scope.strides()?;
        let new_strides = disc.strides()?;
        let mut branches: Vec<Option<Factor>> = vec![None; branches_renamed.len()];
        for idx in index_tuples(&self.discrete_scope) {
            let old_flat: usize = idx.iter().zip(&old_strides).map(|(&i, &s)| i * s).sum();
            let mut new_flat = 0usize;
            for (pos, v) in self.discrete_scope.iter().enumerate() {
                let new_pos = disc.index_of(&map_name(v.name())).unwrap();
                new_flat += idx[pos] * new_strides[new_pos];
            }
            branches[new_flat] = Some(branches_renamed[old_flat].clone());
        }
        let cont = branches
            .iter()
            .flatten()
            .next()
            .expect("nonempty")
            .scope()
            .clone();
        ConditionalFactor::new(
            disc,
            cont,
            branches.into_iter().map(|b| b.expect("dense")).collect(),
        )
    }
}

/// Lifts an indicator with selectors into a conditional factor whose branches
/// are plain box indicators.
pub(crate) fn indicator_to_conditional(ind: &IndicatorFactor) -> Result<ConditionalFactor> {
    let branches: Result<Vec<Factor>> = ind
        .regions()
        .iter()
        .map(|r| {
            Ok(Factor::Indicator(IndicatorFactor::region(
                ind.continuous_scope().clone(),
                r.clone(),
            )?))
        })
        .collect();
    ConditionalFactor::new(
        ind.discrete_scope().clone(),
        ind.continuous_scope().clone(),
        branches?,
    )
}

/// Pads a continuous factor to a wider continuous scope by multiplying with
/// nothing (identity) where possible; errors if the factor cannot widen.
fn pad_continuous(f: &Factor, cont: &Scope) -> Result<Factor> {
    if f.scope() == cont {
        return Ok(f.clone());
    }
    // Zero branches widen trivially.
    if f.is_zero() {
        return Ok(Factor::zero_continuous(cont));
    }
    match f {
        Factor::Canonical(c) => {
            let (k, h) = c.embed(cont)?;
            Ok(Factor::Canonical(CanonicalGaussian::new(
                cont.clone(),
                k,
                h,
                c.g(),
            )?))
        }
        Factor::Truncated(t) => {
            let (k, h) = t.base().embed(cont)?;
            let base = CanonicalGaussian::new(cont.clone(), k, h, t.base().g())?;
            let bounds = pad_bounds(t.scope(), t.bounds(), cont);
            Ok(Factor::Truncated(TruncatedGaussian::new_lazy(base, bounds)?))
        }
        Factor::Indicator(ind) if !ind.has_selectors() => {
            let bounds = pad_bounds(ind.continuous_scope(), ind.sole_region()?, cont);
            Ok(Factor::Indicator(IndicatorFactor::region(
                cont.clone(),
                bounds,
            )?))
        }
        other => Err(FactorError::Unsupported(format!(
            "cannot widen a {} branch to scope {}",
            other.repr_name(),
            cont
        ))),
    }
}

fn project(at: &Assignment, onto: &Scope) -> Assignment {
    at.iter()
        .filter(|(n, _)| onto.contains(n))
        .map(|(n, v)| (n.to_string(), v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::MixtureComponent;
    use crate::gaussian::MixtureFactor;

    fn f1() -> Variable {
        Variable::continuous("f1")
    }

    fn f2() -> Variable {
        Variable::continuous("f2")
    }

    fn normal_pdf(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn at(pairs: &[(&str, f64)]) -> Assignment {
        let mut a = Assignment::new();
        for (n, v) in pairs {
            a.set(*n, *v);
        }
        a
    }

    #[test]
    fn free_axes_marginalize_out_of_box_moments() {
        // Correlated pair, box on x only. The truncated moments follow from
        // the 1-D truncation of the x marginal pushed through the
        // conditional map y | x.
        let x = Variable::continuous("x");
        let y = Variable::continuous("y");
        let scope = Scope::new([x, y]).unwrap();
        let mean = DVector::from_row_slice(&[1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let base = MomentGaussian::new(scope, mean, cov, 0.0)
            .unwrap()
            .to_canonical()
            .unwrap();
        let t = TruncatedGaussian::truncate(
            &base,
            vec![(0.0, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY)],
        )
        .unwrap();
        let m = t.moment_match().unwrap();

        let sigma = 2.0f64.sqrt();
        let (lz, mx, vx) = trunc_normal_1d(1.0, sigma, 0.0, f64::INFINITY).unwrap();
        let b = 0.6 / 2.0;
        let my = 2.0 + b * (mx - 1.0);
        let cxy = b * vx;
        let vy = (1.0 - b * 0.6) + b * b * vx;
        assert!((t.log_mass().unwrap() - lz).abs() < 1e-12);
        assert!((m.mean_of("x").unwrap() - mx).abs() < 1e-10);
        assert!((m.mean_of("y").unwrap() - my).abs() < 1e-10);
        assert!((m.var_of("x").unwrap() - vx).abs() < 1e-10);
        assert!((m.var_of("y").unwrap() - vy).abs() < 1e-10);
        let iy = m.scope().index_of("y").unwrap();
        let ix = m.scope().index_of("x").unwrap();
        assert!((m.cov()[(ix, iy)] - cxy).abs() < 1e-10);
    }

    #[test]
    fn truncate_unbounded_box_is_identity() {
        let base = CanonicalGaussian::normal(f1(), 0.3, 1.7).unwrap();
        let t = TruncatedGaussian::truncate(
            &base,
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
        )
        .unwrap();
        assert!(t.log_mass().unwrap().abs() < 1e-12);
        let m = t.moment_match().unwrap();
        assert!((m.mean_of("f1").unwrap() - 0.3).abs() < 1e-12);
        assert!((m.var_of("f1").unwrap() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn half_line_truncation_of_standard_normal() {
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        let t = TruncatedGaussian::truncate(&base, vec![(0.0, f64::INFINITY)]).unwrap();
        assert!((t.log_mass().unwrap().exp() - 0.5).abs() < 1e-12);
        let m = t.moment_match().unwrap();
        // Classic half-normal moments.
        let want_mean = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m.mean_of("f1").unwrap() - want_mean).abs() < 1e-12);
        assert!((m.var_of("f1").unwrap() - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_interval_truncation_of_standard_normal() {
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        let t = TruncatedGaussian::truncate(&base, vec![(-1.0, 1.0)]).unwrap();
        let mass = t.log_mass().unwrap().exp();
        // P(|Z| < 1) = erf(1/sqrt(2)).
        let want = statrs::function::erf::erf(1.0 / std::f64::consts::SQRT_2);
        assert!((mass - want).abs() < 1e-12);
        let m = t.moment_match().unwrap();
        assert!(m.mean_of("f1").unwrap().abs() < 1e-14);
        let want_var = 1.0 - 2.0 * normal_pdf(1.0) / want;
        assert!((m.var_of("f1").unwrap() - want_var).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_zero_outside_box() {
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        let t = TruncatedGaussian::truncate(&base, vec![(0.0, 2.0)]).unwrap();
        assert_eq!(t.evaluate(&at(&[("f1", -0.5)])).unwrap(), 0.0);
        assert!(t.evaluate(&at(&[("f1", 0.5)])).unwrap() > 0.0);
        // Half-open: the lower edge is inside, the upper edge is outside.
        assert!(t.evaluate(&at(&[("f1", 0.0)])).unwrap() > 0.0);
        assert_eq!(t.evaluate(&at(&[("f1", 2.0)])).unwrap(), 0.0);
    }

    #[test]
    fn empty_boxes_are_rejected() {
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        assert_eq!(
            TruncatedGaussian::truncate(&base, vec![(2.0, 2.0)])
                .unwrap_err()
                .code(),
            "ZeroMass"
        );
    }

    #[test]
    fn far_tail_box_keeps_log_scale_mass() {
        // A box 60 sigma out is far below what linear-scale f64 can hold
        // (exp underflows near -745), yet its log mass and moments must stay
        // finite so downstream mixtures can weigh it against live regimes.
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        let t = TruncatedGaussian::truncate(&base, vec![(60.0, 61.0)]).unwrap();
        let lm = t.log_mass().unwrap();
        // Sharp bounds: phi(a)(1/a - 1/a^3) < sf(a) < phi(a)/a, and the mass
        // beyond 61 is a factor exp(-60.5) of the slab, hence negligible.
        assert!((lm - -1805.0136).abs() < 1e-3, "log mass {lm}");
        let m = t.moment_match().unwrap();
        assert_eq!(m.log_weight(), lm);
        let mean = m.mean_of("f1").unwrap();
        let var = m.var_of("f1").unwrap();
        // E[X | X > a] ~ a + 1/a and Var ~ 1/a^2 for a large one-sided tail.
        assert!((mean - (60.0 + 1.0 / 60.0)).abs() < 1e-3, "mean {mean}");
        assert!(var > 0.0 && (var - 1.0 / 3600.0).abs() < 1e-4, "var {var}");
    }

    #[test]
    fn correlated_quadrature_matches_diagonal_closed_form() {
        // A 2-D base with nearly zero correlation must agree with the
        // closed-form product of 1-D truncations.
        let scope = Scope::new([f1(), f2()]).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let m = MomentGaussian::new(scope, DVector::from_vec(vec![0.5, -0.5]), cov, 0.0).unwrap();
        let base = m.to_canonical().unwrap();
        let t =
            TruncatedGaussian::truncate(&base, vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY)])
                .unwrap();
        let mm = t.moment_match().unwrap();
        // Against an independent mid-point grid.
        let mut mass = 0.0;
        let mut mean = [0.0, 0.0];
        let n = 900;
        let (lo, hi) = (-8.0, 8.0);
        let hstep = (hi - lo) / n as f64;
        for i in 0..n {
            for j in 0..n {
                let x = lo + (i as f64 + 0.5) * hstep;
                let y = lo + (j as f64 + 0.5) * hstep;
                if x < 0.0 || y < 0.0 {
                    continue;
                }
                let v = base.log_density(&[x, y]).exp() * hstep * hstep;
                mass += v;
                mean[0] += x * v;
                mean[1] += y * v;
            }
        }
        assert!((mm.mass() - mass).abs() < 1e-5);
        assert!((mm.mean_of("f1").unwrap() - mean[0] / mass).abs() < 1e-4);
        assert!((mm.mean_of("f2").unwrap() - mean[1] / mass).abs() < 1e-4);
    }

    #[test]
    fn multiply_then_marginalize_unconstrained_axis_is_exact() {
        // Joint over (f1, f2) truncated on f2 only; integrating f1 out must
        // equal truncating the f2 marginal.
        let joint = MomentGaussian::new(
            Scope::new([f1(), f2()]).unwrap(),
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            0.0,
        )
        .unwrap()
        .to_canonical()
        .unwrap();
        let t = TruncatedGaussian::truncate(
            &joint,
            vec![(f64::NEG_INFINITY, f64::INFINITY), (0.0, f64::INFINITY)],
        )
        .unwrap();
        let marg = t.sum_out(&["f1"]).unwrap();
        let Factor::Truncated(marg) = marg else {
            panic!("expected truncated marginal")
        };
        let direct = TruncatedGaussian::truncate(
            &joint.sum_out(&["f1"]).unwrap(),
            vec![(0.0, f64::INFINITY)],
        )
        .unwrap();
        let a = marg.moment_match().unwrap();
        let b = direct.moment_match().unwrap();
        assert!((a.mean_of("f2").unwrap() - b.mean_of("f2").unwrap()).abs() < 1e-10);
        assert!((a.var_of("f2").unwrap() - b.var_of("f2").unwrap()).abs() < 1e-10);
        assert!((a.mass() - b.mass()).abs() < 1e-10);

        // Truncated axes cannot be integrated in closed form.
        assert_eq!(t.sum_out(&["f2"]).unwrap_err().code(), "Unsupported");
        // But integrating everything gives the scalar mass.
        let all = t.sum_out(&["f1", "f2"]).unwrap();
        assert!((all.as_scalar().unwrap() - t.log_mass().unwrap().exp()).abs() < 1e-12);
    }

    #[test]
    fn indicator_evaluates_boxes_per_selector() {
        let s = Variable::discrete("s", 2);
        let ind = IndicatorFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                vec![(0.0, f64::INFINITY)],
                vec![(f64::NEG_INFINITY, 0.0)],
            ],
        )
        .unwrap();
        let mut a = at(&[("f1", 0.5)]);
        a.set("s", 0usize);
        assert_eq!(ind.evaluate(&a).unwrap(), 1.0);
        a.set("s", 1usize);
        assert_eq!(ind.evaluate(&a).unwrap(), 0.0);
    }

    #[test]
    fn indicator_reduce_continuous_gives_one_hot_table() {
        let s = Variable::discrete("s", 2);
        let ind = IndicatorFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                vec![(0.0, f64::INFINITY)],
                vec![(f64::NEG_INFINITY, 0.0)],
            ],
        )
        .unwrap();
        let r = ind.reduce(&at(&[("f1", -0.3)])).unwrap();
        let Factor::Table(t) = r else { panic!("expected table") };
        assert_eq!(t.values(), &[0.0, 1.0]);

        // Reducing the selector instead leaves a plain box.
        let r = ind
            .reduce(&Assignment::new().with("s", 0usize))
            .unwrap();
        let Factor::Indicator(b) = r else { panic!("expected indicator") };
        assert!(!b.has_selectors());
        assert_eq!(b.sole_region().unwrap(), &vec![(0.0, f64::INFINITY)]);
    }

    #[test]
    fn conditional_factor_evaluates_branchwise() {
        let s = Variable::discrete("s", 2);
        let b0 = CanonicalGaussian::normal(f1(), -1.0, 1.0).unwrap();
        let b1 = CanonicalGaussian::normal(f1(), 2.0, 0.5).unwrap();
        let cond = ConditionalFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                Factor::Canonical(b0.clone()).scale_log(0.3f64.ln()).unwrap(),
                Factor::Canonical(b1.clone()).scale_log(0.7f64.ln()).unwrap(),
            ],
        )
        .unwrap();
        let mut a = at(&[("f1", 0.0)]);
        a.set("s", 0usize);
        let want = 0.3 * b0.evaluate(&at(&[("f1", 0.0)])).unwrap();
        assert!((cond.evaluate(&a).unwrap() - want).abs() < 1e-15);

        let masses = cond.branch_mass_table().unwrap();
        assert!((masses.values()[0] - 0.3).abs() < 1e-12);
        assert!((masses.values()[1] - 0.7).abs() < 1e-12);
        assert!(cond.log_mass().unwrap().abs() < 1e-12);
    }

    #[test]
    fn conditional_sum_out_discrete_yields_mixture() {
        let s = Variable::discrete("s", 2);
        let b0 = CanonicalGaussian::normal(f1(), -1.0, 1.0).unwrap();
        let b1 = CanonicalGaussian::normal(f1(), 1.0, 1.0).unwrap();
        let cond = ConditionalFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                Factor::Canonical(b0.clone()).scale_log(0.5f64.ln()).unwrap(),
                Factor::Canonical(b1.clone()).scale_log(0.5f64.ln()).unwrap(),
            ],
        )
        .unwrap();
        let mixed = cond.sum_out(&["s"]).unwrap();
        let Factor::Mixture(m) = &mixed else { panic!("expected mixture") };
        assert_eq!(m.len(), 2);
        let mm = m.moment_match().unwrap();
        assert!(mm.mean_of("f1").unwrap().abs() < 1e-12);
        assert!((mm.var_of("f1").unwrap() - 2.0).abs() < 1e-12);
        assert!((mm.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_sum_out_continuous_yields_mass_table() {
        let s = Variable::discrete("s", 2);
        let cond = ConditionalFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                Factor::Canonical(CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap())
                    .scale_log(0.3f64.ln())
                    .unwrap(),
                Factor::Canonical(CanonicalGaussian::normal(f1(), 5.0, 2.0).unwrap())
                    .scale_log(0.7f64.ln())
                    .unwrap(),
            ],
        )
        .unwrap();
        let t = cond.sum_out(&["f1"]).unwrap();
        let Factor::Table(t) = t else { panic!("expected table") };
        assert!((t.values()[0] - 0.3).abs() < 1e-12);
        assert!((t.values()[1] - 0.7).abs() < 1e-12);
        // Summing out everything gives the scalar total.
        let total = cond.sum_out(&["f1", "s"]).unwrap();
        assert!((total.as_scalar().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_multiply_by_indicator_truncates_branches() {
        let s = Variable::discrete("s", 2);
        let prior = ConditionalFactor::new(
            Scope::new([s.clone()]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                Factor::Canonical(CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap())
                    .scale_log(0.5f64.ln())
                    .unwrap(),
                Factor::Canonical(CanonicalGaussian::normal(f1(), 1.0, 1.0).unwrap())
                    .scale_log(0.5f64.ln())
                    .unwrap(),
            ],
        )
        .unwrap();
        let gate = Variable::discrete("gate", 2);
        let ind = IndicatorFactor::new(
            Scope::new([gate]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                vec![(f64::NEG_INFINITY, 0.0)],
                vec![(0.0, f64::INFINITY)],
            ],
        )
        .unwrap();
        let prod = prior.multiply(&Factor::Indicator(ind)).unwrap();
        assert_eq!(prod.discrete_scope().names(), vec!["gate", "s"]);
        // Mass splits by the sign of f1 within each s-branch; the four
        // masses must sum to the original unit mass.
        let masses = prod.branch_mass_table().unwrap();
        assert!((masses.total_mass() - 1.0).abs() < 1e-10);
        // Gate=1, s=0 selects P(f1 >= 0) under N(0,1) scaled by 0.5.
        let mut a = Assignment::new();
        a.set("gate", 1usize);
        a.set("s", 0usize);
        assert!((masses.evaluate(&a).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn conditional_reduce_selects_branches() {
        let s = Variable::discrete("s", 2);
        let b1 = CanonicalGaussian::normal(f1(), 2.0, 0.5).unwrap();
        let cond = ConditionalFactor::new(
            Scope::new([s]).unwrap(),
            Scope::new([f1()]).unwrap(),
            vec![
                Factor::Canonical(CanonicalGaussian::normal(f1(), -1.0, 1.0).unwrap()),
                Factor::Canonical(b1.clone()),
            ],
        )
        .unwrap();
        let picked = cond.reduce(&Assignment::new().with("s", 1usize)).unwrap();
        let Factor::Canonical(c) = picked else { panic!("expected canonical") };
        assert!((c.k()[(0, 0)] - b1.k()[(0, 0)]).abs() < 1e-15);

        // Continuous evidence leaves a table over the selector.
        let t = cond.reduce(&at(&[("f1", 0.0)])).unwrap();
        let Factor::Table(t) = t else { panic!("expected table") };
        assert_eq!(t.scope().names(), vec!["s"]);
        assert!(t.values()[0] > t.values()[1]);
    }

    #[test]
    fn mixture_of_truncated_components_moment_matches() {
        let base = CanonicalGaussian::normal(f1(), 0.0, 1.0).unwrap();
        let left = TruncatedGaussian::truncate(&base, vec![(f64::NEG_INFINITY, 0.0)]).unwrap();
        let right = TruncatedGaussian::truncate(&base, vec![(0.0, f64::INFINITY)]).unwrap();
        let mix = MixtureFactor::new(vec![
            (1.0, MixtureComponent::Truncated(left)),
            (1.0, MixtureComponent::Truncated(right)),
        ])
        .unwrap();
        // The two halves reassemble the standard normal.
        let m = mix.moment_match().unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        assert!(m.mean_of("f1").unwrap().abs() < 1e-12);
        assert!((m.var_of("f1").unwrap() - 1.0).abs() < 1e-10);
    }
}
