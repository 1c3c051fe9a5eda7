//! Gaussian factors in canonical and moment form, plus mixtures.
//!
//! A [`CanonicalGaussian`] stores `(K, h, g)` and represents the function
//! `exp(-0.5 x'Kx + h'x + g)` over its continuous scope, with axes in
//! canonical variable order. Multiplication and division are parameter
//! addition and subtraction on a zero-padded union scope; marginalization is
//! a Schur complement. `K` only needs to be positive definite where an
//! operation integrates something, so intermediate factors (conditionals,
//! likelihood ratios) may be indefinite.
//!
//! A [`MomentGaussian`] stores `(mean, covariance, log_weight)` and is the
//! friendlier form for reporting and sampling. A [`MixtureFactor`] is a
//! weighted list of Gaussian-family components and is the honest result of
//! factor addition; collapsing it to a single Gaussian is the explicit
//! [`MixtureFactor::moment_match`] step, never implicit.

use nalgebra::{DMatrix, DVector};

use crate::error::{FactorError, Result};
use crate::hybrid::TruncatedGaussian;
use crate::variable::{Assignment, Scope, Variable};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Minimum Cholesky pivot accepted when an operation needs positive
/// definiteness.
pub(crate) const MIN_PIVOT: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if any
/// pivot falls at or below [`MIN_PIVOT`].
pub(crate) fn cholesky_guarded(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > MIN_PIVOT) {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub(crate) fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = y[k];
            y[i] -= l[(i, k)] * t;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = y[k];
            y[i] -= l[(k, i)] * t;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves `A X = B` column by column given the Cholesky factor `L` of `A`.
pub(crate) fn chol_solve_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.ncols() {
        let col = chol_solve_vec(l, &DVector::from_column_slice(b.column(j).as_slice()));
        out.set_column(j, &col);
    }
    out
}

pub(crate) fn chol_log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub(crate) fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    chol_solve_mat(l, &DMatrix::identity(n, n))
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(FactorError::ConfigInvalid(format!("{what} must be square")));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(FactorError::ConfigInvalid(format!(
                    "{what} must be symmetric"
                )));
            }
        }
    }
    // Symmetrize exactly so downstream algebra cannot drift.
    Ok(0.5 * (m + m.transpose()))
}

fn continuous_scope(scope: &Scope) -> Result<()> {
    if let Some(v) = scope.iter().find(|v| v.is_discrete()) {
        return Err(FactorError::DomainMismatch(format!(
            "`{}` is discrete; Gaussian scopes must be continuous",
            v.name()
        )));
    }
    Ok(())
}

/// Gaussian factor in information (canonical) form.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalGaussian {
    scope: Scope,
    k: DMatrix<f64>,
    h: DVector<f64>,
    g: f64,
}

impl CanonicalGaussian {
    /// Builds a canonical Gaussian with parameters already in canonical scope
    /// order.
    pub fn new(scope: Scope, k: DMatrix<f64>, h: DVector<f64>, g: f64) -> Result<Self> {
        continuous_scope(&scope)?;
        let n = scope.len();
        if k.nrows() != n || k.ncols() != n || h.len() != n {
            return Err(FactorError::ConfigInvalid(format!(
                "scope has {n} variables but K is {}x{} and h has {}",
                k.nrows(),
                k.ncols(),
                h.len()
            )));
        }
        if k.iter().any(|x| !x.is_finite())
            || h.iter().any(|x| !x.is_finite())
            || !g.is_finite()
        {
            return Err(FactorError::ConfigInvalid(
                "Gaussian parameters must be finite".into(),
            ));
        }
        let k = check_symmetric(&k, "precision matrix")?;
        Ok(CanonicalGaussian { scope, k, h, g })
    }

    /// Builds from parameters given in an explicit variable order, permuting
    /// them into canonical order.
    pub fn from_ordered(
        vars: &[Variable],
        k: DMatrix<f64>,
        h: DVector<f64>,
        g: f64,
    ) -> Result<Self> {
        let scope = Scope::new(vars.iter().cloned())?;
        if scope.len() != vars.len() {
            return Err(FactorError::ConfigInvalid(
                "variable list contains duplicates".into(),
            ));
        }
        let perm: Vec<usize> = vars
            .iter()
            .map(|v| scope.index_of(v.name()).unwrap())
            .collect();
        let n = vars.len();
        let mut k2 = DMatrix::zeros(n, n);
        let mut h2 = DVector::zeros(n);
        for i in 0..n {
            h2[perm[i]] = h[i];
            for j in 0..n {
                k2[(perm[i], perm[j])] = k[(i, j)];
            }
        }
        CanonicalGaussian::new(scope, k2, h2, g)
    }

    /// Unit-mass univariate normal factor.
    pub fn normal(var: Variable, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(FactorError::ConfigInvalid(format!(
                "normal requires finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        let k = 1.0 / variance;
        let h = k * mean;
        let g = -0.5 * (LN_2PI + variance.ln() + mean * h);
        CanonicalGaussian::new(
            Scope::new([var])?,
            DMatrix::from_element(1, 1, k),
            DVector::from_element(1, h),
            g,
        )
    }

    /// Empty-scope factor with value `exp(log_value)`.
    pub fn scalar_log(log_value: f64) -> Self {
        CanonicalGaussian {
            scope: Scope::empty(),
            k: DMatrix::zeros(0, 0),
            h: DVector::zeros(0),
            g: log_value,
        }
    }

    /// Conditional linear-Gaussian factor `N(outputs; A * given + b, noise)`.
    ///
    /// Has unit mass over `outputs` for every value of `given`, which makes it
    /// the canonical encoding of transition and observation models.
    pub fn linear_conditional(
        outputs: &[Variable],
        given: &[Variable],
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        noise: &DMatrix<f64>,
    ) -> Result<Self> {
        let d = outputs.len();
        let m = given.len();
        if a.nrows() != d || a.ncols() != m || b.len() != d {
            return Err(FactorError::ConfigInvalid(format!(
                "coefficient shapes do not match: A is {}x{}, b has {}, outputs {d}, given {m}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let noise = check_symmetric(noise, "noise covariance")?;
        let l = cholesky_guarded(&noise).ok_or_else(|| {
            FactorError::Degenerate("noise covariance is not positive definite".into())
        })?;
        let q_inv = chol_inverse(&l);
        let log_det_q = chol_log_det(&l);

        // Block order (given, outputs), then permute to canonical.
        let n = m + d;
        let mut k = DMatrix::zeros(n, n);
        let at_qinv = a.transpose() * &q_inv;
        k.view_mut((0, 0), (m, m)).copy_from(&(&at_qinv * a));
        k.view_mut((0, m), (m, d)).copy_from(&(-&at_qinv));
        k.view_mut((m, 0), (d, m)).copy_from(&(-(&q_inv * a)));
        k.view_mut((m, m), (d, d)).copy_from(&q_inv);
        let mut h = DVector::zeros(n);
        h.rows_mut(0, m).copy_from(&(-(&at_qinv * b)));
        h.rows_mut(m, d).copy_from(&(&q_inv * b));
        let g = -0.5 * (d as f64 * LN_2PI + log_det_q + (b.transpose() * &q_inv * b)[(0, 0)]);

        let vars: Vec<Variable> = given.iter().chain(outputs.iter()).cloned().collect();
        CanonicalGaussian::from_ordered(&vars, k, h, g)
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn dim(&self) -> usize {
        self.scope.len()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// Log of the factor value at a point aligned to the canonical scope
    /// order.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..x.len() {
            lin += self.h[i] * x[i];
            for j in 0..x.len() {
                quad += x[i] * self.k[(i, j)] * x[j];
            }
        }
        -0.5 * quad + lin + self.g
    }

    /// Factor value at a full assignment of the scope.
    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let x = self.point_from(at)?;
        Ok(self.log_density(&x).exp())
    }

    pub(crate) fn point_from(&self, at: &Assignment) -> Result<Vec<f64>> {
        self.scope.iter().map(|v| at.real_for(v)).collect()
    }

    /// Embeds the parameters into a super-scope by zero padding.
    pub(crate) fn embed(&self, sup: &Scope) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if !self.scope.is_subset_of(sup) {
            return Err(FactorError::ScopeMismatch(format!(
                "{} is not a subset of {}",
                self.scope, sup
            )));
        }
        let n = sup.len();
        let pos: Vec<usize> = self
            .scope
            .iter()
            .map(|v| sup.index_of(v.name()).unwrap())
            .collect();
        let mut k = DMatrix::zeros(n, n);
        let mut h = DVector::zeros(n);
        for (i, &pi) in pos.iter().enumerate() {
            h[pi] = self.h[i];
            for (j, &pj) in pos.iter().enumerate() {
                k[(pi, pj)] = self.k[(i, j)];
            }
        }
        Ok((k, h))
    }

    /// Product: parameters add on the zero-padded union scope.
    pub fn multiply(&self, other: &CanonicalGaussian) -> Result<CanonicalGaussian> {
        let scope = self.scope.union(&other.scope)?;
        let (ka, ha) = self.embed(&scope)?;
        let (kb, hb) = other.embed(&scope)?;
        CanonicalGaussian::new(scope, ka + kb, ha + hb, self.g + other.g)
    }

    /// Quotient: parameters subtract; the divisor scope must be a subset.
    /// The result may be indefinite, which is legal for intermediate factors.
    pub fn divide(&self, other: &CanonicalGaussian) -> Result<CanonicalGaussian> {
        if !other.scope.is_subset_of(&self.scope) {
            return Err(FactorError::ScopeMismatch(format!(
                "divisor scope {} is not a subset of {}",
                other.scope, self.scope
            )));
        }
        let (kb, hb) = other.embed(&self.scope)?;
        CanonicalGaussian::new(
            self.scope.clone(),
            &self.k - kb,
            &self.h - hb,
            self.g - other.g,
        )
    }

    fn positions(&self, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.scope
                    .index_of(n)
                    .ok_or_else(|| FactorError::NotInScope((*n).to_string()))
            })
            .collect()
    }

    /// Integrates the named variables out via the Schur complement.
    ///
    /// Fails with [`FactorError::NotIntegrable`] when the integrated block is
    /// not positive definite (the integral diverges).
    pub fn sum_out(&self, names: &[&str]) -> Result<CanonicalGaussian> {
        let drop = self.positions(names)?;
        if drop.is_empty() {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.dim()).filter(|i| !drop.contains(i)).collect();
        let k_xx = self.k.select_rows(&drop).select_columns(&drop);
        let l = cholesky_guarded(&k_xx).ok_or_else(|| {
            FactorError::NotIntegrable(format!(
                "block for {names:?} is not positive definite"
            ))
        })?;
        let h_x = DVector::from_iterator(drop.len(), drop.iter().map(|&i| self.h[i]));
        let u = chol_solve_vec(&l, &h_x);
        let nx = drop.len() as f64;
        let g = self.g + 0.5 * (nx * LN_2PI - chol_log_det(&l) + h_x.dot(&u));

        let keep_vars: Vec<Variable> = keep.iter().map(|&i| self.scope.vars()[i].clone()).collect();
        if keep.is_empty() {
            return Ok(CanonicalGaussian::scalar_log(g));
        }
        let k_yy = self.k.select_rows(&keep).select_columns(&keep);
        let k_yx = self.k.select_rows(&keep).select_columns(&drop);
        let k_xy = self.k.select_rows(&drop).select_columns(&keep);
        let h_y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.h[i]));
        let w = chol_solve_mat(&l, &k_xy);
        let k_new = &k_yy - &k_yx * &w;
        let h_new = &h_y - &k_yx * &u;
        // Keep order is ascending, so keep_vars is already canonical.
        CanonicalGaussian::new(Scope::new(keep_vars)?, k_new, h_new, g)
    }

    /// Conditions on the scope variables present in `evidence`; names outside
    /// the scope are ignored.
    pub fn reduce(&self, evidence: &Assignment) -> Result<CanonicalGaussian> {
        let fixed: Vec<usize> = (0..self.dim())
            .filter(|&i| evidence.contains(self.scope.vars()[i].name()))
            .collect();
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        let vals: Result<Vec<f64>> = fixed
            .iter()
            .map(|&i| evidence.real_for(&self.scope.vars()[i]))
            .collect();
        let v = DVector::from_vec(vals?);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FactorError::ConfigInvalid(
                "evidence values must be finite".into(),
            ));
        }
        let keep: Vec<usize> = (0..self.dim()).filter(|i| !fixed.contains(i)).collect();
        let h_x = DVector::from_iterator(fixed.len(), fixed.iter().map(|&i| self.h[i]));
        let k_xx = self.k.select_rows(&fixed).select_columns(&fixed);
        let g = self.g + h_x.dot(&v) - 0.5 * (v.transpose() * &k_xx * &v)[(0, 0)];
        if keep.is_empty() {
            return Ok(CanonicalGaussian::scalar_log(g));
        }
        let keep_vars: Vec<Variable> = keep.iter().map(|&i| self.scope.vars()[i].clone()).collect();
        let k_yy = self.k.select_rows(&keep).select_columns(&keep);
        let k_yx = self.k.select_rows(&keep).select_columns(&fixed);
        let h_y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.h[i]));
        CanonicalGaussian::new(Scope::new(keep_vars)?, k_yy, &h_y - &k_yx * &v, g)
    }

    /// Natural log of the total mass; requires `K` positive definite.
    pub fn log_mass(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(self.g);
        }
        let l = cholesky_guarded(&self.k).ok_or_else(|| {
            FactorError::NotIntegrable("precision matrix is not positive definite".into())
        })?;
        let u = chol_solve_vec(&l, &self.h);
        Ok(self.g + 0.5 * (self.dim() as f64 * LN_2PI - chol_log_det(&l) + self.h.dot(&u)))
    }

    /// Rescales to unit mass.
    pub fn normalize(&self) -> Result<CanonicalGaussian> {
        let lm = self.log_mass()?;
        Ok(CanonicalGaussian {
            scope: self.scope.clone(),
            k: self.k.clone(),
            h: self.h.clone(),
            g: self.g - lm,
        })
    }

    /// Scales the factor by `exp(log_c)`.
    pub fn scale_log(&self, log_c: f64) -> CanonicalGaussian {
        CanonicalGaussian {
            scope: self.scope.clone(),
            k: self.k.clone(),
            h: self.h.clone(),
            g: self.g + log_c,
        }
    }

    /// Converts to moment form; fails with [`FactorError::Degenerate`] when
    /// `K` is not positive definite.
    pub fn to_moment(&self) -> Result<MomentGaussian> {
        let l = cholesky_guarded(&self.k).ok_or_else(|| {
            FactorError::Degenerate("precision matrix is not positive definite".into())
        })?;
        let cov = chol_inverse(&l);
        let mean = chol_solve_vec(&l, &self.h);
        let lw = self.g
            + 0.5 * (self.dim() as f64 * LN_2PI - chol_log_det(&l) + self.h.dot(&mean));
        MomentGaussian::new(self.scope.clone(), mean, cov, lw)
    }

    /// Renames scope variables; `mapping` pairs are `(old, new)`. Names not
    /// present are left unchanged.
    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<CanonicalGaussian> {
        let vars: Vec<Variable> = self
            .scope
            .iter()
            .map(|v| {
                let name = mapping
                    .iter()
                    .find(|(old, _)| *old == v.name())
                    .map_or(v.name(), |(_, new)| *new);
                Variable::continuous(name)
            })
            .collect();
        CanonicalGaussian::from_ordered(&vars, self.k.clone(), self.h.clone(), self.g)
    }
}

/// Gaussian factor in moment form: `exp(log_weight) * N(x; mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGaussian {
    scope: Scope,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    log_weight: f64,
}

impl MomentGaussian {
    pub fn new(scope: Scope, mean: DVector<f64>, cov: DMatrix<f64>, log_weight: f64) -> Result<Self> {
        continuous_scope(&scope)?;
        let n = scope.len();
        if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(FactorError::ConfigInvalid(format!(
                "scope has {n} variables but mean has {} and cov is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|x| !x.is_finite()) || cov.iter().any(|x| !x.is_finite()) {
            return Err(FactorError::ConfigInvalid(
                "moment parameters must be finite".into(),
            ));
        }
        let cov = check_symmetric(&cov, "covariance")?;
        Ok(MomentGaussian {
            scope,
            mean,
            cov,
            log_weight,
        })
    }

    /// Unit-weight univariate normal.
    pub fn normal(var: Variable, mean: f64, variance: f64) -> Result<Self> {
        MomentGaussian::new(
            Scope::new([var])?,
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, variance),
            0.0,
        )
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn dim(&self) -> usize {
        self.scope.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    /// Mean of one scope variable by name.
    pub fn mean_of(&self, name: &str) -> Result<f64> {
        let i = self
            .scope
            .index_of(name)
            .ok_or_else(|| FactorError::NotInScope(name.to_string()))?;
        Ok(self.mean[i])
    }

    /// Marginal variance of one scope variable by name.
    pub fn var_of(&self, name: &str) -> Result<f64> {
        let i = self
            .scope
            .index_of(name)
            .ok_or_else(|| FactorError::NotInScope(name.to_string()))?;
        Ok(self.cov[(i, i)])
    }

    /// Converts to canonical form; fails with [`FactorError::Degenerate`]
    /// when the covariance is not positive definite.
    pub fn to_canonical(&self) -> Result<CanonicalGaussian> {
        if self.dim() == 0 {
            return Ok(CanonicalGaussian::scalar_log(self.log_weight));
        }
        let l = cholesky_guarded(&self.cov).ok_or_else(|| {
            FactorError::Degenerate("covariance is not positive definite".into())
        })?;
        let k = chol_inverse(&l);
        let h = chol_solve_vec(&l, &self.mean);
        let g = self.log_weight
            - 0.5 * (self.dim() as f64 * LN_2PI + chol_log_det(&l) + self.mean.dot(&h));
        CanonicalGaussian::new(self.scope.clone(), k, h, g)
    }

    /// Factor value at a full assignment of the scope.
    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        Ok(self.to_canonical()?.evaluate(at)?)
    }

    /// Total mass.
    pub fn mass(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// One component of a [`MixtureFactor`].
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureComponent {
    Canonical(CanonicalGaussian),
    Truncated(TruncatedGaussian),
}

impl MixtureComponent {
    pub fn scope(&self) -> &Scope {
        match self {
            MixtureComponent::Canonical(c) => c.scope(),
            MixtureComponent::Truncated(t) => t.scope(),
        }
    }

    /// Moment summary `(mass, mean, cov)` of the component.
    pub fn moments(&self) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let m = match self {
            MixtureComponent::Canonical(c) => c.to_moment()?,
            MixtureComponent::Truncated(t) => t.moment_match()?,
        };
        Ok((m.mass(), m.mean().clone(), m.cov().clone()))
    }

    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        match self {
            MixtureComponent::Canonical(c) => c.evaluate(at),
            MixtureComponent::Truncated(t) => t.evaluate(at),
        }
    }

    pub fn log_mass(&self) -> Result<f64> {
        match self {
            MixtureComponent::Canonical(c) => c.log_mass(),
            MixtureComponent::Truncated(t) => Ok(t.log_mass()?),
        }
    }
}

/// Weighted sum of Gaussian-family components over a common scope.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFactor {
    scope: Scope,
    components: Vec<(f64, MixtureComponent)>,
}

impl MixtureFactor {
    /// Builds a mixture; components must share one scope and weights must be
    /// positive and finite.
    pub fn new(components: Vec<(f64, MixtureComponent)>) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(FactorError::ConfigInvalid(
                "mixture needs at least one component".into(),
            ));
        };
        let scope = first.scope().clone();
        for (w, c) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(FactorError::ConfigInvalid(format!(
                    "mixture weights must be positive and finite, got {w}"
                )));
            }
            if c.scope() != &scope {
                return Err(FactorError::ScopeMismatch(format!(
                    "mixture components must share a scope, got {} and {}",
                    scope,
                    c.scope()
                )));
            }
        }
        Ok(MixtureFactor { scope, components })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn components(&self) -> &[(f64, MixtureComponent)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Sum of component values at a point.
    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let mut acc = 0.0;
        for (w, c) in &self.components {
            acc += w * c.evaluate(at)?;
        }
        Ok(acc)
    }

    /// Total mass: log-sum-exp over weight times component mass, so deep
    /// tails keep their scale instead of underflowing.
    pub fn log_mass(&self) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.len());
        let mut top = f64::NEG_INFINITY;
        for (w, c) in &self.components {
            let t = w.ln() + c.log_mass()?;
            top = top.max(t);
            terms.push(t);
        }
        if top == f64::NEG_INFINITY {
            return Err(FactorError::ZeroMass("mixture has zero mass".into()));
        }
        let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        Ok(top + sum.ln())
    }

    /// Scales every component weight by `exp(log_c)`.
    pub fn scale_log(&self, log_c: f64) -> Result<MixtureFactor> {
        let c = log_c.exp();
        MixtureFactor::new(
            self.components
                .iter()
                .map(|(w, comp)| (w * c, comp.clone()))
                .collect(),
        )
    }

    /// Collapses the mixture to a single moment-form Gaussian that matches
    /// its total mass, mean and covariance.
    ///
    /// With effective weights `e_i = w_i * mass_i`:
    /// mean is `Σ e_i μ_i / Σ e_i`, covariance is
    /// `Σ e_i (Σ_i + (μ_i - μ)(μ_i - μ)') / Σ e_i`, and the weight is `Σ e_i`.
    ///
    /// Effective weights are combined on the log scale so the result stays
    /// sound when every component mass underflows `f64`. Components whose
    /// relative weight rounds to zero contribute nothing to the moments and
    /// are skipped; their (possibly degenerate) moments are never computed.
    pub fn moment_match(&self) -> Result<MomentGaussian> {
        let n = self.scope.len();
        let mut log_e = Vec::with_capacity(self.len());
        let mut top = f64::NEG_INFINITY;
        for (w, c) in &self.components {
            let t = w.ln() + c.log_mass()?;
            top = top.max(t);
            log_e.push(t);
        }
        if top == f64::NEG_INFINITY {
            return Err(FactorError::ZeroMass(
                "mixture mass underflowed in moment matching".into(),
            ));
        }
        let mut total_rel = 0.0;
        let mut parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(self.len());
        for ((_, c), le) in self.components.iter().zip(&log_e) {
            let rel = (le - top).exp();
            if rel == 0.0 {
                continue;
            }
            total_rel += rel;
            let (_, mean, cov) = c.moments()?;
            parts.push((rel, mean, cov));
        }
        let mut mean = DVector::zeros(n);
        for (e, m, _) in &parts {
            mean += *e / total_rel * m;
        }
        let mut cov = DMatrix::zeros(n, n);
        for (e, m, c) in &parts {
            let d = m - &mean;
            cov += *e / total_rel * (c + &d * d.transpose());
        }
        MomentGaussian::new(self.scope.clone(), mean, cov, top + total_rel.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Variable {
        Variable::continuous("x")
    }

    fn y() -> Variable {
        Variable::continuous("y")
    }

    fn at(pairs: &[(&str, f64)]) -> Assignment {
        let mut a = Assignment::new();
        for (n, v) in pairs {
            a.set(*n, *v);
        }
        a
    }

    /// Simpson-rule integral of a univariate function, used as an
    /// implementation-independent check on masses.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn standard_normal_density() {
        let f = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let want = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((f.evaluate(&at(&[("x", 0.0)])).unwrap() - want).abs() < 1e-15);
        let at_one = want * (-0.5f64).exp();
        assert!((f.evaluate(&at(&[("x", 1.0)])).unwrap() - at_one).abs() < 1e-15);
    }

    #[test]
    fn multiply_adds_parameters_and_matches_pointwise() {
        let f = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let p = f.multiply(&f).unwrap();
        assert!((p.k()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((p.h()[0]).abs() < 1e-15);
        for v in [-1.5, 0.0, 0.7] {
            let point = at(&[("x", v)]);
            let want = f.evaluate(&point).unwrap().powi(2);
            assert!((p.evaluate(&point).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn multiply_disjoint_scopes_is_pointwise_product() {
        let f = CanonicalGaussian::normal(x(), 1.0, 2.0).unwrap();
        let g = CanonicalGaussian::normal(y(), -0.5, 0.5).unwrap();
        let p = f.multiply(&g).unwrap();
        assert_eq!(p.scope().names(), vec!["x", "y"]);
        for (vx, vy) in [(0.0, 0.0), (1.0, -1.0), (-2.0, 0.3)] {
            let point = at(&[("x", vx), ("y", vy)]);
            let want =
                f.evaluate(&at(&[("x", vx)])).unwrap() * g.evaluate(&at(&[("y", vy)])).unwrap();
            assert!((p.evaluate(&point).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn divide_undoes_multiply() {
        let f = CanonicalGaussian::normal(x(), 0.3, 1.5).unwrap();
        let g = CanonicalGaussian::normal(x(), -1.0, 0.7).unwrap();
        let q = f.multiply(&g).unwrap().divide(&g).unwrap();
        for v in [-1.0, 0.0, 2.0] {
            let point = at(&[("x", v)]);
            assert!((q.evaluate(&point).unwrap() - f.evaluate(&point).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn divide_by_wider_normal_flattens() {
        let f = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let g = CanonicalGaussian::normal(x(), 0.0, 2.0).unwrap();
        let q = f.divide(&g).unwrap();
        assert!((q.k()[(0, 0)] - 0.5).abs() < 1e-15);
        for v in [0.0, 1.0, 2.0] {
            let point = at(&[("x", v)]);
            let want = f.evaluate(&point).unwrap() / g.evaluate(&point).unwrap();
            assert!((q.evaluate(&point).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_out_matches_moment_marginal() {
        // Joint with covariance [[2,1],[1,2]], mean (0,0): the x-marginal has
        // variance 2 regardless of y.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let joint = MomentGaussian::new(
            Scope::new([x(), y()]).unwrap(),
            DVector::zeros(2),
            cov,
            0.0,
        )
        .unwrap()
        .to_canonical()
        .unwrap();
        let marg = joint.sum_out(&["y"]).unwrap().to_moment().unwrap();
        assert!((marg.var_of("x").unwrap() - 2.0).abs() < 1e-10);
        assert!(marg.mean_of("x").unwrap().abs() < 1e-10);
        assert!(marg.log_weight().abs() < 1e-10);
    }

    #[test]
    fn reduce_matches_moment_conditional() {
        // Same joint; conditioning on y = 1 gives mean 0.5 and variance 1.5.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let joint = MomentGaussian::new(
            Scope::new([x(), y()]).unwrap(),
            DVector::zeros(2),
            cov,
            0.0,
        )
        .unwrap()
        .to_canonical()
        .unwrap();
        let cond = joint
            .reduce(&at(&[("y", 1.0)]))
            .unwrap()
            .normalize()
            .unwrap()
            .to_moment()
            .unwrap();
        assert!((cond.mean_of("x").unwrap() - 0.5).abs() < 1e-10);
        assert!((cond.var_of("x").unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn mass_of_normalized_factor_is_one() {
        let f = CanonicalGaussian::normal(x(), 3.0, 5.0).unwrap();
        let s = f.sum_out(&["x"]).unwrap();
        assert!(s.scope().is_empty());
        assert!((s.g().exp() - 1.0).abs() < 1e-12);
        // Agrees with direct numeric integration of the density.
        let num = simpson(
            |v| f.evaluate(&at(&[("x", v)])).unwrap(),
            3.0 - 40.0,
            3.0 + 40.0,
            20_000,
        );
        assert!((num - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sum_out_of_flat_factor_is_not_integrable() {
        let flat = CanonicalGaussian::new(
            Scope::new([x()]).unwrap(),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        assert_eq!(flat.sum_out(&["x"]).unwrap_err().code(), "NotIntegrable");
        assert_eq!(flat.normalize().unwrap_err().code(), "NotIntegrable");
    }

    #[test]
    fn moment_round_trip() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0]);
        let f = CanonicalGaussian::new(
            Scope::new([x(), y()]).unwrap(),
            k.clone(),
            DVector::from_vec(vec![0.5, -0.25]),
            -1.0,
        )
        .unwrap();
        let m = f.to_moment().unwrap();
        // K = [[2,-1],[-1,2]]/3 inverts to [[2,1],[1,2]]; cross-check with
        // nalgebra's general inverse.
        let want_cov = k.try_inverse().unwrap();
        assert!((m.cov() - &want_cov).amax() < 1e-12);
        let back = m.to_canonical().unwrap();
        assert!((back.k() - f.k()).amax() < 1e-12);
        assert!((back.h() - f.h()).amax() < 1e-12);
        assert!((back.g() - f.g()).abs() < 1e-12);
    }

    #[test]
    fn from_moment_rejects_degenerate_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let m = MomentGaussian::new(
            Scope::new([x(), y()]).unwrap(),
            DVector::zeros(2),
            cov,
            0.0,
        )
        .unwrap();
        assert_eq!(m.to_canonical().unwrap_err().code(), "Degenerate");
    }

    #[test]
    fn linear_conditional_matches_hand_density() {
        // y | x ~ N(2x + 1, 0.5)
        let f = CanonicalGaussian::linear_conditional(
            &[y()],
            &[x()],
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, 1.0),
            &DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        for (vx, vy) in [(0.0f64, 1.0f64), (1.0, 3.5), (-0.5, 0.0)] {
            let want = (-0.5 * (vy - 2.0 * vx - 1.0) * (vy - 2.0 * vx - 1.0) / 0.5).exp()
                / (2.0 * std::f64::consts::PI * 0.5).sqrt();
            let got = f.evaluate(&at(&[("x", vx), ("y", vy)])).unwrap();
            assert!((got - want).abs() < 1e-12, "x={vx} y={vy}");
        }
        // Unit mass over y for any x.
        let m = f.reduce(&at(&[("x", 0.7)])).unwrap().log_mass().unwrap();
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn rename_permutes_canonically() {
        let f = CanonicalGaussian::linear_conditional(
            &[y()],
            &[x()],
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        // Renaming x -> z flips the canonical order (y before z).
        let r = f.rename(&[("x", "z")]).unwrap();
        assert_eq!(r.scope().names(), vec!["y", "z"]);
        let fv = f.evaluate(&at(&[("x", 0.3), ("y", -0.2)])).unwrap();
        let rv = r.evaluate(&at(&[("z", 0.3), ("y", -0.2)])).unwrap();
        assert!((fv - rv).abs() < 1e-15);
    }

    #[test]
    fn mixture_moment_match_known_values() {
        let a = CanonicalGaussian::normal(x(), -1.0, 1.0).unwrap();
        let b = CanonicalGaussian::normal(x(), 1.0, 1.0).unwrap();
        let mix = MixtureFactor::new(vec![
            (1.0, MixtureComponent::Canonical(a)),
            (1.0, MixtureComponent::Canonical(b)),
        ])
        .unwrap();
        let m = mix.moment_match().unwrap();
        assert!(m.mean_of("x").unwrap().abs() < 1e-12);
        assert!((m.var_of("x").unwrap() - 2.0).abs() < 1e-12);
        assert!((m.mass() - 2.0).abs() < 1e-12);

        let c = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let d = CanonicalGaussian::normal(x(), 10.0, 1.0).unwrap();
        let skew = MixtureFactor::new(vec![
            (0.9, MixtureComponent::Canonical(c)),
            (0.1, MixtureComponent::Canonical(d)),
        ])
        .unwrap();
        let m = skew.moment_match().unwrap();
        assert!((m.mean_of("x").unwrap() - 1.0).abs() < 1e-12);
        assert!((m.var_of("x").unwrap() - 10.0).abs() < 1e-12);
        assert!((m.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_of_dead_tails_collapses_on_log_scale() {
        // Both component masses underflow linear f64 (log masses near -1805
        // and -2855), so any linear-weight accumulation would see 0/0. The
        // collapse must still pick the heavier tail and keep its moments.
        let base = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let near = crate::hybrid::TruncatedGaussian::truncate(&base, vec![(60.0, 61.0)]).unwrap();
        let far = crate::hybrid::TruncatedGaussian::truncate(&base, vec![(75.0, 76.0)]).unwrap();
        let near_lm = near.log_mass().unwrap();
        let mix = MixtureFactor::new(vec![
            (1.0, MixtureComponent::Truncated(near)),
            (1.0, MixtureComponent::Truncated(far)),
        ])
        .unwrap();
        // The far tail is ~exp(-1050) of the near one; log-sum-exp reduces
        // to the near mass alone at f64 precision.
        assert!((mix.log_mass().unwrap() - near_lm).abs() < 1e-12);
        let m = mix.moment_match().unwrap();
        assert!((m.log_weight() - near_lm).abs() < 1e-12);
        let mean = m.mean_of("x").unwrap();
        assert!((mean - (60.0 + 1.0 / 60.0)).abs() < 1e-3, "mean {mean}");
        assert!(m.var_of("x").unwrap() > 0.0);
    }

    #[test]
    fn mixture_single_component_matches_component() {
        let a = CanonicalGaussian::normal(x(), 2.5, 0.25).unwrap();
        let mix = MixtureFactor::new(vec![(1.0, MixtureComponent::Canonical(a.clone()))]).unwrap();
        let m = mix.moment_match().unwrap();
        let direct = a.to_moment().unwrap();
        assert!((m.mean_of("x").unwrap() - direct.mean_of("x").unwrap()).abs() < 1e-12);
        assert!((m.var_of("x").unwrap() - direct.var_of("x").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mixture_evaluate_sums_components() {
        let a = CanonicalGaussian::normal(x(), -1.0, 1.0).unwrap();
        let b = CanonicalGaussian::normal(x(), 1.0, 1.0).unwrap();
        let mix = MixtureFactor::new(vec![
            (0.25, MixtureComponent::Canonical(a.clone())),
            (0.75, MixtureComponent::Canonical(b.clone())),
        ])
        .unwrap();
        let point = at(&[("x", 0.4)]);
        let want =
            0.25 * a.evaluate(&point).unwrap() + 0.75 * b.evaluate(&point).unwrap();
        assert!((mix.evaluate(&point).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn mixture_rejects_mismatched_scopes_and_bad_weights() {
        let a = CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap();
        let b = CanonicalGaussian::normal(y(), 0.0, 1.0).unwrap();
        let err = MixtureFactor::new(vec![
            (1.0, MixtureComponent::Canonical(a.clone())),
            (1.0, MixtureComponent::Canonical(b)),
        ])
        .unwrap_err();
        assert_eq!(err.code(), "ScopeMismatch");
        let err =
            MixtureFactor::new(vec![(0.0, MixtureComponent::Canonical(a))]).unwrap_err();
        assert_eq!(err.code(), "ConfigInvalid");
    }
}
