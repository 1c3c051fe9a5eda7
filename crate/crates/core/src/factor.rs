//! The representation-spanning factor type and its operation dispatch.
//!
//! [`Factor`] wraps every concrete representation behind one algebra:
//! multiplication, marginalization, reduction, division, addition,
//! evaluation and normalization. Mixed-representation products promote one
//! step toward the representation that can hold the result exactly (table
//! with Gaussian becomes conditional, Gaussian with box becomes truncated,
//! moment form becomes canonical, and so on); anything that has no exact
//! closed form under the promotion rules is an [`UnsupportedPair`] error
//! rather than a silent approximation.
//!
//! [`UnsupportedPair`]: crate::error::FactorError::UnsupportedPair

use crate::error::{FactorError, Result};
use crate::gaussian::{CanonicalGaussian, MixtureComponent, MixtureFactor, MomentGaussian};
use crate::hybrid::{
    indicator_to_conditional, intersect_bounds, pad_bounds, point_in_box, ConditionalFactor,
    IndicatorFactor, TruncatedGaussian,
};
use crate::sample::SampleFactor;
use crate::sparse::SparseTableFactor;
use crate::table::TableFactor;
use crate::variable::{index_tuples, Assignment, Scope, Variable};

/// Above this many cells, products of dense and sparse tables stay sparse.
const SPARSE_PROMOTION_CELLS: usize = 1 << 20;

/// Identifies a concrete representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReprTag {
    Table,
    Sparse,
    Canonical,
    Moment,
    Mixture,
    Sample,
    Conditional,
    Indicator,
    Truncated,
}

impl std::fmt::Display for ReprTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReprTag::Table => "table",
            ReprTag::Sparse => "sparse",
            ReprTag::Canonical => "canonical",
            ReprTag::Moment => "moment",
            ReprTag::Mixture => "mixture",
            ReprTag::Sample => "sample",
            ReprTag::Conditional => "conditional",
            ReprTag::Indicator => "indicator",
            ReprTag::Truncated => "truncated",
        })
    }
}

/// A factor in any representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Table(TableFactor),
    Sparse(SparseTableFactor),
    Canonical(CanonicalGaussian),
    Moment(MomentGaussian),
    Mixture(MixtureFactor),
    Sample(SampleFactor),
    Conditional(ConditionalFactor),
    Indicator(IndicatorFactor),
    Truncated(TruncatedGaussian),
}

impl From<TableFactor> for Factor {
    fn from(f: TableFactor) -> Self {
        Factor::Table(f)
    }
}

impl From<CanonicalGaussian> for Factor {
    fn from(f: CanonicalGaussian) -> Self {
        Factor::Canonical(f)
    }
}

impl From<MomentGaussian> for Factor {
    fn from(f: MomentGaussian) -> Self {
        Factor::Moment(f)
    }
}

impl Factor {
    pub fn repr(&self) -> ReprTag {
        match self {
            Factor::Table(_) => ReprTag::Table,
            Factor::Sparse(_) => ReprTag::Sparse,
            Factor::Canonical(_) => ReprTag::Canonical,
            Factor::Moment(_) => ReprTag::Moment,
            Factor::Mixture(_) => ReprTag::Mixture,
            Factor::Sample(_) => ReprTag::Sample,
            Factor::Conditional(_) => ReprTag::Conditional,
            Factor::Indicator(_) => ReprTag::Indicator,
            Factor::Truncated(_) => ReprTag::Truncated,
        }
    }

    pub fn repr_name(&self) -> &'static str {
        match self.repr() {
            ReprTag::Table => "table",
            ReprTag::Sparse => "sparse",
            ReprTag::Canonical => "canonical",
            ReprTag::Moment => "moment",
            ReprTag::Mixture => "mixture",
            ReprTag::Sample => "sample",
            ReprTag::Conditional => "conditional",
            ReprTag::Indicator => "indicator",
            ReprTag::Truncated => "truncated",
        }
    }

    pub fn scope(&self) -> &Scope {
        match self {
            Factor::Table(f) => f.scope(),
            Factor::Sparse(f) => f.scope(),
            Factor::Canonical(f) => f.scope(),
            Factor::Moment(f) => f.scope(),
            Factor::Mixture(f) => f.scope(),
            Factor::Sample(f) => f.scope(),
            Factor::Conditional(f) => f.scope(),
            Factor::Indicator(f) => f.scope(),
            Factor::Truncated(f) => f.scope(),
        }
    }

    /// A scalar (empty-scope) factor.
    pub fn scalar(value: f64) -> Result<Factor> {
        Ok(Factor::Table(TableFactor::scalar(value)?))
    }

    /// The zero function over a purely continuous scope, represented as an
    /// empty box.
    pub fn zero_continuous(scope: &Scope) -> Factor {
        Factor::Indicator(
            IndicatorFactor::region(scope.clone(), vec![(0.0, 0.0); scope.len()])
                .expect("empty box over continuous scope"),
        )
    }

    /// True for factors that are structurally the zero function.
    pub fn is_zero(&self) -> bool {
        match self {
            Factor::Indicator(i) => i.is_zero(),
            Factor::Table(t) => t.values().iter().all(|&v| v == 0.0),
            Factor::Sparse(s) => s.support_len() == 0,
            _ => false,
        }
    }

    /// True for representations that may serve as a branch of a conditional
    /// factor: purely continuous scope, closed under the branch operations.
    pub fn is_continuous_family(&self) -> bool {
        match self {
            Factor::Canonical(_) | Factor::Moment(_) | Factor::Mixture(_) | Factor::Truncated(_) => {
                true
            }
            Factor::Indicator(i) => !i.has_selectors(),
            _ => false,
        }
    }

    /// The value of an empty-scope factor, if this is one.
    pub fn as_scalar(&self) -> Option<f64> {
        if !self.scope().is_empty() {
            return None;
        }
        match self {
            Factor::Table(t) => Some(t.values()[0]),
            Factor::Sparse(s) => s.value_at(&[]).ok(),
            Factor::Canonical(c) => Some(c.g().exp()),
            _ => None,
        }
    }

    /// Natural log of the scalar value; errors if not a positive scalar.
    fn log_scalar(&self) -> Result<f64> {
        match self {
            Factor::Canonical(c) if c.scope().is_empty() => Ok(c.g()),
            _ => {
                let v = self.as_scalar().ok_or_else(|| {
                    FactorError::ScopeMismatch("expected a scalar factor".into())
                })?;
                if v <= 0.0 {
                    return Err(FactorError::DivisionByZero(
                        "division by a zero scalar".into(),
                    ));
                }
                Ok(v.ln())
            }
        }
    }

    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        match self {
            Factor::Table(f) => f.evaluate(at),
            Factor::Sparse(f) => f.evaluate(at),
            Factor::Canonical(f) => f.evaluate(at),
            Factor::Moment(f) => f.evaluate(at),
            Factor::Mixture(f) => f.evaluate(at),
            Factor::Sample(f) => f.evaluate(at),
            Factor::Conditional(f) => f.evaluate(at),
            Factor::Indicator(f) => f.evaluate(at),
            Factor::Truncated(f) => f.evaluate(at),
        }
    }

    /// Evaluation on a point laid out in this factor's own canonical scope
    /// order, discrete coordinates as exact indices. The hot path for
    /// particle reweighting.
    pub(crate) fn evaluate_point(&self, x: &[f64]) -> Result<f64> {
        match self {
            Factor::Table(t) => {
                let strides = t.strides();
                let mut flat = 0usize;
                for (j, &s) in strides.iter().enumerate() {
                    flat += x[j] as usize * s;
                }
                Ok(t.values()[flat])
            }
            Factor::Sparse(s) => {
                let idx: Vec<usize> = x.iter().map(|&v| v as usize).collect();
                s.value_at(&idx)
            }
            Factor::Canonical(c) => Ok(c.log_density(x).exp()),
            Factor::Moment(m) => Ok(m.to_canonical()?.log_density(x).exp()),
            Factor::Mixture(m) => {
                let mut total = 0.0;
                for (w, comp) in m.components() {
                    total += w
                        * match comp {
                            MixtureComponent::Canonical(c) => c.log_density(x).exp(),
                            MixtureComponent::Truncated(t) => {
                                if point_in_box(x, t.bounds()) {
                                    t.base().log_density(x).exp()
                                } else {
                                    0.0
                                }
                            }
                        };
                }
                Ok(total)
            }
            Factor::Truncated(t) => {
                if point_in_box(x, t.bounds()) {
                    Ok(t.base().log_density(x).exp())
                } else {
                    Ok(0.0)
                }
            }
            Factor::Indicator(ind) => {
                let scope = ind.scope();
                let disc = ind.discrete_scope();
                let strides = disc.strides()?;
                let mut flat = 0usize;
                for (k, v) in disc.iter().enumerate() {
                    let pos = scope.index_of(v.name()).expect("scope is the union");
                    flat += x[pos] as usize * strides[k];
                }
                let mut inside = true;
                for (k, v) in ind.continuous_scope().iter().enumerate() {
                    let pos = scope.index_of(v.name()).expect("scope is the union");
                    let (lo, hi) = ind.regions()[flat][k];
                    if !(x[pos] >= lo && x[pos] < hi) {
                        inside = false;
                    }
                }
                Ok(if inside { 1.0 } else { 0.0 })
            }
            Factor::Conditional(c) => {
                let scope = c.scope();
                let disc = c.discrete_scope();
                let strides = disc.strides()?;
                let mut flat = 0usize;
                for (k, v) in disc.iter().enumerate() {
                    let pos = scope.index_of(v.name()).expect("scope is the union");
                    flat += x[pos] as usize * strides[k];
                }
                let branch = &c.branches()[flat];
                let bx: Vec<f64> = branch
                    .scope()
                    .iter()
                    .map(|v| x[scope.index_of(v.name()).expect("scope is the union")])
                    .collect();
                branch.evaluate_point(&bx)
            }
            Factor::Sample(_) => Err(FactorError::Unsupported(
                "particle factors have no pointwise density".into(),
            )),
        }
    }

    /// Total mass (the factor integrated/summed over its whole scope).
    pub fn mass(&self) -> Result<f64> {
        match self {
            Factor::Table(t) => Ok(t.total_mass()),
            Factor::Sparse(s) => Ok(s.total_mass()),
            Factor::Sample(s) => Ok(s.mass()),
            Factor::Indicator(i) if i.is_zero() => Ok(0.0),
            Factor::Conditional(c) => {
                Ok(c.branch_mass_table()?.total_mass())
            }
            _ => self.log_mass().map(f64::exp),
        }
    }

    /// Natural log of the total mass; errors when the mass is zero, infinite
    /// or undefined for the representation.
    pub fn log_mass(&self) -> Result<f64> {
        match self {
            Factor::Table(t) => {
                let m = t.total_mass();
                if m <= 0.0 {
                    return Err(FactorError::ZeroMass("table mass is zero".into()));
                }
                Ok(m.ln())
            }
            Factor::Sparse(s) => {
                let m = s.total_mass();
                if m <= 0.0 {
                    return Err(FactorError::ZeroMass("table mass is zero".into()));
                }
                Ok(m.ln())
            }
            Factor::Canonical(c) => c.log_mass(),
            Factor::Moment(m) => Ok(m.log_weight()),
            Factor::Mixture(m) => m.log_mass(),
            Factor::Sample(s) => s.log_mass(),
            Factor::Conditional(c) => c.log_mass(),
            Factor::Indicator(_) => Err(FactorError::Unsupported(
                "indicator factors have unbounded mass".into(),
            )),
            Factor::Truncated(t) => t.log_mass(),
        }
    }

    /// Normalization: the factor divided by its total mass.
    pub fn normalize(&self) -> Result<Factor> {
        match self {
            Factor::Table(t) => Ok(Factor::Table(t.normalize()?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(s.normalize()?)),
            Factor::Sample(s) => Ok(Factor::Sample(s.normalize()?)),
            _ => {
                let lm = self.log_mass()?;
                self.scale_log(-lm)
            }
        }
    }

    /// Multiplies by `exp(log_c)`. Indicators only admit the trivial scale.
    pub fn scale_log(&self, log_c: f64) -> Result<Factor> {
        if log_c == 0.0 {
            return Ok(self.clone());
        }
        match self {
            Factor::Table(t) => Ok(Factor::Table(t.scale(log_c.exp())?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(s.scale(log_c.exp())?)),
            Factor::Canonical(c) => Ok(Factor::Canonical(c.scale_log(log_c))),
            Factor::Moment(m) => Ok(Factor::Moment(MomentGaussian::new(
                m.scope().clone(),
                m.mean().clone(),
                m.cov().clone(),
                m.log_weight() + log_c,
            )?)),
            Factor::Mixture(m) => Ok(Factor::Mixture(m.scale_log(log_c)?)),
            Factor::Sample(s) => Ok(Factor::Sample(s.scale_log(log_c))),
            Factor::Conditional(c) => Ok(Factor::Conditional(c.scale_log(log_c)?)),
            Factor::Indicator(i) if i.is_zero() => Ok(self.clone()),
            Factor::Indicator(_) => Err(FactorError::Unsupported(
                "cannot scale an indicator factor".into(),
            )),
            Factor::Truncated(t) => Ok(Factor::Truncated(t.scale_log(log_c))),
        }
    }

    /// Multiplies by a nonnegative constant.
    pub fn scale(&self, c: f64) -> Result<Factor> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(FactorError::ConfigInvalid(format!(
                "scale factor {c} must be finite and nonnegative"
            )));
        }
        if c > 0.0 {
            return self.scale_log(c.ln());
        }
        // Scaling to zero needs a structural zero.
        match self {
            Factor::Table(t) => Ok(Factor::Table(t.scale(0.0)?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(s.scale(0.0)?)),
            Factor::Conditional(c) => {
                let zero = Factor::zero_continuous(c.continuous_scope());
                Ok(Factor::Conditional(ConditionalFactor::new(
                    c.discrete_scope().clone(),
                    c.continuous_scope().clone(),
                    vec![zero; c.branches().len()],
                )?))
            }
            _ if self.scope().iter().all(Variable::is_continuous) => {
                Ok(Factor::zero_continuous(self.scope()))
            }
            other => Err(FactorError::Unsupported(format!(
                "cannot scale a {} factor to zero",
                other.repr_name()
            ))),
        }
    }

    fn unsupported_pair(op: &'static str, lhs: &Factor, rhs: &Factor) -> FactorError {
        FactorError::UnsupportedPair {
            op,
            lhs: lhs.repr_name(),
            rhs: rhs.repr_name(),
        }
    }

    /// Multiplication, with one-step promotion between representations.
    pub fn multiply(&self, other: &Factor) -> Result<Factor> {
        use Factor::*;

        // Scalars scale the other operand regardless of representation.
        if let Some(v) = self.as_scalar() {
            return other.scale(v);
        }
        if let Some(v) = other.as_scalar() {
            return self.scale(v);
        }
        // Structural zeros annihilate. The union scope decides the shape.
        if self.is_zero() || other.is_zero() {
            return zero_product(self, other);
        }

        match (self, other) {
            (Table(a), Table(b)) => Ok(Table(a.multiply(b)?)),
            (Sparse(a), Sparse(b)) => Ok(Sparse(a.multiply(b)?)),
            (Table(t), Sparse(s)) | (Sparse(s), Table(t)) => {
                let union = t.scope().union(s.scope())?;
                if union.table_len()? > SPARSE_PROMOTION_CELLS {
                    Ok(Sparse(SparseTableFactor::from_dense(t).multiply(s)?))
                } else {
                    Ok(Table(t.multiply(&s.to_dense()?)?))
                }
            }

            (Canonical(a), Canonical(b)) => Ok(Canonical(a.multiply(b)?)),
            (Canonical(a), Moment(b)) | (Moment(b), Canonical(a)) => {
                Ok(Canonical(a.multiply(&b.to_canonical()?)?))
            }
            (Moment(a), Moment(b)) => Ok(Canonical(a.to_canonical()?.multiply(&b.to_canonical()?)?)),

            (Truncated(t), Canonical(c)) | (Canonical(c), Truncated(t)) => {
                truncated_or_zero(t.multiply_canonical(c), self, other)
            }
            (Truncated(t), Moment(m)) | (Moment(m), Truncated(t)) => {
                truncated_or_zero(t.multiply_canonical(&m.to_canonical()?), self, other)
            }
            (Truncated(a), Truncated(b)) => truncated_or_zero(a.multiply_truncated(b), self, other),

            (Canonical(c), Indicator(i)) | (Indicator(i), Canonical(c)) if !i.has_selectors() => {
                truncate_with_box(c, i, self, other)
            }
            (Moment(m), Indicator(i)) | (Indicator(i), Moment(m)) if !i.has_selectors() => {
                truncate_with_box(&m.to_canonical()?, i, self, other)
            }
            (Truncated(t), Indicator(i)) | (Indicator(i), Truncated(t)) if !i.has_selectors() => {
                let union = t.scope().union(i.continuous_scope())?;
                if union != *t.scope() {
                    // Pad the base with zero precision on the new axes.
                    let (k, h) = t.base().embed(&union)?;
                    let base = CanonicalGaussian::new(union.clone(), k, h, t.base().g())?;
                    let a = pad_bounds(t.scope(), t.bounds(), &union);
                    let b = pad_bounds(i.continuous_scope(), i.sole_region()?, &union);
                    truncated_or_zero(
                        TruncatedGaussian::new_lazy(base, intersect_bounds(&a, &b)),
                        self,
                        other,
                    )
                } else {
                    truncated_or_zero(
                        t.multiply_box(i.continuous_scope(), i.sole_region()?),
                        self,
                        other,
                    )
                }
            }
            (Indicator(a), Indicator(b)) if !a.has_selectors() && !b.has_selectors() => {
                let union = a.continuous_scope().union(b.continuous_scope())?;
                let ra = pad_bounds(a.continuous_scope(), a.sole_region()?, &union);
                let rb = pad_bounds(b.continuous_scope(), b.sole_region()?, &union);
                Ok(Indicator(IndicatorFactor::region(
                    union,
                    intersect_bounds(&ra, &rb),
                )?))
            }

            (Mixture(m), rhs) if rhs.is_continuous_family() => mixture_multiply(m, rhs, self, other),
            (lhs, Mixture(m)) if lhs.is_continuous_family() => mixture_multiply(m, lhs, self, other),

            // A discrete table against a continuous factor forms a
            // conditional with identical scaled branches.
            (Table(t), rhs) if rhs.is_continuous_family() => table_times_continuous(t, rhs),
            (lhs, Table(t)) if lhs.is_continuous_family() => table_times_continuous(t, lhs),
            (Sparse(s), rhs) if rhs.is_continuous_family() => {
                table_times_continuous(&s.to_dense()?, rhs)
            }
            (lhs, Sparse(s)) if lhs.is_continuous_family() => {
                table_times_continuous(&s.to_dense()?, lhs)
            }

            // Particle arms outrank the conditional arms: a conditional (or
            // any evaluable density) against samples is a reweight or an
            // ancestral extension, never a branch-wise table product.
            (Sample(s), rhs) => sample_multiply(s, rhs, self, other),
            (lhs, Sample(s)) => sample_multiply(s, lhs, self, other),

            (Conditional(c), rhs) => Ok(Conditional(c.multiply(rhs)?)),
            (lhs, Conditional(c)) => Ok(Conditional(c.multiply(lhs)?)),
            (Indicator(i), rhs) if i.has_selectors() => {
                Ok(Conditional(indicator_to_conditional(i)?.multiply(rhs)?))
            }
            (lhs, Indicator(i)) if i.has_selectors() => {
                Ok(Conditional(indicator_to_conditional(i)?.multiply(lhs)?))
            }

            _ => Err(Factor::unsupported_pair("multiply", self, other)),
        }
    }

    /// Division; the divisor's scope must be covered by the dividend's.
    pub fn divide(&self, other: &Factor) -> Result<Factor> {
        use Factor::*;
        if !other.scope().is_subset_of(self.scope()) {
            return Err(FactorError::ScopeMismatch(format!(
                "divisor scope {} is not a subset of {}",
                other.scope(),
                self.scope()
            )));
        }
        // Scalar divisors rescale; a zero scalar is a hard error.
        if other.scope().is_empty() {
            let log_v = other.log_scalar()?;
            return self.scale_log(-log_v);
        }
        if self.is_zero() {
            return Ok(self.clone());
        }
        match (self, other) {
            (Table(a), Table(b)) => Ok(Table(a.divide(b)?)),
            (Sparse(a), Sparse(b)) => Ok(Sparse(a.divide(b)?)),
            (Table(a), Sparse(b)) => Ok(Table(a.divide(&b.to_dense()?)?)),
            (Sparse(a), Table(b)) => Ok(Sparse(a.divide(&SparseTableFactor::from_dense(b))?)),
            (Canonical(a), Canonical(b)) => Ok(Canonical(a.divide(b)?)),
            (Canonical(a), Moment(b)) => Ok(Canonical(a.divide(&b.to_canonical()?)?)),
            (Moment(a), Canonical(b)) => Ok(Canonical(a.to_canonical()?.divide(b)?)),
            (Moment(a), Moment(b)) => {
                Ok(Canonical(a.to_canonical()?.divide(&b.to_canonical()?)?))
            }
            (Truncated(t), Canonical(c)) => {
                let base = t.base().divide(c)?;
                truncated_or_zero(
                    TruncatedGaussian::new_lazy(base, t.bounds().clone()),
                    self,
                    other,
                )
            }
            (Truncated(t), Moment(m)) => {
                let base = t.base().divide(&m.to_canonical()?)?;
                truncated_or_zero(
                    TruncatedGaussian::new_lazy(base, t.bounds().clone()),
                    self,
                    other,
                )
            }
            (Mixture(m), Canonical(_) | Moment(_)) => {
                let mut comps = Vec::with_capacity(m.len());
                for (w, comp) in m.components() {
                    let f: Factor = match comp {
                        MixtureComponent::Canonical(c) => Canonical(c.clone()),
                        MixtureComponent::Truncated(t) => Truncated(t.clone()),
                    };
                    match f.divide(other)? {
                        Canonical(c) => comps.push((*w, MixtureComponent::Canonical(c))),
                        Truncated(t) => comps.push((*w, MixtureComponent::Truncated(t))),
                        _ => return Err(Factor::unsupported_pair("divide", self, other)),
                    }
                }
                Ok(Mixture(MixtureFactor::new(comps)?))
            }
            _ => Err(Factor::unsupported_pair("divide", self, other)),
        }
    }

    /// Marginalizes the named variables out.
    pub fn sum_out(&self, names: &[&str]) -> Result<Factor> {
        if names.is_empty() {
            return Ok(self.clone());
        }
        for n in names {
            if !self.scope().contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }
        if self.is_zero() {
            return zero_over(&self.scope().without(names));
        }
        match self {
            Factor::Table(t) => Ok(Factor::Table(t.sum_out(names)?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(s.sum_out(names)?)),
            Factor::Canonical(c) => Ok(Factor::Canonical(c.sum_out(names)?)),
            Factor::Moment(m) => Ok(Factor::Canonical(m.to_canonical()?.sum_out(names)?)),
            Factor::Mixture(m) => {
                if names.len() == self.scope().len() {
                    return Ok(Factor::Canonical(CanonicalGaussian::scalar_log(
                        m.log_mass()?,
                    )));
                }
                let mut comps = Vec::with_capacity(m.len());
                for (w, comp) in m.components() {
                    let f: Factor = match comp {
                        MixtureComponent::Canonical(c) => Factor::Canonical(c.clone()),
                        MixtureComponent::Truncated(t) => Factor::Truncated(t.clone()),
                    };
                    match f.sum_out(names)? {
                        Factor::Canonical(c) => comps.push((*w, MixtureComponent::Canonical(c))),
                        Factor::Truncated(t) => comps.push((*w, MixtureComponent::Truncated(t))),
                        _ => {
                            return Err(FactorError::Unsupported(
                                "mixture component did not marginalize to a Gaussian form".into(),
                            ))
                        }
                    }
                }
                Ok(Factor::Mixture(MixtureFactor::new(comps)?))
            }
            Factor::Sample(s) => s.sum_out(names),
            Factor::Conditional(c) => c.sum_out(names),
            Factor::Indicator(_) => Err(FactorError::Unsupported(
                "indicator factors have unbounded integrals".into(),
            )),
            Factor::Truncated(t) => t.sum_out(names),
        }
    }

    /// Conditions on the evidence entries whose variables are in scope;
    /// foreign evidence is ignored.
    pub fn reduce(&self, evidence: &Assignment) -> Result<Factor> {
        match self {
            Factor::Table(t) => Ok(Factor::Table(t.reduce(evidence)?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(s.reduce(evidence)?)),
            Factor::Canonical(c) => Ok(Factor::Canonical(c.reduce(evidence)?)),
            Factor::Moment(m) => Ok(Factor::Canonical(m.to_canonical()?.reduce(evidence)?)),
            Factor::Mixture(m) => {
                let mut comps = Vec::new();
                let mut dropped_mass = false;
                for (w, comp) in m.components() {
                    let f: Factor = match comp {
                        MixtureComponent::Canonical(c) => Factor::Canonical(c.clone()),
                        MixtureComponent::Truncated(t) => Factor::Truncated(t.clone()),
                    };
                    match f.reduce(evidence)? {
                        Factor::Canonical(c) if !c.scope().is_empty() => {
                            comps.push((*w, MixtureComponent::Canonical(c)))
                        }
                        Factor::Truncated(t) => comps.push((*w, MixtureComponent::Truncated(t))),
                        reduced if reduced.is_zero() => dropped_mass = true,
                        reduced => {
                            // Fully reduced to scalars: sum the values.
                            let total: f64 = m
                                .components()
                                .iter()
                                .map(|(w, c)| Ok(w * c_eval(c, evidence)?))
                                .sum::<Result<f64>>()?;
                            let _ = reduced;
                            return Factor::scalar(total);
                        }
                    }
                }
                if comps.is_empty() {
                    if dropped_mass {
                        return zero_over(&remaining_scope(self.scope(), evidence));
                    }
                    return Err(FactorError::ZeroMass(
                        "evidence lies outside every mixture component".into(),
                    ));
                }
                Ok(Factor::Mixture(MixtureFactor::new(comps)?))
            }
            Factor::Sample(s) => Ok(Factor::Sample(s.reduce(evidence)?)),
            Factor::Conditional(c) => c.reduce(evidence),
            Factor::Indicator(i) => i.reduce(evidence),
            Factor::Truncated(t) => t.reduce(evidence),
        }
    }

    /// Pointwise addition.
    pub fn add(&self, other: &Factor) -> Result<Factor> {
        use Factor::*;
        if self.is_zero() {
            return Ok(other.clone());
        }
        if other.is_zero() {
            return Ok(self.clone());
        }
        if self.scope() != other.scope() {
            return Err(FactorError::ScopeMismatch(format!(
                "cannot add factors over {} and {}",
                self.scope(),
                other.scope()
            )));
        }
        match (self, other) {
            (Table(a), Table(b)) => Ok(Table(a.add(b)?)),
            (Sparse(a), Sparse(b)) => Ok(Sparse(a.add(b)?)),
            (Table(a), Sparse(b)) | (Sparse(b), Table(a)) => Ok(Table(a.add(&b.to_dense()?)?)),
            (Sample(a), Sample(b)) => Ok(Sample(a.add(b)?)),
            (Conditional(a), Conditional(b)) => {
                if a.discrete_scope() != b.discrete_scope() {
                    return Err(FactorError::ScopeMismatch(
                        "conditional factors disagree on selectors".into(),
                    ));
                }
                let branches: Result<Vec<Factor>> = a
                    .branches()
                    .iter()
                    .zip(b.branches())
                    .map(|(x, y)| x.add(y))
                    .collect();
                Ok(Conditional(ConditionalFactor::new(
                    a.discrete_scope().clone(),
                    a.continuous_scope().clone(),
                    branches?,
                )?))
            }
            (a, b) => {
                // Gaussian-family sums become mixtures.
                let mut comps = Vec::new();
                for f in [a, b] {
                    match f {
                        Canonical(c) => comps.push((1.0, MixtureComponent::Canonical(c.clone()))),
                        Moment(m) => {
                            comps.push((1.0, MixtureComponent::Canonical(m.to_canonical()?)))
                        }
                        Truncated(t) => comps.push((1.0, MixtureComponent::Truncated(t.clone()))),
                        Mixture(m) => comps.extend(m.components().iter().cloned()),
                        _ => return Err(Factor::unsupported_pair("add", self, other)),
                    }
                }
                Ok(Mixture(MixtureFactor::new(comps)?))
            }
        }
    }

    /// Renames variables; mapping entries are `(old, new)`.
    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<Factor> {
        if mapping.is_empty() {
            return Ok(self.clone());
        }
        match self {
            Factor::Table(t) => Ok(Factor::Table(rename_table(t, mapping)?)),
            Factor::Sparse(s) => Ok(Factor::Sparse(SparseTableFactor::from_dense(
                &rename_table(&s.to_dense()?, mapping)?,
            ))),
            Factor::Canonical(c) => Ok(Factor::Canonical(c.rename(mapping)?)),
            Factor::Moment(m) => {
                let c = m.to_canonical()?.rename(mapping)?;
                Ok(Factor::Moment(c.to_moment()?))
            }
            Factor::Mixture(m) => {
                let comps: Result<Vec<(f64, MixtureComponent)>> = m
                    .components()
                    .iter()
                    .map(|(w, comp)| {
                        Ok((
                            *w,
                            match comp {
                                MixtureComponent::Canonical(c) => {
                                    MixtureComponent::Canonical(c.rename(mapping)?)
                                }
                                MixtureComponent::Truncated(t) => {
                                    MixtureComponent::Truncated(t.rename(mapping)?)
                                }
                            },
                        ))
                    })
                    .collect();
                Ok(Factor::Mixture(MixtureFactor::new(comps?)?))
            }
            Factor::Sample(s) => Ok(Factor::Sample(s.rename(mapping)?)),
            Factor::Conditional(c) => Ok(Factor::Conditional(c.rename(mapping)?)),
            Factor::Indicator(i) => Ok(Factor::Indicator(i.rename(mapping)?)),
            Factor::Truncated(t) => Ok(Factor::Truncated(t.rename(mapping)?)),
        }
    }
}

fn c_eval(comp: &MixtureComponent, at: &Assignment) -> Result<f64> {
    comp.evaluate(at)
}

fn remaining_scope(scope: &Scope, evidence: &Assignment) -> Scope {
    let fixed: Vec<&str> = scope
        .iter()
        .filter(|v| evidence.contains(v.name()))
        .map(|v| v.name())
        .collect();
    scope.without(&fixed)
}

/// The structural zero function over an arbitrary scope.
fn zero_over(scope: &Scope) -> Result<Factor> {
    if scope.is_empty() {
        return Factor::scalar(0.0);
    }
    if scope.iter().all(Variable::is_continuous) {
        return Ok(Factor::zero_continuous(scope));
    }
    if scope.iter().all(|v| v.is_discrete()) {
        return Ok(Factor::Table(TableFactor::constant(scope.clone(), 0.0)?));
    }
    let (disc, cont) = scope.split_by_kind();
    let zero = Factor::zero_continuous(&cont);
    Ok(Factor::Conditional(ConditionalFactor::new(
        disc.clone(),
        cont,
        vec![zero; disc.table_len()?],
    )?))
}

/// The zero function over the union scope of a product.
fn zero_product(a: &Factor, b: &Factor) -> Result<Factor> {
    zero_over(&a.scope().union(b.scope())?)
}

/// Wraps a truncated-product result, turning numerically empty boxes into
/// structural zeros.
fn truncated_or_zero(
    r: Result<TruncatedGaussian>,
    a: &Factor,
    b: &Factor,
) -> Result<Factor> {
    match r {
        Ok(t) => {
            if t.is_unbounded() {
                Ok(Factor::Canonical(t.base().clone()))
            } else {
                Ok(Factor::Truncated(t))
            }
        }
        Err(FactorError::ZeroMass(_)) => zero_product(a, b),
        Err(e) => Err(e),
    }
}

fn truncate_with_box(
    c: &CanonicalGaussian,
    i: &IndicatorFactor,
    a: &Factor,
    b: &Factor,
) -> Result<Factor> {
    let union = c.scope().union(i.continuous_scope())?;
    let base = if union == *c.scope() {
        c.clone()
    } else {
        let (k, h) = c.embed(&union)?;
        CanonicalGaussian::new(union.clone(), k, h, c.g())?
    };
    let bounds = pad_bounds(i.continuous_scope(), i.sole_region()?, &union);
    truncated_or_zero(TruncatedGaussian::new_lazy(base, bounds), a, b)
}

fn mixture_multiply(m: &MixtureFactor, rhs: &Factor, a: &Factor, b: &Factor) -> Result<Factor> {
    let mut comps = Vec::with_capacity(m.len());
    for (w, comp) in m.components() {
        let f: Factor = match comp {
            MixtureComponent::Canonical(c) => Factor::Canonical(c.clone()),
            MixtureComponent::Truncated(t) => Factor::Truncated(t.clone()),
        };
        match f.multiply(rhs)? {
            Factor::Canonical(c) => comps.push((*w, MixtureComponent::Canonical(c))),
            Factor::Truncated(t) => comps.push((*w, MixtureComponent::Truncated(t))),
            prod if prod.is_zero() => {}
            _ => return Err(Factor::unsupported_pair("multiply", a, b)),
        }
    }
    if comps.is_empty() {
        return zero_product(a, b);
    }
    Ok(Factor::Mixture(MixtureFactor::new(comps)?))
}

/// Discrete table times continuous factor: a conditional whose branches are
/// the continuous factor scaled by each cell.
fn table_times_continuous(t: &TableFactor, cont: &Factor) -> Result<Factor> {
    let mut branches = Vec::with_capacity(t.values().len());
    for &w in t.values() {
        branches.push(if w == 0.0 {
            Factor::zero_continuous(cont.scope())
        } else {
            cont.scale_log(w.ln())?
        });
    }
    Ok(Factor::Conditional(ConditionalFactor::new(
        t.scope().clone(),
        cont.scope().clone(),
        branches,
    )?))
}

fn sample_multiply(s: &SampleFactor, rhs: &Factor, a: &Factor, b: &Factor) -> Result<Factor> {
    if matches!(rhs, Factor::Sample(_)) {
        return Err(Factor::unsupported_pair("multiply", a, b));
    }
    if rhs.scope().is_subset_of(s.scope()) {
        return Ok(Factor::Sample(s.reweight(rhs)?));
    }
    match rhs {
        Factor::Canonical(_) | Factor::Moment(_) | Factor::Truncated(_) | Factor::Conditional(_) => {
            Ok(Factor::Sample(s.extend(rhs)?))
        }
        _ => Err(Factor::unsupported_pair("multiply", a, b)),
    }
}

fn rename_table(t: &TableFactor, mapping: &[(&str, &str)]) -> Result<TableFactor> {
    let map_name = |n: &str| -> String {
        mapping
            .iter()
            .find(|(old, _)| *old == n)
            .map_or(n.to_string(), |(_, new)| new.to_string())
    };
    let vars: Vec<Variable> = t
        .scope()
        .iter()
        .map(|v| Variable::discrete(map_name(v.name()), v.cardinality().expect("discrete")))
        .collect();
    let scope = Scope::new(vars)?;
    if scope.len() != t.scope().len() {
        return Err(FactorError::ConfigInvalid(
            "rename collapses distinct variables".into(),
        ));
    }
    let new_strides = scope.strides()?;
    let positions: Vec<usize> = t
        .scope()
        .iter()
        .map(|v| scope.index_of(&map_name(v.name())).unwrap())
        .collect();
    let mut values = vec![0.0f64; t.values().len()];
    for (flat, idx) in index_tuples(t.scope()).enumerate() {
        let mut nf = 0usize;
        for (pos, &i) in idx.iter().enumerate() {
            nf += i * new_strides[positions[pos]];
        }
        values[nf] = t.values()[flat];
    }
    TableFactor::new(scope, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variable::Value;
    use nalgebra::{DMatrix, DVector};

    fn b() -> Variable {
        Variable::binary("b")
    }

    fn x() -> Variable {
        Variable::continuous("x")
    }

    fn table_b(p: f64) -> Factor {
        Factor::Table(
            TableFactor::new(Scope::new([b()]).unwrap(), vec![1.0 - p, p]).unwrap(),
        )
    }

    #[test]
    fn table_times_gaussian_promotes_to_conditional() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 1.0, 2.0).unwrap());
        let prod = table_b(0.25).multiply(&g).unwrap();
        assert_eq!(prod.repr(), ReprTag::Conditional);
        let mut at = Assignment::new();
        at.set("b", 1usize);
        at.set("x", 0.5);
        let mut gat = Assignment::new();
        gat.set("x", 0.5);
        let want = 0.25 * g.evaluate(&gat).unwrap();
        assert!((prod.evaluate(&at).unwrap() - want).abs() < 1e-15);
        // Mass splits 0.75 / 0.25.
        assert!((prod.mass().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_times_box_promotes_to_truncated() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        let ind = Factor::Indicator(
            IndicatorFactor::region(Scope::new([x()]).unwrap(), vec![(0.0, f64::INFINITY)])
                .unwrap(),
        );
        let prod = g.multiply(&ind).unwrap();
        assert_eq!(prod.repr(), ReprTag::Truncated);
        assert!((prod.mass().unwrap() - 0.5).abs() < 1e-12);
        // Disjoint boxes annihilate.
        let left = Factor::Indicator(
            IndicatorFactor::region(
                Scope::new([x()]).unwrap(),
                vec![(f64::NEG_INFINITY, 0.0)],
            )
            .unwrap(),
        );
        let dead = prod.multiply(&left).unwrap();
        assert!(dead.is_zero());
        assert_eq!(dead.mass().unwrap(), 0.0);
    }

    #[test]
    fn zero_table_cell_becomes_zero_branch() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        let prod = table_b(1.0).multiply(&g).unwrap();
        let Factor::Conditional(c) = &prod else { panic!("expected conditional") };
        assert!(c.branches()[0].is_zero());
        assert!((prod.mass().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_factors_scale_anything() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        let half = Factor::scalar(0.5).unwrap();
        let scaled = g.multiply(&half).unwrap();
        assert!((scaled.mass().unwrap() - 0.5).abs() < 1e-12);
        let zero = Factor::scalar(0.0).unwrap();
        assert!(g.multiply(&zero).unwrap().is_zero());
    }

    #[test]
    fn divide_by_scalar_rescales() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        let s = Factor::scalar(4.0).unwrap();
        let q = g.divide(&s).unwrap();
        assert!((q.mass().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(
            g.divide(&Factor::scalar(0.0).unwrap()).unwrap_err().code(),
            "DivisionByZero"
        );
    }

    #[test]
    fn normalize_unifies_across_representations() {
        let t = Factor::Table(
            TableFactor::new(Scope::new([b()]).unwrap(), vec![1.0, 3.0]).unwrap(),
        );
        let n = t.normalize().unwrap();
        assert!((n.mass().unwrap() - 1.0).abs() < 1e-12);
        let g = Factor::Canonical(
            CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap().scale_log(2.0),
        );
        let n = g.normalize().unwrap();
        assert!((n.mass().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn addition_of_gaussians_builds_mixture() {
        let a = Factor::Canonical(CanonicalGaussian::normal(x(), -1.0, 1.0).unwrap());
        let bb = Factor::Canonical(CanonicalGaussian::normal(x(), 1.0, 1.0).unwrap());
        let sum = a.add(&bb).unwrap();
        assert_eq!(sum.repr(), ReprTag::Mixture);
        assert!((sum.mass().unwrap() - 2.0).abs() < 1e-12);
        // Adding zero is the identity.
        let z = Factor::zero_continuous(&Scope::new([x()]).unwrap());
        assert_eq!(a.add(&z).unwrap(), a);
    }

    #[test]
    fn dense_sparse_products_pick_sensible_representation() {
        let t = TableFactor::new(Scope::new([b()]).unwrap(), vec![0.4, 0.6]).unwrap();
        let s = SparseTableFactor::new(
            Scope::new([Variable::binary("c")]).unwrap(),
            vec![(vec![1], 1.0)],
        )
        .unwrap();
        let prod = Factor::Table(t).multiply(&Factor::Sparse(s)).unwrap();
        // Small scopes densify.
        assert_eq!(prod.repr(), ReprTag::Table);
        let mut at = Assignment::new();
        at.set("b", 1usize);
        at.set("c", 0usize);
        assert_eq!(prod.evaluate(&at).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_point_agrees_with_assignment_evaluate() {
        let t = TableFactor::new(
            Scope::new([b(), Variable::discrete("c", 3)]).unwrap(),
            vec![0.1, 0.2, 0.3, 0.05, 0.15, 0.2],
        )
        .unwrap();
        let f = Factor::Table(t);
        let mut at = Assignment::new();
        at.set("b", 1usize);
        at.set("c", 2usize);
        assert_eq!(
            f.evaluate_point(&[1.0, 2.0]).unwrap(),
            f.evaluate(&at).unwrap()
        );

        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.3, 0.9).unwrap());
        let mut gat = Assignment::new();
        gat.set("x", -0.2);
        assert!(
            (g.evaluate_point(&[-0.2]).unwrap() - g.evaluate(&gat).unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn rename_table_permutes_and_relabels() {
        let t = TableFactor::new(
            Scope::new([Variable::binary("a"), Variable::binary("z")]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        // "a" -> "zz" sorts after "z", so the axes swap.
        let r = Factor::Table(t).rename(&[("a", "zz")]).unwrap();
        assert_eq!(r.scope().names(), vec!["z", "zz"]);
        let mut at = Assignment::new();
        at.set("zz", Value::Index(1));
        at.set("z", Value::Index(0));
        assert_eq!(r.evaluate(&at).unwrap(), 3.0);
    }

    #[test]
    fn sample_dispatch_reweights_or_extends() {
        let prior = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        let s = Factor::Sample(
            SampleFactor::sample_from(&prior, 20_000, 5, "test").unwrap(),
        );
        // Subset scope: reweight.
        let lik = Factor::Canonical(CanonicalGaussian::normal(x(), 1.0, 1.0).unwrap());
        let post = s.multiply(&lik).unwrap();
        assert_eq!(post.repr(), ReprTag::Sample);
        assert_eq!(post.scope().names(), vec!["x"]);
        // New variables: extend.
        let trans = Factor::Canonical(
            CanonicalGaussian::linear_conditional(
                &[Variable::continuous("y")],
                &[x()],
                &DMatrix::from_element(1, 1, 1.0),
                &DVector::from_element(1, 0.0),
                &DMatrix::from_element(1, 1, 1.0),
            )
            .unwrap(),
        );
        let joint = s.multiply(&trans).unwrap();
        assert_eq!(joint.scope().names(), vec!["x", "y"]);
        // Samples never multiply samples.
        assert_eq!(s.multiply(&s).unwrap_err().code(), "UnsupportedPair");
    }

    #[test]
    fn conditional_times_indicator_with_selectors_joins_selectors() {
        let sv = Variable::discrete("s", 2);
        let cond = ConditionalFactor::new(
            Scope::new([sv]).unwrap(),
            Scope::new([x()]).unwrap(),
            vec![
                Factor::Canonical(CanonicalGaussian::normal(x(), -1.0, 1.0).unwrap()),
                Factor::Canonical(CanonicalGaussian::normal(x(), 1.0, 1.0).unwrap()),
            ],
        )
        .unwrap();
        let gate = Variable::discrete("g", 2);
        let ind = IndicatorFactor::new(
            Scope::new([gate]).unwrap(),
            Scope::new([x()]).unwrap(),
            vec![vec![(f64::NEG_INFINITY, 0.0)], vec![(0.0, f64::INFINITY)]],
        )
        .unwrap();
        let prod = Factor::Conditional(cond)
            .multiply(&Factor::Indicator(ind))
            .unwrap();
        assert_eq!(prod.repr(), ReprTag::Conditional);
        assert_eq!(prod.scope().names(), vec!["g", "s", "x"]);
        assert!((prod.mass().unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn sum_out_checks_scope_membership() {
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        assert_eq!(g.sum_out(&["nope"]).unwrap_err().code(), "NotInScope");
    }

    #[test]
    fn zero_factors_propagate_through_ops() {
        let z = Factor::zero_continuous(&Scope::new([x()]).unwrap());
        let g = Factor::Canonical(CanonicalGaussian::normal(x(), 0.0, 1.0).unwrap());
        assert!(z.multiply(&g).unwrap().is_zero());
        assert!(z.sum_out(&["x"]).unwrap().as_scalar().unwrap() == 0.0);
        let mut at = Assignment::new();
        at.set("x", 1.0);
        assert_eq!(z.evaluate(&at).unwrap(), 0.0);
        assert_eq!(z.normalize().unwrap_err().code(), "Unsupported");
    }
}
