//! Weighted-particle factors.
//!
//! A [`SampleFactor`] approximates a nonnegative function by weighted
//! points: `f ~ exp(log_scale) * sum_i w_i * delta(x - x_i)`. The running
//! `log_scale` keeps long reweighting chains away from floating-point
//! underflow without touching relative weights. Total mass `sum_i w_i`
//! estimates the integral of the represented function, so multiplication is
//! importance reweighting, marginalization drops columns, and conditional
//! factors extend particles ancestrally.
//!
//! Every stochastic operation draws from a substream derived from the
//! factor's seed cursor, and `seed_trace` records the lineage, so a run is
//! reproducible from the initial seed alone.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FactorError, Result};
use crate::factor::Factor;
use crate::gaussian::{
    chol_log_det, chol_solve_vec, cholesky_guarded, CanonicalGaussian, MomentGaussian, LN_2PI,
};
use crate::hybrid::{normal_cdf, TruncatedGaussian};
use crate::rng::{rng_from, substream_seed};
use crate::table::TableFactor;
use crate::variable::{Assignment, Scope, Variable};

/// Rejection-sampling budget per requested draw before giving up on a
/// correlated truncated target.
const REJECTION_TRIES_PER_DRAW: usize = 1_000;

/// A factor represented by weighted particles.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFactor {
    scope: Scope,
    values: Vec<f64>,
    weights: Vec<f64>,
    log_scale: f64,
    seed_cursor: u64,
    seed_trace: Vec<String>,
}

impl SampleFactor {
    /// Builds a particle factor from raw rows. `values` is row-major with
    /// one column per scope variable in canonical order; discrete columns
    /// hold exact indices.
    pub fn new(scope: Scope, values: Vec<f64>, weights: Vec<f64>, seed: u64) -> Result<Self> {
        let d = scope.len();
        if d == 0 {
            return Err(FactorError::ConfigInvalid(
                "particle factors need a nonempty scope".into(),
            ));
        }
        if weights.is_empty() {
            return Err(FactorError::ConfigInvalid("no particles given".into()));
        }
        if values.len() != weights.len() * d {
            return Err(FactorError::ConfigInvalid(format!(
                "{} values do not form {} rows of {} columns",
                values.len(),
                weights.len(),
                d
            )));
        }
        for w in &weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(FactorError::ConfigInvalid(format!(
                    "particle weight {w} is not a finite nonnegative number"
                )));
            }
        }
        for (j, v) in scope.iter().enumerate() {
            for row in 0..weights.len() {
                let x = values[row * d + j];
                if !x.is_finite() {
                    return Err(FactorError::ConfigInvalid(format!(
                        "particle value for `{}` is not finite",
                        v.name()
                    )));
                }
                if let Some(card) = v.cardinality() {
                    if x.fract() != 0.0 || x < 0.0 || x >= card as f64 {
                        return Err(FactorError::IndexOutOfRange(format!(
                            "particle value {x} is not a valid index of `{}` (cardinality {card})",
                            v.name()
                        )));
                    }
                }
            }
        }
        Ok(SampleFactor {
            scope,
            values,
            weights,
            log_scale: 0.0,
            seed_cursor: substream_seed(seed, "cursor"),
            seed_trace: vec![format!("raw:seed={seed}")],
        })
    }

    /// Draws `n` i.i.d. particles from a normalizable factor; each particle
    /// gets weight `mass / n` so the represented mass is preserved.
    pub fn sample_from(f: &Factor, n: usize, seed: u64, label: &str) -> Result<Self> {
        if n == 0 {
            return Err(FactorError::ConfigInvalid("cannot draw zero particles".into()));
        }
        let scope = f.scope().clone();
        if scope.is_empty() {
            return Err(FactorError::ConfigInvalid(
                "cannot sample an empty-scope factor".into(),
            ));
        }
        let mut rng = rng_from(substream_seed(seed, label));
        let d = scope.len();
        let mut values = vec![0.0f64; n * d];
        match f {
            Factor::Table(t) => {
                let cum = cumulative(t.values())?;
                for i in 0..n {
                    let flat = draw_cumulative(&cum, &mut rng);
                    write_indices(&scope, flat, &mut values[i * d..(i + 1) * d])?;
                }
            }
            Factor::Sparse(s) => {
                let entries: Vec<(Vec<usize>, f64)> = s.iter_entries().collect();
                let cum = cumulative(&entries.iter().map(|e| e.1).collect::<Vec<_>>())?;
                for i in 0..n {
                    let pick = draw_cumulative(&cum, &mut rng);
                    for (j, &idx) in entries[pick].0.iter().enumerate() {
                        values[i * d + j] = idx as f64;
                    }
                }
            }
            Factor::Canonical(_) | Factor::Moment(_) | Factor::Truncated(_) | Factor::Mixture(_) => {
                for i in 0..n {
                    let row = draw_continuous(f, &mut rng)?;
                    values[i * d..(i + 1) * d].copy_from_slice(&row);
                }
            }
            Factor::Conditional(c) => {
                let masses = c.branch_mass_table()?;
                let cum = cumulative(masses.values())?;
                let disc = c.discrete_scope();
                let cont = c.continuous_scope();
                let disc_cols: Vec<usize> =
                    disc.iter().map(|v| scope.index_of(v.name()).unwrap()).collect();
                let cont_cols: Vec<usize> =
                    cont.iter().map(|v| scope.index_of(v.name()).unwrap()).collect();
                let strides = disc.strides()?;
                for i in 0..n {
                    let flat = draw_cumulative(&cum, &mut rng);
                    let row = &mut values[i * d..(i + 1) * d];
                    let mut rem = flat;
                    for (k, s) in strides.iter().enumerate() {
                        row[disc_cols[k]] = (rem / s) as f64;
                        rem %= s;
                    }
                    let x = draw_continuous(&c.branches()[flat], &mut rng)?;
                    for (k, &col) in cont_cols.iter().enumerate() {
                        row[col] = x[k];
                    }
                }
            }
            other => {
                return Err(FactorError::Unsupported(format!(
                    "cannot draw particles from a {} factor",
                    other.repr_name()
                )))
            }
        }
        let log_mass = f.log_mass()?;
        let w = (log_mass - (n as f64).ln()).exp();
        let (weights, log_scale) = if w > 0.0 && w.is_finite() {
            (vec![w; n], 0.0)
        } else {
            // Keep tiny or huge masses in the scale term.
            (vec![1.0; n], log_mass - (n as f64).ln())
        };
        Ok(SampleFactor {
            scope,
            values,
            weights,
            log_scale,
            seed_cursor: substream_seed(seed, &format!("{label}/cursor")),
            seed_trace: vec![format!("draw:{label}:seed={seed}:n={n}")],
        })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed_trace(&self) -> &[String] {
        &self.seed_trace
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.scope.len();
        &self.values[i * d..(i + 1) * d]
    }

    /// Mass represented by the particles.
    pub fn mass(&self) -> f64 {
        self.log_scale.exp() * self.weights.iter().sum::<f64>()
    }

    pub fn log_mass(&self) -> Result<f64> {
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(FactorError::ZeroMass("all particle weights are zero".into()));
        }
        Ok(self.log_scale + total.ln())
    }

    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 == 0.0 {
            0.0
        } else {
            s * s / s2
        }
    }

    pub fn evaluate(&self, _at: &Assignment) -> Result<f64> {
        Err(FactorError::Unsupported(
            "particle factors have no pointwise density".into(),
        ))
    }

    /// Importance reweighting: multiplies each particle's weight by
    /// `other(x_i)`. Requires `other`'s scope to be covered by the particles.
    pub fn reweight(&self, other: &Factor) -> Result<SampleFactor> {
        if !other.scope().is_subset_of(&self.scope) {
            return Err(FactorError::ScopeMismatch(format!(
                "reweighting factor scope {} is not covered by particle scope {}",
                other.scope(),
                self.scope
            )));
        }
        let map: Vec<usize> = other
            .scope()
            .iter()
            .map(|v| self.scope.index_of(v.name()).unwrap())
            .collect();
        let d = self.scope.len();
        let mut buf = vec![0.0f64; map.len()];
        let mut weights = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let row = &self.values[i * d..(i + 1) * d];
            for (j, &col) in map.iter().enumerate() {
                buf[j] = row[col];
            }
            weights.push(self.weights[i] * other.evaluate_point(&buf)?);
        }
        let mut out = SampleFactor {
            scope: self.scope.clone(),
            values: self.values.clone(),
            weights,
            log_scale: self.log_scale,
            seed_cursor: self.seed_cursor,
            seed_trace: self.seed_trace.clone(),
        };
        out.shift_scale()?;
        out.seed_trace.push("reweight".into());
        Ok(out)
    }

    /// Ancestral extension: for a conditional-style factor over new output
    /// variables given variables the particles already carry, weights each
    /// particle by the branch mass at its values and draws the outputs from
    /// the conditioned branch.
    pub fn extend(&self, other: &Factor) -> Result<SampleFactor> {
        let sampler = ExtensionSampler::prepare(self, other)?;
        sampler.apply(self)
    }

    /// Marginalization: drops the named columns. Integrating everything out
    /// leaves the scalar mass.
    pub fn sum_out(&self, names: &[&str]) -> Result<Factor> {
        for n in names {
            if !self.scope.contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }
        if names.len() == self.scope.len() {
            return Ok(Factor::Canonical(CanonicalGaussian::scalar_log(
                self.log_mass()?,
            )));
        }
        let kept: Vec<usize> = (0..self.scope.len())
            .filter(|&j| !names.contains(&self.scope.vars()[j].name()))
            .collect();
        let scope = Scope::new(kept.iter().map(|&j| self.scope.vars()[j].clone()))?;
        let d = self.scope.len();
        let mut values = Vec::with_capacity(self.len() * kept.len());
        for i in 0..self.len() {
            let row = &self.values[i * d..(i + 1) * d];
            values.extend(kept.iter().map(|&j| row[j]));
        }
        Ok(Factor::Sample(SampleFactor {
            scope,
            values,
            weights: self.weights.clone(),
            log_scale: self.log_scale,
            seed_cursor: self.seed_cursor,
            seed_trace: self.seed_trace.clone(),
        }))
    }

    /// Conditioning on discrete evidence keeps the matching particles;
    /// continuous evidence has measure zero and is unsupported.
    pub fn reduce(&self, evidence: &Assignment) -> Result<SampleFactor> {
        let mut fixed: Vec<(usize, f64)> = Vec::new();
        for (j, v) in self.scope.iter().enumerate() {
            if !evidence.contains(v.name()) {
                continue;
            }
            if v.is_continuous() {
                return Err(FactorError::Unsupported(format!(
                    "cannot condition particles on continuous evidence `{}`",
                    v.name()
                )));
            }
            fixed.push((j, evidence.index_for(v)? as f64));
        }
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        let kept_cols: Vec<usize> = (0..self.scope.len())
            .filter(|j| !fixed.iter().any(|(fj, _)| fj == j))
            .collect();
        if kept_cols.is_empty() {
            return Err(FactorError::Unsupported(
                "reducing every variable of a particle factor; sum out instead".into(),
            ));
        }
        let scope = Scope::new(kept_cols.iter().map(|&j| self.scope.vars()[j].clone()))?;
        let d = self.scope.len();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for i in 0..self.len() {
            let row = &self.values[i * d..(i + 1) * d];
            if fixed.iter().all(|&(j, want)| row[j] == want) {
                values.extend(kept_cols.iter().map(|&j| row[j]));
                weights.push(self.weights[i]);
            }
        }
        if weights.is_empty() {
            return Err(FactorError::ZeroMass(
                "no particles match the discrete evidence".into(),
            ));
        }
        Ok(SampleFactor {
            scope,
            values,
            weights,
            log_scale: self.log_scale,
            seed_cursor: self.seed_cursor,
            seed_trace: push_trace(&self.seed_trace, "reduce"),
        })
    }

    /// Pools two particle sets over the same scope; masses add.
    pub fn add(&self, other: &SampleFactor) -> Result<SampleFactor> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch(format!(
                "cannot pool particles over {} with {}",
                self.scope, other.scope
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        // Bring both sides onto the larger log scale before pooling.
        let ls = self.log_scale.max(other.log_scale);
        let mut weights: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w * (self.log_scale - ls).exp())
            .collect();
        weights.extend(other.weights.iter().map(|w| w * (other.log_scale - ls).exp()));
        Ok(SampleFactor {
            scope: self.scope.clone(),
            values,
            weights,
            log_scale: ls,
            seed_cursor: substream_seed(self.seed_cursor ^ other.seed_cursor, "add"),
            seed_trace: push_trace(&self.seed_trace, "add"),
        })
    }

    pub fn scale_log(&self, log_c: f64) -> SampleFactor {
        let mut out = self.clone();
        out.log_scale += log_c;
        out
    }

    /// Rescales so the represented mass is 1.
    pub fn normalize(&self) -> Result<SampleFactor> {
        let mut out = self.clone();
        out.log_scale = -wsum_ln(&self.weights)?;
        Ok(out)
    }

    /// Systematic resampling to equal weights; preserves total mass.
    pub fn resample_systematic(&self) -> Result<SampleFactor> {
        let n = self.len();
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(FactorError::ZeroMass("all particle weights are zero".into()));
        }
        let mut rng = rng_from(substream_seed(self.seed_cursor, "resample"));
        let step = total / n as f64;
        let offset: f64 = rng.gen::<f64>() * step;
        let d = self.scope.len();
        let mut values = Vec::with_capacity(self.values.len());
        let mut j = 0usize;
        let mut cum = self.weights[0];
        for i in 0..n {
            let target = offset + i as f64 * step;
            while cum < target && j + 1 < n {
                j += 1;
                cum += self.weights[j];
            }
            values.extend_from_slice(&self.values[j * d..(j + 1) * d]);
        }
        Ok(SampleFactor {
            scope: self.scope.clone(),
            values,
            weights: vec![step; n],
            log_scale: self.log_scale,
            seed_cursor: substream_seed(self.seed_cursor, "resample/next"),
            seed_trace: push_trace(&self.seed_trace, "resample"),
        })
    }

    /// Weighted mean of a continuous column.
    pub fn mean_of(&self, name: &str) -> Result<f64> {
        let j = self
            .scope
            .index_of(name)
            .ok_or_else(|| FactorError::NotInScope(name.to_string()))?;
        let d = self.scope.len();
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(FactorError::ZeroMass("all particle weights are zero".into()));
        }
        let s: f64 = (0..self.len())
            .map(|i| self.weights[i] * self.values[i * d + j])
            .sum();
        Ok(s / total)
    }

    /// Weighted variance of a continuous column.
    pub fn var_of(&self, name: &str) -> Result<f64> {
        let mu = self.mean_of(name)?;
        let j = self.scope.index_of(name).expect("checked by mean_of");
        let d = self.scope.len();
        let total: f64 = self.weights.iter().sum();
        let s: f64 = (0..self.len())
            .map(|i| {
                let dx = self.values[i * d + j] - mu;
                self.weights[i] * dx * dx
            })
            .sum();
        Ok(s / total)
    }

    /// Normalized histogram of a discrete column.
    pub fn discrete_marginal(&self, name: &str) -> Result<TableFactor> {
        let j = self
            .scope
            .index_of(name)
            .ok_or_else(|| FactorError::NotInScope(name.to_string()))?;
        let v = &self.scope.vars()[j];
        let card = v.cardinality().ok_or_else(|| {
            FactorError::DomainMismatch(format!("`{name}` is continuous"))
        })?;
        let d = self.scope.len();
        let mut hist = vec![0.0f64; card];
        for i in 0..self.len() {
            hist[self.values[i * d + j] as usize] += self.weights[i];
        }
        let total: f64 = hist.iter().sum();
        if total <= 0.0 {
            return Err(FactorError::ZeroMass("all particle weights are zero".into()));
        }
        for h in &mut hist {
            *h /= total;
        }
        TableFactor::new(Scope::new([v.clone()])?, hist)
    }

    pub fn rename(&self, mapping: &[(&str, &str)]) -> Result<SampleFactor> {
        let map_name = |n: &str| -> String {
            mapping
                .iter()
                .find(|(old, _)| *old == n)
                .map_or(n.to_string(), |(_, new)| new.to_string())
        };
        let vars: Vec<Variable> = self
            .scope
            .iter()
            .map(|v| match v.cardinality() {
                Some(c) => Variable::discrete(map_name(v.name()), c),
                None => Variable::continuous(map_name(v.name())),
            })
            .collect();
        let scope = Scope::new(vars.iter().cloned())?;
        if scope.len() != self.scope.len() {
            return Err(FactorError::ConfigInvalid(
                "rename collapses distinct variables".into(),
            ));
        }
        // Permute columns into the new canonical order.
        let perm: Vec<usize> = self
            .scope
            .iter()
            .map(|v| scope.index_of(&map_name(v.name())).unwrap())
            .collect();
        let d = self.scope.len();
        let mut values = vec![0.0f64; self.values.len()];
        for i in 0..self.len() {
            let row = &self.values[i * d..(i + 1) * d];
            for (old_j, &new_j) in perm.iter().enumerate() {
                values[i * d + new_j] = row[old_j];
            }
        }
        Ok(SampleFactor {
            scope,
            values,
            weights: self.weights.clone(),
            log_scale: self.log_scale,
            seed_cursor: self.seed_cursor,
            seed_trace: push_trace(&self.seed_trace, "rename"),
        })
    }

    /// Folds the largest weight into `log_scale` so weights stay near 1.
    fn shift_scale(&mut self) -> Result<()> {
        let m = self.weights.iter().cloned().fold(0.0f64, f64::max);
        if !(m > 0.0) {
            return Err(FactorError::ZeroMass("all particle weights are zero".into()));
        }
        if !m.is_finite() {
            return Err(FactorError::Degenerate("particle weight overflow".into()));
        }
        self.log_scale += m.ln();
        for w in &mut self.weights {
            *w /= m;
        }
        Ok(())
    }
}

fn push_trace(trace: &[String], op: &str) -> Vec<String> {
    let mut t = trace.to_vec();
    t.push(op.to_string());
    t
}

fn wsum_ln(weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(FactorError::ZeroMass("all particle weights are zero".into()));
    }
    Ok(total.ln())
}

fn cumulative(weights: &[f64]) -> Result<Vec<f64>> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut s = 0.0;
    for w in weights {
        if *w < 0.0 {
            return Err(FactorError::ConfigInvalid("negative weight".into()));
        }
        s += w;
        cum.push(s);
    }
    if s <= 0.0 {
        return Err(FactorError::ZeroMass("cannot draw from zero mass".into()));
    }
    Ok(cum)
}

fn draw_cumulative(cum: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total = *cum.last().expect("nonempty");
    let u = rng.gen::<f64>() * total;
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn write_indices(scope: &Scope, flat: usize, row: &mut [f64]) -> Result<()> {
    let strides = scope.strides()?;
    let mut rem = flat;
    for (j, s) in strides.iter().enumerate() {
        row[j] = (rem / s) as f64;
        rem %= s;
    }
    Ok(())
}

/// Draws one point from a continuous factor, aligned to its own scope.
pub(crate) fn draw_continuous(f: &Factor, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
    match f {
        Factor::Canonical(c) => draw_moment(&c.to_moment()?, rng),
        Factor::Moment(m) => draw_moment(m, rng),
        Factor::Truncated(t) => draw_truncated(t, rng),
        Factor::Mixture(m) => {
            let eff: Result<Vec<f64>> = m
                .components()
                .iter()
                .map(|(w, c)| Ok(w * c.log_mass()?.exp()))
                .collect();
            let cum = cumulative(&eff?)?;
            let pick = draw_cumulative(&cum, rng);
            match &m.components()[pick].1 {
                crate::gaussian::MixtureComponent::Canonical(c) => {
                    draw_moment(&c.to_moment()?, rng)
                }
                crate::gaussian::MixtureComponent::Truncated(t) => draw_truncated(t, rng),
            }
        }
        other => Err(FactorError::Unsupported(format!(
            "cannot draw from a {} factor",
            other.repr_name()
        ))),
    }
}

/// Draws one point from a moment-form Gaussian.
pub(crate) fn draw_moment(m: &MomentGaussian, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
    let n = m.mean().len();
    let l = cholesky_guarded(m.cov()).ok_or_else(|| {
        FactorError::Degenerate("covariance is not positive definite".into())
    })?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = m.mean() + &l * z;
    Ok(x.iter().cloned().collect())
}

/// Inverse-CDF draw from a 1-D truncated standard normal on `[alpha, beta)`.
fn draw_std_truncated(alpha: f64, beta: f64, rng: &mut ChaCha12Rng) -> f64 {
    let za = normal_cdf(alpha);
    let zb = normal_cdf(beta);
    let span = zb - za;
    if span <= 0.0 {
        // Vanishing mass: pin to the nearer finite edge; callers only hit
        // this with weight zero.
        return if alpha.is_finite() { alpha } else { beta };
    }
    let u: f64 = rng.gen();
    let p = (za + u * span).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = std.inverse_cdf(p);
    if z < alpha {
        z = alpha;
    }
    if z >= beta {
        z = beta - (beta - alpha).min(1e-12);
    }
    z
}

fn draw_truncated(t: &TruncatedGaussian, rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
    let m = t.base().to_moment()?;
    let n = m.mean().len();
    let mut diagonal = true;
    for i in 0..n {
        for j in 0..i {
            if m.cov()[(i, j)].abs() > 1e-12 * m.cov().amax() {
                diagonal = false;
            }
        }
    }
    if diagonal {
        let mut x = vec![0.0f64; n];
        for i in 0..n {
            let mu = m.mean()[i];
            let sigma = m.cov()[(i, i)].sqrt();
            let (lo, hi) = t.bounds()[i];
            let alpha = if lo == f64::NEG_INFINITY { lo } else { (lo - mu) / sigma };
            let beta = if hi == f64::INFINITY { hi } else { (hi - mu) / sigma };
            x[i] = mu + sigma * draw_std_truncated(alpha, beta, rng);
        }
        return Ok(x);
    }
    // Correlated: rejection from the base Gaussian.
    for _ in 0..REJECTION_TRIES_PER_DRAW {
        let x = draw_moment(&m, rng)?;
        if crate::hybrid::point_in_box(&x, t.bounds()) {
            return Ok(x);
        }
    }
    Err(FactorError::Unsupported(
        "rejection sampling of a truncated Gaussian with vanishing acceptance".into(),
    ))
}

/// Precomputed machinery for extending particles through a conditional
/// factor: `p(new | old)` evaluated and sampled per particle.
struct ExtensionSampler {
    result_scope: Scope,
    col_src: Vec<ColSrc>,
    disc_given: Vec<(usize, usize)>,
    disc_out: Vec<(usize, usize)>,
    disc_out_len: usize,
    cont_given_cols: Vec<usize>,
    branches: Vec<BranchSampler>,
}

enum ColSrc {
    Old(usize),
    DiscOut(usize),
    ContOut(usize),
}

enum BranchSampler {
    /// Identically-zero branch: mass 0 at every particle.
    Zero,
    Canon(CanonKernel),
    Trunc {
        kernel: CanonKernel,
        out_box: Vec<(f64, f64)>,
        given_box: Vec<(f64, f64)>,
        out_sigmas: Vec<f64>,
    },
}

struct CanonKernel {
    n_out: usize,
    k_og: DMatrix<f64>,
    k_gg: DMatrix<f64>,
    h_o: DVector<f64>,
    h_g: DVector<f64>,
    g: f64,
    chol: DMatrix<f64>,
    ln_det: f64,
}

impl CanonKernel {
    fn new(base: &CanonicalGaussian, out_idx: &[usize], given_idx: &[usize]) -> Result<Self> {
        let k = base.k();
        let k_oo = k.select_rows(out_idx).select_columns(out_idx);
        let chol = cholesky_guarded(&k_oo).ok_or_else(|| {
            FactorError::Unsupported(
                "conditional precision over the new variables is not positive definite".into(),
            )
        })?;
        Ok(CanonKernel {
            n_out: out_idx.len(),
            k_og: k.select_rows(out_idx).select_columns(given_idx),
            k_gg: k.select_rows(given_idx).select_columns(given_idx),
            h_o: base.h().select_rows(out_idx),
            h_g: base.h().select_rows(given_idx),
            g: base.g(),
            ln_det: chol_log_det(&chol),
            chol,
        })
    }

    /// Mean and log-mass of the branch conditioned on the given values.
    fn condition(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let h_r = &self.h_o - &self.k_og * x;
        let mu = chol_solve_vec(&self.chol, &h_r);
        let g_r = self.g + self.h_g.dot(x) - 0.5 * x.dot(&(&self.k_gg * x));
        let log_mass = g_r + 0.5 * (self.n_out as f64 * LN_2PI - self.ln_det + h_r.dot(&mu));
        (mu, log_mass)
    }

    /// Draws `mu + L^-T z` with `z` standard normal.
    fn draw(&self, mu: &DVector<f64>, rng: &mut ChaCha12Rng) -> DVector<f64> {
        let n = self.n_out;
        let mut w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Back-substitution with L^T.
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in i + 1..n {
                s -= self.chol[(j, i)] * w[j];
            }
            w[i] = s / self.chol[(i, i)];
        }
        mu + w
    }
}

impl BranchSampler {
    fn build(branch: &Factor, out_idx: &[usize], given_idx: &[usize]) -> Result<BranchSampler> {
        if branch.is_zero() {
            return Ok(BranchSampler::Zero);
        }
        match branch {
            Factor::Canonical(c) => Ok(BranchSampler::Canon(CanonKernel::new(c, out_idx, given_idx)?)),
            Factor::Moment(m) => Ok(BranchSampler::Canon(CanonKernel::new(
                &m.to_canonical()?,
                out_idx,
                given_idx,
            )?)),
            Factor::Truncated(t) => {
                let kernel = CanonKernel::new(t.base(), out_idx, given_idx)?;
                // The per-particle box arithmetic below assumes independent
                // output axes.
                let k = t.base().k();
                let k_oo = k.select_rows(out_idx).select_columns(out_idx);
                let mut diagonal = true;
                for i in 0..out_idx.len() {
                    for j in 0..i {
                        if k_oo[(i, j)].abs() > 1e-12 * k_oo.amax() {
                            diagonal = false;
                        }
                    }
                }
                if !diagonal {
                    return Err(FactorError::Unsupported(
                        "extending particles through a truncated branch with correlated noise"
                            .into(),
                    ));
                }
                let out_sigmas: Vec<f64> =
                    (0..out_idx.len()).map(|i| 1.0 / kernel.chol[(i, i)]).collect();
                Ok(BranchSampler::Trunc {
                    out_box: out_idx.iter().map(|&i| t.bounds()[i]).collect(),
                    given_box: given_idx.iter().map(|&i| t.bounds()[i]).collect(),
                    out_sigmas,
                    kernel,
                })
            }
            other => Err(FactorError::Unsupported(format!(
                "cannot extend particles through a {} branch",
                other.repr_name()
            ))),
        }
    }

    /// Log-mass at the given values and whatever is needed to draw later.
    fn condition(&self, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        match self {
            BranchSampler::Zero => None,
            BranchSampler::Canon(k) => Some(k.condition(x)),
            BranchSampler::Trunc {
                kernel,
                out_box,
                given_box,
                out_sigmas,
            } => {
                for (i, &(lo, hi)) in given_box.iter().enumerate() {
                    let v = x[i];
                    if !(v >= lo && v < hi) {
                        return None;
                    }
                }
                let (mu, mut log_mass) = kernel.condition(x);
                for (i, &(lo, hi)) in out_box.iter().enumerate() {
                    let sigma = out_sigmas[i];
                    let alpha = if lo == f64::NEG_INFINITY { lo } else { (lo - mu[i]) / sigma };
                    let beta = if hi == f64::INFINITY { hi } else { (hi - mu[i]) / sigma };
                    let z = normal_cdf(beta) - normal_cdf(alpha);
                    if z <= 0.0 {
                        return None;
                    }
                    log_mass += z.ln();
                }
                Some((mu, log_mass))
            }
        }
    }

    fn draw(&self, mu: &DVector<f64>, rng: &mut ChaCha12Rng) -> DVector<f64> {
        match self {
            BranchSampler::Zero => unreachable!("zero branches are never drawn"),
            BranchSampler::Canon(k) => k.draw(mu, rng),
            BranchSampler::Trunc {
                kernel,
                out_box,
                out_sigmas,
                ..
            } => {
                let mut x = DVector::zeros(kernel.n_out);
                for i in 0..kernel.n_out {
                    let sigma = out_sigmas[i];
                    let (lo, hi) = out_box[i];
                    let alpha = if lo == f64::NEG_INFINITY { lo } else { (lo - mu[i]) / sigma };
                    let beta = if hi == f64::INFINITY { hi } else { (hi - mu[i]) / sigma };
                    x[i] = mu[i] + sigma * draw_std_truncated(alpha, beta, rng);
                }
                x
            }
        }
    }
}

impl ExtensionSampler {
    fn prepare(sample: &SampleFactor, other: &Factor) -> Result<ExtensionSampler> {
        // View the factor as (discrete scope, continuous scope, branches).
        let (disc_scope, cont_scope, branch_list): (Scope, Scope, Vec<&Factor>) = match other {
            Factor::Conditional(c) => (
                c.discrete_scope().clone(),
                c.continuous_scope().clone(),
                c.branches().iter().collect(),
            ),
            Factor::Canonical(_) | Factor::Moment(_) | Factor::Truncated(_) => {
                (Scope::empty(), other.scope().clone(), vec![other])
            }
            other => {
                return Err(FactorError::UnsupportedPair {
                    op: "multiply",
                    lhs: "sample",
                    rhs: other.repr_name(),
                })
            }
        };

        let disc_strides = disc_scope.strides()?;
        let mut disc_given = Vec::new();
        let mut disc_out = Vec::new();
        for (pos, v) in disc_scope.iter().enumerate() {
            match sample.scope.index_of(v.name()) {
                Some(col) => {
                    if sample.scope.vars()[col] != *v {
                        return Err(FactorError::DomainMismatch(format!(
                            "`{}` has different domains in the two factors",
                            v.name()
                        )));
                    }
                    disc_given.push((col, disc_strides[pos]));
                }
                None => disc_out.push((v.cardinality().expect("discrete"), disc_strides[pos])),
            }
        }
        let disc_out_len = disc_out.iter().map(|&(c, _)| c).product::<usize>().max(1);

        let mut cont_given_cols = Vec::new();
        let mut given_idx = Vec::new();
        let mut out_idx = Vec::new();
        for (pos, v) in cont_scope.iter().enumerate() {
            match sample.scope.index_of(v.name()) {
                Some(col) => {
                    if sample.scope.vars()[col] != *v {
                        return Err(FactorError::DomainMismatch(format!(
                            "`{}` has different domains in the two factors",
                            v.name()
                        )));
                    }
                    cont_given_cols.push(col);
                    given_idx.push(pos);
                }
                None => out_idx.push(pos),
            }
        }
        if out_idx.is_empty() && disc_out.is_empty() {
            return Err(FactorError::ScopeMismatch(
                "nothing to extend; use reweighting instead".into(),
            ));
        }

        let branches: Result<Vec<BranchSampler>> = branch_list
            .iter()
            .map(|b| BranchSampler::build(b, &out_idx, &given_idx))
            .collect();

        let result_scope = sample.scope.union(other.scope())?;
        let disc_out_names: Vec<&str> = disc_scope
            .iter()
            .filter(|v| sample.scope.index_of(v.name()).is_none())
            .map(|v| v.name())
            .collect();
        let cont_out_names: Vec<&str> =
            out_idx.iter().map(|&p| cont_scope.vars()[p].name()).collect();
        let col_src: Vec<ColSrc> = result_scope
            .iter()
            .map(|v| {
                if let Some(col) = sample.scope.index_of(v.name()) {
                    ColSrc::Old(col)
                } else if let Some(k) = disc_out_names.iter().position(|n| *n == v.name()) {
                    ColSrc::DiscOut(k)
                } else {
                    let k = cont_out_names
                        .iter()
                        .position(|n| *n == v.name())
                        .expect("new variable is discrete or continuous output");
                    ColSrc::ContOut(k)
                }
            })
            .collect();

        Ok(ExtensionSampler {
            result_scope,
            col_src,
            disc_given,
            disc_out,
            disc_out_len,
            cont_given_cols,
            branches: branches?,
        })
    }

    fn apply(&self, sample: &SampleFactor) -> Result<SampleFactor> {
        let n = sample.len();
        let d_old = sample.scope.len();
        let d_new = self.result_scope.len();
        let mut rng = rng_from(substream_seed(sample.seed_cursor, "extend"));
        let mut values = vec![0.0f64; n * d_new];
        let mut weights = vec![0.0f64; n];
        let mut x = DVector::zeros(self.cont_given_cols.len());
        // Per-candidate buffers, reused across particles.
        let mut cands: Vec<Option<(DVector<f64>, f64)>> = Vec::with_capacity(self.disc_out_len);
        let mut probs = vec![0.0f64; self.disc_out_len];
        for i in 0..n {
            let row = &sample.values[i * d_old..(i + 1) * d_old];
            for (j, &col) in self.cont_given_cols.iter().enumerate() {
                x[j] = row[col];
            }
            let mut flat_base = 0usize;
            for &(col, stride) in &self.disc_given {
                flat_base += row[col] as usize * stride;
            }
            cands.clear();
            let mut max_lm = f64::NEG_INFINITY;
            for e in 0..self.disc_out_len {
                let mut flat = flat_base;
                let mut rem = e;
                for &(card, stride) in &self.disc_out {
                    flat += (rem % card) * stride;
                    rem /= card;
                }
                let cand = self.branches[flat].condition(&x);
                if let Some((_, lm)) = &cand {
                    max_lm = max_lm.max(*lm);
                }
                cands.push(cand);
            }
            let out_row = &mut values[i * d_new..(i + 1) * d_new];
            if max_lm == f64::NEG_INFINITY {
                // Every branch is impossible here; the particle dies.
                for (dst, src) in out_row.iter_mut().zip(&self.col_src) {
                    *dst = match src {
                        ColSrc::Old(c) => row[*c],
                        _ => 0.0,
                    };
                }
                continue;
            }
            let mut total = 0.0;
            for (e, cand) in cands.iter().enumerate() {
                probs[e] = match cand {
                    Some((_, lm)) => (lm - max_lm).exp(),
                    None => 0.0,
                };
                total += probs[e];
            }
            weights[i] = sample.weights[i] * (max_lm + total.ln()).exp();

            let u = rng.gen::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = self.disc_out_len - 1;
            for (e, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    pick = e;
                    break;
                }
            }
            let (mu, _) = cands[pick].as_ref().expect("picked branch is live");
            let mut flat = flat_base;
            let mut rem = pick;
            let mut disc_vals = [0usize; 8];
            for (k, &(card, stride)) in self.disc_out.iter().enumerate() {
                disc_vals[k] = rem % card;
                flat += disc_vals[k] * stride;
                rem /= card;
            }
            let y = self.branches[flat].draw(mu, &mut rng);
            for (dst, src) in out_row.iter_mut().zip(&self.col_src) {
                *dst = match src {
                    ColSrc::Old(c) => row[*c],
                    ColSrc::DiscOut(k) => disc_vals[*k] as f64,
                    ColSrc::ContOut(k) => y[*k],
                };
            }
        }
        let mut out = SampleFactor {
            scope: self.result_scope.clone(),
            values,
            weights,
            log_scale: sample.log_scale,
            seed_cursor: substream_seed(sample.seed_cursor, "extend/next"),
            seed_trace: push_trace(&sample.seed_trace, "extend"),
        };
        out.shift_scale()?;
        Ok(out)
    }
}
