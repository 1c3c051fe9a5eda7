//! Inference algorithms written purely against the factor operations:
//! variable elimination with evidence, forward filtering, and
//! division-based smoothing.
//!
//! Nothing here inspects a factor's representation except the optional
//! projection hooks, which is exactly the point: the same filter drives
//! tables, Gaussians, particles, and hybrid factors.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{FactorError, Result};
use crate::factor::Factor;
use crate::gaussian::MomentGaussian;
use crate::variable::{Assignment, Scope, Variable};

/// A named collection of variables and factors over them.
///
/// The joint is the product of all factors; no normalization is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraphModel {
    name: String,
    description: String,
    variables: Vec<Variable>,
    factors: Vec<Factor>,
}

impl FactorGraphModel {
    /// Builds a model, checking that every factor scope only uses declared
    /// variables (by name and domain).
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        variables: Vec<Variable>,
        factors: Vec<Factor>,
    ) -> Result<Self> {
        let mut by_name: BTreeMap<&str, &Variable> = BTreeMap::new();
        for v in &variables {
            if by_name.insert(v.name(), v).is_some() {
                return Err(FactorError::ConfigInvalid(format!(
                    "variable `{}` is declared twice",
                    v.name()
                )));
            }
        }
        for f in &factors {
            for v in f.scope().iter() {
                match by_name.get(v.name()) {
                    None => return Err(FactorError::MissingVariable(v.name().to_string())),
                    Some(declared) if *declared != v => {
                        return Err(FactorError::DomainMismatch(v.name().to_string()))
                    }
                    _ => {}
                }
            }
        }
        // Declaration order is not meaningful; keep variables sorted so that
        // structurally equal models compare equal.
        let mut variables = variables;
        variables.sort_by(|a, b| a.name().cmp(b.name()));
        Ok(FactorGraphModel {
            name: name.into(),
            description: description.into(),
            variables,
            factors,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name() == name)
    }
}

/// Greedy min-fill elimination order over the model's interaction graph,
/// skipping the query variables. Ties break by variable name, so the order
/// is deterministic.
pub fn elimination_order(model: &FactorGraphModel, query: &Scope) -> Result<Vec<Variable>> {
    for v in query.iter() {
        if model.variable(v.name()).is_none() {
            return Err(FactorError::MissingVariable(v.name().to_string()));
        }
    }
    let scopes: Vec<&Scope> = model.factors.iter().map(|f| f.scope()).collect();
    let keep: BTreeSet<&str> = query.iter().map(|v| v.name()).collect();
    let names = min_fill_order(
        model.variables.iter().map(|v| v.name().to_string()),
        &scopes,
        &keep,
    );
    Ok(names
        .iter()
        .map(|n| model.variable(n).expect("ordered variable is declared").clone())
        .collect())
}

/// Min-fill over the given scopes: nodes are `nodes` minus `keep`; edges
/// connect variables sharing a scope. Eliminating a node connects its
/// remaining neighbors. `BTreeMap` iteration makes the name tie-break
/// implicit: the first minimum wins.
fn min_fill_order(
    nodes: impl IntoIterator<Item = String>,
    scopes: &[&Scope],
    keep: &BTreeSet<&str>,
) -> Vec<String> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = nodes
        .into_iter()
        .filter(|n| !keep.contains(n.as_str()))
        .map(|n| (n, BTreeSet::new()))
        .collect();
    // Neighbors in `keep` still count for fill edges, so track them too,
    // but only as neighbors of eliminable nodes.
    let mut kept_adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for sc in scopes {
        let names: Vec<&str> = sc.iter().map(|v| v.name()).collect();
        for (i, a) in names.iter().enumerate() {
            for b in names.iter().skip(i + 1) {
                for (x, y) in [(a, b), (b, a)] {
                    if let Some(set) = adj.get_mut(*x) {
                        set.insert((*y).to_string());
                    } else {
                        kept_adj
                            .entry((*x).to_string())
                            .or_default()
                            .insert((*y).to_string());
                    }
                }
            }
        }
    }

    let connected = |adj: &BTreeMap<String, BTreeSet<String>>,
                     kept_adj: &BTreeMap<String, BTreeSet<String>>,
                     a: &str,
                     b: &str| {
        adj.get(a)
            .map(|s| s.contains(b))
            .or_else(|| kept_adj.get(a).map(|s| s.contains(b)))
            .unwrap_or(false)
    };

    let mut order = Vec::with_capacity(adj.len());
    while !adj.is_empty() {
        let mut best: Option<(usize, String)> = None;
        for (node, neigh) in &adj {
            let ns: Vec<&String> = neigh.iter().collect();
            let mut fill = 0usize;
            for (i, a) in ns.iter().enumerate() {
                for b in ns.iter().skip(i + 1) {
                    if !connected(&adj, &kept_adj, a, b) {
                        fill += 1;
                    }
                }
            }
            if best.as_ref().is_none_or(|(f, _)| fill < *f) {
                best = Some((fill, node.clone()));
            }
        }
        let (_, node) = best.expect("non-empty graph has a minimum");
        let neigh: Vec<String> = adj[&node].iter().cloned().collect();
        for (i, a) in neigh.iter().enumerate() {
            for b in neigh.iter().skip(i + 1) {
                for (x, y) in [(a, b), (b, a)] {
                    if let Some(set) = adj.get_mut(x.as_str()) {
                        set.insert(y.clone());
                    } else {
                        kept_adj.entry(x.clone()).or_default().insert(y.clone());
                    }
                }
            }
        }
        for n in &neigh {
            if let Some(set) = adj.get_mut(n.as_str()) {
                set.remove(&node);
            }
        }
        adj.remove(&node);
        order.push(node);
    }
    order
}

/// Exact posterior over `query` given `evidence`, by variable elimination.
///
/// Every factor is first reduced by the evidence, then non-query variables
/// are eliminated along the min-fill order (multiply the touching factors,
/// sum the variable out), and the surviving product is normalized.
pub fn variable_elimination(
    model: &FactorGraphModel,
    query: &Scope,
    evidence: &Assignment,
) -> Result<Factor> {
    if query.is_empty() {
        return Err(FactorError::EmptyQuery);
    }
    for v in query.iter() {
        match model.variable(v.name()) {
            None => return Err(FactorError::MissingVariable(v.name().to_string())),
            Some(d) if d != v => return Err(FactorError::DomainMismatch(v.name().to_string())),
            _ => {}
        }
        if evidence.contains(v.name()) {
            return Err(FactorError::ConfigInvalid(format!(
                "query variable `{}` is fixed by evidence",
                v.name()
            )));
        }
    }
    for (name, _) in evidence.iter() {
        if model.variable(name).is_none() {
            return Err(FactorError::MissingVariable(name.to_string()));
        }
    }

    let mut pool: Vec<Factor> = Vec::with_capacity(model.factors.len());
    for f in &model.factors {
        pool.push(f.reduce(evidence)?);
    }
    for v in query.iter() {
        if !pool.iter().any(|f| f.scope().contains(v.name())) {
            return Err(FactorError::Unsupported(format!(
                "query variable `{}` appears in no factor after evidence reduction",
                v.name()
            )));
        }
    }

    let scopes: Vec<&Scope> = pool.iter().map(|f| f.scope()).collect();
    let keep: BTreeSet<&str> = query.iter().map(|v| v.name()).collect();
    let present: BTreeSet<String> = scopes
        .iter()
        .flat_map(|s| s.iter().map(|v| v.name().to_string()))
        .collect();
    let order = min_fill_order(present, &scopes, &keep);

    for name in &order {
        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            pool.into_iter().partition(|f| f.scope().contains(name));
        pool = rest;
        if touching.is_empty() {
            continue;
        }
        let mut product = touching[0].clone();
        for f in &touching[1..] {
            product = product.multiply(f)?;
        }
        pool.push(product.sum_out(&[name.as_str()])?);
    }

    let mut joint = pool
        .pop()
        .ok_or_else(|| FactorError::ConfigInvalid("model has no factors".into()))?;
    for f in &pool {
        joint = joint.multiply(f)?;
    }
    joint.normalize()
}

/// Suffix appended to a state variable's name to address its copy at the
/// previous time step inside the transition factor.
pub const PREV_SUFFIX: &str = "_prev";

/// Name of `name`'s previous-step copy.
pub fn prev_name(name: &str) -> String {
    format!("{name}{PREV_SUFFIX}")
}

/// Time-homogeneous state-space model.
///
/// The transition factor is written over the previous-step copies
/// (`x_prev`) and the current-step variables (`x`); the observation factor
/// over the current state and the observed variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    name: String,
    state: Scope,
    obs: Scope,
    prior: Factor,
    transition: Factor,
    observation: Factor,
}

impl StateSpaceModel {
    pub fn new(
        name: impl Into<String>,
        state: Scope,
        obs: Scope,
        prior: Factor,
        transition: Factor,
        observation: Factor,
    ) -> Result<Self> {
        for v in state.iter().chain(obs.iter()) {
            if v.name().ends_with(PREV_SUFFIX) {
                return Err(FactorError::ConfigInvalid(format!(
                    "variable name `{}` uses the reserved `{PREV_SUFFIX}` suffix",
                    v.name()
                )));
            }
        }
        if !state.intersection(&obs)?.is_empty() {
            return Err(FactorError::ConfigInvalid(
                "state and observation scopes overlap".into(),
            ));
        }
        if prior.scope() != &state {
            return Err(FactorError::ScopeMismatch(format!(
                "prior scope {} does not equal the state scope {}",
                prior.scope(),
                state
            )));
        }
        let prev_names: BTreeSet<String> = state.iter().map(|v| prev_name(v.name())).collect();
        for v in transition.scope().iter() {
            if !state.contains(v.name()) && !prev_names.contains(v.name()) {
                return Err(FactorError::ConfigInvalid(format!(
                    "transition scope variable `{}` is neither a state variable nor a `{PREV_SUFFIX}` copy",
                    v.name()
                )));
            }
        }
        for v in state.iter() {
            if !transition.scope().contains(v.name()) {
                return Err(FactorError::ConfigInvalid(format!(
                    "transition factor does not mention state variable `{}`",
                    v.name()
                )));
            }
        }
        for v in obs.iter() {
            if !observation.scope().contains(v.name()) {
                return Err(FactorError::ConfigInvalid(format!(
                    "observation factor does not mention observed variable `{}`",
                    v.name()
                )));
            }
        }
        for v in observation.scope().iter() {
            if !state.contains(v.name()) && !obs.contains(v.name()) {
                return Err(FactorError::ConfigInvalid(format!(
                    "observation scope variable `{}` is neither state nor observed",
                    v.name()
                )));
            }
        }
        Ok(StateSpaceModel {
            name: name.into(),
            state,
            obs,
            prior,
            transition,
            observation,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_scope(&self) -> &Scope {
        &self.state
    }

    pub fn obs_scope(&self) -> &Scope {
        &self.obs
    }

    pub fn prior(&self) -> &Factor {
        &self.prior
    }

    pub fn transition(&self) -> &Factor {
        &self.transition
    }

    pub fn observation(&self) -> &Factor {
        &self.observation
    }

    /// Replaces the prior factor, e.g. with a particle approximation of the
    /// original one. The new prior must keep the state scope.
    pub fn with_prior(mut self, prior: Factor) -> Result<Self> {
        if prior.scope() != &self.state {
            return Err(FactorError::ScopeMismatch(format!(
                "prior scope {} does not equal the state scope {}",
                prior.scope(),
                self.state
            )));
        }
        self.prior = prior;
        Ok(self)
    }

    fn prev_mapping(&self) -> Vec<(String, String)> {
        self.state
            .iter()
            .map(|v| (v.name().to_string(), prev_name(v.name())))
            .collect()
    }
}

/// What to do to each filtering posterior before it becomes the next prior.
///
/// The filter itself is representation-agnostic; these hooks are where the
/// parametric and sampling back ends differ.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionPolicy {
    /// Keep the exact posterior.
    None,
    /// Collapse mixtures and truncated factors to moment-matched Gaussians
    /// (branch-wise under a conditional factor).
    MomentMatch,
    /// Systematically resample a particle posterior when its effective
    /// sample size drops below `ess_fraction` of the particle count.
    Resample { ess_fraction: f64 },
}

impl ProjectionPolicy {
    /// Applies the policy to a posterior (or to a prior, to seed a filter
    /// with the representation the policy maintains).
    pub fn apply(&self, posterior: Factor) -> Result<Factor> {
        match self {
            ProjectionPolicy::None => Ok(posterior),
            ProjectionPolicy::MomentMatch => project_moment_match(&posterior),
            ProjectionPolicy::Resample { ess_fraction } => {
                if let Factor::Sample(s) = &posterior {
                    if s.ess() < ess_fraction * s.len() as f64 {
                        return Ok(Factor::Sample(s.resample_systematic()?));
                    }
                }
                Ok(posterior)
            }
        }
    }
}

/// Moment-matches every non-Gaussian continuous part of `f` to a single
/// Gaussian, branch-wise under conditional factors. Exact discrete parts
/// and plain Gaussians pass through unchanged.
fn project_moment_match(f: &Factor) -> Result<Factor> {
    if f.is_zero() {
        return Ok(f.clone());
    }
    match f {
        Factor::Mixture(m) => Ok(Factor::Canonical(m.moment_match()?.to_canonical()?)),
        Factor::Truncated(t) => Ok(Factor::Canonical(t.moment_match()?.to_canonical()?)),
        Factor::Conditional(c) => {
            let branches = c
                .branches()
                .iter()
                .map(project_moment_match)
                .collect::<Result<Vec<Factor>>>()?;
            Ok(Factor::Conditional(crate::hybrid::ConditionalFactor::new(
                c.discrete_scope().clone(),
                c.continuous_scope().clone(),
                branches,
            )?))
        }
        other => Ok(other.clone()),
    }
}

/// Output of a filtering pass.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Posterior over the state after each observation (normalized).
    pub posteriors: Vec<Factor>,
    /// One-step-ahead predictive before each correction; the smoother's
    /// divisor.
    pub predictives: Vec<Factor>,
    /// Per-step log evidence `ln p(y_t | y_{1:t-1})`.
    pub loglik_increments: Vec<f64>,
    /// Sum of the increments.
    pub total_loglik: f64,
}

/// One prediction/correction step.
///
/// `prior` is the state posterior from the previous step (or the model
/// prior); `y` assigns every observed variable. Returns the normalized
/// posterior and the log evidence of `y`.
pub fn filter_step(
    prior: &Factor,
    model: &StateSpaceModel,
    y: &Assignment,
) -> Result<(Factor, f64)> {
    let (_, posterior, loglik) = predict_correct(prior, model, y)?;
    Ok((posterior, loglik))
}

fn predict_correct(
    prior: &Factor,
    model: &StateSpaceModel,
    y: &Assignment,
) -> Result<(Factor, Factor, f64)> {
    for v in model.obs.iter() {
        if !y.contains(v.name()) {
            return Err(FactorError::MissingVariable(v.name().to_string()));
        }
    }
    let mapping = model.prev_mapping();
    let pairs: Vec<(&str, &str)> = mapping
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    let shifted = prior.rename(&pairs)?;
    let joint = model.transition.multiply(&shifted)?;
    let prev_names: Vec<&str> = pairs.iter().map(|(_, p)| *p).collect();
    let predict = joint.sum_out(&prev_names)?;

    let likelihood = model.observation.reduce(y)?;
    let unnormalized = predict.multiply(&likelihood)?;
    let state_names: Vec<&str> = unnormalized.scope().iter().map(|v| v.name()).collect();
    let evidence_scalar = unnormalized.sum_out(&state_names)?;
    let loglik = evidence_scalar.log_mass()?;
    if !loglik.is_finite() {
        return Err(FactorError::ZeroMass(
            "observation has zero likelihood under the predictive".into(),
        ));
    }
    let posterior = unnormalized.divide(&evidence_scalar)?;
    Ok((predict, posterior, loglik))
}

/// Folds [`filter_step`] over the observations, applying `policy` to each
/// posterior before it becomes the next prior. Errors carry the step index.
pub fn filter(
    model: &StateSpaceModel,
    observations: &[Assignment],
    policy: &ProjectionPolicy,
) -> Result<FilterResult> {
    if observations.is_empty() {
        return Err(FactorError::ConfigInvalid(
            "filtering needs at least one observation".into(),
        ));
    }
    let mut posteriors = Vec::with_capacity(observations.len());
    let mut predictives = Vec::with_capacity(observations.len());
    let mut increments = Vec::with_capacity(observations.len());
    let mut prior = model.prior.clone();
    for (t, y) in observations.iter().enumerate() {
        let at = |e: FactorError| FactorError::AtStep {
            step: t,
            source: Box::new(e),
        };
        let (predict, posterior, loglik) = predict_correct(&prior, model, y).map_err(at)?;
        let projected = policy.apply(posterior).map_err(at)?;
        predictives.push(predict);
        increments.push(loglik);
        prior = projected.clone();
        posteriors.push(projected);
    }
    let total = increments.iter().sum();
    Ok(FilterResult {
        posteriors,
        predictives,
        loglik_increments: increments,
        total_loglik: total,
    })
}

/// Smoothed posteriors `p(x_t | y_{1:T})` for every step, by the backward
/// division recursion over the filter output:
///
/// `p(x_t|y_{1:T}) = p(x_t|y_{1:t}) * sum_out_{x_{t+1}} [ transition *
/// (p(x_{t+1}|y_{1:T}) / p(x_{t+1}|y_{1:t})) ]`
///
/// Defined for the exact representations (tables, Gaussians); particle and
/// hybrid posteriors are rejected because their quotients have no
/// representation here.
pub fn smooth(model: &StateSpaceModel, observations: &[Assignment]) -> Result<Vec<Factor>> {
    let fr = filter(model, observations, &ProjectionPolicy::None)?;
    for f in fr.posteriors.iter().chain(fr.predictives.iter()) {
        match f {
            Factor::Table(_) | Factor::Sparse(_) | Factor::Canonical(_) | Factor::Moment(_) => {}
            other => {
                return Err(FactorError::Unsupported(format!(
                    "smoothing is not defined for the {} representation",
                    other.repr_name()
                )))
            }
        }
    }
    let t_last = fr.posteriors.len() - 1;
    let mut smoothed =
        vec![Factor::Table(crate::table::TableFactor::scalar(1.0)?); fr.posteriors.len()];
    smoothed[t_last] = fr.posteriors[t_last].clone();

    let mapping = model.prev_mapping();
    let back: Vec<(&str, &str)> = mapping
        .iter()
        .map(|(a, b)| (b.as_str(), a.as_str()))
        .collect();
    let state_names: Vec<&str> = model.state.iter().map(|v| v.name()).collect();

    for t in (0..t_last).rev() {
        let at = |e: FactorError| FactorError::AtStep {
            step: t,
            source: Box::new(e),
        };
        let ratio = smoothed[t + 1].divide(&fr.predictives[t + 1]).map_err(at)?;
        let lifted = model.transition.multiply(&ratio).map_err(at)?;
        let message = lifted.sum_out(&state_names).map_err(at)?;
        let message = message.rename(&back).map_err(at)?;
        smoothed[t] = fr.posteriors[t].multiply(&message).map_err(at)?;
    }
    Ok(smoothed)
}

/// First and second moments plus total mass of a purely continuous factor,
/// as a moment-form Gaussian. Zero factors yield `None`.
fn moments_of(f: &Factor) -> Result<Option<MomentGaussian>> {
    if f.is_zero() {
        return Ok(None);
    }
    match f {
        Factor::Canonical(c) => Ok(Some(c.to_moment()?)),
        Factor::Moment(m) => Ok(Some(m.clone())),
        Factor::Truncated(t) => Ok(Some(t.moment_match()?)),
        Factor::Mixture(m) => Ok(Some(m.moment_match()?)),
        other => Err(FactorError::Unsupported(format!(
            "no moment summary for the {} representation",
            other.repr_name()
        ))),
    }
}

/// Mean and variance of one continuous variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSummary {
    pub name: String,
    pub mean: f64,
    pub var: f64,
}

/// Normalized marginal of one discrete variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSummary {
    pub name: String,
    pub probs: Vec<f64>,
}

/// Per-variable posterior summary: marginal moments for continuous
/// variables, normalized marginals for discrete ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub continuous: Vec<ContinuousSummary>,
    pub discrete: Vec<DiscreteSummary>,
}

/// Summarizes a posterior factor variable by variable.
///
/// Conditional factors combine branch moments by the laws of total mean and
/// variance, weighted by branch mass.
pub fn summarize(f: &Factor) -> Result<PosteriorSummary> {
    let (disc_scope, cont_scope) = f.scope().split_by_kind();
    let mut continuous = Vec::with_capacity(cont_scope.len());
    let mut discrete = Vec::with_capacity(disc_scope.len());

    match f {
        Factor::Table(_) | Factor::Sparse(_) => {
            for v in disc_scope.iter() {
                let others: Vec<&str> = disc_scope
                    .iter()
                    .map(|u| u.name())
                    .filter(|n| *n != v.name())
                    .collect();
                let marg = f.sum_out(&others)?.normalize()?;
                let probs = match marg {
                    Factor::Table(t) => t.values().to_vec(),
                    Factor::Sparse(s) => s.to_dense()?.values().to_vec(),
                    _ => unreachable!("summing a table yields a table"),
                };
                discrete.push(DiscreteSummary {
                    name: v.name().to_string(),
                    probs,
                });
            }
        }
        Factor::Canonical(_) | Factor::Moment(_) | Factor::Truncated(_) | Factor::Mixture(_) => {
            let m = moments_of(f)?.ok_or_else(|| {
                FactorError::ZeroMass("cannot summarize a zero-mass posterior".into())
            })?;
            for v in cont_scope.iter() {
                continuous.push(ContinuousSummary {
                    name: v.name().to_string(),
                    mean: m.mean_of(v.name())?,
                    var: m.var_of(v.name())?,
                });
            }
        }
        Factor::Sample(s) => {
            for v in cont_scope.iter() {
                continuous.push(ContinuousSummary {
                    name: v.name().to_string(),
                    mean: s.mean_of(v.name())?,
                    var: s.var_of(v.name())?,
                });
            }
            for v in disc_scope.iter() {
                let marg = s.discrete_marginal(v.name())?;
                let total: f64 = marg.values().iter().sum();
                if total <= 0.0 {
                    return Err(FactorError::ZeroMass(
                        "cannot summarize a zero-mass posterior".into(),
                    ));
                }
                discrete.push(DiscreteSummary {
                    name: v.name().to_string(),
                    probs: marg.values().iter().map(|w| w / total).collect(),
                });
            }
        }
        Factor::Conditional(c) => {
            let mass_table = c.branch_mass_table()?;
            let total = mass_table.total_mass();
            if total <= 0.0 {
                return Err(FactorError::ZeroMass(
                    "cannot summarize a zero-mass posterior".into(),
                ));
            }
            for v in disc_scope.iter() {
                let others: Vec<&str> = disc_scope
                    .iter()
                    .map(|u| u.name())
                    .filter(|n| *n != v.name())
                    .collect();
                let marg = mass_table.sum_out(&others)?.normalize()?;
                discrete.push(DiscreteSummary {
                    name: v.name().to_string(),
                    probs: marg.values().to_vec(),
                });
            }
            // Law of total mean/variance over branches.
            let weights: Vec<f64> = mass_table.values().iter().map(|m| m / total).collect();
            for v in cont_scope.iter() {
                let mut mean = 0.0;
                let mut second = 0.0;
                for (branch, w) in c.branches().iter().zip(&weights) {
                    if *w == 0.0 {
                        continue;
                    }
                    let m = moments_of(branch)?.ok_or_else(|| {
                        FactorError::ZeroMass("positive-mass branch has no moments".into())
                    })?;
                    let bm = m.mean_of(v.name())?;
                    let bv = m.var_of(v.name())?;
                    mean += w * bm;
                    second += w * (bv + bm * bm);
                }
                continuous.push(ContinuousSummary {
                    name: v.name().to_string(),
                    mean,
                    var: second - mean * mean,
                });
            }
        }
        Factor::Indicator(_) => {
            return Err(FactorError::Unsupported(
                "no posterior summary for a bare indicator".into(),
            ))
        }
    }
    Ok(PosteriorSummary {
        continuous,
        discrete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CanonicalGaussian;
    use crate::table::TableFactor;
    use nalgebra::{DMatrix, DVector};

    fn b(name: &str) -> Variable {
        Variable::binary(name)
    }

    fn table(names: &[&str], values: &[f64]) -> Factor {
        let scope = Scope::new(names.iter().map(|n| b(n))).unwrap();
        Factor::Table(TableFactor::new(scope, values.to_vec()).unwrap())
    }

    /// A->B chain: p(A) = [0.6, 0.4]; p(B|A) rows (a=0): [0.9, 0.1],
    /// (a=1): [0.2, 0.8]. Scope (A,B) canonical, B fastest.
    fn chain_model() -> FactorGraphModel {
        FactorGraphModel::new(
            "chain",
            "",
            vec![b("A"), b("B")],
            vec![
                table(&["A"], &[0.6, 0.4]),
                table(&["A", "B"], &[0.9, 0.1, 0.2, 0.8]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ve_single_factor_normalizes() {
        let model = FactorGraphModel::new(
            "m",
            "",
            vec![b("A")],
            vec![table(&["A"], &[2.0, 6.0])],
        )
        .unwrap();
        let q = Scope::new([b("A")]).unwrap();
        let post = variable_elimination(&model, &q, &Assignment::new()).unwrap();
        let vals = match post {
            Factor::Table(t) => t.values().to_vec(),
            _ => panic!("expected a table"),
        };
        assert!((vals[0] - 0.25).abs() < 1e-15);
        assert!((vals[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ve_chain_marginal_matches_hand_sum() {
        let model = chain_model();
        let q = Scope::new([b("B")]).unwrap();
        let post = variable_elimination(&model, &q, &Assignment::new()).unwrap();
        // p(B=1) = 0.6*0.1 + 0.4*0.8 = 0.38
        let vals = match post {
            Factor::Table(t) => t.values().to_vec(),
            _ => panic!("expected a table"),
        };
        assert!((vals[1] - 0.38).abs() < 1e-12);
    }

    #[test]
    fn ve_with_evidence_conditions() {
        let model = chain_model();
        let q = Scope::new([b("A")]).unwrap();
        let ev = Assignment::new().with("B", 1usize);
        let post = variable_elimination(&model, &q, &ev).unwrap();
        // p(A=1|B=1) = 0.4*0.8 / 0.38
        let vals = match post {
            Factor::Table(t) => t.values().to_vec(),
            _ => panic!("expected a table"),
        };
        assert!((vals[1] - 0.32 / 0.38).abs() < 1e-12);
    }

    #[test]
    fn ve_rejects_empty_and_unknown_queries() {
        let model = chain_model();
        let err = variable_elimination(&model, &Scope::empty(), &Assignment::new()).unwrap_err();
        assert_eq!(err.code(), "EmptyQuery");
        let q = Scope::new([b("Z")]).unwrap();
        let err = variable_elimination(&model, &q, &Assignment::new()).unwrap_err();
        assert_eq!(err.code(), "MissingVariable");
    }

    #[test]
    fn min_fill_breaks_ties_by_name() {
        // No factors at all: every variable is isolated, so the order is
        // plain name order.
        let model = FactorGraphModel::new(
            "m",
            "",
            vec![b("C"), b("A"), b("B")],
            vec![],
        )
        .unwrap();
        let order = elimination_order(&model, &Scope::empty()).unwrap();
        let names: Vec<&str> = order.iter().map(|v| v.name()).collect();
        assert_eq!(names, vec!["A", "B", "C"]);
    }

    #[test]
    fn min_fill_on_chain_runs_from_the_far_end() {
        // Chain W-X-Y-Z, query W. Eliminating an interior node would add a
        // fill edge, so the zero-fill choice walks in from the far end:
        // Z, then Y, then X.
        let model = FactorGraphModel::new(
            "m",
            "",
            vec![b("W"), b("X"), b("Y"), b("Z")],
            vec![
                table(&["W", "X"], &[0.5; 4]),
                table(&["X", "Y"], &[0.5; 4]),
                table(&["Y", "Z"], &[0.5; 4]),
            ],
        )
        .unwrap();
        let q = Scope::new([b("W")]).unwrap();
        let order = elimination_order(&model, &q).unwrap();
        let names: Vec<&str> = order.iter().map(|v| v.name()).collect();
        assert_eq!(names, vec!["Z", "Y", "X"]);
    }

    fn lg_1d_model() -> StateSpaceModel {
        let x = Variable::continuous("x");
        let y = Variable::continuous("y");
        let prior = CanonicalGaussian::normal(x.clone(), 0.0, 1.0).unwrap();
        let trans = CanonicalGaussian::linear_conditional(
            &[x.clone()],
            &[Variable::continuous("x_prev")],
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let obs = CanonicalGaussian::linear_conditional(
            &[y.clone()],
            &[x.clone()],
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        StateSpaceModel::new(
            "lg1d",
            Scope::new([x]).unwrap(),
            Scope::new([y]).unwrap(),
            Factor::Canonical(prior),
            Factor::Canonical(trans),
            Factor::Canonical(obs),
        )
        .unwrap()
    }

    #[test]
    fn lg_filter_step_matches_kalman_by_hand() {
        let model = lg_1d_model();
        let y1 = Assignment::new().with("y", 1.0);
        let (post, loglik) = filter_step(model.prior(), &model, &y1).unwrap();
        let s = summarize(&post).unwrap();
        assert_eq!(s.continuous.len(), 1);
        assert!((s.continuous[0].mean - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.continuous[0].var - 2.0 / 3.0).abs() < 1e-12);
        // Evidence: y1 ~ N(0, 3), so ln p = -0.5*ln(2*pi*3) - 1/6.
        let want = -0.5 * (2.0 * std::f64::consts::PI * 3.0).ln() - 1.0 / 6.0;
        assert!((loglik - want).abs() < 1e-12);
    }

    #[test]
    fn hmm_one_hot_likelihood_collapses_posterior() {
        let x = Variable::binary("x");
        let y = Variable::binary("y");
        let prior = table(&["x"], &[0.5, 0.5]);
        // Identity transition; scope (x, x_prev), x fastest varies last in
        // canonical order (x, x_prev): cells (x, x_prev) with x slowest.
        let trans_scope = Scope::new([x.clone(), Variable::binary("x_prev")]).unwrap();
        let trans = Factor::Table(
            TableFactor::new(trans_scope, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        // One-hot observation: y == x with certainty.
        let obs = table(&["x", "y"], &[1.0, 0.0, 0.0, 1.0]);
        let model = StateSpaceModel::new(
            "hmm",
            Scope::new([x]).unwrap(),
            Scope::new([y]).unwrap(),
            prior,
            trans,
            obs,
        )
        .unwrap();
        let y1 = Assignment::new().with("y", 1usize);
        let (post, _) = filter_step(model.prior(), &model, &y1).unwrap();
        let s = summarize(&post).unwrap();
        assert_eq!(s.discrete[0].probs, vec![0.0, 1.0]);
    }

    #[test]
    fn impossible_observation_is_zero_mass() {
        let x = Variable::binary("x");
        let y = Variable::binary("y");
        let prior = table(&["x"], &[1.0, 0.0]);
        let trans_scope = Scope::new([x.clone(), Variable::binary("x_prev")]).unwrap();
        let trans = Factor::Table(
            TableFactor::new(trans_scope, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        // y = x deterministically; prior pins x=0, so y=1 is impossible.
        let obs = table(&["x", "y"], &[1.0, 0.0, 0.0, 1.0]);
        let model = StateSpaceModel::new(
            "hmm",
            Scope::new([x]).unwrap(),
            Scope::new([y]).unwrap(),
            prior,
            trans,
            obs,
        )
        .unwrap();
        let y1 = Assignment::new().with("y", 1usize);
        let err = filter_step(model.prior(), &model, &y1).unwrap_err();
        assert_eq!(err.code(), "ZeroMass");
    }

    #[test]
    fn filter_t1_equals_filter_step_and_smooth_t1_equals_filter() {
        let model = lg_1d_model();
        let obs = vec![Assignment::new().with("y", 1.0)];
        let fr = filter(&model, &obs, &ProjectionPolicy::None).unwrap();
        let (post, loglik) = filter_step(model.prior(), &model, &obs[0]).unwrap();
        let a = summarize(&fr.posteriors[0]).unwrap();
        let b = summarize(&post).unwrap();
        assert!((a.continuous[0].mean - b.continuous[0].mean).abs() < 1e-15);
        assert!((fr.total_loglik - loglik).abs() < 1e-15);
        let sm = smooth(&model, &obs).unwrap();
        let c = summarize(&sm[0]).unwrap();
        assert!((c.continuous[0].mean - a.continuous[0].mean).abs() < 1e-12);
        assert!((c.continuous[0].var - a.continuous[0].var).abs() < 1e-12);
    }

    #[test]
    fn filter_errors_carry_the_step_index() {
        let x = Variable::binary("x");
        let y = Variable::binary("y");
        let prior = table(&["x"], &[1.0, 0.0]);
        let trans_scope = Scope::new([x.clone(), Variable::binary("x_prev")]).unwrap();
        let trans = Factor::Table(
            TableFactor::new(trans_scope, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let obs = table(&["x", "y"], &[1.0, 0.0, 0.0, 1.0]);
        let model = StateSpaceModel::new(
            "hmm",
            Scope::new([x]).unwrap(),
            Scope::new([y]).unwrap(),
            prior,
            trans,
            obs,
        )
        .unwrap();
        let seq = vec![
            Assignment::new().with("y", 0usize),
            Assignment::new().with("y", 1usize),
        ];
        let err = filter(&model, &seq, &ProjectionPolicy::None).unwrap_err();
        assert_eq!(err.code(), "ZeroMass");
        assert!(err.to_string().contains("step 1"));
    }

    #[test]
    fn smoothing_rejects_particle_posteriors() {
        let model = lg_1d_model();
        let sampled = crate::sample::SampleFactor::sample_from(model.prior(), 64, 5, "prior")
            .map(Factor::Sample)
            .unwrap();
        let model = model.with_prior(sampled).unwrap();
        let obs = vec![Assignment::new().with("y", 1.0)];
        let err = smooth(&model, &obs).unwrap_err();
        assert_eq!(err.code(), "Unsupported");
    }

    #[test]
    fn reserved_prev_suffix_is_rejected() {
        let x = Variable::continuous("x_prev");
        let y = Variable::continuous("y");
        let prior = CanonicalGaussian::normal(x.clone(), 0.0, 1.0).unwrap();
        let err = StateSpaceModel::new(
            "bad",
            Scope::new([x]).unwrap(),
            Scope::new([y]).unwrap(),
            Factor::Canonical(prior.clone()),
            Factor::Canonical(prior.clone()),
            Factor::Canonical(prior),
        )
        .unwrap_err();
        assert_eq!(err.code(), "ConfigInvalid");
    }
}
