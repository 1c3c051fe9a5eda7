//! Textual model documents.
//!
//! A model file is a versioned TOML document declaring variables and factors,
//! with optional `[dbn]` and `[quadrant]` sections that turn the document into
//! a state-space model. Parsing yields both the raw [`ModelDoc`] and the built
//! model; serialization re-emits the document, so parse-serialize-parse is the
//! identity on the parsed structure.
//!
//! Dense parameter blocks (`values`, `regions`, a Gaussian's `mean`/`cov`) are
//! written in the order the document lists the scope, row-major with the last
//! listed variable fastest, and are permuted into canonical scope order when
//! the factor is built.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FactorError, Result};
use crate::factor::Factor;
use crate::gaussian::{CanonicalGaussian, MomentGaussian};
use crate::hybrid::{BoxBounds, IndicatorFactor};
use crate::inference::{prev_name, FactorGraphModel, StateSpaceModel};
use crate::models::{quadrant_model, QuadrantModelConfig};
use crate::sparse::SparseTableFactor;
use crate::table::TableFactor;
use crate::variable::{Scope, Variable};

/// Schema version this module reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Raw document structure, one-to-one with the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<VariableDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub factors: Vec<FactorDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbn: Option<DbnDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<QuadrantDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Discrete,
    Continuous,
}

/// One factor declaration. `representation` picks the parameter fields that
/// apply; fields for other representations must stay absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub representation: String,
    /// Variable names, for representations keyed by a single scope.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scope: Vec<String>,
    /// `table`: dense values over `scope` in listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// `sparse_table`: explicit nonzero cells; missing cells are zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<SparseEntry>>,
    /// `gaussian`: mean over `scope` in listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// `gaussian` / `linear_gaussian`: covariance, listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    /// `gaussian`: log of the total mass, default 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_weight: Option<f64>,
    /// `linear_gaussian`: output variables of `N(outputs; A given + b, cov)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    /// `linear_gaussian`: conditioning variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given: Option<Vec<String>>,
    /// `linear_gaussian`: coefficient matrix, rows over `outputs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    /// `linear_gaussian`: offset vector over `outputs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// `indicator`: discrete variables selecting the region, may be empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectors: Option<Vec<String>>,
    /// `indicator`: continuous variables the boxes constrain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<Vec<String>>,
    /// `indicator`: one box per selector assignment, listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<RegionDecl>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseEntry {
    pub index: Vec<usize>,
    pub value: f64,
}

/// Half-open box `[lo, hi)` per continuous axis; TOML `inf` / `-inf` literals
/// express unbounded sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDecl {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Marks the document as a state-space model assembled from named factors.
/// `*_prev` copies of the state variables are declared implicitly for the
/// transition factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbnDecl {
    pub state: Vec<String>,
    pub observed: Vec<String>,
    pub prior: String,
    pub transition: String,
    pub observation: String,
}

/// Overrides for the built-in quadrant model; absent fields keep the shipped
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrantDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drifts: Option<[[f64; 2]; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_mean: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_cov: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A parsed document together with the model built from it.
#[derive(Debug, Clone)]
pub struct ParsedModel {
    doc: ModelDoc,
    built: BuiltModel,
}

#[derive(Debug, Clone)]
pub enum BuiltModel {
    Graph(FactorGraphModel),
    StateSpace(StateSpaceModel),
}

impl ParsedModel {
    pub fn doc(&self) -> &ModelDoc {
        &self.doc
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn built(&self) -> &BuiltModel {
        &self.built
    }

    pub fn as_graph(&self) -> Option<&FactorGraphModel> {
        match &self.built {
            BuiltModel::Graph(g) => Some(g),
            BuiltModel::StateSpace(_) => None,
        }
    }

    pub fn as_state_space(&self) -> Option<&StateSpaceModel> {
        match &self.built {
            BuiltModel::Graph(_) => None,
            BuiltModel::StateSpace(m) => Some(m),
        }
    }

    /// Effective quadrant configuration, if the document has a `[quadrant]`
    /// section. Carries the simulation defaults (horizon, seed).
    pub fn quadrant_config(&self) -> Option<QuadrantModelConfig> {
        self.doc.quadrant.as_ref().map(quadrant_config)
    }
}

/// Parses a document and builds the model it declares.
pub fn parse_model(text: &str) -> Result<ParsedModel> {
    let doc: ModelDoc = toml::from_str(text).map_err(|e| to_parse_error(text, &e))?;
    let built = build(&doc)?;
    Ok(ParsedModel { doc, built })
}

/// Re-emits the document a model was parsed from.
pub fn serialize_model(model: &ParsedModel) -> Result<String> {
    serialize_doc(&model.doc)
}

pub fn serialize_doc(doc: &ModelDoc) -> Result<String> {
    toml::to_string_pretty(doc).map_err(|e| FactorError::ConfigInvalid(e.to_string()))
}

fn to_parse_error(text: &str, err: &toml::de::Error) -> FactorError {
    let (line, column) = match err.span() {
        Some(span) => offset_to_line_col(text, span.start),
        None => (0, 0),
    };
    FactorError::ParseError {
        line,
        column,
        message: err.message().to_string(),
    }
}

fn offset_to_line_col(text: &str, offset: usize) -> (usize, usize) {
    let head = &text[..offset.min(text.len())];
    let line = head.bytes().filter(|&b| b == b'\n').count() + 1;
    let column = head.len() - head.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn schema_err(field: impl Into<String>, message: impl Into<String>) -> FactorError {
    FactorError::SchemaError {
        field: field.into(),
        message: message.into(),
    }
}

fn build(doc: &ModelDoc) -> Result<BuiltModel> {
    if doc.version != SCHEMA_VERSION {
        return Err(schema_err(
            "version",
            format!("unsupported schema version {}, expected {SCHEMA_VERSION}", doc.version),
        ));
    }
    if doc.name.is_empty() {
        return Err(schema_err("name", "model name must be nonempty"));
    }
    match (&doc.quadrant, &doc.dbn) {
        (Some(_), Some(_)) => Err(schema_err(
            "quadrant",
            "a document cannot have both [quadrant] and [dbn] sections",
        )),
        (Some(q), None) => {
            if !doc.variables.is_empty() || !doc.factors.is_empty() {
                return Err(schema_err(
                    "quadrant",
                    "quadrant models declare their variables and factors implicitly",
                ));
            }
            let cfg = quadrant_config(q);
            Ok(BuiltModel::StateSpace(quadrant_model(&cfg)?))
        }
        (None, Some(dbn)) => Ok(BuiltModel::StateSpace(build_dbn(doc, dbn)?)),
        (None, None) => Ok(BuiltModel::Graph(build_graph(doc)?)),
    }
}

fn quadrant_config(decl: &QuadrantDecl) -> QuadrantModelConfig {
    let mut cfg = QuadrantModelConfig::default();
    if let Some(d) = decl.drifts {
        cfg.drifts = d;
    }
    if let Some(q) = decl.q {
        cfg.q = q;
    }
    if let Some(r) = decl.r {
        cfg.r = r;
    }
    if let Some(d) = decl.delta {
        cfg.delta = d;
    }
    if let Some(m) = decl.start_mean {
        cfg.start_mean = m;
    }
    if let Some(c) = decl.start_cov {
        cfg.start_cov = c;
    }
    if let Some(h) = decl.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = decl.seed {
        cfg.seed = s;
    }
    cfg
}

fn declared_variables(doc: &ModelDoc) -> Result<BTreeMap<String, Variable>> {
    let mut vars = BTreeMap::new();
    for (i, d) in doc.variables.iter().enumerate() {
        if d.name.is_empty() {
            return Err(schema_err(format!("variables[{i}].name"), "name must be nonempty"));
        }
        let v = match d.kind {
            VarKind::Discrete => {
                let c = d.cardinality.ok_or_else(|| {
                    schema_err(
                        format!("variables[{i}].cardinality"),
                        format!("discrete variable `{}` needs a cardinality", d.name),
                    )
                })?;
                if c == 0 {
                    return Err(schema_err(
                        format!("variables[{i}].cardinality"),
                        "cardinality must be at least 1",
                    ));
                }
                Variable::discrete(d.name.clone(), c)
            }
            VarKind::Continuous => {
                if d.cardinality.is_some() {
                    return Err(schema_err(
                        format!("variables[{i}].cardinality"),
                        format!("continuous variable `{}` does not take a cardinality", d.name),
                    ));
                }
                Variable::continuous(d.name.clone())
            }
        };
        if vars.insert(d.name.clone(), v).is_some() {
            return Err(schema_err(
                format!("variables[{i}].name"),
                format!("variable `{}` is declared twice", d.name),
            ));
        }
    }
    Ok(vars)
}

fn build_graph(doc: &ModelDoc) -> Result<FactorGraphModel> {
    let vars = declared_variables(doc)?;
    let factors: Result<Vec<Factor>> = doc
        .factors
        .iter()
        .enumerate()
        .map(|(i, d)| build_factor(i, d, &vars))
        .collect();
    FactorGraphModel::new(
        doc.name.clone(),
        doc.description.clone(),
        vars.into_values().collect(),
        factors?,
    )
}

fn build_dbn(doc: &ModelDoc, dbn: &DbnDecl) -> Result<StateSpaceModel> {
    let vars = declared_variables(doc)?;
    let pick_scope = |field: &str, names: &[String]| -> Result<Scope> {
        let mut picked = Vec::with_capacity(names.len());
        for n in names {
            match vars.get(n) {
                Some(v) => picked.push(v.clone()),
                None => {
                    return Err(schema_err(
                        format!("dbn.{field}"),
                        format!("variable `{n}` is not declared"),
                    ))
                }
            }
        }
        Scope::new(picked)
    };
    let state = pick_scope("state", &dbn.state)?;
    let obs = pick_scope("observed", &dbn.observed)?;

    // The transition factor may also mention `*_prev` copies of the state.
    let mut with_prev = vars.clone();
    for v in state.iter() {
        let p = prev_name(v.name());
        let copy = match v.cardinality() {
            Some(c) => Variable::discrete(p.clone(), c),
            None => Variable::continuous(p.clone()),
        };
        with_prev.insert(p, copy);
    }

    let find = |field: &str, name: &str| -> Result<(usize, &FactorDecl)> {
        let mut hit = None;
        for (i, d) in doc.factors.iter().enumerate() {
            if d.name.as_deref() == Some(name) {
                if hit.is_some() {
                    return Err(schema_err(
                        format!("dbn.{field}"),
                        format!("factor name `{name}` is declared twice"),
                    ));
                }
                hit = Some((i, d));
            }
        }
        hit.ok_or_else(|| {
            schema_err(format!("dbn.{field}"), format!("no factor named `{name}`"))
        })
    };
    let (pi, prior) = find("prior", &dbn.prior)?;
    let (ti, transition) = find("transition", &dbn.transition)?;
    let (oi, observation) = find("observation", &dbn.observation)?;
    for (i, d) in doc.factors.iter().enumerate() {
        if i != pi && i != ti && i != oi {
            return Err(schema_err(
                format!("factors[{i}]"),
                format!(
                    "factor `{}` is not referenced by the [dbn] section",
                    d.name.as_deref().unwrap_or("<unnamed>")
                ),
            ));
        }
    }

    StateSpaceModel::new(
        doc.name.clone(),
        state,
        obs,
        build_factor(pi, prior, &vars)?,
        build_factor(ti, transition, &with_prev)?,
        build_factor(oi, observation, &vars)?,
    )
}

/// Fields each representation accepts, beyond `name` and `representation`.
fn allowed_fields(rep: &str) -> Option<&'static [&'static str]> {
    match rep {
        "table" => Some(&["scope", "values"]),
        "sparse_table" => Some(&["scope", "entries"]),
        "gaussian" => Some(&["scope", "mean", "cov", "log_weight"]),
        "linear_gaussian" => Some(&["outputs", "given", "a", "b", "cov"]),
        "indicator" => Some(&["selectors", "continuous", "regions"]),
        _ => None,
    }
}

fn build_factor(i: usize, decl: &FactorDecl, vars: &BTreeMap<String, Variable>) -> Result<Factor> {
    let rep = decl.representation.as_str();
    let allowed = allowed_fields(rep).ok_or_else(|| {
        schema_err(
            format!("factors[{i}].representation"),
            format!(
                "unknown representation `{rep}`, expected one of \
                 table, sparse_table, gaussian, linear_gaussian, indicator"
            ),
        )
    })?;
    let present: [(&str, bool); 13] = [
        ("scope", !decl.scope.is_empty()),
        ("values", decl.values.is_some()),
        ("entries", decl.entries.is_some()),
        ("mean", decl.mean.is_some()),
        ("cov", decl.cov.is_some()),
        ("log_weight", decl.log_weight.is_some()),
        ("outputs", decl.outputs.is_some()),
        ("given", decl.given.is_some()),
        ("a", decl.a.is_some()),
        ("b", decl.b.is_some()),
        ("selectors", decl.selectors.is_some()),
        ("continuous", decl.continuous.is_some()),
        ("regions", decl.regions.is_some()),
    ];
    for (field, is_set) in present {
        if is_set && !allowed.contains(&field) {
            return Err(schema_err(
                format!("factors[{i}].{field}"),
                format!("`{rep}` factors do not take `{field}`"),
            ));
        }
    }

    let lookup = |field: &str, names: &[String]| -> Result<Vec<Variable>> {
        names
            .iter()
            .map(|n| {
                vars.get(n).cloned().ok_or_else(|| {
                    schema_err(
                        format!("factors[{i}].{field}"),
                        format!("variable `{n}` is not declared"),
                    )
                })
            })
            .collect()
    };
    let require_field = |field: &'static str| -> FactorError {
        schema_err(format!("factors[{i}].{field}"), format!("`{rep}` factors require `{field}`"))
    };

    match rep {
        "table" => {
            let listed = lookup("scope", &decl.scope)?;
            let values = decl.values.as_ref().ok_or_else(|| require_field("values"))?;
            require_discrete(i, "scope", &listed)?;
            let (scope, canon) = permute_dense(i, &listed, values)?;
            Ok(Factor::Table(TableFactor::new(scope, canon)?))
        }
        "sparse_table" => {
            let listed = lookup("scope", &decl.scope)?;
            let entries = decl.entries.as_ref().ok_or_else(|| require_field("entries"))?;
            require_discrete(i, "scope", &listed)?;
            let scope = listed_scope(i, &listed)?;
            let perm: Vec<usize> = listed
                .iter()
                .map(|v| scope.index_of(v.name()).unwrap())
                .collect();
            let cells: Result<Vec<(Vec<usize>, f64)>> = entries
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    if e.index.len() != listed.len() {
                        return Err(schema_err(
                            format!("factors[{i}].entries[{j}].index"),
                            format!("expected {} coordinates, got {}", listed.len(), e.index.len()),
                        ));
                    }
                    let mut idx = vec![0usize; listed.len()];
                    for (k, &x) in e.index.iter().enumerate() {
                        idx[perm[k]] = x;
                    }
                    Ok((idx, e.value))
                })
                .collect();
            Ok(Factor::Sparse(SparseTableFactor::new(scope, cells?)?))
        }
        "gaussian" => {
            let listed = lookup("scope", &decl.scope)?;
            let mean = decl.mean.as_ref().ok_or_else(|| require_field("mean"))?;
            let cov = decl.cov.as_ref().ok_or_else(|| require_field("cov"))?;
            require_continuous(i, "scope", &listed)?;
            let scope = listed_scope(i, &listed)?;
            let n = listed.len();
            let mean = check_vector(i, "mean", mean, n)?;
            let cov = check_matrix(i, "cov", cov, n, n)?;
            let perm: Vec<usize> = listed
                .iter()
                .map(|v| scope.index_of(v.name()).unwrap())
                .collect();
            let mut mean2 = DVector::zeros(n);
            let mut cov2 = DMatrix::zeros(n, n);
            for a in 0..n {
                mean2[perm[a]] = mean[a];
                for b in 0..n {
                    cov2[(perm[a], perm[b])] = cov[(a, b)];
                }
            }
            let m = MomentGaussian::new(scope, mean2, cov2, decl.log_weight.unwrap_or(0.0))?;
            Ok(Factor::Canonical(m.to_canonical()?))
        }
        "linear_gaussian" => {
            let out_names = decl.outputs.as_ref().ok_or_else(|| require_field("outputs"))?;
            let given_names = decl.given.as_ref().ok_or_else(|| require_field("given"))?;
            let outputs = lookup("outputs", out_names)?;
            let given = lookup("given", given_names)?;
            require_continuous(i, "outputs", &outputs)?;
            require_continuous(i, "given", &given)?;
            let a = decl.a.as_ref().ok_or_else(|| require_field("a"))?;
            let b = decl.b.as_ref().ok_or_else(|| require_field("b"))?;
            let cov = decl.cov.as_ref().ok_or_else(|| require_field("cov"))?;
            let d = outputs.len();
            let a = check_matrix(i, "a", a, d, given.len())?;
            let b = check_vector(i, "b", b, d)?;
            let cov = check_matrix(i, "cov", cov, d, d)?;
            Ok(Factor::Canonical(CanonicalGaussian::linear_conditional(
                &outputs, &given, &a, &b, &cov,
            )?))
        }
        "indicator" => {
            let sel_names = decl.selectors.clone().unwrap_or_default();
            let cont_names = decl.continuous.as_ref().ok_or_else(|| require_field("continuous"))?;
            let regions = decl.regions.as_ref().ok_or_else(|| require_field("regions"))?;
            let selectors = lookup("selectors", &sel_names)?;
            let continuous = lookup("continuous", cont_names)?;
            require_discrete(i, "selectors", &selectors)?;
            require_continuous(i, "continuous", &continuous)?;
            let cont_scope = listed_scope(i, &continuous)?;
            let axis_perm: Vec<usize> = continuous
                .iter()
                .map(|v| cont_scope.index_of(v.name()).unwrap())
                .collect();
            let boxes: Result<Vec<BoxBounds>> = regions
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    if r.lo.len() != continuous.len() || r.hi.len() != continuous.len() {
                        return Err(schema_err(
                            format!("factors[{i}].regions[{j}]"),
                            format!("expected {} bounds per side", continuous.len()),
                        ));
                    }
                    let mut bounds = vec![(0.0, 0.0); continuous.len()];
                    for (k, &p) in axis_perm.iter().enumerate() {
                        bounds[p] = (r.lo[k], r.hi[k]);
                    }
                    Ok(bounds)
                })
                .collect();
            let boxes = boxes?;
            let (disc_scope, canon_boxes) = if selectors.is_empty() {
                if boxes.len() != 1 {
                    return Err(schema_err(
                        format!("factors[{i}].regions"),
                        format!("no selectors, so expected 1 region, got {}", boxes.len()),
                    ));
                }
                (Scope::empty(), boxes)
            } else {
                permute_dense(i, &selectors, &boxes)?
            };
            Ok(Factor::Indicator(IndicatorFactor::new(
                disc_scope, cont_scope, canon_boxes,
            )?))
        }
        _ => unreachable!("representation validated above"),
    }
}

fn listed_scope(i: usize, listed: &[Variable]) -> Result<Scope> {
    let scope = Scope::new(listed.iter().cloned())?;
    if scope.len() != listed.len() {
        return Err(schema_err(
            format!("factors[{i}].scope"),
            "scope lists a variable twice",
        ));
    }
    Ok(scope)
}

fn require_discrete(i: usize, field: &str, vars: &[Variable]) -> Result<()> {
    match vars.iter().find(|v| v.is_continuous()) {
        Some(v) => Err(schema_err(
            format!("factors[{i}].{field}"),
            format!("variable `{}` must be discrete here", v.name()),
        )),
        None => Ok(()),
    }
}

fn require_continuous(i: usize, field: &str, vars: &[Variable]) -> Result<()> {
    match vars.iter().find(|v| v.is_discrete()) {
        Some(v) => Err(schema_err(
            format!("factors[{i}].{field}"),
            format!("variable `{}` must be continuous here", v.name()),
        )),
        None => Ok(()),
    }
}

fn check_vector(i: usize, field: &str, data: &[f64], n: usize) -> Result<DVector<f64>> {
    if data.len() != n {
        return Err(schema_err(
            format!("factors[{i}].{field}"),
            format!("expected {n} entries, got {}", data.len()),
        ));
    }
    Ok(DVector::from_column_slice(data))
}

fn check_matrix(i: usize, field: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(schema_err(
            format!("factors[{i}].{field}"),
            format!("expected a {nr}x{nc} matrix"),
        ));
    }
    let mut m = DMatrix::zeros(nr, nc);
    for (a, row) in rows.iter().enumerate() {
        for (b, &x) in row.iter().enumerate() {
            m[(a, b)] = x;
        }
    }
    Ok(m)
}

/// Reorders dense data laid out row-major over `listed` (last listed variable
/// fastest) into row-major over the canonical ordering of the same variables.
fn permute_dense<T: Clone>(i: usize, listed: &[Variable], data: &[T]) -> Result<(Scope, Vec<T>)> {
    let scope = listed_scope(i, listed)?;
    let total = scope.table_len()?;
    if data.len() != total {
        return Err(schema_err(
            format!("factors[{i}]"),
            format!("scope has {total} cells, got {} entries", data.len()),
        ));
    }
    let cards: Vec<usize> = listed
        .iter()
        .map(|v| v.cardinality().expect("discrete scope"))
        .collect();
    let canon_strides = scope.strides()?;
    let perm: Vec<usize> = listed
        .iter()
        .map(|v| scope.index_of(v.name()).unwrap())
        .collect();
    let mut out: Vec<Option<T>> = vec![None; total];
    for (flat, item) in data.iter().enumerate() {
        let mut rem = flat;
        let mut target = 0usize;
        for k in (0..listed.len()).rev() {
            target += (rem % cards[k]) * canon_strides[perm[k]];
            rem /= cards[k];
        }
        out[target] = Some(item.clone());
    }
    Ok((scope, out.into_iter().map(|x| x.expect("bijective reindex")).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{filter, variable_elimination, ProjectionPolicy};
    use crate::variable::Assignment;

    const MINIMAL: &str = r#"
version = 1
name = "coin"

[[variables]]
name = "X"
kind = "discrete"
cardinality = 2

[[factors]]
representation = "table"
scope = ["X"]
values = [0.4, 0.6]
"#;

    #[test]
    fn minimal_document_parses() {
        let m = parse_model(MINIMAL).unwrap();
        let g = m.as_graph().unwrap();
        assert_eq!(g.name(), "coin");
        assert_eq!(g.variables().len(), 1);
        let query = Scope::new([g.variable("X").unwrap().clone()]).unwrap();
        let post = variable_elimination(g, &query, &Assignment::new()).unwrap();
        let p = post.evaluate(&Assignment::new().with("X", 1)).unwrap();
        assert!((p - 0.6).abs() < 1e-12);
    }

    #[test]
    fn listed_scope_order_is_permuted_to_canonical() {
        // Scope is written (B, A); canonical order is (A, B). The table value
        // at (b, a) in the file must surface at assignment {A=a, B=b}.
        let text = r#"
version = 1
name = "perm"

[[variables]]
name = "A"
kind = "discrete"
cardinality = 2

[[variables]]
name = "B"
kind = "discrete"
cardinality = 3

[[factors]]
representation = "table"
scope = ["B", "A"]
values = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
"#;
        let m = parse_model(text).unwrap();
        let f = &m.as_graph().unwrap().factors()[0];
        for b in 0..3usize {
            for a in 0..2usize {
                let want = (b * 2 + a) as f64 * 0.1;
                let at = Assignment::new().with("A", a).with("B", b);
                assert!((f.evaluate(&at).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_entries_use_the_listed_order() {
        let text = r#"
version = 1
name = "sparse"

[[variables]]
name = "A"
kind = "discrete"
cardinality = 2

[[variables]]
name = "B"
kind = "discrete"
cardinality = 3

[[factors]]
representation = "sparse_table"
scope = ["B", "A"]
entries = [{ index = [2, 1], value = 0.7 }]
"#;
        let m = parse_model(text).unwrap();
        let f = &m.as_graph().unwrap().factors()[0];
        let hit = Assignment::new().with("A", 1).with("B", 2);
        let miss = Assignment::new().with("A", 1).with("B", 1);
        assert!((f.evaluate(&hit).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(f.evaluate(&miss).unwrap(), 0.0);
    }

    #[test]
    fn version_other_than_one_is_rejected() {
        let text = MINIMAL.replace("version = 1", "version = 2");
        match parse_model(&text) {
            Err(FactorError::SchemaError { field, .. }) => assert_eq!(field, "version"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn undeclared_scope_variable_is_named() {
        let text = MINIMAL.replace("scope = [\"X\"]", "scope = [\"Y\"]");
        match parse_model(&text) {
            Err(FactorError::SchemaError { field, message }) => {
                assert_eq!(field, "factors[0].scope");
                assert!(message.contains("`Y`"), "message: {message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_representation_is_rejected_with_its_position() {
        let text = MINIMAL.replace("\"table\"", "\"wavelet\"");
        match parse_model(&text) {
            Err(FactorError::SchemaError { field, message }) => {
                assert_eq!(field, "factors[0].representation");
                assert!(message.contains("wavelet"), "message: {message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn stray_parameter_fields_are_rejected() {
        let text = MINIMAL.replace("values = [0.4, 0.6]", "values = [0.4, 0.6]\nmean = [0.0]");
        match parse_model(&text) {
            Err(FactorError::SchemaError { field, .. }) => assert_eq!(field, "factors[0].mean"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_toml_reports_line_and_column() {
        let text = "version = 1\nname = \"x\"\n[[factors]\n";
        match parse_model(text) {
            Err(FactorError::ParseError { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column >= 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_keys_are_parse_errors() {
        let text = MINIMAL.replace("name = \"coin\"", "name = \"coin\"\nflavor = \"mint\"");
        assert!(matches!(parse_model(&text), Err(FactorError::ParseError { .. })));
    }

    #[test]
    fn round_trip_is_identity_on_the_parsed_structure() {
        let first = parse_model(MINIMAL).unwrap();
        let text2 = serialize_model(&first).unwrap();
        let second = parse_model(&text2).unwrap();
        assert_eq!(first.doc(), second.doc());
    }

    #[test]
    fn dbn_document_builds_a_runnable_state_space_model() {
        let text = r#"
version = 1
name = "rw"

[[variables]]
name = "x"
kind = "continuous"

[[variables]]
name = "y"
kind = "continuous"

[[factors]]
name = "prior"
representation = "gaussian"
scope = ["x"]
mean = [0.0]
cov = [[1.0]]

[[factors]]
name = "step"
representation = "linear_gaussian"
outputs = ["x"]
given = ["x_prev"]
a = [[1.0]]
b = [0.0]
cov = [[1.0]]

[[factors]]
name = "emit"
representation = "linear_gaussian"
outputs = ["y"]
given = ["x"]
a = [[1.0]]
b = [0.0]
cov = [[1.0]]

[dbn]
state = ["x"]
observed = ["y"]
prior = "prior"
transition = "step"
observation = "emit"
"#;
        let m = parse_model(text).unwrap();
        let ssm = m.as_state_space().unwrap();
        let obs = vec![Assignment::new().with("y", 1.0)];
        let run = filter(ssm, &obs, &ProjectionPolicy::None).unwrap();
        // One step of the unit random walk: predictive variance 2, posterior
        // mean y * 2/3.
        let post = crate::inference::summarize(&run.posteriors[0]).unwrap();
        assert!((post.continuous[0].mean - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn unreferenced_factors_in_a_dbn_are_rejected() {
        let text = r#"
version = 1
name = "rw"

[[variables]]
name = "x"
kind = "continuous"

[[variables]]
name = "y"
kind = "continuous"

[[factors]]
name = "prior"
representation = "gaussian"
scope = ["x"]
mean = [0.0]
cov = [[1.0]]

[[factors]]
name = "step"
representation = "linear_gaussian"
outputs = ["x"]
given = ["x_prev"]
a = [[1.0]]
b = [0.0]
cov = [[1.0]]

[[factors]]
name = "emit"
representation = "linear_gaussian"
outputs = ["y"]
given = ["x"]
a = [[1.0]]
b = [0.0]
cov = [[1.0]]

[[factors]]
name = "extra"
representation = "table"
scope = []
values = [1.0]

[dbn]
state = ["x"]
observed = ["y"]
prior = "prior"
transition = "step"
observation = "emit"
"#;
        match parse_model(text) {
            Err(FactorError::SchemaError { field, message }) => {
                assert_eq!(field, "factors[3]");
                assert!(message.contains("extra"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn quadrant_document_applies_overrides() {
        let text = r#"
version = 1
name = "quadrant-slow"

[quadrant]
delta = 0.05
horizon = 17
seed = 9
"#;
        let m = parse_model(text).unwrap();
        assert!(m.as_state_space().is_some());
        let cfg = m.quadrant_config().unwrap();
        assert_eq!(cfg.delta, 0.05);
        assert_eq!(cfg.horizon, 17);
        assert_eq!(cfg.seed, 9);
        let defaults = QuadrantModelConfig::default();
        assert_eq!(cfg.q, defaults.q);
        assert_eq!(cfg.drifts, defaults.drifts);
    }

    #[test]
    fn indicator_regions_accept_infinite_bounds() {
        let text = r#"
version = 1
name = "gate"

[[variables]]
name = "s"
kind = "discrete"
cardinality = 2

[[variables]]
name = "f"
kind = "continuous"

[[factors]]
representation = "indicator"
selectors = ["s"]
continuous = ["f"]
regions = [
  { lo = [0.0], hi = [inf] },
  { lo = [-inf], hi = [0.0] },
]
"#;
        let m = parse_model(text).unwrap();
        let f = &m.as_graph().unwrap().factors()[0];
        let at = Assignment::new().with("s", 1).with("f", -3.0);
        assert_eq!(f.evaluate(&at).unwrap(), 1.0);
        let off = Assignment::new().with("s", 0).with("f", -3.0);
        assert_eq!(f.evaluate(&off).unwrap(), 0.0);
    }
}
