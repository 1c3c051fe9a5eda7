//! Variables, scopes and assignments.
//!
//! A [`Variable`] is a name plus a domain (finite discrete or real-valued
//! continuous). A [`Scope`] is a duplicate-free set of variables kept in
//! canonical order (lexicographic by name), which fixes the axis order of
//! every factor representation. An [`Assignment`] maps variable names to
//! values and is how evidence and evaluation points are expressed.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{FactorError, Result};

/// Domain of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    /// Finite domain `{0, 1, .., cardinality-1}`.
    Discrete { cardinality: usize },
    /// Real-valued domain.
    Continuous,
}

impl Domain {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Domain::Discrete { .. })
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, Domain::Continuous)
    }

    /// Cardinality of a discrete domain, `None` for continuous.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Domain::Discrete { cardinality } => Some(*cardinality),
            Domain::Continuous => None,
        }
    }
}

/// A named random variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variable {
    name: String,
    domain: Domain,
}

impl Variable {
    /// A discrete variable with domain `{0, .., cardinality-1}`.
    ///
    /// Cardinality must be at least 1.
    pub fn discrete(name: impl Into<String>, cardinality: usize) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "variable name must be nonempty");
        assert!(cardinality >= 1, "cardinality must be >= 1");
        Variable {
            name,
            domain: Domain::Discrete { cardinality },
        }
    }

    /// A binary variable, domain `{0, 1}`.
    pub fn binary(name: impl Into<String>) -> Self {
        Variable::discrete(name, 2)
    }

    /// A real-valued variable.
    pub fn continuous(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "variable name must be nonempty");
        Variable {
            name,
            domain: Domain::Continuous,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_discrete(&self) -> bool {
        self.domain.is_discrete()
    }

    pub fn is_continuous(&self) -> bool {
        self.domain.is_continuous()
    }

    /// Cardinality for discrete variables, `None` for continuous.
    pub fn cardinality(&self) -> Option<usize> {
        self.domain.cardinality()
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// An ordered, duplicate-free set of variables.
///
/// Variables are kept sorted lexicographically by name. Every factor stores
/// its parameters relative to this canonical order, so operation results do
/// not depend on argument order or construction history.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scope {
    vars: Vec<Variable>,
}

impl Scope {
    /// Empty scope (the scope of scalar factors).
    pub fn empty() -> Self {
        Scope { vars: Vec::new() }
    }

    /// Builds a scope from variables, sorting by name.
    ///
    /// Duplicate names with identical domains collapse to one entry;
    /// duplicate names with conflicting domains are a [`FactorError::DomainMismatch`].
    pub fn new(vars: impl IntoIterator<Item = Variable>) -> Result<Self> {
        let mut vars: Vec<Variable> = vars.into_iter().collect();
        vars.sort_by(|a, b| a.name.cmp(&b.name));
        let mut out: Vec<Variable> = Vec::with_capacity(vars.len());
        for v in vars {
            match out.last() {
                Some(prev) if prev.name == v.name => {
                    if prev.domain != v.domain {
                        return Err(FactorError::DomainMismatch(v.name.clone()));
                    }
                }
                _ => out.push(v),
            }
        }
        Ok(Scope { vars: out })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Variable> {
        self.vars.iter()
    }

    /// Position of `name` in canonical order.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars
            .binary_search_by(|v| v.name.as_str().cmp(name))
            .ok()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&Variable> {
        self.index_of(name).map(|i| &self.vars[i])
    }

    /// True if every variable of `self` occurs in `other` with the same domain.
    pub fn is_subset_of(&self, other: &Scope) -> bool {
        self.vars
            .iter()
            .all(|v| other.get(&v.name).map(|o| o.domain) == Some(v.domain))
    }

    /// Union of two scopes; errors if a shared name has conflicting domains.
    pub fn union(&self, other: &Scope) -> Result<Scope> {
        Scope::new(self.vars.iter().chain(other.vars.iter()).cloned())
    }

    /// Variables of `self` that are absent from `other`.
    pub fn difference(&self, other: &Scope) -> Scope {
        Scope {
            vars: self
                .vars
                .iter()
                .filter(|v| !other.contains(&v.name))
                .cloned()
                .collect(),
        }
    }

    /// Variables present in both scopes (domains must agree).
    pub fn intersection(&self, other: &Scope) -> Result<Scope> {
        let mut out = Vec::new();
        for v in &self.vars {
            if let Some(o) = other.get(&v.name) {
                if o.domain != v.domain {
                    return Err(FactorError::DomainMismatch(v.name.clone()));
                }
                out.push(v.clone());
            }
        }
        Ok(Scope { vars: out })
    }

    /// Scope without the named variables. Names not in scope are ignored.
    pub fn without(&self, names: &[&str]) -> Scope {
        Scope {
            vars: self
                .vars
                .iter()
                .filter(|v| !names.contains(&v.name.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Discrete and continuous parts, each in canonical order.
    pub fn split_by_kind(&self) -> (Scope, Scope) {
        let (d, c): (Vec<_>, Vec<_>) = self.vars.iter().cloned().partition(Variable::is_discrete);
        (Scope { vars: d }, Scope { vars: c })
    }

    pub fn names(&self) -> Vec<&str> {
        self.vars.iter().map(|v| v.name.as_str()).collect()
    }

    /// Product of discrete cardinalities; continuous variables are an error.
    /// An empty scope has one cell.
    pub fn table_len(&self) -> Result<usize> {
        let mut n = 1usize;
        for v in &self.vars {
            match v.cardinality() {
                Some(c) => n = n.checked_mul(c).ok_or_else(|| {
                    FactorError::ConfigInvalid("table size overflows usize".into())
                })?,
                None => {
                    return Err(FactorError::Unsupported(format!(
                        "variable `{}` is continuous; tables require discrete scopes",
                        v.name
                    )))
                }
            }
        }
        Ok(n)
    }

    /// Row-major strides matching canonical order (last variable fastest).
    pub fn strides(&self) -> Result<Vec<usize>> {
        let mut strides = vec![0usize; self.vars.len()];
        let mut acc = 1usize;
        for (i, v) in self.vars.iter().enumerate().rev() {
            strides[i] = acc;
            acc *= v.cardinality().ok_or_else(|| {
                FactorError::Unsupported(format!(
                    "variable `{}` is continuous; strides require discrete scopes",
                    v.name
                ))
            })?;
        }
        Ok(strides)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", v.name)?;
        }
        write!(f, "}}")
    }
}

impl<'a> IntoIterator for &'a Scope {
    type Item = &'a Variable;
    type IntoIter = std::slice::Iter<'a, Variable>;
    fn into_iter(self) -> Self::IntoIter {
        self.vars.iter()
    }
}

/// A value bound to a variable: a category index or a real number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Index(usize),
    Real(f64),
}

impl Value {
    pub fn as_index(&self) -> Option<usize> {
        match self {
            Value::Index(i) => Some(*i),
            Value::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            Value::Index(_) => None,
        }
    }
}

impl From<usize> for Value {
    fn from(i: usize) -> Self {
        Value::Index(i)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Real(x)
    }
}

/// A partial map from variable names to values.
///
/// Used both as evidence (`reduce`) and as an evaluation point
/// (`evaluate`). Entries for variables outside a factor's scope are ignored
/// by the operations that consume assignments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    values: BTreeMap<String, Value>,
}

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    /// Builder-style insertion.
    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.values.insert(name.into(), value.into());
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.values.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.values.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Category index for `var`, checking kind and range.
    pub fn index_for(&self, var: &Variable) -> Result<usize> {
        let v = self
            .get(var.name())
            .ok_or_else(|| FactorError::MissingVariable(var.name().to_string()))?;
        let i = v.as_index().ok_or_else(|| {
            FactorError::DomainMismatch(format!("`{}` expects a category index", var.name()))
        })?;
        let card = var.cardinality().expect("discrete variable");
        if i >= card {
            return Err(FactorError::IndexOutOfRange(format!(
                "`{}` has cardinality {card}, got index {i}",
                var.name()
            )));
        }
        Ok(i)
    }

    /// Real value for `var`, checking kind.
    pub fn real_for(&self, var: &Variable) -> Result<f64> {
        let v = self
            .get(var.name())
            .ok_or_else(|| FactorError::MissingVariable(var.name().to_string()))?;
        v.as_real().ok_or_else(|| {
            FactorError::DomainMismatch(format!("`{}` expects a real value", var.name()))
        })
    }
}

impl FromIterator<(String, Value)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Assignment {
            values: iter.into_iter().collect(),
        }
    }
}

/// Iterates all index tuples of a discrete scope in row-major order.
///
/// Yields nothing for scopes containing a continuous variable; the empty
/// scope yields exactly one empty tuple.
pub fn index_tuples(scope: &Scope) -> IndexTuples {
    let cards: Option<Vec<usize>> = scope.iter().map(|v| v.cardinality()).collect();
    IndexTuples {
        cards: cards.clone().unwrap_or_default(),
        current: vec![0; cards.as_ref().map_or(0, |c| c.len())],
        done: cards.is_none() || cards.as_ref().is_some_and(|c| c.iter().any(|&k| k == 0)),
        started: false,
    }
}

pub struct IndexTuples {
    cards: Vec<usize>,
    current: Vec<usize>,
    done: bool,
    started: bool,
}

impl Iterator for IndexTuples {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.current.clone());
        }
        // Row-major increment: last position fastest.
        for i in (0..self.cards.len()).rev() {
            self.current[i] += 1;
            if self.current[i] < self.cards[i] {
                return Some(self.current.clone());
            }
            self.current[i] = 0;
        }
        self.done = true;
        None
    }
}
