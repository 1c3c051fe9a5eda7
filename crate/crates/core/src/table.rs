//! Dense tables over discrete scopes.
//!
//! A [`TableFactor`] stores one nonnegative value per joint assignment of its
//! scope, row-major in canonical variable order (last variable fastest). The
//! empty scope is allowed and holds exactly one cell, which is how scalar
//! factors (e.g. normalization constants) are represented.

use crate::error::{FactorError, Result};
use crate::variable::{index_tuples, Assignment, Scope, Variable};

/// Dense nonnegative table over a discrete scope.
#[derive(Debug, Clone, PartialEq)]
pub struct TableFactor {
    scope: Scope,
    strides: Vec<usize>,
    values: Vec<f64>,
}

/// Stride of each variable of `sup` within a factor over `sub`; 0 when the
/// variable is absent. Lets a sup-scope index tuple be projected onto a
/// sub-scope flat index with one dot product.
pub(crate) fn projection_strides(sub: &Scope, sub_strides: &[usize], sup: &Scope) -> Vec<usize> {
    sup.iter()
        .map(|v| sub.index_of(v.name()).map_or(0, |i| sub_strides[i]))
        .collect()
}

impl TableFactor {
    /// Builds a table; `values` must be row-major over the canonical order of
    /// `scope` and contain exactly one entry per cell.
    pub fn new(scope: Scope, values: Vec<f64>) -> Result<Self> {
        let expect = scope.table_len()?;
        if values.len() != expect {
            return Err(FactorError::ConfigInvalid(format!(
                "scope {} has {expect} cells, got {} values",
                scope,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(FactorError::ConfigInvalid(format!(
                "table values must be finite and nonnegative, got {bad}"
            )));
        }
        let strides = scope.strides()?;
        Ok(TableFactor {
            scope,
            strides,
            values,
        })
    }

    /// Table holding the same value in every cell.
    pub fn constant(scope: Scope, value: f64) -> Result<Self> {
        let n = scope.table_len()?;
        TableFactor::new(scope, vec![value; n])
    }

    /// Empty-scope factor holding a single value.
    pub fn scalar(value: f64) -> Result<Self> {
        TableFactor::new(Scope::empty(), vec![value])
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Flat index of an index tuple aligned to the canonical scope order.
    pub fn flat_index(&self, indices: &[usize]) -> Result<usize> {
        if indices.len() != self.scope.len() {
            return Err(FactorError::ScopeMismatch(format!(
                "expected {} indices, got {}",
                self.scope.len(),
                indices.len()
            )));
        }
        let mut flat = 0usize;
        for ((&i, v), &s) in indices.iter().zip(self.scope.iter()).zip(&self.strides) {
            let card = v.cardinality().expect("discrete scope");
            if i >= card {
                return Err(FactorError::IndexOutOfRange(format!(
                    "`{}` has cardinality {card}, got index {i}",
                    v.name()
                )));
            }
            flat += i * s;
        }
        Ok(flat)
    }

    /// Value at an index tuple in canonical order.
    pub fn value_at(&self, indices: &[usize]) -> Result<f64> {
        Ok(self.values[self.flat_index(indices)?])
    }

    /// Value at a full assignment of the scope.
    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let mut flat = 0usize;
        for (v, &s) in self.scope.iter().zip(&self.strides) {
            flat += at.index_for(v)? * s;
        }
        Ok(self.values[flat])
    }

    /// Total mass (sum of all cells).
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Pointwise product; the result ranges over the union scope.
    pub fn multiply(&self, other: &TableFactor) -> Result<TableFactor> {
        let scope = self.scope.union(&other.scope)?;
        let strides = scope.strides()?;
        let fp = projection_strides(&self.scope, &self.strides, &scope);
        let gp = projection_strides(&other.scope, &other.strides, &scope);
        let mut values = Vec::with_capacity(scope.table_len()?);
        for idx in index_tuples(&scope) {
            let fi: usize = idx.iter().zip(&fp).map(|(&i, &s)| i * s).sum();
            let gi: usize = idx.iter().zip(&gp).map(|(&i, &s)| i * s).sum();
            values.push(self.values[fi] * other.values[gi]);
        }
        Ok(TableFactor {
            scope,
            strides,
            values,
        })
    }

    /// Marginalizes the named variables away. All must be in scope.
    pub fn sum_out(&self, names: &[&str]) -> Result<TableFactor> {
        for n in names {
            if !self.scope.contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }
        let scope = self.scope.without(names);
        let strides = scope.strides()?;
        let proj = projection_strides(&scope, &strides, &self.scope);
        let mut values = vec![0.0; scope.table_len()?];
        for (idx, &v) in index_tuples(&self.scope).zip(&self.values) {
            let ri: usize = idx.iter().zip(&proj).map(|(&i, &s)| i * s).sum();
            values[ri] += v;
        }
        Ok(TableFactor {
            scope,
            strides,
            values,
        })
    }

    /// Fixes the scope variables present in `evidence`; variables outside the
    /// scope are ignored.
    pub fn reduce(&self, evidence: &Assignment) -> Result<TableFactor> {
        let fixed: Vec<&Variable> = self
            .scope
            .iter()
            .filter(|v| evidence.contains(v.name()))
            .collect();
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        let mut offset = 0usize;
        for v in &fixed {
            let i = evidence.index_for(v)?;
            offset += i * self.strides[self.scope.index_of(v.name()).unwrap()];
        }
        let names: Vec<&str> = fixed.iter().map(|v| v.name()).collect();
        let scope = self.scope.without(&names);
        let strides = scope.strides()?;
        let proj = projection_strides(&self.scope, &self.strides, &scope);
        let mut values = Vec::with_capacity(scope.table_len()?);
        for idx in index_tuples(&scope) {
            let fi: usize = idx.iter().zip(&proj).map(|(&i, &s)| i * s).sum();
            values.push(self.values[offset + fi]);
        }
        Ok(TableFactor {
            scope,
            strides,
            values,
        })
    }

    /// Pointwise quotient. `other`'s scope must be a subset of this factor's.
    ///
    /// Cells where both numerator and denominator are zero yield zero; a zero
    /// denominator under a nonzero numerator is an error.
    pub fn divide(&self, other: &TableFactor) -> Result<TableFactor> {
        if !other.scope.is_subset_of(&self.scope) {
            return Err(FactorError::ScopeMismatch(format!(
                "divisor scope {} is not a subset of {}",
                other.scope, self.scope
            )));
        }
        let proj = projection_strides(&other.scope, &other.strides, &self.scope);
        let mut values = Vec::with_capacity(self.values.len());
        for (idx, &num) in index_tuples(&self.scope).zip(&self.values) {
            let gi: usize = idx.iter().zip(&proj).map(|(&i, &s)| i * s).sum();
            let den = other.values[gi];
            if den == 0.0 {
                if num == 0.0 {
                    values.push(0.0);
                } else {
                    return Err(FactorError::DivisionByZero(format!(
                        "cell {idx:?} divides {num} by zero"
                    )));
                }
            } else {
                values.push(num / den);
            }
        }
        Ok(TableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            values,
        })
    }

    /// Pointwise sum; scopes must be identical.
    pub fn add(&self, other: &TableFactor) -> Result<TableFactor> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch(format!(
                "addition requires identical scopes, got {} and {}",
                self.scope, other.scope
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(TableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            values,
        })
    }

    /// Scales all cells so the total mass is one.
    pub fn normalize(&self) -> Result<TableFactor> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(FactorError::ZeroMass("table has zero total mass".into()));
        }
        let values = self.values.iter().map(|v| v / mass).collect();
        Ok(TableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            values,
        })
    }

    /// Scales every cell by a nonnegative constant.
    pub fn scale(&self, c: f64) -> Result<TableFactor> {
        TableFactor::new(
            self.scope.clone(),
            self.values.iter().map(|v| v * c).collect(),
        )
    }

    /// Cells paired with their index tuples, row-major.
    pub fn iter_cells(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        index_tuples(&self.scope).zip(self.values.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn var(name: &str) -> Variable {
        Variable::binary(name)
    }

    fn table(names: &[&str], values: &[f64]) -> TableFactor {
        let scope = Scope::new(names.iter().map(|n| var(n))).unwrap();
        TableFactor::new(scope, values.to_vec()).unwrap()
    }

    #[test]
    fn construction_validates_shape_and_sign() {
        let scope = Scope::new([var("X")]).unwrap();
        assert_eq!(
            TableFactor::new(scope.clone(), vec![0.1]).unwrap_err().code(),
            "ConfigInvalid"
        );
        assert_eq!(
            TableFactor::new(scope, vec![0.5, -0.1]).unwrap_err().code(),
            "ConfigInvalid"
        );
    }

    #[test]
    fn evaluate_looks_up_cells() {
        let f = table(&["X", "Y"], &[0.1, 0.2, 0.3, 0.4]);
        let at = Assignment::new().with("X", 1usize).with("Y", 0usize);
        assert_eq!(f.evaluate(&at).unwrap(), 0.3);
        // An incomplete assignment is an error for evaluate.
        let partial = Assignment::new().with("X", 0usize);
        assert_eq!(f.evaluate(&partial).unwrap_err().code(), "MissingVariable");
    }

    #[test]
    fn multiply_disjoint_is_outer_product() {
        let f = table(&["X"], &[0.2, 0.8]);
        let g = table(&["Y"], &[0.4, 0.6]);
        let p = f.multiply(&g).unwrap();
        assert_eq!(p.scope().names(), vec!["X", "Y"]);
        for (got, want) in p.values().iter().zip([0.08, 0.12, 0.32, 0.48]) {
            assert_relative_eq!(got, &want, max_relative = 1e-15);
        }
        // Commutes up to canonical ordering.
        assert_eq!(g.multiply(&f).unwrap().values(), p.values());
    }

    #[test]
    fn multiply_by_scalar_and_identity() {
        let f = table(&["X"], &[0.2, 0.8]);
        let half = TableFactor::scalar(0.5).unwrap();
        assert_eq!(f.multiply(&half).unwrap().values(), &[0.1, 0.4]);
        let ones = TableFactor::constant(f.scope().clone(), 1.0).unwrap();
        assert_eq!(f.multiply(&ones).unwrap().values(), f.values());
    }

    #[test]
    fn multiply_shared_variable_matches_pointwise() {
        let f = table(&["X", "Y"], &[0.1, 0.2, 0.3, 0.4]);
        let g = table(&["Y", "Z"], &[0.5, 0.6, 0.7, 0.8]);
        let p = f.multiply(&g).unwrap();
        assert_eq!(p.scope().names(), vec!["X", "Y", "Z"]);
        for idx in index_tuples(p.scope()) {
            let (x, y, z) = (idx[0], idx[1], idx[2]);
            let expect = f.value_at(&[x, y]).unwrap() * g.value_at(&[y, z]).unwrap();
            assert!((p.value_at(&idx).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_out_marginalizes() {
        let f = table(&["X", "Y"], &[0.1, 0.2, 0.3, 0.4]);
        let m = f.sum_out(&["Y"]).unwrap();
        assert_eq!(m.scope().names(), vec!["X"]);
        assert!((m.values()[0] - 0.3).abs() < 1e-15);
        assert!((m.values()[1] - 0.7).abs() < 1e-15);
        // Out-of-scope name errors.
        assert_eq!(f.sum_out(&["Z"]).unwrap_err().code(), "NotInScope");
        // Summing out everything leaves the scalar mass.
        let s = f.sum_out(&["X", "Y"]).unwrap();
        assert!(s.scope().is_empty());
        assert!((s.values()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reduce_slices_and_ignores_foreign_names() {
        let f = table(&["X", "Y"], &[0.1, 0.2, 0.3, 0.4]);
        let r = f
            .reduce(&Assignment::new().with("Y", 1usize).with("Q", 0usize))
            .unwrap();
        assert_eq!(r.scope().names(), vec!["X"]);
        assert_eq!(r.values(), &[0.2, 0.4]);
        let bad = f.reduce(&Assignment::new().with("Y", 7usize));
        assert_eq!(bad.unwrap_err().code(), "IndexOutOfRange");
    }

    #[test]
    fn divide_handles_zero_conventions() {
        let f = table(&["X"], &[0.2, 0.8]);
        let q = f.divide(&f).unwrap();
        assert_eq!(q.values(), &[1.0, 1.0]);

        let num = table(&["X"], &[0.0, 0.5]);
        let den = table(&["X"], &[0.0, 0.5]);
        assert_eq!(num.divide(&den).unwrap().values(), &[0.0, 1.0]);

        let bad_den = table(&["X"], &[0.0, 0.5]);
        let bad_num = table(&["X"], &[0.3, 0.5]);
        assert_eq!(
            bad_num.divide(&bad_den).unwrap_err().code(),
            "DivisionByZero"
        );

        let half = TableFactor::scalar(2.0).unwrap();
        assert_eq!(f.divide(&half).unwrap().values(), &[0.1, 0.4]);

        // Divisor scope must be a subset.
        let g = table(&["Z"], &[0.5, 0.5]);
        assert_eq!(f.divide(&g).unwrap_err().code(), "ScopeMismatch");
    }

    #[test]
    fn add_requires_identical_scope() {
        let f = table(&["X"], &[0.1, 0.2]);
        let g = table(&["X"], &[0.3, 0.4]);
        assert_eq!(f.add(&g).unwrap().values(), &[0.4, 0.6000000000000001]);
        let h = table(&["Y"], &[0.3, 0.4]);
        assert_eq!(f.add(&h).unwrap_err().code(), "ScopeMismatch");
    }

    #[test]
    fn normalize_fixes_mass() {
        let f = table(&["X"], &[1.0, 3.0]);
        assert_eq!(f.normalize().unwrap().values(), &[0.25, 0.75]);
        let z = table(&["X"], &[0.0, 0.0]);
        assert_eq!(z.normalize().unwrap_err().code(), "ZeroMass");
        // Idempotent.
        let n = f.normalize().unwrap();
        assert_eq!(n.normalize().unwrap().values(), n.values());
    }

    #[test]
    fn marginalization_commutes_with_multiplication_on_disjoint_scopes() {
        let f = table(&["X"], &[0.2, 0.8]);
        let g = table(&["Y"], &[0.4, 0.6]);
        let lhs = f.multiply(&g).unwrap().sum_out(&["Y"]).unwrap();
        let rhs = f.scale(g.total_mass()).unwrap();
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
