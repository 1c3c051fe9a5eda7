//! Sparse tables with implicit-zero cells.
//!
//! A [`SparseTableFactor`] stores only the strictly positive cells of a
//! discrete table, keyed by flat index in the same canonical row-major layout
//! as [`TableFactor`]. Zero is never stored: every operation drops cells that
//! become zero, so iteration order and memory stay proportional to support
//! size.

use std::collections::{BTreeMap, HashMap};

use crate::error::{FactorError, Result};
use crate::table::{projection_strides, TableFactor};
use crate::variable::{Assignment, Scope};

/// Sparse nonnegative table over a discrete scope; absent cells are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTableFactor {
    scope: Scope,
    strides: Vec<usize>,
    entries: BTreeMap<usize, f64>,
}

impl SparseTableFactor {
    /// Builds a sparse table from `(index tuple, value)` pairs.
    ///
    /// Zero values are dropped; negative or non-finite values are rejected.
    /// Duplicate tuples are rejected.
    pub fn new(scope: Scope, cells: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        let strides = scope.strides()?;
        let mut entries = BTreeMap::new();
        let probe = TableFactor::constant(scope.clone(), 0.0)?;
        for (idx, v) in cells {
            if !v.is_finite() || v < 0.0 {
                return Err(FactorError::ConfigInvalid(format!(
                    "table values must be finite and nonnegative, got {v}"
                )));
            }
            if v == 0.0 {
                continue;
            }
            let flat = probe.flat_index(&idx)?;
            if entries.insert(flat, v).is_some() {
                return Err(FactorError::ConfigInvalid(format!(
                    "duplicate cell {idx:?}"
                )));
            }
        }
        Ok(SparseTableFactor {
            scope,
            strides,
            entries,
        })
    }

    /// Sparse view of a dense table (zero cells dropped).
    pub fn from_dense(t: &TableFactor) -> Self {
        let entries = t
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        SparseTableFactor {
            scope: t.scope().clone(),
            strides: t.strides().to_vec(),
            entries,
        }
    }

    /// Dense table with explicit zeros.
    pub fn to_dense(&self) -> Result<TableFactor> {
        let mut values = vec![0.0; self.scope.table_len()?];
        for (&flat, &v) in &self.entries {
            values[flat] = v;
        }
        TableFactor::new(self.scope.clone(), values)
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Number of stored (nonzero) cells.
    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    fn decode(&self, mut flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let i = flat / s;
                flat %= s;
                i
            })
            .collect()
    }

    /// Stored cells as `(index tuple, value)`, ascending by flat index.
    pub fn iter_entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.entries.iter().map(|(&flat, &v)| (self.decode(flat), v))
    }

    /// Value at an index tuple (zero when absent).
    pub fn value_at(&self, indices: &[usize]) -> Result<f64> {
        let probe = self.flat_index(indices)?;
        Ok(self.entries.get(&probe).copied().unwrap_or(0.0))
    }

    fn flat_index(&self, indices: &[usize]) -> Result<usize> {
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

    /// Value at a full assignment of the scope (zero when absent).
    pub fn evaluate(&self, at: &Assignment) -> Result<f64> {
        let mut flat = 0usize;
        for (v, &s) in self.scope.iter().zip(&self.strides) {
            flat += at.index_for(v)? * s;
        }
        Ok(self.entries.get(&flat).copied().unwrap_or(0.0))
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Pointwise product over the union scope, computed as a join on the
    /// shared variables so only overlapping support is visited.
    pub fn multiply(&self, other: &SparseTableFactor) -> Result<SparseTableFactor> {
        let scope = self.scope.union(&other.scope)?;
        let strides = scope.strides()?;
        let shared = self.scope.intersection(&other.scope)?;

        // Key each side's entries by their shared-variable projection.
        let key_of = |owner: &SparseTableFactor, idx: &[usize]| -> Vec<usize> {
            shared
                .iter()
                .map(|v| idx[owner.scope.index_of(v.name()).unwrap()])
                .collect()
        };
        let mut by_key: HashMap<Vec<usize>, Vec<(Vec<usize>, f64)>> = HashMap::new();
        for (idx, v) in other.iter_entries() {
            by_key.entry(key_of(other, &idx)).or_default().push((idx, v));
        }

        let mut entries = BTreeMap::new();
        for (f_idx, f_val) in self.iter_entries() {
            let Some(matches) = by_key.get(&key_of(self, &f_idx)) else {
                continue;
            };
            for (g_idx, g_val) in matches {
                let mut flat = 0usize;
                for (pos, v) in scope.iter().enumerate() {
                    let i = match self.scope.index_of(v.name()) {
                        Some(fi) => f_idx[fi],
                        None => g_idx[other.scope.index_of(v.name()).unwrap()],
                    };
                    flat += i * strides[pos];
                }
                entries.insert(flat, f_val * g_val);
            }
        }
        Ok(SparseTableFactor {
            scope,
            strides,
            entries,
        })
    }

    /// Marginalizes the named variables away. All must be in scope.
    pub fn sum_out(&self, names: &[&str]) -> Result<SparseTableFactor> {
        for n in names {
            if !self.scope.contains(n) {
                return Err(FactorError::NotInScope((*n).to_string()));
            }
        }
        let scope = self.scope.without(names);
        let strides = scope.strides()?;
        let proj = projection_strides(&scope, &strides, &self.scope);
        let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
        for (idx, v) in self.iter_entries() {
            let ri: usize = idx.iter().zip(&proj).map(|(&i, &s)| i * s).sum();
            *entries.entry(ri).or_insert(0.0) += v;
        }
        Ok(SparseTableFactor {
            scope,
            strides,
            entries,
        })
    }

    /// Fixes the scope variables present in `evidence`; names outside the
    /// scope are ignored.
    pub fn reduce(&self, evidence: &Assignment) -> Result<SparseTableFactor> {
        let fixed: Vec<(usize, usize)> = {
            let mut f = Vec::new();
            for (pos, v) in self.scope.iter().enumerate() {
                if evidence.contains(v.name()) {
                    f.push((pos, evidence.index_for(v)?));
                }
            }
            f
        };
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        let names: Vec<&str> = fixed
            .iter()
            .map(|&(pos, _)| self.scope.vars()[pos].name())
            .collect();
        let scope = self.scope.without(&names);
        let strides = scope.strides()?;
        let proj = projection_strides(&scope, &strides, &self.scope);
        let mut entries = BTreeMap::new();
        for (idx, v) in self.iter_entries() {
            if fixed.iter().all(|&(pos, want)| idx[pos] == want) {
                let ri: usize = idx.iter().zip(&proj).map(|(&i, &s)| i * s).sum();
                entries.insert(ri, v);
            }
        }
        Ok(SparseTableFactor {
            scope,
            strides,
            entries,
        })
    }

    /// Pointwise quotient over the numerator's support.
    ///
    /// Absent numerator cells stay zero regardless of the denominator
    /// (0/0 = 0 included); a stored cell over a zero denominator is an error.
    pub fn divide(&self, other: &SparseTableFactor) -> Result<SparseTableFactor> {
        if !other.scope.is_subset_of(&self.scope) {
            return Err(FactorError::ScopeMismatch(format!(
                "divisor scope {} is not a subset of {}",
                other.scope, self.scope
            )));
        }
        let mut entries = BTreeMap::new();
        for (idx, num) in self.iter_entries() {
            let g_idx: Vec<usize> = other
                .scope
                .iter()
                .map(|v| idx[self.scope.index_of(v.name()).unwrap()])
                .collect();
            let den = other.value_at(&g_idx)?;
            if den == 0.0 {
                return Err(FactorError::DivisionByZero(format!(
                    "cell {idx:?} divides {num} by zero"
                )));
            }
            entries.insert(self.flat_index(&idx)?, num / den);
        }
        Ok(SparseTableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            entries,
        })
    }

    /// Pointwise sum; scopes must be identical.
    pub fn add(&self, other: &SparseTableFactor) -> Result<SparseTableFactor> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch(format!(
                "addition requires identical scopes, got {} and {}",
                self.scope, other.scope
            )));
        }
        let mut entries = self.entries.clone();
        for (&flat, &v) in &other.entries {
            *entries.entry(flat).or_insert(0.0) += v;
        }
        Ok(SparseTableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            entries,
        })
    }

    /// Scales all cells so the total mass is one.
    pub fn normalize(&self) -> Result<SparseTableFactor> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(FactorError::ZeroMass("table has zero total mass".into()));
        }
        let entries = self.entries.iter().map(|(&k, &v)| (k, v / mass)).collect();
        Ok(SparseTableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            entries,
        })
    }

    /// Scales every stored cell by a positive constant (zero clears all).
    pub fn scale(&self, c: f64) -> Result<SparseTableFactor> {
        if !c.is_finite() || c < 0.0 {
            return Err(FactorError::ConfigInvalid(format!(
                "scale factor must be finite and nonnegative, got {c}"
            )));
        }
        let entries = if c == 0.0 {
            BTreeMap::new()
        } else {
            self.entries.iter().map(|(&k, &v)| (k, v * c)).collect()
        };
        Ok(SparseTableFactor {
            scope: self.scope.clone(),
            strides: self.strides.clone(),
            entries,
        })
    }
}
