//! Position indexing used to condition attributions on where a feature lands.
//!
//! The plain index uses one column per raw position. A grouped index maps
//! each raw position `k` to a caller-supplied group label `g(k)`; features
//! are then conditioned on the group they are moved into, and the
//! positional regressor becomes `g(k)` instead of `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionIndex {
    /// Group label of each raw position.
    labels: Vec<i64>,
    /// Distinct labels in ascending order; one matrix column each.
    columns: Vec<i64>,
    column_of: Vec<usize>,
    column_sizes: Vec<usize>,
}

impl PositionIndex {
    /// One column per position, labelled `1..=n`.
    pub fn identity(n: usize) -> Self {
        Self {
            labels: (1..=n as i64).collect(),
            columns: (1..=n as i64).collect(),
            column_of: (0..n).collect(),
            column_sizes: vec![1; n],
        }
    }

    /// Groups raw positions by the non-decreasing label sequence `groups`.
    pub fn grouped(groups: &[i64]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("group map is empty".into()));
        }
        if groups.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig(
                "group labels must be non-decreasing along the sequence".into(),
            ));
        }
        let mut columns = groups.to_vec();
        columns.dedup();
        let column_of: Vec<usize> = groups
            .iter()
            .map(|g| columns.binary_search(g).expect("label present"))
            .collect();
        let mut column_sizes = vec![0; columns.len()];
        for &c in &column_of {
            column_sizes[c] += 1;
        }
        Ok(Self {
            labels: groups.to_vec(),
            columns,
            column_of,
            column_sizes,
        })
    }

    /// Grouped index when `groups` is given, plain index otherwise.
    pub fn for_sample(n: usize, groups: Option<&[i64]>) -> Result<Self> {
        match groups {
            None => Ok(Self::identity(n)),
            Some(g) if g.len() != n => Err(Error::LengthMismatch {
                expected: n,
                got: g.len(),
            }),
            Some(g) => Self::grouped(g),
        }
    }

    pub fn positions(&self) -> usize {
        self.labels.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_labels(&self) -> &[i64] {
        &self.columns
    }

    /// Number of raw positions folded into each column.
    pub fn column_sizes(&self) -> &[usize] {
        &self.column_sizes
    }

    pub fn column(&self, position: usize) -> usize {
        self.column_of[position]
    }

    pub fn label(&self, position: usize) -> f64 {
        self.labels[position] as f64
    }

    /// Mean label over raw positions; the centering constant for the
    /// positional regressor.
    pub fn mean_label(&self) -> f64 {
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.labels.len() as f64
    }

    pub fn is_identity(&self) -> bool {
        self.columns.len() == self.labels.len() && self.labels.iter().enumerate().all(|(k, &l)| l == k as i64 + 1)
    }
}
