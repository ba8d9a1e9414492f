use serde::{Deserialize, Serialize};

use crate::position::PositionIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Exact,
    Sampling,
    LeastSquares,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Exact => "exact",
            Estimator::Sampling => "sampling",
            Estimator::LeastSquares => "least-squares",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub estimator: Estimator,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Payoff of the empty coalition the attributions are measured against.
    pub baseline: f64,
    /// Mean payoff of the full coalition over the orderings used.
    pub grand_mean: f64,
    pub game: String,
    /// Label of each γ column.
    pub positions: Vec<i64>,
    /// Raw positions folded into each γ column.
    pub position_sizes: Vec<usize>,
}

impl AttributionMeta {
    pub fn new(estimator: Estimator, game: String, index: &PositionIndex) -> Self {
        Self {
            estimator,
            k: None,
            l: None,
            seed: None,
            baseline: 0.0,
            grand_mean: 0.0,
            game,
            positions: index.column_labels().to_vec(),
            position_sizes: index.column_sizes().to_vec(),
        }
    }
}

/// VI and PI per feature, plus the feature × position matrix when the
/// estimator keeps one. Unvisited matrix cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub vi: Vec<f64>,
    pub pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<Option<f64>>>>,
    pub meta: AttributionMeta,
}

impl AttributionResult {
    pub fn features(&self) -> usize {
        self.vi.len()
    }

    pub fn without_gamma(mut self) -> Self {
        self.gamma = None;
        self
    }
}
