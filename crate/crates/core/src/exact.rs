//! Brute-force reference values for small games.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{lex_rank, OrderedGame};
use crate::perm::{OrderedCoalition, Permutation, Subset};
use crate::position::PositionIndex;
use crate::result::{AttributionMeta, AttributionResult, Estimator};

/// Largest `n` for enumerations over `2ⁿ · n!` or `Σ_S |S|!` terms.
pub const MAX_FACTORIAL_PLAYERS: usize = 6;
/// Largest `n` for enumerations over `2ⁿ` subsets only.
pub const MAX_SUBSET_PLAYERS: usize = 12;

fn guard(what: &'static str, n: usize, limit: usize) -> Result<()> {
    if n == 0 || n > limit {
        return Err(Error::SizeGuard { what, limit, n });
    }
    Ok(())
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    xs.into_iter().for_each(|x| acc.add(x));
    acc.value()
}

/// `w(s) = (s−1)!(n−s)!/n!` for `s = 1..=n`; index 0 unused.
fn shapley_weights(n: usize) -> Vec<f64> {
    let ln_n = ln_factorial(n);
    (0..=n)
        .map(|s| {
            if s == 0 {
                0.0
            } else {
                (ln_factorial(s - 1) + ln_factorial(n - s) - ln_n).exp()
            }
        })
        .collect()
}

/// Shapley values of a set game given as a table indexed by subset mask.
fn shapley_from_table(n: usize, values: &[f64], weights: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = Neumaier::default();
            for mask in 0..values.len() {
                if mask & bit != 0 {
                    let s = mask.count_ones() as usize;
                    acc.add(weights[s] * (values[mask] - values[mask ^ bit]));
                }
            }
            acc.value()
        })
        .collect()
}

/// Classical Shapley values of the set game `ν`.
pub fn shapley_exact(n: usize, nu: impl Fn(&Subset) -> Result<f64>) -> Result<Vec<f64>> {
    guard("shapley_exact", n, MAX_SUBSET_PLAYERS)?;
    let values = Subset::all(n).map(|s| nu(&s)).collect::<Result<Vec<_>>>()?;
    Ok(shapley_from_table(n, &values, &shapley_weights(n)))
}

/// Sanchez-Bergantiños value of a game on ordered coalitions.
///
/// `omega_hat` is called once per ordered coalition, including the empty one.
pub fn sb_exact(n: usize, omega_hat: impl Fn(&OrderedCoalition) -> Result<f64>) -> Result<Vec<f64>> {
    guard("sb_exact", n, MAX_FACTORIAL_PLAYERS)?;
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    for s in Subset::all(n) {
        for pi in OrderedCoalition::arrangements(&s) {
            let v = omega_hat(&pi)?;
            memo.insert(pi.elements().to_vec(), v);
        }
    }
    let ln_n = ln_factorial(n);
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Neumaier::default();
        for s in Subset::all(n).filter(|s| !s.contains(i)) {
            let size = s.len();
            let w = (ln_factorial(n - size - 1) - ln_n).exp() / (size + 1) as f64;
            for pi in OrderedCoalition::arrangements(&s) {
                let base = memo[pi.elements()];
                for k in 0..=size {
                    let plus = pi.insert_at(i, k)?;
                    acc.add(w * (memo[plus.elements()] - base));
                }
            }
        }
        phi.push(acc.value());
    }
    Ok(phi)
}

/// `ω(S, σ)` for every subset and ordering of a small game.
#[derive(Clone, Debug)]
pub struct OmegaTable {
    n: usize,
    orders: Vec<Permutation>,
    /// `values[rank · 2ⁿ + mask]`, ranks in lexicographic order.
    values: Vec<f64>,
}

impl OmegaTable {
    pub fn build(game: &dyn OrderedGame) -> Result<Self> {
        let n = game.players();
        guard("exact enumeration", n, MAX_FACTORIAL_PLAYERS)?;
        let orders: Vec<Permutation> = Permutation::all(n).collect();
        let subsets: Vec<Subset> = Subset::all(n).collect();
        let queries: Vec<(&Subset, &Permutation)> = orders
            .iter()
            .flat_map(|p| subsets.iter().map(move |s| (s, p)))
            .collect();
        let values = game.evaluate_batch(&queries)?;
        if values.len() != queries.len() {
            return Err(Error::LengthMismatch {
                expected: queries.len(),
                got: values.len(),
            });
        }
        Ok(Self { n, orders, values })
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn get(&self, coalition: &Subset, order: &Permutation) -> f64 {
        self.values[(lex_rank(order.order()) << self.n) + coalition.mask() as usize]
    }

    fn row(&self, rank: usize) -> &[f64] {
        let m = 1usize << self.n;
        &self.values[rank * m..(rank + 1) * m]
    }

    /// Mean of `ω(S, σ)` over every ordering `σ`.
    pub fn averaged(&self, coalition: &Subset) -> f64 {
        let mask = coalition.mask() as usize;
        compensated_sum((0..self.orders.len()).map(|r| self.row(r)[mask])) / self.orders.len() as f64
    }

    /// Mean of `ω(T(π), σ)` over the orderings `σ` that agree with `π`.
    pub fn omega_hat(&self, pi: &OrderedCoalition) -> Result<f64> {
        let members = pi.members(self.n)?;
        let mut acc = Neumaier::default();
        let mut count = 0usize;
        for sigma in pi.consistent_extensions(self.n)? {
            acc.add(self.get(&members, &sigma));
            count += 1;
        }
        Ok(acc.value() / count as f64)
    }

    /// Raw `n × n` matrix: entry `(i, ℓ)` conditions on `σ⁻¹(i) = ℓ`.
    fn raw_gamma(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let weights = shapley_weights(n);
        let per_order: Vec<Vec<f64>> = (0..self.orders.len())
            .into_par_iter()
            .map(|r| shapley_from_table(n, self.row(r), &weights))
            .collect();
        let mut acc = vec![vec![Neumaier::default(); n]; n];
        for (sigma, phi) in self.orders.iter().zip(&per_order) {
            for (i, &v) in phi.iter().enumerate() {
                acc[i][sigma.position_of(i)].add(v);
            }
        }
        // Each (i, ℓ) cell receives (n−1)! orderings.
        let per_cell = (1..n).product::<usize>() as f64;
        acc.iter()
            .map(|row| row.iter().map(|a| a.value() / per_cell).collect())
            .collect()
    }
}

/// Feature × position-column matrix. With a grouped index each column
/// sums the raw positions of its group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdShapMatrix {
    pub gamma: Vec<Vec<f64>>,
    pub index: PositionIndex,
}

impl OrdShapMatrix {
    pub fn from_raw(raw: Vec<Vec<f64>>, index: &PositionIndex) -> Result<Self> {
        let n = raw.len();
        if index.positions() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: index.positions(),
            });
        }
        let gamma = raw
            .iter()
            .map(|row| {
                let mut cols = vec![Neumaier::default(); index.num_columns()];
                for (pos, &v) in row.iter().enumerate() {
                    cols[index.column(pos)].add(v);
                }
                cols.iter().map(Neumaier::value).collect()
            })
            .collect();
        Ok(Self {
            gamma,
            index: index.clone(),
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn cells(&self) -> Vec<Vec<Option<f64>>> {
        self.gamma
            .iter()
            .map(|r| r.iter().copied().map(Some).collect())
            .collect()
    }
}

/// Feature × position-column matrix of exact values.
pub fn ordshap_exact(game: &dyn OrderedGame) -> Result<OrdShapMatrix> {
    ordshap_exact_grouped(game, &PositionIndex::identity(game.players()))
}

pub fn ordshap_exact_grouped(game: &dyn OrderedGame, index: &PositionIndex) -> Result<OrdShapMatrix> {
    let table = OmegaTable::build(game)?;
    OrdShapMatrix::from_raw(table.raw_gamma(), index)
}

/// Value importance: column sums spread over all raw positions.
pub fn vi_exact(m: &OrdShapMatrix) -> Vec<f64> {
    let n = m.index.positions() as f64;
    m.gamma
        .iter()
        .map(|row| compensated_sum(row.iter().copied()) / n)
        .collect()
}

/// Position importance: slope of each row against centered position labels.
pub fn pi_exact(m: &OrdShapMatrix) -> Result<Vec<f64>> {
    m.gamma
        .iter()
        .map(|row| {
            let cells: Vec<Option<f64>> = row.iter().copied().map(Some).collect();
            slope_from_cells(&cells, &m.index)
        })
        .collect()
}

/// Row value importance from possibly incomplete cells: the size-weighted
/// mean of per-position conditional means over the visited columns.
pub fn vi_from_cells(row: &[Option<f64>], index: &PositionIndex) -> Result<f64> {
    let sizes = index.column_sizes();
    let (mut total, mut weight) = (Neumaier::default(), 0usize);
    for (c, cell) in row.iter().enumerate() {
        if let Some(v) = cell {
            total.add(*v);
            weight += sizes[c];
        }
    }
    if weight == 0 {
        return Err(Error::InvalidConfig("no position column was visited".into()));
    }
    Ok(total.value() / weight as f64)
}

/// Weighted slope of the column values against `label − mean label`,
/// where each column stands for `size` raw positions. Missing columns are
/// skipped.
pub fn slope_from_cells(row: &[Option<f64>], index: &PositionIndex) -> Result<f64> {
    let sizes = index.column_sizes();
    let labels = index.column_labels();
    let (mut mass, mut weight) = (Neumaier::default(), 0usize);
    let mut label_mass = Neumaier::default();
    for (c, cell) in row.iter().enumerate() {
        if let Some(v) = cell {
            mass.add(*v);
            weight += sizes[c];
            label_mass.add(sizes[c] as f64 * labels[c] as f64);
        }
    }
    if weight == 0 {
        return Err(Error::InvalidConfig("no position column was visited".into()));
    }
    // For a complete row this is the mean raw-position label.
    let centre = label_mass.value() / weight as f64;
    let mean = mass.value() / weight as f64;
    let (mut num, mut den) = (Neumaier::default(), Neumaier::default());
    for (c, cell) in row.iter().enumerate() {
        if let Some(v) = cell {
            let size = sizes[c] as f64;
            let d = labels[c] as f64 - centre;
            num.add(d * (v - size * mean));
            den.add(size * d * d);
        }
    }
    if den.value() <= 0.0 {
        return Err(Error::InvalidConfig(
            "position importance needs at least two distinct position labels".into(),
        ));
    }
    Ok(num.value() / den.value())
}

/// `ω̂(π)`: mean of `ω(T(π), σ)` over all orderings consistent with `π`.
pub fn omega_hat_from(game: &dyn OrderedGame, pi: &OrderedCoalition) -> Result<f64> {
    let n = game.players();
    guard("omega_hat_from", n, MAX_FACTORIAL_PLAYERS)?;
    let members = pi.members(n)?;
    let orders: Vec<Permutation> = pi.consistent_extensions(n)?.collect();
    let queries: Vec<(&Subset, &Permutation)> = orders.iter().map(|p| (&members, p)).collect();
    let values = game.evaluate_batch(&queries)?;
    Ok(compensated_sum(values) / orders.len() as f64)
}

/// `ν̄(S)`: mean of `ω(S, σ)` over every ordering.
pub fn averaged_game(game: &dyn OrderedGame, coalition: &Subset) -> Result<f64> {
    let n = game.players();
    guard("averaged_game", n, MAX_FACTORIAL_PLAYERS)?;
    let orders: Vec<Permutation> = Permutation::all(n).collect();
    let queries: Vec<(&Subset, &Permutation)> = orders.iter().map(|p| (coalition, p)).collect();
    let values = game.evaluate_batch(&queries)?;
    Ok(compensated_sum(values) / orders.len() as f64)
}

/// Every exact quantity for one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub matrix: OrdShapMatrix,
    pub vi: Vec<f64>,
    pub pi: Vec<f64>,
    /// Classical Shapley values with the ordering fixed to the identity.
    pub shapley_identity: Vec<f64>,
    /// Shapley values of the ordering-averaged set game.
    pub shapley_averaged: Vec<f64>,
    /// Sanchez-Bergantiños value of the consistent-extension game.
    pub sb: Vec<f64>,
    /// Mean payoff of the empty coalition over all orderings.
    pub empty_mean: f64,
    /// Mean payoff of the full coalition over all orderings.
    pub grand_mean: f64,
}

impl ExactReport {
    pub fn compute(game: &dyn OrderedGame, index: &PositionIndex) -> Result<Self> {
        let n = game.players();
        let table = OmegaTable::build(game)?;
        let matrix = OrdShapMatrix::from_raw(table.raw_gamma(), index)?;
        let vi = vi_exact(&matrix);
        let pi = if index.num_columns() >= 2 {
            pi_exact(&matrix)?
        } else {
            vec![0.0; n]
        };
        let id = Permutation::identity(n)?;
        let shapley_identity = shapley_exact(n, |s| Ok(table.get(s, &id)))?;
        let shapley_averaged = shapley_exact(n, |s| Ok(table.averaged(s)))?;
        let sb = sb_exact(n, |pi| table.omega_hat(pi))?;
        Ok(Self {
            empty_mean: table.averaged(&Subset::empty(n)),
            grand_mean: table.averaged(&Subset::full(n)),
            matrix,
            vi,
            pi,
            shapley_identity,
            shapley_averaged,
            sb,
        })
    }

    pub fn attribution(&self, game: String) -> AttributionResult {
        let mut meta = AttributionMeta::new(Estimator::Exact, game, &self.matrix.index);
        meta.baseline = self.empty_mean;
        meta.grand_mean = self.grand_mean;
        AttributionResult {
            vi: self.vi.clone(),
            pi: self.pi.clone(),
            gamma: Some(self.matrix.cells()),
            meta,
        }
    }
}

/// Exact attributions with the full matrix.
pub fn exact_attribution(game: &dyn OrderedGame, index: &PositionIndex) -> Result<AttributionResult> {
    let matrix = ordshap_exact_grouped(game, index)?;
    let n = game.players();
    let vi = vi_exact(&matrix);
    let pi = pi_exact(&matrix)?;
    let mut meta = AttributionMeta::new(Estimator::Exact, game.descriptor(), index);
    meta.baseline = averaged_game(game, &Subset::empty(n))?;
    meta.grand_mean = averaged_game(game, &Subset::full(n))?;
    Ok(AttributionResult {
        vi,
        pi,
        gamma: Some(matrix.cells()),
        meta,
    })
}
