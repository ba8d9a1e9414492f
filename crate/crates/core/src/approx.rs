//! Fixed-budget estimators: permutation sampling of the full matrix and
//! constrained weighted least squares for value and position importance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{compensated_sum, slope_from_cells, vi_from_cells, Neumaier};
use crate::games::OrderedGame;
use crate::perm::{Permutation, SeededSampler, Subset};
use crate::position::PositionIndex;
use crate::result::{AttributionMeta, AttributionResult, Estimator};

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Subset-size weight `(n−1) / (C(n,s)·s·(n−s))`, defined for `0 < s < n`.
pub fn mu_weight(n: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= n {
        return Err(Error::InvalidConfig(format!(
            "subset size {s} has unbounded weight for {n} players"
        )));
    }
    Ok((n - 1) as f64 / (binomial(n, s) * s as f64 * (n - s) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Inner orderings per outer ordering, each fixing one coalition.
    pub k: usize,
    /// Outer orderings per feature.
    pub l: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("K and L must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-feature sampling plan; `pairs[j] = (outer, inner)` indices.
struct FeaturePlan {
    outer: Vec<Permutation>,
    coalitions: Vec<(usize, Subset)>,
}

/// Estimates the feature × position matrix by sampling. Each cell is the
/// mean marginal contribution over the outer orderings that placed the
/// feature there; cells no ordering reached stay `None`.
pub fn sampling_estimate(
    game: &dyn OrderedGame,
    cfg: &SamplingConfig,
    index: &PositionIndex,
) -> Result<AttributionResult> {
    cfg.validate()?;
    let n = game.players();
    check_index(n, index)?;
    let root = SeededSampler::new(cfg.seed);

    let plans: Vec<FeaturePlan> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<FeaturePlan> {
            let mut rng = root.derive(i as u64);
            let mut outer = Vec::with_capacity(cfg.l);
            let mut coalitions = Vec::with_capacity(cfg.l * cfg.k);
            for l in 0..cfg.l {
                outer.push(rng.permutation(n)?);
                for _ in 0..cfg.k {
                    let inner = rng.permutation(n)?;
                    coalitions.push((l, inner.predecessor_set(i)?.with(i)));
                }
            }
            Ok(FeaturePlan { outer, coalitions })
        })
        .collect::<Result<_>>()?;

    let without: Vec<Vec<Subset>> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| p.coalitions.iter().map(|(_, s)| s.without(i)).collect())
        .collect();
    let identity = Permutation::identity(n)?;
    let empty = Subset::empty(n);
    let full = Subset::full(n);
    let mut queries: Vec<(&Subset, &Permutation)> = Vec::with_capacity(2 * n * cfg.k * cfg.l + cfg.l + 1);
    for (plan, less) in plans.iter().zip(&without) {
        for ((l, with), less) in plan.coalitions.iter().zip(less) {
            queries.push((with, &plan.outer[*l]));
            queries.push((less, &plan.outer[*l]));
        }
    }
    queries.push((&empty, &identity));
    queries.extend(plans[0].outer.iter().map(|p| (&full, p)));
    let values = game.evaluate_batch(&queries)?;

    let cols = index.num_columns();
    let sizes = index.column_sizes();
    let mut gamma = Vec::with_capacity(n);
    let mut vi = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut cursor = 0;
    for (i, plan) in plans.iter().enumerate() {
        let mut sums = vec![Neumaier::default(); cols];
        let mut hits = vec![0usize; cols];
        for (l, _) in &plan.coalitions {
            let c = index.column(plan.outer[*l].position_of(i));
            sums[c].add(values[cursor] - values[cursor + 1]);
            hits[c] += 1;
            cursor += 2;
        }
        let row: Vec<Option<f64>> = (0..cols)
            .map(|c| (hits[c] > 0).then(|| sizes[c] as f64 * sums[c].value() / hits[c] as f64))
            .collect();
        vi.push(vi_from_cells(&row, index)?);
        pi.push(if cols >= 2 {
            slope_from_cells(&row, index).map_err(|_| {
                Error::InvalidConfig(format!(
                    "feature {} visited a single position column; increase L",
                    i + 1
                ))
            })?
        } else {
            0.0
        });
        gamma.push(row);
    }

    let mut meta = AttributionMeta::new(Estimator::Sampling, game.descriptor(), index);
    meta.k = Some(cfg.k);
    meta.l = Some(cfg.l);
    meta.seed = Some(cfg.seed);
    meta.baseline = values[cursor];
    meta.grand_mean = compensated_sum(values[cursor + 1..].iter().copied()) / cfg.l as f64;
    Ok(AttributionResult {
        vi,
        pi,
        gamma: Some(gamma),
        meta,
    })
}

fn check_index(n: usize, index: &PositionIndex) -> Result<()> {
    if index.positions() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: index.positions(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedLinearSystem {
    /// Row-major `m × p` design.
    pub design: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WeightedLinearSystem {
    pub fn columns(&self) -> usize {
        self.design.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.design.len();
        if self.weights.len() != m || self.targets.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: self.weights.len().min(self.targets.len()),
            });
        }
        let p = self.columns();
        if let Some(row) = self.design.iter().find(|r| r.len() != p) {
            return Err(Error::LengthMismatch {
                expected: p,
                got: row.len(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `Xᵀ W r` for the residual `r = X x − y`.
    pub fn weighted_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![Neumaier::default(); self.columns()];
        for ((row, w), y) in self.design.iter().zip(&self.weights).zip(&self.targets) {
            let r = compensated_sum(row.iter().zip(x).map(|(a, b)| a * b)) - y;
            for (gj, a) in g.iter_mut().zip(row) {
                gj.add(w * a * r);
            }
        }
        g.iter().map(Neumaier::value).collect()
    }
}

/// Minimizes `Σ w_k (X_k·x − y_k)²` through the normal equations.
///
/// A rank-deficient system is an error naming the offending columns unless
/// `ridge > 0`, in which case `ridge·I` is added and the solve is retried.
pub fn solve_weighted(sys: &WeightedLinearSystem, ridge: f64) -> Result<Vec<f64>> {
    sys.validate()?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidConfig("ridge must be finite and non-negative".into()));
    }
    let p = sys.columns();
    let mut a = vec![vec![Neumaier::default(); p]; p];
    let mut b = vec![Neumaier::default(); p];
    for ((row, &w), &y) in sys.design.iter().zip(&sys.weights).zip(&sys.targets) {
        for j in 0..p {
            if row[j] == 0.0 {
                continue;
            }
            let wj = w * row[j];
            b[j].add(wj * y);
            for k in 0..=j {
                a[j][k].add(wj * row[k]);
            }
        }
    }
    let a: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| if k <= j { a[j][k].value() } else { a[k][j].value() })
                .collect()
        })
        .collect();
    let b: Vec<f64> = b.iter().map(Neumaier::value).collect();
    match cholesky_solve(&a, &b, 0.0) {
        Err(Error::RankDeficient { .. }) if ridge > 0.0 => cholesky_solve(&a, &b, ridge),
        other => other,
    }
}

fn cholesky_solve(a: &[Vec<f64>], b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = b.len();
    let scale = (0..p).map(|j| a[j][j].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = vec![vec![0.0; p]; p];
    let mut deficient = Vec::new();
    for j in 0..p {
        let mut d = a[j][j] + ridge - compensated_sum((0..j).map(|k| l[j][k] * l[j][k]));
        if d <= tol {
            deficient.push(j);
            d = 1.0;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..p {
            let s = a[i][j] - compensated_sum((0..j).map(|k| l[i][k] * l[j][k]));
            l[i][j] = if deficient.last() == Some(&j) { 0.0 } else { s / djj };
        }
    }
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        z[i] = (b[i] - compensated_sum((0..i).map(|k| l[i][k] * z[k]))) / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        x[i] = (z[i] - compensated_sum((i + 1..p).map(|k| l[k][i] * x[k]))) / l[i][i];
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresConfig {
    /// Sampled coalitions.
    pub k: usize,
    /// Orderings per coalition.
    pub l: usize,
    pub seed: u64,
    /// Feature solved from the efficiency constraint (zero-based).
    pub eliminated_feature: usize,
    pub ridge: f64,
}

impl LeastSquaresConfig {
    pub fn new(k: usize, l: usize, seed: u64) -> Self {
        Self {
            k,
            l,
            seed,
            eliminated_feature: 0,
            ridge: 0.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::InvalidConfig("least squares needs at least two features".into()));
        }
        if self.l == 0 {
            return Err(Error::InvalidConfig("L must be at least 1".into()));
        }
        if self.k < n {
            return Err(Error::InvalidConfig(format!(
                "K = {} is below the feature count {n}; the value system is underdetermined",
                self.k
            )));
        }
        if self.eliminated_feature >= n {
            return Err(Error::IndexOutOfRange {
                index: self.eliminated_feature,
                size: n,
            });
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig("ridge must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// The coalitions and orderings a least-squares fit evaluates.
///
/// Row `r = l·K + k` pairs coalition `k` with ordering `orders[rows[r].1]`.
#[derive(Clone, Debug)]
pub struct LeastSquaresPlan {
    pub players: usize,
    pub subsets: Vec<Subset>,
    pub orders: Vec<Permutation>,
    pub rows: Vec<(usize, usize)>,
    /// Orderings averaged for the full-coalition payoff.
    pub grand: Vec<usize>,
}

impl LeastSquaresPlan {
    /// `K` uniform proper coalitions and `K·L` uniform orderings.
    pub fn sampled(n: usize, k: usize, l: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededSampler::new(seed);
        let subsets = (0..k).map(|_| rng.proper_subset(n)).collect::<Result<Vec<_>>>()?;
        let orders = (0..k * l).map(|_| rng.permutation(n)).collect::<Result<Vec<_>>>()?;
        let rows = (0..k * l).map(|r| (r % k, r)).collect();
        Ok(Self {
            players: n,
            subsets,
            orders,
            rows,
            grand: (0..l).collect(),
        })
    }

    /// Every proper coalition paired with every ordering.
    pub fn exhaustive(n: usize) -> Result<Self> {
        if !(2..=crate::exact::MAX_FACTORIAL_PLAYERS).contains(&n) {
            return Err(Error::SizeGuard {
                what: "exhaustive least-squares plan",
                limit: crate::exact::MAX_FACTORIAL_PLAYERS,
                n,
            });
        }
        let subsets: Vec<Subset> = Subset::all(n).filter(|s| !s.is_empty() && s.len() < n).collect();
        let orders: Vec<Permutation> = Permutation::all(n).collect();
        let k = subsets.len();
        let rows = (0..orders.len()).flat_map(|o| (0..k).map(move |s| (s, o))).collect();
        Ok(Self {
            players: n,
            grand: (0..orders.len()).collect(),
            subsets,
            orders,
            rows,
        })
    }

    pub fn coalitions(&self) -> usize {
        self.subsets.len()
    }
}

/// Payoffs of every plan row, minus the identity-order empty payoff.
#[derive(Clone, Debug)]
pub struct PlanEvaluations {
    pub rows: Vec<f64>,
    pub baseline: f64,
    pub grand_mean: f64,
}

pub fn evaluate_plan(game: &dyn OrderedGame, plan: &LeastSquaresPlan) -> Result<PlanEvaluations> {
    let n = plan.players;
    if game.players() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: game.players(),
        });
    }
    let identity = Permutation::identity(n)?;
    let empty = Subset::empty(n);
    let full = Subset::full(n);
    let mut queries: Vec<(&Subset, &Permutation)> = plan
        .rows
        .iter()
        .map(|&(s, o)| (&plan.subsets[s], &plan.orders[o]))
        .collect();
    queries.push((&empty, &identity));
    queries.extend(plan.grand.iter().map(|&o| (&full, &plan.orders[o])));
    let mut values = game.evaluate_batch(&queries)?;
    let grand = values.split_off(plan.rows.len() + 1);
    let baseline = values.pop().expect("baseline query");
    Ok(PlanEvaluations {
        rows: values.iter().map(|v| v - baseline).collect(),
        baseline,
        grand_mean: compensated_sum(grand.iter().copied()) / grand.len() as f64,
    })
}

/// Indicator design over features; the target of coalition `k` is its mean
/// baseline-subtracted payoff over the orderings it was paired with.
pub fn build_alpha_system(plan: &LeastSquaresPlan, evals: &PlanEvaluations) -> Result<WeightedLinearSystem> {
    let n = plan.players;
    let k = plan.coalitions();
    let mut sums = vec![Neumaier::default(); k];
    let mut counts = vec![0usize; k];
    for (&(s, _), &v) in plan.rows.iter().zip(&evals.rows) {
        sums[s].add(v);
        counts[s] += 1;
    }
    let mut sys = WeightedLinearSystem {
        design: Vec::with_capacity(k),
        weights: Vec::with_capacity(k),
        targets: Vec::with_capacity(k),
    };
    for (s, subset) in plan.subsets.iter().enumerate() {
        if counts[s] == 0 {
            continue;
        }
        sys.design
            .push((0..n).map(|j| if subset.contains(j) { 1.0 } else { 0.0 }).collect());
        sys.weights.push(mu_weight(n, subset.len())?);
        sys.targets.push(sums[s].value() / counts[s] as f64);
    }
    Ok(sys)
}

/// Design entries are centered position labels of coalition members; the
/// target is what the value coefficients leave unexplained.
pub fn build_beta_system(
    plan: &LeastSquaresPlan,
    evals: &PlanEvaluations,
    alpha: &[f64],
    index: &PositionIndex,
) -> Result<WeightedLinearSystem> {
    let n = plan.players;
    check_index(n, index)?;
    let centre = index.mean_label();
    let m = plan.rows.len();
    let mut sys = WeightedLinearSystem {
        design: Vec::with_capacity(m),
        weights: Vec::with_capacity(m),
        targets: Vec::with_capacity(m),
    };
    for (&(s, o), &v) in plan.rows.iter().zip(&evals.rows) {
        let subset = &plan.subsets[s];
        let sigma = &plan.orders[o];
        sys.design.push(
            (0..n)
                .map(|j| {
                    if subset.contains(j) {
                        index.label(sigma.position_of(j)) - centre
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        sys.weights.push(mu_weight(n, subset.len())?);
        sys.targets.push(v - compensated_sum(subset.iter().map(|j| alpha[j])));
    }
    Ok(sys)
}

/// Solves the value system under `Σ α = total` by substituting out one
/// feature, then recovers it from the constraint.
pub fn solve_alpha(sys: &WeightedLinearSystem, total: f64, eliminated: usize, ridge: f64) -> Result<Vec<f64>> {
    sys.validate()?;
    let p = sys.columns();
    if eliminated >= p {
        return Err(Error::IndexOutOfRange {
            index: eliminated,
            size: p,
        });
    }
    let reduced = WeightedLinearSystem {
        design: sys
            .design
            .iter()
            .map(|row| {
                (0..p)
                    .filter(|&j| j != eliminated)
                    .map(|j| row[j] - row[eliminated])
                    .collect()
            })
            .collect(),
        weights: sys.weights.clone(),
        targets: sys
            .design
            .iter()
            .zip(&sys.targets)
            .map(|(row, y)| y - row[eliminated] * total)
            .collect(),
    };
    let rest = solve_weighted(&reduced, ridge).map_err(|e| match e {
        Error::RankDeficient { columns } => Error::RankDeficient {
            columns: columns
                .into_iter()
                .map(|c| if c >= eliminated { c + 1 } else { c })
                .collect(),
        },
        other => other,
    })?;
    let mut alpha = Vec::with_capacity(p);
    alpha.extend_from_slice(&rest[..eliminated]);
    alpha.push(total - compensated_sum(rest.iter().copied()));
    alpha.extend_from_slice(&rest[eliminated..]);
    Ok(alpha)
}

/// Value and position importance from a plan's payoffs.
pub fn least_squares_from_plan(
    game: &dyn OrderedGame,
    plan: &LeastSquaresPlan,
    eliminated: usize,
    ridge: f64,
    index: &PositionIndex,
) -> Result<AttributionResult> {
    let evals = evaluate_plan(game, plan)?;
    let total = evals.grand_mean - evals.baseline;
    let alpha = solve_alpha(&build_alpha_system(plan, &evals)?, total, eliminated, ridge)?;
    let beta = solve_weighted(&build_beta_system(plan, &evals, &alpha, index)?, ridge)?;
    let mut meta = AttributionMeta::new(Estimator::LeastSquares, game.descriptor(), index);
    meta.baseline = evals.baseline;
    meta.grand_mean = evals.grand_mean;
    Ok(AttributionResult {
        vi: alpha,
        pi: beta,
        gamma: None,
        meta,
    })
}

pub fn least_squares_estimate(
    game: &dyn OrderedGame,
    cfg: &LeastSquaresConfig,
    index: &PositionIndex,
) -> Result<AttributionResult> {
    let n = game.players();
    cfg.validate(n)?;
    check_index(n, index)?;
    let plan = LeastSquaresPlan::sampled(n, cfg.k, cfg.l, cfg.seed)?;
    let mut result = least_squares_from_plan(game, &plan, cfg.eliminated_feature, cfg.ridge, index)?;
    result.meta.k = Some(cfg.k);
    result.meta.l = Some(cfg.l);
    result.meta.seed = Some(cfg.seed);
    Ok(result)
}
