//! Faithfulness curves for attributions: reordering by position importance,
//! and masking with a permutation step for value importance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{materialize, Gateway, SequenceSample, Token};
use crate::perm::{Permutation, SeededSampler, Subset};

/// Trapezoidal area under `(xs, ys)`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

impl EvalCurve {
    pub fn new(fractions: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if fractions.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: fractions.len(),
                got: scores.len(),
            });
        }
        validate_grid(&fractions)?;
        let auc = trapezoid(&fractions, &scores);
        Ok(Self { fractions, scores, auc })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,score\n");
        for (f, s) in self.fractions.iter().zip(&self.scores) {
            out.push_str(&format!("{f},{s}\n"));
        }
        out
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("fraction grid is empty".into()));
    }
    if grid.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidConfig("fractions must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("fractions must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub k_grid: Vec<f64>,
    pub permutations_per_k: usize,
    /// When false, masked samples keep their original order.
    pub permute: bool,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k_grid: (0..=10).map(|k| k as f64 / 10.0).collect(),
            permutations_per_k: 10,
            permute: true,
            seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.k_grid)?;
        if self.permutations_per_k == 0 {
            return Err(Error::InvalidConfig("permutations_per_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Keep the selected features, mask the rest.
    Inclusion,
    /// Mask the selected features, keep the rest.
    Exclusion,
}

/// Number of features a fraction selects.
pub fn select_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Indices of the `count` largest attributions; ties go to the lower index.
pub fn top_by_value(attributions: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..attributions.len()).collect();
    idx.sort_by(|&a, &b| attributions[b].total_cmp(&attributions[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Features retained at a given selection.
pub fn retained(mode: MaskMode, n: usize, selected: &[usize]) -> Result<Subset> {
    let chosen = Subset::from_indices(n, selected.iter().copied())?;
    Ok(match mode {
        MaskMode::Inclusion => chosen,
        MaskMode::Exclusion => chosen.complement(),
    })
}

/// Ordering that moves the selected negative features to the front and the
/// selected positive features to the back. Selection is the `count` largest
/// non-zero magnitudes; both blocks are sorted ascending by attribution and
/// unselected features keep their relative order in between.
pub fn pi_reordering(attributions: &[f64], count: usize) -> Result<Permutation> {
    let n = attributions.len();
    let mut idx: Vec<usize> = (0..n).filter(|&i| attributions[i] != 0.0).collect();
    idx.sort_by(|&a, &b| attributions[b].abs().total_cmp(&attributions[a].abs()).then(a.cmp(&b)));
    idx.truncate(count);
    let mut selected = vec![false; n];
    for &i in &idx {
        selected[i] = true;
    }
    let ascending = |mut v: Vec<usize>| {
        v.sort_by(|&a, &b| attributions[a].total_cmp(&attributions[b]).then(a.cmp(&b)));
        v
    };
    let front = ascending(idx.iter().copied().filter(|&i| attributions[i] < 0.0).collect());
    let back = ascending(idx.iter().copied().filter(|&i| attributions[i] > 0.0).collect());
    let mut order = front;
    order.extend((0..n).filter(|&i| !selected[i]));
    order.extend(back);
    Permutation::from_order(order)
}

pub fn random_attributions(sampler: &mut SeededSampler, n: usize) -> Vec<f64> {
    (0..n).map(|_| sampler.unit()).collect()
}

/// Per-class scores of each sequence, averaged over groups of `per` rows.
fn class_scores(gateway: &Gateway, sequences: &[Vec<Token>], per: usize) -> Result<Vec<Vec<f64>>> {
    let classes = gateway.class_count();
    let mut by_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let out = gateway.evaluate(c, sequences)?;
        by_class.push(
            out.chunks(per)
                .map(|ch| ch.iter().sum::<f64>() / per as f64)
                .collect::<Vec<f64>>(),
        );
    }
    let rows = sequences.len() / per;
    Ok((0..rows).map(|r| by_class.iter().map(|col| col[r]).collect()).collect())
}

fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (k, &v)| if v > best.1 { (k, v) } else { best },
        )
        .0
}

/// Predicted class and its score for each sample in its original form.
pub fn original_predictions(gateway: &Gateway, samples: &[SequenceSample]) -> Result<Vec<(usize, f64)>> {
    let mut seqs = Vec::new();
    let per = references_per_sample(samples)?;
    for s in samples {
        let n = s.len();
        for r in s.references() {
            seqs.push(materialize(
                &s.tokens,
                &Subset::full(n),
                &Permutation::identity(n)?,
                &r,
            )?);
        }
    }
    Ok(class_scores(gateway, &seqs, per)?
        .into_iter()
        .map(|scores| {
            let c = argmax(&scores);
            (c, scores[c])
        })
        .collect())
}

fn references_per_sample(samples: &[SequenceSample]) -> Result<usize> {
    let per = samples.first().map_or(1, |s| s.references().len());
    for s in samples {
        s.validate()?;
        if s.references().len() != per {
            return Err(Error::InvalidConfig(
                "all samples must carry the same number of references".into(),
            ));
        }
    }
    Ok(per)
}

/// Score of the originally predicted class as the top-`k` features by
/// |attribution| are pushed toward the ends their sign points to.
pub fn pi_permutation_curve(
    gateway: &Gateway,
    sample: &SequenceSample,
    attributions: &[f64],
    cfg: &MetricConfig,
) -> Result<EvalCurve> {
    validate_grid(&cfg.k_grid)?;
    let n = sample.len();
    if attributions.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: attributions.len(),
        });
    }
    let samples = std::slice::from_ref(sample);
    let per = references_per_sample(samples)?;
    let (class, _) = original_predictions(gateway, samples)?[0];
    let refs = sample.references();
    let full = Subset::full(n);
    let mut seqs = Vec::with_capacity(cfg.k_grid.len() * per);
    for &k in &cfg.k_grid {
        let order = pi_reordering(attributions, select_count(k, n))?;
        for r in &refs {
            seqs.push(materialize(&sample.tokens, &full, &order, r)?);
        }
    }
    let out = gateway.evaluate(class, &seqs)?;
    let scores = out.chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect();
    EvalCurve::new(cfg.k_grid.clone(), scores)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scoring {
    Agreement,
    Probability,
}

fn masking_curve(
    gateway: &Gateway,
    samples: &[SequenceSample],
    attributions: &[Vec<f64>],
    mode: MaskMode,
    cfg: &MetricConfig,
    scoring: Scoring,
) -> Result<EvalCurve> {
    cfg.validate()?;
    if samples.len() != attributions.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            got: attributions.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples to evaluate".into()));
    }
    for (s, a) in samples.iter().zip(attributions) {
        if s.len() != a.len() {
            return Err(Error::LengthMismatch {
                expected: s.len(),
                got: a.len(),
            });
        }
    }
    let per = references_per_sample(samples)?;
    let originals = original_predictions(gateway, samples)?;
    let perms = if cfg.permute { cfg.permutations_per_k } else { 1 };
    let mut sampler = SeededSampler::new(cfg.seed);

    let mut seqs = Vec::new();
    for &k in &cfg.k_grid {
        for (s, a) in samples.iter().zip(attributions) {
            let n = s.len();
            let kept = retained(mode, n, &top_by_value(a, select_count(k, n)))?;
            let refs = s.references();
            for _ in 0..perms {
                let order = if cfg.permute {
                    sampler.permutation(n)?
                } else {
                    Permutation::identity(n)?
                };
                for r in &refs {
                    seqs.push(materialize(&s.tokens, &kept, &order, r)?);
                }
            }
        }
    }
    let scores = class_scores(gateway, &seqs, per)?;

    let block = samples.len() * perms;
    let points = scores
        .chunks(block)
        .map(|chunk| {
            let total: f64 = chunk
                .iter()
                .enumerate()
                .map(|(j, sc)| {
                    let (class, _) = originals[j / perms];
                    match scoring {
                        Scoring::Agreement => f64::from(u8::from(argmax(sc) == class)),
                        Scoring::Probability => sc[class],
                    }
                })
                .sum();
            total / block as f64
        })
        .collect();
    EvalCurve::new(cfg.k_grid.clone(), points)
}

/// Post-hoc accuracy as the top-`k` features by attribution are retained
/// (inclusion) or masked (exclusion), averaged over random reorderings.
pub fn inclusion_exclusion_auc(
    gateway: &Gateway,
    samples: &[SequenceSample],
    attributions: &[Vec<f64>],
    mode: MaskMode,
    cfg: &MetricConfig,
) -> Result<EvalCurve> {
    masking_curve(gateway, samples, attributions, mode, cfg, Scoring::Agreement)
}

/// Mean predicted-class probability under the same masking scheme.
pub fn insertion_deletion_auc(
    gateway: &Gateway,
    samples: &[SequenceSample],
    attributions: &[Vec<f64>],
    mode: MaskMode,
    cfg: &MetricConfig,
) -> Result<EvalCurve> {
    masking_curve(gateway, samples, attributions, mode, cfg, Scoring::Probability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{Nonlinearity, SyntheticModelConfig, SyntheticTokenModel};
    use crate::gateway::{text_tokens, GatewayConfig};

    fn sigmoid_gateway(length: usize) -> Gateway {
        let model = SyntheticTokenModel::new(SyntheticModelConfig {
            length,
            ..SyntheticModelConfig::default_with(Nonlinearity::Sigmoid)
        })
        .unwrap();
        Gateway::in_process(model, GatewayConfig::default()).unwrap()
    }

    fn sample(words: &[&str]) -> SequenceSample {
        SequenceSample::new(text_tokens(words))
    }

    #[test]
    fn trapezoid_and_curve() {
        let c = EvalCurve::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert!(EvalCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(EvalCurve::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert_eq!(c.to_csv().lines().count(), 4);
    }

    #[test]
    fn reordering_rule() {
        let a = [0.5, -0.2, 0.0, -0.9, 0.1, 0.7];
        assert_eq!(pi_reordering(&a, 0).unwrap().order(), &[0, 1, 2, 3, 4, 5]);
        // Top 4 by magnitude: 3, 5, 0, 1.
        assert_eq!(pi_reordering(&a, 4).unwrap().order(), &[3, 1, 2, 4, 0, 5]);
        assert_eq!(pi_reordering(&[0.0; 4], 4).unwrap().order(), &[0, 1, 2, 3]);
    }

    #[test]
    fn selection_helpers() {
        assert_eq!(select_count(0.25, 10), 3);
        assert_eq!(select_count(1.0, 7), 7);
        assert_eq!(top_by_value(&[0.1, 0.3, 0.3, -1.0], 2), vec![1, 2]);
        for n in 1..8 {
            let attr: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
            for k in 0..=10 {
                let sel = top_by_value(&attr, select_count(k as f64 / 10.0, n));
                let inc = retained(MaskMode::Inclusion, n, &sel).unwrap();
                let exc = retained(MaskMode::Exclusion, n, &sel).unwrap();
                assert_eq!(inc.complement(), exc);
            }
        }
    }

    #[test]
    fn pi_curve_edges() {
        let gw = sigmoid_gateway(6);
        let s = sample(&["A", "C", "Abar", "B", "D", "Cbar"]);
        let cfg = MetricConfig::default();
        let (_, p0) = original_predictions(&gw, std::slice::from_ref(&s)).unwrap()[0];
        let flat = pi_permutation_curve(&gw, &s, &[0.0; 6], &cfg).unwrap();
        assert!(flat.scores.iter().all(|&v| v == p0));
        let c = pi_permutation_curve(&gw, &s, &[0.2, 0.0, -0.2, 0.1, 0.0, 0.0], &cfg).unwrap();
        assert_eq!(c.scores[0], p0);
    }

    #[test]
    fn identity_masking_edges() {
        let gw = sigmoid_gateway(6);
        let samples = vec![
            sample(&["A", "C", "Abar", "B", "D", "Cbar"]),
            sample(&["B", "B", "Bbar", "A", "C", "C"]),
        ];
        let attr = vec![
            vec![0.1, 0.5, -0.2, 0.3, 0.0, -0.4],
            vec![0.2, 0.1, 0.0, 0.4, -0.3, 0.3],
        ];
        let cfg = MetricConfig {
            permute: false,
            ..MetricConfig::default()
        };
        let inc = inclusion_exclusion_auc(&gw, &samples, &attr, MaskMode::Inclusion, &cfg).unwrap();
        assert_eq!(*inc.scores.last().unwrap(), 1.0);
        let exc = inclusion_exclusion_auc(&gw, &samples, &attr, MaskMode::Exclusion, &cfg).unwrap();
        assert_eq!(exc.scores[0], 1.0);
        let del = insertion_deletion_auc(&gw, &samples, &attr, MaskMode::Exclusion, &cfg).unwrap();
        let orig = original_predictions(&gw, &samples).unwrap();
        let mean = (orig[0].1 + orig[1].1) / 2.0;
        assert!((del.scores[0] - mean).abs() < 1e-15);
    }

    #[test]
    fn permutation_step_is_deterministic() {
        let gw = sigmoid_gateway(6);
        let samples = vec![sample(&["A", "C", "Abar", "B", "D", "Cbar"])];
        let attr = vec![vec![0.1, 0.5, -0.2, 0.3, 0.0, -0.4]];
        let cfg = MetricConfig {
            seed: 5,
            ..MetricConfig::default()
        };
        let a = insertion_deletion_auc(&gw, &samples, &attr, MaskMode::Inclusion, &cfg).unwrap();
        let b = insertion_deletion_auc(&gw, &samples, &attr, MaskMode::Inclusion, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.auc - trapezoid(&a.fractions, &a.scores)).abs() < 1e-12);
    }
}
