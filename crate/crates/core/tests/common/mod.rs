#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use ordshap::games::{
    Nonlinearity, OrderedGame, SyntheticModelConfig, SyntheticTokenModel, TabulatedGame, ToyItem, ToyOrderGame,
};
use ordshap::gateway::{text_tokens, Gateway, GatewayConfig, ModelGame, SequenceSample};
use ordshap::{Permutation, SeededSampler, Subset};

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[track_caller]
pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    let d = max_abs_diff(a, b);
    assert!(d <= tol, "max |a - b| = {d:e} > {tol:e}\n a = {a:?}\n b = {b:?}");
}

/// Random tables over n ∈ {2, 3, 4}, cycling through the sizes.
pub fn random_suite(count: usize, seed: u64, fixed_empty: bool) -> Vec<TabulatedGame> {
    (0..count)
        .map(|k| {
            let mut rng = SeededSampler::new(seed).derive(k as u64);
            TabulatedGame::random(2 + k % 3, &mut rng, fixed_empty).unwrap()
        })
        .collect()
}

fn drop_player(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j - 1
    }
}

/// Adds player `i` to an (n−1)-player game without letting it change any
/// payoff, whether included or not and wherever it sits.
pub fn with_null_player(base: &dyn OrderedGame, i: usize) -> TabulatedGame {
    let n = base.players() + 1;
    TabulatedGame::from_fn(n, |s, sigma| {
        let sub = Subset::from_indices(n - 1, s.iter().filter(|&j| j != i).map(|j| drop_player(i, j))).unwrap();
        let order: Vec<usize> = sigma
            .order()
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| drop_player(i, j))
            .collect();
        base.evaluate(&sub, &Permutation::from_order(order).unwrap()).unwrap()
    })
    .unwrap()
}

fn swap_label(i: usize, j: usize, x: usize) -> usize {
    if x == i {
        j
    } else if x == j {
        i
    } else {
        x
    }
}

/// Averages a game with its copy under the relabelling i ↔ j.
pub fn symmetrized(base: &dyn OrderedGame, i: usize, j: usize) -> TabulatedGame {
    let n = base.players();
    TabulatedGame::from_fn(n, |s, sigma| {
        let ts = Subset::from_indices(n, s.iter().map(|x| swap_label(i, j, x))).unwrap();
        let tsigma = Permutation::from_order(sigma.order().iter().map(|&x| swap_label(i, j, x)).collect()).unwrap();
        0.5 * (base.evaluate(s, sigma).unwrap() + base.evaluate(&ts, &tsigma).unwrap())
    })
    .unwrap()
}

/// `ω'(S, σ) = ω(S, σ')` where σ' shuffles the positions of σ by `rho`:
/// the element at position `p` of σ' is the one at `rho[p]` in σ.
pub fn shuffled_positions(base: &dyn OrderedGame, rho: &[usize]) -> TabulatedGame {
    let n = base.players();
    TabulatedGame::from_fn(n, |s, sigma| {
        let moved = Permutation::from_order(rho.iter().map(|&p| sigma.order()[p]).collect()).unwrap();
        base.evaluate(s, &moved).unwrap()
    })
    .unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

/// A per-test scratch file under the system temp directory.
pub fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ordshap-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

pub fn synthetic(nonlinearity: Nonlinearity, length: usize) -> SyntheticTokenModel {
    let mut cfg = SyntheticModelConfig::default_with(nonlinearity);
    cfg.length = length;
    SyntheticTokenModel::new(cfg).unwrap()
}

pub fn model_game(model: SyntheticTokenModel, tokens: &[&str], class_index: usize) -> ModelGame {
    let gw = Arc::new(Gateway::in_process(model, GatewayConfig::default()).unwrap());
    ModelGame::new(gw, SequenceSample::new(text_tokens(tokens)), class_index).unwrap()
}

/// Five-player games with exact answers, used to score the estimators.
pub fn oracle_games() -> Vec<(String, Box<dyn OrderedGame>)> {
    use ToyItem::*;
    let tokens = ["A", "Cbar", "B", "Abar", "C"];
    let mut games: Vec<(String, Box<dyn OrderedGame>)> = vec![
        (
            "toy [Hat,Hat,Bag,R-Glove,R-Glove]".into(),
            Box::new(ToyOrderGame::new(vec![Hat, Hat, Bag, RightGlove, RightGlove]).unwrap()),
        ),
        (
            "synthetic linear".into(),
            Box::new(model_game(synthetic(Nonlinearity::Linear, 5), &tokens, 0)),
        ),
        (
            "synthetic sigmoid".into(),
            Box::new(model_game(synthetic(Nonlinearity::Sigmoid, 5), &tokens, 0)),
        ),
    ];
    for seed in 0..3 {
        let g = TabulatedGame::random(5, &mut SeededSampler::new(100 + seed), true).unwrap();
        games.push((format!("random table {seed}"), Box::new(g)));
    }
    games
}
