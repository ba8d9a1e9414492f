//! Ordered games `ω(S, σ)` and the built-in analytic games.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GatewayError, Result};
use crate::gateway::{SequenceModel, Token};
use crate::perm::{Permutation, SeededSampler, Subset};

/// A payoff over (coalition, full-sequence ordering) pairs.
///
/// `evaluate(S, σ)` is the payoff when the features of `S` are kept, the
/// sequence is rearranged by `σ`, and everything outside `S` is ablated.
pub trait OrderedGame: Send + Sync {
    fn players(&self) -> usize;

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64>;

    /// Evaluates many queries at once. Model-backed games override this to
    /// batch and deduplicate calls.
    fn evaluate_batch(&self, queries: &[(&Subset, &Permutation)]) -> Result<Vec<f64>> {
        queries.iter().map(|(s, p)| self.evaluate(s, p)).collect()
    }

    fn descriptor(&self) -> String;
}

impl<G: OrderedGame + ?Sized> OrderedGame for Arc<G> {
    fn players(&self) -> usize {
        (**self).players()
    }
    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        (**self).evaluate(coalition, order)
    }
    fn evaluate_batch(&self, queries: &[(&Subset, &Permutation)]) -> Result<Vec<f64>> {
        (**self).evaluate_batch(queries)
    }
    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<G: OrderedGame + ?Sized> OrderedGame for &G {
    fn players(&self) -> usize {
        (**self).players()
    }
    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        (**self).evaluate(coalition, order)
    }
    fn evaluate_batch(&self, queries: &[(&Subset, &Permutation)]) -> Result<Vec<f64>> {
        (**self).evaluate_batch(queries)
    }
    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

/// Wraps a closure as an ordered game.
pub struct FnGame<F> {
    players: usize,
    name: String,
    func: F,
}

impl<F> FnGame<F>
where
    F: Fn(&Subset, &Permutation) -> f64 + Send + Sync,
{
    pub fn new(players: usize, name: impl Into<String>, func: F) -> Self {
        Self {
            players,
            name: name.into(),
            func,
        }
    }
}

impl<F> OrderedGame for FnGame<F>
where
    F: Fn(&Subset, &Permutation) -> f64 + Send + Sync,
{
    fn players(&self) -> usize {
        self.players
    }

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        Ok((self.func)(coalition, order))
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

/// Ignores the ordering: `ω(S, σ) = ν(S)`.
pub struct SetGame<F> {
    players: usize,
    func: F,
}

impl<F: Fn(&Subset) -> f64 + Send + Sync> SetGame<F> {
    pub fn new(players: usize, func: F) -> Self {
        Self { players, func }
    }
}

impl<F: Fn(&Subset) -> f64 + Send + Sync> OrderedGame for SetGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn evaluate(&self, coalition: &Subset, _order: &Permutation) -> Result<f64> {
        Ok((self.func)(coalition))
    }

    fn descriptor(&self) -> String {
        format!("set-game(n={})", self.players)
    }
}

/// Pointwise sum of two games over the same players.
pub struct SumGame<A, B>(pub A, pub B);

impl<A: OrderedGame, B: OrderedGame> OrderedGame for SumGame<A, B> {
    fn players(&self) -> usize {
        self.0.players()
    }

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        Ok(self.0.evaluate(coalition, order)? + self.1.evaluate(coalition, order)?)
    }

    fn descriptor(&self) -> String {
        format!("({} + {})", self.0.descriptor(), self.1.descriptor())
    }
}

/// Lexicographic rank of a permutation of `0..n`.
pub(crate) fn lex_rank(order: &[usize]) -> usize {
    let n = order.len();
    let mut rank = 0;
    let mut fact = vec![1usize; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k;
    }
    for (k, &v) in order.iter().enumerate() {
        let smaller_after = order[k + 1..].iter().filter(|&&w| w < v).count();
        rank += smaller_after * fact[n - k - 1];
    }
    rank
}

/// An explicit table of payoffs for every `(S, σ)`; small `n` only.
#[derive(Clone, Debug)]
pub struct TabulatedGame {
    players: usize,
    orders: usize,
    values: Vec<f64>,
    name: String,
}

impl TabulatedGame {
    pub const MAX_PLAYERS: usize = 6;

    pub fn from_fn(players: usize, mut f: impl FnMut(&Subset, &Permutation) -> f64) -> Result<Self> {
        if players == 0 || players > Self::MAX_PLAYERS {
            return Err(Error::SizeGuard {
                what: "tabulated game",
                limit: Self::MAX_PLAYERS,
                n: players,
            });
        }
        let orders: usize = (1..=players).product();
        let mut values = vec![0.0; orders << players];
        for sigma in Permutation::all(players) {
            let r = lex_rank(sigma.order());
            for s in Subset::all(players) {
                values[(s.mask() as usize) * orders + r] = f(&s, &sigma);
            }
        }
        Ok(Self {
            players,
            orders,
            values,
            name: format!("table(n={players})"),
        })
    }

    /// Payoffs drawn uniformly from `[-1, 1)`. With `fixed_empty`, the empty
    /// coalition pays `0` under every ordering, as any masked model does.
    pub fn random(players: usize, sampler: &mut SeededSampler, fixed_empty: bool) -> Result<Self> {
        let mut g = Self::from_fn(players, |s, _| {
            if fixed_empty && s.is_empty() {
                0.0
            } else {
                2.0 * sampler.unit() - 1.0
            }
        })?;
        g.name = format!("random-table(n={players}, seed={})", sampler.seed());
        Ok(g)
    }
}

impl OrderedGame for TabulatedGame {
    fn players(&self) -> usize {
        self.players
    }

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        if order.len() != self.players || coalition.ambient() != self.players {
            return Err(Error::LengthMismatch {
                expected: self.players,
                got: order.len(),
            });
        }
        Ok(self.values[(coalition.mask() as usize) * self.orders + lex_rank(order.order())])
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

/// Items of the hat/bag/glove ordering game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyItem {
    Hat,
    Bag,
    #[serde(rename = "L-Glove")]
    LeftGlove,
    #[serde(rename = "R-Glove")]
    RightGlove,
}

impl ToyItem {
    pub fn as_str(self) -> &'static str {
        match self {
            ToyItem::Hat => "Hat",
            ToyItem::Bag => "Bag",
            ToyItem::LeftGlove => "L-Glove",
            ToyItem::RightGlove => "R-Glove",
        }
    }
}

impl fmt::Display for ToyItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToyItem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Hat" => Ok(ToyItem::Hat),
            "Bag" => Ok(ToyItem::Bag),
            "L-Glove" => Ok(ToyItem::LeftGlove),
            "R-Glove" => Ok(ToyItem::RightGlove),
            other => Err(Error::UnknownToken(other.to_string())),
        }
    }
}

pub const HAT_VALUE: f64 = 3.0;
pub const GLOVE_PAIR_VALUE: f64 = 2.0;

/// Payoff of a drawn sequence: items drawn before the first bag are
/// discarded; each later hat pays 3 and each later left/right glove pair pays 2.
pub fn toy_game_payoff(items: &[ToyItem]) -> f64 {
    let Some(first_bag) = items.iter().position(|&it| it == ToyItem::Bag) else {
        return 0.0;
    };
    let after = &items[first_bag + 1..];
    let count = |item| after.iter().filter(|&&it| it == item).count();
    let pairs = count(ToyItem::LeftGlove).min(count(ToyItem::RightGlove));
    HAT_VALUE * count(ToyItem::Hat) as f64 + GLOVE_PAIR_VALUE * pairs as f64
}

pub fn parse_toy_items<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<ToyItem>> {
    tokens.iter().map(|t| t.as_ref().parse()).collect()
}

/// The toy ordering game over a fixed item sequence. Features outside the
/// coalition are removed from the sequence rather than masked.
#[derive(Clone, Debug)]
pub struct ToyOrderGame {
    items: Vec<ToyItem>,
}

impl ToyOrderGame {
    pub fn new(items: Vec<ToyItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidConfig("toy game needs at least one item".into()));
        }
        Ok(Self { items })
    }

    /// `[Hat, Hat, Hat, Bag, R-Glove, R-Glove]`
    pub fn reference_sample() -> Self {
        use ToyItem::*;
        Self {
            items: vec![Hat, Hat, Hat, Bag, RightGlove, RightGlove],
        }
    }

    pub fn items(&self) -> &[ToyItem] {
        &self.items
    }
}

impl OrderedGame for ToyOrderGame {
    fn players(&self) -> usize {
        self.items.len()
    }

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        if order.len() != self.items.len() {
            return Err(Error::LengthMismatch {
                expected: self.items.len(),
                got: order.len(),
            });
        }
        let drawn: Vec<ToyItem> = order
            .order()
            .iter()
            .filter(|&&i| coalition.contains(i))
            .map(|&i| self.items[i])
            .collect();
        Ok(toy_game_payoff(&drawn))
    }

    fn descriptor(&self) -> String {
        let names: Vec<&str> = self.items.iter().map(|it| it.as_str()).collect();
        format!("toy[{}]", names.join(","))
    }
}

/// Per-token affine value `v(t, k) = value + slope·(k − k̄)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenValue {
    pub token: String,
    pub value: f64,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelConfig {
    pub tokens: Vec<TokenValue>,
    pub nonlinearity: Nonlinearity,
    pub length: usize,
    pub seed: u64,
    /// Sentinel treated as an ablated position worth zero.
    pub mask_token: String,
}

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";

impl SyntheticModelConfig {
    /// Seven tokens: A and B gain value later in the sequence, Abar and Bbar
    /// lose it, and C, D, Cbar are position-free.
    pub fn default_with(nonlinearity: Nonlinearity) -> Self {
        let tv = |token: &str, value: f64, slope: f64| TokenValue {
            token: token.to_string(),
            value,
            slope,
        };
        Self {
            tokens: vec![
                tv("A", 0.15, 0.015),
                tv("B", -0.15, 0.015),
                tv("C", 0.3, 0.0),
                tv("D", 0.0, 0.0),
                tv("Abar", -0.15, -0.015),
                tv("Bbar", 0.15, -0.015),
                tv("Cbar", -0.3, 0.0),
            ],
            nonlinearity,
            length: 10,
            seed: 0,
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
        }
    }
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self::default_with(Nonlinearity::Sigmoid)
    }
}

/// `f_linear(t) = Σ_k v(t_k, k)` and its sigmoid.
#[derive(Clone, Debug)]
pub struct SyntheticTokenModel {
    config: SyntheticModelConfig,
    mean_position: f64,
}

impl SyntheticTokenModel {
    pub fn new(config: SyntheticModelConfig) -> Result<Self> {
        if config.length == 0 {
            return Err(Error::InvalidConfig("sequence length must be positive".into()));
        }
        if config.tokens.is_empty() {
            return Err(Error::InvalidConfig("alphabet is empty".into()));
        }
        for (k, t) in config.tokens.iter().enumerate() {
            if config.tokens[..k].iter().any(|o| o.token == t.token) || t.token == config.mask_token {
                return Err(Error::InvalidConfig(format!("token {:?} defined twice", t.token)));
            }
            if !t.value.is_finite() || !t.slope.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "token {:?} has a non-finite value",
                    t.token
                )));
            }
        }
        let mean_position = (config.length as f64 + 1.0) / 2.0;
        Ok(Self { config, mean_position })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }

    pub fn alphabet(&self) -> impl Iterator<Item = &str> {
        self.config.tokens.iter().map(|t| t.token.as_str())
    }

    pub fn token_value(&self, token: &str) -> Option<&TokenValue> {
        self.config.tokens.iter().find(|t| t.token == token)
    }

    /// The linear score `Σ_k v(t_k, k)`; mask tokens contribute nothing.
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        if tokens.len() != self.config.length {
            return Err(Error::LengthMismatch {
                expected: self.config.length,
                got: tokens.len(),
            });
        }
        let mut total = 0.0;
        for (k, t) in tokens.iter().enumerate() {
            let t = t.as_ref();
            if t == self.config.mask_token {
                continue;
            }
            let tv = self.token_value(t).ok_or_else(|| Error::UnknownToken(t.to_string()))?;
            total += tv.value + tv.slope * ((k + 1) as f64 - self.mean_position);
        }
        Ok(total)
    }

    pub fn output<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        let s = self.score(tokens)?;
        Ok(match self.config.nonlinearity {
            Nonlinearity::Linear => s,
            Nonlinearity::Sigmoid => sigmoid(s),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SequenceModel for SyntheticTokenModel {
    /// Linear mode has one output; sigmoid mode exposes
    /// `[sigmoid(score), 1 − sigmoid(score)]`.
    fn class_count(&self) -> usize {
        match self.config.nonlinearity {
            Nonlinearity::Linear => 1,
            Nonlinearity::Sigmoid => 2,
        }
    }

    fn predict(&self, class_index: usize, sequence: &[Token]) -> Result<f64, GatewayError> {
        let classes = self.class_count();
        if class_index >= classes {
            return Err(GatewayError::ClassIndex {
                index: class_index,
                classes,
            });
        }
        let words = sequence
            .iter()
            .map(|t| match t {
                Token::Text(s) => Ok(s.as_str()),
                Token::Vector(_) => Err(GatewayError::Remote {
                    status: None,
                    message: "synthetic model accepts text tokens only".into(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.output(&words).map_err(|e| GatewayError::Remote {
            status: None,
            message: e.to_string(),
        })?;
        Ok(if class_index == 0 { out } else { 1.0 - out })
    }
}

/// `count` sequences of i.i.d. uniform tokens from the model's alphabet.
pub fn generate_synthetic_dataset(
    sampler: &mut SeededSampler,
    count: usize,
    model: &SyntheticTokenModel,
) -> Vec<Vec<String>> {
    let alphabet: Vec<&str> = model.alphabet().collect();
    (0..count)
        .map(|_| {
            (0..model.config().length)
                .map(|_| alphabet[sampler.index(alphabet.len())].to_string())
                .collect()
        })
        .collect()
}
