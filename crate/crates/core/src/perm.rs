//! Permutations, subsets and ordered coalitions.
//!
//! Everything in this module is zero-based: feature `i` and position `k`
//! both range over `0..n`. A [`Permutation`] stores its one-line form
//! (`order[k]` is the feature placed at position `k`) together with the
//! inverse (`position[i]` is where feature `i` lands), so both lookups are
//! constant time. [`Permutation::from_one_line`] and
//! [`Permutation::to_one_line`] convert from and to the one-based notation
//! used by the file formats.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A bijection on `0..n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPermutation("size must be positive".into()));
        }
        let order: Vec<usize> = (0..n).collect();
        Ok(Self {
            position: order.clone(),
            order,
        })
    }

    /// Builds a permutation from its zero-based one-line form.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("size must be positive".into()));
        }
        let mut position = vec![usize::MAX; n];
        for (k, &i) in order.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidPermutation(format!(
                    "value {i} out of range for size {n}"
                )));
            }
            if position[i] != usize::MAX {
                return Err(Error::InvalidPermutation(format!("value {i} repeated")));
            }
            position[i] = k;
        }
        Ok(Self { order, position })
    }

    /// Builds a permutation from one-based one-line notation, e.g. `(3,2,4,1)`.
    pub fn from_one_line(one_line: &[usize]) -> Result<Self> {
        let order = one_line
            .iter()
            .map(|&v| {
                v.checked_sub(1)
                    .ok_or_else(|| Error::InvalidPermutation("one-line values start at 1".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_order(order)
    }

    pub fn to_one_line(&self) -> Vec<usize> {
        self.order.iter().map(|&i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The one-line form: `order()[k]` is the feature at position `k`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// The inverse one-line form: `positions()[i]` is the position of feature `i`.
    pub fn positions(&self) -> &[usize] {
        &self.position
    }

    pub fn element_at(&self, position: usize) -> usize {
        self.order[position]
    }

    pub fn position_of(&self, element: usize) -> usize {
        self.position[element]
    }

    pub fn inverse(&self) -> Self {
        Self {
            order: self.position.clone(),
            position: self.order.clone(),
        }
    }

    /// Number of pairs `k < m` with `order[k] > order[m]`.
    pub fn inversions(&self) -> usize {
        let mut count = 0;
        for (k, &a) in self.order.iter().enumerate() {
            count += self.order[k + 1..].iter().filter(|&&b| a > b).count();
        }
        count
    }

    /// Features placed strictly before `element`.
    pub fn predecessor_set(&self, element: usize) -> Result<Subset> {
        let n = self.len();
        if element >= n {
            return Err(Error::MissingElement(element));
        }
        let pos = self.position[element];
        Subset::from_indices(n, self.order[..pos].iter().copied())
    }

    /// Composition `self ∘ other`, i.e. `k ↦ self(other(k))` in one-line terms.
    pub fn compose(&self, other: &Permutation) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Self::from_order(other.order.iter().map(|&k| self.order[k]).collect())
    }

    pub fn as_coalition(&self) -> OrderedCoalition {
        OrderedCoalition {
            elems: self.order.clone(),
        }
    }

    /// Iterates over all `n!` permutations in lexicographic order.
    pub fn all(n: usize) -> AllPermutations {
        AllPermutations {
            next: (0..n).collect(),
            done: n == 0,
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{:?}", self.order)
    }
}

/// Rearranges `items` into the next lexicographic permutation. Returns
/// `false` (leaving `items` sorted descending) once the last one is reached.
pub fn next_permutation<T: Ord>(items: &mut [T]) -> bool {
    if items.len() < 2 {
        return false;
    }
    let mut i = items.len() - 1;
    while i > 0 && items[i - 1] >= items[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = items.len() - 1;
    while items[j] <= items[i - 1] {
        j -= 1;
    }
    items.swap(i - 1, j);
    items[i..].reverse();
    true
}

pub struct AllPermutations {
    next: Vec<usize>,
    done: bool,
}

impl Iterator for AllPermutations {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        if self.done {
            return None;
        }
        let current = self.next.clone();
        self.done = !next_permutation(&mut self.next);
        Some(Permutation {
            position: invert(&current),
            order: current,
        })
    }
}

fn invert(order: &[usize]) -> Vec<usize> {
    let mut position = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    position
}

/// A subset of `0..n`, stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset {
    n: usize,
    words: Vec<u64>,
}

impl Subset {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.set(i);
        }
        s
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = Self::empty(n);
        for i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
            if s.contains(i) {
                return Err(Error::DuplicateElement(i));
            }
            s.set(i);
        }
        Ok(s)
    }

    /// Subset whose members are the set bits of `mask` (requires `n <= 64`).
    pub fn from_mask(n: usize, mask: u64) -> Self {
        debug_assert!(n <= 64);
        let mut s = Self::empty(n);
        if n > 0 {
            let keep = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            s.words[0] = mask & keep;
        }
        s
    }

    /// Bitmask of the members (requires `n <= 64`).
    pub fn mask(&self) -> u64 {
        self.words.first().copied().unwrap_or(0)
    }

    /// Size of the ambient set.
    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn insert(&mut self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, size: self.n });
        }
        self.set(i);
        Ok(())
    }

    pub fn remove(&mut self, i: usize) {
        if i < self.n {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn with(&self, i: usize) -> Self {
        let mut s = self.clone();
        if i < self.n {
            s.set(i);
        }
        s
    }

    pub fn without(&self, i: usize) -> Self {
        let mut s = self.clone();
        s.remove(i);
        s
    }

    pub fn complement(&self) -> Self {
        let mut s = Self::empty(self.n);
        for i in 0..self.n {
            if !self.contains(i) {
                s.set(i);
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.contains(i))
    }

    /// Iterates over all `2^n` subsets of `0..n` in mask order (`n <= 63`).
    pub fn all(n: usize) -> impl Iterator<Item = Subset> {
        assert!(n < 64, "subset enumeration requires n < 64");
        (0u64..1 << n).map(move |m| Subset::from_mask(n, m))
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// An ordering of a subset of players (an element of `𝔖_S` for some `S`).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct OrderedCoalition {
    elems: Vec<usize>,
}

impl OrderedCoalition {
    pub fn new(elems: Vec<usize>) -> Result<Self> {
        for (k, e) in elems.iter().enumerate() {
            if elems[..k].contains(e) {
                return Err(Error::DuplicateElement(*e));
            }
        }
        Ok(Self { elems })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn elements(&self) -> &[usize] {
        &self.elems
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn position_of(&self, element: usize) -> Option<usize> {
        self.elems.iter().position(|&e| e == element)
    }

    /// Inserts `element` so that it ends up at `position` (`0..=len`).
    pub fn insert_at(&self, element: usize, position: usize) -> Result<Self> {
        if self.elems.contains(&element) {
            return Err(Error::DuplicateElement(element));
        }
        if position > self.elems.len() {
            return Err(Error::IndexOutOfRange {
                index: position,
                size: self.elems.len() + 1,
            });
        }
        let mut elems = self.elems.clone();
        elems.insert(position, element);
        Ok(Self { elems })
    }

    pub fn remove(&self, element: usize) -> Result<Self> {
        let k = self.position_of(element).ok_or(Error::MissingElement(element))?;
        let mut elems = self.elems.clone();
        elems.remove(k);
        Ok(Self { elems })
    }

    /// The member set `T(π)` as a subset of `0..n`.
    pub fn members(&self, n: usize) -> Result<Subset> {
        Subset::from_indices(n, self.elems.iter().copied())
    }

    /// Number of member pairs ordered one way here and the other way in `full`.
    pub fn disagreements(&self, full: &Permutation) -> Result<usize> {
        for &e in &self.elems {
            if e >= full.len() {
                return Err(Error::MissingElement(e));
            }
        }
        let mut count = 0;
        for (k, &a) in self.elems.iter().enumerate() {
            for &b in &self.elems[k + 1..] {
                if full.position_of(a) > full.position_of(b) {
                    count += 1;
                }
            }
        }
        Ok(count)
    }

    /// Lazily yields every permutation of `0..n` that keeps this coalition's
    /// relative order, i.e. the `n!/|S|!` members of `Γ(𝔖_N, π)`.
    pub fn consistent_extensions(&self, n: usize) -> Result<ConsistentExtensions> {
        let members = self.members(n)?;
        let mut rest: Vec<usize> = members.complement().iter().collect();
        rest.sort_unstable();
        Ok(ConsistentExtensions {
            n,
            fixed: self.elems.clone(),
            slots: (0..self.elems.len()).collect(),
            rest,
            done: n == 0,
        })
    }

    /// Every ordering of the members of `subset`, lexicographically.
    pub fn arrangements(subset: &Subset) -> impl Iterator<Item = OrderedCoalition> {
        let mut next: Vec<usize> = subset.iter().collect();
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let current = next.clone();
            done = !next_permutation(&mut next);
            Some(OrderedCoalition { elems: current })
        })
    }
}

impl fmt::Debug for OrderedCoalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OrderedCoalition{:?}", self.elems)
    }
}

pub struct ConsistentExtensions {
    n: usize,
    fixed: Vec<usize>,
    /// Positions (ascending) occupied by the fixed elements.
    slots: Vec<usize>,
    /// Current arrangement of the free elements.
    rest: Vec<usize>,
    done: bool,
}

impl ConsistentExtensions {
    fn advance_slots(&mut self) -> bool {
        let k = self.slots.len();
        let n = self.n;
        let mut idx = k;
        while idx > 0 {
            idx -= 1;
            if self.slots[idx] < n - k + idx {
                self.slots[idx] += 1;
                for j in idx + 1..k {
                    self.slots[j] = self.slots[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
}

impl Iterator for ConsistentExtensions {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        if self.done {
            return None;
        }
        let mut order = Vec::with_capacity(self.n);
        let (mut f, mut r) = (0, 0);
        for pos in 0..self.n {
            if f < self.slots.len() && self.slots[f] == pos {
                order.push(self.fixed[f]);
                f += 1;
            } else {
                order.push(self.rest[r]);
                r += 1;
            }
        }
        if !next_permutation(&mut self.rest) {
            // `rest` wrapped around to descending order; restore and move slots.
            self.rest.sort_unstable();
            if !self.advance_slots() {
                self.done = true;
            }
        }
        Some(Permutation {
            position: invert(&order),
            order,
        })
    }
}

/// Σ over `S ∋ i` of the number of orderings of `S` that put `i` at
/// `position`. Brute force over within-subset orderings.
pub fn count_positions(n: usize, element: usize, position: usize) -> Result<u64> {
    const LIMIT: usize = 8;
    if n > LIMIT {
        return Err(Error::SizeGuard {
            what: "count_positions",
            limit: LIMIT,
            n,
        });
    }
    if element >= n || position >= n {
        return Err(Error::IndexOutOfRange {
            index: element.max(position),
            size: n,
        });
    }
    let mut count = 0;
    for subset in Subset::all(n).filter(|s| s.contains(element)) {
        count += OrderedCoalition::arrangements(&subset)
            .filter(|pi| pi.position_of(element) == Some(position))
            .count() as u64;
    }
    Ok(count)
}

/// Deterministic random source. Equal seeds and equal call sequences give
/// equal outputs.
#[derive(Clone, Debug)]
pub struct SeededSampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream for parallel or per-item work.
    pub fn derive(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        Self { seed: self.seed, rng }
    }

    /// Uniform draw from `𝔖_n` (Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Result<Permutation> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        Permutation::from_order(order)
    }

    /// Uniform draw from the subsets of `0..n` other than `∅` and the full set.
    pub fn proper_subset(&mut self, n: usize) -> Result<Subset> {
        if n < 2 {
            return Err(Error::InvalidConfig(
                "proper non-empty subsets need at least two players".into(),
            ));
        }
        loop {
            let mut s = Subset::empty(n);
            for i in 0..n {
                if self.rng.gen::<bool>() {
                    s.set(i);
                }
            }
            let len = s.len();
            if len != 0 && len != n {
                return Ok(s);
            }
        }
    }

    pub fn index(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use proptest::prelude::*;

    use super::*;

    fn one_line(v: &[usize]) -> Permutation {
        Permutation::from_one_line(v).unwrap()
    }

    fn coalition_1b(v: &[usize]) -> OrderedCoalition {
        OrderedCoalition::new(v.iter().map(|x| x - 1).collect()).unwrap()
    }

    fn factorial(n: usize) -> usize {
        (1..=n).product()
    }

    #[test]
    fn identity_basics() {
        let id = Permutation::identity(4).unwrap();
        assert_eq!(id.to_one_line(), vec![1, 2, 3, 4]);
        assert_eq!(id.inversions(), 0);
        assert_eq!(id.inverse(), id);
        assert!(Permutation::identity(0).is_err());
    }

    #[test]
    fn inverse_of_worked_example() {
        assert_eq!(one_line(&[3, 2, 4, 1]).inverse().to_one_line(), vec![4, 2, 1, 3]);
        assert_eq!(one_line(&[2, 1]).inverse().to_one_line(), vec![2, 1]);
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::from_one_line(&[1, 1, 2]).is_err());
        assert!(Permutation::from_one_line(&[1, 4, 2]).is_err());
        assert!(Permutation::from_one_line(&[0, 1]).is_err());
    }

    #[test]
    fn inversion_counts() {
        assert_eq!(one_line(&[2, 1]).inversions(), 1);
        // pairs of (3,2,4,1): (3,2) (3,1) (2,1) (4,1) are inverted; (3,4) (2,4) are not
        assert_eq!(one_line(&[3, 2, 4, 1]).inversions(), 4);
    }

    #[test]
    fn insert_and_remove() {
        let p = coalition_1b(&[2, 3]);
        assert_eq!(p.insert_at(0, 0).unwrap(), coalition_1b(&[1, 2, 3]));
        assert_eq!(p.insert_at(0, 2).unwrap(), coalition_1b(&[2, 3, 1]));
        assert!(p.insert_at(1, 0).is_err());
        assert!(p.insert_at(0, 3).is_err());

        assert_eq!(coalition_1b(&[3, 2, 4, 1]).remove(3).unwrap(), coalition_1b(&[3, 2, 1]));
        assert_eq!(coalition_1b(&[1]).remove(0).unwrap(), OrderedCoalition::empty());
        assert!(coalition_1b(&[1]).remove(1).is_err());
    }

    #[test]
    fn disagreement_counts() {
        let sigma = one_line(&[3, 2, 4, 1]);
        let restricted = coalition_1b(&[3, 4, 1]);
        assert_eq!(restricted.disagreements(&sigma).unwrap(), 0);
        assert_eq!(coalition_1b(&[1, 2]).disagreements(&one_line(&[2, 1])).unwrap(), 1);
        assert!(coalition_1b(&[3]).disagreements(&one_line(&[2, 1])).is_err());
    }

    #[test]
    fn consistent_extension_examples() {
        let all: Vec<_> = OrderedCoalition::empty().consistent_extensions(3).unwrap().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 6);

        let full: Vec<_> = coalition_1b(&[1, 2, 3]).consistent_extensions(3).unwrap().collect();
        assert_eq!(full, vec![Permutation::identity(3).unwrap()]);

        assert_eq!(coalition_1b(&[2, 1]).consistent_extensions(3).unwrap().count(), 3);
    }

    #[test]
    fn consistent_extension_cardinality_exhaustive() {
        for n in 1..=5 {
            // Brute-force oracle: filter all of 𝔖_n by zero disagreements.
            let everything: Vec<Permutation> = Permutation::all(n).collect();
            for subset in Subset::all(n) {
                for pi in OrderedCoalition::arrangements(&subset) {
                    let got: HashSet<Permutation> = pi.consistent_extensions(n).unwrap().collect();
                    let expected: HashSet<Permutation> = everything
                        .iter()
                        .filter(|s| pi.disagreements(s).unwrap() == 0)
                        .cloned()
                        .collect();
                    assert_eq!(got.len(), factorial(n) / factorial(pi.len()));
                    assert_eq!(got, expected, "n={n} pi={pi:?}");
                    assert_eq!(pi.consistent_extensions(n).unwrap().count(), got.len());
                }
            }
        }
    }

    #[test]
    fn predecessor_sets() {
        let sigma = one_line(&[3, 2, 4, 1]);
        assert!(sigma.predecessor_set(2).unwrap().is_empty());
        let pred = sigma.predecessor_set(0).unwrap();
        assert_eq!(pred.iter().collect::<Vec<_>>(), vec![1, 2, 3]);
        for i in 0..4 {
            assert_eq!(sigma.predecessor_set(i).unwrap().len(), sigma.position_of(i));
        }
        assert!(sigma.predecessor_set(4).is_err());
    }

    #[test]
    fn position_counts_small_cases() {
        assert_eq!(count_positions(1, 0, 0).unwrap(), 1);
        // n = 2, feature 1: {1} contributes one ordering at position 1;
        // {1,2} contributes (1,2) at position 1 and (2,1) at position 2.
        assert_eq!(count_positions(2, 0, 0).unwrap(), 2);
        assert_eq!(count_positions(2, 0, 1).unwrap(), 1);
        assert!(count_positions(9, 0, 0).is_err());
    }

    #[test]
    fn position_counts_are_never_uniform() {
        for n in 2..=5 {
            for i in 0..n {
                let counts: Vec<u64> = (0..n).map(|l| count_positions(n, i, l).unwrap()).collect();
                assert!(counts.iter().any(|&c| c != counts[0]), "n={n} i={i} counts={counts:?}");
            }
        }
    }

    #[test]
    fn all_permutations_enumerates_n_factorial() {
        for n in 1..=6 {
            let perms: HashSet<Permutation> = Permutation::all(n).collect();
            assert_eq!(perms.len(), factorial(n));
        }
    }

    #[test]
    fn sampler_singleton_and_determinism() {
        let mut s = SeededSampler::new(7);
        assert_eq!(s.permutation(1).unwrap().to_one_line(), vec![1]);
        let a: Vec<_> = {
            let mut s = SeededSampler::new(42);
            (0..20).map(|_| s.permutation(9).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut s = SeededSampler::new(42);
            (0..20).map(|_| s.permutation(9).unwrap()).collect()
        };
        assert_eq!(a, b);
        let mut d1 = SeededSampler::new(42).derive(3);
        let mut d2 = SeededSampler::new(42).derive(3);
        let mut d3 = SeededSampler::new(42).derive(4);
        let x = d1.permutation(12).unwrap();
        assert_eq!(x, d2.permutation(12).unwrap());
        assert_ne!(x, d3.permutation(12).unwrap());
    }

    #[test]
    fn sampler_is_uniform_over_s4() {
        // Chi-square goodness of fit over the 24 outcomes, 10^5 draws.
        let mut s = SeededSampler::new(2024);
        let draws = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(s.permutation(4).unwrap().order().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = draws as f64 / 24.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 23 degrees of freedom.
        assert!(chi2 < 49.728, "chi2 = {chi2}");
    }

    #[test]
    fn proper_subsets_exclude_trivial_sets() {
        let mut s = SeededSampler::new(1);
        let mut seen = HashSet::new();
        for _ in 0..2000 {
            let sub = s.proper_subset(4).unwrap();
            assert!(!sub.is_empty() && sub.len() < 4);
            seen.insert(sub.mask());
        }
        assert_eq!(seen.len(), 14);
        assert!(s.proper_subset(1).is_err());
    }

    fn arb_perm() -> impl Strategy<Value = Permutation> {
        (1usize..10, any::<u64>()).prop_map(|(n, seed)| SeededSampler::new(seed).permutation(n).unwrap())
    }

    proptest! {
        #[test]
        fn bijection_and_involution(p in arb_perm()) {
            let mut sorted = p.order().to_vec();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..p.len()).collect::<Vec<_>>());
            prop_assert_eq!(p.inverse().inverse(), p.clone());
            let id = Permutation::identity(p.len()).unwrap();
            prop_assert_eq!(p.compose(&p.inverse()).unwrap(), id);
        }

        #[test]
        fn insert_remove_round_trip(p in arb_perm(), pick in any::<usize>(), slot in any::<usize>()) {
            let n = p.len();
            let i = pick % n;
            let full = p.as_coalition();
            let removed = full.remove(i).unwrap();
            prop_assert_eq!(removed.insert_at(i, p.position_of(i)).unwrap(), full);
            let l = slot % n;
            prop_assert_eq!(removed.insert_at(i, l).unwrap().remove(i).unwrap(), removed);
        }
    }
}
