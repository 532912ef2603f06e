//! Cross-lexicon co-occurrence moments and the moment-matching objective.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusStats, WordId};
use crate::error::{Error, Result};
use crate::lexicon::{LexiconPair, Side};

/// For every word in `l0` (resp. `l1`), the sum over documents of its count
/// times the total count of `l1` (resp. `l0`) words in the same document.
/// The two lists must be disjoint.
pub fn cross_counts(corpus: &Corpus, l0: &[WordId], l1: &[WordId]) -> [Vec<u128>; 2] {
    let mut slot: HashMap<WordId, (usize, usize)> = HashMap::with_capacity(l0.len() + l1.len());
    for (p, &id) in l0.iter().enumerate() {
        slot.insert(id, (0, p));
    }
    for (p, &id) in l1.iter().enumerate() {
        slot.insert(id, (1, p));
    }
    let zero = || [vec![0u128; l0.len()], vec![0u128; l1.len()]];
    corpus
        .docs()
        .par_iter()
        .fold(zero, |mut acc, doc| {
            let mut hits: Vec<(usize, usize, u64)> = Vec::new();
            let mut mass = [0u128; 2];
            for (id, x) in doc.iter() {
                if let Some(&(side, p)) = slot.get(&id) {
                    hits.push((side, p, x));
                    mass[side] += u128::from(x);
                }
            }
            if mass[0] > 0 && mass[1] > 0 {
                for (side, p, x) in hits {
                    acc[side][p] += u128::from(x) * mass[1 - side];
                }
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            for side in 0..2 {
                for (x, y) in a[side].iter_mut().zip(&b[side]) {
                    *x += y;
                }
            }
            a
        })
}

pub fn cross_label_counts(corpus: &Corpus, pair: &LexiconPair) -> [Vec<u128>; 2] {
    cross_counts(corpus, pair.words(Side::Zero), pair.words(Side::One))
}

/// Observed moments for the estimator. Index 0 holds lexicon 0, index 1
/// lexicon 1; positions follow [`LexiconPair::words`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub c0: Vec<u128>,
    pub c1: Vec<u128>,
    /// `c_i - s mu_i sum_{opp} mu_j`: residual under zero predictiveness.
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub s: u128,
    pub coverage0: f64,
    pub coverage1: f64,
}

impl MomentStats {
    pub fn from_parts(c0: Vec<u128>, c1: Vec<u128>, mu0: Vec<f64>, mu1: Vec<f64>, s: u128) -> Result<Self> {
        if c0.len() != mu0.len() || c1.len() != mu1.len() {
            return Err(Error::InvalidInput("count and baseline vectors differ in length".into()));
        }
        if c0.is_empty() || c1.is_empty() {
            return Err(Error::InvalidInput("moments need two non-empty lexicons".into()));
        }
        if mu0.iter().chain(&mu1).any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidInput("baseline probabilities must be finite and non-negative".into()));
        }
        let coverage0: f64 = mu0.iter().sum();
        let coverage1: f64 = mu1.iter().sum();
        let sf = s as f64;
        let r0 = c0.iter().zip(&mu0).map(|(&c, &m)| c as f64 - sf * m * coverage1).collect();
        let r1 = c1.iter().zip(&mu1).map(|(&c, &m)| c as f64 - sf * m * coverage0).collect();
        Ok(Self {
            c0,
            c1,
            r0,
            r1,
            mu0,
            mu1,
            s,
            coverage0,
            coverage1,
        })
    }

    /// Counts, restricted baselines and residuals for `pair` over `corpus`.
    pub fn compute(corpus: &Corpus, pair: &LexiconPair, stats: &CorpusStats, mu: &[f64]) -> Result<Self> {
        let [c0, c1] = cross_label_counts(corpus, pair);
        let restrict = |side| -> Vec<f64> {
            pair.words(side)
                .iter()
                .map(|&id| mu.get(id as usize).copied().unwrap_or(0.0))
                .collect()
        };
        Self::from_parts(c0, c1, restrict(Side::Zero), restrict(Side::One), stats.pair_weight)
    }

    pub fn counts(&self, side: Side) -> &[u128] {
        match side {
            Side::Zero => &self.c0,
            Side::One => &self.c1,
        }
    }

    pub fn residuals(&self, side: Side) -> &[f64] {
        match side {
            Side::Zero => &self.r0,
            Side::One => &self.r1,
        }
    }

    pub fn mu(&self, side: Side) -> &[f64] {
        match side {
            Side::Zero => &self.mu0,
            Side::One => &self.mu1,
        }
    }

    pub fn coverage(&self, side: Side) -> f64 {
        match side {
            Side::Zero => self.coverage0,
            Side::One => self.coverage1,
        }
    }

    pub fn s_f64(&self) -> f64 {
        self.s as f64
    }

    pub fn len(&self, side: Side) -> usize {
        self.mu(side).len()
    }
}

/// Expected `x_i x_j` for two distinct words in an `n`-token multinomial document.
pub fn expected_pair_product(n: u64, theta_i: f64, theta_j: f64) -> f64 {
    let n = n as f64;
    n * (n - 1.0).max(0.0) * theta_i * theta_j
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn split<'a>(gamma0: &'a [f64], gamma1: &'a [f64], side: Side) -> (&'a [f64], &'a [f64]) {
    match side {
        Side::Zero => (gamma0, gamma1),
        Side::One => (gamma1, gamma0),
    }
}

/// `E[c_i] = s mu_i sum_{j in opp} mu_j (1 - gamma_i gamma_j)` for word
/// `index` of lexicon `side`.
pub fn expected_cross_count(side: Side, index: usize, gamma0: &[f64], gamma1: &[f64], stats: &MomentStats) -> f64 {
    let (own, other) = split(gamma0, gamma1, side);
    let opp = side.other();
    let weighted = dot(stats.mu(opp), other);
    stats.s_f64() * stats.mu(side)[index] * (stats.coverage(opp) - own[index] * weighted)
}

pub fn expected_cross_counts(gamma0: &[f64], gamma1: &[f64], stats: &MomentStats) -> [Vec<f64>; 2] {
    Side::BOTH.map(|side| {
        (0..stats.len(side))
            .map(|i| expected_cross_count(side, i, gamma0, gamma1, stats))
            .collect()
    })
}

/// Half the summed squared moment mismatch over both lexicons.
pub fn objective(gamma0: &[f64], gamma1: &[f64], stats: &MomentStats) -> f64 {
    let expected = expected_cross_counts(gamma0, gamma1, stats);
    Side::BOTH
        .iter()
        .map(|&side| {
            stats
                .counts(side)
                .iter()
                .zip(&expected[side.index()])
                .map(|(&c, e)| {
                    let d = c as f64 - e;
                    0.5 * d * d
                })
                .sum::<f64>()
        })
        .sum()
}
