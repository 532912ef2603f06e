//! Expected-accuracy theory, effective counts, and synthetic corpora drawn
//! from the two-label generative model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::corpus::{Corpus, CountVector, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::lexicon::{validate_pair, LexiconPair, Side};
use crate::model::dcm_contribution;

/// Mean and variance bound of the count margin `m_y - m_{not y}` for a
/// document of `n` tokens, and the resulting normal z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginMoments {
    pub mean: f64,
    pub variance_bound: f64,
    pub z_lower: f64,
}

fn check_margin_args(gamma: f64, n: f64, coverage: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside [0, 1)")));
    }
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::InvalidInput(format!("document length {n} must be non-negative")));
    }
    if !(coverage > 0.0 && coverage <= 0.5) {
        return Err(Error::InvalidInput(format!("coverage {coverage} outside (0, 0.5]")));
    }
    Ok(())
}

pub fn margin_moments(gamma: f64, n: f64, coverage: f64) -> Result<MarginMoments> {
    check_margin_args(gamma, n, coverage)?;
    let variance_bound = 2.0 * n * coverage;
    Ok(MarginMoments {
        mean: 2.0 * n * gamma * coverage,
        variance_bound,
        z_lower: gamma * variance_bound.sqrt(),
    })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Phi(gamma sqrt(2 N s_mu))`: a lower bound on the expected accuracy of
/// the counting rule under a shared predictiveness.
pub fn expected_accuracy_lower_bound(gamma: f64, n: f64, coverage: f64) -> Result<f64> {
    Ok(normal_cdf(margin_moments(gamma, n, coverage)?.z_lower))
}

/// DCM-rule contribution of `x` occurrences relative to one occurrence.
pub fn effective_count(x: u64, tau: f64, mu: f64, gamma: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("concentration {tau} must be positive")));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidInput(format!("baseline {mu} outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside [0, 1)")));
    }
    if gamma == 0.0 {
        return Err(Error::UninformativeWord);
    }
    Ok(dcm_contribution(x, tau, mu, gamma) / dcm_contribution(1, tau, mu, gamma))
}

/// Rescales the side with the larger mass `mu . gamma` so both match.
pub fn project_feasible(mu: &[f64], pair: &LexiconPair, gamma: [Vec<f64>; 2]) -> Result<[Vec<f64>; 2]> {
    let mut gamma = gamma;
    for side in Side::BOTH {
        if gamma[side.index()].len() != pair.len(side) {
            return Err(Error::InvalidInput(format!("{side}: wrong number of gammas")));
        }
        if let Some(g) = gamma[side.index()].iter().find(|g| !(0.0..1.0).contains(*g)) {
            return Err(Error::InvalidInput(format!("gamma {g} outside [0, 1)")));
        }
    }
    let mass = Side::BOTH.map(|side| {
        pair.words(side)
            .iter()
            .zip(&gamma[side.index()])
            .map(|(&id, g)| mu[id as usize] * g)
            .sum::<f64>()
    });
    let big = if mass[0] > mass[1] { 0 } else { 1 };
    if mass[big] > 0.0 {
        let f = mass[1 - big] / mass[big];
        gamma[big].iter_mut().for_each(|g| *g *= f);
    }
    let check = Side::BOTH.map(|side| {
        pair.words(side)
            .iter()
            .zip(&gamma[side.index()])
            .map(|(&id, g)| mu[id as usize] * g)
            .sum::<f64>()
    });
    if (check[0] - check[1]).abs() > 1e-12 * check[0].max(check[1]).max(1e-300) {
        return Err(Error::InvalidInput("predictiveness could not be made feasible".into()));
    }
    Ok(gamma)
}

/// Class-conditional word distributions: lexicon words scaled by
/// `1 + gamma` on their own label and `1 - gamma` on the other.
pub fn class_distributions(mu: &[f64], pair: &LexiconPair, gamma: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
    let mut theta = [mu.to_vec(), mu.to_vec()];
    for side in Side::BOTH {
        for (&id, g) in pair.words(side).iter().zip(&gamma[side.index()]) {
            let i = id as usize;
            theta[side.index()][i] = mu[i] * (1.0 + g);
            theta[side.other().index()][i] = mu[i] * (1.0 - g);
        }
    }
    theta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthSpec {
    Fixed { n: u64 },
    Poisson { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSpec {
    /// One shared predictiveness.
    Uniform { value: f64 },
    /// Independent `U(lo, hi)` per lexicon word.
    PerWord { lo: f64, hi: f64 },
}

fn default_jitter() -> f64 {
    0.5
}
fn default_prior() -> f64 {
    0.5
}

/// Recipe for a synthetic labeled corpus. Words are named `w0, w1, ...`;
/// lexicon 0 takes the first `lexicon_sizes[0]` ids and lexicon 1 the next
/// `lexicon_sizes[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub lexicon_sizes: [usize; 2],
    pub documents: usize,
    pub length: LengthSpec,
    pub gamma: GammaSpec,
    /// Baselines are drawn `U(1 - jitter, 1 + jitter)` and normalized.
    #[serde(default = "default_jitter")]
    pub mu_jitter: f64,
    /// If set, each lexicon's baseline mass is rescaled to this value.
    #[serde(default)]
    pub lexicon_coverage: Option<f64>,
    /// `P(Y = 1)`.
    #[serde(default = "default_prior")]
    pub prior: f64,
    /// Draw documents from the DCM with this concentration.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.lexicon_sizes;
        if a == 0 || b == 0 {
            return Err(Error::InvalidInput("lexicon sizes must be positive".into()));
        }
        if a + b >= self.vocab_size {
            return Err(Error::InvalidInput("lexicons must leave some neutral vocabulary".into()));
        }
        if !(0.0..1.0).contains(&self.mu_jitter) {
            return Err(Error::InvalidInput("mu_jitter must lie in [0, 1)".into()));
        }
        if let Some(c) = self.lexicon_coverage {
            if !(c > 0.0 && c < 0.5) {
                return Err(Error::InvalidInput(format!("lexicon coverage {c} outside (0, 0.5)")));
            }
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::InvalidInput(format!("prior {} outside [0, 1]", self.prior)));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidInput(format!("concentration {t} must be positive")));
            }
        }
        match self.gamma {
            GammaSpec::Uniform { value } if !(0.0..1.0).contains(&value) => {
                return Err(Error::InvalidInput(format!("gamma {value} outside [0, 1)")));
            }
            GammaSpec::PerWord { lo, hi } if !(0.0 <= lo && lo <= hi && hi < 1.0) => {
                return Err(Error::InvalidInput(format!("gamma range [{lo}, {hi}] invalid")));
            }
            _ => {}
        }
        match self.length {
            LengthSpec::Poisson { mean } if !(mean > 0.0 && mean.is_finite()) => {
                Err(Error::InvalidInput(format!("mean length {mean} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// A generated corpus together with its true parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub pair: LexiconPair,
    pub mu: Vec<f64>,
    /// Feasible per-word predictiveness actually used, aligned with `pair`.
    pub gamma: [Vec<f64>; 2],
}

pub fn synth_vocabulary(size: usize) -> Vocabulary {
    Vocabulary::from_words((0..size).map(|i| format!("w{i}"))).expect("distinct names")
}

/// Draws baselines, lexicons and predictiveness from `spec`, then the corpus.
pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.vocab_size;
    let [n0, n1] = spec.lexicon_sizes;

    let j = spec.mu_jitter;
    let mut mu: Vec<f64> = (0..v).map(|_| rng.random_range(1.0 - j..=1.0 + j)).collect();
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= total);
    let ranges = [0..n0, n0..n0 + n1];
    if let Some(c) = spec.lexicon_coverage {
        for r in ranges.clone() {
            let mass: f64 = mu[r.clone()].iter().sum();
            mu[r].iter_mut().for_each(|m| *m *= c / mass);
        }
        let neutral = n0 + n1..v;
        let mass: f64 = mu[neutral.clone()].iter().sum();
        let target = 1.0 - 2.0 * c;
        mu[neutral].iter_mut().for_each(|m| *m *= target / mass);
    }

    let (pair, _) = validate_pair(
        ranges[0].clone().map(|i| i as WordId),
        ranges[1].clone().map(|i| i as WordId),
        ["lex0", "lex1"],
    )?;
    let gamma = match spec.gamma {
        GammaSpec::Uniform { value } => [vec![value; n0], vec![value; n1]],
        GammaSpec::PerWord { lo, hi } => {
            let mut draw = |n| (0..n).map(|_| rng.random_range(lo..=hi)).collect::<Vec<f64>>();
            let g0 = draw(n0);
            [g0, draw(n1)]
        }
    };
    let gamma = project_feasible(&mu, &pair, gamma)?;
    let vocab = synth_vocabulary(v);
    let seed = rng.random::<u64>();
    let corpus = match spec.tau {
        None => gen_multinomial_corpus(vocab, &mu, &pair, &gamma, &spec.length, spec.documents, spec.prior, seed)?,
        Some(tau) => gen_dcm_corpus(vocab, &mu, &pair, &gamma, tau, &spec.length, spec.documents, spec.prior, seed)?,
    };
    Ok(Synthetic {
        corpus,
        pair,
        mu,
        gamma,
    })
}

/// Per-document generator: label, length, then counts.
fn draw_corpus<F>(
    vocab: Vocabulary,
    length: &LengthSpec,
    documents: usize,
    prior: f64,
    seed: u64,
    draw_doc: F,
) -> Result<Corpus>
where
    F: Fn(&mut ChaCha8Rng, usize, u64) -> CountVector + Sync,
{
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::InvalidInput(format!("prior {prior} outside [0, 1]")));
    }
    let poisson = match *length {
        LengthSpec::Poisson { mean } => Some(
            Poisson::new(mean).map_err(|e| Error::InvalidInput(format!("length distribution: {e}")))?,
        ),
        LengthSpec::Fixed { .. } => None,
    };
    // One ChaCha stream per document keeps output independent of threading.
    let (docs, labels): (Vec<CountVector>, Vec<u8>) = (0..documents)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let y = u8::from(rng.random_bool(prior));
            let n = match (length, &poisson) {
                (LengthSpec::Fixed { n }, _) => *n,
                (_, Some(p)) => p.sample(&mut rng) as u64,
                _ => unreachable!(),
            };
            (draw_doc(&mut rng, y as usize, n), y)
        })
        .unzip();
    Corpus::from_docs(vocab, docs, Some(labels))
}

fn alias(weights: &[f64]) -> Result<WeightedAliasIndex<f64>> {
    WeightedAliasIndex::new(weights.to_vec()).map_err(|e| Error::InvalidInput(format!("word distribution: {e}")))
}

fn check_generator_inputs(vocab: &Vocabulary, mu: &[f64], pair: &LexiconPair, gamma: &[Vec<f64>; 2]) -> Result<()> {
    if mu.len() != vocab.len() {
        return Err(Error::InvalidInput("baseline and vocabulary sizes differ".into()));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("baselines sum to {total}, not 1")));
    }
    let mass = Side::BOTH.map(|side| {
        pair.words(side)
            .iter()
            .zip(&gamma[side.index()])
            .map(|(&id, g)| mu[id as usize] * g)
            .sum::<f64>()
    });
    if (mass[0] - mass[1]).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "predictiveness infeasible: lexicon masses {} and {} differ",
            mass[0], mass[1]
        )));
    }
    Ok(())
}

/// Labeled documents with counts drawn from the class distribution.
#[allow(clippy::too_many_arguments)]
pub fn gen_multinomial_corpus(
    vocab: Vocabulary,
    mu: &[f64],
    pair: &LexiconPair,
    gamma: &[Vec<f64>; 2],
    length: &LengthSpec,
    documents: usize,
    prior: f64,
    seed: u64,
) -> Result<Corpus> {
    check_generator_inputs(&vocab, mu, pair, gamma)?;
    let theta = class_distributions(mu, pair, gamma);
    let dists = [alias(&theta[0])?, alias(&theta[1])?];
    draw_corpus(vocab, length, documents, prior, seed, |rng, y, n| {
        CountVector::from_ids((0..n).map(|_| dists[y].sample(rng) as WordId))
    })
}

/// Labeled documents whose word distribution is first drawn from a
/// Dirichlet with parameters `tau * theta_y`.
#[allow(clippy::too_many_arguments)]
pub fn gen_dcm_corpus(
    vocab: Vocabulary,
    mu: &[f64],
    pair: &LexiconPair,
    gamma: &[Vec<f64>; 2],
    tau: f64,
    length: &LengthSpec,
    documents: usize,
    prior: f64,
    seed: u64,
) -> Result<Corpus> {
    check_generator_inputs(&vocab, mu, pair, gamma)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("concentration {tau} must be positive")));
    }
    let theta = class_distributions(mu, pair, gamma);
    let gammas: [Vec<Gamma<f64>>; 2] = [0, 1].map(|y| {
        theta[y]
            .iter()
            .map(|&t| Gamma::new((tau * t).max(f64::MIN_POSITIVE), 1.0).expect("positive shape"))
            .collect()
    });
    let fallback = [alias(&theta[0])?, alias(&theta[1])?];
    draw_corpus(vocab, length, documents, prior, seed, |rng, y, n| {
        let nu: Vec<f64> = gammas[y].iter().map(|g| g.sample(rng)).collect();
        match alias(&nu) {
            Ok(d) => CountVector::from_ids((0..n).map(|_| d.sample(rng) as WordId)),
            // every gamma draw underflowed; only possible for tiny tau
            Err(_) => CountVector::from_ids((0..n).map(|_| fallback[y].sample(rng) as WordId)),
        }
    })
}
