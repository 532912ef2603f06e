//! Fitted parameters and the classification rules.
//!
//! Every score is oriented toward label 1: positive means predict 1.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Corpus, CountVector, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::lexicon::{validate_pair, LexiconPair, Side};

/// Real-valued margin; positive favours label 1.
pub type Score = f64;

/// 1 if `score > 0`, else 0. Ties go to label 0.
pub fn decide(score: Score) -> Result<u8> {
    if score.is_nan() {
        return Err(Error::NonFinite("score"));
    }
    Ok(u8::from(score > 0.0))
}

/// Lexicon-1 tokens minus lexicon-0 tokens.
pub fn margin_count(x: &CountVector, pair: &LexiconPair) -> Score {
    let mut m = 0i64;
    for (id, c) in x.iter() {
        match pair.lookup(id) {
            Some((Side::One, _)) => m += c as i64,
            Some((Side::Zero, _)) => m -= c as i64,
            None => {}
        }
    }
    m as f64
}

/// Like [`margin_count`] but each word type counts once.
pub fn margin_presence(x: &CountVector, pair: &LexiconPair) -> Score {
    let mut m = 0i64;
    for (id, _) in x.iter() {
        match pair.lookup(id) {
            Some((Side::One, _)) => m += 1,
            Some((Side::Zero, _)) => m -= 1,
            None => {}
        }
    }
    m as f64
}

/// Per-word predictiveness model over a lexicon pair. Vectors are aligned
/// with [`LexiconPair::words`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictivenessModel {
    pair: LexiconPair,
    mu: [Vec<f64>; 2],
    gamma: [Vec<f64>; 2],
    tau: Option<f64>,
    global_gamma: Option<f64>,
    prior_logodds: f64,
}

fn check_gamma(g: f64) -> Result<()> {
    if !(0.0..1.0).contains(&g) {
        return Err(Error::InvalidInput(format!("gamma {g} outside [0, 1)")));
    }
    Ok(())
}

impl PredictivenessModel {
    pub fn new(pair: LexiconPair, mu: [Vec<f64>; 2], gamma: [Vec<f64>; 2]) -> Result<Self> {
        for side in Side::BOTH {
            let i = side.index();
            let n = pair.len(side);
            if mu[i].len() != n || gamma[i].len() != n {
                return Err(Error::InvalidInput(format!(
                    "{side}: {n} words but {} baselines and {} gammas",
                    mu[i].len(),
                    gamma[i].len()
                )));
            }
            if let Some(m) = mu[i].iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                return Err(Error::InvalidInput(format!("{side}: baseline {m} must be positive")));
            }
            for &g in &gamma[i] {
                check_gamma(g)?;
            }
        }
        Ok(Self {
            pair,
            mu,
            gamma,
            tau: None,
            global_gamma: None,
            prior_logodds: 0.0,
        })
    }

    /// Every lexicon word gets the same predictiveness.
    pub fn uniform(pair: LexiconPair, mu: [Vec<f64>; 2], gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let g = [vec![gamma; pair.len(Side::Zero)], vec![gamma; pair.len(Side::One)]];
        let mut model = Self::new(pair, mu, g)?;
        model.global_gamma = Some(gamma);
        Ok(model)
    }

    /// Looks up baselines for the pair's words in a vocabulary-wide vector.
    pub fn restrict_mu(pair: &LexiconPair, mu: &[f64]) -> [Vec<f64>; 2] {
        Side::BOTH.map(|side| {
            pair.words(side)
                .iter()
                .map(|&id| mu.get(id as usize).copied().unwrap_or(0.0))
                .collect()
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("concentration {tau} must be positive")));
        }
        self.tau = Some(tau);
        Ok(self)
    }

    pub fn with_prior_logodds(mut self, prior: f64) -> Result<Self> {
        if !prior.is_finite() {
            return Err(Error::NonFinite("prior log-odds"));
        }
        self.prior_logodds = prior;
        Ok(self)
    }

    pub fn pair(&self) -> &LexiconPair {
        &self.pair
    }

    pub fn mu(&self, side: Side) -> &[f64] {
        &self.mu[side.index()]
    }

    pub fn gamma(&self, side: Side) -> &[f64] {
        &self.gamma[side.index()]
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn global_gamma(&self) -> Option<f64> {
        self.global_gamma
    }

    pub fn prior_logodds(&self) -> f64 {
        self.prior_logodds
    }

    fn word(&self, id: WordId) -> Option<(Side, f64, f64)> {
        self.pair
            .lookup(id)
            .map(|(side, p)| (side, self.mu[side.index()][p], self.gamma[side.index()][p]))
    }
}

fn sign(side: Side) -> f64 {
    match side {
        Side::Zero => -1.0,
        Side::One => 1.0,
    }
}

/// Multinomial naive Bayes rule with per-word predictiveness.
///
/// Signed counts are netted per distinct gamma before weighting, so with a
/// single shared gamma the score is exactly the log ratio times the count
/// margin and a zero margin scores exactly zero.
pub fn score_mult(x: &CountVector, model: &PredictivenessModel) -> Score {
    let mut terms: Vec<(u64, i64)> = x
        .iter()
        .filter_map(|(id, c)| {
            model
                .word(id)
                .map(|(side, _, g)| (g.to_bits(), sign(side) as i64 * c as i64))
        })
        .collect();
    terms.sort_unstable_by_key(|t| t.0);
    let mut s = model.prior_logodds;
    let mut i = 0;
    while i < terms.len() {
        let bits = terms[i].0;
        let mut n = 0i64;
        while i < terms.len() && terms[i].0 == bits {
            n += terms[i].1;
            i += 1;
        }
        let g = f64::from_bits(bits);
        s += n as f64 * ((1.0 + g) / (1.0 - g)).ln();
    }
    s
}

/// `ln Gamma(x + alpha) - ln Gamma(alpha)`.
pub fn ln_rising(x: u64, alpha: f64) -> f64 {
    // The explicit sum keeps full precision when alpha is large and x small.
    if x <= 64 {
        (0..x).map(|k| (alpha + k as f64).ln()).sum()
    } else {
        ln_gamma(x as f64 + alpha) - ln_gamma(alpha)
    }
}

/// Contribution of `x` occurrences of one lexicon word to the DCM rule,
/// before the lexicon's sign: `ln r_in(x) - ln r_out(x)`.
pub fn dcm_contribution(x: u64, tau: f64, mu: f64, gamma: f64) -> f64 {
    ln_rising(x, tau * (1.0 + gamma) * mu) - ln_rising(x, tau * (1.0 - gamma) * mu)
}

/// Dirichlet-compound multinomial rule; requires a concentration.
pub fn score_dcm(x: &CountVector, model: &PredictivenessModel) -> Result<Score> {
    let tau = model
        .tau
        .ok_or_else(|| Error::InvalidInput("DCM rule needs a concentration tau".into()))?;
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("concentration {tau} must be positive")));
    }
    let mut s = model.prior_logodds;
    for (id, c) in x.iter() {
        if let Some((side, mu, g)) = model.word(id) {
            s += sign(side) * dcm_contribution(c, tau, mu, g);
        }
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("DCM score"));
    }
    Ok(s)
}

pub const TAU_MIN: f64 = 1.0;
pub const TAU_MAX: f64 = 1e9;

/// Below this many documents with two or more out-of-lexicon tokens the
/// estimate is flagged as low confidence.
pub const TAU_MIN_DOCUMENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    pub tau: f64,
    pub log_likelihood: f64,
    /// Documents carrying information about tau.
    pub informative_documents: usize,
    pub low_confidence: bool,
    /// The maximizer sits on an end of the search interval.
    pub at_bound: bool,
}

/// Maximum-likelihood concentration from out-of-lexicon words only.
///
/// Restricted to those words, each document is DCM with parameters
/// `tau * mu_w`, that is `mu` renormalized over the out-of-lexicon words with
/// total concentration `tau * S`, `S` being their baseline mass. The search
/// is golden-section on `ln tau` over `[ln 1, ln 1e9]`.
pub fn estimate_concentration(corpus: &Corpus, pair: &LexiconPair, mu: &[f64]) -> Result<ConcentrationEstimate> {
    let mass: f64 = (0..mu.len() as WordId)
        .filter(|id| !pair.contains(*id))
        .map(|id| mu[id as usize])
        .sum();
    if !(mass > 0.0) {
        return Err(Error::TauUnidentifiable("no out-of-lexicon mass".into()));
    }
    // Out-of-lexicon subvectors of documents with at least two such tokens.
    let docs: Vec<(u64, Vec<(f64, u64)>)> = corpus
        .docs()
        .iter()
        .filter_map(|d| {
            let words: Vec<(f64, u64)> = d
                .iter()
                .filter(|(id, _)| !pair.contains(*id))
                .map(|(id, c)| (mu.get(id as usize).copied().unwrap_or(0.0), c))
                .collect();
            let n: u64 = words.iter().map(|w| w.1).sum();
            (n >= 2).then_some((n, words))
        })
        .collect();
    if docs.is_empty() {
        return Err(Error::TauUnidentifiable(
            "no document has two or more out-of-lexicon tokens".into(),
        ));
    }
    if docs.iter().flat_map(|d| &d.1).any(|(m, _)| !(*m > 0.0)) {
        return Err(Error::InvalidInput("baseline is zero for an observed word".into()));
    }

    let loglik = |log_tau: f64| -> f64 {
        let tau = log_tau.exp();
        let total = tau * mass;
        // Summed sequentially so the result does not depend on threading.
        let terms: Vec<f64> = docs
            .par_iter()
            .map(|(n, words)| {
                let mut l = -ln_rising(*n, total);
                for &(m, c) in words {
                    l += ln_rising(c, tau * m);
                }
                l
            })
            .collect();
        terms.iter().sum()
    };

    let (lo, hi) = (TAU_MIN.ln(), TAU_MAX.ln());
    let log_tau = golden_max(&loglik, lo, hi, 1e-6);
    let tol = 1e-3;
    Ok(ConcentrationEstimate {
        tau: log_tau.exp(),
        log_likelihood: loglik(log_tau),
        informative_documents: docs.len(),
        low_confidence: docs.len() < TAU_MIN_DOCUMENTS,
        at_bound: log_tau - lo < tol || hi - log_tau < tol,
    })
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
/// Endpoints are compared too, so a monotone `f` returns the better end.
fn golden_max(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let (a0, b0) = (a, b);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    [(a0, f(a0)), (b0, f(b0))]
        .into_iter()
        .fold((mid, fm), |best, c| if c.1 > best.1 { c } else { best })
        .0
}

/// Smoothing constant added to every PMI count.
pub const PMI_SMOOTHING: f64 = 0.5;

/// Word scores from pointwise mutual information with labels imputed by
/// the counting rule. Indexed by word id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiTable {
    pub scores: Vec<f64>,
}

pub fn pmi_fit(corpus: &Corpus, pair: &LexiconPair) -> Result<PmiTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("PMI needs a non-empty corpus".into()));
    }
    let v = corpus.vocab().len();
    let mut counts = [vec![0u64; v], vec![0u64; v]];
    let mut tokens = [0u64; 2];
    let mut decided = false;
    for doc in corpus.docs() {
        let m = margin_count(doc, pair);
        decided |= m != 0.0;
        let y = decide(m)? as usize;
        for (id, c) in doc.iter() {
            counts[y][id as usize] += c;
            tokens[y] += c;
        }
    }
    if !decided {
        return Err(Error::NoImputedLabels);
    }
    let k = PMI_SMOOTHING;
    let (t0, t1) = (tokens[0] as f64 + k, tokens[1] as f64 + k);
    let scores = (0..v)
        .map(|w| ((counts[1][w] as f64 + k) * t0 / ((counts[0][w] as f64 + k) * t1)).ln())
        .collect();
    Ok(PmiTable { scores })
}

pub fn pmi_score(x: &CountVector, table: &PmiTable) -> Score {
    x.iter()
        .map(|(id, c)| c as f64 * table.scores.get(id as usize).copied().unwrap_or(0.0))
        .sum()
}

/// Solver diagnostics kept with a fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective: f64,
    pub constraint_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// FNV-1a hash of the corpus counts, hex.
    #[serde(default)]
    pub corpus_fingerprint: String,
    #[serde(default)]
    pub documents: usize,
    #[serde(default)]
    pub total_tokens: u64,
    #[serde(default)]
    pub lexicon_names: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<FitDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationEstimate>,
}

/// On-disk model, keyed by word strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub mu: BTreeMap<String, f64>,
    pub gamma0: BTreeMap<String, f64>,
    pub gamma1: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default)]
    pub prior_logodds: f64,
    pub lexicons: [Vec<String>; 2],
    #[serde(default)]
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn from_model(model: &PredictivenessModel, vocab: &Vocabulary, mut meta: ModelMeta) -> Result<Self> {
        let word = |id: WordId| {
            vocab
                .word(id)
                .map(str::to_owned)
                .ok_or_else(|| Error::InvalidInput(format!("word id {id} not in vocabulary")))
        };
        let mut mu = BTreeMap::new();
        let mut gammas = [BTreeMap::new(), BTreeMap::new()];
        let mut lexicons = [Vec::new(), Vec::new()];
        for side in Side::BOTH {
            for (p, &id) in model.pair.words(side).iter().enumerate() {
                let w = word(id)?;
                mu.insert(w.clone(), model.mu(side)[p]);
                gammas[side.index()].insert(w.clone(), model.gamma(side)[p]);
                lexicons[side.index()].push(w);
            }
            meta.lexicon_names[side.index()] = model.pair.name(side).to_owned();
        }
        meta.global_gamma = model.global_gamma;
        let [gamma0, gamma1] = gammas;
        Ok(Self {
            mu,
            gamma0,
            gamma1,
            tau: model.tau,
            prior_logodds: model.prior_logodds,
            lexicons,
            meta,
        })
    }

    /// Every lexicon word must be in `vocab`; see [`Corpus::extend_vocab`].
    pub fn to_model(&self, vocab: &Vocabulary) -> Result<PredictivenessModel> {
        let id = |w: &str| {
            vocab
                .id(w)
                .ok_or_else(|| Error::InvalidInput(format!("model word {w:?} not in vocabulary")))
        };
        let ids: [Vec<WordId>; 2] = [
            self.lexicons[0].iter().map(|w| id(w)).collect::<Result<_>>()?,
            self.lexicons[1].iter().map(|w| id(w)).collect::<Result<_>>()?,
        ];
        let names = [0, 1].map(|i| {
            let n = &self.meta.lexicon_names[i];
            if n.is_empty() {
                format!("lexicon{i}")
            } else {
                n.clone()
            }
        });
        let (pair, overlap) = validate_pair(ids[0].clone(), ids[1].clone(), [&names[0], &names[1]])?;
        if !overlap.is_empty() {
            return Err(Error::InvalidInput("model lexicons overlap".into()));
        }
        let lookup = |map: &BTreeMap<String, f64>, w: &str, what: &str| {
            map.get(w)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("model has no {what} for {w:?}")))
        };
        let mut mu = [Vec::new(), Vec::new()];
        let mut gamma = [Vec::new(), Vec::new()];
        for side in Side::BOTH {
            let gmap = match side {
                Side::Zero => &self.gamma0,
                Side::One => &self.gamma1,
            };
            for &wid in pair.words(side) {
                let w = vocab.word(wid).unwrap_or_default();
                mu[side.index()].push(lookup(&self.mu, w, "mu")?);
                gamma[side.index()].push(lookup(gmap, w, "gamma")?);
            }
        }
        let mut model = PredictivenessModel::new(pair, mu, gamma)?.with_prior_logodds(self.prior_logodds)?;
        model.global_gamma = self.meta.global_gamma;
        if let Some(t) = self.tau {
            model = model.with_tau(t)?;
        }
        Ok(model)
    }

    pub fn all_words(&self) -> impl Iterator<Item = &str> {
        self.lexicons.iter().flatten().map(String::as_str)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        crate::harness::write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// FNV-1a over every (id, count) pair and document boundary.
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for doc in corpus.docs() {
        for (id, c) in doc.iter() {
            feed(u64::from(id));
            feed(c);
        }
        feed(u64::MAX);
    }
    format!("{h:016x}")
}
