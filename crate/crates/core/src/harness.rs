//! Evaluation, end-to-end orchestration and artifact output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{baseline_from_stats, corpus_stats, read_corpus, Corpus, CorpusFormat, CorpusStats, IngestOptions};
use crate::error::{Error, Result};
use crate::lexicon::{load_lexicon, prune_lexicons, validate_pair, LexiconPair, PruneReport, Side};
use crate::model::{
    corpus_fingerprint, decide, estimate_concentration, margin_count, margin_presence, pmi_fit, pmi_score, score_dcm,
    score_mult, ConcentrationEstimate, FitDiagnostics, ModelFile, ModelMeta, PredictivenessModel,
};
use crate::moments::MomentStats;
use crate::solver::{fit, SolverConfig, SolverResult, TraceRow};

/// Environment variable that overrides any configured seed.
pub const SEED_ENV: &str = "PROBLEX_SEED";

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Area under the ROC curve with label 1 as the positive class, from the
/// midrank rank-sum. Tied scores earn half credit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Count,
    Presence,
    Pmi,
    Mult,
    Dcm,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::Count, Rule::Presence, Rule::Pmi, Rule::Mult, Rule::Dcm];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Count => "count",
            Rule::Presence => "presence",
            Rule::Pmi => "pmi",
            Rule::Mult => "mult",
            Rule::Dcm => "dcm",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown rule {s:?} (count, presence, pmi, mult, dcm)")))
    }
}

/// Scores every document under `rule`. The PMI table is fitted on `corpus`.
pub fn score_documents(corpus: &Corpus, model: &PredictivenessModel, rule: Rule) -> Result<Vec<f64>> {
    let pair = model.pair();
    let docs = corpus.docs();
    let scores: Vec<f64> = match rule {
        Rule::Count => docs.par_iter().map(|x| margin_count(x, pair)).collect(),
        Rule::Presence => docs.par_iter().map(|x| margin_presence(x, pair)).collect(),
        Rule::Mult => docs.par_iter().map(|x| score_mult(x, model)).collect(),
        Rule::Pmi => {
            let table = pmi_fit(corpus, pair)?;
            docs.par_iter().map(|x| pmi_score(x, &table)).collect()
        }
        Rule::Dcm => docs.par_iter().map(|x| score_dcm(x, model)).collect::<Result<_>>()?,
    };
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("document score"));
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

pub fn score_records(corpus: &Corpus, scores: &[f64]) -> Result<Vec<ScoreRecord>> {
    corpus
        .ids()
        .iter()
        .zip(scores)
        .map(|(id, &score)| {
            Ok(ScoreRecord {
                id: id.clone(),
                score,
                label: decide(score)?,
            })
        })
        .collect()
}

pub fn records_to_jsonl(records: &[ScoreRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rule: Rule,
    pub auc: f64,
    pub accuracy: f64,
    /// Documents scored exactly zero (decided as label 0).
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub min_tokens: u64,
    pub max_tokens: u64,
    pub documents: usize,
    /// Accuracy per rule, in the report's rule order.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub positives: usize,
    pub negatives: usize,
    pub rules: Vec<RuleReport>,
    pub length_bins: Vec<LengthBin>,
}

impl EvalReport {
    pub fn auc(&self, rule: Rule) -> Option<f64> {
        self.rules.iter().find(|r| r.rule == rule).map(|r| r.auc)
    }
}

pub const LENGTH_BINS: usize = 7;

/// Splits document indices, sorted by length, into `bins` groups whose
/// sizes differ by at most one. Empty groups are dropped.
pub fn length_bins(lengths: &[u64], bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let n = order.len();
    (0..bins)
        .map(|b| order[b * n / bins..(b + 1) * n / bins].to_vec())
        .filter(|g| !g.is_empty())
        .collect()
}

fn accuracy(idx: impl Iterator<Item = usize>, decisions: &[u8], labels: &[u8]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in idx {
        hit += usize::from(decisions[i] == labels[i]);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// AUC, accuracy and ties per rule, plus accuracy by length.
pub fn evaluate(corpus: &Corpus, model: &PredictivenessModel, rules: &[Rule]) -> Result<EvalReport> {
    let labels = corpus.labels().ok_or(Error::MissingLabels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let lengths: Vec<u64> = corpus.docs().iter().map(|d| d.total()).collect();
    let groups = length_bins(&lengths, LENGTH_BINS);

    let mut reports = Vec::new();
    let mut decisions = Vec::new();
    for &rule in rules {
        let scores = score_documents(corpus, model, rule)?;
        let d: Vec<u8> = scores.iter().map(|&s| decide(s)).collect::<Result<_>>()?;
        reports.push(RuleReport {
            rule,
            auc: auc(&scores, labels)?,
            accuracy: accuracy(0..labels.len(), &d, labels),
            ties: scores.iter().filter(|&&s| s == 0.0).count(),
        });
        decisions.push(d);
    }
    let length_bins = groups
        .iter()
        .map(|g| LengthBin {
            min_tokens: lengths[g[0]],
            max_tokens: lengths[*g.last().expect("non-empty")],
            documents: g.len(),
            accuracy: decisions
                .iter()
                .map(|d| accuracy(g.iter().copied(), d, labels))
                .collect(),
        })
        .collect();
    Ok(EvalReport {
        documents: labels.len(),
        positives,
        negatives: labels.len() - positives,
        rules: reports,
        length_bins,
    })
}

/// Corpus, pruned lexicons and the statistics needed for fitting.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub pair: LexiconPair,
    pub stats: CorpusStats,
    pub mu: Vec<f64>,
    pub overlap: Vec<String>,
    pub oov: [Vec<String>; 2],
    pub prune: Option<PruneReport>,
}

fn stem(path: &Path, fallback: &str) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .unwrap_or_else(|| fallback.to_owned())
}

/// Loads the two lexicons against the corpus vocabulary and optionally
/// prunes words that co-occur with the opposite lexicon above chance.
pub fn prepare(corpus: Corpus, lexicons: [&Path; 2], prune: bool) -> Result<Prepared> {
    let l0 = load_lexicon(lexicons[0], corpus.vocab()).map_err(|e| e.in_stage("lexicon"))?;
    let l1 = load_lexicon(lexicons[1], corpus.vocab()).map_err(|e| e.in_stage("lexicon"))?;
    let names = [stem(lexicons[0], "lexicon0"), stem(lexicons[1], "lexicon1")];
    let (pair, overlap) =
        validate_pair(l0.ids, l1.ids, [&names[0], &names[1]]).map_err(|e| e.in_stage("lexicon"))?;
    let overlap = overlap
        .iter()
        .map(|&id| corpus.vocab().word(id).unwrap_or_default().to_owned())
        .collect();
    let stats = corpus_stats(&corpus);
    let mu = baseline_from_stats(&stats).map_err(|e| e.in_stage("ingest"))?;
    let (pair, report) = if prune {
        let (p, r) = prune_lexicons(&corpus, &pair, &stats, &mu).map_err(|e| e.in_stage("prune"))?;
        (p, Some(r))
    } else {
        let (p, _) = crate::lexicon::drop_unseen(&pair, &mu).map_err(|e| e.in_stage("prune"))?;
        (p, None)
    };
    Ok(Prepared {
        corpus,
        pair,
        stats,
        mu,
        overlap,
        oov: [l0.oov, l1.oov],
        prune: report,
    })
}

/// A fitted model with what produced it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: PredictivenessModel,
    pub moments: MomentStats,
    pub solver: SolverResult,
    pub concentration: Option<ConcentrationEstimate>,
}

impl Fitted {
    pub fn model_file(&self, prepared: &Prepared) -> Result<ModelFile> {
        let meta = ModelMeta {
            corpus_fingerprint: corpus_fingerprint(&prepared.corpus),
            documents: prepared.stats.documents,
            total_tokens: prepared.stats.total_tokens,
            solver: Some(FitDiagnostics {
                objective: self.solver.objective,
                constraint_residual: self.solver.constraint_residual,
                outer_iterations: self.solver.outer_iterations,
                inner_iterations: self.solver.inner_iterations,
                converged: self.solver.converged,
            }),
            concentration: self.concentration.clone(),
            ..ModelMeta::default()
        };
        ModelFile::from_model(&self.model, prepared.corpus.vocab(), meta)
    }
}

/// Moments, nested ADMM fit and, if asked, the concentration.
pub fn fit_model(prepared: &Prepared, config: &SolverConfig, with_tau: bool, prior_logodds: f64) -> Result<Fitted> {
    let moments = MomentStats::compute(&prepared.corpus, &prepared.pair, &prepared.stats, &prepared.mu)
        .map_err(|e| e.in_stage("moments"))?;
    let solver = fit(&moments, config).map_err(|e| e.in_stage("fit"))?;
    let mu = PredictivenessModel::restrict_mu(&prepared.pair, &prepared.mu);
    let mut model = PredictivenessModel::new(prepared.pair.clone(), mu, [solver.gamma0.clone(), solver.gamma1.clone()])
        .and_then(|m| m.with_prior_logodds(prior_logodds))
        .map_err(|e| e.in_stage("fit"))?;
    let concentration = if with_tau {
        let est = estimate_concentration(&prepared.corpus, &prepared.pair, &prepared.mu).map_err(|e| e.in_stage("tau"))?;
        model = model.with_tau(est.tau).map_err(|e| e.in_stage("tau"))?;
        Some(est)
    } else {
        None
    };
    Ok(Fitted {
        model,
        moments,
        solver,
        concentration,
    })
}

pub fn trace_log(history: &[TraceRow]) -> String {
    let mut out = String::from("# iteration objective primal dual rho\n");
    for row in history {
        out.push_str(&row.log_line());
        out.push('\n');
    }
    out
}

fn default_true() -> bool {
    true
}
fn default_rules() -> Vec<Rule> {
    vec![Rule::Count, Rule::Presence, Rule::Pmi, Rule::Mult, Rule::Dcm]
}

/// Configuration for [`run_pipeline`]. Relative paths are resolved against
/// the directory of the config file by [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
    #[serde(default)]
    pub ingest: IngestOptions,
    pub lexicons: [PathBuf; 2],
    pub output_dir: PathBuf,
    #[serde(default = "default_rules")]
    pub rules: Vec<Rule>,
    #[serde(default = "default_true")]
    pub prune: bool,
    /// Estimate the DCM concentration even when the DCM rule is not requested.
    #[serde(default)]
    pub estimate_tau: bool,
    #[serde(default)]
    pub prior_logodds: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus);
        cfg.lexicons.iter_mut().for_each(resolve);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    /// Applies [`SEED_ENV`] if set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Some(seed) = seed_from_env()? {
            self.seed = seed;
        }
        self.solver.seed = self.seed;
        Ok(())
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSummary {
    pub name: String,
    pub words: usize,
    pub out_of_vocabulary: usize,
    pub pruned_above_chance: usize,
    pub pruned_unseen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub corpus_fingerprint: String,
    pub documents: usize,
    pub vocabulary: usize,
    pub total_tokens: u64,
    pub lexicons: Vec<LexiconSummary>,
    /// Words listed in both lexicons, removed from both.
    pub overlap: Vec<String>,
    pub solver: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationEstimate>,
    /// Present when the corpus has gold labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RuleScore<'a> {
    id: &'a str,
    rule: Rule,
    score: f64,
    label: u8,
}

/// Ingest, prune, moments, fit, optional concentration, classify and
/// evaluate, writing `model.json`, `scores.jsonl`, `report.json` and
/// `trace.log` into the output directory. A fit that stops without
/// converging still writes every artifact; check `report.solver.converged`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    if config.rules.is_empty() {
        return Err(Error::InvalidInput("no rules requested".into()).in_stage("config"));
    }
    config.solver.validate().map_err(|e| e.in_stage("config"))?;
    let corpus = read_corpus(&config.corpus, config.format, &config.ingest).map_err(|e| e.in_stage("ingest"))?;
    let prepared = prepare(corpus, [&config.lexicons[0], &config.lexicons[1]], config.prune)?;
    let with_tau = config.estimate_tau || config.rules.contains(&Rule::Dcm);
    let fitted = fit_model(&prepared, &config.solver, with_tau, config.prior_logodds)?;

    let corpus = &prepared.corpus;
    let mut scores_out = Vec::new();
    for &rule in &config.rules {
        let scores = score_documents(corpus, &fitted.model, rule).map_err(|e| e.in_stage("classify"))?;
        for (id, &score) in corpus.ids().iter().zip(&scores) {
            let rec = RuleScore {
                id,
                rule,
                score,
                label: decide(score).map_err(|e| e.in_stage("classify"))?,
            };
            serde_json::to_writer(&mut scores_out, &rec)?;
            scores_out.push(b'\n');
        }
    }
    let evaluation = match corpus.labels() {
        Some(_) => Some(evaluate(corpus, &fitted.model, &config.rules).map_err(|e| e.in_stage("evaluate"))?),
        None => None,
    };

    let lexicons = Side::BOTH
        .iter()
        .map(|&side| {
            let i = side.index();
            LexiconSummary {
                name: prepared.pair.name(side).to_owned(),
                words: prepared.pair.len(side),
                out_of_vocabulary: prepared.oov[i].len(),
                pruned_above_chance: prepared.prune.as_ref().map_or(0, |r| r.above_chance[i].len()),
                pruned_unseen: prepared.prune.as_ref().map_or(0, |r| r.unseen[i].len()),
            }
        })
        .collect();
    let model_file = fitted.model_file(&prepared).map_err(|e| e.in_stage("output"))?;
    let report = PipelineReport {
        seed: config.seed,
        corpus_fingerprint: model_file.meta.corpus_fingerprint.clone(),
        documents: prepared.stats.documents,
        vocabulary: corpus.vocab().len(),
        total_tokens: prepared.stats.total_tokens,
        lexicons,
        overlap: prepared.overlap.clone(),
        solver: model_file.meta.solver.clone().unwrap_or_default(),
        concentration: fitted.concentration.clone(),
        evaluation,
    };

    let dir = &config.output_dir;
    let write = || -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model_file.write(&dir.join("model.json"))?;
        write_atomic(&dir.join("scores.jsonl"), &scores_out)?;
        write_json(&dir.join("report.json"), &report)?;
        write_atomic(&dir.join("trace.log"), trace_log(&fitted.solver.history).as_bytes())
    };
    write().map_err(|e| e.in_stage("output"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{generate, GammaSpec, LengthSpec, SynthSpec};
    use proptest::prelude::*;

    /// Pairwise definition: full credit for a win, half for a tie.
    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.7, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.4, 0.7, 0.1], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.2; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        assert!(auc(&[0.1], &[1, 0]).is_err());
        assert!(auc(&[f64::NAN, 0.0], &[1, 0]).is_err());
    }

    #[test]
    fn rule_names_round_trip() {
        for r in Rule::ALL {
            assert_eq!(r.name().parse::<Rule>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
        }
        assert!("bogus".parse::<Rule>().is_err());
    }

    #[test]
    fn length_bins_partition() {
        let lengths: Vec<u64> = (0..23).map(|i| (i * 7 % 11) as u64).collect();
        let bins = length_bins(&lengths, 7);
        assert_eq!(bins.len(), 7);
        let mut all: Vec<usize> = bins.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for w in bins.windows(2) {
            assert!(lengths[*w[0].last().unwrap()] <= lengths[w[1][0]]);
        }
        assert_eq!(length_bins(&[5, 6], 7).len(), 2);
    }

    fn small_synth(gamma: GammaSpec) -> crate::analysis::Synthetic {
        generate(&SynthSpec {
            vocab_size: 300,
            lexicon_sizes: [15, 15],
            documents: 1500,
            length: LengthSpec::Fixed { n: 80 },
            gamma,
            mu_jitter: 0.5,
            lexicon_coverage: None,
            prior: 0.5,
            tau: None,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn evaluate_reports_every_rule() {
        let syn = small_synth(GammaSpec::PerWord { lo: 0.1, hi: 0.9 });
        let mu = PredictivenessModel::restrict_mu(&syn.pair, &syn.mu);
        let model = PredictivenessModel::new(syn.pair.clone(), mu, syn.gamma.clone())
            .unwrap()
            .with_tau(1000.0)
            .unwrap();
        let report = evaluate(&syn.corpus, &model, &Rule::ALL).unwrap();
        assert_eq!(report.rules.len(), 5);
        assert_eq!(report.documents, 1500);
        assert_eq!(report.positives + report.negatives, 1500);
        assert_eq!(report.length_bins.iter().map(|b| b.documents).sum::<usize>(), 1500);
        for r in &report.rules {
            assert!((0.0..=1.0).contains(&r.auc));
            assert!(r.auc > 0.6, "{r:?}");
        }
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), report);

        let unlabeled = Corpus::from_docs(syn.corpus.vocab().clone(), syn.corpus.docs().to_vec(), None).unwrap();
        assert!(matches!(evaluate(&unlabeled, &model, &[Rule::Count]), Err(Error::MissingLabels)));
    }

    #[test]
    fn dcm_without_tau_is_an_error() {
        let syn = small_synth(GammaSpec::Uniform { value: 0.3 });
        let mu = PredictivenessModel::restrict_mu(&syn.pair, &syn.mu);
        let model = PredictivenessModel::new(syn.pair.clone(), mu, syn.gamma.clone()).unwrap();
        assert!(score_documents(&syn.corpus, &model, Rule::Dcm).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(data in prop::collection::vec((0i32..6, 0u8..2), 2..60)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            match auc(&scores, &labels) {
                Ok(a) => prop_assert!((a - auc_oracle(&scores, &labels)).abs() < 1e-12),
                Err(Error::SingleClass) => prop_assert!(labels.iter().all(|&l| l == labels[0])),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }

        #[test]
        fn auc_flips_and_is_rank_invariant(raw in prop::collection::vec(-1e3..1e3f64, 4..50), seed in any::<u64>()) {
            let labels: Vec<u8> = (0..raw.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let mut distinct = raw.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assume!(distinct.len() == raw.len());
            let a = auc(&raw, &labels).unwrap();
            let neg: Vec<f64> = raw.iter().map(|s| -s).collect();
            prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<f64> = raw.iter().map(|s| (s / 100.0).exp() * 3.0 + 1.0).collect();
            prop_assert!((a - auc(&mono, &labels).unwrap()).abs() < 1e-12);
        }
    }
}
