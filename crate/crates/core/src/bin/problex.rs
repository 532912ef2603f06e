use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use problex::analysis::{effective_count, expected_accuracy_lower_bound, generate, margin_moments, SynthSpec};
use problex::corpus::{read_corpus, Corpus, CorpusFormat, IngestOptions, TokenizerConfig};
use problex::harness::{
    evaluate, fit_model, prepare, records_to_jsonl, run_pipeline, score_documents, score_records, seed_from_env,
    trace_log, write_atomic, write_json, PipelineConfig, Rule,
};
use problex::lexicon::Side;
use problex::model::ModelFile;
use problex::moments::MomentStats;
use problex::solver::SolverConfig;
use problex::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;

/// Lexicon-based text classification with predictiveness learned from
/// unlabeled text.
#[derive(Parser)]
#[command(name = "problex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-word predictiveness and write a model file.
    Fit(FitArgs),
    /// Score documents with a fitted model.
    Classify(ClassifyArgs),
    /// Report AUC and accuracy against gold labels.
    Evaluate(EvaluateArgs),
    /// Dump the cross-lexicon moment statistics.
    Moments(MomentsArgs),
    /// Expected-accuracy bound of the counting rule.
    Analyze(AnalyzeArgs),
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Effective counts of repeated words under the DCM rule, as CSV.
    Effcount(EffcountArgs),
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "auto")]
    format: CorpusFormat,
    /// Derive labels from a 1-5 `rating` field.
    #[arg(long)]
    ratings: bool,
    /// Keep token case.
    #[arg(long)]
    keep_case: bool,
}

impl CorpusArgs {
    fn read(&self) -> problex::Result<Corpus> {
        let options = IngestOptions {
            tokenizer: TokenizerConfig {
                lowercase: !self.keep_case,
            },
            ratings: self.ratings,
        };
        read_corpus(&self.corpus, self.format, &options)
    }
}

#[derive(Args)]
struct LexiconArgs {
    #[arg(long)]
    lex0: PathBuf,
    #[arg(long)]
    lex1: PathBuf,
    /// Keep words that co-occur with the opposite lexicon above chance.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[arg(long)]
    out: PathBuf,
    /// Convergence trace; written to stderr when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Solver settings as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Absolute tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Maximum outer iterations.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Also estimate the DCM concentration.
    #[arg(long)]
    tau: bool,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    prior_logodds: f64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_parser = parse_rule, default_value = "mult")]
    rule: Rule,
    /// JSON-lines output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_parser = parse_rule, value_delimiter = ',', default_value = "count,presence,pmi,mult")]
    rules: Vec<Rule>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    gamma: f64,
    /// Document length in tokens.
    #[arg(long)]
    n: f64,
    /// Lexicon coverage.
    #[arg(long)]
    smu: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write lex0.txt, lex1.txt and truth.json here.
    #[arg(long)]
    lexicon_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EffcountArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    xmax: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    match s {
        "auto" => Ok(CorpusFormat::Auto),
        "text" => Ok(CorpusFormat::Text),
        "jsonl" => Ok(CorpusFormat::Jsonl),
        _ => Err(format!("unknown format {s:?} (auto, text, jsonl)")),
    }
}

fn parse_rule(s: &str) -> Result<Rule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Error(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = Result<(), Failure>;

fn emit(out: Option<&Path>, bytes: &[u8]) -> problex::Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(bytes).and_then(|_| stdout.flush()) {
                // reader went away, as with `| head`
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                }),
            }
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> problex::Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let mut bytes = serde_json::to_vec_pretty(value)?;
            bytes.push(b'\n');
            emit(None, &bytes)
        }
    }
}

fn load_model(path: &Path, corpus: &mut Corpus) -> problex::Result<problex::model::PredictivenessModel> {
    let file = ModelFile::read(path).map_err(|e| e.in_stage("model"))?;
    corpus.extend_vocab(file.all_words());
    file.to_model(corpus.vocab()).map_err(|e| e.in_stage("model"))
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => SolverConfig::default(),
    };
    if let Some(t) = args.tol {
        config.abs_tol = t;
    }
    if let Some(t) = args.rel_tol {
        config.rel_tol = t;
    }
    if let Some(m) = args.max_iter {
        config.max_outer = m;
    }
    if let Some(seed) = seed_from_env()? {
        config.seed = seed;
    }
    config.validate()?;

    let corpus = args.corpus.read().map_err(|e| e.in_stage("ingest"))?;
    let prepared = prepare(corpus, [&args.lexicons.lex0, &args.lexicons.lex1], !args.lexicons.no_prune)?;
    for w in &prepared.overlap {
        eprintln!("warning: {w:?} is in both lexicons and was removed from both");
    }
    let fitted = fit_model(&prepared, &config, args.tau, args.prior_logodds)?;
    fitted.model_file(&prepared)?.write(&args.out)?;
    let trace = trace_log(&fitted.solver.history);
    match &args.trace {
        Some(p) => write_atomic(p, trace.as_bytes())?,
        None => eprint!("{trace}"),
    }
    if let Some(c) = &fitted.concentration {
        if c.low_confidence || c.at_bound {
            eprintln!(
                "warning: concentration {:.4e} is {}",
                c.tau,
                if c.at_bound { "at a search bound" } else { "low confidence" }
            );
        }
    }
    if !fitted.solver.converged {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> CmdResult {
    let mut corpus = args.corpus.read().map_err(|e| e.in_stage("ingest"))?;
    let model = load_model(&args.model, &mut corpus)?;
    let scores = score_documents(&corpus, &model, args.rule)?;
    let bytes = records_to_jsonl(&score_records(&corpus, &scores)?)?;
    emit(args.out.as_deref(), &bytes)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let mut corpus = args.corpus.read().map_err(|e| e.in_stage("ingest"))?;
    let model = load_model(&args.model, &mut corpus)?;
    let report = evaluate(&corpus, &model, &args.rules)?;
    emit_json(args.out.as_deref(), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct MomentsDump<'a> {
    lexicon0: Vec<&'a str>,
    lexicon1: Vec<&'a str>,
    #[serde(flatten)]
    stats: &'a MomentStats,
}

fn cmd_moments(args: MomentsArgs) -> CmdResult {
    let corpus = args.corpus.read().map_err(|e| e.in_stage("ingest"))?;
    let prepared = prepare(corpus, [&args.lexicons.lex0, &args.lexicons.lex1], !args.lexicons.no_prune)?;
    let stats = MomentStats::compute(&prepared.corpus, &prepared.pair, &prepared.stats, &prepared.mu)
        .map_err(|e| e.in_stage("moments"))?;
    let words = |side| {
        prepared
            .pair
            .words(side)
            .iter()
            .map(|&id| prepared.corpus.vocab().word(id).unwrap_or_default())
            .collect()
    };
    let dump = MomentsDump {
        lexicon0: words(Side::Zero),
        lexicon1: words(Side::One),
        stats: &stats,
    };
    emit_json(args.out.as_deref(), &dump)?;
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> CmdResult {
    let m = margin_moments(args.gamma, args.n, args.smu)?;
    let bound = expected_accuracy_lower_bound(args.gamma, args.n, args.smu)?;
    let text = format!(
        "gamma\t{}\nN\t{}\ns_mu\t{}\nmean\t{:.6}\nvariance_bound\t{:.6}\nz\t{:.6}\naccuracy_lower_bound\t{:.6}\n",
        args.gamma, args.n, args.smu, m.mean, m.variance_bound, m.z_lower, bound
    );
    emit(None, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Truth<'a> {
    mu: std::collections::BTreeMap<&'a str, f64>,
    gamma0: std::collections::BTreeMap<&'a str, f64>,
    gamma1: std::collections::BTreeMap<&'a str, f64>,
    spec: &'a SynthSpec,
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::Io {
        path: args.spec.clone(),
        source: e,
    })?;
    let mut spec: SynthSpec = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(seed) = seed_from_env()? {
        spec.seed = seed;
    }
    let syn = generate(&spec)?;
    syn.corpus.write_jsonl(&args.out)?;
    if let Some(dir) = &args.lexicon_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let vocab = syn.corpus.vocab();
        let word = |id: u32| vocab.word(id).unwrap_or_default();
        for side in Side::BOTH {
            let mut list = String::new();
            for &id in syn.pair.words(side) {
                list.push_str(word(id));
                list.push('\n');
            }
            write_atomic(&dir.join(format!("lex{}.txt", side.index())), list.as_bytes())?;
        }
        let map = |side: Side| {
            syn.pair
                .words(side)
                .iter()
                .zip(&syn.gamma[side.index()])
                .map(|(&id, &g)| (word(id), g))
                .collect()
        };
        let truth = Truth {
            mu: (0..vocab.len() as u32).map(|id| (word(id), syn.mu[id as usize])).collect(),
            gamma0: map(Side::Zero),
            gamma1: map(Side::One),
            spec: &spec,
        };
        write_json(&dir.join("truth.json"), &truth)?;
    }
    Ok(())
}

fn cmd_effcount(args: EffcountArgs) -> CmdResult {
    let mut csv = String::from("x,tau,effective_count\n");
    for &tau in &args.tau {
        for x in 0..=args.xmax {
            let e = effective_count(x, tau, args.mu, args.gamma)?;
            csv.push_str(&format!("{x},{tau},{e:.10}\n"));
        }
    }
    emit(args.out.as_deref(), csv.as_bytes())?;
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> CmdResult {
    let mut config = PipelineConfig::load(&args.config).map_err(|e| e.in_stage("config"))?;
    config.apply_seed_env().map_err(|e| e.in_stage("config"))?;
    let report = run_pipeline(&config)?;
    if let Some(eval) = &report.evaluation {
        for r in &eval.rules {
            eprintln!("{:<9} auc {:.4}  accuracy {:.4}", r.rule.name(), r.auc, r.accuracy);
        }
    }
    if !report.solver.converged {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Moments(a) => cmd_moments(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Effcount(a) => cmd_effcount(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => {
            eprintln!("error: solver did not converge; outputs were written from the last iterate");
            ExitCode::from(EXIT_CONVERGENCE)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Divergence { .. } => ExitCode::from(EXIT_CONVERGENCE),
                _ => ExitCode::from(EXIT_VALIDATION),
            }
        }
    }
}
