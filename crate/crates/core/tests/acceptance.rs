//! Acceptance criteria. Runs as a plain binary so every criterion prints a
//! PASS or FAIL line; exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use problex::analysis::{effective_count, expected_accuracy_lower_bound, generate, GammaSpec, LengthSpec, SynthSpec, Synthetic};
use problex::corpus::{baseline_from_stats, corpus_stats, CountVector};
use problex::harness::{auc, evaluate, score_documents, Rule};
use problex::lexicon::Side;
use problex::model::{decide, estimate_concentration, margin_count, score_dcm, score_mult, PredictivenessModel};
use problex::moments::{expected_pair_product, objective, MomentStats};
use problex::solver::{build_quadratic, fit, solve_diag_plus_rank1, QuadraticForm, SolverConfig, SolverResult};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// The estimator-recovery corpus: V = 1000, 50 words per lexicon,
/// T = 20000, N = 200, gamma ~ U(0.1, 0.9) projected onto the constraint.
fn recovery_spec() -> SynthSpec {
    SynthSpec {
        vocab_size: 1000,
        lexicon_sizes: [50, 50],
        documents: 20_000,
        length: LengthSpec::Fixed { n: 200 },
        gamma: GammaSpec::PerWord { lo: 0.1, hi: 0.9 },
        mu_jitter: 0.5,
        lexicon_coverage: None,
        prior: 0.5,
        tau: None,
        seed: 20_240_601,
    }
}

struct Recovery {
    syn: Synthetic,
    stats: MomentStats,
    result: SolverResult,
    fitted: PredictivenessModel,
    elapsed: Duration,
}

fn recovery() -> Recovery {
    let start = Instant::now();
    let syn = generate(&recovery_spec()).expect("generate");
    let cstats = corpus_stats(&syn.corpus);
    let mu = baseline_from_stats(&cstats).expect("baseline");
    let stats = MomentStats::compute(&syn.corpus, &syn.pair, &cstats, &mu).expect("moments");
    let result = fit(&stats, &SolverConfig::default()).expect("fit");
    let elapsed = start.elapsed();
    let fitted = PredictivenessModel::new(
        syn.pair.clone(),
        PredictivenessModel::restrict_mu(&syn.pair, &mu),
        [result.gamma0.clone(), result.gamma1.clone()],
    )
    .expect("model");
    Recovery {
        syn,
        stats,
        result,
        fitted,
        elapsed,
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_1(r: &Recovery) -> Outcome {
    let est: Vec<f64> = r.result.gamma0.iter().chain(&r.result.gamma1).copied().collect();
    let truth: Vec<f64> = r.syn.gamma[0].iter().chain(&r.syn.gamma[1]).copied().collect();
    let mae = est.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / est.len() as f64;
    let corr = pearson(&est, &truth);
    let secs = r.elapsed.as_secs_f64();
    outcome(
        mae <= 0.10 && corr >= 0.9 && secs <= 300.0,
        format!(
            "MAE {mae:.4} (<= 0.10), Pearson {corr:.4} (>= 0.9), {secs:.1}s (<= 300s), converged {} in {} outer iterations",
            r.result.converged, r.result.outer_iterations
        ),
    )
}

fn criterion_2(r: &Recovery) -> Outcome {
    let labels = r.syn.corpus.labels().expect("labels");
    let mult = auc(&score_documents(&r.syn.corpus, &r.fitted, Rule::Mult).expect("mult"), labels).expect("auc");
    let count = auc(&score_documents(&r.syn.corpus, &r.fitted, Rule::Count).expect("count"), labels).expect("auc");
    outcome(
        mult >= count + 0.01,
        format!(
            "AUC mult {mult:.4} vs count {count:.4}: gain {:.4} (>= 0.01; headroom above count is {:.4})",
            mult - count,
            1.0 - count
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        vocab_size: 1000,
        lexicon_sizes: [50, 50],
        documents: 10_000,
        length: LengthSpec::Fixed { n: 100 },
        gamma: GammaSpec::Uniform { value: 0.5 },
        mu_jitter: 0.5,
        lexicon_coverage: Some(0.02),
        prior: 0.5,
        tau: None,
        seed: 3,
    };
    let syn = generate(&spec).expect("generate");
    let labels = syn.corpus.labels().expect("labels");
    let hits = syn
        .corpus
        .docs()
        .iter()
        .zip(labels)
        .filter(|(d, &y)| decide(margin_count(d, &syn.pair)).unwrap() == y)
        .count();
    let acc = hits as f64 / labels.len() as f64;
    let bound = expected_accuracy_lower_bound(0.5, 100.0, 0.02).expect("bound");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        acc >= bound - 0.02 && secs <= 30.0,
        format!("count-rule accuracy {acc:.4} >= bound {bound:.4} - 0.02, {secs:.1}s (<= 30s)"),
    )
}

fn criterion_4(r: &Recovery) -> Outcome {
    let pair = r.syn.pair.clone();
    let mu = PredictivenessModel::restrict_mu(&pair, &r.syn.mu);
    let model = PredictivenessModel::uniform(pair.clone(), mu, 0.5).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // dense in lexicon words so margins are usually non-zero
    let docs: Vec<CountVector> = (0..1000)
        .map(|_| {
            let k = rng.random_range(0..15);
            CountVector::from_pairs((0..k).map(|_| (rng.random_range(0..200), rng.random_range(1..=20))))
        })
        .collect();
    let ln3 = 3f64.ln();
    let mut max_dev = 0f64;
    let mut agree = true;
    for x in &docs {
        let (s, c) = (score_mult(x, &model), margin_count(x, &pair));
        max_dev = max_dev.max((s - ln3 * c).abs());
        agree &= decide(s).unwrap() == decide(c).unwrap();
    }
    outcome(
        max_dev <= 1e-12 && agree,
        format!("max |mult - ln3 * count| = {max_dev:.2e} (<= 1e-12), decisions identical: {agree}"),
    )
}

fn criterion_5(r: &Recovery) -> Outcome {
    let model = PredictivenessModel::new(
        r.syn.pair.clone(),
        PredictivenessModel::restrict_mu(&r.syn.pair, &r.syn.mu),
        r.syn.gamma.clone(),
    )
    .and_then(|m| m.with_tau(1e8))
    .expect("model");
    // documents drawn from the generative model, restricted to counts <= 20
    let docs: Vec<&CountVector> = r
        .syn
        .corpus
        .docs()
        .iter()
        .filter(|d| d.iter().all(|(_, c)| c <= 20))
        .take(1000)
        .collect();
    let mut worst = 0f64;
    for &x in &docs {
        let (d, s) = (score_dcm(x, &model).unwrap(), score_mult(x, &model));
        worst = worst.max((d - s).abs() / (s.abs() + 1e-9));
    }
    let eff = effective_count(10, 10.0, 1e-3, 0.5).expect("effective count");
    outcome(
        worst <= 1e-3 && eff <= 3.0,
        format!("max relative |dcm - mult| at tau=1e8 over {} documents {worst:.2e} (<= 1e-3); effective_count(10) at tau=10 {eff:.4} (<= 3)", docs.len()),
    )
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn random_stats(rng: &mut ChaCha8Rng, n0: usize, n1: usize) -> MomentStats {
    let mu0: Vec<f64> = (0..n0).map(|_| rng.random_range(0.002..0.02)).collect();
    let mu1: Vec<f64> = (0..n1).map(|_| rng.random_range(0.002..0.02)).collect();
    let s: u128 = rng.random_range(10_000..1_000_000);
    let draw = |mu: &[f64], opp: f64, rng: &mut ChaCha8Rng| -> Vec<u128> {
        mu.iter()
            .map(|m| (s as f64 * m * opp * rng.random_range(0.2..1.1)) as u128)
            .collect()
    };
    let (cov0, cov1) = (mu0.iter().sum::<f64>(), mu1.iter().sum::<f64>());
    let c0 = draw(&mu0, cov1, rng);
    let c1 = draw(&mu1, cov0, rng);
    MomentStats::from_parts(c0, c1, mu0, mu1, s).unwrap()
}

fn criterion_6(r: &Recovery) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut woodbury = 0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let f = QuadraticForm {
            diag: (0..n).map(|_| rng.random_range(0.0..5.0)).collect(),
            lowrank_coef: rng.random_range(0.0..10.0),
            lowrank_vec: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            linear: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        };
        let rho2 = rng.random_range(0.1..10.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_diag_plus_rank1(&f, rho2, &a, &v).unwrap();
        let mat: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = if i == j { f.diag[i] + rho2 } else { 0.0 };
                        d + f.lowrank_coef * f.lowrank_vec[i] * f.lowrank_vec[j]
                    })
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = (0..n).map(|i| rho2 * (a[i] - v[i]) - f.linear[i]).collect();
        let y = dense_solve(mat, rhs);
        for (p, q) in x.iter().zip(&y) {
            woodbury = woodbury.max((p - q).abs() / q.abs().max(1.0));
        }
    }

    let mut grad = 0f64;
    for _ in 0..50 {
        let (n0, n1) = (rng.random_range(1..10), rng.random_range(1..10));
        let st = random_stats(&mut rng, n0, n1);
        let g0: Vec<f64> = (0..n0).map(|_| rng.random_range(0.05..0.95)).collect();
        let g1: Vec<f64> = (0..n1).map(|_| rng.random_range(0.05..0.95)).collect();
        let rho = rng.random_range(0.1..1e4);
        let u = rng.random_range(-0.05..0.05);
        let aug = |a: &[f64], b: &[f64]| {
            let gap: f64 = st.mu0.iter().zip(a).map(|(m, g)| m * g).sum::<f64>()
                - st.mu1.iter().zip(b).map(|(m, g)| m * g).sum::<f64>()
                + u;
            objective(a, b, &st) + 0.5 * rho * gap * gap
        };
        for side in Side::BOTH {
            let (own, other) = match side {
                Side::Zero => (&g0, &g1),
                Side::One => (&g1, &g0),
            };
            let analytic = build_quadratic(side, other, &st, rho, u).gradient(own);
            let h = 1e-5;
            let fd: Vec<f64> = (0..own.len())
                .map(|i| {
                    let (mut p, mut m) = (own.clone(), own.clone());
                    p[i] += h;
                    m[i] -= h;
                    let f = |x: &Vec<f64>| match side {
                        Side::Zero => aug(x, &g1),
                        Side::One => aug(&g0, x),
                    };
                    (f(&p) - f(&m)) / (2.0 * h)
                })
                .collect();
            let num: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            grad = grad.max(num / den);
        }
    }

    let config = SolverConfig::default();
    let hi = 1.0 - config.box_epsilon;
    let mut runs = vec![(r.stats.clone(), r.result.clone())];
    for _ in 0..20 {
        let (n0, n1) = (rng.random_range(1..12), rng.random_range(1..12));
        let st = random_stats(&mut rng, n0, n1);
        let res = fit(&st, &config).expect("fit");
        runs.push((st, res));
    }
    let converged: Vec<_> = runs.iter().filter(|(_, res)| res.converged).collect();
    let mut contract = !converged.is_empty();
    let mut worst_residual = 0f64;
    for (st, res) in &converged {
        let feasible = res.gamma0.iter().chain(&res.gamma1).all(|&g| (0.0..=hi).contains(&g));
        let zero = objective(&vec![0.0; st.mu0.len()], &vec![0.0; st.mu1.len()], st);
        worst_residual = worst_residual.max(res.constraint_residual);
        contract &= feasible && res.constraint_residual <= 1e-5 && res.objective <= zero;
    }
    outcome(
        woodbury <= 1e-10 && grad <= 1e-6 && contract,
        format!(
            "Woodbury vs dense {woodbury:.2e} (<= 1e-10); gradient vs finite differences rel {grad:.2e} (<= 1e-6); \
             {}/{} runs converged, worst residual {worst_residual:.2e} (<= 1e-5), feasible and J <= J(0): {contract}",
            converged.len(),
            runs.len()
        ),
    )
}

/// All count vectors of length `v` summing to `n`.
fn compositions(n: u64, v: usize) -> Vec<Vec<u64>> {
    if v == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|k| {
            compositions(n - k, v - 1).into_iter().map(move |mut rest| {
                rest.insert(0, k);
                rest
            })
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let fact = |k: u64| (1..=k).product::<u64>() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    let mut cases = 0;
    for v in 2..=4usize {
        for _ in 0..5 {
            let w: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            let theta: Vec<f64> = w.iter().map(|x| x / total).collect();
            for n in 0..=3u64 {
                for i in 0..v {
                    for j in 0..v {
                        if i == j {
                            continue;
                        }
                        let mut e = 0.0;
                        for x in compositions(n, v) {
                            let p = fact(n)
                                * x.iter()
                                    .zip(&theta)
                                    .map(|(&k, &t)| t.powi(k as i32) / fact(k))
                                    .product::<f64>();
                            e += p * (x[i] * x[j]) as f64;
                        }
                        worst = worst.max((e - expected_pair_product(n, theta[i], theta[j])).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max |enumerated E[x_i x_j] - N(N-1) theta_i theta_j| = {worst:.2e} over {cases} cases (<= 1e-12)"),
    )
}

fn criterion_8() -> Outcome {
    let spec = SynthSpec {
        vocab_size: 1000,
        lexicon_sizes: [50, 50],
        documents: 5000,
        length: LengthSpec::Fixed { n: 200 },
        gamma: GammaSpec::PerWord { lo: 0.1, hi: 0.9 },
        mu_jitter: 0.5,
        lexicon_coverage: None,
        prior: 0.5,
        tau: Some(500.0),
        seed: 8,
    };
    let syn = generate(&spec).expect("generate");
    let est = estimate_concentration(&syn.corpus, &syn.pair, &syn.mu).expect("estimate");
    outcome(
        (250.0..=1000.0).contains(&est.tau),
        format!("tau estimate {:.1} for true 500 (in [250, 1000])", est.tau),
    )
}

fn criterion_9() -> Outcome {
    let spec = SynthSpec {
        vocab_size: 1000,
        lexicon_sizes: [50, 50],
        documents: 10_000,
        length: LengthSpec::Fixed { n: 200 },
        gamma: GammaSpec::Uniform { value: 0.0 },
        mu_jitter: 0.5,
        lexicon_coverage: None,
        prior: 0.5,
        tau: None,
        seed: 9,
    };
    let syn = generate(&spec).expect("generate");
    let cstats = corpus_stats(&syn.corpus);
    let mu = baseline_from_stats(&cstats).expect("baseline");
    let stats = MomentStats::compute(&syn.corpus, &syn.pair, &cstats, &mu).expect("moments");
    let res = fit(&stats, &SolverConfig::default()).expect("fit");
    let est = estimate_concentration(&syn.corpus, &syn.pair, &mu).expect("tau");
    let model = PredictivenessModel::new(
        syn.pair.clone(),
        PredictivenessModel::restrict_mu(&syn.pair, &mu),
        [res.gamma0, res.gamma1],
    )
    .and_then(|m| m.with_tau(est.tau))
    .expect("model");
    let report = evaluate(&syn.corpus, &model, &Rule::ALL).expect("evaluate");
    let pass = report.rules.iter().all(|r| (0.48..=0.52).contains(&r.auc));
    let detail = report
        .rules
        .iter()
        .map(|r| format!("{} {:.4}", r.rule, r.auc))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("AUC on a null corpus: {detail} (each in [0.48, 0.52])"))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let r = recovery();
    let results = [
        ("estimator recovery", criterion_1(&r)),
        ("mult beats count", criterion_2(&r)),
        ("expected-accuracy bound", criterion_3()),
        ("uniform-gamma equivalence", criterion_4(&r)),
        ("DCM multinomial limit and saturation", criterion_5(&r)),
        ("solver internals", criterion_6(&r)),
        ("moment formula by enumeration", criterion_7()),
        ("concentration round trip", criterion_8()),
        ("null-signal AUC", criterion_9()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {}: {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
