//! Constrained moment matching by nested ADMM.
//!
//! The outer loop alternates exact block updates of the two lexicons'
//! predictiveness vectors against the augmented Lagrangian of the
//! equal-mass constraint `mu0 . gamma0 = mu1 . gamma1`, then takes a dual
//! step on that constraint. Each block update is itself a box-constrained
//! quadratic program with Hessian `Diag(d) + kappa m m^T`, solved by an
//! inner ADMM whose linear systems are inverted in O(n) with the
//! Sherman-Morrison form of the Woodbury identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Side;
use crate::moments::{objective, MomentStats};

/// `f(x) = 1/2 x^T (Diag(diag) + lowrank_coef * v v^T) x + linear . x`
/// with `v = lowrank_vec`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub diag: Vec<f64>,
    pub lowrank_coef: f64,
    pub lowrank_vec: Vec<f64>,
    pub linear: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `P x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let proj = self.lowrank_coef * dot(&self.lowrank_vec, x);
        self.diag
            .iter()
            .zip(x)
            .zip(&self.lowrank_vec)
            .map(|((d, xi), m)| d * xi + proj * m)
            .collect()
    }

    /// `P x + q`
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x).iter().zip(&self.linear).map(|(p, q)| p + q).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.apply(x)) + dot(&self.linear, x)
    }

    /// Multiplies the whole form by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.diag.iter_mut().for_each(|d| *d *= factor);
        self.lowrank_coef *= factor;
        self.linear.iter_mut().for_each(|q| *q *= factor);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.lowrank_coef.is_finite()
            && self
                .diag
                .iter()
                .chain(&self.lowrank_vec)
                .chain(&self.linear)
                .all(|v| v.is_finite())
    }
}

/// Quadratic model, in `side`'s predictiveness vector, of the moment
/// objective plus the penalty `rho/2 (mu0.gamma0 - mu1.gamma1 + u)^2`,
/// holding the opposite side at `gamma_other`. Its gradient `P gamma + q`
/// equals the gradient of that sum.
///
/// With `A = mu_opp . gamma_other`, `a = s A`, `b = s^2 sum mu_j^2 gamma_j^2`
/// and `c_r = s sum r_j mu_j gamma_j` over the opposite side:
/// `d_i = a^2 mu_i^2`, `kappa = b + rho`, `m = mu_side`, and
/// `q_i = (a r_i + c_r + rho (+-u - A)) mu_i`, with `-u` for side one.
pub fn build_quadratic(side: Side, gamma_other: &[f64], stats: &MomentStats, rho: f64, u: f64) -> QuadraticForm {
    let opp = side.other();
    let s = stats.s_f64();
    let mu_own = stats.mu(side);
    let mu_opp = stats.mu(opp);
    let r_own = stats.residuals(side);
    let r_opp = stats.residuals(opp);

    let offset = dot(mu_opp, gamma_other);
    let a = s * offset;
    let b = s * s * mu_opp.iter().zip(gamma_other).map(|(m, g)| (m * g) * (m * g)).sum::<f64>();
    let c_r = s * r_opp
        .iter()
        .zip(mu_opp)
        .zip(gamma_other)
        .map(|((r, m), g)| r * m * g)
        .sum::<f64>();
    let signed_u = match side {
        Side::Zero => u,
        Side::One => -u,
    };
    let shift = c_r + rho * (signed_u - offset);

    QuadraticForm {
        diag: mu_own.iter().map(|m| (a * m) * (a * m)).collect(),
        lowrank_coef: b + rho,
        lowrank_vec: mu_own.to_vec(),
        linear: r_own.iter().zip(mu_own).map(|(r, m)| (a * r + shift) * m).collect(),
    }
}

/// Minimizes `f(x) + rho2/2 |x - a_aux + v_dual|^2` for the quadratic `form`:
/// `x = (P + rho2 I)^{-1} (rho2 (a_aux - v_dual) - q)`, inverting the
/// diagonal-plus-rank-one matrix in O(n).
pub fn solve_diag_plus_rank1(form: &QuadraticForm, rho2: f64, a_aux: &[f64], v_dual: &[f64]) -> Result<Vec<f64>> {
    let n = form.dim();
    if form.lowrank_vec.len() != n || form.linear.len() != n || a_aux.len() != n || v_dual.len() != n {
        return Err(Error::InvalidInput("dimension mismatch in diagonal-plus-rank-one solve".into()));
    }
    if !form.is_finite() || !rho2.is_finite() || a_aux.iter().chain(v_dual).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("diagonal-plus-rank-one solve"));
    }
    let shifted: Vec<f64> = form.diag.iter().map(|d| d + rho2).collect();
    if shifted.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidInput("diagonal plus rho2 must be positive".into()));
    }
    // D^{-1} rhs and D^{-1} m, then the Sherman-Morrison correction.
    let y: Vec<f64> = (0..n)
        .map(|i| (rho2 * (a_aux[i] - v_dual[i]) - form.linear[i]) / shifted[i])
        .collect();
    let z: Vec<f64> = form.lowrank_vec.iter().zip(&shifted).map(|(m, d)| m / d).collect();
    let kappa = form.lowrank_coef;
    let denom = 1.0 + kappa * dot(&form.lowrank_vec, &z);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::NonFinite("rank-one correction"));
    }
    let coef = kappa * dot(&form.lowrank_vec, &y) / denom;
    let x: Vec<f64> = y.iter().zip(&z).map(|(yi, zi)| yi - coef * zi).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("diagonal-plus-rank-one solution"));
    }
    Ok(x)
}

/// Clamps each entry to `[0, 1 - epsilon]`.
pub fn project_box(gamma: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if gamma.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFinite("box projection"));
    }
    let hi = 1.0 - epsilon;
    Ok(gamma.iter().map(|g| g.clamp(0.0, hi)).collect())
}

fn default_rho() -> f64 {
    1.0
}
fn default_abs_tol() -> f64 {
    1e-6
}
fn default_rel_tol() -> f64 {
    1e-4
}
fn default_max_outer() -> usize {
    500
}
fn default_max_inner() -> usize {
    200
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_factor() -> f64 {
    2.0
}
fn default_ratio() -> f64 {
    10.0
}
fn default_init() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial outer penalty on the equal-mass constraint.
    #[serde(default = "default_rho")]
    pub rho_init: f64,
    /// Initial inner penalty on the box split.
    #[serde(default = "default_rho")]
    pub rho2_init: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    /// The box is `[0, 1 - box_epsilon]`.
    #[serde(default = "default_epsilon")]
    pub box_epsilon: f64,
    #[serde(default = "default_factor")]
    pub penalty_factor: f64,
    #[serde(default = "default_ratio")]
    pub penalty_ratio: f64,
    /// Starting predictiveness for every word. Zero is a stationary point
    /// of the alternating updates, so this must be positive.
    #[serde(default = "default_init")]
    pub init_gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho_init: default_rho(),
            rho2_init: default_rho(),
            abs_tol: default_abs_tol(),
            rel_tol: default_rel_tol(),
            max_outer: default_max_outer(),
            max_inner: default_max_inner(),
            box_epsilon: default_epsilon(),
            penalty_factor: default_factor(),
            penalty_ratio: default_ratio(),
            init_gamma: default_init(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_init", self.rho_init),
            ("rho2_init", self.rho2_init),
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.box_epsilon > 0.0 && self.box_epsilon < 0.5) {
            return Err(Error::InvalidInput(format!(
                "box_epsilon must lie in (0, 0.5), got {}",
                self.box_epsilon
            )));
        }
        if !(self.penalty_factor > 1.0 && self.penalty_ratio > 1.0) {
            return Err(Error::InvalidInput("penalty_factor and penalty_ratio must exceed 1".into()));
        }
        if !(self.init_gamma > 0.0 && self.init_gamma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "init_gamma must lie in (0, 1), got {}",
                self.init_gamma
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalty at exit, after adaptation.
    pub rho2: f64,
}

/// Box-constrained minimization of `form` over `[0, 1 - eps]^n` by ADMM on
/// the split `gamma = a`, starting from `a = v = 0`.
pub fn inner_admm(form: &QuadraticForm, config: &SolverConfig) -> Result<InnerResult> {
    inner_admm_with(form, config, config.rho2_init)
}

pub(crate) fn inner_admm_with(form: &QuadraticForm, config: &SolverConfig, rho2_start: f64) -> Result<InnerResult> {
    if !form.is_finite() {
        return Err(Error::NonFinite("inner quadratic form"));
    }
    let n = form.dim();
    let eps = config.box_epsilon;
    let sqrt_n = (n as f64).sqrt();
    let mut rho2 = rho2_start;
    let mut a = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;

    for it in 1..=config.max_inner {
        let gamma = solve_diag_plus_rank1(form, rho2, &a, &v)?;
        let shifted: Vec<f64> = gamma.iter().zip(&v).map(|(g, v)| g + v).collect();
        let a_next = project_box(&shifted, eps)?;
        for i in 0..n {
            v[i] += gamma[i] - a_next[i];
        }
        let primal = dist(&gamma, &a_next);
        let dual = rho2 * dist(&a_next, &a);
        a = a_next;

        let eps_pri = sqrt_n * config.abs_tol + config.rel_tol * norm(&gamma).max(norm(&a));
        let eps_dual = sqrt_n * config.abs_tol + config.rel_tol * rho2 * norm(&v);
        let feasible = project_box(&gamma, eps)?;
        if primal <= eps_pri && dual <= eps_dual {
            return Ok(InnerResult {
                gamma: feasible,
                iterations: it,
                converged: true,
                rho2,
            });
        }
        let value = form.value(&feasible);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, feasible));
        }

        if primal > config.penalty_ratio * dual {
            rho2 *= config.penalty_factor;
            v.iter_mut().for_each(|x| *x /= config.penalty_factor);
        } else if dual > config.penalty_ratio * primal {
            rho2 /= config.penalty_factor;
            v.iter_mut().for_each(|x| *x *= config.penalty_factor);
        }
    }
    let (_, gamma) = best.expect("at least one inner iteration");
    Ok(InnerResult {
        gamma,
        iterations: config.max_inner,
        converged: false,
        rho2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
    pub inner_iterations: [usize; 2],
}

impl TraceRow {
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.10e} {:.6e} {:.6e} {:.6e}",
            self.iteration, self.objective, self.primal, self.dual, self.rho
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub objective: f64,
    /// `|mu0 . gamma0 - mu1 . gamma1|` at exit.
    pub constraint_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Inner solves that hit `max_inner`.
    pub inner_failures: usize,
    pub converged: bool,
    pub history: Vec<TraceRow>,
}

impl SolverResult {
    pub fn gamma(&self, side: Side) -> &[f64] {
        match side {
            Side::Zero => &self.gamma0,
            Side::One => &self.gamma1,
        }
    }
}

/// Fits per-word predictiveness for both lexicons.
///
/// The moment objective is multiplied internally by
/// `1 / (s |mu0| |mu1|)^2` and the constraint is divided by
/// `sqrt(|mu0| |mu1|)`, so penalties and tolerances act on O(1) quantities.
/// Neither changes the minimizer; the reported objective and constraint
/// residual are in the original units.
pub fn fit(stats: &MomentStats, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    for side in Side::BOTH {
        if stats.len(side) == 0 {
            return Err(Error::InvalidInput(format!("{side} is empty")));
        }
        if stats.mu(side).iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "{side} has a word with non-positive baseline probability"
            )));
        }
    }
    if stats.s == 0 {
        return Err(Error::InvalidInput(
            "no document has two tokens, so there are no co-occurrences to match".into(),
        ));
    }

    let mu0 = &stats.mu0;
    let mu1 = &stats.mu1;
    let (norm0, norm1) = (norm(mu0), norm(mu1));
    let scale = {
        let f = 1.0 / (stats.s_f64() * norm0 * norm1);
        f * f
    };
    // Penalty rho on the normalized constraint is rho / nu2 on the raw one.
    let nu2 = norm0 * norm1;
    let form_for = |side: Side, other: &[f64], rho: f64, u: f64| {
        build_quadratic(side, other, stats, rho / (nu2 * scale), u).scaled(scale)
    };

    let eps = config.box_epsilon;
    let start = config.init_gamma.min(1.0 - eps);
    let mut gamma0 = vec![start; mu0.len()];
    let mut gamma1 = vec![start; mu1.len()];
    let mut u = 0.0;
    let mut rho = config.rho_init;
    let mut rho2 = [config.rho2_init; 2];
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut inner_failures = 0;
    let mut converged = false;

    for iteration in 1..=config.max_outer {
        let form0 = form_for(Side::Zero, &gamma1, rho, u);
        let inner0 = inner_admm_with(&form0, config, rho2[0])?;
        let new0 = inner0.gamma;

        let form1 = form_for(Side::One, &new0, rho, u);
        let inner1 = inner_admm_with(&form1, config, rho2[1])?;
        let new1 = inner1.gamma;

        rho2 = [inner0.rho2, inner1.rho2];
        inner_total += inner0.iterations + inner1.iterations;
        inner_failures += usize::from(!inner0.converged) + usize::from(!inner1.converged);

        let mass0 = dot(mu0, &new0);
        let mass1 = dot(mu1, &new1);
        let g = mass0 - mass1;
        u += g;

        // Side-zero stationarity lost by moving side one: the change in the
        // moment gradient plus the constraint coupling term.
        let grad_new = form_for(Side::Zero, &new1, 0.0, 0.0).gradient(&new0);
        let grad_old = form_for(Side::Zero, &gamma1, 0.0, 0.0).gradient(&new0);
        let coupling = rho / nu2 * (mass1 - dot(mu1, &gamma1));
        let dual = grad_new
            .iter()
            .zip(&grad_old)
            .zip(mu0)
            .map(|((a, b), m)| {
                let r = a - b - coupling * m;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let nu = nu2.sqrt();
        let primal = g.abs() / nu;

        gamma0 = new0;
        gamma1 = new1;
        let j = objective(&gamma0, &gamma1, stats);
        if !(j.is_finite() && primal.is_finite() && dual.is_finite() && u.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                detail: format!("objective {j}, primal {primal}, dual {dual}, u {u}, rho {rho}"),
            });
        }
        history.push(TraceRow {
            iteration,
            objective: j,
            primal,
            dual,
            rho,
            inner_iterations: [inner0.iterations, inner1.iterations],
        });

        let eps_pri = config.abs_tol + config.rel_tol * mass0.abs().max(mass1.abs()) / nu;
        let eps_dual = (mu0.len() as f64).sqrt() * config.abs_tol + config.rel_tol * rho / nu2 * u.abs() * norm0;
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }

        if primal > config.penalty_ratio * dual {
            rho *= config.penalty_factor;
            u /= config.penalty_factor;
        } else if dual > config.penalty_ratio * primal {
            rho /= config.penalty_factor;
            u *= config.penalty_factor;
        }
    }

    // gamma = 0 is exactly feasible; an iterate that only reached it within
    // tolerance can sit a hair above J(0).
    let zero = (vec![0.0; mu0.len()], vec![0.0; mu1.len()]);
    let j_zero = objective(&zero.0, &zero.1, stats);
    let mut objective = history.last().map(|r| r.objective).unwrap_or(f64::NAN);
    if converged && j_zero <= objective {
        (gamma0, gamma1) = zero;
        objective = j_zero;
    }
    Ok(SolverResult {
        constraint_residual: (dot(mu0, &gamma0) - dot(mu1, &gamma1)).abs(),
        gamma0,
        gamma1,
        objective,
        outer_iterations: history.len(),
        inner_iterations: inner_total,
        inner_failures,
        converged,
        history,
    })
}
