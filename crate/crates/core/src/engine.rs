//! The adaptive step-size loop shared by both methods.
//!
//! Each iteration queries the gradient oracle at `(x_k, α_k)` and the
//! zeroth-order oracle at `x_k` and the trial point, lets the method decide,
//! and applies one of three updates: accept and increase, accept and
//! decrease, reject and decrease. The harness side of the loop measures the
//! true gradient for the stopping time and classifies each iteration from the
//! oracles' ground truth.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::line_search::{accept_ls, LsState};
use crate::oracles::{instrument, OracleSuite, SfoSpec};
use crate::problems::{ProblemError, ProblemInstance};
use crate::theory;
use crate::trust_region::{self, HessianMode, TrError, TrModel};

/// Below this step size the run stops with [`Termination::StepCollapse`].
pub const ALPHA_FLOOR: f64 = 1e-300;

/// Relative tolerance used when comparing ladder step sizes against `ᾱ`.
pub const LARGE_STEP_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid method parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("non-finite {what} at iteration {k}")]
    NonFinite { k: usize, what: &'static str },
    #[error("trust-region subproblem failed at iteration {k}: {source}")]
    Subproblem { k: usize, source: TrError },
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    TrustRegion,
    LineSearch,
}

fn d_theta() -> f64 {
    0.5
}
fn d_gamma_inc() -> f64 {
    2.0
}
fn d_gamma_dec() -> f64 {
    0.5
}
fn d_alpha_0() -> f64 {
    1.0
}
fn d_half() -> f64 {
    0.5
}
fn d_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    pub method: MethodKind,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_gamma_inc")]
    pub gamma_inc: f64,
    #[serde(default = "d_gamma_dec")]
    pub gamma_dec: f64,
    #[serde(default = "d_alpha_0")]
    pub alpha_0: f64,
    #[serde(default = "d_half")]
    pub eta_1: f64,
    #[serde(default = "d_half")]
    pub eta_2: f64,
    #[serde(default = "d_one")]
    pub kappa_fcd: f64,
    #[serde(default, rename = "kappa_H")]
    pub kappa_h: f64,
    #[serde(default)]
    pub hessian_mode: HessianMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_rej: Option<f64>,
    /// Defaults to the zeroth-order oracle's `eps_f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_f_assumed: Option<f64>,
    /// Defaults to the problem's start point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl MethodParams {
    pub fn trust_region() -> MethodParams {
        MethodParams {
            method: MethodKind::TrustRegion,
            theta: d_theta(),
            gamma_inc: d_gamma_inc(),
            gamma_dec: d_gamma_dec(),
            alpha_0: d_alpha_0(),
            eta_1: d_half(),
            eta_2: d_half(),
            kappa_fcd: d_one(),
            kappa_h: 0.0,
            hessian_mode: HessianMode::Zero,
            eps_rej: None,
            eps_f_assumed: None,
            x0: None,
        }
    }

    pub fn line_search(eps_rej: f64) -> MethodParams {
        MethodParams { method: MethodKind::LineSearch, eps_rej: Some(eps_rej), ..MethodParams::trust_region() }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::InvalidParams(msg.to_string()));
        if !(self.gamma_inc > 1.0 && self.gamma_inc.is_finite()) {
            return bad("gamma_inc must exceed 1");
        }
        if !(self.gamma_dec > 0.0 && self.gamma_dec < 1.0) {
            return bad("gamma_dec must lie in (0, 1)");
        }
        if !(self.alpha_0 > 0.0 && self.alpha_0.is_finite()) {
            return bad("alpha_0 must be positive");
        }
        if let Some(e) = self.eps_f_assumed {
            if !(e >= 0.0 && e.is_finite()) {
                return bad("eps_f_assumed must be nonnegative");
            }
        }
        match self.method {
            MethodKind::TrustRegion => {
                if !(self.eta_1 > 0.0 && self.eta_1 < 1.0) {
                    return bad("eta_1 must lie in (0, 1)");
                }
                if !(self.eta_2 > 0.0 && self.eta_2.is_finite()) {
                    return bad("eta_2 must be positive");
                }
                if !(self.kappa_fcd > 0.0 && self.kappa_fcd <= 1.0) {
                    return bad("kappa_fcd must lie in (0, 1]");
                }
                if !(self.kappa_h >= 0.0 && self.kappa_h.is_finite()) {
                    return bad("kappa_H must be nonnegative");
                }
            }
            MethodKind::LineSearch => {
                if !(self.theta > 0.0 && self.theta < 1.0) {
                    return bad("theta must lie in (0, 1)");
                }
                // unset is allowed here; the theory module fills it in
                if self.eps_rej.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
                    return bad("eps_rej must be positive and finite");
                }
            }
        }
        Ok(())
    }

    pub fn start(&self, problem: &ProblemInstance) -> Result<DVector<f64>, EngineError> {
        match &self.x0 {
            Some(v) => {
                let x = DVector::from_vec(v.clone());
                problem.check_point(&x)?;
                Ok(x)
            }
            None => Ok(problem.default_start().clone()),
        }
    }

    /// `α₀·γ_inc^a·γ_dec^b`
    /// `α₀·γ_inc^a·γ_dec^b`, evaluated in log space so long runs cannot overflow.
    pub fn ladder(&self, increases: u64, decreases: u64) -> f64 {
        (self.alpha_0.ln() + increases as f64 * self.gamma_inc.ln() + decreases as f64 * self.gamma_dec.ln()).exp()
    }
}

/// Whether a ladder step size counts as large relative to `alpha_bar`.
pub fn is_large(alpha: f64, alpha_bar: f64) -> bool {
    alpha > alpha_bar * (1.0 + LARGE_STEP_RTOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaMode {
    /// Preconditions hold; violations are findings.
    Enforced,
    /// Preconditions fail; violations are logged only.
    Advisory,
    Skipped,
}

/// Analysis-side constants the run is checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisContext {
    pub alpha_bar: f64,
    pub h_eps: f64,
    pub lemma_mode: LemmaMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Computed from the theory module when absent.
    pub analysis: Option<AnalysisContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha_k: f64,
    pub x_norm_grad: f64,
    pub phi_k: f64,
    pub z_k: f64,
    pub theta_k: bool,
    pub i_k: bool,
    pub u_k: bool,
    pub e_k: f64,
    pub e_k_plus: f64,
    pub model_decrease: f64,
    pub accepted: bool,
}

pub const TRACE_COLUMNS: [&str; 12] =
    ["k", "alpha_k", "x_norm_grad", "phi_k", "z_k", "theta_k", "i_k", "u_k", "e_k", "e_k_plus", "model_decrease", "accepted"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma {
    SmallTrueSuccessful,
    LargeSuccessfulProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaViolation {
    pub k: usize,
    pub lemma: Lemma,
    /// Shortfall of the asserted inequality (negative).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub stopping_time: Option<usize>,
    pub termination: Termination,
    pub epsilon: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub alpha_0: f64,
    pub alpha_bar: f64,
    pub h_eps: f64,
    pub lemma_mode: LemmaMode,
    /// Lemma checks that ran (iterations inside the smoothness domain).
    pub lemma_checks: usize,
    pub lemma_violations: Vec<LemmaViolation>,
    /// Failures observed while the lemmas were only advisory.
    pub lemma_advisories: Vec<LemmaViolation>,
    /// Iterations whose iterate or trial point left the domain of `L`.
    pub domain_exits: usize,
    pub final_x: DVector<f64>,
    pub final_phi: f64,
    pub final_grad_norm: f64,
    pub final_alpha: f64,
}

impl RunTrace {
    pub fn true_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.i_k).count()
    }

    pub fn successful_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.theta_k).count()
    }

    pub fn large_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.u_k).count()
    }

    /// Iterations that moved the iterate but shrank the step.
    pub fn accept_only_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.accepted && !r.theta_k).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EngineError> {
        write_records(&self.records, out)
    }
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records<W: Write>(records: &[IterationRecord], out: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            sci(r.alpha_k),
            sci(r.x_norm_grad),
            sci(r.phi_k),
            sci(r.z_k),
            r.theta_k.to_string(),
            r.i_k.to_string(),
            r.u_k.to_string(),
            sci(r.e_k),
            sci(r.e_k_plus),
            sci(r.model_decrease),
            r.accepted.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<IterationRecord>, EngineError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_COLUMNS {
        return Err(EngineError::InvalidParams(format!("unexpected trace header {header:?}")));
    }
    Ok(rdr.deserialize().collect::<Result<Vec<IterationRecord>, _>>()?)
}

/// Whether `i_k` holds: the gradient estimate is within `r(α_k)` and the two
/// function-value errors sum to at most `2·eps_f`, using the oracles' true
/// parameters.
pub fn classify_iteration(sfo: &SfoSpec, grad: &DVector<f64>, g: &DVector<f64>, alpha: f64, e_k: f64, e_k_plus: f64, eps_f: f64) -> bool {
    sfo.is_accurate(grad, g, alpha) && e_k + e_k_plus <= 2.0 * eps_f
}

/// Proposal and decision of one iteration, as seen by the method.
struct Step {
    trial: DVector<f64>,
    model_decrease: f64,
    accept: bool,
    increase: bool,
}

pub fn run(problem: &ProblemInstance, oracles: &OracleSuite, params: &MethodParams, opts: &RunOptions) -> Result<RunTrace, EngineError> {
    params.validate()?;
    if params.method == MethodKind::LineSearch && params.eps_rej.is_none() {
        return Err(EngineError::InvalidParams("line search needs eps_rej".into()));
    }
    if !(opts.epsilon > 0.0) {
        return Err(EngineError::InvalidParams("epsilon must be positive".into()));
    }
    let eps_f_true = oracles.zeroth.eps_f();
    let eps_f_alg = params.eps_f_assumed.unwrap_or(eps_f_true);
    let analysis = match opts.analysis {
        Some(a) => a,
        None => theory::default_analysis(problem, oracles, params, opts.epsilon),
    };
    let domain = problem.lipschitz_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut x = params.start(problem)?;
    let mut phi = problem.value_at(&x);
    let mut alpha = params.alpha_0;
    let mut records = Vec::new();
    let mut lemma_violations = Vec::new();
    let mut lemma_advisories = Vec::new();
    let mut lemma_checks = 0usize;
    let mut domain_exits = 0usize;
    let mut k = 0usize;

    let (termination, grad_norm) = loop {
        let grad = problem.gradient_at(&x);
        let gn = grad.norm();
        if !(gn.is_finite() && phi.is_finite()) {
            return Err(EngineError::NonFinite { k, what: "objective at the iterate" });
        }
        if gn <= opts.epsilon {
            break (Termination::Converged, gn);
        }
        if k >= opts.max_iters {
            break (Termination::BudgetExhausted, gn);
        }
        if alpha < ALPHA_FLOOR {
            break (Termination::StepCollapse, gn);
        }

        let g_sample = oracles.first.sample_with_gradient(&grad, alpha, &mut rng);
        let f_sample = oracles.zeroth.sample_with_truth(phi, &mut rng);
        let g = g_sample.value();
        let f = *f_sample.value();
        if !(f.is_finite() && g.iter().all(|v| v.is_finite())) {
            return Err(EngineError::NonFinite { k, what: "oracle output at the iterate" });
        }
        let g_norm = g.norm();

        let (trial, model_decrease) = match params.method {
            MethodKind::TrustRegion => {
                let model = match params.hessian_mode {
                    HessianMode::Zero => TrModel::linear(f, g.clone()),
                    HessianMode::FdDiagonal => {
                        let h: DMatrix<f64> = trust_region::fd_diagonal_hessian(&x, g, params.kappa_h, |p| {
                            let gp = problem.gradient_at(p);
                            oracles.first.sample_with_gradient(&gp, alpha, &mut rng).into_value()
                        });
                        TrModel::new(f, g.clone(), h, params.kappa_h).map_err(|source| EngineError::Subproblem { k, source })?
                    }
                };
                let cauchy = trust_region::solve_subproblem(&model, alpha).map_err(|source| EngineError::Subproblem { k, source })?;
                (&x + &cauchy.step, cauchy.model_decrease)
            }
            MethodKind::LineSearch => {
                let state = LsState::new(&x, g.clone(), alpha);
                (state.trial, alpha * g_norm * g_norm)
            }
        };
        let phi_plus = problem.value_at(&trial);
        let f_plus_sample = oracles.zeroth.sample_with_truth(phi_plus, &mut rng);
        let f_plus = *f_plus_sample.value();
        if !f_plus.is_finite() {
            return Err(EngineError::NonFinite { k, what: "oracle output at the trial point" });
        }

        let step = match params.method {
            MethodKind::TrustRegion => {
                let d = trust_region::accept_tr(f, f_plus, model_decrease, g_norm, alpha, params, eps_f_alg);
                Step { trial, model_decrease, accept: d.success, increase: d.increase_radius }
            }
            MethodKind::LineSearch => {
                let eps_rej = params.eps_rej.expect("checked on entry");
                let d = accept_ls(f, f_plus, alpha, g_norm, params, eps_rej, eps_f_alg);
                Step { trial, model_decrease, accept: d.sufficient_decrease, increase: d.increase }
            }
        };

        let theta = step.accept && step.increase;
        let alpha_next = alpha * if theta { params.gamma_inc } else { params.gamma_dec };
        let u = is_large(alpha.max(alpha_next), analysis.alpha_bar);
        let e_k = instrument::true_error(&f_sample).abs();
        let e_k_plus = instrument::true_error(&f_plus_sample).abs();
        let i_k = classify_iteration(&oracles.first, &grad, g, alpha, e_k, e_k_plus, eps_f_true);

        let in_domain = domain.contains(&x) && domain.contains(&step.trial);
        if !in_domain {
            if domain_exits == 0 {
                log::warn!("{}: iterate left the domain where L = {} is valid at k = {k}", problem.name(), problem.lipschitz_l());
            }
            domain_exits += 1;
        }
        let phi_next = if step.accept { phi_plus } else { phi };
        if analysis.lemma_mode != LemmaMode::Skipped && in_domain {
            lemma_checks += 1;
            let small = match params.method {
                MethodKind::TrustRegion => !is_large(alpha, analysis.alpha_bar),
                MethodKind::LineSearch => !u,
            };
            let mut found = Vec::new();
            if i_k && small && !theta {
                found.push(LemmaViolation { k, lemma: Lemma::SmallTrueSuccessful, margin: -1.0 });
            }
            if u && theta {
                let margin = (phi - phi_next) - (analysis.h_eps - (2.0 * eps_f_true + e_k + e_k_plus));
                let slack = 64.0 * f64::EPSILON * phi.abs().max(phi_next.abs()).max(1.0);
                if margin < -slack {
                    found.push(LemmaViolation { k, lemma: Lemma::LargeSuccessfulProgress, margin });
                }
            }
            match analysis.lemma_mode {
                LemmaMode::Enforced => lemma_violations.extend(found),
                _ => lemma_advisories.extend(found),
            }
        }

        records.push(IterationRecord {
            k,
            alpha_k: alpha,
            x_norm_grad: gn,
            phi_k: phi,
            z_k: phi - problem.lower_bound(),
            theta_k: theta,
            i_k,
            u_k: u,
            e_k,
            e_k_plus,
            model_decrease: step.model_decrease,
            accepted: step.accept,
        });

        if step.accept {
            x = step.trial;
            phi = phi_plus;
        }
        alpha = alpha_next;
        k += 1;
    };

    let stopping_time = (termination == Termination::Converged).then_some(k);
    Ok(RunTrace {
        records,
        stopping_time,
        termination,
        epsilon: opts.epsilon,
        seed: opts.seed,
        max_iters: opts.max_iters,
        alpha_0: params.alpha_0,
        alpha_bar: analysis.alpha_bar,
        h_eps: analysis.h_eps,
        lemma_mode: analysis.lemma_mode,
        lemma_checks,
        lemma_violations,
        lemma_advisories,
        domain_exits,
        final_x: x,
        final_phi: phi,
        final_grad_norm: grad_norm,
        final_alpha: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{AccuracyForm, CorruptionStrategy, CzoSpec, ZerothOrderSpec};
    use crate::problems::make_problem;
    use proptest::prelude::*;

    fn opts(epsilon: f64, max_iters: usize, seed: u64) -> RunOptions {
        RunOptions { epsilon, max_iters, seed, analysis: None }
    }

    fn noisy_suite(form: AccuracyForm, delta_1: f64) -> OracleSuite {
        OracleSuite::new(
            ZerothOrderSpec::Czo(CzoSpec { eps_f: 1e-3, eps_c: 0.1, delta_0: 0.1 }),
            SfoSpec {
                eps_g: 0.0,
                kappa: 0.5,
                tau: 0.3,
                delta_1,
                accuracy_form: form,
                corruption_strategy: CorruptionStrategy::HugeRandom,
                corruption_magnitude: 10.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn exact_line_search_converges_on_quadratic() {
        let p = make_problem("quadratic", 2).unwrap();
        let params = MethodParams { alpha_0: 0.05, ..MethodParams::line_search(1e-4) };
        let t = run(&p, &OracleSuite::exact(AccuracyForm::LineSearch), &params, &opts(1e-3, 10_000, 0)).unwrap();
        assert_eq!(t.termination, Termination::Converged);
        assert!(t.final_grad_norm <= 1e-3);
        assert!(t.records.iter().all(|r| r.i_k));
    }

    #[test]
    fn exact_trust_region_converges_on_rosenbrock() {
        let p = make_problem("rosenbrock", 2).unwrap();
        let t = run(&p, &OracleSuite::exact(AccuracyForm::TrustRegion), &MethodParams::trust_region(), &opts(1e-4, 200_000, 0)).unwrap();
        assert_eq!(t.termination, Termination::Converged);
        assert!(t.lemma_violations.is_empty());
    }

    #[test]
    fn stopping_time_is_first_hit() {
        let p = make_problem("quadratic", 3).unwrap();
        let t = run(&p, &noisy_suite(AccuracyForm::TrustRegion, 0.2), &MethodParams::trust_region(), &opts(1e-2, 50_000, 3)).unwrap();
        let stop = t.stopping_time.unwrap();
        assert_eq!(stop, t.records.len());
        assert!(t.records.iter().all(|r| r.x_norm_grad > 1e-2));
        assert!(t.final_grad_norm <= 1e-2);
    }

    #[test]
    fn budget_is_a_sentinel_not_an_error() {
        let p = make_problem("rosenbrock", 2).unwrap();
        let t = run(&p, &noisy_suite(AccuracyForm::TrustRegion, 0.2), &MethodParams::trust_region(), &opts(1e-12, 20, 1)).unwrap();
        assert_eq!(t.termination, Termination::BudgetExhausted);
        assert_eq!(t.stopping_time, None);
        assert_eq!(t.records.len(), 20);
    }

    #[test]
    fn corrupted_draw_is_not_true() {
        let sfo = SfoSpec { corruption_magnitude: 1e6, ..SfoSpec::exact(AccuracyForm::TrustRegion) };
        let grad = DVector::from_vec(vec![1.0, 0.0]);
        let g = DVector::from_vec(vec![1e6, 0.0]);
        assert!(!classify_iteration(&sfo, &grad, &g, 0.1, 0.0, 0.0, 0.0));
        assert!(classify_iteration(&sfo, &grad, &grad, 0.1, 0.0, 0.0, 0.0));
        // e_k + e_k⁺ = 2·eps_f is still true
        assert!(classify_iteration(&sfo, &grad, &grad, 0.1, 0.25, 0.25, 0.25));
        assert!(!classify_iteration(&sfo, &grad, &grad, 0.1, 0.25, 0.250001, 0.25));
    }

    #[test]
    fn csv_round_trip() {
        let p = make_problem("quadratic", 2).unwrap();
        let t = run(&p, &noisy_suite(AccuracyForm::LineSearch, 0.2), &MethodParams::line_search(1e-2), &opts(1e-1, 300, 2)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,alpha_k,x_norm_grad,phi_k,z_k,theta_k,i_k,u_k,e_k,e_k_plus,model_decrease,accepted\n"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), t.records);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = make_problem("quadratic", 2).unwrap();
        let suite = OracleSuite::exact(AccuracyForm::LineSearch);
        let bad = MethodParams { gamma_dec: 1.0, ..MethodParams::line_search(0.1) };
        assert!(run(&p, &suite, &bad, &opts(1e-3, 10, 0)).is_err());
        let no_rej = MethodParams { method: MethodKind::LineSearch, ..MethodParams::trust_region() };
        assert!(run(&p, &suite, &no_rej, &opts(1e-3, 10, 0)).is_err());
        assert!(run(&p, &suite, &MethodParams::line_search(0.1), &opts(0.0, 10, 0)).is_err());
    }

    fn method_strategy() -> impl Strategy<Value = MethodKind> {
        prop_oneof![Just(MethodKind::TrustRegion), Just(MethodKind::LineSearch)]
    }

    fn on_ladder(alpha: f64, expected: f64) -> bool {
        (alpha - expected).abs() <= 1e-9 * expected
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn trace_invariants(
            method in method_strategy(),
            seed in 0u64..1_000,
            delta_1 in 0.0..0.6f64,
            gamma_inc in 1.2..3.0f64,
            gamma_dec in 0.3..0.9f64,
            problem in prop_oneof![Just("quadratic"), Just("rosenbrock"), Just("nonconvex-trig")],
        ) {
            let p = make_problem(problem, 2).unwrap();
            let form = match method {
                MethodKind::TrustRegion => AccuracyForm::TrustRegion,
                MethodKind::LineSearch => AccuracyForm::LineSearch,
            };
            let suite = noisy_suite(form, delta_1);
            let params = MethodParams { method, gamma_inc, gamma_dec, alpha_0: 0.1, eps_rej: Some(1e-2), ..MethodParams::trust_region() };
            let t = run(&p, &suite, &params, &opts(1e-3, 400, seed)).unwrap();
            let eps_f = suite.zeroth.eps_f();
            let (mut a, mut b) = (0u64, 0u64);
            for (i, r) in t.records.iter().enumerate() {
                // ladder membership, reconstructed from Θ alone
                prop_assert!(on_ladder(r.alpha_k, params.ladder(a, b)));
                if r.theta_k { a += 1; prop_assert!(r.accepted); } else { b += 1; }
                // Z_k ≥ 0
                prop_assert!(r.z_k >= 0.0);
                if let Some(next) = t.records.get(i + 1) {
                    let alpha_next = next.alpha_k;
                    prop_assert_eq!(r.u_k, is_large(r.alpha_k.max(alpha_next), t.alpha_bar));
                    if r.theta_k { prop_assert!(on_ladder(alpha_next, params.ladder(a, b))); }
                    if r.accepted {
                        prop_assert!(next.phi_k - r.phi_k <= 2.0 * eps_f + r.e_k + r.e_k_plus + 1e-12 * r.phi_k.abs().max(1.0));
                    } else {
                        prop_assert_eq!(next.phi_k, r.phi_k);
                    }
                }
            }
            prop_assert!(on_ladder(t.final_alpha, params.ladder(a, b)));
            let again = run(&p, &suite, &params, &opts(1e-3, 400, seed)).unwrap();
            prop_assert_eq!(&again, &t);
        }
    }
}
