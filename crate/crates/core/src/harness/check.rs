//! Prefix checks of the pathwise inequalities on a recorded trace.
//!
//! (a) bounds large unsuccessful iterations by large successful ones and
//! holds for any trace started at `α₀ ≥ ᾱ`. (b) bounds the true iterations
//! and (c) adds the progress budget; both are only asserted on prefixes
//! where the per-iteration lemma conditions held.

use serde::Serialize;

use crate::engine::{is_large, IterationRecord, MethodParams, RunTrace};
use crate::theory::{compute_m, decrease_steps, MConstants, TheoryError};

/// Absolute slack for the real-valued inequalities (b) and (c).
const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InequalityId {
    #[serde(rename = "a")]
    LargeStepBalance,
    #[serde(rename = "b")]
    TrueIterationCount,
    #[serde(rename = "c")]
    ProgressBudget,
}

impl InequalityId {
    pub fn label(&self) -> &'static str {
        match self {
            InequalityId::LargeStepBalance => "a",
            InequalityId::TrueIterationCount => "b",
            InequalityId::ProgressBudget => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub id: InequalityId,
    pub holds: bool,
    /// Smallest `rhs − lhs` over checked prefixes; `+∞` when none were checked.
    pub margin: f64,
    pub prefixes_checked: usize,
    /// Length of the first violating prefix.
    pub first_violation: Option<usize>,
}

impl InequalityCheck {
    fn new(id: InequalityId) -> InequalityCheck {
        InequalityCheck { id, holds: true, margin: f64::INFINITY, prefixes_checked: 0, first_violation: None }
    }

    fn record(&mut self, t: usize, margin: f64, tol: f64) {
        self.prefixes_checked += 1;
        self.margin = self.margin.min(margin);
        if margin < -tol && self.holds {
            self.holds = false;
            self.first_violation = Some(t);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceContext {
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub alpha_0: f64,
    pub alpha_bar: f64,
    /// `h(ε)`; (c) is skipped when it is not positive.
    pub h_eps: f64,
    pub eps_f: f64,
    /// `φ` after the last record, when known.
    pub final_phi: Option<f64>,
}

impl TraceContext {
    pub fn from_trace(trace: &RunTrace, params: &MethodParams, eps_f: f64) -> TraceContext {
        TraceContext {
            gamma_inc: params.gamma_inc,
            gamma_dec: params.gamma_dec,
            alpha_0: trace.alpha_0,
            alpha_bar: trace.alpha_bar,
            h_eps: trace.h_eps,
            eps_f,
            final_phi: Some(trace.final_phi),
        }
    }
}

pub fn check_trace(trace: &RunTrace, params: &MethodParams, eps_f: f64) -> Result<Vec<InequalityCheck>, TheoryError> {
    check_records(&trace.records, &TraceContext::from_trace(trace, params, eps_f))
}

/// Checks (a), (b) and (c) on every prefix of `records`.
pub fn check_records(records: &[IterationRecord], ctx: &TraceContext) -> Result<Vec<InequalityCheck>, TheoryError> {
    let m: MConstants = compute_m(ctx.gamma_inc, ctx.gamma_dec)?;
    if !(ctx.alpha_bar > 0.0 && ctx.alpha_bar <= ctx.alpha_0 * (1.0 + 1e-12)) {
        return Err(TheoryError::InvalidInput(format!("need 0 < alpha_bar = {} ≤ alpha_0 = {}", ctx.alpha_bar, ctx.alpha_0)));
    }
    let steps = decrease_steps(ctx.alpha_bar, ctx.alpha_0, ctx.gamma_dec);
    let floor = m.m_floor as f64;
    let base = m.base();
    let z0 = records.first().map_or(0.0, |r| r.z_k);

    let mut a = InequalityCheck::new(InequalityId::LargeStepBalance);
    let mut b = InequalityCheck::new(InequalityId::TrueIterationCount);
    let mut c = InequalityCheck::new(InequalityId::ProgressBudget);
    let (mut large_fail, mut large_succ, mut trues, mut larges, mut noise) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut small_true_ok = true;
    let mut progress_ok = ctx.h_eps > 0.0;

    for (k, r) in records.iter().enumerate() {
        let t = k + 1;
        let theta = if r.theta_k { 1.0 } else { 0.0 };
        let u = if r.u_k { 1.0 } else { 0.0 };
        large_fail += u * (1.0 - theta);
        large_succ += u * theta;
        larges += u;
        if r.i_k {
            trues += 1.0;
        }
        let incurred = 2.0 * ctx.eps_f + r.e_k + r.e_k_plus;
        noise += incurred;
        if r.i_k && !r.u_k && !r.theta_k {
            small_true_ok = false;
        }
        if progress_ok && r.u_k && r.theta_k {
            let next = records.get(t).map(|n| n.phi_k).or(ctx.final_phi);
            progress_ok = match next {
                Some(next) => {
                    let slack = 64.0 * f64::EPSILON * r.phi_k.abs().max(next.abs()).max(1.0);
                    r.phi_k - next >= ctx.h_eps - incurred - slack
                }
                None => false,
            };
        }

        a.record(t, m.m_ceil as f64 * large_succ + steps - large_fail, 0.0);
        if small_true_ok {
            let rhs = floor / (floor + 1.0) * larges + base * t as f64;
            b.record(t, rhs - trues, CHECK_TOL);
        }
        if small_true_ok && progress_ok {
            let rhs = m.coefficient() * (z0 + noise) / ctx.h_eps + m.d_factor() * steps + base * t as f64;
            c.record(t, rhs - trues, CHECK_TOL * rhs.abs().max(1.0));
        }
    }
    Ok(vec![a, b, c])
}

/// Records for a prescribed success pattern, with step sizes following the ladder.
pub fn synthetic_records(gamma_inc: f64, gamma_dec: f64, alpha_0: f64, alpha_bar: f64, thetas: &[bool]) -> Vec<IterationRecord> {
    let mut alpha = alpha_0;
    thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let next = alpha * if theta { gamma_inc } else { gamma_dec };
            let r = IterationRecord {
                k,
                alpha_k: alpha,
                x_norm_grad: 1.0,
                phi_k: 0.0,
                z_k: 0.0,
                theta_k: theta,
                i_k: false,
                u_k: is_large(alpha.max(next), alpha_bar),
                e_k: 0.0,
                e_k_plus: 0.0,
                model_decrease: 0.0,
                accepted: theta,
            };
            alpha = next;
            r
        })
        .collect()
}
