//! Closed-form constants, thresholds and tail bounds for a configuration.
//!
//! Everything here is a pure function of the configuration. When `m` is not
//! an integer the general floor/ceil forms are used; they reduce to the usual
//! `1/(m+1)` and `m` coefficients when it is.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AnalysisContext, LemmaMode, MethodKind, MethodParams};
use crate::oracles::{NoiseFamily, OracleSuite, ZerothOrderOracle, ZerothOrderSpec};
use crate::problems::ProblemInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible constants: {0}")]
    Infeasible(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, TheoryError> {
    Err(TheoryError::InvalidInput(msg.into()))
}

/// Values this close to an integer are treated as that integer.
const SNAP_RTOL: f64 = 1e-9;

fn snap(v: f64) -> Option<f64> {
    let r = v.round();
    ((v - r).abs() <= SNAP_RTOL * v.abs().max(1.0)).then_some(r)
}

fn ceil_snapped(v: f64) -> f64 {
    snap(v).unwrap_or_else(|| v.ceil())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MConstants {
    pub m: f64,
    pub m_floor: u64,
    pub m_ceil: u64,
    pub integral: bool,
}

impl MConstants {
    /// `⌊m⌋(⌈m⌉+1)/(⌊m⌋+1)`, which is `m` for integral `m`.
    pub fn coefficient(&self) -> f64 {
        let (f, c) = (self.m_floor as f64, self.m_ceil as f64);
        f * (c + 1.0) / (f + 1.0)
    }

    /// `1/(⌊m⌋+1)`
    pub fn base(&self) -> f64 {
        1.0 / (self.m_floor as f64 + 1.0)
    }

    /// `⌊m⌋/(⌊m⌋+1)`
    pub fn d_factor(&self) -> f64 {
        let f = self.m_floor as f64;
        f / (f + 1.0)
    }
}

/// `m = −ln γ_inc / ln γ_dec`
pub fn compute_m(gamma_inc: f64, gamma_dec: f64) -> Result<MConstants, TheoryError> {
    if !(gamma_inc > 1.0 && gamma_inc.is_finite()) || !(gamma_dec > 0.0 && gamma_dec < 1.0) {
        return invalid("need gamma_inc > 1 > gamma_dec > 0");
    }
    let raw = -gamma_inc.ln() / gamma_dec.ln();
    Ok(match snap(raw) {
        Some(r) => MConstants { m: r, m_floor: r as u64, m_ceil: r as u64, integral: true },
        None => MConstants { m: raw, m_floor: raw.floor() as u64, m_ceil: raw.ceil() as u64, integral: false },
    })
}

/// `⌈(ln ᾱ − ln α₀)/ln γ_dec⌉`
pub fn decrease_steps(alpha_bar: f64, alpha_0: f64, gamma_dec: f64) -> f64 {
    ceil_snapped((alpha_bar.ln() - alpha_0.ln()) / gamma_dec.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Szo,
    Czo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regime {
    Szo { eps_f: f64 },
    Czo { eps_f: f64, eps_c: f64, delta_0: f64 },
}

impl Regime {
    pub fn from_spec(spec: &ZerothOrderSpec) -> Regime {
        match spec {
            ZerothOrderSpec::Szo(s) => Regime::Szo { eps_f: s.eps_f },
            ZerothOrderSpec::Czo(c) => Regime::Czo { eps_f: c.eps_f, eps_c: c.eps_c, delta_0: c.delta_0 },
        }
    }

    pub fn kind(&self) -> RegimeKind {
        match self {
            Regime::Szo { .. } => RegimeKind::Szo,
            Regime::Czo { .. } => RegimeKind::Czo,
        }
    }

    pub fn eps_f(&self) -> f64 {
        match *self {
            Regime::Szo { eps_f } | Regime::Czo { eps_f, .. } => eps_f,
        }
    }

    /// Uniform bound `μ` on `E[E_k + E_k⁺]`.
    pub fn mu(&self) -> f64 {
        match *self {
            Regime::Szo { eps_f } => 2.0 * eps_f,
            Regime::Czo { eps_f, eps_c, delta_0 } => 2.0 * eps_f + 2.0 * delta_0 * eps_c,
        }
    }

    /// `2ε_f + μ`
    pub fn noise_level(&self) -> f64 {
        2.0 * self.eps_f() + self.mu()
    }
}

pub fn p_m_threshold(regime: &Regime, m: &MConstants, h_eps: f64) -> f64 {
    m.base() + m.coefficient() * regime.noise_level() / h_eps
}

/// `t > R/(p̂ − p_m − s/h)`; `None` when the denominator is not positive.
pub fn t_threshold(r: f64, p_hat: f64, p_m: f64, s: f64, h_eps: f64) -> Option<f64> {
    let denom = p_hat - p_m - s / h_eps;
    (denom > 0.0).then(|| r / denom)
}

/// `(R, d)` with `R = coefficient·Z₀/h + d`.
pub fn r_term(m: &MConstants, z0: f64, h_eps: f64, alpha_bar: f64, alpha_0: f64, gamma_dec: f64) -> (f64, f64) {
    let d = m.d_factor() * decrease_steps(alpha_bar, alpha_0, gamma_dec);
    (m.coefficient() * z0 / h_eps + d, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrConstants {
    pub eta: f64,
    pub eta_upper: f64,
    /// `ᾱ/ε` before capping at `α₀`.
    pub alpha_bar_coeff: f64,
    pub alpha_bar_raw: f64,
    pub alpha_bar: f64,
    pub c_prog: f64,
    pub h_eps_raw: f64,
    pub h_eps: f64,
    /// The stated lower bound on `ε`.
    pub eps_floor: f64,
    /// Smallest `ε` for which `p_m ≤ p_lower` once `h(ε)` is substituted.
    pub eps_floor_drift: f64,
}

pub fn tr_eta_upper(params: &MethodParams) -> f64 {
    let a = (1.0 - params.eta_1) * params.kappa_fcd;
    a / (a + 2.0)
}

#[allow(clippy::too_many_arguments)]
pub fn tr_constants(
    params: &MethodParams,
    regime: &Regime,
    eps_g: f64,
    kappa: f64,
    lipschitz_l: f64,
    epsilon: f64,
    eta: Option<f64>,
    p_lower: f64,
    m: &MConstants,
) -> Result<TrConstants, TheoryError> {
    let eta_upper = tr_eta_upper(params);
    let eta = eta.unwrap_or(eta_upper / 2.0);
    if !(eta > 0.0 && eta < eta_upper) {
        return Err(TheoryError::Infeasible(format!("eta = {eta} lies outside (0, {eta_upper})")));
    }
    let a = (1.0 - params.eta_1) * params.kappa_fcd;
    let numerator = a * (1.0 - eta) - 2.0 * eta;
    if numerator <= 0.0 {
        return Err(TheoryError::Infeasible(format!("alpha_bar numerator {numerator} is not positive")));
    }
    let alpha_bar_coeff = (numerator / (lipschitz_l + params.kappa_h + 2.0 * kappa + a * kappa)).min((1.0 - eta) / (kappa + params.eta_2));
    let c_prog = 0.5 * params.eta_1 * params.eta_2 * params.kappa_fcd * if params.kappa_h == 0.0 { 1.0 } else { (params.eta_2 / params.kappa_h).min(1.0) };
    let alpha_bar_raw = alpha_bar_coeff * epsilon;
    let alpha_bar = alpha_bar_raw.min(params.alpha_0);
    let h = |ab: f64| c_prog * (ab / params.gamma_inc).powi(2);
    let noise = m.coefficient() * regime.noise_level();
    let gap = p_lower - m.base();
    let (eps_floor, eps_floor_drift) = if noise == 0.0 {
        (eps_g / eta, eps_g / eta)
    } else if gap <= 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let root = (noise / (c_prog * gap)).sqrt();
        ((eps_g / eta).max(root), (eps_g / eta).max(params.gamma_inc / alpha_bar_coeff * root))
    };
    Ok(TrConstants {
        eta,
        eta_upper,
        alpha_bar_coeff,
        alpha_bar_raw,
        alpha_bar,
        c_prog,
        h_eps_raw: h(alpha_bar_raw),
        h_eps: h(alpha_bar),
        eps_floor,
        eps_floor_drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsConstants {
    pub eta: f64,
    pub eta_upper: f64,
    pub alpha_bar_raw: f64,
    pub alpha_bar: f64,
    /// `max{1/η, 1+τ}`
    pub accuracy_factor: f64,
    pub eps_rej_floor: f64,
}

impl LsConstants {
    /// `h(ε) = θᾱ/(γ_inc·factor²)·ε²`
    pub fn h_eps(&self, params: &MethodParams, epsilon: f64) -> f64 {
        params.theta * self.alpha_bar / (params.gamma_inc * self.accuracy_factor.powi(2)) * epsilon * epsilon
    }

    pub fn epsilon_resulting(&self, eps_rej: f64) -> f64 {
        self.accuracy_factor * eps_rej
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ls_constants(
    params: &MethodParams,
    regime: &Regime,
    eps_g: f64,
    kappa: f64,
    tau: f64,
    lipschitz_l: f64,
    eta: Option<f64>,
    p_lower: f64,
    m: &MConstants,
) -> Result<LsConstants, TheoryError> {
    let theta = params.theta;
    let eta_upper = (1.0 - theta) / (2.0 - theta);
    let eta = eta.unwrap_or(eta_upper / 2.0);
    if !(eta > 0.0 && eta < eta_upper) {
        return Err(TheoryError::Infeasible(format!("eta = {eta} lies outside (0, {eta_upper})")));
    }
    let second = 2.0 * (1.0 - 2.0 * eta - theta * (1.0 - eta)) / (lipschitz_l * (1.0 - eta));
    if second <= 0.0 {
        return Err(TheoryError::Infeasible(format!("alpha_bar curvature term {second} is not positive")));
    }
    let alpha_bar_raw = ((1.0 - theta) / (0.5 * lipschitz_l + kappa)).min(second);
    let alpha_bar = alpha_bar_raw.min(params.alpha_0);
    let noise = params.gamma_inc * m.coefficient() * regime.noise_level();
    let gap = p_lower - m.base();
    let eps_rej_floor = if noise == 0.0 {
        eps_g
    } else if gap <= 0.0 {
        f64::INFINITY
    } else {
        eps_g.max((noise / (theta * alpha_bar * gap)).sqrt())
    };
    Ok(LsConstants { eta, eta_upper, alpha_bar_raw, alpha_bar, accuracy_factor: (1.0 / eta).max(1.0 + tau), eps_rej_floor })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailVariant {
    #[default]
    Auto,
    /// Fuk–Nagaev with the q-th moment.
    General,
    Chebyshev,
    Bernstein,
    Hoeffding,
}

/// Tail bound `δ_t(s)` for the accumulated function-value error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum TailModel {
    FukNagaev { q: f64, zeta_q: f64, zeta_2: f64 },
    Chebyshev { sigma2: f64 },
    Bernstein { nu: f64, b: f64 },
    Hoeffding { range: f64 },
}

impl TailModel {
    pub fn for_oracle(spec: &ZerothOrderSpec, variant: TailVariant) -> Result<TailModel, TheoryError> {
        match (spec, variant) {
            (ZerothOrderSpec::Czo(c), TailVariant::Auto | TailVariant::Hoeffding) => Ok(TailModel::Hoeffding { range: c.eps_f + c.eps_c }),
            (ZerothOrderSpec::Czo(_), v) => invalid(format!("{v:?} tail bound needs an SZO oracle")),
            (ZerothOrderSpec::Szo(_), TailVariant::Hoeffding) => invalid("Hoeffding tail bound needs a CZO oracle"),
            (ZerothOrderSpec::Szo(s), TailVariant::Bernstein) | (ZerothOrderSpec::Szo(s), TailVariant::Auto)
                if s.noise_family == NoiseFamily::Subexponential =>
            {
                match (s.subexp_nu, s.subexp_b) {
                    (Some(nu), Some(b)) => Ok(TailModel::Bernstein { nu, b }),
                    _ => invalid("Bernstein tail bound needs subexp_nu and subexp_b"),
                }
            }
            (ZerothOrderSpec::Szo(_), TailVariant::Bernstein) => invalid("Bernstein tail bound needs subexponential noise"),
            (ZerothOrderSpec::Szo(s), TailVariant::Chebyshev) => Ok(TailModel::Chebyshev { sigma2: s.zeta_2 }),
            (ZerothOrderSpec::Szo(s), TailVariant::Auto) if s.q == 2.0 => Ok(TailModel::Chebyshev { sigma2: s.zeta_2 }),
            (ZerothOrderSpec::Szo(s), _) => Ok(TailModel::FukNagaev { q: s.q, zeta_q: s.zeta_q, zeta_2: s.zeta_2 }),
        }
    }

    /// `δ_t(s)`, uncapped.
    pub fn noise_tail(&self, t: f64, s: f64) -> f64 {
        match *self {
            TailModel::FukNagaev { q, zeta_q, zeta_2 } => {
                let gaussian = (-s * s * t / (2.0 * (q + 2.0).powi(2) * q.exp() * zeta_2)).exp();
                let polynomial = (1.0 + 2.0 / q).powf(q) * 2f64.powf(q) * zeta_q / (s.powf(q) * t.powf(q - 1.0));
                gaussian + polynomial
            }
            TailModel::Chebyshev { sigma2 } => 2.0 * sigma2 / (s * s * t),
            TailModel::Bernstein { nu, b } => (-(s * s / (8.0 * nu * nu)).min(s / (4.0 * b)) * t).exp(),
            TailModel::Hoeffding { range } => (-s * s * t / (2.0 * range * range)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub azuma: f64,
    pub noise: f64,
    /// `min{1, azuma + noise}`, or 1 at or below the threshold.
    pub total: f64,
}

/// Upper bound on `P(T_ε > t)`.
pub fn tail_bound(model: &TailModel, t: f64, s: f64, p: f64, p_hat: f64, t_threshold: f64) -> Result<TailBound, TheoryError> {
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("p = {p} must lie in (0, 1]"));
    }
    if !(p_hat >= 0.0 && p_hat < p) {
        return invalid(format!("p_hat = {p_hat} must lie in [0, p = {p})"));
    }
    if !(s >= 0.0 && t > 0.0) {
        return invalid("need s ≥ 0 and t > 0");
    }
    let azuma = (-(p - p_hat).powi(2) * t / (2.0 * p * p)).exp();
    let noise = model.noise_tail(t, s);
    let total = if t <= t_threshold { 1.0 } else { (azuma + noise).min(1.0) };
    Ok(TailBound { azuma, noise, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PLowerSource {
    /// Composed from the oracle parameters.
    Composed,
    Configured,
    /// Fraction of true iterations in a pilot run.
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PLowerMethod {
    Composed,
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PLowerSetting {
    Value(f64),
    Method(PLowerMethod),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PLower {
    pub value: f64,
    pub source: PLowerSource,
}

const P_LOWER_DRAWS: usize = 100_000;
const P_LOWER_SEED: u64 = 0x9e37_79b9;

/// Lower bound on the probability of a true iteration implied by the oracles.
///
/// For the SZO the probability of `E + E⁺ > 2ε_f` is estimated from a fixed
/// stream of draws.
pub fn composed_p_lower(suite: &OracleSuite) -> f64 {
    let delta_1 = suite.first.delta_1;
    match &suite.zeroth {
        ZerothOrderOracle::Czo(c) => 1.0 - delta_1 - 2.0 * c.delta_0,
        ZerothOrderOracle::Szo(o) => {
            let mut rng = ChaCha8Rng::seed_from_u64(P_LOWER_SEED);
            let eps_f = o.spec().eps_f;
            let model = o.model();
            let exceed = (0..P_LOWER_DRAWS)
                .filter(|_| model.sample_magnitude(&mut rng) + model.sample_magnitude(&mut rng) > 2.0 * eps_f)
                .count();
            1.0 - delta_1 - exceed as f64 / P_LOWER_DRAWS as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonTarget {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl EpsilonTarget {
    pub const AUTO: EpsilonTarget = EpsilonTarget::Auto(AutoTag::Auto);
}

/// Safety factor applied to the lower bound when `epsilon = "auto"`.
pub const AUTO_SAFETY: f64 = 2.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_lower: Option<PLowerSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<f64>,
    #[serde(default)]
    pub tail_variant: TailVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub method: MethodKind,
    pub regime: Regime,
    pub m: f64,
    pub m_floor: u64,
    pub m_ceil: u64,
    pub m_integral: bool,
    pub eta: f64,
    pub eta_upper: f64,
    pub lipschitz_l: f64,
    pub alpha_0: f64,
    pub alpha_bar_raw: f64,
    pub alpha_bar: f64,
    pub c_prog: Option<f64>,
    pub epsilon: f64,
    pub eps_rej: Option<f64>,
    pub h_eps: f64,
    pub eps_floor: Option<f64>,
    pub eps_floor_drift: Option<f64>,
    pub eps_rej_floor: Option<f64>,
    pub epsilon_resulting: Option<f64>,
    pub p_lower: f64,
    pub p_lower_source: PLowerSource,
    pub mu: f64,
    pub p_m: f64,
    pub z0: f64,
    pub d: f64,
    pub r: f64,
    pub s: Option<f64>,
    pub p_hat: Option<f64>,
    /// `R/(p̂ − p_m − s/h)`
    pub t_threshold_stated: Option<f64>,
    /// `R/(p̂ − p_m − c·s/h)` with `c = ⌊m⌋(⌈m⌉+1)/(⌊m⌋+1)`, at least the stated value.
    pub t_threshold: Option<f64>,
    pub tail_model: TailModel,
    pub feasible: bool,
    pub infeasible_reason: Option<String>,
    pub lemma_mode: LemmaMode,
}

impl TheoryReport {
    pub fn analysis(&self) -> AnalysisContext {
        AnalysisContext { alpha_bar: self.alpha_bar, h_eps: self.h_eps, lemma_mode: self.lemma_mode }
    }

    /// Tail bound at `t` for the report's `(s, p̂)`; `None` when infeasible.
    pub fn tail_bound(&self, t: f64) -> Option<TailBound> {
        let (s, p_hat, thr) = (self.s?, self.p_hat?, self.t_threshold?);
        tail_bound(&self.tail_model, t, s, self.p_lower.min(1.0), p_hat, thr).ok()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"));
        let _ = writeln!(out, "method            {:?}", self.method);
        let _ = writeln!(out, "oracle regime     {:?}", self.regime.kind());
        let _ = writeln!(out, "m                 {} (floor {}, ceil {}, integral {})", self.m, self.m_floor, self.m_ceil, self.m_integral);
        let _ = writeln!(out, "eta               {:.6e} in (0, {:.6e})", self.eta, self.eta_upper);
        let _ = writeln!(out, "alpha_bar         {:.6e} (formula {:.6e}, alpha_0 {:.6e})", self.alpha_bar, self.alpha_bar_raw, self.alpha_0);
        let _ = writeln!(out, "C_prog            {}", opt(self.c_prog));
        let _ = writeln!(out, "epsilon           {:.6e}", self.epsilon);
        let _ = writeln!(out, "eps_rej           {}", opt(self.eps_rej));
        let _ = writeln!(out, "h(epsilon)        {:.6e}", self.h_eps);
        let _ = writeln!(out, "eps floor         {}", opt(self.eps_floor));
        let _ = writeln!(out, "eps floor (drift) {}", opt(self.eps_floor_drift));
        let _ = writeln!(out, "eps_rej floor     {}", opt(self.eps_rej_floor));
        let _ = writeln!(out, "p_lower           {:.6} ({:?})", self.p_lower, self.p_lower_source);
        let _ = writeln!(out, "p_m               {:.6e}", self.p_m);
        let _ = writeln!(out, "Z_0, d, R         {:.6e}, {}, {:.6e}", self.z0, self.d, self.r);
        let _ = writeln!(out, "s, p_hat          {}, {}", opt(self.s), opt(self.p_hat));
        let _ = writeln!(out, "t threshold       {} (stated form {})", opt(self.t_threshold), opt(self.t_threshold_stated));
        let _ = writeln!(out, "lemma checks      {:?}", self.lemma_mode);
        match &self.infeasible_reason {
            Some(r) => {
                let _ = writeln!(out, "regime            infeasible: {r}");
            }
            None => {
                let _ = writeln!(out, "regime            feasible");
            }
        }
        out
    }
}

/// Builds the report and returns the method parameters with `eps_rej`
/// resolved for line search.
pub fn build_report(
    problem: &ProblemInstance,
    suite: &OracleSuite,
    params: &MethodParams,
    target: EpsilonTarget,
    settings: &TheorySettings,
    p_lower: PLower,
) -> Result<(TheoryReport, MethodParams), TheoryError> {
    params.validate().map_err(|e| TheoryError::InvalidInput(e.to_string()))?;
    if !(p_lower.value.is_finite()) {
        return invalid("p_lower must be finite");
    }
    let m = compute_m(params.gamma_inc, params.gamma_dec)?;
    let spec = suite.zeroth.spec();
    let regime = Regime::from_spec(&spec);
    let sfo = &suite.first;
    let l = problem.lipschitz_l();
    let x0 = params.start(problem).map_err(|e| TheoryError::InvalidInput(e.to_string()))?;
    let z0 = problem.value_at(&x0) - problem.lower_bound();
    let tail_model = TailModel::for_oracle(&spec, settings.tail_variant)?;
    let eps_f_matches = params.eps_f_assumed.is_none_or(|e| e == regime.eps_f());
    let drift_ok = p_lower.value > m.base();
    let mut resolved = params.clone();

    let auto_from = |floor: f64, what: &str| -> Result<f64, TheoryError> {
        if floor.is_finite() && floor > 0.0 {
            Ok(AUTO_SAFETY * floor)
        } else {
            Err(TheoryError::Infeasible(format!("automatic {what} needs a finite positive lower bound, got {floor}")))
        }
    };

    let (eta, eta_upper, alpha_bar_raw, alpha_bar, c_prog, epsilon, eps_rej, h_eps, floors, enforced) = match params.method {
        MethodKind::TrustRegion => {
            let probe = tr_constants(params, &regime, sfo.eps_g, sfo.kappa, l, 1.0, settings.eta, p_lower.value, &m)?;
            let epsilon = match target {
                EpsilonTarget::Value(e) if e > 0.0 => e,
                EpsilonTarget::Value(e) => return invalid(format!("epsilon = {e} must be positive")),
                EpsilonTarget::Auto(_) => auto_from(probe.eps_floor, "epsilon")?,
            };
            let c = tr_constants(params, &regime, sfo.eps_g, sfo.kappa, l, epsilon, settings.eta, p_lower.value, &m)?;
            let enforced = drift_ok && epsilon > c.eps_floor;
            (
                c.eta,
                c.eta_upper,
                c.alpha_bar_raw,
                c.alpha_bar,
                Some(c.c_prog),
                epsilon,
                None,
                c.h_eps,
                [Some(c.eps_floor), Some(c.eps_floor_drift), None, None],
                enforced,
            )
        }
        MethodKind::LineSearch => {
            let c = ls_constants(params, &regime, sfo.eps_g, sfo.kappa, sfo.tau, l, settings.eta, p_lower.value, &m)?;
            let (eps_rej, epsilon) = match target {
                EpsilonTarget::Auto(_) => {
                    let r = auto_from(c.eps_rej_floor, "eps_rej")?;
                    (r, c.epsilon_resulting(r))
                }
                EpsilonTarget::Value(e) if e > 0.0 => (params.eps_rej.unwrap_or(e / c.accuracy_factor), e),
                EpsilonTarget::Value(e) => return invalid(format!("epsilon = {e} must be positive")),
            };
            resolved.eps_rej = Some(eps_rej);
            let resulting = c.epsilon_resulting(eps_rej);
            let h_eps = c.h_eps(params, resulting);
            let enforced = drift_ok && eps_rej >= c.eps_rej_floor && epsilon >= resulting * (1.0 - 1e-12);
            (
                c.eta,
                c.eta_upper,
                c.alpha_bar_raw,
                c.alpha_bar,
                None,
                epsilon,
                Some(eps_rej),
                h_eps,
                [None, None, Some(c.eps_rej_floor), Some(resulting)],
                enforced,
            )
        }
    };

    let p_m = p_m_threshold(&regime, &m, h_eps);
    let (r, d) = r_term(&m, z0, h_eps, alpha_bar, params.alpha_0, params.gamma_dec);
    let gap = p_lower.value - p_m;
    let coefficient = m.coefficient();
    let mut infeasible_reason = None;
    let (s, p_hat) = if gap > 0.0 {
        let s = settings.s.unwrap_or(h_eps * gap / (4.0 * coefficient));
        let p_hat = settings.p_hat.unwrap_or(p_m + coefficient * s / h_eps + gap / 2.0);
        if !(s >= 0.0) {
            infeasible_reason = Some(format!("s = {s} must be nonnegative"));
        } else if !(p_hat < p_lower.value) {
            infeasible_reason = Some(format!("p_hat = {p_hat} must be below p_lower = {}", p_lower.value));
        }
        (Some(s), Some(p_hat))
    } else {
        infeasible_reason = Some(format!("p_lower = {} does not exceed p_m = {p_m}", p_lower.value));
        (None, None)
    };
    let (t_stated, t_used) = match (s, p_hat, &infeasible_reason) {
        (Some(s), Some(p_hat), None) => {
            let stated = t_threshold(r, p_hat, p_m, s, h_eps);
            let used = t_threshold(r, p_hat, p_m, coefficient * s, h_eps);
            if used.is_none() {
                infeasible_reason = Some(format!("p_hat = {p_hat} leaves no room above p_m + c·s/h"));
            }
            (stated, used.map(|u| u.max(stated.unwrap_or(0.0))))
        }
        _ => (None, None),
    };
    let lemma_mode = if enforced && eps_f_matches { LemmaMode::Enforced } else { LemmaMode::Advisory };

    let report = TheoryReport {
        method: params.method,
        regime,
        m: m.m,
        m_floor: m.m_floor,
        m_ceil: m.m_ceil,
        m_integral: m.integral,
        eta,
        eta_upper,
        lipschitz_l: l,
        alpha_0: params.alpha_0,
        alpha_bar_raw,
        alpha_bar,
        c_prog,
        epsilon,
        eps_rej,
        h_eps,
        eps_floor: floors[0],
        eps_floor_drift: floors[1],
        eps_rej_floor: floors[2],
        epsilon_resulting: floors[3],
        p_lower: p_lower.value,
        p_lower_source: p_lower.source,
        mu: regime.mu(),
        p_m,
        z0,
        d,
        r,
        s,
        p_hat,
        t_threshold_stated: t_stated,
        t_threshold: t_used,
        tail_model,
        feasible: infeasible_reason.is_none(),
        infeasible_reason,
        lemma_mode,
    };
    Ok((report, resolved))
}

/// Analysis context used by the engine when none is supplied: composed
/// `p_lower`, default settings, and `ᾱ = α₀` with checks skipped when the
/// constants cannot be formed.
pub fn default_analysis(problem: &ProblemInstance, suite: &OracleSuite, params: &MethodParams, epsilon: f64) -> AnalysisContext {
    let p_lower = PLower { value: composed_p_lower(suite), source: PLowerSource::Composed };
    match build_report(problem, suite, params, EpsilonTarget::Value(epsilon), &TheorySettings::default(), p_lower) {
        Ok((report, _)) => report.analysis(),
        Err(_) => AnalysisContext { alpha_bar: params.alpha_0, h_eps: 0.0, lemma_mode: LemmaMode::Skipped },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{AccuracyForm, CzoSpec, SfoSpec, SzoSpec};
    use crate::problems::make_problem;
    use proptest::prelude::*;

    fn czo(eps_f: f64, eps_c: f64, delta_0: f64) -> Regime {
        Regime::Czo { eps_f, eps_c, delta_0 }
    }

    #[test]
    fn m_examples() {
        let m = compute_m(2.0, 0.5).unwrap();
        assert_eq!((m.m, m.m_floor, m.m_ceil, m.integral), (1.0, 1, 1, true));
        let m = compute_m(2.0, 2f64.powf(-1.0 / 3.0)).unwrap();
        assert_eq!((m.m, m.integral), (3.0, true));
        let m = compute_m(2.0, 2f64.powf(-1.0 / 9.0)).unwrap();
        assert_eq!(m.m, 9.0);
        let m = compute_m(1.5, 0.9).unwrap();
        assert!((m.m - 3.848_359_184_430_833).abs() < 1e-12);
        assert_eq!((m.m_floor, m.m_ceil, m.integral), (3, 4, false));
        assert!(compute_m(1.0, 0.5).is_err());
    }

    #[test]
    fn general_coefficients_reduce_for_integral_m() {
        let m = compute_m(2.0, 2f64.powf(-1.0 / 3.0)).unwrap();
        assert_eq!(m.coefficient(), 3.0);
        assert_eq!(m.base(), 0.25);
        assert_eq!(m.d_factor(), 0.75);
    }

    #[test]
    fn tr_example_constants() {
        let params = MethodParams { eta_1: 0.5, eta_2: 0.5, kappa_fcd: 0.5, kappa_h: 0.0, alpha_0: 1e9, ..MethodParams::trust_region() };
        assert!((tr_eta_upper(&params) - 1.0 / 9.0).abs() < 1e-15);
        let m = compute_m(2.0, 0.5).unwrap();
        for l in [1.0, 10.0, 6402.0] {
            let c = tr_constants(&params, &czo(0.0, 0.0, 0.0), 0.0, 0.0, l, 2.0, Some(0.1), 0.9, &m).unwrap();
            assert!((c.alpha_bar_coeff - 0.025 / l).abs() < 1e-15 / l);
            assert!((c.alpha_bar - 0.05 / l).abs() < 1e-15);
            assert_eq!(c.eps_floor, 0.0);
        }
        assert!(tr_constants(&params, &czo(0.0, 0.0, 0.0), 0.0, 0.0, 1.0, 1.0, Some(0.2), 0.9, &m).is_err());
    }

    #[test]
    fn tr_h_is_quadratic() {
        let params = MethodParams { alpha_0: 1e9, ..MethodParams::trust_region() };
        let m = compute_m(2.0, 0.5).unwrap();
        let h = |e| tr_constants(&params, &czo(0.01, 0.1, 0.1), 0.0, 0.5, 3.0, e, None, 0.8, &m).unwrap().h_eps;
        assert!((h(0.2) / h(0.1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ls_example_constants() {
        let params = MethodParams { theta: 0.5, alpha_0: 10.0, ..MethodParams::line_search(0.1) };
        let m = compute_m(2.0, 0.5).unwrap();
        let c = ls_constants(&params, &Regime::Szo { eps_f: 0.0 }, 0.0, 0.0, 0.0, 1.0, Some(0.1), 0.9, &m).unwrap();
        assert!((c.alpha_bar - 0.777_777_777_777_777_8).abs() < 1e-15);
        assert_eq!(c.accuracy_factor, 10.0);
        assert_eq!(c.epsilon_resulting(0.01), 0.1);
        assert_eq!(c.eps_rej_floor, 0.0);
    }

    #[test]
    fn p_m_examples() {
        let m1 = compute_m(2.0, 0.5).unwrap();
        assert_eq!(p_m_threshold(&Regime::Szo { eps_f: 0.0 }, &m1, 1.0), 0.5);
        assert!((p_m_threshold(&czo(1e-4, 0.1, 0.01), &m1, 0.01) - 0.74).abs() < 1e-12);
        let m3 = compute_m(2.0, 2f64.powf(-1.0 / 3.0)).unwrap();
        assert_eq!(p_m_threshold(&Regime::Szo { eps_f: 0.0 }, &m3, 0.3), 0.25);
        assert_eq!(p_m_threshold(&czo(0.0, 0.0, 0.0), &m3, 0.3), 0.25);
    }

    #[test]
    fn threshold_examples() {
        assert!((t_threshold(100.0, 0.6, 0.5, 0.0, 1.0).unwrap() - 1000.0).abs() < 1e-9);
        assert_eq!(t_threshold(100.0, 0.6, 0.5, 0.1, 1.0), None);
    }

    #[test]
    fn hoeffding_at_full_range() {
        let model = TailModel::Hoeffding { range: 0.3 };
        assert!((model.noise_tail(2.0, 0.3) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn tail_bound_is_trivial_below_threshold() {
        let model = TailModel::Hoeffding { range: 1.0 };
        let b = tail_bound(&model, 10.0, 0.5, 0.8, 0.6, 100.0).unwrap();
        assert_eq!(b.total, 1.0);
        assert!(tail_bound(&model, 10.0, 0.5, 0.8, 0.9, 1.0).is_err());
    }

    #[test]
    fn r_term_by_hand() {
        let m = compute_m(2.0, 0.5).unwrap();
        // d = ½·⌈ln(1/8)/ln ½⌉ = 1.5, R = 2/0.5 + 1.5
        let (r, d) = r_term(&m, 2.0, 0.5, 0.125, 1.0, 0.5);
        assert_eq!(d, 1.5);
        assert_eq!(r, 5.5);
    }

    #[test]
    fn composed_p_lower_czo() {
        let suite = OracleSuite::new(
            ZerothOrderSpec::Czo(CzoSpec { eps_f: 1e-4, eps_c: 0.05, delta_0: 0.05 }),
            SfoSpec { delta_1: 0.2, ..SfoSpec::exact(AccuracyForm::TrustRegion) },
        )
        .unwrap();
        assert!((composed_p_lower(&suite) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn composed_p_lower_szo_is_probability() {
        let suite = OracleSuite::new(
            ZerothOrderSpec::Szo(SzoSpec {
                eps_f: 0.01,
                q: 3.0,
                zeta_q: 1.0,
                zeta_2: 1.0,
                noise_family: NoiseFamily::ParetoMixture,
                subexp_nu: None,
                subexp_b: None,
            }),
            SfoSpec { delta_1: 0.1, ..SfoSpec::exact(AccuracyForm::TrustRegion) },
        )
        .unwrap();
        let p = composed_p_lower(&suite);
        assert!(p > 0.0 && p < 0.9);
    }

    #[test]
    fn auto_report_for_rosenbrock_czo() {
        let problem = make_problem("rosenbrock", 2).unwrap();
        let suite = OracleSuite::new(
            ZerothOrderSpec::Czo(CzoSpec { eps_f: 1e-4, eps_c: 0.05, delta_0: 0.05 }),
            SfoSpec { delta_1: 0.2, ..SfoSpec::exact(AccuracyForm::TrustRegion) },
        )
        .unwrap();
        let p = PLower { value: composed_p_lower(&suite), source: PLowerSource::Composed };
        let (rep, _) = build_report(&problem, &suite, &MethodParams::trust_region(), EpsilonTarget::AUTO, &TheorySettings::default(), p).unwrap();
        assert_eq!(rep.epsilon, 2.0 * rep.eps_floor.unwrap());
        assert_eq!(rep.lemma_mode, LemmaMode::Enforced);
        assert!(rep.eps_floor_drift.unwrap() > rep.eps_floor.unwrap());
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"alpha_bar\""));
    }

    proptest! {
        #[test]
        fn monotonicity(
            e1 in 1e-3..10.0f64,
            factor in 1.0..5.0f64,
            l in 0.5..100.0f64,
            kappa in 0.0..2.0f64,
            eps_f in 0.0..1e-2f64,
        ) {
            let params = MethodParams { alpha_0: 1.0, ..MethodParams::trust_region() };
            let m = compute_m(2.0, 0.5).unwrap();
            let regime = Regime::Szo { eps_f };
            let a = tr_constants(&params, &regime, 0.0, kappa, l, e1, None, 0.9, &m).unwrap();
            let b = tr_constants(&params, &regime, 0.0, kappa, l, e1 * factor, None, 0.9, &m).unwrap();
            prop_assert!(b.alpha_bar >= a.alpha_bar);
            if factor > 1.0 {
                prop_assert!(b.h_eps_raw > a.h_eps_raw);
            }
            prop_assert!(p_m_threshold(&regime, &m, b.h_eps_raw) <= p_m_threshold(&regime, &m, a.h_eps_raw));
        }

        #[test]
        fn threshold_decreases_in_p_hat(r in 1.0..1e4f64, p_m in 0.1..0.5f64, lo in 0.01..0.2f64, hi in 0.21..0.4f64) {
            let a = t_threshold(r, p_m + lo, p_m, 0.0, 1.0).unwrap();
            let b = t_threshold(r, p_m + hi, p_m, 0.0, 1.0).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn tail_bounds_are_probabilities_and_nonincreasing(
            t in 1.0..1e5f64,
            dt in 0.0..1e5f64,
            s in 1e-3..1.0f64,
            p in 0.3..1.0f64,
            frac in 0.0..0.99f64,
            q in 2.0..6.0f64,
        ) {
            let p_hat = p * frac;
            for model in [
                TailModel::FukNagaev { q, zeta_q: 0.1, zeta_2: 0.05 },
                TailModel::Chebyshev { sigma2: 0.05 },
                TailModel::Bernstein { nu: 0.2, b: 0.1 },
                TailModel::Hoeffding { range: 0.5 },
            ] {
                let a = tail_bound(&model, t, s, p, p_hat, 0.0).unwrap();
                let b = tail_bound(&model, t + dt, s, p, p_hat, 0.0).unwrap();
                prop_assert!((0.0..=1.0).contains(&a.total));
                prop_assert!(b.total <= a.total);
            }
        }
    }
}
