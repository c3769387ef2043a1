//! Simulated zeroth- and first-order oracles.
//!
//! Samples carry their ground-truth error, but the error and the corruption
//! flag are only reachable through [`instrument`]. Method code works with
//! [`OracleSample::value`].

pub mod noise;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::ProblemInstance;
pub use noise::{NoiseFamily, NoiseModel, NoiseMoments};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle spec: {0}")]
    InvalidSpec(&'static str),
    #[error("no {family:?} noise law fits the spec: {reason}")]
    InfeasibleNoise { family: NoiseFamily, reason: &'static str },
}

/// A single oracle answer.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample<T> {
    value: T,
    true_error: T,
    was_corrupted: bool,
}

impl<T> OracleSample<T> {
    pub fn value(&self) -> &T {
        &self.value
    }

    pub fn into_value(self) -> T {
        self.value
    }
}

/// Harness-side access to what the method must not see.
pub mod instrument {
    use super::OracleSample;

    /// Signed error `value − truth`.
    pub fn true_error<T>(sample: &OracleSample<T>) -> &T {
        &sample.true_error
    }

    pub fn was_corrupted<T>(sample: &OracleSample<T>) -> bool {
        sample.was_corrupted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SzoSpec {
    pub eps_f: f64,
    pub q: f64,
    pub zeta_q: f64,
    pub zeta_2: f64,
    pub noise_family: NoiseFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subexp_nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subexp_b: Option<f64>,
}

impl SzoSpec {
    fn validate(&self) -> Result<(), OracleError> {
        if !(self.eps_f.is_finite() && self.eps_f >= 0.0) {
            return Err(OracleError::InvalidSpec("eps_f must be finite and nonnegative"));
        }
        if !(self.q.is_finite() && self.q >= 2.0) {
            return Err(OracleError::InvalidSpec("q must be at least 2"));
        }
        if !(self.zeta_q > 0.0 && self.zeta_2 > 0.0 && self.zeta_q.is_finite() && self.zeta_2.is_finite()) {
            return Err(OracleError::InvalidSpec("zeta_q and zeta_2 must be positive"));
        }
        if self.noise_family == NoiseFamily::Subexponential {
            match (self.subexp_nu, self.subexp_b) {
                (Some(nu), Some(b)) if nu > 0.0 && b > 0.0 => {}
                _ => return Err(OracleError::InvalidSpec("subexponential noise needs positive subexp_nu and subexp_b")),
            }
        }
        Ok(())
    }
}

/// SZO with its calibrated noise law.
#[derive(Debug, Clone, PartialEq)]
pub struct SzoOracle {
    spec: SzoSpec,
    model: NoiseModel,
}

impl SzoOracle {
    pub fn new(spec: SzoSpec) -> Result<SzoOracle, OracleError> {
        spec.validate()?;
        let budget = noise::NoiseBudget {
            eps_f: spec.eps_f,
            q: spec.q,
            zeta_q: spec.zeta_q,
            zeta_2: spec.zeta_2,
            subexp: spec.subexp_nu.zip(spec.subexp_b),
        };
        let model = NoiseModel::calibrate(spec.noise_family, budget)?;
        Ok(SzoOracle { spec, model })
    }

    pub fn spec(&self) -> &SzoSpec {
        &self.spec
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.model.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, problem: &ProblemInstance, x: &DVector<f64>, rng: &mut R) -> OracleSample<f64> {
        sample_scalar(problem.value_at(x), self.sample_error(rng), false)
    }
}

fn sample_scalar(truth: f64, error: f64, was_corrupted: bool) -> OracleSample<f64> {
    OracleSample { value: truth + error, true_error: error, was_corrupted }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzoSpec {
    pub eps_f: f64,
    pub eps_c: f64,
    pub delta_0: f64,
}

impl CzoSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.eps_f.is_finite() && self.eps_f >= 0.0 && self.eps_c.is_finite() && self.eps_c >= 0.0) {
            return Err(OracleError::InvalidSpec("eps_f and eps_c must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.delta_0) {
            return Err(OracleError::InvalidSpec("delta_0 must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Draws `(e, corrupted)`.
    pub fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, bool) {
        let corrupted = rng.random::<f64>() < self.delta_0;
        let clean = |rng: &mut R| if self.eps_f > 0.0 { rng.random_range(-self.eps_f..=self.eps_f) } else { 0.0 };
        if !corrupted {
            return (clean(rng), false);
        }
        if self.eps_c == 0.0 {
            // the outlier band ±[eps_f, eps_f] is degenerate
            return (clean(rng), true);
        }
        let magnitude = rng.random_range(self.eps_f..=self.eps_f + self.eps_c);
        let e = if rng.random::<bool>() { magnitude } else { -magnitude };
        (e, true)
    }

    pub fn sample<R: Rng + ?Sized>(&self, problem: &ProblemInstance, x: &DVector<f64>, rng: &mut R) -> OracleSample<f64> {
        let (e, corrupted) = self.sample_error(rng);
        sample_scalar(problem.value_at(x), e, corrupted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZerothOrderSpec {
    Szo(SzoSpec),
    Czo(CzoSpec),
}

impl ZerothOrderSpec {
    pub fn eps_f(&self) -> f64 {
        match self {
            ZerothOrderSpec::Szo(s) => s.eps_f,
            ZerothOrderSpec::Czo(c) => c.eps_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZerothOrderOracle {
    Szo(SzoOracle),
    Czo(CzoSpec),
}

impl ZerothOrderOracle {
    pub fn new(spec: ZerothOrderSpec) -> Result<ZerothOrderOracle, OracleError> {
        match spec {
            ZerothOrderSpec::Szo(s) => Ok(ZerothOrderOracle::Szo(SzoOracle::new(s)?)),
            ZerothOrderSpec::Czo(c) => {
                c.validate()?;
                Ok(ZerothOrderOracle::Czo(c))
            }
        }
    }

    pub fn eps_f(&self) -> f64 {
        match self {
            ZerothOrderOracle::Szo(s) => s.spec.eps_f,
            ZerothOrderOracle::Czo(c) => c.eps_f,
        }
    }

    pub fn spec(&self) -> ZerothOrderSpec {
        match self {
            ZerothOrderOracle::Szo(s) => ZerothOrderSpec::Szo(s.spec.clone()),
            ZerothOrderOracle::Czo(c) => ZerothOrderSpec::Czo(c.clone()),
        }
    }

    pub(crate) fn sample_with_truth<R: Rng + ?Sized>(&self, truth: f64, rng: &mut R) -> OracleSample<f64> {
        match self {
            ZerothOrderOracle::Szo(s) => sample_scalar(truth, s.sample_error(rng), false),
            ZerothOrderOracle::Czo(c) => {
                let (e, corrupted) = c.sample_error(rng);
                sample_scalar(truth, e, corrupted)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, problem: &ProblemInstance, x: &DVector<f64>, rng: &mut R) -> OracleSample<f64> {
        self.sample_with_truth(problem.value_at(x), rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyForm {
    TrustRegion,
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionStrategy {
    HugeRandom,
    NegatedScaled,
    ZeroVector,
    AntiDescent,
}

impl CorruptionStrategy {
    pub const ALL: [CorruptionStrategy; 4] = [
        CorruptionStrategy::HugeRandom,
        CorruptionStrategy::NegatedScaled,
        CorruptionStrategy::ZeroVector,
        CorruptionStrategy::AntiDescent,
    ];
}

fn default_magnitude() -> f64 {
    1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfoSpec {
    pub eps_g: f64,
    pub kappa: f64,
    #[serde(default)]
    pub tau: f64,
    pub delta_1: f64,
    pub accuracy_form: AccuracyForm,
    pub corruption_strategy: CorruptionStrategy,
    #[serde(default = "default_magnitude")]
    pub corruption_magnitude: f64,
}

/// Halvings of the line-search perturbation before it is dropped entirely.
const MAX_HALVINGS: usize = 1100;

impl SfoSpec {
    pub fn exact(accuracy_form: AccuracyForm) -> SfoSpec {
        SfoSpec {
            eps_g: 0.0,
            kappa: 0.0,
            tau: 0.0,
            delta_1: 0.0,
            accuracy_form,
            corruption_strategy: CorruptionStrategy::HugeRandom,
            corruption_magnitude: default_magnitude(),
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(nonneg(self.eps_g) && nonneg(self.kappa) && nonneg(self.tau)) {
            return Err(OracleError::InvalidSpec("eps_g, kappa and tau must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.delta_1) {
            return Err(OracleError::InvalidSpec("delta_1 must lie in [0, 1)"));
        }
        if !(self.corruption_magnitude.is_finite() && self.corruption_magnitude > 0.0) {
            return Err(OracleError::InvalidSpec("corruption_magnitude must be positive"));
        }
        Ok(())
    }

    /// Accuracy tolerance `r(α)` evaluated for an emitted estimate of norm `g_norm`.
    pub fn tolerance(&self, alpha: f64, g_norm: f64) -> f64 {
        match self.accuracy_form {
            AccuracyForm::TrustRegion => self.eps_g + self.kappa * alpha,
            AccuracyForm::LineSearch => self.eps_g.max(self.tau.min(self.kappa * alpha) * g_norm),
        }
    }

    /// Whether `g` is accurate for the true gradient `grad` at step size `alpha`.
    pub fn is_accurate(&self, grad: &DVector<f64>, g: &DVector<f64>, alpha: f64) -> bool {
        (g - grad).norm() <= self.tolerance(alpha, g.norm())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        problem: &ProblemInstance,
        x: &DVector<f64>,
        alpha: f64,
        rng: &mut R,
    ) -> OracleSample<DVector<f64>> {
        self.sample_with_gradient(&problem.gradient_at(x), alpha, rng)
    }

    pub(crate) fn sample_with_gradient<R: Rng + ?Sized>(
        &self,
        grad: &DVector<f64>,
        alpha: f64,
        rng: &mut R,
    ) -> OracleSample<DVector<f64>> {
        let corrupted = rng.random::<f64>() < self.delta_1;
        let g = if corrupted { self.corrupt(grad, rng) } else { self.clean(grad, alpha, rng) };
        let true_error = &g - grad;
        OracleSample { value: g, true_error, was_corrupted: corrupted }
    }

    fn clean<R: Rng + ?Sized>(&self, grad: &DVector<f64>, alpha: f64, rng: &mut R) -> DVector<f64> {
        let radius = match self.accuracy_form {
            AccuracyForm::TrustRegion => self.eps_g + self.kappa * alpha,
            AccuracyForm::LineSearch => self.eps_g + self.tau.min(self.kappa * alpha) * grad.norm(),
        };
        if radius == 0.0 {
            return grad.clone();
        }
        let mut w = uniform_ball(grad.len(), radius, rng);
        for _ in 0..MAX_HALVINGS {
            let g = grad + &w;
            if self.is_accurate(grad, &g, alpha) {
                return g;
            }
            w *= 0.5;
        }
        grad.clone()
    }

    fn corrupt<R: Rng + ?Sized>(&self, grad: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let m = self.corruption_magnitude;
        let norm = grad.norm();
        match self.corruption_strategy {
            CorruptionStrategy::ZeroVector => DVector::zeros(grad.len()),
            CorruptionStrategy::NegatedScaled => -m * grad,
            CorruptionStrategy::AntiDescent if norm > 0.0 => -(m / norm) * grad,
            CorruptionStrategy::HugeRandom | CorruptionStrategy::AntiDescent => m * (1.0 + norm) * unit_sphere(grad.len(), rng),
        }
    }
}

fn unit_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

fn uniform_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    unit_sphere(n, rng) * r
}

/// Both oracles a run talks to.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSuite {
    pub zeroth: ZerothOrderOracle,
    pub first: SfoSpec,
}

impl OracleSuite {
    pub fn new(zeroth: ZerothOrderSpec, first: SfoSpec) -> Result<OracleSuite, OracleError> {
        first.validate()?;
        Ok(OracleSuite { zeroth: ZerothOrderOracle::new(zeroth)?, first })
    }

    pub fn exact(accuracy_form: AccuracyForm) -> OracleSuite {
        OracleSuite {
            zeroth: ZerothOrderOracle::Czo(CzoSpec { eps_f: 0.0, eps_c: 0.0, delta_0: 0.0 }),
            first: SfoSpec::exact(accuracy_form),
        }
    }
}

/// Probability that a batch of `batch` draws contains no outlier.
pub fn minibatch_clean_prob(outlier_rate: f64, batch: u32) -> f64 {
    match i32::try_from(batch) {
        Ok(b) => (1.0 - outlier_rate).powi(b),
        Err(_) => (1.0 - outlier_rate).powf(f64::from(batch)),
    }
}
