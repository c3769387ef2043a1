//! Monte Carlo compliance checks of oracle draws against their specs.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::stats::{bootstrap_se, centered_abs_moment, mean};
use crate::oracles::{instrument, OracleSuite, SfoSpec, ZerothOrderOracle};
use crate::problems::ProblemInstance;

pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Standard errors allowed between an estimate and its bound.
pub const SE_MULTIPLIER: f64 = 3.0;

/// Step sizes at which the gradient oracle is probed.
const PROBE_ALPHAS: [f64; 4] = [1e-4, 1e-2, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub estimate: f64,
    /// Bound or target the estimate is compared against.
    pub reference: f64,
    /// Allowed deviation; zero for exact assertions.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub draws: usize,
    pub seed: u64,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {:<40} estimate {:.6e} reference {:.6e} tolerance {:.3e}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.estimate,
                    c.reference,
                    c.tolerance
                )
            })
            .collect()
    }
}

fn binomial_check(name: &str, hits: usize, n: usize, rate: f64) -> ValidationCheck {
    let est = hits as f64 / n as f64;
    let tol = SE_MULTIPLIER * (rate * (1.0 - rate) / n as f64).sqrt();
    ValidationCheck { name: name.into(), passed: (est - rate).abs() <= tol, estimate: est, reference: rate, tolerance: tol }
}

/// One-sided: the estimate may exceed `bound` by at most three bootstrap SEs.
fn moment_check(name: &str, xs: &[f64], bound: f64, seed: u64, stat: impl Fn(&[f64]) -> f64 + Copy) -> ValidationCheck {
    let est = stat(xs);
    let tol = SE_MULTIPLIER * bootstrap_se(xs, BOOTSTRAP_RESAMPLES, seed, stat);
    ValidationCheck { name: name.into(), passed: est <= bound + tol, estimate: est, reference: bound, tolerance: tol }
}

pub fn validate_zeroth(oracle: &ZerothOrderOracle, draws: usize, seed: u64) -> Vec<ValidationCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match oracle {
        ZerothOrderOracle::Czo(spec) => {
            let bound = spec.eps_f + spec.eps_c;
            let mut worst = 0.0f64;
            let mut excess = 0usize;
            let mut corrupted = 0usize;
            for _ in 0..draws {
                let (e, c) = spec.sample_error(&mut rng);
                worst = worst.max(e.abs());
                if e.abs() > bound {
                    excess += 1;
                }
                if c {
                    corrupted += 1;
                }
            }
            vec![
                ValidationCheck { name: "czo hard bound".into(), passed: excess == 0, estimate: worst, reference: bound, tolerance: 0.0 },
                binomial_check("czo corrupted fraction", corrupted, draws, spec.delta_0),
            ]
        }
        ZerothOrderOracle::Szo(o) => {
            let spec = o.spec();
            let mags: Vec<f64> = (0..draws).map(|_| o.sample_error(&mut rng).abs()).collect();
            let q = spec.q;
            vec![
                moment_check("szo mean |e|", &mags, spec.eps_f, seed ^ 1, mean),
                moment_check("szo centered second moment", &mags, spec.zeta_2, seed ^ 2, |x| centered_abs_moment(x, 2.0)),
                moment_check("szo centered q-th moment", &mags, spec.zeta_q, seed ^ 3, move |x| centered_abs_moment(x, q)),
            ]
        }
    }
}

pub fn validate_first(sfo: &SfoSpec, problem: &ProblemInstance, x: &DVector<f64>, draws: usize, seed: u64) -> Vec<ValidationCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = problem.gradient_at(x);
    let (mut clean, mut inaccurate, mut corrupted) = (0usize, 0usize, 0usize);
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..draws {
        let alpha = PROBE_ALPHAS[i % PROBE_ALPHAS.len()];
        let s = sfo.sample(problem, x, alpha, &mut rng);
        if instrument::was_corrupted(&s) {
            corrupted += 1;
            continue;
        }
        clean += 1;
        let g = s.value();
        let excess = (g - &grad).norm() - sfo.tolerance(alpha, g.norm());
        worst_excess = worst_excess.max(excess);
        if !sfo.is_accurate(&grad, g, alpha) {
            inaccurate += 1;
        }
    }
    vec![
        ValidationCheck {
            name: format!("sfo clean-branch accuracy ({clean} draws)"),
            passed: inaccurate == 0,
            estimate: if clean == 0 { 0.0 } else { worst_excess },
            reference: 0.0,
            tolerance: 0.0,
        },
        binomial_check("sfo corrupted fraction", corrupted, draws, sfo.delta_1),
    ]
}

/// Runs every check for `suite` at `x`.
pub fn validate_oracles(suite: &OracleSuite, problem: &ProblemInstance, x: &DVector<f64>, draws: usize, seed: u64) -> ValidationReport {
    let mut checks = validate_zeroth(&suite.zeroth, draws, seed);
    checks.extend(validate_first(&suite.first, problem, x, draws, seed.wrapping_add(1)));
    ValidationReport { draws, seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{AccuracyForm, CorruptionStrategy, CzoSpec, NoiseFamily, SzoSpec, ZerothOrderSpec};
    use crate::problems::make_problem;

    #[test]
    fn czo_and_sfo_pass() {
        let p = make_problem("quadratic", 3).unwrap();
        let suite = OracleSuite::new(
            ZerothOrderSpec::Czo(CzoSpec { eps_f: 0.01, eps_c: 0.5, delta_0: 0.1 }),
            SfoSpec { eps_g: 0.01, kappa: 0.5, delta_1: 0.3, ..SfoSpec::exact(AccuracyForm::TrustRegion) },
        )
        .unwrap();
        let r = validate_oracles(&suite, &p, p.default_start(), 20_000, 4);
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn gaussian_szo_passes() {
        let p = make_problem("quadratic", 2).unwrap();
        let suite = OracleSuite::new(
            ZerothOrderSpec::Szo(SzoSpec {
                eps_f: 0.1,
                q: 2.0,
                zeta_q: 1.0,
                zeta_2: 1.0,
                noise_family: NoiseFamily::GaussianFolded,
                subexp_nu: None,
                subexp_b: None,
            }),
            SfoSpec { eps_g: 0.0, kappa: 0.1, tau: 0.5, delta_1: 0.2, corruption_strategy: CorruptionStrategy::AntiDescent, ..SfoSpec::exact(AccuracyForm::LineSearch) },
        )
        .unwrap();
        let r = validate_oracles(&suite, &p, p.default_start(), 20_000, 9);
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn misreported_rate_fails() {
        assert!(!binomial_check("x", 400, 1000, 0.3).passed);
        assert!(binomial_check("x", 300, 1000, 0.3).passed);
    }
}
