//! Benchmark objectives with exact values, exact gradients and documented
//! smoothness constants.
//!
//! Every instance is immutable after construction, so one instance can be
//! shared by reference across concurrently running trials.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

/// Names accepted by [`make_problem`].
pub const REGISTERED_PROBLEMS: [&str; 4] = ["quadratic", "rosenbrock", "nonconvex-trig", "logistic-erm"];

/// Condition number of the `quadratic` family.
pub const QUADRATIC_CONDITION: f64 = 10.0;

/// Half-width of the box on which the rosenbrock Lipschitz constant is valid.
pub const ROSENBROCK_BOX: f64 = 2.0;

/// Number of frozen samples defining the `logistic-erm` risk.
pub const LOGISTIC_SAMPLES: usize = 1_000_000;

const LOGISTIC_SEED: u64 = 0x1061_5eed;
const LOGISTIC_CHUNK: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem `{0}` (registered: quadratic, rosenbrock, nonconvex-trig, logistic-erm)")]
    UnknownProblem(String),
    #[error("problem `{name}` does not support dim {dim}: {reason}")]
    IncompatibleDim { name: String, dim: usize, reason: &'static str },
    #[error("point has dimension {got}, problem expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Region on which `lipschitz_l` is a valid Lipschitz constant of the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipschitzDomain {
    Global,
    /// The box `[-r, r]^n`.
    Box(f64),
}

impl LipschitzDomain {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match *self {
            LipschitzDomain::Global => true,
            LipschitzDomain::Box(r) => x.iter().all(|v| v.abs() <= r),
        }
    }
}

#[derive(Debug, Clone)]
enum Objective {
    /// ½ xᵀ diag(d) x
    Quadratic { diag: DVector<f64> },
    Rosenbrock,
    NonconvexTrig,
    /// Mean of softplus(−zᵢᵀx) over frozen signed samples zᵢ = yᵢaᵢ, stored row-major.
    Logistic { signed_samples: Vec<f64>, truth: DVector<f64> },
}

/// A smooth objective together with the ground truth the analysis is stated
/// against: exact φ, exact ∇φ, a Lipschitz constant `L` and a lower bound φ*.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    name: String,
    dim: usize,
    objective: Objective,
    lipschitz_l: f64,
    lipschitz_domain: LipschitzDomain,
    lower_bound: f64,
    default_start: DVector<f64>,
}

/// Builds one of the registered benchmark problems.
pub fn make_problem(name: &str, dim: usize) -> Result<ProblemInstance, ProblemError> {
    let incompatible = |reason| ProblemError::IncompatibleDim { name: name.to_string(), dim, reason };
    if dim == 0 && REGISTERED_PROBLEMS.contains(&name) {
        return Err(incompatible("dimension must be positive"));
    }
    match name {
        "quadratic" => {
            if dim < 2 {
                return Err(incompatible("condition number 10 needs at least two eigenvalues"));
            }
            let diag = DVector::from_fn(dim, |i, _| {
                1.0 + (QUADRATIC_CONDITION - 1.0) * i as f64 / (dim - 1) as f64
            });
            Ok(ProblemInstance {
                name: name.to_string(),
                dim,
                objective: Objective::Quadratic { diag },
                lipschitz_l: QUADRATIC_CONDITION,
                lipschitz_domain: LipschitzDomain::Global,
                lower_bound: 0.0,
                default_start: DVector::from_element(dim, 1.0),
            })
        }
        "rosenbrock" => {
            if dim < 2 {
                return Err(incompatible("the chained form needs at least two coordinates"));
            }
            Ok(ProblemInstance {
                name: name.to_string(),
                dim,
                objective: Objective::Rosenbrock,
                lipschitz_l: rosenbrock_box_lipschitz(dim, ROSENBROCK_BOX),
                lipschitz_domain: LipschitzDomain::Box(ROSENBROCK_BOX),
                lower_bound: 0.0,
                default_start: DVector::from_fn(dim, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 }),
            })
        }
        "nonconvex-trig" => Ok(ProblemInstance {
            name: name.to_string(),
            dim,
            objective: Objective::NonconvexTrig,
            // |d²/dx² x²/(1+x²)| ≤ 2 and |d²/dx² 0.1 sin 5x| ≤ 2.5; the Hessian is diagonal.
            lipschitz_l: 4.5,
            lipschitz_domain: LipschitzDomain::Global,
            // x²/(1+x²) ≥ 0 and 0.1 sin(5x) ≥ −0.1 per coordinate.
            lower_bound: -0.1 * dim as f64,
            default_start: DVector::from_element(dim, 1.5),
        }),
        "logistic-erm" => Ok(make_logistic(dim)),
        other => Err(ProblemError::UnknownProblem(other.to_string())),
    }
}

/// Gershgorin bound on the chained-rosenbrock Hessian over `[-r, r]^n`.
fn rosenbrock_box_lipschitz(dim: usize, r: f64) -> f64 {
    (0..dim)
        .map(|i| {
            let mut diag = 0.0;
            let mut off = 0.0;
            if i + 1 < dim {
                // 1200 x_i² − 400 x_{i+1} + 2, coupling −400 x_i
                diag += 1200.0 * r * r + 400.0 * r + 2.0;
                off += 400.0 * r;
            }
            if i > 0 {
                diag += 200.0;
                off += 400.0 * r;
            }
            diag + off
        })
        .fold(0.0, f64::max)
}

fn make_logistic(dim: usize) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(LOGISTIC_SEED);
    let scale = 2.0 / (dim as f64).sqrt();
    let truth = DVector::from_fn(dim, |i, _| if i % 2 == 0 { scale } else { -scale });
    let mut signed = Vec::with_capacity(LOGISTIC_SAMPLES * dim);
    let mut row = vec![0.0; dim];
    for _ in 0..LOGISTIC_SAMPLES {
        let mut margin = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r = StandardNormal.sample(&mut rng);
            margin += *r * truth[j];
        }
        let u: f64 = rand::Rng::random(&mut rng);
        let label = if u < sigmoid(margin) { 1.0 } else { -1.0 };
        signed.extend(row.iter().map(|v| label * v));
    }
    // L = λ_max(mean zzᵀ)/4 for the empirical risk, exact for the frozen sample.
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    for z in signed.chunks_exact(dim) {
        for a in 0..dim {
            for b in a..dim {
                second[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            second[(a, b)] = second[(b, a)];
        }
    }
    second /= LOGISTIC_SAMPLES as f64;
    let lambda_max = second.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    ProblemInstance {
        name: "logistic-erm".to_string(),
        dim,
        objective: Objective::Logistic { signed_samples: signed, truth },
        lipschitz_l: 0.25 * lambda_max,
        lipschitz_domain: LipschitzDomain::Global,
        // the logistic loss is nonnegative
        lower_bound: 0.0,
        default_start: DVector::zeros(dim),
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

impl ProblemInstance {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz_l
    }

    pub fn lipschitz_domain(&self) -> LipschitzDomain {
        self.lipschitz_domain
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn default_start(&self) -> &DVector<f64> {
        &self.default_start
    }

    /// Ground-truth parameter of the `logistic-erm` data distribution.
    pub fn logistic_truth(&self) -> Option<&DVector<f64>> {
        match &self.objective {
            Objective::Logistic { truth, .. } => Some(truth),
            _ => None,
        }
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<(), ProblemError> {
        if x.len() != self.dim {
            return Err(ProblemError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// φ(x). Panics if `x` has the wrong dimension; use [`check_point`](Self::check_point)
    /// at API boundaries.
    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        match &self.objective {
            Objective::Quadratic { diag } => 0.5 * x.iter().zip(diag.iter()).map(|(v, d)| d * v * v).sum::<f64>(),
            Objective::Rosenbrock => x
                .as_slice()
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            Objective::NonconvexTrig => x.iter().map(|&v| v * v / (1.0 + v * v) + 0.1 * (5.0 * v).sin()).sum(),
            Objective::Logistic { signed_samples, .. } => {
                let dim = self.dim;
                let partial: Vec<f64> = signed_samples
                    .par_chunks(LOGISTIC_CHUNK * dim)
                    .map(|chunk| chunk.chunks_exact(dim).map(|z| softplus(-dot(z, x))).sum::<f64>())
                    .collect();
                partial.iter().sum::<f64>() / LOGISTIC_SAMPLES as f64
            }
        }
    }

    /// ∇φ(x). Panics on dimension mismatch like [`value_at`](Self::value_at).
    pub fn gradient_at(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        match &self.objective {
            Objective::Quadratic { diag } => x.component_mul(diag),
            Objective::Rosenbrock => {
                let n = self.dim;
                let mut g = DVector::zeros(n);
                for i in 0..n - 1 {
                    let t = x[i + 1] - x[i] * x[i];
                    g[i] += -400.0 * x[i] * t - 2.0 * (1.0 - x[i]);
                    g[i + 1] += 200.0 * t;
                }
                g
            }
            Objective::NonconvexTrig => x.map(|v| {
                let d = 1.0 + v * v;
                2.0 * v / (d * d) + 0.5 * (5.0 * v).cos()
            }),
            Objective::Logistic { signed_samples, .. } => {
                let dim = self.dim;
                let partial: Vec<Vec<f64>> = signed_samples
                    .par_chunks(LOGISTIC_CHUNK * dim)
                    .map(|chunk| {
                        let mut acc = vec![0.0; dim];
                        for z in chunk.chunks_exact(dim) {
                            // d/dx softplus(−zᵀx) = −σ(−zᵀx) z
                            let w = sigmoid(-dot(z, x));
                            for (a, zj) in acc.iter_mut().zip(z) {
                                *a -= w * zj;
                            }
                        }
                        acc
                    })
                    .collect();
                let mut g = DVector::zeros(dim);
                for acc in &partial {
                    for (gj, a) in g.iter_mut().zip(acc) {
                        *gj += a;
                    }
                }
                g / LOGISTIC_SAMPLES as f64
            }
        }
    }
}

fn dot(z: &[f64], x: &DVector<f64>) -> f64 {
    z.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

/// ‖∇φ(x)‖, the stationarity measure used for the stopping time.
pub fn grad_norm(problem: &ProblemInstance, x: &DVector<f64>) -> Result<f64, ProblemError> {
    problem.check_point(x)?;
    Ok(problem.gradient_at(x).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn central_difference(p: &ProblemInstance, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(p.dim(), |i, _| {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (p.value_at(&xp) - p.value_at(&xm)) / (2.0 * h)
        })
    }

    fn cheap_problems() -> Vec<ProblemInstance> {
        vec![
            make_problem("quadratic", 2).unwrap(),
            make_problem("quadratic", 5).unwrap(),
            make_problem("rosenbrock", 2).unwrap(),
            make_problem("rosenbrock", 4).unwrap(),
            make_problem("nonconvex-trig", 3).unwrap(),
        ]
    }

    fn sample_point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| rng.random_range(-r..=r))
    }

    #[test]
    fn quadratic_minimizer_at_origin() {
        let p = make_problem("quadratic", 2).unwrap();
        assert_eq!(p.lower_bound(), 0.0);
        assert_eq!(grad_norm(&p, &DVector::zeros(2)).unwrap(), 0.0);
        assert_eq!(p.lipschitz_l(), 10.0);
    }

    #[test]
    fn rosenbrock_global_minimizer() {
        let p = make_problem("rosenbrock", 2).unwrap();
        let one = DVector::from_element(2, 1.0);
        assert_eq!(p.value_at(&one), 0.0);
        assert_eq!(grad_norm(&p, &one).unwrap(), 0.0);
    }

    #[test]
    fn rosenbrock_lipschitz_dominates_sampled_pairs() {
        // max over 10⁴ pairs is ≈ 4.5e3 in [−2,2]²
        let p = make_problem("rosenbrock", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let a = sample_point(&mut rng, 2, 2.0);
            let b = sample_point(&mut rng, 2, 2.0);
            worst = worst.max((p.gradient_at(&a) - p.gradient_at(&b)).norm() / (a - b).norm());
        }
        assert!(worst > 3000.0, "sampling should approach the bound, got {worst}");
        assert!(worst <= p.lipschitz_l());
        assert_eq!(p.lipschitz_domain(), LipschitzDomain::Box(2.0));
    }

    #[test]
    fn rosenbrock_grad_norm_matches_finite_differences() {
        let p = make_problem("rosenbrock", 2).unwrap();
        let x = DVector::from_vec(vec![-1.2, 1.0]);
        let fd = central_difference(&p, &x).norm();
        let exact = grad_norm(&p, &x).unwrap();
        assert!((exact - fd).abs() <= 1e-5 * exact, "{exact} vs {fd}");
    }

    #[test]
    fn lower_bounds_hold_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in cheap_problems() {
            for _ in 0..1000 {
                let x = sample_point(&mut rng, p.dim(), 4.0);
                assert!(p.value_at(&x) - p.lower_bound() >= 0.0, "{} at {x}", p.name());
            }
        }
    }

    #[test]
    fn lipschitz_constants_dominate_sampled_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in cheap_problems() {
            let r = match p.lipschitz_domain() {
                LipschitzDomain::Box(r) => r,
                LipschitzDomain::Global => 5.0,
            };
            for _ in 0..2000 {
                let a = sample_point(&mut rng, p.dim(), r);
                let b = sample_point(&mut rng, p.dim(), r);
                let ratio = (p.gradient_at(&a) - p.gradient_at(&b)).norm() / (a - b).norm();
                assert!(ratio <= p.lipschitz_l(), "{}: {ratio} > {}", p.name(), p.lipschitz_l());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in cheap_problems() {
            for _ in 0..100 {
                let x = sample_point(&mut rng, p.dim(), 1.5);
                let g = p.gradient_at(&x);
                let fd = central_difference(&p, &x);
                let err = (&g - &fd).norm();
                assert!(err <= 1e-5 * g.norm().max(1.0), "{}: {err} at {x}", p.name());
            }
        }
    }

    #[test]
    fn logistic_risk_is_consistent() {
        let p = make_problem("logistic-erm", 2).unwrap();
        let x0 = p.default_start().clone();
        assert!((p.value_at(&x0) - std::f64::consts::LN_2).abs() < 1e-12);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let g = p.gradient_at(&x);
        let fd = central_difference(&p, &x);
        assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1.0));
        // E[aaᵀ] = I, so L ≈ 1/4
        assert!((p.lipschitz_l() - 0.25).abs() < 0.01, "{}", p.lipschitz_l());
        assert!(p.value_at(&x) >= 0.0);
        assert!(p.logistic_truth().is_some());
    }

    #[test]
    fn unknown_and_incompatible_names() {
        assert!(matches!(make_problem("himmelblau", 2), Err(ProblemError::UnknownProblem(_))));
        assert!(matches!(make_problem("rosenbrock", 1), Err(ProblemError::IncompatibleDim { .. })));
        assert!(matches!(make_problem("quadratic", 1), Err(ProblemError::IncompatibleDim { .. })));
        assert!(matches!(make_problem("nonconvex-trig", 0), Err(ProblemError::IncompatibleDim { .. })));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = make_problem("quadratic", 3).unwrap();
        let err = grad_norm(&p, &DVector::zeros(2)).unwrap_err();
        assert_eq!(err, ProblemError::DimensionMismatch { expected: 3, got: 2 });
    }
}
