//! Zeroth-order noise families with exactly computed moments.
//!
//! Each family is scaled at construction so that the absolute error `|e|`
//! satisfies `E|e| ≤ eps_f`, `Var|e| ≤ zeta_2` and
//! `E| |e| − E|e| |^q ≤ zeta_q`. Moments are obtained by deterministic
//! quadrature, never by sampling, so the same spec always yields the same
//! scale.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::OracleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    GaussianFolded,
    ParetoMixture,
    Subexponential,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::GaussianFolded, NoiseFamily::ParetoMixture, NoiseFamily::Subexponential];
}

/// Exact moments of the absolute error `E = |e|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseMoments {
    pub mean: f64,
    pub variance: f64,
    /// Order of `centered_q`.
    pub q: f64,
    /// `E|E − EE|^q`
    pub centered_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Zero,
    /// e ~ N(0, σ²), so |e| is folded normal.
    Gaussian { sigma: f64 },
    /// |e| = B + P with B ~ U[0, width] and P Lomax(scale, tail_index).
    ParetoMixture { width: f64, scale: f64, tail_index: f64 },
    /// |e| ~ Exp(mean), a Gamma law with unit shape.
    Exponential { mean: f64 },
}

/// A fully parameterized symmetric noise law for the SZO.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    family: NoiseFamily,
    shape: Shape,
    moments: NoiseMoments,
}

/// Parameters the scale must respect.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NoiseBudget {
    pub eps_f: f64,
    pub q: f64,
    pub zeta_q: f64,
    pub zeta_2: f64,
    pub subexp: Option<(f64, f64)>,
}

const SIMPSON_PANELS: usize = 4096;

impl NoiseModel {
    pub(crate) fn calibrate(family: NoiseFamily, budget: NoiseBudget) -> Result<NoiseModel, OracleError> {
        let NoiseBudget { eps_f, q, zeta_q, zeta_2, subexp } = budget;
        if eps_f == 0.0 {
            return Ok(NoiseModel {
                family,
                shape: Shape::Zero,
                moments: NoiseMoments { mean: 0.0, variance: 0.0, q, centered_q: 0.0 },
            });
        }
        let shape = match family {
            NoiseFamily::GaussianFolded => {
                let cq = folded_normal_centered(q);
                let c2 = 1.0 - 2.0 / std::f64::consts::PI;
                let sigma = (eps_f * (std::f64::consts::PI / 2.0).sqrt())
                    .min((zeta_2 / c2).sqrt())
                    .min((zeta_q / cq).powf(1.0 / q));
                Shape::Gaussian { sigma }
            }
            NoiseFamily::Subexponential => {
                let (nu, b) = subexp.ok_or(OracleError::InvalidSpec("subexponential noise needs subexp_nu and subexp_b"))?;
                // Exp(θ) centered is (√2·θ, 2θ)-subexponential.
                let cq = exponential_centered(q);
                let mean = eps_f
                    .min(zeta_2.sqrt())
                    .min((zeta_q / cq).powf(1.0 / q))
                    .min(b / 2.0)
                    .min(nu / std::f64::consts::SQRT_2);
                Shape::Exponential { mean }
            }
            NoiseFamily::ParetoMixture => calibrate_pareto(eps_f, q, zeta_q, zeta_2)?,
        };
        let moments = exact_moments(shape, q);
        Ok(NoiseModel { family, shape, moments })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn moments(&self) -> NoiseMoments {
        self.moments
    }

    /// Effective subexponential parameters `(ν, b)` of the centered absolute
    /// error, when the family is subexponential.
    pub fn subexp_params(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Exponential { mean } => Some((std::f64::consts::SQRT_2 * mean, 2.0 * mean)),
            Shape::Zero => Some((0.0, 0.0)),
            _ => None,
        }
    }

    /// Tail index of the Pareto component, when present.
    pub fn tail_index(&self) -> Option<f64> {
        match self.shape {
            Shape::ParetoMixture { tail_index, .. } => Some(tail_index),
            _ => None,
        }
    }

    /// Draws the absolute error `|e|`.
    pub fn sample_magnitude<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.shape {
            Shape::Zero => 0.0,
            Shape::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z.abs()
            }
            Shape::ParetoMixture { width, scale, tail_index } => {
                let b = width * rng.random::<f64>();
                // 1 − U ∈ (0, 1]
                let u = 1.0 - rng.random::<f64>();
                b + scale * (u.powf(-1.0 / tail_index) - 1.0)
            }
            Shape::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
        }
    }

    /// Draws the signed error `e`, symmetric about zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let magnitude = self.sample_magnitude(rng);
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

fn exact_moments(shape: Shape, q: f64) -> NoiseMoments {
    match shape {
        Shape::Zero => NoiseMoments { mean: 0.0, variance: 0.0, q, centered_q: 0.0 },
        Shape::Gaussian { sigma } => NoiseMoments {
            mean: sigma * (2.0 / std::f64::consts::PI).sqrt(),
            variance: sigma * sigma * (1.0 - 2.0 / std::f64::consts::PI),
            q,
            centered_q: sigma.powf(q) * folded_normal_centered(q),
        },
        Shape::Exponential { mean } => NoiseMoments {
            mean,
            variance: mean * mean,
            q,
            centered_q: mean.powf(q) * exponential_centered(q),
        },
        Shape::ParetoMixture { width, scale, tail_index } => NoiseMoments {
            mean: width / 2.0 + scale / (tail_index - 1.0),
            variance: pareto_mixture_centered(width, scale, tail_index, 2.0, q),
            q,
            centered_q: pareto_mixture_centered(width, scale, tail_index, q, q),
        },
    }
}

fn calibrate_pareto(eps_f: f64, q: f64, zeta_q: f64, zeta_2: f64) -> Result<Shape, OracleError> {
    let tail_index = q + 0.5;
    let width = 0.5 * eps_f;
    let fits = |scale: f64| {
        pareto_mixture_centered(width, scale, tail_index, q, q) <= zeta_q
            && pareto_mixture_centered(width, scale, tail_index, 2.0, q) <= zeta_2
    };
    if !fits(0.0) {
        return Err(OracleError::InfeasibleNoise {
            family: NoiseFamily::ParetoMixture,
            reason: "the uniform component alone exceeds the moment bounds",
        });
    }
    // mean = width/2 + scale/(a − 1) ≤ eps_f
    let mean_cap = (eps_f - width / 2.0) * (tail_index - 1.0);
    let scale = if fits(mean_cap) {
        mean_cap
    } else {
        // the centered moments are convex in the scale with minimum at 0
        let (mut lo, mut hi) = (0.0, mean_cap);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(Shape::ParetoMixture { width, scale, tail_index })
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// `E| |Z| − E|Z| |^q` for standard normal `Z`.
pub(crate) fn folded_normal_centered(q: f64) -> f64 {
    let mu = (2.0 / std::f64::consts::PI).sqrt();
    let density = |z: f64| 2.0 * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| (z - mu).abs().powf(q) * density(z);
    simpson(f, 0.0, mu, SIMPSON_PANELS) + simpson(f, mu, 40.0, 8 * SIMPSON_PANELS)
}

/// `E|X − 1|^q` for `X ~ Exp(1)`.
pub(crate) fn exponential_centered(q: f64) -> f64 {
    let upper = q + 60.0 + 10.0 * q.sqrt();
    simpson(|x| (1.0 - x).powf(q) * (-x).exp(), 0.0, 1.0, SIMPSON_PANELS)
        + simpson(|y| y.powf(q) * (-y - 1.0).exp(), 0.0, upper, 16 * SIMPSON_PANELS)
}

/// `E_b |b + d|^r` for `b ~ U[0, width]`, evaluated without cancellation.
fn uniform_abs_power(d: f64, width: f64, r: f64) -> f64 {
    if width == 0.0 {
        return d.abs().powf(r);
    }
    let k = r + 1.0;
    if d >= 0.0 {
        if d == 0.0 {
            return width.powf(r) / k;
        }
        d.powf(k) * (k * (width / d).ln_1p()).exp_m1() / (k * width)
    } else if d <= -width {
        let m = -d;
        -m.powf(k) * (k * (-width / m).ln_1p()).exp_m1() / (k * width)
    } else {
        ((d + width).powf(k) + (-d).powf(k)) / (k * width)
    }
}

/// `E|B + P − μ|^r` for the Pareto mixture, with `P = scale·(U^{−1/a} − 1)`.
///
/// Substituting `U = v^{2q+1}` turns `U^{−1/a}` into `v^{−2}` when
/// `a = q + 0.5`, which makes the integrand bounded on `[0, 1]` for `r ≤ q`.
fn pareto_mixture_centered(width: f64, scale: f64, tail_index: f64, r: f64, q: f64) -> f64 {
    let mu = width / 2.0 + scale / (tail_index - 1.0);
    if scale == 0.0 {
        return uniform_abs_power(-mu, width, r);
    }
    let k = tail_index / (tail_index - q);
    let power = k / tail_index;
    let integrand = |v: f64| {
        if v == 0.0 {
            // v^{k−1} (scale·v^{−power})^r → nonzero only when r = q
            return if (r - q).abs() < 1e-12 { k * scale.powf(r) } else { 0.0 };
        }
        let p = scale * (v.powf(-power) - 1.0);
        k * v.powf(k - 1.0) * uniform_abs_power(p - mu, width, r)
    };
    simpson(integrand, 0.0, 1.0, 4 * SIMPSON_PANELS)
}
