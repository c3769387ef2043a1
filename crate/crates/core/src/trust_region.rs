//! Trust-region instantiation: quadratic model, exact Cauchy step and a
//! ρ-test relaxed by `2·eps_f`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::MethodParams;

/// Relative slack for floating-point comparisons against exact inequalities.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrError {
    #[error("model Hessian is not symmetric")]
    Asymmetric,
    #[error("model Hessian norm {norm} exceeds kappa_H = {kappa_h}")]
    HessianTooLarge { norm: f64, kappa_h: f64 },
    #[error("dimension mismatch between gradient ({g}) and Hessian ({h})")]
    Dimension { g: usize, h: usize },
    #[error("Cauchy step lost the fraction-of-Cauchy-decrease property: decrease {decrease}, required {required}")]
    CauchyDecrease { decrease: f64, required: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    #[default]
    Zero,
    FdDiagonal,
}

/// `m(x + s) = f + gᵀs + ½ sᵀHs`
#[derive(Debug, Clone, PartialEq)]
pub struct TrModel {
    f: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
    h_norm: f64,
}

impl TrModel {
    pub fn new(f: f64, g: DVector<f64>, h: DMatrix<f64>, kappa_h: f64) -> Result<TrModel, TrError> {
        if h.nrows() != g.len() || h.ncols() != g.len() {
            return Err(TrError::Dimension { g: g.len(), h: h.nrows() });
        }
        if h != h.transpose() {
            return Err(TrError::Asymmetric);
        }
        let h_norm = spectral_norm(&h);
        if h_norm > kappa_h * (1.0 + ROUNDING) {
            return Err(TrError::HessianTooLarge { norm: h_norm, kappa_h });
        }
        Ok(TrModel { f, g, h, h_norm })
    }

    /// Linear model (`H = 0`).
    pub fn linear(f: f64, g: DVector<f64>) -> TrModel {
        let n = g.len();
        TrModel { f, g, h: DMatrix::zeros(n, n), h_norm: 0.0 }
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn hessian_norm(&self) -> f64 {
        self.h_norm
    }

    /// `m(x) − m(x + s)`
    pub fn decrease(&self, s: &DVector<f64>) -> f64 {
        -(self.g.dot(s) + 0.5 * s.dot(&(&self.h * s)))
    }

    /// `(κ/2)·‖g‖·min{‖g‖/‖H‖, α}`
    pub fn cauchy_requirement(&self, alpha: f64, kappa_fcd: f64) -> f64 {
        let gn = self.g.norm();
        let curvature_cap = if self.h_norm == 0.0 { f64::INFINITY } else { gn / self.h_norm };
        0.5 * kappa_fcd * gn * curvature_cap.min(alpha)
    }
}

fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || h[(i, j)] == 0.0));
    if diagonal {
        return (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    }
    h.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyStep {
    pub step: DVector<f64>,
    pub model_decrease: f64,
}

/// Whether `step` meets the fraction-of-Cauchy-decrease condition with `kappa_fcd`.
pub fn fcd_holds(model: &TrModel, step: &DVector<f64>, alpha: f64, kappa_fcd: f64) -> bool {
    step.norm() <= alpha * (1.0 + ROUNDING) && {
        let required = model.cauchy_requirement(alpha, kappa_fcd);
        model.decrease(step) >= required - ROUNDING * required.abs()
    }
}

/// Minimizes the model along `−g` inside the ball of radius `alpha`.
///
/// The exact Cauchy point attains `κ_fcd = 1`, which is re-checked on every call.
pub fn solve_subproblem(model: &TrModel, alpha: f64) -> Result<CauchyStep, TrError> {
    let n = model.g.len();
    let gn = model.g.norm();
    if gn == 0.0 {
        return Ok(CauchyStep { step: DVector::zeros(n), model_decrease: 0.0 });
    }
    let ghg = model.g.dot(&(&model.h * &model.g));
    let boundary = alpha / gn;
    let t = if ghg > 0.0 { (gn * gn / ghg).min(boundary) } else { boundary };
    let step = -t * &model.g;
    let model_decrease = model.decrease(&step);
    if !fcd_holds(model, &step, alpha, 1.0) {
        return Err(TrError::CauchyDecrease { decrease: model_decrease, required: model.cauchy_requirement(alpha, 1.0) });
    }
    Ok(CauchyStep { step, model_decrease })
}

/// Diagonal curvature from forward differences of gradient estimates,
/// clipped entrywise to `[−κ_H, κ_H]`.
pub fn fd_diagonal_hessian(
    x: &DVector<f64>,
    g: &DVector<f64>,
    kappa_h: f64,
    mut gradient_estimate: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let mut diag = DVector::zeros(n);
    for i in 0..n {
        let h = f64::EPSILON.sqrt() * x[i].abs().max(1.0);
        let mut probe = x.clone();
        probe[i] += h;
        let gi = gradient_estimate(&probe)[i];
        let d = (gi - g[i]) / h;
        diag[i] = if d.is_finite() { d.clamp(-kappa_h, kappa_h) } else { 0.0 };
    }
    DMatrix::from_diagonal(&diag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrDecision {
    /// `None` when the model predicts no decrease.
    pub rho: Option<f64>,
    pub success: bool,
    pub increase_radius: bool,
}

pub fn accept_tr(f_k: f64, f_k_plus: f64, model_decrease: f64, g_norm: f64, alpha: f64, params: &MethodParams, eps_f_assumed: f64) -> TrDecision {
    if model_decrease <= 0.0 {
        return TrDecision { rho: None, success: false, increase_radius: false };
    }
    let rho = (f_k - f_k_plus + 2.0 * eps_f_assumed) / model_decrease;
    let success = rho >= params.eta_1;
    TrDecision { rho: Some(rho), success, increase_radius: success && g_norm >= params.eta_2 * alpha }
}
