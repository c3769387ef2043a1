//! Line-search instantiation: `s = −α·g` with a sufficient-decrease test
//! relaxed by `2·eps_f` and an `eps_rej` gate on step-size increases.

use nalgebra::DVector;

use crate::engine::MethodParams;

#[derive(Debug, Clone, PartialEq)]
pub struct LsState {
    pub g: DVector<f64>,
    pub alpha: f64,
    pub trial: DVector<f64>,
}

impl LsState {
    pub fn new(x: &DVector<f64>, g: DVector<f64>, alpha: f64) -> LsState {
        let trial = x - alpha * &g;
        LsState { g, alpha, trial }
    }

    pub fn step(&self) -> DVector<f64> {
        -self.alpha * &self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LsDecision {
    pub sufficient_decrease: bool,
    pub increase: bool,
}

pub fn accept_ls(f_k: f64, f_k_plus: f64, alpha: f64, g_norm: f64, params: &MethodParams, eps_rej: f64, eps_f_assumed: f64) -> LsDecision {
    let threshold = f_k - alpha * params.theta * g_norm * g_norm + 2.0 * eps_f_assumed;
    let sufficient_decrease = f_k_plus <= threshold;
    LsDecision { sufficient_decrease, increase: sufficient_decrease && g_norm >= eps_rej }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MethodParams {
        MethodParams { theta: 0.5, ..MethodParams::line_search(0.1) }
    }

    #[test]
    fn threshold_arithmetic() {
        // 1 − 0.1·0.5·4 + 0.02 = 0.82
        let d = accept_ls(1.0, 0.9, 0.1, 2.0, &params(), 0.1, 0.01);
        assert!(!d.sufficient_decrease && !d.increase);
        let d = accept_ls(1.0, 0.82, 0.1, 2.0, &params(), 0.1, 0.01);
        assert!(d.sufficient_decrease);
    }

    #[test]
    fn boundary_is_inclusive() {
        let (f, alpha, g, eps) = (2.0, 0.25, 2.0, 0.125);
        let f_plus = f - alpha * 0.5 * g * g + 2.0 * eps;
        assert!(accept_ls(f, f_plus, alpha, g, &params(), 1.0, eps).sufficient_decrease);
    }

    #[test]
    fn rejection_gate_is_strict() {
        let eps_rej = 0.5;
        let d = accept_ls(1.0, -1.0, 0.1, eps_rej - 1e-12, &params(), eps_rej, 0.0);
        assert!(d.sufficient_decrease && !d.increase);
        let d = accept_ls(1.0, -1.0, 0.1, eps_rej, &params(), eps_rej, 0.0);
        assert!(d.increase);
    }

    #[test]
    fn trial_point_follows_negative_estimate() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let s = LsState::new(&x, DVector::from_vec(vec![4.0, -2.0]), 0.25);
        assert_eq!(s.trial, DVector::from_vec(vec![0.0, 2.5]));
        assert_eq!(&x + s.step(), s.trial);
    }
}
