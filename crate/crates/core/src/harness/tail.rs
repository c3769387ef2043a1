//! Empirical stopping-time tails and their comparison with the bound.

use std::io::Write;

use serde::Serialize;

use super::stats::{wilson_interval, Z_95};
use crate::theory::TheoryReport;

pub const GRID_POINTS: usize = 20;

pub const TAIL_COLUMNS: [&str; 6] = ["t", "empirical_tail", "wilson_hi", "azuma_term", "noise_term", "total_bound"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub t: f64,
    pub empirical_tail: f64,
    pub wilson_hi: f64,
    pub azuma_term: f64,
    pub noise_term: f64,
    pub total_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub t_threshold: f64,
    pub trials: usize,
    pub points: Vec<TailPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Violation,
}

/// `n` geometrically spaced integer times from `lo` to `hi`, deduplicated.
pub fn t_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || n == 0 {
        return Vec::new();
    }
    let ratio = if n == 1 { 1.0 } else { (hi / lo).powf(1.0 / (n - 1) as f64) };
    let mut grid: Vec<f64> = (0..n).map(|i| (lo * ratio.powi(i as i32)).ceil().min(hi.floor().max(lo.ceil()))).collect();
    grid.dedup();
    grid
}

/// `P̂(T_ε > t)` with censored trials (`None`) counted as exceeding every `t`.
pub fn empirical_tail(stopping: &[Option<usize>], t: f64) -> (usize, usize) {
    let exceed = stopping.iter().filter(|s| s.is_none_or(|v| v as f64 > t)).count();
    (exceed, stopping.len())
}

/// Tail curve on the grid from the threshold to the budget; `None` when the
/// report has no feasible `(s, p̂)` or there are no trials.
pub fn tail_curve(stopping: &[Option<usize>], budget: usize, report: &TheoryReport) -> Option<TailCurve> {
    let thr = report.t_threshold?;
    if stopping.is_empty() {
        return None;
    }
    let points = t_grid(thr.max(1.0), budget as f64, GRID_POINTS)
        .into_iter()
        .filter_map(|t| {
            let bound = report.tail_bound(t)?;
            let (exceed, n) = empirical_tail(stopping, t);
            Some(TailPoint {
                t,
                empirical_tail: exceed as f64 / n as f64,
                wilson_hi: wilson_interval(exceed, n, Z_95).1,
                azuma_term: bound.azuma,
                noise_term: bound.noise,
                total_bound: bound.total,
            })
        })
        .collect();
    Some(TailCurve { t_threshold: thr, trials: stopping.len(), points })
}

/// Consistent when `P̂ ≤ bound + (wilson_hi − P̂)`; points at or below the
/// threshold carry the trivial bound and are always consistent.
pub fn compare_tail(curve: &TailCurve) -> Vec<(f64, Verdict)> {
    curve
        .points
        .iter()
        .map(|p| {
            let ok = p.t <= curve.t_threshold || p.empirical_tail <= p.total_bound + (p.wilson_hi - p.empirical_tail);
            (p.t, if ok { Verdict::Consistent } else { Verdict::Violation })
        })
        .collect()
}

pub fn write_tail_csv<W: Write>(curve: &TailCurve, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TAIL_COLUMNS)?;
    for p in &curve.points {
        w.write_record([p.t, p.empirical_tail, p.wilson_hi, p.azuma_term, p.noise_term, p.total_bound].map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(t: f64, emp: f64, hi: f64, bound: f64) -> TailPoint {
        TailPoint { t, empirical_tail: emp, wilson_hi: hi, azuma_term: 0.0, noise_term: 0.0, total_bound: bound }
    }

    #[test]
    fn grid_is_geometric_and_bounded() {
        let g = t_grid(10.0, 1e4, 4);
        assert_eq!(g, vec![10.0, 100.0, 1000.0, 10000.0]);
        assert!(t_grid(10.0, 5.0, 20).is_empty());
        let g = t_grid(3.5, 1e6, GRID_POINTS);
        assert_eq!(g.len(), GRID_POINTS);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn censored_trials_exceed_every_t() {
        let s = [Some(5), None, Some(50)];
        assert_eq!(empirical_tail(&s, 10.0), (2, 3));
        assert_eq!(empirical_tail(&s, 1e9), (1, 3));
        assert_eq!(empirical_tail(&s, 5.0), (2, 3));
    }

    #[test]
    fn trivial_bound_is_always_consistent() {
        let curve = TailCurve { t_threshold: 100.0, trials: 10, points: vec![point(100.0, 1.0, 1.0, 1.0), point(200.0, 0.0, 0.3, 1e-9)] };
        assert!(compare_tail(&curve).iter().all(|(_, v)| *v == Verdict::Consistent));
    }

    #[test]
    fn large_excess_is_a_violation() {
        let (lo, hi) = wilson_interval(400, 500, Z_95);
        assert!(lo > 0.7);
        let curve = TailCurve { t_threshold: 1.0, trials: 500, points: vec![point(10.0, 0.8, hi, 0.1)] };
        assert_eq!(compare_tail(&curve)[0].1, Verdict::Violation);
    }
}
