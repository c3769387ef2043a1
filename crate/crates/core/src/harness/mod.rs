//! Experiment orchestration: configuration, seeded trials, artifacts.

pub mod check;
pub mod stats;
pub mod tail;
pub mod validate;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, AnalysisContext, EngineError, LemmaMode, MethodKind, MethodParams, RunOptions, RunTrace, Termination};
use crate::oracles::{AccuracyForm, OracleError, OracleSuite, SfoSpec, ZerothOrderSpec};
use crate::problems::{make_problem, ProblemError, ProblemInstance};
use crate::theory::{
    build_report, composed_p_lower, EpsilonTarget, PLower, PLowerMethod, PLowerSetting, PLowerSource, TheoryError, TheoryReport,
    TheorySettings,
};
use check::{check_trace, InequalityCheck};
use tail::{compare_tail, tail_curve, write_tail_csv, TailCurve, Verdict};

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "trial_id",
    "stopping_time",
    "censored",
    "final_grad_norm",
    "true_iterations",
    "successful_iterations",
    "large_iterations",
    "final_alpha",
    "termination",
    "lemma_violations",
];

/// Budget when none is configured and the theory gives no threshold.
pub const FALLBACK_MAX_ITERS: usize = 1_000_000;
/// Cap on the derived budget `10 × t_threshold`.
pub const MAX_DERIVED_ITERS: usize = 10_000_000;
pub const PILOT_ITERS: usize = 1_000;
const PILOT_SEED_OFFSET: u64 = 0x51_7e_c0de;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("theory is infeasible: {0} (use force to run anyway)")]
    Infeasible(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    pub dim: usize,
}

fn d_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "d_epsilon")]
    pub epsilon: EpsilonTarget,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_traces: bool,
    /// Run even when the theory is infeasible.
    #[serde(default)]
    pub force: bool,
}

fn d_epsilon() -> EpsilonTarget {
    EpsilonTarget::AUTO
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            epsilon: d_epsilon(),
            trials: d_trials(),
            max_iters: None,
            base_seed: 0,
            output_dir: None,
            write_traces: false,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub method: MethodParams,
    pub zeroth_order: ZerothOrderSpec,
    pub first_order: SfoSpec,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub theory: TheorySettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn check(&self) -> Result<(), HarnessError> {
        let expected = match self.method.method {
            MethodKind::TrustRegion => AccuracyForm::TrustRegion,
            MethodKind::LineSearch => AccuracyForm::LineSearch,
        };
        if self.first_order.accuracy_form != expected {
            return Err(HarnessError::Config(format!(
                "first_order.accuracy_form {:?} does not match method {:?}",
                self.first_order.accuracy_form, self.method.method
            )));
        }
        self.method.validate()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemInstance, HarnessError> {
        Ok(make_problem(&self.problem.name, self.problem.dim)?)
    }

    pub fn suite(&self) -> Result<OracleSuite, HarnessError> {
        Ok(OracleSuite::new(self.zeroth_order.clone(), self.first_order.clone())?)
    }
}

/// Fraction of true iterations over a short run with the given oracles.
///
/// Not derived from the oracle parameters; reports label it as a pilot estimate.
pub fn pilot_p_estimate(problem: &ProblemInstance, suite: &OracleSuite, params: &MethodParams, epsilon: f64, seed: u64) -> Result<f64, HarnessError> {
    let opts = RunOptions {
        epsilon,
        max_iters: PILOT_ITERS,
        seed,
        analysis: Some(AnalysisContext { alpha_bar: params.alpha_0, h_eps: 0.0, lemma_mode: LemmaMode::Skipped }),
    };
    let trace = engine::run(problem, suite, params, &opts)?;
    if trace.records.is_empty() {
        return Err(HarnessError::Config("pilot run stopped before its first iteration".into()));
    }
    Ok(trace.true_iterations() as f64 / trace.records.len() as f64)
}

/// Theory report for a config, resolving `p_lower` and returning the method
/// parameters with `eps_rej` filled in.
pub fn theory_for(cfg: &ExperimentConfig) -> Result<(TheoryReport, MethodParams), HarnessError> {
    let problem = cfg.problem()?;
    let suite = cfg.suite()?;
    let composed = PLower { value: composed_p_lower(&suite), source: PLowerSource::Composed };
    let target = cfg.experiment.epsilon;
    let report = |p| build_report(&problem, &suite, &cfg.method, target, &cfg.theory, p);
    Ok(match cfg.theory.p_lower {
        None | Some(PLowerSetting::Method(PLowerMethod::Composed)) => report(composed)?,
        Some(PLowerSetting::Value(v)) => report(PLower { value: v, source: PLowerSource::Configured })?,
        Some(PLowerSetting::Method(PLowerMethod::Pilot)) => {
            let (probe, params) = report(composed)?;
            let seed = cfg.experiment.base_seed.wrapping_add(PILOT_SEED_OFFSET);
            let value = pilot_p_estimate(&problem, &suite, &params, probe.epsilon, seed)?;
            report(PLower { value, source: PLowerSource::Pilot })?
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial_id: usize,
    pub stopping_time: Option<usize>,
    pub final_grad_norm: f64,
    pub true_iterations: usize,
    pub successful_iterations: usize,
    pub large_iterations: usize,
    pub final_alpha: f64,
    pub termination: Termination,
    pub lemma_violations: usize,
    /// Whether the step-size balance inequality held on every prefix.
    pub dynamics_ok: bool,
}

impl TrialSummary {
    fn from_trace(trial_id: usize, trace: &RunTrace, checks: &[InequalityCheck]) -> TrialSummary {
        TrialSummary {
            trial_id,
            stopping_time: trace.stopping_time,
            final_grad_norm: trace.final_grad_norm,
            true_iterations: trace.true_iterations(),
            successful_iterations: trace.successful_iterations(),
            large_iterations: trace.large_iterations(),
            final_alpha: trace.final_alpha,
            termination: trace.termination,
            lemma_violations: trace.lemma_violations.len(),
            dynamics_ok: checks.first().is_none_or(|c| c.holds),
        }
    }
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::BudgetExhausted => "budget-exhausted",
        Termination::StepCollapse => "step-collapse",
    }
}

pub fn write_summary_csv<W: Write>(rows: &[TrialSummary], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.trial_id.to_string(),
            r.stopping_time.map_or_else(String::new, |t| t.to_string()),
            r.stopping_time.is_none().to_string(),
            format!("{:.16e}", r.final_grad_norm),
            r.true_iterations.to_string(),
            r.successful_iterations.to_string(),
            r.large_iterations.to_string(),
            format!("{:.16e}", r.final_alpha),
            termination_label(r.termination).to_string(),
            r.lemma_violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Step-size collapse diagnostic recorded when the drift condition fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseDiagnostic {
    pub median_final_alpha: f64,
    pub median_ratio_to_alpha_0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub report: TheoryReport,
    pub params: MethodParams,
    pub max_iters: usize,
    pub trials: Vec<TrialSummary>,
    pub curve: Option<TailCurve>,
    pub verdicts: Vec<(f64, Verdict)>,
    pub collapse: Option<CollapseDiagnostic>,
}

impl ExperimentOutcome {
    pub fn stopping_times(&self) -> Vec<Option<usize>> {
        self.trials.iter().map(|t| t.stopping_time).collect()
    }

    pub fn lemma_violations(&self) -> usize {
        self.trials.iter().map(|t| t.lemma_violations).sum()
    }

    pub fn dynamics_failures(&self) -> usize {
        self.trials.iter().filter(|t| !t.dynamics_ok).count()
    }

    pub fn tail_violations(&self) -> usize {
        self.verdicts.iter().filter(|(_, v)| *v == Verdict::Violation).count()
    }

    /// Whether any asserted invariant failed.
    pub fn has_invariant_violation(&self) -> bool {
        self.lemma_violations() > 0 || self.dynamics_failures() > 0 || self.tail_violations() > 0
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.stopping_time.is_some()).count() as f64 / self.trials.len() as f64
    }
}

/// `10 × t_threshold` capped, or the fallback when there is no threshold.
pub fn default_max_iters(report: &TheoryReport) -> usize {
    match report.t_threshold {
        Some(t) if t.is_finite() => ((10.0 * t).ceil() as usize).clamp(1, MAX_DERIVED_ITERS),
        _ => FALLBACK_MAX_ITERS,
    }
}

/// Runs `trials` seeded trials and writes artifacts when an output directory is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let (report, params) = match theory_for(cfg) {
        Ok(r) => r,
        Err(HarnessError::Theory(TheoryError::Infeasible(reason))) => return Err(HarnessError::Infeasible(reason)),
        Err(e) => return Err(e),
    };
    if let Some(reason) = &report.infeasible_reason {
        if !cfg.experiment.force {
            return Err(HarnessError::Infeasible(reason.clone()));
        }
        log::warn!("running despite infeasible theory: {reason}");
    }
    let problem = cfg.problem()?;
    let suite = cfg.suite()?;
    let max_iters = cfg.experiment.max_iters.unwrap_or_else(|| default_max_iters(&report));
    let eps_f = suite.zeroth.eps_f();
    let analysis = report.analysis();
    let out_dir = cfg.experiment.output_dir.clone();
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
    }

    let trials: Vec<TrialSummary> = (0..cfg.experiment.trials)
        .into_par_iter()
        .map(|i| -> Result<TrialSummary, HarnessError> {
            let opts = RunOptions { epsilon: report.epsilon, max_iters, seed: cfg.experiment.base_seed.wrapping_add(i as u64), analysis: Some(analysis) };
            let trace = engine::run(&problem, &suite, &params, &opts)?;
            let checks = check_trace(&trace, &params, eps_f)?;
            if let (Some(dir), true) = (&out_dir, cfg.experiment.write_traces) {
                trace.write_csv(fs::File::create(dir.join(format!("trace_{i}.csv")))?)?;
            }
            Ok(TrialSummary::from_trace(i, &trace, &checks))
        })
        .collect::<Result<_, _>>()?;

    let drift_ok = report.p_lower > 1.0 / (report.m_floor as f64 + 1.0);
    let stopping: Vec<Option<usize>> = trials.iter().map(|t| t.stopping_time).collect();
    let curve = if drift_ok { tail_curve(&stopping, max_iters, &report) } else { None };
    let verdicts = curve.as_ref().map(compare_tail).unwrap_or_default();
    let collapse = (!drift_ok && !trials.is_empty()).then(|| {
        let alphas: Vec<f64> = trials.iter().map(|t| t.final_alpha).collect();
        let med = stats::median(&alphas).unwrap_or(f64::NAN);
        CollapseDiagnostic { median_final_alpha: med, median_ratio_to_alpha_0: med / params.alpha_0 }
    });

    let outcome = ExperimentOutcome { report, params, max_iters, trials, curve, verdicts, collapse };
    if let Some(dir) = &out_dir {
        write_artifacts(&outcome, dir)?;
    }
    Ok(outcome)
}

pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<(), HarnessError> {
    write_summary_csv(&outcome.trials, fs::File::create(dir.join("summary.csv"))?)?;
    if let Some(curve) = &outcome.curve {
        write_tail_csv(curve, fs::File::create(dir.join("tail.csv"))?)?;
    }
    let mut theory = fs::File::create(dir.join("theory.json"))?;
    serde_json::to_writer_pretty(&mut theory, &outcome.report)?;
    writeln!(theory)?;
    if let Some(c) = &outcome.collapse {
        let mut f = fs::File::create(dir.join("collapse.json"))?;
        serde_json::to_writer_pretty(&mut f, c)?;
        writeln!(f)?;
    }
    Ok(())
}

/// Replaces the value at a dotted `path` such as `method.gamma_inc`.
pub fn set_config_value(cfg: &ExperimentConfig, path: &str, value: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut root: toml::Table = toml::from_str(&cfg.to_toml_string()?).map_err(|e| HarnessError::Config(e.to_string()))?;
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut parts = path.split('.').peekable();
    let mut table = &mut root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            table.insert(part.to_string(), parsed.clone());
            break;
        }
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{part} in {path} is not a table")))?;
    }
    ExperimentConfig::from_toml_str(&toml::to_string(&root).map_err(|e| HarnessError::Config(e.to_string()))?)
}

pub const SWEEP_COLUMNS: [&str; 8] =
    ["value", "feasible", "epsilon", "t_threshold", "converged_fraction", "median_stopping_time", "tail_violations", "error"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub outcome: Option<ExperimentOutcome>,
    pub error: Option<String>,
}

/// One experiment per value; each writes into `<output_dir>/<path>=<value>`.
pub fn sweep(cfg: &ExperimentConfig, path: &str, values: &[String]) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut point_cfg = set_config_value(cfg, path, v)?;
        if let Some(dir) = &cfg.experiment.output_dir {
            point_cfg.experiment.output_dir = Some(dir.join(format!("{path}={v}")));
        }
        match run_experiment(&point_cfg) {
            Ok(o) => points.push(SweepPoint { value: v.clone(), outcome: Some(o), error: None }),
            Err(e @ (HarnessError::Infeasible(_) | HarnessError::Theory(_))) => {
                points.push(SweepPoint { value: v.clone(), outcome: None, error: Some(e.to_string()) })
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(dir) = &cfg.experiment.output_dir {
        fs::create_dir_all(dir)?;
        write_sweep_csv(&points, fs::File::create(dir.join("sweep.csv"))?)?;
    }
    Ok(points)
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for p in points {
        let row = match &p.outcome {
            Some(o) => {
                let stops: Vec<f64> = o.trials.iter().filter_map(|t| t.stopping_time.map(|s| s as f64)).collect();
                [
                    p.value.clone(),
                    o.report.feasible.to_string(),
                    format!("{:.16e}", o.report.epsilon),
                    o.report.t_threshold.map_or_else(String::new, |t| format!("{t:.16e}")),
                    format!("{:.16e}", o.converged_fraction()),
                    stats::median(&stops).map_or_else(String::new, |m| format!("{m}")),
                    o.tail_violations().to_string(),
                    String::new(),
                ]
            }
            None => [p.value.clone(), "false".into(), String::new(), String::new(), String::new(), String::new(), String::new(), p.error.clone().unwrap_or_default()],
        };
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENIGN: &str = r#"
[problem]
name = "quadratic"
dim = 2

[method]
method = "trust-region"

[zeroth_order]
kind = "czo"
eps_f = 0.0
eps_c = 0.0
delta_0 = 0.0

[first_order]
eps_g = 0.0
kappa = 0.0
delta_1 = 0.0
accuracy_form = "trust-region"
corruption_strategy = "huge-random"

[experiment]
epsilon = 1e-3
trials = 6
base_seed = 3
"#;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BENIGN).unwrap();
        assert_eq!(cfg.experiment.trials, 6);
        assert_eq!(cfg.method.gamma_inc, 2.0);
        assert_eq!(cfg.theory, TheorySettings::default());
        let auto = BENIGN.replace("epsilon = 1e-3", "epsilon = \"auto\"");
        assert_eq!(ExperimentConfig::from_toml_str(&auto).unwrap().experiment.epsilon, EpsilonTarget::AUTO);
    }

    #[test]
    fn mismatched_accuracy_form_is_rejected() {
        let bad = BENIGN.replace("accuracy_form = \"trust-region\"", "accuracy_form = \"line-search\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(HarnessError::Config(_))));
        let unknown = BENIGN.replace("[experiment]", "[experiment]\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
    }

    #[test]
    fn benign_regime_converges_everywhere() {
        let cfg = ExperimentConfig::from_toml_str(BENIGN).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.trials.len(), 6);
        assert_eq!(out.converged_fraction(), 1.0);
        assert!(!out.has_invariant_violation());
        // exact oracles: every trial stops at the same time
        let first = out.trials[0].stopping_time;
        assert!(out.trials.iter().all(|t| t.stopping_time == first));
        let curve = out.curve.unwrap();
        assert!(curve.points.iter().filter(|p| p.t >= first.unwrap() as f64).all(|p| p.empirical_tail == 0.0));
    }

    #[test]
    fn zero_trials_gives_empty_summary() {
        let mut cfg = ExperimentConfig::from_toml_str(BENIGN).unwrap();
        cfg.experiment.trials = 0;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.trials.is_empty() && out.curve.is_none());
    }

    #[test]
    fn infeasible_theory_needs_force() {
        let text = BENIGN.replace("delta_1 = 0.0", "delta_1 = 0.6");
        let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        cfg.experiment.max_iters = Some(200);
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::Infeasible(_))));
        cfg.experiment.force = true;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.curve.is_none());
        assert!(out.collapse.is_some());
    }

    #[test]
    fn set_value_by_path() {
        let cfg = ExperimentConfig::from_toml_str(BENIGN).unwrap();
        let c = set_config_value(&cfg, "method.gamma_inc", "3.0").unwrap();
        assert_eq!(c.method.gamma_inc, 3.0);
        let c = set_config_value(&cfg, "experiment.epsilon", "auto").unwrap();
        assert_eq!(c.experiment.epsilon, EpsilonTarget::AUTO);
        assert!(set_config_value(&cfg, "method.gamma_inc", "0.5").is_err());
    }

    #[test]
    fn pilot_estimate_counts_true_iterations() {
        let cfg = ExperimentConfig::from_toml_str(&BENIGN.replace("delta_1 = 0.0", "delta_1 = 0.25")).unwrap();
        let p = pilot_p_estimate(&cfg.problem().unwrap(), &cfg.suite().unwrap(), &cfg.method, 1e-12, 0).unwrap();
        assert!((p - 0.75).abs() < 0.05, "{p}");
    }
}
