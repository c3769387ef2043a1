use std::fs;

use adaptopt::engine::{read_records, run, MethodParams, RunOptions};
use adaptopt::harness::check::check_trace;
use adaptopt::harness::{run_experiment, ExperimentConfig};
use adaptopt::oracles::{AccuracyForm, CorruptionStrategy, CzoSpec, OracleSuite, SfoSpec, ZerothOrderSpec};
use adaptopt::problems::make_problem;

const CONFIG: &str = r#"
[problem]
name = "nonconvex-trig"
dim = 3

[method]
method = "line-search"

[zeroth_order]
kind = "szo"
eps_f = 1e-9
q = 3.0
zeta_q = 1e-27
zeta_2 = 1e-18
noise_family = "pareto-mixture"

[first_order]
eps_g = 0.0
kappa = 0.1
tau = 0.5
delta_1 = 0.1
accuracy_form = "line-search"
corruption_strategy = "anti-descent"

[experiment]
epsilon = 0.05
trials = 12
max_iters = 20000
base_seed = 100
write_traces = true
"#;

fn run_into(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    cfg.experiment.output_dir = Some(dir.to_path_buf());
    run_experiment(&cfg).unwrap();
    cfg
}

#[test]
fn same_config_gives_byte_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into(a.path());
    run_into(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 3 + 12);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn written_traces_round_trip_and_satisfy_the_dynamics_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_into(dir.path());
    let problem = cfg.problem().unwrap();
    let suite = cfg.suite().unwrap();
    let (report, params) = adaptopt::harness::theory_for(&cfg).unwrap();
    let opts = RunOptions { epsilon: report.epsilon, max_iters: 20_000, seed: 105, analysis: Some(report.analysis()) };
    let trace = run(&problem, &suite, &params, &opts).unwrap();
    let from_disk = read_records(fs::File::open(dir.path().join("trace_5.csv")).unwrap()).unwrap();
    assert_eq!(from_disk, trace.records);
    let checks = check_trace(&trace, &params, suite.zeroth.eps_f()).unwrap();
    assert!(checks[0].holds, "{checks:?}");
}

#[test]
fn dynamics_inequality_holds_on_real_runs_of_every_strategy() {
    let p = make_problem("rosenbrock", 2).unwrap();
    for strategy in CorruptionStrategy::ALL {
        for (params, form) in [(MethodParams::trust_region(), AccuracyForm::TrustRegion), (MethodParams::line_search(0.05), AccuracyForm::LineSearch)] {
            let suite = OracleSuite::new(
                ZerothOrderSpec::Czo(CzoSpec { eps_f: 1e-3, eps_c: 0.1, delta_0: 0.1 }),
                SfoSpec { eps_g: 0.01, kappa: 0.5, tau: 0.5, delta_1: 0.3, corruption_strategy: strategy, ..SfoSpec::exact(form) },
            )
            .unwrap();
            for seed in 0..5 {
                let t = run(&p, &suite, &params, &RunOptions { epsilon: 1e-2, max_iters: 3000, seed, analysis: None }).unwrap();
                let checks = check_trace(&t, &params, 1e-3).unwrap();
                assert!(checks[0].holds, "{strategy:?} {:?} seed {seed}: {:?}", params.method, checks[0]);
            }
        }
    }
}

#[test]
fn szo_subexponential_config_runs() {
    let text = CONFIG
        .replace("noise_family = \"pareto-mixture\"", "noise_family = \"subexponential\"\nsubexp_nu = 1e-9\nsubexp_b = 1e-9")
        .replace("q = 3.0", "q = 2.0")
        .replace("zeta_q = 1e-27", "zeta_q = 1e-18");
    let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    cfg.experiment.trials = 4;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.trials.len(), 4);
    assert!(matches!(out.report.tail_model, adaptopt::theory::TailModel::Bernstein { .. }));
}
