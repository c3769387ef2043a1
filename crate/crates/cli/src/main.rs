use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use adaptopt::engine::read_records;
use adaptopt::harness::check::{check_records, TraceContext};
use adaptopt::harness::validate::validate_oracles;
use adaptopt::harness::{run_experiment, sweep, theory_for, ExperimentConfig, ExperimentOutcome, HarnessError};
use adaptopt::theory::TheoryError;
use anyhow::Context;
use clap::{Parser, Subcommand};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "adaptopt", version, about = "Adaptive trust-region and line-search experiments under corrupted oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seeded trials of an experiment and write summary.csv and tail.csv.
    Run {
        config: PathBuf,
        /// Run even if the theory is infeasible.
        #[arg(long)]
        force: bool,
        /// Overrides experiment.output_dir.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Repeat an experiment for several values of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted path such as method.gamma_inc.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the constants, thresholds and bounds for a config.
    Theory {
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check oracle draws against their specs.
    ValidateOracles {
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the pathwise inequalities on a recorded trace.
    CheckTrace { trace: PathBuf, config: PathBuf },
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))
}

fn print_outcome(o: &ExperimentOutcome) {
    println!(
        "epsilon {:.6e}, {} trials, budget {}, converged {:.1}%",
        o.report.epsilon,
        o.trials.len(),
        o.max_iters,
        100.0 * o.converged_fraction()
    );
    println!(
        "lemma violations {}, dynamics failures {}, tail violations {}",
        o.lemma_violations(),
        o.dynamics_failures(),
        o.tail_violations()
    );
    if let Some(c) = &o.collapse {
        println!("drift condition fails: median final alpha {:.3e} ({:.3e} of alpha_0)", c.median_final_alpha, c.median_ratio_to_alpha_0);
    }
}

fn is_infeasible(e: &HarnessError) -> bool {
    matches!(e, HarnessError::Infeasible(_) | HarnessError::Theory(TheoryError::Infeasible(_)))
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { config, force, output_dir } => {
            let mut cfg = load(&config)?;
            cfg.experiment.force |= force;
            if output_dir.is_some() {
                cfg.experiment.output_dir = output_dir;
            }
            match run_experiment(&cfg) {
                Ok(o) => {
                    print_outcome(&o);
                    Ok(if o.has_invariant_violation() { EXIT_VIOLATION } else { 0 })
                }
                Err(e) if is_infeasible(&e) => {
                    eprintln!("{e}");
                    Ok(EXIT_INFEASIBLE)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Sweep { config, param, values, force, output_dir } => {
            let mut cfg = load(&config)?;
            cfg.experiment.force |= force;
            if output_dir.is_some() {
                cfg.experiment.output_dir = output_dir;
            }
            let points = sweep(&cfg, &param, &values)?;
            let mut code = 0;
            for p in &points {
                match (&p.outcome, &p.error) {
                    (Some(o), _) => {
                        println!("{param} = {}", p.value);
                        print_outcome(o);
                        if o.has_invariant_violation() {
                            code = EXIT_VIOLATION;
                        }
                    }
                    (None, err) => {
                        println!("{param} = {}: {}", p.value, err.as_deref().unwrap_or("failed"));
                        if code == 0 {
                            code = EXIT_INFEASIBLE;
                        }
                    }
                }
            }
            Ok(code)
        }
        Command::Theory { config, json } => {
            let cfg = load(&config)?;
            match theory_for(&cfg) {
                Ok((report, _)) => {
                    if json {
                        println!("{}", serde_json::to_string_pretty(&report)?);
                    } else {
                        print!("{}", report.to_text());
                    }
                    Ok(if report.feasible { 0 } else { EXIT_INFEASIBLE })
                }
                Err(e) if is_infeasible(&e) => {
                    eprintln!("{e}");
                    Ok(EXIT_INFEASIBLE)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::ValidateOracles { config, draws, seed } => {
            let cfg = load(&config)?;
            let problem = cfg.problem()?;
            let x = cfg.method.start(&problem)?;
            let report = validate_oracles(&cfg.suite()?, &problem, &x, draws, seed);
            print!("{}", report.to_text());
            Ok(if report.passed() { 0 } else { EXIT_VIOLATION })
        }
        Command::CheckTrace { trace, config } => {
            let cfg = load(&config)?;
            let (report, params) = match theory_for(&cfg) {
                Ok(r) => r,
                Err(e) if is_infeasible(&e) => {
                    eprintln!("{e}");
                    return Ok(EXIT_INFEASIBLE);
                }
                Err(e) => return Err(e.into()),
            };
            let file = fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let records = read_records(file)?;
            let ctx = TraceContext {
                gamma_inc: params.gamma_inc,
                gamma_dec: params.gamma_dec,
                alpha_0: params.alpha_0,
                alpha_bar: report.alpha_bar,
                h_eps: report.h_eps,
                eps_f: cfg.zeroth_order.eps_f(),
                final_phi: None,
            };
            let checks = check_records(&records, &ctx)?;
            for c in &checks {
                println!(
                    "({}) {} margin {:.6e} over {} prefixes{}",
                    c.id.label(),
                    if c.holds { "holds" } else { "VIOLATED" },
                    c.margin,
                    c.prefixes_checked,
                    c.first_violation.map_or_else(String::new, |t| format!(", first at t = {t}"))
                );
            }
            Ok(if checks.iter().all(|c| c.holds) { 0 } else { EXIT_VIOLATION })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
