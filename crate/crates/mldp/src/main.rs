//! `mldp`: run the experiment pipelines described by a JSON config.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 solver
//! failure, 4 infeasible action problem. Artifacts (CSV/JSON plus a
//! `manifest.json` with the semantic config hash) land in the config's
//! output directory unless `--output-dir` overrides it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use mldp::config::{Experiment, ExperimentConfig};
use mldp::io;
use mldp::manifest::Manifest;
use mldp::runner::ThreadRunner;
use mldp_core::action::{minimize_action, ActionResult};
use mldp_core::evolution::{simulate, solve_skeleton, ControlPath, NoiseDraw};
use mldp_core::operators::verify_conditions;
use mldp_core::rare_event::ldp_sweep;
use mldp_core::rng::derive_stream_seed;

#[derive(Parser)]
#[command(name = "mldp", version, about = "Small-noise evolution equations: skeletons, action minima, rare-event sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: MLDP_THREADS, then the available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write artifacts here instead of the config's output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural drift conditions on random states.
    VerifyConditions { config: PathBuf },
    /// Solve the deterministic controlled dynamics.
    Skeleton {
        config: PathBuf,
        /// Control CSV on the solver grid (default: zero control).
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Minimize the control energy subject to the configured event.
    MinimizeAction { config: PathBuf },
    /// Draw sample paths of the noisy dynamics.
    Simulate {
        config: PathBuf,
        /// Noise level (default: first eps_list entry). 0 is the
        /// deterministic limit.
        #[arg(long)]
        eps: Option<f64>,
        /// Number of paths (default 1), seeded per index.
        #[arg(long)]
        samples: Option<usize>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Minimize the action, then estimate the event probability across the
    /// configured noise levels.
    Sweep { config: PathBuf },
}

/// An error tagged with the process exit code it maps to.
struct CliError {
    code: u8,
    err: anyhow::Error,
}

type CliResult<T> = Result<T, CliError>;

/// Configuration-stage failures are always exit 2.
fn validation<T>(r: anyhow::Result<T>) -> CliResult<T> {
    r.map_err(|err| CliError { code: 2, err })
}

/// Run-stage failures: solver breakdowns are exit 3, anything that is
/// really a bad parameter surfacing late stays exit 2.
fn run_stage<T>(r: anyhow::Result<T>) -> CliResult<T> {
    r.map_err(|err| {
        let code = err
            .chain()
            .find_map(|cause| cause.downcast_ref::<mldp_core::Error>())
            .map_or(3, |core| match core {
                mldp_core::Error::SolverFailure { .. } | mldp_core::Error::NonFinite(_) => 3,
                _ => 2,
            });
        CliError { code, err }
    })
}

fn infeasible(message: String) -> CliError {
    CliError {
        code: 4,
        err: anyhow!(message),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config_path = match &cli.command {
        Command::VerifyConditions { config }
        | Command::Skeleton { config, .. }
        | Command::MinimizeAction { config }
        | Command::Simulate { config, .. }
        | Command::Sweep { config } => config.clone(),
    };
    let config = validation(ExperimentConfig::load(&config_path))?;
    let exp = validation(config.realize())?;
    let runner = validation(ThreadRunner::from_env(cli.threads))?;
    let out_dir = cli
        .output_dir
        .clone()
        .unwrap_or_else(|| exp.config.output_dir.clone());

    match cli.command {
        Command::VerifyConditions { .. } => cmd_verify(&exp, &runner, &out_dir),
        Command::Skeleton { control, .. } => cmd_skeleton(&exp, &runner, &out_dir, control),
        Command::MinimizeAction { .. } => cmd_minimize(&exp, &runner, &out_dir),
        Command::Simulate {
            eps, samples, seed, ..
        } => cmd_simulate(&exp, &runner, &out_dir, eps, samples, seed),
        Command::Sweep { .. } => cmd_sweep(&exp, &runner, &out_dir),
    }
}

fn cmd_verify(exp: &Experiment, runner: &ThreadRunner, out_dir: &Path) -> CliResult<()> {
    let mut manifest = Manifest::new("verify-conditions", exp, runner.threads());
    let start = Instant::now();
    let report = run_stage(
        verify_conditions(
            &exp.drift,
            &exp.noise,
            &exp.triple,
            exp.config.condition_samples,
            exp.config.seed,
        )
        .map_err(Into::into),
    )?;
    manifest.record_stage("verify_conditions", start.elapsed());
    for entry in &report.entries {
        println!(
            "{}: claimed={} pass={}{}",
            entry.condition.as_str(),
            entry.claimed,
            entry.pass,
            if entry.note.is_empty() {
                String::new()
            } else {
                format!(" ({})", entry.note)
            }
        );
    }
    println!("all claimed conditions pass: {}", report.all_claimed_pass());
    let text = io::json_text(&io::condition_report_json(&report));
    validation(io::write_artifact(out_dir, "condition_report.json", text.as_bytes()))?;
    manifest.record_artifact("condition_report.json");
    validation(manifest.write(out_dir))?;
    Ok(())
}

fn cmd_skeleton(
    exp: &Experiment,
    runner: &ThreadRunner,
    out_dir: &Path,
    control_file: Option<PathBuf>,
) -> CliResult<()> {
    let mut manifest = Manifest::new("skeleton", exp, runner.threads());
    let control = match &control_file {
        Some(path) => {
            manifest.record_override("control", json!(path.display().to_string()));
            let text = validation(
                std::fs::read_to_string(path)
                    .with_context(|| format!("reading control CSV {}", path.display())),
            )?;
            validation(io::parse_control_csv(
                &text,
                exp.solver.t_end,
                exp.solver.n_steps,
                exp.noise.modes(),
            ))?
        }
        None => validation(
            ControlPath::zeros(exp.solver.t_end, exp.solver.n_steps, exp.noise.modes())
                .map_err(Into::into),
        )?,
    };
    let start = Instant::now();
    let path = run_stage(
        solve_skeleton(&exp.x0, &control, &exp.drift, &exp.noise, &exp.solver).map_err(Into::into),
    )?;
    manifest.record_stage("skeleton", start.elapsed());
    println!(
        "skeleton: {} steps, initial H-norm {:.6e}, final H-norm {:.6e}",
        exp.solver.n_steps,
        exp.x0.h_norm(),
        path.terminal_state().h_norm()
    );
    validation(io::write_artifact(out_dir, "skeleton.csv", io::path_csv(&path).as_bytes()))?;
    manifest.record_artifact("skeleton.csv");
    validation(io::write_artifact(out_dir, "skeleton.bin", &io::path_bytes(&path)))?;
    manifest.record_artifact("skeleton.bin");
    validation(manifest.write(out_dir))?;
    Ok(())
}

fn require_event(exp: &Experiment) -> CliResult<mldp_core::action::ConstraintSpec> {
    if exp.config.event.is_none() {
        return Err(CliError {
            code: 2,
            err: anyhow!("this subcommand requires an event in the config"),
        });
    }
    run_stage(exp.build_event()).map(|e| e.expect("event present"))
}

fn write_action_artifacts(
    exp: &Experiment,
    out_dir: &Path,
    manifest: &mut Manifest,
    result: &ActionResult,
) -> CliResult<()> {
    let _ = exp;
    let text = io::json_text(&io::action_json(result));
    validation(io::write_artifact(out_dir, "action.json", text.as_bytes()))?;
    manifest.record_artifact("action.json");
    validation(io::write_artifact(
        out_dir,
        "minimizer.csv",
        io::control_csv(&result.minimizer).as_bytes(),
    ))?;
    manifest.record_artifact("minimizer.csv");
    Ok(())
}

fn cmd_minimize(exp: &Experiment, runner: &ThreadRunner, out_dir: &Path) -> CliResult<()> {
    let mut manifest = Manifest::new("minimize-action", exp, runner.threads());
    let event = require_event(exp)?;
    let start = Instant::now();
    let result = run_stage(
        minimize_action(&event, &exp.x0, &exp.drift, &exp.noise, &exp.solver, &exp.optimizer)
            .map_err(Into::into),
    )?;
    manifest.record_stage("minimize_action", start.elapsed());
    println!(
        "action value {:.6e}, feasible={}, converged={}, iterations={}",
        result.value, result.feasible, result.converged, result.iterations
    );
    write_action_artifacts(exp, out_dir, &mut manifest, &result)?;
    validation(manifest.write(out_dir))?;
    if !result.feasible {
        return Err(infeasible(format!(
            "action problem infeasible: best violation {:.3e} exceeds the tolerance",
            result.violation
        )));
    }
    Ok(())
}

fn cmd_simulate(
    exp: &Experiment,
    runner: &ThreadRunner,
    out_dir: &Path,
    eps: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut manifest = Manifest::new("simulate", exp, runner.threads());
    let eps = match eps {
        Some(e) => {
            manifest.record_override("eps", json!(e));
            e
        }
        None => *validation(exp.config.eps_list.first().ok_or_else(|| {
            anyhow!("simulate needs --eps or a nonempty eps_list in the config")
        }))?,
    };
    if !eps.is_finite() || eps < 0.0 {
        return Err(CliError {
            code: 2,
            err: anyhow!("eps must be finite and nonnegative, got {eps}"),
        });
    }
    let n_paths = match samples {
        Some(n) => {
            manifest.record_override("samples", json!(n));
            n
        }
        None => 1,
    };
    if n_paths == 0 {
        return Err(CliError {
            code: 2,
            err: anyhow!("--samples must be at least 1"),
        });
    }
    let seed = match seed {
        Some(s) => {
            manifest.record_override("seed", json!(s));
            s
        }
        None => exp.config.seed,
    };
    let start = Instant::now();
    for i in 0..n_paths {
        let draw = run_stage(
            NoiseDraw::generate(
                derive_stream_seed(seed, i as u64),
                exp.solver.n_steps,
                exp.noise.modes(),
                exp.solver.dt(),
            )
            .map_err(Into::into),
        )?;
        let path = run_stage(
            simulate(&exp.x0, eps, None, &exp.drift, &exp.noise, &exp.solver, &draw)
                .map_err(Into::into),
        )?;
        let csv_name = format!("sample_{i:03}.csv");
        let bin_name = format!("sample_{i:03}.bin");
        validation(io::write_artifact(out_dir, &csv_name, io::path_csv(&path).as_bytes()))?;
        manifest.record_artifact(&csv_name);
        validation(io::write_artifact(out_dir, &bin_name, &io::path_bytes(&path)))?;
        manifest.record_artifact(&bin_name);
        if i == 0 {
            println!(
                "simulate: eps = {eps}, {} steps, sample 0 final H-norm {:.6e}",
                exp.solver.n_steps,
                path.terminal_state().h_norm()
            );
        }
    }
    manifest.record_stage("simulate", start.elapsed());
    println!("wrote {n_paths} path(s) to {}", out_dir.display());
    validation(manifest.write(out_dir))?;
    Ok(())
}

fn cmd_sweep(exp: &Experiment, runner: &ThreadRunner, out_dir: &Path) -> CliResult<()> {
    let mut manifest = Manifest::new("sweep", exp, runner.threads());
    if exp.config.eps_list.is_empty() {
        return Err(CliError {
            code: 2,
            err: anyhow!("sweep requires a nonempty eps_list with matching budgets"),
        });
    }
    let event = require_event(exp)?;

    let start = Instant::now();
    let action = run_stage(
        minimize_action(&event, &exp.x0, &exp.drift, &exp.noise, &exp.solver, &exp.optimizer)
            .map_err(Into::into),
    )?;
    manifest.record_stage("minimize_action", start.elapsed());
    println!(
        "action value {:.6e}, feasible={}, converged={}",
        action.value, action.feasible, action.converged
    );

    let start = Instant::now();
    let table = run_stage(
        ldp_sweep(
            &event,
            &exp.config.eps_list,
            &exp.config.budgets,
            &action,
            &exp.drift,
            &exp.noise,
            &exp.solver,
            &exp.x0,
            exp.config.seed,
            runner,
        )
        .map_err(Into::into),
    )?;
    manifest.record_stage("sweep", start.elapsed());
    for (i, row) in table.rows.iter().enumerate() {
        let gap = table
            .gaps
            .get(i)
            .map(|g| format!(", gap {g:.4}"))
            .unwrap_or_default();
        println!(
            "eps {:.4}: p_hat {:.6e} [{:.3e}, {:.3e}], -eps^2 log p {:.4}, {} ({} hits, ess {:.0}){gap}",
            row.eps,
            row.p_hat,
            row.ci_low,
            row.ci_high,
            -row.log_stat,
            row.estimator.as_str(),
            row.hits,
            row.ess,
        );
    }

    write_action_artifacts(exp, out_dir, &mut manifest, &action)?;
    validation(io::write_artifact(out_dir, "sweep.csv", io::table_csv(&table).as_bytes()))?;
    manifest.record_artifact("sweep.csv");
    validation(manifest.write(out_dir))?;
    if table.flagged {
        return Err(infeasible(
            "action problem infeasible: sweep ran plain-only with no gap column".to_string(),
        ));
    }
    Ok(())
}
