use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use morphquad_cli::bench::benchmark_controllers;
use morphquad_cli::pipeline::plan_scenario;
use morphquad_cli::report::{
    summary_text, trajectory_csv, write_benchmark_csv, write_report, RunReport,
};
use morphquad_cli::scenario::{ControllerKind, Scenario};
use morphquad_cli::sim::{simulate_tracking, PlannedReference};

#[derive(Parser)]
#[command(
    name = "simcli",
    about = "Plan, simulate, and benchmark morphing-quadrotor flights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for reports (default: ./out/<scenario-name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for the simulation RNG.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Plan only: map, path, corridor, trajectory, morph schedule.
    Plan { scenario: PathBuf },
    /// Plan and track the trajectory in closed-loop simulation.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "proposed")]
        controller: ControllerKind,
        /// Disable morphing (the planner then fails on scenarios that
        /// require deformation).
        #[arg(long)]
        no_morph: bool,
    },
    /// Circle-tracking benchmark with continuous morphing.
    Benchmark {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "pid,lqr,proposed")]
        controllers: Vec<ControllerKind>,
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.8,1.0")]
        vmax: Vec<f64>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>, no_morph: bool) -> anyhow::Result<(Scenario, PathBuf)> {
    let mut scenario = Scenario::from_file(path).context("loading scenario")?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if no_morph {
        scenario.morph.enabled = false;
    }
    let base = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((scenario, base))
}

fn out_dir(cli_out: &Option<PathBuf>, name: &str) -> PathBuf {
    cli_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan { scenario } => {
            let (scenario, base) = load(scenario, cli.seed, false)?;
            let planned = plan_scenario(&scenario, &base).context("planning")?;
            let dir = out_dir(&cli.out, &scenario.name);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(
                dir.join("corridor.txt"),
                morphquad::corridor::corridor_to_text(&planned.corridor),
            )?;
            std::fs::write(
                dir.join("trajectory.csv"),
                trajectory_csv(&planned.result.trajectory, &planned.result.morph_profile, 100.0),
            )?;
            let r = &planned.result;
            let block = format!(
                "scenario = {}\nsegments = {}\ncost = {:.6}\nmax_velocity_residual = {:.6}\nmax_body_rate_residual = {:.6}\nmax_violation_m = {:.6}\niterations = {}\nsuccess = {}\nplanning_wall_time_ms = {:.3}\n",
                scenario.name,
                r.trajectory.segment_count(),
                r.cost,
                r.residuals.max_velocity,
                r.residuals.max_body_rate,
                r.residuals.max_violation,
                r.iterations,
                r.success,
                r.wall_time_ms,
            );
            std::fs::write(dir.join("plan_summary.txt"), &block)?;
            print!("{block}");
            println!("wrote {}", dir.display());
            Ok(r.success)
        }
        Command::Simulate {
            scenario,
            controller,
            no_morph,
        } => {
            let (scenario, base) = load(scenario, cli.seed, *no_morph)?;
            let planned = plan_scenario(&scenario, &base).context("planning")?;
            let reference = PlannedReference {
                trajectory: &planned.result.trajectory,
                profile: &planned.result.morph_profile,
            };
            let outcome = simulate_tracking(
                &scenario,
                &reference,
                Some((&planned.corridor, &planned.result.trajectory)),
                *controller,
                scenario.seed,
            );
            let report = RunReport::from_outcome(
                &scenario.name,
                *controller,
                scenario.seed,
                planned.result.wall_time_ms,
                planned.result.success,
                &outcome,
            );
            let dir = out_dir(&cli.out, &scenario.name);
            let (telemetry, summary) = write_report(&report, &dir)?;
            std::fs::write(
                dir.join("trajectory.csv"),
                trajectory_csv(&planned.result.trajectory, &planned.result.morph_profile, 100.0),
            )?;
            print!("{}", summary_text(&report.summary));
            println!("wrote {} and {}", telemetry.display(), summary.display());
            Ok(report.summary.success)
        }
        Command::Benchmark {
            scenario,
            controllers,
            vmax,
        } => {
            let (scenario, _) = load(scenario, cli.seed, false)?;
            let rows = benchmark_controllers(&scenario, controllers, vmax, scenario.seed);
            let dir = out_dir(&cli.out, &scenario.name);
            let path = dir.join("benchmark.csv");
            write_benchmark_csv(&rows, &path)?;
            print!("{}", morphquad_cli::report::benchmark_csv(&rows));
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("run finished without success");
            ExitCode::FAILURE
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
