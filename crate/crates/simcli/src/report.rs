//! Telemetry CSV, run summaries, trajectory export, and the benchmark
//! table. All float formatting is fixed-width scientific so identical
//! runs produce byte-identical files; the planning wall time is the one
//! nondeterministic quantity and lives on its own summary line.

use std::io::Write;
use std::path::{Path, PathBuf};

use morphquad::optimizer::MorphProfile;
use morphquad::trajectory::MincoTrajectory;

use crate::bench::BenchRow;
use crate::scenario::ControllerKind;
use crate::sim::{SimOutcome, TelemetryRow};

/// Summary statistics of a run.
#[derive(Debug, Clone)]
pub struct Summary {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub avg_tracking_error: f64,
    pub max_tracking_error: f64,
    pub max_corridor_violation: f64,
    pub planning_wall_ms: f64,
    pub success: bool,
    pub thrust_energy: f64,
    pub goal_reached: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<TelemetryRow>,
    pub summary: Summary,
}

impl RunReport {
    pub fn from_outcome(
        scenario: &str,
        controller: ControllerKind,
        seed: u64,
        planning_wall_ms: f64,
        plan_success: bool,
        outcome: &SimOutcome,
    ) -> Self {
        Self {
            rows: outcome.rows.clone(),
            summary: Summary {
                scenario: scenario.to_string(),
                controller,
                seed,
                avg_tracking_error: outcome.avg_error,
                max_tracking_error: outcome.max_error,
                max_corridor_violation: outcome.max_violation,
                planning_wall_ms,
                success: plan_success && outcome.goal_reached,
                thrust_energy: outcome.thrust_energy,
                goal_reached: outcome.goal_reached,
            },
        }
    }
}

pub const TELEMETRY_HEADER: &str = "t,p_x,p_y,p_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,omega_z,alpha_1,alpha_2,alpha_3,alpha_4,f,tau_x,tau_y,tau_z,U_1,U_2,U_3,U_4,H_n,ref_p_x,ref_p_y,ref_p_z,err_norm";

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

/// Render the telemetry CSV.
pub fn telemetry_csv(rows: &[TelemetryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 256 + 64);
    out.push_str(TELEMETRY_HEADER);
    out.push('\n');
    for r in rows {
        let q = r.attitude.as_ref();
        let cols: Vec<String> = [
            r.t,
            r.position.x,
            r.position.y,
            r.position.z,
            r.velocity.x,
            r.velocity.y,
            r.velocity.z,
            q.w,
            q.i,
            q.j,
            q.k,
            r.body_rate.x,
            r.body_rate.y,
            r.body_rate.z,
            r.alpha[0],
            r.alpha[1],
            r.alpha[2],
            r.alpha[3],
            r.thrust,
            r.torque.x,
            r.torque.y,
            r.torque.z,
            r.rotor_thrusts[0],
            r.rotor_thrusts[1],
            r.rotor_thrusts[2],
            r.rotor_thrusts[3],
            r.thrust_slope,
            r.reference_position.x,
            r.reference_position.y,
            r.reference_position.z,
            r.error_norm,
        ]
        .iter()
        .map(|&v| fmt(v))
        .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// Key-value summary block. Planning wall time is nondeterministic.
pub fn summary_text(summary: &Summary) -> String {
    format!(
        "scenario = {}\ncontroller = {}\nseed = {}\navg_tracking_error_m = {}\nmax_tracking_error_m = {}\nmax_corridor_violation_m = {}\nsuccess = {}\ngoal_reached = {}\nenergy_f2_integral = {}\nplanning_wall_time_ms = {:.3}\n",
        summary.scenario,
        summary.controller,
        summary.seed,
        fmt(summary.avg_tracking_error),
        fmt(summary.max_tracking_error),
        fmt(summary.max_corridor_violation),
        summary.success,
        summary.goal_reached,
        fmt(summary.thrust_energy),
        summary.planning_wall_ms,
    )
}

/// Write `telemetry.csv` and `summary.txt`; returns their paths.
pub fn write_report(report: &RunReport, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let telemetry_path = dir.join("telemetry.csv");
    let summary_path = dir.join("summary.txt");
    std::fs::write(&telemetry_path, telemetry_csv(&report.rows))?;
    std::fs::write(&summary_path, summary_text(&report.summary))?;
    Ok((telemetry_path, summary_path))
}

/// Trajectory export: `t, p, v, a, j, alpha` rows at a fixed sample rate.
pub fn trajectory_csv(traj: &MincoTrajectory, profile: &MorphProfile, sample_rate: f64) -> String {
    let mut out = String::from("t,p_x,p_y,p_z,v_x,v_y,v_z,a_x,a_y,a_z,j_x,j_y,j_z,alpha\n");
    let total = traj.total_duration();
    let steps = (total * sample_rate).ceil() as usize;
    for n in 0..=steps {
        let t = (n as f64 / sample_rate).min(total);
        let (k, tau) = traj.locate(t);
        let p = traj.segment_eval(k, tau, 0);
        let v = traj.segment_eval(k, tau, 1);
        let a = traj.segment_eval(k, tau, 2);
        let j = traj.segment_eval(k, tau, 3);
        let (alpha, _) = profile.angle(t);
        let cols = [
            t, p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z, j.x, j.y, j.z, alpha,
        ];
        let rendered: Vec<String> = cols.iter().map(|&v| fmt(v)).collect();
        out.push_str(&rendered.join(","));
        out.push('\n');
    }
    out
}

/// Benchmark table in the average-block / max-block column layout.
pub fn benchmark_csv(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        return out;
    }
    let names: Vec<String> = rows[0]
        .cells
        .iter()
        .map(|c| c.controller.to_string())
        .collect();
    out.push_str("v_max");
    for n in &names {
        out.push_str(&format!(",avg_{n}"));
    }
    for n in &names {
        out.push_str(&format!(",max_{n}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:.3}", row.v_max));
        for c in &row.cells {
            out.push_str(&format!(",{}", fmt(c.avg_error)));
        }
        for c in &row.cells {
            out.push_str(&format!(",{}", fmt(c.max_error)));
        }
        out.push('\n');
    }
    out
}

pub fn write_benchmark_csv(rows: &[BenchRow], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(benchmark_csv(rows).as_bytes())
}
