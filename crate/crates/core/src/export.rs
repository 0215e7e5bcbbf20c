//! CSV and JSON writers for solver outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::equilibrium::{EquilibriumSolution, GameModel};
use crate::error::Result;
use crate::mdp::Threshold;
use crate::numerics::Branch;
use crate::sensitivity::SensitivityResult;
use crate::simulate::SimStats;
use crate::stationary::StationaryDistribution;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Lower => "lower",
        Branch::Upper => "upper",
    }
}

#[derive(Serialize)]
struct DistributionHeader {
    theta: Threshold,
    pi0: f64,
    atom_at_one: bool,
    z: f64,
    density_at_theta: Option<f64>,
    grid_n: usize,
}

/// `<stem>.csv` with `(x, p)` and `<stem>.json` with `π₀`, `θ` and `z`.
pub fn write_distribution(dir: &Path, stem: &str, dist: &StationaryDistribution) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["x", "p"])?;
    for (&x, &p) in dist.grid().nodes().iter().zip(dist.density.values()) {
        w.serialize((x, p))?;
    }
    w.flush()?;
    let json_path = dir.join(format!("{stem}.json"));
    write_json(
        &json_path,
        &DistributionHeader {
            theta: dist.theta,
            pi0: dist.atom0,
            atom_at_one: dist.atom_at_one,
            z: dist.mean,
            density_at_theta: dist.density_at_theta,
            grid_n: dist.grid().n(),
        },
    )?;
    Ok(vec![csv_path, json_path])
}

/// `<stem>.json` summary and `<stem>.csv` with `(x, v, p)`.
pub fn write_solution(dir: &Path, stem: &str, model: &GameModel, sol: &EquilibriumSolution) -> Result<Vec<PathBuf>> {
    let json_path = dir.join(format!("{stem}.json"));
    write_json(&json_path, &sol.summary(model))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["x", "v", "p"])?;
    let nodes = sol.v.v.grid().nodes();
    for ((&x, &v), &p) in nodes.iter().zip(sol.v.v.values()).zip(sol.mu.density.values()) {
        w.serialize((x, v, p))?;
    }
    w.flush()?;
    Ok(vec![json_path, csv_path])
}

#[derive(Serialize)]
struct SensitivityHeader<'a> {
    w0: f64,
    theta_gamma: f64,
    z_gamma: f64,
    z_prime: f64,
    jump: f64,
    method: &'a crate::sensitivity::SensitivityMethod,
    truncated: bool,
}

/// `<stem>.json` scalars and `<stem>.csv` with `(x, w, branch)`; both
/// one-sided limits at `θ̄` appear.
pub fn write_sensitivity(dir: &Path, stem: &str, res: &SensitivityResult) -> Result<Vec<PathBuf>> {
    let json_path = dir.join(format!("{stem}.json"));
    write_json(
        &json_path,
        &SensitivityHeader {
            w0: res.w0,
            theta_gamma: res.theta_gamma,
            z_gamma: res.z_gamma,
            z_prime: res.z_prime,
            jump: res.jump(),
            method: &res.method,
            truncated: res.truncated,
        },
    )?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["x", "w", "branch"])?;
    for (x, y, b) in res.w.samples() {
        w.serialize((x, y, branch_name(b)))?;
    }
    w.flush()?;
    Ok(vec![json_path, csv_path])
}

/// Value function and perturbation function on a shared abscissa:
/// columns `(x, v, w, branch)`.
pub fn write_fig1(path: &Path, sol: &EquilibriumSolution, res: &SensitivityResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "v", "w", "branch"])?;
    for (x, wx, b) in res.w.samples() {
        w.serialize((x, sol.v.v.eval(x), wx, branch_name(b)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimSummary<'a> {
    agents: usize,
    horizon: usize,
    time_average: f64,
    time_average_stderr: f64,
    atom0_frequency: f64,
    cycles: &'a crate::simulate::CycleStats,
    policy_costs: &'a [crate::simulate::PolicyCost],
}

/// `<stem>_trajectory.csv` `(t, x)`, `<stem>_histogram.csv`
/// `(bin_left, bin_right, mass)` with the zero atom as a degenerate first
/// row, and `<stem>.json` with the estimates.
pub fn write_sim_stats(dir: &Path, stem: &str, stats: &SimStats) -> Result<Vec<PathBuf>> {
    let traj_path = dir.join(format!("{stem}_trajectory.csv"));
    let mut w = csv_writer(&traj_path)?;
    w.write_record(["t", "x"])?;
    for (t, x) in stats.trajectory.iter().enumerate() {
        w.serialize((t, x))?;
    }
    w.flush()?;

    let hist_path = dir.join(format!("{stem}_histogram.csv"));
    let mut w = csv_writer(&hist_path)?;
    w.write_record(["bin_left", "bin_right", "mass"])?;
    w.serialize((0.0, 0.0, stats.atom0_frequency))?;
    let width = 1.0 / stats.bins as f64;
    for (k, m) in stats.histogram.iter().enumerate() {
        w.serialize((k as f64 * width, (k + 1) as f64 * width, m))?;
    }
    w.flush()?;

    let json_path = dir.join(format!("{stem}.json"));
    write_json(
        &json_path,
        &SimSummary {
            agents: stats.agent_averages.len(),
            horizon: stats.trajectory.len(),
            time_average: stats.time_average,
            time_average_stderr: stats.time_average_stderr,
            atom0_frequency: stats.atom0_frequency,
            cycles: &stats.cycles,
            policy_costs: &stats.policy_costs,
        },
    )?;
    Ok(vec![traj_path, hist_path, json_path])
}
