//! Command-line front end for `bmfg`: reads a TOML run configuration and
//! dispatches the `solve`, `sensitivity`, `curve`, `simulate`, `verify` and
//! `example2` subcommands.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure,
//! 3 `example2` reference check failure.

pub mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use bmfg::export;
use bmfg::mdp::{threshold_cost_curve, Threshold, ValueFunction};
use bmfg::numerics::GridFunction;
use bmfg::sensitivity::{
    finite_difference_check, solve_uniform_equilibrium_closed_form, solve_uniform_sensitivity_closed_form,
};
use bmfg::simulate::{
    cycle_statistics, empirical_vs_stationary, evaluate_policy_cost, required_horizon, simulate_population, SimConfig,
};
use bmfg::stationary::mean_field_of_theta;
use bmfg::{
    solve_equilibrium, solve_sensitivities, verify_equilibrium, EquilibriumSolution, GameModel,
    StationaryDistribution,
};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigError, Format, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bmfg", version, about = "Stationary equilibria of a binary-action mean field game")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `command.simulate.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `numerics.n`.
    #[arg(long, global = true)]
    grid_n: Option<usize>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the stationary equilibrium.
    Solve,
    /// Analytic sensitivities in gamma plus a finite-difference check.
    Sensitivity,
    /// Threshold against effort cost, and mean field against threshold.
    Curve,
    /// Population simulation under a threshold policy.
    Simulate,
    /// Residual report for a solution written by `solve`.
    Verify,
    /// Uniform kernel, c = 0.2, gamma = 0.5, beta = 0.9, against reference values.
    Example2,
}

enum Failure {
    Config(String),
    Solver(String),
    Check(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn solver<E: Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Solver(format!("{context}: {e}"))
}

type Outcome = Result<Value, Failure>;

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("--threads: must be at least 1");
            return EXIT_CONFIG;
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(value) => {
            emit(&value);
            EXIT_OK
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            EXIT_SOLVER
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK
        }
    }
}

/// Pretty JSON to standard output; a closed pipe is not an error.
fn emit(value: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn dispatch(cli: &Cli) -> Outcome {
    if let Command::Example2 = cli.command {
        return example2(&cli.global);
    }
    let path = cli
        .global
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required for this subcommand".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    apply_overrides(&mut cfg, &cli.global)?;
    let out = Output::prepare(&cfg)?;
    match cli.command {
        Command::Solve => solve(&cfg, &out),
        Command::Sensitivity => sensitivity(&cfg, &out),
        Command::Curve => curve(&cfg, &out),
        Command::Simulate => simulate(&cfg, &out),
        Command::Verify => verify(&cfg, &out),
        Command::Example2 => unreachable!(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, g: &GlobalArgs) -> Result<(), Failure> {
    if let Some(n) = g.grid_n {
        cfg.numerics.n = n;
    }
    if let Some(s) = g.seed {
        cfg.command.simulate.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.output.dir = d.clone();
    }
    cfg.validate()?;
    Ok(())
}

/// Output directory plus the file types to keep there.
struct Output {
    dir: PathBuf,
    formats: Vec<Format>,
}

impl Output {
    fn prepare(cfg: &RunConfig) -> Result<Self, Failure> {
        Self::at(&cfg.output.dir, cfg.output.formats.clone())
    }

    fn at(dir: &Path, formats: Vec<Format>) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("output.dir: {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), formats })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    /// Drop files whose type was not requested; returns the kept paths.
    fn keep(&self, written: Vec<PathBuf>) -> Result<Vec<String>, Failure> {
        let mut kept = Vec::new();
        for p in written {
            let fmt = match p.extension().and_then(|e| e.to_str()) {
                Some("csv") => Format::Csv,
                _ => Format::Json,
            };
            if self.wants(fmt) {
                kept.push(p.display().to_string());
            } else {
                std::fs::remove_file(&p).map_err(solver("output"))?;
            }
        }
        Ok(kept)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<Vec<String>, Failure> {
        if !self.wants(Format::Json) {
            return Ok(Vec::new());
        }
        let p = self.path(name);
        export::write_json(&p, value).map_err(solver("output"))?;
        Ok(vec![p.display().to_string()])
    }

    fn csv<R: Serialize>(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<String>, Failure> {
        if !self.wants(Format::Csv) {
            return Ok(Vec::new());
        }
        let p = self.path(name);
        let write = || -> Result<(), Box<dyn std::error::Error>> {
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(header)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(solver("output"))?;
        Ok(vec![p.display().to_string()])
    }
}

fn equilibrium(model: &GameModel) -> Result<EquilibriumSolution, Failure> {
    solve_equilibrium(model).map_err(solver("equilibrium"))
}

fn solve(cfg: &RunConfig, out: &Output) -> Outcome {
    let model = cfg.game_model()?;
    let sol = equilibrium(&model)?;
    let mut files = out.keep(export::write_solution(&out.dir, "solution", &model, &sol).map_err(solver("output"))?)?;
    files.extend(out.keep(export::write_distribution(&out.dir, "distribution", &sol.mu).map_err(solver("output"))?)?);
    Ok(json!({ "solution": sol.summary(&model), "files": files }))
}

fn sensitivity(cfg: &RunConfig, out: &Output) -> Outcome {
    let model = cfg.game_model()?;
    let sol = equilibrium(&model)?;
    let res = solve_sensitivities(&model, &sol).map_err(solver("sensitivity"))?;
    let mut files = out.keep(export::write_sensitivity(&out.dir, "sensitivity", &res).map_err(solver("output"))?)?;
    if out.wants(Format::Csv) {
        let p = out.path("fig1.csv");
        export::write_fig1(&p, &sol, &res).map_err(solver("output"))?;
        files.push(p.display().to_string());
    }
    let eps = cfg.command.sensitivity.eps;
    let fd = if eps > 0.0 {
        let report = finite_difference_check(&model, &sol, eps).map_err(solver("finite differences"))?;
        files.extend(out.json("finite_difference.json", &report)?);
        Some(report)
    } else {
        None
    };
    Ok(json!({
        "solution": sol.summary(&model),
        "w0": res.w0,
        "theta_gamma": res.theta_gamma,
        "z_gamma": res.z_gamma,
        "z_prime": res.z_prime,
        "jump": res.jump(),
        "method": res.method,
        "finite_difference": fd,
        "files": files,
    }))
}

fn curve(cfg: &RunConfig, out: &Output) -> Outcome {
    let model = cfg.game_model()?;
    let opts = &cfg.command.curve;
    let rho = opts.rho.unwrap_or(cfg.model.beta);
    let r1 = &model.cost.r1;
    let grid = model.grid();
    let tol = model.tolerances.bellman;
    let bounds = threshold_cost_curve(r1, &model.kernel, rho, &[], grid, tol).map_err(solver("curve"))?;
    let m = opts.points;
    let lo = if bounds.r_lower > 0.0 { bounds.r_lower } else { bounds.r_upper / m as f64 };
    let r_values: Vec<f64> = (0..m).map(|k| lo + (bounds.r_upper - lo) * k as f64 / (m - 1) as f64).collect();
    let curve = threshold_cost_curve(r1, &model.kernel, rho, &r_values, grid, tol).map_err(solver("curve"))?;

    let k = opts.theta_points;
    let thetas: Vec<f64> = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
    let zs = thetas
        .par_iter()
        .map(|&t| mean_field_of_theta(&model.kernel, Threshold::Interior(t), grid))
        .collect::<bmfg::Result<Vec<f64>>>()
        .map_err(solver("mean field sweep"))?;

    let mut files = out.csv(
        "curve.csv",
        &["r", "tag", "theta"],
        curve.points.iter().map(|(r, t)| (r, t.tag(), t.level())),
    )?;
    files.extend(out.csv("z_theta.csv", &["theta", "z"], thetas.iter().zip(&zs))?);
    files.extend(out.json("curve.json", &curve)?);
    Ok(json!({
        "rho": rho,
        "r_lower": curve.r_lower,
        "r_upper": curve.r_upper,
        "points": curve.points.len(),
        "theta_points": thetas.len(),
        "files": files,
    }))
}

fn simulate(cfg: &RunConfig, out: &Output) -> Outcome {
    let model = cfg.game_model()?;
    let opts = &cfg.command.simulate;
    let (policy, z, dist) = match opts.policy.fixed() {
        Some(t) => {
            let dist = bmfg::stationary_distribution(&model.kernel, t, model.grid()).map_err(solver("stationary law"))?;
            (t, dist.mean, dist)
        }
        None => {
            let sol = equilibrium(&model)?;
            (sol.theta, sol.z, sol.mu)
        }
    };
    let mut sim = SimConfig::new(opts.agents, opts.horizon, opts.burn_in, policy, opts.seed);
    sim.initial_law = opts.initial.clone();
    sim.bins = opts.bins;
    sim.validate().map_err(|e| Failure::Config(format!("command.simulate: {e}")))?;
    let mut stats = simulate_population(&model, &sim).map_err(solver("simulation"))?;
    if let Some(t) = policy.interior() {
        if opts.cycles >= 100 {
            stats.cycles = cycle_statistics(&model.kernel, t, opts.cycles, opts.seed).map_err(solver("cycles"))?;
        }
    }
    if opts.cost_replications > 0 {
        let horizon = required_horizon(&model, z);
        let cost = evaluate_policy_cost(&model, z, policy, 0.0, opts.cost_replications, horizon, opts.seed)
            .map_err(solver("policy cost"))?;
        stats.policy_costs.push(cost);
    }
    let distance = empirical_vs_stationary(&stats, &dist).ok();
    let files = out.keep(export::write_sim_stats(&out.dir, "simulation", &stats).map_err(solver("output"))?)?;
    Ok(json!({
        "policy": policy,
        "z": z,
        "time_average": stats.time_average,
        "time_average_stderr": stats.time_average_stderr,
        "atom0_frequency": stats.atom0_frequency,
        "cycles": stats.cycles,
        "policy_costs": stats.policy_costs,
        "distance": distance,
        "files": files,
    }))
}

#[derive(Deserialize)]
struct StoredSummary {
    z: f64,
    theta: Threshold,
    residual_bellman: f64,
    bisection_steps: usize,
    value_iterations: usize,
    existence_bound: f64,
    existence_condition_holds: bool,
    grid_n: usize,
}

#[derive(Deserialize)]
struct StoredDistribution {
    pi0: f64,
    atom_at_one: bool,
    z: f64,
    density_at_theta: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Rebuild the solution written by `solve` from `solution.json`,
/// `solution.csv` and `distribution.json`.
fn load_solution(cfg: &RunConfig, dir: &Path) -> Result<(GameModel, EquilibriumSolution), Failure> {
    let summary: StoredSummary = read_json(&dir.join("solution.json"))?;
    let stored_mu: StoredDistribution = read_json(&dir.join("distribution.json"))?;
    let mut cfg = cfg.clone();
    cfg.numerics.n = summary.grid_n;
    let model = cfg.game_model()?;
    let grid = model.grid().clone();

    let csv_path = dir.join("solution.csv");
    let bad = |e: &dyn Display| Failure::Config(format!("{}: {e}", csv_path.display()));
    let mut rdr = csv::Reader::from_path(&csv_path).map_err(|e| bad(&e))?;
    let (mut v, mut p) = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<(f64, f64, f64)>() {
        let (_, vx, px) = row.map_err(|e| bad(&e))?;
        v.push(vx);
        p.push(px);
    }
    let v = GridFunction::new(grid.clone(), v).map_err(|e| bad(&e))?;
    let density = GridFunction::new(grid, p).map_err(|e| bad(&e))?;
    let g = model.operator().apply(&v);
    let value = ValueFunction {
        v,
        g,
        z: summary.z,
        gamma: model.cost.gamma,
        beta: model.cost.beta,
        tol: model.tolerances.bellman,
        iterations: summary.value_iterations,
        residual: summary.residual_bellman,
    };
    let mu = StationaryDistribution {
        theta: summary.theta,
        atom0: stored_mu.pi0,
        atom_at_one: stored_mu.atom_at_one,
        density,
        density_at_theta: stored_mu.density_at_theta,
        mean: stored_mu.z,
    };
    let sol = EquilibriumSolution {
        v: value,
        theta: summary.theta,
        mu,
        z: summary.z,
        residual_z: f64::NAN,
        residual_bellman: summary.residual_bellman,
        bisection_steps: summary.bisection_steps,
        existence_bound: summary.existence_bound,
        existence_condition_holds: summary.existence_condition_holds,
    };
    Ok((model, sol))
}

fn verify(cfg: &RunConfig, out: &Output) -> Outcome {
    let (model, sol) = load_solution(cfg, &out.dir)?;
    let report = verify_equilibrium(&model, &sol);
    let files = out.json("verification.json", &report)?;
    if !report.passed {
        return Err(Failure::Solver(format!(
            "verification failed: {}",
            serde_json::to_string(&report).expect("report serializes")
        )));
    }
    Ok(json!({ "verification": report, "files": files }))
}

const EX2_C: f64 = 0.2;
const EX2_GAMMA: f64 = 0.5;
const EX2_BETA: f64 = 0.9;

/// Reference values and the tolerance each is checked to.
const EX2_REFERENCE: [(&str, f64, f64); 6] = [
    ("v0", 3.497854, 1e-5),
    ("theta", 0.485162, 1e-5),
    ("z", 0.345854, 1e-5),
    ("w0", 4.563055, 1e-3),
    ("theta_gamma", 1.162861, 1e-3),
    ("z_gamma", 0.336380, 1e-3),
];

fn example2(g: &GlobalArgs) -> Outcome {
    let out = Output::at(g.out_dir.as_deref().unwrap_or(Path::new("out")), vec![Format::Csv, Format::Json])?;
    let n = g.grid_n.unwrap_or(2000);
    let eq = solve_uniform_equilibrium_closed_form(EX2_C, EX2_GAMMA, EX2_BETA).map_err(solver("closed form"))?;
    let sens = solve_uniform_sensitivity_closed_form(&eq, EX2_GAMMA, EX2_BETA, EX2_C).map_err(solver("closed form"))?;
    let values = [eq.v0, eq.theta, eq.z, sens.w0, sens.theta_gamma, sens.z_gamma];

    let grid = bmfg::make_grid(n).map_err(|e| Failure::Config(format!("--grid-n: {e}")))?;
    let model = GameModel::new(
        bmfg::TransitionKernel::Uniform,
        bmfg::CostModel::linear(EX2_C, EX2_GAMMA, EX2_BETA),
        &grid,
    )
    .map_err(solver("model"))?;
    let sol = equilibrium(&model)?;
    let res = solve_sensitivities(&model, &sol).map_err(solver("sensitivity"))?;
    let grid_values = [sol.v0(), sol.theta.level(), sol.z, res.w0, res.theta_gamma, res.z_gamma];

    let fig1 = out.path("fig1.csv");
    export::write_fig1(&fig1, &sol, &res).map_err(solver("output"))?;

    let mut closed = serde_json::Map::new();
    let mut on_grid = serde_json::Map::new();
    let mut checks = Vec::new();
    let mut failed = Vec::new();
    for (((name, reference, tol), value), grid_value) in EX2_REFERENCE.iter().zip(values).zip(grid_values) {
        closed.insert(name.to_string(), json!(value));
        on_grid.insert(name.to_string(), json!(grid_value));
        let err = (value - reference).abs();
        let pass = err <= *tol;
        if !pass {
            failed.push(format!("{name} = {value:.6} vs {reference} (|err| {err:.1e} > {tol:.0e})"));
        }
        checks.push(json!({ "name": name, "reference": reference, "value": value, "abs_err": err, "tol": tol, "pass": pass }));
    }
    let mut result = Value::Object(closed);
    result["grid"] = Value::Object(on_grid);
    result["grid_n"] = json!(n);
    result["checks"] = json!(checks);
    result["files"] = json!([fig1.display().to_string()]);
    out.json("example2.json", &result)?;
    if failed.is_empty() {
        Ok(result)
    } else {
        emit(&result);
        Err(Failure::Check(failed.join("; ")))
    }
}
