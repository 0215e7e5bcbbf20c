//! Acceptance criteria 1–9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bmfg::equilibrium::{solve_equilibrium, EquilibriumSolution, GameModel, Tolerances};
use bmfg::kernels::{check_stochastic_monotonicity, expected_hitting_time, GapDensity, TransitionKernel};
use bmfg::mdp::{
    extract_threshold, gamma_bounds, solve_uncontrolled_value, solve_value_function, threshold_cost_curve,
    CostComponent, CostModel, Threshold,
};
use bmfg::numerics::make_grid;
use bmfg::sensitivity::{
    finite_difference_check, solve_sensitivities, solve_uniform_equilibrium_closed_form,
    solve_uniform_sensitivity_closed_form,
};
use bmfg::simulate::{cycle_statistics, evaluate_policy_cost, required_horizon, simulate_population, SimConfig};
use bmfg::stationary::{closed_form_uniform_stationary, mean_field_of_theta, stationary_distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

// Example 2: R(x, z) = x (0.2 + z), γ = 0.5, β = 0.9, uniform kernel
const C: f64 = 0.2;
const GAMMA: f64 = 0.5;
const BETA: f64 = 0.9;
const V0: f64 = 3.497854;
const THETA: f64 = 0.485162;
const Z: f64 = 0.345854;
const W0: f64 = 4.563055;
const THETA_GAMMA: f64 = 1.162861;
const Z_GAMMA: f64 = 0.336380;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn example2(n: usize, bellman: f64, fixed_point: f64) -> GameModel {
    let grid = make_grid(n).unwrap();
    GameModel::new(TransitionKernel::Uniform, CostModel::linear(C, GAMMA, BETA), &grid)
        .unwrap()
        .with_tolerances(Tolerances { bellman, fixed_point, ..Tolerances::default() })
}

fn theta_of(sol: &EquilibriumSolution) -> f64 {
    sol.theta.interior().unwrap_or(f64::NAN)
}

fn criterion1() -> Outcome {
    let e = solve_uniform_equilibrium_closed_form(C, GAMMA, BETA).unwrap();
    let errs = [(e.v0 - V0).abs(), (e.theta - THETA).abs(), (e.z - Z).abs()];
    outcome(
        errs.iter().all(|&d| d <= 1e-5),
        format!("v0={:.6} theta={:.6} z={:.6} max_err={:.1e}", e.v0, e.theta, e.z, errs.iter().fold(0.0f64, |a, &b| a.max(b))),
    )
}

fn criterion2() -> Outcome {
    let e = solve_uniform_equilibrium_closed_form(C, GAMMA, BETA).unwrap();
    let s = solve_uniform_sensitivity_closed_form(&e, GAMMA, BETA, C).unwrap();
    let errs = [(s.w0 - W0).abs(), (s.theta_gamma - THETA_GAMMA).abs(), (s.z_gamma - Z_GAMMA).abs()];
    outcome(
        errs.iter().all(|&d| d <= 1e-5),
        format!(
            "w0={:.6} theta_gamma={:.6} z_gamma={:.6} errs=({:.1e}, {:.1e}, {:.1e})",
            s.w0, s.theta_gamma, s.z_gamma, errs[0], errs[1], errs[2]
        ),
    )
}

fn criterion3() -> Outcome {
    let e = solve_uniform_equilibrium_closed_form(C, GAMMA, BETA).unwrap();
    let err = |n: usize| {
        let sol = solve_equilibrium(&example2(n, 1e-8, 1e-10)).unwrap();
        [(theta_of(&sol) - e.theta).abs(), (sol.z - e.z).abs(), (sol.v0() - e.v0).abs()]
    };
    let coarse = err(2000);
    let fine = err(4000);
    let within = fine.iter().all(|&d| d <= 2e-3);
    let halves = fine.iter().zip(&coarse).all(|(f, c)| *f <= 0.5 * c);
    outcome(
        within && halves,
        format!(
            "n=4000 errs (theta, z, v0)=({:.1e}, {:.1e}, {:.1e}); n=2000 errs=({:.1e}, {:.1e}, {:.1e})",
            fine[0], fine[1], fine[2], coarse[0], coarse[1], coarse[2]
        ),
    )
}

fn criterion4() -> Outcome {
    let grid = make_grid(4000).unwrap();
    let d = stationary_distribution(&TransitionKernel::Uniform, Threshold::Interior(THETA), &grid).unwrap();
    let exact = closed_form_uniform_stationary(THETA).unwrap();
    let sup = grid
        .nodes()
        .iter()
        .zip(d.density.values())
        .map(|(&x, &p)| (p - exact.density(x)).abs())
        .fold(0.0, f64::max);
    let identity = (d.mass_above_theta() - d.atom0).abs();
    outcome(sup <= 1e-4 && identity <= 1e-6, format!("sup_err={sup:.1e} identity_defect={identity:.1e}"))
}

fn criterion5() -> Outcome {
    let model = example2(4000, 1e-10, 1e-10);
    let eq = solve_equilibrium(&model).unwrap();
    let r = finite_difference_check(&model, &eq, 1e-3).unwrap();
    let e = solve_uniform_equilibrium_closed_form(C, GAMMA, BETA).unwrap();
    let exact = solve_uniform_sensitivity_closed_form(&e, GAMMA, BETA, C).unwrap();
    let rel_exact_theta = ((r.theta_gamma_fd - exact.theta_gamma) / exact.theta_gamma).abs();
    let rel_exact_z = ((r.z_gamma_fd - exact.z_gamma) / exact.z_gamma).abs();
    let pass = r.theta_gamma_rel_err <= 0.01 && r.z_gamma_rel_err <= 0.01 && rel_exact_theta <= 0.01 && rel_exact_z <= 0.01;
    outcome(
        pass,
        format!(
            "fd (theta_gamma, z_gamma)=({:.5}, {:.5}); grid analytic=({:.5}, {:.5}) rel=({:.1e}, {:.1e}); closed form rel=({:.1e}, {:.1e})",
            r.theta_gamma_fd, r.z_gamma_fd, r.theta_gamma, r.z_gamma, r.theta_gamma_rel_err, r.z_gamma_rel_err, rel_exact_theta, rel_exact_z
        ),
    )
}

fn criterion6() -> Outcome {
    // (a) z(θ) strictly increasing
    let grid = make_grid(2000).unwrap();
    let kernels = [
        TransitionKernel::Uniform,
        TransitionKernel::multiplicative_gap(GapDensity::Power { k: 2.0 }).unwrap(),
    ];
    let ladder: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let a = kernels.iter().all(|k| {
        let zs: Vec<f64> = ladder.iter().map(|&t| mean_field_of_theta(k, Threshold::Interior(t), &grid).unwrap()).collect();
        zs.windows(2).all(|w| w[1] > w[0])
    });

    // (b) θ(r) strictly increasing on [r̲, r̄]
    let curve_grid = make_grid(1000).unwrap();
    let r1 = CostComponent::identity();
    let probe = threshold_cost_curve(&r1, &TransitionKernel::Uniform, BETA, &[], &curve_grid, 1e-10).unwrap();
    let rs: Vec<f64> = (0..50)
        .map(|k| probe.r_lower + (probe.r_upper - probe.r_lower) * k as f64 / 49.0)
        .collect();
    let curve = threshold_cost_curve(&r1, &TransitionKernel::Uniform, BETA, &rs, &curve_grid, 1e-10).unwrap();
    let levels: Vec<(u8, f64)> = curve.points.iter().map(|(_, t)| level_rank(*t)).collect();
    let first = curve.points[0].1.level();
    let last = curve.points[49].1.level();
    let b = levels.windows(2).all(|w| w[1] > w[0]) && first <= 0.02 && last >= 0.98;

    // (c) comparative statics across γ
    let gammas = [0.45, 0.5, 0.55, 0.6];
    let base = example2(2000, 1e-9, 1e-9);
    let sols: Vec<EquilibriumSolution> =
        gammas.par_iter().map(|&g| solve_equilibrium(&base.with_gamma(g)).unwrap()).collect();
    let c = sols.windows(2).all(|w| {
        let (lo, hi) = (&w[0], &w[1]);
        let strict = theta_of(hi) > theta_of(lo) && hi.z > lo.z;
        let v_larger = lo.v.v.values().iter().zip(hi.v.v.values()).skip(1).all(|(a, b)| b > a);
        strict && v_larger
    });
    outcome(
        a && b && c,
        format!(
            "(a) z(theta) increasing: {a}; (b) theta(r) increasing on [{:.5}, {:.5}] with theta(r_lo)={first:.4}, theta(r_hi)={last:.4}: {b}; (c) statics over gamma: {c}",
            probe.r_lower, probe.r_upper
        ),
    )
}

/// Zero, Interior(x), One/AboveOne mapped to 0, x, 1 for the sweep order.
fn level_rank(t: Threshold) -> (u8, f64) {
    match t {
        Threshold::Zero => (0, 0.0),
        Threshold::Interior(x) => (1, x),
        Threshold::One | Threshold::AboveOne => (2, 1.0),
    }
}

fn criterion7() -> Outcome {
    let model = example2(1000, 1e-9, 1e-9);
    let policy = Threshold::Interior(THETA);
    let cfg = SimConfig::new(10_000, 2000, 500, policy, 20_240_601);
    let stats = simulate_population(&model, &cfg).unwrap();
    let pop_ok = (stats.time_average - Z).abs() <= 3.0 * stats.time_average_stderr;

    let cyc = cycle_statistics(&TransitionKernel::Uniform, THETA, 100_000, 7).unwrap();
    let hit = expected_hitting_time(&TransitionKernel::Uniform, THETA, &make_grid(4000).unwrap()).unwrap();
    let ratio_ok = (cyc.ratio - Z).abs() <= 3.0 * cyc.stderr;
    let tau_ok = (cyc.mean_tau - hit).abs() <= 3.0 * cyc.stderr_tau;

    let horizon = required_horizon(&model, Z);
    let reps = 200_000;
    let seed = 11;
    let eq_cost = evaluate_policy_cost(&model, Z, policy, 0.0, reps, horizon, seed).unwrap();
    let cost_ok = (eq_cost.mean - V0).abs() <= 3.0 * eq_cost.stderr;
    let deviations = [
        Threshold::Interior(THETA - 0.05),
        Threshold::Interior(THETA + 0.05),
        Threshold::Interior(THETA - 0.1),
        Threshold::Interior(THETA + 0.1),
        Threshold::Interior(0.1),
        Threshold::Interior(0.3),
        Threshold::Interior(0.7),
        Threshold::Interior(0.9),
        Threshold::AboveOne,
    ];
    let worst = deviations
        .par_iter()
        .map(|&t| {
            let c = evaluate_policy_cost(&model, Z, t, 0.0, reps, horizon, seed).unwrap();
            // improvement in units of the combined standard error
            (eq_cost.mean - c.mean) / (eq_cost.stderr.powi(2) + c.stderr.powi(2)).sqrt()
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let dev_ok = worst <= 3.0;
    outcome(
        pop_ok && ratio_ok && tau_ok && cost_ok && dev_ok,
        format!(
            "time avg {:.5}±{:.1e}; cycle ratio {:.5}±{:.1e}; tau {:.4}±{:.1e} vs {hit:.4}; cost {:.4}±{:.1e}; worst deviation gain {worst:.2} se",
            stats.time_average, stats.time_average_stderr, cyc.ratio, cyc.stderr, cyc.mean_tau, cyc.stderr_tau, eq_cost.mean, eq_cost.stderr
        ),
    )
}

fn criterion8() -> Outcome {
    let grid = make_grid(1000).unwrap();
    let k = TransitionKernel::Uniform;
    let tol = 1e-10;
    let mut ok = true;
    let mut notes = Vec::new();
    for z in [0.0, 0.3, 0.7, 1.0] {
        let upper = 2.0 * BETA * (C + z) / (2.0 - BETA);
        let lower = BETA * (C + z) / 2.0;
        let th = |g: f64| {
            let vf = solve_value_function(&CostModel::linear(C, g, BETA), &k, &grid, z, tol).unwrap();
            extract_threshold(&vf).unwrap()
        };
        ok &= th(upper + 1e-3) == Threshold::AboveOne;
        ok &= th(upper - 1e-3) != Threshold::AboveOne;
        ok &= th(lower - 1e-3) == Threshold::Zero;
        ok &= th(lower) == Threshold::Zero;
        ok &= th(lower + 1e-3) != Threshold::Zero;
        let vb = solve_uncontrolled_value(&CostModel::linear(C, 1.0, BETA), &k, &grid, z, tol).unwrap();
        let exact = BETA * (C + z) / ((1.0 - BETA) * (2.0 - BETA));
        let err = (vb.values()[0] - exact).abs();
        ok &= err <= tol;
        let b = gamma_bounds(&CostModel::linear(C, 1.0, BETA), &k, &grid, z).unwrap();
        ok &= (b.gamma_above_one - upper).abs() <= 10.0 * tol && (b.gamma_zero - lower).abs() <= 1e-12;
        notes.push(format!("z={z}: |V(0) err|={err:.1e}"));
    }
    outcome(ok, notes.join("; "))
}

/// Kolmogorov–Smirnov statistic of `draws` against `cdf`.
fn ks(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn criterion9() -> Outcome {
    let grid = make_grid(2000).unwrap();
    let kernels = [
        ("uniform", TransitionKernel::Uniform),
        ("gap_k2", TransitionKernel::multiplicative_gap(GapDensity::Power { k: 2.0 }).unwrap()),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    let draws = 100_000;
    // 0.1% critical value of the one-sample KS statistic
    let ks_crit = 1.95 / (draws as f64).sqrt();
    for (name, k) in &kernels {
        let diag = k.validate(&grid).unwrap();
        let mono = check_stochastic_monotonicity(k, &grid);
        let mut worst_ks = 0.0f64;
        for (i, &x) in [0.0, 0.3, 0.7].iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let sample: Vec<f64> = (0..draws).map(|_| k.sample(x, &mut rng)).collect();
            worst_ks = worst_ks.max(ks(sample, |y| k.cdf(y, x)));
        }
        let pass = diag.normalization_error <= 1e-4
            && diag.min_interior_density >= 0.0
            && mono.is_strict()
            && mono.cdf_dominance
            && worst_ks <= ks_crit;
        ok &= pass;
        notes.push(format!(
            "{name}: norm_err={:.1e} min_density={:.3} monotone={} ks={worst_ks:.4}",
            diag.normalization_error,
            diag.min_interior_density,
            mono.is_strict() && mono.cdf_dominance
        ));
    }
    let model = example2(4000, 1e-10, 1e-10);
    let eq = solve_equilibrium(&model).unwrap();
    let s = solve_sensitivities(&model, &eq).unwrap();
    let grid_tol = bmfg::stationary::grid_tolerance(model.grid(), theta_of(&eq));
    let jump_ok = s.jump().abs() > 10.0 * grid_tol;
    ok &= jump_ok;
    notes.push(format!("w jump at theta = {:.4}", s.jump()));
    outcome(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(u32, Duration, fn() -> Outcome); 9] = [
        (1, Duration::from_secs(1), criterion1),
        (2, Duration::from_secs(1), criterion2),
        (3, Duration::from_secs(60), criterion3),
        (4, Duration::from_secs(5), criterion4),
        (5, Duration::from_secs(120), criterion5),
        (6, Duration::from_secs(300), criterion6),
        (7, Duration::from_secs(600), criterion7),
        (8, Duration::from_secs(10), criterion8),
        (9, Duration::from_secs(60), criterion9),
    ];
    let mut failures = 0;
    for (id, budget, run) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= budget;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {id}: {} ({:.2}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
