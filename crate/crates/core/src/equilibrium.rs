//! Stationary mean field equilibrium: fixed point of the composed map
//! `Γ(z) = mean of μ_{θ(z)}` found by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelOperator, TransitionKernel};
use crate::mdp::{
    extract_threshold_with, solve_value_function_with, CostModel, IterationOptions, Threshold,
    ValueFunction,
};
use crate::numerics::{Grid, GridFunction};
use crate::stationary::{kernel_tolerance, stationarity_defect, stationary_distribution, StationaryDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bellman residual for value iteration.
    pub bellman: f64,
    /// `|Γ(z) − z|` at the reported fixed point.
    pub fixed_point: f64,
    /// One/AboveOne boundary on the switching function; `None` means `10 · bellman`.
    pub threshold: Option<f64>,
    pub max_bisection_steps: usize,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            bellman: 1e-8,
            fixed_point: 1e-6,
            threshold: None,
            max_bisection_steps: 200,
            max_iterations: 1_000_000,
        }
    }
}

impl Tolerances {
    pub fn threshold_tol(&self) -> f64 {
        self.threshold.unwrap_or(10.0 * self.bellman)
    }
}

/// Kernel, costs, grid and tolerances, with the kernel operator built once.
#[derive(Debug, Clone)]
pub struct GameModel {
    pub kernel: TransitionKernel,
    pub cost: CostModel,
    pub tolerances: Tolerances,
    op: KernelOperator,
}

impl GameModel {
    pub fn new(kernel: TransitionKernel, cost: CostModel, grid: &Grid) -> Result<Self> {
        cost.validate(grid)?;
        let op = kernel.operator(grid);
        Ok(GameModel { kernel, cost, tolerances: Tolerances::default(), op })
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    /// Same kernel, grid and tolerances with a different effort cost.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        GameModel { cost: self.cost.with_gamma(gamma), ..self.clone() }
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn operator(&self) -> &KernelOperator {
        &self.op
    }

    fn iteration_options(&self) -> IterationOptions {
        IterationOptions { max_iterations: self.tolerances.max_iterations }
    }

    pub fn solve_value(&self, z: f64, initial: Option<&GridFunction>) -> Result<ValueFunction> {
        solve_value_function_with(
            &self.op,
            &self.cost,
            z,
            self.tolerances.bellman,
            self.iteration_options(),
            initial,
        )
    }

    pub fn threshold_of(&self, vf: &ValueFunction) -> Result<Threshold> {
        extract_threshold_with(vf, self.tolerances.threshold_tol())
    }
}

/// Right-hand side of the sufficient existence condition: the threshold at
/// any `z` is not `Zero` when `γ` exceeds
/// `β max_z ∫ [R(y, z) − R(0, z)] Q₀(dy|0)`.
pub fn gamma_existence_lower_bound(model: &GameModel) -> f64 {
    let grid = model.grid();
    let xs = grid.nodes();
    let cost = &model.cost;
    let mut costs = vec![0.0; grid.len()];
    let best = xs
        .iter()
        .map(|&z| {
            for (c, &y) in costs.iter_mut().zip(xs) {
                *c = cost.cost(y, z);
            }
            model.op.expectation_at_zero(&costs) - costs[0]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    cost.beta * best
}

/// `θ(z)` and `Γ(z)`, with the value function and limiting law behind them.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub z: f64,
    pub theta: Threshold,
    pub z_out: f64,
    pub value: ValueFunction,
    pub mu: StationaryDistribution,
}

pub fn best_response_map(model: &GameModel, z: f64) -> Result<BestResponse> {
    best_response_from(model, z, None)
}

fn best_response_from(model: &GameModel, z: f64, initial: Option<&GridFunction>) -> Result<BestResponse> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidInterval { a: 0.0, b: z });
    }
    let value = model.solve_value(z, initial)?;
    let theta = model.threshold_of(&value)?;
    let mu = stationary_distribution(&model.kernel, theta, model.grid())?;
    // the degenerate laws δ₀ and δ₁ carry means 0 and 1 exactly
    let z_out = mu.mean;
    Ok(BestResponse { z, theta, z_out, value, mu })
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub v: ValueFunction,
    pub theta: Threshold,
    pub mu: StationaryDistribution,
    pub z: f64,
    /// `|Γ(z) − z|`.
    pub residual_z: f64,
    pub residual_bellman: f64,
    pub bisection_steps: usize,
    /// Right-hand side of the existence condition and whether `γ` exceeds it.
    pub existence_bound: f64,
    pub existence_condition_holds: bool,
}

impl EquilibriumSolution {
    fn from_response(br: BestResponse, steps: usize, bound: f64, gamma: f64) -> Self {
        EquilibriumSolution {
            residual_z: (br.z_out - br.z).abs(),
            residual_bellman: br.value.residual,
            theta: br.theta,
            z: br.z,
            v: br.value,
            mu: br.mu,
            bisection_steps: steps,
            existence_bound: bound,
            existence_condition_holds: gamma > bound,
        }
    }

    pub fn v0(&self) -> f64 {
        self.v.v.values()[0]
    }

    pub fn summary(&self, model: &GameModel) -> EquilibriumSummary {
        EquilibriumSummary {
            z: self.z,
            theta: self.theta,
            v0: self.v0(),
            pi0: self.mu.atom0,
            residual_z: self.residual_z,
            residual_bellman: self.residual_bellman,
            bisection_steps: self.bisection_steps,
            value_iterations: self.v.iterations,
            existence_bound: self.existence_bound,
            existence_condition_holds: self.existence_condition_holds,
            gamma: model.cost.gamma,
            beta: model.cost.beta,
            grid_n: model.grid().n(),
            tolerances: model.tolerances,
        }
    }
}

/// Scalar part of an [`EquilibriumSolution`] for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub z: f64,
    pub theta: Threshold,
    pub v0: f64,
    pub pi0: f64,
    pub residual_z: f64,
    pub residual_bellman: f64,
    pub bisection_steps: usize,
    pub value_iterations: usize,
    pub existence_bound: f64,
    pub existence_condition_holds: bool,
    pub gamma: f64,
    pub beta: f64,
    pub grid_n: usize,
    pub tolerances: Tolerances,
}

/// Bisection on `g(z) = Γ(z) − z` over `[0, 1]`.
pub fn solve_equilibrium(model: &GameModel) -> Result<EquilibriumSolution> {
    solve_equilibrium_bracketed(model, 0.0, 1.0)
}

/// Bisection restricted to `[lo, hi]`, which must bracket the fixed point
/// (`g(lo) >= 0 >= g(hi)`).
pub fn solve_equilibrium_bracketed(model: &GameModel, lo: f64, hi: f64) -> Result<EquilibriumSolution> {
    if !model.cost.product_form() {
        return Err(Error::InvalidModel("equilibrium bisection needs a product-form cost".into()));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidInterval { a: lo, b: hi });
    }
    let tol = model.tolerances.fixed_point;
    let bound = gamma_existence_lower_bound(model);
    let gamma = model.cost.gamma;
    let done = |br: BestResponse, steps| Ok(EquilibriumSolution::from_response(br, steps, bound, gamma));

    let at_lo = best_response_from(model, lo, None)?;
    let g_lo = at_lo.z_out - lo;
    if g_lo < -tol {
        return Err(Error::NoBracket { g0: g_lo });
    }
    if g_lo <= tol {
        return done(at_lo, 0);
    }
    let at_hi = best_response_from(model, hi, Some(&at_lo.value.v))?;
    let g_hi = at_hi.z_out - hi;
    if g_hi >= -tol {
        if g_hi > tol {
            return Err(Error::NoBracket { g0: g_hi });
        }
        return done(at_hi, 0);
    }

    let (mut lo, mut hi) = (lo, hi);
    let mut warm = at_hi.value.v;
    let mut last_residual = f64::INFINITY;
    for step in 1..=model.tolerances.max_bisection_steps {
        let mid = 0.5 * (lo + hi);
        let br = best_response_from(model, mid, Some(&warm))?;
        let g = br.z_out - mid;
        if g.abs() <= tol {
            return done(br, step);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        last_residual = g.abs();
        warm = br.value.v;
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    Err(Error::MaxBisectionSteps { steps: model.tolerances.max_bisection_steps, residual: last_residual })
}

/// Residual checks of a claimed equilibrium. Never fails; failures show up
/// as `passed == false`.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// `‖ℒv − v‖` at the claimed `z`.
    pub residual_bellman: f64,
    /// `‖T_θ v − v‖` where `T_θ` applies the claimed threshold policy.
    pub residual_policy: f64,
    /// `|Γ(z) − z|` recomputed from scratch.
    pub residual_z: f64,
    /// `|mean(μ) − z|`.
    pub residual_mean: f64,
    pub stationarity_defect: f64,
    pub existence_condition_holds: bool,
    pub bellman_ok: bool,
    pub fixed_point_ok: bool,
    pub stationarity_ok: bool,
    pub passed: bool,
    pub error: Option<String>,
}

pub fn verify_equilibrium(model: &GameModel, sol: &EquilibriumSolution) -> VerificationReport {
    let tols = model.tolerances;
    let grid = model.grid();
    let cost = &model.cost;
    let v = sol.v.v.values();
    let mut expect = vec![0.0; grid.len()];
    model.op.expectation(v, &mut expect);
    let (beta, gamma) = (cost.beta, cost.gamma);
    let reset = beta * v[0] + gamma;
    let mut residual_bellman = 0.0f64;
    let mut residual_policy = 0.0f64;
    for (j, &x) in grid.nodes().iter().enumerate() {
        let r = cost.cost(x, sol.z);
        let bellman = r + (beta * expect[j]).min(reset);
        let policy = r + if sol.theta.acts_at(x) { reset } else { beta * expect[j] };
        residual_bellman = residual_bellman.max((bellman - v[j]).abs());
        residual_policy = residual_policy.max((policy - v[j]).abs());
    }

    let (residual_z, error) = match best_response_map(model, sol.z) {
        Ok(br) => ((br.z_out - sol.z).abs(), None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    let residual_mean = (sol.mu.mean - sol.z).abs();
    let defect = stationarity_defect(&model.kernel, &sol.mu);

    let slack = 1.0 + 1e-9;
    let bellman_ok = residual_bellman <= tols.bellman * slack
        && residual_policy <= (tols.bellman + tols.threshold_tol()) * slack;
    let fixed_point_ok = residual_z <= tols.fixed_point * slack && residual_mean <= tols.fixed_point * slack;
    let stationarity_ok = match sol.theta {
        Threshold::Interior(t) => defect <= 10.0 * kernel_tolerance(&model.kernel, grid, t),
        _ => true,
    };
    VerificationReport {
        residual_bellman,
        residual_policy,
        residual_z,
        residual_mean,
        stationarity_defect: defect,
        existence_condition_holds: gamma > sol.existence_bound,
        bellman_ok,
        fixed_point_ok,
        stationarity_ok,
        passed: bellman_ok && fixed_point_ok && stationarity_ok && error.is_none(),
        error,
    }
}
