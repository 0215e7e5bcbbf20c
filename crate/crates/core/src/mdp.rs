//! Single-agent discounted control problem for a frozen mean field `z`.
//!
//! The Bellman equation is
//! `v(x) = min{ β ∫ v dQ₀(·|x) + R(x, z),  β v(0) + R(x, z) + γ }`
//! and its solution is monotone, so the optimal policy is a threshold rule.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelOperator, TransitionKernel};
use crate::numerics::{Grid, GridFunction};

/// One factor of the running cost, as a function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostComponent {
    /// `intercept + slope · x`
    Affine { intercept: f64, slope: f64 },
    /// `intercept + scale · x^exponent`
    Power { intercept: f64, scale: f64, exponent: f64 },
    /// Node values on a uniform grid over `[0, 1]`, interpolated linearly.
    Tabulated { values: Vec<f64> },
}

impl CostComponent {
    pub fn identity() -> Self {
        CostComponent::Affine { intercept: 0.0, slope: 1.0 }
    }

    pub fn constant(c: f64) -> Self {
        CostComponent::Affine { intercept: c, slope: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CostComponent::Affine { intercept, slope } => intercept + slope * x,
            CostComponent::Power { intercept, scale, exponent } => intercept + scale * x.powf(*exponent),
            CostComponent::Tabulated { values } => {
                let m = values.len() - 1;
                let pos = x.clamp(0.0, 1.0) * m as f64;
                let j = (pos.floor() as usize).min(m - 1);
                let t = pos - j as f64;
                values[j] + t * (values[j + 1] - values[j])
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            CostComponent::Affine { slope, .. } => *slope,
            CostComponent::Power { scale, exponent, .. } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    scale * exponent * x.powf(exponent - 1.0)
                }
            }
            CostComponent::Tabulated { values } => {
                let m = values.len() - 1;
                let pos = x.clamp(0.0, 1.0) * m as f64;
                let j = (pos.floor() as usize).min(m - 1);
                (values[j + 1] - values[j]) * m as f64
            }
        }
    }

    fn check(&self) -> Result<()> {
        if let CostComponent::Tabulated { values } = self {
            if values.len() < 2 {
                return Err(Error::InvalidModel("tabulated cost needs at least 2 values".into()));
            }
        }
        Ok(())
    }

    fn strictly_increasing_on(&self, grid: &Grid) -> bool {
        grid.nodes().windows(2).all(|w| self.eval(w[1]) > self.eval(w[0]))
    }
}

/// A joint running cost `R(x, z)` overriding the product form.
#[derive(Clone)]
pub struct JointCost(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl fmt::Debug for JointCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("JointCost(..)")
    }
}

/// Running cost `R(x, z) = R₁(x) R₂(z)` (or a general `R`), effort cost `γ`
/// and discount factor `β`.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub r1: CostComponent,
    pub r2: CostComponent,
    pub general_r: Option<JointCost>,
    pub gamma: f64,
    pub beta: f64,
}

impl CostModel {
    pub fn product(r1: CostComponent, r2: CostComponent, gamma: f64, beta: f64) -> Self {
        CostModel { r1, r2, general_r: None, gamma, beta }
    }

    /// `R(x, z) = x (c + z)`.
    pub fn linear(c: f64, gamma: f64, beta: f64) -> Self {
        CostModel::product(
            CostComponent::identity(),
            CostComponent::Affine { intercept: c, slope: 1.0 },
            gamma,
            beta,
        )
    }

    pub fn general(r: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, gamma: f64, beta: f64) -> Self {
        CostModel {
            r1: CostComponent::identity(),
            r2: CostComponent::constant(1.0),
            general_r: Some(JointCost(Arc::new(r))),
            gamma,
            beta,
        }
    }

    pub fn product_form(&self) -> bool {
        self.general_r.is_none()
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        CostModel { gamma, ..self.clone() }
    }

    pub fn cost(&self, x: f64, z: f64) -> f64 {
        match &self.general_r {
            Some(r) => (r.0)(x, z),
            None => self.r1.eval(x) * self.r2.eval(z),
        }
    }

    /// `∂R/∂z`; only meaningful for the product form.
    pub fn r2_prime(&self, z: f64) -> f64 {
        self.r2.derivative(z)
    }

    /// Scalar parameter checks (`γ > 0`, `0 < β < 1`).
    pub fn check_parameters(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidModel(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidModel(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        self.r1.check()?;
        self.r2.check()
    }

    /// Parameter checks plus monotonicity of the running cost on the grid.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.check_parameters()?;
        let xs = grid.nodes();
        match &self.general_r {
            None => {
                if !self.r1.strictly_increasing_on(grid) {
                    return Err(Error::InvalidModel("R1 must be strictly increasing".into()));
                }
                if !self.r2.strictly_increasing_on(grid) || self.r2.eval(0.0) <= 0.0 {
                    return Err(Error::InvalidModel(
                        "R2 must be positive and strictly increasing".into(),
                    ));
                }
                if self.r1.eval(0.0) < 0.0 {
                    return Err(Error::InvalidModel("R1 must be nonnegative".into()));
                }
            }
            Some(r) => {
                let probe: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
                for &z in &probe {
                    if !xs.windows(2).all(|w| (r.0)(w[1], z) > (r.0)(w[0], z)) {
                        return Err(Error::InvalidModel(format!(
                            "R(., {z}) must be strictly increasing"
                        )));
                    }
                }
                for &x in &probe {
                    if !probe.windows(2).all(|w| (r.0)(x, w[1]) >= (r.0)(x, w[0])) {
                        return Err(Error::InvalidModel(format!("R({x}, .) must be increasing")));
                    }
                }
            }
        }
        Ok(())
    }

    fn costs_on(&self, grid: &Grid, z: f64) -> Vec<f64> {
        grid.nodes().iter().map(|&x| self.cost(x, z)).collect()
    }
}

/// Best-response threshold. `AboveOne` means the agent never acts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    Zero,
    Interior(f64),
    One,
    AboveOne,
}

impl Threshold {
    /// Threshold as a point of `[0, 1]`; both `One` and `AboveOne` map to 1.
    pub fn level(&self) -> f64 {
        match *self {
            Threshold::Zero => 0.0,
            Threshold::Interior(x) => x,
            Threshold::One | Threshold::AboveOne => 1.0,
        }
    }

    /// Total order rank: `Zero < Interior(x) < One < AboveOne`.
    pub fn rank(&self) -> (u8, f64) {
        match *self {
            Threshold::Zero => (0, 0.0),
            Threshold::Interior(x) => (1, x),
            Threshold::One => (2, 1.0),
            Threshold::AboveOne => (3, 1.0),
        }
    }

    pub fn interior(&self) -> Option<f64> {
        match *self {
            Threshold::Interior(x) => Some(x),
            _ => None,
        }
    }

    /// Whether the policy acts at state `x`.
    pub fn acts_at(&self, x: f64) -> bool {
        match *self {
            Threshold::Zero => true,
            Threshold::Interior(t) => x >= t,
            Threshold::One => x >= 1.0,
            Threshold::AboveOne => false,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Threshold::Zero => "zero",
            Threshold::Interior(_) => "interior",
            Threshold::One => "one",
            Threshold::AboveOne => "above_one",
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Interior(x) => write!(f, "interior({x})"),
            other => f.write_str(other.tag()),
        }
    }
}

/// Converged solution of the Bellman equation at a frozen `z`.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub v: GridFunction,
    /// `G(x) = ∫ v(y) Q₀(dy|x)`.
    pub g: GridFunction,
    pub z: f64,
    pub gamma: f64,
    pub beta: f64,
    pub tol: f64,
    pub iterations: usize,
    /// Sup-norm Bellman defect `‖ℒv − v‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    pub max_iterations: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { max_iterations: 1_000_000 }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bellman_step(
    op: &KernelOperator,
    costs: &[f64],
    gamma: f64,
    beta: f64,
    v: &[f64],
    expect: &mut [f64],
    out: &mut [f64],
) {
    op.expectation(v, expect);
    let reset = beta * v[0] + gamma;
    for ((o, &c), &e) in out.iter_mut().zip(costs).zip(expect.iter()) {
        *o = c + (beta * e).min(reset);
    }
}

/// `(ℒg)(x) = min{ β ∫ g dQ₀(·|x) + R(x, z), β g(0) + R(x, z) + γ }` on the grid.
pub fn bellman_operator(
    v: &GridFunction,
    model: &CostModel,
    kernel: &TransitionKernel,
    z: f64,
) -> GridFunction {
    let grid = v.grid();
    let op = kernel.operator(grid);
    let costs = model.costs_on(grid, z);
    let mut expect = vec![0.0; grid.len()];
    let mut out = vec![0.0; grid.len()];
    bellman_step(&op, &costs, model.gamma, model.beta, v.values(), &mut expect, &mut out);
    GridFunction::from_vec_unchecked(grid, out)
}

/// Value iteration from `v₀ = 0`; stops once the update is below
/// `tol (1 − β) / (2β)` so that the Bellman residual is at most `tol`.
pub fn solve_value_function(
    model: &CostModel,
    kernel: &TransitionKernel,
    grid: &Grid,
    z: f64,
    tol: f64,
) -> Result<ValueFunction> {
    let op = kernel.operator(grid);
    solve_value_function_with(&op, model, z, tol, IterationOptions::default(), None)
}

/// As [`solve_value_function`] with a prebuilt operator and an optional
/// starting point for the iteration.
pub fn solve_value_function_with(
    op: &KernelOperator,
    model: &CostModel,
    z: f64,
    tol: f64,
    opts: IterationOptions,
    initial: Option<&GridFunction>,
) -> Result<ValueFunction> {
    model.check_parameters()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidModel(format!("tolerance must be positive, got {tol}")));
    }
    let grid = op.grid();
    let costs = model.costs_on(grid, z);
    let (gamma, beta) = (model.gamma, model.beta);
    let stop = tol * (1.0 - beta) / (2.0 * beta);

    let mut v = match initial {
        Some(f) if f.grid() == grid => f.values().to_vec(),
        _ => vec![0.0; grid.len()],
    };
    let mut next = vec![0.0; grid.len()];
    let mut expect = vec![0.0; grid.len()];
    let mut iterations = 0;
    loop {
        bellman_step(op, &costs, gamma, beta, &v, &mut expect, &mut next);
        iterations += 1;
        let update = sup_diff(&v, &next);
        std::mem::swap(&mut v, &mut next);
        if update <= stop {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::IterationCapExceeded { cap: opts.max_iterations, last_update: update });
        }
    }
    // one more application for the residual; `expect` then holds G(v)
    bellman_step(op, &costs, gamma, beta, &v, &mut expect, &mut next);
    let residual = sup_diff(&v, &next);
    Ok(ValueFunction {
        v: GridFunction::from_vec_unchecked(grid, v),
        g: GridFunction::from_vec_unchecked(grid, expect),
        z,
        gamma,
        beta,
        tol,
        iterations,
        residual,
    })
}

/// Switching function `D(x) = β G(x) − β v(0) − γ` on the grid nodes.
pub fn switching_function(vf: &ValueFunction) -> GridFunction {
    let v0 = vf.v.values()[0];
    vf.g.map(|_, g| vf.beta * g - vf.beta * v0 - vf.gamma)
}

/// Threshold classification with the default `tol_D = 10 · tol`.
pub fn extract_threshold(vf: &ValueFunction) -> Result<Threshold> {
    extract_threshold_with(vf, 10.0 * vf.tol)
}

pub fn extract_threshold_with(vf: &ValueFunction, tol_d: f64) -> Result<Threshold> {
    let d = switching_function(vf);
    let d = d.values();
    let xs = vf.v.grid().nodes();
    let last = d[d.len() - 1];
    if last < -tol_d {
        return Ok(Threshold::AboveOne);
    }
    if last.abs() <= tol_d {
        return Ok(Threshold::One);
    }
    // D(0) is a difference of O(v) terms; at γ on the Zero boundary it
    // lands within rounding of 0 on either side
    let v0 = vf.v.values()[0];
    let round = 64.0 * f64::EPSILON * (vf.beta * (vf.g.values()[0].abs() + v0.abs()) + vf.gamma);
    if d[0] >= -round {
        return Ok(Threshold::Zero);
    }
    let j = d.iter().position(|&v| v >= 0.0).ok_or(Error::NoSignChange)?;
    let (d0, d1) = (d[j - 1], d[j]);
    let x = xs[j - 1] + (xs[j] - xs[j - 1]) * (-d0) / (d1 - d0);
    if x <= 0.0 || x >= 1.0 {
        return Err(Error::NoSignChange);
    }
    Ok(Threshold::Interior(x))
}

/// `V_β = β ∫ V_β dQ₀ + R(·, z)`: the value of never acting.
pub fn solve_uncontrolled_value(
    model: &CostModel,
    kernel: &TransitionKernel,
    grid: &Grid,
    z: f64,
    tol: f64,
) -> Result<GridFunction> {
    let op = kernel.operator(grid);
    solve_uncontrolled_value_with(&op, model, z, tol, IterationOptions::default())
}

pub(crate) fn solve_uncontrolled_value_with(
    op: &KernelOperator,
    model: &CostModel,
    z: f64,
    tol: f64,
    opts: IterationOptions,
) -> Result<GridFunction> {
    let grid = op.grid();
    let beta = model.beta;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidModel(format!("beta must lie in (0, 1), got {beta}")));
    }
    let costs = model.costs_on(grid, z);
    let stop = tol * (1.0 - beta) / (2.0 * beta);
    let mut v = vec![0.0; grid.len()];
    let mut expect = vec![0.0; grid.len()];
    for _ in 0..opts.max_iterations {
        op.expectation(&v, &mut expect);
        let mut update = 0.0f64;
        for ((vj, &c), &e) in v.iter_mut().zip(&costs).zip(&expect) {
            let next = c + beta * e;
            update = update.max((next - *vj).abs());
            *vj = next;
        }
        if update <= stop {
            return Ok(GridFunction::from_vec_unchecked(grid, v));
        }
    }
    Err(Error::IterationCapExceeded { cap: opts.max_iterations, last_update: f64::NAN })
}

/// Effort-cost levels separating the threshold regimes at a fixed `z`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GammaBounds {
    /// The threshold is `Zero` iff `γ <= gamma_zero`.
    pub gamma_zero: f64,
    /// The threshold is `AboveOne` iff `γ > gamma_above_one`.
    pub gamma_above_one: f64,
}

pub fn gamma_bounds(
    model: &CostModel,
    kernel: &TransitionKernel,
    grid: &Grid,
    z: f64,
) -> Result<GammaBounds> {
    let op = kernel.operator(grid);
    gamma_bounds_with(&op, model, z)
}

pub(crate) fn gamma_bounds_with(op: &KernelOperator, model: &CostModel, z: f64) -> Result<GammaBounds> {
    let grid = op.grid();
    let beta = model.beta;
    let costs = model.costs_on(grid, z);
    let mut expect = vec![0.0; grid.len()];
    op.expectation(&costs, &mut expect);
    let gamma_zero = beta * expect[0] - beta * costs[0];
    let vb = solve_uncontrolled_value_with(op, model, z, 1e-11, IterationOptions::default())?;
    let vals = vb.values();
    let gamma_above_one = beta * (vals[vals.len() - 1] - vals[0]);
    Ok(GammaBounds { gamma_zero, gamma_above_one })
}

/// Threshold as a function of the effort cost `r` for the auxiliary problem
/// with running cost `R₁(x)` and discount `ρ`.
#[derive(Debug, Clone, Serialize)]
pub struct CostCurve {
    pub points: Vec<(f64, Threshold)>,
    /// Largest `r` whose threshold is `Zero` (to bisection accuracy).
    pub r_lower: f64,
    /// Smallest `r` whose threshold is `One` or `AboveOne`.
    pub r_upper: f64,
}

const CURVE_BISECTION_STEPS: usize = 60;

pub fn threshold_cost_curve(
    r1: &CostComponent,
    kernel: &TransitionKernel,
    rho: f64,
    r_values: &[f64],
    grid: &Grid,
    tol: f64,
) -> Result<CostCurve> {
    if r_values.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidModel("cost levels r must be positive".into()));
    }
    if r_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidModel("cost levels r must be sorted".into()));
    }
    let op = kernel.operator(grid);
    let base = CostModel::product(r1.clone(), CostComponent::constant(1.0), 1.0, rho);
    let theta_at = |r: f64| -> Result<Threshold> {
        let model = base.with_gamma(r);
        let vf = solve_value_function_with(&op, &model, 0.0, tol, IterationOptions::default(), None)?;
        extract_threshold(&vf)
    };

    // never acting is optimal above ρ R₁(1) / (1 − ρ)
    let r_max = rho * r1.eval(1.0) / (1.0 - rho) * 1.01 + tol;
    let bisect = |pred: &dyn Fn(Threshold) -> bool| -> Result<(f64, f64)> {
        // pred holds at lo, fails at hi
        let (mut lo, mut hi) = (0.0, r_max);
        for _ in 0..CURVE_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if pred(theta_at(mid)?) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, hi))
    };
    let (r_lower, _) = bisect(&|t| t == Threshold::Zero)?;
    let (_, r_upper) = bisect(&|t| !matches!(t, Threshold::One | Threshold::AboveOne))?;

    let points = r_values
        .par_iter()
        .map(|&r| theta_at(r).map(|t| (r, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostCurve { points, r_lower, r_upper })
}
