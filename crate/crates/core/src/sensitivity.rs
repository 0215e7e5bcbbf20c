//! Comparative statics of the equilibrium in the effort cost `γ`: the
//! perturbation function `w`, `θ_γ` and `z_γ`.

use serde::Serialize;

use crate::equilibrium::{solve_equilibrium, EquilibriumSolution, GameModel};
use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::mdp::Threshold;
use crate::numerics::{BranchFunction, Grid};
use crate::stationary::mean_field_of_theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    GeneralKernel,
    UniformClosedForm,
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityResult {
    /// `w`, discontinuous at `θ̄`.
    pub w: BranchFunction,
    pub w0: f64,
    pub theta_gamma: f64,
    pub z_gamma: f64,
    /// `z'(θ̄)` used in the coupling `z_γ = z'(θ̄) θ_γ`.
    pub z_prime: f64,
    pub method: SensitivityMethod,
    /// The `∂q/∂x` integral was cut to `[θ̄, 1 − h]`.
    pub truncated: bool,
}

impl SensitivityResult {
    pub fn jump(&self) -> f64 {
        self.w.jump()
    }
}

/// Step used for `z'(θ)` by central differences.
pub const Z_PRIME_STEP: f64 = 1e-3;

const W_TOL: f64 = 1e-11;
const W_MAX_ITER: usize = 100_000;

/// Points of a two-branch function with `θ` listed twice (left then right
/// limit); the zero-width segment between them carries the jump.
struct Polyline {
    xs: Vec<f64>,
    below: usize,
    above: usize,
}

impl Polyline {
    fn new(grid: &Grid, theta: f64) -> Self {
        let below = grid.count_below(theta);
        let above = grid.count_at_or_below(theta);
        let mut xs = grid.nodes()[..below].to_vec();
        xs.push(theta);
        xs.push(theta);
        xs.extend_from_slice(&grid.nodes()[above..]);
        Polyline { xs, below, above }
    }

    /// Index of the left `θ` point.
    fn split(&self) -> usize {
        self.below
    }
}

/// `E[k] = ∫_{x_k}^1 f(y) q(y|x_k) dy` for every point `k <= split` of the polyline.
fn tail_expectations(kernel: &TransitionKernel, line: &Polyline, f: &[f64], out: &mut [f64]) {
    let xs = &line.xs;
    let last = xs.len() - 1;
    let split = line.split();
    match kernel.separable() {
        Some((a, b)) => {
            let mut tail = 0.0;
            let mut prev = f[last] * b(xs[last]);
            for k in (0..last).rev() {
                let cur = f[k] * b(xs[k]);
                tail += 0.5 * (xs[k + 1] - xs[k]) * (cur + prev);
                prev = cur;
                if k <= split {
                    out[k] = a(xs[k]) * tail;
                }
            }
        }
        None => {
            for k in 0..=split {
                let x = xs[k];
                let mut acc = 0.0;
                for i in k..last {
                    acc += 0.5 * (xs[i + 1] - xs[i]) * (f[i] * kernel.q(xs[i], x) + f[i + 1] * kernel.q(xs[i + 1], x));
                }
                out[k] = acc;
            }
        }
    }
}

/// Solve `W(x) = β ∫ W dQ₀(·|x) + R₁(x) s c₀` on `[0, θ₀]` and
/// `W(x) = β W(0) + R₁(x) s c₀ + κ` on `(θ₀, 1]`, where `s = R₂'(z₀)`,
/// by fixed-point iteration (a contraction with modulus `β`).
pub fn solve_w_equation(
    model: &GameModel,
    theta0: f64,
    z0: f64,
    c0: f64,
    kappa: f64,
) -> Result<BranchFunction> {
    if !(theta0 > 0.0 && theta0 < 1.0) {
        return Err(Error::NotInterior(format!("theta0 = {theta0}")));
    }
    let grid = model.grid();
    let beta = model.cost.beta;
    let slope = model.cost.r2_prime(z0) * c0;
    let line = Polyline::new(grid, theta0);
    let split = line.split();
    let forcing: Vec<f64> = line.xs.iter().map(|&x| model.cost.r1.eval(x) * slope).collect();

    let mut w = vec![0.0; line.xs.len()];
    let mut next = vec![0.0; line.xs.len()];
    let mut expect = vec![0.0; line.xs.len()];
    let stop = W_TOL * (1.0 - beta) / (2.0 * beta);
    let mut converged = false;
    let mut update = f64::INFINITY;
    for _ in 0..W_MAX_ITER {
        tail_expectations(&model.kernel, &line, &w, &mut expect);
        for k in 0..=split {
            next[k] = beta * expect[k] + forcing[k];
        }
        for k in split + 1..next.len() {
            next[k] = beta * next[0] + forcing[k] + kappa;
        }
        update = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut w, &mut next);
        if update <= stop {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationCapExceeded { cap: W_MAX_ITER, last_update: update });
    }
    // upper branch exactly consistent with the final W(0)
    for k in split + 1..w.len() {
        w[k] = beta * w[0] + forcing[k] + kappa;
    }

    let mut values = Vec::with_capacity(grid.len());
    values.extend_from_slice(&w[..line.below]);
    values.extend(std::iter::repeat(w[split]).take(line.above - line.below));
    values.extend_from_slice(&w[split + 2..]);
    Ok(BranchFunction::from_nodes(grid, &values, theta0, w[split], w[split + 1]))
}

fn interior_theta(eq: &EquilibriumSolution) -> Result<f64> {
    eq.theta
        .interior()
        .ok_or_else(|| Error::NotInterior(eq.theta.to_string()))
}

/// The two basis solutions: `w_a` (`c₀ = 0`, constant 1 on the upper branch)
/// and `w_b` (`c₀ = 1`, no constant), so that `w = w_a + z_γ w_b`.
pub fn solve_w_basis(model: &GameModel, eq: &EquilibriumSolution) -> Result<(BranchFunction, BranchFunction)> {
    if !model.cost.product_form() {
        return Err(Error::InvalidModel("sensitivities need a product-form cost".into()));
    }
    let theta = interior_theta(eq)?;
    let wa = solve_w_equation(model, theta, eq.z, 0.0, 1.0)?;
    let wb = solve_w_equation(model, theta, eq.z, 1.0, 0.0)?;
    Ok((wa, wb))
}

/// `z'(θ)` for the uniform kernel.
pub fn uniform_z_prime(theta: f64) -> f64 {
    let l = (1.0 - theta).ln();
    (l - 3.0 + 4.0 / (1.0 - theta)) / (2.0 * (2.0 - l) * (2.0 - l))
}

/// `z'(θ)` by central differences of [`mean_field_of_theta`].
pub fn z_prime_finite_difference(kernel: &TransitionKernel, theta: f64, grid: &Grid, step: f64) -> Result<f64> {
    let up = mean_field_of_theta(kernel, Threshold::Interior(theta + step), grid)?;
    let down = mean_field_of_theta(kernel, Threshold::Interior(theta - step), grid)?;
    Ok((up - down) / (2.0 * step))
}

/// `β [∫_θ^1 v(y) ∂q(y|θ)/∂x dy − v(θ) q(θ|θ)]`, the coefficient of `θ_γ`.
/// Returns the coefficient and whether the integral was truncated at `1 − h`.
fn threshold_coefficient(model: &GameModel, eq: &EquilibriumSolution, theta: f64) -> Result<(f64, bool)> {
    let kernel = &model.kernel;
    let grid = model.grid();
    let cost = &model.cost;
    let (beta, gamma) = (cost.beta, cost.gamma);
    let v0 = eq.v0();
    // v on [θ, 1] is the acting branch
    let v_upper = |y: f64| beta * v0 + cost.cost(y, eq.z) + gamma;
    let truncated = !kernel.dq_dx(1.0, theta)?.is_finite();
    let end = if truncated { 1.0 - grid.h() } else { 1.0 };
    let mut pts = vec![theta];
    pts.extend(grid.nodes()[grid.count_at_or_below(theta)..].iter().copied().filter(|&y| y < end));
    pts.push(end);
    let mut integral = 0.0;
    let mut prev = v_upper(theta) * kernel.dq_dx(theta, theta)?;
    for w in pts.windows(2) {
        let cur = v_upper(w[1]) * kernel.dq_dx(w[1], theta)?;
        integral += 0.5 * (w[1] - w[0]) * (prev + cur);
        prev = cur;
    }
    Ok((beta * (integral - v_upper(theta) * kernel.q(theta, theta)), truncated))
}

pub fn solve_sensitivities(model: &GameModel, eq: &EquilibriumSolution) -> Result<SensitivityResult> {
    let theta = interior_theta(eq)?;
    if !model.kernel.has_derivative() {
        return Err(Error::DerivativeUnavailable);
    }
    let beta = model.cost.beta;
    let (wa, wb) = solve_w_basis(model, eq)?;
    let (coef, truncated) = threshold_coefficient(model, eq, theta)?;
    let z_prime = if model.kernel.is_uniform() {
        uniform_z_prime(theta)
    } else {
        z_prime_finite_difference(&model.kernel, theta, model.grid(), Z_PRIME_STEP)?
    };

    let q = |y: f64| model.kernel.q(y, theta);
    let ia = wa.integrate_weighted(theta, 1.0, q);
    let ib = wb.integrate_weighted(theta, 1.0, q);
    let (wa0, wb0) = (wa.left_y[0], wb.left_y[0]);
    // A θ_γ = 1 + β w(0) − β ∫ w dQ₀(·|θ) with w = w_a + z' θ_γ w_b
    let lhs = coef - z_prime * beta * (wb0 - ib);
    if lhs.abs() < 1e-12 {
        return Err(Error::SingularCoupling(lhs));
    }
    let theta_gamma = (1.0 + beta * wa0 - beta * ia) / lhs;
    let z_gamma = z_prime * theta_gamma;
    let w = combine(&wa, &wb, z_gamma);
    Ok(SensitivityResult {
        w0: wa0 + z_gamma * wb0,
        w,
        theta_gamma,
        z_gamma,
        z_prime,
        method: SensitivityMethod::GeneralKernel,
        truncated,
    })
}

fn combine(a: &BranchFunction, b: &BranchFunction, scale: f64) -> BranchFunction {
    let mix = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x + scale * y).collect();
    BranchFunction {
        split: a.split,
        left_x: a.left_x.clone(),
        left_y: mix(&a.left_y, &b.left_y),
        right_x: a.right_x.clone(),
        right_y: mix(&a.right_y, &b.right_y),
    }
}

/// Equilibrium of the uniform-kernel model with `R(x, z) = x (c + z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformEquilibrium {
    pub v0: f64,
    pub theta: f64,
    pub z: f64,
}

fn uniform_z(theta: f64) -> f64 {
    let l = (1.0 - theta).ln();
    ((1.0 - theta) / 2.0 - l) / (2.0 - l)
}

fn uniform_v0(c: f64, gamma: f64, beta: f64, theta: f64, z: f64) -> f64 {
    let s = (1.0 - theta).powf(beta - 1.0);
    let rhs = beta * (c + z) * (s - 1.0) / ((1.0 - beta) * (2.0 - beta)) - beta * (c + z) * theta / (2.0 - beta)
        + gamma;
    rhs / (s - beta)
}

/// Bisection on `θ` of the threshold equation with `z(θ)` and `v(0)` eliminated.
pub fn solve_uniform_equilibrium_closed_form(c: f64, gamma: f64, beta: f64) -> Result<UniformEquilibrium> {
    if !(c > 0.0 && gamma > 0.0 && beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidModel(format!("need c > 0, gamma > 0, 0 < beta < 1; got ({c}, {gamma}, {beta})")));
    }
    let residual = |theta: f64| {
        let z = uniform_z(theta);
        let v0 = uniform_v0(c, gamma, beta, theta, z);
        2.0 * (1.0 - beta) * (beta * v0 + gamma) / (beta * (c + z)) - 1.0 - theta
    };
    let eps = 1e-9;
    let (mut lo, mut hi) = (eps, 1.0 - eps);
    let (r_lo, r_hi) = (residual(lo), residual(hi));
    if r_lo.signum() == r_hi.signum() {
        return Err(Error::NoInteriorRoot);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid).signum() == r_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let theta = 0.5 * (lo + hi);
    let z = uniform_z(theta);
    Ok(UniformEquilibrium { v0: uniform_v0(c, gamma, beta, theta, z), theta, z })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformSensitivity {
    pub w0: f64,
    pub theta_gamma: f64,
    pub z_gamma: f64,
}

/// Linear system `M (w(0), θ_γ, z_γ)ᵀ = b` for the uniform-kernel model.
pub fn uniform_sensitivity_system(eq: &UniformEquilibrium, gamma: f64, beta: f64, c: f64) -> ([[f64; 3]; 3], [f64; 3]) {
    let UniformEquilibrium { v0, theta, z } = *eq;
    let s = (1.0 - theta).powf(beta - 1.0);
    let a1 = ((1.0 - beta) * (beta * v0 + gamma) - beta * theta * (z + c)) / (1.0 - theta);
    let c2 = (1.0 + theta) / 2.0 + s / ((1.0 - beta) * (2.0 - beta)) + (1.0 - theta) / (2.0 - beta)
        - 1.0 / (1.0 - beta);
    let m = [
        [-beta * (1.0 - beta), a1, (1.0 + theta) / 2.0 * beta],
        [s / beta - beta, 0.0, -c2],
        [0.0, -uniform_z_prime(theta), 1.0],
    ];
    (m, [1.0 - beta, 1.0, 0.0])
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cramer's rule for a 3×3 system.
pub fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Result<[f64; 3]> {
    let d = det3(m);
    if d.abs() < 1e-12 {
        return Err(Error::SingularSystem(d));
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut mc = *m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *slot = det3(&mc) / d;
    }
    Ok(out)
}

pub fn solve_uniform_sensitivity_closed_form(
    eq: &UniformEquilibrium,
    gamma: f64,
    beta: f64,
    c: f64,
) -> Result<UniformSensitivity> {
    let (m, b) = uniform_sensitivity_system(eq, gamma, beta, c);
    let [w0, theta_gamma, z_gamma] = solve3(&m, &b)?;
    Ok(UniformSensitivity { w0, theta_gamma, z_gamma })
}

/// Central differences of the full equilibrium against the analytic sensitivities.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteDifferenceReport {
    pub eps: f64,
    pub theta_gamma_fd: f64,
    pub z_gamma_fd: f64,
    pub theta_gamma: f64,
    pub z_gamma: f64,
    pub theta_gamma_rel_err: f64,
    pub z_gamma_rel_err: f64,
    /// `(x, difference quotient of v, analytic w)` at nodes away from `θ̄`.
    pub w_points: Vec<(f64, f64, f64)>,
    pub w_max_rel_err: f64,
}

pub fn finite_difference_check(model: &GameModel, eq: &EquilibriumSolution, eps: f64) -> Result<FiniteDifferenceReport> {
    let theta = interior_theta(eq)?;
    let gamma = model.cost.gamma;
    let (up, down) = rayon::join(
        || solve_equilibrium(&model.with_gamma(gamma + eps)),
        || solve_equilibrium(&model.with_gamma(gamma - eps)),
    );
    let (up, down) = (up?, down?);
    let interior = |s: &EquilibriumSolution, g: f64| -> Result<f64> {
        s.theta.interior().ok_or(Error::NonInteriorPerturbation { gamma: g })
    };
    let theta_up = interior(&up, gamma + eps)?;
    let theta_down = interior(&down, gamma - eps)?;
    let analytic = solve_sensitivities(model, eq)?;

    let theta_gamma_fd = (theta_up - theta_down) / (2.0 * eps);
    let z_gamma_fd = (up.z - down.z) / (2.0 * eps);
    let rel = |fd: f64, a: f64| ((fd - a) / a).abs();

    let grid = model.grid();
    let mut w_points = Vec::new();
    let mut w_max_rel_err = 0.0f64;
    for k in 1..10 {
        let x = k as f64 / 10.0;
        if (x - theta).abs() < 0.05 {
            continue;
        }
        let (j, _) = grid.locate(x);
        let xj = grid.node(j);
        let fd = (up.v.v.values()[j] - down.v.v.values()[j]) / (2.0 * eps);
        let w = analytic.w.eval(xj);
        w_max_rel_err = w_max_rel_err.max(rel(fd, w));
        w_points.push((xj, fd, w));
    }
    Ok(FiniteDifferenceReport {
        eps,
        theta_gamma_rel_err: rel(theta_gamma_fd, analytic.theta_gamma),
        z_gamma_rel_err: rel(z_gamma_fd, analytic.z_gamma),
        theta_gamma_fd,
        z_gamma_fd,
        theta_gamma: analytic.theta_gamma,
        z_gamma: analytic.z_gamma,
        w_points,
        w_max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::Tolerances;
    use crate::kernels::GapDensity;
    use crate::mdp::{CostComponent, CostModel};
    use crate::numerics::make_grid;

    fn example2(n: usize) -> GameModel {
        let grid = make_grid(n).unwrap();
        GameModel::new(TransitionKernel::Uniform, CostModel::linear(0.2, 0.5, 0.9), &grid)
            .unwrap()
            .with_tolerances(Tolerances { bellman: 1e-10, fixed_point: 1e-10, ..Tolerances::default() })
    }

    #[test]
    fn closed_form_equilibrium_example2() {
        let e = solve_uniform_equilibrium_closed_form(0.2, 0.5, 0.9).unwrap();
        assert!((e.v0 - 3.497854).abs() < 1e-5, "{e:?}");
        assert!((e.theta - 0.485162).abs() < 1e-5, "{e:?}");
        assert!((e.z - 0.345854).abs() < 1e-5, "{e:?}");
        assert!((1.0 - e.theta).powf(0.9 - 1.0) - 0.9 > 0.0);
    }

    #[test]
    fn closed_form_sensitivity_signs_and_scaling() {
        let e = solve_uniform_equilibrium_closed_form(0.2, 0.5, 0.9).unwrap();
        let s = solve_uniform_sensitivity_closed_form(&e, 0.5, 0.9, 0.2).unwrap();
        assert!(s.theta_gamma > 0.0 && s.z_gamma > 0.0);
        let (mut m, mut b) = uniform_sensitivity_system(&e, 0.5, 0.9, 0.2);
        for v in m[0].iter_mut() {
            *v *= 7.5;
        }
        b[0] *= 7.5;
        let scaled = solve3(&m, &b).unwrap();
        assert!((scaled[0] - s.w0).abs() < 1e-12 && (scaled[1] - s.theta_gamma).abs() < 1e-12);
    }

    #[test]
    fn closed_form_sensitivity_matches_closed_form_differences() {
        let e = solve_uniform_equilibrium_closed_form(0.2, 0.5, 0.9).unwrap();
        let s = solve_uniform_sensitivity_closed_form(&e, 0.5, 0.9, 0.2).unwrap();
        let d = 1e-5;
        let up = solve_uniform_equilibrium_closed_form(0.2, 0.5 + d, 0.9).unwrap();
        let down = solve_uniform_equilibrium_closed_form(0.2, 0.5 - d, 0.9).unwrap();
        assert!(((up.theta - down.theta) / (2.0 * d) - s.theta_gamma).abs() < 1e-5);
        assert!(((up.z - down.z) / (2.0 * d) - s.z_gamma).abs() < 1e-5);
        assert!(((up.v0 - down.v0) / (2.0 * d) - s.w0).abs() < 1e-5);
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let m = example2(200);
        let w = solve_w_equation(&m, 0.4, 0.3, 0.0, 0.0).unwrap();
        assert!(w.left_y.iter().chain(&w.right_y).all(|&v| v == 0.0));
    }

    #[test]
    fn affine_superposition() {
        let m = example2(300);
        let (theta, z) = (0.47, 0.34);
        let wa = solve_w_equation(&m, theta, z, 0.0, 1.0).unwrap();
        let wb = solve_w_equation(&m, theta, z, 1.0, 0.0).unwrap();
        for lambda in [0.5, 2.0] {
            let w = solve_w_equation(&m, theta, z, lambda, 1.0).unwrap();
            let sum = combine(&wa, &wb, lambda);
            let err = w.left_y.iter().zip(&sum.left_y).chain(w.right_y.iter().zip(&sum.right_y))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn grid_sensitivities_example2() {
        let m = example2(4000);
        let eq = solve_equilibrium(&m).unwrap();
        let s = solve_sensitivities(&m, &eq).unwrap();
        assert!((s.w0 - 4.563055).abs() < 1e-2, "{s:?}");
        assert!((s.theta_gamma - 1.162861).abs() < 1e-2, "{}", s.theta_gamma);
        assert!((s.z_gamma - 0.336380).abs() < 1e-2, "{}", s.z_gamma);
        assert!(!s.truncated);
        assert!(s.jump().abs() > 1e-3, "jump {}", s.jump());

        // upper branch identity w = β w(0) + R₁ R₂' z_γ + 1
        let beta = 0.9;
        for (&x, &w) in s.w.right_x.iter().zip(&s.w.right_y) {
            assert!((w - beta * s.w0 - x * s.z_gamma - 1.0).abs() < 1e-12);
        }

        let theta = eq.theta.interior().unwrap();
        let fd = z_prime_finite_difference(&m.kernel, theta, m.grid(), Z_PRIME_STEP).unwrap();
        assert!((fd - uniform_z_prime(theta)).abs() < 1e-3);
    }

    #[test]
    fn decoupled_cost_still_raises_threshold() {
        let grid = make_grid(500).unwrap();
        let cost = CostModel::product(CostComponent::identity(), CostComponent::constant(0.5), 0.3, 0.9);
        // constant R₂ fails validation; build the model around it for this diagnostic
        let mut m = GameModel::new(TransitionKernel::Uniform, CostModel::linear(0.2, 0.2, 0.9), &grid).unwrap();
        m.cost = cost;
        let eq = solve_equilibrium(&m).unwrap();
        let s = solve_sensitivities(&m, &eq).unwrap();
        assert!(s.theta_gamma > 0.0);
        let beta = 0.9;
        for (&_x, &w) in s.w.right_x.iter().zip(&s.w.right_y) {
            assert!((w - beta * s.w0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_differences_agree_power_gap() {
        let grid = make_grid(1000).unwrap();
        let kernel = TransitionKernel::multiplicative_gap(GapDensity::Power { k: 2.0 }).unwrap();
        let m = GameModel::new(kernel, CostModel::linear(0.2, 0.3, 0.9), &grid)
            .unwrap()
            .with_tolerances(Tolerances { bellman: 1e-10, fixed_point: 1e-10, ..Tolerances::default() });
        let eq = solve_equilibrium(&m).unwrap();
        assert!(eq.theta.interior().is_some(), "{:?}", eq.theta);
        let r = finite_difference_check(&m, &eq, 1e-3).unwrap();
        assert!(r.theta_gamma_rel_err < 0.02, "{r:?}");
        assert!(r.z_gamma_rel_err < 0.02, "{r:?}");
        assert!(r.w_max_rel_err < 0.02, "{r:?}");
    }
}
