//! Uniform grids on `[0, 1]`, piecewise-linear functions, composite trapezoid
//! quadrature and a trapezoidal marching solver for second-kind Volterra
//! equations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snapping distance used when an off-grid point coincides with a node.
pub(crate) const NODE_SNAP: f64 = 1e-13;

/// Uniform partition of `[0, 1]` into `n` cells.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    h: f64,
    nodes: Arc<[f64]>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(n));
        }
        let nodes: Arc<[f64]> = (0..=n).map(|j| j as f64 / n as f64).collect();
        Ok(Grid { n, h: 1.0 / n as f64, nodes })
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh width `1/n`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell index `j` with `x_j <= x <= x_{j+1}` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let x = x.clamp(0.0, 1.0);
        let j = ((x * self.n as f64).floor() as usize).min(self.n - 1);
        let t = (x - self.nodes[j]) * self.n as f64;
        (j, t.clamp(0.0, 1.0))
    }

    /// Number of nodes with `x_j <= x` (up to snapping).
    pub(crate) fn count_at_or_below(&self, x: f64) -> usize {
        self.nodes.partition_point(|&node| node <= x + NODE_SNAP)
    }

    /// Number of nodes with `x_j < x` (up to snapping).
    pub(crate) fn count_below(&self, x: f64) -> usize {
        self.nodes.partition_point(|&node| node < x - NODE_SNAP)
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Node samples of a function on a [`Grid`], interpolated linearly between nodes.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "non-finite function value at node {bad}"
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        GridFunction { grid: grid.clone(), values }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (j, t) = self.grid.locate(x);
        self.values[j] + t * (self.values[j + 1] - self.values[j])
    }

    /// Composite trapezoid value of the integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        check_interval(a, b)?;
        Ok(trapezoid(self.grid.nodes(), &self.values, a, b, |_| 1.0))
    }

    /// Trapezoid value of `∫_a^b f(y) weight(y) dy` on the nodes inside `[a, b]`
    /// plus the two endpoints.
    pub fn integrate_weighted(&self, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> Result<f64> {
        check_interval(a, b)?;
        Ok(trapezoid(self.grid.nodes(), &self.values, a, b, weight))
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| f(x, v))
            .collect();
        GridFunction { grid: self.grid.clone(), values }
    }
}

pub fn integrate(f: &GridFunction, a: f64, b: f64) -> Result<f64> {
    f.integrate(a, b)
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
        return Err(Error::InvalidInterval { a, b });
    }
    Ok(())
}

/// Linear interpolation on sorted abscissae `xs`.
pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&xi| xi <= x).min(last).max(1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = (x - x0) / (x1 - x0);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// Trapezoid rule for `∫_a^b f w` where `f` is the polyline `(xs, ys)`; the
/// endpoints `a`, `b` enter as extra points with linearly interpolated `f`.
pub(crate) fn trapezoid(
    xs: &[f64],
    ys: &[f64],
    a: f64,
    b: f64,
    weight: impl Fn(f64) -> f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let start = xs.partition_point(|&x| x <= a + NODE_SNAP);
    let end = xs.partition_point(|&x| x < b - NODE_SNAP);
    let mut prev_x = a;
    let mut prev_y = interpolate(xs, ys, a) * weight(a);
    let mut sum = 0.0;
    for k in start..end {
        let y = ys[k] * weight(xs[k]);
        sum += 0.5 * (xs[k] - prev_x) * (prev_y + y);
        prev_x = xs[k];
        prev_y = y;
    }
    let y = interpolate(xs, ys, b) * weight(b);
    sum + 0.5 * (b - prev_x) * (prev_y + y)
}

/// A function that is piecewise linear on each side of `split` with separate
/// one-sided limits there. Used for quantities that jump at a threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchFunction {
    pub split: f64,
    pub left_x: Vec<f64>,
    pub left_y: Vec<f64>,
    pub right_x: Vec<f64>,
    pub right_y: Vec<f64>,
}

impl BranchFunction {
    /// Build from node values (left branch used for `x_j < split`, right for
    /// `x_j > split`) and the two one-sided limits at `split`.
    pub fn from_nodes(
        grid: &Grid,
        values: &[f64],
        split: f64,
        left_limit: f64,
        right_limit: f64,
    ) -> Self {
        let below = grid.count_below(split);
        let above = grid.count_at_or_below(split);
        let mut left_x: Vec<f64> = grid.nodes()[..below].to_vec();
        let mut left_y: Vec<f64> = values[..below].to_vec();
        left_x.push(split);
        left_y.push(left_limit);
        let mut right_x = vec![split];
        let mut right_y = vec![right_limit];
        right_x.extend_from_slice(&grid.nodes()[above..]);
        right_y.extend_from_slice(&values[above..]);
        BranchFunction { split, left_x, left_y, right_x, right_y }
    }

    pub fn left_limit(&self) -> f64 {
        *self.left_y.last().expect("left branch is never empty")
    }

    pub fn right_limit(&self) -> f64 {
        self.right_y[0]
    }

    pub fn jump(&self) -> f64 {
        self.right_limit() - self.left_limit()
    }

    /// Left-continuous evaluation below `split`, right branch above it.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.split {
            interpolate(&self.left_x, &self.left_y, x)
        } else {
            interpolate(&self.right_x, &self.right_y, x)
        }
    }

    pub fn integrate_weighted(&self, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        if a < self.split {
            total += trapezoid(&self.left_x, &self.left_y, a, b.min(self.split), &weight);
        }
        if b > self.split {
            total += trapezoid(&self.right_x, &self.right_y, a.max(self.split), b, &weight);
        }
        total
    }

    /// Samples `(x, value, branch)` for export, with both limits at the split.
    pub fn samples(&self) -> Vec<(f64, f64, Branch)> {
        let left = self.left_x.iter().zip(&self.left_y).map(|(&x, &y)| (x, y, Branch::Lower));
        let right = self.right_x.iter().zip(&self.right_y).map(|(&x, &y)| (x, y, Branch::Upper));
        left.chain(right).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `u(x) = ∫_0^{min(x, L)} K(x, y) u(y) dy + g(x)`.
    Forward,
    /// `u(x) = ∫_x^L K(x, y) u(y) dy + g(x)` for `x < L`, and `u = g` beyond `L`.
    Backward,
}

/// Marching solution together with the value at the (generally off-grid)
/// integration limit `L`.
#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub values: GridFunction,
    pub limit: f64,
    pub limit_value: f64,
}

/// Solve a second-kind Volterra equation by trapezoidal marching with the
/// diagonal weight moved to the left-hand side.
pub fn solve_volterra(
    kernel_fn: impl Fn(f64, f64) -> f64,
    forcing: &GridFunction,
    direction: Direction,
    upper_limit: f64,
) -> Result<GridFunction> {
    Ok(solve_volterra_split(kernel_fn, forcing, direction, upper_limit)?.values)
}

pub fn solve_volterra_split(
    kernel_fn: impl Fn(f64, f64) -> f64,
    forcing: &GridFunction,
    direction: Direction,
    upper_limit: f64,
) -> Result<VolterraSolution> {
    if !(0.0..=1.0).contains(&upper_limit) {
        return Err(Error::InvalidInterval { a: 0.0, b: upper_limit });
    }
    match direction {
        Direction::Forward => march_forward(&kernel_fn, forcing, upper_limit),
        Direction::Backward => march_backward(&kernel_fn, forcing, upper_limit),
    }
}

fn implicit_factor(x: f64, width: f64, k_diag: f64) -> Result<f64> {
    let factor = 1.0 - 0.5 * width * k_diag;
    if factor <= 0.0 || !factor.is_finite() {
        return Err(Error::DiagonalDegeneracy { x, factor });
    }
    Ok(factor)
}

fn march_forward(
    kernel: &impl Fn(f64, f64) -> f64,
    forcing: &GridFunction,
    limit: f64,
) -> Result<VolterraSolution> {
    let grid = forcing.grid();
    let xs = grid.nodes();
    let h = grid.h();
    let g = forcing.values();
    let mut u = vec![0.0; grid.len()];

    // nodes 0..inner lie in [0, L]
    let inner = grid.count_at_or_below(limit);
    u[0] = g[0];
    for j in 1..inner {
        let x = xs[j];
        let mut acc = 0.5 * kernel(x, xs[0]) * u[0];
        for i in 1..j {
            acc += kernel(x, xs[i]) * u[i];
        }
        let factor = implicit_factor(x, h, kernel(x, x))?;
        u[j] = (h * acc + g[j]) / factor;
    }

    let last = inner - 1;
    let tail = limit - xs[last];
    let on_node = tail <= NODE_SNAP;
    let (u, rest) = u.split_at_mut(inner);
    let u: &[f64] = u;
    // trapezoid on [0, x_last] of K(x, .) u
    let head_integral = |x: f64| -> f64 {
        if last == 0 {
            return 0.0;
        }
        let mut acc = 0.5 * (kernel(x, xs[0]) * u[0] + kernel(x, xs[last]) * u[last]);
        for i in 1..last {
            acc += kernel(x, xs[i]) * u[i];
        }
        h * acc
    };
    let limit_value = if on_node {
        u[last]
    } else {
        let factor = implicit_factor(limit, tail, kernel(limit, limit))?;
        (head_integral(limit) + 0.5 * tail * kernel(limit, xs[last]) * u[last] + forcing.eval(limit))
            / factor
    };
    for j in inner..grid.len() {
        let x = xs[j];
        let mut val = head_integral(x) + g[j];
        if !on_node {
            val += 0.5 * tail * (kernel(x, xs[last]) * u[last] + kernel(x, limit) * limit_value);
        }
        rest[j - inner] = val;
    }
    let mut values = u.to_vec();
    values.extend_from_slice(rest);
    Ok(VolterraSolution {
        values: GridFunction::from_vec_unchecked(grid, values),
        limit,
        limit_value,
    })
}

fn march_backward(
    kernel: &impl Fn(f64, f64) -> f64,
    forcing: &GridFunction,
    limit: f64,
) -> Result<VolterraSolution> {
    let grid = forcing.grid();
    let xs = grid.nodes();
    let h = grid.h();
    let g = forcing.values();
    let mut u = g.to_vec();

    // nodes 0..below lie strictly left of L; quadrature points are those nodes plus L
    let below = grid.count_below(limit);
    let limit_value = forcing.eval(limit);
    if below == 0 {
        return Ok(VolterraSolution {
            values: GridFunction::from_vec_unchecked(grid, u),
            limit,
            limit_value,
        });
    }
    let last = below - 1;
    let tail = limit - xs[last];
    for j in (0..below).rev() {
        let x = xs[j];
        let (acc, width) = if j == last {
            (0.5 * tail * kernel(x, limit) * limit_value, tail)
        } else {
            let mut acc = 0.5 * kernel(x, xs[last]) * u[last];
            for i in (j + 1)..last {
                acc += kernel(x, xs[i]) * u[i];
            }
            acc *= h;
            acc += 0.5 * tail * (kernel(x, xs[last]) * u[last] + kernel(x, limit) * limit_value);
            (acc, h)
        };
        let factor = implicit_factor(x, width, kernel(x, x))?;
        u[j] = (acc + g[j]) / factor;
    }
    Ok(VolterraSolution {
        values: GridFunction::from_vec_unchecked(grid, u),
        limit,
        limit_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = make_grid(2).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.h(), 0.5);
        let g = make_grid(4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(2000).unwrap();
        assert_eq!(g.len(), 2001);
        assert_eq!(g.h(), 0.0005);
        assert_eq!(g.node(2000), 1.0);
        assert!((g.h() * g.n() as f64 - 1.0).abs() <= f64::EPSILON);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_rejects_small_n() {
        assert!(matches!(make_grid(1), Err(Error::InvalidGrid(1))));
        assert!(make_grid(0).is_err());
    }

    #[test]
    fn integrate_constant_and_linear() {
        let g = make_grid(7).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        assert!((one.integrate(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let lin = GridFunction::from_fn(&g, |x| x);
        assert!((lin.integrate(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        // exact on linears with off-node endpoints
        let v = lin.integrate(0.13, 0.77).unwrap();
        assert!((v - 0.5 * (0.77f64.powi(2) - 0.13f64.powi(2))).abs() < 1e-15);
    }

    #[test]
    fn integrate_quadratic() {
        let g = make_grid(1000).unwrap();
        let sq = GridFunction::from_fn(&g, |x| x * x);
        assert!((sq.integrate(0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn integrate_rejects_bad_intervals() {
        let g = make_grid(4).unwrap();
        let f = GridFunction::constant(&g, 1.0);
        assert!(f.integrate(0.6, 0.4).is_err());
        assert!(f.integrate(-0.1, 0.4).is_err());
        assert!(f.integrate(0.1, 1.2).is_err());
        assert_eq!(f.integrate(0.3, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn volterra_zero_kernel_returns_forcing() {
        let g = make_grid(50).unwrap();
        let forcing = GridFunction::from_fn(&g, |x| (3.0 * x).sin() + 0.1);
        for dir in [Direction::Forward, Direction::Backward] {
            let u = solve_volterra(|_, _| 0.0, &forcing, dir, 0.63).unwrap();
            assert_eq!(u.values(), forcing.values());
        }
    }

    fn exp_error(n: usize) -> f64 {
        let g = make_grid(n).unwrap();
        let forcing = GridFunction::constant(&g, 1.0);
        let u = solve_volterra(|_, _| 1.0, &forcing, Direction::Forward, 1.0).unwrap();
        g.nodes()
            .iter()
            .zip(u.values())
            .map(|(x, v)| (v - x.exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn volterra_exponential() {
        assert!(exp_error(1000) <= 1e-4);
        let ratio = exp_error(200) / exp_error(400);
        assert!(ratio >= 3.5, "ratio {ratio}");
    }

    #[test]
    fn volterra_backward_exponential() {
        // u(x) = 1 + ∫_x^1 u  =>  u(x) = e^{1-x}
        let g = make_grid(1000).unwrap();
        let forcing = GridFunction::constant(&g, 1.0);
        let u = solve_volterra(|_, _| 1.0, &forcing, Direction::Backward, 1.0).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(u.values())
            .map(|(x, v)| (v - (1.0 - x).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn volterra_off_grid_limit_stationary_density() {
        let theta = 0.485162;
        let pi0 = 1.0 / (2.0 - (1.0 - theta as f64).ln());
        let g = make_grid(1000).unwrap();
        let forcing = GridFunction::constant(&g, pi0);
        let sol = solve_volterra_split(
            |_x, y| 1.0 / (1.0 - y),
            &forcing,
            Direction::Forward,
            theta,
        )
        .unwrap();
        for (&x, &p) in g.nodes().iter().zip(sol.values.values()) {
            let exact = if x < theta { pi0 / (1.0 - x) } else { pi0 / (1.0 - theta) };
            assert!((p - exact).abs() < 1e-4, "x={x} p={p} exact={exact}");
        }
        assert!((sol.limit_value - pi0 / (1.0 - theta)).abs() < 1e-4);
    }

    #[test]
    fn volterra_reports_degeneracy() {
        let g = make_grid(4).unwrap();
        let forcing = GridFunction::constant(&g, 1.0);
        let err = solve_volterra(|_, _| 100.0, &forcing, Direction::Forward, 1.0).unwrap_err();
        assert!(matches!(err, Error::DiagonalDegeneracy { .. }));
    }

    #[test]
    fn branch_function_integrates_each_side() {
        let g = make_grid(10).unwrap();
        let split = 0.43;
        let vals: Vec<f64> = g.nodes().iter().map(|&x| if x < split { x } else { 2.0 + x }).collect();
        let f = BranchFunction::from_nodes(&g, &vals, split, split, 2.0 + split);
        let exact = 0.5 * split * split + 2.0 * (1.0 - split) + 0.5 * (1.0 - split * split);
        assert!((f.integrate_weighted(0.0, 1.0, |_| 1.0) - exact).abs() < 1e-14);
        assert!((f.jump() - 2.0).abs() < 1e-15);
        assert_eq!(f.eval(split), split);
        assert!((f.eval(0.9) - 2.9).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn integrate_linear_and_additive(
                c1 in -5.0f64..5.0, c2 in -5.0f64..5.0,
                a in 0.0f64..1.0, m in 0.0f64..1.0, b in 0.0f64..1.0,
            ) {
                let mut pts = [a, m, b];
                pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let [a, m, b] = pts;
                let g = make_grid(37).unwrap();
                let f1 = GridFunction::from_fn(&g, |x| (4.0 * x).sin());
                let f2 = GridFunction::from_fn(&g, |x| x * x * x - x);
                let comb = GridFunction::from_fn(&g, |x| c1 * (4.0 * x).sin() + c2 * (x * x * x - x));
                let lhs = comb.integrate(a, b).unwrap();
                let rhs = c1 * f1.integrate(a, b).unwrap() + c2 * f2.integrate(a, b).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
                let split = f1.integrate(a, m).unwrap() + f1.integrate(m, b).unwrap();
                prop_assert!((split - f1.integrate(a, b).unwrap()).abs() < 1e-12);
            }
        }
    }
}
