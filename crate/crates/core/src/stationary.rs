//! Limiting law of the state under a threshold policy: an atom at 0 plus a
//! density, or a point mass in the degenerate regimes.

use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::mdp::Threshold;
use crate::numerics::{solve_volterra_split, trapezoid, Direction, Grid, GridFunction, NODE_SNAP};

/// `μ = π₀ δ₀ + p(x) dx`, or `δ₁` when `atom_at_one` is set.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub theta: Threshold,
    pub atom0: f64,
    /// Point mass at 1 (thresholds `One` and `AboveOne`).
    pub atom_at_one: bool,
    pub density: GridFunction,
    /// `p(θ)` for an interior threshold, which is generally off the grid.
    pub density_at_theta: Option<f64>,
    pub mean: f64,
}

impl StationaryDistribution {
    fn point_mass(theta: Threshold, grid: &Grid, at_one: bool) -> Self {
        StationaryDistribution {
            theta,
            atom0: if at_one { 0.0 } else { 1.0 },
            atom_at_one: at_one,
            density: GridFunction::constant(grid, 0.0),
            density_at_theta: None,
            mean: if at_one { 1.0 } else { 0.0 },
        }
    }

    pub fn grid(&self) -> &Grid {
        self.density.grid()
    }

    /// Nodes and density values with `θ` inserted when it falls between nodes.
    pub fn polyline(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = self.grid().nodes();
        let ys = self.density.values();
        match (self.theta, self.density_at_theta) {
            (Threshold::Interior(t), Some(pt)) => {
                let k = self.grid().count_below(t);
                if (xs[k] - t).abs() <= NODE_SNAP {
                    return (xs.to_vec(), ys.to_vec());
                }
                let mut px = xs[..k].to_vec();
                let mut py = ys[..k].to_vec();
                px.push(t);
                py.push(pt);
                px.extend_from_slice(&xs[k..]);
                py.extend_from_slice(&ys[k..]);
                (px, py)
            }
            _ => (xs.to_vec(), ys.to_vec()),
        }
    }

    /// `∫_a^b w(x) p(x) dx` by the trapezoid rule on [`polyline`](Self::polyline).
    pub fn integrate_density(&self, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let (px, py) = self.polyline();
        trapezoid(&px, &py, a, b, weight)
    }

    pub fn total_mass(&self) -> f64 {
        let one = if self.atom_at_one { 1.0 } else { 0.0 };
        self.atom0 + one + self.integrate_density(0.0, 1.0, |_| 1.0)
    }

    /// `∫_θ^1 p`, which equals `π₀` in the interior regime.
    pub fn mass_above_theta(&self) -> f64 {
        match self.theta {
            Threshold::Interior(t) => self.integrate_density(t, 1.0, |_| 1.0),
            _ => 0.0,
        }
    }

    /// Distribution function `μ([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.atom_at_one {
            return if x >= 1.0 { 1.0 } else { 0.0 };
        }
        if x < 0.0 {
            return 0.0;
        }
        self.atom0 + self.integrate_density(0.0, x.min(1.0), |_| 1.0)
    }
}

/// Quadrature tolerance for the identities checked on a grid: the squared
/// step relative to the distance from the threshold to 1, where the density
/// varies on the scale `1 − θ`.
pub fn grid_tolerance(grid: &Grid, theta: f64) -> f64 {
    let r = grid.h() / (1.0 - theta).max(grid.h());
    r * r
}

/// [`grid_tolerance`] at the trapezoid order the kernel allows: a density
/// behaving like `(1 − y)^{k−1}` near 1 limits it to `min(k, 2)`.
pub fn kernel_tolerance(kernel: &TransitionKernel, grid: &Grid, theta: f64) -> f64 {
    grid_tolerance(grid, theta).powf(0.5 * kernel.quadrature_order())
}

pub fn stationary_distribution(
    kernel: &TransitionKernel,
    theta: Threshold,
    grid: &Grid,
) -> Result<StationaryDistribution> {
    let t = match theta {
        Threshold::Zero => return Ok(StationaryDistribution::point_mass(theta, grid, false)),
        Threshold::One | Threshold::AboveOne => {
            return Ok(StationaryDistribution::point_mass(theta, grid, true))
        }
        Threshold::Interior(t) if t > 0.0 && t < 1.0 => t,
        Threshold::Interior(t) => return Err(Error::InvalidInterval { a: 0.0, b: t }),
    };

    // trial solve with π₀ = 1; the solution is linear in π₀
    let (values, at_theta) = match kernel.separable() {
        Some((a, b)) => march_separable(&*a, &*b, grid, t)?,
        None => {
            let forcing = GridFunction::from_fn(grid, |x| kernel.q(x, 0.0));
            let sol = solve_volterra_split(|x, y| kernel.q(x, y), &forcing, Direction::Forward, t)?;
            (sol.values.into_values(), sol.limit_value)
        }
    };
    let mut dist = StationaryDistribution {
        theta,
        atom0: 1.0,
        atom_at_one: false,
        density: GridFunction::from_vec_unchecked(grid, values),
        density_at_theta: Some(at_theta),
        mean: 0.0,
    };
    let scale = 1.0 / dist.total_mass();
    dist.atom0 = scale;
    dist.density = dist.density.map(|_, p| p * scale);
    dist.density_at_theta = Some(at_theta * scale);
    dist.mean = dist.integrate_density(0.0, 1.0, |x| x);

    let defect = (dist.mass_above_theta() - dist.atom0).abs();
    let tolerance = 10.0 * kernel_tolerance(kernel, grid, t);
    if defect > tolerance {
        return Err(Error::MassDefect { defect, tolerance });
    }
    Ok(dist)
}

/// Forward marching for `q(x|y) = a(y) b(x)`; the same trapezoid scheme as the
/// general solver with the history sum kept as a running total.
fn march_separable(
    a: &dyn Fn(f64) -> f64,
    b: &dyn Fn(f64) -> f64,
    grid: &Grid,
    theta: f64,
) -> Result<(Vec<f64>, f64)> {
    let xs = grid.nodes();
    let h = grid.h();
    let a0 = a(0.0);
    let av: Vec<f64> = xs.iter().map(|&x| if x < 1.0 { a(x) } else { 0.0 }).collect();
    let bv: Vec<f64> = xs.iter().map(|&x| b(x)).collect();
    let mut u = vec![0.0; grid.len()];

    let inner = grid.count_at_or_below(theta);
    u[0] = a0 * bv[0];
    let mut sum = 0.5 * h * av[0] * u[0];
    for j in 1..inner {
        let factor = 1.0 - 0.5 * h * bv[j] * av[j];
        if factor <= 0.0 {
            return Err(Error::DiagonalDegeneracy { x: xs[j], factor });
        }
        u[j] = (bv[j] * sum + a0 * bv[j]) / factor;
        sum += h * av[j] * u[j];
    }
    let last = inner - 1;
    let head = if last == 0 { 0.0 } else { sum - 0.5 * h * av[last] * u[last] };
    let tail = theta - xs[last];
    let (integral, at_theta) = if tail <= NODE_SNAP {
        (head, u[last])
    } else {
        let (at, bt) = (a(theta), b(theta));
        let factor = 1.0 - 0.5 * tail * bt * at;
        if factor <= 0.0 {
            return Err(Error::DiagonalDegeneracy { x: theta, factor });
        }
        let pt = (bt * (head + 0.5 * tail * av[last] * u[last]) + a0 * bt) / factor;
        (head + 0.5 * tail * (av[last] * u[last] + at * pt), pt)
    };
    for j in inner..grid.len() {
        u[j] = bv[j] * integral + a0 * bv[j];
    }
    Ok((u, at_theta))
}

/// `z(θ) = ∫ x μ_θ(dx)`.
pub fn mean_field_of_theta(kernel: &TransitionKernel, theta: Threshold, grid: &Grid) -> Result<f64> {
    Ok(stationary_distribution(kernel, theta, grid)?.mean)
}

/// Sup-norm change of `(π₀, p)` after one step of the controlled dynamics
/// `μ'(B) = ∫ [Q₀(B|y) 1{y < θ} + δ₀(B) 1{y >= θ}] μ(dy)`.
pub fn stationarity_defect(kernel: &TransitionKernel, dist: &StationaryDistribution) -> f64 {
    let t = match dist.theta {
        Threshold::Interior(t) => t,
        _ => return 0.0,
    };
    let (px, py) = dist.polyline();
    let atom = trapezoid(&px, &py, t, 1.0, |_| 1.0);
    let mut defect = (atom - dist.atom0).abs();
    for (&x, &p) in dist.grid().nodes().iter().zip(dist.density.values()) {
        let pushed = dist.atom0 * kernel.q(x, 0.0) + trapezoid(&px, &py, 0.0, x.min(t), |y| kernel.q(x, y));
        defect = defect.max((pushed - p).abs());
    }
    defect
}

/// Exact stationary law for the uniform kernel and an interior threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformStationary {
    pub theta: f64,
    pub pi0: f64,
    pub z: f64,
}

impl UniformStationary {
    pub fn density(&self, x: f64) -> f64 {
        if x < self.theta {
            self.pi0 / (1.0 - x)
        } else {
            self.pi0 / (1.0 - self.theta)
        }
    }
}

pub fn closed_form_uniform_stationary(theta: f64) -> Result<UniformStationary> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidInterval { a: 0.0, b: theta });
    }
    let log = (1.0 - theta).ln();
    let pi0 = 1.0 / (2.0 - log);
    let z = pi0 * ((1.0 - theta) / 2.0 - log);
    Ok(UniformStationary { theta, pi0, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GapDensity, TabulatedKernel};
    use crate::numerics::make_grid;

    #[test]
    fn degenerate_cases() {
        let grid = make_grid(20).unwrap();
        let k = TransitionKernel::Uniform;
        let d = stationary_distribution(&k, Threshold::Zero, &grid).unwrap();
        assert_eq!((d.atom0, d.mean, d.atom_at_one), (1.0, 0.0, false));
        for th in [Threshold::One, Threshold::AboveOne] {
            let d = stationary_distribution(&k, th, &grid).unwrap();
            assert_eq!((d.atom0, d.mean, d.atom_at_one), (0.0, 1.0, true));
            assert_eq!(d.total_mass(), 1.0);
        }
    }

    #[test]
    fn uniform_density_matches_closed_form() {
        let grid = make_grid(4000).unwrap();
        let theta = 0.485162;
        let d = stationary_distribution(&TransitionKernel::Uniform, Threshold::Interior(theta), &grid).unwrap();
        let exact = closed_form_uniform_stationary(theta).unwrap();
        let err = grid
            .nodes()
            .iter()
            .zip(d.density.values())
            .map(|(&x, &p)| (p - exact.density(x)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "sup error {err}");
        assert!((d.atom0 - exact.pi0).abs() < 1e-5);
        assert!((d.mass_above_theta() - d.atom0).abs() < 1e-6);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!((d.mean - 0.345854).abs() < 1e-3);
        assert!(d.density.values().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn closed_form_values() {
        let c = closed_form_uniform_stationary(0.5).unwrap();
        assert!((c.pi0 - 0.371313).abs() < 1e-6);
        assert!((c.z - 0.350202).abs() < 1e-6);
        let c = closed_form_uniform_stationary(1e-9).unwrap();
        assert!((c.pi0 - 0.5).abs() < 1e-8 && (c.z - 0.25).abs() < 1e-8);
        let c = closed_form_uniform_stationary(0.485162).unwrap();
        assert!((c.z - 0.345854).abs() < 1e-5, "{}", c.z);
        assert!(closed_form_uniform_stationary(1.0).is_err());
    }

    #[test]
    fn mean_field_small_theta_and_half() {
        let grid = make_grid(2000).unwrap();
        let k = TransitionKernel::Uniform;
        let z = mean_field_of_theta(&k, Threshold::Interior(0.5), &grid).unwrap();
        assert!((z - 0.350202).abs() < 1e-4);
        let z = mean_field_of_theta(&k, Threshold::Interior(1e-3), &grid).unwrap();
        let exact = closed_form_uniform_stationary(1e-3).unwrap().z;
        assert!((z - exact).abs() < 1e-4, "{z} vs {exact}");
    }

    #[test]
    fn separable_path_agrees_with_general_solver() {
        let grid = make_grid(300).unwrap();
        let gap = TransitionKernel::multiplicative_gap(GapDensity::Power { k: 2.0 }).unwrap();
        let (a, b) = gap.separable().unwrap();
        let theta = 0.4172;
        let (fast, pt) = march_separable(&*a, &*b, &grid, theta).unwrap();
        let forcing = GridFunction::from_fn(&grid, |x| gap.q(x, 0.0));
        let sol = solve_volterra_split(|x, y| gap.q(x, y), &forcing, Direction::Forward, theta).unwrap();
        let diff = fast
            .iter()
            .zip(sol.values.values())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
        assert!((pt - sol.limit_value).abs() < 1e-4);
    }

    #[test]
    fn tabulated_uniform_matches_builtin() {
        let grid = make_grid(400).unwrap();
        let tab = TabulatedKernel::from_fn(400, |_, x| 1.0 / (1.0 - x), None).unwrap();
        let th = Threshold::Interior(0.6);
        let zt = mean_field_of_theta(&TransitionKernel::Tabulated(tab), th, &grid).unwrap();
        let zu = mean_field_of_theta(&TransitionKernel::Uniform, th, &grid).unwrap();
        assert!((zt - zu).abs() < 1e-3, "{zt} vs {zu}");
    }

    #[test]
    fn stationarity_fixed_point() {
        let grid = make_grid(800).unwrap();
        for k in [
            TransitionKernel::Uniform,
            TransitionKernel::multiplicative_gap(GapDensity::Power { k: 3.0 }).unwrap(),
        ] {
            let d = stationary_distribution(&k, Threshold::Interior(0.37), &grid).unwrap();
            assert!(stationarity_defect(&k, &d) < 1e-5);
        }
    }

    #[test]
    fn mean_increases_with_theta_and_tends_to_one() {
        let grid = make_grid(1000).unwrap();
        for k in [
            TransitionKernel::Uniform,
            TransitionKernel::multiplicative_gap(GapDensity::Power { k: 2.0 }).unwrap(),
        ] {
            let zs: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999]
                .iter()
                .map(|&t| mean_field_of_theta(&k, Threshold::Interior(t), &grid).unwrap())
                .collect();
            assert!(zs.windows(2).all(|w| w[1] > w[0]), "{zs:?}");
            assert!(zs[6] > 0.75, "{zs:?}");
        }
    }
}
