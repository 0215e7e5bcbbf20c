//! Transition kernels `Q₀(·|x)` of the inactive chain.
//!
//! Every kernel moves the state upward: `Q₀([x, 1] | x) = 1`. The state `1`
//! is absorbing under inaction. Three families are provided:
//!
//! * `Uniform`: `Q₀(·|x)` uniform on `[x, 1]`;
//! * `MultiplicativeGap`: the distance to `1` shrinks by a random factor,
//!   `y = 1 − (1 − x) ξ` with `ξ ~ f_ξ` on `(0, 1)`;
//! * `Tabulated`: density and optional x-derivative sampled on a uniform grid.
//!
//! The multiplicative-gap law is sometimes written as `x + (x − 1) ξ`; that
//! expression moves the state below `x`, so the gap form above is used.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_volterra_split, Direction, Grid, GridFunction};

/// Density `f_ξ` of the gap factor of a [`TransitionKernel::MultiplicativeGap`] kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GapDensity {
    /// `f_ξ ≡ 1` on `(0, 1)`.
    Uniform,
    /// `f_ξ(s) = k s^{k−1}` with `k >= 1`.
    Power { k: f64 },
}

impl GapDensity {
    fn exponent(&self) -> f64 {
        match *self {
            GapDensity::Uniform => 1.0,
            GapDensity::Power { k } => k,
        }
    }

    pub fn pdf(&self, s: f64) -> f64 {
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        let k = self.exponent();
        k * s.powf(k - 1.0)
    }

    pub fn cdf(&self, s: f64) -> f64 {
        s.clamp(0.0, 1.0).powf(self.exponent())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            GapDensity::Uniform => u,
            GapDensity::Power { k } => u.powf(1.0 / k),
        }
    }
}

/// Density (and optionally its x-derivative) sampled on the nodes of a
/// uniform grid with `m` intervals; row index is `x`, column index is `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedKernel {
    m: usize,
    density: Vec<f64>,
    derivative: Option<Vec<f64>>,
}

impl TabulatedKernel {
    pub fn new(m: usize, density: Vec<f64>, derivative: Option<Vec<f64>>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(m));
        }
        let size = (m + 1) * (m + 1);
        if density.len() != size {
            return Err(Error::InvalidKernel(format!(
                "density table has {} entries, expected {size}",
                density.len()
            )));
        }
        if let Some(d) = &derivative {
            if d.len() != size {
                return Err(Error::InvalidKernel(format!(
                    "derivative table has {} entries, expected {size}",
                    d.len()
                )));
            }
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidKernel("density must be finite and nonnegative".into()));
        }
        Ok(TabulatedKernel { m, density, derivative })
    }

    /// Sample closures on the triangle `0 <= x <= y <= 1`; entries below the
    /// diagonal are zero. The last row (`x = 1`) is never used.
    pub fn from_fn(
        m: usize,
        density: impl Fn(f64, f64) -> f64,
        derivative: Option<&dyn Fn(f64, f64) -> f64>,
    ) -> Result<Self> {
        let node = |i: usize| i as f64 / m as f64;
        let mut q = vec![0.0; (m + 1) * (m + 1)];
        let mut dq = derivative.map(|_| vec![0.0; (m + 1) * (m + 1)]);
        for i in 0..m {
            for j in i..=m {
                q[i * (m + 1) + j] = density(node(j), node(i));
                if let (Some(table), Some(f)) = (dq.as_mut(), derivative) {
                    table[i * (m + 1) + j] = f(node(j), node(i));
                }
            }
        }
        TabulatedKernel::new(m, q, dq)
    }

    /// Read a square CSV matrix (no header). The optional companion file has
    /// the same shape and holds `∂q(y|x)/∂x`.
    pub fn from_csv(density: &Path, derivative: Option<&Path>) -> Result<Self> {
        let (m, q) = read_matrix(density)?;
        let dq = match derivative {
            Some(path) => {
                let (md, d) = read_matrix(path)?;
                if md != m {
                    return Err(Error::InvalidKernel(format!(
                        "derivative matrix has {} rows, density has {}",
                        md + 1,
                        m + 1
                    )));
                }
                Some(d)
            }
            None => None,
        };
        TabulatedKernel::new(m, q, dq)
    }

    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    fn row_value(table: &[f64], m: usize, row: usize, y: f64) -> f64 {
        let x_row = row as f64 / m as f64;
        // continue the row flat below its own diagonal so rows can be blended
        let y = y.max(x_row);
        let pos = y * m as f64;
        let j = (pos.floor() as usize).min(m - 1);
        let t = (pos - j as f64).clamp(0.0, 1.0);
        let base = row * (m + 1);
        let (a, b) = (table[base + j], table[base + j + 1]);
        // column j may lie below the diagonal of this row
        let a = if j < row { table[base + row] } else { a };
        a + t * (b - a)
    }

    fn lookup(&self, table: &[f64], y: f64, x: f64) -> f64 {
        let m = self.m;
        let pos = x * m as f64;
        let i = (pos.floor() as usize).min(m - 1);
        let t = (pos - i as f64).clamp(0.0, 1.0);
        let lo = Self::row_value(table, m, i, y);
        if t == 0.0 || i + 1 >= m {
            return lo;
        }
        let hi = Self::row_value(table, m, i + 1, y);
        lo + t * (hi - lo)
    }
}

fn read_matrix(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::InvalidKernel(format!(
                    "{}: row {} has {} columns, expected {w}",
                    path.display(),
                    rows + 1,
                    record.len()
                )));
            }
        }
        width = Some(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidKernel(format!(
                    "{}: row {}, column {}: cannot parse {field:?}",
                    path.display(),
                    rows + 1,
                    col + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if width != Some(rows) || rows < 3 {
        return Err(Error::InvalidKernel(format!(
            "{}: expected a square matrix with at least 3 rows, got {rows} rows",
            path.display()
        )));
    }
    Ok((rows - 1, values))
}

/// The inactive transition law `Q₀(·|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransitionKernel {
    Uniform,
    MultiplicativeGap { gap: GapDensity },
    Tabulated(TabulatedKernel),
}

impl TransitionKernel {
    pub fn multiplicative_gap(gap: GapDensity) -> Result<Self> {
        if let GapDensity::Power { k } = gap {
            if !(k >= 1.0 && k.is_finite()) {
                return Err(Error::InvalidKernel(format!("gap exponent must be >= 1, got {k}")));
            }
        }
        Ok(TransitionKernel::MultiplicativeGap { gap })
    }

    /// Whether this kernel coincides with the uniform kernel, for which
    /// closed forms exist.
    pub fn is_uniform(&self) -> bool {
        match self {
            TransitionKernel::Uniform => true,
            TransitionKernel::MultiplicativeGap { gap } => gap.exponent() == 1.0,
            TransitionKernel::Tabulated(_) => false,
        }
    }

    pub fn has_derivative(&self) -> bool {
        match self {
            TransitionKernel::Tabulated(t) => t.has_derivative(),
            _ => true,
        }
    }

    /// Convergence order of the trapezoid rule on densities of this kernel.
    pub(crate) fn quadrature_order(&self) -> f64 {
        match self {
            TransitionKernel::MultiplicativeGap { gap } => gap.exponent().min(2.0),
            _ => 2.0,
        }
    }

    /// Separable form `q(y|x) = a(x) b(y)` on `y >= x`, when available.
    pub(crate) fn separable(&self) -> Option<(Box<dyn Fn(f64) -> f64 + '_>, Box<dyn Fn(f64) -> f64 + '_>)> {
        match self {
            TransitionKernel::Uniform => Some((Box::new(|x| 1.0 / (1.0 - x)), Box::new(|_| 1.0))),
            TransitionKernel::MultiplicativeGap { gap } => {
                let k = gap.exponent();
                Some((
                    Box::new(move |x| k / (1.0 - x).powf(k)),
                    Box::new(move |y| (1.0 - y).powf(k - 1.0)),
                ))
            }
            TransitionKernel::Tabulated(_) => None,
        }
    }

    /// Density `q(y|x)` without argument checks; zero for `y < x`.
    pub(crate) fn q(&self, y: f64, x: f64) -> f64 {
        if y < x {
            return 0.0;
        }
        match self {
            TransitionKernel::Uniform => 1.0 / (1.0 - x),
            TransitionKernel::MultiplicativeGap { gap } => {
                gap.pdf((1.0 - y) / (1.0 - x)) / (1.0 - x)
            }
            TransitionKernel::Tabulated(t) => t.lookup(&t.density, y, x),
        }
    }

    pub(crate) fn dq_dx(&self, y: f64, x: f64) -> Result<f64> {
        if y < x {
            return Ok(0.0);
        }
        match self {
            TransitionKernel::Uniform => Ok(1.0 / ((1.0 - x) * (1.0 - x))),
            TransitionKernel::MultiplicativeGap { gap } => {
                // q = k (1-y)^{k-1} (1-x)^{-k}
                let k = gap.exponent();
                Ok(k * k * (1.0 - y).powf(k - 1.0) / (1.0 - x).powf(k + 1.0))
            }
            TransitionKernel::Tabulated(t) => match &t.derivative {
                Some(d) => Ok(t.lookup(d, y, x)),
                None => Err(Error::DerivativeUnavailable),
            },
        }
    }

    /// `q(y|x)` for `0 <= x < 1`, `0 <= y <= 1`.
    pub fn density(&self, y: f64, x: f64) -> Result<f64> {
        check_point(y, x)?;
        Ok(self.q(y, x))
    }

    /// `∂q(y|x)/∂x`.
    pub fn density_dx(&self, y: f64, x: f64) -> Result<f64> {
        check_point(y, x)?;
        self.dq_dx(y, x)
    }

    /// `Q₀([0, y] | x)`.
    pub fn cdf(&self, y: f64, x: f64) -> f64 {
        if x >= 1.0 {
            return if y >= 1.0 { 1.0 } else { 0.0 };
        }
        if y < x {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        match self {
            TransitionKernel::Uniform => (y - x) / (1.0 - x),
            TransitionKernel::MultiplicativeGap { gap } => 1.0 - gap.cdf((1.0 - y) / (1.0 - x)),
            TransitionKernel::Tabulated(_) => {
                let steps = 2000;
                let dy = (y - x) / steps as f64;
                let mut acc = 0.5 * (self.q(x, x) + self.q(y, x));
                for s in 1..steps {
                    acc += self.q(x + s as f64 * dy, x);
                }
                (acc * dy).min(1.0)
            }
        }
    }

    /// One draw from `Q₀(·|x)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        if x >= 1.0 {
            return 1.0;
        }
        match self {
            TransitionKernel::Uniform => {
                let u: f64 = rng.random();
                x + (1.0 - x) * u
            }
            TransitionKernel::MultiplicativeGap { gap } => 1.0 - (1.0 - x) * gap.sample(rng),
            TransitionKernel::Tabulated(t) => sample_tabulated(self, t.m, x, rng),
        }
    }

    /// Kernel-expectation operator on `grid`.
    pub fn operator(&self, grid: &Grid) -> KernelOperator {
        KernelOperator::new(self, grid)
    }

    /// Check (A3)-style kernel invariants on the grid nodes.
    pub fn validate(&self, grid: &Grid) -> Result<KernelDiagnostics> {
        let op = self.operator(grid);
        let ones = vec![1.0; grid.len()];
        let mut mass = vec![0.0; grid.len()];
        op.expectation(&ones, &mut mass);
        let normalization_error = mass[..grid.n()]
            .iter()
            .map(|m| (m - 1.0).abs())
            .fold(0.0, f64::max);
        let xs = grid.nodes();
        let mut min_interior_density = f64::INFINITY;
        let mut below_diagonal_nonzero = false;
        for (j, &x) in xs[..grid.n()].iter().enumerate() {
            for &y in &xs[j + 1..grid.n()] {
                min_interior_density = min_interior_density.min(self.q(y, x));
            }
            if j > 0 && self.q(xs[j - 1], x) != 0.0 {
                below_diagonal_nonzero = true;
            }
        }
        let top_mass = |delta: f64| {
            xs[..grid.n()]
                .iter()
                .map(|&x| 1.0 - self.cdf(1.0 - delta, x))
                .fold(f64::INFINITY, f64::min)
        };
        let diag = KernelDiagnostics {
            normalization_error,
            min_interior_density,
            top_mass_01: top_mass(0.1),
            top_mass_001: top_mass(0.01),
        };
        if below_diagonal_nonzero {
            return Err(Error::InvalidKernel("density is nonzero below the diagonal".into()));
        }
        Ok(diag)
    }
}

fn check_point(y: f64, x: f64) -> Result<()> {
    if !(0.0..1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidKernel(format!(
            "density is defined for 0 <= x < 1, 0 <= y <= 1; got x = {x}, y = {y}"
        )));
    }
    Ok(())
}

fn sample_tabulated<R: Rng + ?Sized>(kernel: &TransitionKernel, m: usize, x: f64, rng: &mut R) -> f64 {
    // inverse CDF of the row, built on x plus the table nodes above it
    let mut ys = vec![x];
    let first = ((x * m as f64).floor() as usize + 1).min(m);
    ys.extend((first..=m).map(|j| j as f64 / m as f64));
    if ys.len() < 2 {
        return 1.0;
    }
    let mut cum = vec![0.0; ys.len()];
    for k in 1..ys.len() {
        let (a, b) = (ys[k - 1], ys[k]);
        cum[k] = cum[k - 1] + 0.5 * (b - a) * (kernel.q(a, x) + kernel.q(b, x));
    }
    let total = *cum.last().unwrap();
    let target = rng.random::<f64>() * total;
    let k = cum.partition_point(|&c| c < target).clamp(1, ys.len() - 1);
    let (c0, c1) = (cum[k - 1], cum[k]);
    let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// Checks of the kernel contract evaluated on grid nodes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelDiagnostics {
    /// `max_x |∫ q(y|x) dy − 1|` over nodes `x < 1`.
    pub normalization_error: f64,
    /// Minimum of `q(y|x)` over node pairs with `x < y < 1`.
    pub min_interior_density: f64,
    /// `min_x Q₀([0.9, 1] | x)`.
    pub top_mass_01: f64,
    /// `min_x Q₀([0.99, 1] | x)`.
    pub top_mass_001: f64,
}

#[derive(Debug, Clone)]
enum Repr {
    /// `q(y|x) = a(x) b(y)`; node samples of `b`. The factor `a(x)` cancels
    /// under row normalization.
    Separable { b: Vec<f64> },
    /// Row `j` holds normalized trapezoid weights times `q(x_i|x_j)` for `i = j..=n`.
    Dense { rows: Vec<Vec<f64>> },
}

/// Trapezoid discretization of `g ↦ ∫ g(y) Q₀(dy|x)` at every grid node,
/// with each row rescaled to total mass 1 so the discrete operator is a
/// Markov kernel. The last node is absorbing: the image there is `g(1)`.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    grid: Grid,
    repr: Repr,
}

impl KernelOperator {
    pub fn new(kernel: &TransitionKernel, grid: &Grid) -> Self {
        let xs = grid.nodes();
        let n = grid.n();
        let h = grid.h();
        let repr = match kernel.separable() {
            Some((_, b)) => Repr::Separable { b: xs.iter().map(|&y| b(y)).collect() },
            None => {
                let rows = (0..n)
                    .map(|j| {
                        let mut row: Vec<f64> = (j..=n)
                            .map(|i| {
                                let w = if i == j || i == n { 0.5 * h } else { h };
                                w * kernel.q(xs[i], xs[j])
                            })
                            .collect();
                        let mass: f64 = row.iter().sum();
                        if mass > 0.0 {
                            row.iter_mut().for_each(|w| *w /= mass);
                        }
                        row
                    })
                    .collect();
                Repr::Dense { rows }
            }
        };
        KernelOperator { grid: grid.clone(), repr }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `out[j] = ∫ g(y) q(y|x_j) dy` by the trapezoid rule on nodes `x_j..=1`.
    pub fn expectation(&self, g: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        let h = self.grid.h();
        out[n] = g[n];
        match &self.repr {
            Repr::Separable { b } => {
                let (mut tail, mut mass) = (0.0, 0.0);
                for j in (0..n).rev() {
                    tail += 0.5 * h * (g[j] * b[j] + g[j + 1] * b[j + 1]);
                    mass += 0.5 * h * (b[j] + b[j + 1]);
                    out[j] = tail / mass;
                }
            }
            Repr::Dense { rows } => {
                for (j, row) in rows.iter().enumerate() {
                    out[j] = row.iter().zip(&g[j..]).map(|(w, v)| w * v).sum();
                }
            }
        }
    }

    /// `∫ g(y) q(y|0) dy`, the first entry of [`expectation`](Self::expectation).
    pub fn expectation_at_zero(&self, g: &[f64]) -> f64 {
        let h = self.grid.h();
        match &self.repr {
            Repr::Separable { b } => {
                let (mut tail, mut mass) = (0.0, 0.0);
                for j in 0..self.grid.n() {
                    tail += 0.5 * h * (g[j] * b[j] + g[j + 1] * b[j + 1]);
                    mass += 0.5 * h * (b[j] + b[j + 1]);
                }
                tail / mass
            }
            Repr::Dense { rows } => rows[0].iter().zip(g).map(|(w, v)| w * v).sum(),
        }
    }

    pub fn apply(&self, g: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; self.grid.len()];
        self.expectation(g.values(), &mut out);
        GridFunction::from_vec_unchecked(&self.grid, out)
    }
}

/// Verdict for one test function or the whole family.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Monotonicity {
    StrictlyIncreasing,
    /// Nondecreasing but flat between the first such pair of nodes.
    Nondecreasing { flat_at: (f64, f64) },
    /// Decreases between this pair of nodes.
    Violated { at: (f64, f64) },
}

impl Monotonicity {
    fn rank(&self) -> u8 {
        match self {
            Monotonicity::StrictlyIncreasing => 0,
            Monotonicity::Nondecreasing { .. } => 1,
            Monotonicity::Violated { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    /// Exponents `m` of the test functions `ψ_m(y) = y^m`.
    pub exponents: Vec<u32>,
    pub per_function: Vec<Monotonicity>,
    /// Pointwise CDF ordering `F(·|x_j) >= F(·|x_{j+1})` on all node pairs.
    pub cdf_dominance: bool,
    pub overall: Monotonicity,
}

impl MonotonicityReport {
    pub fn is_strict(&self) -> bool {
        self.overall == Monotonicity::StrictlyIncreasing
    }
}

const MONOTONE_EPS: f64 = 1e-12;

fn classify(xs: &[f64], values: &[f64]) -> Monotonicity {
    let mut verdict = Monotonicity::StrictlyIncreasing;
    for k in 1..values.len() {
        let d = values[k] - values[k - 1];
        let scale = MONOTONE_EPS * values[k].abs().max(1.0);
        if d < -scale {
            return Monotonicity::Violated { at: (xs[k - 1], xs[k]) };
        }
        if d <= scale && verdict == Monotonicity::StrictlyIncreasing {
            verdict = Monotonicity::Nondecreasing { flat_at: (xs[k - 1], xs[k]) };
        }
    }
    verdict
}

/// Test `x ↦ ∫ ψ_m(y) q(y|x) dy` for `ψ_m(y) = y^m`, `m ∈ {1, 2, 3, 5}`, and
/// first-order dominance of neighbouring rows.
pub fn check_stochastic_monotonicity(kernel: &TransitionKernel, grid: &Grid) -> MonotonicityReport {
    let op = kernel.operator(grid);
    let xs = grid.nodes();
    let exponents = vec![1, 2, 3, 5];
    let mut phi = vec![0.0; grid.len()];
    let per_function: Vec<Monotonicity> = exponents
        .iter()
        .map(|&m| {
            let psi: Vec<f64> = xs.iter().map(|y| y.powi(m as i32)).collect();
            op.expectation(&psi, &mut phi);
            classify(xs, &phi)
        })
        .collect();

    let row = |x: f64| -> Vec<f64> {
        match kernel {
            TransitionKernel::Tabulated(_) => {
                // cumulative trapezoid along the node row
                let mut out = vec![0.0; xs.len()];
                let mut acc = 0.0;
                let mut prev = (x, kernel.q(x, x));
                for (k, &y) in xs.iter().enumerate() {
                    if y > x {
                        let qy = kernel.q(y, x);
                        acc += 0.5 * (y - prev.0) * (prev.1 + qy);
                        prev = (y, qy);
                    }
                    out[k] = if x >= 1.0 { kernel.cdf(y, x) } else { acc };
                }
                out
            }
            _ => xs.iter().map(|&y| kernel.cdf(y, x)).collect(),
        }
    };
    let mut cdf_dominance = true;
    let mut prev = row(xs[0]);
    for &x in &xs[1..] {
        let next = row(x);
        if prev.iter().zip(&next).any(|(a, b)| *a < *b - 1e-12) {
            cdf_dominance = false;
            break;
        }
        prev = next;
    }

    let mut overall = per_function
        .iter()
        .max_by_key(|m| m.rank())
        .cloned()
        .unwrap_or(Monotonicity::StrictlyIncreasing);
    if !cdf_dominance && overall.rank() < 2 {
        overall = Monotonicity::Violated { at: (0.0, 1.0) };
    }
    MonotonicityReport { exponents, per_function, cdf_dominance, overall }
}

/// `E[τ | Y₀ = 0]` for `τ = inf{t : Y_t >= θ}` of the inactive chain, from
/// `m(x) = 1 + ∫_x^θ q(y|x) m(y) dy` on `[0, θ)` marched backward from `θ`.
pub fn expected_hitting_time(kernel: &TransitionKernel, theta: f64, grid: &Grid) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidInterval { a: 0.0, b: theta });
    }
    let forcing = GridFunction::constant(grid, 1.0);
    let sol = solve_volterra_split(|x, y| kernel.q(y, x), &forcing, Direction::Backward, theta)?;
    Ok(sol.values.values()[0])
}
