//! Python module `bmfg`: model construction, equilibrium, sensitivities,
//! simulation and the uniform-kernel closed forms.

use ::bmfg as core;
use core::mdp::gamma_bounds;
use core::sensitivity::{
    finite_difference_check, solve_uniform_equilibrium_closed_form, solve_uniform_sensitivity_closed_form,
};
use core::simulate::{simulate_population, InitialLaw, SimConfig};
use core::stationary::mean_field_of_theta;
use core::{
    make_grid, solve_equilibrium, solve_sensitivities, verify_equilibrium, CostComponent, CostModel,
    EquilibriumSolution, GameModel, GapDensity, SensitivityResult, Threshold, Tolerances, TransitionKernel,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn solver_err(e: core::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serialize through JSON into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn kernel_from(name: &str, k: f64) -> PyResult<TransitionKernel> {
    match name {
        "uniform" => Ok(TransitionKernel::Uniform),
        "power_gap" => TransitionKernel::multiplicative_gap(GapDensity::Power { k }).map_err(value_err),
        other => Err(PyValueError::new_err(format!("unknown kernel {other:?}; expected 'uniform' or 'power_gap'"))),
    }
}

fn threshold_from(tag: &str, value: Option<f64>) -> PyResult<Threshold> {
    match (tag, value) {
        ("zero", _) => Ok(Threshold::Zero),
        ("one", _) => Ok(Threshold::One),
        ("above_one", _) => Ok(Threshold::AboveOne),
        ("interior", Some(t)) if t > 0.0 && t < 1.0 => Ok(Threshold::Interior(t)),
        ("interior", _) => Err(PyValueError::new_err("interior threshold needs a value in (0, 1)")),
        (other, _) => Err(PyValueError::new_err(format!("unknown threshold tag {other:?}"))),
    }
}

/// Game with `R(x, z) = x^{k1} (c + z^{k2})` on a uniform grid of `n` intervals.
#[pyclass(name = "Model", module = "bmfg")]
struct PyModel {
    inner: GameModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (c, gamma, beta, *, kernel = "uniform", k = 1.0, r1_power = 1.0, r2_power = 1.0, n = 2000, bellman_tol = 1e-8, fixed_point_tol = 1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        c: f64,
        gamma: f64,
        beta: f64,
        kernel: &str,
        k: f64,
        r1_power: f64,
        r2_power: f64,
        n: usize,
        bellman_tol: f64,
        fixed_point_tol: f64,
    ) -> PyResult<Self> {
        let kernel = kernel_from(kernel, k)?;
        let r1 = CostComponent::Power { intercept: 0.0, scale: 1.0, exponent: r1_power };
        let r2 = CostComponent::Power { intercept: c, scale: 1.0, exponent: r2_power };
        let cost = CostModel::product(r1, r2, gamma, beta);
        let grid = make_grid(n).map_err(value_err)?;
        let tolerances = Tolerances { bellman: bellman_tol, fixed_point: fixed_point_tol, ..Tolerances::default() };
        let inner = GameModel::new(kernel, cost, &grid).map_err(value_err)?.with_tolerances(tolerances);
        Ok(PyModel { inner })
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid().nodes().to_vec()
    }

    fn with_gamma(&self, gamma: f64) -> Self {
        PyModel { inner: self.inner.with_gamma(gamma) }
    }

    fn solve(&self, py: Python<'_>) -> PyResult<PyEquilibrium> {
        let sol = py.detach(|| solve_equilibrium(&self.inner)).map_err(solver_err)?;
        Ok(PyEquilibrium { inner: sol })
    }

    /// Value function at a frozen mean field: `(v, threshold)`.
    fn value(&self, z: f64) -> PyResult<(Vec<f64>, PyThreshold)> {
        let vf = self.inner.solve_value(z, None).map_err(solver_err)?;
        let theta = self.inner.threshold_of(&vf).map_err(solver_err)?;
        Ok((vf.v.values().to_vec(), PyThreshold(theta)))
    }

    /// `(gamma_zero, gamma_above_one)` at a frozen mean field.
    fn gamma_bounds(&self, z: f64) -> PyResult<(f64, f64)> {
        let b = gamma_bounds(&self.inner.cost, &self.inner.kernel, self.inner.grid(), z).map_err(solver_err)?;
        Ok((b.gamma_zero, b.gamma_above_one))
    }

    fn mean_field(&self, theta: f64) -> PyResult<f64> {
        mean_field_of_theta(&self.inner.kernel, threshold_from("interior", Some(theta))?, self.inner.grid())
            .map_err(solver_err)
    }

    fn sensitivities(&self, eq: &PyEquilibrium) -> PyResult<PySensitivity> {
        let res = solve_sensitivities(&self.inner, &eq.inner).map_err(solver_err)?;
        Ok(PySensitivity { inner: res })
    }

    #[pyo3(signature = (eq, eps = 1e-3))]
    fn finite_difference<'py>(&self, py: Python<'py>, eq: &PyEquilibrium, eps: f64) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| finite_difference_check(&self.inner, &eq.inner, eps)).map_err(solver_err)?;
        to_py(py, &report)
    }

    fn verify<'py>(&self, py: Python<'py>, eq: &PyEquilibrium) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &verify_equilibrium(&self.inner, &eq.inner))
    }

    /// Population run; returns the summary statistics and the trajectory.
    #[pyo3(signature = (theta, *, agents = 10_000, horizon = 2000, burn_in = 500, seed = 1, bins = 50, uniform_start = false))]
    #[allow(clippy::too_many_arguments)]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        theta: &PyThreshold,
        agents: usize,
        horizon: usize,
        burn_in: usize,
        seed: u64,
        bins: usize,
        uniform_start: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut cfg = SimConfig::new(agents, horizon, burn_in, theta.0, seed);
        cfg.bins = bins;
        if uniform_start {
            cfg.initial_law = InitialLaw::Uniform;
        }
        cfg.validate().map_err(value_err)?;
        let mut stats = py.detach(|| simulate_population(&self.inner, &cfg)).map_err(solver_err)?;
        stats.agent_averages.clear();
        stats.final_states.clear();
        to_py(py, &stats)
    }
}

#[pyclass(name = "Threshold", module = "bmfg", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyThreshold(Threshold);

#[pymethods]
impl PyThreshold {
    #[new]
    #[pyo3(signature = (tag, value = None))]
    fn new(tag: &str, value: Option<f64>) -> PyResult<Self> {
        threshold_from(tag, value).map(PyThreshold)
    }

    #[getter]
    fn tag(&self) -> &'static str {
        self.0.tag()
    }

    /// Level in `[0, 1]`; `one` and `above_one` both give 1.
    #[getter]
    fn level(&self) -> f64 {
        self.0.level()
    }

    #[getter]
    fn interior(&self) -> Option<f64> {
        self.0.interior()
    }

    fn __repr__(&self) -> String {
        format!("Threshold({})", self.0)
    }
}

#[pyclass(name = "Equilibrium", module = "bmfg", frozen)]
struct PyEquilibrium {
    inner: EquilibriumSolution,
}

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn z(&self) -> f64 {
        self.inner.z
    }

    #[getter]
    fn theta(&self) -> PyThreshold {
        PyThreshold(self.inner.theta)
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.inner.v0()
    }

    #[getter]
    fn pi0(&self) -> f64 {
        self.inner.mu.atom0
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v.v.values().to_vec()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.inner.mu.density.values().to_vec()
    }

    #[getter]
    fn residual_z(&self) -> f64 {
        self.inner.residual_z
    }

    #[getter]
    fn existence_condition_holds(&self) -> bool {
        self.inner.existence_condition_holds
    }

    fn __repr__(&self) -> String {
        format!("Equilibrium(z={}, theta={}, v0={})", self.inner.z, self.inner.theta, self.inner.v0())
    }
}

#[pyclass(name = "Sensitivity", module = "bmfg", frozen)]
struct PySensitivity {
    inner: SensitivityResult,
}

#[pymethods]
impl PySensitivity {
    #[getter]
    fn w0(&self) -> f64 {
        self.inner.w0
    }

    #[getter]
    fn theta_gamma(&self) -> f64 {
        self.inner.theta_gamma
    }

    #[getter]
    fn z_gamma(&self) -> f64 {
        self.inner.z_gamma
    }

    #[getter]
    fn jump(&self) -> f64 {
        self.inner.jump()
    }

    fn w(&self, x: f64) -> f64 {
        self.inner.w.eval(x)
    }

    /// `(x, w, branch)` with both one-sided values at the threshold.
    fn samples(&self) -> Vec<(f64, f64, &'static str)> {
        self.inner
            .w
            .samples()
            .into_iter()
            .map(|(x, w, b)| (x, w, if b == core::numerics::Branch::Lower { "lower" } else { "upper" }))
            .collect()
    }
}

/// Closed-form equilibrium and sensitivities for the uniform kernel with
/// `R(x, z) = x (c + z)`.
#[pyfunction]
fn uniform_closed_form<'py>(py: Python<'py>, c: f64, gamma: f64, beta: f64) -> PyResult<Bound<'py, PyAny>> {
    let eq = solve_uniform_equilibrium_closed_form(c, gamma, beta).map_err(value_err)?;
    let s = solve_uniform_sensitivity_closed_form(&eq, gamma, beta, c).map_err(solver_err)?;
    to_py(
        py,
        &serde_json::json!({
            "v0": eq.v0, "theta": eq.theta, "z": eq.z,
            "w0": s.w0, "theta_gamma": s.theta_gamma, "z_gamma": s.z_gamma,
        }),
    )
}

#[pymodule]
#[pyo3(name = "bmfg")]
fn bmfg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyThreshold>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_class::<PySensitivity>()?;
    m.add_function(wrap_pyfunction!(uniform_closed_form, m)?)?;
    Ok(())
}
