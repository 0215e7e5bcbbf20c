//! Run configuration: a TOML file with `model`, `numerics`, `command` and
//! `output` tables. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use bmfg::kernels::{GapDensity, TabulatedKernel, TransitionKernel};
use bmfg::mdp::{CostComponent, CostModel, Threshold};
use bmfg::numerics::make_grid;
use bmfg::simulate::InitialLaw;
use bmfg::{GameModel, Tolerances};
use serde::Deserialize;

/// A configuration problem, located by field path or file position.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field_error(path: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub command: CommandBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Uniform,
    PowerGap { k: f64 },
    /// Square CSV of `q(y|x)` (rows `x`, columns `y`), optional derivative table.
    Tabulated { density: PathBuf, derivative: Option<PathBuf> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFamily {
    Linear,
    Power { k: f64 },
    /// One value per line on uniform nodes over `[0, 1]`.
    Tabulated { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kernel: KernelSpec,
    /// `R₁(x)`: `x`, `x^k` or tabulated.
    pub r1: CostFamily,
    /// `R₂(z)`: `c + z`, `c + z^k` or tabulated.
    pub r2: CostFamily,
    pub c: f64,
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    pub n: usize,
    pub bellman_tol: f64,
    pub fixed_point_tol: f64,
    pub threshold_tol: Option<f64>,
    pub max_bisection_steps: usize,
    pub max_iterations: usize,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        let t = Tolerances::default();
        NumericsBlock {
            n: 2000,
            bellman_tol: t.bellman,
            fixed_point_tol: t.fixed_point,
            threshold_tol: t.threshold,
            max_bisection_steps: t.max_bisection_steps,
            max_iterations: t.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandBlock {
    #[serde(default)]
    pub sensitivity: SensitivityOptions,
    #[serde(default)]
    pub curve: CurveOptions,
    #[serde(default)]
    pub simulate: SimulateOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityOptions {
    /// Step for the finite-difference check; 0 disables it.
    pub eps: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { eps: 1e-3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveOptions {
    /// Discount factor of the auxiliary problem; defaults to `model.beta`.
    pub rho: Option<f64>,
    pub points: usize,
    pub theta_points: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { rho: None, points: 50, theta_points: 99 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// The equilibrium threshold of the configured model.
    Equilibrium,
    Zero,
    Interior { theta: f64 },
    One,
    AboveOne,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub agents: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub bins: usize,
    pub initial: InitialLaw,
    pub policy: PolicySpec,
    pub cycles: usize,
    /// Replications for the discounted-cost estimate; 0 skips it.
    pub cost_replications: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            agents: 10_000,
            horizon: 2000,
            burn_in: 500,
            seed: 1,
            bins: 50,
            initial: InitialLaw::AllZero,
            policy: PolicySpec::Equilibrium,
            cycles: 100_000,
            cost_replications: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    /// File types written to `dir`; standard output is always JSON.
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative data paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let KernelSpec::Tabulated { density, derivative } = &mut self.model.kernel {
            fix(density);
            if let Some(d) = derivative {
                fix(d);
            }
        }
        for family in [&mut self.model.r1, &mut self.model.r2] {
            if let CostFamily::Tabulated { path } = family {
                fix(path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(m.beta > 0.0 && m.beta < 1.0) {
            return Err(field_error("model.beta", format!("must lie in (0, 1), got {}", m.beta)));
        }
        if !(m.gamma > 0.0 && m.gamma.is_finite()) {
            return Err(field_error("model.gamma", format!("must be positive, got {}", m.gamma)));
        }
        if !(m.c > 0.0 && m.c.is_finite()) {
            return Err(field_error("model.c", format!("must be positive, got {}", m.c)));
        }
        if let KernelSpec::PowerGap { k } = m.kernel {
            if !(k >= 1.0 && k.is_finite()) {
                return Err(field_error("model.kernel.k", format!("must be >= 1, got {k}")));
            }
        }
        for (name, fam) in [("model.r1", &m.r1), ("model.r2", &m.r2)] {
            if let CostFamily::Power { k } = fam {
                if !(*k > 0.0 && k.is_finite()) {
                    return Err(field_error(&format!("{name}.k"), format!("must be positive, got {k}")));
                }
            }
        }
        let n = &self.numerics;
        if n.n < 2 {
            return Err(field_error("numerics.n", format!("must be at least 2, got {}", n.n)));
        }
        for (name, v) in [("numerics.bellman_tol", n.bellman_tol), ("numerics.fixed_point_tol", n.fixed_point_tol)] {
            if !(v > 0.0) {
                return Err(field_error(name, format!("must be positive, got {v}")));
            }
        }
        if let Some(t) = n.threshold_tol {
            if !(t > 0.0) {
                return Err(field_error("numerics.threshold_tol", format!("must be positive, got {t}")));
            }
        }
        let s = &self.command.sensitivity;
        if !(s.eps >= 0.0) {
            return Err(field_error("command.sensitivity.eps", format!("must be nonnegative, got {}", s.eps)));
        }
        let c = &self.command.curve;
        if let Some(rho) = c.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(field_error("command.curve.rho", format!("must lie in (0, 1), got {rho}")));
            }
        }
        if c.points < 2 {
            return Err(field_error("command.curve.points", "must be at least 2"));
        }
        let sim = &self.command.simulate;
        if sim.agents == 0 {
            return Err(field_error("command.simulate.agents", "must be at least 1"));
        }
        if sim.horizon <= sim.burn_in {
            return Err(field_error("command.simulate.horizon", "must exceed command.simulate.burn_in"));
        }
        if sim.bins == 0 {
            return Err(field_error("command.simulate.bins", "must be at least 1"));
        }
        if let PolicySpec::Interior { theta } = sim.policy {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(field_error("command.simulate.policy.theta", format!("must lie in (0, 1), got {theta}")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<TransitionKernel, ConfigError> {
        match &self.model.kernel {
            KernelSpec::Uniform => Ok(TransitionKernel::Uniform),
            KernelSpec::PowerGap { k } => TransitionKernel::multiplicative_gap(GapDensity::Power { k: *k })
                .map_err(|e| field_error("model.kernel", e)),
            KernelSpec::Tabulated { density, derivative } => {
                TabulatedKernel::from_csv(density, derivative.as_deref())
                    .map(TransitionKernel::Tabulated)
                    .map_err(|e| field_error("model.kernel", e))
            }
        }
    }

    fn component(fam: &CostFamily, intercept: f64, path: &str) -> Result<CostComponent, ConfigError> {
        match fam {
            CostFamily::Linear => Ok(CostComponent::Affine { intercept, slope: 1.0 }),
            CostFamily::Power { k } => Ok(CostComponent::Power { intercept, scale: 1.0, exponent: *k }),
            CostFamily::Tabulated { path: file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| field_error(path, format!("{}: {e}", file.display())))?;
                let values = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(|l| l.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| field_error(path, format!("{}: {e}", file.display())))?;
                Ok(CostComponent::Tabulated { values })
            }
        }
    }

    /// `R₁` has no intercept; `R₂` carries `c`.
    pub fn cost(&self) -> Result<CostModel, ConfigError> {
        let m = &self.model;
        let r1 = Self::component(&m.r1, 0.0, "model.r1")?;
        let r2 = Self::component(&m.r2, m.c, "model.r2")?;
        Ok(CostModel::product(r1, r2, m.gamma, m.beta))
    }

    pub fn tolerances(&self) -> Tolerances {
        let n = &self.numerics;
        Tolerances {
            bellman: n.bellman_tol,
            fixed_point: n.fixed_point_tol,
            threshold: n.threshold_tol,
            max_bisection_steps: n.max_bisection_steps,
            max_iterations: n.max_iterations,
        }
    }

    pub fn game_model(&self) -> Result<GameModel, ConfigError> {
        let grid = make_grid(self.numerics.n).map_err(|e| field_error("numerics.n", e))?;
        let model = GameModel::new(self.kernel()?, self.cost()?, &grid).map_err(|e| field_error("model", e))?;
        Ok(model.with_tolerances(self.tolerances()))
    }

    /// Whether the closed-form uniform-kernel solution applies.
    pub fn closed_form_applies(&self) -> bool {
        let m = &self.model;
        matches!(m.kernel, KernelSpec::Uniform) && matches!(m.r1, CostFamily::Linear) && matches!(m.r2, CostFamily::Linear)
    }
}

impl PolicySpec {
    pub fn fixed(&self) -> Option<Threshold> {
        match *self {
            PolicySpec::Equilibrium => None,
            PolicySpec::Zero => Some(Threshold::Zero),
            PolicySpec::Interior { theta } => Some(Threshold::Interior(theta)),
            PolicySpec::One => Some(Threshold::One),
            PolicySpec::AboveOne => Some(Threshold::AboveOne),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
kernel = { type = "uniform" }
r1 = { family = "linear" }
r2 = { family = "linear" }
c = 0.2
gamma = 0.5
beta = 0.9
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.numerics.n, 2000);
        assert!(cfg.closed_form_applies());
        assert!(cfg.game_model().is_ok());
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = RunConfig::parse(&format!("{BASE}delta = 3\n")).unwrap_err().to_string();
        assert!(err.contains("delta"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn negative_beta_reports_field_path() {
        let err = RunConfig::parse(&BASE.replace("beta = 0.9", "beta = -0.9")).unwrap_err().to_string();
        assert!(err.starts_with("model.beta"), "{err}");
    }
}
