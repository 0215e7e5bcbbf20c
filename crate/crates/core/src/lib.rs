//! Stationary equilibria of a binary-action mean field game on `[0, 1]`:
//! value iteration for the threshold best response, the limiting state law,
//! the fixed point in the mean field, sensitivities in the effort cost, and
//! Monte Carlo cross-checks.

pub mod equilibrium;
pub mod error;
pub mod export;
pub mod kernels;
pub mod mdp;
pub mod numerics;
pub mod sensitivity;
pub mod simulate;
pub mod stationary;

pub use equilibrium::{
    best_response_map, gamma_existence_lower_bound, solve_equilibrium, verify_equilibrium, EquilibriumSolution,
    GameModel, Tolerances, VerificationReport,
};
pub use error::{Error, Result};
pub use kernels::{GapDensity, TabulatedKernel, TransitionKernel};
pub use mdp::{CostComponent, CostModel, Threshold, ValueFunction};
pub use numerics::{make_grid, Grid, GridFunction};
pub use sensitivity::{solve_sensitivities, SensitivityResult};
pub use stationary::{stationary_distribution, StationaryDistribution};
