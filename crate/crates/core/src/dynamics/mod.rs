//! Fixed-step RK4 integration of models augmented with forward parameter
//! sensitivities and the running Fisher information matrix.

mod delay;
mod input;
mod integrate;
mod model;

pub use delay::{delay_chain, DelayRef};
pub use input::PiecewiseConstantInput;
pub use integrate::{
    integrate, min_eigenvalue, simulate, uniform_grid, write_trajectory_csv, AugmentedState, IntegratorOptions,
    StateTrajectory, Trajectory, DEFAULT_STEP,
};
pub use model::{fd_jacobian, Dynamics, ModelSpec, NoisePolicy};

#[cfg(test)]
mod tests;
