//! Dynamic-programming reference solver.
//!
//! Between rebalancing dates the value function is carried backwards by an
//! exact one-period conditional expectation on a 2-D log-asset grid (plus a
//! 1-D grid for negative wealth). Because the controls and the terminal reward
//! depend on total wealth alone, the pre-decision value at each date is a
//! function of wealth, which is what the control search works on.

mod controls;
mod fourier;
mod grid;
mod solver;

pub use controls::{rollout_stored_controls, StoredControls, CONTROLS_VERSION};
pub use fourier::{Kernel1d, Kernel2d};
pub use grid::{Axis, AxisSpec, GridSpec, WealthGrid, LOG_CORE_HI, LOG_CORE_LO};
pub use solver::{
    optimize_node, Continuation, FixedSolve, GridContinuation, HjbSolution, HjbSolver, NodeControl, Rebalanced,
    ValueGrid, WealthContinuation, WstarSearch,
};
