//! Deep neural networks whose per-layer time step-sizes `τ` are trained
//! alongside weights and biases.
//!
//! The feature propagation of ResNet, DenseNet, plain feedforward and
//! fractional (Caputo) networks is read as the time discretization of a
//! dynamical system. Each layer carries its own step `τ^[ℓ]`; for the
//! fractional network the steps form a non-equidistant grid on which an L1
//! scheme approximates the Caputo derivative, so every step enters the memory
//! coefficients of all later layers.
//!
//! Gradients are assembled from hand-derived discrete adjoint recursions and
//! cross-checked against central finite differences in [`adjoint::fd_gradient`].
//!
//! Module map:
//!
//! * [`linalg`] dense vectors/matrices, inter-layer projections, seeded RNG
//! * [`special`] Gamma and modified Bessel `I₀`, `I₁`
//! * [`activation`] smoothed ReLU
//! * [`fractional`] L1 coefficients on non-uniform grids and their τ-derivatives
//! * [`networks`] forward propagation for the four architectures
//! * [`adjoint`] adjoint recursions, parameter gradients and the FD oracle
//! * [`objective`] MSE, elastic-net and bias-ordering terms
//! * [`optimizer`] projected steepest descent with Armijo backtracking
//! * [`maxwell`] synthetic Maxwell regression data with a closed-form solution
//! * [`diagnostics`] layer Jacobians, gradient-flow reports, τ-driven pruning
//! * [`io`] checkpoints, run configs and CSV formats used by the CLI

pub mod activation;
pub mod adjoint;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fractional;
pub mod io;
pub mod linalg;
pub mod maxwell;
pub mod networks;
pub mod objective;
pub mod optimizer;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{project, Matrix, RngState, Vector};
pub use networks::{forward, Architecture, NetworkSpec, Theta, Trajectory};
