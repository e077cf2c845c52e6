//! Scalable Gaussian-process regression and source separation for kernels
//! with a non-stationary phase.
//!
//! A warped kernel `k(φ(x), φ(x′))` with stationary, separable `k` is
//! approximated by interpolating onto an equispaced lattice in warped space,
//! `W K_UU Wᵀ`, where `K_UU` keeps Kronecker and Toeplitz structure. The
//! equivalent view in input space uses the non-equispaced inducing set
//! `Û = Φ⁻¹(U)`. Mixtures of such components are solved matrix-free with
//! conjugate gradients, and the marginal likelihood is estimated with
//! stochastic Lanczos quadrature.

pub mod error;
pub mod gp;
pub mod grid;
pub mod kernels;
pub mod krylov;
pub mod linalg;
pub mod optimize;
pub mod operators;
pub mod points;
pub mod warping;

pub use error::{Error, Result};
pub use gp::{ApproxSettings, ComponentSpec, FitOptions, FitReport, GpModel, LogNormalPrior, SeparationResult};
pub use grid::{AxisSpec, InducingGrid, InterpWeights};
pub use kernels::{Hyperparameters, KernelKind, KernelSpec, StationaryKernel};
pub use krylov::{cg_solve, lanczos, slq_logdet, slq_logdet_with_gradient, CgReport, LanczosFactor, ProbeSet, SlqEstimate};
pub use linalg::{KronEigen, KronFactor, KronOperator, LinearOperator, SymToeplitz};
pub use operators::{DifferentiableOperator, GridSpec, MixtureOperator, SkiComponent};
pub use points::Points;
pub use warping::{phase_from_events, Interval, Warp, WarpSpec};
