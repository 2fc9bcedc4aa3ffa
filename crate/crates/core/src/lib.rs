//! Spectral numerics for the one-dimensional continuous-time weakly
//! self-avoiding walk.
//!
//! The walk's two-point function, susceptibility and escape speed are all
//! expressed through a positive self-adjoint integral operator `Q(g, nu)` on
//! `L2[0, inf)` and an affine operator `T`. This crate discretizes both on a
//! quadrature grid and computes:
//!
//! * the critical point `nu_c(g)` where the norm of `Q` equals one, and the
//!   escape speed `theta(g) = -1 / d_nu lambda` there ([`criticality`]);
//! * two-point functions, susceptibilities and correlation lengths
//!   ([`greenfn`]);
//! * the `c_n` sequence certifying `theta' > 0` ([`monotonicity`]);
//! * Monte Carlo estimates from simulated walks as an independent check
//!   ([`mcsim`]).

pub mod criticality;
pub mod discretize;
pub mod error;
pub mod greenfn;
pub mod kernels;
pub mod mcsim;
pub mod model;
pub mod monotonicity;
pub mod spectral;

pub use discretize::{build_grid, Backend, Discretization, DiscretizedOperator, QuadGrid, QuadRule};
pub use error::{Error, Result};
pub use kernels::KernelKind;
pub use model::{ModelParams, PhiSpec};
