//! Observer synthesis for quadratic energy-preserving systems
//!
//! The systems handled here have the form `x' = A x + N(x) x`, `y = C x`,
//! where `N(x) = Σ x_i M_i` is linear in `x` and satisfies `xᵀ N(x) x = 0`.
//! The crate computes invariant balls for the plant and for Luenberger-type
//! observers by semidefinite programming, synthesizes observer gains that
//! are certified locally, over a region, or globally, and simulates
//! plant/observer pairs.
//!
//! Module overview:
//! - [`model`]: system types, validation, and derived quadratic structures.
//! - [`lmi`]: an affine matrix modelling layer, the SDP backend contract and
//!   robust LMI reformulations.
//! - [`trapping`]: trapping-ball certificates for plant and observer.
//! - [`synth`]: gain synthesis and certification.
//! - [`sim`]: RK4 integration, invariance checks and CSV output.
//! - [`cli`]: the `obsv` command-line front end.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use obsv::{fixtures, model, sim, synth, trapping, UncertaintyRegion};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let sys = fixtures::lorenz();
//! let ker = DMatrix::from_column_slice(3, 2, &[0., 1., 0., 0., 0., 1.]);
//! let q = model::kernel_q(&sys, Some(&ker))?.q;
//! let cert = trapping::state_trap_sdp(&sys, &q)?;
//! let y = UncertaintyRegion::ball2(cert.ball.center.clone(), cert.ball.radius);
//! let design = synth::global_synth(&sys, &y, &cert, &Default::default())?;
//! assert!(synth::verify_design(&sys, &design.l, &design.p, &y) > 0.0);
//! let x0 = DVector::from_vec(vec![10., 20., 30.]);
//! let trace = sim::integrate_observer(&sys, &design.l, &x0, &DVector::zeros(3), 10.0, 1e-3)?;
//! assert!(trace.err2.unwrap().last().unwrap() < &1e-6);
//! # Ok(())
//! # }
//! ```

// Checks such as `!(r >= 0.0)` are written that way so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

// Links the system OpenBLAS used by the SDP backend's dense factorizations.
use openblas_src as _;

pub mod cli;
pub mod fixtures;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod serde_util;
pub mod sim;
pub mod synth;
pub mod trapping;

pub use lmi::{SdpProblem, SolveReport, SolveStatus, UncertaintyRegion};
pub use model::{FluidModel, Model, QuadFormRep, QuadSystem, SnBasis};
pub use sim::Trace;
pub use synth::{Alg2State, ObserverDesign};
pub use trapping::{Ball, TrappingCert};

/// Crate-wide error type wrapping the per-module errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Lmi(#[from] lmi::LmiError),
    #[error(transparent)]
    Trap(#[from] trapping::TrapError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}
