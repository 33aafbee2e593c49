//! Phase retrieval by truncated amplitude flow.
//!
//! Recovers `x` (up to a global phase) from amplitudes `ψ_i = |⟨a_i, x⟩|`:
//! an orthogonality-promoting initializer produces `z₀`, and truncated
//! generalized gradient iterations refine it. Spectral initializers, the
//! untruncated amplitude flow and an intensity-loss (Wirtinger flow)
//! baseline are included for comparison, along with Monte-Carlo drivers.
//!
//! ```
//! use amplitude_flow::{model, rng::TrialSeed, solver};
//!
//! let seed = TrialSeed::single(1);
//! let op = model::gaussian_operator::<f64>(32, 256, seed).unwrap();
//! let x = model::random_signal::<f64>(32, seed).unwrap();
//! let ms = model::generate_measurements(&op, x.view(), 0.0, seed).unwrap();
//! let res = solver::solve(&ms, &op, &solver::SolverConfig::default(), seed).unwrap();
//! assert!(res.converged);
//! ```

pub mod bench;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::{Field, Scalar};
