//! Numerical laboratory for ergodic diffusions and the central limit
//! behaviour of their additive functionals `S_t = int_0^t f(X_s) ds`.
//!
//! The crate is organised by subsystem:
//!
//! * [`models`]: generators, invariant densities and the model zoo.
//! * [`sde`]: Euler–Maruyama ensembles with reproducible per-path streams.
//! * [`grid`] and [`semigroup`]: `P_t f`, Fokker–Planck evolution and the
//!   variance functionals built on them.
//! * [`poisson`]: solutions of `Lg = f` and integrability criteria.
//! * [`rates`]: weak Poincaré / Lyapunov rate calculus.
//! * [`clt_lab`]: CLT, FCLT, uniform integrability and anomalous scaling
//!   experiments.

pub mod clt_lab;
pub mod error;
pub mod grid;
pub mod models;
pub mod poisson;
pub mod rates;
pub mod rng;
pub mod sde;
pub mod semigroup;
pub mod stats;
pub mod tail;

pub use error::{Error, Result};
