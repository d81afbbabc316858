//! Data-driven graph Fourier sampling of dynamic network signals.
//!
//! A signal matrix `X` (nodes × time steps) of numerical rank `r` is
//! bandlimited to its first `r` frequencies under the basis built by
//! [`gft::build_gft`]; sampling `r` well-chosen nodes
//! ([`sampling::greedy_select`]) then recovers all of `X`
//! ([`sampling::recover`]). [`baselines`] holds the Laplacian and
//! compressed-sensing schemes it is compared against in [`eval`].

pub mod baselines;
pub mod dynsim;
pub mod error;
pub mod eval;
pub mod gft;
pub mod graph;
pub mod linalg;
pub mod sampling;

pub use error::{Error, Result};
