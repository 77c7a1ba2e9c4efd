//! Numerical engine for constructive KAM iteration on nearly integrable
//! Hamiltonians with merely continuous, possibly degenerate frequency maps.
//!
//! The crate implements the truncation / homological-solve / Lie-transform /
//! parameter-translation cycle, preserves a prescribed Diophantine frequency
//! through Brouwer-degree-guided root finding, and ships the worked example
//! systems (a degenerate polynomial model, its no-solution counterpart, 1-D
//! direct-computation cases, and a plateau counterexample with discontinuous
//! parameter selection) at desk scale.
//!
//! Structure:
//! - [`series`]: sparse Fourier-Taylor series algebra with the weighted
//!   majorant norm;
//! - [`assumptions`]: finite-K Diophantine margins, Brouwer degree on boxes,
//!   weak-convexity fitting;
//! - [`kam::core`]: one KAM cycle's transformations;
//! - [`kam::driver`]: schedules, hypothesis monitors, the step loop, replay;
//! - [`frequency`]: the parameter grid and degree-guided root solver;
//! - [`models`]: the model zoo and registry;
//! - [`config`]: run configuration and deterministic report emission.
//!
//! The `parallel` feature (default) fans the per-node cycles, lattice scans
//! and large coefficient products out over rayon; without it everything runs
//! sequentially with identical semantics.

pub mod assumptions;
pub mod config;
pub mod error;
pub mod frequency;
pub mod kam;
pub mod models;
pub mod parallel;
pub mod series;

pub use error::{KamError, Result};
pub use series::{Domain, FourierTaylorSeries};
