//! Multi-index double loop Monte Carlo with importance sampling for
//! expectations of observables of McKean–Vlasov SDEs.
//!
//! The building blocks, bottom up:
//!
//! * [`particle_system`] simulates the `P`-particle Euler–Maruyama system
//!   that approximates the law.
//! * [`decoupled`] runs a single path against a frozen law, optionally
//!   under an importance-sampling control, and returns the likelihood.
//! * [`control`] solves the backward equation offline and turns its
//!   solution into a control field.
//! * [`mixed_difference`] builds the coupled first-order mixed
//!   differences and nested Monte Carlo statistics.
//! * [`index_sets`], [`allocation`] and [`rates`] hold the sparse index
//!   sets, the optimal sample allocation and the rate fits.
//! * [`adaptive`] is the adaptive driver plus single- and multilevel
//!   baselines.
//!
//! Everything numerical is generic over the scalar type; the aliases below
//! fix the common choices.

pub mod adaptive;
pub mod allocation;
pub mod control;
pub mod decoupled;
pub mod error;
pub mod index_sets;
pub mod mixed_difference;
pub mod models;
pub mod particle_system;
pub mod randomness;
pub mod rates;
pub mod scalar;

pub use adaptive::{run_adaptive, run_dlmc_single, run_multilevel, AdaptiveConfig, EstimatorReport, PilotConfig};
pub use allocation::{optimal_samples, Allocation};
pub use control::{solve_control, ControlField, GridSpec, TimeScheme};
pub use error::{Error, Result};
pub use index_sets::{build_index_set, compute_weights, complexity_constants, IndexSet, RateSet};
pub use mixed_difference::{estimate_stats, Hierarchy, MixedDiffStats, MultiIndex, Problem, Quantity};
pub use models::{make_kuramoto, ModelSpec, Observable};
pub use randomness::{StreamKey, StreamRole};
pub use scalar::{RateScalar, Real};

pub use num_rational::Rational64;

pub type Model = ModelSpec<f64>;
pub type Model32 = ModelSpec<f32>;
pub type Control = ControlField<f64>;
pub type Control32 = ControlField<f32>;
pub type KuramotoProblem = Problem<f64>;
/// Rates with exact rational arithmetic for the index-set algebra.
pub type ExactRates = RateSet<Rational64>;
pub type Rates = RateSet<f64>;
