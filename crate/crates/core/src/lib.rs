//! Multi-round test-time thinking: re-prompt a reasoning model with its own
//! previous answer, then score, analyse and harvest the rounds.
//!
//! The numeric core is generic over [`scalar::Scalar`]; reports use `f64`
//! and the exact checks use [`num_rational::BigRational`]. The aliases below
//! fix the scalar for the common cases.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod domain;
pub mod error;
pub mod extraction;
pub mod metrics;
pub mod orchestrator;
pub mod prompting;
pub mod report;
pub mod scalar;
pub mod sft;
pub mod simulator;
pub mod store;
pub mod verification;

pub use num_rational::BigRational;

pub use domain::{AnswerKind, Benchmark, Chain, MockModelSpec, RoundResponse, SamplingParams, TaskSpec, TrajectoryLabel, Verdict};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Percentages and rates as reported.
pub type Percent = f64;
/// Exact counterpart of [`Percent`].
pub type ExactPercent = BigRational;
pub type Markov = simulator::MarkovModel<f64>;
pub type ExactMarkov = simulator::MarkovModel<BigRational>;
pub type Lengths = analysis::LengthStats<f64>;
pub type ExactLengths = analysis::LengthStats<BigRational>;
pub type Fit = simulator::TransitionFit<f64>;
