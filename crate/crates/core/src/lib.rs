//! Entropy production of stationary finite-order Markov processes, estimated
//! from hitting, return and waiting times of cylinder words.
//!
//! The crate is `no_std` (it needs `alloc`). It contains:
//!
//! * [`model`]: strictly positive order-`r` Markov chains over a finite
//!   alphabet, with exact cylinder probabilities, time reversal and seeded
//!   simulation.
//! * [`matching`]: streaming two-pattern search for hitting, return and
//!   waiting times, word periods and matching lengths.
//! * [`estimators`]: the hitting-time, waiting-time and matching-length
//!   estimators plus the irreversibility tests built on them.
//! * [`oracle`]: exact spectral quantities (mean entropy production,
//!   scaled-cumulant generating function, rate function, asymptotic variance).
//! * [`sampler`]: exact sampling of hitting-time pairs without scanning,
//!   for word lengths whose hitting times are far beyond any scan budget.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod automaton;
pub mod error;
pub mod estimators;
mod linalg;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use estimators::{Bound, Decision, EstimateReport, EstimatorKind, TestMethod, TestReport};
pub use matching::{Outcome, PeriodClass, TimeKind, TimeRecord};
pub use model::{Alphabet, MarkovModel, Trajectory, Word};
