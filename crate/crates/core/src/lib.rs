//! Discrete-time quantum walks on a line whose step length is redrawn at
//! every tick.
//!
//! The crate is split into the exact single-realization kernel ([`walk`]),
//! step-length schedules ([`schedule`]), disorder averaging ([`ensemble`]),
//! brute-force reference implementations ([`oracle`]), post-processing of
//! densities and moments ([`analysis`]) and the command-line front end
//! ([`cli`]).

pub mod analysis;
pub mod cli;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod oracle;
pub mod schedule;
pub mod walk;

pub use density::{moments_of, Density, Moments};
pub use ensemble::{run_ensemble, run_single, EnsembleResult, MomentSeries, Quantity, RunConfig};
pub use error::{Result, WalkError};
pub use schedule::{SeedSpec, StepSchedule};
pub use walk::{CoinOperator, InitialSpinor, WalkerState};
