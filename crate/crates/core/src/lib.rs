//! Lane-change trajectory planning around a predicted surrounding vehicle.
//!
//! * [`model`]: double-integrator ego dynamics and piecewise-cubic trajectories.
//! * [`predictor`]: mixture-transition Markov prediction of a vehicle's
//!   longitudinal track, fitted to a cubic.
//! * [`planner`]: Pontryagin minimum-principle planner with an interior
//!   point constraint at a free time, located by a Hamiltonian-jump root find.
//! * [`oracle`]: direct-transcription QP used to cross-check the planner.
//! * [`scenario`]: scenario files, presets, clearance checks and exports.

pub mod error;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod predictor;
pub mod scenario;

pub use error::{Error, Result, SweepPoint};
