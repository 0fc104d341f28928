//! Battery cell simulation, active-injection signal tools, and the
//! sequential SoC/SoH estimation pipeline.
//!
//! The library is organised around the experiment flow:
//! [`cell`] simulates a first-order equivalent-circuit cell, [`profile`]
//! builds injection and drive-cycle current profiles, [`signal`] holds the
//! high-pass filters and the voltage component breakdown, [`estimator`]
//! is the generic EKF/dual-EKF machinery, and [`pipeline`] wires the three
//! sequential steps (plus the concurrent baseline) together. [`io`] moves
//! everything through CSV.

pub mod cell;
pub mod error;
pub mod estimator;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod profile;
pub mod signal;

pub use cell::{BatteryState, CellSpec, EcmParams, OcvCurve, SimRecord, SimTrace};
pub use error::{CoreError, Result};
pub use estimator::{GaussianEstimate, ModelCallbacks, NoiseConfig};
pub use pipeline::{
    run_concurrent_baseline, run_sequential, InitialGuesses, SequentialPlan, SequentialResult,
    StepPlan, Tuning,
};
pub use profile::CurrentProfile;
pub use signal::{ComponentBreakdown, HighPassFilter};
