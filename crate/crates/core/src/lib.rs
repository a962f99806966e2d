//! Energy Efficient Ethernet frame coalescing laboratory.
//!
//! - [`analytic`]: closed-form sleep length, delay and energy of time-based
//!   and size-based coalescing, the optimal controller parameters for a delay
//!   target, and the lower bound on energy at that target.
//! - [`policy`]: static and open-loop dynamic coalescing controllers.
//! - [`traffic`]: Poisson and Pareto arrivals, fixed and bimodal sizes, CSV
//!   trace replay.
//! - [`simcore`]: discrete-event simulator of one interface.
//! - [`sweep`]: runs independent simulation points, in parallel when the
//!   `parallel` feature is on.
//! - [`experiment`]: batch experiments producing CSV tables.

// `!(x > 0.0)` style checks reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod experiment;
pub mod policy;
pub mod simcore;
pub mod sweep;
pub mod traffic;

pub use analytic::{BoundResult, CoalescingOutcome, EeeParams, TrafficStats};
pub use policy::{PolicyConfig, ThresholdSolver, TrafficEstimate, WakePlan};
pub use simcore::{CycleRecord, Horizon, SimConfig, SimReport};
pub use traffic::{Frame, TrafficSpec};
