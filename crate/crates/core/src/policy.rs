//! Coalescing controllers.
//!
//! A controller is asked for a [`WakePlan`] each time the transmit buffer
//! drains, right before the interface goes to sleep. Static controllers
//! always return their configured parameters. Dynamic controllers re-derive
//! the timer or threshold from a running estimate of the arrival and service
//! rates, with no feedback of the achieved delay.

use std::fmt;

use thiserror::Error;

use crate::analytic::{self, AnalyticError, EeeParams};
use crate::simcore::CycleRecord;

/// Utilization cap applied before the baseline-delay estimate.
pub const RHO_CAP: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("timer {v} µs must exceed the sleep transition {ts} µs")]
    TimerTooShort { v: f64, ts: f64 },
    #[error("queue threshold must be at least 1")]
    ZeroThreshold,
    #[error("target delay {0} µs must be positive")]
    NonPositiveTarget(f64),
    #[error("EWMA weight {0} must lie in (0, 1]")]
    BadWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdSolver {
    /// Exact root of the delay cubic.
    Cubic,
    /// Large-threshold linear estimate.
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyConfig {
    /// Wake on the first arrival.
    None,
    StaticTimer {
        v: f64,
    },
    StaticSize {
        qw: u32,
    },
    StaticDual {
        v: f64,
        qw: u32,
    },
    DynamicTimer {
        tau: f64,
    },
    DynamicSize {
        tau: f64,
        solver: ThresholdSolver,
    },
}

impl PolicyConfig {
    pub fn validate(&self, params: &EeeParams) -> Result<(), PolicyError> {
        let timer = |v: f64| {
            if v > params.ts {
                Ok(())
            } else {
                Err(PolicyError::TimerTooShort { v, ts: params.ts })
            }
        };
        let threshold = |qw: u32| {
            if qw >= 1 {
                Ok(())
            } else {
                Err(PolicyError::ZeroThreshold)
            }
        };
        let target = |tau: f64| {
            if tau > 0.0 {
                Ok(())
            } else {
                Err(PolicyError::NonPositiveTarget(tau))
            }
        };
        match *self {
            PolicyConfig::None => Ok(()),
            PolicyConfig::StaticTimer { v } => timer(v),
            PolicyConfig::StaticSize { qw } => threshold(qw),
            PolicyConfig::StaticDual { v, qw } => timer(v).and(threshold(qw)),
            PolicyConfig::DynamicTimer { tau } | PolicyConfig::DynamicSize { tau, .. } => {
                target(tau)
            }
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(
            self,
            PolicyConfig::DynamicTimer { .. } | PolicyConfig::DynamicSize { .. }
        )
    }

    pub fn target(&self) -> Option<f64> {
        match *self {
            PolicyConfig::DynamicTimer { tau } | PolicyConfig::DynamicSize { tau, .. } => Some(tau),
            _ => None,
        }
    }

    /// Same policy family retargeted at `tau`; static policies are unchanged.
    pub fn with_target(&self, tau: f64) -> Self {
        match *self {
            PolicyConfig::DynamicTimer { .. } => PolicyConfig::DynamicTimer { tau },
            PolicyConfig::DynamicSize { solver, .. } => PolicyConfig::DynamicSize { tau, solver },
            other => other,
        }
    }
}

/// Short identifier used in file names and config files.
impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PolicyConfig::None => write!(f, "none"),
            PolicyConfig::StaticTimer { v } => write!(f, "static_timer_{v}"),
            PolicyConfig::StaticSize { qw } => write!(f, "static_size_{qw}"),
            PolicyConfig::StaticDual { v, qw } => write!(f, "static_dual_{v}_{qw}"),
            PolicyConfig::DynamicTimer { .. } => write!(f, "dynamic_timer"),
            PolicyConfig::DynamicSize {
                solver: ThresholdSolver::Approx,
                ..
            } => write!(f, "dynamic_size"),
            PolicyConfig::DynamicSize {
                solver: ThresholdSolver::Cubic,
                ..
            } => write!(f, "dynamic_size_cubic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficEstimate {
    /// frames/µs
    pub lambda_hat: f64,
    /// frames/µs
    pub mu_hat: f64,
    pub valid: bool,
    /// Seeded from a single observation.
    pub low_confidence: bool,
    /// Smoothed per-cycle totals behind the rates, used by
    /// [`Smoothing::Totals`].
    pub totals: CycleTotals,
}

/// Moving averages of what one cycle carries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CycleTotals {
    pub frames: f64,
    pub bytes: f64,
    /// µs
    pub duration: f64,
}

impl TrafficEstimate {
    pub const INVALID: TrafficEstimate = TrafficEstimate {
        lambda_hat: 0.0,
        mu_hat: 0.0,
        valid: false,
        low_confidence: true,
        totals: CycleTotals {
            frames: 0.0,
            bytes: 0.0,
            duration: 0.0,
        },
    };

    pub fn new(lambda_hat: f64, mu_hat: f64) -> Self {
        let valid =
            lambda_hat > 0.0 && mu_hat > 0.0 && lambda_hat.is_finite() && mu_hat.is_finite();
        Self {
            lambda_hat,
            mu_hat,
            valid,
            low_confidence: false,
            totals: CycleTotals::default(),
        }
    }

    fn from_totals(totals: CycleTotals, params: &EeeParams) -> Self {
        Self {
            totals,
            ..Self::new(
                totals.frames / totals.duration,
                params.service_rate(totals.bytes / totals.frames),
            )
        }
    }

    /// Estimated utilization, capped at [`RHO_CAP`].
    pub fn rho_hat(&self) -> f64 {
        (self.lambda_hat / self.mu_hat).min(RHO_CAP)
    }
}

impl Default for TrafficEstimate {
    fn default() -> Self {
        Self::INVALID
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WakePlan {
    /// Wake `v` µs after the first arrival of the cycle.
    Timer(f64),
    /// Wake once this many frames are queued.
    Threshold(u32),
    /// Whichever of the two fires first.
    Dual { timer: f64, threshold: u32 },
    /// Skip sleeping for this cycle.
    Suspend,
}

impl WakePlan {
    pub fn timer(&self) -> Option<f64> {
        match *self {
            WakePlan::Timer(v) | WakePlan::Dual { timer: v, .. } => Some(v),
            _ => None,
        }
    }

    pub fn threshold(&self) -> Option<u32> {
        match *self {
            WakePlan::Threshold(q) | WakePlan::Dual { threshold: q, .. } => Some(q),
            _ => None,
        }
    }
}

/// Decides the wake condition for the cycle that starts now.
pub fn plan_cycle(
    config: &PolicyConfig,
    estimate: &TrafficEstimate,
    params: &EeeParams,
) -> WakePlan {
    match *config {
        PolicyConfig::None => WakePlan::Threshold(1),
        PolicyConfig::StaticTimer { v } => WakePlan::Timer(v),
        PolicyConfig::StaticSize { qw } => WakePlan::Threshold(qw),
        PolicyConfig::StaticDual { v, qw } => WakePlan::Dual {
            timer: v,
            threshold: qw,
        },
        PolicyConfig::DynamicTimer { tau } => {
            dynamic_timer(tau, estimate, params).map_or(WakePlan::Suspend, WakePlan::Timer)
        }
        PolicyConfig::DynamicSize { tau, solver } => {
            dynamic_threshold(tau, solver, estimate, params)
                .map_or(WakePlan::Suspend, WakePlan::Threshold)
        }
    }
}

fn baseline(estimate: &TrafficEstimate) -> Result<f64, AnalyticError> {
    if !estimate.valid {
        return Err(AnalyticError::Infeasible);
    }
    analytic::w0_poisson_deterministic(estimate.lambda_hat, estimate.rho_hat())
}

fn dynamic_timer(
    tau: f64,
    estimate: &TrafficEstimate,
    params: &EeeParams,
) -> Result<f64, AnalyticError> {
    let w0 = baseline(estimate)?;
    analytic::optimal_timer(tau, estimate.lambda_hat, params.tw, w0, params.ts)
}

fn dynamic_threshold(
    tau: f64,
    solver: ThresholdSolver,
    estimate: &TrafficEstimate,
    params: &EeeParams,
) -> Result<u32, AnalyticError> {
    let w0 = baseline(estimate)?;
    let q = match solver {
        ThresholdSolver::Approx => {
            analytic::optimal_threshold_approx(tau, estimate.lambda_hat, params.tw, w0)?
        }
        ThresholdSolver::Cubic => {
            analytic::optimal_threshold_cubic(tau, estimate.lambda_hat, params.tw, w0)?
        }
    };
    Ok(q.round().clamp(1.0, f64::from(u32::MAX)) as u32)
}

/// What the moving average is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Smoothing {
    /// Average the per-cycle rates.
    Rates,
    /// Average frame, byte and duration totals, then divide.
    Totals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Weight of the newest cycle in the moving average.
    pub weight: f64,
    /// Cycles with fewer frames leave a valid estimate untouched.
    pub min_frames: u64,
    pub smoothing: Smoothing,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            weight: 0.1,
            min_frames: 2,
            smoothing: Smoothing::Totals,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.weight > 0.0 && self.weight <= 1.0 {
            Ok(())
        } else {
            Err(PolicyError::BadWeight(self.weight))
        }
    }
}

/// Folds one completed cycle into the rate estimate.
pub fn update_estimate(
    previous: &TrafficEstimate,
    cycle: &CycleRecord,
    params: &EeeParams,
    config: &EstimatorConfig,
) -> TrafficEstimate {
    if cycle.frames_total == 0 || !(cycle.cycle_duration > 0.0) {
        return *previous;
    }
    let observed = CycleTotals {
        frames: cycle.frames_total as f64,
        bytes: cycle.bytes_total as f64,
        duration: cycle.cycle_duration,
    };
    let raw = TrafficEstimate::from_totals(observed, params);
    if !raw.valid {
        return *previous;
    }
    let enough = cycle.frames_total >= config.min_frames;
    match (previous.valid && !previous.low_confidence, enough) {
        (true, false) => *previous,
        (true, true) => {
            let w = config.weight;
            let blend = |new: f64, old: f64| w * new + (1.0 - w) * old;
            match config.smoothing {
                Smoothing::Rates => TrafficEstimate::new(
                    blend(raw.lambda_hat, previous.lambda_hat),
                    blend(raw.mu_hat, previous.mu_hat),
                ),
                Smoothing::Totals => {
                    let old = previous.totals;
                    TrafficEstimate::from_totals(
                        CycleTotals {
                            frames: blend(observed.frames, old.frames),
                            bytes: blend(observed.bytes, old.bytes),
                            duration: blend(observed.duration, old.duration),
                        },
                        params,
                    )
                }
            }
        }
        // Cold start: take whatever the cycle shows.
        (false, _) => TrafficEstimate {
            low_confidence: !enough,
            ..raw
        },
    }
}

/// A policy bound to its running estimate; one per simulated interface.
#[derive(Debug, Clone)]
pub struct Controller {
    config: PolicyConfig,
    estimator: EstimatorConfig,
    estimate: TrafficEstimate,
}

impl Controller {
    pub fn new(config: PolicyConfig, estimator: EstimatorConfig) -> Self {
        Self {
            config,
            estimator,
            estimate: TrafficEstimate::INVALID,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn estimate(&self) -> &TrafficEstimate {
        &self.estimate
    }

    pub fn plan(&self, params: &EeeParams) -> WakePlan {
        plan_cycle(&self.config, &self.estimate, params)
    }

    pub fn observe(&mut self, cycle: &CycleRecord, params: &EeeParams) {
        if self.config.is_dynamic() {
            self.estimate = update_estimate(&self.estimate, cycle, params, &self.estimator);
        }
    }
}
