//! Closed-form energy and delay model for EEE coalescing.
//!
//! Times are in microseconds and rates in frames per microsecond. Bit rates
//! only appear at the boundary ([`EeeParams::line_rate`] and the helpers that
//! convert offered load into [`TrafficStats`]).
//!
//! The delay expressions assume Poisson arrivals; the baseline term
//! [`w0_exact`] and the bound ([`toff_upper_bound`]) accept general
//! interarrival and service variances.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("utilization {rho} is not below 1")]
    Unstable { rho: f64 },
    /// The delay target cannot be met with any admissible coalescing parameter.
    #[error("delay target is infeasible under the given traffic")]
    Infeasible,
}

pub type Result<T> = std::result::Result<T, AnalyticError>;

fn invalid<T>(name: &'static str, value: f64, reason: &'static str) -> Result<T> {
    Err(AnalyticError::InvalidParameter {
        name,
        value,
        reason,
    })
}

/// Physical constants of an EEE interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeeParams {
    /// Power drawn in low power idle relative to active.
    pub phi_off: f64,
    /// Sleep transition, µs.
    pub ts: f64,
    /// Wake transition, µs.
    pub tw: f64,
    /// Nominal line rate, bits/s.
    pub line_rate: f64,
}

impl Default for EeeParams {
    /// 10GBASE-T figures.
    fn default() -> Self {
        Self {
            phi_off: 0.1,
            ts: 2.88,
            tw: 4.48,
            line_rate: 10e9,
        }
    }
}

impl EeeParams {
    pub fn new(phi_off: f64, ts: f64, tw: f64, line_rate: f64) -> Result<Self> {
        let p = Self {
            phi_off,
            ts,
            tw,
            line_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phi_off) {
            return invalid("phi_off", self.phi_off, "must lie in [0, 1)");
        }
        if !(self.ts > 0.0) {
            return invalid("ts", self.ts, "must be positive");
        }
        if !(self.tw > 0.0) {
            return invalid("tw", self.tw, "must be positive");
        }
        if !(self.line_rate > 0.0 && self.line_rate.is_finite()) {
            return invalid("line_rate", self.line_rate, "must be positive");
        }
        Ok(())
    }

    /// Transmission time of a frame, µs.
    pub fn service_time(&self, size_bytes: f64) -> f64 {
        8.0 * size_bytes / self.line_rate * 1e6
    }

    /// Frames per µs the line can carry for a given mean frame size.
    pub fn service_rate(&self, mean_size_bytes: f64) -> f64 {
        1.0 / self.service_time(mean_size_bytes)
    }
}

/// First and second moments of the arrival and service processes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficStats {
    /// Arrival rate, frames/µs.
    pub lambda: f64,
    /// Service rate, frames/µs.
    pub mu: f64,
    /// Interarrival variance, µs².
    pub var_interarrival: f64,
    /// Service time variance, µs².
    pub var_service: f64,
}

impl TrafficStats {
    pub fn new(lambda: f64, mu: f64, var_interarrival: f64, var_service: f64) -> Result<Self> {
        let s = Self {
            lambda,
            mu,
            var_interarrival,
            var_service,
        };
        s.validate()?;
        Ok(s)
    }

    /// Poisson arrivals with deterministic service.
    pub fn poisson_deterministic(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(lambda, mu, 1.0 / (lambda * lambda), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid("lambda", self.lambda, "must be positive");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return invalid("mu", self.mu, "must be positive");
        }
        if !(self.var_interarrival >= 0.0) {
            return invalid(
                "var_interarrival",
                self.var_interarrival,
                "must be non-negative",
            );
        }
        if !(self.var_service >= 0.0) {
            return invalid("var_service", self.var_service, "must be non-negative");
        }
        let rho = self.rho();
        if rho >= 1.0 {
            return Err(AnalyticError::Unstable { rho });
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }
}

/// Mean sleep length, mean queuing delay and energy ratio of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoalescingOutcome {
    pub t_off_mean: f64,
    pub mean_delay: f64,
    pub energy_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    /// Largest achievable mean LPI residency per cycle, µs.
    pub t_off_upper: f64,
    /// Smallest achievable energy ratio.
    pub energy_lower: f64,
}

/// Policy-independent baseline delay of a GI/G/1 queue with sleeping.
pub fn w0_exact(stats: &TrafficStats) -> Result<f64> {
    stats.validate()?;
    let TrafficStats {
        lambda,
        var_interarrival,
        var_service,
        ..
    } = *stats;
    let rho = stats.rho();
    let idle = 1.0 - rho;
    Ok((lambda * lambda * (var_interarrival + var_service) + idle * idle) / (2.0 * lambda * idle))
}

/// Baseline delay assuming Poisson arrivals and fixed frame sizes; only
/// needs the arrival rate and the utilization.
pub fn w0_poisson_deterministic(lambda: f64, rho: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid("lambda", lambda, "must be positive");
    }
    if !(rho > 0.0) {
        return invalid("rho", rho, "must be positive");
    }
    if rho >= 1.0 {
        return Err(AnalyticError::Unstable { rho });
    }
    let idle = 1.0 - rho;
    Ok((1.0 + idle * idle) / (2.0 * lambda * idle))
}

/// Energy drawn relative to an interface that never sleeps.
pub fn energy_ratio(params: &EeeParams, rho: f64, t_off_mean: f64) -> f64 {
    debug_assert!(t_off_mean >= 0.0);
    debug_assert!((0.0..1.0).contains(&rho));
    let sleeping = t_off_mean / (t_off_mean + params.ts + params.tw);
    1.0 - (1.0 - params.phi_off) * (1.0 - rho) * sleeping
}

/// Mean LPI residency per cycle with a wake timer of `v` µs started on the
/// first arrival.
pub fn toff_time_based(lambda: f64, v: f64, ts: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return invalid("lambda", lambda, "must be positive");
    }
    if !(v > ts) {
        return invalid("v", v, "timer must exceed the sleep transition");
    }
    Ok(1.0 / lambda + v - ts)
}

/// Mean queuing delay with a wake timer of `v` µs.
pub fn delay_time_based(lambda: f64, v: f64, tw: f64, w0: f64) -> f64 {
    let setup = lambda * (v + tw);
    w0 + (setup * setup - 2.0) / (2.0 * lambda * (1.0 + setup))
}

/// Regularized upper incomplete gamma `Γ(q, x) / Γ(q)` for integer `q ≥ 1`,
/// i.e. the probability that a Poisson(x) variable is below `q`.
pub fn regularized_upper_gamma(q: u32, x: f64) -> Result<f64> {
    if q == 0 {
        return invalid("q", 0.0, "must be at least 1");
    }
    if !(x >= 0.0) {
        return invalid("x", x, "must be non-negative");
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    // Sum terms x^k/k! e^-x in log space when e^-x would underflow.
    if x < 700.0 {
        let mut term = (-x).exp();
        let mut sum = term;
        for k in 1..q {
            term *= x / f64::from(k);
            sum += term;
        }
        Ok(sum.min(1.0))
    } else {
        let ln_x = x.ln();
        let mut ln_term = -x;
        let mut ln_terms = Vec::with_capacity(q as usize);
        ln_terms.push(ln_term);
        for k in 1..q {
            ln_term += ln_x - f64::from(k).ln();
            ln_terms.push(ln_term);
        }
        let peak = ln_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: f64 = ln_terms.iter().map(|t| (t - peak).exp()).sum();
        Ok((peak + scaled.ln()).exp().min(1.0))
    }
}

/// `(q-1)!` as a float; overflows to infinity above q = 171.
fn factorial_of_pred(q: u32) -> f64 {
    (1..q).map(f64::from).product()
}

/// Upper incomplete gamma `Γ(q, x)` for integer `q ≥ 1`, via its finite series.
pub fn upper_incomplete_gamma(q: u32, x: f64) -> Result<f64> {
    let reg = regularized_upper_gamma(q, x)?;
    Ok(factorial_of_pred(q) * reg)
}

/// Mean LPI residency per cycle when waking on the `qw`-th queued frame.
pub fn toff_size_based(lambda: f64, qw: u32, ts: f64) -> Result<f64> {
    if qw < 1 {
        return invalid("qw", f64::from(qw), "must be at least 1");
    }
    if !(lambda > 0.0) {
        return invalid("lambda", lambda, "must be positive");
    }
    if !(ts >= 0.0) {
        return invalid("ts", ts, "must be non-negative");
    }
    // Γ(q+1,x)/Γ(q) = q·Q(q+1,x) and Γ(q,x)/Γ(q) = Q(q,x).
    let x = lambda * ts;
    let q = f64::from(qw);
    let upper_next = regularized_upper_gamma(qw + 1, x)?;
    let upper = regularized_upper_gamma(qw, x)?;
    Ok(((q * upper_next - x * upper) / lambda).max(0.0))
}

/// Size-based delay evaluated at a real threshold; the integer form is
/// [`delay_size_based`].
pub fn delay_size_based_real(lambda: f64, qw: f64, tw: f64, w0: f64) -> f64 {
    let wake = qw + lambda * tw;
    w0 - (qw - 1.0) / (lambda * qw) + ((wake - 1.0).powi(2) + qw - 3.0) / (2.0 * lambda * wake)
}

/// Mean queuing delay when waking on the `qw`-th queued frame.
pub fn delay_size_based(lambda: f64, qw: u32, tw: f64, w0: f64) -> Result<f64> {
    if qw < 1 {
        return invalid("qw", f64::from(qw), "must be at least 1");
    }
    Ok(delay_size_based_real(lambda, f64::from(qw), tw, w0))
}

/// Large-threshold simplification of [`delay_size_based`].
pub fn delay_size_based_approx(lambda: f64, qw: f64, tw: f64, w0: f64) -> f64 {
    w0 + (qw + lambda * tw - 3.0) / (2.0 * lambda)
}

/// Timer length that makes the mean queuing delay equal `tau`.
///
/// Returns [`AnalyticError::Infeasible`] when the timer would not exceed the
/// sleep transition `ts`, since such a timer never reaches LPI.
pub fn optimal_timer(tau: f64, lambda: f64, tw: f64, w0: f64, ts: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return invalid("tau", tau, "must be positive");
    }
    if !(lambda > 0.0) {
        return invalid("lambda", lambda, "must be positive");
    }
    let slack = tau - w0;
    let v = slack - tw + (1.0 + (1.0 + lambda * slack).powi(2)).sqrt() / lambda;
    if !(v > ts) {
        return Err(AnalyticError::Infeasible);
    }
    Ok(v)
}

/// Coefficients `[c2, c1, c0]` of the monic cubic whose roots are the
/// thresholds meeting the delay target.
pub fn threshold_cubic_coefficients(tau: f64, lambda: f64, tw: f64, w0: f64) -> [f64; 3] {
    let slack = tau - w0;
    let x = lambda * tw;
    [
        2.0 * x - 2.0 * lambda * slack - 3.0,
        x * x - 2.0 * lambda * x * slack - 4.0 * x,
        2.0 * x,
    ]
}

const CUBIC_TOLERANCE: f64 = 1e-9;
const CUBIC_SCAN_CELLS: usize = 256;

/// Threshold meeting the delay target, from the exact cubic.
///
/// Roots are bracketed on `[1, 2λτ + 10]` and refined by bisection; when more
/// than one root lies in range the one whose delay is nearest `tau` wins.
pub fn optimal_threshold_cubic(tau: f64, lambda: f64, tw: f64, w0: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return invalid("tau", tau, "must be positive");
    }
    if !(lambda > 0.0) {
        return invalid("lambda", lambda, "must be positive");
    }
    let [c2, c1, c0] = threshold_cubic_coefficients(tau, lambda, tw, w0);
    let cubic = |q: f64| ((q + c2) * q + c1) * q + c0;

    let lo = 1.0;
    let hi = 2.0 * lambda * tau + 10.0;
    let step = (hi - lo) / CUBIC_SCAN_CELLS as f64;
    let mut roots = Vec::new();
    let mut a = lo;
    let mut fa = cubic(a);
    for i in 1..=CUBIC_SCAN_CELLS {
        let b = if i == CUBIC_SCAN_CELLS {
            hi
        } else {
            lo + step * i as f64
        };
        let fb = cubic(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            roots.push(bisect(&cubic, a, b, fa));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        roots.push(a);
    }

    roots
        .into_iter()
        .map(|q| (q, (delay_size_based_real(lambda, q, tw, w0) - tau).abs()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(q, _)| q)
        .ok_or(AnalyticError::Infeasible)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    while b - a > CUBIC_TOLERANCE {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Large-threshold estimate of the optimal threshold.
pub fn optimal_threshold_approx(tau: f64, lambda: f64, tw: f64, w0: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return invalid("tau", tau, "must be positive");
    }
    let q = 2.0 * lambda * (tau - w0 - tw / 2.0) + 3.0;
    if !(q >= 1.0) {
        return Err(AnalyticError::Infeasible);
    }
    Ok(q)
}

/// Upper bound on the mean LPI residency of any coalescer whose mean delay
/// is `tau`.
pub fn toff_upper_bound(tau: f64, params: &EeeParams, stats: &TrafficStats) -> Result<f64> {
    let w0 = w0_exact(stats)?;
    let lambda = stats.lambda;
    let spare = (1.0 - stats.rho()) / lambda;
    let shift = tau - w0 + lambda * stats.var_interarrival + spare;
    let root =
        (shift * shift + 2.0 * (stats.var_interarrival + stats.var_service) + spare * spare).sqrt();
    let bound = shift - params.ts - params.tw + root;
    if !(bound > 0.0) {
        return Err(AnalyticError::Infeasible);
    }
    Ok(bound)
}

/// Lowest achievable energy ratio at mean delay `tau`; 1 when no sleep is
/// possible.
pub fn energy_lower_bound(tau: f64, params: &EeeParams, stats: &TrafficStats) -> Result<f64> {
    Ok(bound(tau, params, stats)?.energy_lower)
}

pub fn bound(tau: f64, params: &EeeParams, stats: &TrafficStats) -> Result<BoundResult> {
    match toff_upper_bound(tau, params, stats) {
        Ok(t_off_upper) => Ok(BoundResult {
            t_off_upper,
            energy_lower: energy_ratio(params, stats.rho(), t_off_upper),
        }),
        Err(AnalyticError::Infeasible) => Ok(BoundResult {
            t_off_upper: 0.0,
            energy_lower: 1.0,
        }),
        Err(e) => Err(e),
    }
}

/// Time-based coalescing with timer `v` under Poisson traffic.
pub fn time_based_outcome(
    params: &EeeParams,
    stats: &TrafficStats,
    v: f64,
) -> Result<CoalescingOutcome> {
    let w0 = w0_exact(stats)?;
    let t_off_mean = toff_time_based(stats.lambda, v, params.ts)?;
    Ok(CoalescingOutcome {
        t_off_mean,
        mean_delay: delay_time_based(stats.lambda, v, params.tw, w0),
        energy_ratio: energy_ratio(params, stats.rho(), t_off_mean),
    })
}

/// Size-based coalescing with threshold `qw` under Poisson traffic.
pub fn size_based_outcome(
    params: &EeeParams,
    stats: &TrafficStats,
    qw: u32,
) -> Result<CoalescingOutcome> {
    let w0 = w0_exact(stats)?;
    let t_off_mean = toff_size_based(stats.lambda, qw, params.ts)?;
    Ok(CoalescingOutcome {
        t_off_mean,
        mean_delay: delay_size_based(stats.lambda, qw, params.tw, w0)?,
        energy_ratio: energy_ratio(params, stats.rho(), t_off_mean),
    })
}
