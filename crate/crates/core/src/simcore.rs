//! Discrete-event simulation of one EEE transmit direction.
//!
//! The interface cycles Active → GoingToSleep → Lpi → Waking → Active. The
//! sleep transition cannot be interrupted; a wake condition met during it
//! takes effect when it completes. Frames are served FIFO, one at a time,
//! only while Active. The recorded delay of a frame is the wait from arrival
//! to the start of its transmission.
//!
//! A coalescing cycle runs from one buffer-empty instant to the next. The
//! controller plans each cycle at its start and observes it at its end.

use std::collections::VecDeque;

use thiserror::Error;

use crate::analytic::EeeParams;
use crate::policy::{Controller, EstimatorConfig, PolicyConfig, PolicyError, WakePlan};
use crate::traffic::{Frame, FrameStream, TrafficError, TrafficSpec};

pub const DEFAULT_WARMUP_CYCLES: u64 = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon contains no frames")]
    EmptyHorizon,
    #[error("run ended after {cycles} cycles, before the {warmup}-cycle warm-up completed")]
    HorizonTooShort { cycles: u64, warmup: u64 },
    #[error("no delay samples recorded")]
    NoSamples,
    #[error("bin width {0} must be positive")]
    BadBinWidth(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Model(#[from] crate::analytic::AnalyticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterfaceState {
    Active,
    GoingToSleep,
    Lpi,
    Waking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Stop generating after this many arrivals and drain the queue.
    Frames(u64),
    /// Stop the clock at this instant, µs.
    Time(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: EeeParams,
    pub policy: PolicyConfig,
    pub estimator: EstimatorConfig,
    pub horizon: Horizon,
    pub seed: u64,
    pub warmup_cycles: u64,
    /// Keep every measured delay (needed for CDFs).
    pub keep_delays: bool,
    /// Keep every measured cycle record.
    pub keep_cycles: bool,
}

impl SimConfig {
    pub fn new(params: EeeParams, policy: PolicyConfig, horizon: Horizon, seed: u64) -> Self {
        Self {
            params,
            policy,
            estimator: EstimatorConfig::default(),
            horizon,
            seed,
            warmup_cycles: DEFAULT_WARMUP_CYCLES,
            keep_delays: false,
            keep_cycles: false,
        }
    }
}

/// Observations of one coalescing cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub index: u64,
    /// Buffer-empty instant that opened the cycle, µs.
    pub sleep_start: f64,
    /// Empty period until the first arrival, µs.
    pub t_e: f64,
    /// Queuing delay of the first frame, µs.
    pub w_f: f64,
    /// LPI residency, µs.
    pub t_off: f64,
    /// Arrivals before transmission resumed.
    pub frames_while_asleep: u64,
    pub frames_total: u64,
    pub bytes_total: u64,
    pub cycle_duration: f64,
    pub plan: WakePlan,
}

impl Default for CycleRecord {
    fn default() -> Self {
        Self {
            index: 0,
            sleep_start: 0.0,
            t_e: 0.0,
            w_f: 0.0,
            t_off: 0.0,
            frames_while_asleep: 0,
            frames_total: 0,
            bytes_total: 0,
            cycle_duration: 0.0,
            plan: WakePlan::Suspend,
        }
    }
}

impl CycleRecord {
    pub fn planned_v(&self) -> Option<f64> {
        self.plan.timer()
    }

    pub fn planned_qw(&self) -> Option<u32> {
        self.plan.threshold()
    }

    pub fn suspended(&self) -> bool {
        self.plan == WakePlan::Suspend
    }
}

/// Time spent in each state over the measured window, µs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residency {
    pub active: f64,
    pub going_to_sleep: f64,
    pub lpi: f64,
    pub waking: f64,
}

impl Residency {
    pub fn total(&self) -> f64 {
        self.active + self.going_to_sleep + self.lpi + self.waking
    }

    fn add(&mut self, state: InterfaceState, dt: f64) {
        match state {
            InterfaceState::Active => self.active += dt,
            InterfaceState::GoingToSleep => self.going_to_sleep += dt,
            InterfaceState::Lpi => self.lpi += dt,
            InterfaceState::Waking => self.waking += dt,
        }
    }

    /// Energy relative to an always-active interface; transitions cost as
    /// much as being active.
    pub fn energy_ratio(&self, phi_off: f64) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 1.0;
        }
        (total - self.lpi * (1.0 - phi_off)) / total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub seed: u64,
    pub measured_phi: f64,
    pub mean_delay: f64,
    pub max_delay: f64,
    /// Mean LPI residency over cycles that slept.
    pub t_off_mean: f64,
    pub mean_planned_v: Option<f64>,
    pub mean_planned_qw: Option<f64>,
    pub suspend_fraction: f64,
    /// Measured (post warm-up) cycles.
    pub cycles: u64,
    /// Measured frames that began transmission.
    pub frames: u64,
    pub residency: Residency,
    /// Length of the measured window, µs.
    pub elapsed: f64,
    /// Offered load at or above the line rate.
    pub overload: bool,
    pub arrivals: u64,
    pub departures: u64,
    /// Frames queued or in service when the run stopped.
    pub backlog: u64,
    pub delay_samples: Vec<f64>,
    pub cycle_records: Vec<CycleRecord>,
}

impl SimReport {
    /// Fraction of measured delays strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> Option<f64> {
        if self.delay_samples.is_empty() {
            return None;
        }
        let above = self
            .delay_samples
            .iter()
            .filter(|&&d| d > threshold)
            .count();
        Some(above as f64 / self.delay_samples.len() as f64)
    }
}

/// Empirical delay CDF evaluated at multiples of `bin_width`, up to the first
/// edge at or above the largest sample.
pub fn delay_cdf(report: &SimReport, bin_width: f64) -> Result<Vec<(f64, f64)>, SimError> {
    if !(bin_width > 0.0) {
        return Err(SimError::BadBinWidth(bin_width));
    }
    if report.delay_samples.is_empty() {
        return Err(SimError::NoSamples);
    }
    let mut sorted = report.delay_samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let max = sorted[n - 1];
    let bins = (max / bin_width).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(bins + 1);
    let mut below = 0;
    for k in 0..=bins {
        let edge = k as f64 * bin_width;
        while below < n && sorted[below] <= edge {
            below += 1;
        }
        out.push((edge, below as f64 / n as f64));
    }
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // Tie order at equal times.
    ServiceEnd,
    TransitionEnd,
    TimerExpiry,
    Arrival,
}

struct Simulation<'a> {
    params: &'a EeeParams,
    controller: Controller,
    stream: FrameStream,
    arrivals_left: u64,
    stop_at: f64,
    warmup: u64,
    keep_delays: bool,
    keep_cycles: bool,

    now: f64,
    state: InterfaceState,
    state_until: f64,
    timer_at: f64,
    wake_pending: bool,
    lpi_since: f64,
    queue: VecDeque<Frame>,
    serving: Option<f64>,
    next_arrival: Option<Frame>,

    plan: WakePlan,
    cycle: CycleRecord,
    first_served: bool,
    cycles_started: u64,
    measure_from: Option<f64>,

    residency: Residency,
    arrivals: u64,
    departures: u64,
    delay_sum: f64,
    delay_max: f64,
    measured_frames: u64,
    delays: Vec<f64>,
    records: Vec<CycleRecord>,
    measured_cycles: u64,
    suspended_cycles: u64,
    sleeping_cycles: u64,
    t_off_sum: f64,
    v_sum: f64,
    v_count: u64,
    qw_sum: f64,
    qw_count: u64,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a SimConfig, stream: FrameStream) -> Self {
        let (arrivals_left, stop_at) = match config.horizon {
            Horizon::Frames(n) => (n, f64::INFINITY),
            Horizon::Time(t) => (u64::MAX, t),
        };
        Self {
            params: &config.params,
            controller: Controller::new(config.policy, config.estimator),
            stream,
            arrivals_left,
            stop_at,
            warmup: config.warmup_cycles,
            keep_delays: config.keep_delays,
            keep_cycles: config.keep_cycles,
            now: 0.0,
            state: InterfaceState::Active,
            state_until: f64::INFINITY,
            timer_at: f64::INFINITY,
            wake_pending: false,
            lpi_since: 0.0,
            queue: VecDeque::new(),
            serving: None,
            next_arrival: None,
            plan: WakePlan::Suspend,
            cycle: CycleRecord::default(),
            first_served: false,
            cycles_started: 0,
            measure_from: None,
            residency: Residency::default(),
            arrivals: 0,
            departures: 0,
            delay_sum: 0.0,
            delay_max: 0.0,
            measured_frames: 0,
            delays: Vec::new(),
            records: Vec::new(),
            measured_cycles: 0,
            suspended_cycles: 0,
            sleeping_cycles: 0,
            t_off_sum: 0.0,
            v_sum: 0.0,
            v_count: 0,
            qw_sum: 0.0,
            qw_count: 0,
        }
    }

    fn pull_arrival(&mut self) {
        self.next_arrival = if self.arrivals_left == 0 {
            None
        } else {
            self.arrivals_left -= 1;
            self.stream
                .next()
                .filter(|f| f.arrival_time <= self.stop_at)
        };
    }

    fn advance(&mut self, t: f64) {
        debug_assert!(t >= self.now);
        if self.measure_from.is_some() {
            self.residency.add(self.state, t - self.now);
        }
        self.now = t;
    }

    fn next_event(&self) -> Option<(f64, Event)> {
        let mut best: Option<(f64, Event)> = None;
        let mut offer = |t: f64, e: Event| {
            if t.is_finite() && best.is_none_or(|(bt, be)| t < bt || (t == bt && e < be)) {
                best = Some((t, e));
            }
        };
        if let Some(end) = self.serving {
            offer(end, Event::ServiceEnd);
        }
        if matches!(
            self.state,
            InterfaceState::GoingToSleep | InterfaceState::Waking
        ) {
            offer(self.state_until, Event::TransitionEnd);
        }
        if self.state == InterfaceState::Lpi {
            offer(self.timer_at, Event::TimerExpiry);
        }
        if let Some(f) = self.next_arrival {
            offer(f.arrival_time, Event::Arrival);
        }
        best
    }

    fn run(mut self) -> Self {
        self.pull_arrival();
        self.start_cycle();
        while let Some((t, event)) = self.next_event() {
            if t > self.stop_at {
                break;
            }
            self.advance(t);
            match event {
                Event::ServiceEnd => self.on_service_end(),
                Event::TransitionEnd => self.on_transition_end(),
                Event::TimerExpiry => self.begin_wake(),
                Event::Arrival => self.on_arrival(),
            }
            if self.drained() {
                break;
            }
        }
        if self.stop_at.is_finite() && self.now < self.stop_at {
            self.advance(self.stop_at);
        }
        self
    }

    /// All frames of a frame-limited horizon have left.
    fn drained(&self) -> bool {
        self.next_arrival.is_none()
            && self.serving.is_none()
            && self.queue.is_empty()
            && self.state_is_idle()
    }

    fn state_is_idle(&self) -> bool {
        // The final buffer-empty instant closes the last cycle; nothing more
        // can happen without arrivals.
        self.cycle.frames_total == 0 && self.stop_at.is_infinite()
    }

    fn start_cycle(&mut self) {
        self.cycle = CycleRecord {
            index: self.cycles_started,
            sleep_start: self.now,
            ..CycleRecord::default()
        };
        if self.cycles_started == self.warmup && self.measure_from.is_none() {
            self.measure_from = Some(self.now);
        }
        self.cycles_started += 1;
        self.first_served = false;
        self.wake_pending = false;
        self.timer_at = f64::INFINITY;
        self.plan = self.controller.plan(self.params);
        self.cycle.plan = self.plan;
        if self.plan == WakePlan::Suspend {
            self.state = InterfaceState::Active;
            self.state_until = f64::INFINITY;
        } else {
            self.state = InterfaceState::GoingToSleep;
            self.state_until = self.now + self.params.ts;
        }
    }

    fn end_cycle(&mut self) {
        self.cycle.cycle_duration = self.now - self.cycle.sleep_start;
        let record = self.cycle;
        self.controller.observe(&record, self.params);
        if self.measure_from.is_some() {
            self.measured_cycles += 1;
            if record.suspended() {
                self.suspended_cycles += 1;
            } else {
                self.sleeping_cycles += 1;
                self.t_off_sum += record.t_off;
            }
            if let Some(v) = record.planned_v() {
                self.v_sum += v;
                self.v_count += 1;
            }
            if let Some(q) = record.planned_qw() {
                self.qw_sum += f64::from(q);
                self.qw_count += 1;
            }
            if self.keep_cycles {
                self.records.push(record);
            }
        }
    }

    fn is_measured(&self, f: &Frame) -> bool {
        self.measure_from.is_some_and(|t0| f.arrival_time >= t0)
    }

    fn begin_service(&mut self) {
        let Some(frame) = self.queue.pop_front() else {
            return;
        };
        let delay = self.now - frame.arrival_time;
        if !self.first_served {
            self.first_served = true;
            self.cycle.w_f = delay;
        }
        if self.is_measured(&frame) {
            self.measured_frames += 1;
            self.delay_sum += delay;
            self.delay_max = self.delay_max.max(delay);
            if self.keep_delays {
                self.delays.push(delay);
            }
        }
        self.serving = Some(self.now + self.params.service_time(f64::from(frame.size)));
    }

    fn on_service_end(&mut self) {
        self.serving = None;
        self.departures += 1;
        if self.queue.is_empty() {
            self.end_cycle();
            if self.next_arrival.is_some() || self.stop_at.is_finite() {
                self.start_cycle();
            } else {
                self.cycle = CycleRecord::default();
            }
        } else {
            self.begin_service();
        }
    }

    fn on_transition_end(&mut self) {
        match self.state {
            InterfaceState::GoingToSleep => {
                self.state = InterfaceState::Lpi;
                self.state_until = f64::INFINITY;
                self.lpi_since = self.now;
                if self.wake_pending || self.timer_at <= self.now {
                    self.begin_wake();
                }
            }
            InterfaceState::Waking => {
                self.state = InterfaceState::Active;
                self.state_until = f64::INFINITY;
                self.begin_service();
            }
            InterfaceState::Active | InterfaceState::Lpi => unreachable!("no pending transition"),
        }
    }

    fn begin_wake(&mut self) {
        debug_assert_eq!(self.state, InterfaceState::Lpi);
        self.cycle.t_off = self.now - self.lpi_since;
        self.state = InterfaceState::Waking;
        self.state_until = self.now + self.params.tw;
        self.timer_at = f64::INFINITY;
        self.wake_pending = false;
    }

    fn on_arrival(&mut self) {
        let frame = self
            .next_arrival
            .take()
            .expect("arrival event without frame");
        self.arrivals += 1;
        self.pull_arrival();

        if self.cycle.frames_total == 0 {
            self.cycle.t_e = self.now - self.cycle.sleep_start;
            if let Some(v) = self.plan.timer() {
                self.timer_at = self.now + v;
            }
        }
        self.cycle.frames_total += 1;
        self.cycle.bytes_total += u64::from(frame.size);
        if self.state != InterfaceState::Active {
            self.cycle.frames_while_asleep += 1;
        }
        self.queue.push_back(frame);

        match self.state {
            InterfaceState::Active => {
                if self.serving.is_none() {
                    self.begin_service();
                }
            }
            InterfaceState::GoingToSleep | InterfaceState::Lpi => {
                let hit = self
                    .plan
                    .threshold()
                    .is_some_and(|q| self.queue.len() as u64 >= u64::from(q));
                if hit {
                    if self.state == InterfaceState::Lpi {
                        self.begin_wake();
                    } else {
                        self.wake_pending = true;
                    }
                }
            }
            InterfaceState::Waking => {}
        }
    }

    fn into_report(self, seed: u64, overload: bool) -> Result<SimReport, SimError> {
        let Some(t0) = self.measure_from else {
            return Err(SimError::HorizonTooShort {
                cycles: self.cycles_started,
                warmup: self.warmup,
            });
        };
        let mean = |sum: f64, n: u64| if n > 0 { Some(sum / n as f64) } else { None };
        let backlog = self.queue.len() as u64 + u64::from(self.serving.is_some());
        Ok(SimReport {
            seed,
            measured_phi: self.residency.energy_ratio(self.params.phi_off),
            mean_delay: mean(self.delay_sum, self.measured_frames).unwrap_or(0.0),
            max_delay: self.delay_max,
            t_off_mean: mean(self.t_off_sum, self.sleeping_cycles).unwrap_or(0.0),
            mean_planned_v: mean(self.v_sum, self.v_count),
            mean_planned_qw: mean(self.qw_sum, self.qw_count),
            suspend_fraction: mean(self.suspended_cycles as f64, self.measured_cycles)
                .unwrap_or(0.0),
            cycles: self.measured_cycles,
            frames: self.measured_frames,
            residency: self.residency,
            elapsed: self.now - t0,
            overload,
            arrivals: self.arrivals,
            departures: self.departures,
            backlog,
            delay_samples: self.delays,
            cycle_records: self.records,
        })
    }
}

/// Simulates `traffic` through one interface under `config`.
pub fn run(traffic: &TrafficSpec, config: &SimConfig) -> Result<SimReport, SimError> {
    config.params.validate()?;
    config.policy.validate(&config.params)?;
    config.estimator.validate()?;
    match config.horizon {
        Horizon::Frames(0) => return Err(SimError::EmptyHorizon),
        Horizon::Time(t) if !(t > 0.0) => return Err(SimError::EmptyHorizon),
        _ => {}
    }
    let stream = traffic.stream(config.seed)?;
    let overload = traffic.bit_rate() >= config.params.line_rate;
    let sim = Simulation::new(config, stream).run();
    if sim.arrivals == 0 {
        return Err(SimError::EmptyHorizon);
    }
    sim.into_report(config.seed, overload)
}
