//! Batch experiments: grids of rates, delay targets and policies evaluated
//! analytically, by simulation, or both, written out as CSV tables.
//!
//! Experiments are described by a line-oriented `key = value` config. List
//! keys (`rate_gbps`, `tau_us`, `policy`) may repeat or hold several values
//! on one line; the first occurrence in a config replaces the default list.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::analytic::{self, AnalyticError, CoalescingOutcome, EeeParams, TrafficStats};
use crate::policy::{EstimatorConfig, PolicyConfig, Smoothing, ThresholdSolver};
use crate::simcore::{self, Horizon, SimConfig, SimError, SimReport, DEFAULT_WARMUP_CYCLES};
use crate::sweep::{self, Execution};
use crate::traffic::{self, ArrivalProcess, SizeDistribution, Trace, TrafficError, TrafficSpec};

pub const CSV_HEADER: &str =
    "rate_gbps,tau_us,phi_analytic,phi_measured,delay_analytic_us,delay_measured_us,\
toff_analytic_us,toff_measured_us,bound_phi,mean_V_us,mean_Qw,suspend_frac,seed";
pub const CDF_HEADER: &str = "delay_us,cdf";

pub const DEFAULT_HORIZON_FRAMES: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Field { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{point}: {source}")]
    Point {
        point: String,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Model(#[from] AnalyticError),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

fn field<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Field {
        key: key.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    /// Closed-form operating points only.
    Analytic,
    /// Energy lower bound against the delay target.
    Bound,
    /// Simulation only.
    Sim,
    /// Simulation next to the closed forms and the bound.
    #[default]
    Sweep,
    /// Empirical delay CDFs.
    Cdf,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::Bound => "bound",
            Mode::Sim => "sim",
            Mode::Sweep => "sweep",
            Mode::Cdf => "cdf",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "analytic" => Mode::Analytic,
            "bound" => Mode::Bound,
            "sim" => Mode::Sim,
            "sweep" => Mode::Sweep,
            "cdf" => Mode::Cdf,
            other => return Err(format!("unknown mode `{other}`")),
        })
    }
}

/// A policy as listed in a config. Dynamic policies are instantiated once
/// per delay target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyChoice {
    Fixed(PolicyConfig),
    DynamicTimer,
    DynamicSize(ThresholdSolver),
}

impl PolicyChoice {
    pub fn at(&self, tau: f64) -> PolicyConfig {
        match *self {
            PolicyChoice::Fixed(p) => p,
            PolicyChoice::DynamicTimer => PolicyConfig::DynamicTimer { tau },
            PolicyChoice::DynamicSize(solver) => PolicyConfig::DynamicSize { tau, solver },
        }
    }

    pub fn is_dynamic(&self) -> bool {
        !matches!(self, PolicyChoice::Fixed(_))
    }
}

impl fmt::Display for PolicyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.at(0.0))
    }
}

impl FromStr for PolicyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let words: Vec<&str> = s
            .split(|c: char| c.is_whitespace() || c == '_')
            .filter(|w| !w.is_empty())
            .collect();
        let num = |w: &str| {
            w.parse::<f64>()
                .map_err(|_| format!("`{w}` is not a number in policy `{s}`"))
        };
        let int = |w: &str| {
            w.parse::<u32>()
                .map_err(|_| format!("`{w}` is not a frame count in policy `{s}`"))
        };
        Ok(match words.as_slice() {
            ["none"] => PolicyChoice::Fixed(PolicyConfig::None),
            ["static", "timer", v] => PolicyChoice::Fixed(PolicyConfig::StaticTimer { v: num(v)? }),
            ["static", "size", q] => PolicyChoice::Fixed(PolicyConfig::StaticSize { qw: int(q)? }),
            ["static", "dual", v, q] => PolicyChoice::Fixed(PolicyConfig::StaticDual {
                v: num(v)?,
                qw: int(q)?,
            }),
            ["dynamic", "timer"] => PolicyChoice::DynamicTimer,
            ["dynamic", "size"] => PolicyChoice::DynamicSize(ThresholdSolver::Approx),
            ["dynamic", "size", "cubic"] => PolicyChoice::DynamicSize(ThresholdSolver::Cubic),
            _ => {
                return Err(format!(
                    "unknown policy `{s}` (expected none, static_timer V, static_size Q, static_dual V Q, \
                     dynamic_timer, dynamic_size or dynamic_size_cubic)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalKind {
    Poisson,
    Pareto { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// bits/s
    pub rates_bps: Vec<f64>,
    /// µs
    pub taus: Vec<f64>,
    pub arrival: ArrivalKind,
    pub sizes: SizeDistribution,
    /// Replaces the generated traffic and the rate grid.
    pub trace: Option<PathBuf>,
    pub policies: Vec<PolicyChoice>,
    pub horizon: Horizon,
    pub seed: u64,
    pub out: PathBuf,
    pub params: EeeParams,
    pub estimator: EstimatorConfig,
    pub warmup_cycles: u64,
    /// µs
    pub cdf_bin: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            rates_bps: (1..=9).map(|g| f64::from(g) * 1e9).collect(),
            taus: vec![16.0, 32.0, 64.0],
            arrival: ArrivalKind::Poisson,
            sizes: SizeDistribution::Fixed(1500),
            trace: None,
            policies: vec![
                PolicyChoice::DynamicTimer,
                PolicyChoice::DynamicSize(ThresholdSolver::Approx),
            ],
            horizon: Horizon::Frames(DEFAULT_HORIZON_FRAMES),
            seed: 1,
            out: PathBuf::from("out"),
            params: EeeParams::default(),
            estimator: EstimatorConfig::default(),
            warmup_cycles: DEFAULT_WARMUP_CYCLES,
            cdf_bin: 1.0,
        }
    }
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits config text into entries. Blank lines and `#` comments are skipped.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ExperimentError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        entries.push(Entry {
            line: i + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

fn list_values(value: &str) -> impl Iterator<Item = &str> {
    value.split([',', ' ', '\t']).filter(|v| !v.is_empty())
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .or_else(|_| field(key, format!("`{value}` is not a valid number")))
}

impl ExperimentSpec {
    pub fn from_config(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        spec.apply(&parse_entries(text)?)?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_config(&text)
    }

    /// Applies a batch of entries. Within a batch, the first occurrence of a
    /// list key replaces the current list and later ones append.
    pub fn apply(&mut self, entries: &[Entry]) -> Result<()> {
        let mut touched: Vec<&str> = Vec::new();
        for e in entries {
            let fresh = !touched.contains(&e.key.as_str());
            if fresh {
                touched.push(&e.key);
            }
            self.set(&e.key, &e.value, fresh).map_err(|err| match err {
                ExperimentError::Field { key, message } => ExperimentError::Syntax {
                    line: e.line,
                    message: format!("{key}: {message}"),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, fresh: bool) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse().or_else(|m: String| field(key, m))?,
            "rate_gbps" => {
                if fresh {
                    self.rates_bps.clear();
                }
                for v in list_values(value) {
                    self.rates_bps.push(number::<f64>(key, v)? * 1e9);
                }
            }
            "tau_us" => {
                if fresh {
                    self.taus.clear();
                }
                for v in list_values(value) {
                    self.taus.push(number(key, v)?);
                }
            }
            "policy" => {
                if fresh {
                    self.policies.clear();
                }
                // Policies with arguments take one per line; plain names may share one.
                match value.parse::<PolicyChoice>() {
                    Ok(p) => self.policies.push(p),
                    Err(whole) => {
                        let each: Result<Vec<PolicyChoice>, String> =
                            list_values(value).map(str::parse).collect();
                        match each {
                            Ok(list) => self.policies.extend(list),
                            Err(_) => return field(key, whole),
                        }
                    }
                }
            }
            "arrival" => {
                let words: Vec<&str> = value.split_whitespace().collect();
                self.arrival = match words.as_slice() {
                    ["poisson"] => ArrivalKind::Poisson,
                    ["pareto"] => ArrivalKind::Pareto { alpha: 2.5 },
                    ["pareto", a] => ArrivalKind::Pareto {
                        alpha: number(key, a)?,
                    },
                    _ => {
                        return field(
                            key,
                            format!("expected `poisson` or `pareto [alpha]`, got `{value}`"),
                        )
                    }
                };
            }
            "sizes" => {
                let words: Vec<&str> = value.split_whitespace().collect();
                self.sizes = match words.as_slice() {
                    ["fixed", b] => SizeDistribution::Fixed(number(key, b)?),
                    ["bimodal", p, s, l] => SizeDistribution::Bimodal {
                        p_small: number(key, p)?,
                        small: number(key, s)?,
                        large: number(key, l)?,
                    },
                    _ => {
                        return field(
                            key,
                            format!("expected `fixed BYTES` or `bimodal P_SMALL SMALL LARGE`, got `{value}`"),
                        )
                    }
                };
            }
            "trace" => self.trace = (!value.is_empty()).then(|| PathBuf::from(value)),
            "horizon_frames" => self.horizon = Horizon::Frames(number(key, value)?),
            "horizon_us" => self.horizon = Horizon::Time(number(key, value)?),
            "seed" => self.seed = number(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "line_rate_gbps" => self.params.line_rate = number::<f64>(key, value)? * 1e9,
            "phi_off" => self.params.phi_off = number(key, value)?,
            "ts_us" => self.params.ts = number(key, value)?,
            "tw_us" => self.params.tw = number(key, value)?,
            "ewma_weight" => self.estimator.weight = number(key, value)?,
            "ewma_smoothing" => {
                self.estimator.smoothing = match value {
                    "rates" => Smoothing::Rates,
                    "totals" => Smoothing::Totals,
                    _ => return field(key, format!("expected `rates` or `totals`, got `{value}`")),
                }
            }
            "min_frames" => self.estimator.min_frames = number(key, value)?,
            "warmup_cycles" => self.warmup_cycles = number(key, value)?,
            "cdf_bin_us" => self.cdf_bin = number(key, value)?,
            _ => return field(key, "unknown key"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trace.is_none() {
            if self.rates_bps.is_empty() {
                return field("rate_gbps", "rate grid is empty");
            }
            if let Some(r) = self
                .rates_bps
                .iter()
                .find(|r| !(**r > 0.0 && r.is_finite()))
            {
                return field(
                    "rate_gbps",
                    format!("rate {} Gb/s must be positive", r / 1e9),
                );
            }
            let generated = self.generated(self.rates_bps[0]);
            generated.validate()?;
        }
        let needs_tau =
            self.mode == Mode::Bound || self.policies.iter().any(PolicyChoice::is_dynamic);
        if needs_tau && self.taus.is_empty() {
            return field("tau_us", "target grid is empty");
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return field("tau_us", format!("target {t} µs must be positive"));
        }
        if self.mode != Mode::Bound && self.policies.is_empty() {
            return field("policy", "policy list is empty");
        }
        for p in &self.policies {
            if let Err(e) = p.at(1.0).validate(&self.params) {
                return field("policy", format!("{p}: {e}"));
            }
        }
        if let Err(e) = self.estimator.validate() {
            return field("ewma_weight", e.to_string());
        }
        match self.horizon {
            Horizon::Frames(0) => return field("horizon_frames", "must be positive"),
            Horizon::Time(t) if !(t > 0.0) => return field("horizon_us", "must be positive"),
            _ => {}
        }
        if !(self.cdf_bin > 0.0) {
            return field("cdf_bin_us", "must be positive");
        }
        Ok(())
    }

    fn generated(&self, rate_bps: f64) -> TrafficSpec {
        let arrival = match self.arrival {
            ArrivalKind::Poisson => ArrivalProcess::Poisson { lambda: 1.0 },
            ArrivalKind::Pareto { alpha } => ArrivalProcess::Pareto { alpha, lambda: 1.0 },
        };
        TrafficSpec::at_bit_rate(arrival, self.sizes, rate_bps)
    }

    /// Normalized config that reproduces this experiment.
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64], scale: f64| {
            v.iter()
                .map(|x| format!("{}", x / scale))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "mode = {}", self.mode.name());
        match &self.trace {
            Some(path) => {
                let _ = writeln!(s, "trace = {}", path.display());
            }
            None => {
                let _ = writeln!(s, "rate_gbps = {}", join(&self.rates_bps, 1e9));
                match self.arrival {
                    ArrivalKind::Poisson => s.push_str("arrival = poisson\n"),
                    ArrivalKind::Pareto { alpha } => {
                        let _ = writeln!(s, "arrival = pareto {alpha}");
                    }
                }
                match self.sizes {
                    SizeDistribution::Fixed(b) => {
                        let _ = writeln!(s, "sizes = fixed {b}");
                    }
                    SizeDistribution::Bimodal {
                        p_small,
                        small,
                        large,
                    } => {
                        let _ = writeln!(s, "sizes = bimodal {p_small} {small} {large}");
                    }
                }
            }
        }
        let _ = writeln!(s, "tau_us = {}", join(&self.taus, 1.0));
        for p in &self.policies {
            let _ = writeln!(s, "policy = {}", policy_config_text(p));
        }
        match self.horizon {
            Horizon::Frames(n) => {
                let _ = writeln!(s, "horizon_frames = {n}");
            }
            Horizon::Time(t) => {
                let _ = writeln!(s, "horizon_us = {t}");
            }
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "line_rate_gbps = {}", self.params.line_rate / 1e9);
        let _ = writeln!(s, "phi_off = {}", self.params.phi_off);
        let _ = writeln!(s, "ts_us = {}", self.params.ts);
        let _ = writeln!(s, "tw_us = {}", self.params.tw);
        let _ = writeln!(s, "ewma_weight = {}", self.estimator.weight);
        let smoothing = match self.estimator.smoothing {
            Smoothing::Rates => "rates",
            Smoothing::Totals => "totals",
        };
        let _ = writeln!(s, "ewma_smoothing = {smoothing}");
        let _ = writeln!(s, "min_frames = {}", self.estimator.min_frames);
        let _ = writeln!(s, "warmup_cycles = {}", self.warmup_cycles);
        let _ = writeln!(s, "cdf_bin_us = {}", self.cdf_bin);
        s
    }
}

fn policy_config_text(p: &PolicyChoice) -> String {
    match p {
        PolicyChoice::Fixed(PolicyConfig::StaticTimer { v }) => format!("static_timer {v}"),
        PolicyChoice::Fixed(PolicyConfig::StaticSize { qw }) => format!("static_size {qw}"),
        PolicyChoice::Fixed(PolicyConfig::StaticDual { v, qw }) => format!("static_dual {v} {qw}"),
        other => other.to_string(),
    }
}

/// One output row; `None` cells are left blank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub rate_gbps: f64,
    pub tau_us: Option<f64>,
    pub phi_analytic: Option<f64>,
    pub phi_measured: Option<f64>,
    pub delay_analytic_us: Option<f64>,
    pub delay_measured_us: Option<f64>,
    pub toff_analytic_us: Option<f64>,
    pub toff_measured_us: Option<f64>,
    pub bound_phi: Option<f64>,
    pub mean_v_us: Option<f64>,
    pub mean_qw: Option<f64>,
    pub suspend_frac: Option<f64>,
    pub seed: Option<u64>,
}

impl Row {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.rate_gbps,
            self.tau_us.map(|t| t.to_string()).unwrap_or_default(),
            cell(self.phi_analytic),
            cell(self.phi_measured),
            cell(self.delay_analytic_us),
            cell(self.delay_measured_us),
            cell(self.toff_analytic_us),
            cell(self.toff_measured_us),
            cell(self.bound_phi),
            cell(self.mean_v_us),
            cell(self.mean_qw),
            cell(self.suspend_frac),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        )
    }
}

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Rows(Vec<Row>),
    Cdf(Vec<(f64, f64)>),
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self {
            Table::Rows(rows) => {
                s.push_str(CSV_HEADER);
                s.push('\n');
                for r in rows {
                    s.push_str(&r.to_csv());
                    s.push('\n');
                }
            }
            Table::Cdf(points) => {
                s.push_str(CDF_HEADER);
                s.push('\n');
                for (d, c) in points {
                    let _ = writeln!(s, "{d:.6},{c:.6}");
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub file_name: String,
    pub table: Table,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub outputs: Vec<Output>,
    /// Per-point notes, e.g. offered load at or above the line rate.
    pub warnings: Vec<String>,
}

/// A (rate, target, policy) combination.
#[derive(Debug, Clone)]
struct Point {
    policy_index: usize,
    rate_bps: f64,
    tau: Option<f64>,
    policy: PolicyConfig,
    traffic: TrafficSpec,
    seed: u64,
}

impl Point {
    fn label(&self) -> String {
        match self.tau {
            Some(t) => format!(
                "{} at {} Gb/s, tau {t} µs",
                self.policy,
                self.rate_bps / 1e9
            ),
            None => format!("{} at {} Gb/s", self.policy, self.rate_bps / 1e9),
        }
    }
}

enum Simulated {
    Report(SimReport),
    Cdf(Vec<(f64, f64)>),
}

/// Evaluates the experiment without touching the file system.
pub fn evaluate(spec: &ExperimentSpec, execution: Execution) -> Result<ExperimentResult> {
    spec.validate()?;
    let trace = match &spec.trace {
        Some(path) => Some(Arc::new(traffic::load_trace(path)?)),
        None => None,
    };
    let grid: Vec<(f64, TrafficSpec)> = match &trace {
        Some(t) => vec![(t.summary().mean_rate_bps, TrafficSpec::Trace(Arc::clone(t)))],
        None => spec
            .rates_bps
            .iter()
            .map(|&r| (r, spec.generated(r)))
            .collect(),
    };
    let mut warnings = Vec::new();
    for (rate, _) in &grid {
        if *rate >= spec.params.line_rate {
            warnings.push(format!(
                "offered load {} Gb/s is not below the line rate {} Gb/s; analytic columns left blank",
                rate / 1e9,
                spec.params.line_rate / 1e9
            ));
        }
    }

    if spec.mode == Mode::Bound {
        let mut rows = Vec::new();
        for &tau in &spec.taus {
            for (rate, traffic) in &grid {
                rows.push(bound_row(spec, *rate, tau, traffic, trace.as_deref())?);
            }
        }
        return Ok(ExperimentResult {
            outputs: vec![Output {
                file_name: "bound.csv".to_string(),
                table: Table::Rows(rows),
            }],
            warnings,
        });
    }

    let mut points = Vec::new();
    for (i, choice) in spec.policies.iter().enumerate() {
        let taus: Vec<Option<f64>> = if choice.is_dynamic() {
            spec.taus.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for tau in taus {
            for (rate, traffic) in &grid {
                points.push(Point {
                    policy_index: i,
                    rate_bps: *rate,
                    tau,
                    policy: choice.at(tau.unwrap_or(0.0)),
                    traffic: traffic.clone(),
                    seed: sweep::derive_seed(spec.seed, *rate),
                });
            }
        }
    }

    let simulate = matches!(spec.mode, Mode::Sim | Mode::Sweep | Mode::Cdf);
    let simulated: Vec<Option<Simulated>> = if simulate {
        let results = sweep::map_ordered(&points, execution, |p| simulate_point(spec, p));
        let mut out = Vec::with_capacity(results.len());
        for (p, r) in points.iter().zip(results) {
            let sim = r.map_err(|source| ExperimentError::Point {
                point: p.label(),
                source,
            })?;
            if let Simulated::Report(rep) = &sim {
                if rep.overload && p.rate_bps < spec.params.line_rate {
                    warnings.push(format!("{}: simulation flagged overload", p.label()));
                }
            }
            out.push(Some(sim));
        }
        out
    } else {
        points.iter().map(|_| None).collect()
    };

    let mut outputs = Vec::new();
    if spec.mode == Mode::Cdf {
        for (p, sim) in points.iter().zip(simulated) {
            if let Some(Simulated::Cdf(cdf)) = sim {
                let rate = p.rate_bps / 1e9;
                let file_name = match p.tau {
                    Some(t) => format!("cdf_{}_{rate}g_tau{t}.csv", p.policy),
                    None => format!("cdf_{}_{rate}g.csv", p.policy),
                };
                outputs.push(Output {
                    file_name,
                    table: Table::Cdf(cdf),
                });
            }
        }
        return Ok(ExperimentResult { outputs, warnings });
    }

    let mut tables: Vec<Vec<Row>> = vec![Vec::new(); spec.policies.len()];
    for (p, sim) in points.iter().zip(simulated) {
        let report = match sim {
            Some(Simulated::Report(r)) => Some(r),
            _ => None,
        };
        let row = policy_row(spec, p, report.as_ref(), trace.as_deref())?;
        tables[p.policy_index].push(row);
    }
    for (choice, rows) in spec.policies.iter().zip(tables) {
        outputs.push(Output {
            file_name: format!("{}_{choice}.csv", spec.mode.name()),
            table: Table::Rows(rows),
        });
    }
    Ok(ExperimentResult { outputs, warnings })
}

fn simulate_point(spec: &ExperimentSpec, p: &Point) -> Result<Simulated, SimError> {
    let config = SimConfig {
        estimator: spec.estimator,
        warmup_cycles: spec.warmup_cycles,
        keep_delays: spec.mode == Mode::Cdf,
        ..SimConfig::new(spec.params, p.policy, spec.horizon, p.seed)
    };
    let report = simcore::run(&p.traffic, &config)?;
    if spec.mode == Mode::Cdf {
        Ok(Simulated::Cdf(simcore::delay_cdf(&report, spec.cdf_bin)?))
    } else {
        Ok(Simulated::Report(report))
    }
}

/// Model inputs for a grid point, `None` when the load is not stable.
fn model_stats(
    spec: &ExperimentSpec,
    rate_bps: f64,
    traffic: &TrafficSpec,
    trace: Option<&Trace>,
) -> Result<Option<TrafficStats>> {
    if rate_bps >= spec.params.line_rate {
        return Ok(None);
    }
    let stats = match trace {
        Some(t) => t.measured_stats(&spec.params)?,
        None => traffic::theoretical_stats(traffic, &spec.params)?,
    };
    Ok((stats.rho() < 1.0).then_some(stats))
}

fn bound_row(
    spec: &ExperimentSpec,
    rate_bps: f64,
    tau: f64,
    traffic: &TrafficSpec,
    trace: Option<&Trace>,
) -> Result<Row> {
    let mut row = Row {
        rate_gbps: rate_bps / 1e9,
        tau_us: Some(tau),
        ..Row::default()
    };
    if let Some(stats) = model_stats(spec, rate_bps, traffic, trace)? {
        let b = analytic::bound(tau, &spec.params, &stats)?;
        row.bound_phi = Some(b.energy_lower);
        row.toff_analytic_us = Some(b.t_off_upper);
        row.delay_analytic_us = Some(tau);
    }
    Ok(row)
}

/// Closed-form operating point of a policy.
struct Design {
    outcome: CoalescingOutcome,
    timer: Option<f64>,
    threshold: Option<u32>,
}

fn design(
    policy: &PolicyConfig,
    params: &EeeParams,
    stats: &TrafficStats,
) -> Result<Option<Design>> {
    let timer = |v: f64| -> Result<_> {
        Ok(Some(Design {
            outcome: analytic::time_based_outcome(params, stats, v)?,
            timer: Some(v),
            threshold: None,
        }))
    };
    let size = |q: u32| -> Result<_> {
        Ok(Some(Design {
            outcome: analytic::size_based_outcome(params, stats, q)?,
            timer: None,
            threshold: Some(q),
        }))
    };
    let feasible = |r: Result<f64, AnalyticError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(AnalyticError::Infeasible) => Ok(None),
        Err(e) => Err(e),
    };
    match *policy {
        PolicyConfig::None => size(1),
        PolicyConfig::StaticTimer { v } => timer(v),
        PolicyConfig::StaticSize { qw } => size(qw),
        PolicyConfig::StaticDual { .. } => Ok(None),
        PolicyConfig::DynamicTimer { tau } => {
            let w0 = analytic::w0_exact(stats)?;
            match feasible(analytic::optimal_timer(
                tau,
                stats.lambda,
                params.tw,
                w0,
                params.ts,
            ))? {
                Some(v) => timer(v),
                None => Ok(None),
            }
        }
        PolicyConfig::DynamicSize { tau, solver } => {
            let w0 = analytic::w0_exact(stats)?;
            let q = match solver {
                ThresholdSolver::Approx => {
                    analytic::optimal_threshold_approx(tau, stats.lambda, params.tw, w0)
                }
                ThresholdSolver::Cubic => {
                    analytic::optimal_threshold_cubic(tau, stats.lambda, params.tw, w0)
                }
            };
            match feasible(q)? {
                Some(q) => size((q.round() as u32).max(1)),
                None => Ok(None),
            }
        }
    }
}

fn policy_row(
    spec: &ExperimentSpec,
    p: &Point,
    report: Option<&SimReport>,
    trace: Option<&Trace>,
) -> Result<Row> {
    let mut row = Row {
        rate_gbps: p.rate_bps / 1e9,
        tau_us: p.tau,
        ..Row::default()
    };
    let stats = model_stats(spec, p.rate_bps, &p.traffic, trace)?;
    if let Some(r) = report {
        row.phi_measured = Some(r.measured_phi);
        row.delay_measured_us = Some(r.mean_delay);
        row.toff_measured_us = Some(r.t_off_mean);
        row.mean_v_us = r.mean_planned_v;
        row.mean_qw = r.mean_planned_qw;
        row.suspend_frac = Some(r.suspend_fraction);
        row.seed = Some(r.seed);
    }
    let with_model = matches!(spec.mode, Mode::Analytic | Mode::Sweep);
    if let (Some(stats), true) = (stats, with_model) {
        if let Some(d) = design(&p.policy, &spec.params, &stats)? {
            row.phi_analytic = Some(d.outcome.energy_ratio);
            row.delay_analytic_us = Some(d.outcome.mean_delay);
            row.toff_analytic_us = Some(d.outcome.t_off_mean);
            if report.is_none() {
                row.mean_v_us = d.timer;
                row.mean_qw = d.threshold.map(f64::from);
            }
        }
        // Dynamic rows compare against the bound at their target, static
        // rows at the delay they achieve.
        let at = p.tau.or(row.delay_measured_us).or(row.delay_analytic_us);
        if let Some(delay) = at {
            row.bound_phi = Some(analytic::bound(delay, &spec.params, &stats)?.energy_lower);
        }
    }
    Ok(row)
}

/// Evaluates the experiment and writes its tables and normalized config
/// under `spec.out`. Returns the written paths.
pub fn run_experiment(
    spec: &ExperimentSpec,
    execution: Execution,
) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let result = evaluate(spec, execution)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(&spec.out).map_err(io(&spec.out))?;
    let mut written = Vec::new();
    for o in &result.outputs {
        let path = spec.out.join(&o.file_name);
        fs::write(&path, o.table.to_csv()).map_err(io(&path))?;
        written.push(path);
    }
    let config_path = spec.out.join(format!("{}.conf", spec.mode.name()));
    fs::write(&config_path, spec.to_config()).map_err(io(&config_path))?;
    written.push(config_path);
    Ok((written, result.warnings))
}
