//! Frame arrival generators and trace replay.
//!
//! Trace files are plain text, one frame per line:
//!
//! ```text
//! # optional comments
//! arrival_time_us,frame_size_bytes
//! 0.0,1500
//! 2.4,1500
//! ```
//!
//! A header line is optional; timestamps must be non-decreasing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};
use thiserror::Error;

use crate::analytic::{EeeParams, TrafficStats};

pub const MIN_FRAME_BYTES: u32 = 64;
pub const MAX_FRAME_BYTES: u32 = 1518;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid traffic parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("theoretical moments are undefined for trace replay")]
    TraceMoments,
    #[error(transparent)]
    Model(#[from] crate::analytic::AnalyticError),
}

pub type Result<T> = std::result::Result<T, TrafficError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    /// µs
    pub arrival_time: f64,
    /// bytes
    pub size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalProcess {
    /// Exponential interarrivals with rate `lambda` frames/µs.
    Poisson { lambda: f64 },
    /// Pareto-I interarrivals with shape `alpha`, scaled so the mean rate is
    /// `lambda` frames/µs.
    Pareto { alpha: f64, lambda: f64 },
}

impl ArrivalProcess {
    pub fn lambda(&self) -> f64 {
        match *self {
            ArrivalProcess::Poisson { lambda } | ArrivalProcess::Pareto { lambda, .. } => lambda,
        }
    }

    /// Same process family at another mean rate.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        match *self {
            ArrivalProcess::Poisson { .. } => ArrivalProcess::Poisson { lambda },
            ArrivalProcess::Pareto { alpha, .. } => ArrivalProcess::Pareto { alpha, lambda },
        }
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.lambda()
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ArrivalProcess::Poisson { lambda } => 1.0 / (lambda * lambda),
            ArrivalProcess::Pareto { alpha, lambda } => {
                let xm = pareto_scale(alpha, lambda);
                xm * xm * alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TrafficError::InvalidParameter {
                name: "lambda",
                value: lambda,
                reason: "must be positive",
            });
        }
        if let ArrivalProcess::Pareto { alpha, .. } = *self {
            if !(alpha > 2.0) {
                return Err(TrafficError::InvalidParameter {
                    name: "alpha",
                    value: alpha,
                    reason: "must exceed 2 for finite variance",
                });
            }
        }
        Ok(())
    }
}

/// Minimum interarrival `x_m` of a Pareto-I law with mean `1/lambda`.
pub fn pareto_scale(alpha: f64, lambda: f64) -> f64 {
    (alpha - 1.0) / (alpha * lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeDistribution {
    Fixed(u32),
    /// `small` bytes with probability `p_small`, otherwise `large`.
    Bimodal {
        p_small: f64,
        small: u32,
        large: u32,
    },
}

impl SizeDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            SizeDistribution::Fixed(b) => f64::from(b),
            SizeDistribution::Bimodal {
                p_small,
                small,
                large,
            } => p_small * f64::from(small) + (1.0 - p_small) * f64::from(large),
        }
    }

    /// Variance of the transmission time, µs².
    pub fn service_variance(&self, params: &EeeParams) -> f64 {
        match *self {
            SizeDistribution::Fixed(_) => 0.0,
            SizeDistribution::Bimodal {
                p_small,
                small,
                large,
            } => {
                let gap =
                    params.service_time(f64::from(large)) - params.service_time(f64::from(small));
                p_small * (1.0 - p_small) * gap * gap
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |b: u32| {
            if (MIN_FRAME_BYTES..=MAX_FRAME_BYTES).contains(&b) {
                Ok(())
            } else {
                Err(TrafficError::InvalidParameter {
                    name: "frame size",
                    value: f64::from(b),
                    reason: "generated frames must be 64..=1518 bytes",
                })
            }
        };
        match *self {
            SizeDistribution::Fixed(b) => check(b),
            SizeDistribution::Bimodal {
                p_small,
                small,
                large,
            } => {
                if !(0.0..=1.0).contains(&p_small) {
                    return Err(TrafficError::InvalidParameter {
                        name: "p_small",
                        value: p_small,
                        reason: "must lie in [0, 1]",
                    });
                }
                check(small)?;
                check(large)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrafficSpec {
    Generated {
        arrival: ArrivalProcess,
        sizes: SizeDistribution,
    },
    Trace(Arc<Trace>),
}

impl TrafficSpec {
    pub fn poisson(lambda: f64, sizes: SizeDistribution) -> Self {
        TrafficSpec::Generated {
            arrival: ArrivalProcess::Poisson { lambda },
            sizes,
        }
    }

    pub fn pareto(alpha: f64, lambda: f64, sizes: SizeDistribution) -> Self {
        TrafficSpec::Generated {
            arrival: ArrivalProcess::Pareto { alpha, lambda },
            sizes,
        }
    }

    /// Generated traffic whose offered load is `rate_bps` on the wire.
    pub fn at_bit_rate(arrival: ArrivalProcess, sizes: SizeDistribution, rate_bps: f64) -> Self {
        let lambda = rate_bps / (8.0 * sizes.mean()) / 1e6;
        TrafficSpec::Generated {
            arrival: arrival.with_lambda(lambda),
            sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrafficSpec::Generated { arrival, sizes } => {
                arrival.validate()?;
                sizes.validate()
            }
            TrafficSpec::Trace(_) => Ok(()),
        }
    }

    /// Offered load in bits/s.
    pub fn bit_rate(&self) -> f64 {
        match self {
            TrafficSpec::Generated { arrival, sizes } => {
                arrival.lambda() * 8.0 * sizes.mean() * 1e6
            }
            TrafficSpec::Trace(t) => t.summary().mean_rate_bps,
        }
    }

    pub fn stream(&self, seed: u64) -> Result<FrameStream> {
        self.validate()?;
        Ok(match self {
            TrafficSpec::Generated { arrival, sizes } => {
                FrameStream::Generated(Box::new(Generator::new(*arrival, *sizes, seed)))
            }
            TrafficSpec::Trace(t) => FrameStream::Replay {
                trace: Arc::clone(t),
                next: 0,
            },
        })
    }
}

/// Seeded generator for one synthetic stream.
#[derive(Debug, Clone)]
pub struct Generator {
    arrival: ArrivalProcess,
    sizes: SizeDistribution,
    rng: ChaCha8Rng,
    clock: f64,
}

impl Generator {
    pub fn new(arrival: ArrivalProcess, sizes: SizeDistribution, seed: u64) -> Self {
        Self {
            arrival,
            sizes,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0.0,
        }
    }

    pub fn next_frame(&mut self) -> Frame {
        let gap = match self.arrival {
            ArrivalProcess::Poisson { lambda } => Exp::new(lambda)
                .expect("validated rate")
                .sample(&mut self.rng),
            ArrivalProcess::Pareto { alpha, lambda } => {
                Pareto::new(pareto_scale(alpha, lambda), alpha)
                    .expect("validated shape")
                    .sample(&mut self.rng)
            }
        };
        // Sizes come from the same stream but after the gap, independent of it.
        let size = match self.sizes {
            SizeDistribution::Fixed(b) => b,
            SizeDistribution::Bimodal {
                p_small,
                small,
                large,
            } => {
                if self.rng.random::<f64>() < p_small {
                    small
                } else {
                    large
                }
            }
        };
        self.clock += gap;
        Frame {
            arrival_time: self.clock,
            size,
        }
    }
}

/// Frames in arrival order, either generated or replayed.
#[derive(Debug, Clone)]
pub enum FrameStream {
    Generated(Box<Generator>),
    Replay { trace: Arc<Trace>, next: usize },
}

impl Iterator for FrameStream {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        match self {
            FrameStream::Generated(g) => Some(g.next_frame()),
            FrameStream::Replay { trace, next } => {
                let f = trace.frames.get(*next).copied();
                *next += 1;
                f
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub frames: usize,
    pub bytes: u64,
    /// Mean offered load over the span between first and last arrival.
    pub mean_rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub frames: Vec<Frame>,
}

impl Trace {
    pub fn summary(&self) -> TraceSummary {
        let frames = self.frames.len();
        let bytes = self.frames.iter().map(|f| u64::from(f.size)).sum();
        let mean_rate_bps = match (self.frames.first(), self.frames.last()) {
            (Some(first), Some(last)) if frames > 1 && last.arrival_time > first.arrival_time => {
                let lambda = (frames - 1) as f64 / (last.arrival_time - first.arrival_time);
                lambda * 8.0 * (bytes as f64 / frames as f64) * 1e6
            }
            _ => 0.0,
        };
        TraceSummary {
            frames,
            bytes,
            mean_rate_bps,
        }
    }

    /// Sample moments of the trace as seen by an interface with `params`.
    pub fn measured_stats(&self, params: &EeeParams) -> Result<TrafficStats> {
        let gaps: Vec<f64> = self
            .frames
            .windows(2)
            .map(|w| w[1].arrival_time - w[0].arrival_time)
            .collect();
        let services: Vec<f64> = self
            .frames
            .iter()
            .map(|f| params.service_time(f64::from(f.size)))
            .collect();
        let (mean_gap, var_gap) = mean_and_variance(&gaps);
        let (mean_service, var_service) = mean_and_variance(&services);
        Ok(TrafficStats::new(
            1.0 / mean_gap,
            1.0 / mean_service,
            var_gap,
            var_service,
        )?)
    }
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TrafficError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_trace(&text).map_err(|(line, reason)| TrafficError::Parse {
        path: path.to_owned(),
        line,
        reason,
    })
}

/// Parses trace text; errors carry the 1-based line number.
pub fn parse_trace(text: &str) -> std::result::Result<Trace, (usize, String)> {
    let mut frames = Vec::new();
    let mut seen_data = false;
    let mut last = f64::NEG_INFINITY;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(t), Some(s), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err((
                lineno,
                format!("expected 2 comma-separated fields, got `{line}`"),
            ));
        };
        let time: f64 = match t.parse() {
            Ok(v) => v,
            // A non-numeric first data line is the header.
            Err(_) if !seen_data && frames.is_empty() && s.parse::<f64>().is_err() => {
                seen_data = true;
                continue;
            }
            Err(_) => return Err((lineno, format!("bad arrival time `{t}`"))),
        };
        seen_data = true;
        if !time.is_finite() || time < 0.0 {
            return Err((lineno, format!("bad arrival time `{t}`")));
        }
        let size: u32 = match s.parse() {
            Ok(v) if v > 0 => v,
            _ => return Err((lineno, format!("bad frame size `{s}`"))),
        };
        if time < last {
            return Err((
                lineno,
                format!("timestamp {time} decreases (previous {last})"),
            ));
        }
        last = time;
        frames.push(Frame {
            arrival_time: time,
            size,
        });
    }
    Ok(Trace { frames })
}

/// Exact moments of a generated traffic spec.
pub fn theoretical_stats(spec: &TrafficSpec, params: &EeeParams) -> Result<TrafficStats> {
    match spec {
        TrafficSpec::Generated { arrival, sizes } => {
            spec.validate()?;
            Ok(TrafficStats::new(
                arrival.lambda(),
                params.service_rate(sizes.mean()),
                arrival.variance(),
                sizes.service_variance(params),
            )?)
        }
        TrafficSpec::Trace(_) => Err(TrafficError::TraceMoments),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA_5G: f64 = 0.4166667;

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = xs.collect();
        mean_and_variance(&v)
    }

    fn gaps(spec: &TrafficSpec, n: usize) -> Vec<f64> {
        let mut prev = 0.0;
        spec.stream(7)
            .unwrap()
            .take(n)
            .map(|f| {
                let g = f.arrival_time - prev;
                prev = f.arrival_time;
                g
            })
            .collect()
    }

    #[test]
    fn poisson_mean_interarrival() {
        let spec = TrafficSpec::poisson(LAMBDA_5G, SizeDistribution::Fixed(1500));
        let (mean, _) = moments(gaps(&spec, 1_000_000).into_iter());
        assert!((mean / 2.4 - 1.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn pareto_moments() {
        assert_relative_eq!(pareto_scale(2.5, LAMBDA_5G), 1.44, epsilon = 1e-6);
        let spec = TrafficSpec::pareto(2.5, LAMBDA_5G, SizeDistribution::Fixed(1500));
        let (mean, var) = moments(gaps(&spec, 1_000_000).into_iter());
        assert!((mean / 2.4 - 1.0).abs() < 0.01, "{mean}");
        // x_m² α / ((α-1)² (α-2)) = 4.608 µs²
        assert!((var / 4.608 - 1.0).abs() < 0.05, "{var}");
        assert!(gaps(&spec, 1000).iter().all(|&g| g >= 1.44 - 1e-6));
    }

    #[test]
    fn bimodal_mean_size() {
        let sizes = SizeDistribution::Bimodal {
            p_small: 0.54,
            small: 100,
            large: 1500,
        };
        assert_relative_eq!(sizes.mean(), 744.0, epsilon = 1e-9);
        let spec = TrafficSpec::poisson(LAMBDA_5G, sizes);
        let (mean, _) = moments(
            spec.stream(3)
                .unwrap()
                .take(1_000_000)
                .map(|f| f64::from(f.size)),
        );
        assert!((mean / 744.0 - 1.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn same_seed_same_frames() {
        let spec = TrafficSpec::pareto(
            2.5,
            0.3,
            SizeDistribution::Bimodal {
                p_small: 0.54,
                small: 100,
                large: 1500,
            },
        );
        let a: Vec<Frame> = spec.stream(11).unwrap().take(1000).collect();
        let b: Vec<Frame> = spec.stream(11).unwrap().take(1000).collect();
        let c: Vec<Frame> = spec.stream(12).unwrap().take(1000).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(TrafficSpec::pareto(2.0, 0.3, SizeDistribution::Fixed(1500))
            .validate()
            .is_err());
        assert!(TrafficSpec::poisson(0.0, SizeDistribution::Fixed(1500))
            .validate()
            .is_err());
        assert!(TrafficSpec::poisson(0.1, SizeDistribution::Fixed(40))
            .validate()
            .is_err());
        assert!(TrafficSpec::poisson(
            0.1,
            SizeDistribution::Bimodal {
                p_small: 1.5,
                small: 100,
                large: 1500
            }
        )
        .validate()
        .is_err());
    }

    #[test]
    fn bit_rate_round_trip() {
        let sizes = SizeDistribution::Bimodal {
            p_small: 0.54,
            small: 100,
            large: 1500,
        };
        let spec = TrafficSpec::at_bit_rate(ArrivalProcess::Poisson { lambda: 1.0 }, sizes, 3e9);
        assert_relative_eq!(spec.bit_rate(), 3e9, max_relative = 1e-12);
    }

    #[test]
    fn theoretical_moments() {
        let p = EeeParams::default();
        let s = theoretical_stats(
            &TrafficSpec::poisson(LAMBDA_5G, SizeDistribution::Fixed(1500)),
            &p,
        )
        .unwrap();
        assert_relative_eq!(s.lambda, LAMBDA_5G);
        assert_relative_eq!(s.mu, 1.0 / 1.2, max_relative = 1e-12);
        assert_relative_eq!(s.var_interarrival, 5.76, epsilon = 1e-5);
        assert_eq!(s.var_service, 0.0);

        let s = theoretical_stats(
            &TrafficSpec::pareto(2.5, LAMBDA_5G, SizeDistribution::Fixed(1500)),
            &p,
        )
        .unwrap();
        assert_relative_eq!(s.var_interarrival, 4.608, epsilon = 1e-3);

        let bimodal = SizeDistribution::Bimodal {
            p_small: 0.54,
            small: 100,
            large: 1500,
        };
        let s = theoretical_stats(&TrafficSpec::poisson(0.2, bimodal), &p).unwrap();
        assert_relative_eq!(
            s.var_service,
            0.54 * 0.46 * 1.12 * 1.12,
            max_relative = 1e-12
        );
        assert_relative_eq!(s.var_service, 0.3115, epsilon = 1e-4);

        let trace = TrafficSpec::Trace(Arc::new(Trace { frames: vec![] }));
        assert!(matches!(
            theoretical_stats(&trace, &p),
            Err(TrafficError::TraceMoments)
        ));
    }

    #[test]
    fn trace_parsing() {
        let t = parse_trace("0.0,1500\n2.4,1500\n4.8,1500\n").unwrap();
        assert_eq!(t.frames.len(), 3);
        let s = t.summary();
        assert_eq!(s.bytes, 4500);
        assert_relative_eq!(s.mean_rate_bps, 5e9, max_relative = 1e-12);

        let empty = parse_trace("").unwrap();
        assert_eq!(
            empty.summary(),
            TraceSummary {
                frames: 0,
                bytes: 0,
                mean_rate_bps: 0.0
            }
        );

        let err = parse_trace("abc,1500\n").unwrap_err();
        assert_eq!(err.0, 1);

        let t = parse_trace(
            "# capture 1\r\narrival_time_us,frame_size_bytes\r\n1.5,64\r\n\r\n3,1518\r\n",
        )
        .unwrap();
        assert_eq!(
            t.frames,
            vec![
                Frame {
                    arrival_time: 1.5,
                    size: 64
                },
                Frame {
                    arrival_time: 3.0,
                    size: 1518
                }
            ]
        );

        assert_eq!(parse_trace("1,100\n0.5,100\n").unwrap_err().0, 2);
        assert_eq!(parse_trace("1,100\n2,0\n").unwrap_err().0, 2);
        assert_eq!(parse_trace("1,100,7\n").unwrap_err().0, 1);
        assert_eq!(parse_trace("1,100\nx,y\n").unwrap_err().0, 2);
    }

    #[test]
    fn replay_stream_ends() {
        let t = Arc::new(parse_trace("0,100\n1,200\n").unwrap());
        let frames: Vec<Frame> = TrafficSpec::Trace(t).stream(0).unwrap().collect();
        assert_eq!(frames.len(), 2);
    }
}
