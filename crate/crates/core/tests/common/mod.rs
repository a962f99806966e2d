#![allow(dead_code)]

use eee_core::traffic::{ArrivalProcess, SizeDistribution};
use eee_core::{EeeParams, TrafficSpec, TrafficStats};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub const FULL_FRAME: SizeDistribution = SizeDistribution::Fixed(1500);

pub fn poisson(rate_gbps: f64) -> TrafficSpec {
    TrafficSpec::at_bit_rate(
        ArrivalProcess::Poisson { lambda: 1.0 },
        FULL_FRAME,
        rate_gbps * 1e9,
    )
}

pub fn pareto_bimodal(rate_gbps: f64) -> TrafficSpec {
    TrafficSpec::at_bit_rate(
        ArrivalProcess::Pareto {
            alpha: 2.5,
            lambda: 1.0,
        },
        SizeDistribution::Bimodal {
            p_small: 0.54,
            small: 100,
            large: 1500,
        },
        rate_gbps * 1e9,
    )
}

/// Poisson arrivals of 1500 B frames at `rate_gbps`, in frames/µs.
pub fn lambda_of(rate_gbps: f64) -> f64 {
    rate_gbps * 1e9 / 12_000.0 / 1e6
}

pub fn stats(rate_gbps: f64) -> TrafficStats {
    let mu = EeeParams::default().service_rate(1500.0);
    TrafficStats::poisson_deterministic(lambda_of(rate_gbps), mu).unwrap()
}

/// Monte-Carlo estimate of E[(X − ts)^+] for X ~ Erlang(q, lambda), with
/// its standard error.
///
/// Samples come from an Erlang with the rate tilted so its mean sits at
/// q/lambda + ts, which keeps most samples past `ts` even when the event
/// is rare under the original law; each sample carries the likelihood
/// ratio back to the original rate.
pub fn erlang_excess_mc(q: u32, lambda: f64, ts: f64, samples: usize, seed: u64) -> (f64, f64) {
    let tilted = f64::from(q) / (f64::from(q) / lambda + ts);
    let gamma = Gamma::new(f64::from(q), 1.0 / tilted).unwrap();
    let log_ratio = f64::from(q) * (lambda / tilted).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x: f64 = gamma.sample(&mut rng);
        let excess = x - ts;
        if excess > 0.0 {
            let v = excess * (log_ratio - (lambda - tilted) * x).exp();
            sum += v;
            sum_sq += v * v;
        }
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}
