//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use eee_core::analytic::{self, EeeParams, TrafficStats};
use eee_core::experiment::{self, ExperimentSpec, Mode, PolicyChoice};
use eee_core::policy::{PolicyConfig, ThresholdSolver};
use eee_core::simcore::{Horizon, SimConfig};
use eee_core::sweep::{derive_seed, run_points, Execution, SimPoint};
use eee_core::traffic::theoretical_stats;
use eee_core::{SimReport, TrafficSpec};

use common::{poisson, stats};

const SEED: u64 = 1;
const FRAMES: u64 = 1_000_000;
const TAUS: [f64; 3] = [16.0, 32.0, 64.0];

/// Outcome of one criterion: failures plus a one-line summary of the margins.
#[derive(Default)]
struct Verdict {
    failures: Vec<String>,
    summary: String,
}

impl Verdict {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

struct Run {
    rate_gbps: f64,
    policy: PolicyConfig,
    traffic: TrafficSpec,
    report: SimReport,
}

impl Run {
    fn stats(&self) -> TrafficStats {
        theoretical_stats(&self.traffic, &EeeParams::default()).unwrap()
    }
}

fn simulate(specs: Vec<(f64, PolicyConfig, TrafficSpec)>, keep_delays: bool) -> Vec<Run> {
    let points: Vec<SimPoint> = specs
        .iter()
        .map(|(rate, policy, traffic)| {
            let mut config = SimConfig::new(
                EeeParams::default(),
                *policy,
                Horizon::Frames(FRAMES),
                derive_seed(SEED, rate * 1e9),
            );
            config.keep_delays = keep_delays;
            SimPoint {
                traffic: traffic.clone(),
                config,
            }
        })
        .collect();
    run_points(&points, Execution::Auto)
        .into_iter()
        .zip(specs)
        .map(|(r, (rate_gbps, policy, traffic))| Run {
            rate_gbps,
            policy,
            traffic,
            report: r.unwrap_or_else(|e| panic!("{policy} at {rate_gbps} Gb/s: {e}")),
        })
        .collect()
}

fn rel(measured: f64, model: f64) -> f64 {
    measured / model - 1.0
}

fn pct(x: f64) -> String {
    format!("{:+.2}%", 100.0 * x)
}

fn dynamic(tau: f64) -> [PolicyConfig; 2] {
    [
        PolicyConfig::DynamicTimer { tau },
        PolicyConfig::DynamicSize {
            tau,
            solver: ThresholdSolver::Approx,
        },
    ]
}

fn design_points() -> Verdict {
    let p = EeeParams::default();
    let s = stats(5.0);
    let w0 = analytic::w0_exact(&s).unwrap();
    let mut v = Verdict::default();
    let v16 = analytic::optimal_timer(16.0, s.lambda, p.tw, w0, p.ts).unwrap();
    let v64 = analytic::optimal_timer(64.0, s.lambda, p.tw, w0, p.ts).unwrap();
    let q16 = analytic::optimal_threshold_approx(16.0, s.lambda, p.tw, w0)
        .unwrap()
        .round();
    let q64 = analytic::optimal_threshold_approx(64.0, s.lambda, p.tw, w0)
        .unwrap()
        .round();
    v.check((v16 - 24.0).abs() <= 0.2, || format!("V*(16) = {v16}"));
    v.check((v64 - 120.0).abs() <= 0.2, || format!("V*(64) = {v64}"));
    v.check(q16 == 12.0, || format!("Q*(16) = {q16}"));
    v.check(q64 == 52.0, || format!("Q*(64) = {q64}"));
    v.summary = format!("V* = {v16:.3}, {v64:.3} µs; Q* = {q16}, {q64}");
    v
}

fn round_trips() -> Verdict {
    let p = EeeParams::default();
    let mut v = Verdict::default();
    let (mut worst_timer, mut worst_cubic, mut n) = (0.0f64, 0.0f64, 0);
    for rate in (0..10).map(|i| 0.5 + f64::from(i)) {
        let s = stats(rate);
        let w0 = analytic::w0_exact(&s).unwrap();
        for tau in [16.0, 32.0, 64.0, 96.0, 128.0] {
            n += 1;
            match analytic::optimal_timer(tau, s.lambda, p.tw, w0, p.ts) {
                Ok(timer) => {
                    let e = rel(analytic::delay_time_based(s.lambda, timer, p.tw, w0), tau).abs();
                    worst_timer = worst_timer.max(e);
                    v.check(e < 1e-9, || {
                        format!("timer round trip {rate} Gb/s, tau {tau}: {e:e}")
                    });
                }
                Err(e) => v
                    .failures
                    .push(format!("timer at {rate} Gb/s, tau {tau}: {e}")),
            }
            match analytic::optimal_threshold_cubic(tau, s.lambda, p.tw, w0) {
                Ok(q) => {
                    let e = rel(analytic::delay_size_based_real(s.lambda, q, p.tw, w0), tau).abs();
                    worst_cubic = worst_cubic.max(e);
                    v.check(e < 1e-6, || {
                        format!("cubic round trip {rate} Gb/s, tau {tau}: {e:e}")
                    });
                }
                Err(e) => v
                    .failures
                    .push(format!("cubic at {rate} Gb/s, tau {tau}: {e}")),
            }
        }
    }
    v.summary = format!("{n} points; worst timer {worst_timer:.1e}, cubic {worst_cubic:.1e}");
    v
}

fn static_vs_model(runs: &[Run]) -> Verdict {
    let p = EeeParams::default();
    let mut v = Verdict::default();
    let (mut worst_delay, mut worst_toff, mut worst_phi) = (0.0f64, 0.0f64, 0.0f64);
    for run in runs {
        let s = run.stats();
        let r = &run.report;
        let model = match run.policy {
            PolicyConfig::StaticTimer { v } => analytic::time_based_outcome(&p, &s, v).unwrap(),
            PolicyConfig::StaticSize { qw } => analytic::size_based_outcome(&p, &s, qw).unwrap(),
            _ => continue,
        };
        let label = format!("{} at {} Gb/s", run.policy, run.rate_gbps);
        let ed = rel(r.mean_delay, model.mean_delay);
        let et = rel(r.t_off_mean, model.t_off_mean);
        worst_delay = worst_delay.max(ed.abs());
        worst_toff = worst_toff.max(et.abs());
        v.check(ed.abs() < 0.03, || {
            format!(
                "{label}: delay {:.3} vs {:.3} ({})",
                r.mean_delay,
                model.mean_delay,
                pct(ed)
            )
        });
        v.check(et.abs() < 0.02, || {
            format!(
                "{label}: T_off {:.3} vs {:.3} ({})",
                r.t_off_mean,
                model.t_off_mean,
                pct(et)
            )
        });
        if matches!(run.policy, PolicyConfig::StaticTimer { .. }) {
            let ep = rel(r.measured_phi, model.energy_ratio);
            worst_phi = worst_phi.max(ep.abs());
            v.check(ep.abs() < 0.02, || {
                format!(
                    "{label}: phi {:.4} vs {:.4} ({})",
                    r.measured_phi,
                    model.energy_ratio,
                    pct(ep)
                )
            });
        }
    }
    v.summary = format!(
        "worst delay {}, T_off {}, phi {}",
        pct(worst_delay),
        pct(worst_toff),
        pct(worst_phi)
    );
    v
}

fn gamma_oracle() -> Verdict {
    let lambda = 0.416_666_7;
    let mut v = Verdict::default();
    let mut worst = 0.0f64;
    for (i, qw) in [1u32, 2, 4, 12, 52].into_iter().enumerate() {
        for (j, x) in [0.1, 1.2, 5.0].into_iter().enumerate() {
            let ts = x / lambda;
            let exact = analytic::toff_size_based(lambda, qw, ts).unwrap();
            let (mc, _) =
                common::erlang_excess_mc(qw, lambda, ts, 1_000_000, 100 + (3 * i + j) as u64);
            let e = rel(mc, exact);
            worst = worst.max(e.abs());
            v.check(e.abs() < 0.01, || {
                format!("Q_w {qw}, λT_s {x}: {mc:.5} vs {exact:.5} ({})", pct(e))
            });
        }
    }
    v.summary = format!("15 cases, worst {}", pct(worst));
    v
}

fn tolerance(tau: f64) -> f64 {
    if tau <= 16.0 {
        0.10
    } else {
        0.05
    }
}

fn tracking(runs: &[Run], rates: std::ops::RangeInclusive<u32>) -> Verdict {
    let mut v = Verdict::default();
    let mut worst = 0.0f64;
    for run in runs {
        let Some(tau) = run.policy.target() else {
            continue;
        };
        if !rates.contains(&(run.rate_gbps as u32)) {
            continue;
        }
        let e = rel(run.report.mean_delay, tau);
        worst = worst.max(e.abs() / tolerance(tau));
        v.check(e.abs() < tolerance(tau), || {
            format!(
                "{} tau {tau} at {} Gb/s: {:.3} µs ({})",
                run.policy,
                run.rate_gbps,
                run.report.mean_delay,
                pct(e)
            )
        });
    }
    v.summary = format!("worst deviation at {:.0}% of its tolerance", 100.0 * worst);
    v
}

fn bound_dominance(runs: &[&Run]) -> Verdict {
    let p = EeeParams::default();
    let mut v = Verdict::default();
    let (mut phi_margin, mut toff_excess) = (f64::INFINITY, f64::NEG_INFINITY);
    for run in runs {
        let r = &run.report;
        let b = analytic::bound(r.mean_delay, &p, &run.stats()).unwrap();
        let label = format!("{} at {} Gb/s", run.policy, run.rate_gbps);
        phi_margin = phi_margin.min(r.measured_phi - b.energy_lower);
        v.check(r.measured_phi >= b.energy_lower - 0.01, || {
            format!(
                "{label}: phi {:.4} below bound {:.4}",
                r.measured_phi, b.energy_lower
            )
        });
        if b.t_off_upper > 0.0 {
            let e = rel(r.t_off_mean, b.t_off_upper);
            toff_excess = toff_excess.max(e);
            v.check(e <= 0.02, || {
                format!(
                    "{label}: T_off {:.3} above bound {:.3} ({})",
                    r.t_off_mean,
                    b.t_off_upper,
                    pct(e)
                )
            });
        }
    }
    v.summary = format!(
        "{} points; min phi − bound {phi_margin:+.4}, max T_off over bound {}",
        runs.len(),
        pct(toff_excess)
    );
    v
}

fn convergence(runs: &[Run]) -> Verdict {
    let p = EeeParams::default();
    let mut v = Verdict::default();
    let (mut gap, mut excess) = (0.0f64, 0.0f64);
    for g in 4..=9 {
        let pick = |timer: bool| {
            runs.iter()
                .find(|r| {
                    r.rate_gbps == f64::from(g)
                        && r.policy.target() == Some(64.0)
                        && matches!(r.policy, PolicyConfig::DynamicTimer { .. }) == timer
                })
                .unwrap()
        };
        let (t, s) = (pick(true), pick(false));
        let b = analytic::bound(64.0, &p, &t.stats()).unwrap().energy_lower;
        let d = (t.report.measured_phi - s.report.measured_phi).abs();
        gap = gap.max(d);
        v.check(d < 0.01, || {
            format!(
                "{g} Gb/s: phi {:.4} vs {:.4}",
                t.report.measured_phi, s.report.measured_phi
            )
        });
        for run in [t, s] {
            let x = run.report.measured_phi - b;
            excess = excess.max(x);
            v.check(x < 0.02, || {
                format!(
                    "{} at {g} Gb/s: phi {:.4}, bound {b:.4}",
                    run.policy, run.report.measured_phi
                )
            });
        }
    }
    v.summary = format!("max phi gap {gap:.4}, max excess over bound {excess:.4}");
    v
}

fn tails() -> Verdict {
    let runs = simulate(
        dynamic(32.0)
            .into_iter()
            .map(|pol| (3.0, pol, poisson(3.0)))
            .collect(),
        true,
    );
    let timer = runs[0].report.fraction_above(64.0).unwrap();
    let size = runs[1].report.fraction_above(64.0).unwrap();
    let mut v = Verdict::default();
    v.check(timer <= 0.01, || {
        format!("time-based fraction above 2τ is {timer:.4}")
    });
    v.check(size > timer && size >= 5.0 * timer, || {
        format!("size-based {size:.4} vs time-based {timer:.4}")
    });
    v.summary = format!("above 2τ: time-based {timer:.4}, size-based {size:.4}");
    v
}

fn pareto() -> Verdict {
    let mut specs = Vec::new();
    for tau in [32.0, 64.0] {
        for g in 2..=8 {
            let rate = f64::from(g);
            for pol in dynamic(tau) {
                specs.push((rate, pol, common::pareto_bimodal(rate)));
            }
        }
    }
    let runs = simulate(specs, false);
    let mut v = Verdict::default();
    let mut worst = 0.0f64;
    for run in &runs {
        let tau = run.policy.target().unwrap();
        let e = rel(run.report.mean_delay, tau);
        worst = worst.max(e.abs());
        v.check(e.abs() < 0.10, || {
            format!(
                "{} tau {tau} at {} Gb/s: {}",
                run.policy,
                run.rate_gbps,
                pct(e)
            )
        });
    }
    v.summary = format!("{} points, worst {}", runs.len(), pct(worst));
    v
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = |name: &str, mode: Mode| ExperimentSpec {
        mode,
        rates_bps: vec![2e9, 5e9, 8e9],
        taus: vec![16.0, 64.0],
        policies: vec![
            PolicyChoice::DynamicTimer,
            PolicyChoice::DynamicSize(ThresholdSolver::Cubic),
            PolicyChoice::Fixed(PolicyConfig::StaticTimer { v: 24.0 }),
        ],
        horizon: Horizon::Frames(100_000),
        seed: 42,
        out: dir.path().join(name),
        ..ExperimentSpec::default()
    };
    let mut v = Verdict::default();
    let mut files = 0;
    for mode in [Mode::Sweep, Mode::Cdf] {
        let (a, _) = experiment::run_experiment(&spec("a", mode), Execution::Auto).unwrap();
        let (b, _) = experiment::run_experiment(&spec("b", mode), Execution::Sequential).unwrap();
        v.check(a.len() == b.len(), || "different file sets".to_string());
        for (x, y) in a.iter().zip(&b) {
            if x.extension().is_some_and(|e| e == "conf") {
                continue;
            }
            files += 1;
            let same = fs::read(x).unwrap() == fs::read(y).unwrap();
            v.check(same, || format!("{} differs between runs", x.display()));
        }
    }
    v.summary = format!("{files} CSV files compared byte for byte");
    v
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    results.push((1, "controller design points", design_points()));
    results.push((2, "analytic round trips", round_trips()));

    let mut static_specs = Vec::new();
    for g in 1..=9 {
        let rate = f64::from(g);
        for pol in [
            PolicyConfig::StaticTimer { v: 24.0 },
            PolicyConfig::StaticSize { qw: 12 },
        ] {
            static_specs.push((rate, pol, poisson(rate)));
        }
    }
    let static_runs = simulate(static_specs, false);
    results.push((
        3,
        "static policies against the model",
        static_vs_model(&static_runs),
    ));
    results.push((4, "incomplete gamma against Monte Carlo", gamma_oracle()));

    let mut dynamic_specs = Vec::new();
    for tau in TAUS {
        let top = if tau == 64.0 { 9 } else { 8 };
        for g in 1..=top {
            let rate = f64::from(g);
            for pol in dynamic(tau) {
                dynamic_specs.push((rate, pol, poisson(rate)));
            }
        }
    }
    let dynamic_runs = simulate(dynamic_specs, false);
    results.push((5, "dynamic delay tracking", tracking(&dynamic_runs, 1..=8)));

    let bundled: Vec<&Run> = static_runs
        .iter()
        .chain(dynamic_runs.iter().filter(|r| r.rate_gbps <= 8.0))
        .collect();
    results.push((6, "bound dominance", bound_dominance(&bundled)));
    results.push((7, "convergence to the bound", convergence(&dynamic_runs)));
    results.push((8, "delay tails", tails()));
    results.push((9, "Pareto robustness", pareto()));
    results.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (n, _, verdict) in &results {
        for f in &verdict.failures {
            println!("    criterion {n}: {f}");
        }
    }
    for (n, name, verdict) in &results {
        let status = if verdict.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        if !verdict.failures.is_empty() {
            failed += 1;
        }
        println!("criterion {n:>2} {status} {name}: {}", verdict.summary);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
