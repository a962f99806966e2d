//! Execution of independent simulation points.
//!
//! Points share nothing, so they can be evaluated in any order; results are
//! always returned in input order. Without the `parallel` feature every
//! strategy runs sequentially.

use crate::simcore::{self, SimConfig, SimError, SimReport};
use crate::traffic::TrafficSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// `None` uses the global rayon pool.
    Parallel(Option<usize>),
    #[default]
    Auto,
}

impl Execution {
    /// Strategy for a `--jobs` style thread count.
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(0) | None => Execution::Auto,
            Some(1) => Execution::Sequential,
            Some(n) => Execution::Parallel(Some(n)),
        }
    }
}

/// Maps `f` over `items`, keeping input order.
pub fn map_ordered<T, R, F>(items: &[T], execution: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match execution {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Auto | Execution::Parallel(None) => par_map(items, &f),
        #[cfg(feature = "parallel")]
        Execution::Parallel(Some(threads)) => {
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => pool.install(|| par_map(items, &f)),
                Err(_) => items.iter().map(f).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Auto | Execution::Parallel(_) => items.iter().map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: &F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// One simulation to run.
#[derive(Debug, Clone)]
pub struct SimPoint {
    pub traffic: TrafficSpec,
    pub config: SimConfig,
}

pub fn run_points(points: &[SimPoint], execution: Execution) -> Vec<Result<SimReport, SimError>> {
    map_ordered(points, execution, |p| simcore::run(&p.traffic, &p.config))
}

/// Per-point seed that depends only on the base seed and the offered load,
/// so every policy at a given load sees the same arrivals.
pub fn derive_seed(base: u64, rate_bps: f64) -> u64 {
    splitmix64(base ^ splitmix64(rate_bps.to_bits()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
