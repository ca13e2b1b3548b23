//! Wall-clock comparison of the naive and shift-based filtering paths.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::{d4lcn_forward_mode, DGFilterParams, FilterError, Mode};
use crate::tensor::Tensor;

pub const DEFAULT_WARMUP: usize = 3;
pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub dims: [usize; 4],
    pub k: usize,
    pub d: usize,
    pub n_f: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub naive_median_s: f64,
    pub fast_median_s: f64,
    /// Output elements per second.
    pub naive_throughput: f64,
    pub fast_throughput: f64,
    /// `naive / fast` median time.
    pub speedup: f64,
    /// Largest output difference between the two paths.
    pub max_abs_diff: f64,
}

fn median(mut v: Vec<Duration>) -> f64 {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].as_secs_f64()
    } else {
        0.5 * (v[n / 2 - 1].as_secs_f64() + v[n / 2].as_secs_f64())
    }
}

pub fn run(cfg: BenchConfig) -> Result<BenchReport, FilterError> {
    if cfg.iterations == 0 {
        return Err(FilterError::InvalidParams("at least one timed iteration is needed".into()));
    }
    let input = Tensor::random_uniform(cfg.dims, -1.0, 1.0, cfg.seed);
    let depth = Tensor::random_uniform(cfg.dims, 0.0, 2.0, cfg.seed.wrapping_add(1));
    let p = DGFilterParams::new(cfg.dims[1], cfg.k, cfg.d, cfg.n_f, cfg.seed.wrapping_add(2))?;
    let time = |mode: Mode| -> Result<(f64, Tensor), FilterError> {
        let mut out = None;
        for _ in 0..cfg.warmup {
            out = Some(d4lcn_forward_mode(&input, &depth, &p, mode)?.output);
        }
        let mut samples = Vec::with_capacity(cfg.iterations);
        for _ in 0..cfg.iterations {
            let t = Instant::now();
            let o = d4lcn_forward_mode(&input, &depth, &p, mode)?.output;
            samples.push(t.elapsed());
            out = Some(o);
        }
        Ok((median(samples), out.expect("iterations > 0")))
    };
    let (naive, a) = time(Mode::Naive)?;
    let (fast, b) = time(Mode::Fast)?;
    let elems = input.len() as f64;
    Ok(BenchReport {
        config: cfg,
        naive_median_s: naive,
        fast_median_s: fast,
        naive_throughput: elems / naive,
        fast_throughput: elems / fast,
        speedup: naive / fast,
        max_abs_diff: a.max_abs_diff(&b)?,
    })
}
