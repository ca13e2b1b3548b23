use anyhow::{Context, Result};
use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;

use dgconv::dgfilter::{
    bench as dgf_bench, d4lcn_forward_mode, dlcn_forward, gradcheck, DGFilterParams, Mode,
};
use dgconv::Tensor;

use crate::{BenchCmd, CheckCmd, Status};

fn verdict(name: &str, ok: bool) -> Status {
    println!("{name}: {}", if ok { "PASS" } else { "FAIL" });
    if ok {
        Status::Pass
    } else {
        Status::CheckFailed(name.to_string())
    }
}

pub fn run(cmd: CheckCmd) -> Result<Status> {
    match cmd {
        CheckCmd::Eq1 { seed, k, cases, tol } => {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for case in 0..cases as u64 {
                let dims = [
                    rng.random_range(1..=2),
                    rng.random_range(1..=8),
                    rng.random_range(1..=16),
                    rng.random_range(1..=16),
                ];
                let k = k.unwrap_or([1, 3, 5][rng.random_range(0..3)]);
                let base = seed.wrapping_mul(1000).wrapping_add(2 * case);
                let input = Tensor::random_uniform(dims, -1.0, 1.0, base);
                let depth = Tensor::random_uniform(dims, 0.0, 3.0, base + 1);
                let fast = dlcn_forward(&input, &depth, k, Mode::Fast)?;
                let naive = dlcn_forward(&input, &depth, k, Mode::Naive)?;
                worst = worst.max(fast.max_abs_diff(&naive)?);
            }
            println!("cases: {cases}");
            println!("max |fast - naive|: {worst:.6e}");
            println!("tolerance: {tol:e}");
            Ok(verdict("check eq1", worst <= tol))
        }
        CheckCmd::Eq2 { seed, op, cases, tol } => {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mut worst = 0.0f64;
            let mut worst_d1 = 0.0f64;
            for case in 0..cases as u64 {
                let c = rng.random_range(op.n_f.max(1)..=op.n_f.max(8));
                let dims = [
                    rng.random_range(1..=2),
                    c,
                    rng.random_range(op.d..=op.d.max(16)),
                    rng.random_range(op.d..=op.d.max(16)),
                ];
                let base = seed.wrapping_mul(1000).wrapping_add(4 * case);
                let input = Tensor::random_uniform(dims, -1.0, 1.0, base);
                let depth = Tensor::random_uniform(dims, 0.0, 3.0, base + 1);
                let mut p = DGFilterParams::new(c, op.k, op.d, op.n_f, base + 2)?;
                let bias = Tensor::random_uniform([1, 1, 1, p.conv_bias.len()], -1.0, 1.0, base + 3);
                p.conv_bias.copy_from_slice(bias.data());
                let fast = d4lcn_forward_mode(&input, &depth, &p, Mode::Fast)?.output;
                let naive = d4lcn_forward_mode(&input, &depth, &p, Mode::Naive)?.output;
                worst = worst.max(fast.max_abs_diff(&naive)?);
                let p1 = DGFilterParams::new(c, op.k, 1, 1, base + 2)?;
                let reduced = d4lcn_forward_mode(&input, &depth, &p1, Mode::Fast)?.output;
                worst_d1 = worst_d1.max(reduced.max_abs_diff(&dlcn_forward(&input, &depth, op.k, Mode::Fast)?)?);
            }
            println!("cases: {cases} (k={}, d={}, n_f={})", op.k, op.d, op.n_f);
            println!("max |fast - naive|: {worst:.6e}");
            println!("max |d=1 operator - plain filter|: {worst_d1:.6e}");
            println!("tolerance: {tol:e}");
            Ok(verdict("check eq2", worst <= tol && worst_d1 <= tol))
        }
        CheckCmd::Grad { seed, k, d, n_f, dims, instances, step, tol } => {
            let mut worst = 0.0f64;
            let mut components = 0;
            for i in 0..instances as u64 {
                let s = seed.wrapping_mul(7919).wrapping_add(10 * i);
                let (input, depth, p, up) = gradcheck::seeded_instance(s, dims, k, d, n_f)?;
                let r = gradcheck::check_gradients(&input, &depth, &p, &up, step)?;
                let groups: Vec<String> =
                    r.groups.iter().map(|g| format!("{} {:.3e}", g.group.name(), g.max_relative_error)).collect();
                println!("instance {i}: {}", groups.join(", "));
                worst = worst.max(r.max_relative_error());
                components += r.components();
            }
            println!("components: {components}");
            println!("max relative error: {worst:.6e}");
            println!("tolerance: {tol:e}");
            Ok(verdict("check grad", worst <= tol))
        }
    }
}

pub fn bench(cmd: BenchCmd) -> Result<Status> {
    let BenchCmd::Dgf { seed, op, c, h, w, iters, warmup, json } = cmd;
    let cfg = dgf_bench::BenchConfig { dims: [1, c, h, w], k: op.k, d: op.d, n_f: op.n_f, warmup, iterations: iters, seed };
    let r = dgf_bench::run(cfg).context("benchmark")?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!(
            "config: n=1 c={c} h={h} w={w} k={} d={} n_f={}; {warmup} warm-up, median of {iters}",
            op.k, op.d, op.n_f
        );
        println!("{:<8}{:>14}{:>18}", "path", "median ms", "elements/s");
        println!("{:<8}{:>14.3}{:>18.4e}", "naive", r.naive_median_s * 1e3, r.naive_throughput);
        println!("{:<8}{:>14.3}{:>18.4e}", "fast", r.fast_median_s * 1e3, r.fast_throughput);
        println!("speedup: {:.2}x", r.speedup);
        println!("max |naive - fast|: {:.3e}", r.max_abs_diff);
    }
    // timings are informative; only a disagreement between the paths fails
    if r.max_abs_diff > 1e-12 {
        return Ok(Status::CheckFailed("bench dgf: paths disagree".into()));
    }
    Ok(Status::Pass)
}
