//! Serial FMM on a sphere-surface distribution, checked against direct summation.
//!
//! cargo run --release --example serial_fmm -- [n] [p] [theta]

use std::time::Instant;

use fmmlab::fmm::{direct_sum, relative_l2_error, solve_serial, TraversalConfig};
use fmmlab::space::{generate, Distribution, DistributionKind};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let p: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let theta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let cfg = TraversalConfig { theta, n_leaf: 64, p };

    let particles = generate(&Distribution { kind: DistributionKind::SphereSurface, n, seed: 7 })?;

    let t0 = Instant::now();
    let (solved, stats) = solve_serial(particles.clone(), &cfg)?;
    let t_fmm = t0.elapsed();

    let t0 = Instant::now();
    let exact = direct_sum(&particles, &particles);
    let t_direct = t0.elapsed();

    let approx: Vec<f64> = solved.iter().map(|p| p.phi).collect();
    println!("n = {n}, p = {p}, theta = {theta}");
    println!("m2l = {}, p2p cell pairs = {}, p2p particle pairs = {}", stats.m2l, stats.p2p_cells, stats.p2p_pairs);
    println!("fmm {:.3?}, direct {:.3?}", t_fmm, t_direct);
    println!("relative L2 error = {:.3e}", relative_l2_error(&approx, &exact.phi));
    Ok(())
}
