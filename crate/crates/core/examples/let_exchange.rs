//! Partition a sphere, exchange local essential trees with every protocol and
//! compare the distributed potentials with a single-rank run.
//!
//! cargo run --release --example let_exchange -- [n] [ranks] [p] [theta]

use fmmlab::fmm::{max_relative_difference, solve_serial, TraversalConfig};
use fmmlab::partition::{partition, PartitionScheme, SchemeKind};
use fmmlab::protocols::{exchange, ExchangeOptions, LetProblem, ProtocolKind};
use fmmlab::space::{generate, Distribution, DistributionKind};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let n = arg(0, 4096.0) as usize;
    let ranks = arg(1, 8.0) as usize;
    let cfg = TraversalConfig { p: arg(2, 4.0) as usize, theta: arg(3, 0.4), n_leaf: 64 };

    let particles = generate(&Distribution { kind: DistributionKind::SphereSurface, n, seed: 1 })?;
    let parts = partition(&particles, &PartitionScheme::new(SchemeKind::HybridOrb, ranks))?;
    let problem = LetProblem::new(&parts, &cfg)?;
    println!(
        "{ranks} ranks, {} essential cells, {} bytes before envelopes",
        problem.total_let_cells(),
        problem.total_let_bytes()
    );

    let (single, _) = solve_serial(particles, &cfg)?;
    let single: Vec<f64> = single.iter().map(|p| p.phi).collect();
    let (full, _) = problem.evaluate_full()?;
    let full: Vec<f64> = full.iter().map(|p| p.phi).collect();
    println!("complete per-rank trees vs single rank: max rel diff {:.3e}", max_relative_difference(&full, &single));

    let opts = ExchangeOptions::default();
    for kind in ProtocolKind::all(16) {
        if kind.validate(ranks).is_err() {
            println!("{kind:>12}: skipped");
            continue;
        }
        let out = exchange(kind, &problem, &opts)?;
        let (solved, stats) = problem.evaluate(&out.received)?;
        let phi: Vec<f64> = solved.iter().map(|p| p.phi).collect();
        println!(
            "{kind:>12}: {:>6} msgs {:>10} bytes {:>3} steps | vs complete trees {:.1e}, vs single rank {:.1e}, uncovered {}",
            out.messages(),
            out.bytes(),
            out.supersteps(),
            max_relative_difference(&phi, &full),
            max_relative_difference(&phi, &single),
            stats.uncovered
        );
    }
    Ok(())
}
