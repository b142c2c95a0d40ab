//! Sweep the granular protocol's cells-per-message over powers of two and
//! print the modeled cost curve.
//!
//! cargo run --release --example grain_sweep -- [n] [ranks] [dist]

use fmmlab::fmm::TraversalConfig;
use fmmlab::partition::{partition, PartitionScheme, SchemeKind};
use fmmlab::protocols::{default_grains, sweep_grain, LetProblem};
use fmmlab::simnet::CostModel;
use fmmlab::space::{generate, Distribution, DistributionKind};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let ranks: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let kind: DistributionKind = args.get(2).map_or(Ok(DistributionKind::UniformCube), |s| s.parse())?;

    let particles = generate(&Distribution { kind, n, seed: 3 })?;
    let parts = partition(&particles, &PartitionScheme::new(SchemeKind::HybridOrb, ranks))?;
    let problem = LetProblem::new(&parts, &TraversalConfig::default())?;
    let pair_bytes: Vec<usize> = problem
        .outgoing
        .iter()
        .flatten()
        .filter(|l| !l.is_empty())
        .map(|l| fmmlab::lettree::list_wire_bytes(l))
        .collect();
    println!(
        "per-pair volume: min {} max {} bytes",
        pair_bytes.iter().min().unwrap_or(&0),
        pair_bytes.iter().max().unwrap_or(&0)
    );

    let model = CostModel::default();
    let rows = sweep_grain(&problem, &default_grains(&problem), &model)?;
    let best = rows.iter().min_by(|a, b| a.modeled_cost.total_cmp(&b.modeled_cost)).expect("rows");
    println!("{:>6} {:>8} {:>10} {:>12} {:>8}", "grain", "msgs", "bytes", "cost", "overlap");
    for r in &rows {
        let mark = if r.grain == best.grain { " <" } else { "" };
        println!(
            "{:>6} {:>8} {:>10} {:>12.0} {:>8}{mark}",
            r.grain, r.messages, r.bytes, r.modeled_cost, r.overlap_units
        );
    }
    Ok(())
}
