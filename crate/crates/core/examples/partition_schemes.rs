//! Compare the four partitioning schemes on one distribution: balance,
//! spatial connectivity of each rank's particles, and LET volume.
//!
//! cargo run --release --example partition_schemes -- [n] [ranks] [dist] [seed]

use fmmlab::fmm::TraversalConfig;
use fmmlab::partition::{connectivity_components, default_linking_length, partition, PartitionScheme, SchemeKind};
use fmmlab::protocols::LetProblem;
use fmmlab::space::{generate, Distribution, DistributionKind};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let ranks: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let kind: DistributionKind = args.get(2).map_or(Ok(DistributionKind::SphereSurface), |s| s.parse())?;
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let particles = generate(&Distribution { kind, n, seed })?;
    let link = default_linking_length(&particles);
    println!("n = {n}, ranks = {ranks}, linking length = {link:.4}");
    println!("{:>12} {:>7} {:>7} {:>10} {:>10} {:>14}", "scheme", "min", "max", "split", "max comp", "LET bytes");
    for scheme in SchemeKind::ALL {
        let parts = partition(&particles, &PartitionScheme::new(scheme, ranks))?;
        let counts: Vec<usize> = parts.iter().map(|p| p.count).collect();
        let comps = parts.iter().map(|p| connectivity_components(p, link)).collect::<fmmlab::Result<Vec<_>>>()?;
        let problem = LetProblem::new(&parts, &TraversalConfig::default())?;
        println!(
            "{:>12} {:>7} {:>7} {:>10} {:>10} {:>14}",
            scheme.name(),
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap(),
            comps.iter().filter(|&&c| c > 1).count(),
            comps.iter().max().unwrap(),
            problem.total_let_bytes()
        );
    }
    Ok(())
}
