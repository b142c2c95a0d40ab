//! Relay trees on a k^3 grid of ranks: levels, per-neighbor relay load
//! against the averaging bound, and the path of a far corner.
//!
//! cargo run --release --example hsdx_comm_graph -- [k] [owner]

use fmmlab::partition::grid_partition;
use fmmlab::protocols::{build_comm_graph, build_neighbors, nb_bound, two_hop_count};
use fmmlab::space::{generate, Distribution, DistributionKind};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let k: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let owner: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(k * k * k / 2);

    let particles = generate(&Distribution { kind: DistributionKind::UniformCube, n: 40 * k * k * k, seed: 3 })?;
    let parts = grid_partition(&particles, k)?;
    let domains: Vec<_> = parts.iter().map(|p| p.domain).collect();
    let neighbors = build_neighbors(&domains, 1e-9)?;
    let g = build_comm_graph(&neighbors, owner)?;

    let zeta = neighbors[owner].neighbors.len() + 1;
    let tau = two_hop_count(&neighbors, owner);
    println!("{} ranks, owner {owner}: {} direct neighbors, two-hop neighborhood {tau}", parts.len(), zeta - 1);
    println!("averaging bound on second-stage relays per neighbor: {}", nb_bound(tau, zeta)?);
    for (l, level) in g.levels.iter().enumerate() {
        let counts = g.relay_counts(l + 1);
        let max = counts.values().max().copied().unwrap_or(0);
        println!("stage {}: {:>3} ranks, most forwarded through one neighbor = {max}", l + 1, level.len());
    }
    let far = (0..parts.len()).max_by_key(|&r| (g.level_of[r], r)).unwrap_or(owner);
    println!("path from rank {far}: {:?}", g.path(far));
    Ok(())
}
