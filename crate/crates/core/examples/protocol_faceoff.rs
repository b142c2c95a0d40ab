//! All five exchange protocols on one problem: traffic, supersteps, modeled
//! cost, and messages sent to non-adjacent ranks.
//!
//! cargo run --release --example protocol_faceoff -- [n] [ranks] [scheme]

use fmmlab::runner::{compute_recipe, ExperimentConfig, Recipe, RecipeOutput};

fn main() -> fmmlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = ExperimentConfig {
        n: args.first().and_then(|s| s.parse().ok()).unwrap_or(50_000),
        ranks: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64),
        scheme: args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(ExperimentConfig::default().scheme),
        ..Default::default()
    };
    let RecipeOutput::ProtocolFaceoff(rows) = compute_recipe(Recipe::ProtocolFaceoff, &cfg)? else { unreachable!() };
    println!("n = {}, ranks = {}, scheme = {}", cfg.n, cfg.ranks, cfg.scheme);
    println!(
        "{:<12} {:>8} {:>12} {:>6} {:>8} {:>12} {:>12}",
        "protocol", "msgs", "bytes", "steps", "payload", "cost", "non-nbr msgs"
    );
    for r in rows {
        println!(
            "{:<12} {:>8} {:>12} {:>6} {:>8} {:>12.0} {:>12}",
            r.protocol, r.messages, r.bytes, r.supersteps, r.payload_steps, r.modeled_cost, r.non_neighbor_messages
        );
    }
    Ok(())
}
