use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmmlab::partition::SchemeKind;
use fmmlab::runner::{self, ExperimentConfig, ProtocolChoice, Recipe, RecipeOutput};
use fmmlab::space::DistributionKind;
use fmmlab::Error;

#[derive(Parser)]
#[command(name = "fmmlab", version, about = "Distributed FMM tree exchange on a simulated network")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline once and verify it.
    Solve(Overrides),
    /// Run a named experiment and write its tables.
    Recipe {
        /// boundary-weakness, grain-sweep or protocol-faceoff
        name: Recipe,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Per-rank counts, boxes, neighbor counts and connected components.
    PartitionReport(Overrides),
}

/// Every flag also reads `FMMLAB_<NAME>` from the environment.
#[derive(Args)]
struct Overrides {
    /// TOML file with base settings; flags win over it.
    #[arg(long, env = "FMMLAB_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "FMMLAB_N")]
    n: Option<usize>,
    #[arg(long, env = "FMMLAB_DIST")]
    dist: Option<DistributionKind>,
    #[arg(long, env = "FMMLAB_RANKS")]
    ranks: Option<usize>,
    #[arg(long, env = "FMMLAB_SCHEME")]
    scheme: Option<SchemeKind>,
    #[arg(long, env = "FMMLAB_PROTOCOL")]
    protocol: Option<ProtocolChoice>,
    #[arg(long, env = "FMMLAB_GRAIN")]
    grain: Option<usize>,
    #[arg(long, env = "FMMLAB_ORDER")]
    order: Option<usize>,
    #[arg(long, env = "FMMLAB_THETA")]
    theta: Option<f64>,
    #[arg(long, env = "FMMLAB_LEAF")]
    leaf: Option<usize>,
    #[arg(long, env = "FMMLAB_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "FMMLAB_EPSILON")]
    epsilon: Option<f64>,
    #[arg(long, env = "FMMLAB_OUT")]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(self) -> fmmlab::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidArgument(format!("reading {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(n, dist, ranks, scheme, protocol, grain, order, theta, leaf, seed, out);
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Unsupported(_) => 2,
        Error::Verification(_) => 3,
        _ => 1,
    }
}

fn execute(cmd: Cmd) -> Result<(), (Error, Option<ExperimentConfig>)> {
    match cmd {
        Cmd::Solve(o) => {
            let cfg = o.resolve().map_err(|e| (e, None))?;
            let s = runner::run_solve(&cfg).map_err(|e| (e, Some(cfg.clone())))?;
            println!(
                "{} ranks={} scheme={} n={}: messages={} bytes={} supersteps={} cost={:.0}",
                s.protocol, s.ranks, s.scheme, s.n, s.messages, s.bytes, s.supersteps, s.modeled_cost
            );
            println!(
                "balance {}..{}  error vs direct {:.3e} ({} targets)  max diff vs complete trees {:.1e}",
                s.min_count, s.max_count, s.error, s.error_targets, s.equivalence
            );
            if !s.verified() {
                let msg = format!(
                    "distributed result differs from the complete-tree evaluation ({:.1e}, {} uncovered)",
                    s.equivalence, s.uncovered
                );
                return Err((Error::Verification(msg), Some(cfg)));
            }
            println!("wrote {}", cfg.out.display());
        }
        Cmd::Recipe { name, cfg } => {
            let cfg = cfg.resolve().map_err(|e| (e, None))?;
            match runner::run_recipe(name, &cfg).map_err(|e| (e, Some(cfg.clone())))? {
                RecipeOutput::BoundaryWeakness { totals, .. } => {
                    for t in totals {
                        println!(
                            "{:<12} LET bytes {:>12}  split ranks {:>3}  max components {}",
                            t.scheme, t.let_bytes, t.split_ranks, t.max_components
                        );
                    }
                }
                RecipeOutput::GrainSweep(rows) => {
                    for r in rows {
                        println!("grain {:>6}  messages {:>8}  cost {:>12.0}", r.grain, r.messages, r.modeled_cost);
                    }
                }
                RecipeOutput::ProtocolFaceoff(rows) => {
                    for r in rows {
                        println!(
                            "{:<12} messages {:>7}  bytes {:>11}  steps {:>3}  cost {:>12.0}  non-neighbor {}",
                            r.protocol, r.messages, r.bytes, r.supersteps, r.modeled_cost, r.non_neighbor_messages
                        );
                    }
                }
            }
            for f in RecipeOutput::file_names(name) {
                println!("wrote {}", cfg.out.join(f).display());
            }
        }
        Cmd::PartitionReport(o) => {
            let cfg = o.resolve().map_err(|e| (e, None))?;
            let rows = runner::run_partition_report(&cfg).map_err(|e| (e, Some(cfg.clone())))?;
            println!("rank  count  neighbors  components");
            for r in rows {
                println!("{:>4} {:>6} {:>10} {:>11}", r.rank, r.count, r.neighbors, r.components);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, cfg)) => {
            eprintln!("error: {e}");
            if let Some(cfg) = cfg {
                eprintln!("--- config ---\n{}", cfg.to_toml());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
