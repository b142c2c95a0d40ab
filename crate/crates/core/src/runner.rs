//! End-to-end pipelines: generate, partition, build, exchange, evaluate and
//! verify, with CSV output and a TOML echo of the configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmm::{direct_sum, max_relative_difference, relative_l2_error, Particle, TraversalConfig};
use crate::partition::{
    connectivity_components, default_linking_length, partition, Partition, PartitionScheme, SchemeKind,
};
use crate::protocols::{
    default_grains, exchange, sweep_grain, ExchangeOptions, ExchangeOutput, GrainRow, HsdxPlan, LetProblem,
    ProtocolKind,
};
use crate::simnet::{write_metrics_csv, CostModel};
use crate::space::{generate, Distribution, DistributionKind};

/// Relative tolerance for distributed results against the complete-tree oracle.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
/// Targets checked against direct summation above the oracle cap.
pub const ORACLE_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolChoice {
    Bulk,
    Granular,
    Hypercube,
    Nbx,
    Hsdx,
}

impl std::str::FromStr for ProtocolChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bulk" | "bulk-alltoall" | "alltoall" => Ok(Self::Bulk),
            "granular" => Ok(Self::Granular),
            "hypercube" => Ok(Self::Hypercube),
            "nbx" => Ok(Self::Nbx),
            "hsdx" => Ok(Self::Hsdx),
            other => Err(Error::invalid(format!(
                "unknown protocol `{other}` (expected bulk, granular, hypercube, nbx or hsdx)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    BoundaryWeakness,
    GrainSweep,
    ProtocolFaceoff,
}

impl std::str::FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary-weakness" => Ok(Self::BoundaryWeakness),
            "grain-sweep" => Ok(Self::GrainSweep),
            "protocol-faceoff" => Ok(Self::ProtocolFaceoff),
            other => Err(Error::invalid(format!(
                "unknown recipe `{other}` (expected boundary-weakness, grain-sweep or protocol-faceoff)"
            ))),
        }
    }
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Self::BoundaryWeakness => "boundary-weakness",
            Self::GrainSweep => "grain-sweep",
            Self::ProtocolFaceoff => "protocol-faceoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub dist: DistributionKind,
    pub seed: u64,
    pub ranks: usize,
    pub scheme: SchemeKind,
    pub protocol: ProtocolChoice,
    /// Cells per message for the granular protocol.
    pub grain: usize,
    /// Expansion order.
    pub order: usize,
    pub theta: f64,
    pub leaf: usize,
    /// Adjacency tolerance; defaults to 1e-9 of the domain diagonal.
    pub epsilon: Option<f64>,
    pub cost: CostModel,
    /// Largest `n` checked against a full direct sum.
    pub oracle_cap: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 10_000,
            dist: DistributionKind::SphereSurface,
            seed: 1,
            ranks: 8,
            scheme: SchemeKind::HybridOrb,
            protocol: ProtocolChoice::Hsdx,
            grain: crate::protocols::DEFAULT_GRAIN,
            order: 4,
            theta: 0.4,
            leaf: 64,
            epsilon: None,
            cost: CostModel::default(),
            oracle_cap: 20_000,
            out: PathBuf::from("fmmlab-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn traversal(&self) -> TraversalConfig {
        TraversalConfig { theta: self.theta, n_leaf: self.leaf, p: self.order }
    }

    pub fn protocol_kind(&self) -> ProtocolKind {
        match self.protocol {
            ProtocolChoice::Bulk => ProtocolKind::BulkAlltoall,
            ProtocolChoice::Granular => ProtocolKind::Granular(self.grain),
            ProtocolChoice::Hypercube => ProtocolKind::Hypercube,
            ProtocolChoice::Nbx => ProtocolKind::Nbx,
            ProtocolChoice::Hsdx => ProtocolKind::Hsdx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.ranks == 0 {
            return Err(Error::invalid("ranks must be at least 1"));
        }
        if self.n < self.ranks {
            return Err(Error::invalid(format!(
                "n = {} is smaller than ranks = {}; every rank needs a particle",
                self.n, self.ranks
            )));
        }
        if self.order > 16 {
            return Err(Error::invalid(format!("order {} is above the supported maximum of 16", self.order)));
        }
        if self.grain == 0 {
            return Err(Error::invalid("grain must be at least 1"));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("epsilon must be finite and nonnegative, got {e}")));
            }
        }
        self.traversal().validate()?;
        self.cost.validate()?;
        self.protocol_kind().validate(self.ranks)
    }

    fn particles(&self) -> Result<Vec<Particle>> {
        generate(&Distribution { kind: self.dist, n: self.n, seed: self.seed })
    }

    fn problem(&self, parts: &[Partition]) -> Result<LetProblem> {
        let mut pr = LetProblem::new(parts, &self.traversal())?;
        if let Some(e) = self.epsilon {
            pr.epsilon = e;
        }
        Ok(pr)
    }

    fn exchange_options(&self) -> ExchangeOptions {
        ExchangeOptions { sim: self.cost.sim_config(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub n: usize,
    pub ranks: usize,
    pub scheme: SchemeKind,
    pub protocol: String,
    pub messages: u64,
    pub bytes: u64,
    pub supersteps: usize,
    pub modeled_cost: f64,
    pub overlap_units: u64,
    pub min_count: usize,
    pub max_count: usize,
    /// Relative L2 error against direct summation.
    pub error: f64,
    /// Targets the error was measured on.
    pub error_targets: usize,
    /// Largest per-particle difference from the complete-tree evaluation.
    pub equivalence: f64,
    pub uncovered: usize,
}

impl SolveSummary {
    pub fn verified(&self) -> bool {
        self.uncovered == 0 && self.equivalence <= EQUIVALENCE_TOLERANCE
    }
}

/// Potentials of the full pipeline, in id order, plus the run's summary.
pub fn solve(cfg: &ExperimentConfig) -> Result<(Vec<Particle>, SolveSummary)> {
    let (particles, parts, problem, out) = pipeline(cfg)?;
    let (summary, solved) = summarize(cfg, &particles, &parts, &problem, &out)?;
    Ok((solved, summary))
}

fn pipeline(cfg: &ExperimentConfig) -> Result<(Vec<Particle>, Vec<Partition>, LetProblem, ExchangeOutput)> {
    cfg.validate()?;
    let particles = cfg.particles()?;
    let parts = partition(&particles, &PartitionScheme::new(cfg.scheme, cfg.ranks))?;
    let problem = cfg.problem(&parts)?;
    let out = exchange(cfg.protocol_kind(), &problem, &cfg.exchange_options())?;
    Ok((particles, parts, problem, out))
}

/// Error against direct summation: all targets up to the cap, a fixed
/// sample above it.
fn direct_error(particles: &[Particle], phi: &[f64], cfg: &ExperimentConfig) -> Result<(f64, usize)> {
    let targets: Vec<usize> = if particles.len() <= cfg.oracle_cap {
        (0..particles.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0dac_1e55);
        let mut t = sample(&mut rng, particles.len(), ORACLE_SAMPLE).into_vec();
        t.sort_unstable();
        t
    };
    let sel: Vec<Particle> = targets.iter().map(|&i| particles[i]).collect();
    let exact = direct_sum(&sel, particles);
    let approx: Vec<f64> = targets.iter().map(|&i| phi[i]).collect();
    Ok((relative_l2_error(&approx, &exact.phi), targets.len()))
}

/// Run the pipeline and write `solve.csv`, `solve_steps.csv` and `solve.toml` under `cfg.out`.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<SolveSummary> {
    let (particles, parts, problem, out) = pipeline(cfg)?;
    let (summary, _) = summarize(cfg, &particles, &parts, &problem, &out)?;
    fs::create_dir_all(&cfg.out)?;
    write_rows(&cfg.out.join("solve.csv"), std::slice::from_ref(&summary))?;
    write_metrics_csv(&out.steps, fs::File::create(cfg.out.join("solve_steps.csv"))?)?;
    write_echo(&cfg.out.join("solve.toml"), cfg)?;
    Ok(summary)
}

fn summarize(
    cfg: &ExperimentConfig,
    particles: &[Particle],
    parts: &[Partition],
    problem: &LetProblem,
    out: &ExchangeOutput,
) -> Result<(SolveSummary, Vec<Particle>)> {
    let (solved, stats) = problem.evaluate(&out.received)?;
    let (reference, _) = problem.evaluate_full()?;
    let phi: Vec<f64> = solved.iter().map(|p| p.phi).collect();
    let ref_phi: Vec<f64> = reference.iter().map(|p| p.phi).collect();
    let (error, error_targets) = direct_error(particles, &phi, cfg)?;
    let cost = out.cost(&cfg.cost);
    let summary = SolveSummary {
        n: cfg.n,
        ranks: cfg.ranks,
        scheme: cfg.scheme,
        protocol: cfg.protocol_kind().name(),
        messages: out.messages(),
        bytes: out.bytes(),
        supersteps: out.supersteps(),
        modeled_cost: cost.total,
        overlap_units: cost.overlap_units,
        min_count: parts.iter().map(|p| p.count).min().unwrap_or(0),
        max_count: parts.iter().map(|p| p.count).max().unwrap_or(0),
        error,
        error_targets,
        equivalence: max_relative_difference(&phi, &ref_phi),
        uncovered: stats.uncovered,
    };
    Ok((summary, solved))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub scheme: SchemeKind,
    pub rank: usize,
    pub count: usize,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeTotals {
    pub scheme: SchemeKind,
    pub let_bytes: u64,
    pub let_cells: usize,
    pub split_ranks: usize,
    pub max_components: usize,
    pub linking_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceoffRow {
    pub protocol: String,
    pub messages: u64,
    pub bytes: u64,
    pub supersteps: usize,
    pub payload_steps: usize,
    pub modeled_cost: f64,
    pub overlap_units: u64,
    pub non_neighbor_messages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecipeOutput {
    BoundaryWeakness { ranks: Vec<ComponentRow>, totals: Vec<SchemeTotals> },
    GrainSweep(Vec<GrainRow>),
    ProtocolFaceoff(Vec<FaceoffRow>),
}

impl RecipeOutput {
    /// Files written by [`run_recipe`], relative to the output directory.
    pub fn file_names(recipe: Recipe) -> Vec<String> {
        let base = recipe.name();
        match recipe {
            Recipe::BoundaryWeakness => {
                vec![format!("{base}_ranks.csv"), format!("{base}_totals.csv"), format!("{base}.toml")]
            }
            _ => vec![format!("{base}.csv"), format!("{base}.toml")],
        }
    }
}

/// Compute a recipe without touching the file system.
pub fn compute_recipe(recipe: Recipe, cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    cfg.validate()?;
    match recipe {
        Recipe::BoundaryWeakness => boundary_weakness(cfg),
        Recipe::GrainSweep => {
            let particles = cfg.particles()?;
            let parts = partition(&particles, &PartitionScheme::new(cfg.scheme, cfg.ranks))?;
            let problem = cfg.problem(&parts)?;
            Ok(RecipeOutput::GrainSweep(sweep_grain(&problem, &default_grains(&problem), &cfg.cost)?))
        }
        Recipe::ProtocolFaceoff => {
            let particles = cfg.particles()?;
            let parts = partition(&particles, &PartitionScheme::new(cfg.scheme, cfg.ranks))?;
            let problem = cfg.problem(&parts)?;
            let plan = HsdxPlan::new(&problem.domains, problem.epsilon)?;
            let opts = cfg.exchange_options();
            let mut rows = Vec::new();
            for kind in ProtocolKind::all(cfg.grain) {
                if kind.validate(cfg.ranks).is_err() {
                    continue;
                }
                let out = exchange(kind, &problem, &opts)?;
                let c = out.cost(&cfg.cost);
                rows.push(FaceoffRow {
                    protocol: kind.name(),
                    messages: out.messages(),
                    bytes: out.bytes(),
                    supersteps: out.supersteps(),
                    payload_steps: out.payload_steps(),
                    modeled_cost: c.total,
                    overlap_units: c.overlap_units,
                    non_neighbor_messages: out.non_neighbor_messages(&plan.neighbors),
                });
            }
            Ok(RecipeOutput::ProtocolFaceoff(rows))
        }
    }
}

/// Sphere surface, HotHilbert against HybridOrb at the configured rank count.
fn boundary_weakness(cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    let particles = generate(&Distribution { kind: DistributionKind::SphereSurface, n: cfg.n, seed: cfg.seed })?;
    let link = default_linking_length(&particles);
    let mut ranks = Vec::new();
    let mut totals = Vec::new();
    for scheme in [SchemeKind::HotHilbert, SchemeKind::HybridOrb] {
        let parts = partition(&particles, &PartitionScheme::new(scheme, cfg.ranks))?;
        let mut split = 0;
        let mut max_c = 0;
        for p in &parts {
            let c = connectivity_components(p, link)?;
            split += usize::from(c > 1);
            max_c = max_c.max(c);
            ranks.push(ComponentRow { scheme, rank: p.rank, count: p.count, components: c });
        }
        let problem = cfg.problem(&parts)?;
        totals.push(SchemeTotals {
            scheme,
            let_bytes: problem.total_let_bytes(),
            let_cells: problem.total_let_cells(),
            split_ranks: split,
            max_components: max_c,
            linking_length: link,
        });
    }
    Ok(RecipeOutput::BoundaryWeakness { ranks, totals })
}

/// Compute a recipe and write its CSV files and config echo under `cfg.out`.
pub fn run_recipe(recipe: Recipe, cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    let out = compute_recipe(recipe, cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let names = RecipeOutput::file_names(recipe);
    match &out {
        RecipeOutput::BoundaryWeakness { ranks, totals } => {
            write_rows(&cfg.out.join(&names[0]), ranks)?;
            write_rows(&cfg.out.join(&names[1]), totals)?;
        }
        RecipeOutput::GrainSweep(rows) => write_rows(&cfg.out.join(&names[0]), rows)?,
        RecipeOutput::ProtocolFaceoff(rows) => write_rows(&cfg.out.join(&names[0]), rows)?,
    }
    write_echo(&cfg.out.join(names.last().expect("echo name")), cfg)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub rank: usize,
    pub count: usize,
    pub min_x: f64,
    pub min_y: f64,
    pub min_z: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub max_z: f64,
    pub neighbors: usize,
    pub components: usize,
}

pub fn partition_report(cfg: &ExperimentConfig) -> Result<Vec<PartitionRow>> {
    cfg.validate()?;
    let particles = cfg.particles()?;
    let parts = partition(&particles, &PartitionScheme::new(cfg.scheme, cfg.ranks))?;
    let link = default_linking_length(&particles);
    let global = parts.iter().skip(1).fold(parts[0].domain, |a, p| a.union(&p.domain));
    let eps = cfg.epsilon.unwrap_or(1e-9 * global.diagonal());
    let domains: Vec<_> = parts.iter().map(|p| p.domain).collect();
    let neighbors = if parts.len() > 1 {
        crate::protocols::build_neighbors(&domains, eps)?.into_iter().map(|s| s.neighbors.len()).collect()
    } else {
        vec![0]
    };
    parts
        .iter()
        .zip(neighbors)
        .map(|(p, nb)| {
            Ok(PartitionRow {
                rank: p.rank,
                count: p.count,
                min_x: p.bounds.min[0],
                min_y: p.bounds.min[1],
                min_z: p.bounds.min[2],
                max_x: p.bounds.max[0],
                max_y: p.bounds.max[1],
                max_z: p.bounds.max[2],
                neighbors: nb,
                components: connectivity_components(p, link)?,
            })
        })
        .collect()
}

/// Writes `partition-report.csv` and its config echo.
pub fn run_partition_report(cfg: &ExperimentConfig) -> Result<Vec<PartitionRow>> {
    let rows = partition_report(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    write_rows(&cfg.out.join("partition-report.csv"), &rows)?;
    write_echo(&cfg.out.join("partition-report.toml"), cfg)?;
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_echo(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::write(path, cfg.to_toml())?;
    Ok(())
}
