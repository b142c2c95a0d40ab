//! LET exchange protocols over the simulated network.

mod direct;
mod graph;
mod hsdx;
mod hypercube;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use graph::{build_comm_graph, build_neighbors, nb_bound, two_hop_count, CommGraph, NeighborSet};
pub use hsdx::HsdxPlan;

use crate::error::{Error, Result};
use crate::fmm::{evaluate, EvalStats, Particle, SourceForest, TraversalConfig, Tree};
use crate::lettree::{extract_essential, graft, list_wire_bytes, LetCellMsg, RemoteTarget};
use crate::partition::Partition;
use crate::simnet::{self, CostModel, MessageRecord, SimConfig, StepMetrics, Tag, Wire};
use crate::space::Box3;

pub const TAG_META: Tag = 1;
pub const TAG_PAYLOAD: Tag = 2;
/// Sizing message per neighbor pair.
pub const META_BYTES: usize = 16;
/// Cell count and flags preceding the cells of a payload packet.
pub const ENVELOPE_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    BulkAlltoall,
    /// Cells per message.
    Granular(usize),
    Hypercube,
    Nbx,
    Hsdx,
}

impl ProtocolKind {
    pub fn name(&self) -> String {
        match self {
            Self::BulkAlltoall => "bulk".into(),
            Self::Granular(g) => format!("granular:{g}"),
            Self::Hypercube => "hypercube".into(),
            Self::Nbx => "nbx".into(),
            Self::Hsdx => "hsdx".into(),
        }
    }

    /// All five protocols; the granular one with `grain`.
    pub fn all(grain: usize) -> [ProtocolKind; 5] {
        [Self::BulkAlltoall, Self::Granular(grain), Self::Hypercube, Self::Nbx, Self::Hsdx]
    }

    pub fn validate(&self, ranks: usize) -> Result<()> {
        match self {
            Self::Granular(0) => Err(Error::invalid("grain must be at least 1 cell per message")),
            Self::Hypercube if !ranks.is_power_of_two() => {
                Err(Error::Unsupported(format!("hypercube exchange needs a power-of-two rank count, got {ranks}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(&self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;
    /// `bulk`, `granular:<g>`, `hypercube`, `nbx` or `hsdx`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bulk" | "bulk-alltoall" | "alltoall" => Ok(Self::BulkAlltoall),
            "hypercube" => Ok(Self::Hypercube),
            "nbx" => Ok(Self::Nbx),
            "hsdx" => Ok(Self::Hsdx),
            "granular" => Ok(Self::Granular(DEFAULT_GRAIN)),
            other => match other.strip_prefix("granular:") {
                Some(g) => g.parse().map(Self::Granular).map_err(|_| Error::invalid(format!("bad grain in `{other}`"))),
                None => Err(Error::invalid(format!(
                    "unknown protocol `{other}` (expected bulk, granular:<g>, hypercube, nbx or hsdx)"
                ))),
            },
        }
    }
}

pub const DEFAULT_GRAIN: usize = 16;

/// One origin's cells inside a payload packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub origin: u32,
    pub cells: Vec<LetCellMsg>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    /// Announces the byte size of the payload that follows.
    Meta(u64),
    Cells {
        blocks: Vec<Block>,
        last: bool,
    },
}

impl Wire for Packet {
    fn wire_bytes(&self) -> usize {
        match self {
            Packet::Meta(_) => META_BYTES,
            Packet::Cells { blocks, .. } => {
                ENVELOPE_BYTES + blocks.iter().map(|b| list_wire_bytes(&b.cells)).sum::<usize>()
            }
        }
    }
}

/// Work units for consuming one received cell: one far-field use of its
/// coefficients, plus a few per payload particle.
pub fn consume_work(cell: &LetCellMsg) -> u64 {
    cell.multipole.len() as u64 + 4 * cell.particles.as_ref().map_or(0, |p| p.len() as u64)
}

/// Per-rank trees, bounds and sender-side essential lists for one decomposition.
#[derive(Debug, Clone)]
pub struct LetProblem {
    pub cfg: TraversalConfig,
    pub trees: Vec<Tree>,
    /// Tight particle bounds, the extraction target of each rank.
    pub bounds: Vec<Box3>,
    /// Extraction descriptor of each rank, as gathered by every sender.
    pub targets: Vec<RemoteTarget>,
    /// Subdomain boxes used for adjacency.
    pub domains: Vec<Box3>,
    pub epsilon: f64,
    /// `outgoing[s][d]`: cells of rank `s` that rank `d` needs.
    pub outgoing: Vec<Vec<Vec<LetCellMsg>>>,
}

impl LetProblem {
    pub fn new(parts: &[Partition], cfg: &TraversalConfig) -> Result<Self> {
        cfg.validate()?;
        if parts.is_empty() {
            return Err(Error::invalid("no partitions"));
        }
        let trees: Vec<Tree> = parts
            .par_iter()
            .map(|p| {
                let mut t = Tree::build(p.particles.clone(), p.tree_bounds, *cfg)?;
                t.upward_pass();
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let bounds: Vec<Box3> = parts.iter().map(|p| p.bounds).collect();
        let targets: Vec<RemoteTarget> = trees
            .iter()
            .zip(&bounds)
            .map(|(t, b)| RemoteTarget::of_tree(t).unwrap_or_else(|| RemoteTarget::from(*b)))
            .collect();
        let domains: Vec<Box3> = parts.iter().map(|p| p.domain).collect();
        let global = domains.iter().skip(1).fold(domains[0], |a, b| a.union(b));
        let epsilon = 1e-9 * global.diagonal();
        let n = parts.len();
        let outgoing = (0..n)
            .into_par_iter()
            .map(|s| {
                (0..n)
                    .map(|d| {
                        if s == d {
                            Vec::new()
                        } else {
                            extract_essential(&trees[s], s as u32, &targets[d], cfg.theta)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(LetProblem { cfg: *cfg, trees, bounds, targets, domains, epsilon, outgoing })
    }

    pub fn ranks(&self) -> usize {
        self.trees.len()
    }

    pub fn ncoef(&self) -> usize {
        self.trees[0].ncoef()
    }

    /// Bytes of essential cells sent over all pairs, without envelopes.
    pub fn total_let_bytes(&self) -> u64 {
        self.outgoing.iter().flatten().map(|l| list_wire_bytes(l) as u64).sum()
    }

    pub fn total_let_cells(&self) -> usize {
        self.outgoing.iter().flatten().map(Vec::len).sum()
    }

    /// Received essential trees as the senders produced them.
    pub fn direct_delivery(&self) -> Vec<BTreeMap<u32, Vec<LetCellMsg>>> {
        (0..self.ranks())
            .map(|d| (0..self.ranks()).filter(|&s| s != d).map(|s| (s as u32, self.outgoing[s][d].clone())).collect())
            .collect()
    }

    /// Graft what each rank received and evaluate its particles; returns all
    /// particles in id order and summed statistics.
    pub fn evaluate(&self, received: &[BTreeMap<u32, Vec<LetCellMsg>>]) -> Result<(Vec<Particle>, EvalStats)> {
        if received.len() != self.ranks() {
            return Err(Error::invalid("one received set per rank expected"));
        }
        self.evaluate_with(|r| Ok(graft(&self.trees[r], r as u32, &received[r])?.forest))
    }

    /// Each rank's targets against the complete trees of every rank, no network.
    pub fn evaluate_full(&self) -> Result<(Vec<Particle>, EvalStats)> {
        self.evaluate_with(|r| {
            let mut f = SourceForest::from_tree(&self.trees[r], r as u32);
            for (s, t) in self.trees.iter().enumerate() {
                if s != r {
                    f.add_tree(t, s as u32);
                }
            }
            Ok(f)
        })
    }

    fn evaluate_with(
        &self,
        forest: impl Fn(usize) -> Result<SourceForest> + Sync,
    ) -> Result<(Vec<Particle>, EvalStats)> {
        let parts: Vec<(Vec<Particle>, EvalStats)> = (0..self.ranks())
            .into_par_iter()
            .map(|r| {
                let f = forest(r)?;
                let mut t = self.trees[r].clone();
                let stats = evaluate(&mut t, &f, &self.cfg)?;
                Ok((t.particles, stats))
            })
            .collect::<Result<_>>()?;
        let mut stats = EvalStats::default();
        let mut all = Vec::new();
        for (ps, s) in parts {
            stats.m2l += s.m2l;
            stats.p2p_cells += s.p2p_cells;
            stats.p2p_pairs += s.p2p_pairs;
            stats.coincident += s.coincident;
            stats.uncovered += s.uncovered;
            all.extend(ps);
        }
        all.sort_by_key(|p| p.id);
        Ok((all, stats))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExchangeOptions {
    pub sim: SimConfig,
    /// Record the hypercube holding sets after every step.
    pub trace_hypercube: bool,
}

/// `(origin, destination)` pairs of data a rank holds or has received.
pub type HoldingSet = BTreeSet<(u32, u32)>;

#[derive(Debug, Clone)]
pub struct ExchangeOutput {
    pub protocol: ProtocolKind,
    /// Per rank, the cells received from each origin in parent-before-child order.
    pub received: Vec<BTreeMap<u32, Vec<LetCellMsg>>>,
    pub steps: Vec<StepMetrics>,
    pub log: Vec<MessageRecord>,
    /// Per rank, holding sets after each hypercube step.
    pub hypercube_trace: Option<Vec<Vec<HoldingSet>>>,
}

impl ExchangeOutput {
    pub fn messages(&self) -> u64 {
        self.steps.iter().map(|s| s.messages).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.bytes).sum()
    }

    pub fn supersteps(&self) -> usize {
        self.steps.len()
    }

    pub fn communication_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.messages > 0).count()
    }

    /// Supersteps that carried payload packets.
    pub fn payload_steps(&self) -> usize {
        self.log.iter().filter(|m| m.tag == TAG_PAYLOAD).map(|m| m.step).collect::<BTreeSet<_>>().len()
    }

    /// Payload bytes per superstep that carried any.
    pub fn payload_bytes_by_step(&self) -> Vec<(usize, u64)> {
        let mut m: BTreeMap<usize, u64> = BTreeMap::new();
        for r in self.log.iter().filter(|m| m.tag == TAG_PAYLOAD) {
            *m.entry(r.step).or_insert(0) += r.bytes;
        }
        m.into_iter().collect()
    }

    /// Messages whose receiver is not adjacent to the sender.
    pub fn non_neighbor_messages(&self, neighbors: &[NeighborSet]) -> usize {
        self.log.iter().filter(|m| !neighbors[m.from].contains(m.to)).count()
    }

    pub fn cost(&self, model: &CostModel) -> simnet::CostBreakdown {
        simnet::cost_breakdown(&self.steps, model)
    }

    /// Sorted `(origin, level, key)` triples received by each rank.
    pub fn received_keys(&self) -> Vec<Vec<(u32, u8, u64)>> {
        self.received
            .iter()
            .map(|by| {
                let mut v: Vec<_> =
                    by.iter().flat_map(|(&o, cells)| cells.iter().map(move |c| (o, c.key.level, c.key.key))).collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

pub fn exchange(kind: ProtocolKind, problem: &LetProblem, opts: &ExchangeOptions) -> Result<ExchangeOutput> {
    let p = problem.ranks();
    kind.validate(p)?;
    let mut trace = None;
    let out = match kind {
        ProtocolKind::BulkAlltoall => direct::run(problem, usize::MAX, false, &opts.sim)?,
        ProtocolKind::Granular(g) => direct::run(problem, g, false, &opts.sim)?,
        ProtocolKind::Nbx => direct::run(problem, usize::MAX, true, &opts.sim)?,
        ProtocolKind::Hypercube => {
            let (o, t) = hypercube::run(problem, opts.trace_hypercube, &opts.sim)?;
            trace = t;
            o
        }
        ProtocolKind::Hsdx => {
            let plan = HsdxPlan::new(&problem.domains, problem.epsilon)?;
            hsdx::run(problem, &plan, &opts.sim)?
        }
    };
    Ok(ExchangeOutput { protocol: kind, received: out.results, steps: out.steps, log: out.log, hypercube_trace: trace })
}

/// One row of a grain sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrainRow {
    pub grain: usize,
    pub messages: u64,
    pub bytes: u64,
    pub modeled_cost: f64,
    pub overlap_units: u64,
}

/// Run the granular exchange once per grain.
pub fn sweep_grain(problem: &LetProblem, grains: &[usize], model: &CostModel) -> Result<Vec<GrainRow>> {
    model.validate()?;
    let opts = ExchangeOptions { sim: model.sim_config(), ..Default::default() };
    grains
        .iter()
        .map(|&g| {
            let out = exchange(ProtocolKind::Granular(g), problem, &opts)?;
            let c = out.cost(model);
            Ok(GrainRow {
                grain: g,
                messages: out.messages(),
                bytes: out.bytes(),
                modeled_cost: c.total,
                overlap_units: c.overlap_units,
            })
        })
        .collect()
}

/// `1, 2, 4, ...` up to and including the largest per-pair cell count.
pub fn default_grains(problem: &LetProblem) -> Vec<usize> {
    let total = problem.outgoing.iter().flatten().map(Vec::len).max().unwrap_or(1).max(1);
    let mut g = vec![];
    let mut x = 1;
    while x < total {
        g.push(x);
        x *= 2;
    }
    g.push(total);
    g
}

/// Shared receive bookkeeping: appends blocks to the per-origin lists.
fn absorb(into: &mut BTreeMap<u32, Vec<LetCellMsg>>, origin: u32, cells: Vec<LetCellMsg>) -> u64 {
    let work = cells.iter().map(consume_work).sum();
    into.entry(origin).or_default().extend(cells);
    work
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{grid_partition, partition, PartitionScheme, SchemeKind};
    use crate::space::{generate, Distribution, DistributionKind};

    fn problem(n: usize, ranks: usize, kind: DistributionKind) -> LetProblem {
        let ps = generate(&Distribution { kind, n, seed: 11 }).unwrap();
        let parts = partition(&ps, &PartitionScheme::new(SchemeKind::HybridOrb, ranks)).unwrap();
        LetProblem::new(&parts, &TraversalConfig { n_leaf: 16, ..Default::default() }).unwrap()
    }

    fn grid_problem(n: usize, k: usize) -> LetProblem {
        let ps = generate(&Distribution { kind: DistributionKind::UniformCube, n, seed: 12 }).unwrap();
        let parts = grid_partition(&ps, k).unwrap();
        LetProblem::new(&parts, &TraversalConfig { n_leaf: 16, ..Default::default() }).unwrap()
    }

    #[test]
    fn parse_protocols() {
        assert_eq!("granular:8".parse::<ProtocolKind>().unwrap(), ProtocolKind::Granular(8));
        assert_eq!("hsdx".parse::<ProtocolKind>().unwrap(), ProtocolKind::Hsdx);
        assert!("granular:x".parse::<ProtocolKind>().is_err());
        assert!("smoke".parse::<ProtocolKind>().is_err());
        for k in ProtocolKind::all(3) {
            assert_eq!(k.name().parse::<ProtocolKind>().unwrap(), k);
        }
    }

    #[test]
    fn single_rank_sends_nothing() {
        let pr = problem(200, 1, DistributionKind::UniformCube);
        for kind in ProtocolKind::all(4) {
            let out = exchange(kind, &pr, &ExchangeOptions::default()).unwrap();
            assert_eq!(out.messages(), 0, "{kind}");
            assert!(out.received[0].is_empty());
        }
    }

    #[test]
    fn hypercube_rejects_six_ranks() {
        let pr = problem(600, 6, DistributionKind::UniformCube);
        assert!(matches!(
            exchange(ProtocolKind::Hypercube, &pr, &ExchangeOptions::default()),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            exchange(ProtocolKind::Granular(0), &pr, &ExchangeOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn all_protocols_deliver_the_sender_lists() {
        let pr = problem(3000, 8, DistributionKind::SphereSurface);
        let expect = pr.direct_delivery();
        for kind in ProtocolKind::all(5) {
            let out = exchange(kind, &pr, &ExchangeOptions::default()).unwrap();
            assert_eq!(out.received, expect, "{kind}");
        }
    }

    #[test]
    fn hypercube_is_a_butterfly() {
        let pr = problem(2000, 8, DistributionKind::UniformCube);
        let out = exchange(ProtocolKind::Hypercube, &pr, &ExchangeOptions::default()).unwrap();
        assert_eq!(out.payload_steps(), 3);
        for step in 1..=3 {
            for r in 0..8 {
                let sent: Vec<_> = out.log.iter().filter(|m| m.step == step && m.from == r).collect();
                assert_eq!(sent.len(), 1);
                assert_eq!(sent[0].to, r ^ (1 << (step - 1)));
            }
        }
    }

    #[test]
    fn granular_extremes() {
        let pr = problem(2000, 4, DistributionKind::SphereVolume);
        let bulk = exchange(ProtocolKind::BulkAlltoall, &pr, &ExchangeOptions::default()).unwrap();
        let biggest = pr.outgoing.iter().flatten().map(Vec::len).max().unwrap();
        let agg = exchange(ProtocolKind::Granular(biggest), &pr, &ExchangeOptions::default()).unwrap();
        assert_eq!(agg.steps, bulk.steps);
        let fine = exchange(ProtocolKind::Granular(1), &pr, &ExchangeOptions::default()).unwrap();
        assert_eq!(fine.messages() as usize, pr.total_let_cells());
        // bytes differ only by one envelope per message
        let cells = pr.total_let_bytes();
        assert_eq!(fine.bytes(), cells + ENVELOPE_BYTES as u64 * fine.messages());
        assert_eq!(bulk.bytes(), cells + ENVELOPE_BYTES as u64 * bulk.messages());
    }

    #[test]
    fn nbx_has_a_sizing_round() {
        let pr = problem(1500, 4, DistributionKind::UniformCube);
        let out = exchange(ProtocolKind::Nbx, &pr, &ExchangeOptions::default()).unwrap();
        assert_eq!(out.communication_steps(), 2);
        assert_eq!(out.messages(), 2 * 12);
        assert!(out.log.iter().filter(|m| m.tag == TAG_META).all(|m| m.bytes == META_BYTES as u64));
    }

    #[test]
    fn hsdx_on_grids() {
        for k in [2usize, 3] {
            let pr = grid_problem(4000, k);
            let plan = HsdxPlan::new(&pr.domains, pr.epsilon).unwrap();
            let out = exchange(ProtocolKind::Hsdx, &pr, &ExchangeOptions::default()).unwrap();
            assert_eq!(out.payload_steps(), k - 1);
            assert_eq!(out.supersteps(), 2 * (k - 1) + 1);
            assert_eq!(out.non_neighbor_messages(&plan.neighbors), 0);
            assert_eq!(out.received, pr.direct_delivery());
        }
    }

    #[test]
    fn distributed_matches_complete_trees() {
        let pr = problem(2500, 4, DistributionKind::SphereSurface);
        let (full, _) = pr.evaluate_full().unwrap();
        let out = exchange(ProtocolKind::Hsdx, &pr, &ExchangeOptions::default()).unwrap();
        let (dist, stats) = pr.evaluate(&out.received).unwrap();
        assert_eq!(stats.uncovered, 0);
        for (a, b) in dist.iter().zip(&full) {
            assert_eq!(a.id, b.id);
            assert!((a.phi - b.phi).abs() <= 1e-12 * b.phi.abs());
        }
    }

    #[test]
    fn grain_sweep_rows() {
        let pr = problem(2000, 4, DistributionKind::UniformCube);
        let grains = default_grains(&pr);
        let rows = sweep_grain(&pr, &grains, &CostModel::default()).unwrap();
        assert_eq!(rows.len(), grains.len());
        assert!(rows.windows(2).all(|w| w[1].messages <= w[0].messages));
    }
}
