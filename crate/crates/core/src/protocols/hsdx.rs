//! Hierarchical sparse exchange: data moves only between adjacent ranks,
//! following each destination's relay tree one level per stage. Every stage
//! is a sizing superstep to all neighbors followed by a payload superstep.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::graph::{build_comm_graph, build_neighbors, CommGraph, NeighborSet};
use super::{absorb, Block, LetProblem, Packet, TAG_META, TAG_PAYLOAD};
use crate::error::{Error, Result};
use crate::lettree::{reextract, union_subtrees, LetCellMsg};
use crate::simnet::{self, RankCtx, RankProgram, RunOutput, SimConfig, Status, Wire};
use crate::space::Box3;

/// Adjacency plus one relay tree per destination.
#[derive(Debug, Clone)]
pub struct HsdxPlan {
    pub neighbors: Vec<NeighborSet>,
    /// `graphs[d]` routes data toward rank `d`.
    pub graphs: Vec<CommGraph>,
    /// `paths[d][s]`: ranks from `s` to `d` inclusive.
    paths: Vec<Vec<Vec<usize>>>,
}

impl HsdxPlan {
    pub fn new(domains: &[Box3], epsilon: f64) -> Result<Self> {
        let neighbors = build_neighbors(domains, epsilon)?;
        let graphs: Vec<CommGraph> =
            (0..domains.len()).into_par_iter().map(|d| build_comm_graph(&neighbors, d)).collect::<Result<_>>()?;
        let paths = graphs.iter().map(|g| (0..domains.len()).map(|s| g.path(s)).collect()).collect();
        Ok(HsdxPlan { neighbors, graphs, paths })
    }

    /// Number of stages: the deepest relay tree.
    pub fn stages(&self) -> usize {
        self.graphs.iter().map(CommGraph::depth).max().unwrap_or(0)
    }

    /// Rank holding flow `origin -> dest` after `hops` hops.
    fn hop(&self, origin: usize, dest: usize, hops: usize) -> Option<usize> {
        self.paths[dest][origin].get(hops).copied()
    }
}

struct Flows {
    /// `None` for the rank's own tree.
    cells: Option<Vec<LetCellMsg>>,
    dests: Vec<usize>,
}

struct Hsdx<'a> {
    problem: &'a LetProblem,
    plan: &'a HsdxPlan,
    stages: usize,
    held: BTreeMap<u32, Flows>,
    outbound: BTreeMap<usize, Vec<Block>>,
    announced: BTreeMap<usize, u64>,
    received: BTreeMap<u32, Vec<LetCellMsg>>,
}

impl Hsdx<'_> {
    fn absorb_stage(&mut self, ctx: &mut RankCtx<Packet>, stage: usize) -> Result<()> {
        let me = ctx.rank();
        let mut arrived: BTreeMap<usize, u64> = BTreeMap::new();
        let mut by_origin: BTreeMap<u32, Vec<LetCellMsg>> = BTreeMap::new();
        for (from, pkt) in ctx.recv_all(TAG_PAYLOAD) {
            *arrived.entry(from).or_insert(0) += pkt.wire_bytes() as u64;
            let Packet::Cells { blocks, .. } = pkt else {
                return Err(Error::protocol(format!("rank {me}: sizing message on the payload tag")));
            };
            for b in blocks {
                let cur = by_origin.remove(&b.origin).unwrap_or_default();
                by_origin.insert(b.origin, union_subtrees(cur, b.cells));
            }
        }
        let announced: BTreeMap<usize, u64> =
            std::mem::take(&mut self.announced).into_iter().filter(|&(_, b)| b > 0).collect();
        if announced != arrived {
            return Err(Error::protocol(format!(
                "rank {me} stage {stage}: announced sizes {announced:?} but received {arrived:?}"
            )));
        }
        let theta = self.problem.cfg.theta;
        let mut work = 0;
        for (origin, cells) in by_origin {
            let o = origin as usize;
            let mut dests = Vec::new();
            let mut mine = false;
            for d in 0..ctx.size() {
                if d != o && self.plan.hop(o, d, stage) == Some(me) {
                    if d == me {
                        mine = true;
                    } else {
                        dests.push(d);
                    }
                }
            }
            if dests.is_empty() && !mine {
                return Err(Error::protocol(format!(
                    "rank {me} stage {stage}: data of origin {origin} has no route through this rank"
                )));
            }
            if mine {
                let own = reextract(&cells, &self.problem.targets[me], theta)?;
                work += absorb(&mut self.received, origin, own);
            }
            if !dests.is_empty() {
                self.held.insert(origin, Flows { cells: Some(cells), dests });
            }
        }
        ctx.record_work(work);
        Ok(())
    }

    /// Group every held flow by next hop, reduced to what its destinations need.
    fn prepare(&mut self, me: usize, stage: usize) -> Result<()> {
        let theta = self.problem.cfg.theta;
        let mut out: BTreeMap<usize, BTreeMap<u32, Vec<LetCellMsg>>> = BTreeMap::new();
        for (&origin, f) in &self.held {
            let o = origin as usize;
            for &d in &f.dests {
                let w = self
                    .plan
                    .hop(o, d, stage)
                    .ok_or_else(|| Error::protocol(format!("flow {o} -> {d} has no hop {stage}")))?;
                if !self.plan.neighbors[me].contains(w) {
                    return Err(Error::protocol(format!("rank {me}: next hop {w} toward {d} is not a neighbor")));
                }
                let cells = match &f.cells {
                    None => self.problem.outgoing[me][d].clone(),
                    Some(c) => reextract(c, &self.problem.targets[d], theta)?,
                };
                let slot = out.entry(w).or_default().entry(origin).or_default();
                *slot = union_subtrees(std::mem::take(slot), cells);
            }
        }
        self.held.clear();
        self.outbound = out
            .into_iter()
            .map(|(w, m)| (w, m.into_iter().map(|(origin, cells)| Block { origin, cells }).collect()))
            .collect();
        Ok(())
    }
}

impl RankProgram<Packet> for Hsdx<'_> {
    type Output = BTreeMap<u32, Vec<LetCellMsg>>;

    fn step(&mut self, ctx: &mut RankCtx<Packet>) -> Result<Status> {
        let me = ctx.rank();
        let s = ctx.step();
        if s % 2 == 1 {
            let stage = s.div_ceil(2);
            if stage >= 2 {
                self.absorb_stage(ctx, stage - 1)?;
            }
            if stage > self.stages {
                if !self.held.is_empty() {
                    return Err(Error::protocol(format!("rank {me} still holds undelivered flows")));
                }
                return Ok(Status::Done);
            }
            self.prepare(me, stage)?;
            for &w in &self.plan.neighbors[me].neighbors {
                let bytes = self
                    .outbound
                    .get(&w)
                    .map_or(0, |blocks| Packet::Cells { blocks: blocks.clone(), last: true }.wire_bytes() as u64);
                ctx.send(w, TAG_META, Packet::Meta(bytes));
            }
            Ok(Status::Continue)
        } else {
            for (from, pkt) in ctx.recv_all(TAG_META) {
                let Packet::Meta(b) = pkt else {
                    return Err(Error::protocol(format!("rank {me}: payload on the sizing tag")));
                };
                self.announced.insert(from, b);
            }
            for (w, blocks) in std::mem::take(&mut self.outbound) {
                ctx.send(w, TAG_PAYLOAD, Packet::Cells { blocks, last: true });
            }
            Ok(Status::Continue)
        }
    }

    fn finish(self) -> Self::Output {
        self.received
    }
}

pub(super) fn run(
    problem: &LetProblem,
    plan: &HsdxPlan,
    sim: &SimConfig,
) -> Result<RunOutput<BTreeMap<u32, Vec<LetCellMsg>>>> {
    let p = problem.ranks();
    let stages = plan.stages();
    let programs = (0..p)
        .map(|r| {
            let dests: Vec<usize> = (0..p).filter(|&d| d != r).collect();
            let mut held = BTreeMap::new();
            if !dests.is_empty() {
                held.insert(r as u32, Flows { cells: None, dests });
            }
            Hsdx {
                problem,
                plan,
                stages,
                held,
                outbound: BTreeMap::new(),
                announced: BTreeMap::new(),
                received: BTreeMap::new(),
            }
        })
        .collect();
    simnet::run(programs, sim)
}
