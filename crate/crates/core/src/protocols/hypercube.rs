//! Butterfly exchange: at step `i` every rank swaps with `rank ^ 2^i`
//! everything it holds for destinations on the partner's side of bit `i`.

use std::collections::{BTreeMap, BTreeSet};

use super::{absorb, Block, HoldingSet, LetProblem, Packet, TAG_PAYLOAD};
use crate::error::{Error, Result};
use crate::lettree::{reextract, union_subtrees, LetCellMsg};
use crate::simnet::{self, RankCtx, RankProgram, RunOutput, SimConfig, Status};

struct Held {
    /// `None` for the rank's own tree, whose per-destination lists are precomputed.
    cells: Option<Vec<LetCellMsg>>,
    dests: BTreeSet<usize>,
}

struct Cube<'a> {
    problem: &'a LetProblem,
    bits: u32,
    held: BTreeMap<u32, Held>,
    received: BTreeMap<u32, Vec<LetCellMsg>>,
    trace: Option<Vec<HoldingSet>>,
}

impl Cube<'_> {
    fn cells_for(&self, me: usize, origin: u32, h: &Held, d: usize) -> Result<Vec<LetCellMsg>> {
        match &h.cells {
            None => Ok(self.problem.outgoing[me][d].clone()),
            Some(c) => reextract(c, &self.problem.targets[d], self.problem.cfg.theta)
                .map_err(|e| Error::protocol(format!("rank {me} relaying origin {origin} to {d}: {e}"))),
        }
    }

    fn holding(&self, me: usize) -> HoldingSet {
        let mut s: HoldingSet =
            self.held.iter().flat_map(|(&o, h)| h.dests.iter().map(move |&d| (o, d as u32))).collect();
        s.extend(self.received.keys().map(|&o| (o, me as u32)));
        s
    }
}

impl RankProgram<Packet> for Cube<'_> {
    type Output = (BTreeMap<u32, Vec<LetCellMsg>>, Option<Vec<HoldingSet>>);

    fn step(&mut self, ctx: &mut RankCtx<Packet>) -> Result<Status> {
        let me = ctx.rank();
        let s = ctx.step();
        if s >= 2 {
            let i = (s - 2) as u32;
            let partner = me ^ (1 << i);
            let mask = (1usize << (i + 1)) - 1;
            let mut work = 0;
            while let Some(pkt) = ctx.recv(partner, TAG_PAYLOAD) {
                let Packet::Cells { blocks, .. } = pkt else {
                    return Err(Error::protocol("hypercube received a sizing message"));
                };
                for b in blocks {
                    let origin = b.origin as usize;
                    let mut dests: BTreeSet<usize> =
                        (0..ctx.size()).filter(|&d| d != origin && (d ^ me) & mask == 0).collect();
                    if dests.remove(&me) {
                        let mine = reextract(&b.cells, &self.problem.targets[me], self.problem.cfg.theta)?;
                        work += absorb(&mut self.received, b.origin, mine);
                    }
                    if !dests.is_empty() {
                        if self.held.contains_key(&b.origin) {
                            return Err(Error::protocol(format!("rank {me} got origin {origin} twice by step {i}")));
                        }
                        self.held.insert(b.origin, Held { cells: Some(b.cells), dests });
                    }
                }
            }
            ctx.record_work(work);
            if self.trace.is_some() {
                let h = self.holding(me);
                if let Some(t) = self.trace.as_mut() {
                    t.push(h);
                }
            }
        }
        if s as u32 > self.bits {
            return Ok(Status::Done);
        }
        let i = (s - 1) as u32;
        let partner = me ^ (1 << i);
        let bit = (me >> i) & 1;
        let mut blocks = Vec::new();
        let origins: Vec<u32> = self.held.keys().copied().collect();
        for o in origins {
            let h = &self.held[&o];
            let forward: Vec<usize> = h.dests.iter().copied().filter(|d| (d >> i) & 1 != bit).collect();
            if forward.is_empty() {
                continue;
            }
            let mut cells = Vec::new();
            for &d in &forward {
                cells = union_subtrees(cells, self.cells_for(me, o, h, d)?);
            }
            blocks.push(Block { origin: o, cells });
            let h = self.held.get_mut(&o).expect("present");
            for d in forward {
                h.dests.remove(&d);
            }
            if h.dests.is_empty() {
                self.held.remove(&o);
            }
        }
        ctx.send(partner, TAG_PAYLOAD, Packet::Cells { blocks, last: true });
        Ok(Status::Continue)
    }

    fn finish(self) -> Self::Output {
        (self.received, self.trace)
    }
}

type CubeRun = (RunOutput<BTreeMap<u32, Vec<LetCellMsg>>>, Option<Vec<Vec<HoldingSet>>>);

pub(super) fn run(problem: &LetProblem, trace: bool, sim: &SimConfig) -> Result<CubeRun> {
    let p = problem.ranks();
    let bits = p.trailing_zeros();
    let programs = (0..p)
        .map(|r| {
            let dests: BTreeSet<usize> = (0..p).filter(|&d| d != r).collect();
            let mut held = BTreeMap::new();
            if !dests.is_empty() {
                held.insert(r as u32, Held { cells: None, dests });
            }
            Cube { problem, bits, held, received: BTreeMap::new(), trace: trace.then(Vec::new) }
        })
        .collect();
    let out = simnet::run(programs, sim)?;
    let mut traces = Vec::with_capacity(p);
    let mut results = Vec::with_capacity(p);
    for (r, t) in out.results {
        results.push(r);
        traces.extend(t);
    }
    let traces = trace.then_some(traces);
    Ok((RunOutput { results, steps: out.steps, log: out.log }, traces))
}
