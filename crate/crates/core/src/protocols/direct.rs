//! Sends straight to the true destination: bulk (one packet per pair),
//! granular (fixed-size chunks, one chunk per pair per superstep) and NBX
//! (a sizing round, then one packet per pair).

use std::collections::BTreeMap;

use super::{absorb, Block, LetProblem, Packet, TAG_META, TAG_PAYLOAD};
use crate::error::{Error, Result};
use crate::lettree::LetCellMsg;
use crate::simnet::{self, RankCtx, RankProgram, RunOutput, SimConfig, Status, Wire};

struct Direct {
    sizing: bool,
    /// Per destination, chunks not yet sent (front first).
    pending: Vec<std::collections::VecDeque<Packet>>,
    received: BTreeMap<u32, Vec<LetCellMsg>>,
    announced: BTreeMap<usize, u64>,
    arrived: BTreeMap<usize, u64>,
    complete: usize,
    expected: Option<usize>,
}

impl Direct {
    fn new(problem: &LetProblem, rank: usize, grain: usize, sizing: bool) -> Self {
        let pending = (0..problem.ranks())
            .map(|d| {
                if d == rank {
                    return Default::default();
                }
                let list = &problem.outgoing[rank][d];
                let chunks: Vec<&[LetCellMsg]> =
                    if list.is_empty() { vec![&[]] } else { list.chunks(grain.min(list.len())).collect() };
                let n = chunks.len();
                chunks
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| Packet::Cells {
                        blocks: vec![Block { origin: rank as u32, cells: c.to_vec() }],
                        last: i + 1 == n,
                    })
                    .collect()
            })
            .collect();
        Direct {
            sizing,
            pending,
            received: BTreeMap::new(),
            announced: BTreeMap::new(),
            arrived: BTreeMap::new(),
            complete: 0,
            expected: (!sizing).then(|| problem.ranks() - 1),
        }
    }
}

impl RankProgram<Packet> for Direct {
    type Output = BTreeMap<u32, Vec<LetCellMsg>>;

    fn step(&mut self, ctx: &mut RankCtx<Packet>) -> Result<Status> {
        let me = ctx.rank();
        for (from, pkt) in ctx.recv_all(TAG_META) {
            if let Packet::Meta(bytes) = pkt {
                self.announced.insert(from, bytes);
            }
        }
        if self.sizing && ctx.step() == 2 {
            // every sizing message has been delivered by now
            self.expected = Some(self.announced.len());
        }
        let mut work = 0;
        for (from, pkt) in ctx.recv_all(TAG_PAYLOAD) {
            let bytes = pkt.wire_bytes() as u64;
            let Packet::Cells { blocks, last } = pkt else {
                return Err(Error::protocol(format!("rank {me}: sizing message on the payload tag")));
            };
            *self.arrived.entry(from).or_insert(0) += bytes;
            for b in blocks {
                work += absorb(&mut self.received, b.origin, b.cells);
            }
            if last {
                self.complete += 1;
                if self.sizing && self.announced.get(&from) != self.arrived.get(&from) {
                    return Err(Error::protocol(format!(
                        "rank {me}: rank {from} announced {:?} bytes but sent {:?}",
                        self.announced.get(&from),
                        self.arrived.get(&from)
                    )));
                }
            }
        }
        ctx.record_work(work);

        let mut sent_any = false;
        if self.sizing && ctx.step() == 1 {
            for (d, q) in self.pending.iter().enumerate() {
                if d != me {
                    let bytes = q.iter().map(|p| p.wire_bytes() as u64).sum();
                    ctx.send(d, TAG_META, Packet::Meta(bytes));
                    sent_any = true;
                }
            }
        } else {
            for (d, q) in self.pending.iter_mut().enumerate() {
                if let Some(pkt) = q.pop_front() {
                    ctx.send(d, TAG_PAYLOAD, pkt);
                    sent_any = true;
                }
            }
        }
        let sending = sent_any || self.pending.iter().any(|q| !q.is_empty());
        Ok(match (sending, self.expected) {
            (true, _) | (false, None) => Status::Continue,
            (false, Some(e)) if self.complete >= e => Status::Done,
            (false, Some(_)) => Status::Wait(vec![TAG_PAYLOAD]),
        })
    }

    fn finish(self) -> Self::Output {
        self.received
    }
}

pub(super) fn run(
    problem: &LetProblem,
    grain: usize,
    sizing: bool,
    sim: &SimConfig,
) -> Result<RunOutput<BTreeMap<u32, Vec<LetCellMsg>>>> {
    let programs = (0..problem.ranks()).map(|r| Direct::new(problem, r, grain, sizing)).collect();
    simnet::run(programs, sim)
}
