//! Deterministic in-process message passing in synchronous supersteps.
//!
//! Each superstep runs every active rank once (possibly in parallel), then
//! barriers and delivers all staged messages. Delivery order is fixed by
//! `(sender, send order)`, so results never depend on the scheduler.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tag = u32;

pub const DEFAULT_EAGER_THRESHOLD: usize = 8192;

/// Anything that can be sent; the harness only needs its size on the wire.
pub trait Wire: Send {
    fn wire_bytes(&self) -> usize;
}

impl Wire for Vec<u8> {
    fn wire_bytes(&self) -> usize {
        self.len()
    }
}

/// What a rank wants after a superstep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    /// Run again next superstep.
    Continue,
    /// Run again next superstep; used for deadlock diagnostics when nothing is in flight.
    Wait(Vec<Tag>),
    Done,
}

pub trait RankProgram<M: Wire>: Send {
    type Output: Send;
    fn step(&mut self, ctx: &mut RankCtx<M>) -> Result<Status>;
    fn finish(self) -> Self::Output;
}

pub struct RankCtx<M> {
    rank: usize,
    size: usize,
    step: usize,
    inbox: BTreeMap<(usize, Tag), VecDeque<M>>,
    outbox: Vec<(usize, Tag, M)>,
    work: u64,
    shuffle: Option<ChaCha8Rng>,
}

impl<M: Wire> RankCtx<M> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// 1-based superstep index.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Stage a message; it is delivered at the end of this superstep.
    pub fn send(&mut self, to: usize, tag: Tag, msg: M) {
        assert!(to < self.size, "rank {} sent to nonexistent rank {to}", self.rank);
        self.outbox.push((to, tag, msg));
    }

    /// Next message from `from` with `tag`, in send order.
    pub fn recv(&mut self, from: usize, tag: Tag) -> Option<M> {
        let q = self.inbox.get_mut(&(from, tag))?;
        let m = q.pop_front();
        if q.is_empty() {
            self.inbox.remove(&(from, tag));
        }
        m
    }

    /// Every pending message with `tag`. Order across senders is by rank, or
    /// shuffled when the network was configured to reorder; per-sender order
    /// is always preserved.
    pub fn recv_all(&mut self, tag: Tag) -> Vec<(usize, M)> {
        let senders: Vec<usize> = self.inbox.keys().filter(|k| k.1 == tag).map(|k| k.0).collect();
        let mut queues: Vec<(usize, VecDeque<M>)> =
            senders.into_iter().map(|s| (s, self.inbox.remove(&(s, tag)).expect("listed key"))).collect();
        if let Some(rng) = self.shuffle.as_mut() {
            queues.shuffle(rng);
        }
        queues.into_iter().flat_map(|(s, q)| q.into_iter().map(move |m| (s, m))).collect()
    }

    pub fn pending(&self, tag: Tag) -> usize {
        self.inbox.iter().filter(|(k, _)| k.1 == tag).map(|(_, q)| q.len()).sum()
    }

    /// Count `units` of computation done in this superstep.
    pub fn record_work(&mut self, units: u64) {
        self.work += units;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Messages of at most this many bytes are eager.
    pub eager_threshold: usize,
    /// Shuffle cross-sender delivery order in `recv_all` with this seed.
    pub reorder_seed: Option<u64>,
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { eager_threshold: DEFAULT_EAGER_THRESHOLD, reorder_seed: None, max_steps: 100_000 }
    }
}

/// Traffic received by one rank in one superstep, and work it recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTraffic {
    pub msgs: u64,
    pub bytes: u64,
    pub rendezvous: u64,
    pub work: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub messages: u64,
    pub bytes: u64,
    pub max_rank_msgs: u64,
    pub max_rank_bytes: u64,
    pub eager: u64,
    pub rendezvous: u64,
    /// Largest number of rendezvous messages received by one rank.
    pub max_rank_rendezvous: u64,
    pub per_rank: Vec<RankTraffic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub tag: Tag,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct RunOutput<O> {
    pub results: Vec<O>,
    pub steps: Vec<StepMetrics>,
    pub log: Vec<MessageRecord>,
}

impl<O> RunOutput<O> {
    pub fn total_messages(&self) -> u64 {
        self.steps.iter().map(|s| s.messages).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.bytes).sum()
    }

    /// Supersteps that carried at least one message.
    pub fn communication_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.messages > 0).count()
    }
}

/// Execute one program per rank until all are done.
pub fn run<M, P>(programs: Vec<P>, cfg: &SimConfig) -> Result<RunOutput<P::Output>>
where
    M: Wire,
    P: RankProgram<M>,
{
    let size = programs.len();
    if size == 0 {
        return Err(Error::invalid("a network needs at least one rank"));
    }
    let mut ranks: Vec<(RankCtx<M>, P, Status)> = programs
        .into_iter()
        .enumerate()
        .map(|(rank, prog)| {
            let ctx = RankCtx {
                rank,
                size,
                step: 0,
                inbox: BTreeMap::new(),
                outbox: Vec::new(),
                work: 0,
                shuffle: cfg
                    .reorder_seed
                    .map(|s| ChaCha8Rng::seed_from_u64(s ^ (rank as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))),
            };
            (ctx, prog, Status::Continue)
        })
        .collect();
    let mut steps = Vec::new();
    let mut log = Vec::new();

    for step in 1..=cfg.max_steps {
        ranks
            .par_iter_mut()
            .filter(|(_, _, st)| *st != Status::Done)
            .map(|(ctx, prog, st)| {
                ctx.step = step;
                *st = prog.step(ctx)?;
                Ok(())
            })
            .collect::<Vec<Result<()>>>()
            .into_iter()
            .collect::<Result<()>>()?;

        let mut per_rank = vec![RankTraffic::default(); size];
        let mut staged = Vec::new();
        for (ctx, _, _) in ranks.iter_mut() {
            per_rank[ctx.rank].work = std::mem::take(&mut ctx.work);
            for (to, tag, msg) in ctx.outbox.drain(..) {
                staged.push((ctx.rank, to, tag, msg));
            }
        }
        let mut m = StepMetrics {
            step,
            messages: 0,
            bytes: 0,
            max_rank_msgs: 0,
            max_rank_bytes: 0,
            eager: 0,
            rendezvous: 0,
            max_rank_rendezvous: 0,
            per_rank: Vec::new(),
        };
        for (from, to, tag, msg) in staged {
            if ranks[to].2 == Status::Done {
                return Err(Error::protocol(format!(
                    "rank {from} sent tag {tag} to rank {to}, which already finished"
                )));
            }
            let bytes = msg.wire_bytes() as u64;
            m.messages += 1;
            m.bytes += bytes;
            let t = &mut per_rank[to];
            t.msgs += 1;
            t.bytes += bytes;
            if bytes as usize > cfg.eager_threshold {
                m.rendezvous += 1;
                t.rendezvous += 1;
            } else {
                m.eager += 1;
            }
            log.push(MessageRecord { step, from, to, tag, bytes });
            ranks[to].0.inbox.entry((from, tag)).or_default().push_back(msg);
        }
        m.max_rank_msgs = per_rank.iter().map(|t| t.msgs).max().unwrap_or(0);
        m.max_rank_bytes = per_rank.iter().map(|t| t.bytes).max().unwrap_or(0);
        m.max_rank_rendezvous = per_rank.iter().map(|t| t.rendezvous).max().unwrap_or(0);
        m.per_rank = per_rank;
        let sent = m.messages;
        steps.push(m);

        if ranks.iter().all(|r| r.2 == Status::Done) {
            let results = ranks.into_iter().map(|(_, p, _)| p.finish()).collect();
            return Ok(RunOutput { results, steps, log });
        }
        let stuck = sent == 0 && ranks.iter().all(|r| matches!(r.2, Status::Wait(_) | Status::Done));
        if stuck {
            let waiting = ranks
                .iter()
                .filter_map(|(ctx, _, st)| match st {
                    Status::Wait(tags) => Some((ctx.rank, tags.clone())),
                    _ => None,
                })
                .collect();
            return Err(Error::Deadlock { step, waiting });
        }
    }
    Err(Error::protocol(format!("no termination within {} supersteps", cfg.max_steps)))
}

/// Latency/bandwidth cost model in arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per message.
    pub alpha: f64,
    /// Per byte.
    pub beta: f64,
    pub eager_threshold: usize,
    /// Extra latency per rendezvous message, in multiples of `alpha`.
    pub rendezvous_penalty: f64,
    /// Per unit of recorded work.
    pub gamma: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 1000.0,
            beta: 1.0,
            eager_threshold: DEFAULT_EAGER_THRESHOLD,
            rendezvous_penalty: 1.0,
            gamma: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("rendezvous penalty", self.rendezvous_penalty),
            ("gamma", self.gamma),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("cost model {name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Network settings consistent with this model.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig { eager_threshold: self.eager_threshold, ..SimConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Critical-path communication cost summed over supersteps.
    pub communication: f64,
    /// Work left over after the last superstep on the slowest rank.
    pub exposed_work: f64,
    /// Work units hidden behind communication, summed over ranks.
    pub overlap_units: u64,
    pub total: f64,
}

/// Per-step critical path `alpha * max msgs + beta * max bytes + penalties`,
/// plus the recorded work that could not hide behind communication.
///
/// Work recorded in a superstep runs while that superstep's messages are in
/// flight; whatever exceeds the step's communication time carries over, and
/// the backlog of the slowest rank at the end is exposed.
pub fn cost_breakdown(steps: &[StepMetrics], model: &CostModel) -> CostBreakdown {
    let ranks = steps.iter().map(|s| s.per_rank.len()).max().unwrap_or(0);
    let mut backlog = vec![0.0f64; ranks];
    let mut out = CostBreakdown::default();
    let mut overlapped = 0.0;
    for s in steps {
        let comm = model.alpha * s.max_rank_msgs as f64
            + model.beta * s.max_rank_bytes as f64
            + model.rendezvous_penalty * model.alpha * s.max_rank_rendezvous as f64;
        out.communication += comm;
        for (b, t) in backlog.iter_mut().zip(&s.per_rank) {
            *b += model.gamma * t.work as f64;
            let hidden = b.min(comm);
            *b -= hidden;
            overlapped += hidden;
        }
    }
    out.exposed_work = backlog.iter().copied().fold(0.0, f64::max);
    out.overlap_units = if model.gamma > 0.0 { (overlapped / model.gamma).round() as u64 } else { 0 };
    out.total = out.communication + out.exposed_work;
    out
}

pub fn modeled_cost(steps: &[StepMetrics], model: &CostModel) -> f64 {
    cost_breakdown(steps, model).total
}

/// CSV with columns `step,messages,bytes,max_rank_msgs,max_rank_bytes,eager,rendezvous`.
pub fn write_metrics_csv<W: Write>(steps: &[StepMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "messages", "bytes", "max_rank_msgs", "max_rank_bytes", "eager", "rendezvous"])?;
    for s in steps {
        w.write_record(
            [s.step as u64, s.messages, s.bytes, s.max_rank_msgs, s.max_rank_bytes, s.eager, s.rendezvous]
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sends `sizes[i]` bytes to `(rank + 1) % P` in superstep 1, then waits
    /// for as many messages as it expects.
    struct Ring {
        sizes: Vec<usize>,
        expect: usize,
        got: Vec<usize>,
    }

    impl RankProgram<Vec<u8>> for Ring {
        type Output = Vec<usize>;
        fn step(&mut self, ctx: &mut RankCtx<Vec<u8>>) -> Result<Status> {
            if ctx.step() == 1 {
                let to = (ctx.rank() + 1) % ctx.size();
                for &s in &self.sizes {
                    ctx.send(to, 7, vec![0; s]);
                }
            }
            self.got.extend(ctx.recv_all(7).into_iter().map(|(_, m)| m.len()));
            Ok(if self.got.len() == self.expect { Status::Done } else { Status::Wait(vec![7]) })
        }
        fn finish(self) -> Vec<usize> {
            self.got
        }
    }

    fn ring(p: usize, sizes: &[usize]) -> Vec<Ring> {
        (0..p)
            .map(|_| Ring { sizes: sizes.to_vec(), expect: if p > 1 { sizes.len() } else { 0 }, got: vec![] })
            .collect()
    }

    #[test]
    fn silent_single_rank() {
        let out = run(ring(1, &[]), &SimConfig::default()).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.total_messages(), 0);
        assert_eq!(modeled_cost(&out.steps, &CostModel::default()), 0.0);
    }

    #[test]
    fn ping_pong() {
        let out = run(ring(2, &[100]), &SimConfig::default()).unwrap();
        assert_eq!(out.steps.len(), 2);
        assert_eq!(out.total_messages(), 2);
        assert_eq!(out.total_bytes(), 200);
        assert!(out.steps.iter().all(|s| s.rendezvous == 0));
        assert_eq!(out.results, vec![vec![100], vec![100]]);
    }

    #[test]
    fn one_large_message_costs_two_latencies() {
        struct One(bool);
        impl RankProgram<Vec<u8>> for One {
            type Output = ();
            fn step(&mut self, ctx: &mut RankCtx<Vec<u8>>) -> Result<Status> {
                if ctx.step() == 1 && ctx.rank() == 0 {
                    ctx.send(1, 0, vec![0; 10_000]);
                }
                if ctx.rank() == 1 && ctx.recv(0, 0).is_some() {
                    self.0 = true;
                }
                Ok(if ctx.rank() == 0 || self.0 { Status::Done } else { Status::Wait(vec![0]) })
            }
            fn finish(self) {}
        }
        let out = run(vec![One(false), One(false)], &SimConfig::default()).unwrap();
        assert_eq!(out.steps[0].rendezvous, 1);
        let m = CostModel::default();
        assert_eq!(modeled_cost(&out.steps, &m), 2.0 * m.alpha + m.beta * 10_000.0);
    }

    #[test]
    fn uniform_step_cost() {
        // every rank receives 3 messages of 50 bytes in one step
        let out = run(ring(4, &[50, 50, 50]), &SimConfig::default()).unwrap();
        let m = CostModel::default();
        assert_eq!(modeled_cost(&out.steps, &m), m.alpha * 3.0 + m.beta * 150.0);
    }

    #[test]
    fn deadlock_is_reported() {
        let progs =
            vec![Ring { sizes: vec![], expect: 1, got: vec![] }, Ring { sizes: vec![], expect: 1, got: vec![] }];
        match run(progs, &SimConfig::default()) {
            Err(Error::Deadlock { step, waiting }) => {
                assert_eq!(step, 1);
                assert_eq!(waiting, vec![(0, vec![7]), (1, vec![7])]);
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn fifo_per_sender_under_reordering() {
        struct Burst(Vec<(usize, u8)>);
        impl RankProgram<Vec<u8>> for Burst {
            type Output = Vec<(usize, u8)>;
            fn step(&mut self, ctx: &mut RankCtx<Vec<u8>>) -> Result<Status> {
                if ctx.step() == 1 && ctx.rank() != 0 {
                    for i in 0..5u8 {
                        ctx.send(0, 1, vec![i]);
                    }
                }
                if ctx.rank() != 0 {
                    return Ok(Status::Done);
                }
                self.0.extend(ctx.recv_all(1).into_iter().map(|(s, m)| (s, m[0])));
                Ok(if self.0.len() == 5 * (ctx.size() - 1) { Status::Done } else { Status::Wait(vec![1]) })
            }
            fn finish(self) -> Vec<(usize, u8)> {
                self.0
            }
        }
        let mk = || (0..6).map(|_| Burst(vec![])).collect::<Vec<_>>();
        let plain = run(mk(), &SimConfig::default()).unwrap().results.remove(0);
        let senders: Vec<usize> = plain.iter().map(|x| x.0).collect();
        assert!(senders.windows(2).all(|w| w[0] <= w[1]));
        let mut orders = std::collections::BTreeSet::new();
        for seed in 0..8 {
            let cfg = SimConfig { reorder_seed: Some(seed), ..SimConfig::default() };
            let got = run(mk(), &cfg).unwrap().results.remove(0);
            for s in 1..6 {
                let seq: Vec<u8> = got.iter().filter(|x| x.0 == s).map(|x| x.1).collect();
                assert_eq!(seq, vec![0, 1, 2, 3, 4]);
            }
            orders.insert(got.iter().map(|x| x.0).collect::<Vec<_>>());
        }
        assert!(orders.len() > 1, "reordering never changed cross-sender order");
    }

    #[test]
    fn sending_to_a_finished_rank_fails() {
        struct Late;
        impl RankProgram<Vec<u8>> for Late {
            type Output = ();
            fn step(&mut self, ctx: &mut RankCtx<Vec<u8>>) -> Result<Status> {
                if ctx.rank() == 0 {
                    return Ok(Status::Done);
                }
                if ctx.step() == 2 {
                    ctx.send(0, 0, vec![1]);
                    return Ok(Status::Done);
                }
                Ok(Status::Continue)
            }
            fn finish(self) {}
        }
        assert!(matches!(run(vec![Late, Late], &SimConfig::default()), Err(Error::Protocol(_))));
    }

    #[test]
    fn overlap_hides_work_behind_communication() {
        let step = |msgs, bytes, work: u64| StepMetrics {
            step: 0,
            messages: msgs,
            bytes,
            max_rank_msgs: msgs,
            max_rank_bytes: bytes,
            eager: msgs,
            rendezvous: 0,
            max_rank_rendezvous: 0,
            per_rank: vec![RankTraffic { msgs, bytes, rendezvous: 0, work }],
        };
        let m = CostModel { alpha: 10.0, ..CostModel::default() };
        // all work after the last message is exposed
        let c = cost_breakdown(&[step(1, 0, 0), step(0, 0, 25)], &m);
        assert_eq!((c.communication, c.exposed_work, c.overlap_units), (10.0, 25.0, 0));
        // the same work issued while a message is in flight hides up to its cost
        let c = cost_breakdown(&[step(1, 0, 25), step(0, 0, 0)], &m);
        assert_eq!((c.communication, c.exposed_work, c.overlap_units), (10.0, 15.0, 10));
    }

    #[test]
    fn metrics_csv_header() {
        let out = run(ring(2, &[10]), &SimConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&out.steps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,messages,bytes,max_rank_msgs,max_rank_bytes,eager,rendezvous"));
        assert_eq!(lines.next(), Some("1,2,20,1,10,2,0"));
        assert_eq!(lines.next(), Some("2,0,0,0,0,0,0"));
    }
}
