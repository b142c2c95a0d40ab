//! Two ranks bounce a buffer back and forth on the simulated network; the
//! printed cost follows from the per-step message and byte maxima.
//!
//! cargo run --example simnet_pingpong -- [bytes] [rounds]

use fmmlab::simnet::{cost_breakdown, run, CostModel, RankCtx, RankProgram, Status};
use fmmlab::Result;

struct PingPong {
    bytes: usize,
    rounds: usize,
    seen: usize,
}

impl RankProgram<Vec<u8>> for PingPong {
    type Output = usize;

    fn step(&mut self, ctx: &mut RankCtx<Vec<u8>>) -> Result<Status> {
        let me = ctx.rank();
        let peer = 1 - me;
        if ctx.step() == 1 && me == 0 && self.rounds > 0 {
            ctx.send(peer, 0, vec![0; self.bytes]);
        }
        if let Some(buf) = ctx.recv(peer, 0) {
            self.seen += 1;
            // deliveries alternate: rank 1 receives the odd ones
            let delivery = 2 * self.seen - usize::from(me == 1);
            if delivery < self.rounds {
                ctx.send(peer, 0, buf);
            }
        }
        let expected = if me == 1 { self.rounds.div_ceil(2) } else { self.rounds / 2 };
        Ok(if self.seen >= expected { Status::Done } else { Status::Wait(vec![0]) })
    }

    fn finish(self) -> usize {
        self.seen
    }
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let bytes: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let rounds: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);

    let model = CostModel::default();
    let programs = (0..2).map(|_| PingPong { bytes, rounds, seen: 0 }).collect();
    let out = run(programs, &model.sim_config())?;
    let cost = cost_breakdown(&out.steps, &model);

    println!("{rounds} deliveries of {bytes} bytes, received per rank {:?}", out.results);
    println!("supersteps {}, messages {}, bytes {}", out.steps.len(), out.total_messages(), out.total_bytes());
    for s in &out.steps {
        println!(
            "  step {}: max msgs {}, max bytes {}, rendezvous {}",
            s.step, s.max_rank_msgs, s.max_rank_bytes, s.max_rank_rendezvous
        );
    }
    println!(
        "modeled cost {} (alpha {} per message, beta {} per byte, rendezvous above {} bytes)",
        cost.total, model.alpha, model.beta, model.eager_threshold
    );
    Ok(())
}
