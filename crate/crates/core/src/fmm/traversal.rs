use super::source::{SourceForest, SourceKind};
use super::tree::{TraversalConfig, Tree};
use crate::error::{Error, Result};
use crate::space::dist;

/// Counters gathered during one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub m2l: usize,
    pub p2p_cells: usize,
    pub p2p_pairs: usize,
    /// Distinct target/source particles at distance zero (skipped).
    pub coincident: usize,
    /// Pairs that needed a pruned source cell opened. Nonzero means the
    /// source side is missing data.
    pub uncovered: usize,
}

/// One accepted cell-pair interaction, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Interaction {
    M2L { target: usize, source: usize },
    P2P { target: usize, source: usize },
}

/// Dual-tree evaluation of `sources` on the particles of `target`.
///
/// Pairs with `(r_a + r_b) < theta * d` use M2L; otherwise the cell with
/// the larger radius is split (the source cell on ties), and leaf pairs are
/// summed directly. Local expansions are then pushed down and evaluated.
pub fn evaluate(target: &mut Tree, sources: &SourceForest, cfg: &TraversalConfig) -> Result<EvalStats> {
    traverse(target, sources, cfg, None)
}

pub fn evaluate_logged(
    target: &mut Tree,
    sources: &SourceForest,
    cfg: &TraversalConfig,
    log: &mut Vec<Interaction>,
) -> Result<EvalStats> {
    traverse(target, sources, cfg, Some(log))
}

fn traverse(
    target: &mut Tree,
    sources: &SourceForest,
    cfg: &TraversalConfig,
    mut log: Option<&mut Vec<Interaction>>,
) -> Result<EvalStats> {
    cfg.validate()?;
    if target.cfg.p != cfg.p || (!sources.is_empty() && sources.ncoef != target.ncoef()) {
        return Err(Error::invalid("target and source expansion orders differ"));
    }
    let mut stats = EvalStats::default();
    for p in target.particles.iter_mut() {
        p.phi = 0.0;
        p.force = [0.0; 3];
    }
    if target.is_empty() {
        return Ok(stats);
    }

    let ncoef = target.ncoef();
    let expansion = target.expansion().clone();
    let mut locals = std::mem::take(target.locals_mut());
    locals.iter_mut().for_each(|l| *l = 0.0);
    let mut scratch = Vec::new();

    let mut stack: Vec<(usize, usize)> = sources.roots.iter().map(|&r| (0, r)).collect();
    stack.reverse();
    while let Some((a, b)) = stack.pop() {
        let ca = &target.cells[a];
        let cb = &sources.cells[b];
        let d = dist(ca.center, cb.center);
        if ca.radius + cb.radius < cfg.theta * d {
            expansion.m2l(
                sources.multipole(b),
                cb.center,
                ca.center,
                &mut locals[a * ncoef..(a + 1) * ncoef],
                &mut scratch,
            );
            stats.m2l += 1;
            if let Some(l) = log.as_deref_mut() {
                l.push(Interaction::M2L { target: a, source: b });
            }
            continue;
        }
        let a_leaf = ca.is_leaf();
        match cb.kind {
            SourceKind::Leaf if a_leaf => {
                p2p(target, a, sources, b, &mut stats);
                if let Some(l) = log.as_deref_mut() {
                    l.push(Interaction::P2P { target: a, source: b });
                }
            }
            SourceKind::Cut if a_leaf => stats.uncovered += 1,
            SourceKind::Internal if a_leaf || cb.radius >= ca.radius => {
                for ch in cb.children().rev() {
                    stack.push((a, ch));
                }
            }
            _ => {
                for ch in ca.children().rev() {
                    stack.push((ch, b));
                }
            }
        }
    }

    // downward pass: parents precede children in the cell array
    let mut pw = vec![0.0; ncoef];
    for ci in 0..target.cells.len() {
        let cell = target.cells[ci].clone();
        if cell.is_leaf() {
            let l = &locals[ci * ncoef..(ci + 1) * ncoef];
            for p in &mut target.particles[cell.start..cell.end] {
                let (phi, grad) = expansion.l2p(l, cell.center, p.pos, &mut pw);
                p.phi += phi;
                for d in 0..3 {
                    p.force[d] += grad[d];
                }
            }
        } else {
            let (parent, rest) = locals.split_at_mut((ci + 1) * ncoef);
            let parent = &parent[ci * ncoef..];
            for ch in cell.children() {
                let off = (ch - ci - 1) * ncoef;
                expansion.l2l(parent, cell.center, target.cells[ch].center, &mut rest[off..off + ncoef]);
            }
        }
    }
    *target.locals_mut() = locals;
    Ok(stats)
}

fn p2p(target: &mut Tree, a: usize, sources: &SourceForest, b: usize, stats: &mut EvalStats) {
    let (start, end) = (target.cells[a].start, target.cells[a].end);
    let cb = &sources.cells[b];
    let src = &sources.particles[cb.particle_start..cb.particle_end];
    stats.p2p_cells += 1;
    stats.p2p_pairs += (end - start) * src.len();
    for t in &mut target.particles[start..end] {
        let mut phi = 0.0;
        let mut g = [0.0; 3];
        for s in src {
            let dx = [t.pos[0] - s.pos[0], t.pos[1] - s.pos[1], t.pos[2] - s.pos[2]];
            let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
            if r2 == 0.0 {
                if s.id != Some(t.id) {
                    stats.coincident += 1;
                }
                continue;
            }
            let inv_r = 1.0 / r2.sqrt();
            let qr = s.q * inv_r;
            phi += qr;
            let qr3 = qr * inv_r * inv_r;
            for d in 0..3 {
                g[d] -= qr3 * dx[d];
            }
        }
        t.phi += phi;
        for d in 0..3 {
            t.force[d] += g[d];
        }
    }
}
