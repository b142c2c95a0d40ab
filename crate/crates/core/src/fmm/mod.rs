//! Serial FMM engine: octree with squeezed cell boxes, Cartesian Laplace
//! expansions, dual-tree traversal and a direct-summation oracle.

mod direct;
mod expansion;
mod source;
mod traversal;
mod tree;

pub use direct::{direct_sum, max_relative_difference, relative_l2_error, DirectSum};
pub use expansion::{coefficient_count, Expansion};
pub use source::{SourceCell, SourceForest, SourceKind, SourceParticle};
pub use traversal::{evaluate, evaluate_logged, EvalStats, Interaction};
pub use tree::{Cell, Particle, TraversalConfig, Tree};

use crate::error::Result;
use crate::space::Box3;

/// Build, upward pass and self-evaluation of a single tree. Returns the
/// particles in id order with `phi` filled.
pub fn solve_serial(particles: Vec<Particle>, cfg: &TraversalConfig) -> Result<(Vec<Particle>, EvalStats)> {
    let bounds = Box3::from_points(particles.iter().map(|p| p.pos))
        .ok_or_else(|| crate::error::Error::invalid("no particles"))?;
    let mut tree = Tree::build(particles, bounds, *cfg)?;
    tree.upward_pass();
    let forest = SourceForest::from_tree(&tree, 0);
    let stats = evaluate(&mut tree, &forest, cfg)?;
    Ok((tree.particles_by_id(), stats))
}
