use crate::space::{Box3, SfcKey, Vec3};

use super::tree::Tree;

/// How a source cell may be used during traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Children are present.
    Internal,
    /// Particles are present.
    Leaf,
    /// Multipole only; children were pruned by the sender.
    Cut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceCell {
    pub origin: u32,
    pub key: SfcKey,
    pub bbox: Box3,
    pub center: Vec3,
    pub radius: f64,
    pub child_start: usize,
    pub child_count: usize,
    pub particle_start: usize,
    pub particle_end: usize,
    pub kind: SourceKind,
}

impl SourceCell {
    pub fn children(&self) -> std::ops::Range<usize> {
        self.child_start..self.child_start + self.child_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParticle {
    pub pos: Vec3,
    pub q: f64,
    /// Global id when known; remote payloads carry none.
    pub id: Option<usize>,
}

/// Source side of a traversal: a forest of (possibly pruned) trees sharing
/// one coefficient order.
#[derive(Debug, Clone, Default)]
pub struct SourceForest {
    pub ncoef: usize,
    pub cells: Vec<SourceCell>,
    pub roots: Vec<usize>,
    pub multipoles: Vec<f64>,
    pub particles: Vec<SourceParticle>,
}

impl SourceForest {
    pub fn new(ncoef: usize) -> Self {
        SourceForest { ncoef, ..Default::default() }
    }

    pub fn from_tree(tree: &Tree, origin: u32) -> Self {
        let mut f = SourceForest::new(tree.ncoef());
        f.add_tree(tree, origin);
        f
    }

    /// Append a complete local tree as one more root.
    pub fn add_tree(&mut self, tree: &Tree, origin: u32) {
        assert_eq!(tree.ncoef(), self.ncoef, "coefficient count mismatch");
        if tree.is_empty() {
            return;
        }
        let cbase = self.cells.len();
        let pbase = self.particles.len();
        self.particles.extend(tree.particles.iter().map(|p| SourceParticle { pos: p.pos, q: p.q, id: Some(p.id) }));
        for (i, c) in tree.cells.iter().enumerate() {
            self.cells.push(SourceCell {
                origin,
                key: c.key,
                bbox: c.bbox,
                center: c.center,
                radius: c.radius,
                child_start: if c.is_leaf() { 0 } else { c.child_start + cbase },
                child_count: c.child_count,
                particle_start: pbase + c.start,
                particle_end: pbase + c.end,
                kind: if c.is_leaf() { SourceKind::Leaf } else { SourceKind::Internal },
            });
            self.multipoles.extend_from_slice(tree.multipole(i));
        }
        self.roots.push(cbase);
    }

    pub fn multipole(&self, cell: usize) -> &[f64] {
        &self.multipoles[cell * self.ncoef..(cell + 1) * self.ncoef]
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}
