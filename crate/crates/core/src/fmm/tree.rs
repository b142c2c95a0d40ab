use serde::{Deserialize, Serialize};

use super::expansion::Expansion;
use crate::error::{Error, Result};
use crate::space::{Box3, CurveKind, SfcKey, Vec3, MAX_LEVEL};

/// A point charge and the values accumulated on it by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Global index, stable across partitioning.
    pub id: usize,
    pub pos: Vec3,
    pub q: f64,
    pub phi: f64,
    /// Gradient of the potential.
    pub force: Vec3,
}

impl Particle {
    pub fn new(id: usize, pos: Vec3, q: f64) -> Self {
        Particle { id, pos, q, phi: 0.0, force: [0.0; 3] }
    }
}

/// Opening parameter, leaf capacity and expansion order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraversalConfig {
    pub theta: f64,
    pub n_leaf: usize,
    pub p: usize,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        TraversalConfig { theta: 0.4, n_leaf: 64, p: 4 }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::invalid(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.n_leaf == 0 {
            return Err(Error::invalid("leaf capacity must be at least 1"));
        }
        if self.p == 0 {
            return Err(Error::invalid("expansion order must be at least 1"));
        }
        Ok(())
    }
}

/// Octree node. Multipole/local coefficients live in the owning [`Tree`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Morton path key relative to the tree's build bounds.
    pub key: SfcKey,
    /// Tight hull of the particles in `start..end`.
    pub bbox: Box3,
    pub center: Vec3,
    pub radius: f64,
    pub start: usize,
    pub end: usize,
    pub child_start: usize,
    pub child_count: usize,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn children(&self) -> std::ops::Range<usize> {
        self.child_start..self.child_start + self.child_count
    }
}

#[derive(Debug, Clone)]
pub struct Tree {
    /// Particles reordered so each cell owns a contiguous range.
    pub particles: Vec<Particle>,
    /// Cells in creation order; children follow their parent and are contiguous.
    pub cells: Vec<Cell>,
    /// Box whose octants define the keys (not squeezed).
    pub bounds: Box3,
    pub cfg: TraversalConfig,
    expansion: Expansion,
    multipoles: Vec<f64>,
    locals: Vec<f64>,
}

impl Tree {
    /// A tree without particles or cells.
    pub fn empty(cfg: TraversalConfig) -> Self {
        Tree {
            particles: Vec::new(),
            cells: Vec::new(),
            bounds: Box3::point([0.0; 3]),
            cfg,
            expansion: Expansion::new(cfg.p.max(1)),
            multipoles: Vec::new(),
            locals: Vec::new(),
        }
    }

    /// Recursive octant subdivision of `bounds` until cells hold at most
    /// `n_leaf` particles (or reach [`MAX_LEVEL`]), then every cell box is
    /// squeezed to its particles.
    pub fn build(mut particles: Vec<Particle>, bounds: Box3, cfg: TraversalConfig) -> Result<Self> {
        cfg.validate()?;
        if particles.is_empty() {
            return Err(Error::invalid("cannot build a tree without particles"));
        }
        let slack = 1e-12 * bounds.diagonal().max(1.0);
        if let Some(p) = particles.iter().find(|p| !bounds.inflate(slack).contains(p.pos)) {
            return Err(Error::invalid(format!("particle {} at {:?} lies outside the build bounds", p.id, p.pos)));
        }

        let n = particles.len();
        let mut cells = vec![Cell {
            key: SfcKey::root(CurveKind::Morton),
            bbox: bounds,
            center: bounds.center(),
            radius: 0.0,
            start: 0,
            end: n,
            child_start: 0,
            child_count: 0,
        }];
        let mut stack = vec![(0usize, bounds)];
        let mut scratch: Vec<Particle> = Vec::with_capacity(n);

        while let Some((ci, obox)) = stack.pop() {
            let (start, end, key) = (cells[ci].start, cells[ci].end, cells[ci].key);
            if end - start <= cfg.n_leaf || key.level >= MAX_LEVEL {
                continue;
            }
            let mut counts = [0usize; 8];
            for p in &particles[start..end] {
                counts[obox.octant_of(p.pos)] += 1;
            }
            let mut offsets = [0usize; 8];
            for o in 1..8 {
                offsets[o] = offsets[o - 1] + counts[o - 1];
            }
            scratch.clear();
            scratch.extend_from_slice(&particles[start..end]);
            let mut cursor = offsets;
            for p in &scratch {
                let o = obox.octant_of(p.pos);
                particles[start + cursor[o]] = *p;
                cursor[o] += 1;
            }

            let child_start = cells.len();
            for o in 0..8 {
                if counts[o] == 0 {
                    continue;
                }
                let cbox = obox.octant(o);
                cells.push(Cell {
                    key: key.child(o),
                    bbox: cbox,
                    center: cbox.center(),
                    radius: 0.0,
                    start: start + offsets[o],
                    end: start + offsets[o] + counts[o],
                    child_start: 0,
                    child_count: 0,
                });
                stack.push((cells.len() - 1, cbox));
            }
            cells[ci].child_start = child_start;
            cells[ci].child_count = cells.len() - child_start;
        }

        for c in cells.iter_mut() {
            let hull =
                Box3::from_points(particles[c.start..c.end].iter().map(|p| p.pos)).expect("cells are never empty");
            c.bbox = hull;
            c.center = hull.center();
            c.radius = hull.radius();
        }

        let expansion = Expansion::new(cfg.p);
        let ncoef = expansion.len();
        let ncells = cells.len();
        Ok(Tree {
            particles,
            cells,
            bounds,
            cfg,
            expansion,
            multipoles: vec![0.0; ncells * ncoef],
            locals: vec![0.0; ncells * ncoef],
        })
    }

    pub fn expansion(&self) -> &Expansion {
        &self.expansion
    }

    pub fn ncoef(&self) -> usize {
        self.expansion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn multipole(&self, cell: usize) -> &[f64] {
        let n = self.ncoef();
        &self.multipoles[cell * n..(cell + 1) * n]
    }

    pub fn local(&self, cell: usize) -> &[f64] {
        let n = self.ncoef();
        &self.locals[cell * n..(cell + 1) * n]
    }

    pub(crate) fn locals_mut(&mut self) -> &mut Vec<f64> {
        &mut self.locals
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, c)| c.is_leaf()).map(|(i, _)| i)
    }

    /// Depth-first pre-order of cell indices.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cells.len());
        if self.cells.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.cells[c].children().rev());
        }
        out
    }

    /// P2M at the leaves, then M2M bottom-up.
    pub fn upward_pass(&mut self) {
        let n = self.ncoef();
        self.multipoles.iter_mut().for_each(|m| *m = 0.0);
        // children always have larger indices than their parent
        for ci in (0..self.cells.len()).rev() {
            let cell = &self.cells[ci];
            let mut m = vec![0.0; n];
            if cell.is_leaf() {
                self.expansion.p2m(
                    self.particles[cell.start..cell.end].iter().map(|p| (p.pos, p.q)),
                    cell.center,
                    &mut m,
                );
            } else {
                for ch in cell.children() {
                    let child = &self.cells[ch];
                    self.expansion.m2m(&self.multipoles[ch * n..(ch + 1) * n], child.center, cell.center, &mut m);
                }
            }
            self.multipoles[ci * n..(ci + 1) * n].copy_from_slice(&m);
        }
    }

    /// Sum of charges over all particles (compensated).
    pub fn total_charge(&self) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for q in self.particles.iter().map(|p| p.q) {
            let t = s + q;
            c += if s.abs() >= q.abs() { (s - t) + q } else { (q - t) + s };
            s = t;
        }
        s + c
    }

    /// Particles back in global-id order.
    pub fn particles_by_id(&self) -> Vec<Particle> {
        let mut ps = self.particles.clone();
        ps.sort_by_key(|p| p.id);
        ps
    }
}
