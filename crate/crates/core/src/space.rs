//! Spatial primitives: boxes, Morton/Hilbert keys and particle generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmm::Particle;

pub type Vec3 = [f64; 3];

/// Deepest level a 64-bit key can address (3 bits per level).
pub const MAX_LEVEL: u8 = 21;

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Axis-aligned box. Degenerate boxes (`min == max`) are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        for d in 0..3 {
            if !(min[d] <= max[d]) {
                return Err(Error::invalid(format!("box min {min:?} exceeds max {max:?} on axis {d}")));
            }
        }
        Ok(Box3 { min, max })
    }

    pub fn point(p: Vec3) -> Self {
        Box3 { min: p, max: p }
    }

    /// Tight hull of a point set; `None` when empty.
    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Box3::point(first);
        for p in it {
            b.include(p);
        }
        Some(b)
    }

    pub fn include(&mut self, p: Vec3) {
        for d in 0..3 {
            if p[d] < self.min[d] {
                self.min[d] = p[d];
            }
            if p[d] > self.max[d] {
                self.max[d] = p[d];
            }
        }
    }

    pub fn union(&self, other: &Box3) -> Box3 {
        let mut b = *self;
        b.include(other.min);
        b.include(other.max);
        b
    }

    pub fn center(&self) -> Vec3 {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]), 0.5 * (self.min[2] + self.max[2])]
    }

    pub fn extent(&self) -> Vec3 {
        sub(self.max, self.min)
    }

    /// Half of the diagonal length.
    pub fn radius(&self) -> f64 {
        0.5 * norm(self.extent())
    }

    pub fn diagonal(&self) -> f64 {
        norm(self.extent())
    }

    /// Axis with the largest extent; ties go to the lower axis.
    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        let mut best = 0;
        for d in 1..3 {
            if e[d] > e[best] {
                best = d;
            }
        }
        best
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Distance from `p` to the nearest point of the box (0 inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            let gap = if p[d] < self.min[d] {
                self.min[d] - p[d]
            } else if p[d] > self.max[d] {
                p[d] - self.max[d]
            } else {
                0.0
            };
            s += gap * gap;
        }
        s.sqrt()
    }

    pub fn inflate(&self, eps: f64) -> Box3 {
        Box3 {
            min: [self.min[0] - eps, self.min[1] - eps, self.min[2] - eps],
            max: [self.max[0] + eps, self.max[1] + eps, self.max[2] + eps],
        }
    }

    /// Overlap-or-touch test on all three axes.
    pub fn intersects(&self, other: &Box3) -> bool {
        (0..3).all(|d| self.min[d] <= other.max[d] && other.min[d] <= self.max[d])
    }

    /// The smallest cube sharing this box's center that contains it.
    pub fn bounding_cube(&self) -> Box3 {
        let c = self.center();
        let e = self.extent();
        let h = 0.5 * e[0].max(e[1]).max(e[2]);
        // c -/+ h can round inside the original faces
        let mut b = *self;
        for d in 0..3 {
            b.min[d] = (c[d] - h).min(self.min[d]);
            b.max[d] = (c[d] + h).max(self.max[d]);
        }
        b
    }

    /// Child box for an octant, bit 0 = x upper half, bit 1 = y, bit 2 = z.
    pub fn octant(&self, oct: usize) -> Box3 {
        let c = self.center();
        let mut b = *self;
        for d in 0..3 {
            if oct >> d & 1 == 1 {
                b.min[d] = c[d];
            } else {
                b.max[d] = c[d];
            }
        }
        b
    }

    /// Octant of `p` relative to the box center, same bit layout as [`Box3::octant`].
    pub fn octant_of(&self, p: Vec3) -> usize {
        let c = self.center();
        (0..3).fold(0, |acc, d| acc | (usize::from(p[d] >= c[d]) << d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CurveKind {
    Morton,
    Hilbert,
}

/// Space-filling-curve key of an octree cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SfcKey {
    pub key: u64,
    pub level: u8,
    pub kind: CurveKind,
}

impl SfcKey {
    pub fn root(kind: CurveKind) -> Self {
        SfcKey { key: 0, level: 0, kind }
    }

    pub fn parent(&self) -> Option<SfcKey> {
        (self.level > 0).then(|| SfcKey { key: self.key >> 3, level: self.level - 1, kind: self.kind })
    }

    /// Morton child; only meaningful for path keys.
    pub fn child(&self, octant: usize) -> SfcKey {
        SfcKey { key: (self.key << 3) | octant as u64, level: self.level + 1, kind: self.kind }
    }

    /// Key left-aligned to [`MAX_LEVEL`]: sorting by `(aligned, level)` yields a
    /// pre-order (parent before child) traversal.
    pub fn preorder_rank(&self) -> (u64, u8) {
        (self.key << (3 * u32::from(MAX_LEVEL - self.level)), self.level)
    }
}

fn check_level(level: u8) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::invalid(format!("level {level} exceeds the 64-bit key capacity of {MAX_LEVEL}")));
    }
    Ok(())
}

/// Spread the low 21 bits of `v` so that bit `j` lands on bit `3j`.
#[inline]
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact3(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x
}

pub fn morton_encode(i: u32, j: u32, k: u32) -> u64 {
    spread3(u64::from(i)) | spread3(u64::from(j)) << 1 | spread3(u64::from(k)) << 2
}

pub fn morton_decode(key: u64) -> (u32, u32, u32) {
    (compact3(key) as u32, compact3(key >> 1) as u32, compact3(key >> 2) as u32)
}

// Skilling's transpose form: axes -> transposed Hilbert index, in place.
fn axes_to_transpose(x: &mut [u32; 3], bits: u32) {
    if bits == 0 {
        return;
    }
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32; 3], bits: u32) {
    if bits == 0 {
        return;
    }
    let n = 2u32 << (bits - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let mut q = 2u32;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

pub fn hilbert_encode(i: u32, j: u32, k: u32, level: u8) -> u64 {
    let bits = u32::from(level);
    let mut x = [i, j, k];
    axes_to_transpose(&mut x, bits);
    let mut key = 0u64;
    for b in (0..bits).rev() {
        for v in &x {
            key = key << 1 | u64::from(v >> b & 1);
        }
    }
    key
}

pub fn hilbert_decode(key: u64, level: u8) -> (u32, u32, u32) {
    let bits = u32::from(level);
    let mut x = [0u32; 3];
    for b in 0..bits {
        for (d, v) in x.iter_mut().enumerate() {
            let shift = 3 * b + (2 - d as u32);
            *v |= ((key >> shift & 1) as u32) << b;
        }
    }
    transpose_to_axes(&mut x, bits);
    (x[0], x[1], x[2])
}

/// Key of the cell `(i, j, k)` on the `2^level` grid.
pub fn encode_key(i: u32, j: u32, k: u32, level: u8, kind: CurveKind) -> Result<SfcKey> {
    check_level(level)?;
    let side = 1u64 << level;
    if [i, j, k].iter().any(|&c| u64::from(c) >= side) {
        return Err(Error::invalid(format!("cell index ({i}, {j}, {k}) outside the 2^{level} grid")));
    }
    let key = match kind {
        CurveKind::Morton => morton_encode(i, j, k),
        CurveKind::Hilbert => hilbert_encode(i, j, k, level),
    };
    Ok(SfcKey { key, level, kind })
}

pub fn decode_key(k: SfcKey) -> (u32, u32, u32, u8) {
    debug_assert!(k.level <= MAX_LEVEL);
    debug_assert!(k.level == MAX_LEVEL || k.key < 1u64 << (3 * u32::from(k.level)));
    let (i, j, kk) = match k.kind {
        CurveKind::Morton => morton_decode(k.key),
        CurveKind::Hilbert => hilbert_decode(k.key, k.level),
    };
    (i, j, kk, k.level)
}

/// Grid cell containing `p` at `level` inside `domain`, clamped to the grid.
pub fn cell_index(p: Vec3, domain: &Box3, level: u8) -> (u32, u32, u32) {
    let side = 1u64 << level;
    let e = domain.extent();
    let mut idx = [0u32; 3];
    for d in 0..3 {
        let t = if e[d] > 0.0 { (p[d] - domain.min[d]) / e[d] } else { 0.0 };
        let c = (t * side as f64).floor();
        idx[d] = c.clamp(0.0, (side - 1) as f64) as u32;
    }
    (idx[0], idx[1], idx[2])
}

/// Box of grid cell `(i, j, k)` at `level` inside `domain`.
pub fn cell_box(i: u32, j: u32, k: u32, domain: &Box3, level: u8) -> Box3 {
    let side = (1u64 << level) as f64;
    let e = domain.extent();
    let ijk = [i, j, k];
    let mut b = *domain;
    for d in 0..3 {
        let h = e[d] / side;
        b.min[d] = domain.min[d] + f64::from(ijk[d]) * h;
        b.max[d] = if u64::from(ijk[d]) + 1 == 1u64 << level {
            domain.max[d]
        } else {
            domain.min[d] + f64::from(ijk[d] + 1) * h
        };
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    UniformCube,
    SphereSurface,
    SphereVolume,
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-cube" | "cube" => Ok(Self::UniformCube),
            "sphere-surface" | "sphere" => Ok(Self::SphereSurface),
            "sphere-volume" => Ok(Self::SphereVolume),
            other => Err(Error::invalid(format!("unknown distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distribution {
    pub kind: DistributionKind,
    pub n: usize,
    pub seed: u64,
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    let cos_theta: f64 = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let v = [sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta];
    // renormalize so |v| = 1 to rounding
    let r = norm(v);
    [v[0] / r, v[1] / r, v[2] / r]
}

/// Particles with charge `1/n` each, deterministic per `(kind, n, seed)`.
///
/// Sphere distributions are centered at the origin with radius 1; the cube
/// distribution fills `[0, 1)^3`.
pub fn generate(dist: &Distribution) -> Result<Vec<Particle>> {
    if dist.n == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    let q = 1.0 / dist.n as f64;
    let particles = (0..dist.n)
        .map(|id| {
            let pos = match dist.kind {
                DistributionKind::UniformCube => [rng.gen(), rng.gen(), rng.gen()],
                DistributionKind::SphereSurface => unit_direction(&mut rng),
                DistributionKind::SphereVolume => {
                    let dir = unit_direction(&mut rng);
                    let r = rng.gen::<f64>().cbrt();
                    [r * dir[0], r * dir[1], r * dir[2]]
                }
            };
            Particle::new(id, pos, q)
        })
        .collect();
    Ok(particles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morton_examples() {
        assert_eq!(encode_key(0, 0, 0, 3, CurveKind::Morton).unwrap().key, 0);
        assert_eq!(encode_key(1, 1, 1, 1, CurveKind::Morton).unwrap().key, 7);
        // x is the least significant bit of each group
        assert_eq!(encode_key(1, 0, 0, 1, CurveKind::Morton).unwrap().key, 1);
        assert_eq!(encode_key(0, 1, 0, 1, CurveKind::Morton).unwrap().key, 2);
        assert_eq!(encode_key(0, 0, 1, 1, CurveKind::Morton).unwrap().key, 4);
        let k = SfcKey { key: 7, level: 1, kind: CurveKind::Morton };
        assert_eq!(decode_key(k), (1, 1, 1, 1));
        let k = SfcKey { key: 0, level: 3, kind: CurveKind::Morton };
        assert_eq!(decode_key(k), (0, 0, 0, 3));
    }

    #[test]
    fn encode_rejects_bad_input() {
        assert!(encode_key(0, 0, 0, 22, CurveKind::Morton).is_err());
        assert!(encode_key(8, 0, 0, 3, CurveKind::Hilbert).is_err());
        assert!(encode_key(0, 0, (1 << 21) - 1, 21, CurveKind::Morton).is_ok());
    }

    #[test]
    fn max_level_roundtrip() {
        let m = (1u32 << 21) - 1;
        for kind in [CurveKind::Morton, CurveKind::Hilbert] {
            for (i, j, k) in [(m, 0, 5), (m, m, m), (12345, 999_999, 7)] {
                let key = encode_key(i, j, k, 21, kind).unwrap();
                assert_eq!(decode_key(key), (i, j, k, 21));
            }
        }
    }

    #[test]
    fn two_dimensional_hilbert_analogue_is_u_shaped() {
        // z = 0 slice at level 1 is visited as a face-connected path by the 3D curve
        let mut cells: Vec<(u64, u32, u32)> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (encode_key(i, j, 0, 1, CurveKind::Hilbert).unwrap().key, i, j))
            .collect();
        cells.sort();
        for w in cells.windows(2) {
            let d = w[0].1.abs_diff(w[1].1) + w[0].2.abs_diff(w[1].2);
            assert_eq!(d, 1, "{cells:?}");
        }
    }

    #[test]
    fn sphere_surface_radius() {
        let ps = generate(&Distribution { kind: DistributionKind::SphereSurface, n: 1000, seed: 7 }).unwrap();
        for p in &ps {
            assert!((norm(p.pos) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn generate_rejects_empty() {
        let d = Distribution { kind: DistributionKind::UniformCube, n: 0, seed: 1 };
        assert!(generate(&d).is_err());
    }

    #[test]
    fn cube_is_reproducible() {
        let d = Distribution { kind: DistributionKind::UniformCube, n: 8, seed: 1 };
        let a = generate(&d).unwrap();
        let b = generate(&d).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pos, y.pos);
            assert!(x.pos.iter().all(|&c| (0.0..1.0).contains(&c)));
            assert_eq!(x.q, 1.0 / 8.0);
        }
    }

    #[test]
    fn box_distance_and_octants() {
        let b = Box3::new([0.0; 3], [2.0, 2.0, 2.0]).unwrap();
        assert_eq!(b.distance_to([1.0, 1.0, 1.0]), 0.0);
        assert_eq!(b.distance_to([5.0, 1.0, 1.0]), 3.0);
        let o = b.octant(5);
        assert_eq!(o.min, [1.0, 0.0, 1.0]);
        assert_eq!(b.octant_of([1.5, 0.5, 1.5]), 5);
        assert!(Box3::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
    }
}
