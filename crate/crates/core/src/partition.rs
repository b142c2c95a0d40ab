//! Splitting particles across simulated ranks: HOT key ranges, ORB
//! multisection and the hybrid ORB variant, the histogram splitter search
//! and a connectivity metric for partition quality.

use std::fmt::Debug;

use petgraph::unionfind::UnionFind;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmm::Particle;
use crate::space::{cell_box, cell_index, decode_key, dist, encode_key, Box3, CurveKind, SfcKey, MAX_LEVEL};

pub const HISTOGRAM_BINS: usize = 512;
pub const MAX_SPLITTER_ITERATIONS: usize = 32;
pub const DEFAULT_SAMPLING_LEAF: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    HotMorton,
    HotHilbert,
    OrbGlobal,
    HybridOrb,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [Self::HotMorton, Self::HotHilbert, Self::OrbGlobal, Self::HybridOrb];

    pub fn name(self) -> &'static str {
        match self {
            Self::HotMorton => "hot-morton",
            Self::HotHilbert => "hot-hilbert",
            Self::OrbGlobal => "orb-global",
            Self::HybridOrb => "hybrid-orb",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hot-morton" | "morton" => Ok(Self::HotMorton),
            "hot-hilbert" | "hilbert" => Ok(Self::HotHilbert),
            "orb-global" | "orb" => Ok(Self::OrbGlobal),
            "hybrid-orb" | "hybrid" => Ok(Self::HybridOrb),
            other => Err(Error::invalid(format!(
                "unknown scheme `{other}` (expected hot-morton, hot-hilbert, orb-global or hybrid-orb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub kind: SchemeKind,
    pub ranks: usize,
    /// Leaf size used to pick the HOT key sampling level.
    pub sampling_leaf: usize,
}

impl PartitionScheme {
    pub fn new(kind: SchemeKind, ranks: usize) -> Self {
        PartitionScheme { kind, ranks, sampling_leaf: DEFAULT_SAMPLING_LEAF }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub rank: usize,
    /// Tight hull of the owned particles.
    pub bounds: Box3,
    /// Region of space assigned to the rank; domains of all ranks tile the
    /// global box (ORB) or cover it up to sampling cells (HOT).
    pub domain: Box3,
    /// Box the rank's local tree is built on.
    pub tree_bounds: Box3,
    pub count: usize,
    pub particles: Vec<Particle>,
}

/// One histogram round of the splitter search.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramState<T> {
    /// Strictly increasing bin edges.
    pub edges: Vec<T>,
    /// Global count of values in `[edges[i], edges[i + 1])`.
    pub counts: Vec<u64>,
    /// Number of values wanted below the splitter.
    pub target: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splitter<T> {
    pub value: T,
    /// Number of values strictly below `value`.
    pub below: u64,
    /// `|below - target|`.
    pub imbalance: u64,
    pub iterations: usize,
    pub converged: bool,
}

/// Ordered scalar a splitter can be searched over.
pub trait SplitValue: Copy + PartialOrd + Debug + Send + Sync {
    /// Smallest representable value above `self`.
    fn successor(self) -> Self;
    /// Up to `bins + 1` strictly increasing edges from `lo` to `hi` inclusive.
    fn edges(lo: Self, hi: Self, bins: usize) -> Vec<Self>;
}

impl SplitValue for u64 {
    fn successor(self) -> Self {
        self.saturating_add(1)
    }

    fn edges(lo: u64, hi: u64, bins: usize) -> Vec<u64> {
        let span = u128::from(hi - lo);
        let mut e: Vec<u64> = (0..=bins as u128).map(|i| lo + (span * i / bins as u128) as u64).collect();
        e.dedup();
        e
    }
}

impl SplitValue for f64 {
    fn successor(self) -> Self {
        self.next_up()
    }

    fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let mut e = Vec::with_capacity(bins + 1);
        for i in 0..bins {
            let v = lo + (hi - lo) * (i as f64 / bins as f64);
            if e.last().is_none_or(|&l| v > l) && v < hi {
                e.push(v);
            }
        }
        e.push(hi);
        e
    }
}

/// Histogram of every rank's values over `edges`, summed as an allreduce would.
fn reduce_histogram<T: SplitValue>(values: &[Vec<T>], edges: &[T]) -> Vec<u64> {
    let nb = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[nb]);
    values
        .par_iter()
        .map(|vs| {
            let mut h = vec![0u64; nb];
            for &v in vs {
                if v >= lo && v < hi {
                    // first edge strictly above v, minus one
                    let b = edges.partition_point(|e| *e <= v) - 1;
                    h[b] += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0u64; nb],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Value `s` with `|#{v < s} - target| <= tol`, found by iterative histogram
/// refinement over values that stay on their ranks.
///
/// When duplicates make the tolerance unreachable, the closest splitter seen
/// is returned with `converged == false`.
pub fn find_splitter<T: SplitValue>(values: &[Vec<T>], target: u64, tol: u64) -> Result<Splitter<T>> {
    find_splitter_traced(values, target, tol, |_| {})
}

pub fn find_splitter_traced<T: SplitValue>(
    values: &[Vec<T>],
    target: u64,
    tol: u64,
    mut on_round: impl FnMut(&HistogramState<T>),
) -> Result<Splitter<T>> {
    let total: u64 = values.iter().map(|v| v.len() as u64).sum();
    if target > total {
        return Err(Error::invalid(format!("splitter target {target} exceeds value count {total}")));
    }
    let mut all = values.iter().flatten().copied();
    let Some(first) = all.next() else {
        return Err(Error::invalid("splitter search over an empty value set"));
    };
    let (mut lo, mut hi) = all.fold((first, first), |(a, b), v| (if v < a { v } else { a }, if v > b { v } else { b }));
    hi = hi.successor();
    let mut below_lo = 0u64;

    let score = |below: u64| below.abs_diff(target);
    let mut best = if score(0) <= score(total) {
        Splitter { value: lo, below: 0, imbalance: score(0), iterations: 0, converged: false }
    } else {
        Splitter { value: hi, below: total, imbalance: score(total), iterations: 0, converged: false }
    };
    if best.imbalance <= tol {
        best.converged = true;
        return Ok(best);
    }

    for it in 1..=MAX_SPLITTER_ITERATIONS {
        let edges = T::edges(lo, hi, HISTOGRAM_BINS);
        if edges.len() < 2 {
            break;
        }
        let counts = reduce_histogram(values, &edges);
        on_round(&HistogramState { edges: edges.clone(), counts: counts.clone(), target });
        let mut cum = below_lo;
        let mut bracket = None;
        for (i, &c) in counts.iter().enumerate() {
            if score(cum) < best.imbalance {
                best =
                    Splitter { value: edges[i], below: cum, imbalance: score(cum), iterations: it, converged: false };
            }
            if best.imbalance <= tol {
                best.converged = true;
                best.iterations = it;
                return Ok(best);
            }
            if cum < target && target < cum + c {
                bracket = Some((i, cum));
            }
            cum += c;
        }
        let Some((i, below)) = bracket else { break };
        if edges[i].successor() >= edges[i + 1] {
            // a single repeated value straddles the target
            break;
        }
        lo = edges[i];
        hi = edges[i + 1];
        below_lo = below;
    }
    Ok(best)
}

/// Default splitter tolerance: `max(1, N / (1000 P))`.
pub fn default_tolerance(n: usize, ranks: usize) -> u64 {
    (n as u64 / (1000 * ranks as u64)).max(1)
}

/// Sampling level for HOT keys: `ceil(log8(N / leaf)) + 2`, at most 21.
pub fn hot_sampling_level(n: usize, leaf: usize) -> u8 {
    let ratio = n as f64 / leaf.max(1) as f64;
    let l = if ratio <= 1.0 { 0.0 } else { (ratio.ln() / 8f64.ln()).ceil() };
    ((l as u32 + 2).min(u32::from(MAX_LEVEL))) as u8
}

/// Record of one ORB split, for auditing the longest-axis rule.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbSplit {
    pub first_rank: usize,
    pub ranks: usize,
    pub axis: usize,
    /// Extent of the node's tight box.
    pub extent: [f64; 3],
    pub plane: f64,
    pub left_count: usize,
}

pub fn partition(particles: &[Particle], scheme: &PartitionScheme) -> Result<Vec<Partition>> {
    partition_traced(particles, scheme, &mut Vec::new())
}

/// As [`partition`], also recording every ORB split into `trace`.
pub fn partition_traced(
    particles: &[Particle],
    scheme: &PartitionScheme,
    trace: &mut Vec<OrbSplit>,
) -> Result<Vec<Partition>> {
    let p = scheme.ranks;
    if p == 0 {
        return Err(Error::invalid("rank count must be at least 1"));
    }
    if particles.len() < p {
        return Err(Error::invalid(format!("cannot split {} particles across {p} ranks", particles.len())));
    }
    let global = Box3::from_points(particles.iter().map(|q| q.pos)).expect("non-empty");
    match scheme.kind {
        SchemeKind::HotMorton => hot(particles, scheme, CurveKind::Morton, &global),
        SchemeKind::HotHilbert => hot(particles, scheme, CurveKind::Hilbert, &global),
        SchemeKind::OrbGlobal | SchemeKind::HybridOrb => {
            let mut idx: Vec<usize> = (0..particles.len()).collect();
            let mut out = Vec::with_capacity(p);
            orb(particles, &mut idx, (0, p), p, global, trace, &mut out)?;
            let parts = out
                .into_iter()
                .enumerate()
                .map(|(rank, (ids, domain))| {
                    let ps: Vec<Particle> = ids.iter().map(|&i| particles[i]).collect();
                    let bounds = Box3::from_points(ps.iter().map(|q| q.pos)).expect("non-empty");
                    let tree_bounds = if scheme.kind == SchemeKind::HybridOrb { bounds } else { global };
                    Partition { rank, bounds, domain, tree_bounds, count: ps.len(), particles: ps }
                })
                .collect();
            Ok(parts)
        }
    }
}

/// Particles per rank under exact balance: the first `N mod P` ranks get one extra.
fn orb_quota(n: usize, p: usize, first: usize, count: usize) -> usize {
    let base = n / p;
    let extra = n % p;
    let with_extra = extra.saturating_sub(first).min(count);
    base * count + with_extra
}

fn orb(
    particles: &[Particle],
    idx: &mut [usize],
    (first, ranks): (usize, usize),
    p_total: usize,
    domain: Box3,
    trace: &mut Vec<OrbSplit>,
    out: &mut Vec<(Vec<usize>, Box3)>,
) -> Result<()> {
    if ranks == 1 {
        let mut ids = idx.to_vec();
        ids.sort_unstable();
        out.push((ids, domain));
        return Ok(());
    }
    let n_total = particles.len();
    let left_ranks = ranks / 2;
    let left_n = orb_quota(n_total, p_total, first, left_ranks);
    debug_assert_eq!(left_n + orb_quota(n_total, p_total, first + left_ranks, ranks - left_ranks), idx.len());

    let tight = Box3::from_points(idx.iter().map(|&i| particles[i].pos)).expect("non-empty node");
    let axis = tight.longest_axis();
    let key = |i: usize| (particles[i].pos[axis], i);

    // plane search over coordinates held by the node's ranks
    let per_rank: Vec<Vec<f64>> =
        idx.chunks(idx.len().div_ceil(ranks)).map(|c| c.iter().map(|&i| particles[i].pos[axis]).collect()).collect();
    let s = find_splitter(&per_rank, left_n as u64, 0)?;
    if s.converged {
        let mut lo = 0;
        for j in 0..idx.len() {
            if particles[idx[j]].pos[axis] < s.value {
                idx.swap(lo, j);
                lo += 1;
            }
        }
        debug_assert_eq!(lo, left_n);
    } else {
        // tied coordinates straddle the target: break ties by id
        idx.select_nth_unstable_by(left_n, |&a, &b| key(a).partial_cmp(&key(b)).expect("finite coordinates"));
    }
    let left_max = idx[..left_n].iter().map(|&i| particles[i].pos[axis]).fold(f64::NEG_INFINITY, f64::max);
    let right_min = idx[left_n..].iter().map(|&i| particles[i].pos[axis]).fold(f64::INFINITY, f64::min);
    let plane = 0.5 * (left_max + right_min);

    trace.push(OrbSplit { first_rank: first, ranks, axis, extent: tight.extent(), plane, left_count: left_n });

    let mut ldom = domain;
    let mut rdom = domain;
    ldom.max[axis] = plane;
    rdom.min[axis] = plane;
    let (l, r) = idx.split_at_mut(left_n);
    orb(particles, l, (first, left_ranks), p_total, ldom, trace, out)?;
    orb(particles, r, (first + left_ranks, ranks - left_ranks), p_total, rdom, trace, out)
}

fn hot(particles: &[Particle], scheme: &PartitionScheme, kind: CurveKind, global: &Box3) -> Result<Vec<Partition>> {
    let n = particles.len();
    let p = scheme.ranks;
    let level = hot_sampling_level(n, scheme.sampling_leaf);
    let cube = global.bounding_cube();
    let keys: Vec<u64> = particles
        .par_iter()
        .map(|q| {
            let (i, j, k) = cell_index(q.pos, &cube, level);
            encode_key(i, j, k, level, kind).map(|k| k.key)
        })
        .collect::<Result<_>>()?;

    // keys stay with the rank that generated them; only histograms move
    let per_rank: Vec<Vec<u64>> = keys.chunks(n.div_ceil(p)).map(<[u64]>::to_vec).collect();
    let tol = default_tolerance(n, p);
    let mut splitters = Vec::with_capacity(p + 1);
    splitters.push(0u64);
    for r in 1..p {
        let target = (n * r / p) as u64;
        let s = find_splitter(&per_rank, target, tol)?;
        splitters.push(s.value.max(*splitters.last().expect("non-empty")));
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (i, &k) in keys.iter().enumerate() {
        let r = splitters.partition_point(|&s| s <= k) - 1;
        owned[r].push(i);
    }
    owned
        .into_iter()
        .enumerate()
        .map(|(rank, ids)| {
            if ids.is_empty() {
                return Err(Error::Unsupported(format!(
                    "rank {rank} received no particles under {} partitioning",
                    if kind == CurveKind::Morton { "Morton" } else { "Hilbert" }
                )));
            }
            let ps: Vec<Particle> = ids.iter().map(|&i| particles[i]).collect();
            let bounds = Box3::from_points(ps.iter().map(|q| q.pos)).expect("non-empty");
            let mut domain: Option<Box3> = None;
            for &i in &ids {
                let (a, b, c, _) = decode_key(SfcKey { key: keys[i], level, kind });
                let cb = cell_box(a, b, c, &cube, level);
                domain = Some(domain.map_or(cb, |d| d.union(&cb)));
            }
            Ok(Partition {
                rank,
                bounds,
                domain: domain.expect("non-empty"),
                tree_bounds: cube,
                count: ps.len(),
                particles: ps,
            })
        })
        .collect()
}

/// Uniform `k x k x k` rank grid over the bounding cube of `particles`;
/// rank `i + k (j + k l)` owns grid cell `(i, j, l)`.
pub fn grid_partition(particles: &[Particle], k: usize) -> Result<Vec<Partition>> {
    if k == 0 || k > 1 << 10 {
        return Err(Error::invalid(format!("grid side {k} out of range")));
    }
    let cube = Box3::from_points(particles.iter().map(|q| q.pos))
        .ok_or_else(|| Error::invalid("no particles"))?
        .bounding_cube();
    let mut owned: Vec<Vec<Particle>> = vec![Vec::new(); k * k * k];
    let cell = |x: f64, d: usize| {
        let e = cube.max[d] - cube.min[d];
        (((x - cube.min[d]) / e * k as f64).floor() as usize).min(k - 1)
    };
    for q in particles {
        let (i, j, l) = (cell(q.pos[0], 0), cell(q.pos[1], 1), cell(q.pos[2], 2));
        owned[i + k * (j + k * l)].push(*q);
    }
    let h = cube.extent()[0] / k as f64;
    owned
        .into_iter()
        .enumerate()
        .map(|(rank, ps)| {
            let (i, j, l) = (rank % k, rank / k % k, rank / (k * k));
            let ijk = [i, j, l];
            let mut domain = cube;
            for d in 0..3 {
                domain.min[d] = cube.min[d] + ijk[d] as f64 * h;
                domain.max[d] = if ijk[d] + 1 == k { cube.max[d] } else { cube.min[d] + (ijk[d] + 1) as f64 * h };
            }
            let bounds = Box3::from_points(ps.iter().map(|q| q.pos))
                .ok_or_else(|| Error::Unsupported(format!("grid cell of rank {rank} holds no particles")))?;
            Ok(Partition { rank, bounds, domain, tree_bounds: bounds, count: ps.len(), particles: ps })
        })
        .collect()
}

/// Number of single-linkage clusters of the partition's particles at
/// distance `link`.
pub fn connectivity_components(part: &Partition, link: f64) -> Result<usize> {
    if part.particles.is_empty() {
        return Err(Error::invalid(format!("rank {} owns no particles", part.rank)));
    }
    if !(link > 0.0) {
        return Err(Error::invalid(format!("linking length must be positive, got {link}")));
    }
    let ps = &part.particles;
    let origin = part.bounds.min;
    let cell_of = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|d| ((p[d] - origin[d]) / link).floor() as i64) };
    let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
    for (i, q) in ps.iter().enumerate() {
        grid.entry(cell_of(&q.pos)).or_default().push(i);
    }
    let mut uf = UnionFind::<usize>::new(ps.len());
    for (i, q) in ps.iter().enumerate() {
        let c = cell_of(&q.pos);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in bucket {
                            if j > i && dist(q.pos, ps[j].pos) <= link {
                                uf.union(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut labels = uf.into_labeling();
    labels.sort_unstable();
    labels.dedup();
    Ok(labels.len())
}

/// Mean nearest-neighbor distance over a deterministic sample of at most
/// `samples` particles, measured against the whole set.
pub fn mean_nearest_neighbor(particles: &[Particle], samples: usize, seed: u64) -> f64 {
    let n = particles.len();
    if n < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, samples.min(n)).into_vec();
    let nearest: Vec<f64> = picks
        .par_iter()
        .map(|&i| {
            particles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| dist(q.pos, particles[i].pos))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nearest.iter().sum::<f64>() / picks.len() as f64
}

/// Default linking length: four times the sampled mean nearest-neighbor spacing.
pub fn default_linking_length(particles: &[Particle]) -> f64 {
    4.0 * mean_nearest_neighbor(particles, 1000, 0x5eed)
}
