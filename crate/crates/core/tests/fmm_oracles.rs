use std::collections::{BTreeMap, HashMap};

use approx::assert_relative_eq;
use fmmlab::fmm::{
    direct_sum, evaluate_logged, relative_l2_error, solve_serial, Interaction, SourceForest, TraversalConfig, Tree,
};
use fmmlab::lettree::graft;
use fmmlab::partition::{partition, PartitionScheme, SchemeKind};
use fmmlab::protocols::{exchange, ExchangeOptions, LetProblem, ProtocolKind};
use fmmlab::space::{generate, Box3, Distribution, DistributionKind, SfcKey};

fn particles(kind: DistributionKind, n: usize, seed: u64) -> Vec<fmmlab::fmm::Particle> {
    generate(&Distribution { kind, n, seed }).unwrap()
}

fn cfg(p: usize, theta: f64, n_leaf: usize) -> TraversalConfig {
    TraversalConfig { theta, n_leaf, p }
}

fn error_of(ps: &[fmmlab::fmm::Particle], c: &TraversalConfig) -> f64 {
    let (solved, stats) = solve_serial(ps.to_vec(), c).unwrap();
    assert_eq!(stats.uncovered, 0);
    let exact = direct_sum(ps, ps);
    relative_l2_error(&solved.iter().map(|p| p.phi).collect::<Vec<_>>(), &exact.phi)
}

/// Expand every logged cell pair into particle pairs and count them.
fn pair_counts(
    tree: &Tree,
    log: &[Interaction],
    source_ids: impl Fn(usize) -> Vec<usize>,
) -> HashMap<(usize, usize), usize> {
    let mut seen = HashMap::new();
    for it in log {
        let (Interaction::M2L { target, source } | Interaction::P2P { target, source }) = *it;
        let c = &tree.cells[target];
        let src = source_ids(source);
        for t in &tree.particles[c.start..c.end] {
            for &s in &src {
                *seen.entry((t.id, s)).or_insert(0) += 1;
            }
        }
    }
    seen
}

#[test]
fn serial_pair_accounting_is_exact() {
    for (kind, n, leaf) in [
        (DistributionKind::UniformCube, 512, 8),
        (DistributionKind::SphereSurface, 400, 16),
        (DistributionKind::SphereVolume, 300, 1),
    ] {
        let ps = particles(kind, n, 11);
        let c = cfg(3, 0.5, leaf);
        let bounds = Box3::from_points(ps.iter().map(|p| p.pos)).unwrap();
        let mut tree = Tree::build(ps.clone(), bounds, c).unwrap();
        tree.upward_pass();
        let forest = SourceForest::from_tree(&tree, 0);
        let mut log = Vec::new();
        let stats = evaluate_logged(&mut tree, &forest, &c, &mut log).unwrap();
        assert_eq!(stats.uncovered, 0);
        let counts = pair_counts(&tree, &log, |s| {
            let sc = &forest.cells[s];
            forest.particles[sc.particle_start..sc.particle_end].iter().map(|p| p.id.unwrap()).collect()
        });
        assert_eq!(counts.len(), n * n, "{kind:?}: some pair is missing");
        assert!(counts.values().all(|&v| v == 1), "{kind:?}: some pair counted twice");
    }
}

#[test]
fn let_pair_accounting_is_exact() {
    let ps = particles(DistributionKind::SphereSurface, 2048, 5);
    let c = cfg(3, 0.5, 16);
    let parts = partition(&ps, &PartitionScheme::new(SchemeKind::HybridOrb, 8)).unwrap();
    let pr = LetProblem::new(&parts, &c).unwrap();
    let out = exchange(ProtocolKind::Hsdx, &pr, &ExchangeOptions::default()).unwrap();
    // ids under every cell of every origin tree
    let under: Vec<BTreeMap<SfcKey, Vec<usize>>> = pr
        .trees
        .iter()
        .map(|t| t.cells.iter().map(|c| (c.key, t.particles[c.start..c.end].iter().map(|p| p.id).collect())).collect())
        .collect();
    let mut total = HashMap::new();
    for r in 0..pr.ranks() {
        let mut tree = pr.trees[r].clone();
        let let_tree = graft(&tree, r as u32, &out.received[r]).unwrap();
        let mut log = Vec::new();
        let stats = evaluate_logged(&mut tree, &let_tree.forest, &c, &mut log).unwrap();
        assert_eq!(stats.uncovered, 0);
        let f = &let_tree.forest;
        let counts = pair_counts(&tree, &log, |s| under[f.cells[s].origin as usize][&f.cells[s].key].clone());
        for (k, v) in counts {
            *total.entry(k).or_insert(0) += v;
        }
    }
    assert_eq!(total.len(), 2048 * 2048);
    assert!(total.values().all(|&v| v == 1));
}

/// Compensated sum, accurate to a few ulps regardless of length.
fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

#[test]
fn charge_is_conserved() {
    let ps = particles(DistributionKind::SphereSurface, 5000, 2);
    let q = neumaier(ps.iter().map(|p| p.q));
    let c = cfg(4, 0.4, 64);
    let bounds = Box3::from_points(ps.iter().map(|p| p.pos)).unwrap();
    let mut tree = Tree::build(ps.clone(), bounds, c).unwrap();
    tree.upward_pass();
    assert_relative_eq!(tree.multipole(0)[0], q, max_relative = 1e-14);
    assert_relative_eq!(tree.total_charge(), q, max_relative = 1e-14);

    let parts = partition(&ps, &PartitionScheme::new(SchemeKind::HotHilbert, 8)).unwrap();
    let pr = LetProblem::new(&parts, &c).unwrap();
    let out = exchange(ProtocolKind::Nbx, &pr, &ExchangeOptions::default()).unwrap();
    for r in 0..8 {
        let let_tree = graft(&pr.trees[r], r as u32, &out.received[r]).unwrap();
        let f = &let_tree.forest;
        let sum: f64 = f.roots.iter().map(|&root| f.multipole(root)[0]).sum();
        assert_relative_eq!(sum, q, max_relative = 1e-14);
    }
}

#[test]
fn error_decreases_with_order() {
    let ps = particles(DistributionKind::SphereSurface, 4096, 3);
    let errs: Vec<f64> = [2, 4, 6].iter().map(|&p| error_of(&ps, &cfg(p, 0.4, 64))).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn error_decreases_with_theta() {
    let ps = particles(DistributionKind::SphereSurface, 4096, 3);
    let errs: Vec<f64> = [0.8, 0.6, 0.4, 0.2].iter().map(|&t| error_of(&ps, &cfg(4, t, 64))).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn sphere_accuracy_at_default_settings() {
    let ps = particles(DistributionKind::SphereSurface, 10_000, 1);
    let e = error_of(&ps, &TraversalConfig::default());
    assert!(e <= 1e-3, "{e}");
}
