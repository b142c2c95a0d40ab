use std::collections::{BTreeMap, BTreeSet};

use fmmlab::space::{decode_key, encode_key, CurveKind, SfcKey, MAX_LEVEL};
use proptest::prelude::*;

fn all_cells(level: u8) -> impl Iterator<Item = (u32, u32, u32)> {
    let side = 1u32 << level;
    (0..side).flat_map(move |i| (0..side).flat_map(move |j| (0..side).map(move |k| (i, j, k))))
}

#[test]
fn exhaustive_roundtrip_at_level_three() {
    for kind in [CurveKind::Morton, CurveKind::Hilbert] {
        let mut keys = BTreeSet::new();
        for (i, j, k) in all_cells(3) {
            let key = encode_key(i, j, k, 3, kind).unwrap();
            assert!(key.key < 512);
            assert_eq!(decode_key(key), (i, j, k, 3));
            keys.insert(key.key);
        }
        assert_eq!(keys.len(), 512, "{kind:?} keys are not a bijection");
    }
}

#[test]
fn hilbert_steps_to_a_face_neighbor() {
    for level in 1..=4u8 {
        let mut order: Vec<SfcKey> =
            all_cells(level).map(|(i, j, k)| encode_key(i, j, k, level, CurveKind::Hilbert).unwrap()).collect();
        order.sort();
        for w in order.windows(2) {
            assert_eq!(w[1].key, w[0].key + 1);
            let (a, b) = (decode_key(w[0]), decode_key(w[1]));
            let manhattan = a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2);
            assert_eq!(manhattan, 1, "level {level}: {a:?} -> {b:?}");
        }
    }
}

#[test]
fn morton_jumps_are_not_continuous() {
    let mut order: Vec<SfcKey> =
        all_cells(2).map(|(i, j, k)| encode_key(i, j, k, 2, CurveKind::Morton).unwrap()).collect();
    order.sort();
    let max = order
        .windows(2)
        .map(|w| {
            let (a, b) = (decode_key(w[0]), decode_key(w[1]));
            a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2)
        })
        .max()
        .unwrap();
    assert!(max > 1);
}

#[test]
fn top_level_prefix_is_a_spatial_octant() {
    for kind in [CurveKind::Morton, CurveKind::Hilbert] {
        for level in 1..=4u8 {
            let shift = 3 * u32::from(level - 1);
            let mut octants: BTreeMap<u64, BTreeSet<(u32, u32, u32)>> = BTreeMap::new();
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for (i, j, k) in all_cells(level) {
                let key = encode_key(i, j, k, level, kind).unwrap();
                let h = level - 1;
                octants.entry(key.key >> shift).or_default().insert((i >> h, j >> h, k >> h));
                *counts.entry(key.key >> shift).or_default() += 1;
            }
            assert_eq!(counts.len(), 8);
            assert!(counts.values().all(|&c| c == 1 << shift), "{kind:?} level {level}: {counts:?}");
            assert!(octants.values().all(|s| s.len() == 1), "{kind:?} level {level}");
        }
    }
}

#[test]
fn parent_of_child_key() {
    let key = encode_key(5, 2, 7, 3, CurveKind::Morton).unwrap();
    for o in 0..8 {
        assert_eq!(key.child(o).parent(), Some(key));
    }
    assert_eq!(SfcKey::root(CurveKind::Morton).parent(), None);
}

proptest! {
    #[test]
    fn roundtrip_at_any_level(level in 0u8..=MAX_LEVEL, a in any::<u32>(), b in any::<u32>(), c in any::<u32>(),
                              hilbert in any::<bool>()) {
        let mask = if level == 0 { 0 } else { (1u32 << level) - 1 };
        let (i, j, k) = (a & mask, b & mask, c & mask);
        let kind = if hilbert { CurveKind::Hilbert } else { CurveKind::Morton };
        let key = encode_key(i, j, k, level, kind).unwrap();
        prop_assert_eq!(decode_key(key), (i, j, k, level));
    }
}
