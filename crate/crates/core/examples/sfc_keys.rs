//! Morton and Hilbert orderings of a small grid, and the step size between
//! consecutive Hilbert cells.
//!
//! cargo run --example sfc_keys -- [level]

use fmmlab::space::{decode_key, encode_key, CurveKind, SfcKey};

fn main() -> fmmlab::Result<()> {
    let level: u8 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let side = 1u32 << level;

    for kind in [CurveKind::Morton, CurveKind::Hilbert] {
        let mut cells = Vec::new();
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    cells.push(encode_key(i, j, k, level, kind)?);
                }
            }
        }
        cells.sort();
        let mut max_jump = 0;
        let mut prev: Option<(u32, u32, u32)> = None;
        for c in &cells {
            let (i, j, k, _) = decode_key(*c);
            if let Some((a, b, d)) = prev {
                max_jump = max_jump.max(a.abs_diff(i) + b.abs_diff(j) + d.abs_diff(k));
            }
            prev = Some((i, j, k));
        }
        println!("{kind:?}: {} cells, largest step between consecutive cells = {max_jump}", cells.len());
        if level == 1 {
            let order: Vec<String> = cells
                .iter()
                .map(|c| {
                    let (i, j, k, _) = decode_key(*c);
                    format!("({i}{j}{k})")
                })
                .collect();
            println!("  order {}", order.join(" "));
        }
    }

    let leaf = encode_key(5, 3, 6, 3, CurveKind::Morton)?;
    let chain: Vec<String> =
        std::iter::successors(Some(leaf), SfcKey::parent).map(|k| format!("{:#o}@{}", k.key, k.level)).collect();
    println!("morton ancestors of (5,3,6) at level 3: {}", chain.join(" -> "));
    Ok(())
}
