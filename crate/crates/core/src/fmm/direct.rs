use rayon::prelude::*;

use super::tree::Particle;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectSum {
    /// Potential at each target, in target order.
    pub phi: Vec<f64>,
    /// Distinct particles found at distance zero (skipped).
    pub coincident: usize,
}

/// `phi_i = sum_{j != i} q_j / |x_i - x_j|`; identity is the particle id.
pub fn direct_sum(targets: &[Particle], sources: &[Particle]) -> DirectSum {
    let rows: Vec<(f64, usize)> = targets
        .par_iter()
        .map(|t| {
            let mut phi = 0.0;
            let mut coincident = 0;
            for s in sources {
                if s.id == t.id {
                    continue;
                }
                let dx = [t.pos[0] - s.pos[0], t.pos[1] - s.pos[1], t.pos[2] - s.pos[2]];
                let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
                if r2 == 0.0 {
                    coincident += 1;
                    continue;
                }
                phi += s.q / r2.sqrt();
            }
            (phi, coincident)
        })
        .collect();
    DirectSum { coincident: rows.iter().map(|r| r.1).sum(), phi: rows.into_iter().map(|r| r.0).collect() }
}

/// `||a - b||_2 / ||b||_2`.
pub fn relative_l2_error(approx: &[f64], exact: &[f64]) -> f64 {
    assert_eq!(approx.len(), exact.len());
    let num: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Largest per-entry relative difference `|a - b| / |b|`.
pub fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}
