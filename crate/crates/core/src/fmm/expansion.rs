//! Cartesian Taylor expansions of the Laplace kernel `1/r`.
//!
//! Multipole coefficients are raw moments `Q_a = sum_j q_j (x_j - c)^a` over
//! multi-indices `a` with `|a| < p`. Local coefficients `L_b` are the Taylor
//! coefficients of the far-field potential, `phi(z + e) = sum_b L_b e^b`.
//! Kernel derivatives are carried as `D^g(1/r) / g!`, which obey a three-term
//! recurrence in `|g|`.

use crate::space::Vec3;

type Mi = [u8; 3];

fn degree(m: Mi) -> usize {
    usize::from(m[0]) + usize::from(m[1]) + usize::from(m[2])
}

fn binom(n: u8, k: u8) -> f64 {
    let (n, k) = (u64::from(n), u64::from(k));
    let mut r = 1u64;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r as f64
}

fn multi_binom(a: Mi, b: Mi) -> f64 {
    (0..3).map(|d| binom(a[d], b[d])).product()
}

/// All multi-indices with total degree `<= max_degree`, graded order.
fn graded_indices(max_degree: usize) -> Vec<Mi> {
    let mut out = Vec::new();
    for n in 0..=max_degree {
        for a in (0..=n).rev() {
            for b in (0..=n - a).rev() {
                let c = n - a - b;
                out.push([a as u8, b as u8, c as u8]);
            }
        }
    }
    out
}

/// Number of monomials of total degree `< p` in three variables.
pub fn coefficient_count(p: usize) -> usize {
    (p + 2) * (p + 1) * p / 6
}

#[derive(Debug, Clone)]
struct Lookup {
    side: usize,
    table: Vec<usize>,
}

impl Lookup {
    fn new(indices: &[Mi], max_degree: usize) -> Self {
        let side = max_degree + 1;
        let mut table = vec![usize::MAX; side * side * side];
        for (i, m) in indices.iter().enumerate() {
            table[Self::slot(side, *m)] = i;
        }
        Lookup { side, table }
    }

    fn slot(side: usize, m: Mi) -> usize {
        (usize::from(m[0]) * side + usize::from(m[1])) * side + usize::from(m[2])
    }

    fn get(&self, m: Mi) -> usize {
        self.table[Self::slot(self.side, m)]
    }
}

/// Weighted index term `(src, aux, weight)` of a translation table.
type Term = (usize, usize, f64);

/// Precomputed index tables for one expansion order.
#[derive(Debug, Clone)]
pub struct Expansion {
    order: usize,
    terms: Vec<Mi>,
    /// For each term of degree > 0: `(index of term - e_axis, axis)`.
    term_pred: Vec<(usize, usize)>,
    /// For each derivative index of degree > 0: predecessors along each axis
    /// (`g - e_i`) and second predecessors (`g - 2 e_i`).
    deriv_terms: Vec<Mi>,
    deriv_first: Vec<[Option<usize>; 3]>,
    deriv_second: Vec<[Option<usize>; 3]>,
    m2m: Vec<Vec<Term>>,
    m2l: Vec<Vec<Term>>,
    l2l: Vec<Vec<Term>>,
    /// For each local term, `(index of b - e_i, b_i)` per axis, for gradients.
    grad: Vec<[Option<(usize, f64)>; 3]>,
}

impl Expansion {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "expansion order must be at least 1");
        let max_deg = order - 1;
        let terms = graded_indices(max_deg);
        let lookup = Lookup::new(&terms, max_deg);
        let term_pred = terms
            .iter()
            .map(|m| match (0..3).find(|&d| m[d] > 0) {
                Some(d) => {
                    let mut q = *m;
                    q[d] -= 1;
                    (lookup.get(q), d)
                }
                None => (usize::MAX, 0),
            })
            .collect();

        // |a| + |b| < p keeps every retained term of the same truncation order.
        let deriv_terms = graded_indices(max_deg);
        let dlookup = Lookup::new(&deriv_terms, max_deg);
        let mut deriv_first = Vec::with_capacity(deriv_terms.len());
        let mut deriv_second = Vec::with_capacity(deriv_terms.len());
        for g in &deriv_terms {
            let mut f = [None; 3];
            let mut s = [None; 3];
            for d in 0..3 {
                if g[d] >= 1 {
                    let mut q = *g;
                    q[d] -= 1;
                    f[d] = Some(dlookup.get(q));
                }
                if g[d] >= 2 {
                    let mut q = *g;
                    q[d] -= 2;
                    s[d] = Some(dlookup.get(q));
                }
            }
            deriv_first.push(f);
            deriv_second.push(s);
        }

        let le = |a: Mi, b: Mi| (0..3).all(|d| b[d] <= a[d]);
        let diff = |a: Mi, b: Mi| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];

        let m2m = terms
            .iter()
            .map(|&a| {
                terms
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| le(a, b))
                    .map(|(bi, &b)| (bi, lookup.get(diff(a, b)), multi_binom(a, b)))
                    .collect()
            })
            .collect();

        let m2l = terms
            .iter()
            .map(|&b| {
                terms
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| degree(a) + degree(b) <= max_deg)
                    .map(|(ai, &a)| {
                        let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                        let sign = if degree(a) % 2 == 0 { 1.0 } else { -1.0 };
                        (ai, dlookup.get(s), sign * multi_binom(s, a))
                    })
                    .collect()
            })
            .collect();

        let l2l = terms
            .iter()
            .map(|&g| {
                terms
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| le(b, g))
                    .map(|(bi, &b)| (bi, lookup.get(diff(b, g)), multi_binom(b, g)))
                    .collect()
            })
            .collect();

        let grad = terms
            .iter()
            .map(|b| {
                let mut g = [None; 3];
                for d in 0..3 {
                    if b[d] > 0 {
                        let mut q = *b;
                        q[d] -= 1;
                        g[d] = Some((lookup.get(q), f64::from(b[d])));
                    }
                }
                g
            })
            .collect();

        Expansion { order, terms, term_pred, deriv_terms, deriv_first, deriv_second, m2m, m2l, l2l, grad }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Multi-index of coefficient `i`.
    pub fn index(&self, i: usize) -> [u8; 3] {
        self.terms[i]
    }

    /// Monomials `h^a` for every term.
    pub fn powers(&self, h: Vec3, out: &mut [f64]) {
        out[0] = 1.0;
        for i in 1..self.terms.len() {
            let (prev, axis) = self.term_pred[i];
            out[i] = out[prev] * h[axis];
        }
    }

    /// `D^g(1/|r|) / g!` for every derivative index `g`.
    pub fn kernel_derivatives(&self, r: Vec3, out: &mut [f64]) {
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let inv_r2 = 1.0 / r2;
        out[0] = inv_r2.sqrt();
        for i in 1..self.deriv_terms.len() {
            let n = degree(self.deriv_terms[i]) as f64;
            let mut first = 0.0;
            let mut second = 0.0;
            for d in 0..3 {
                if let Some(j) = self.deriv_first[i][d] {
                    first += r[d] * out[j];
                }
                if let Some(j) = self.deriv_second[i][d] {
                    second += out[j];
                }
            }
            out[i] = -((2.0 * n - 1.0) * first + (n - 1.0) * second) * inv_r2 / n;
        }
    }

    /// Accumulate the moments of point sources about `center`.
    pub fn p2m<I>(&self, sources: I, center: Vec3, m: &mut [f64])
    where
        I: IntoIterator<Item = (Vec3, f64)>,
    {
        let mut pw = vec![0.0; self.len()];
        for (x, q) in sources {
            self.powers([x[0] - center[0], x[1] - center[1], x[2] - center[2]], &mut pw);
            for (mi, p) in m.iter_mut().zip(&pw) {
                *mi += q * p;
            }
        }
    }

    /// Shift child moments about `child_center` onto `parent_center` and accumulate.
    pub fn m2m(&self, child: &[f64], child_center: Vec3, parent_center: Vec3, parent: &mut [f64]) {
        let h = [
            child_center[0] - parent_center[0],
            child_center[1] - parent_center[1],
            child_center[2] - parent_center[2],
        ];
        let mut pw = vec![0.0; self.len()];
        self.powers(h, &mut pw);
        for (a, row) in self.m2m.iter().enumerate() {
            let mut acc = 0.0;
            for &(b, delta, c) in row {
                acc += c * child[b] * pw[delta];
            }
            parent[a] += acc;
        }
    }

    /// Convert moments about `source_center` into a local expansion about
    /// `target_center` and accumulate.
    pub fn m2l(&self, m: &[f64], source_center: Vec3, target_center: Vec3, local: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.resize(self.deriv_terms.len(), 0.0);
        let r = [
            target_center[0] - source_center[0],
            target_center[1] - source_center[1],
            target_center[2] - source_center[2],
        ];
        self.kernel_derivatives(r, scratch);
        for (b, row) in self.m2l.iter().enumerate() {
            let mut acc = 0.0;
            for &(a, s, c) in row {
                acc += c * m[a] * scratch[s];
            }
            local[b] += acc;
        }
    }

    /// Re-center a local expansion from `parent_center` to `child_center` and accumulate.
    pub fn l2l(&self, parent: &[f64], parent_center: Vec3, child_center: Vec3, child: &mut [f64]) {
        let h = [
            child_center[0] - parent_center[0],
            child_center[1] - parent_center[1],
            child_center[2] - parent_center[2],
        ];
        let mut pw = vec![0.0; self.len()];
        self.powers(h, &mut pw);
        for (g, row) in self.l2l.iter().enumerate() {
            let mut acc = 0.0;
            for &(b, delta, c) in row {
                acc += c * parent[b] * pw[delta];
            }
            child[g] += acc;
        }
    }

    /// Potential and gradient of a local expansion at `x`.
    pub fn l2p(&self, local: &[f64], center: Vec3, x: Vec3, pw: &mut [f64]) -> (f64, Vec3) {
        self.powers([x[0] - center[0], x[1] - center[1], x[2] - center[2]], pw);
        let mut phi = 0.0;
        let mut grad = [0.0; 3];
        for (i, l) in local.iter().enumerate() {
            phi += l * pw[i];
            for d in 0..3 {
                if let Some((j, e)) = self.grad[i][d] {
                    grad[d] += e * l * pw[j];
                }
            }
        }
        (phi, grad)
    }

    /// Direct far-field evaluation of moments at `y`.
    pub fn m2p(&self, m: &[f64], center: Vec3, y: Vec3) -> f64 {
        let mut d = vec![0.0; self.deriv_terms.len()];
        self.kernel_derivatives([y[0] - center[0], y[1] - center[1], y[2] - center[2]], &mut d);
        self.terms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let sign = if degree(*a) % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[i] * d[i]
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_counts() {
        for p in 1..8 {
            assert_eq!(Expansion::new(p).len(), coefficient_count(p));
        }
        assert_eq!(coefficient_count(4), 20);
    }

    // central finite differences of 1/r as an independent oracle
    fn fd_derivative(r: Vec3, g: Mi) -> f64 {
        fn f(r: Vec3) -> f64 {
            1.0 / (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
        }
        fn rec(r: Vec3, g: Mi, h: f64) -> f64 {
            match (0..3).find(|&d| g[d] > 0) {
                None => f(r),
                Some(d) => {
                    let mut g2 = g;
                    g2[d] -= 1;
                    let mut rp = r;
                    let mut rm = r;
                    rp[d] += h;
                    rm[d] -= h;
                    (rec(rp, g2, h) - rec(rm, g2, h)) / (2.0 * h)
                }
            }
        }
        let fact: f64 = g.iter().map(|&k| (1..=u64::from(k)).product::<u64>() as f64).product();
        rec(r, g, 1e-3) / fact
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let e = Expansion::new(4);
        let r = [1.3, -0.7, 2.1];
        let mut d = vec![0.0; e.deriv_terms.len()];
        e.kernel_derivatives(r, &mut d);
        for (i, g) in e.deriv_terms.iter().enumerate() {
            let fd = fd_derivative(r, *g);
            assert!((d[i] - fd).abs() < 1e-5 * fd.abs().max(1e-3), "{g:?}: {} vs {fd}", d[i]);
        }
    }

    #[test]
    fn laplacian_of_derivatives_vanishes() {
        // a_{g+2e_x} * (g_x+2)(g_x+1) + ... = 0 since 1/r is harmonic
        let e = Expansion::new(7);
        let r = [0.4, 0.9, -1.2];
        let mut d = vec![0.0; e.deriv_terms.len()];
        e.kernel_derivatives(r, &mut d);
        let look = Lookup::new(&e.deriv_terms, 6);
        for g in graded_indices(4) {
            let mut s = 0.0;
            for ax in 0..3 {
                let mut h = g;
                h[ax] += 2;
                let k = f64::from(h[ax]);
                s += d[look.get(h)] * k * (k - 1.0);
            }
            assert!(s.abs() < 1e-10, "{g:?} {s}");
        }
    }

    #[test]
    fn m2m_is_exact_for_finite_moments() {
        let e = Expansion::new(5);
        let pts = [([0.1, 0.2, -0.1], 0.7), ([-0.05, 0.12, 0.3], -0.2), ([0.0, -0.2, 0.1], 1.1)];
        let c1 = [0.02, 0.01, 0.05];
        let c2 = [-0.3, 0.4, 0.25];
        let mut m1 = vec![0.0; e.len()];
        e.p2m(pts.iter().copied(), c1, &mut m1);
        let mut shifted = vec![0.0; e.len()];
        e.m2m(&m1, c1, c2, &mut shifted);
        let mut direct = vec![0.0; e.len()];
        e.p2m(pts.iter().copied(), c2, &mut direct);
        for (a, b) in shifted.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn l2l_is_exact_for_polynomials() {
        let e = Expansion::new(4);
        let l: Vec<f64> = (0..e.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let z0 = [0.0, 0.0, 0.0];
        let z1 = [0.3, -0.2, 0.1];
        let mut l1 = vec![0.0; e.len()];
        e.l2l(&l, z0, z1, &mut l1);
        let mut pw = vec![0.0; e.len()];
        for x in [[0.5, 0.1, -0.3], [0.31, -0.18, 0.12]] {
            let (a, ga) = e.l2p(&l, z0, x, &mut pw);
            let (b, gb) = e.l2p(&l1, z1, x, &mut pw);
            assert!((a - b).abs() < 1e-13);
            for d in 0..3 {
                assert!((ga[d] - gb[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn far_field_converges_with_order() {
        let pts = [([0.1, 0.2, -0.1], 0.5), ([-0.2, 0.05, 0.15], 0.5)];
        let c = [0.0; 3];
        let y = [1.5, -0.4, 0.9];
        let exact: f64 = pts.iter().map(|(x, q)| q / crate::space::dist(*x, y)).sum();
        let mut prev = f64::INFINITY;
        for p in [1, 2, 4, 6, 8] {
            let e = Expansion::new(p);
            let mut m = vec![0.0; e.len()];
            e.p2m(pts.iter().copied(), c, &mut m);
            let err = (e.m2p(&m, c, y) - exact).abs();
            assert!(err < prev, "p={p} err={err} prev={prev}");
            prev = err;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn m2l_then_l2p_matches_direct() {
        let e = Expansion::new(8);
        let pts = [([0.1, 0.2, -0.1], 0.5), ([-0.2, 0.05, 0.15], 0.5)];
        let cs = [0.0; 3];
        let ct = [4.0, 1.0, -2.0];
        let mut m = vec![0.0; e.len()];
        e.p2m(pts.iter().copied(), cs, &mut m);
        let mut l = vec![0.0; e.len()];
        let mut scratch = Vec::new();
        e.m2l(&m, cs, ct, &mut l, &mut scratch);
        let x = [4.1, 0.9, -1.85];
        let exact: f64 = pts.iter().map(|(p, q)| q / crate::space::dist(*p, x)).sum();
        let mut pw = vec![0.0; e.len()];
        let (phi, _) = e.l2p(&l, ct, x, &mut pw);
        assert!((phi - exact).abs() / exact < 1e-6);
    }
}
