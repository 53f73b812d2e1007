//! Lagrange shape functions on the reference triangle and quadrature rules.
//!
//! Degree-`p` elements use the equispaced Lagrange nodes `α/p` for barycentric
//! multi-indices `α = (α0, α1, α2)` with `|α| = p`. The shape function of node
//! `α` factorises as `φ_α(λ) = L_{α0}(λ0) L_{α1}(λ1) L_{α2}(λ2)` with the
//! one-dimensional factors `L_m(t) = Π_{r<m} (p t − r)/(m − r)`; values and
//! formal λ-derivatives come from precomputed polynomial coefficient arrays.
//!
//! Volume quadrature is a collapsed (Duffy) tensor Gauss–Legendre rule with
//! `p + 2` points per direction, exact for total degree `2p + 2` on the
//! triangle; edge quadrature is plain Gauss–Legendre with `p + 2` points.

use std::sync::OnceLock;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 4;

/// Gauss–Legendre nodes and weights on `[0, 1]` (weights sum to one).
pub fn gauss_legendre_01(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        // Newton iteration on P_m from the Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (4 * i + 3) as f64 / (4 * m + 2) as f64).cos();
        for _ in 0..60 {
            let (pm, dpm) = legendre(m, x);
            let dx = pm / dpm;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dpm) = legendre(m, x);
        let w = 2.0 / ((1.0 - x * x) * dpm * dpm);
        nodes.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    // Ascending nodes for deterministic layouts.
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
    (
        idx.iter().map(|&i| nodes[i]).collect(),
        idx.iter().map(|&i| weights[i]).collect(),
    )
}

/// Legendre polynomial `P_m` and its derivative at `x` via the three-term
/// recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Coefficients (ascending powers) of `L_m(t) = Π_{r<m} (p t − r)/(m − r)`.
fn lagrange_factor_coeffs(p: usize, m: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for r in 0..m {
        let denom = (m - r) as f64;
        // Multiply by (p t − r) / denom.
        let mut next = vec![0.0; c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k] -= ck * r as f64 / denom;
            next[k + 1] += ck * p as f64 / denom;
        }
        c = next;
    }
    c
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &ck)| k as f64 * ck)
        .collect()
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

/// Number of element-interior nodes for degree `p`.
pub fn interior_nodes_per_element(p: usize) -> usize {
    if p >= 2 {
        (p - 1) * (p - 2) / 2
    } else {
        0
    }
}

/// Local node multi-indices in the crate-wide local order: the three vertices,
/// then the interior nodes of local edges 0 `(v0→v1)`, 1 `(v1→v2)`,
/// 2 `(v2→v0)` walking away from the lower-numbered local vertex, then element
/// interior nodes with the first barycentric index decreasing fastest last.
pub fn local_nodes(p: usize) -> Vec<[u8; 3]> {
    let p8 = p as u8;
    let mut nodes = vec![[p8, 0, 0], [0, p8, 0], [0, 0, p8]];
    for s in 1..p8 {
        nodes.push([p8 - s, s, 0]);
    }
    for s in 1..p8 {
        nodes.push([0, p8 - s, s]);
    }
    for s in 1..p8 {
        nodes.push([s, 0, p8 - s]);
    }
    for i in (1..p8).rev() {
        for j in (1..p8).rev() {
            let rest = i as i32 + j as i32;
            let k = p as i32 - rest;
            if k >= 1 {
                nodes.push([i, j, k as u8]);
            }
        }
    }
    debug_assert_eq!(nodes.len(), (p + 1) * (p + 2) / 2);
    nodes
}

/// Precomputed shape-function tables for one polynomial degree.
pub struct ElementBasis {
    pub p: usize,
    pub n_local: usize,
    pub nodes: Vec<[u8; 3]>,
    /// Volume quadrature: barycentric points and weights summing to 1/2.
    pub qb: Vec<[f64; 3]>,
    pub qw: Vec<f64>,
    /// Tables indexed `q * n_local + a`.
    pub val: Vec<f64>,
    pub dl: Vec<[f64; 3]>,
    /// Second formal derivatives, component order `(00, 11, 22, 01, 02, 12)`.
    pub d2l: Vec<[f64; 6]>,
    /// Edge quadrature on `[0, 1]` (weights sum to one).
    pub edge_t: Vec<f64>,
    pub edge_w: Vec<f64>,
    /// Per local edge `j`, per edge point `m`: tables indexed
    /// `(j * edge_t.len() + m) * n_local + a`.
    pub edge_val: Vec<f64>,
    pub edge_dl: Vec<[f64; 3]>,
}

/// One-dimensional factor polynomials and derivative arrays for a degree.
struct Factors {
    /// `coeffs[m]` holds `L_m`, its first and second derivative coefficients.
    coeffs: Vec<[Vec<f64>; 3]>,
}

impl Factors {
    fn new(p: usize) -> Self {
        let coeffs = (0..=p)
            .map(|m| {
                let c = lagrange_factor_coeffs(p, m);
                let d = poly_deriv(&c);
                let dd = poly_deriv(&d);
                [c, d, dd]
            })
            .collect();
        Self { coeffs }
    }

    /// Value, first, and second derivative of `L_m` at `t`.
    fn eval(&self, m: usize, t: f64) -> (f64, f64, f64) {
        let [c, d, dd] = &self.coeffs[m];
        (poly_eval(c, t), poly_eval(d, t), poly_eval(dd, t))
    }
}

/// Value and formal λ-gradient and λ-Hessian of every shape function at `λ`.
fn eval_all(
    factors: &Factors,
    nodes: &[[u8; 3]],
    lambda: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>, Vec<[f64; 6]>) {
    let mut vals = Vec::with_capacity(nodes.len());
    let mut grads = Vec::with_capacity(nodes.len());
    let mut hessians = Vec::with_capacity(nodes.len());
    for alpha in nodes {
        let f: Vec<(f64, f64, f64)> = (0..3)
            .map(|i| factors.eval(alpha[i] as usize, lambda[i]))
            .collect();
        let (v0, d0, h0) = f[0];
        let (v1, d1, h1) = f[1];
        let (v2, d2, h2) = f[2];
        vals.push(v0 * v1 * v2);
        grads.push([d0 * v1 * v2, v0 * d1 * v2, v0 * v1 * d2]);
        hessians.push([
            h0 * v1 * v2,
            v0 * h1 * v2,
            v0 * v1 * h2,
            d0 * d1 * v2,
            d0 * v1 * d2,
            v0 * d1 * d2,
        ]);
    }
    (vals, grads, hessians)
}

fn build_basis(p: usize) -> ElementBasis {
    let nodes = local_nodes(p);
    let n_local = nodes.len();
    let factors = Factors::new(p);

    // Collapsed tensor rule: x = u, y = v (1 − u), weight w_u w_v (1 − u).
    let m = p + 2;
    let (gt, gw) = gauss_legendre_01(m);
    let mut qb = Vec::with_capacity(m * m);
    let mut qw = Vec::with_capacity(m * m);
    for (iu, &u) in gt.iter().enumerate() {
        for (iv, &v) in gt.iter().enumerate() {
            let x = u;
            let y = v * (1.0 - u);
            qb.push([1.0 - x - y, x, y]);
            qw.push(gw[iu] * gw[iv] * (1.0 - u));
        }
    }

    let mut val = Vec::with_capacity(qb.len() * n_local);
    let mut dl = Vec::with_capacity(qb.len() * n_local);
    let mut d2l = Vec::with_capacity(qb.len() * n_local);
    for &lambda in &qb {
        let (v, g, h) = eval_all(&factors, &nodes, lambda);
        val.extend(v);
        dl.extend(g);
        d2l.extend(h);
    }

    let (edge_t, edge_w) = gauss_legendre_01(p + 2);
    let mut edge_val = Vec::with_capacity(3 * edge_t.len() * n_local);
    let mut edge_dl = Vec::with_capacity(3 * edge_t.len() * n_local);
    for j in 0..3 {
        for &t in &edge_t {
            // Walk local edge j from local vertex j to local vertex (j+1)%3.
            let mut lambda = [0.0; 3];
            lambda[j] = 1.0 - t;
            lambda[(j + 1) % 3] = t;
            let (v, g, _) = eval_all(&factors, &nodes, lambda);
            edge_val.extend(v);
            edge_dl.extend(g);
        }
    }

    ElementBasis {
        p,
        n_local,
        nodes,
        qb,
        qw,
        val,
        dl,
        d2l,
        edge_t,
        edge_w,
        edge_val,
        edge_dl,
    }
}

static BASES: [OnceLock<ElementBasis>; MAX_DEGREE] = [
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
];

/// Shared shape-function tables for degree `p ∈ 1..=4`.
pub fn element_basis(p: usize) -> &'static ElementBasis {
    assert!((1..=MAX_DEGREE).contains(&p), "unsupported degree {p}");
    BASES[p - 1].get_or_init(|| build_basis(p))
}

/// Values and formal λ-gradients of all degree-`p` shape functions at an
/// arbitrary barycentric point (for interpolation and point evaluation).
pub fn eval_basis_at(p: usize, lambda: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let basis = element_basis(p);
    let factors = Factors::new(p);
    let (v, g, _) = eval_all(&factors, &basis.nodes, lambda);
    (v, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for m in 1..=6 {
            let (t, w) = gauss_legendre_01(m);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for k in 0..(2 * m) {
                let approx: f64 = t.iter().zip(&w).map(|(&ti, &wi)| wi * ti.powi(k as i32)).sum();
                let exact = 1.0 / (k + 1) as f64;
                assert!(
                    (approx - exact).abs() < 1e-14,
                    "m={m} k={k}: {approx} vs {exact}"
                );
            }
        }
    }

    /// Exact integral of `λ0^a λ1^b λ2^c` over the reference triangle
    /// (area 1/2): `a! b! c! / (a + b + c + 2)!`.
    fn bary_moment(a: u32, b: u32, c: u32) -> f64 {
        let fact = |n: u32| (1..=n as u64).product::<u64>() as f64;
        fact(a) * fact(b) * fact(c) / fact(a + b + c + 2)
    }

    #[test]
    fn volume_rule_is_exact_to_declared_degree() {
        for p in 1..=4usize {
            let basis = element_basis(p);
            assert!((basis.qw.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            let degree = 2 * p as u32 + 2;
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    for c in 0..=(degree - a - b) {
                        let approx: f64 = basis
                            .qb
                            .iter()
                            .zip(&basis.qw)
                            .map(|(l, &w)| {
                                w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)
                            })
                            .sum();
                        let exact = bary_moment(a, b, c);
                        assert!(
                            (approx - exact).abs() < 1e-14,
                            "p={p} moment ({a},{b},{c}): {approx} vs {exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nodal_property() {
        for p in 1..=4usize {
            let nodes = local_nodes(p);
            for (a, alpha) in nodes.iter().enumerate() {
                let lambda = [
                    alpha[0] as f64 / p as f64,
                    alpha[1] as f64 / p as f64,
                    alpha[2] as f64 / p as f64,
                ];
                let (vals, _) = eval_basis_at(p, lambda);
                for (b, &v) in vals.iter().enumerate() {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (v - expect).abs() < 1e-12,
                        "p={p}: phi_{b} at node {a} = {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for p in 1..=4usize {
            for _ in 0..20 {
                let x: f64 = rng.gen_range(0.0..1.0);
                let y: f64 = rng.gen_range(0.0..(1.0 - x));
                let (vals, grads) = eval_basis_at(p, [1.0 - x - y, x, y]);
                let sum: f64 = vals.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "p={p}: partition sum {sum}");
                // The physical gradient of the constant 1 vanishes because
                // grad(lambda_0) + grad(lambda_1) + grad(lambda_2) = 0, which
                // requires the three barycentric component sums to agree.
                let gsum: [f64; 3] =
                    std::array::from_fn(|d| grads.iter().map(|g| g[d]).sum());
                for d in 1..3 {
                    assert!(
                        (gsum[d] - gsum[0]).abs() < 1e-11,
                        "p={p}: component sums {gsum:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn local_node_counts() {
        for (p, expect) in [(1usize, 3usize), (2, 6), (3, 10), (4, 15)] {
            assert_eq!(local_nodes(p).len(), expect);
            let basis = element_basis(p);
            assert_eq!(basis.n_local, expect);
            assert_eq!(basis.qb.len(), (p + 2) * (p + 2));
        }
    }

    #[test]
    fn edge_tables_match_direct_evaluation() {
        let basis = element_basis(2);
        let nq = basis.edge_t.len();
        for j in 0..3 {
            for (m, &t) in basis.edge_t.iter().enumerate() {
                let mut lambda = [0.0; 3];
                lambda[j] = 1.0 - t;
                lambda[(j + 1) % 3] = t;
                let (vals, grads) = eval_basis_at(2, lambda);
                for a in 0..basis.n_local {
                    let idx = (j * nq + m) * basis.n_local + a;
                    assert!((basis.edge_val[idx] - vals[a]).abs() < 1e-14);
                    for d in 0..3 {
                        assert!((basis.edge_dl[idx][d] - grads[a][d]).abs() < 1e-13);
                    }
                }
            }
        }
    }
}
