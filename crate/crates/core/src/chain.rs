//! Three-point chains `K − zM` in flux form.
//!
//! Edge `j` joins nodes `j` and `j+1` with stiffness `k[j]` (possibly
//! infinite, i.e. rigid) and consistent-mass coupling `mu[j]`; node `j`
//! carries the row-sum mass `s[j]`. The quadratic forms are
//!
//! ```text
//! uᴴKu = Σ k_j |u_{j+1} − u_j|²,   uᴴMu = Σ s_j |u_j|² − Σ μ_j |u_{j+1} − u_j|².
//! ```
//!
//! Writing `κ_j = k_j + z μ_j`, `c_j = 1/κ_j` and the edge flux
//! `G_j = κ_j (u_{j+1} − u_j)`, the equation at node `j` becomes the
//! recurrence `G_j = G_{j−1} − z s_j u_j − r_j`, `u_{j+1} = u_j + c_j G_j`,
//! whose per-node transfer matrix has unit determinant. Rigid edges simply
//! have `c_j = 0`, so huge contrasts never enter a pivot.
//!
//! A chain with `N` edges is read either as cyclic (`N` nodes, node `N`
//! identified with `e^{iθ}` times node 0) or as Dirichlet (`N+1` nodes with
//! both ends pinned; `s[0]` unused).

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone)]
pub(crate) struct Chain {
    pub k: Vec<f64>,
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
}

impl Chain {
    pub fn edges(&self) -> usize {
        self.k.len()
    }

    fn compliance(&self, j: usize, z: f64) -> f64 {
        if self.k[j].is_infinite() {
            0.0
        } else {
            1.0 / (self.k[j] + z * self.mu[j])
        }
    }

    fn node_transfer(&self, j: usize, z: f64) -> Matrix2<f64> {
        let c = self.compliance(j, z);
        let zs = z * self.s[j];
        Matrix2::new(1.0 - zs * c, c, -zs, 1.0)
    }

    /// Map of `(u_0, G_{−1})` to `(u_N, G_{N−1})` for the homogeneous chain.
    pub fn monodromy(&self, z: f64) -> Matrix2<f64> {
        (0..self.edges()).fold(Matrix2::identity(), |m, j| self.node_transfer(j, z) * m)
    }

    /// Number of negative pivots of the Dirichlet chain (nodes `1..N−1`).
    pub fn dirichlet_count(&self, z: f64) -> usize {
        let n = self.edges();
        let mut count = 0;
        let mut q = 0.0;
        for j in 1..n {
            let c_prev = self.compliance(j - 1, z);
            q = if j == 1 {
                if c_prev == 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / c_prev
                }
            } else {
                let mut den = 1.0 + c_prev * q;
                if den == 0.0 {
                    den = f64::EPSILON;
                }
                if q.is_infinite() {
                    1.0 / c_prev
                } else {
                    q / den
                }
            } - z * self.s[j];
            let c = self.compliance(j, z);
            let kappa_sign = if c == 0.0 { 1.0 } else { c.signum() };
            if kappa_sign * (1.0 + c * q) < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Number of negative pivots of the free-ended chain; needs `s.len() = N+1`.
    pub fn free_count(&self, z: f64) -> usize {
        let n = self.edges();
        debug_assert_eq!(self.s.len(), n + 1);
        let mut count = 0;
        let mut q = -z * self.s[0];
        for j in 0..=n {
            if j > 0 {
                let c_prev = self.compliance(j - 1, z);
                let mut den = 1.0 + c_prev * q;
                if den == 0.0 {
                    den = f64::EPSILON;
                }
                q = q / den - z * self.s[j];
            }
            let pivot_sign = if j == n {
                q
            } else {
                let c = self.compliance(j, z);
                if c == 0.0 {
                    1.0
                } else {
                    c.signum() * (1.0 + c * q)
                }
            };
            if pivot_sign < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Number of eigenvalues below `z` of the cyclic pencil with phase `θ`.
    pub fn cyclic_count(&self, z: f64, theta: f64) -> usize {
        let p = self.monodromy(z);
        let schur = (p.trace() - 2.0 * theta.cos()) / p[(0, 1)];
        self.dirichlet_count(z) + usize::from(schur < 0.0)
    }

    /// `n`-th (1-based) eigenvalue of the cyclic pencil, by count bisection.
    pub fn cyclic_eigenvalue(&self, n: usize, theta: f64, tol: f64) -> f64 {
        self.cyclic_eigenvalue_above(n, theta, 0.0, tol)
    }

    /// As [`Self::cyclic_eigenvalue`], given that it is at least `lo ≥ 0`.
    pub fn cyclic_eigenvalue_above(&self, n: usize, theta: f64, lo: f64, tol: f64) -> f64 {
        let mut lo = lo;
        let mut hi = 2.0 * lo + 1.0;
        while self.cyclic_count(hi, theta) < n {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > tol * (1.0 + hi.abs()) {
            let mid = 0.5 * (lo + hi);
            if self.cyclic_count(mid, theta) >= n {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(K − zM) u = r` on the cyclic chain.
    pub fn solve_cyclic(&self, z: f64, theta: f64, r: &[C64]) -> Vec<C64> {
        let n = self.edges();
        assert_eq!(r.len(), n);
        let sweep = |u0: C64, g0: C64, out: Option<&mut Vec<C64>>| {
            let (mut u, mut g) = (u0, g0);
            let mut out = out;
            for j in 0..n {
                if let Some(o) = out.as_deref_mut() {
                    o.push(u);
                }
                g = g - z * self.s[j] * u - r[j];
                u += self.compliance(j, z) * g;
            }
            (u, g)
        };
        let (bu, bg) = sweep(C64::new(0.0, 0.0), C64::new(0.0, 0.0), None);
        let p = self.monodromy(z);
        let ph = C64::from_polar(1.0, theta);
        // (e^{iθ} I − Π) X0 = β
        let (a11, a12, a21, a22) = (ph - p[(0, 0)], C64::from(-p[(0, 1)]), C64::from(-p[(1, 0)]), ph - p[(1, 1)]);
        let det = a11 * a22 - a12 * a21;
        let u0 = (a22 * bu - a12 * bg) / det;
        let g0 = (a11 * bg - a21 * bu) / det;
        let mut out = Vec::with_capacity(n);
        sweep(u0, g0, Some(&mut out));
        out
    }

    /// Consistent-mass product `M f` on the cyclic chain.
    pub fn mass_apply(&self, f: &[C64], theta: f64) -> Vec<C64> {
        let mut out = edge_apply(&self.mu, f, theta);
        for ((o, s), v) in out.iter_mut().zip(&self.s).zip(f) {
            *o = s * v - *o;
        }
        out
    }
}

/// `W u` for the cyclic edge form `Σ w_j |u_{j+1} − u_j|²`; rigid edges skipped.
pub(crate) fn edge_apply(w: &[f64], u: &[C64], theta: f64) -> Vec<C64> {
    let n = u.len();
    let ph = C64::from_polar(1.0, theta);
    let mut out = vec![C64::new(0.0, 0.0); n];
    for j in (0..n).filter(|&j| w[j].is_finite() && w[j] != 0.0) {
        let (next, wrap) = if j + 1 == n { (ph * u[0], true) } else { (u[j + 1], false) };
        let g = w[j] * (next - u[j]);
        out[j] -= g;
        if wrap {
            out[0] += g * ph.conj();
        } else {
            out[j + 1] += g;
        }
    }
    out
}

/// `Σ w_j |u_{j+1} − u_j|²` over the edges of a cyclic chain; rigid
/// (infinite) weights are skipped.
pub(crate) fn edge_form(w: &[f64], u: &[C64], theta: f64) -> f64 {
    let n = u.len();
    let ph = C64::from_polar(1.0, theta);
    (0..n)
        .filter(|&j| w[j].is_finite())
        .map(|j| {
            let next = if j + 1 == n { ph * u[0] } else { u[j + 1] };
            w[j] * (next - u[j]).norm_sqr()
        })
        .sum()
}

/// `Σ w_j (u_{j+1} − u_j) conj(v_{j+1} − v_j)` over a cyclic chain.
pub(crate) fn edge_inner(w: &[f64], u: &[C64], v: &[C64], theta: f64) -> C64 {
    let n = u.len();
    let ph = C64::from_polar(1.0, theta);
    (0..n)
        .filter(|&j| w[j].is_finite())
        .map(|j| {
            let (un, vn) = if j + 1 == n { (ph * u[0], ph * v[0]) } else { (u[j + 1], v[j + 1]) };
            w[j] * (un - u[j]) * (vn - v[j]).conj()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    /// Dense Hermitian `K − zM` for the cyclic chain, assembled element by element.
    fn dense(chain: &Chain, z: f64, theta: f64) -> DMatrix<C64> {
        let n = chain.edges();
        let ph = C64::from_polar(1.0, theta);
        let mut a = DMatrix::<C64>::zeros(n, n);
        for j in 0..n {
            a[(j, j)] -= C64::from(z * chain.s[j]);
            let kap = chain.k[j] + z * chain.mu[j];
            // difference vector e_{j+1}(phase) − e_j
            let (i1, p1) = if j + 1 == n { (0, ph) } else { (j + 1, C64::from(1.0)) };
            let d = [(j, C64::from(-1.0)), (i1, p1)];
            for &(r, dr) in &d {
                for &(c, dc) in &d {
                    a[(r, c)] += kap * dr.conj() * dc;
                }
            }
        }
        a
    }

    fn random_chain(rng: &mut impl Rng, n: usize) -> Chain {
        Chain {
            k: (0..n).map(|_| rng.random_range(0.5..20.0)).collect(),
            mu: (0..n).map(|_| rng.random_range(0.0..0.05)).collect(),
            s: (0..n).map(|_| rng.random_range(0.2..1.0)).collect(),
        }
    }

    #[test]
    fn counts_match_dense_inertia() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for trial in 0..20 {
            let chain = random_chain(&mut rng, 12);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let z = rng.random_range(0.0..60.0);
            let eig = dense(&chain, z, theta).symmetric_eigenvalues();
            let negatives = eig.iter().filter(|&&e| e < 0.0).count();
            assert_eq!(chain.cyclic_count(z, theta), negatives, "trial {trial}");
        }
    }

    #[test]
    fn cyclic_solve_matches_dense() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let chain = random_chain(&mut rng, 9);
        let theta = 1.1;
        let r: Vec<C64> = (0..9).map(|_| C64::new(rng.random(), rng.random())).collect();
        let u = chain.solve_cyclic(-1.0, theta, &r);
        let a = dense(&chain, -1.0, theta);
        let res = &a * nalgebra::DVector::from_vec(u) - nalgebra::DVector::from_vec(r);
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn mass_apply_matches_form() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let chain = random_chain(&mut rng, 7);
        let theta = 2.3;
        let f: Vec<C64> = (0..7).map(|_| C64::new(rng.random(), rng.random())).collect();
        let mf = chain.mass_apply(&f, theta);
        let direct: C64 = f.iter().zip(&mf).map(|(a, b)| a.conj() * b).sum();
        let form: f64 = f.iter().zip(&chain.s).map(|(a, s)| s * a.norm_sqr()).sum::<f64>()
            - edge_form(&chain.mu, &f, theta);
        assert!((direct.re - form).abs() < 1e-13 && direct.im.abs() < 1e-13);
    }

    #[test]
    fn rigid_edges_collapse_nodes() {
        // two soft edges and a rigid edge: nodes 2 and 3(=phase·0) move together
        let chain = Chain {
            k: vec![1.0, 1.0, f64::INFINITY],
            mu: vec![0.0; 3],
            s: vec![1.0, 1.0, 1.0],
        };
        // at θ = 0 the collapsed system has dofs (u0=u2, u1): K = [[2,-2],[-2,2]], M = diag(2,1)
        let lam2 = 3.0; // eigenvalues of K − λM: 0 and 3
        assert_eq!(chain.cyclic_count(-1e-9, 0.0), 0);
        assert_eq!(chain.cyclic_count(1e-9, 0.0), 1);
        assert_eq!(chain.cyclic_count(lam2 - 1e-9, 0.0), 1);
        assert_eq!(chain.cyclic_count(lam2 + 1e-9, 0.0), 2);
    }

    #[test]
    fn dirichlet_count_of_uniform_string() {
        let n = 100;
        let l = 1.0 / n as f64;
        let chain = Chain { k: vec![1.0 / l; n], mu: vec![0.0; n], s: vec![l; n] };
        let lam1 = 4.0 / (l * l) * (std::f64::consts::PI * l / 2.0).sin().powi(2);
        assert_eq!(chain.dirichlet_count(lam1 * (1.0 - 1e-9)), 0);
        assert_eq!(chain.dirichlet_count(lam1 * (1.0 + 1e-9)), 1);
    }
}
