//! Quasiperiodic cell problems on `Y = (0, 1)`: the finite-ε operator with
//! stiffness `a0` on `Y0` and `ε⁻² a1` on `Y1`, its limit on
//! `V_θ = {u : u' = 0 on Y1}`, and the first resolvent corrector.
//!
//! Everything is discretised by conforming P1 elements on one mesh whose
//! nodes include all coefficient breakpoints. A nodal vector has one entry
//! per node `y_0 = 0, …, y_{N−1}`; the value at `y = 1` is `e^{iθ}` times the
//! value at 0. The limit space is realised by making every stiff element
//! rigid, which is exactly the Galerkin restriction to `V_θ`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::chain::{edge_apply, edge_form, edge_inner, Chain};
use crate::model::{CoefficientProfile, MediumSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlochError {
    #[error("sampled function has {got} values, mesh has {expected} nodes")]
    Length { expected: usize, got: usize },
    #[error("corrector depth {0} is not implemented (supported: 0, 1)")]
    UnsupportedDepth(usize),
    #[error("assembly produced a singular or non-finite system: {0}")]
    Assembly(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiperiodicProblem {
    pub spec: MediumSpec,
    pub theta: f64,
    /// Target element counts on `Y0` and `Y1`.
    pub n0: usize,
    pub n1: usize,
}

impl QuasiperiodicProblem {
    pub fn new(spec: &MediumSpec, theta: f64) -> Self {
        Self::with_mesh(spec, theta, 512, 512)
    }

    pub fn with_mesh(spec: &MediumSpec, theta: f64, n0: usize, n1: usize) -> Self {
        Self {
            spec: spec.clone(),
            theta,
            n0,
            n1,
        }
    }

    pub fn assemble(&self) -> CellAssembly {
        CellAssembly::new(self)
    }
}

/// Element data on the cell mesh.
#[derive(Debug, Clone)]
pub struct CellAssembly {
    pub theta: f64,
    pub epsilon: f64,
    /// Node coordinates including `y = 1` as the last entry.
    pub y: Vec<f64>,
    /// Number of elements in `Y0`; element `e` joins nodes `e` and `e+1`.
    pub n_soft: usize,
    /// `∫a0/ℓ²` on soft elements, 0 on stiff ones.
    pub k0: Vec<f64>,
    /// `∫a1/ℓ²` on stiff elements, 0 on soft ones.
    pub k1: Vec<f64>,
    /// Off-diagonal consistent mass `∫ρ φ_e φ_{e+1}`.
    pub mu: Vec<f64>,
    /// Row sums of the consistent mass.
    pub s: Vec<f64>,
    /// `ρ` at the two ends of each element (affine in between).
    pub rho_ends: Vec<(f64, f64)>,
}

fn piece_nodes(a: &CoefficientProfile, rho: &CoefficientProfile, (l, r): (f64, f64), n: usize) -> Vec<f64> {
    let mut cuts = vec![l];
    cuts.extend(a.kinks_in(l, r));
    cuts.extend(rho.kinks_in(l, r));
    cuts.push(r);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let density = n as f64 / (r - l);
    let mut y = vec![l];
    for w in cuts.windows(2) {
        let m = ((density * (w[1] - w[0])).round() as usize).max(1);
        for i in 1..=m {
            y.push(if i == m { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / m as f64 });
        }
    }
    y
}

impl CellAssembly {
    fn new(prob: &QuasiperiodicProblem) -> Self {
        let spec = &prob.spec;
        let g = spec.geometry;
        let mut y = piece_nodes(&spec.a0, &spec.rho0, g.soft(), prob.n0);
        let n_soft = y.len() - 1;
        y.pop();
        y.extend(piece_nodes(&spec.a1, &spec.rho1, g.stiff(), prob.n1));
        let n = y.len() - 1;
        let (mut k0, mut k1, mut mu) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut s = vec![0.0; n];
        let mut rho_ends = Vec::with_capacity(n);
        for e in 0..n {
            let (ya, yb) = (y[e], y[e + 1]);
            let len = yb - ya;
            let (a, rho) = if e < n_soft { (&spec.a0, &spec.rho0) } else { (&spec.a1, &spec.rho1) };
            let stiffness = a.integral(ya, yb) / (len * len);
            if e < n_soft {
                k0[e] = stiffness;
            } else {
                k1[e] = stiffness;
            }
            // ρ is affine on every element because breakpoints are nodes
            let (ra, rb) = if rho.is_piecewise_constant() {
                let v = rho.eval(0.5 * (ya + yb));
                (v, v)
            } else {
                (rho.eval(ya), rho.eval(yb))
            };
            rho_ends.push((ra, rb));
            mu[e] = len * (ra + rb) / 12.0;
            s[e] += len * (2.0 * ra + rb) / 6.0;
            s[(e + 1) % n] += len * (ra + 2.0 * rb) / 6.0;
        }
        Self {
            theta: prob.theta,
            epsilon: spec.epsilon,
            y,
            n_soft,
            k0,
            k1,
            mu,
            s,
            rho_ends,
        }
    }

    pub fn nodes(&self) -> usize {
        self.s.len()
    }

    fn finite_chain(&self) -> Chain {
        let e2 = self.epsilon * self.epsilon;
        Chain {
            k: self.k0.iter().zip(&self.k1).map(|(a, b)| a + b / e2).collect(),
            mu: self.mu.clone(),
            s: self.s.clone(),
        }
    }

    fn limit_chain(&self) -> Chain {
        Chain {
            k: (0..self.nodes())
                .map(|e| if e < self.n_soft { self.k0[e] } else { f64::INFINITY })
                .collect(),
            mu: self.mu.clone(),
            s: self.s.clone(),
        }
    }

    fn check(&self, f: &[C64]) -> Result<(), BlochError> {
        if f.len() == self.nodes() {
            Ok(())
        } else {
            Err(BlochError::Length {
                expected: self.nodes(),
                got: f.len(),
            })
        }
    }

    /// `M f`.
    pub fn mass_apply(&self, f: &[C64]) -> Vec<C64> {
        self.finite_chain().mass_apply(f, self.theta)
    }

    /// `‖u‖²_{L²_ρ} = uᴴ M u`.
    pub fn l2_rho_sq(&self, u: &[C64]) -> f64 {
        let s: f64 = u.iter().zip(&self.s).map(|(v, s)| s * v.norm_sqr()).sum();
        s - edge_form(&self.mu, u, self.theta)
    }

    pub fn l2_rho(&self, u: &[C64]) -> f64 {
        self.l2_rho_sq(u).max(0.0).sqrt()
    }

    /// Inner product of `|||·|||`: `∫_{Y0} a0 u'v̄' + ∫_{Y1} a1 u'v̄' + ∫ ρ u v̄`.
    pub fn triple_inner(&self, u: &[C64], v: &[C64]) -> C64 {
        let mv = self.mass_apply(v);
        let mass: C64 = u.iter().zip(&mv).map(|(a, b)| a * b.conj()).sum();
        mass + edge_inner(&self.k0, u, v, self.theta) + edge_inner(&self.k1, u, v, self.theta)
    }

    pub fn triple_norm(&self, u: &[C64]) -> f64 {
        self.triple_inner(u, u).re.max(0.0).sqrt()
    }

    /// Dense Hermitian `(K_ε, M)` on the cyclic nodes.
    pub fn dense(&self) -> (DMatrix<C64>, DMatrix<C64>) {
        let n = self.nodes();
        let ph = C64::from_polar(1.0, self.theta);
        let e2 = self.epsilon * self.epsilon;
        let mut k = DMatrix::<C64>::zeros(n, n);
        let mut m = DMatrix::<C64>::zeros(n, n);
        for e in 0..n {
            let (b, pb) = if e + 1 == n { (0, ph) } else { (e + 1, C64::from(1.0)) };
            let stiff = self.k0[e] + self.k1[e] / e2;
            let mass_diag_a = self.s_part(e, true);
            let mass_diag_b = self.s_part(e, false);
            let idx = [(e, C64::from(1.0)), (b, pb)];
            for (r, &(ir, pr)) in idx.iter().enumerate() {
                for (c, &(ic, pc)) in idx.iter().enumerate() {
                    let sign = if r == c { 1.0 } else { -1.0 };
                    k[(ir, ic)] += pr.conj() * pc * (sign * stiff);
                    let mv = if r != c {
                        self.mu[e]
                    } else if r == 0 {
                        mass_diag_a
                    } else {
                        mass_diag_b
                    };
                    m[(ir, ic)] += pr.conj() * pc * mv;
                }
            }
        }
        (k, m)
    }

    /// `∫ρ φ²` over element `e` for its left (`true`) or right node.
    fn s_part(&self, e: usize, left: bool) -> f64 {
        let len = self.y[e + 1] - self.y[e];
        let (ra, rb) = self.rho_ends[e];
        if left {
            len * (3.0 * ra + rb) / 12.0
        } else {
            len * (ra + 3.0 * rb) / 12.0
        }
    }
}

fn finite(u: Vec<C64>, what: &str) -> Result<Vec<C64>, BlochError> {
    if u.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(u)
    } else {
        Err(BlochError::Assembly(format!("{what}: non-finite solution")))
    }
}

/// P1 Galerkin solution of `−((ε⁻²a1 + a0)u')' + ρu = ρf` in `H¹_θ(Y)`.
pub fn solve_finite_eps_resolvent(prob: &QuasiperiodicProblem, f: &[C64]) -> Result<Vec<C64>, BlochError> {
    solve_finite_with(&prob.assemble(), f)
}

pub fn solve_finite_with(asm: &CellAssembly, f: &[C64]) -> Result<Vec<C64>, BlochError> {
    asm.check(f)?;
    let rhs = asm.mass_apply(f);
    finite(asm.finite_chain().solve_cyclic(-1.0, asm.theta, &rhs), "finite-ε resolvent")
}

/// Galerkin solution in `V_θ` of `∫_{Y0} a0 u'φ̄' + ∫ρuφ̄ = ∫ρfφ̄`.
pub fn solve_limit_resolvent(prob: &QuasiperiodicProblem, f: &[C64]) -> Result<Vec<C64>, BlochError> {
    solve_limit_with(&prob.assemble(), f)
}

pub fn solve_limit_with(asm: &CellAssembly, f: &[C64]) -> Result<Vec<C64>, BlochError> {
    asm.check(f)?;
    let rhs = asm.mass_apply(f);
    limit_solve_rhs(asm, &rhs)
}

/// `V_θ` solve with a load vector instead of a function.
fn limit_solve_rhs(asm: &CellAssembly, rhs: &[C64]) -> Result<Vec<C64>, BlochError> {
    finite(asm.limit_chain().solve_cyclic(-1.0, asm.theta, rhs), "limit resolvent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionTerms {
    pub u0: Vec<C64>,
    /// `u^(2n)` for `n = 1..N`.
    pub correctors: Vec<Vec<C64>>,
}

/// `u^(0)` and, for `depth = 1`, the corrector `u^(2) ∈ V_θ^⊥`.
///
/// The corrector solves `K1 u2 = Mf − (K0 + M)u0`, whose right side is
/// annihilated by `V_θ`. A particular solution is built by sweeping the
/// stiff flux from `y = h` with zero data; subtracting its `|||·|||`
/// projection onto `V_θ` (a limit solve) gives the unique orthogonal one.
pub fn expansion_terms(prob: &QuasiperiodicProblem, f: &[C64], depth: usize) -> Result<ExpansionTerms, BlochError> {
    if depth > 1 {
        return Err(BlochError::UnsupportedDepth(depth));
    }
    let asm = prob.assemble();
    let u0 = solve_limit_with(&asm, f)?;
    if depth == 0 {
        return Ok(ExpansionTerms { u0, correctors: Vec::new() });
    }
    Ok(ExpansionTerms {
        correctors: vec![corrector(&asm, f, &u0)?],
        u0,
    })
}

/// `(K0 + M) u`.
fn soft_plus_mass(asm: &CellAssembly, u: &[C64]) -> Vec<C64> {
    let ku = edge_apply(&asm.k0, u, asm.theta);
    asm.mass_apply(u).iter().zip(&ku).map(|(a, b)| a + b).collect()
}

fn corrector(asm: &CellAssembly, f: &[C64], u0: &[C64]) -> Result<Vec<C64>, BlochError> {
    let n = asm.nodes();
    let mf = asm.mass_apply(f);
    let g: Vec<C64> = mf.iter().zip(soft_plus_mass(asm, u0)).map(|(a, b)| a - b).collect();
    let mut p = vec![C64::new(0.0, 0.0); n];
    let mut flux = C64::new(0.0, 0.0);
    let mut val = C64::new(0.0, 0.0);
    for j in asm.n_soft..n {
        flux -= g[j];
        val += flux / asm.k1[j];
        if j + 1 < n {
            p[j + 1] = val;
        }
    }
    // val is p at y = 1
    p[0] = val * C64::from_polar(1.0, -asm.theta);
    let shift = limit_solve_rhs(asm, &soft_plus_mass(asm, &p))?;
    finite(p.iter().zip(&shift).map(|(a, b)| a - b).collect(), "corrector")
}

/// Lowest `n_max` eigenvalues of the finite-ε pencil, ascending.
pub fn band_eigenvalues_eps(prob: &QuasiperiodicProblem, n_max: usize) -> Vec<f64> {
    let asm = prob.assemble();
    let chain = asm.finite_chain();
    (1..=n_max).map(|n| chain.cyclic_eigenvalue(n, prob.theta, 1e-14)).collect()
}

/// Lowest `n_max` eigenvalues of the limit pencil on `V_θ`.
pub fn band_eigenvalues_limit(prob: &QuasiperiodicProblem, n_max: usize) -> Vec<f64> {
    let asm = prob.assemble();
    let chain = asm.limit_chain();
    (1..=n_max).map(|n| chain.cyclic_eigenvalue(n, prob.theta, 1e-14)).collect()
}

/// Nodal samples of `f` on the mesh of `asm`.
pub fn sample(asm: &CellAssembly, f: impl Fn(f64) -> C64) -> Vec<C64> {
    asm.y[..asm.nodes()].iter().map(|&y| f(y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(eps: f64) -> MediumSpec {
        MediumSpec::constant_unit(0.5, eps).unwrap()
    }

    fn ones(asm: &CellAssembly) -> Vec<C64> {
        vec![C64::new(1.0, 0.0); asm.nodes()]
    }

    #[test]
    fn assembly_is_hermitian_and_chain_consistent() {
        let mut spec = unit(0.2);
        spec.rho1 = CoefficientProfile::sampled(vec![1.0, 2.0, 1.5], (0.5, 1.0));
        let prob = QuasiperiodicProblem::with_mesh(&spec, 1.3, 8, 8);
        let asm = prob.assemble();
        let (k, m) = asm.dense();
        assert_eq!(k, k.adjoint());
        assert_eq!(m, m.adjoint());
        // chain counts agree with the dense pencil
        let l = m.clone().cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let a = &linv * k * linv.adjoint();
        let eig = a.symmetric_eigenvalues();
        let chain = asm.finite_chain();
        for z in [0.5, 10.0, 80.0, 400.0] {
            let dense = eig.iter().filter(|&&e| e < z).count();
            assert_eq!(chain.cyclic_count(z, 1.3), dense);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let prob = QuasiperiodicProblem::with_mesh(&unit(0.1), 0.4, 64, 64);
        let asm = prob.assemble();
        let z = vec![C64::new(0.0, 0.0); asm.nodes()];
        assert!(solve_finite_with(&asm, &z).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(solve_limit_with(&asm, &z).unwrap().iter().all(|v| v.norm() == 0.0));
        let t = expansion_terms(&prob, &z, 0).unwrap();
        assert!(t.correctors.is_empty());
        assert!(matches!(expansion_terms(&prob, &z, 2), Err(BlochError::UnsupportedDepth(2))));
        assert!(matches!(solve_limit_with(&asm, &z[1..]), Err(BlochError::Length { .. })));
    }

    #[test]
    fn limit_resolvent_of_constant_at_theta_zero() {
        // f ≡ 1, θ = 0: u ≡ 1 solves the limit problem exactly
        let prob = QuasiperiodicProblem::with_mesh(&unit(0.1), 0.0, 64, 64);
        let asm = prob.assemble();
        let u = solve_limit_with(&asm, &ones(&asm)).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).norm() < 1e-12));
        assert!(asm.l2_rho(&u) <= asm.l2_rho(&ones(&asm)) + 1e-12);
    }

    #[test]
    fn limit_is_constant_on_stiff_part() {
        let prob = QuasiperiodicProblem::with_mesh(&unit(0.1), 2.0, 64, 64);
        let asm = prob.assemble();
        let f = sample(&asm, |y| C64::new((3.0 * y).sin(), y * y));
        let u = solve_limit_with(&asm, &f).unwrap();
        let c = u[asm.n_soft];
        for v in &u[asm.n_soft..] {
            assert!((v - c).norm() < 1e-12 * c.norm());
        }
        assert!((u[0] * C64::from_polar(1.0, 2.0) - c).norm() < 1e-12 * c.norm());
        assert!(asm.l2_rho(&u) <= asm.l2_rho(&f));
    }

    #[test]
    fn corrector_is_orthogonal_to_limit_space() {
        let theta = 0.9;
        let prob = QuasiperiodicProblem::with_mesh(&unit(0.1), theta, 64, 64);
        let asm = prob.assemble();
        let f = sample(&asm, |y| C64::new(1.0 + y, (5.0 * y).cos()));
        let t = expansion_terms(&prob, &f, 1).unwrap();
        let u2 = &t.correctors[0];
        let norm = asm.triple_norm(u2);
        let mut state = 12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..5 {
            let c = C64::new(rnd(), rnd());
            let v: Vec<C64> = (0..asm.nodes())
                .map(|j| {
                    if j == 0 {
                        c * C64::from_polar(1.0, -theta)
                    } else if j >= asm.n_soft {
                        c
                    } else {
                        C64::new(rnd(), rnd())
                    }
                })
                .collect();
            assert!(asm.triple_inner(u2, &v).norm() < 1e-8 * norm * asm.triple_norm(&v));
        }
    }

    #[test]
    fn eigenvalues_ascending_and_close_to_limit() {
        let prob = QuasiperiodicProblem::with_mesh(&unit(0.05), PI / 2.0, 256, 256);
        let e = band_eigenvalues_eps(&prob, 4);
        let l = band_eigenvalues_limit(&prob, 4);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!(e[0] > 0.0);
        for (a, b) in e.iter().zip(&l) {
            assert!((a - b).abs() < 0.01 * b, "{a} vs {b}");
        }
        let zero = band_eigenvalues_eps(&QuasiperiodicProblem::with_mesh(&unit(0.05), 0.0, 64, 64), 1);
        assert!(zero[0].abs() < 1e-12);
    }
}
