//! Brute-force reference solvers.
//!
//! The truncated-line oracle discretises `-(a^ε u')' = λ ρ^ε u` on
//! `[c − L, c + L]` with Dirichlet ends by the conservative three-point
//! scheme: every coefficient interface is a node, edge coefficients are the
//! exact harmonic means `1/∫a⁻¹` and the mass is lumped. Gap eigenvalues are
//! located by Sturm-count bisection and eigenvectors by inverse iteration.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::chain::Chain;
use crate::model::{MediumSpec, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("meshing error: {0}")]
    Mesh(String),
    #[error("inverse iteration failed near λ = {lambda} after {attempts} shifts")]
    Shift { lambda: f64, attempts: usize },
    #[error("invalid gap interval ({0}, {1})")]
    Gap(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedProblem {
    pub spec: MediumSpec,
    pub half_width_l: f64,
    pub center: f64,
    pub nodes_per_cell: usize,
    /// Multiplies every per-piece node count; `2` nests exactly in `1`.
    pub refinement: usize,
}

impl TruncatedProblem {
    /// Domain centred on the defect with the default half width
    /// `max|d± − c| + 20ε/ν* + 2`.
    pub fn new(spec: &MediumSpec, nodes_per_cell: usize, nu_star: f64) -> Self {
        let (center, reach) = match &spec.defect {
            Some(d) => (0.5 * (d.d_minus + d.d_plus), 0.5 * d.len()),
            None => (0.0, 0.0),
        };
        Self {
            spec: spec.clone(),
            half_width_l: reach + 20.0 * spec.epsilon / nu_star + 2.0,
            center,
            nodes_per_cell,
            refinement: 1,
        }
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self {
            refinement: self.refinement * factor,
            ..self.clone()
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.center - self.half_width_l, self.center + self.half_width_l)
    }
}

/// Tridiagonal pencil on nodes `x_0..x_N`; `k[j]` couples `j` and `j+1`,
/// `m[j]` is the lumped mass. Both ends are Dirichlet.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub m: Vec<f64>,
}

impl Pencil {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn chain(&self) -> Chain {
        Chain {
            k: self.k.clone(),
            mu: vec![0.0; self.k.len()],
            s: self.m[..self.k.len()].to_vec(),
        }
    }

    /// Number of eigenvalues of the Dirichlet pencil below `z`.
    pub fn count_below(&self, z: f64) -> usize {
        self.chain().dirichlet_count(z)
    }

    /// Dense `(K, M)` on the interior nodes, for small checks.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.len() - 2;
        let mut kd = DMatrix::zeros(n, n);
        let mut md = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = i + 1;
            kd[(i, i)] = self.k[j - 1] + self.k[j];
            md[(i, i)] = self.m[j];
            if i + 1 < n {
                kd[(i, i + 1)] = -self.k[j];
                kd[(i + 1, i)] = -self.k[j];
            }
        }
        (kd, md)
    }

    /// `(K − zM) u` on interior nodes (end values ignored).
    pub fn apply_shifted(&self, z: f64, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for j in 1..n - 1 {
            out[j] = self.k[j - 1] * (u[j] - u[j - 1]) + self.k[j] * (u[j] - u[j + 1]) - z * self.m[j] * u[j];
        }
        out
    }
}

/// Splits `[a, b]` by the sorted interior points `cuts`, returning the nodes
/// with `ceil(density·len)·refinement` uniform steps per piece.
fn mesh_pieces(cuts: &[f64], density: f64, refinement: usize) -> Vec<f64> {
    let mut x = vec![cuts[0]];
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        let n = ((density * len).ceil() as usize).max(1) * refinement;
        for i in 1..=n {
            x.push(if i == n { w[1] } else { w[0] + len * i as f64 / n as f64 });
        }
    }
    x
}

/// Exact harmonic stiffness `1/∫a⁻¹` and mass `∫ρ` of the element `[x0, x1]`.
fn element(spec: &MediumSpec, x0: f64, x1: f64) -> (f64, f64) {
    let eps = spec.epsilon;
    let mid = 0.5 * (x0 + x1);
    match spec.region(mid) {
        Region::Defect => {
            let d = spec.defect.as_ref().expect("defect region");
            (1.0 / d.a_d.integral_inverse(x0, x1), d.rho_d.integral(x0, x1))
        }
        region => {
            let z = (mid / eps).floor();
            let (y0, y1) = (x0 / eps - z, x1 / eps - z);
            if region == Region::Soft {
                let (y0, y1) = (y0.clamp(0.0, spec.h()), y1.clamp(0.0, spec.h()));
                (1.0 / (spec.a0.integral_inverse(y0, y1) / eps), eps * spec.rho0.integral(y0, y1))
            } else {
                let (y0, y1) = (y0.clamp(spec.h(), 1.0), y1.clamp(spec.h(), 1.0));
                (1.0 / (eps * spec.a1.integral_inverse(y0, y1)), eps * spec.rho1.integral(y0, y1))
            }
        }
    }
}

/// Conservative three-point pencil for the truncated problem.
pub fn discretize(prob: &TruncatedProblem) -> Result<Pencil, OracleError> {
    let spec = &prob.spec;
    let eps = spec.epsilon;
    let (lo, hi) = prob.domain();
    if prob.nodes_per_cell < 32 || prob.refinement == 0 {
        return Err(OracleError::Mesh(format!(
            "nodes_per_cell = {} is below 32",
            prob.nodes_per_cell
        )));
    }
    let mut cuts = vec![lo, hi];
    let (z0, z1) = ((lo / eps).floor() as i64, (hi / eps).ceil() as i64);
    let soft_kinks = spec.a0.kinks_in(0.0, spec.h()).into_iter().chain(spec.rho0.kinks_in(0.0, spec.h()));
    let stiff_kinks = spec.a1.kinks_in(spec.h(), 1.0).into_iter().chain(spec.rho1.kinks_in(spec.h(), 1.0));
    let cell_points: Vec<f64> = [0.0, spec.h()].into_iter().chain(soft_kinks).chain(stiff_kinks).collect();
    for z in z0..=z1 {
        cuts.extend(cell_points.iter().map(|y| eps * (z as f64 + y)));
    }
    if let Some(d) = &spec.defect {
        // lattice interfaces inside D are overridden by the defect
        cuts.retain(|&x| !(x > d.d_minus && x < d.d_plus));
        cuts.extend([d.d_minus, d.d_plus]);
        cuts.extend(d.a_d.kinks_in(d.d_minus, d.d_plus));
        cuts.extend(d.rho_d.kinks_in(d.d_minus, d.d_plus));
    }
    cuts.retain(|&x| x >= lo && x <= hi);
    cuts.sort_by(f64::total_cmp);
    let tiny = 1e-12 * eps;
    cuts.dedup_by(|a, b| (*a - *b).abs() < tiny);
    let x = mesh_pieces(&cuts, prob.nodes_per_cell as f64 / eps, prob.refinement);
    let n = x.len();
    let mut k = Vec::with_capacity(n - 1);
    let mut m = vec![0.0; n];
    for j in 0..n - 1 {
        let (kj, mass) = element(spec, x[j], x[j + 1]);
        if !(kj.is_finite() && kj > 0.0 && mass > 0.0) {
            return Err(OracleError::Mesh(format!("degenerate element [{}, {}]", x[j], x[j + 1])));
        }
        k.push(kj);
        m[j] += 0.5 * mass;
        m[j + 1] += 0.5 * mass;
    }
    Ok(Pencil { x, k, m })
}

#[derive(Debug, Clone)]
pub struct GapEigenpair {
    pub lambda: f64,
    /// Nodal values, `Σ m_j u_j² = 1`, largest entry positive.
    pub u: Vec<f64>,
    pub boundary_mass_fraction: f64,
    pub spurious: bool,
    pub residual: f64,
}

/// Bisects the `index`-th eigenvalue (1-based count) inside `(lo, hi)`.
fn bisect_index(p: &Pencil, index: usize, mut lo: f64, mut hi: f64) -> f64 {
    let chain = p.chain();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.abs() {
            break;
        }
        if chain.dirichlet_count(mid) >= index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves the tridiagonal system `(K − σM) x = b` on interior nodes by
/// Gaussian elimination with partial pivoting (the `gtsv` scheme); `None` on
/// an exactly zero pivot.
fn gtsv(p: &Pencil, sigma: f64, b: &[f64]) -> Option<Vec<f64>> {
    let n = p.len() - 2;
    let mut d: Vec<f64> = (0..n).map(|i| p.k[i] + p.k[i + 1] - sigma * p.m[i + 1]).collect();
    let mut du: Vec<f64> = (0..n.saturating_sub(1)).map(|i| -p.k[i + 1]).collect();
    // holds the subdiagonal, then the second superdiagonal after a swap
    let mut dl = du.clone();
    let mut x: Vec<f64> = b[1..n + 1].to_vec();
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                return None;
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            x[i + 1] -= fact * x[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i + 2 < n {
                dl[i] = du[i + 1];
                du[i + 1] = -fact * dl[i];
            } else {
                dl[i] = 0.0;
            }
            du[i] = temp;
            let t = x[i];
            x[i] = x[i + 1];
            x[i + 1] = t - fact * x[i + 1];
        }
    }
    if d[n - 1] == 0.0 {
        return None;
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        if i + 1 < n {
            s -= du[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= dl[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    let mut out = vec![0.0; n + 2];
    out[1..n + 1].copy_from_slice(&x);
    Some(out)
}

/// Inverse iteration at `lambda`, with up to five jittered shifts.
fn eigenvector(p: &Pencil, lambda: f64) -> Result<Vec<f64>, OracleError> {
    let n = p.len();
    let mut attempts = 0;
    let mut sigma = lambda;
    while attempts < 5 {
        attempts += 1;
        let mut u: Vec<f64> = (0..n)
            .map(|j| if j == 0 || j == n - 1 { 0.0 } else { 1.0 + 0.1 * ((j % 7) as f64) })
            .collect();
        let mut ok = true;
        for _ in 0..3 {
            let b: Vec<f64> = u.iter().zip(&p.m).map(|(a, m)| a * m).collect();
            match gtsv(p, sigma, &b) {
                Some(x) => {
                    let norm = x.iter().zip(&p.m).map(|(a, m)| m * a * a).sum::<f64>().sqrt();
                    if !(norm.is_finite() && norm > 0.0) {
                        ok = false;
                        break;
                    }
                    u = x.into_iter().map(|a| a / norm).collect();
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let imax = (0..n).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
            if u[imax] < 0.0 {
                u.iter_mut().for_each(|a| *a = -*a);
            }
            return Ok(u);
        }
        sigma = lambda * (1.0 + 1e-13 * attempts as f64) + 1e-14;
    }
    Err(OracleError::Shift { lambda, attempts })
}

/// Eigenpairs of the truncated pencil strictly inside `gap`.
pub fn gap_eigenpairs_of(p: &Pencil, center: f64, half_width: f64, gap: (f64, f64)) -> Result<Vec<GapEigenpair>, OracleError> {
    let (a, b) = gap;
    if !(a < b && a >= 0.0) {
        return Err(OracleError::Gap(a, b));
    }
    let chain = p.chain();
    let base = chain.dirichlet_count(a);
    let top = chain.dirichlet_count(b);
    let mut out = Vec::new();
    for index in base + 1..=top {
        let lambda = bisect_index(p, index, a, b);
        let u = eigenvector(p, lambda)?;
        let outer: f64 = p
            .x
            .iter()
            .zip(&u)
            .zip(&p.m)
            .filter(|((x, _), _)| (*x - center).abs() > 0.5 * half_width)
            .map(|((_, v), m)| m * v * v)
            .sum();
        let ku = p.apply_shifted(lambda, &u);
        let mu_norm = u.iter().zip(&p.m).map(|(v, m)| (m * v).powi(2)).sum::<f64>().sqrt();
        let residual = ku.iter().map(|r| r * r).sum::<f64>().sqrt() / mu_norm;
        out.push(GapEigenpair {
            lambda,
            u,
            boundary_mass_fraction: outer,
            spurious: outer > 1e-6,
            residual,
        });
    }
    Ok(out)
}

/// Eigenpairs of the truncated problem inside `gap`; spurious edge modes
/// are flagged, not removed.
pub fn gap_eigenpairs(prob: &TruncatedProblem, gap: (f64, f64)) -> Result<(Pencil, Vec<GapEigenpair>), OracleError> {
    let p = discretize(prob)?;
    let pairs = gap_eigenpairs_of(&p, prob.center, prob.half_width_l, gap)?;
    Ok((p, pairs))
}

/// Genuine gap eigenvalues extrapolated from meshes `n` and `2n`
/// (second-order scheme), together with the fine-mesh values.
pub fn extrapolated_gap_eigenvalues(prob: &TruncatedProblem, gap: (f64, f64)) -> Result<Vec<(f64, f64)>, OracleError> {
    let genuine = |pairs: Vec<GapEigenpair>| -> Vec<f64> {
        pairs.into_iter().filter(|e| !e.spurious).map(|e| e.lambda).collect()
    };
    let coarse = genuine(gap_eigenpairs(prob, gap)?.1);
    let fine = genuine(gap_eigenpairs(&prob.refined(2), gap)?.1);
    if coarse.len() != fine.len() {
        return Err(OracleError::Mesh(format!(
            "{} genuine modes on the coarse mesh but {} on the fine mesh",
            coarse.len(),
            fine.len()
        )));
    }
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| ((4.0 * f - c) / 3.0, *f))
        .collect())
}

/// Spectral data of the quasiperiodic problem on the soft part `Y0`
/// (`u(h) = e^{iθ}u(0)`), from a cyclic three-point discretisation.
#[derive(Debug, Clone)]
pub struct SoftCellSpectrum {
    pub theta: f64,
    /// Eigenvalues `μ_n(θ)`, ascending.
    pub mu: Vec<f64>,
    /// `|Φ_n(0)|²` for `L²_{ρ0}`-normalised eigenfunctions.
    pub phi0_sq: Vec<f64>,
    /// `[(K + M)⁻¹]_{00}`, the full shifted Green's function at the origin.
    pub resolvent00: f64,
}

pub(crate) fn soft_cell_chain(spec: &MediumSpec, nodes: usize) -> Chain {
    let h = spec.h();
    let mut cuts = vec![0.0];
    cuts.extend(spec.a0.kinks_in(0.0, h));
    cuts.extend(spec.rho0.kinks_in(0.0, h));
    cuts.push(h);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let x = mesh_pieces(&cuts, nodes as f64 / h, 1);
    let n = x.len() - 1;
    let mut k = Vec::with_capacity(n);
    let mut s = vec![0.0; n];
    for j in 0..n {
        k.push(1.0 / spec.a0.integral_inverse(x[j], x[j + 1]));
        let mass = spec.rho0.integral(x[j], x[j + 1]);
        s[j] += 0.5 * mass;
        s[(j + 1) % n] += 0.5 * mass;
    }
    Chain { k, mu: vec![0.0; n], s }
}

/// Dense Hermitian eigensolve of the soft-cell pencil with about `nodes`
/// nodes on `Y0`.
pub fn soft_cell_spectrum(spec: &MediumSpec, theta: f64, nodes: usize) -> SoftCellSpectrum {
    let chain = soft_cell_chain(spec, nodes);
    let n = chain.edges();
    let ph = C64::from_polar(1.0, theta);
    let inv_sqrt: Vec<f64> = chain.s.iter().map(|s| 1.0 / s.sqrt()).collect();
    let mut a = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        let (i1, p1) = if j + 1 == n { (0, ph) } else { (j + 1, C64::from(1.0)) };
        let d = [(j, C64::from(-1.0)), (i1, p1)];
        for &(r, dr) in &d {
            for &(c, dc) in &d {
                a[(r, c)] += chain.k[j] * dr.conj() * dc * inv_sqrt[r] * inv_sqrt[c];
            }
        }
    }
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mu = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let phi0_sq = order
        .iter()
        .map(|&i| eig.eigenvectors[(0, i)].norm_sqr() / chain.s[0])
        .collect();
    let mut e0 = vec![C64::new(0.0, 0.0); n];
    e0[0] = C64::new(1.0, 0.0);
    let resolvent00 = chain.solve_cyclic(-1.0, theta, &e0)[0].re;
    SoftCellSpectrum {
        theta,
        mu,
        phi0_sq,
        resolvent00,
    }
}

/// The lowest `count` modes of the same soft-cell pencil, by Sturm bisection.
/// `|Φ_n(0)|²` comes from one shifted solve per cluster of (nearly) equal
/// eigenvalues; a cluster's total is shared equally by its members, which is
/// all the series needs.
pub fn soft_cell_modes(spec: &MediumSpec, theta: f64, nodes: usize, count: usize) -> SoftCellSpectrum {
    let chain = soft_cell_chain(spec, nodes);
    let n = chain.edges();
    let count = count.min(n);
    let mut mu: Vec<f64> = Vec::with_capacity(count);
    for k in 1..=count {
        let lo = mu.last().copied().unwrap_or(0.0);
        mu.push(chain.cyclic_eigenvalue_above(k, theta, lo, 1e-13));
    }
    let mut e0 = vec![C64::new(0.0, 0.0); n];
    e0[0] = C64::new(1.0, 0.0);
    let mut phi0_sq = vec![0.0; count];
    let mut i = 0;
    while i < count {
        let mut j = i + 1;
        while j < count && mu[j] - mu[i] < 1e-7 * (1.0 + mu[i]) {
            j += 1;
        }
        // shift just below the cluster; neighbours are at least 1e-7 away
        let sigma = mu[i] - 1e-11 * (1.0 + mu[i]);
        // two inverse-iteration steps: neighbour leakage is O((δ/gap)²)
        let x = chain.solve_cyclic(sigma, theta, &e0);
        let sx: Vec<C64> = x.iter().zip(&chain.s).map(|(v, s)| v * *s).collect();
        let x = chain.solve_cyclic(sigma, theta, &sx);
        let norm: f64 = x.iter().zip(&chain.s).map(|(v, s)| s * v.norm_sqr()).sum();
        let total = x[0].norm_sqr() / norm;
        for p in &mut phi0_sq[i..j] {
            *p = total / (j - i) as f64;
        }
        i = j;
    }
    let resolvent00 = chain.solve_cyclic(-1.0, theta, &e0)[0].re;
    SoftCellSpectrum {
        theta,
        mu,
        phi0_sq,
        resolvent00,
    }
}

/// Neumann eigenvalues of `-(a u')' = λ ρ u` on the defect, by Sturm count on
/// a lumped three-point scheme with `nodes` nodes.
pub fn neumann_eigenvalue(defect: &crate::model::DefectSpec, index: usize, nodes: usize) -> f64 {
    let (l, r) = (defect.d_minus, defect.d_plus);
    let mut cuts = vec![l];
    cuts.extend(defect.a_d.kinks_in(l, r));
    cuts.extend(defect.rho_d.kinks_in(l, r));
    cuts.push(r);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let x = mesh_pieces(&cuts, nodes as f64 / (r - l), 1);
    let n = x.len() - 1;
    let mut k = Vec::with_capacity(n);
    let mut s = vec![0.0; n + 1];
    for j in 0..n {
        k.push(1.0 / defect.a_d.integral_inverse(x[j], x[j + 1]));
        let mass = defect.rho_d.integral(x[j], x[j + 1]);
        s[j] += 0.5 * mass;
        s[j + 1] += 0.5 * mass;
    }
    let chain = Chain { k, mu: vec![0.0; n], s };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while chain.free_count(hi) < index + 1 {
        hi *= 2.0;
    }
    while hi - lo > 1e-14 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chain.free_count(mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sturm_modes_match_dense_spectrum() {
        use std::f64::consts::PI;
        let mut spec = MediumSpec::constant_unit(0.5, 0.1).unwrap();
        spec.a0 = CoefficientProfile::piecewise(vec![0.2], vec![1.0, 3.0], (0.0, 0.5));
        for theta in [0.0, 0.3, PI] {
            let dense = soft_cell_spectrum(&spec, theta, 160);
            let fast = soft_cell_modes(&spec, theta, 160, 40);
            for k in 0..40 {
                assert!((dense.mu[k] - fast.mu[k]).abs() < 1e-9 * (1.0 + dense.mu[k]), "θ={theta} k={k}");
            }
            // degenerate pairs at θ = 0, π share their total
            let mut k = 0;
            while k < 40 {
                let mut j = k + 1;
                while j < 40 && dense.mu[j] - dense.mu[k] < 1e-7 * (1.0 + dense.mu[k]) {
                    j += 1;
                }
                let (a, b): (f64, f64) = (dense.phi0_sq[k..j].iter().sum(), fast.phi0_sq[k..j].iter().sum());
                assert!((a - b).abs() < 1e-7 * a.max(1e-3), "θ={theta} k={k}: {a} vs {b}");
                k = j;
            }
            assert_eq!(dense.resolvent00, fast.resolvent00);
        }
    }
    use crate::model::{CoefficientProfile, DefectSpec};

    fn uniform_string(n: usize) -> Pencil {
        let l = 1.0 / n as f64;
        Pencil {
            x: (0..=n).map(|i| i as f64 * l).collect(),
            k: vec![1.0 / l; n],
            m: (0..=n).map(|i| if i == 0 || i == n { 0.5 * l } else { l }).collect(),
        }
    }

    #[test]
    fn dirichlet_string_lowest_mode() {
        let p = uniform_string(1000);
        let pairs = gap_eigenpairs_of(&p, 0.5, 0.5, (5.0, 12.0)).unwrap();
        assert_eq!(pairs.len(), 1);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((pairs[0].lambda - pi2).abs() < 1e-3 * pi2);
        assert!(pairs[0].residual < 1e-8, "{}", pairs[0].residual);
    }

    #[test]
    fn gtsv_matches_dense_solve() {
        let mut p = uniform_string(9);
        p.k = vec![1.0, 30.0, 2.0, 0.5, 7.0, 1.0, 3.0, 8.0, 2.0];
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        // shift chosen so that pivoting is needed
        let sigma = 40.0;
        let x = gtsv(&p, sigma, &b).unwrap();
        let (k, m) = p.to_dense();
        let a = k - m * sigma;
        let expect = a.lu().solve(&nalgebra::DVector::from_column_slice(&b[1..9])).unwrap();
        for i in 0..8 {
            assert!((x[i + 1] - expect[i]).abs() < 1e-10 * (1.0 + expect[i].abs()));
        }
    }

    #[test]
    fn counts_agree_with_dense_pencil() {
        let spec = MediumSpec::constant_unit(0.4, 0.25).unwrap();
        let mut prob = TruncatedProblem::new(&spec, 32, 1.0);
        prob.half_width_l = 0.6;
        let p = discretize(&prob).unwrap();
        let (k, m) = p.to_dense();
        assert_eq!(k, k.transpose());
        let minv: Vec<f64> = m.diagonal().iter().map(|v| 1.0 / v.sqrt()).collect();
        let mut a = k.clone();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                a[(i, j)] *= minv[i] * minv[j];
            }
        }
        let eig = a.symmetric_eigenvalues();
        for z in [1.0, 30.0, 200.0, 900.0] {
            let dense = eig.iter().filter(|&&e| e < z).count();
            assert_eq!(p.count_below(z), dense);
        }
    }

    #[test]
    fn interfaces_are_nodes() {
        let spec = MediumSpec::constant_unit(0.3, 0.1)
            .unwrap()
            .with_defect(DefectSpec {
                d_minus: 0.013,
                d_plus: 0.4,
                a_d: CoefficientProfile::constant(2.0, (0.013, 0.4)),
                rho_d: CoefficientProfile::constant(1.0, (0.013, 0.4)),
            })
            .unwrap();
        let prob = TruncatedProblem::new(&spec, 32, 1.0);
        let p = discretize(&prob).unwrap();
        let has = |v: f64| p.x.iter().any(|x| (x - v).abs() < 1e-13);
        assert!(has(0.013) && has(0.4) && has(0.43) && has(0.5) && has(-0.07));
        assert!(!has(0.1) && !has(0.03));
    }

    #[test]
    fn neumann_unit_interval() {
        let d = DefectSpec {
            d_minus: 0.0,
            d_plus: 1.0,
            a_d: CoefficientProfile::constant(1.0, (0.0, 1.0)),
            rho_d: CoefficientProfile::constant(1.0, (0.0, 1.0)),
        };
        assert!(neumann_eigenvalue(&d, 0, 500).abs() < 1e-9);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((neumann_eigenvalue(&d, 1, 2000) - pi2).abs() < 1e-5);
    }

    #[test]
    fn soft_cell_constant_coefficients() {
        // μ_n(θ) = ((θ + 2πm)/h)² for unit coefficients
        let spec = MediumSpec::constant_unit(0.5, 0.1).unwrap();
        let theta = 0.7;
        let sc = soft_cell_spectrum(&spec, theta, 200);
        let mut exact: Vec<f64> = (-3i32..=3).map(|m| ((theta + std::f64::consts::TAU * m as f64) / 0.5).powi(2)).collect();
        exact.sort_by(f64::total_cmp);
        for (a, b) in sc.mu.iter().zip(&exact).take(4) {
            assert!((a - b).abs() < 1e-3 * b.max(1.0), "{a} vs {b}");
        }
        // normalised plane waves have |Φ(0)|² = 1/h
        assert!((sc.phi0_sq[0] - 2.0).abs() < 1e-3);
        let total: f64 = sc.phi0_sq.iter().sum();
        assert!((total - 1.0 / sc_mass0(&spec, 200)).abs() < 1e-8 * total);
    }

    fn sc_mass0(spec: &MediumSpec, nodes: usize) -> f64 {
        soft_cell_chain(spec, nodes).s[0]
    }
}
