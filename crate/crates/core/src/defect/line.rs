//! The ε-scaled line with the defect cut in: segmentation into soft, stiff
//! and defect pieces, physical propagators and Gauss quadrature.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::fundsys::{propagate_scaled, FundsysError, DEFAULT_TOL};
use crate::model::{DefectSpec, MediumSpec};

/// Relative tolerance (in cell units) for snapping points onto the lattice.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Soft,
    Stiff,
    Defect,
}

/// A maximal interval on which the physical coefficients come from a single
/// profile pair. `cell` is the lattice index `z` for soft and stiff pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Seg {
    pub x0: f64,
    pub x1: f64,
    pub phase: Phase,
    pub cell: i64,
}

impl Seg {
    pub fn len(&self) -> f64 {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Line<'a> {
    pub spec: &'a MediumSpec,
    pub eps: f64,
    pub h: f64,
}

impl<'a> Line<'a> {
    pub fn new(spec: &'a MediumSpec) -> Self {
        Line {
            spec,
            eps: spec.epsilon,
            h: spec.h(),
        }
    }

    pub fn defect(&self) -> Option<&'a DefectSpec> {
        self.spec.defect.as_ref()
    }

    pub fn lattice(&self, z: i64) -> f64 {
        z as f64 * self.eps
    }

    /// `⌊x⌋_ε`: the largest `z` with `εz ≤ x`, snapping near-lattice points.
    pub fn floor_cell(&self, x: f64) -> i64 {
        (x / self.eps + SNAP).floor() as i64
    }

    /// `⌈x⌉_ε`: the smallest `z` with `x ≤ εz`.
    pub fn ceil_cell(&self, x: f64) -> i64 {
        (x / self.eps - SNAP).ceil() as i64
    }

    /// Pieces covering `[lo, hi]`, ordered left to right.
    pub fn segments(&self, lo: f64, hi: f64) -> Vec<Seg> {
        let min_len = SNAP * self.eps;
        let mut out = Vec::new();
        let mut push = |a: f64, b: f64, phase: Phase, cell: i64| {
            let (a, b) = (a.max(lo), b.min(hi));
            if b - a > min_len {
                out.push(Seg { x0: a, x1: b, phase, cell });
            }
        };
        let d = self.defect().map(|d| (d.d_minus, d.d_plus));
        for z in self.floor_cell(lo)..self.ceil_cell(hi) {
            let zf = z as f64;
            for (phase, a, b) in [
                (Phase::Soft, zf * self.eps, (zf + self.h) * self.eps),
                (Phase::Stiff, (zf + self.h) * self.eps, (zf + 1.0) * self.eps),
            ] {
                match d {
                    Some((dm, dp)) if a < dp && b > dm => {
                        push(a, b.min(dm), phase, z);
                        push(a.max(dp), b, phase, z);
                    }
                    _ => push(a, b, phase, z),
                }
            }
        }
        if let Some((dm, dp)) = d {
            push(dm, dp, Phase::Defect, 0);
        }
        out.sort_by(|p, q| p.x0.total_cmp(&q.x0));
        out
    }

    /// Cell coordinate of `x` inside soft/stiff piece `seg`, clamped to it.
    fn local(&self, seg: &Seg, x: f64) -> f64 {
        let t = x / self.eps - seg.cell as f64;
        match seg.phase {
            Phase::Soft => t.clamp(0.0, self.h),
            Phase::Stiff => t.clamp(self.h, 1.0),
            Phase::Defect => x,
        }
    }

    /// Physical `(a, ρ)` at `x` inside `seg`.
    pub fn coef(&self, seg: &Seg, x: f64) -> (f64, f64) {
        let s = self.spec;
        let t = self.local(seg, x);
        match seg.phase {
            Phase::Soft => (self.eps * self.eps * s.a0.eval(t), s.rho0.eval(t)),
            Phase::Stiff => (s.a1.eval(t), s.rho1.eval(t)),
            Phase::Defect => {
                let d = self.defect().expect("defect piece without a defect");
                (d.a_d.eval(x), d.rho_d.eval(x))
            }
        }
    }

    /// Map of `(u, a u')` from `xa` to `xb`, both inside `seg`.
    pub fn prop(&self, seg: &Seg, xa: f64, xb: f64, lambda: f64) -> Result<Matrix2<f64>, FundsysError> {
        let s = self.spec;
        let e = self.eps;
        let (ta, tb) = (self.local(seg, xa), self.local(seg, xb));
        let (lo, hi, flip) = if ta <= tb { (ta, tb, false) } else { (tb, ta, true) };
        let p = match seg.phase {
            Phase::Soft => {
                let p = propagate_scaled(&s.a0, 1.0, &s.rho0, 1.0, lambda, (lo, hi), DEFAULT_TOL)?;
                Matrix2::new(p[(0, 0)], p[(0, 1)] / e, e * p[(1, 0)], p[(1, 1)])
            }
            Phase::Stiff => {
                let p = propagate_scaled(&s.a1, 1.0, &s.rho1, e * e, lambda, (lo, hi), DEFAULT_TOL)?;
                Matrix2::new(p[(0, 0)], e * p[(0, 1)], p[(1, 0)] / e, p[(1, 1)])
            }
            Phase::Defect => {
                let d = self.defect().expect("defect piece without a defect");
                propagate_scaled(&d.a_d, 1.0, &d.rho_d, 1.0, lambda, (lo, hi), DEFAULT_TOL)?
            }
        };
        Ok(if flip { inverse(&p) } else { p })
    }

    /// Map of `(u, a u')` from `lo` to `hi` across all pieces.
    pub fn prop_range(&self, lo: f64, hi: f64, lambda: f64) -> Result<Matrix2<f64>, FundsysError> {
        let mut m = Matrix2::identity();
        for seg in self.segments(lo, hi) {
            m = self.prop(&seg, seg.x0, seg.x1, lambda)? * m;
        }
        Ok(m)
    }

    /// One period starting at a lattice point, outside the defect.
    pub fn period_map(&self, lambda: f64) -> Result<Matrix2<f64>, FundsysError> {
        let e = self.eps;
        let soft = Seg { x0: 0.0, x1: self.h * e, phase: Phase::Soft, cell: 0 };
        let stiff = Seg { x0: self.h * e, x1: e, phase: Phase::Stiff, cell: 0 };
        Ok(self.prop(&stiff, stiff.x0, stiff.x1, lambda)? * self.prop(&soft, soft.x0, soft.x1, lambda)?)
    }

    /// Upper bound for the local wavenumber `√(λρ/a)` on `seg`, times its length.
    fn phase_span(&self, seg: &Seg, lambda: f64) -> f64 {
        let s = self.spec;
        let (a, r, len) = match seg.phase {
            Phase::Soft => (s.a0.min_value(), s.rho0.max_value(), seg.len() / self.eps),
            Phase::Stiff => (s.a1.min_value(), self.eps * self.eps * s.rho1.max_value(), seg.len() / self.eps),
            Phase::Defect => {
                let d = self.defect().expect("defect piece without a defect");
                (d.a_d.min_value(), d.rho_d.max_value(), seg.len())
            }
        };
        (lambda.abs() * r / a).sqrt() * len
    }

    /// Profile breakpoints inside `seg`, in physical coordinates.
    fn kinks(&self, seg: &Seg) -> Vec<f64> {
        let s = self.spec;
        let z = seg.cell as f64;
        let to_x = |t: f64| (z + t) * self.eps;
        let (ta, tb) = (self.local(seg, seg.x0), self.local(seg, seg.x1));
        let mut k: Vec<f64> = match seg.phase {
            Phase::Soft => [&s.a0, &s.rho0].iter().flat_map(|p| p.kinks_in(ta, tb)).map(to_x).collect(),
            Phase::Stiff => [&s.a1, &s.rho1].iter().flat_map(|p| p.kinks_in(ta, tb)).map(to_x).collect(),
            Phase::Defect => {
                let d = self.defect().expect("defect piece without a defect");
                [&d.a_d, &d.rho_d].iter().flat_map(|p| p.kinks_in(seg.x0, seg.x1)).collect()
            }
        };
        k.sort_by(f64::total_cmp);
        k
    }

    /// Quadrature nodes `(x, w)` on `[lo, hi] ∩ seg`, split at profile
    /// breakpoints, `extra` points and enough sub-intervals to resolve
    /// oscillation at spectral parameter `lambda`.
    pub fn nodes(&self, seg: &Seg, lo: f64, hi: f64, lambda: f64, extra: &[f64]) -> Vec<(f64, f64)> {
        let (lo, hi) = (lo.max(seg.x0), hi.min(seg.x1));
        if hi <= lo {
            return Vec::new();
        }
        let mut cuts = vec![lo];
        cuts.extend(self.kinks(seg).into_iter().chain(extra.iter().copied()).filter(|&x| x > lo && x < hi));
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        gauss_nodes(&cuts, self.phase_span(seg, lambda) / seg.len())
    }
}

/// Gauss nodes on consecutive intervals of `cuts`, each subdivided so that
/// `per_len · width ≤ 1` (capped at 64 pieces).
pub(crate) fn gauss_nodes(cuts: &[f64], per_len: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let m = ((per_len.max(0.0) * (w[1] - w[0])).ceil() as usize).clamp(1, 64);
        let step = (w[1] - w[0]) / m as f64;
        for i in 0..m {
            let a = w[0] + i as f64 * step;
            out.extend(gauss().iter().map(|&(t, wt)| (a + 0.5 * step * (t + 1.0), 0.5 * step * wt)));
        }
    }
    out
}

pub(crate) fn inverse(p: &Matrix2<f64>) -> Matrix2<f64> {
    // unimodular up to rounding
    let det = p.determinant();
    Matrix2::new(p[(1, 1)], -p[(0, 1)], -p[(1, 0)], p[(0, 0)]) / det
}

/// Eigenvector of a 2×2 matrix for the real eigenvalue `mu`, from the row
/// that is better conditioned.
pub(crate) fn eigvec(p: &Matrix2<f64>, mu: f64) -> Vector2<f64> {
    let a = Vector2::new(p[(0, 1)], mu - p[(0, 0)]);
    let b = Vector2::new(mu - p[(1, 1)], p[(1, 0)]);
    if a.norm() >= b.norm() {
        a
    } else {
        b
    }
}

const GAUSS_POINTS: usize = 10;

/// Gauss–Legendre rule on `[−1, 1]` via Golub–Welsch.
pub(crate) fn gauss() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GAUSS_POINTS;
        let mut j = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
            j[(k, k - 1)] = b;
            j[(k - 1, k)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut rule: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        rule.sort_by(|p, q| p.0.total_cmp(&q.0));
        rule
    })
}

/// `I_last · r / (1 − r)`: the remainder of a geometric tail of cells whose
/// integrals shrink by `r` per cell, given the last explicit one.
pub(crate) fn geometric_rest(last: f64, r: f64) -> f64 {
    last * r / (1.0 - r)
}
