//! Finite-ε defect eigenvalues as zeros of the matching determinant between
//! the Floquet solutions that decay away from `D` on either side.

use log::{debug, warn};
use nalgebra::{Matrix2, Vector2};

use super::line::{eigvec, geometric_rest, inverse, Line, Seg};
use super::{limit_gap, DefectError};
use crate::fundsys::multipliers;
use crate::model::MediumSpec;

/// Decaying Floquet data at `λ`: `T_D ξ₋` and `ξ₊` at `d₊`, and `μ₁^ε`.
struct Matched {
    left: Vector2<f64>,
    right: Vector2<f64>,
    mu: f64,
    /// Period eigenvectors for `μ₁` (right tail) and `μ₂` (left tail).
    kappa1: Vector2<f64>,
    kappa2: Vector2<f64>,
}

impl Matched {
    fn det(&self) -> f64 {
        self.left[0] * self.right[1] - self.left[1] * self.right[0]
    }

    /// Sine of the angle between the two traces.
    fn angle(&self) -> f64 {
        self.det() / (self.left.norm() * self.right.norm())
    }
}

fn period_data(line: &Line, lambda: f64, tol: f64) -> Result<(Matrix2<f64>, f64, f64), DefectError> {
    let p = line.period_map(lambda)?;
    let t = p.trace();
    if t.abs() <= 2.0 {
        return Err(DefectError::NotInGap {
            lambda,
            discriminant: t,
        });
    }
    if t.abs() - 2.0 < tol {
        warn!("λ = {lambda} is within {:e} of a band edge; Floquet eigenvectors are ill-conditioned", t.abs() - 2.0);
    }
    let (m1, m2) = multipliers(t);
    Ok((p, m1.re, m2.re))
}

fn matched(line: &Line, lambda: f64, tol: f64) -> Result<Matched, DefectError> {
    let d = line.defect().ok_or(DefectError::NoDefect)?;
    let (p, mu, mu2) = period_data(line, lambda, tol)?;
    let kappa1 = eigvec(&p, mu);
    let kappa2 = eigvec(&p, mu2);
    let x_r = line.lattice(line.ceil_cell(d.d_plus));
    let x_l = line.lattice(line.floor_cell(d.d_minus));
    let right = inverse(&line.prop_range(d.d_plus, x_r, lambda)?) * kappa1;
    let minus = line.prop_range(x_l, d.d_minus, lambda)? * kappa2;
    let left = line.prop_range(d.d_minus, d.d_plus, lambda)? * minus;
    Ok(Matched {
        left,
        right,
        mu,
        kappa1,
        kappa2,
    })
}

/// `Δ_ε(λ) = det[T_D ξ₋ | ξ₊]` for `λ` in a gap at the current ε.
pub fn matching_determinant(spec: &MediumSpec, lambda: f64, tol: f64) -> Result<f64, DefectError> {
    Ok(matched(&Line::new(spec), lambda, tol)?.det())
}

/// Gap `index` of the finite-ε operator: the limit gap's midpoint is walked
/// outward while `|h_ε| > 2`, then both edges are bisected.
pub fn finite_gap(spec: &MediumSpec, index: usize) -> Result<(f64, f64), DefectError> {
    let (lo, hi) = limit_gap(spec, index)?;
    let line = Line::new(spec);
    let inside = |l: f64| -> Result<bool, DefectError> { Ok(line.period_map(l)?.trace().abs() > 2.0) };
    let mid = 0.5 * (lo + hi);
    if !inside(mid)? {
        return Err(DefectError::NoGap(index));
    }
    let step = (hi - lo) / 64.0;
    let mut edges = [0.0; 2];
    for (k, dir) in [-1.0, 1.0].into_iter().enumerate() {
        let mut a = mid;
        let mut b = mid + dir * step;
        let mut walked = 0;
        while inside(b)? {
            a = b;
            b += dir * step;
            walked += 1;
            if walked > 4096 || b < 0.0 {
                return Err(DefectError::NoGap(index));
            }
        }
        while (b - a).abs() > 1e-13 * mid {
            let m = 0.5 * (a + b);
            if inside(m)? {
                a = m;
            } else {
                b = m;
            }
        }
        edges[k] = a;
    }
    Ok((edges[0], edges[1]))
}

/// A defect eigenfunction on the whole line: exact piecewise solution on a
/// window of whole periods around `D`, continued by `μ₁^ε` per period.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    pub spec: MediumSpec,
    pub lambda: f64,
    pub mu: f64,
    /// Lattice points bounding the explicit window.
    pub window: (f64, f64),
    segs: Vec<Seg>,
    /// `(u, a u′)` at each segment's left end.
    states: Vec<Vector2<f64>>,
}

impl ModeSolution {
    fn line(&self) -> Line<'_> {
        Line::new(&self.spec)
    }

    /// `(u, a u′)` at `x`.
    pub fn eval(&self, x: f64) -> Vector2<f64> {
        let e = self.spec.epsilon;
        let (xl, xr) = self.window;
        if x > xr {
            let k = ((x - xr) / e).floor() + 1.0;
            return self.mu.powi(k as i32) * self.eval(x - k * e);
        }
        if x < xl {
            let k = ((xl - x) / e).floor() + 1.0;
            return self.mu.powi(k as i32) * self.eval(x + k * e);
        }
        let i = self.segs.partition_point(|s| s.x0 <= x).saturating_sub(1);
        let seg = &self.segs[i];
        let p = self
            .line()
            .prop(seg, seg.x0, x.min(seg.x1), self.lambda)
            .expect("segment propagators were computed at assembly");
        p * self.states[i]
    }

    pub fn u(&self, x: f64) -> f64 {
        self.eval(x)[0]
    }

    /// `∫ ρ^p u²` over `[lo, hi]` with `p ∈ {0, 1}`.
    pub fn mass(&self, lo: f64, hi: f64, weighted: bool) -> f64 {
        let line = self.line();
        let mut s = 0.0;
        for seg in line.segments(lo, hi) {
            for (x, w) in line.nodes(&seg, seg.x0, seg.x1, self.lambda, &[]) {
                let u = self.u(x);
                let rho = if weighted { line.coef(&seg, x).1 } else { 1.0 };
                s += w * rho * u * u;
            }
        }
        s
    }

    /// `∫_ℝ ρ^p u²`, tails summed as geometric series.
    pub fn total_mass(&self, weighted: bool) -> f64 {
        let e = self.spec.epsilon;
        let (xl, xr) = self.window;
        let r = self.mu * self.mu;
        self.mass(xl, xr, weighted)
            + geometric_rest(self.mass(xl, xl + e, weighted), r)
            + geometric_rest(self.mass(xr - e, xr, weighted), r)
    }

    /// `∫ u²` over `{x : dist(x, D) > r}`.
    pub fn mass_outside(&self, r: f64) -> f64 {
        let d = self.spec.defect.as_ref().expect("mode solutions carry a defect");
        let e = self.spec.epsilon;
        let q = self.mu * self.mu;
        let line = self.line();
        let (xl, xr) = self.window;
        let right0 = d.d_plus + r;
        let right1 = xr.max(line.lattice(line.ceil_cell(right0)) + e);
        let left0 = d.d_minus - r;
        let left1 = xl.min(line.lattice(line.floor_cell(left0)) - e);
        self.mass(right0, right1, false)
            + geometric_rest(self.mass(right1 - e, right1, false), q)
            + self.mass(left1, left0, false)
            + geometric_rest(self.mass(left1, left1 + e, false), q)
    }

    fn scale(&mut self, c: f64) {
        for s in &mut self.states {
            *s *= c;
        }
    }

    /// Samples at 16 points per segment of the window.
    pub fn samples(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        for seg in &self.segs {
            x.extend((0..16).map(|j| seg.x0 + seg.len() * j as f64 / 16.0));
        }
        x.push(self.window.1);
        let u = x.iter().map(|&x| self.u(x)).collect();
        (x, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectModeResult {
    pub lambda_eps: f64,
    pub epsilon: f64,
    /// The finite-ε gap the eigenvalue was found in.
    pub gap: (f64, f64),
    /// Samples of the `L²(ℝ)`-normalised eigenfunction on the window.
    pub x: Vec<f64>,
    pub u_eps: Vec<f64>,
    pub mu1_eps: f64,
    /// `(period index, ‖u‖ on period k+1 / ‖u‖ on period k)`, negative
    /// indices to the left of `D`.
    pub period_ratios: Vec<(i64, f64)>,
    /// `−⟨ln ratio⟩`: the measured per-period decay exponent.
    pub nu_max: f64,
    /// Sine of the matching angle at `λ_ε`.
    pub matching_residual: f64,
    /// Weakly localised mode hugging a band edge: more than
    /// `EDGE_MASS` of the mass lies beyond `|D|` from `D`.
    pub edge_mode: bool,
    pub solution: ModeSolution,
}

/// Mass fraction beyond distance `|D|` above which a mode is an edge mode.
pub const EDGE_MASS: f64 = 1e-2;

/// Periods per side in the explicit window.
fn window_periods(mu: f64) -> usize {
    ((25.0 / -mu.abs().ln()).ceil() as usize).clamp(10, 400)
}

fn assemble(spec: &MediumSpec, lambda: f64, tol: f64) -> Result<ModeSolution, DefectError> {
    let line = Line::new(spec);
    let d = line.defect().ok_or(DefectError::NoDefect)?;
    let m = matched(&line, lambda, tol)?;
    let n = window_periods(m.mu);
    let zr = line.ceil_cell(d.d_plus);
    let zl = line.floor_cell(d.d_minus);
    let xl = line.lattice(zl - n as i64);
    let xr = line.lattice(zr + n as i64);
    let mun = m.mu.powi(n as i32);

    // both halves are propagated towards D, the direction in which the
    // decaying solutions grow
    let left_segs = line.segments(xl, d.d_plus);
    let mut states = Vec::with_capacity(left_segs.len());
    let mut s = mun * m.kappa2;
    for seg in &left_segs {
        states.push(s);
        s = line.prop(seg, seg.x0, seg.x1, lambda)? * s;
    }
    let at_dp_left = s;

    let right_segs = line.segments(d.d_plus, xr);
    let mut right_states = vec![Vector2::zeros(); right_segs.len()];
    let mut s = mun * m.kappa1;
    for (i, seg) in right_segs.iter().enumerate().rev() {
        s = line.prop(seg, seg.x1, seg.x0, lambda)? * s;
        right_states[i] = s;
    }
    // match at d₊, weighting the flux by its natural scale
    let w = 1.0 / (spec.epsilon * (1.0 + lambda.sqrt()));
    let (l, r) = (at_dp_left, s);
    let c = (l[0] * r[0] + w * w * l[1] * r[1]) / (r[0] * r[0] + w * w * r[1] * r[1]);
    if !c.is_finite() || c == 0.0 {
        return Err(DefectError::Degenerate {
            lambda,
            what: "right tail vanishes at d₊".into(),
        });
    }
    states.extend(right_states.into_iter().map(|v| c * v));
    let mut segs = left_segs;
    segs.extend(right_segs);

    let mut sol = ModeSolution {
        spec: spec.clone(),
        lambda,
        mu: m.mu,
        window: (xl, xr),
        segs,
        states,
    };
    let norm = sol.total_mass(false).sqrt();
    let sign = sol.u(d.d_minus).signum();
    sol.scale(sign / norm);
    Ok(sol)
}

/// Per-period `L²` ratios moving away from `D` on both sides.
fn period_ratios(sol: &ModeSolution, periods: usize) -> Vec<(i64, f64)> {
    let line = sol.line();
    let d = sol.spec.defect.as_ref().expect("mode solutions carry a defect");
    let e = sol.spec.epsilon;
    let xr = line.lattice(line.ceil_cell(d.d_plus));
    let xl = line.lattice(line.floor_cell(d.d_minus));
    let right: Vec<f64> = (0..periods)
        .map(|k| sol.mass(xr + k as f64 * e, xr + (k + 1) as f64 * e, false))
        .collect();
    let left: Vec<f64> = (0..periods)
        .map(|k| sol.mass(xl - (k + 1) as f64 * e, xl - k as f64 * e, false))
        .collect();
    let mut out = Vec::new();
    for k in (1..periods).rev() {
        out.push((-(k as i64), (left[k] / left[k - 1]).sqrt()));
    }
    for k in 1..periods {
        out.push((k as i64, (right[k] / right[k - 1]).sqrt()));
    }
    out
}

const SCAN_POINTS: usize = 400;

/// Eigenvalues of the defect operator in gap `gap_index` at the spec's ε:
/// sign changes of `Δ_ε` on a 400-point scan, bisected to `tol`. Brackets
/// that close on a jump of the eigenvector normalisation rather than on a
/// zero are discarded by the matching angle.
pub fn defect_eigenvalues(spec: &MediumSpec, gap_index: usize, tol: f64) -> Result<Vec<DefectModeResult>, DefectError> {
    if spec.defect.is_none() {
        return Err(DefectError::NoDefect);
    }
    if !(tol > 0.0) {
        return Err(DefectError::Input(format!("tol must be positive, got {tol}")));
    }
    let line = Line::new(spec);
    let gap = finite_gap(spec, gap_index)?;
    let edge_tol = 1e-10;
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| gap.0 + (gap.1 - gap.0) * (i as f64 + 0.5) / SCAN_POINTS as f64)
        .collect();
    let values: Vec<(f64, f64)> = grid
        .iter()
        .map(|&l| matched(&line, l, edge_tol).map(|m| (m.det(), m.angle())))
        .collect::<Result<_, _>>()?;
    let scale = values.iter().map(|v| v.1.abs()).fold(0.0, f64::max);

    let mut out = Vec::new();
    for i in 1..grid.len() {
        let (fa, fb) = (values[i - 1].0, values[i].0);
        if fa.signum() == fb.signum() && fa != 0.0 {
            continue;
        }
        let (mut a, mut b) = (grid[i - 1], grid[i]);
        let sa = fa.signum();
        while b - a > tol * b.max(1.0) {
            let mid = 0.5 * (a + b);
            let f = matched(&line, mid, edge_tol)?.det();
            if f == 0.0 {
                a = mid;
                b = mid;
            } else if f.signum() == sa {
                a = mid;
            } else {
                b = mid;
            }
        }
        let root = 0.5 * (a + b);
        let angle = matched(&line, root, edge_tol)?.angle().abs();
        if angle > 1e-6 * scale {
            debug!("discarding a sign change of the matching determinant near λ = {root} (angle {angle:e})");
            continue;
        }
        let solution = assemble(spec, root, edge_tol)?;
        let (x, u_eps) = solution.samples();
        let ratios = period_ratios(&solution, 10);
        let edge_mode = solution.mass_outside(spec.defect.as_ref().map_or(0.0, |d| d.len())) > EDGE_MASS;
        let nu_max = -ratios.iter().map(|r| r.1.ln()).sum::<f64>() / ratios.len() as f64;
        out.push(DefectModeResult {
            lambda_eps: root,
            epsilon: spec.epsilon,
            gap,
            x,
            u_eps,
            mu1_eps: solution.mu,
            period_ratios: ratios,
            nu_max,
            matching_residual: angle,
            edge_mode,
            solution,
        });
    }
    Ok(out)
}
