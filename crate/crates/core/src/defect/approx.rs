//! The two-scale approximate eigenfunction `u_{ε,ap}`: `u₀ + εu₁` on `D`,
//! `w₀(x/ε) + ε²w₂(x/ε)` outside, with `w₀` the decaying solution of the
//! limit recurrence matched to `u₀(d±)`.

use nalgebra::{Matrix2, Vector2};

use super::line::{eigvec, gauss_nodes, Line, Phase, Seg};
use super::{DefectError, DefectModeResult, NeumannMode};
use crate::fundsys::{multipliers, propagate_scaled, DEFAULT_TOL};
use crate::model::{CoefficientProfile, MediumSpec};

const SNAP: f64 = 1e-9;

/// Relative support of the quartic bump inside the soft interval.
const BUMP: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateEigenfunction {
    pub lambda0: f64,
    pub epsilon: f64,
    /// Decay root of the limit recurrence.
    pub mu1: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `‖ρ⁻¹(−(a u′)′) − λ₀u‖_{L²_ρ}` over the line.
    pub residual_norm: f64,
    /// Largest jump of `u` and of `a u′` over the interfaces near `D`.
    pub max_jump: f64,
    pub max_flux_jump: f64,
    spec: MediumSpec,
    mode: NeumannMode,
    /// Soft-cell propagator `P₀(λ₀)` in cell variables.
    soft: Matrix2<f64>,
    /// `(l, m)` of cell `zr` (right tail) and of cell `zl − 1` (left tail).
    right_lm: Vector2<f64>,
    left_lm: Vector2<f64>,
    zr: i64,
    zl: i64,
    /// Flux data `J₁` (at `d₊`) and `J₂` (at `d₋`).
    j1: f64,
    j2: f64,
    /// `∫ a_D⁻¹` from `d₋` to `d₋ + δ`, `d₊ − δ` and `d₊`.
    s_lo: f64,
    s_hi: f64,
    s_total: f64,
}

fn bump(t: f64, h: f64) -> (f64, f64) {
    let (a, b) = (BUMP.0 * h, BUMP.1 * h);
    if t <= a || t >= b {
        return (0.0, 0.0);
    }
    let q = 2.0 * (t - a) / (b - a) - 1.0;
    let p = 1.0 - q * q;
    (p * p, -4.0 * q * p * 2.0 / (b - a))
}

/// `∫_lo^hi g` for `g` smooth between `cuts`, with orientation.
fn integrate(lo: f64, hi: f64, kinks: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let (a, b, sign) = if lo <= hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    let mut cuts = vec![a];
    cuts.extend(kinks.iter().copied().filter(|&k| k > a && k < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    sign * gauss_nodes(&cuts, 0.0).into_iter().map(|(x, w)| w * g(x)).sum::<f64>()
}

fn kinks(profiles: &[&CoefficientProfile], lo: f64, hi: f64) -> Vec<f64> {
    profiles.iter().flat_map(|p| p.kinks_in(lo, hi)).collect()
}

/// Smooth step `6τ⁵ − 15τ⁴ + 10τ³` and its first two derivatives in `τ`.
fn step(tau: f64) -> (f64, f64, f64) {
    if tau <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if tau >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let t2 = tau * tau;
    (
        t2 * tau * (10.0 - 15.0 * tau + 6.0 * t2),
        30.0 * t2 * (1.0 - tau) * (1.0 - tau),
        60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau),
    )
}

impl ApproximateEigenfunction {
    fn h(&self) -> f64 {
        self.spec.h()
    }

    fn d_y(&self) -> (f64, f64) {
        let d = &self.mode.defect;
        (d.d_minus / self.epsilon, d.d_plus / self.epsilon)
    }

    fn is_right(&self, y: f64) -> bool {
        y >= self.d_y().1 - SNAP
    }

    /// `(l, m)` of cell `z` on the given side of `D`.
    fn lm(&self, z: i64, right: bool) -> Vector2<f64> {
        if right {
            self.right_lm * self.mu1.powi((z - self.zr) as i32)
        } else {
            self.left_lm * self.mu1.powi((self.zl - 1 - z) as i32)
        }
    }

    /// `(w₀, a₀w₀′)` at cell coordinate `t ∈ [0, h]` from `(l, m)`.
    fn soft_state(&self, lm: Vector2<f64>, t: f64) -> Vector2<f64> {
        let s = &self.spec;
        let p = propagate_scaled(&s.a0, 1.0, &s.rho0, 1.0, self.lambda0, (0.0, t.clamp(0.0, self.h())), DEFAULT_TOL)
            .expect("soft profiles cover the soft interval");
        p * lm
    }

    /// `w₀` at `(z, t)` with `t ∈ [0, 1]`.
    fn w0(&self, z: i64, t: f64, right: bool) -> f64 {
        let lm = self.lm(z, right);
        if t <= self.h() {
            self.soft_state(lm, t)[0]
        } else {
            (self.soft * lm)[0]
        }
    }

    /// `(w₂, a₁w₂′)` on the stiff interval of cell `z` at `t ∈ [h, 1]`.
    fn w2_stiff(&self, z: i64, t: f64) -> (f64, f64) {
        let s = &self.spec;
        let h = self.h();
        let (dm, dp) = self.d_y();
        let right = self.is_right(z as f64 + t);
        let st = self.soft * self.lm(z, right);
        let (c, mh) = (st[0], st[1]);
        let l0 = self.lambda0;
        let flux = |t: f64| mh - l0 * c * s.rho1.integral(h, t);
        let anchor = if right { h.max(dp - z as f64) } else { 1f64.min(dm - z as f64) };
        let k = kinks(&[&s.a1, &s.rho1], h, 1.0);
        let w2 = integrate(anchor, t, &k, |y| flux(y) / s.a1.eval(y));
        (w2, flux(t))
    }

    /// Whether the soft interval of cell `z` lies entirely outside `D`.
    fn soft_is_full(&self, z: i64) -> bool {
        let (dm, dp) = self.d_y();
        let zf = z as f64;
        zf + self.h() <= dm + SNAP || zf >= dp - SNAP
    }

    /// `(w₂, a₀w₂′, (a₀w₂′)′)` on a soft interval outside `D`: a bump
    /// transition between the neighbouring stiff values.
    fn w2_soft(&self, z: i64, t: f64) -> (f64, f64, f64) {
        let s = &self.spec;
        let h = self.h();
        let w_left = self.w2_stiff(z - 1, 1.0).0;
        let w_right = self.w2_stiff(z, h).0;
        let mut k = kinks(&[&s.a0], 0.0, h);
        k.extend([BUMP.0 * h, BUMP.1 * h]);
        let g = |y: f64| bump(y, h).0 / s.a0.eval(y);
        let g_total = integrate(0.0, h, &k, g);
        let cz = (w_right - w_left) / g_total;
        let (f, fp) = bump(t, h);
        (w_left + cz * integrate(0.0, t, &k, g), cz * f, cz * fp)
    }

    /// `(u, a u′, −(a u′)′ − λ₀ρu)` at `x` inside `seg`.
    fn eval_in(&self, seg: &Seg, x: f64) -> (f64, f64, f64) {
        let e = self.epsilon;
        let e2 = e * e;
        let l0 = self.lambda0;
        let s = &self.spec;
        match seg.phase {
            Phase::Defect => {
                let d = &self.mode.defect;
                let st = self.mode.eval(x).expect("defect profiles cover D");
                let sx = d.a_d.integral_inverse(d.d_minus, x);
                let span = self.s_hi - self.s_lo;
                let (chi, cs, css) = step((sx - self.s_lo) / span);
                let (cs, css) = (cs / span, css / (span * span));
                let (sp, sm) = (sx - self.s_total, sx);
                let (j1, j2) = (self.j1, self.j2);
                let u1 = j1 * chi * sp + j2 * (1.0 - chi) * sm;
                let flux1 = j1 * (cs * sp + chi) + j2 * (1.0 - chi - cs * sm);
                let div1 = (j1 * (css * sp + 2.0 * cs) - j2 * (css * sm + 2.0 * cs)) / d.a_d.eval(x);
                let r = -e * (div1 + l0 * d.rho_d.eval(x) * u1);
                (st[0] + e * u1, st[1] + e * flux1, r)
            }
            Phase::Soft => {
                let z = seg.cell;
                let t = (x / e - z as f64).clamp(0.0, self.h());
                let right = self.is_right(x / e);
                let st = self.soft_state(self.lm(z, right), t);
                if self.soft_is_full(z) {
                    let (w2, fl, dfl) = self.w2_soft(z, t);
                    let r = -e2 * (dfl + l0 * s.rho0.eval(t) * w2);
                    (st[0] + e2 * w2, e * st[1] + e2 * e * fl, r)
                } else {
                    (st[0], e * st[1], 0.0)
                }
            }
            Phase::Stiff => {
                let z = seg.cell;
                let t = (x / e - z as f64).clamp(self.h(), 1.0);
                let c = self.w0(z, t, self.is_right(x / e));
                let (w2, fl) = self.w2_stiff(z, t);
                (c + e2 * w2, e * fl, -e2 * l0 * s.rho1.eval(t) * w2)
            }
        }
    }

    /// Range of whole periods around `D`, `k` periods beyond each lattice
    /// point adjacent to it.
    fn span(&self, k: i64) -> (f64, f64) {
        let e = self.epsilon;
        ((self.zl - k) as f64 * e, (self.zr + k) as f64 * e)
    }

    fn extra_cuts(&self, seg: &Seg) -> Vec<f64> {
        let e = self.epsilon;
        let d = &self.mode.defect;
        let delta = d.len() / 10.0;
        match seg.phase {
            Phase::Defect => vec![d.d_minus + delta, d.d_plus - delta],
            Phase::Soft => {
                let z = seg.cell as f64;
                vec![(z + BUMP.0 * self.h()) * e, (z + BUMP.1 * self.h()) * e]
            }
            Phase::Stiff => Vec::new(),
        }
    }

    /// Periods per side beyond which `|μ₁|^{2k}` is below `e^{−70}`.
    fn far(&self) -> i64 {
        (35.0 / -self.mu1.abs().ln()).ceil() as i64 + 2
    }

    /// `(u, a u′)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let line = Line::new(&self.spec);
        let segs = line.segments(x - self.epsilon, x + self.epsilon);
        let seg = segs
            .iter()
            .find(|g| g.x0 <= x && x <= g.x1)
            .expect("segments cover the neighbourhood");
        let (u, f, _) = self.eval_in(seg, x);
        (u, f)
    }

    fn integrate_line(&self, g: impl Fn(&Seg, f64, f64) -> f64) -> f64 {
        let line = Line::new(&self.spec);
        let (lo, hi) = self.span(self.far());
        let mut s = 0.0;
        for seg in line.segments(lo, hi) {
            let rho_of = |x: f64| line.coef(&seg, x).1;
            for (x, w) in line.nodes(&seg, seg.x0, seg.x1, self.lambda0, &self.extra_cuts(&seg)) {
                s += w * g(&seg, x, rho_of(x));
            }
        }
        s
    }
}

/// Builds `u_{ε,ap}` for `mode` at the spec's ε and evaluates its residual.
pub fn approximate_eigenfunction(spec: &MediumSpec, mode: &NeumannMode) -> Result<ApproximateEigenfunction, DefectError> {
    let d = spec.defect.as_ref().ok_or(DefectError::NoDefect)?;
    let l0 = mode.lambda0;
    let g = spec.geometry;
    let soft = propagate_scaled(&spec.a0, 1.0, &spec.rho0, 1.0, l0, g.soft(), DEFAULT_TOL)?;
    let m1 = spec.stiff_mass();
    let rec = Matrix2::new(
        soft[(0, 0)],
        soft[(0, 1)],
        soft[(1, 0)] - l0 * soft[(0, 0)] * m1,
        soft[(1, 1)] - l0 * soft[(0, 1)] * m1,
    );
    let disc = rec.trace();
    if disc.abs() <= 2.0 {
        return Err(DefectError::NotInGap {
            lambda: l0,
            discriminant: disc,
        });
    }
    let (mu1, mu2) = multipliers(disc);
    let (mu1, mu2) = (mu1.re, mu2.re);
    let line = Line::new(spec);
    let zr = line.ceil_cell(d.d_plus);
    let zl = line.floor_cell(d.d_minus);
    let e = spec.epsilon;
    let span = d.a_d.integral_inverse(d.d_minus, d.d_plus);
    let delta = d.len() / 10.0;
    let mut ap = ApproximateEigenfunction {
        lambda0: l0,
        epsilon: e,
        mu1,
        x: Vec::new(),
        u: Vec::new(),
        residual_norm: 0.0,
        max_jump: 0.0,
        max_flux_jump: 0.0,
        spec: spec.clone(),
        mode: mode.clone(),
        soft,
        right_lm: eigvec(&rec, mu1),
        left_lm: eigvec(&rec, mu2),
        zr,
        zl,
        j1: 0.0,
        j2: 0.0,
        s_lo: d.a_d.integral_inverse(d.d_minus, d.d_minus + delta),
        s_hi: d.a_d.integral_inverse(d.d_minus, d.d_plus - delta),
        s_total: span,
    };

    // w₀(d±/ε) = u₀(d±)
    let (ym, yp) = (d.d_minus / e, d.d_plus / e);
    let z_p = line.floor_cell(d.d_plus);
    let t_p = (yp - z_p as f64).clamp(0.0, 1.0);
    let z_m = line.ceil_cell(d.d_minus) - 1;
    let t_m = (ym - z_m as f64).clamp(0.0, 1.0);
    let degenerate = |what: &str| DefectError::Degenerate {
        lambda: l0,
        what: what.into(),
    };
    let at_p = ap.w0(z_p, t_p, true);
    let at_m = ap.w0(z_m, t_m, false);
    if at_p.abs() < 1e-12 || at_m.abs() < 1e-12 {
        return Err(degenerate("decaying solution vanishes at an end of D"));
    }
    ap.right_lm *= mode.eval(d.d_plus)?[0] / at_p;
    ap.left_lm *= mode.eval(d.d_minus)?[0] / at_m;

    // J₁, J₂: the cell-scale co-derivative just outside D
    let h = spec.h();
    ap.j1 = if t_p < h {
        ap.soft_state(ap.lm(z_p, true), t_p)[1]
    } else {
        ap.w2_stiff(z_p, t_p).1
    };
    ap.j2 = if t_m <= h {
        ap.soft_state(ap.lm(z_m, false), t_m)[1]
    } else {
        ap.w2_stiff(z_m, t_m).1
    };

    ap.residual_norm = ap.integrate_line(|seg, x, rho| ap.eval_in(seg, x).2.powi(2) / rho).sqrt();

    let (lo, hi) = ap.span(3);
    let segs = line.segments(lo, hi);
    for w in segs.windows(2) {
        let x = w[1].x0;
        let a = ap.eval_in(&w[0], x);
        let b = ap.eval_in(&w[1], x);
        ap.max_jump = ap.max_jump.max((a.0 - b.0).abs());
        ap.max_flux_jump = ap.max_flux_jump.max((a.1 - b.1).abs());
    }
    let (lo, hi) = ap.span(8);
    for seg in line.segments(lo, hi) {
        for j in 0..16 {
            let x = seg.x0 + seg.len() * j as f64 / 16.0;
            ap.x.push(x);
            ap.u.push(ap.eval_in(&seg, x).0);
        }
    }
    ap.x.push(hi);
    ap.u.push(ap.eval(hi).0);
    Ok(ap)
}

/// `‖u_{ε,ap} − u_ε‖_{L²_ρ}` with `u_ε` rescaled to unit `L²_ρ` norm.
pub fn approximation_error(ap: &ApproximateEigenfunction, result: &DefectModeResult) -> f64 {
    let sol = &result.solution;
    let norm = sol.total_mass(true).sqrt();
    ap.integrate_line(|seg, x, rho| (ap.eval_in(seg, x).0 - sol.u(x) / norm).powi(2) * rho)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defect::{defect_eigenvalues, neumann_modes};
    use crate::model::DefectSpec;

    fn spec(eps: f64, dm: f64, dp: f64) -> MediumSpec {
        MediumSpec::constant_unit(0.5, eps)
            .unwrap()
            .with_defect(DefectSpec {
                d_minus: dm,
                d_plus: dp,
                a_d: CoefficientProfile::constant(1.0, (dm, dp)),
                rho_d: CoefficientProfile::constant(1.0, (dm, dp)),
            })
            .unwrap()
    }

    fn mode(s: &MediumSpec) -> NeumannMode {
        neumann_modes(s.defect.as_ref().unwrap(), 2, 1e-14).unwrap().remove(1)
    }

    #[test]
    fn continuous_with_continuous_flux() {
        // lattice-aligned, d₊ on a soft/stiff interface, d± in soft and stiff parts
        for (eps, dm, dp) in [
            (0.05, 0.0, 0.625),
            (0.05, 0.01, 0.635),
            (0.05, 0.035, 0.66),
            (0.02, -0.013, 0.612),
        ] {
            let s = spec(eps, dm, dp);
            let ap = approximate_eigenfunction(&s, &mode(&s)).unwrap();
            assert!(ap.max_jump < 1e-8, "{eps} {dm} {dp}: u jump {}", ap.max_jump);
            assert!(ap.max_flux_jump < 1e-8, "{eps} {dm} {dp}: flux jump {}", ap.max_flux_jump);
            assert!(ap.residual_norm.is_finite() && ap.residual_norm > 0.0);
        }
    }

    #[test]
    fn residual_shrinks_with_eps() {
        let r: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| {
                let s = spec(e, 0.0, 0.625);
                approximate_eigenfunction(&s, &mode(&s)).unwrap().residual_norm
            })
            .collect();
        assert!(r[1] < r[0] && r[2] < r[1], "{r:?}");
    }

    #[test]
    fn close_to_the_true_mode() {
        let s = spec(0.025, 0.0, 0.625);
        let ap = approximate_eigenfunction(&s, &mode(&s)).unwrap();
        let res = defect_eigenvalues(&s, 1, 1e-13).unwrap();
        let err = approximation_error(&ap, &res[0]);
        assert!(err < 0.2, "{err}");
    }

    #[test]
    fn band_mode_is_rejected() {
        let s = spec(0.05, 0.0, 0.625);
        let m0 = neumann_modes(s.defect.as_ref().unwrap(), 1, 1e-14).unwrap().remove(0);
        assert!(matches!(approximate_eigenfunction(&s, &m0), Err(DefectError::NotInGap { .. })));
    }
}
