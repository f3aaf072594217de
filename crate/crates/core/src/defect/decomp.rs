//! Splitting a defect eigenfunction as `u_ε = v_ε + w_ε` with `v_ε`
//! constant on every stiff interval and `w_ε` vanishing on `D`.

use super::line::{Line, Phase, Seg};
use super::{DefectError, DefectModeResult};
use crate::model::MediumSpec;

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionDiagnostic {
    pub norm_w: f64,
    pub norm_w_prime: f64,
    /// `‖v_ε‖` on `{dist(x, D) > ε^α}`.
    pub norm_v_tail: f64,
    pub alpha: f64,
}

/// How `v` and `w` look on one segment.
#[derive(Debug, Clone, Copy)]
enum Piece {
    Defect,
    /// `v` is this constant.
    Stiff { v: f64 },
    /// `w` is the `a₀`-harmonic interpolant of these end values.
    Soft { w0: f64, w1: f64, conductance: f64 },
}

/// Builds `v_ε` and `w_ε` from the eigenfunction of `result` and returns
/// their norms. `v_ε` is the mean of `u_ε` on each stiff interval away from
/// `D` and the value `u_ε(d±)` on stiff intervals that touch `D`.
pub fn decomposition_diagnostic(
    spec: &MediumSpec,
    result: &DefectModeResult,
    alpha: f64,
) -> Result<DecompositionDiagnostic, DefectError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DefectError::Input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = spec.defect.as_ref().ok_or(DefectError::NoDefect)?;
    let sol = &result.solution;
    let line = Line::new(spec);
    let e = spec.epsilon;
    let lambda = result.lambda_eps;
    let far = (35.0 / -sol.mu.abs().ln()).ceil() as i64 + e.powf(alpha - 1.0).ceil() as i64 + 2;
    let lo = line.lattice(line.floor_cell(d.d_minus) - far);
    let hi = line.lattice(line.ceil_cell(d.d_plus) + far);
    // one extra period on each side supplies the outer neighbours
    let segs = line.segments(lo - e, hi + e);
    let touches = |g: &Seg| (g.x1 - d.d_minus).abs() < SNAP * e || (g.x0 - d.d_plus).abs() < SNAP * e;
    let full_stiff = e * (1.0 - spec.h());

    let mut stiff_v: Vec<Option<f64>> = vec![None; segs.len()];
    for (i, g) in segs.iter().enumerate() {
        if g.phase != Phase::Stiff {
            continue;
        }
        let v = if touches(g) || g.len() < full_stiff * (1.0 - 1e-9) {
            let end = if g.x1 <= d.d_minus + SNAP * e { d.d_minus } else { d.d_plus };
            sol.u(end)
        } else {
            let mass: f64 = line
                .nodes(g, g.x0, g.x1, lambda, &[])
                .into_iter()
                .map(|(x, w)| w * sol.u(x))
                .sum();
            mass / g.len()
        };
        stiff_v[i] = Some(v);
    }
    let w_at = |i: usize, x: f64| -> f64 {
        match stiff_v.get(i).copied().flatten() {
            Some(v) => sol.u(x) - v,
            None => 0.0,
        }
    };
    let pieces: Vec<Piece> = segs
        .iter()
        .enumerate()
        .map(|(i, g)| match g.phase {
            Phase::Defect => Piece::Defect,
            Phase::Stiff => Piece::Stiff {
                v: stiff_v[i].expect("set above"),
            },
            Phase::Soft => {
                // neighbours are stiff pieces or D (where w = 0)
                let w0 = if i > 0 { w_at(i - 1, g.x0) } else { 0.0 };
                let w1 = w_at(i + 1, g.x1);
                let t0 = g.x0 / e - g.cell as f64;
                let t1 = g.x1 / e - g.cell as f64;
                let conductance = spec.a0.integral_inverse(t0.max(0.0), t1.min(spec.h()));
                Piece::Soft { w0, w1, conductance }
            }
        })
        .collect();

    let cut = e.powf(alpha);
    let (tail_l, tail_r) = (d.d_minus - cut, d.d_plus + cut);
    let (mut ww, mut wp, mut vt) = (0.0, 0.0, 0.0);
    for (g, piece) in segs.iter().zip(&pieces) {
        if g.x1 <= lo || g.x0 >= hi {
            continue;
        }
        for (x, wt) in line.nodes(g, g.x0, g.x1, lambda, &[tail_l, tail_r]) {
            let state = sol.eval(x);
            let (w, dw) = match *piece {
                Piece::Defect => (0.0, 0.0),
                Piece::Stiff { v } => (state[0] - v, state[1] / line.coef(g, x).0),
                Piece::Soft { w0, w1, conductance } => {
                    let t0 = (g.x0 / e - g.cell as f64).max(0.0);
                    let t = x / e - g.cell as f64;
                    let s = spec.a0.integral_inverse(t0, t);
                    let slope = (w1 - w0) / conductance;
                    (w0 + slope * s, slope / (e * spec.a0.eval(t)))
                }
            };
            ww += wt * w * w;
            wp += wt * dw * dw;
            if x < tail_l || x > tail_r {
                let v = state[0] - w;
                vt += wt * v * v;
            }
        }
    }
    Ok(DecompositionDiagnostic {
        norm_w: ww.sqrt(),
        norm_w_prime: wp.sqrt(),
        norm_v_tail: vt.sqrt(),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defect::defect_eigenvalues;
    use crate::model::{CoefficientProfile, DefectSpec};

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

    #[test]
    fn norms_are_finite_and_small() {
        for (dm, dp) in [(0.0, 0.625), (0.01, 0.635), (0.035, 0.66)] {
            let s = spec(0.05, dm, dp);
            let r = &defect_eigenvalues(&s, 1, 1e-13).unwrap()[0];
            let diag = decomposition_diagnostic(&s, r, 0.5).unwrap();
            for v in [diag.norm_w, diag.norm_w_prime, diag.norm_v_tail] {
                assert!(v.is_finite() && v >= 0.0);
            }
            assert!(diag.norm_w < 0.05, "{diag:?}");
            assert!(diag.norm_w_prime < 1.0, "{diag:?}");
        }
    }

    #[test]
    fn rejects_bad_alpha() {
        let s = spec(0.1, 0.0, 0.625);
        let r = &defect_eigenvalues(&s, 1, 1e-12).unwrap()[0];
        assert!(decomposition_diagnostic(&s, r, 1.0).is_err());
        assert!(decomposition_diagnostic(&s, r, 0.0).is_err());
    }
}
