//! Propagators for `-(a u')' = λ ρ u` in the variables `(u, a u')`, the
//! limit discriminant and the finite-ε transfer matrix.

use nalgebra::{Matrix2, Vector4};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{CoefficientProfile, MediumSpec};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FundsysError {
    #[error("step size underflow at x = {x}")]
    StepUnderflow { x: f64 },
    #[error("interval [{l}, {r}] is not inside the coefficient support")]
    Interval { l: f64, r: f64 },
}

/// Which profiles a propagator was built from, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPair {
    Soft,
    Stiff,
    Defect,
    Custom,
}

/// Maps `(u, a u')(l)` to `(u, a u')(r)`; columns are the fundamental pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMatrix {
    pub entries: Matrix2<f64>,
    pub interval: (f64, f64),
    pub lambda: f64,
    pub weight_pair: WeightPair,
}

impl PropagatorMatrix {
    pub fn det(&self) -> f64 {
        self.entries.determinant()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub entries: Matrix2<f64>,
    pub h_eps: f64,
    pub mu1: Complex64,
    pub mu2: Complex64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl TransferMatrix {
    pub fn det(&self) -> f64 {
        self.entries.determinant()
    }

    pub fn in_gap(&self) -> bool {
        self.h_eps.abs() > 2.0
    }
}

/// Roots of `μ² − t μ + 1`. For `|t| > 2` the first root is the one inside
/// the unit disc, taken as the reciprocal of the cancellation-free large one.
pub fn multipliers(t: f64) -> (Complex64, Complex64) {
    if t.abs() > 2.0 {
        let big = 0.5 * (t + t.signum() * (t * t - 4.0).sqrt());
        (Complex64::new(1.0 / big, 0.0), Complex64::new(big, 0.0))
    } else {
        let im = 0.5 * (4.0 - t * t).max(0.0).sqrt();
        (Complex64::new(0.5 * t, im), Complex64::new(0.5 * t, -im))
    }
}

/// Fundamental matrix over `interval` for the profiles `a`, `rho`.
pub fn propagate(
    a: &CoefficientProfile,
    rho: &CoefficientProfile,
    lambda: f64,
    interval: (f64, f64),
    tol: f64,
) -> Result<PropagatorMatrix, FundsysError> {
    let entries = propagate_scaled(a, 1.0, rho, 1.0, lambda, interval, tol)?;
    Ok(PropagatorMatrix {
        entries,
        interval,
        lambda,
        weight_pair: WeightPair::Custom,
    })
}

/// Propagator for coefficients `a_scale·a` and `rho_scale·ρ`.
pub(crate) fn propagate_scaled(
    a: &CoefficientProfile,
    a_scale: f64,
    rho: &CoefficientProfile,
    rho_scale: f64,
    lambda: f64,
    (l, r): (f64, f64),
    tol: f64,
) -> Result<Matrix2<f64>, FundsysError> {
    let slack = 1e-12 * (1.0 + l.abs().max(r.abs()));
    for p in [a, rho] {
        if l < p.support.0 - slack || r > p.support.1 + slack || l > r {
            return Err(FundsysError::Interval { l, r });
        }
    }
    let mut pts = vec![l];
    let mut kinks = a.kinks_in(l, r);
    kinks.extend(rho.kinks_in(l, r));
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    pts.extend(kinks);
    pts.push(r);

    let smooth = a.is_piecewise_constant() && rho.is_piecewise_constant();
    let mut m = Matrix2::identity();
    for w in pts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let piece = if smooth {
            let mid = 0.5 * (x0 + x1);
            constant_piece(a_scale * a.eval(mid), rho_scale * rho.eval(mid), lambda, x1 - x0)
        } else {
            let coef = |x: f64| (a_scale * a.eval(x), rho_scale * rho.eval(x));
            rk45(&coef, lambda, x0, x1, tol)?
        };
        m = piece * m;
    }
    Ok(m)
}

/// `cos`-like and `sin(ωL)/(ωL)`-like functions of `x = ω² L²`, valid for
/// either sign of `x`.
fn trig_pair(x: f64) -> (f64, f64) {
    if x.abs() < 1e-2 {
        let c = 1.0 - x / 2.0 * (1.0 - x / 12.0 * (1.0 - x / 30.0 * (1.0 - x / 56.0)));
        let s = 1.0 - x / 6.0 * (1.0 - x / 20.0 * (1.0 - x / 42.0 * (1.0 - x / 72.0)));
        (c, s)
    } else if x > 0.0 {
        let t = x.sqrt();
        (t.cos(), t.sin() / t)
    } else {
        let t = (-x).sqrt();
        (t.cosh(), t.sinh() / t)
    }
}

/// Exact propagator for constant `a`, `ρ` over a piece of length `len`.
pub(crate) fn constant_piece(a: f64, rho: f64, lambda: f64, len: f64) -> Matrix2<f64> {
    let (c, s) = trig_pair(lambda * rho / a * len * len);
    Matrix2::new(c, len * s / a, -lambda * rho * len * s, c)
}

/// Dormand–Prince 5(4) on both fundamental columns at once.
fn rk45(
    coef: &dyn Fn(f64) -> (f64, f64),
    lambda: f64,
    x0: f64,
    x1: f64,
    tol: f64,
) -> Result<Matrix2<f64>, FundsysError> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    // fifth-order weights are the last row of A; these are the error weights
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let f = |x: f64, y: &Vector4<f64>| {
        let (a, rho) = coef(x);
        Vector4::new(y[1] / a, -lambda * rho * y[0], y[3] / a, -lambda * rho * y[2])
    };
    let span = x1 - x0;
    let min_step = 1e-14 * span.max(1e-300);
    let mut y = Vector4::new(1.0, 0.0, 0.0, 1.0);
    let mut x = x0;
    let (a_mid, rho_mid) = coef(0.5 * (x0 + x1));
    let omega = (lambda.abs() * rho_mid / a_mid).sqrt();
    let mut step = span.min(0.1 / omega.max(1e-300));
    let mut k = [Vector4::zeros(); 7];
    k[0] = f(x, &y);
    while x < x1 {
        if step < min_step {
            return Err(FundsysError::StepUnderflow { x });
        }
        let last = x + step >= x1;
        let hstep = if last { x1 - x } else { step };
        for i in 1..7 {
            let mut yi = y;
            for (j, kj) in k.iter().enumerate().take(i) {
                yi += kj * (hstep * A[i][j]);
            }
            k[i] = f(x + C[i] * hstep, &yi);
        }
        let mut y_new = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            y_new += kj * (hstep * A[6][j]);
        }
        let mut err = Vector4::zeros();
        for (j, kj) in k.iter().enumerate() {
            err += kj * (hstep * E[j]);
        }
        // local errors add up over the steps; keep the global one below tol
        let scale = 1.0 + y.amax().max(y_new.amax());
        let ratio = err.amax() / (0.02 * tol * scale);
        if ratio <= 1.0 {
            x = if last { x1 } else { x + hstep };
            y = y_new;
            k[0] = k[6];
        }
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        step = hstep * factor;
    }
    Ok(Matrix2::new(y[0], y[2], y[1], y[3]))
}

/// Propagators over the soft part (`a0, ρ0`) and over the stiff part in the
/// stretched variable (`a1, ε²ρ1`).
pub(crate) fn cell_propagators(
    spec: &MediumSpec,
    lambda: f64,
    tol: f64,
) -> Result<(Matrix2<f64>, Matrix2<f64>), FundsysError> {
    let g = spec.geometry;
    let e2 = spec.epsilon * spec.epsilon;
    let p0 = propagate_scaled(&spec.a0, 1.0, &spec.rho0, 1.0, lambda, g.soft(), tol)?;
    let p1 = propagate_scaled(&spec.a1, 1.0, &spec.rho1, e2, lambda, g.stiff(), tol)?;
    Ok((p0, p1))
}

/// Period map `M_ε` with `h_ε = tr M_ε` and its Floquet multipliers.
pub fn transfer_matrix(spec: &MediumSpec, lambda: f64, tol: f64) -> Result<TransferMatrix, FundsysError> {
    let (v, w) = cell_propagators(spec, lambda, tol)?;
    let e2 = spec.epsilon * spec.epsilon;
    // (v1, v2, a0v1', a0v2') at h and (w1, w2, a1w1', a1w2') at 1
    let entries = Matrix2::new(
        v[(0, 0)] * w[(0, 0)] + e2 * v[(1, 0)] * w[(0, 1)],
        v[(0, 1)] * w[(0, 0)] + e2 * v[(1, 1)] * w[(0, 1)],
        v[(0, 0)] * w[(1, 0)] / e2 + v[(1, 0)] * w[(1, 1)],
        v[(0, 1)] * w[(1, 0)] / e2 + v[(1, 1)] * w[(1, 1)],
    );
    let h_eps = entries.trace();
    let (mu1, mu2) = multipliers(h_eps);
    Ok(TransferMatrix {
        entries,
        h_eps,
        mu1,
        mu2,
        epsilon: spec.epsilon,
        lambda,
    })
}

/// `D(λ) = v1(h) + (a0 v2')(h) − λ v2(h) ∫ρ1`; the limit spectrum is `|D| ≤ 2`.
pub fn limit_discriminant(spec: &MediumSpec, lambda: f64, tol: f64) -> Result<f64, FundsysError> {
    let g = spec.geometry;
    let v = propagate_scaled(&spec.a0, 1.0, &spec.rho0, 1.0, lambda, g.soft(), tol)?;
    Ok(v[(0, 0)] + v[(1, 1)] - lambda * v[(0, 1)] * spec.stiff_mass())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientProfile as P;

    /// Classical RK4 on a fixed grid, independent of the production paths.
    fn rk4_oracle(a: &P, rho: &P, lambda: f64, (l, r): (f64, f64), n: usize) -> Matrix2<f64> {
        let f = |x: f64, y: [f64; 4]| {
            let (av, rv) = (a.eval(x), rho.eval(x));
            [y[1] / av, -lambda * rv * y[0], y[3] / av, -lambda * rv * y[2]]
        };
        let mut pts = vec![l];
        let mut k = a.kinks_in(l, r);
        k.extend(rho.kinks_in(l, r));
        k.sort_by(f64::total_cmp);
        pts.extend(k);
        pts.push(r);
        let mut y = [1.0, 0.0, 0.0, 1.0];
        for w in pts.windows(2) {
            let hs = (w[1] - w[0]) / n as f64;
            for i in 0..n {
                // stay strictly inside the piece so the right-limit rule never bites
                let x = w[0] + i as f64 * hs;
                let xm = x + 0.5 * hs;
                let xe = x + hs * (1.0 - 1e-12);
                let xs = x + hs * 1e-12;
                let add = |y: [f64; 4], k: [f64; 4], c: f64| {
                    [y[0] + c * k[0], y[1] + c * k[1], y[2] + c * k[2], y[3] + c * k[3]]
                };
                let k1 = f(xs, y);
                let k2 = f(xm, add(y, k1, hs / 2.0));
                let k3 = f(xm, add(y, k2, hs / 2.0));
                let k4 = f(xe, add(y, k3, hs));
                for j in 0..4 {
                    y[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
        }
        Matrix2::new(y[0], y[2], y[1], y[3])
    }

    #[test]
    fn zero_lambda_is_a_shear() {
        let one = P::constant(1.0, (0.0, 0.5));
        let p = propagate(&one, &one, 0.0, (0.0, 0.5), DEFAULT_TOL).unwrap();
        assert_eq!(p.entries, Matrix2::new(1.0, 0.5, 0.0, 1.0));
    }

    #[test]
    fn unit_coefficients_give_rotation() {
        let h = 0.37;
        let lambda: f64 = 17.3;
        let one = P::constant(1.0, (0.0, h));
        let p = propagate(&one, &one, lambda, (0.0, h), DEFAULT_TOL).unwrap().entries;
        let k = lambda.sqrt();
        let expect = Matrix2::new((k * h).cos(), (k * h).sin() / k, -k * (k * h).sin(), (k * h).cos());
        assert!((p - expect).amax() < 1e-14);
    }

    #[test]
    fn negative_lambda_is_hyperbolic() {
        let one = P::constant(1.0, (0.0, 1.0));
        let p = propagate(&one, &one, -4.0, (0.0, 1.0), DEFAULT_TOL).unwrap().entries;
        let expect = Matrix2::new(2f64.cosh(), 2f64.sinh() / 2.0, 2.0 * 2f64.sinh(), 2f64.cosh());
        assert!((p - expect).amax() < 1e-13);
    }

    #[test]
    fn piecewise_matches_composition_and_rk4() {
        let a = P::piecewise(vec![0.25], vec![2.0, 1.0], (0.0, 0.5));
        let rho = P::constant(1.0, (0.0, 0.5));
        let lambda = 3.7;
        let p = propagate(&a, &rho, lambda, (0.0, 0.5), DEFAULT_TOL).unwrap().entries;
        let composed = constant_piece(1.0, 1.0, lambda, 0.25) * constant_piece(2.0, 1.0, lambda, 0.25);
        assert!((p - composed).amax() < 1e-10);
        let oracle = rk4_oracle(&a, &rho, lambda, (0.0, 0.5), 4000);
        assert!((p - oracle).amax() < 1e-8);
    }

    #[test]
    fn sampled_grid_matches_rk4() {
        let a = P::sampled(vec![1.0, 1.5, 0.7, 2.0], (0.0, 0.6));
        let rho = P::sampled(vec![2.0, 1.0, 3.0], (0.0, 0.6));
        let lambda = 25.0;
        let p = propagate(&a, &rho, lambda, (0.0, 0.6), 1e-11).unwrap();
        let oracle = rk4_oracle(&a, &rho, lambda, (0.0, 0.6), 4000);
        assert!((p.entries - oracle).amax() < 1e-8, "{:?} vs {:?}", p.entries, oracle);
        assert!((p.det() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn transfer_matrix_matches_closed_form() {
        let h = 0.5;
        for &(eps, lambda) in &[(0.1, 12.0), (0.02, 50.0), (0.3, 150.0)] {
            let spec = MediumSpec::constant_unit(h, eps).unwrap();
            let t = transfer_matrix(&spec, lambda, DEFAULT_TOL).unwrap();
            let k: f64 = f64::sqrt(lambda);
            let (v1, v2, dv1, dv2) = ((k * h).cos(), (k * h).sin() / k, -k * (k * h).sin(), (k * h).cos());
            let phi = eps * k * (1.0 - h);
            let (w1, w2) = (phi.cos(), phi.sin() / (eps * k));
            let (dw1, dw2) = (-eps * k * phi.sin(), phi.cos());
            let e2 = eps * eps;
            let expect = Matrix2::new(
                v1 * w1 + e2 * dv1 * w2,
                v2 * w1 + e2 * dv2 * w2,
                v1 * dw1 / e2 + dv1 * dw2,
                v2 * dw1 / e2 + dv2 * dw2,
            );
            assert!((t.entries - expect).amax() < 1e-9 * (1.0 + expect.amax()));
            assert!((t.det() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn discriminant_closed_form_and_zero() {
        let spec = MediumSpec::constant_unit(0.3, 0.1).unwrap();
        assert_eq!(limit_discriminant(&spec, 0.0, DEFAULT_TOL).unwrap(), 2.0);
        for &lambda in &[0.5f64, 7.0, 90.0] {
            let k = lambda.sqrt();
            let expect = 2.0 * (k * 0.3).cos() - k * (k * 0.3).sin() * 0.7;
            let d = limit_discriminant(&spec, lambda, DEFAULT_TOL).unwrap();
            assert!((d - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn discriminant_piecewise_matches_rk4() {
        let mut spec = MediumSpec::constant_unit(0.5, 0.1).unwrap();
        spec.a0 = P::piecewise(vec![0.25], vec![1.0, 4.0], (0.0, 0.5));
        spec.rho1 = P::constant(2.0, (0.5, 1.0));
        for &lambda in &[3.0, 40.0, 120.0] {
            let v = rk4_oracle(&spec.a0, &spec.rho0, lambda, (0.0, 0.5), 4000);
            let expect = v[(0, 0)] + v[(1, 1)] - lambda * v[(0, 1)] * 1.0;
            let d = limit_discriminant(&spec, lambda, DEFAULT_TOL).unwrap();
            assert!((d - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn trace_converges_to_discriminant() {
        let spec = MediumSpec::constant_unit(0.5, 0.5).unwrap();
        let lambda = 20.0;
        let d = limit_discriminant(&spec, lambda, DEFAULT_TOL).unwrap();
        let errs: Vec<f64> = (3..=10)
            .map(|k| {
                let s = spec.with_epsilon(2f64.powi(-k));
                (transfer_matrix(&s, lambda, DEFAULT_TOL).unwrap().h_eps - d).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn multiplier_cases() {
        let (m1, m2) = multipliers(2.5);
        assert!((m1.re - 0.5).abs() < 1e-15 && (m2.re - 2.0).abs() < 1e-15);
        let (m1, _) = multipliers(-2.5);
        assert!((m1.re + 0.5).abs() < 1e-15);
        let (m1, m2) = multipliers(1.2);
        assert!((m1.norm() - 1.0).abs() < 1e-15 && (m2.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_support_is_rejected() {
        let one = P::constant(1.0, (0.0, 0.5));
        assert!(matches!(
            propagate(&one, &one, 1.0, (0.0, 0.7), DEFAULT_TOL),
            Err(FundsysError::Interval { .. })
        ));
    }
}
