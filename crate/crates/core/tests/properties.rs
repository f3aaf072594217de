//! Randomised invariants of the propagators, band structure, cell problems
//! and Neumann modes.

use std::f64::consts::PI;

use proptest::prelude::*;

use hicontrast::bloch::{band_eigenvalues_eps, band_eigenvalues_limit, QuasiperiodicProblem};
use hicontrast::defect::neumann_modes;
use hicontrast::fundsys::{limit_discriminant, multipliers, propagate, transfer_matrix, DEFAULT_TOL};
use hicontrast::model::{CoefficientProfile, DefectSpec, MediumSpec};
use hicontrast::spectrum::{band_function, compute_bands};

/// A positive profile on `support` of one of the three kinds.
fn profile(support: (f64, f64)) -> impl Strategy<Value = CoefficientProfile> {
    let (l, r) = support;
    prop_oneof![
        (0.2f64..5.0).prop_map(move |v| CoefficientProfile::constant(v, support)),
        (proptest::collection::vec(0.05f64..0.95, 1..4), proptest::collection::vec(0.2f64..5.0, 4)).prop_map(
            move |(mut t, vals)| {
                t.sort_by(f64::total_cmp);
                t.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                let breaks: Vec<f64> = t.iter().map(|s| l + s * (r - l)).collect();
                let values = vals[..breaks.len() + 1].to_vec();
                CoefficientProfile::piecewise(breaks, values, support)
            }
        ),
        proptest::collection::vec(0.2f64..5.0, 2..6).prop_map(move |s| CoefficientProfile::sampled(s, support)),
    ]
}

fn medium(eps: f64) -> impl Strategy<Value = MediumSpec> {
    (0.2f64..0.8).prop_flat_map(move |h| {
        (profile((0.0, h)), profile((0.0, h)), profile((h, 1.0)), profile((h, 1.0))).prop_map(
            move |(a0, rho0, a1, rho1)| {
                let mut s = MediumSpec::constant_unit(h, eps).unwrap();
                s.a0 = a0;
                s.rho0 = rho0;
                s.a1 = a1;
                s.rho1 = rho1;
                s.validate().unwrap();
                s
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn propagators_are_unimodular(a in profile((0.0, 1.0)), rho in profile((0.0, 1.0)), lambda in 0.0f64..200.0) {
        let p = propagate(&a, &rho, lambda, (0.0, 1.0), DEFAULT_TOL).unwrap();
        prop_assert!((p.det() - 1.0).abs() <= 10.0 * DEFAULT_TOL, "det = {}", p.det());
    }

    #[test]
    fn propagation_composes(
        a in profile((0.0, 1.0)),
        rho in profile((0.0, 1.0)),
        lambda in 0.0f64..120.0,
        m in 0.05f64..0.95,
    ) {
        let whole = propagate(&a, &rho, lambda, (0.0, 1.0), DEFAULT_TOL).unwrap().entries;
        let left = propagate(&a, &rho, lambda, (0.0, m), DEFAULT_TOL).unwrap().entries;
        let right = propagate(&a, &rho, lambda, (m, 1.0), DEFAULT_TOL).unwrap().entries;
        let diff = (right * left - whole).abs().max();
        prop_assert!(diff <= 1e-7 * (1.0 + whole.abs().max()), "diff = {diff:e}");
    }

    #[test]
    fn multipliers_are_reciprocal(t in -1e6f64..1e6) {
        let (m1, m2) = multipliers(t);
        prop_assert!((m1 * m2 - 1.0).norm() <= 4.0 * f64::EPSILON);
        if t.abs() > 2.0 {
            prop_assert!(m1.norm() < 1.0);
        }
    }

    #[test]
    fn gap_iff_small_multiplier(spec in medium(0.05), lambda in 0.0f64..150.0) {
        let t = transfer_matrix(&spec, lambda, DEFAULT_TOL).unwrap();
        prop_assert!((t.det() - 1.0).abs() <= 1e-8);
        // skip the band edges, where both sides round to |μ| = 1
        prop_assume!((t.h_eps.abs() - 2.0).abs() > 1e-6);
        // in a band |μ₁| = 1 only up to rounding
        prop_assert_eq!(t.in_gap(), t.mu1.norm() < 1.0 - 1e-9);
    }

    #[test]
    fn discriminant_is_continuous(spec in medium(0.1), lambda in 0.0f64..150.0) {
        let step = 1e-6;
        let d0 = limit_discriminant(&spec, lambda, DEFAULT_TOL).unwrap();
        let d1 = limit_discriminant(&spec, lambda + step, DEFAULT_TOL).unwrap();
        prop_assert!((d1 - d0).abs() <= 1e4 * step, "jump {} at {lambda}", d1 - d0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn band_functions_are_even(h in 0.3f64..0.7, theta in 0.05f64..3.1, n in 1usize..3) {
        let spec = MediumSpec::constant_unit(h, 0.1).unwrap();
        let bands = compute_bands(&spec, 200.0, 20_000, 1e-12).unwrap();
        let f = band_function(&spec, &bands, n, &[theta, 2.0 * PI - theta], 1e-12).unwrap();
        prop_assert!((f.values[0] - f.values[1]).abs() <= 1e-10);
        let (lo, hi) = bands.band(n).unwrap();
        prop_assert!(f.values[0] >= lo - 1e-10 && f.values[0] <= hi + 1e-10);
    }

    #[test]
    fn cell_matrices_are_hermitian(spec in medium(0.1), theta in 0.0f64..(2.0 * PI)) {
        let asm = QuasiperiodicProblem::with_mesh(&spec, theta, 24, 24).assemble();
        let (k, m) = asm.dense();
        prop_assert_eq!(k.adjoint(), k);
        prop_assert_eq!(m.adjoint(), m);
    }

    #[test]
    fn cell_eigenvalues_are_sorted(spec in medium(0.1), theta in 0.0f64..PI) {
        let prob = QuasiperiodicProblem::with_mesh(&spec, theta, 48, 48);
        for vals in [band_eigenvalues_eps(&prob, 4), band_eigenvalues_limit(&prob, 4)] {
            prop_assert!(vals.iter().all(|v| v.is_finite() && *v > -1e-9));
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{vals:?}");
        }
    }

    #[test]
    fn neumann_modes_have_zero_flux(
        dm in -1.0f64..1.0,
        len in 0.3f64..1.5,
        a_d in 0.3f64..3.0,
        rho_d in 0.3f64..3.0,
    ) {
        let dp = dm + len;
        let d = DefectSpec {
            d_minus: dm,
            d_plus: dp,
            a_d: CoefficientProfile::piecewise(vec![dm + 0.4 * len], vec![a_d, 1.0], (dm, dp)),
            rho_d: CoefficientProfile::constant(rho_d, (dm, dp)),
        };
        let modes = neumann_modes(&d, 4, 1e-13).unwrap();
        prop_assert!(modes[0].lambda0.abs() <= 1e-9);
        prop_assert!(modes.windows(2).all(|w| w[0].lambda0 < w[1].lambda0));
        for m in &modes {
            let (fl, fr) = m.boundary_flux().unwrap();
            let scale = m.scale * (1.0 + m.lambda0.sqrt());
            prop_assert!(fl.abs() <= 1e-8 * scale && fr.abs() <= 1e-8 * scale, "flux {fl:e} {fr:e} at λ0 = {}", m.lambda0);
        }
    }
}
