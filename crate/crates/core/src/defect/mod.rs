//! The perturbed operator with a compact defect `D = (d₋, d₊)`: the limit
//! Neumann problem on `D`, finite-ε defect eigenvalues by matching decaying
//! Floquet solutions, decay rates, the asymptotic approximate eigenfunction
//! and the stiff-average decomposition diagnostic.

mod approx;
mod decomp;
pub(crate) mod line;
mod matching;

use log::{info, warn};
use nalgebra::Vector2;
use thiserror::Error;

use crate::fundsys::{limit_discriminant, multipliers, propagate_scaled, FundsysError, DEFAULT_TOL};
use crate::model::{DefectSpec, MediumSpec};
use crate::spectrum::{compute_bands, BandStructure, Classification, SpectrumError};

pub use approx::{approximate_eigenfunction, approximation_error, ApproximateEigenfunction};
pub use decomp::{decomposition_diagnostic, DecompositionDiagnostic};
pub use matching::{defect_eigenvalues, finite_gap, matching_determinant, DefectModeResult, ModeSolution, EDGE_MASS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefectError {
    #[error(transparent)]
    Fundsys(#[from] FundsysError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error("the medium has no defect")]
    NoDefect,
    #[error("λ = {lambda} is not in a gap (discriminant {discriminant})")]
    NotInGap { lambda: f64, discriminant: f64 },
    #[error("λ₀ = {lambda} lies outside the computed range [0, {max}]")]
    Range { lambda: f64, max: f64 },
    #[error("gap {0} does not exist")]
    NoGap(usize),
    #[error("degenerate Floquet data at λ = {lambda}: {what}")]
    Degenerate { lambda: f64, what: String },
    #[error("invalid input: {0}")]
    Input(String),
}

/// An eigenpair of the weighted Neumann problem on `D`, `u₀(d₋) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannMode {
    /// 0-based; mode 0 is the constant.
    pub index: usize,
    pub lambda0: f64,
    pub defect: DefectSpec,
    /// `u₀(d₋)`; the shooting data `(1, 0)` are scaled by it.
    pub scale: f64,
    pub x: Vec<f64>,
    pub u0: Vec<f64>,
    /// Set by [`gap_filter`].
    pub gap: Option<usize>,
    pub edge_distance: Option<f64>,
}

impl NeumannMode {
    /// `(u₀, a_D u₀′)` at `x ∈ D`.
    pub fn eval(&self, x: f64) -> Result<Vector2<f64>, FundsysError> {
        let d = &self.defect;
        let x = x.clamp(d.d_minus, d.d_plus);
        let p = propagate_scaled(&d.a_d, 1.0, &d.rho_d, 1.0, self.lambda0, (d.d_minus, x), DEFAULT_TOL)?;
        Ok(p * Vector2::new(self.scale, 0.0))
    }

    /// Co-derivative at `d₋` and `d₊`.
    pub fn boundary_flux(&self) -> Result<(f64, f64), FundsysError> {
        Ok((self.eval(self.defect.d_minus)?[1], self.eval(self.defect.d_plus)?[1]))
    }
}

/// Largest `√(ρ_D / a_D) · |D|`, the scale of the Neumann wavenumbers.
fn optical_length(d: &DefectSpec) -> f64 {
    (d.rho_d.max_value() / d.a_d.min_value()).sqrt() * d.len()
}

fn neumann_shot(d: &DefectSpec, lambda: f64) -> Result<f64, FundsysError> {
    let p = propagate_scaled(&d.a_d, 1.0, &d.rho_d, 1.0, lambda, (d.d_minus, d.d_plus), DEFAULT_TOL)?;
    Ok(p[(1, 0)])
}

/// Positive roots of the shooting function on a `√λ` grid of spacing `dk`,
/// up to the first `count`.
fn scan_neumann(d: &DefectSpec, count: usize, dk: f64, k_max: Option<f64>) -> Result<Vec<(f64, f64)>, FundsysError> {
    let mut out = Vec::new();
    let mut k = 0.5 * dk;
    let mut prev = (k, neumann_shot(d, k * k)?);
    while out.len() < count && k_max.is_none_or(|m| k < m) {
        k += dk;
        let cur = (k, neumann_shot(d, k * k)?);
        if prev.1 == 0.0 || prev.1.signum() != cur.1.signum() {
            out.push((prev.0 * prev.0, cur.0 * cur.0));
        }
        prev = cur;
    }
    Ok(out)
}

/// First `n_max` eigenpairs of `−(a_D u′)′ = λρ_D u` with `a_D u′ = 0` at
/// `d₋, d₊`, found by shooting `(1, 0)` from `d₋`. The scan grid is halved
/// until the number of brackets below the last root stops changing.
pub fn neumann_modes(defect: &DefectSpec, n_max: usize, shoot_tol: f64) -> Result<Vec<NeumannMode>, DefectError> {
    defect.validate().map_err(|e| DefectError::Input(e.to_string()))?;
    if !(shoot_tol > 0.0) {
        return Err(DefectError::Input(format!("shoot_tol must be positive, got {shoot_tol}")));
    }
    if n_max == 0 {
        return Ok(Vec::new());
    }
    let want = n_max - 1;
    let mut dk = std::f64::consts::PI / (16.0 * optical_length(defect));
    let mut brackets = scan_neumann(defect, want, dk, None)?;
    for _ in 0..6 {
        let Some(&(_, top)) = brackets.last() else { break };
        let finer = scan_neumann(defect, want, 0.5 * dk, Some(top.sqrt()))?;
        if finer.len() == brackets.len() {
            break;
        }
        warn!("Neumann scan missed roots at spacing {dk:e}; halving the grid");
        dk *= 0.5;
        brackets = finer;
    }
    let mut modes = Vec::with_capacity(n_max);
    let sample = |lambda: f64, scale: f64, index: usize| -> Result<NeumannMode, DefectError> {
        let x: Vec<f64> = (0..=256)
            .map(|i| defect.d_minus + defect.len() * i as f64 / 256.0)
            .collect();
        let mut mode = NeumannMode {
            index,
            lambda0: lambda,
            defect: defect.clone(),
            scale,
            x,
            u0: Vec::new(),
            gap: None,
            edge_distance: None,
        };
        let norm = neumann_norm(&mode)?;
        mode.scale /= norm;
        mode.u0 = mode.x.iter().map(|&x| mode.eval(x).map(|s| s[0])).collect::<Result<_, _>>()?;
        Ok(mode)
    };
    modes.push(sample(0.0, 1.0, 0)?);
    for (i, &(lo, hi)) in brackets.iter().enumerate() {
        let (mut lo, mut hi) = (lo, hi);
        let f_lo = neumann_shot(defect, lo)?;
        while hi - lo > shoot_tol * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            let f = neumann_shot(defect, mid)?;
            if f == 0.0 {
                lo = mid;
                hi = mid;
            } else if f.signum() == f_lo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        modes.push(sample(0.5 * (lo + hi), 1.0, i + 1)?);
    }
    Ok(modes)
}

/// `‖u₀‖_{L²_ρ_D(D)}` of the mode as currently scaled.
fn neumann_norm(mode: &NeumannMode) -> Result<f64, FundsysError> {
    let d = &mode.defect;
    let mut cuts = vec![d.d_minus];
    let mut k: Vec<f64> = d.a_d.kinks_in(d.d_minus, d.d_plus);
    k.extend(d.rho_d.kinks_in(d.d_minus, d.d_plus));
    k.sort_by(f64::total_cmp);
    cuts.extend(k);
    cuts.push(d.d_plus);
    let per_len = 1.0 + (mode.lambda0.abs() * d.rho_d.max_value() / d.a_d.min_value()).sqrt();
    let mut s = 0.0;
    for (x, w) in line::gauss_nodes(&cuts, per_len) {
        let u = mode.eval(x)?[0];
        s += w * d.rho_d.eval(x) * u * u;
    }
    Ok(s.sqrt())
}

/// Keeps the modes whose `λ₀` lies in an open gap of `bands`, annotated
/// with the gap index and the distance to the nearest band edge.
pub fn gap_filter(modes: &[NeumannMode], bands: &BandStructure) -> Result<Vec<NeumannMode>, DefectError> {
    let mut out = Vec::new();
    for m in modes {
        if m.lambda0 > bands.lambda_range.1 {
            return Err(DefectError::Range {
                lambda: m.lambda0,
                max: bands.lambda_range.1,
            });
        }
        if let Classification::Gap(i) = bands.classify(m.lambda0) {
            let mut kept = m.clone();
            kept.gap = Some(i);
            kept.edge_distance = Some(bands.edge_distance(m.lambda0));
            out.push(kept);
        }
    }
    Ok(out)
}

/// Small root `μ₁` of `μ² − D(λ₀)μ + 1` and `ν* = |ln|μ₁||`.
pub fn limit_decay(spec: &MediumSpec, lambda0: f64) -> Result<(f64, f64), DefectError> {
    let d = limit_discriminant(spec, lambda0, DEFAULT_TOL)?;
    if d.abs() <= 2.0 {
        return Err(DefectError::NotInGap {
            lambda: lambda0,
            discriminant: d,
        });
    }
    let mu1 = multipliers(d).0.re;
    Ok((-mu1.abs().ln(), mu1))
}

/// `(ν*, μ₁)` at `λ₀`, logging how far the measured exponent of `result`
/// is from the limit one.
pub fn decay_exponent(result: &DefectModeResult, spec: &MediumSpec, lambda0: f64) -> Result<(f64, f64), DefectError> {
    let (nu, mu1) = limit_decay(spec, lambda0)?;
    info!(
        "ε = {}: measured decay exponent {:.6}, limit ν* = {:.6} (difference {:.2e})",
        result.epsilon,
        result.nu_max,
        nu,
        (result.nu_max - nu).abs()
    );
    Ok((nu, mu1))
}

/// Closed gap `index` (1-based) of the limit spectrum, with `λ_max` doubled
/// until a band lies above it.
pub fn limit_gap(spec: &MediumSpec, index: usize) -> Result<(f64, f64), DefectError> {
    if index == 0 {
        return Err(DefectError::NoGap(0));
    }
    let mut lambda_max = 100.0;
    for _ in 0..8 {
        let bands = compute_bands(spec, lambda_max, 4000, 1e-12)?;
        if bands.bands.len() > index {
            return bands.gap(index).ok_or(DefectError::NoGap(index));
        }
        lambda_max *= 2.0;
    }
    Err(DefectError::NoGap(index))
}
