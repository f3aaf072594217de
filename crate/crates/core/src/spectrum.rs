//! The limit band-gap spectrum `{λ ≥ 0 : |D(λ)| ≤ 2}`, band functions
//! `λ_n(θ)` and an independent check through the soft-cell eigen-expansion.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use log::warn;
use thiserror::Error;

use crate::fundsys::{limit_discriminant, FundsysError};
use crate::model::MediumSpec;
use crate::oracle::{soft_cell_modes, SoftCellSpectrum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error(transparent)]
    Fundsys(#[from] FundsysError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("grid too coarse near λ = {lambda} after {attempts} refinements")]
    Unresolved { lambda: f64, attempts: usize },
    #[error("band {n} not in the computed structure ({available} bands)")]
    NoSuchBand { n: usize, available: usize },
    #[error("no root of D(λ) = {target} in band {n}; D at the bracket: {samples:?}")]
    Inconsistent { n: usize, target: f64, samples: Vec<(f64, f64)> },
    #[error("λ = {lambda} lies within {distance:e} of the soft-cell eigenvalue μ_{index}")]
    PoleProximity { lambda: f64, index: usize, distance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStructure {
    pub lambda_range: (f64, f64),
    /// Closed bands `[λ⁻_n, λ⁺_n]`, sorted.
    pub bands: Vec<(f64, f64)>,
    /// Open gaps between and after the bands.
    pub gaps: Vec<(f64, f64)>,
    /// `(λ, D(λ))`, including locally refined points.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// 1-based band index.
    Band(usize),
    /// 1-based gap index; gap `k` follows band `k`.
    Gap(usize),
    OutOfRange,
}

impl BandStructure {
    pub fn classify(&self, lambda: f64) -> Classification {
        if lambda < self.lambda_range.0 || lambda > self.lambda_range.1 {
            return Classification::OutOfRange;
        }
        if let Some(i) = self.bands.iter().position(|&(a, b)| lambda >= a && lambda <= b) {
            return Classification::Band(i + 1);
        }
        match self.gaps.iter().position(|&(a, b)| lambda > a && lambda < b) {
            Some(i) => Classification::Gap(i + 1),
            None => Classification::OutOfRange,
        }
    }

    /// Gap `index` (1-based) and whether it is cut off by `λ_max`.
    pub fn gap(&self, index: usize) -> Option<(f64, f64)> {
        index.checked_sub(1).and_then(|i| self.gaps.get(i).copied())
    }

    pub fn band(&self, index: usize) -> Option<(f64, f64)> {
        index.checked_sub(1).and_then(|i| self.bands.get(i).copied())
    }

    /// Distance from `lambda` to the nearest band edge.
    pub fn edge_distance(&self, lambda: f64) -> f64 {
        self.bands
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .map(|e| (lambda - e).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

const MAX_REFINEMENTS: usize = 3;

/// Samples `D` on `[0, λ_max]`, refines locally where a band may hide
/// between two gap samples of opposite sign, and bisects every transition of
/// `|D| − 2` to `root_tol`.
pub fn compute_bands(
    spec: &MediumSpec,
    lambda_max: f64,
    grid_n: usize,
    root_tol: f64,
) -> Result<BandStructure, SpectrumError> {
    if !(lambda_max > 0.0) || grid_n < 100 || !(root_tol > 0.0) {
        return Err(SpectrumError::Input(format!(
            "need λ_max > 0, grid_n ≥ 100, root_tol > 0 (got {lambda_max}, {grid_n}, {root_tol})"
        )));
    }
    let tol = crate::fundsys::DEFAULT_TOL;
    let d = |l: f64| limit_discriminant(spec, l, tol);
    let step = lambda_max / grid_n as f64;
    let mut samples = Vec::with_capacity(grid_n + 1);
    let mut prev = (0.0, d(0.0)?);
    samples.push(prev);
    for i in 1..=grid_n {
        let l = if i == grid_n { lambda_max } else { i as f64 * step };
        let cur = (l, d(l)?);
        if prev.1.abs() > 2.0 && cur.1.abs() > 2.0 && prev.1.signum() != cur.1.signum() {
            refine_cell(&d, prev, cur, 1, &mut samples)?;
        }
        samples.push(cur);
        prev = cur;
    }

    let in_band = |v: f64| v.abs() <= 2.0;
    let edge = |a: f64, b: f64| -> Result<f64, SpectrumError> {
        // bisect the transition of in_band between a and b
        let (mut lo, mut hi) = (a, b);
        let side = in_band(d(lo)?);
        while hi - lo > root_tol {
            let mid = 0.5 * (lo + hi);
            if in_band(d(mid)?) == side {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };

    let mut bands = Vec::new();
    let mut start: Option<f64> = Some(0.0);
    for w in samples.windows(2) {
        let ((a, da), (b, db)) = (w[0], w[1]);
        match (in_band(da), in_band(db)) {
            (true, false) => {
                let e = edge(a, b)?;
                bands.push((start.take().unwrap_or(a), e));
            }
            (false, true) => start = Some(edge(a, b)?),
            _ => {}
        }
    }
    if let Some(s) = start {
        bands.push((s, lambda_max));
    }
    let mut gaps: Vec<(f64, f64)> = bands.windows(2).map(|w| (w[0].1, w[1].0)).collect();
    if let Some(&(_, last)) = bands.last() {
        if last < lambda_max {
            gaps.push((last, lambda_max));
        }
    }
    Ok(BandStructure {
        lambda_range: (0.0, lambda_max),
        bands,
        gaps,
        samples,
    })
}

/// Inserts 10× finer samples between `a` and `b`, recursing on cells that
/// still straddle a hidden band.
fn refine_cell(
    d: &dyn Fn(f64) -> Result<f64, FundsysError>,
    a: (f64, f64),
    b: (f64, f64),
    attempt: usize,
    out: &mut Vec<(f64, f64)>,
) -> Result<(), SpectrumError> {
    if attempt > MAX_REFINEMENTS {
        return Err(SpectrumError::Unresolved {
            lambda: 0.5 * (a.0 + b.0),
            attempts: MAX_REFINEMENTS,
        });
    }
    warn!(
        "discriminant jumps from {:.3} to {:.3} over [{}, {}]; refining 10x",
        a.1, b.1, a.0, b.0
    );
    let mut prev = a;
    for i in 1..=10 {
        let l = if i == 10 { b.0 } else { a.0 + (b.0 - a.0) * i as f64 / 10.0 };
        let cur = if i == 10 { b } else { (l, d(l)?) };
        let hidden = prev.1.abs() > 2.0 && cur.1.abs() > 2.0 && prev.1.signum() != cur.1.signum();
        if hidden {
            refine_cell(d, prev, cur, attempt + 1, out)?;
        }
        if i < 10 {
            out.push(cur);
        }
        prev = cur;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandFunction {
    pub n: usize,
    pub theta_grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// `64` uniform points on `[0, π]`.
pub fn default_theta_grid() -> Vec<f64> {
    (0..64).map(|i| PI * i as f64 / 63.0).collect()
}

/// Solves `D(λ) = 2 cos θ` inside band `n` for every `θ` of the grid.
pub fn band_function(
    spec: &MediumSpec,
    bands: &BandStructure,
    n: usize,
    theta_grid: &[f64],
    root_tol: f64,
) -> Result<BandFunction, SpectrumError> {
    let (lo, hi) = bands.band(n).ok_or(SpectrumError::NoSuchBand {
        n,
        available: bands.bands.len(),
    })?;
    let tol = crate::fundsys::DEFAULT_TOL;
    // endpoints are only known to root_tol; widen so the crossing is bracketed
    let (lo, hi) = ((lo - 2.0 * root_tol).max(0.0), hi + 2.0 * root_tol);
    let values = theta_grid
        .iter()
        .map(|&theta| {
            let target = 2.0 * theta.cos();
            let f = |l: f64| limit_discriminant(spec, l, tol).map(|v| v - target);
            let (mut a, mut b) = (lo, hi);
            let (fa, fb) = (f(a)?, f(b)?);
            if fa == 0.0 {
                return Ok(a);
            }
            if fb == 0.0 {
                return Ok(b);
            }
            if fa.signum() == fb.signum() {
                return Err(SpectrumError::Inconsistent {
                    n,
                    target,
                    samples: vec![(a, fa + target), (b, fb + target)],
                });
            }
            while b - a > root_tol {
                let m = 0.5 * (a + b);
                if f(m)?.signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(0.5 * (a + b))
        })
        .collect::<Result<Vec<f64>, SpectrumError>>()?;
    Ok(BandFunction {
        n,
        theta_grid: theta_grid.to_vec(),
        values,
    })
}

/// Nodes on `Y0` used for the soft-cell eigenpairs behind `n_terms` terms.
pub fn series_nodes(n_terms: usize) -> usize {
    (2 * n_terms).max(128)
}

/// `Σ_n λ/(μ_n(θ) − λ) |Φ_n(0)|² − (∫ρ1)⁻¹` truncated after `n_terms`
/// soft-cell modes.
///
/// The sum is Kummer-accelerated: the part `λ/(μ_n + 1)` is summed in closed
/// form as `λ[(K + M)⁻¹]_{00}`, leaving terms that decay like `μ_n⁻²`.
pub fn spectral_series_criterion(
    spec: &MediumSpec,
    lambda: f64,
    theta: f64,
    n_terms: usize,
) -> Result<f64, SpectrumError> {
    if n_terms < 10 {
        return Err(SpectrumError::Input(format!("n_terms = {n_terms} is below 10")));
    }
    let cell = soft_cell_modes(spec, theta, series_nodes(n_terms), n_terms);
    series_value(&cell, lambda, n_terms, spec.stiff_mass())
}

/// Criterion value from precomputed soft-cell data.
pub fn series_value(cell: &SoftCellSpectrum, lambda: f64, n_terms: usize, stiff_mass: f64) -> Result<f64, SpectrumError> {
    if let Some((index, mu)) = cell
        .mu
        .iter()
        .enumerate()
        .find(|(_, &mu)| (mu - lambda).abs() < 1e-8)
    {
        return Err(SpectrumError::PoleProximity {
            lambda,
            index: index + 1,
            distance: (mu - lambda).abs(),
        });
    }
    let tail: f64 = cell
        .mu
        .iter()
        .zip(&cell.phi0_sq)
        .take(n_terms)
        .map(|(&mu, &p)| lambda * (lambda + 1.0) * p / ((mu + 1.0) * (mu - lambda)))
        .sum();
    Ok(lambda * cell.resolvent00 + tail - 1.0 / stiff_mass)
}

/// The plain truncated sum without acceleration, for comparison.
pub fn series_value_raw(cell: &SoftCellSpectrum, lambda: f64, n_terms: usize, stiff_mass: f64) -> f64 {
    cell.mu
        .iter()
        .zip(&cell.phi0_sq)
        .take(n_terms)
        .map(|(&mu, &p)| lambda * p / (mu - lambda))
        .sum::<f64>()
        - 1.0 / stiff_mass
}

/// Band/gap classification of `λ` by searching `θ ∈ [0, π]` for a root of
/// the series criterion.
pub struct SeriesClassifier<'a> {
    spec: &'a MediumSpec,
    n_terms: usize,
    grid: Vec<Arc<SoftCellSpectrum>>,
    /// Refinement points repeat from one `λ` to the next.
    cache: Mutex<HashMap<u64, Arc<SoftCellSpectrum>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesVerdict {
    /// A `θ` with `|criterion| < 1e-6`.
    Band { theta: f64, value: f64 },
    Gap,
}

impl<'a> SeriesClassifier<'a> {
    pub fn new(spec: &'a MediumSpec, n_terms: usize) -> Self {
        let nodes = series_nodes(n_terms);
        let grid = default_theta_grid()
            .into_iter()
            .map(|t| Arc::new(soft_cell_modes(spec, t, nodes, n_terms)))
            .collect();
        Self {
            spec,
            n_terms,
            grid,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn cell(&self, theta: f64) -> Arc<SoftCellSpectrum> {
        let key = theta.to_bits();
        if let Some(c) = self.cache.lock().expect("cache lock").get(&key) {
            return c.clone();
        }
        let c = Arc::new(soft_cell_modes(self.spec, theta, series_nodes(self.n_terms), self.n_terms));
        self.cache.lock().expect("cache lock").insert(key, c.clone());
        c
    }

    fn value(&self, cell: &SoftCellSpectrum, lambda: f64) -> Result<f64, SpectrumError> {
        series_value(cell, lambda, self.n_terms, self.spec.stiff_mass())
    }

    pub fn classify(&self, lambda: f64) -> Result<SeriesVerdict, SpectrumError> {
        let mut cells: Vec<(Arc<SoftCellSpectrum>, Arc<SoftCellSpectrum>)> = self
            .grid
            .windows(2)
            .map(|w| (w[0].clone(), w[1].clone()))
            .collect();
        for _depth in 0..6 {
            let mut next = Vec::new();
            for (a, b) in cells {
                let (fa, fb) = (self.value(&a, lambda)?, self.value(&b, lambda)?);
                if fa.abs() < 1e-6 {
                    return Ok(SeriesVerdict::Band { theta: a.theta, value: fa });
                }
                let pole = a
                    .mu
                    .iter()
                    .zip(&b.mu)
                    .any(|(&ma, &mb)| (ma - lambda).signum() != (mb - lambda).signum());
                if fa.signum() == fb.signum() && !pole {
                    continue;
                }
                if !pole {
                    return self.refine_root(&a, &b, fa, lambda);
                }
                // a pole and possibly a root: split and look again
                for k in 0..4 {
                    let t0 = a.theta + (b.theta - a.theta) * k as f64 / 4.0;
                    let t1 = a.theta + (b.theta - a.theta) * (k + 1) as f64 / 4.0;
                    let c0 = if k == 0 { a.clone() } else { self.cell(t0) };
                    let c1 = if k == 3 { b.clone() } else { self.cell(t1) };
                    next.push((c0, c1));
                }
            }
            if next.is_empty() {
                return Ok(SeriesVerdict::Gap);
            }
            cells = next;
        }
        Ok(SeriesVerdict::Gap)
    }

    /// Illinois false position in `θ` on a pole-free sign change.
    fn refine_root(
        &self,
        a: &SoftCellSpectrum,
        b: &SoftCellSpectrum,
        fa: f64,
        lambda: f64,
    ) -> Result<SeriesVerdict, SpectrumError> {
        let nodes = series_nodes(self.n_terms);
        let (mut ta, mut tb) = (a.theta, b.theta);
        let mut fa = fa;
        let mut fb = self.value(&b, lambda)?;
        let mut side = 0i32;
        for _ in 0..100 {
            let t = (ta * fb - tb * fa) / (fb - fa);
            let ft = self.value(&soft_cell_modes(self.spec, t, nodes, self.n_terms), lambda)?;
            if ft.abs() < 1e-6 {
                return Ok(SeriesVerdict::Band { theta: t, value: ft });
            }
            if ft.signum() == fa.signum() {
                ta = t;
                fa = ft;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                tb = t;
                fb = ft;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            if (tb - ta).abs() < 1e-15 {
                break;
            }
        }
        Ok(SeriesVerdict::Gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(h: f64) -> MediumSpec {
        MediumSpec::constant_unit(h, 0.1).unwrap()
    }

    fn closed_form(h: f64, l: f64) -> f64 {
        let k = l.sqrt();
        2.0 * (k * h).cos() - k * (k * h).sin() * (1.0 - h)
    }

    #[test]
    fn bands_of_unit_medium() {
        let spec = unit(0.5);
        let bs = compute_bands(&spec, 200.0, 20_000, 1e-12).unwrap();
        assert_eq!(bs.bands[0].0, 0.0);
        assert!(bs.bands.len() >= 3);
        for &(a, b) in &bs.bands {
            for e in [a, b].into_iter().filter(|&e| e > 0.0 && e < 200.0) {
                assert!((closed_form(0.5, e).abs() - 2.0).abs() < 1e-9, "edge {e}");
            }
        }
        assert_eq!(bs.samples[0], (0.0, 2.0));
        assert_eq!(bs.classify(0.0), Classification::Band(1));
        assert_eq!(bs.classify(25.0), Classification::Gap(1));
    }

    /// Dense scan oracle: band edges from a 10⁶-point grid of the closed form.
    fn dense_scan_bands(h: f64, lmax: f64, n: usize) -> Vec<(f64, f64)> {
        let mut bands = Vec::new();
        let mut start = Some(0.0);
        let mut prev = true;
        for i in 1..=n {
            let l = lmax * i as f64 / n as f64;
            let inb = closed_form(h, l).abs() <= 2.0;
            if prev && !inb {
                bands.push((start.take().unwrap(), l));
            } else if !prev && inb {
                start = Some(l);
            }
            prev = inb;
        }
        if let Some(s) = start {
            bands.push((s, lmax));
        }
        bands
    }

    #[test]
    fn band_widths_against_dense_scan() {
        let spec = unit(0.5);
        let bs = compute_bands(&spec, 500.0, 20_000, 1e-10).unwrap();
        let oracle = dense_scan_bands(0.5, 500.0, 1_000_000);
        assert_eq!(bs.bands.len(), oracle.len());
        for (b, o) in bs.bands.iter().zip(&oracle) {
            assert!((b.0 - o.0).abs() < 1e-3 && (b.1 - o.1).abs() < 1e-3);
        }
        // widths grow in λ towards 8/(h(1−h)) but shrink in √λ
        let full: Vec<&(f64, f64)> = bs.bands.iter().filter(|b| b.1 < 500.0).collect();
        for w in full.windows(2).skip(1) {
            let (a, b) = (w[0], w[1]);
            assert!(b.1 - b.0 > a.1 - a.0);
            assert!(b.1.sqrt() - b.0.sqrt() < a.1.sqrt() - a.0.sqrt());
        }
    }

    #[test]
    fn band_function_endpoints_and_evenness() {
        let spec = unit(0.5);
        let bs = compute_bands(&spec, 200.0, 20_000, 1e-12).unwrap();
        for n in 1..=3 {
            let bf = band_function(&spec, &bs, n, &[0.0, PI], 1e-12).unwrap();
            let (lo, hi) = bs.band(n).unwrap();
            let mut ends = bf.values.clone();
            ends.sort_by(f64::total_cmp);
            assert!((ends[0] - lo).abs() < 1e-9 && (ends[1] - hi).abs() < 1e-9);
            let thetas = [0.3, 1.1, 2.5];
            let mirrored: Vec<f64> = thetas.iter().map(|t| 2.0 * PI - t).collect();
            let a = band_function(&spec, &bs, n, &thetas, 1e-12).unwrap();
            let b = band_function(&spec, &bs, n, &mirrored, 1e-12).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-11);
            }
        }
    }

    #[test]
    fn series_at_zero_and_tail() {
        let spec = unit(0.5);
        let v = spectral_series_criterion(&spec, 0.0, 0.4, 20).unwrap();
        assert!((v + 2.0).abs() < 1e-15);
        assert!(matches!(
            spectral_series_criterion(&spec, 5.0, 0.4, 5),
            Err(SpectrumError::Input(_))
        ));
    }

    #[test]
    fn series_matches_discriminant_identity() {
        // with every discrete mode kept, the sum is the cell Green's function,
        // so S = 0 exactly where D(λ) = 2cos θ (up to the O(mesh²) error)
        let spec = unit(0.5);
        let bs = compute_bands(&spec, 200.0, 20_000, 1e-12).unwrap();
        let theta = 1.0;
        let lam = band_function(&spec, &bs, 1, &[theta], 1e-13).unwrap().values[0];
        let v = spectral_series_criterion(&spec, lam, theta, 300).unwrap();
        assert!(v.abs() < 1e-3, "{v}");
    }
}
