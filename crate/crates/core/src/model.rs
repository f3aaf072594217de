//! Problem definitions: coefficient profiles, cell geometry, the defect and
//! the full medium, plus ingestion from TOML.
//!
//! The periodic cell is `Y = (0, 1)` with soft part `Y0 = (0, h)` and stiff
//! part `Y1 = (h, 1)`. At scale `ε` the soft phase carries `ε² a0(x/ε)` and
//! the stiff phase `a1(x/ε)`; a defect interval `(d₋, d₊)` overrides both.
//! Interface points use the right-limit convention everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Parameters of a profile, in the coordinate of its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileKind {
    Constant {
        value: f64,
    },
    /// `values[i]` holds on `[breakpoints[i-1], breakpoints[i])`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Uniform samples spanning the support, linearly interpolated.
    SampledGrid {
        samples: Vec<f64>,
    },
}

/// A positive, bounded coefficient with bounded inverse on `[l, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientProfile {
    pub kind: ProfileKind,
    pub support: (f64, f64),
}

impl CoefficientProfile {
    pub fn constant(value: f64, support: (f64, f64)) -> Self {
        Self {
            kind: ProfileKind::Constant { value },
            support,
        }
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>, support: (f64, f64)) -> Self {
        Self {
            kind: ProfileKind::PiecewiseConstant {
                breakpoints,
                values,
            },
            support,
        }
    }

    pub fn sampled(samples: Vec<f64>, support: (f64, f64)) -> Self {
        Self {
            kind: ProfileKind::SampledGrid { samples },
            support,
        }
    }

    /// Checks positivity, finiteness and breakpoint ordering.
    pub fn validate(&self, field: &str) -> Result<(), ModelError> {
        let (l, r) = self.support;
        if !(l.is_finite() && r.is_finite() && l < r) {
            return Err(invalid(field, format!("empty support [{l}, {r}]")));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        match &self.kind {
            ProfileKind::Constant { value } => {
                if !positive(value) {
                    return Err(invalid(field, format!("value {value} is not positive")));
                }
            }
            ProfileKind::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(invalid(
                        field,
                        format!(
                            "{} values for {} breakpoints (need one more value)",
                            values.len(),
                            breakpoints.len()
                        ),
                    ));
                }
                if let Some(v) = values.iter().find(|v| !positive(v)) {
                    return Err(invalid(field, format!("value {v} is not positive")));
                }
                let mut prev = l;
                for &b in breakpoints {
                    if !(b > prev && b < r) {
                        return Err(invalid(
                            field,
                            format!("breakpoint {b} not increasing inside ({l}, {r})"),
                        ));
                    }
                    prev = b;
                }
            }
            ProfileKind::SampledGrid { samples } => {
                if samples.len() < 2 {
                    return Err(invalid(field, "sampled grid needs at least 2 samples"));
                }
                if let Some(v) = samples.iter().find(|v| !positive(v)) {
                    return Err(invalid(field, format!("sample {v} is not positive")));
                }
            }
        }
        Ok(())
    }

    pub fn is_piecewise_constant(&self) -> bool {
        !matches!(self.kind, ProfileKind::SampledGrid { .. })
    }

    /// Value at `x` (clamped to the support); right limit at breakpoints.
    pub fn eval(&self, x: f64) -> f64 {
        let (l, r) = self.support;
        match &self.kind {
            ProfileKind::Constant { value } => *value,
            ProfileKind::PiecewiseConstant {
                breakpoints,
                values,
            } => values[breakpoints.partition_point(|&b| b <= x)],
            ProfileKind::SampledGrid { samples } => {
                let n = samples.len() - 1;
                let t = ((x - l) / (r - l)).clamp(0.0, 1.0) * n as f64;
                let i = (t.floor() as usize).min(n - 1);
                let w = t - i as f64;
                samples[i] * (1.0 - w) + samples[i + 1] * w
            }
        }
    }

    /// Points strictly inside `(lo, hi)` where the profile is not smooth.
    pub fn kinks_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (l, r) = self.support;
        match &self.kind {
            ProfileKind::Constant { .. } => Vec::new(),
            ProfileKind::PiecewiseConstant { breakpoints, .. } => breakpoints
                .iter()
                .copied()
                .filter(|&b| b > lo && b < hi)
                .collect(),
            ProfileKind::SampledGrid { samples } => {
                let n = samples.len() - 1;
                (1..n)
                    .map(|i| l + (r - l) * i as f64 / n as f64)
                    .filter(|&x| x > lo && x < hi)
                    .collect()
            }
        }
    }

    /// Exact integral over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.piecewise_integral(lo, hi, |a, b, fa, fb| 0.5 * (fa + fb) * (b - a))
    }

    /// Exact integral of `1/profile` over `[lo, hi]`.
    pub fn integral_inverse(&self, lo: f64, hi: f64) -> f64 {
        self.piecewise_integral(lo, hi, |a, b, fa, fb| {
            let d = fb - fa;
            if d.abs() <= 1e-12 * fa.abs() {
                (b - a) * 2.0 / (fa + fb)
            } else {
                (b - a) * (fb / fa).ln() / d
            }
        })
    }

    /// Sums `rule(a, b, f(a+), f(b-))` over the smooth pieces of `[lo, hi]`;
    /// on each piece the profile is constant or affine.
    fn piecewise_integral(&self, lo: f64, hi: f64, rule: impl Fn(f64, f64, f64, f64) -> f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut pts = vec![lo];
        pts.extend(self.kinks_in(lo, hi));
        pts.push(hi);
        pts.windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = if self.is_piecewise_constant() {
                    let v = self.eval(0.5 * (a + b));
                    (v, v)
                } else {
                    (self.eval(a), self.eval(b))
                };
                rule(a, b, fa, fb)
            })
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn values(&self) -> &[f64] {
        match &self.kind {
            ProfileKind::Constant { value } => std::slice::from_ref(value),
            ProfileKind::PiecewiseConstant { values, .. } => values,
            ProfileKind::SampledGrid { samples } => samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub h: f64,
}

impl CellGeometry {
    pub fn new(h: f64) -> Result<Self, ModelError> {
        if !(h > 0.0 && h < 1.0) {
            return Err(invalid("geometry.h", format!("{h} is not in (0, 1)")));
        }
        Ok(Self { h })
    }

    pub fn soft(&self) -> (f64, f64) {
        (0.0, self.h)
    }

    pub fn stiff(&self) -> (f64, f64) {
        (self.h, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectSpec {
    pub d_minus: f64,
    pub d_plus: f64,
    pub a_d: CoefficientProfile,
    pub rho_d: CoefficientProfile,
}

impl DefectSpec {
    pub fn len(&self) -> f64 {
        self.d_plus - self.d_minus
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.d_minus && x < self.d_plus
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.d_minus.is_finite() && self.d_plus.is_finite() && self.d_minus < self.d_plus) {
            return Err(invalid(
                "defect",
                format!("d_minus = {} must be below d_plus = {}", self.d_minus, self.d_plus),
            ));
        }
        let span = (self.d_minus, self.d_plus);
        for (name, p) in [("defect.a_D", &self.a_d), ("defect.rho_D", &self.rho_d)] {
            if p.support != span {
                return Err(invalid(name, "support must equal (d_minus, d_plus)"));
            }
            p.validate(name)?;
        }
        Ok(())
    }
}

/// Whether a point of the line lies in the soft phase, the stiff phase or
/// the defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Soft,
    Stiff,
    Defect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediumSpec {
    pub geometry: CellGeometry,
    pub a0: CoefficientProfile,
    pub a1: CoefficientProfile,
    pub rho0: CoefficientProfile,
    pub rho1: CoefficientProfile,
    pub defect: Option<DefectSpec>,
    pub epsilon: f64,
}

impl MediumSpec {
    /// Unit coefficients on both phases, no defect.
    pub fn constant_unit(h: f64, epsilon: f64) -> Result<Self, ModelError> {
        let g = CellGeometry::new(h)?;
        let spec = Self {
            geometry: g,
            a0: CoefficientProfile::constant(1.0, g.soft()),
            a1: CoefficientProfile::constant(1.0, g.stiff()),
            rho0: CoefficientProfile::constant(1.0, g.soft()),
            rho1: CoefficientProfile::constant(1.0, g.stiff()),
            defect: None,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_defect(mut self, defect: DefectSpec) -> Result<Self, ModelError> {
        self.defect = Some(defect);
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn h(&self) -> f64 {
        self.geometry.h
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        CellGeometry::new(self.geometry.h)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", format!("{} is not in (0, 1)", self.epsilon)));
        }
        let (soft, stiff) = (self.geometry.soft(), self.geometry.stiff());
        for (name, p, span) in [
            ("coefficients.a0", &self.a0, soft),
            ("coefficients.a1", &self.a1, stiff),
            ("coefficients.rho0", &self.rho0, soft),
            ("coefficients.rho1", &self.rho1, stiff),
        ] {
            if p.support != span {
                return Err(invalid(
                    name,
                    format!("support {:?} does not match the cell part {:?}", p.support, span),
                ));
            }
            p.validate(name)?;
        }
        if let Some(d) = &self.defect {
            d.validate()?;
        }
        Ok(())
    }

    /// `∫_{Y1} ρ1`.
    pub fn stiff_mass(&self) -> f64 {
        let (h, one) = self.geometry.stiff();
        self.rho1.integral(h, one)
    }

    /// Region of `x` at the medium's own `ε`.
    pub fn region(&self, x: f64) -> Region {
        if self.defect.as_ref().is_some_and(|d| d.contains(x)) {
            return Region::Defect;
        }
        let y = x / self.epsilon;
        if y - y.floor() < self.geometry.h {
            Region::Soft
        } else {
            Region::Stiff
        }
    }
}

/// `(a^ε_D(x), ρ^ε_D(x))`: defect values on `D`, `ε² a0, ρ0` on soft cells,
/// `a1, ρ1` on stiff cells.
pub fn evaluate_eps_coefficients(spec: &MediumSpec, x: f64) -> (f64, f64) {
    if let Some(d) = spec.defect.as_ref().filter(|d| d.contains(x)) {
        return (d.a_d.eval(x), d.rho_d.eval(x));
    }
    let eps = spec.epsilon;
    let y = x / eps;
    let frac = y - y.floor();
    if frac < spec.geometry.h {
        (eps * eps * spec.a0.eval(frac), spec.rho0.eval(frac))
    } else {
        (spec.a1.eval(frac), spec.rho1.eval(frac))
    }
}

// ============================================================================
// TOML schema
// ============================================================================

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMedium {
    epsilon: f64,
    geometry: RawGeometry,
    coefficients: RawCoefficients,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    defect: Option<RawDefect>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    h: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficients {
    a0: ProfileKind,
    a1: ProfileKind,
    rho0: ProfileKind,
    rho1: ProfileKind,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefect {
    d_minus: f64,
    d_plus: f64,
    #[serde(rename = "a_D")]
    a_d: ProfileKind,
    #[serde(rename = "rho_D")]
    rho_d: ProfileKind,
}

/// Parses and validates a medium from TOML text.
pub fn parse_medium(config_text: &str) -> Result<MediumSpec, ModelError> {
    let raw: RawMedium = toml::from_str(config_text).map_err(|e| ModelError::Parse(e.to_string()))?;
    from_raw(raw)
}

/// Parses TOML text after applying dotted-key overrides such as
/// `coefficients.a0.value=2`.
pub fn parse_medium_with_overrides(
    config_text: &str,
    overrides: &[(String, String)],
) -> Result<MediumSpec, ModelError> {
    let mut table: toml::Table = config_text
        .parse()
        .map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))?;
    for (key, value) in overrides {
        set_leaf(&mut table, key, value)?;
    }
    let raw: RawMedium = table
        .try_into()
        .map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))?;
    from_raw(raw)
}

fn set_leaf(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ModelError> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        ModelError::Parse(format!("empty override key `{key}`"))
    })?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ModelError::Parse(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(leaf.to_string(), parsed);
    Ok(())
}

fn from_raw(raw: RawMedium) -> Result<MediumSpec, ModelError> {
    let geometry = CellGeometry::new(raw.geometry.h)?;
    let (soft, stiff) = (geometry.soft(), geometry.stiff());
    let c = raw.coefficients;
    let defect = raw.defect.map(|d| {
        let span = (d.d_minus, d.d_plus);
        DefectSpec {
            d_minus: d.d_minus,
            d_plus: d.d_plus,
            a_d: CoefficientProfile { kind: d.a_d, support: span },
            rho_d: CoefficientProfile { kind: d.rho_d, support: span },
        }
    });
    let spec = MediumSpec {
        geometry,
        a0: CoefficientProfile { kind: c.a0, support: soft },
        a1: CoefficientProfile { kind: c.a1, support: stiff },
        rho0: CoefficientProfile { kind: c.rho0, support: soft },
        rho1: CoefficientProfile { kind: c.rho1, support: stiff },
        defect,
        epsilon: raw.epsilon,
    };
    spec.validate()?;
    Ok(spec)
}

/// TOML text that [`parse_medium`] maps back to `spec`.
pub fn serialize_medium(spec: &MediumSpec) -> String {
    let raw = RawMedium {
        epsilon: spec.epsilon,
        geometry: RawGeometry { h: spec.geometry.h },
        coefficients: RawCoefficients {
            a0: spec.a0.kind.clone(),
            a1: spec.a1.kind.clone(),
            rho0: spec.rho0.kind.clone(),
            rho1: spec.rho1.kind.clone(),
        },
        defect: spec.defect.as_ref().map(|d| RawDefect {
            d_minus: d.d_minus,
            d_plus: d.d_plus,
            a_d: d.a_d.kind.clone(),
            rho_d: d.rho_d.kind.clone(),
        }),
    };
    toml::to_string(&raw).expect("medium serialises to TOML")
}
