//! Extremal dependence: inverse complementary rank transform (ICRT), polar
//! representation, top-radius selection and the extremal dependence measure
//! (EDM).

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtremalError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("coordinate at index {0} must be positive")]
    NonPositiveCoordinate(usize),
    #[error("angle {angle} at index {index} lies outside [0, pi/2]")]
    AngleOutOfRange { index: usize, angle: f64 },
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("fractions must be strictly ascending")]
    UnsortedFractions,
    #[error("need at least {min} observations, got {got}")]
    TooFewObservations { min: usize, got: usize },
    #[error("unknown norm `{0}` (expected l1 or l2)")]
    UnknownNorm(String),
}

/// Largest 0.01% … 20% of radii.
pub const DEFAULT_FRACTIONS: [f64; 11] = [
    0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.10, 0.20,
];

/// EDM of angles spread uniformly over [0, pi/2].
pub const UNIFORM_REFERENCE: f64 = 2.0 / 3.0;
pub const INDEPENDENCE_BELOW: f64 = 0.4;
pub const STRONG_DEPENDENCE_ABOVE: f64 = 0.75;

pub const MIN_CURVE_OBSERVATIONS: usize = 100;

/// Inverse complementary rank transform: each value becomes `n / r` where
/// `r` is its rank counted from the largest (largest = 1). Tied values share
/// the average of the ranks they span. Input order is preserved.
pub fn icrt(values: &[f64]) -> Result<Vec<f64>, ExtremalError> {
    if values.is_empty() {
        return Err(ExtremalError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ExtremalError::NonFinite(i));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.par_sort_unstable_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let v = values[order[start]];
        let mut end = start + 1;
        while end < n && values[order[end]] == v {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let transformed = n as f64 / avg_rank;
        for &idx in &order[start..end] {
            out[idx] = transformed;
        }
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusNorm {
    L1,
    #[default]
    L2,
}

impl RadiusNorm {
    pub fn radius(self, x: f64, y: f64) -> f64 {
        match self {
            RadiusNorm::L1 => x + y,
            RadiusNorm::L2 => x.hypot(y),
        }
    }
}

impl fmt::Display for RadiusNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadiusNorm::L1 => "l1",
            RadiusNorm::L2 => "l2",
        })
    }
}

impl FromStr for RadiusNorm {
    type Err = ExtremalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(RadiusNorm::L1),
            "l2" => Ok(RadiusNorm::L2),
            other => Err(ExtremalError::UnknownNorm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarSample {
    pub radius: f64,
    /// In [0, pi/2].
    pub theta: f64,
}

pub fn to_polar(
    xs: &[f64],
    ys: &[f64],
    norm: RadiusNorm,
) -> Result<Vec<PolarSample>, ExtremalError> {
    if xs.len() != ys.len() {
        return Err(ExtremalError::LengthMismatch(xs.len(), ys.len()));
    }
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| {
            if !(x.is_finite() && y.is_finite()) {
                return Err(ExtremalError::NonFinite(i));
            }
            if x <= 0.0 || y <= 0.0 {
                return Err(ExtremalError::NonPositiveCoordinate(i));
            }
            Ok(PolarSample {
                radius: norm.radius(x, y),
                theta: y.atan2(x),
            })
        })
        .collect()
}

fn check_fraction(p: f64) -> Result<(), ExtremalError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(ExtremalError::InvalidFraction(p))
    }
}

/// `ceil(p * n)`, at least 1. Products within rounding noise of an integer
/// are snapped to it, so that 0.0001 * 1e6 selects exactly 100.
pub fn fraction_count(p: f64, n: usize) -> usize {
    let exact = p * n as f64;
    let nearest = exact.round();
    let k = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n.max(1))
}

/// Radius-descending order; ties go to the earlier sample.
fn by_radius_desc(samples: &[PolarSample]) -> impl Fn(&usize, &usize) -> Ordering + Sync + '_ {
    move |&a, &b| {
        samples[b]
            .radius
            .total_cmp(&samples[a].radius)
            .then(a.cmp(&b))
    }
}

/// The `ceil(p * n)` samples with the largest radius, largest first.
pub fn top_fraction(samples: &[PolarSample], p: f64) -> Result<Vec<PolarSample>, ExtremalError> {
    check_fraction(p)?;
    if samples.is_empty() {
        return Err(ExtremalError::Empty);
    }
    let k = fraction_count(p, samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let cmp = by_radius_desc(samples);
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, &cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(&cmp);
    Ok(order.into_iter().map(|i| samples[i]).collect())
}

/// `1 - (4/pi)^2 * mean((theta - pi/4)^2)`, clamped to [0, 1].
pub fn edm(angles: &[f64]) -> Result<f64, ExtremalError> {
    if angles.is_empty() {
        return Err(ExtremalError::Empty);
    }
    let mut sum_sq = 0.0;
    for (index, &angle) in angles.iter().enumerate() {
        if !(0.0..=FRAC_PI_2).contains(&angle) {
            return Err(ExtremalError::AngleOutOfRange { index, angle });
        }
        let d = angle - FRAC_PI_4;
        sum_sq += d * d;
    }
    let mean_sq = sum_sq / angles.len() as f64;
    Ok((1.0 - mean_sq / (FRAC_PI_4 * FRAC_PI_4)).clamp(0.0, 1.0))
}

/// Reading of an EDM value against the usual reference bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdmReading {
    ExtremalIndependence,
    Inconclusive,
    StrongDependence,
}

impl EdmReading {
    pub fn of(edm: f64) -> Self {
        if edm < INDEPENDENCE_BELOW {
            EdmReading::ExtremalIndependence
        } else if edm > STRONG_DEPENDENCE_ABOVE {
            EdmReading::StrongDependence
        } else {
            EdmReading::Inconclusive
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdmReading::ExtremalIndependence => "extremal-independence",
            EdmReading::Inconclusive => "inconclusive",
            EdmReading::StrongDependence => "strong-dependence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdmCurve {
    pub n: usize,
    pub norm: RadiusNorm,
    pub fractions: Vec<f64>,
    pub k_values: Vec<usize>,
    pub edm_values: Vec<f64>,
    pub readings: Vec<EdmReading>,
    /// Every angle, ordered by decreasing radius; the first `k` belong to
    /// the top-`k` subset.
    #[serde(skip)]
    pub angles_by_radius: Vec<f64>,
}

impl EdmCurve {
    pub fn top_angles(&self, k: usize) -> &[f64] {
        &self.angles_by_radius[..k.min(self.angles_by_radius.len())]
    }

    /// Counts of the top-`k` angles in `bins` equal-width bins over [0, pi/2].
    pub fn angle_histogram(&self, k: usize, bins: usize) -> Vec<u64> {
        let mut counts = vec![0u64; bins];
        if bins == 0 {
            return counts;
        }
        for &theta in self.top_angles(k) {
            let b = ((theta / FRAC_PI_2) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        counts
    }
}

/// Full pipeline: ICRT both marginals, convert to polar form, and evaluate
/// the EDM of the largest-radius subset at each fraction.
pub fn edm_curve(
    xs: &[f64],
    ys: &[f64],
    fractions: &[f64],
    norm: RadiusNorm,
) -> Result<EdmCurve, ExtremalError> {
    if xs.len() != ys.len() {
        return Err(ExtremalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < MIN_CURVE_OBSERVATIONS {
        return Err(ExtremalError::TooFewObservations {
            min: MIN_CURVE_OBSERVATIONS,
            got: xs.len(),
        });
    }
    if fractions.is_empty() {
        return Err(ExtremalError::Empty);
    }
    for &p in fractions {
        check_fraction(p)?;
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExtremalError::UnsortedFractions);
    }

    let rx = icrt(xs)?;
    let ry = icrt(ys)?;
    let polar = to_polar(&rx, &ry, norm)?;
    let mut order: Vec<usize> = (0..polar.len()).collect();
    order.par_sort_unstable_by(by_radius_desc(&polar));
    let angles_by_radius: Vec<f64> = order.iter().map(|&i| polar[i].theta).collect();

    let n = polar.len();
    let k_values: Vec<usize> = fractions.iter().map(|&p| fraction_count(p, n)).collect();
    let edm_values = k_values
        .iter()
        .map(|&k| edm(&angles_by_radius[..k]))
        .collect::<Result<Vec<_>, _>>()?;
    let readings = edm_values.iter().map(|&e| EdmReading::of(e)).collect();
    Ok(EdmCurve {
        n,
        norm,
        fractions: fractions.to_vec(),
        k_values,
        edm_values,
        readings,
        angles_by_radius,
    })
}
