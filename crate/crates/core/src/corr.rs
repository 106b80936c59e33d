//! Pearson correlation of log-domain variable pairs under joint size and
//! duration thresholds.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::metrics::LogLogPoint;

pub const KILOBYTE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorrError {
    #[error("insufficient data: need at least 2 pairs, got {0}")]
    InsufficientData(usize),
    #[error("degenerate marginal: zero variance")]
    DegenerateMarginal,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty population")]
    EmptyPopulation,
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("unknown variable pair `{0}` (expected size-duration, size-rate or duration-rate)")]
    UnknownPair(String),
}

/// Two-pass mean-centred Pearson coefficient over a re-iterable sequence.
/// Summation follows iteration order, so results are reproducible.
fn pearson_two_pass<I, F>(make_iter: F) -> Result<f64, CorrError>
where
    F: Fn() -> I,
    I: Iterator<Item = (f64, f64)>,
{
    let mut n = 0usize;
    let (mut sum_x, mut sum_y) = (0.0, 0.0);
    let mut first: Option<(f64, f64)> = None;
    let (mut x_varies, mut y_varies) = (false, false);
    for (x, y) in make_iter() {
        n += 1;
        sum_x += x;
        sum_y += y;
        match first {
            None => first = Some((x, y)),
            Some((x0, y0)) => {
                x_varies |= x != x0;
                y_varies |= y != y0;
            }
        }
    }
    if n < 2 {
        return Err(CorrError::InsufficientData(n));
    }
    if !(x_varies && y_varies) {
        return Err(CorrError::DegenerateMarginal);
    }
    let mean_x = sum_x / n as f64;
    let mean_y = sum_y / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in make_iter() {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(CorrError::DegenerateMarginal);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Product-moment correlation coefficient of two equal-length samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrError> {
    if xs.len() != ys.len() {
        return Err(CorrError::LengthMismatch(xs.len(), ys.len()));
    }
    pearson_two_pass(|| xs.iter().copied().zip(ys.iter().copied()))
}

/// Which two log-domain fields feed the coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarPair {
    SizeDuration,
    SizeRate,
    DurationRate,
}

impl VarPair {
    pub const ALL: [VarPair; 3] = [
        VarPair::SizeDuration,
        VarPair::SizeRate,
        VarPair::DurationRate,
    ];

    pub fn select(self, p: &LogLogPoint) -> (f64, f64) {
        match self {
            VarPair::SizeDuration => (p.log_size, p.log_duration),
            VarPair::SizeRate => (p.log_size, p.log_rate),
            VarPair::DurationRate => (p.log_duration, p.log_rate),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarPair::SizeDuration => "size-duration",
            VarPair::SizeRate => "size-rate",
            VarPair::DurationRate => "duration-rate",
        }
    }

    /// Axis labels (x, y).
    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            VarPair::SizeDuration => ("log10_size", "log10_duration"),
            VarPair::SizeRate => ("log10_size", "log10_rate"),
            VarPair::DurationRate => ("log10_duration", "log10_rate"),
        }
    }
}

impl fmt::Display for VarPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarPair {
    type Err = CorrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VarPair::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CorrError::UnknownPair(s.to_string()))
    }
}

impl Serialize for VarPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// Lower bounds on raw size and duration (strict `>`; 0 disables the bound).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdGrid {
    size_thresholds_bytes: Vec<f64>,
    duration_thresholds_s: Vec<f64>,
}

fn validate_axis(name: &str, values: &[f64]) -> Result<(), CorrError> {
    if values.is_empty() {
        return Err(CorrError::InvalidGrid(format!(
            "{name} thresholds are empty"
        )));
    }
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(CorrError::InvalidGrid(format!(
            "{name} threshold {bad} must be finite and non-negative"
        )));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CorrError::InvalidGrid(format!(
            "{name} thresholds must be strictly ascending"
        )));
    }
    Ok(())
}

impl ThresholdGrid {
    pub fn new(
        size_thresholds_bytes: Vec<f64>,
        duration_thresholds_s: Vec<f64>,
    ) -> Result<Self, CorrError> {
        validate_axis("size", &size_thresholds_bytes)?;
        validate_axis("duration", &duration_thresholds_s)?;
        Ok(ThresholdGrid {
            size_thresholds_bytes,
            duration_thresholds_s,
        })
    }

    pub fn single(size_min_bytes: f64, duration_min_s: f64) -> Result<Self, CorrError> {
        Self::new(vec![size_min_bytes], vec![duration_min_s])
    }

    pub fn size_thresholds_bytes(&self) -> &[f64] {
        &self.size_thresholds_bytes
    }

    pub fn duration_thresholds_s(&self) -> &[f64] {
        &self.duration_thresholds_s
    }
}

impl Default for ThresholdGrid {
    /// Durations {0, 0.01, 0.1, 1, 5, 100} s and sizes {0, 1, 10, 100} kB.
    fn default() -> Self {
        ThresholdGrid {
            size_thresholds_bytes: vec![0.0, KILOBYTE, 10.0 * KILOBYTE, 100.0 * KILOBYTE],
            duration_thresholds_s: vec![0.0, 0.01, 0.1, 1.0, 5.0, 100.0],
        }
    }
}

/// Log10 lower bound for a raw threshold; 0 admits everything.
fn log_bound(threshold: f64) -> f64 {
    if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else {
        threshold.log10()
    }
}

#[derive(Debug, Clone, Copy)]
struct LogFilter {
    log_size_min: f64,
    log_duration_min: f64,
}

impl LogFilter {
    fn new(size_min_bytes: f64, duration_min_s: f64) -> Self {
        LogFilter {
            log_size_min: log_bound(size_min_bytes),
            log_duration_min: log_bound(duration_min_s),
        }
    }

    fn admits(&self, p: &LogLogPoint) -> bool {
        p.log_size > self.log_size_min && p.log_duration > self.log_duration_min
    }
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Points with raw size > `size_min_bytes` and raw duration > `duration_min_s`,
/// plus their share of the input in percent.
pub fn apply_thresholds(
    points: &[LogLogPoint],
    size_min_bytes: f64,
    duration_min_s: f64,
) -> (Vec<LogLogPoint>, f64) {
    let filter = LogFilter::new(size_min_bytes, duration_min_s);
    let subset: Vec<LogLogPoint> = points
        .iter()
        .filter(|p| filter.admits(p))
        .copied()
        .collect();
    let pct = percent(subset.len(), points.len());
    (subset, pct)
}

fn serialize_coefficient<S: Serializer>(c: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match c {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str("NA"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrCell {
    pub duration_min_s: f64,
    pub size_min_bytes: f64,
    pub pair: VarPair,
    pub n: usize,
    pub population_pct: f64,
    /// `None` when n < 2 or a marginal is constant; written as `NA`.
    #[serde(serialize_with = "serialize_coefficient")]
    pub coefficient: Option<f64>,
}

/// Coefficients over a threshold grid: rows are duration thresholds, columns
/// size thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrGrid {
    pub grid: ThresholdGrid,
    pub pair: VarPair,
    pub cells: Vec<Vec<CorrCell>>,
    pub total_n: usize,
}

fn evaluate_cell(
    points: &[LogLogPoint],
    size_min: f64,
    duration_min: f64,
    pair: VarPair,
) -> CorrCell {
    let filter = LogFilter::new(size_min, duration_min);
    let selected = || {
        points
            .iter()
            .filter(move |p| filter.admits(p))
            .map(move |p| pair.select(p))
    };
    let n = selected().count();
    let coefficient = pearson_two_pass(selected).ok();
    CorrCell {
        duration_min_s: duration_min,
        size_min_bytes: size_min,
        pair,
        n,
        population_pct: percent(n, points.len()),
        coefficient,
    }
}

/// Evaluates every (duration, size) cell of `grid`. Cells are computed in
/// parallel; each one sums in input order, so results do not depend on the
/// thread count.
pub fn corr_grid(
    points: &[LogLogPoint],
    grid: &ThresholdGrid,
    pair: VarPair,
) -> Result<CorrGrid, CorrError> {
    if points.is_empty() {
        return Err(CorrError::EmptyPopulation);
    }
    let sizes = grid.size_thresholds_bytes();
    let durations = grid.duration_thresholds_s();
    let coords: Vec<(usize, usize)> = (0..durations.len())
        .flat_map(|i| (0..sizes.len()).map(move |j| (i, j)))
        .collect();
    let flat: Vec<CorrCell> = coords
        .par_iter()
        .map(|&(i, j)| evaluate_cell(points, sizes[j], durations[i], pair))
        .collect();
    let cells = flat.chunks(sizes.len()).map(<[CorrCell]>::to_vec).collect();
    Ok(CorrGrid {
        grid: grid.clone(),
        pair,
        cells,
        total_n: points.len(),
    })
}

impl CorrGrid {
    pub fn cell(&self, duration_idx: usize, size_idx: usize) -> &CorrCell {
        &self.cells[duration_idx][size_idx]
    }

    /// Writes the grid as TSV: a header of size thresholds, then one row per
    /// duration threshold with `coefficient|pct|n` cells.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "duration_s\\size_bytes")?;
        for s in self.grid.size_thresholds_bytes() {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
        for row in &self.cells {
            write!(w, "{}", row[0].duration_min_s)?;
            for cell in row {
                match cell.coefficient {
                    Some(c) => write!(w, "\t{c:.6}")?,
                    None => write!(w, "\tNA")?,
                }
                write!(w, "|{:.6}|{}", cell.population_pct, cell.n)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
