//! Melodic contour analysis in cosine-component space.
//!
//! A 16-step pitch series is mapped through the orthonormal DCT-II. The mean
//! (index 0) carries the register and the high indices carry note-to-note
//! detail; the contour of a melody is the three amplitudes at indices 1..=3.

use std::f64::consts::PI;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of samples in every pitch series.
pub const SERIES_LEN: usize = 16;

/// Number of retained contour components.
pub const NUM_COMPONENTS: usize = 3;

/// Row `k` holds the orthonormal DCT-II basis vector of frequency `k`.
static BASIS: LazyLock<[[f64; SERIES_LEN]; SERIES_LEN]> = LazyLock::new(|| {
    let n = SERIES_LEN as f64;
    let mut basis = [[0.0; SERIES_LEN]; SERIES_LEN];
    for (k, row) in basis.iter_mut().enumerate() {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
        }
    }
    basis
});

/// The 16x16 forward transform matrix.
pub fn dct_matrix() -> &'static [[f64; SERIES_LEN]; SERIES_LEN] {
    &BASIS
}

/// A 16-sample pitch signal in MIDI semitones. Samples may be fractional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchSeries([f64; SERIES_LEN]);

impl PitchSeries {
    pub fn new(values: [f64; SERIES_LEN]) -> Result<Self> {
        check_finite(&values)?;
        Ok(PitchSeries(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Ok(PitchSeries(to_array(values)?))
    }

    pub fn values(&self) -> &[f64; SERIES_LEN] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / SERIES_LEN as f64
    }
}

/// Orthonormal DCT amplitudes at indices 1, 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourComponents([f64; NUM_COMPONENTS]);

impl ContourComponents {
    pub fn new(values: [f64; NUM_COMPONENTS]) -> Result<Self> {
        check_finite(&values)?;
        Ok(ContourComponents(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let values: [f64; NUM_COMPONENTS] = values.try_into().map_err(|_| {
            Error::InvalidInput(format!(
                "expected {NUM_COMPONENTS} components, got {}",
                values.len()
            ))
        })?;
        Self::new(values)
    }

    pub fn zero() -> Self {
        ContourComponents([0.0; NUM_COMPONENTS])
    }

    pub fn values(&self) -> &[f64; NUM_COMPONENTS] {
        &self.0
    }
}

/// A freehand stroke on a canvas whose y axis grows downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnStroke {
    pub points: Vec<(f64, f64)>,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub pitch_low: f64,
    pub pitch_high: f64,
}

impl DrawnStroke {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidStroke(format!(
                "need at least 2 points, got {}",
                self.points.len()
            )));
        }
        if self
            .points
            .iter()
            .any(|&(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::InvalidStroke("non-finite point".into()));
        }
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0)
            || !self.canvas_width.is_finite()
            || !self.canvas_height.is_finite()
        {
            return Err(Error::InvalidStroke(format!(
                "canvas must have positive size, got {}x{}",
                self.canvas_width, self.canvas_height
            )));
        }
        if !self.pitch_low.is_finite()
            || !self.pitch_high.is_finite()
            || self.pitch_low >= self.pitch_high
        {
            return Err(Error::InvalidStroke(format!(
                "pitch range {}..{} is empty",
                self.pitch_low, self.pitch_high
            )));
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "value at index {i} is not finite ({})",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn to_array(values: &[f64]) -> Result<[f64; SERIES_LEN]> {
    let arr: [f64; SERIES_LEN] = values.try_into().map_err(|_| {
        Error::InvalidInput(format!(
            "expected {SERIES_LEN} samples, got {}",
            values.len()
        ))
    })?;
    check_finite(&arr)?;
    Ok(arr)
}

/// Orthonormal DCT-II of a 16-sample signal.
pub fn dct_forward(x: &[f64]) -> Result<[f64; SERIES_LEN]> {
    let x = to_array(x)?;
    let mut out = [0.0; SERIES_LEN];
    for (o, row) in out.iter_mut().zip(BASIS.iter()) {
        *o = row.iter().zip(&x).map(|(b, v)| b * v).sum();
    }
    Ok(out)
}

/// Orthonormal DCT-III, the exact inverse of [`dct_forward`].
pub fn dct_inverse(coeffs: &[f64]) -> Result<PitchSeries> {
    let coeffs = to_array(coeffs)?;
    let mut out = [0.0; SERIES_LEN];
    for (c, row) in coeffs.iter().zip(BASIS.iter()) {
        for (o, b) in out.iter_mut().zip(row) {
            *o += c * b;
        }
    }
    PitchSeries::new(out)
}

pub fn extract_components(x: &PitchSeries) -> ContourComponents {
    let coeffs = dct_forward(x.values()).expect("PitchSeries is always finite");
    ContourComponents([coeffs[1], coeffs[2], coeffs[3]])
}

/// Renders components as a zero-mean 16-sample trend.
pub fn components_to_curve(c: &ContourComponents) -> PitchSeries {
    let mut coeffs = [0.0; SERIES_LEN];
    coeffs[1..=NUM_COMPONENTS].copy_from_slice(c.values());
    dct_inverse(&coeffs).expect("finite components give a finite curve")
}

/// Samples a stroke at the centres of 16 equal-width columns and maps canvas
/// height onto the pitch range (bottom = `pitch_low`, top = `pitch_high`).
///
/// Where the stroke passes over a column more than once, the segment drawn
/// last decides its height. Columns outside the stroke's horizontal extent
/// take the height at the nearest end of that extent.
pub fn resample_stroke(s: &DrawnStroke) -> Result<PitchSeries> {
    s.validate()?;
    let clamp = |(x, y): (f64, f64)| (x.clamp(0.0, s.canvas_width), y.clamp(0.0, s.canvas_height));
    let points: Vec<(f64, f64)> = s.points.iter().copied().map(clamp).collect();

    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);

    let height_at = |x: f64| -> f64 {
        let mut y = None;
        for seg in points.windows(2) {
            if let Some(v) = segment_height(seg[0], seg[1], x) {
                y = Some(v);
            }
        }
        y.unwrap_or(points[points.len() - 1].1)
    };

    let left = height_at(x_min);
    let right = height_at(x_max);
    let bin = s.canvas_width / SERIES_LEN as f64;
    let span = s.pitch_high - s.pitch_low;
    let mut out = [0.0; SERIES_LEN];
    for (i, o) in out.iter_mut().enumerate() {
        let x = (i as f64 + 0.5) * bin;
        let y = if x <= x_min {
            left
        } else if x >= x_max {
            right
        } else {
            height_at(x)
        };
        *o = s.pitch_low + (1.0 - y / s.canvas_height) * span;
    }
    PitchSeries::new(out)
}

/// Height of segment `a`-`b` at `x`, if the segment spans `x`.
fn segment_height(a: (f64, f64), b: (f64, f64), x: f64) -> Option<f64> {
    let (lo, hi) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    if x < lo.0 || x > hi.0 {
        return None;
    }
    if hi.0 == lo.0 {
        return Some(b.1);
    }
    let t = (x - lo.0) / (hi.0 - lo.0);
    Some(lo.1 + t * (hi.1 - lo.1))
}

/// Mean squared difference over the three components.
pub fn component_mse(a: &ContourComponents, b: &ContourComponents) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / NUM_COMPONENTS as f64
}

/// One point of the fit-vs-component-count curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub k: usize,
    pub rmse: f64,
}

/// RMSE of reconstructing `x` from its mean plus components `1..=k`, for
/// every `k` in `1..=k_max`.
pub fn fit_vs_k(x: &PitchSeries, k_max: usize) -> Result<Vec<FitPoint>> {
    if !(1..SERIES_LEN).contains(&k_max) {
        return Err(Error::InvalidArgument(format!(
            "k_max must be in 1..={}, got {k_max}",
            SERIES_LEN - 1
        )));
    }
    let coeffs = dct_forward(x.values())?;
    let mut fit = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut kept = [0.0; SERIES_LEN];
        kept[..=k].copy_from_slice(&coeffs[..=k]);
        let recon = dct_inverse(&kept)?;
        let sse: f64 = recon
            .values()
            .iter()
            .zip(x.values())
            .map(|(r, v)| (r - v) * (r - v))
            .sum();
        fit.push(FitPoint {
            k,
            rmse: (sse / SERIES_LEN as f64).sqrt(),
        });
    }
    // Discarded energy shrinks with k; clamp away last-ulp wobble.
    for i in 1..fit.len() {
        if fit[i].rmse > fit[i - 1].rmse {
            fit[i].rmse = fit[i - 1].rmse;
        }
    }
    Ok(fit)
}

/// Pearson correlation of two series; 0 when either is constant.
pub fn correlation(a: &PitchSeries, b: &PitchSeries) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if denom <= 1e-12 {
        0.0
    } else {
        sab / denom
    }
}
