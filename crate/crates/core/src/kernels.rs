//! Isotropic and anisotropic Gaussian kernels evaluated on pixel grids.
//!
//! Kernels are evaluated at integer pixel centres inside a square truncation
//! window and normalised to unit mass. A window of half-width `R` around a
//! (possibly fractional) mean `mu` contains every pixel with
//! `|x - mu.x| <= R` and `|y - mu.y| <= R`; this keeps the window exactly
//! symmetric under reflections and quarter turns of the canvas.

use serde::{Deserialize, Serialize};

use crate::annotations::{line_length, LineLabel, Point2};
use crate::error::{Error, Result};

/// Kernel hyperparameters shared by all three labelling schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Spread at line endpoints and for dot labels (pixels).
    pub sigma_basic: f64,
    /// Expanding factor: sigma growth per sampling step away from the nearer endpoint.
    pub a: f64,
    /// Object length over width; fixes the minor-axis spread.
    pub aspect_ratio: f64,
    /// Full width at half maximum in units of sigma.
    pub fwhm_const: f64,
    /// FWHM penaliser controlling the major-axis spread.
    pub alpha: f64,
    /// Truncation window half-width in units of sigma.
    pub trunc_mult: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma_basic: 15.0,
            a: 0.2,
            aspect_ratio: 4.0,
            fwhm_const: 2.355,
            alpha: 4.0,
            trunc_mult: 3.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma_basic", self.sigma_basic),
            ("a", self.a),
            ("aspect_ratio", self.aspect_ratio),
            ("fwhm_const", self.fwhm_const),
            ("alpha", self.alpha),
            ("trunc_mult", self.trunc_mult),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.aspect_ratio < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "aspect_ratio must be >= 1, got {}",
                self.aspect_ratio
            )));
        }
        Ok(())
    }
}

/// A truncated, unit-mass kernel placed on the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPatch {
    /// Image x of the patch's first column.
    pub origin_x: i64,
    /// Image y of the patch's first row.
    pub origin_y: i64,
    pub width: usize,
    pub height: usize,
    /// Row-major values, `values[row * width + col]`.
    pub values: Vec<f64>,
    /// Kernel mean.
    pub mu: Point2,
}

impl KernelPatch {
    pub fn sum(&self) -> f64 {
        crate::numeric::compensated_sum(self.values.iter().copied())
    }

    /// Value at image pixel `(x, y)`; zero outside the patch.
    pub fn get(&self, x: i64, y: i64) -> f64 {
        let (cx, cy) = (x - self.origin_x, y - self.origin_y);
        if cx < 0 || cy < 0 || cx as usize >= self.width || cy as usize >= self.height {
            return 0.0;
        }
        self.values[cy as usize * self.width + cx as usize]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Restricts the patch to a `width x height` image and renormalises it.
    ///
    /// If nothing of the patch survives (or the surviving mass underflows),
    /// the whole unit mass goes to the in-bounds pixel nearest the mean.
    pub fn clipped(&self, width: usize, height: usize) -> KernelPatch {
        let x0 = self.origin_x.max(0);
        let y0 = self.origin_y.max(0);
        let x1 = (self.origin_x + self.width as i64).min(width as i64);
        let y1 = (self.origin_y + self.height as i64).min(height as i64);
        if x1 > x0 && y1 > y0 {
            let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
            let mut values = Vec::with_capacity(w * h);
            for y in y0..y1 {
                let row = (y - self.origin_y) as usize * self.width;
                let start = row + (x0 - self.origin_x) as usize;
                values.extend_from_slice(&self.values[start..start + w]);
            }
            let mut patch = KernelPatch {
                origin_x: x0,
                origin_y: y0,
                width: w,
                height: h,
                values,
                mu: self.mu,
            };
            if patch.normalize() {
                return patch;
            }
        }
        let px = (self.mu.x.round() as i64).clamp(0, width as i64 - 1);
        let py = (self.mu.y.round() as i64).clamp(0, height as i64 - 1);
        KernelPatch {
            origin_x: px,
            origin_y: py,
            width: 1,
            height: 1,
            values: vec![1.0],
            mu: self.mu,
        }
    }

    /// Scales values to unit sum; false if the mass is zero or not finite.
    fn normalize(&mut self) -> bool {
        let total = self.sum();
        if !(total.is_finite() && total > 0.0) {
            return false;
        }
        for v in &mut self.values {
            *v /= total;
        }
        true
    }
}

/// Integer pixel range `[lo, hi]` within `half` of `centre`.
fn window_axis(centre: f64, half: f64) -> (i64, i64) {
    ((centre - half).ceil() as i64, (centre + half).floor() as i64)
}

/// Spread for the `point_index`-th of `n_points` samples along a line.
///
/// Grows linearly with the number of sampling steps to the nearer endpoint.
pub fn line_sigma(point_index: usize, n_points: usize, config: &KernelConfig) -> f64 {
    debug_assert!(point_index < n_points);
    let last = n_points.saturating_sub(1);
    let steps = point_index.min(last.saturating_sub(point_index));
    config.sigma_basic + config.a * steps as f64
}

/// Major and minor spreads of the anisotropic kernel for a line label.
pub fn agk_sigmas(line: &LineLabel, config: &KernelConfig) -> Result<(f64, f64)> {
    let len = line_length(line);
    if len <= 0.0 {
        return Err(Error::ZeroLengthLabel);
    }
    let sigma1 = len / 2.0 * (config.fwhm_const / config.alpha);
    Ok((sigma1, sigma1 / config.aspect_ratio))
}

/// Unit-mass isotropic Gaussian around `mu`.
pub fn isotropic_patch(mu: Point2, sigma: f64, config: &KernelConfig) -> KernelPatch {
    let half = (config.trunc_mult * sigma).ceil();
    let (x0, x1) = window_axis(mu.x, half);
    let (y0, y1) = window_axis(mu.y, half);
    let gx = gaussian_1d(x0, x1, mu.x, sigma);
    let gy = gaussian_1d(y0, y1, mu.y, sigma);
    let mut values = Vec::with_capacity(gx.len() * gy.len());
    for wy in &gy {
        values.extend(gx.iter().map(|wx| wx * wy));
    }
    let mut patch = KernelPatch {
        origin_x: x0,
        origin_y: y0,
        width: gx.len(),
        height: gy.len(),
        values,
        mu,
    };
    if !patch.normalize() {
        return delta_patch(mu);
    }
    patch
}

/// Unnormalised 1-D Gaussian over pixels `lo..=hi`, peak-shifted to avoid underflow.
fn gaussian_1d(lo: i64, hi: i64, mu: f64, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let d2: Vec<f64> = (lo..=hi).map(|p| (p as f64 - mu).powi(2)).collect();
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    d2.into_iter().map(|d| (-(d - min) * inv).exp()).collect()
}

fn delta_patch(mu: Point2) -> KernelPatch {
    KernelPatch {
        origin_x: mu.x.round() as i64,
        origin_y: mu.y.round() as i64,
        width: 1,
        height: 1,
        values: vec![1.0],
        mu,
    }
}

/// Half-width of the anisotropic kernel window.
///
/// The base window is `len x len` for the line the spreads came from (length
/// recovered from `sigma1`); it widens to `trunc_mult * sigma1` when that is
/// larger.
pub fn agk_window_half(sigma1: f64, config: &KernelConfig) -> f64 {
    // tolerate round-off in the length recovered from sigma1
    let len = (2.0 * sigma1 * config.alpha / config.fwhm_const - 1e-9).ceil();
    (len / 2.0).ceil().max((config.trunc_mult * sigma1).ceil())
}

/// Unit-mass anisotropic Gaussian around `mu`, major axis at angle `theta`.
///
/// Pixel offsets are rotated into the kernel frame, so orientation is exact
/// rather than resampled.
pub fn agk_patch(
    mu: Point2,
    sigma1: f64,
    sigma2: f64,
    theta: f64,
    config: &KernelConfig,
) -> KernelPatch {
    debug_assert!(sigma1 >= sigma2 && sigma2 > 0.0);
    let half = agk_window_half(sigma1, config);
    let (x0, x1) = window_axis(mu.x, half);
    let (y0, y1) = window_axis(mu.y, half);
    let (sin, cos) = theta.sin_cos();
    let inv1 = 1.0 / (2.0 * sigma1 * sigma1);
    let inv2 = 1.0 / (2.0 * sigma2 * sigma2);
    let width = (x1 - x0 + 1) as usize;
    let height = (y1 - y0 + 1) as usize;
    let mut q = Vec::with_capacity(width * height);
    for y in y0..=y1 {
        let dy = y as f64 - mu.y;
        for x in x0..=x1 {
            let dx = x as f64 - mu.x;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            q.push(u * u * inv1 + v * v * inv2);
        }
    }
    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
    let mut patch = KernelPatch {
        origin_x: x0,
        origin_y: y0,
        width,
        height,
        values: q.into_iter().map(|e| (-(e - min)).exp()).collect(),
        mu,
    };
    if !patch.normalize() {
        return delta_patch(mu);
    }
    patch
}
