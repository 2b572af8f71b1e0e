//! Full-image ground-truth density maps and counting.
//!
//! Every label contributes exactly unit mass: its kernel (or, for line
//! labels, the sum of its per-sample kernels) is clipped to the image and
//! renormalised before it is added to the map. Per-label patches may be
//! computed in parallel; accumulation always runs in label order with
//! per-pixel compensated summation, so the result does not depend on the
//! execution mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::{line_length, sample_points, slope_angle, AnnotationSet, LineLabel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernels::{agk_patch, agk_sigmas, isotropic_patch, line_sigma, KernelConfig, KernelPatch};
use crate::numeric::compensated_sum;

/// Row-major grid of non-negative densities, `values[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Format(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Same map with every value multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

/// Object count of a density map: the sum of all of its values.
pub fn count_from_density(map: &DensityMap) -> f64 {
    compensated_sum(map.values.iter().copied())
}

/// Ground-truth labelling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Isotropic kernel at each label's midpoint.
    Dot,
    /// Isotropic kernels along the segment with position-dependent spread.
    Line,
    /// One anisotropic kernel aligned with the segment.
    #[default]
    Agk,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Dot => "dot",
            Scheme::Line => "line",
            Scheme::Agk => "agk",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(Scheme::Dot),
            "line" => Ok(Scheme::Line),
            "agk" => Ok(Scheme::Agk),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Per-pixel Neumaier accumulator for unit-mass patches.
struct Accumulator {
    width: usize,
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl Accumulator {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            sum: vec![0.0; width * height],
            comp: vec![0.0; width * height],
        }
    }

    /// Adds a patch that already lies inside the image.
    fn add(&mut self, patch: &KernelPatch) {
        for row in 0..patch.height {
            let y = patch.origin_y as usize + row;
            let base = y * self.width + patch.origin_x as usize;
            let src = &patch.values[row * patch.width..(row + 1) * patch.width];
            for (i, &v) in src.iter().enumerate() {
                let s = self.sum[base + i];
                let t = s + v;
                self.comp[base + i] += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
                self.sum[base + i] = t;
            }
        }
    }

    fn finish(self, height: usize) -> DensityMap {
        let values = self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect();
        DensityMap {
            width: self.width,
            height,
            values,
        }
    }
}

/// Labels shorter than this are placed as dots.
pub const MIN_AGK_LENGTH: f64 = 1.0;

fn dot_patch(line: &LineLabel, width: usize, height: usize, config: &KernelConfig) -> KernelPatch {
    isotropic_patch(line.midpoint(), config.sigma_basic, config).clipped(width, height)
}

/// Sum of per-sample isotropic kernels along the segment, as one unit-mass patch.
fn line_patch(line: &LineLabel, width: usize, height: usize, config: &KernelConfig) -> KernelPatch {
    let points = sample_points(line);
    let n = points.len();
    let parts: Vec<KernelPatch> = points
        .iter()
        .enumerate()
        .map(|(i, p)| isotropic_patch(*p, line_sigma(i, n, config), config))
        .collect();
    let x0 = parts.iter().map(|p| p.origin_x).min().unwrap_or(0);
    let y0 = parts.iter().map(|p| p.origin_y).min().unwrap_or(0);
    let x1 = parts.iter().map(|p| p.origin_x + p.width as i64).max().unwrap_or(1);
    let y1 = parts.iter().map(|p| p.origin_y + p.height as i64).max().unwrap_or(1);
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut values = vec![0.0; w * h];
    for part in &parts {
        for row in 0..part.height {
            let base = (part.origin_y - y0) as usize + row;
            let base = base * w + (part.origin_x - x0) as usize;
            let src = &part.values[row * part.width..(row + 1) * part.width];
            for (dst, v) in values[base..base + part.width].iter_mut().zip(src) {
                *dst += v;
            }
        }
    }
    KernelPatch {
        origin_x: x0,
        origin_y: y0,
        width: w,
        height: h,
        values,
        mu: line.midpoint(),
    }
    .clipped(width, height)
}

fn agk_label_patch(line: &LineLabel, width: usize, height: usize, config: &KernelConfig) -> KernelPatch {
    if line_length(line) < MIN_AGK_LENGTH {
        return dot_patch(line, width, height, config);
    }
    let (sigma1, sigma2) = agk_sigmas(line, config).expect("length checked above");
    let theta = slope_angle(line).expect("length checked above");
    agk_patch(line.midpoint(), sigma1, sigma2, theta, config).clipped(width, height)
}

/// Unit-mass contribution of one label under `scheme`, clipped to the image.
pub fn label_patch(
    scheme: Scheme,
    line: &LineLabel,
    width: usize,
    height: usize,
    config: &KernelConfig,
) -> KernelPatch {
    match scheme {
        Scheme::Dot => dot_patch(line, width, height, config),
        Scheme::Line => line_patch(line, width, height, config),
        Scheme::Agk => agk_label_patch(line, width, height, config),
    }
}

/// Density map for one image, computing label patches under `exec`.
pub fn density_map_with(
    scheme: Scheme,
    ann: &AnnotationSet,
    config: &KernelConfig,
    exec: Execution,
) -> Result<DensityMap> {
    config.validate()?;
    ann.validate()?;
    let (w, h) = (ann.width as usize, ann.height as usize);
    let patches = exec.map(&ann.labels, |l| label_patch(scheme, l, w, h, config));
    let mut acc = Accumulator::new(w, h);
    for p in &patches {
        acc.add(p);
    }
    Ok(acc.finish(h))
}

pub fn density_map(scheme: Scheme, ann: &AnnotationSet, config: &KernelConfig) -> Result<DensityMap> {
    density_map_with(scheme, ann, config, Execution::default())
}

/// Isotropic kernel of spread `sigma_basic` at every label midpoint.
pub fn dot_density_map(ann: &AnnotationSet, config: &KernelConfig) -> Result<DensityMap> {
    density_map(Scheme::Dot, ann, config)
}

/// Per-label sums of sampled isotropic kernels, each normalised to one count.
pub fn line_density_map(ann: &AnnotationSet, config: &KernelConfig) -> Result<DensityMap> {
    density_map(Scheme::Line, ann, config)
}

/// One oriented anisotropic kernel per label; sub-pixel labels fall back to dots.
pub fn agk_density_map(ann: &AnnotationSet, config: &KernelConfig) -> Result<DensityMap> {
    density_map(Scheme::Agk, ann, config)
}

/// Maps for a batch of images, images processed under `exec`.
pub fn density_maps(
    scheme: Scheme,
    anns: &[AnnotationSet],
    config: &KernelConfig,
    exec: Execution,
) -> Vec<Result<DensityMap>> {
    exec.map(anns, |ann| density_map_with(scheme, ann, config, Execution::Sequential))
}
