//! Density-map generation jobs over whole datasets.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use densitykit::densitymap::density_map_with;
use densitykit::exec::{with_threads, Execution};
use densitykit::io::{files_with_extension, load_annotations, save_dmap, write_pgm16};
use densitykit::{count_from_density, AnnotationSet, KernelConfig, Scheme};
use image::{DynamicImage, Rgba};
use serde::Serialize;

/// Image file extensions recognised in image directories.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Rectangle filled with black before an image is used (e.g. a watermark).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaskRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FromStr for MaskRect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, w, h] = parts.as_slice() else {
            return Err(format!("expected x,y,w,h, got {s:?}"));
        };
        let num = |v: &str| v.parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
        Ok(MaskRect {
            x: num(x)?,
            y: num(y)?,
            w: num(w)?,
            h: num(h)?,
        })
    }
}

impl fmt::Display for MaskRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Fills each rectangle (clipped to the image) with opaque black.
pub fn apply_masks(image: &DynamicImage, masks: &[MaskRect]) -> DynamicImage {
    let mut rgba = image.to_rgba8();
    let (w, h) = rgba.dimensions();
    for m in masks {
        for y in m.y.min(h)..m.y.saturating_add(m.h).min(h) {
            for x in m.x.min(w)..m.x.saturating_add(m.w).min(w) {
                rgba.put_pixel(x, y, Rgba([0, 0, 0, 255]));
            }
        }
    }
    DynamicImage::ImageRgba8(rgba)
}

#[derive(Debug, Clone)]
pub struct JobConfig {
    /// Annotation files, or directories of `*.json` files.
    pub annotation_paths: Vec<PathBuf>,
    /// Source images; required when masks are given.
    pub image_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub scheme: Scheme,
    pub kernel: KernelConfig,
    pub masks: Vec<MaskRect>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Also write a 16-bit PGM preview per map.
    pub write_pgm: bool,
}

impl JobConfig {
    pub fn new(annotation_paths: Vec<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            annotation_paths,
            image_dir: None,
            output_dir: output_dir.into(),
            scheme: Scheme::Agk,
            kernel: KernelConfig::default(),
            masks: Vec::new(),
            jobs: 0,
            write_pgm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.annotation_paths.is_empty() {
            bail!("no annotation inputs given");
        }
        if !self.masks.is_empty() && self.image_dir.is_none() {
            bail!("--mask needs an image directory (--images)");
        }
        if let Some(dir) = &self.image_dir {
            if !dir.is_dir() {
                bail!("image directory {} does not exist", dir.display());
            }
        }
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating output directory {}", self.output_dir.display()))?;
        let probe = tempfile::NamedTempFile::new_in(&self.output_dir)
            .with_context(|| format!("output directory {} is not writable", self.output_dir.display()))?;
        drop(probe);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub labels: usize,
    pub count: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GenerateSummary {
    pub scheme: String,
    pub images: Vec<ImageSummary>,
    /// Per-file or per-image failures; the job still processes everything else.
    pub errors: Vec<String>,
    pub wall_time_s: f64,
}

impl GenerateSummary {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(files_with_extension(p, "json")?);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Finds `<dir>/<id>.<ext>` for a known image extension.
pub fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .flat_map(|ext| [ext.to_string(), ext.to_ascii_uppercase()])
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

fn process_image(set: &AnnotationSet, config: &JobConfig) -> Result<ImageSummary> {
    let map = density_map_with(config.scheme, set, &config.kernel, Execution::Sequential)?;
    let out = &config.output_dir;
    save_dmap(out.join(format!("{}.dmap", set.image_id)), &map)?;
    if config.write_pgm {
        let mut f = std::io::BufWriter::new(fs::File::create(out.join(format!("{}.pgm", set.image_id)))?);
        write_pgm16(&mut f, &map)?;
    }
    if let (false, Some(dir)) = (config.masks.is_empty(), &config.image_dir) {
        let src = find_image(dir, &set.image_id)
            .with_context(|| format!("no image for {:?} in {}", set.image_id, dir.display()))?;
        let img = image::open(&src).with_context(|| format!("reading {}", src.display()))?;
        let masked_dir = out.join("images");
        fs::create_dir_all(&masked_dir)?;
        apply_masks(&img, &config.masks).save(masked_dir.join(format!("{}.png", set.image_id)))?;
    }
    Ok(ImageSummary {
        image_id: set.image_id.clone(),
        labels: set.count(),
        count: count_from_density(&map),
    })
}

/// Writes one `<image_id>.dmap` per annotated image.
///
/// Images are distributed over `jobs` workers; each map is computed
/// sequentially, so output files do not depend on the worker count.
pub fn cmd_generate(config: &JobConfig) -> Result<GenerateSummary> {
    config.validate()?;
    let start = Instant::now();
    let mut summary = GenerateSummary {
        scheme: config.scheme.to_string(),
        ..Default::default()
    };

    let mut sets = Vec::new();
    let mut seen = BTreeSet::new();
    for file in expand_inputs(&config.annotation_paths)? {
        match load_annotations(&file) {
            Ok(loaded) => {
                for set in loaded {
                    if !seen.insert(set.image_id.clone()) {
                        summary
                            .errors
                            .push(format!("{}: duplicate image id {:?}", file.display(), set.image_id));
                        continue;
                    }
                    sets.push(set);
                }
            }
            Err(e) => summary.errors.push(format!("{}: {e}", file.display())),
        }
    }

    let results = with_threads(config.jobs, || {
        Execution::Parallel.map(&sets, |set| process_image(set, config))
    });
    for (set, result) in sets.iter().zip(results) {
        match result {
            Ok(s) => summary.images.push(s),
            Err(e) => summary.errors.push(format!("{}: {e:#}", set.image_id)),
        }
    }
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use image::RgbImage;

    use super::*;

    #[test]
    fn mask_rect_parsing() {
        assert_eq!("1,2,30,40".parse::<MaskRect>().unwrap(), MaskRect { x: 1, y: 2, w: 30, h: 40 });
        assert_eq!(" 0, 0,5 ,5".parse::<MaskRect>().unwrap().w, 5);
        assert!("1,2,3".parse::<MaskRect>().is_err());
        assert!("1,2,3,-4".parse::<MaskRect>().is_err());
    }

    #[test]
    fn masks_fill_black_and_clip() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(10, 10, image::Rgb([200, 100, 50])));
        let masked = apply_masks(&img, &[MaskRect { x: 8, y: 0, w: 5, h: 2 }]).to_rgba8();
        assert_eq!(masked.get_pixel(9, 1).0, [0, 0, 0, 255]);
        assert_eq!(masked.get_pixel(7, 1).0, [200, 100, 50, 255]);
        assert_eq!(masked.get_pixel(9, 2).0, [200, 100, 50, 255]);
    }

    #[test]
    fn masks_need_an_image_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = JobConfig::new(vec![dir.path().into()], dir.path().join("out"));
        cfg.masks.push(MaskRect { x: 0, y: 0, w: 1, h: 1 });
        assert!(cfg.validate().is_err());
    }
}
