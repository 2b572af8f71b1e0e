//! `eval`, `dedup`, `features` and `count` commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use densitykit::dedup::{builtin_feature_pyramid, deduplicate, DedupOutcome};
use densitykit::evaluation::{evaluate_dataset, EvalRecord, EvalReport};
use densitykit::exec::{with_threads, Execution};
use densitykit::io::{files_with_extension, image_id_of, load_dmap, load_dmap_dir, load_fst5, save_fst5};
use densitykit::{count_from_density, FeatureStack};
use serde::Serialize;

use crate::job::IMAGE_EXTENSIONS;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Scores every predicted map in `pred_dir` against its namesake in `gt_dir`.
pub fn cmd_eval(
    gt_dir: &Path,
    pred_dir: &Path,
    report: Option<&Path>,
    records_csv: Option<&Path>,
    jobs: usize,
) -> Result<(EvalReport, Vec<EvalRecord>)> {
    let gt = load_dmap_dir(gt_dir).with_context(|| format!("reading {}", gt_dir.display()))?;
    let pred = load_dmap_dir(pred_dir).with_context(|| format!("reading {}", pred_dir.display()))?;
    if gt.is_empty() {
        bail!("no .dmap files in {}", gt_dir.display());
    }
    let (rep, records) = with_threads(jobs, || evaluate_dataset(&gt, &pred, Execution::Parallel))?;
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    if let Some(path) = records_csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id", "gt_count", "pred_count", "level"])?;
        for r in &records {
            w.write_record([
                r.image_id.clone(),
                r.gt_count.to_string(),
                r.pred_count.to_string(),
                r.level.as_str().to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok((rep, records))
}

/// Where dedup takes its feature stacks from.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// Precomputed `*.fst5` files.
    Files(PathBuf),
    /// Images run through the built-in pyramid.
    Images(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct DedupReport {
    pub threshold: f64,
    pub total: usize,
    #[serde(flatten)]
    pub outcome: DedupOutcome,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for ext in IMAGE_EXTENSIONS {
        files.extend(files_with_extension(dir, ext)?);
    }
    files.sort();
    Ok(files)
}

fn pyramid_of(path: &Path) -> Result<FeatureStack> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(builtin_feature_pyramid(image_id_of(path), &img)?)
}

/// Loads stacks in file-name order, which is the scan order.
pub fn load_stacks(source: &FeatureSource, jobs: usize) -> Result<Vec<FeatureStack>> {
    let (files, from_images) = match source {
        FeatureSource::Files(dir) => (files_with_extension(dir, "fst5")?, false),
        FeatureSource::Images(dir) => (image_files(dir)?, true),
    };
    let loaded = with_threads(jobs, || {
        Execution::Parallel.map(&files, |p| {
            if from_images {
                pyramid_of(p)
            } else {
                load_fst5(p).with_context(|| format!("reading {}", p.display()))
            }
        })
    });
    loaded.into_iter().collect()
}

pub fn cmd_dedup(source: &FeatureSource, threshold: f64, report: Option<&Path>, jobs: usize) -> Result<DedupReport> {
    let stacks = load_stacks(source, jobs)?;
    let outcome = with_threads(jobs, || deduplicate(&stacks, threshold, Execution::Parallel))?;
    let rep = DedupReport {
        threshold,
        total: stacks.len(),
        outcome,
    };
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    Ok(rep)
}

/// Writes built-in pyramid features for every image in `image_dir`.
pub fn cmd_features(image_dir: &Path, out_dir: &Path, jobs: usize) -> Result<usize> {
    fs::create_dir_all(out_dir)?;
    let stacks = load_stacks(&FeatureSource::Images(image_dir.to_path_buf()), jobs)?;
    for s in &stacks {
        save_fst5(out_dir.join(format!("{}.fst5", s.image_id)), s)?;
    }
    Ok(stacks.len())
}

/// Object count of each DMAP file.
pub fn cmd_count(files: &[PathBuf]) -> Result<Vec<(String, f64)>> {
    files
        .iter()
        .map(|p| {
            let map = load_dmap(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((p.display().to_string(), count_from_density(&map)))
        })
        .collect()
}

/// Formats a count for display.
pub fn format_count(count: f64, round: bool) -> String {
    if round {
        format!("{}", count.round() as i64)
    } else {
        format!("{count:.4}")
    }
}
