//! File formats: annotation JSON, `DMAP` density maps, `FST5` feature
//! stacks, 16-bit PGM previews and 8-bit heatmaps.
//!
//! Binary formats are little-endian throughout.
//!
//! ```text
//! DMAP: "DMAP" u32 width, u32 height, width*height f32 (row-major, top-left origin)
//! FST5: "FST5" u32 layers (= 5), then per layer u32 C, H, W and C*H*W f32
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::annotations::AnnotationSet;
use crate::dedup::{FeatureStack, FeatureTensor, LAYERS};
use crate::densitymap::DensityMap;
use crate::error::{Error, Result};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const FST5_MAGIC: &[u8; 4] = b"FST5";

/// Largest tensor or map we are willing to allocate from a header.
const MAX_ELEMENTS: u64 = 1 << 31;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn checked_len(dims: &[u32]) -> Result<usize> {
    let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)));
    match n {
        Some(n) if n <= MAX_ELEMENTS => Ok(n as usize),
        _ => Err(Error::Format(format!("implausible dimensions {dims:?}"))),
    }
}

pub fn write_dmap<W: Write>(w: &mut W, map: &DensityMap) -> Result<()> {
    let (width, height) = (u32::try_from(map.width), u32::try_from(map.height));
    let (Ok(width), Ok(height)) = (width, height) else {
        return Err(Error::Format("map too large for DMAP".into()));
    };
    w.write_all(DMAP_MAGIC)?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    let mut buf = Vec::with_capacity(map.values.len() * 4);
    for &v in &map.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dmap<R: Read>(r: &mut R) -> Result<DensityMap> {
    read_magic(r, DMAP_MAGIC)?;
    let width = read_u32(r)?;
    let height = read_u32(r)?;
    let n = checked_len(&[width, height])?;
    let values = read_f32s(r, n)?.into_iter().map(f64::from).collect();
    DensityMap::from_values(width as usize, height as usize, values)
}

pub fn save_dmap(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dmap(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn load_dmap(path: impl AsRef<Path>) -> Result<DensityMap> {
    read_dmap(&mut BufReader::new(File::open(path)?))
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn files_with_extension(dir: impl AsRef<Path>, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// File stem as an image id.
pub fn image_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Every `*.dmap` file in `dir`, keyed by file stem.
pub fn load_dmap_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, DensityMap>> {
    files_with_extension(dir, "dmap")?
        .into_iter()
        .map(|p| Ok((image_id_of(&p), load_dmap(&p)?)))
        .collect()
}

pub fn write_fst5<W: Write>(w: &mut W, stack: &FeatureStack) -> Result<()> {
    w.write_all(FST5_MAGIC)?;
    w.write_all(&(stack.layers().len() as u32).to_le_bytes())?;
    for layer in stack.layers() {
        for d in [layer.channels, layer.height, layer.width] {
            let d = u32::try_from(d).map_err(|_| Error::Format("layer too large for FST5".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(layer.len() * 4);
        for v in &layer.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_fst5<R: Read>(r: &mut R, image_id: impl Into<String>) -> Result<FeatureStack> {
    read_magic(r, FST5_MAGIC)?;
    let count = read_u32(r)?;
    if count as usize != LAYERS {
        return Err(Error::Format(format!("FST5 layer count must be {LAYERS}, got {count}")));
    }
    let mut layers = Vec::with_capacity(LAYERS);
    for _ in 0..LAYERS {
        let (c, h, w) = (read_u32(r)?, read_u32(r)?, read_u32(r)?);
        let n = checked_len(&[c, h, w])?;
        layers.push(FeatureTensor::new(c as usize, h as usize, w as usize, read_f32s(r, n)?)?);
    }
    FeatureStack::new(image_id, layers)
}

pub fn save_fst5(path: impl AsRef<Path>, stack: &FeatureStack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fst5(&mut w, stack)?;
    w.flush()?;
    Ok(())
}

/// Reads a feature stack; the image id is the file stem.
pub fn load_fst5(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    read_fst5(&mut BufReader::new(File::open(path)?), image_id_of(path))
}

/// Binary 16-bit PGM, values scaled so the map maximum is 65535.
pub fn write_pgm16<W: Write>(w: &mut W, map: &DensityMap) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", map.width, map.height)?;
    let max = map.max_value();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut buf = Vec::with_capacity(map.values.len() * 2);
    for &v in &map.values {
        let q = (v.max(0.0) * scale).round().min(65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Downsampled 8-bit view of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Source pixels per heatmap pixel along each axis.
    pub factor: usize,
    pub pixels: Vec<u8>,
}

/// Box-sums `map` so that neither side exceeds `max_side`, then scales the
/// maximum to 255.
pub fn heatmap_u8(map: &DensityMap, max_side: usize) -> Heatmap {
    let max_side = max_side.max(1);
    let factor = map.width.max(map.height).div_ceil(max_side).max(1);
    let (w, h) = (map.width.div_ceil(factor), map.height.div_ceil(factor));
    let mut sums = vec![0.0f64; w * h];
    for y in 0..map.height {
        for x in 0..map.width {
            sums[(y / factor) * w + x / factor] += map.get(x, y);
        }
    }
    let max = sums.iter().copied().fold(0.0, f64::max);
    let pixels = sums
        .iter()
        .map(|&s| if max > 0.0 { (s.max(0.0) / max * 255.0).round() as u8 } else { 0 })
        .collect();
    Heatmap {
        width: w,
        height: h,
        factor,
        pixels,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotationDoc {
    One(AnnotationSet),
    Many(Vec<AnnotationSet>),
}

/// Parses one annotation object or an array of them, clamping labels into
/// the image bounds (with a warning) as they are loaded.
pub fn parse_annotations(json: &str) -> Result<Vec<AnnotationSet>> {
    // try the single-object form first for its sharper error messages
    let mut sets = match serde_json::from_str::<AnnotationSet>(json) {
        Ok(set) => vec![set],
        Err(single_err) => match serde_json::from_str::<AnnotationDoc>(json) {
            Ok(AnnotationDoc::Many(sets)) => sets,
            Ok(AnnotationDoc::One(set)) => vec![set],
            Err(_) if json.trim_start().starts_with('[') => {
                serde_json::from_str::<Vec<AnnotationSet>>(json)?
            }
            Err(_) => return Err(single_err.into()),
        },
    };
    for set in &mut sets {
        set.clamp_to_bounds();
    }
    Ok(sets)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    parse_annotations(&fs::read_to_string(path)?)
}
