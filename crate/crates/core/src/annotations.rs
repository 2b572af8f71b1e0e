//! Line-segment labels and their geometry.
//!
//! Each annotated object is a straight segment drawn from tail to head.
//! Endpoint order carries no meaning downstream: midpoints, sample sets and
//! angles are all invariant under swapping the endpoints.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in pixel coordinates (origin top-left, x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One annotated object, marked by the two ends of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "LabelJson", into = "LabelJson")]
pub struct LineLabel {
    pub a: Point2,
    pub b: Point2,
}

#[derive(Serialize, Deserialize)]
struct LabelJson {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl From<LabelJson> for LineLabel {
    fn from(l: LabelJson) -> Self {
        LineLabel::new(Point2::new(l.x1, l.y1), Point2::new(l.x2, l.y2))
    }
}

impl From<LineLabel> for LabelJson {
    fn from(l: LineLabel) -> Self {
        LabelJson {
            x1: l.a.x,
            y1: l.a.y,
            x2: l.b.x,
            y2: l.b.y,
        }
    }
}

impl LineLabel {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub const fn from_coords(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(Point2::new(x1, y1), Point2::new(x2, y2))
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.b, self.a)
    }

    /// True when both endpoints coincide.
    pub fn is_degenerate(&self) -> bool {
        self.a == self.b
    }

    pub fn midpoint(&self) -> Point2 {
        midpoint(self)
    }

    pub fn length(&self) -> f64 {
        line_length(self)
    }
}

/// Centre of the segment; used as the dot label for the same object.
pub fn midpoint(line: &LineLabel) -> Point2 {
    Point2::new((line.a.x + line.b.x) / 2.0, (line.a.y + line.b.y) / 2.0)
}

/// Number of evenly spaced samples taken along a segment.
///
/// One sample per pixel step along the dominant axis, endpoints included.
pub fn sample_count(line: &LineLabel) -> usize {
    let extent = (line.b.x - line.a.x).abs().max((line.b.y - line.a.y).abs());
    extent.ceil() as usize + 1
}

/// Evenly spaced points from `a` to `b` inclusive.
pub fn sample_points(line: &LineLabel) -> Vec<Point2> {
    let n = sample_count(line);
    if n == 1 {
        return vec![line.a];
    }
    let last = (n - 1) as f64;
    let (dx, dy) = (line.b.x - line.a.x, line.b.y - line.a.y);
    (0..n)
        .map(|k| {
            if k == n - 1 {
                line.b
            } else {
                let t = k as f64 / last;
                Point2::new(line.a.x + t * dx, line.a.y + t * dy)
            }
        })
        .collect()
}

pub fn line_length(line: &LineLabel) -> f64 {
    line.a.distance(&line.b)
}

/// Orientation of the undirected segment, in `[-pi/2, pi/2)` from the +x axis.
pub fn slope_angle(line: &LineLabel) -> Result<f64> {
    if line.is_degenerate() {
        return Err(Error::ZeroLengthLabel);
    }
    let mut theta = (line.b.y - line.a.y).atan2(line.b.x - line.a.x);
    if theta >= FRAC_PI_2 {
        theta -= PI;
    } else if theta < -FRAC_PI_2 {
        theta += PI;
    }
    // atan2 can land on pi/2 exactly after the shift when rounding
    if theta >= FRAC_PI_2 {
        theta = -FRAC_PI_2;
    }
    Ok(theta)
}

/// Labels for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationJson")]
pub struct AnnotationSet {
    #[serde(rename = "image")]
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<LineLabel>,
}

#[derive(Deserialize)]
struct AnnotationJson {
    image: String,
    width: u32,
    height: u32,
    #[serde(default)]
    labels: Vec<LineLabel>,
}

impl TryFrom<AnnotationJson> for AnnotationSet {
    type Error = Error;

    fn try_from(raw: AnnotationJson) -> Result<Self> {
        let set = AnnotationSet {
            image_id: raw.image,
            width: raw.width,
            height: raw.height,
            labels: raw.labels,
        };
        set.validate()?;
        Ok(set)
    }
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, labels: Vec<LineLabel>) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            labels,
        }
    }

    /// Ground-truth object count: one per label.
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidAnnotation(format!(
                "image {:?} has non-positive dimensions {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        if let Some(i) = self
            .labels
            .iter()
            .position(|l| !l.a.is_finite() || !l.b.is_finite())
        {
            return Err(Error::InvalidAnnotation(format!(
                "image {:?} label {i} has non-finite coordinates",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Clamps every endpoint onto the pixel-centre grid `[0, w-1] x [0, h-1]`.
    ///
    /// Returns the number of labels that were moved.
    pub fn clamp_to_bounds(&mut self) -> usize {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let clamp = |p: &mut Point2| {
            let q = Point2::new(p.x.clamp(0.0, max_x), p.y.clamp(0.0, max_y));
            let moved = q != *p;
            *p = q;
            moved
        };
        let mut moved = 0;
        for (i, label) in self.labels.iter_mut().enumerate() {
            let ma = clamp(&mut label.a);
            let mb = clamp(&mut label.b);
            if ma || mb {
                log::warn!(
                    "image {:?}: label {i} extends past the {}x{} image; clamped",
                    self.image_id,
                    self.width,
                    self.height
                );
                moved += 1;
            }
        }
        moved
    }
}
