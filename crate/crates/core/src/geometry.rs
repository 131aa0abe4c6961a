//! Box geometry and colour appearance.
//!
//! Boxes are corner-format pixel rectangles. Histograms are raw luminance
//! counts; the Bhattacharyya similarity normalises each histogram by its own
//! mass, so no separate normalisation step exists.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default histogram bin count.
pub const DEFAULT_BINS: usize = 256;

/// Radicands of the similarity square root above this negative value are
/// treated as rounding residue and clamped to zero.
const RADICAND_TOLERANCE: f64 = -1e-9;

/// Axis-aligned pixel rectangle `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x_min < 0.0 || y_min < 0.0 {
            return Err(invalid("coordinates must be non-negative"));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid("box must have positive area"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from center and size.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Area of the intersection with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn union_area(&self, other: &BoundingBox) -> f64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Smallest box containing both.
    pub fn union_box(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Clips to `[0, width] x [0, height]`, returning `None` if nothing
    /// remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let x_min = self.x_min.clamp(0.0, width);
        let y_min = self.y_min.clamp(0.0, height);
        let x_max = self.x_max.clamp(0.0, width);
        let y_max = self.y_max.clamp(0.0, height);
        BoundingBox::new(x_min, y_min, x_max, y_max).ok()
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Mean absolute corner-coordinate difference, with x normalised by frame
/// width and y by frame height.
pub fn mean_corner_distance(d: &BoundingBox, t: &BoundingBox, frame_w: f64, frame_h: f64) -> f64 {
    let dx = (d.x_min - t.x_min).abs() / frame_w + (d.x_max - t.x_max).abs() / frame_w;
    let dy = (d.y_min - t.y_min).abs() / frame_h + (d.y_max - t.y_max).abs() / frame_h;
    (dx + dy) / 4.0
}

/// Non-negative bin counts over luminance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ColourHistogram {
    bins: Vec<f64>,
}

impl ColourHistogram {
    pub fn new(bins: Vec<f64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidHistogram("no bins".into()));
        }
        if let Some(v) = bins.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidHistogram(format!(
                "bin value {v} is negative or not finite"
            )));
        }
        if bins.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidHistogram("all bins are zero".into()));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for ColourHistogram {
    type Error = Error;

    fn try_from(bins: Vec<f64>) -> Result<Self> {
        ColourHistogram::new(bins)
    }
}

impl From<ColourHistogram> for Vec<f64> {
    fn from(h: ColourHistogram) -> Self {
        h.bins
    }
}

/// Bhattacharyya-based similarity: 0 for identical distributions, 1 for
/// disjoint support.
///
/// The normaliser `sqrt(mean(g) * mean(h) * N^2)` equals
/// `sqrt(sum(g) * sum(h))`, which makes the result independent of the scale
/// of either histogram.
pub fn bhattacharyya_similarity(g: &ColourHistogram, h: &ColourHistogram) -> Result<f64> {
    if g.len() != h.len() {
        return Err(Error::BinMismatch {
            left: g.len(),
            right: h.len(),
        });
    }
    let n = g.len() as f64;
    let g_mean = g.total() / n;
    let h_mean = h.total() / n;
    let coefficient: f64 = g
        .bins
        .iter()
        .zip(&h.bins)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    let radicand = 1.0 - coefficient / (g_mean * h_mean * n * n).sqrt();
    if radicand < RADICAND_TOLERANCE {
        return Err(Error::Invariant(format!(
            "negative Bhattacharyya radicand {radicand}"
        )));
    }
    Ok(radicand.clamp(0.0, 1.0).sqrt())
}

/// Rec. 601 luma of an 8-bit RGB pixel, rounded to the nearest level.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Luminance histogram of the pixels covered by `bb`, clipped to the image.
///
/// A pixel `(px, py)` is covered when its unit cell `[px, px+1) x [py, py+1)`
/// intersects the box interior, so integer boxes cover exactly
/// `width * height` pixels.
pub fn histogram_from_region(
    img: &RgbImage,
    bb: &BoundingBox,
    n_bins: usize,
) -> Result<ColourHistogram> {
    if n_bins == 0 || n_bins > 256 {
        return Err(Error::InvalidHistogram(format!(
            "bin count {n_bins} outside 1..=256"
        )));
    }
    let (w, h) = img.dimensions();
    let x0 = bb.x_min.floor().max(0.0) as u32;
    let y0 = bb.y_min.floor().max(0.0) as u32;
    let x1 = (bb.x_max.ceil() as u32).min(w);
    let y1 = (bb.y_max.ceil() as u32).min(h);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::RegionOutsideImage {
            width: w,
            height: h,
        });
    }
    let mut bins = vec![0.0; n_bins];
    for y in y0..y1 {
        for x in x0..x1 {
            let l = luma(img.get_pixel(x, y).0) as usize;
            bins[l * n_bins / 256] += 1.0;
        }
    }
    ColourHistogram::new(bins)
}

/// Loads an 8-bit RGB image from a PNG or PPM file.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}
