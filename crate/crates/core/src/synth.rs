//! Deterministic synthetic scenes: scripted ground truth plus simulated
//! background-subtraction (IMOT) and detector (MOD) streams and rendered
//! frames.
//!
//! Randomness comes from ChaCha8 seeded with the scenario seed. Every
//! object draws the same number of variates per frame whatever the noise
//! settings, so changing one probability does not reshuffle the others.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{luma, BoundingBox};
use crate::io::{
    write_detections, write_ground_truth, Detection, DetectionsByFrame, GroundTruthEntry,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub frame: u64,
    /// Box center, pixels.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectScript {
    pub id: u64,
    /// First frame the object is present.
    #[serde(default)]
    pub entry: u64,
    /// Last frame the object is present; defaults to the final frame.
    #[serde(default)]
    pub exit: Option<u64>,
    /// Center trajectory, linearly interpolated and held at the ends.
    pub waypoints: Vec<Waypoint>,
    /// `[width, height]` in pixels.
    pub size: [f64; 2],
    pub label: String,
    #[serde(default)]
    pub colour: Option<[u8; 3]>,
    /// Per-object override of the IMOT fragmentation probability.
    #[serde(default)]
    pub fragment_prob: Option<f64>,
    /// Inclusive frame ranges in which neither stream reports the object.
    #[serde(default)]
    pub occlusions: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImotNoise {
    pub fragment_prob: f64,
    pub fragment_count: usize,
    /// Per-coordinate Gaussian jitter, pixels.
    pub jitter_sigma: f64,
    pub miss_prob: f64,
    /// Mean number of spurious boxes per frame.
    pub clutter_rate: f64,
    pub clutter_size: [f64; 2],
}

impl Default for ImotNoise {
    fn default() -> Self {
        Self {
            fragment_prob: 0.0,
            fragment_count: 2,
            jitter_sigma: 0.0,
            miss_prob: 0.0,
            clutter_rate: 0.0,
            clutter_size: [12.0, 12.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModNoise {
    /// Scale factor applied to width and height about the center.
    pub dilation: f64,
    pub miss_prob: f64,
    pub confidence_mean: f64,
    pub confidence_sigma: f64,
    /// Probability that two overlapping detector boxes come out as one.
    pub merge_adjacent_prob: f64,
}

impl Default for ModNoise {
    fn default() -> Self {
        Self {
            dilation: 1.0,
            miss_prob: 0.0,
            confidence_mean: 0.9,
            confidence_sigma: 0.0,
            merge_adjacent_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub frames: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub background: [u8; 3],
    /// Assign unset object colours maximally separated grey levels.
    #[serde(default)]
    pub distinct_colours: bool,
    pub objects: Vec<ObjectScript>,
    #[serde(default)]
    pub imot: ImotNoise,
    #[serde(default, rename = "mod")]
    pub detector: ModNoise,
    #[serde(default)]
    pub seed: u64,
}

const DEFAULT_COLOUR: [u8; 3] = [200, 200, 200];

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Scenario(format!("{name} = {p} must lie in [0, 1]")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Scenario(format!(
            "{name} = {v} must be non-negative"
        )))
    }
}

impl ScenarioSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Scenario("frame count must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Scenario("frame dimensions must be positive".into()));
        }
        let i = &self.imot;
        probability("imot.fragment_prob", i.fragment_prob)?;
        probability("imot.miss_prob", i.miss_prob)?;
        non_negative("imot.jitter_sigma", i.jitter_sigma)?;
        non_negative("imot.clutter_rate", i.clutter_rate)?;
        if i.fragment_count == 0 {
            return Err(Error::Scenario(
                "imot.fragment_count must be at least 1".into(),
            ));
        }
        if i.clutter_size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Scenario("imot.clutter_size must be positive".into()));
        }
        let m = &self.detector;
        probability("mod.miss_prob", m.miss_prob)?;
        probability("mod.merge_adjacent_prob", m.merge_adjacent_prob)?;
        probability("mod.confidence_mean", m.confidence_mean)?;
        non_negative("mod.confidence_sigma", m.confidence_sigma)?;
        if !(m.dilation.is_finite() && m.dilation > 0.0) {
            return Err(Error::Scenario("mod.dilation must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Scenario(format!("duplicate object id {}", o.id)));
            }
            if o.waypoints.is_empty() {
                return Err(Error::Scenario(format!("object {} has no waypoints", o.id)));
            }
            if o.waypoints.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return Err(Error::Scenario(format!(
                    "object {} waypoint frames must increase",
                    o.id
                )));
            }
            for w in &o.waypoints {
                let inside = (0.0..=self.width as f64).contains(&w.x)
                    && (0.0..=self.height as f64).contains(&w.y);
                if !inside {
                    return Err(Error::Scenario(format!(
                        "object {} waypoint ({}, {}) lies outside the frame",
                        o.id, w.x, w.y
                    )));
                }
            }
            if o.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::Scenario(format!(
                    "object {} size must be positive",
                    o.id
                )));
            }
            if let Some(p) = o.fragment_prob {
                probability("fragment_prob", p)?;
            }
            if o.exit.is_some_and(|e| e < o.entry) {
                return Err(Error::Scenario(format!(
                    "object {} exits before entering",
                    o.id
                )));
            }
            if o.occlusions.iter().any(|[a, b]| a > b) {
                return Err(Error::Scenario(format!(
                    "object {} has an empty occlusion",
                    o.id
                )));
            }
        }
        Ok(())
    }

    /// Object colours, resolving `distinct_colours` to evenly spaced grey
    /// levels that avoid the background.
    fn colours(&self) -> Vec<[u8; 3]> {
        if !self.distinct_colours {
            return self
                .objects
                .iter()
                .map(|o| o.colour.unwrap_or(DEFAULT_COLOUR))
                .collect();
        }
        let k = self.objects.len();
        let bg = luma(self.background) as f64;
        let mut levels: Vec<u8> = (0..=k)
            .map(|i| (255.0 * i as f64 / k.max(1) as f64).round() as u8)
            .collect();
        let nearest = levels
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (*a.1 as f64 - bg)
                    .abs()
                    .total_cmp(&(*b.1 as f64 - bg).abs())
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        levels.remove(nearest);
        self.objects
            .iter()
            .zip(levels)
            .map(|(o, l)| o.colour.unwrap_or([l; 3]))
            .collect()
    }
}

impl ObjectScript {
    fn present(&self, frame: u64, last: u64) -> bool {
        frame >= self.entry && frame <= self.exit.unwrap_or(last)
    }

    fn occluded(&self, frame: u64) -> bool {
        self.occlusions
            .iter()
            .any(|[a, b]| (*a..=*b).contains(&frame))
    }

    fn center(&self, frame: u64) -> (f64, f64) {
        let w = &self.waypoints;
        let first = &w[0];
        if frame <= first.frame {
            return (first.x, first.y);
        }
        for pair in w.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if frame <= b.frame {
                // multiply before dividing so integer velocities stay exact
                let (k, n) = ((frame - a.frame) as f64, (b.frame - a.frame) as f64);
                return (a.x + (b.x - a.x) * k / n, a.y + (b.y - a.y) * k / n);
            }
        }
        let last = &w[w.len() - 1];
        (last.x, last.y)
    }
}

/// Splits `b` into `k` abutting slices along its longer side.
pub fn fragment(b: &BoundingBox, k: usize) -> Vec<BoundingBox> {
    let horizontal = b.width() >= b.height();
    let (lo, hi) = if horizontal {
        (b.x_min(), b.x_max())
    } else {
        (b.y_min(), b.y_max())
    };
    let edge = |i: usize| {
        if i == k {
            hi
        } else {
            lo + (hi - lo) * i as f64 / k as f64
        }
    };
    (0..k)
        .filter_map(|i| {
            let (a, z) = (edge(i), edge(i + 1));
            if horizontal {
                BoundingBox::new(a, b.y_min(), z, b.y_max()).ok()
            } else {
                BoundingBox::new(b.x_min(), a, b.x_max(), z).ok()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub ground_truth: Vec<GroundTruthEntry>,
    pub imot: Vec<Detection>,
    pub detector: Vec<Detection>,
    pub frames: Vec<RgbImage>,
}

fn group(dets: &[Detection]) -> DetectionsByFrame {
    let mut out = DetectionsByFrame::new();
    for d in dets {
        out.entry(d.frame).or_default().push(d.clone());
    }
    out
}

impl SynthOutput {
    pub fn imot_by_frame(&self) -> DetectionsByFrame {
        group(&self.imot)
    }

    pub fn detector_by_frame(&self) -> DetectionsByFrame {
        group(&self.detector)
    }

    /// Writes `gt.jsonl`, `imot.jsonl`, `mod.jsonl` and `frames/%06d.png`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        write_ground_truth(&dir.join("gt.jsonl"), &self.ground_truth)?;
        write_detections(&dir.join("imot.jsonl"), &self.imot)?;
        write_detections(&dir.join("mod.jsonl"), &self.detector)?;
        for (i, img) in self.frames.iter().enumerate() {
            let path = frames_dir.join(format!("{i:06}.png"));
            img.save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }
}

/// Frame pattern matching `SynthOutput::write_to_dir`.
pub const FRAME_PATTERN: &str = "frames/%06d.png";

/// Box with corners clamped into the frame, if any area remains.
fn clipped(x0: f64, y0: f64, x1: f64, y1: f64, fw: f64, fh: f64) -> Option<BoundingBox> {
    BoundingBox::new(
        x0.clamp(0.0, fw),
        y0.clamp(0.0, fh),
        x1.clamp(0.0, fw),
        y1.clamp(0.0, fh),
    )
    .ok()
}

fn paint(img: &mut RgbImage, b: &BoundingBox, colour: [u8; 3]) {
    let x0 = b.x_min().floor() as u32;
    let y0 = b.y_min().floor() as u32;
    let x1 = (b.x_max().ceil() as u32).min(img.width());
    let y1 = (b.y_max().ceil() as u32).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, Rgb(colour));
        }
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let last = spec.frames - 1;
    let colours = spec.colours();
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let clutter = (spec.imot.clutter_rate > 0.0)
        .then(|| Poisson::new(spec.imot.clutter_rate).expect("positive rate"));

    let mut out = SynthOutput {
        ground_truth: Vec::new(),
        imot: Vec::new(),
        detector: Vec::new(),
        frames: Vec::with_capacity(spec.frames as usize),
    };

    for frame in 0..spec.frames {
        let mut img = RgbImage::from_pixel(spec.width, spec.height, Rgb(spec.background));
        let mut mod_frame: Vec<Detection> = Vec::new();
        for (obj, colour) in spec.objects.iter().zip(&colours) {
            // fixed draw budget per object and frame
            let u_imot_miss: f64 = rng.gen();
            let u_fragment: f64 = rng.gen();
            let jitter: [f64; 4] = std::array::from_fn(|_| unit_normal.sample(&mut rng));
            let u_mod_miss: f64 = rng.gen();
            let z_conf: f64 = unit_normal.sample(&mut rng);

            if !obj.present(frame, last) {
                continue;
            }
            let (cx, cy) = obj.center(frame);
            let [w, h] = obj.size;
            let Some(gt_box) = clipped(
                cx - w / 2.0,
                cy - h / 2.0,
                cx + w / 2.0,
                cy + h / 2.0,
                fw,
                fh,
            ) else {
                continue;
            };
            out.ground_truth.push(GroundTruthEntry {
                frame,
                object_id: obj.id,
                bbox: gt_box,
            });
            paint(&mut img, &gt_box, *colour);
            if obj.occluded(frame) {
                continue;
            }

            let noise = &spec.imot;
            if u_imot_miss >= noise.miss_prob {
                let s = noise.jitter_sigma;
                let jittered = clipped(
                    gt_box.x_min() + s * jitter[0],
                    gt_box.y_min() + s * jitter[1],
                    gt_box.x_max() + s * jitter[2],
                    gt_box.y_max() + s * jitter[3],
                    fw,
                    fh,
                );
                if let Some(b) = jittered {
                    let p_frag = obj.fragment_prob.unwrap_or(noise.fragment_prob);
                    if u_fragment < p_frag && noise.fragment_count > 1 {
                        for part in fragment(&b, noise.fragment_count) {
                            out.imot.push(Detection::imot(frame, part));
                        }
                    } else {
                        out.imot.push(Detection::imot(frame, b));
                    }
                }
            }

            let m = &spec.detector;
            if u_mod_miss >= m.miss_prob {
                let dilated = if m.dilation == 1.0 {
                    Some(gt_box)
                } else {
                    let (gx, gy) = gt_box.center();
                    let (dw, dh) = (
                        gt_box.width() * m.dilation / 2.0,
                        gt_box.height() * m.dilation / 2.0,
                    );
                    clipped(gx - dw, gy - dh, gx + dw, gy + dh, fw, fh)
                };
                if let Some(b) = dilated {
                    let conf = (m.confidence_mean + m.confidence_sigma * z_conf).clamp(0.0, 1.0);
                    mod_frame.push(Detection::detector(frame, b, &obj.label, conf));
                }
            }
        }

        // detector boxes that overlap may come out merged
        let mut merged = vec![false; mod_frame.len()];
        let mut mod_out = Vec::with_capacity(mod_frame.len());
        for i in 0..mod_frame.len() {
            if merged[i] {
                continue;
            }
            let mut current = mod_frame[i].clone();
            for j in i + 1..mod_frame.len() {
                if merged[j] || current.bbox.intersection_area(&mod_frame[j].bbox) <= 0.0 {
                    continue;
                }
                let u: f64 = rng.gen();
                if u < spec.detector.merge_adjacent_prob {
                    merged[j] = true;
                    current.bbox = current.bbox.union_box(&mod_frame[j].bbox);
                    current.confidence = current.confidence.max(mod_frame[j].confidence);
                }
            }
            mod_out.push(current);
        }
        out.detector.extend(mod_out);

        if let Some(poisson) = &clutter {
            let n = poisson.sample(&mut rng) as usize;
            let [cw, ch] = spec.imot.clutter_size;
            for _ in 0..n {
                let x = rng.gen::<f64>() * fw;
                let y = rng.gen::<f64>() * fh;
                if let Some(b) = clipped(x, y, x + cw, y + ch, fw, fh) {
                    out.imot.push(Detection::imot(frame, b));
                }
            }
        }
        out.frames.push(img);
    }
    Ok(out)
}
