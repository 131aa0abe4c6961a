//! JSON-Lines readers and writers for detections, ground truth and tracks,
//! plus frame-image discovery.
//!
//! Record shapes, one object per line:
//!
//! ```text
//! detection:    {"frame":0,"bbox":[x_min,y_min,x_max,y_max],"source":"mod","label":"car","confidence":0.9}
//! ground truth: {"frame":0,"id":7,"bbox":[...]}
//! track:        {"track":1,"frame":0,"bbox":[...],"state":"D"}
//! ```
//!
//! Detections may carry an optional `"histogram"` array of bin counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_image, BoundingBox, ColourHistogram};
use crate::tracker::{StepState, Track};

/// Reserved label of objects without a detector class.
pub const DUMMY_LABEL: &str = "DUMMY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Background-subtraction boxes.
    Imot,
    /// Multiclass detector boxes.
    Mod,
    /// Output of the fusion stage.
    Fused,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Imot => "imot",
            Source::Mod => "mod",
            Source::Fused => "fused",
        })
    }
}

/// A detector class name, or the reserved dummy label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Dummy,
    Class(String),
}

impl Label {
    pub fn class(name: impl Into<String>) -> Self {
        let name = name.into();
        if name == DUMMY_LABEL {
            Label::Dummy
        } else {
            Label::Class(name)
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Dummy => DUMMY_LABEL,
            Label::Class(s) => s,
        }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self, Label::Dummy)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub source: Source,
    pub label: Label,
    pub confidence: f64,
    pub histogram: Option<ColourHistogram>,
}

impl Detection {
    /// An unlabeled background-subtraction detection.
    pub fn imot(frame: u64, bbox: BoundingBox) -> Self {
        Self {
            frame,
            bbox,
            source: Source::Imot,
            label: Label::Dummy,
            confidence: 0.0,
            histogram: None,
        }
    }

    pub fn detector(frame: u64, bbox: BoundingBox, label: &str, confidence: f64) -> Self {
        Self {
            frame,
            bbox,
            source: Source::Mod,
            label: Label::class(label),
            confidence,
            histogram: None,
        }
    }

    pub fn with_histogram(mut self, histogram: ColourHistogram) -> Self {
        self.histogram = Some(histogram);
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: u64,
    bbox: BoundingBox,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    histogram: Option<ColourHistogram>,
}

impl DetectionRecord {
    fn into_detection(self) -> std::result::Result<Detection, String> {
        let (label, confidence) = match self.source {
            // Background subtraction has no class; labels arrive via fusion.
            Source::Imot => (Label::Dummy, 0.0),
            Source::Mod | Source::Fused => {
                let label = self
                    .label
                    .ok_or_else(|| format!("{} record without label", self.source))?;
                let confidence = self
                    .confidence
                    .ok_or_else(|| format!("{} record without confidence", self.source))?;
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(format!("confidence {confidence} outside [0, 1]"));
                }
                let label = Label::class(label);
                if self.source == Source::Mod && label.is_dummy() {
                    return Err(format!("detector record uses reserved label {DUMMY_LABEL}"));
                }
                (label, confidence)
            }
        };
        Ok(Detection {
            frame: self.frame,
            bbox: self.bbox,
            source: self.source,
            label,
            confidence,
            histogram: self.histogram,
        })
    }
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            frame: d.frame,
            bbox: d.bbox,
            source: d.source,
            label: Some(d.label.as_str().to_owned()),
            confidence: Some(d.confidence),
            histogram: d.histogram.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    pub frame: u64,
    #[serde(rename = "id")]
    pub object_id: u64,
    pub bbox: BoundingBox,
}

/// One `(track, frame)` step as written to a track file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track: u64,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub state: StepState,
}

/// Detections keyed by ascending frame; file order is kept within a frame.
pub type DetectionsByFrame = BTreeMap<u64, Vec<Detection>>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Parses every non-blank line as `T`, reporting 1-based line numbers.
fn read_lines<T, F>(path: &Path, mut convert: F) -> Result<Vec<(usize, T)>>
where
    F: FnMut(serde_json::Value) -> std::result::Result<T, String>,
{
    let reader = open(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push((idx + 1, convert(value).map_err(parse_err)?));
    }
    Ok(out)
}

fn from_value<T: DeserializeOwned>(v: serde_json::Value) -> std::result::Result<T, String> {
    serde_json::from_value(v).map_err(|e| e.to_string())
}

pub fn read_detections(path: &Path) -> Result<DetectionsByFrame> {
    let records = read_lines(path, |v| from_value::<DetectionRecord>(v)?.into_detection())?;
    let mut grouped = DetectionsByFrame::new();
    for (_, det) in records {
        grouped.entry(det.frame).or_default().push(det);
    }
    Ok(grouped)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthEntry>> {
    let records = read_lines(path, from_value::<GroundTruthEntry>)?;
    let mut seen = BTreeSet::new();
    for (line, entry) in &records {
        if !seen.insert((entry.frame, entry.object_id)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!(
                    "duplicate ground truth for frame {} id {}",
                    entry.frame, entry.object_id
                ),
            });
        }
    }
    let mut entries: Vec<_> = records.into_iter().map(|(_, e)| e).collect();
    entries.sort_by_key(|e| e.frame);
    Ok(entries)
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    Ok(read_lines(path, from_value::<TrackRecord>)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_detections<'a>(
    path: &Path,
    detections: impl IntoIterator<Item = &'a Detection>,
) -> Result<()> {
    write_lines(path, detections.into_iter().map(DetectionRecord::from))
}

pub fn write_ground_truth(path: &Path, entries: &[GroundTruthEntry]) -> Result<()> {
    write_lines(path, entries)
}

/// Flattens tracks into per-step records, ordered by track then frame.
pub fn track_records(tracks: &[Track]) -> Vec<TrackRecord> {
    tracks
        .iter()
        .flat_map(|t| {
            t.steps.iter().map(move |s| TrackRecord {
                track: t.id,
                frame: s.frame,
                bbox: s.bbox,
                state: s.state,
            })
        })
        .collect()
}

pub fn write_tracks(tracks: &[Track], path: &Path) -> Result<()> {
    write_track_records(&track_records(tracks), path)
}

pub fn write_track_records(records: &[TrackRecord], path: &Path) -> Result<()> {
    write_lines(path, records)
}

/// Expands a printf-style integer pattern such as `frames/%06d.png`.
///
/// Supports `%d`, `%Nd`, `%0Nd` and the `%%` escape; exactly one integer
/// conversion is required.
pub fn expand_pattern(pattern: &str, index: u64) -> Result<String> {
    let mut out = String::with_capacity(pattern.len() + 8);
    let mut chars = pattern.chars().peekable();
    let mut conversions = 0;
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        if chars.peek() == Some(&'%') {
            chars.next();
            out.push('%');
            continue;
        }
        let zero = chars.peek() == Some(&'0');
        if zero {
            chars.next();
        }
        let mut width = String::new();
        while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
            width.push(*d);
            chars.next();
        }
        if chars.next() != Some('d') {
            return Err(Error::Config(format!(
                "frame pattern {pattern:?}: only %d conversions are supported"
            )));
        }
        let width: usize = if width.is_empty() {
            0
        } else {
            width.parse().unwrap_or(0)
        };
        if zero {
            out.push_str(&format!("{index:0width$}"));
        } else {
            out.push_str(&format!("{index:width$}"));
        }
        conversions += 1;
    }
    if conversions != 1 {
        return Err(Error::Config(format!(
            "frame pattern {pattern:?} must contain exactly one %d conversion"
        )));
    }
    Ok(out)
}

/// Frame images located by a printf-style pattern, with constant dimensions.
///
/// Frame `f` is read from `pattern % (f + first_index)`.
#[derive(Debug, Clone)]
pub struct FrameStore {
    pattern: String,
    first_index: u64,
    count: u64,
    width: u32,
    height: u32,
}

impl FrameStore {
    /// Discovers consecutive frames starting at `first_index`; at least one
    /// must exist.
    pub fn open(pattern: &str, first_index: u64) -> Result<Self> {
        let first = PathBuf::from(expand_pattern(pattern, first_index)?);
        let img = load_image(&first)?;
        let mut count = 1;
        while Path::new(&expand_pattern(pattern, first_index + count)?).exists() {
            count += 1;
        }
        Ok(Self {
            pattern: pattern.to_owned(),
            first_index,
            count,
            width: img.width(),
            height: img.height(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of consecutive frames found on disk.
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn path(&self, frame: u64) -> PathBuf {
        // The pattern was validated in `open`.
        PathBuf::from(expand_pattern(&self.pattern, frame + self.first_index).unwrap_or_default())
    }

    pub fn load(&self, frame: u64) -> Result<RgbImage> {
        let path = self.path(frame);
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "frame image not found"),
            ));
        }
        let img = load_image(&path)?;
        if img.dimensions() != (self.width, self.height) {
            return Err(Error::Config(format!(
                "{}: frame is {}x{}, expected {}x{}",
                path.display(),
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(img)
    }
}
