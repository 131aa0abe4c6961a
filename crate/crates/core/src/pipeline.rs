//! Whole-video fuse → track → evaluate wiring used by the CLI.

use std::collections::BTreeMap;
use std::fmt;

use log::info;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MotReport};
use crate::fusion::{fuse_frame, FusedObject, FusionParams};
use crate::io::{track_records, DetectionsByFrame, FrameStore, GroundTruthEntry};
use crate::tracker::{Track, Tracker};

/// The input streams of one video.
#[derive(Debug, Clone, Copy)]
pub struct Streams<'a> {
    pub imot: &'a DetectionsByFrame,
    pub detector: &'a DetectionsByFrame,
    pub frames: Option<&'a FrameStore>,
}

impl Streams<'_> {
    /// Number of frames to process: through the last detection or the last
    /// frame image, whichever is later.
    pub fn frame_count(&self) -> u64 {
        let last_det = self
            .imot
            .keys()
            .chain(self.detector.keys())
            .max()
            .map_or(0, |f| f + 1);
        last_det.max(self.frames.map_or(0, |s| s.len()))
    }

    fn all_have_histograms(&self) -> bool {
        self.imot
            .values()
            .chain(self.detector.values())
            .flatten()
            .all(|d| d.histogram.is_some())
    }

    /// Frame size from the images, the configuration, or else the extent of
    /// the detections.
    pub fn frame_size(&self, config: &RunConfig) -> Result<(f64, f64)> {
        if let Some(store) = self.frames {
            return Ok((store.width() as f64, store.height() as f64));
        }
        if let (Some(w), Some(h)) = (config.frame_width, config.frame_height) {
            if w == 0 || h == 0 {
                return Err(Error::Config("frame size must be positive".into()));
            }
            return Ok((w as f64, h as f64));
        }
        let (w, h) = self
            .imot
            .values()
            .chain(self.detector.values())
            .flatten()
            .fold((0.0f64, 0.0f64), |(w, h), d| {
                (w.max(d.bbox.x_max()), h.max(d.bbox.y_max()))
            });
        Ok((
            config.frame_width.map_or(w.ceil().max(1.0), f64::from),
            config.frame_height.map_or(h.ceil().max(1.0), f64::from),
        ))
    }
}

/// Fuses every frame that has IMOT detections.
pub fn fuse_streams(
    streams: &Streams<'_>,
    params: &FusionParams,
) -> Result<BTreeMap<u64, Vec<FusedObject>>> {
    let mut out = BTreeMap::new();
    for (&frame, imot) in streams.imot {
        let detector = streams.detector.get(&frame).map_or(&[][..], Vec::as_slice);
        let image = streams.frames.map(|s| s.load(frame)).transpose()?;
        out.insert(frame, fuse_frame(imot, detector, params, image.as_ref())?);
    }
    Ok(out)
}

/// Runs fusion and tracking over the whole video.
pub fn track_streams(streams: &Streams<'_>, config: &RunConfig) -> Result<Vec<Track>> {
    config.validate()?;
    if config.beta > 0.0 && streams.frames.is_none() && !streams.all_have_histograms() {
        return Err(Error::MissingColour(
            "colour cost weight is positive but there are neither frame images nor \
             per-detection histograms; pass --frames or --beta 0"
                .into(),
        ));
    }
    let (fw, fh) = streams.frame_size(config)?;
    let fused = fuse_streams(streams, &config.fusion())?;
    let mut tracker = Tracker::new(config.tracker(fw, fh)?);
    for frame in 0..streams.frame_count() {
        let dets = fused.get(&frame).map_or(&[][..], Vec::as_slice);
        let out = tracker.step_frame(frame, dets)?;
        info!(
            "frame {frame}: {} objects, {} matched, {} predicted, {} born, {} terminated",
            dets.len(),
            out.matched.len(),
            out.predicted.len(),
            out.born.len(),
            out.terminated.len()
        );
    }
    Ok(tracker.finalize())
}

/// One association-cost configuration for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostSelection {
    Distance,
    Colour,
    Label,
    All,
}

impl CostSelection {
    pub const ALL: [CostSelection; 4] = [
        CostSelection::Distance,
        CostSelection::Colour,
        CostSelection::Label,
        CostSelection::All,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CostSelection::Distance => "Distance",
            CostSelection::Colour => "Colour",
            CostSelection::Label => "Label",
            CostSelection::All => "All",
        }
    }

    /// `config` with the weights this selection runs under.
    pub fn apply(&self, config: &RunConfig) -> RunConfig {
        let (alpha, beta, gamma) = match self {
            CostSelection::Distance => (1.0, 0.0, 0.0),
            CostSelection::Colour => (0.0, 1.0, 0.0),
            CostSelection::Label => (0.0, 0.0, 1.0),
            CostSelection::All => (config.alpha, config.beta, config.gamma),
        };
        RunConfig {
            alpha,
            beta,
            gamma,
            ..config.clone()
        }
    }
}

impl std::str::FromStr for CostSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distance" => Ok(CostSelection::Distance),
            "colour" | "color" => Ok(CostSelection::Colour),
            "label" => Ok(CostSelection::Label),
            "all" => Ok(CostSelection::All),
            _ => Err(Error::Config(format!(
                "unknown cost selection {s:?}; expected distance, colour, label or all"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub selection: CostSelection,
    pub report: MotReport,
}

pub fn ablate(
    streams: &Streams<'_>,
    gt: &[GroundTruthEntry],
    config: &RunConfig,
    selections: &[CostSelection],
) -> Result<Vec<AblationRow>> {
    selections
        .iter()
        .map(|sel| {
            let cfg = sel.apply(config);
            let tracks = track_streams(streams, &cfg)?;
            let report = evaluate(&track_records(&tracks), gt, cfg.overlap)?;
            Ok(AblationRow {
                selection: *sel,
                report,
            })
        })
        .collect()
}

/// Fixed-width table with a `Cost` column followed by the report columns.
pub struct AblationTable<'a>(pub &'a [AblationRow]);

impl fmt::Display for AblationTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("Cost")
            .chain(MotReport::COLUMNS)
            .map(str::to_owned)
            .collect()];
        for r in self.0 {
            let mut row = vec![r.selection.name().to_owned()];
            row.extend(r.report.cells());
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", line.join("  "))?;
        }
        Ok(())
    }
}
