//! Run configuration shared by every subcommand.
//!
//! A config file is a JSON object with any subset of the fields below;
//! missing fields take their defaults and command-line flags override file
//! values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::association::{AssociationParams, CostWeights};
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::motion::MotionParams;
use crate::tracker::TrackerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// IMOT/MOD pairing overlap threshold.
    pub t_o: f64,
    /// Minimum fragment overlap with the covering detector box for merging.
    pub t_m: f64,
    /// Maximum colour dissimilarity for merging.
    pub t_c: f64,
    /// Spatial cost distance scale (frame-normalised units).
    pub t_d: f64,
    /// Minimum prediction/previous-box overlap for a good prediction.
    pub t_p: f64,
    /// Consecutive unmatched frames before a track is terminated.
    pub t_n: u32,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Assignments costing more than this are rejected.
    pub gate: f64,
    /// IMOT boxes smaller than this many square pixels are dropped.
    pub min_area: f64,
    pub max_bad_fraction: f64,
    pub min_track_length: usize,
    pub histogram_bins: usize,
    /// Confidence attached to objects carrying the dummy label.
    pub dummy_confidence: f64,
    /// Evaluation IoU threshold.
    pub overlap: f64,
    pub measurement_sigma: f64,
    pub position_process_sigma: f64,
    pub size_process_sigma: f64,
    pub initial_velocity_sigma: f64,
    pub frame_width: Option<u32>,
    pub frame_height: Option<u32>,

    pub imot: Option<PathBuf>,
    #[serde(rename = "mod")]
    pub detector: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// printf-style frame image pattern, e.g. `frames/%06d.png`.
    pub frames: Option<String>,
    /// Image index holding frame 0.
    pub frame_start: u64,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let motion = MotionParams::default();
        Self {
            t_o: 0.05,
            t_m: 0.5,
            t_c: 0.5,
            t_d: 0.5,
            t_p: 0.01,
            t_n: 10,
            alpha: 0.6,
            beta: 0.3,
            gamma: 0.1,
            gate: 0.9,
            min_area: 64.0,
            max_bad_fraction: 0.5,
            min_track_length: 1,
            histogram_bins: 256,
            dummy_confidence: 0.5,
            overlap: 0.3,
            measurement_sigma: motion.measurement_sigma,
            position_process_sigma: motion.position_process_sigma,
            size_process_sigma: motion.size_process_sigma,
            initial_velocity_sigma: motion.initial_velocity_sigma,
            frame_width: None,
            frame_height: None,
            imot: None,
            detector: None,
            ground_truth: None,
            frames: None,
            frame_start: 0,
            output: None,
            seed: 0,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_o", self.t_o),
            ("t_m", self.t_m),
            ("t_c", self.t_c),
            ("t_p", self.t_p),
            ("gate", self.gate),
            ("max_bad_fraction", self.max_bad_fraction),
            ("dummy_confidence", self.dummy_confidence),
        ] {
            unit(name, v)?;
        }
        if !(self.t_d > 0.0 && self.t_d.is_finite()) {
            return Err(Error::Config(format!(
                "t_d = {} must be positive",
                self.t_d
            )));
        }
        if self.t_n == 0 {
            return Err(Error::Config("t_n must be at least 1".into()));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(Error::Config(format!(
                "overlap = {} must lie in (0, 1]",
                self.overlap
            )));
        }
        if !(self.min_area >= 0.0 && self.min_area.is_finite()) {
            return Err(Error::Config(format!(
                "min_area = {} must be non-negative",
                self.min_area
            )));
        }
        if self.histogram_bins == 0 || self.histogram_bins > 256 {
            return Err(Error::Config(format!(
                "histogram_bins = {} must lie in 1..=256",
                self.histogram_bins
            )));
        }
        self.weights()?;
        self.motion().validate()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<CostWeights> {
        CostWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams {
            min_area: self.min_area,
            t_o: self.t_o,
            t_m: self.t_m,
            t_c: self.t_c,
            histogram_bins: self.histogram_bins,
            dummy_confidence: self.dummy_confidence,
        }
    }

    pub fn motion(&self) -> MotionParams {
        MotionParams {
            measurement_sigma: self.measurement_sigma,
            position_process_sigma: self.position_process_sigma,
            size_process_sigma: self.size_process_sigma,
            initial_velocity_sigma: self.initial_velocity_sigma,
        }
    }

    /// Tracker parameters for a video with the given frame size.
    pub fn tracker(&self, frame_width: f64, frame_height: f64) -> Result<TrackerParams> {
        Ok(TrackerParams {
            association: AssociationParams {
                weights: self.weights()?,
                t_d: self.t_d,
                gate: self.gate,
            },
            motion: self.motion(),
            t_p: self.t_p,
            t_n: self.t_n,
            max_bad_fraction: self.max_bad_fraction,
            min_track_length: self.min_track_length,
            frame_width,
            frame_height,
        })
    }
}
