//! Frame-to-frame association costs and gated one-to-one matching.
//!
//! Every cost lies in `[0, 1]`, lower meaning more likely the same object.
//! The final cost is a convex combination of a spatial, a colour and a
//! label term.

use crate::error::{Error, Result};
use crate::geometry::{
    bhattacharyya_similarity, mean_corner_distance, BoundingBox, ColourHistogram,
};
use crate::hungarian::{self, Matrix};
use crate::io::Label;

/// Rows are tracks, columns detections.
pub type CostMatrix = Matrix;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl CostWeights {
    /// Spatial, colour and label weights; non-negative and summing to one.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if [alpha, beta, gamma]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(format!(
                "cost weights ({alpha}, {beta}, {gamma}) must be non-negative"
            )));
        }
        if (alpha + beta + gamma - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Config(format!(
                "cost weights ({alpha}, {beta}, {gamma}) must sum to 1"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.3,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationParams {
    pub weights: CostWeights,
    pub t_d: f64,
    pub gate: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            t_d: 0.5,
            gate: 0.9,
        }
    }
}

/// Distance cost: 0 for identical boxes, rising linearly to 1 once the mean
/// normalised corner distance reaches `t_d`.
pub fn spatial_cost(
    det: &BoundingBox,
    trk: &BoundingBox,
    t_d: f64,
    frame_w: f64,
    frame_h: f64,
) -> f64 {
    let sd = mean_corner_distance(det, trk, frame_w, frame_h);
    1.0 - ((t_d - sd) / t_d).max(0.0)
}

pub fn colour_cost(det: &ColourHistogram, trk: &ColourHistogram) -> Result<f64> {
    bhattacharyya_similarity(det, trk)
}

/// `1 - (w_i + w_j) / 2` for equal labels, 1 otherwise. Dummy labels compare
/// equal to each other.
pub fn label_cost(l_i: &Label, w_i: f64, l_j: &Label, w_j: f64) -> f64 {
    if l_i == l_j {
        1.0 - 0.5 * (w_i + w_j)
    } else {
        1.0
    }
}

pub fn final_cost(c_d: f64, c_c: f64, c_l: f64, w: &CostWeights) -> f64 {
    w.alpha * c_d + w.beta * c_c + w.gamma * c_l
}

/// What a track contributes to a cost: its predicted box and the appearance
/// of its latest observation.
#[derive(Debug, Clone, Copy)]
pub struct TrackCue<'a> {
    pub bbox: BoundingBox,
    pub label: &'a Label,
    pub confidence: f64,
    pub histogram: Option<&'a ColourHistogram>,
}

/// A detection's side of a cost.
#[derive(Debug, Clone, Copy)]
pub struct DetectionCue<'a> {
    pub bbox: BoundingBox,
    pub label: &'a Label,
    pub confidence: f64,
    pub histogram: Option<&'a ColourHistogram>,
}

/// Final cost of one track/detection pair. The colour term is skipped when
/// its weight is zero, so histograms are then optional.
pub fn pair_cost(
    trk: &TrackCue<'_>,
    det: &DetectionCue<'_>,
    params: &AssociationParams,
    frame_w: f64,
    frame_h: f64,
) -> Result<f64> {
    let w = &params.weights;
    let c_d = spatial_cost(&det.bbox, &trk.bbox, params.t_d, frame_w, frame_h);
    let c_c = if w.beta > 0.0 {
        match (det.histogram, trk.histogram) {
            (Some(g), Some(h)) => colour_cost(g, h)?,
            _ => {
                return Err(Error::MissingColour(
                    "colour cost weight is positive but a histogram is missing".into(),
                ))
            }
        }
    } else {
        0.0
    };
    let c_l = label_cost(det.label, det.confidence, trk.label, trk.confidence);
    Ok(final_cost(c_d, c_c, c_l, w))
}

pub fn build_cost_matrix(
    tracks: &[TrackCue<'_>],
    dets: &[DetectionCue<'_>],
    params: &AssociationParams,
    frame_w: f64,
    frame_h: f64,
) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(tracks.len() * dets.len());
    for t in tracks {
        for d in dets {
            data.push(pair_cost(t, d, params, frame_w, frame_h)?);
        }
    }
    Ok(Matrix::new(tracks.len(), dets.len(), data))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentResult {
    /// `(track index, detection index)`, ascending by track.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-total-cost one-to-one assignment; pairs costing more than `gate`
/// are demoted to unmatched on both sides.
pub fn solve(matrix: &CostMatrix, gate: f64) -> AssignmentResult {
    let assignment = hungarian::solve(matrix, 1.0);
    let mut result = AssignmentResult::default();
    let mut det_used = vec![false; matrix.cols()];
    for (r, c) in assignment.into_iter().enumerate() {
        match c {
            Some(c) if matrix.get(r, c) <= gate => {
                det_used[c] = true;
                result.matches.push((r, c));
            }
            _ => result.unmatched_tracks.push(r),
        }
    }
    result.unmatched_detections = (0..matrix.cols()).filter(|c| !det_used[*c]).collect();
    result
}
