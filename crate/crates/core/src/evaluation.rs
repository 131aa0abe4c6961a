//! CLEAR MOT scoring of track output against ground truth.
//!
//! Per frame, ground-truth objects keep last frame's track when that track
//! is still present and overlaps by at least the threshold. Remaining pairs
//! are matched by a Hungarian assignment that first maximises the number of
//! pairs above the threshold, then their total overlap. A ground-truth
//! object matched to a different track than at its previous match counts
//! one mismatch.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::hungarian::{self, Matrix};
use crate::io::{GroundTruthEntry, TrackRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub gt_instances: u64,
    /// Ground-truth instances matched to some track.
    pub correct: u64,
    pub misses: u64,
    pub false_positives: u64,
    pub mismatches: u64,
    /// Mean IoU of matched pairs; 0 when nothing matched.
    pub motp: f64,
    pub mota: f64,
}

impl MotReport {
    pub const COLUMNS: [&'static str; 7] = [
        "GT",
        "Correct Tracks",
        "Misses",
        "FP",
        "Mismatches",
        "MOTP",
        "MOTA",
    ];

    /// Cells in `COLUMNS` order.
    pub fn cells(&self) -> [String; 7] {
        [
            self.gt_instances.to_string(),
            self.correct.to_string(),
            self.misses.to_string(),
            self.false_positives.to_string(),
            self.mismatches.to_string(),
            format!("{:.3}", self.motp),
            format!("{:.3}", self.mota),
        ]
    }
}

impl fmt::Display for MotReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells = self.cells();
        let widths: Vec<usize> = Self::COLUMNS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let row = |items: &[String]| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let header: Vec<String> = Self::COLUMNS.iter().map(|s| s.to_string()).collect();
        writeln!(f, "{}", row(&header))?;
        write!(f, "{}", row(&cells))
    }
}

#[derive(Default)]
struct FrameBoxes<'a> {
    gt: Vec<(u64, &'a BoundingBox)>,
    tracks: Vec<(u64, &'a BoundingBox)>,
}

pub fn evaluate(
    tracks: &[TrackRecord],
    gt: &[GroundTruthEntry],
    overlap_threshold: f64,
) -> Result<MotReport> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "overlap threshold {overlap_threshold} must lie in (0, 1]"
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidInput(
            "ground truth is empty; MOTA is undefined".into(),
        ));
    }

    let mut frames: BTreeMap<u64, FrameBoxes<'_>> = BTreeMap::new();
    for g in gt {
        frames
            .entry(g.frame)
            .or_default()
            .gt
            .push((g.object_id, &g.bbox));
    }
    for t in tracks {
        frames
            .entry(t.frame)
            .or_default()
            .tracks
            .push((t.track, &t.bbox));
    }

    let mut gt_instances = 0u64;
    let mut correct = 0u64;
    let mut false_positives = 0u64;
    let mut mismatches = 0u64;
    let mut overlap_sum = 0.0;
    // correspondences of the previous frame, and of each object's last match
    let mut previous: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();

    for (frame, boxes) in &frames {
        let mut seen = HashSet::new();
        if let Some((id, _)) = boxes.tracks.iter().find(|(id, _)| !seen.insert(*id)) {
            return Err(Error::InvalidInput(format!(
                "track {id} has several boxes in frame {frame}"
            )));
        }
        gt_instances += boxes.gt.len() as u64;

        let mut gt_used = vec![false; boxes.gt.len()];
        let mut trk_used = vec![false; boxes.tracks.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        for (gi, (gid, gbox)) in boxes.gt.iter().enumerate() {
            let Some(tid) = previous.get(gid) else {
                continue;
            };
            if let Some(ti) = boxes.tracks.iter().position(|(id, _)| id == tid) {
                let o = iou(gbox, boxes.tracks[ti].1);
                if o >= overlap_threshold {
                    gt_used[gi] = true;
                    trk_used[ti] = true;
                    pairs.push((gi, ti, o));
                }
            }
        }

        let free_gt: Vec<usize> = (0..boxes.gt.len()).filter(|i| !gt_used[*i]).collect();
        let free_trk: Vec<usize> = (0..boxes.tracks.len()).filter(|i| !trk_used[*i]).collect();
        if !free_gt.is_empty() && !free_trk.is_empty() {
            let overlaps = Matrix::from_fn(free_gt.len(), free_trk.len(), |r, c| {
                iou(boxes.gt[free_gt[r]].1, boxes.tracks[free_trk[c]].1)
            });
            // Eligible costs sum to less than one over any matching, so a
            // larger matching always wins; ties go to higher total overlap.
            let scale = (free_gt.len().min(free_trk.len()) + 1) as f64;
            let costs = Matrix::from_fn(overlaps.rows(), overlaps.cols(), |r, c| {
                let o = overlaps.get(r, c);
                if o >= overlap_threshold {
                    (1.0 - o) / scale
                } else {
                    1.0
                }
            });
            for (r, c) in hungarian::solve(&costs, 1.0).into_iter().enumerate() {
                let Some(c) = c else { continue };
                let o = overlaps.get(r, c);
                if o >= overlap_threshold {
                    pairs.push((free_gt[r], free_trk[c], o));
                }
            }
        }

        previous.clear();
        let matched_tracks = pairs.len();
        for (gi, ti, o) in pairs {
            let gid = boxes.gt[gi].0;
            let tid = boxes.tracks[ti].0;
            if last_match.insert(gid, tid).is_some_and(|old| old != tid) {
                mismatches += 1;
            }
            previous.insert(gid, tid);
            correct += 1;
            overlap_sum += o;
        }
        false_positives += (boxes.tracks.len() - matched_tracks) as u64;
    }

    let misses = gt_instances - correct;
    let motp = if correct == 0 {
        0.0
    } else {
        overlap_sum / correct as f64
    };
    let mota = 1.0 - (misses + false_positives + mismatches) as f64 / gt_instances as f64;
    Ok(MotReport {
        gt_instances,
        correct,
        misses,
        false_positives,
        mismatches,
        motp,
        mota,
    })
}
