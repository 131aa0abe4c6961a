//! Per-frame fusion of background-subtraction (IMOT) and detector (MOD)
//! boxes into tracker inputs.
//!
//! IMOT boxes are the primary evidence. Detector boxes only contribute in
//! two ways: they lend their class label to overlapping IMOT boxes, and they
//! replace groups of colour-consistent IMOT fragments that they cover.
//! A detector box that pairs with no IMOT box never reaches the tracker.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{
    bhattacharyya_similarity, histogram_from_region, iou, BoundingBox, ColourHistogram,
};
use crate::io::{Detection, Label, Source};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub min_area: f64,
    pub t_o: f64,
    pub t_m: f64,
    pub t_c: f64,
    pub histogram_bins: usize,
    pub dummy_confidence: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            min_area: 64.0,
            t_o: 0.05,
            t_m: 0.5,
            t_c: 0.5,
            histogram_bins: 256,
            dummy_confidence: 0.5,
        }
    }
}

/// Index of a detection within the per-frame input slice of its stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectionRef {
    pub source: Source,
    pub index: usize,
}

impl DetectionRef {
    pub fn imot(index: usize) -> Self {
        Self {
            source: Source::Imot,
            index,
        }
    }

    pub fn detector(index: usize) -> Self {
        Self {
            source: Source::Mod,
            index,
        }
    }
}

/// A tracker input produced by fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedObject {
    pub bbox: BoundingBox,
    pub label: Label,
    pub confidence: f64,
    pub histogram: Option<ColourHistogram>,
    pub provenance: Vec<DetectionRef>,
}

impl FusedObject {
    /// The object as a detection record with source `fused`.
    pub fn to_detection(&self, frame: u64) -> Detection {
        Detection {
            frame,
            bbox: self.bbox,
            source: Source::Fused,
            label: self.label.clone(),
            confidence: self.confidence,
            histogram: self.histogram.clone(),
        }
    }
}

/// `paired(i, j)` is true when IMOT `i` overlaps MOD `j` by at least `t_o`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingMatrix {
    imot: usize,
    detector: usize,
    cells: Vec<bool>,
}

impl PairingMatrix {
    pub fn imot_count(&self) -> usize {
        self.imot
    }

    pub fn detector_count(&self) -> usize {
        self.detector
    }

    pub fn paired(&self, imot: usize, detector: usize) -> bool {
        self.cells[imot * self.detector + detector]
    }

    /// MOD indices paired with IMOT `i`.
    pub fn detectors_of(&self, imot: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.detector).filter(move |&j| self.paired(imot, j))
    }

    /// IMOT indices paired with MOD `j`.
    pub fn imots_of(&self, detector: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.imot).filter(move |&i| self.paired(i, detector))
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

fn large_enough(d: &Detection, min_area: f64) -> bool {
    d.bbox.area() >= min_area
}

/// Drops IMOT boxes with area below `min_area`, keeping order.
pub fn filter_small(imot: &[Detection], min_area: f64) -> Vec<Detection> {
    imot.iter()
        .filter(|d| large_enough(d, min_area))
        .cloned()
        .collect()
}

pub fn pair(imot: &[Detection], detector: &[Detection], t_o: f64) -> PairingMatrix {
    let mut cells = Vec::with_capacity(imot.len() * detector.len());
    for a in imot {
        for b in detector {
            cells.push(iou(&a.bbox, &b.bbox) >= t_o);
        }
    }
    PairingMatrix {
        imot: imot.len(),
        detector: detector.len(),
        cells,
    }
}

/// A detector box standing in for the IMOT fragments it absorbed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub detector: usize,
    pub fragments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeOutcome {
    /// IMOT indices that survive as individual objects, ascending.
    pub kept: Vec<usize>,
    /// Detector boxes replacing discarded fragments, ascending by MOD index.
    pub replacements: Vec<Replacement>,
}

fn histogram_of<'a>(d: &'a Detection, what: &str, index: usize) -> Result<&'a ColourHistogram> {
    d.histogram.as_ref().ok_or_else(|| {
        Error::MissingColour(format!(
            "{what} detection {index} needs a histogram for fragment merging; \
             supply frames or per-detection histograms"
        ))
    })
}

/// Replaces colour-consistent IMOT fragments by the detector box covering
/// them.
///
/// Only detector boxes paired with two or more IMOT boxes are considered.
/// Each paired fragment overlapping the detector box by at least `t_m` and
/// with colour dissimilarity at most `t_c` to it is discarded; the detector
/// box then enters the replacement set once. A fragment already absorbed by
/// an earlier detector box is not considered again.
pub fn merge_fragments(
    pairing: &PairingMatrix,
    imot: &[Detection],
    detector: &[Detection],
    t_m: f64,
    t_c: f64,
) -> Result<MergeOutcome> {
    let mut discarded = vec![false; imot.len()];
    let mut replacements = Vec::new();
    for (j, m) in detector.iter().enumerate() {
        let paired: Vec<usize> = pairing.imots_of(j).collect();
        if paired.len() < 2 {
            continue;
        }
        let mut fragments = Vec::new();
        for i in paired {
            if discarded[i] {
                continue;
            }
            let overlap = iou(&imot[i].bbox, &m.bbox);
            if overlap < t_m {
                continue;
            }
            let sc = bhattacharyya_similarity(
                histogram_of(&imot[i], "IMOT", i)?,
                histogram_of(m, "MOD", j)?,
            )?;
            if sc <= t_c {
                discarded[i] = true;
                fragments.push(i);
            }
        }
        if !fragments.is_empty() {
            replacements.push(Replacement {
                detector: j,
                fragments,
            });
        }
    }
    let kept = (0..imot.len()).filter(|i| !discarded[*i]).collect();
    Ok(MergeOutcome { kept, replacements })
}

/// Label choice score of an IMOT box against a paired detector box:
/// overlap times colour agreement. Without colour data only overlap counts.
fn label_score(imot: &Detection, detector: &Detection) -> Result<f64> {
    let overlap = iou(&imot.bbox, &detector.bbox);
    match (&imot.histogram, &detector.histogram) {
        (Some(g), Some(h)) => Ok(overlap * (1.0 - bhattacharyya_similarity(g, h)?)),
        _ => Ok(overlap),
    }
}

/// Builds tracker inputs from the merge outcome: surviving IMOT boxes take
/// the label of their paired detector box (or the dummy label), and
/// replacement boxes keep their own.
pub fn transfer_labels(
    outcome: &MergeOutcome,
    pairing: &PairingMatrix,
    imot: &[Detection],
    detector: &[Detection],
    dummy_confidence: f64,
) -> Result<Vec<FusedObject>> {
    let mut out = Vec::with_capacity(outcome.kept.len() + outcome.replacements.len());
    for &i in &outcome.kept {
        let d = &imot[i];
        let paired: Vec<usize> = pairing.detectors_of(i).collect();
        let source = match paired.as_slice() {
            [] => None,
            [j] => Some(*j),
            many => {
                let mut best = many[0];
                let mut best_score = label_score(d, &detector[best])?;
                for &j in &many[1..] {
                    let score = label_score(d, &detector[j])?;
                    if score > best_score {
                        best = j;
                        best_score = score;
                    }
                }
                Some(best)
            }
        };
        let (label, confidence) = match source {
            Some(j) => (detector[j].label.clone(), detector[j].confidence),
            None => (Label::Dummy, dummy_confidence),
        };
        out.push(FusedObject {
            bbox: d.bbox,
            label,
            confidence,
            histogram: d.histogram.clone(),
            provenance: vec![DetectionRef::imot(i)],
        });
    }
    for r in &outcome.replacements {
        let m = &detector[r.detector];
        let mut provenance = vec![DetectionRef::detector(r.detector)];
        provenance.extend(r.fragments.iter().map(|&i| DetectionRef::imot(i)));
        out.push(FusedObject {
            bbox: m.bbox,
            label: m.label.clone(),
            confidence: m.confidence,
            histogram: m.histogram.clone(),
            provenance,
        });
    }
    Ok(out)
}

/// Fills missing histograms from the frame image, when one is available.
pub fn describe(detections: &mut [Detection], image: Option<&RgbImage>, bins: usize) -> Result<()> {
    let Some(img) = image else {
        return Ok(());
    };
    for d in detections.iter_mut().filter(|d| d.histogram.is_none()) {
        d.histogram = Some(histogram_from_region(img, &d.bbox, bins)?);
    }
    Ok(())
}

/// Fuses one frame: size filter, pairing, fragment merging, label transfer.
///
/// Provenance indices refer to positions in the `imot` and `detector`
/// slices passed here, before size filtering.
pub fn fuse_frame(
    imot: &[Detection],
    detector: &[Detection],
    params: &FusionParams,
    image: Option<&RgbImage>,
) -> Result<Vec<FusedObject>> {
    let kept_index: Vec<usize> = imot
        .iter()
        .enumerate()
        .filter(|(_, d)| large_enough(d, params.min_area))
        .map(|(i, _)| i)
        .collect();
    let mut small_free: Vec<Detection> = kept_index.iter().map(|&i| imot[i].clone()).collect();
    let mut detector = detector.to_vec();
    describe(&mut small_free, image, params.histogram_bins)?;
    describe(&mut detector, image, params.histogram_bins)?;

    let pairing = pair(&small_free, &detector, params.t_o);
    let outcome = merge_fragments(&pairing, &small_free, &detector, params.t_m, params.t_c)?;
    let mut fused = transfer_labels(
        &outcome,
        &pairing,
        &small_free,
        &detector,
        params.dummy_confidence,
    )?;
    for obj in &mut fused {
        for r in obj
            .provenance
            .iter_mut()
            .filter(|r| r.source == Source::Imot)
        {
            r.index = kept_index[r.index];
        }
    }
    Ok(fused)
}
