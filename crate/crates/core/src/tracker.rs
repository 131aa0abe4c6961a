//! Frame-by-frame tracking loop.
//!
//! Each frame: predict every active track, associate predictions with the
//! fused detections, update matched tracks, grade the predictions of
//! unmatched tracks, start tracks for unmatched detections and retire tracks
//! that have gone unmatched for `t_n` frames.

use std::fmt;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::association::{build_cost_matrix, solve, AssociationParams, DetectionCue, TrackCue};
use crate::error::{Error, Result};
use crate::fusion::FusedObject;
use crate::geometry::{iou, BoundingBox, ColourHistogram};
use crate::io::Label;
use crate::motion::{MotionFilter, MotionParams};

/// Quality of one track step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepState {
    /// Observed: the step consumed a fused detection.
    #[serde(rename = "D")]
    Detection,
    /// Prediction consistent with the previous step.
    #[serde(rename = "GP")]
    GoodPrediction,
    /// Prediction rejected; the previous box is repeated.
    #[serde(rename = "BP")]
    BadPrediction,
    /// Prediction following an unreliable history.
    #[serde(rename = "UP")]
    UncertainPrediction,
}

impl StepState {
    pub fn code(&self) -> &'static str {
        match self {
            StepState::Detection => "D",
            StepState::GoodPrediction => "GP",
            StepState::BadPrediction => "BP",
            StepState::UncertainPrediction => "UP",
        }
    }

    pub fn is_detection(&self) -> bool {
        matches!(self, StepState::Detection)
    }

    pub fn is_bad(&self) -> bool {
        matches!(
            self,
            StepState::BadPrediction | StepState::UncertainPrediction
        )
    }
}

impl fmt::Display for StepState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackStep {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub state: StepState,
    pub label: Label,
    pub confidence: f64,
    /// Present only on observed steps.
    pub histogram: Option<ColourHistogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub steps: Vec<TrackStep>,
    pub motion: MotionFilter,
    pub consecutive_misses: u32,
}

impl Track {
    pub fn last_step(&self) -> &TrackStep {
        self.steps
            .last()
            .expect("tracks always hold at least one step")
    }

    /// The most recent observed step, or the last step if none is observed.
    pub fn appearance(&self) -> &TrackStep {
        self.steps
            .iter()
            .rev()
            .find(|s| s.state.is_detection())
            .unwrap_or_else(|| self.last_step())
    }

    /// Box expected in the next frame. Does not change the track.
    pub fn predict(&self, frame_w: f64, frame_h: f64) -> BoundingBox {
        self.motion.predict_box(frame_w, frame_h)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fraction of steps in state BP or UP.
    pub fn bad_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.state.is_bad()).count() as f64 / self.steps.len() as f64
    }

    /// Drops the trailing run of non-observed steps.
    fn trim_trailing_predictions(&mut self) {
        while self.steps.last().is_some_and(|s| !s.state.is_detection()) {
            self.steps.pop();
        }
        self.consecutive_misses = 0;
    }

    fn observe(&mut self, frame: u64, obj: &FusedObject) {
        self.motion.advance();
        self.motion.correct(&obj.bbox);
        self.steps.push(observed_step(frame, obj));
        self.consecutive_misses = 0;
    }
}

fn observed_step(frame: u64, obj: &FusedObject) -> TrackStep {
    TrackStep {
        frame,
        bbox: obj.bbox,
        state: StepState::Detection,
        label: obj.label.clone(),
        confidence: obj.confidence,
        histogram: obj.histogram.clone(),
    }
}

/// Starts a one-step track at `obj` with zero velocity.
pub fn init_track(obj: &FusedObject, frame: u64, id: u64, motion: MotionParams) -> Track {
    Track {
        id,
        steps: vec![observed_step(frame, obj)],
        motion: MotionFilter::new(&obj.bbox, motion),
        consecutive_misses: 0,
    }
}

/// Grades the prediction of a track that found no detection this frame.
///
/// After an observed or good step, a prediction overlapping the previous box
/// by at least `t_p` is used as a good prediction; otherwise the previous
/// box is repeated as a bad prediction. After a bad or uncertain step the
/// prediction is used but marked uncertain.
pub fn resolve_unmatched(track: &Track, prediction: BoundingBox, t_p: f64) -> TrackStep {
    let prev = track.last_step();
    let (bbox, state) = match prev.state {
        StepState::Detection | StepState::GoodPrediction => {
            if iou(&prediction, &prev.bbox) < t_p {
                (prev.bbox, StepState::BadPrediction)
            } else {
                (prediction, StepState::GoodPrediction)
            }
        }
        StepState::BadPrediction | StepState::UncertainPrediction => {
            (prediction, StepState::UncertainPrediction)
        }
    };
    TrackStep {
        frame: prev.frame + 1,
        bbox,
        state,
        label: prev.label.clone(),
        confidence: prev.confidence,
        histogram: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    pub association: AssociationParams,
    pub motion: MotionParams,
    pub t_p: f64,
    pub t_n: u32,
    pub max_bad_fraction: f64,
    pub min_track_length: usize,
    pub frame_width: f64,
    pub frame_height: f64,
}

impl TrackerParams {
    pub fn new(frame_width: f64, frame_height: f64) -> Self {
        Self {
            association: AssociationParams::default(),
            motion: MotionParams::default(),
            t_p: 0.01,
            t_n: 10,
            max_bad_fraction: 0.5,
            min_track_length: 1,
            frame_width,
            frame_height,
        }
    }
}

/// What happened to tracks in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutput {
    pub frame: u64,
    /// `(track id, detection index)`.
    pub matched: Vec<(u64, usize)>,
    /// Track ids that received a prediction step.
    pub predicted: Vec<u64>,
    pub born: Vec<u64>,
    pub terminated: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    active: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            active: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Tracks terminated so far, with their trailing miss run removed.
    pub fn finished(&self) -> &[Track] {
        &self.finished
    }

    /// Processes `frame`, which must directly follow the previous one.
    pub fn step_frame(&mut self, frame: u64, dets: &[FusedObject]) -> Result<FrameOutput> {
        if let Some(last) = self.last_frame {
            if frame != last + 1 {
                return Err(Error::FrameOrder {
                    expected: last + 1,
                    got: frame,
                });
            }
        }
        self.last_frame = Some(frame);
        let p = &self.params;
        let (fw, fh) = (p.frame_width, p.frame_height);

        let predictions: Vec<BoundingBox> = self.active.iter().map(|t| t.predict(fw, fh)).collect();
        let assignment = {
            let track_cues: Vec<TrackCue<'_>> = self
                .active
                .iter()
                .zip(&predictions)
                .map(|(t, pred)| {
                    let look = t.appearance();
                    TrackCue {
                        bbox: *pred,
                        label: &look.label,
                        confidence: look.confidence,
                        histogram: look.histogram.as_ref(),
                    }
                })
                .collect();
            let det_cues: Vec<DetectionCue<'_>> = dets
                .iter()
                .map(|d| DetectionCue {
                    bbox: d.bbox,
                    label: &d.label,
                    confidence: d.confidence,
                    histogram: d.histogram.as_ref(),
                })
                .collect();
            let costs = build_cost_matrix(&track_cues, &det_cues, &p.association, fw, fh)?;
            solve(&costs, p.association.gate)
        };

        let mut out = FrameOutput {
            frame,
            ..Default::default()
        };
        for &(ti, di) in &assignment.matches {
            let track = &mut self.active[ti];
            track.observe(frame, &dets[di]);
            out.matched.push((track.id, di));
        }
        for &ti in &assignment.unmatched_tracks {
            let track = &mut self.active[ti];
            let step = resolve_unmatched(track, predictions[ti], p.t_p);
            track.motion.advance();
            track.steps.push(step);
            track.consecutive_misses += 1;
            out.predicted.push(track.id);
        }

        let t_n = p.t_n;
        let mut still_active = Vec::with_capacity(self.active.len());
        for mut track in self.active.drain(..) {
            if track.consecutive_misses >= t_n {
                let keep = track.steps.len() - t_n as usize;
                track.steps.truncate(keep);
                track.consecutive_misses = 0;
                debug!(
                    "frame {frame}: track {} terminated at length {keep}",
                    track.id
                );
                out.terminated.push(track.id);
                self.finished.push(track);
            } else {
                still_active.push(track);
            }
        }
        self.active = still_active;

        for &di in &assignment.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.active
                .push(init_track(&dets[di], frame, id, self.params.motion));
            out.born.push(id);
        }
        Ok(out)
    }

    /// Closes the run: open tracks lose their trailing predictions, then
    /// tracks dominated by bad or uncertain steps, or shorter than the
    /// minimum length, are dropped. Output is ordered by track id.
    pub fn finalize(self) -> Vec<Track> {
        let Tracker {
            params,
            active,
            mut finished,
            ..
        } = self;
        for mut t in active {
            t.trim_trailing_predictions();
            finished.push(t);
        }
        finished.retain(|t| {
            !t.steps.is_empty()
                && t.bad_fraction() <= params.max_bad_fraction
                && t.steps.len() >= params.min_track_length
        });
        finished.sort_by_key(|t| t.id);
        finished
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::DetectionRef;
    use crate::io::Source;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn obj(b: BoundingBox) -> FusedObject {
        FusedObject {
            bbox: b,
            label: Label::class("car"),
            confidence: 0.9,
            histogram: Some(ColourHistogram::new(vec![1.0, 3.0, 0.0]).unwrap()),
            provenance: vec![DetectionRef {
                source: Source::Imot,
                index: 0,
            }],
        }
    }

    fn params() -> TrackerParams {
        TrackerParams::new(640.0, 480.0)
    }

    fn track_with_states(states: &[StepState]) -> Track {
        let b = bb(100.0, 100.0, 140.0, 130.0);
        let mut t = init_track(&obj(b), 0, 1, MotionParams::default());
        for (k, s) in states.iter().enumerate() {
            t.steps.push(TrackStep {
                frame: k as u64 + 1,
                bbox: b,
                state: *s,
                label: Label::class("car"),
                confidence: 0.9,
                histogram: None,
            });
        }
        t
    }

    #[test]
    fn init_gives_single_observed_step() {
        let t = init_track(
            &obj(bb(0.0, 0.0, 10.0, 10.0)),
            5,
            3,
            MotionParams::default(),
        );
        assert_eq!(t.len(), 1);
        assert_eq!(t.steps[0].state, StepState::Detection);
        assert_eq!(t.steps[0].frame, 5);
        assert_eq!(t.predict(640.0, 480.0), bb(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn two_births_get_distinct_ids() {
        let mut tr = Tracker::new(params());
        let out = tr
            .step_frame(
                0,
                &[
                    obj(bb(0.0, 0.0, 20.0, 20.0)),
                    obj(bb(300.0, 300.0, 330.0, 330.0)),
                ],
            )
            .unwrap();
        assert_eq!(out.born, vec![1, 2]);
    }

    #[test]
    fn resolve_unmatched_branches() {
        let prev = bb(100.0, 100.0, 140.0, 130.0);
        let near = bb(102.0, 100.0, 142.0, 130.0);
        let far = bb(300.0, 300.0, 340.0, 330.0);
        let t = track_with_states(&[]);
        let s = resolve_unmatched(&t, near, 0.01);
        assert_eq!((s.bbox, s.state), (near, StepState::GoodPrediction));
        let s = resolve_unmatched(&t, far, 0.01);
        assert_eq!((s.bbox, s.state), (prev, StepState::BadPrediction));
        let t = track_with_states(&[StepState::UncertainPrediction]);
        let s = resolve_unmatched(&t, far, 0.01);
        assert_eq!((s.bbox, s.state), (far, StepState::UncertainPrediction));
        let t = track_with_states(&[StepState::BadPrediction]);
        let s = resolve_unmatched(&t, near, 0.01);
        assert_eq!((s.bbox, s.state), (near, StepState::UncertainPrediction));
        assert_eq!(s.frame, 2);
    }

    #[test]
    fn empty_frames_are_a_no_op() {
        let mut tr = Tracker::new(params());
        let out = tr.step_frame(0, &[]).unwrap();
        assert_eq!(
            out,
            FrameOutput {
                frame: 0,
                ..Default::default()
            }
        );
        assert!(tr.active().is_empty());
        assert!(tr.finalize().is_empty());
    }

    #[test]
    fn identical_detection_is_matched() {
        let mut tr = Tracker::new(params());
        let b = bb(50.0, 50.0, 90.0, 80.0);
        tr.step_frame(0, &[obj(b)]).unwrap();
        tr.step_frame(1, &[]).unwrap();
        assert_eq!(tr.active()[0].consecutive_misses, 1);
        let out = tr.step_frame(2, &[obj(b)]).unwrap();
        assert_eq!(out.matched, vec![(1, 0)]);
        let t = &tr.active()[0];
        assert_eq!(t.consecutive_misses, 0);
        assert_eq!(t.last_step().state, StepState::Detection);
    }

    #[test]
    fn frames_must_be_consecutive() {
        let mut tr = Tracker::new(params());
        tr.step_frame(3, &[]).unwrap();
        assert!(matches!(
            tr.step_frame(3, &[]),
            Err(Error::FrameOrder {
                expected: 4,
                got: 3
            })
        ));
        assert!(tr.step_frame(6, &[]).is_err());
    }

    #[test]
    fn unseen_track_terminates_after_t_n_misses() {
        // Observed for frames 0..5, then missing for the remaining 15 of a
        // 20-frame sequence: the 10th miss (frame 14) terminates the track
        // and strips the 10 predicted steps.
        let mut tr = Tracker::new(params());
        let b = bb(200.0, 200.0, 240.0, 230.0);
        for f in 0..20 {
            let dets = if f < 5 { vec![obj(b)] } else { vec![] };
            let out = tr.step_frame(f, &dets).unwrap();
            if f == 14 {
                assert_eq!(out.terminated, vec![1]);
            } else {
                assert!(out.terminated.is_empty());
            }
        }
        let tracks = tr.finalize();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 5);
        assert!(tracks[0].steps.iter().all(|s| s.state.is_detection()));
    }

    #[test]
    fn finalize_examples() {
        let mut tr = Tracker::new(params());
        tr.finished
            .push(track_with_states(&[StepState::Detection; 9]));
        let mut bad = track_with_states(&[
            StepState::BadPrediction,
            StepState::UncertainPrediction,
            StepState::UncertainPrediction,
            StepState::BadPrediction,
            StepState::UncertainPrediction,
            StepState::UncertainPrediction,
            StepState::Detection,
            StepState::Detection,
            StepState::Detection,
        ]);
        bad.id = 2;
        tr.finished.push(bad);
        let mut open = track_with_states(&[
            StepState::Detection,
            StepState::GoodPrediction,
            StepState::GoodPrediction,
            StepState::GoodPrediction,
        ]);
        open.id = 3;
        tr.active.push(open);
        let out = tr.finalize();
        assert_eq!(out.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(out[0].len(), 10);
        assert_eq!(out[1].len(), 2);
    }

    #[test]
    fn min_track_length_drops_short_tracks() {
        let mut p = params();
        p.min_track_length = 3;
        let mut tr = Tracker::new(p);
        tr.finished.push(track_with_states(&[StepState::Detection]));
        let mut long = track_with_states(&[StepState::Detection; 2]);
        long.id = 2;
        tr.finished.push(long);
        let out = tr.finalize();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 2);
    }

    #[test]
    fn appearance_comes_from_latest_observation() {
        let mut t = track_with_states(&[StepState::Detection, StepState::GoodPrediction]);
        t.steps[1].label = Label::class("bus");
        t.steps[1].histogram = Some(ColourHistogram::new(vec![5.0]).unwrap());
        assert_eq!(t.appearance().frame, 1);
        assert_eq!(t.appearance().label, Label::class("bus"));
    }
}
