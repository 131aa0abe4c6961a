//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use fusetrack::association::{final_cost, label_cost, spatial_cost, CostWeights};
use fusetrack::config::RunConfig;
use fusetrack::evaluation::{evaluate, MotReport};
use fusetrack::fusion::{fuse_frame, DetectionRef, FusedObject, FusionParams};
use fusetrack::geometry::{
    bhattacharyya_similarity, histogram_from_region, iou, BoundingBox, ColourHistogram,
};
use fusetrack::hungarian::{solve, Matrix};
use fusetrack::io::{track_records, Detection, FrameStore, GroundTruthEntry, Label, TrackRecord};
use fusetrack::motion::MotionParams;
use fusetrack::pipeline::{track_streams, Streams};
use fusetrack::synth::{generate, ScenarioSpec, SynthOutput, FRAME_PATTERN};
use fusetrack::tracker::{init_track, resolve_unmatched, StepState, Track, TrackStep};

/// Nearest f64 to `r`; exact division of integers below 2^53 rounds correctly.
fn rational_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

type Detail = String;
type Criterion = (&'static str, fn() -> Detail);

fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn within(start: Instant, limit: Duration) -> Duration {
    let took = start.elapsed();
    assert!(took < limit, "took {took:?}, limit {limit:?}");
    took
}

// Pixel-raster oracle: count unit cells inside one or both boxes.
fn raster_counts(a: [i64; 4], b: [i64; 4]) -> (i64, i64) {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut both, mut either) = (0, 0);
    for y in 0..64 {
        for x in 0..64 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            both += (ia && ib) as i64;
            either += (ia || ib) as i64;
        }
    }
    (both, either)
}

fn criterion_1() -> Detail {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random_box = |rng: &mut ChaCha8Rng| {
        let x0 = rng.gen_range(0..63);
        let y0 = rng.gen_range(0..63);
        [
            x0,
            y0,
            rng.gen_range(x0 + 1..=64),
            rng.gen_range(y0 + 1..=64),
        ]
    };
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let (both, either) = raster_counts(a, b);
        let fa = bb(a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64);
        let fb = bb(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64);
        assert_eq!(fa.intersection_area(&fb), both as f64);
        assert_eq!(fa.union_area(&fb), either as f64);
        let expected = Ratio::new(both, either);
        assert_eq!(iou(&fa, &fb), rational_to_f64(expected), "{a:?} {b:?}");
        overlapping += (both > 0) as usize;
    }
    let took = within(start, Duration::from_secs(5));
    format!("1000 pairs, {overlapping} overlapping, {took:.2?}")
}

fn criterion_2() -> Detail {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random_hist = |rng: &mut ChaCha8Rng| {
        let mut bins: Vec<f64> = (0..256)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..1000.0)
                }
            })
            .collect();
        bins[rng.gen_range(0..256)] += 1.0;
        ColourHistogram::new(bins).unwrap()
    };
    let mut worst_sym: f64 = 0.0;
    for _ in 0..1000 {
        let g = random_hist(&mut rng);
        let h = random_hist(&mut rng);
        let s = bhattacharyya_similarity(&g, &h).unwrap();
        assert!((0.0..=1.0).contains(&s), "{s}");
        let sym = (s - bhattacharyya_similarity(&h, &g).unwrap()).abs();
        assert!(sym <= 1e-12);
        worst_sym = worst_sym.max(sym);
        assert!(bhattacharyya_similarity(&g, &g).unwrap() <= 1e-9);
        let k = rng.gen_range(0.01..100.0);
        let scaled = ColourHistogram::new(g.bins().iter().map(|v| v * k).collect()).unwrap();
        assert!((bhattacharyya_similarity(&scaled, &h).unwrap() - s).abs() <= 1e-9);
    }
    let worked = bhattacharyya_similarity(
        &ColourHistogram::new(vec![1.0, 0.0]).unwrap(),
        &ColourHistogram::new(vec![0.5, 0.5]).unwrap(),
    )
    .unwrap();
    assert!((worked - (1.0 - 0.5f64.sqrt()).sqrt()).abs() <= 1e-12);
    format!("1000 pairs, worst asymmetry {worst_sym:.1e}, worked value {worked:.12}")
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_3() -> Detail {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for n in 1..=7 {
        let perms = permutations(n);
        for _ in 0..200 {
            // dyadic costs keep every sum exact
            let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(0..65536) as f64 / 65536.0);
            let brute = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, &c)| m.get(r, c)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let assignment = solve(&m, 1.0);
            let mut used = vec![false; n];
            let mut total = 0.0;
            for (r, c) in assignment.iter().enumerate() {
                let c = c.expect("square matrices assign every row");
                assert!(!used[c]);
                used[c] = true;
                total += m.get(r, c);
            }
            assert_eq!(total, brute, "n = {n}");
            checked += 1;
        }
    }
    let took = within(start, Duration::from_secs(10));
    format!("{checked} matrices, {took:.2?}")
}

fn criterion_4() -> Detail {
    let d = bb(0.0, 0.0, 10.0, 10.0);
    let t = bb(4.0, 0.0, 14.0, 10.0);
    let c_d = spatial_cost(&d, &t, 0.5, 100.0, 100.0);
    assert!((c_d - 0.04).abs() <= 1e-12, "{c_d}");
    let car = Label::class("car");
    let c_l = label_cost(&car, 0.8, &car, 0.6);
    assert!((c_l - 0.3).abs() <= 1e-12, "{c_l}");
    assert_eq!(label_cost(&car, 0.8, &Label::class("bus"), 0.6), 1.0);
    let w = CostWeights::new(0.6, 0.3, 0.1).unwrap();
    let c = final_cost(0.04, 0.2, 0.3, &w);
    assert!((c - 0.114).abs() <= 1e-12, "{c}");
    format!("C_d = {c_d:.12}, C_l = {c_l:.12}, C = {c:.12}")
}

fn criterion_5() -> Detail {
    // one object at (20,20)-(60,50) on a black frame
    let mut img = RgbImage::new(100, 100);
    let mut paint = |y_split: u32, top: u8, bottom: u8| {
        for y in 20..50 {
            for x in 20..60 {
                let v = if y < y_split { top } else { bottom };
                img.put_pixel(x, y, Rgb([v, v, v]));
            }
        }
        img.clone()
    };
    let same = paint(35, 200, 200);
    let split = paint(35, 200, 50);
    let params = FusionParams::default();
    let fragments = [
        Detection::imot(0, bb(20.0, 20.0, 60.0, 35.0)),
        Detection::imot(0, bb(20.0, 35.0, 60.0, 50.0)),
    ];
    let object = bb(20.0, 20.0, 60.0, 50.0);
    let detector = [Detection::detector(0, object, "car", 0.9)];
    let hist = |img: &RgbImage, b: &BoundingBox| histogram_from_region(img, b, 256).unwrap();

    let merged = fuse_frame(&fragments, &detector, &params, Some(&same)).unwrap();
    assert_eq!(
        merged,
        vec![FusedObject {
            bbox: object,
            label: Label::class("car"),
            confidence: 0.9,
            histogram: Some(hist(&same, &object)),
            provenance: vec![
                DetectionRef::detector(0),
                DetectionRef::imot(0),
                DetectionRef::imot(1)
            ],
        }]
    );

    let kept = fuse_frame(&fragments, &detector, &params, Some(&split)).unwrap();
    let expected: Vec<FusedObject> = fragments
        .iter()
        .enumerate()
        .map(|(i, f)| FusedObject {
            bbox: f.bbox,
            label: Label::class("car"),
            confidence: 0.9,
            histogram: Some(hist(&split, &f.bbox)),
            provenance: vec![DetectionRef::imot(i)],
        })
        .collect();
    assert_eq!(kept, expected);

    let lone = [Detection::imot(0, bb(70.0, 70.0, 90.0, 90.0))];
    let unpaired = fuse_frame(&lone, &detector, &params, Some(&same)).unwrap();
    assert_eq!(
        unpaired,
        vec![FusedObject {
            bbox: lone[0].bbox,
            label: Label::Dummy,
            confidence: 0.5,
            histogram: Some(hist(&same, &lone[0].bbox)),
            provenance: vec![DetectionRef::imot(0)],
        }]
    );
    "same colour merged into the detector box, distinct colours kept, unpaired box unlabelled"
        .into()
}

fn criterion_6() -> Detail {
    let prev = bb(100.0, 100.0, 140.0, 130.0);
    let near = bb(102.0, 100.0, 142.0, 130.0);
    let far = bb(300.0, 300.0, 340.0, 330.0);
    let start = FusedObject {
        bbox: prev,
        label: Label::class("car"),
        confidence: 0.9,
        histogram: None,
        provenance: vec![],
    };
    let track_ending_in = |state: StepState| -> Track {
        let mut t = init_track(&start, 0, 1, MotionParams::default());
        if state != StepState::Detection {
            t.steps.push(TrackStep {
                frame: 1,
                state,
                ..t.steps[0].clone()
            });
        }
        t
    };
    use StepState::*;
    // (previous state, prediction overlaps previous box) -> (prediction used, new state)
    let table = [
        (Detection, true, true, GoodPrediction),
        (Detection, false, false, BadPrediction),
        (GoodPrediction, true, true, GoodPrediction),
        (GoodPrediction, false, false, BadPrediction),
        (BadPrediction, true, true, UncertainPrediction),
        (BadPrediction, false, true, UncertainPrediction),
        (UncertainPrediction, true, true, UncertainPrediction),
        (UncertainPrediction, false, true, UncertainPrediction),
    ];
    for (prev_state, overlaps, uses_prediction, new_state) in table {
        let track = track_ending_in(prev_state);
        let prediction = if overlaps { near } else { far };
        assert_eq!(iou(&prediction, &prev) >= 0.01, overlaps);
        let step = resolve_unmatched(&track, prediction, 0.01);
        let expected_box = if uses_prediction { prediction } else { prev };
        assert_eq!(
            (step.bbox, step.state),
            (expected_box, new_state),
            "previous {prev_state}, overlap {overlaps}"
        );
        assert_eq!(step.frame, track.last_step().frame + 1);
    }
    format!("{} branch cases", table.len())
}

fn gt(frame: u64, id: u64, b: BoundingBox) -> GroundTruthEntry {
    GroundTruthEntry {
        frame,
        object_id: id,
        bbox: b,
    }
}

fn rec(track: u64, frame: u64, b: BoundingBox) -> TrackRecord {
    TrackRecord {
        track,
        frame,
        bbox: b,
        state: StepState::Detection,
    }
}

fn criterion_7() -> Detail {
    let at = |f: u64| bb(10.0 * f as f64, 0.0, 10.0 * f as f64 + 20.0, 20.0);
    let truth: Vec<_> = (0..10).map(|f| gt(f, 1, at(f))).collect();

    let identity: Vec<_> = (0..10).map(|f| rec(1, f, at(f))).collect();
    let r = evaluate(&identity, &truth, 0.3).unwrap();
    assert_eq!(
        r,
        MotReport {
            gt_instances: 10,
            correct: 10,
            misses: 0,
            false_positives: 0,
            mismatches: 0,
            motp: 1.0,
            mota: 1.0
        }
    );

    let gaps: Vec<_> = (0..10)
        .filter(|f| *f != 3 && *f != 7)
        .map(|f| rec(1, f, at(f)))
        .collect();
    let r = evaluate(&gaps, &truth, 0.3).unwrap();
    assert_eq!((r.misses, r.mota), (2, 0.8));

    let switch: Vec<_> = (0..10)
        .map(|f| rec(if f < 5 { 1 } else { 2 }, f, at(f)))
        .collect();
    let r = evaluate(&switch, &truth, 0.3).unwrap();
    assert_eq!((r.mismatches, r.mota), (1, 0.9));
    "identity 1.0/1.0, two misses 0.8, one switch 0.9".into()
}

struct Scene {
    _dir: tempfile::TempDir,
    out: SynthOutput,
    frames: FrameStore,
}

impl Scene {
    fn new(spec: serde_json::Value) -> Scene {
        let spec: ScenarioSpec = serde_json::from_value(spec).unwrap();
        let out = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_to_dir(dir.path()).unwrap();
        let pattern = dir.path().join(FRAME_PATTERN);
        let frames = FrameStore::open(pattern.to_str().unwrap(), 0).unwrap();
        Scene {
            _dir: dir,
            out,
            frames,
        }
    }

    fn track(&self, config: &RunConfig) -> Vec<Track> {
        let imot = self.out.imot_by_frame();
        let detector = self.out.detector_by_frame();
        let streams = Streams {
            imot: &imot,
            detector: &detector,
            frames: Some(&self.frames),
        };
        track_streams(&streams, config).unwrap()
    }
}

fn crossing_scene() -> serde_json::Value {
    // three paths that cross, each crossing point visited at different times
    json!({
        "frames": 100, "width": 320, "height": 240, "distinct_colours": true,
        "objects": [
            {"id": 1, "label": "person", "size": [30, 40],
             "waypoints": [{"frame": 0, "x": 20, "y": 80}, {"frame": 99, "x": 300, "y": 80}]},
            {"id": 2, "label": "car", "size": [40, 30],
             "waypoints": [{"frame": 0, "x": 200, "y": 20}, {"frame": 99, "x": 200, "y": 220}]},
            {"id": 3, "label": "truck", "size": [44, 32],
             "waypoints": [{"frame": 0, "x": 300, "y": 220}, {"frame": 99, "x": 40, "y": 20}]}
        ]
    })
}

fn criterion_8() -> Detail {
    let start = Instant::now();
    let scene = Scene::new(crossing_scene());
    let tracks = scene.track(&RunConfig::default());
    let r = evaluate(&track_records(&tracks), &scene.out.ground_truth, 0.3).unwrap();
    assert_eq!(r.mota, 1.0, "{r:?}");
    assert_eq!(r.mismatches, 0);
    assert!(r.motp >= 0.99, "{r:?}");
    let took = within(start, Duration::from_secs(30));
    format!(
        "{} tracks, MOTA {}, MOTP {:.4}, {took:.2?}",
        tracks.len(),
        r.mota,
        r.motp
    )
}

fn criterion_9() -> Detail {
    let spec = |mod_miss: f64| {
        json!({
            "frames": 50, "width": 320, "height": 240, "distinct_colours": true,
            "objects": [
                {"id": 1, "label": "car", "size": [40, 30], "fragment_prob": 1.0,
                 "waypoints": [{"frame": 0, "x": 60, "y": 100}, {"frame": 49, "x": 158, "y": 100}]},
                {"id": 2, "label": "person", "size": [20, 40],
                 "waypoints": [{"frame": 0, "x": 250, "y": 180}, {"frame": 49, "x": 250, "y": 120}]}
            ],
            "imot": {"fragment_count": 2},
            "mod": {"miss_prob": mod_miss}
        })
    };
    let params = FusionParams::default();
    let sorted = |mut v: Vec<[f64; 4]>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let fused_boxes = |out: &SynthOutput, frame: u64| -> Vec<FusedObject> {
        let imot = out.imot_by_frame().remove(&frame).unwrap_or_default();
        let det = out.detector_by_frame().remove(&frame).unwrap_or_default();
        fuse_frame(&imot, &det, &params, Some(&out.frames[frame as usize])).unwrap()
    };

    let with_mod = generate(&serde_json::from_value(spec(0.0)).unwrap()).unwrap();
    for frame in 0..50 {
        let fused = fused_boxes(&with_mod, frame);
        let truth: Vec<_> = with_mod
            .ground_truth
            .iter()
            .filter(|g| g.frame == frame)
            .collect();
        let fragments = with_mod.imot.iter().filter(|d| d.frame == frame).count();
        assert_eq!(fragments, 3, "frame {frame}: the car is split in two");
        assert_eq!(
            sorted(fused.iter().map(|o| o.bbox.to_array()).collect()),
            sorted(truth.iter().map(|g| g.bbox.to_array()).collect()),
            "frame {frame}"
        );
        let car = truth.iter().find(|g| g.object_id == 1).unwrap();
        let on_car: Vec<_> = fused
            .iter()
            .filter(|o| iou(&o.bbox, &car.bbox) > 0.0)
            .collect();
        assert_eq!(on_car.len(), 1);
        assert_eq!(on_car[0].label, Label::class("car"));
    }

    let without_mod = generate(&serde_json::from_value(spec(1.0)).unwrap()).unwrap();
    assert!(without_mod.detector.is_empty());
    for frame in 0..50 {
        let fused = fused_boxes(&without_mod, frame);
        let imot: Vec<_> = without_mod
            .imot
            .iter()
            .filter(|d| d.frame == frame)
            .collect();
        assert_eq!(
            sorted(fused.iter().map(|o| o.bbox.to_array()).collect()),
            sorted(imot.iter().map(|d| d.bbox.to_array()).collect()),
            "frame {frame}"
        );
        assert!(fused.iter().all(|o| o.label.is_dummy()));
    }
    "50 frames merged back to one box; fragments pass through without detector boxes".into()
}

fn criterion_10() -> Detail {
    let scene = Scene::new(json!({
        "frames": 60, "width": 320, "height": 240, "distinct_colours": true,
        "objects": [
            {"id": 1, "label": "car", "size": [40, 30], "occlusions": [[30, 39]],
             "waypoints": [{"frame": 0, "x": 40, "y": 100}, {"frame": 59, "x": 217, "y": 100}]}
        ]
    }));

    let bridged = scene.track(&RunConfig {
        t_n: 11,
        ..Default::default()
    });
    assert_eq!(bridged.len(), 1, "{bridged:?}");
    let t = &bridged[0];
    assert_eq!(t.id, 1);
    assert_eq!(
        t.steps.iter().map(|s| s.frame).collect::<Vec<_>>(),
        (0..60).collect::<Vec<_>>()
    );
    for s in &t.steps {
        let expected = if (30..=39).contains(&s.frame) {
            StepState::GoodPrediction
        } else {
            StepState::Detection
        };
        assert_eq!(s.state, expected, "frame {}", s.frame);
    }

    let split = scene.track(&RunConfig {
        t_n: 5,
        ..Default::default()
    });
    assert_eq!(split.len(), 2, "{split:?}");
    let first = &split[0];
    assert_eq!(first.len(), 30, "five predictions after frame 29 removed");
    assert_eq!(first.last_step().frame, 29);
    assert!(first.steps.iter().all(|s| s.state.is_detection()));
    assert_ne!(split[1].id, first.id);
    assert_eq!(split[1].steps[0].frame, 40);
    "T_n = 11 bridges frames 30-39 with GP; T_n = 5 ends the track at frame 29".into()
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_fusetrack"))
        .args(args)
        .env("FUSETRACK_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "fusetrack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn criterion_11() -> Detail {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = json!({
        "frames": 100, "width": 320, "height": 240,
        "objects": [
            {"id": 1, "label": "car", "size": [40, 30], "colour": [180, 180, 180],
             "waypoints": [{"frame": 0, "x": 30, "y": 100}, {"frame": 99, "x": 290, "y": 100}]},
            {"id": 2, "label": "person", "size": [40, 30], "colour": [180, 180, 180],
             "waypoints": [{"frame": 0, "x": 290, "y": 125}, {"frame": 99, "x": 30, "y": 125}]}
        ]
    });
    std::fs::write(d.join("spec.json"), spec.to_string()).unwrap();
    let p = |name: &str| d.join(name).to_str().unwrap().to_owned();
    run_cli(&["synth", "--spec", &p("spec.json"), "--out", &p("scene")]);
    let table = run_cli(&[
        "ablate",
        "--imot",
        &p("scene/imot.jsonl"),
        "--mod",
        &p("scene/mod.jsonl"),
        "--frames",
        &p("scene/frames/%06d.png"),
        "--gt",
        &p("scene/gt.jsonl"),
    ]);
    let rows: Vec<Vec<&str>> = table
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split("  ")
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .collect()
        })
        .collect();
    assert_eq!(
        rows[0],
        [
            "Cost",
            "GT",
            "Correct Tracks",
            "Misses",
            "FP",
            "Mismatches",
            "MOTP",
            "MOTA"
        ],
        "{table}"
    );
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    assert_eq!(names, ["Distance", "Colour", "Label", "All"]);
    assert!(rows[1..].iter().all(|r| r.len() == 8));
    let mismatches = |name: &str| -> u64 {
        rows.iter().find(|r| r[0] == name).unwrap()[5]
            .parse()
            .unwrap()
    };
    let (label, all) = (mismatches("Label"), mismatches("All"));
    assert!(label >= all, "label-only {label} < all-cost {all}\n{table}");
    format!("4 configurations; mismatches label-only {label}, all-cost {all}")
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("IoU equals raster count ratio", criterion_1),
        ("Bhattacharyya similarity properties", criterion_2),
        ("Hungarian matches brute force", criterion_3),
        ("cost formula examples", criterion_4),
        ("fusion traces", criterion_5),
        ("unmatched-track branch table", criterion_6),
        ("CLEAR MOT hand scenarios", criterion_7),
        ("noise-free crossing scene", criterion_8),
        ("fragmentation recovery", criterion_9),
        ("occlusion bridging and termination", criterion_10),
        ("ablation table", criterion_11),
    ];
    let mut failures = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", n + 1),
            Err(payload) => {
                failures += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} FAIL  {name}: {msg}", n + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
