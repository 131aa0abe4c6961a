//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use image::{Rgb, RgbImage};
use log::info;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::fusion::FusedObject;
use crate::io::{
    read_detections, read_ground_truth, read_tracks, write_detections, write_tracks, FrameStore,
    TrackRecord,
};
use crate::pipeline::{ablate, fuse_streams, track_streams, AblationTable, CostSelection, Streams};
use crate::synth::{generate, ScenarioSpec};
use crate::tracker::StepState;

const PROVENANCE_NOTE: &str = "Defaults marked [published] are the values used in the \
original experiments for this method; defaults marked [project] are choices made by this \
implementation where no value was given.";

#[derive(Debug, Parser)]
#[command(
    name = "fusetrack",
    version,
    about = "Offline multi-object tracking by fusing motion and object detections"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse IMOT and MOD detections into one detection stream.
    Fuse(FuseArgs),
    /// Fuse and track, writing per-frame track records.
    Track(TrackArgs),
    /// Score tracks against ground truth with CLEAR MOT metrics.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scenario with ground truth and noisy detections.
    Synth(SynthArgs),
    /// Draw tracks onto frame images.
    Overlay(OverlayArgs),
    /// Run the tracker under each association-cost configuration and score each.
    Ablate(AblateArgs),
}

/// Input streams shared by fuse, track and ablate.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// IMOT detections (JSON lines).
    #[arg(long)]
    pub imot: Option<PathBuf>,
    /// MOD detections (JSON lines).
    #[arg(long = "mod")]
    pub detector: Option<PathBuf>,
    /// Frame image pattern such as `frames/%06d.png`; needed for colour cues
    /// unless the detections carry histograms.
    #[arg(long)]
    pub frames: Option<String>,
    /// Image index that holds frame 0.
    #[arg(long)]
    pub frame_start: Option<u64>,
    /// Frame width in pixels when no images are given.
    #[arg(long)]
    pub frame_width: Option<u32>,
    /// Frame height in pixels when no images are given.
    #[arg(long)]
    pub frame_height: Option<u32>,
}

#[derive(Debug, Args)]
#[command(after_help = PROVENANCE_NOTE)]
pub struct FusionArgs {
    /// IMOT/MOD pairing IoU threshold [published: 0.05]
    #[arg(long)]
    pub t_o: Option<f64>,
    /// Fragment merge IoU threshold [published: 0.5]
    #[arg(long)]
    pub t_m: Option<f64>,
    /// Fragment merge colour-dissimilarity threshold [published: 0.5]
    #[arg(long)]
    pub t_c: Option<f64>,
    /// Minimum IMOT box area in square pixels [published: 64]
    #[arg(long)]
    pub min_area: Option<f64>,
    /// Luminance histogram bins [project: 256]
    #[arg(long)]
    pub histogram_bins: Option<usize>,
    /// Confidence given to unlabelled objects [project: 0.5]
    #[arg(long)]
    pub dummy_confidence: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackingArgs {
    /// Spatial cost distance scale [published: 0.5]
    #[arg(long)]
    pub t_d: Option<f64>,
    /// Good-prediction overlap threshold [published: 0.01]
    #[arg(long)]
    pub t_p: Option<f64>,
    /// Unmatched frames before termination [published: 10]
    #[arg(long)]
    pub t_n: Option<u32>,
    /// Spatial cost weight [published: 0.6]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Colour cost weight [published: 0.3]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Label cost weight [published: 0.1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Reject assignments costing more than this [project: 0.9]
    #[arg(long)]
    pub gate: Option<f64>,
    /// Drop tracks with a larger share of bad predictions [project: 0.5]
    #[arg(long)]
    pub max_bad_fraction: Option<f64>,
    /// Drop tracks with fewer steps [project: 1]
    #[arg(long)]
    pub min_track_length: Option<usize>,
    /// Kalman measurement noise, pixels [project: 1]
    #[arg(long)]
    pub measurement_sigma: Option<f64>,
    /// Kalman centre acceleration noise [project: 1]
    #[arg(long)]
    pub position_process_sigma: Option<f64>,
    /// Kalman size acceleration noise [project: 0.1]
    #[arg(long)]
    pub size_process_sigma: Option<f64>,
    /// Prior velocity spread of new tracks [project: 10]
    #[arg(long)]
    pub initial_velocity_sigma: Option<f64>,
}

#[derive(Debug, Args)]
#[command(after_help = PROVENANCE_NOTE)]
pub struct FuseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Fused detections output (JSON lines).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = PROVENANCE_NOTE)]
pub struct TrackArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub tracking: TrackingArgs,
    /// Track records output (JSON lines).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write the effective configuration here.
    #[arg(long)]
    pub dump_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = PROVENANCE_NOTE)]
pub struct EvaluateArgs {
    /// Track records (JSON lines).
    #[arg(long)]
    pub tracks: PathBuf,
    /// Ground truth (JSON lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Minimum IoU for a correspondence [published: 0.3]
    #[arg(long, default_value_t = 0.3)]
    pub overlap: f64,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Track records (JSON lines).
    #[arg(long)]
    pub tracks: PathBuf,
    /// Frame image pattern such as `frames/%06d.png`.
    #[arg(long)]
    pub frames: String,
    /// Image index that holds frame 0.
    #[arg(long, default_value_t = 0)]
    pub frame_start: u64,
    /// Output directory for annotated frames.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(after_help = PROVENANCE_NOTE)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub tracking: TrackingArgs,
    /// Ground truth (JSON lines).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Evaluation IoU threshold [published: 0.3]
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Cost configurations to run, comma separated: distance, colour, label, all.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "distance,colour,label,all"
    )]
    pub costs: Vec<String>,
}

macro_rules! override_fields {
    ($cfg:ident, $src:expr, $($field:ident),+ $(,)?) => {
        $( if let Some(v) = $src.$field.clone() { $cfg.$field = v.into(); } )+
    };
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.imot {
            cfg.imot = Some(p.clone());
        }
        if let Some(p) = &self.detector {
            cfg.detector = Some(p.clone());
        }
        if let Some(p) = &self.frames {
            cfg.frames = Some(p.clone());
        }
        if let Some(v) = self.frame_start {
            cfg.frame_start = v;
        }
        if let Some(v) = self.frame_width {
            cfg.frame_width = Some(v);
        }
        if let Some(v) = self.frame_height {
            cfg.frame_height = Some(v);
        }
    }
}

impl FusionArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_fields!(
            cfg,
            self,
            t_o,
            t_m,
            t_c,
            min_area,
            histogram_bins,
            dummy_confidence
        );
    }
}

impl TrackingArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_fields!(
            cfg,
            self,
            t_d,
            t_p,
            t_n,
            alpha,
            beta,
            gamma,
            gate,
            max_bad_fraction,
            min_track_length,
            measurement_sigma,
            position_process_sigma,
            size_process_sigma,
            initial_velocity_sigma,
        );
    }
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("missing required input {flag}")))
}

/// Detection streams and frames named by a configuration.
struct Inputs {
    imot: crate::io::DetectionsByFrame,
    detector: crate::io::DetectionsByFrame,
    frames: Option<FrameStore>,
}

impl Inputs {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let imot = read_detections(required(&cfg.imot, "--imot")?)?;
        let detector = read_detections(required(&cfg.detector, "--mod")?)?;
        let frames = cfg
            .frames
            .as_deref()
            .map(|p| FrameStore::open(p, cfg.frame_start))
            .transpose()?;
        info!(
            "loaded {} IMOT and {} MOD detections{}",
            imot.values().map(Vec::len).sum::<usize>(),
            detector.values().map(Vec::len).sum::<usize>(),
            frames
                .as_ref()
                .map(|s| format!(", {} frames of {}x{}", s.len(), s.width(), s.height()))
                .unwrap_or_default()
        );
        Ok(Self {
            imot,
            detector,
            frames,
        })
    }

    fn streams(&self) -> Streams<'_> {
        Streams {
            imot: &self.imot,
            detector: &self.detector,
            frames: self.frames.as_ref(),
        }
    }
}

fn run_fuse(args: &FuseArgs) -> Result<()> {
    let mut cfg = load_config(args.input.config.as_deref())?;
    args.input.apply(&mut cfg);
    args.fusion.apply(&mut cfg);
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    let output = required(&cfg.output, "--output")?.clone();
    let inputs = Inputs::load(&cfg)?;
    let fused = fuse_streams(&inputs.streams(), &cfg.fusion())?;
    let detections: Vec<_> = fused
        .iter()
        .flat_map(|(&f, objs)| objs.iter().map(move |o: &FusedObject| o.to_detection(f)))
        .collect();
    write_detections(&output, &detections)?;
    println!(
        "fused {} objects over {} frames into {}",
        detections.len(),
        fused.len(),
        output.display()
    );
    Ok(())
}

fn run_track(args: &TrackArgs) -> Result<()> {
    let mut cfg = load_config(args.input.config.as_deref())?;
    args.input.apply(&mut cfg);
    args.fusion.apply(&mut cfg);
    args.tracking.apply(&mut cfg);
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    let output = required(&cfg.output, "--output")?.clone();
    if let Some(p) = &args.dump_config {
        fs::write(p, cfg.to_json()).map_err(|e| Error::io(p, e))?;
    }
    let inputs = Inputs::load(&cfg)?;
    let tracks = track_streams(&inputs.streams(), &cfg)?;
    write_tracks(&tracks, &output)?;
    let steps: usize = tracks.iter().map(|t| t.len()).sum();
    let detections: usize = tracks
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|s| s.state.is_detection())
        .count();
    println!(
        "{} tracks, {steps} steps ({detections} detections, {} predictions) written to {}",
        tracks.len(),
        steps - detections,
        output.display()
    );
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let tracks = read_tracks(&args.tracks)?;
    let gt = read_ground_truth(&args.gt)?;
    let report = evaluate(&tracks, &gt, args.overlap)?;
    let json = serde_json::to_string(&report).expect("report serializes");
    println!("{report}");
    println!("{json}");
    if let Some(p) = &args.json {
        fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = ScenarioSpec::from_file(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = generate(&spec)?;
    out.write_to_dir(&args.out)?;
    println!(
        "wrote {} frames, {} ground-truth boxes, {} IMOT and {} MOD detections to {}",
        out.frames.len(),
        out.ground_truth.len(),
        out.imot.len(),
        out.detector.len(),
        args.out.display()
    );
    Ok(())
}

fn run_overlay(args: &OverlayArgs) -> Result<()> {
    let records = read_tracks(&args.tracks)?;
    let store = FrameStore::open(&args.frames, args.frame_start)?;
    if let Some(r) = records.iter().find(|r| r.frame >= store.len()) {
        return Err(Error::InvalidInput(format!(
            "track {} has a box in frame {} but only {} frames exist",
            r.track,
            r.frame,
            store.len()
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for frame in 0..store.len() {
        let mut img = store.load(frame)?;
        for r in records.iter().filter(|r| r.frame == frame) {
            draw_record(&mut img, r);
        }
        let path = args.out.join(format!("{frame:06}.png"));
        img.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
    }
    println!("wrote {} frames to {}", store.len(), args.out.display());
    Ok(())
}

fn run_ablate(args: &AblateArgs) -> Result<()> {
    let mut cfg = load_config(args.input.config.as_deref())?;
    args.input.apply(&mut cfg);
    args.fusion.apply(&mut cfg);
    args.tracking.apply(&mut cfg);
    if let Some(p) = &args.gt {
        cfg.ground_truth = Some(p.clone());
    }
    if let Some(v) = args.overlap {
        cfg.overlap = v;
    }
    cfg.validate()?;
    let selections = args
        .costs
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<CostSelection>>>()?;
    let gt = read_ground_truth(required(&cfg.ground_truth, "--gt")?)?;
    let inputs = Inputs::load(&cfg)?;
    let rows = ablate(&inputs.streams(), &gt, &cfg, &selections)?;
    println!("{}", AblationTable(&rows));
    Ok(())
}

pub fn state_colour(state: StepState) -> Rgb<u8> {
    match state {
        StepState::Detection => Rgb([0, 255, 0]),
        StepState::GoodPrediction => Rgb([0, 128, 255]),
        StepState::BadPrediction => Rgb([255, 0, 0]),
        StepState::UncertainPrediction => Rgb([255, 255, 0]),
    }
}

// 3x5 digit glyphs, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_record(img: &mut RgbImage, r: &TrackRecord) {
    let c = state_colour(r.state);
    let x0 = r.bbox.x_min().floor() as i64;
    let y0 = r.bbox.y_min().floor() as i64;
    let x1 = (r.bbox.x_max().ceil() as i64 - 1).max(x0);
    let y1 = (r.bbox.y_max().ceil() as i64 - 1).max(y0);
    for x in x0..=x1 {
        put(img, x, y0, c);
        put(img, x, y1, c);
    }
    for y in y0..=y1 {
        put(img, x0, y, c);
        put(img, x1, y, c);
    }
    // id above the box, or just inside when there is no room
    let ty = if y0 >= 6 { y0 - 6 } else { y0 + 2 };
    for (i, d) in r.track.to_string().bytes().enumerate() {
        let glyph = DIGITS[(d - b'0') as usize];
        let gx = x0 + 4 * i as i64;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    put(img, gx + col, ty + row as i64, c);
                }
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fuse(a) => run_fuse(a),
        Command::Track(a) => run_track(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Synth(a) => run_synth(a),
        Command::Overlay(a) => run_overlay(a),
        Command::Ablate(a) => run_ablate(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
