use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use stilltrack::autolabel::{autolabel_masks, autolabel_recording, Autolabeled, DEFAULT_D_VALUE, DEFAULT_O_VALUE};
use stilltrack::consistency::{consistency_loss, gradient_check, read_samples};
use stilltrack::eval::{evaluate, evaluate_split, report_csv, report_text, DEFAULT_CONF, DEFAULT_IOU};
use stilltrack::events::{encode_event_file, window_iter, window_iter_min, DEFAULT_DT_US};
use stilltrack::labels::write_labels;
use stilltrack::repr::{occupancy_from_tensor, BitGrid, DEFAULT_BINS};
use stilltrack::synth::{generate, occlusion_scenario, scene_head_maps, HeadMapPolicy, OcclusionParams};
use stilltrack::tracker::{decode_detections, DEFAULT_MAX_AGE_MOVE, DEFAULT_STRIDE, DEFAULT_TOP_K, DEFAULT_V_THRESH};
use stilltrack::{
    AutoLabelParams, AutolabelError, Detection, EvalError, HeadMaps, LabelError, LabelTable, Representation,
    SceneSpec, SynthError, Tracker, TrackerParams,
};

mod io;
mod render;

use io::{frame_file, list_tensors, pool, read_events, read_label_file, read_tensor, write_atomic};

/// Event-camera detection tooling: windowing, auto-labelling, permanence tracking, evaluation.
///
/// Exit codes: 0 success, 2 malformed input or I/O failure, 3 frame or label
/// mismatch, 4 invalid scene spec.
#[derive(Debug, Parser)]
#[command(name = "stilltrack", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Slice an event file into fixed windows and write one TNS1 tensor per frame.
    Convert(ConvertArgs),
    /// Assign still/moving visibility to box labels and drop featureless still boxes.
    Autolabel(AutolabelArgs),
    /// Decode head maps (or read detections) and track with object permanence.
    Track(TrackArgs),
    /// mAP and fine-grained match counts of detections against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene with exact labels.
    Synth(SynthArgs),
    /// Draw events and boxes as one RGB PNG per frame.
    Render(RenderArgs),
    /// Consistency loss and a finite-difference gradient check on samples.
    ConsistencyCheck(ConsistencyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReprKind {
    Histogram,
    Timestamp,
    Surface,
    Volume,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// EVS1 event file.
    #[arg(long)]
    events: PathBuf,
    /// Output directory; files are named 000001.tns1, 000002.tns1, ...
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "histogram")]
    repr: ReprKind,
    /// Window length in microseconds.
    #[arg(long, default_value_t = DEFAULT_DT_US)]
    dt_us: u64,
    /// Temporal bins of the event volume.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Time-surface decay constant in microseconds [default: the window length].
    #[arg(long)]
    tau_us: Option<f64>,
    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct AutolabelArgs {
    /// EVS1 event file of a recording; repeat for several recordings.
    #[arg(long, required_unless_present = "features", conflicts_with = "features")]
    events: Vec<PathBuf>,
    /// Directory of per-frame TNS1 tensors (from `convert`) used instead of events; repeatable.
    #[arg(long)]
    features: Vec<PathBuf>,
    /// Label CSV, one per recording, in the same order.
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    /// Output CSV, one per recording, in the same order.
    #[arg(long, required = true)]
    out: Vec<PathBuf>,
    /// Window length in microseconds.
    #[arg(long, default_value_t = DEFAULT_DT_US)]
    dt_us: u64,
    /// Normalised center displacement at or above which a box counts as moving.
    #[arg(long, default_value_t = DEFAULT_D_VALUE)]
    d_value: f64,
    /// Occupancy rate at or above which a box counts as moving.
    #[arg(long, default_value_t = DEFAULT_O_VALUE)]
    o_value: f64,
    /// Worker threads over recordings (0 = all cores). Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Directory of head maps named 000001_P.tns1 with suffixes P, S, O, D, V and optional C.
    #[arg(long, required_unless_present = "dets", conflicts_with = "dets")]
    headmaps: Option<PathBuf>,
    /// Detections as a label CSV (track_id ignored, confidence used as score).
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Window length in microseconds.
    #[arg(long, default_value_t = DEFAULT_DT_US)]
    dt_us: u64,
    /// Detection score threshold.
    #[arg(long, default_value_t = DEFAULT_CONF)]
    conf: f64,
    /// Predicted visibility below this marks a track still.
    #[arg(long, default_value_t = DEFAULT_V_THRESH)]
    v_thresh: f64,
    /// Consecutive misses after which a moving track is dropped.
    #[arg(long, default_value_t = DEFAULT_MAX_AGE_MOVE)]
    max_age_move: u32,
    /// Treat still tracks like moving ones (no permanence).
    #[arg(long)]
    no_permanence: bool,
    /// Output stride of the head maps in pixels.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// Peaks kept per frame.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    /// Window length in microseconds, used to check ts_us.
    #[arg(long, default_value_t = DEFAULT_DT_US)]
    dt_us: u64,
    /// Score threshold for the match counts (AP uses all detections).
    #[arg(long, default_value_t = DEFAULT_CONF)]
    conf: f64,
    /// IoU threshold for the match counts.
    #[arg(long, default_value_t = DEFAULT_IOU)]
    iou: f64,
    /// Also report still (visibility 0) and moving (visibility 1) subsets.
    #[arg(long)]
    split_visibility: bool,
    /// Write the machine-readable report here.
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// A parked object crossed by a moving occluder.
    OcclusionStill,
    /// A moving object hidden behind a wider moving occluder.
    OcclusionMoving,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    All,
    Featureful,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene spec (`key = value` lines and `[object]` sections).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Frame count of a preset.
    #[arg(long)]
    frames: Option<usize>,
    /// Override the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Also write the resolved spec.
    #[arg(long)]
    write_spec: Option<PathBuf>,
    /// Also write ideal head maps for `track`.
    #[arg(long)]
    headmaps: Option<PathBuf>,
    /// Which boxes the ideal head maps show.
    #[arg(long, value_enum, default_value = "featureful")]
    policy: Policy,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// Heatmap classes [default: highest class id + 1].
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    events: PathBuf,
    /// Boxes to overlay.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory; files are named 000001.png, ...
    #[arg(long)]
    out: PathBuf,
    /// Window length in microseconds.
    #[arg(long, default_value_t = DEFAULT_DT_US)]
    dt_us: u64,
    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    /// CSV with columns dx,dy,c,v.
    #[arg(long)]
    samples: PathBuf,
    /// Samples with v below this are left out, as for invisible objects.
    #[arg(long, default_value_t = DEFAULT_V_THRESH)]
    v_thresh: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Convert(a) => convert(a),
        Command::Autolabel(a) => autolabel(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Render(a) => render(a),
        Command::ConsistencyCheck(a) => consistency_check(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<SynthError>() {
            return 4;
        }
        if matches!(cause.downcast_ref(), Some(AutolabelError::FrameMisalignment { .. }))
            || matches!(cause.downcast_ref(), Some(LabelError::FrameMisalignment(_)))
            || matches!(cause.downcast_ref(), Some(EvalError::MissingVisibility { .. }))
        {
            return 3;
        }
    }
    2
}

fn convert(a: ConvertArgs) -> Result<()> {
    let repr = match a.repr {
        ReprKind::Histogram => Representation::Histogram,
        ReprKind::Timestamp => Representation::Timestamp,
        ReprKind::Surface => Representation::TimeSurface {
            tau_us: a.tau_us.unwrap_or(a.dt_us as f64),
        },
        ReprKind::Volume => Representation::Volume { bins: a.bins },
    };
    let stream = read_events(&a.events)?;
    let windows: Vec<_> = window_iter(&stream, a.dt_us)?.collect();
    let (h, w) = (stream.height as usize, stream.width as usize);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    pool(a.jobs)?.install(|| {
        windows.par_iter().try_for_each(|win| -> Result<()> {
            let t = repr.build(win, h, w)?;
            write_atomic(&frame_file(&a.out, win.index, "", "tns1"), &t.to_tns1())
        })
    })?;
    log::info!("wrote {} frames to {}", windows.len(), a.out.display());
    Ok(())
}

/// Occupancy masks from a tensor directory, padded with empty masks to `n` frames.
fn masks_from_features(dir: &Path, n: usize) -> Result<Vec<BitGrid>> {
    let files = list_tensors(dir)?;
    let mut masks = Vec::new();
    let mut grid = None;
    for ((frame, suffix), path) in &files {
        ensure!(suffix.is_empty(), "unexpected tensor file {}", path.display());
        let mask = occupancy_from_tensor(&read_tensor(path)?);
        let shape = (mask.height, mask.width);
        match grid {
            None => grid = Some(shape),
            Some(g) if g != shape => bail!("{} has grid {:?}, expected {:?}", path.display(), shape, g),
            _ => {}
        }
        while masks.len() + 1 < *frame {
            masks.push(BitGrid::filled(shape.0, shape.1, false));
        }
        masks.push(mask);
    }
    if masks.len() < n {
        let Some((gh, gw)) = grid else {
            bail!("{} holds no tensors to take the frame size from", dir.display());
        };
        masks.resize(n, BitGrid::filled(gh, gw, false));
    }
    Ok(masks)
}

fn autolabel(a: AutolabelArgs) -> Result<()> {
    let inputs = if a.features.is_empty() { &a.events } else { &a.features };
    ensure!(
        inputs.len() == a.labels.len() && a.labels.len() == a.out.len(),
        "need as many --labels and --out as recordings ({} inputs, {} labels, {} outputs)",
        inputs.len(),
        a.labels.len(),
        a.out.len()
    );
    let params = AutoLabelParams {
        dt_us: a.dt_us,
        d_value: a.d_value,
        o_value: a.o_value,
    };
    params.validate()?;
    let from_features = !a.features.is_empty();
    let run = |i: usize| -> Result<Autolabeled> {
        let labels = read_label_file(&a.labels[i], a.dt_us)?;
        let out = if from_features {
            if labels.is_empty() {
                Autolabeled {
                    frames: Vec::new(),
                    summary: Default::default(),
                }
            } else {
                let masks = masks_from_features(&inputs[i], labels.last_frame())?;
                let dense = labels.to_dense(masks.len());
                autolabel_masks(masks.into_iter().map(Ok::<_, AutolabelError>), &dense, &params)?
            }
        } else {
            autolabel_recording(&read_events(&inputs[i])?, &labels, &params)?
        };
        write_atomic(
            &a.out[i],
            write_labels(&LabelTable::from_dense(&out.frames), a.dt_us).as_bytes(),
        )?;
        Ok(out)
    };
    let results: Vec<Result<Autolabeled>> =
        pool(a.jobs)?.install(|| (0..inputs.len()).into_par_iter().map(run).collect());
    for (i, r) in results.into_iter().enumerate() {
        let s = r.with_context(|| format!("recording {}", inputs[i].display()))?.summary;
        println!(
            "{}: frames={} boxes_in={} boxes_out={} dropped={} (featureless={} untracked={}) skipped={} still={} moving={}",
            a.out[i].display(),
            s.frames,
            s.boxes_in,
            s.boxes_out,
            s.dropped(),
            s.dropped_featureless,
            s.dropped_untracked,
            s.skipped,
            s.still,
            s.moving
        );
    }
    Ok(())
}

fn load_head_maps(dir: &Path, stride: usize) -> Result<Vec<(usize, HeadMaps)>> {
    let files = list_tensors(dir)?;
    let mut frames: Vec<usize> = files.keys().map(|(f, _)| *f).collect();
    frames.dedup();
    frames
        .into_iter()
        .map(|f| {
            let get = |s: &str| -> Result<_> {
                let path = files
                    .get(&(f, s.to_string()))
                    .with_context(|| format!("frame {f}: missing {}", frame_file(dir, f, s, "tns1").display()))?;
                read_tensor(path)
            };
            let maps = HeadMaps {
                heat: get("P")?,
                size: get("S")?,
                offset: get("O")?,
                displacement: get("D")?,
                visibility: get("V")?,
                consistency: files.get(&(f, "C".to_string())).map(|p| read_tensor(p)).transpose()?,
                stride,
            };
            maps.validate().with_context(|| format!("frame {f}"))?;
            Ok((f, maps))
        })
        .collect()
}

fn track(a: TrackArgs) -> Result<()> {
    // Frames 1..=last, with empty detection lists for gaps so misses are counted.
    let mut per_frame: Vec<Vec<Detection>> = Vec::new();
    if let Some(dir) = &a.headmaps {
        for (f, maps) in load_head_maps(dir, a.stride)? {
            per_frame.resize(f, Vec::new());
            per_frame[f - 1] = decode_detections(&maps, a.conf, a.top_k)?;
        }
    } else if let Some(path) = &a.dets {
        let table = read_label_file(path, a.dt_us)?;
        per_frame = table
            .to_dense(table.last_frame())
            .iter()
            .map(|boxes| {
                boxes
                    .iter()
                    .filter(|b| b.confidence > a.conf)
                    .map(Detection::from_box)
                    .collect()
            })
            .collect();
    }
    let mut tracker = Tracker::new(TrackerParams {
        v_thresh: a.v_thresh,
        max_age_move: a.max_age_move,
        permanence: !a.no_permanence,
    });
    let mut out = Vec::with_capacity(per_frame.len());
    for (i, dets) in per_frame.iter().enumerate() {
        out.push(tracker.step(i + 1, dets)?);
    }
    write_atomic(&a.out, write_labels(&LabelTable::from_dense(&out), a.dt_us).as_bytes())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gt = read_label_file(&a.gt, a.dt_us)?;
    let dets = read_label_file(&a.dets, a.dt_us)?;
    let reports = if a.split_visibility {
        evaluate_split(&dets, &gt, a.conf, a.iou)?
    } else {
        vec![evaluate("all", &dets, &gt, a.conf, a.iou)]
    };
    print!("{}", report_text(&reports));
    if let Some(path) = &a.report_csv {
        write_atomic(path, report_csv(&reports).as_bytes())?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SceneSpec::parse(&text)?
        }
        (None, Some(preset)) => {
            let mut p = OcclusionParams {
                occludee_moving: matches!(preset, Preset::OcclusionMoving),
                ..OcclusionParams::default()
            };
            if let Some(f) = a.frames {
                p.frames = f;
            }
            occlusion_scenario(&p)
        }
        (None, None) => bail!("either --spec or --preset is required"),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = generate(&spec)?;
    write_atomic(&a.events, &encode_event_file(&scene.stream))?;
    write_atomic(&a.labels, write_labels(&scene.labels, scene.dt_us).as_bytes())?;
    if let Some(path) = &a.write_spec {
        write_atomic(path, spec.to_text().as_bytes())?;
    }
    if let Some(dir) = &a.headmaps {
        let classes = a
            .num_classes
            .unwrap_or_else(|| spec.objects.iter().map(|o| o.class_id as usize + 1).max().unwrap_or(1));
        let policy = match a.policy {
            Policy::All => HeadMapPolicy::All,
            Policy::Featureful => HeadMapPolicy::Featureful,
        };
        for (i, maps) in scene_head_maps(&scene, policy, a.stride, classes).iter().enumerate() {
            let f = i + 1;
            write_atomic(&frame_file(dir, f, "P", "tns1"), &maps.heat.to_tns1())?;
            write_atomic(&frame_file(dir, f, "S", "tns1"), &maps.size.to_tns1())?;
            write_atomic(&frame_file(dir, f, "O", "tns1"), &maps.offset.to_tns1())?;
            write_atomic(&frame_file(dir, f, "D", "tns1"), &maps.displacement.to_tns1())?;
            write_atomic(&frame_file(dir, f, "V", "tns1"), &maps.visibility.to_tns1())?;
            if let Some(c) = &maps.consistency {
                write_atomic(&frame_file(dir, f, "C", "tns1"), &c.to_tns1())?;
            }
        }
    }
    println!(
        "{} events, {} boxes over {} frames",
        scene.stream.len(),
        scene.labels.len(),
        scene.frames
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let stream = read_events(&a.events)?;
    let labels = match &a.labels {
        Some(p) => read_label_file(p, a.dt_us)?,
        None => LabelTable::default(),
    };
    let windows: Vec<_> = window_iter_min(&stream, a.dt_us, labels.last_frame())?.collect();
    let (w, h) = (stream.width as usize, stream.height as usize);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    pool(a.jobs)?.install(|| {
        windows.par_iter().try_for_each(|win| -> Result<()> {
            let mut canvas = render::Canvas::new(w, h);
            canvas.draw_events(win);
            for b in labels.frames.get(&win.index).into_iter().flatten() {
                canvas.draw_box(b);
            }
            write_atomic(&frame_file(&a.out, win.index, "", "png"), &canvas.to_png()?)
        })
    })
}

fn consistency_check(a: ConsistencyArgs) -> Result<()> {
    let path = &a.samples;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let all = read_samples(&text).with_context(|| format!("parsing {}", path.display()))?;
    let samples: Vec<_> = all.into_iter().filter(|s| s.v >= a.v_thresh).collect();
    let check = gradient_check(&samples, a.eps);
    println!("samples: {} (v >= {})", samples.len(), a.v_thresh);
    println!("loss: {:.12e}", consistency_loss(&samples));
    println!(
        "gradient check (eps {:e}): max_abs_err={:.3e} max_rel_err={:.3e} skipped_near_kink={}",
        a.eps, check.max_abs_err, check.max_rel_err, check.skipped
    );
    Ok(())
}
