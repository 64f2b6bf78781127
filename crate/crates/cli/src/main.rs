use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evdecomp::config::{parse_list, KeyValues};
use evdecomp::events::{simulate_events, DEFAULT_LOG_EPS};
use evdecomp::integrate::{direct_integration, estimate_contrast};
use evdecomp::io::{self, ImageFormat};
use evdecomp::metrics::MetricsReport;
use evdecomp::pipeline::{evaluate_frames, Decompressor};
use evdecomp::testbed::{render, SceneSpec};
use evdecomp::voxel::{build_volume, normalize_volume, DEFAULT_BINS};
use evdecomp::{ContrastThresholds, DecompressionConfig, Error, EventStream, Frame, FrameSequence};

#[derive(Parser)]
#[command(name = "evdecomp", version, about = "Continuous video from one frame and an event stream")]
struct Cli {
    /// Run single-threaded for bit-reproducible output.
    #[arg(long, global = true)]
    seq: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to frames and a manifest.
    SynthScene {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        times: TimeArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "pgm")]
        format: String,
    },
    /// Simulate an ideal event sensor over a frame sequence.
    Simulate {
        /// Manifest file or the directory holding it.
        #[arg(long)]
        frames: PathBuf,
        /// Threshold keys c_pos, c_neg, log_eps.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `.csv`/`.txt` for text, anything else for binary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin events into a voxel grid.
    Voxelize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// One signed plane instead of separate polarity planes.
        #[arg(long)]
        signed: bool,
        /// Divide by the largest magnitude.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate events onto the initial frame at the query times.
    Integrate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        times: TimeArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
    /// Decode frames, flows and a trajectory field at the query times.
    Decompress {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frames used to calibrate thresholds when `thresholds=auto`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        times: TimeArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
    /// Score predicted frames against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0)]
        border: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit contrast thresholds from frames and the events between them.
    Calibrate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Pair frame k with frame k + stride. Pairs should span several
        /// events per pixel or the fit is biased low.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Initial frame: a PGM/PPM file, or a manifest whose first frame is used.
    #[arg(long)]
    initial: PathBuf,
    /// Timestamp of a bare PGM/PPM initial frame.
    #[arg(long, default_value_t = 0.0)]
    initial_time: f64,
    #[arg(long)]
    events: PathBuf,
}

#[derive(Args)]
struct TimeArgs {
    /// Comma-separated query times.
    #[arg(long, conflicts_with_all = ["fps", "duration"])]
    times: Option<String>,
    #[arg(long, requires = "duration")]
    fps: Option<f64>,
    #[arg(long, requires = "fps")]
    duration: Option<f64>,
}

impl TimeArgs {
    /// Explicit times, or `start + k / fps` up to `start + duration`.
    fn resolve(&self, start: f64) -> Result<Option<Vec<f64>>, Error> {
        if let Some(t) = &self.times {
            return parse_list(t).map(Some);
        }
        let (Some(fps), Some(duration)) = (self.fps, self.duration) else {
            return Ok(None);
        };
        if !(fps > 0.0 && fps.is_finite() && duration >= 0.0 && duration.is_finite()) {
            return Err(Error::InvalidInput(format!("--fps {fps} --duration {duration}")));
        }
        let n = (duration * fps + 1e-9).floor() as usize;
        Ok(Some((0..=n).map(|k| start + k as f64 / fps).collect()))
    }
}

fn load_config(path: Option<&Path>) -> Result<KeyValues, Error> {
    path.map(KeyValues::load).transpose().map(Option::unwrap_or_default)
}

fn thresholds_from(kv: &KeyValues) -> Result<(ContrastThresholds, f64), Error> {
    let d = ContrastThresholds::default();
    let c = ContrastThresholds::new(kv.get_or("c_pos", d.c_pos)?, kv.get_or("c_neg", d.c_neg)?)?;
    Ok((c, kv.get_or("log_eps", DEFAULT_LOG_EPS)?))
}

fn image_format(name: Option<&str>) -> Result<Option<ImageFormat>, Error> {
    name.map(ImageFormat::from_name).transpose()
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm" | "pnm" | "pbm")
    )
}

fn load_initial(input: &InputArgs) -> Result<Frame, Error> {
    if is_pnm(&input.initial) {
        return Frame::new(io::load_pnm(&input.initial)?, input.initial_time);
    }
    let seq = io::read_sequence(&input.initial)?;
    seq.into_frames()
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidInput("initial manifest lists no frames".into()))
}

/// The stream starts at the initial frame and ends at the last event, the
/// recorded span end, or the last query, whichever is latest.
fn load_stream(path: &Path, initial: &Frame, times: &[f64]) -> Result<EventStream, Error> {
    let file = io::load_events(path)?;
    let t0 = initial.timestamp();
    let t1 = file
        .events
        .iter()
        .map(|e| e.t)
        .chain(file.span.map(|s| s.1))
        .chain(times.iter().copied())
        .fold(t0, f64::max);
    file.into_stream(Some((initial.width(), initial.height())), Some((t0, t1)))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    io::write_bytes(path, text.as_bytes())
}

fn synth_scene(config: &Path, times: &TimeArgs, out: &Path, format: &str) -> Result<(), Error> {
    let spec = SceneSpec::from_config(&KeyValues::load(config)?)?;
    let times = times
        .resolve(0.0)?
        .ok_or_else(|| Error::InvalidInput("synth-scene needs --times or --fps/--duration".into()))?;
    let frames = render(&spec, &times)?;
    io::write_sequence(out, frames.frames(), Some(ImageFormat::from_name(format)?))?;
    write_text(&out.join("scene.txt"), &spec.to_config().to_text())
}

fn decompress(
    input: &InputArgs,
    config: Option<&Path>,
    calibration: Option<&Path>,
    times: &TimeArgs,
    out: &Path,
    format: Option<&str>,
    seq: bool,
) -> Result<(), Error> {
    let mut cfg = DecompressionConfig::from_config(&load_config(config)?)?;
    cfg.sequential |= seq;
    let initial = load_initial(input)?;
    if let Some(t) = times.resolve(initial.timestamp())? {
        cfg.query_times = t;
    }
    if cfg.query_times.is_empty() {
        return Err(Error::InvalidInput("no query times: use --times, --fps/--duration or times=".into()));
    }
    let stream = load_stream(&input.events, &initial, &cfg.query_times)?;
    let pairs: Vec<(Frame, Frame)> = match calibration {
        Some(p) => {
            let frames = io::read_sequence(p)?.into_frames();
            frames.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
        }
        None => Vec::new(),
    };
    let dec = Decompressor::prepare_with_calibration(&initial, &stream, &cfg, &pairs)?;
    let result = dec.run(&cfg.query_times)?;

    let fused: Vec<Frame> = result.frames.iter().map(|f| f.fused.clone()).collect();
    io::write_sequence(&out.join("frames"), &fused, image_format(format)?)?;
    for (k, f) in result.frames.iter().enumerate() {
        io::write_bytes(&out.join("flows").join(format!("flow_{k:05}.flo")), &io::encode_flow(&f.flow)?)?;
    }
    io::write_trajectory(&out.join("trajectory.trj"), &out.join("trajectory.basis"), &result.trajectory)?;

    let mut report = MetricsReport::new();
    report.push("c_pos", result.thresholds.c_pos);
    report.push("c_neg", result.thresholds.c_neg);
    report.push("prepare_seconds", result.timing.prepare_seconds);
    for (k, f) in result.frames.iter().enumerate() {
        report.push(format!("frame{k}.time"), f.time);
        report.push(format!("frame{k}.seconds"), f.seconds);
    }
    let mut text = report.to_text();
    for w in &result.warnings {
        text.push_str(&format!("# warning: {w}\n"));
        eprintln!("warning: {w}");
    }
    write_text(&out.join("report.txt"), &text)?;
    write_text(&out.join("config.txt"), &cfg.to_config().to_text())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SynthScene {
            config,
            times,
            out,
            format,
        } => synth_scene(&config, &times, &out, &format),
        Command::Simulate { frames, config, out } => {
            let (c, eps) = thresholds_from(&load_config(config.as_deref())?)?;
            let seq = io::read_sequence(&frames)?;
            let gray = FrameSequence::new(
                seq.into_frames()
                    .into_iter()
                    .map(|f| if f.is_gray() { Ok(f) } else { evdecomp::integrate::luminance_frame(&f) })
                    .collect::<Result<Vec<_>, _>>()?,
            )?;
            let stream = simulate_events(&gray, c, eps)?;
            io::save_events(&out, &stream)?;
            eprintln!("{} events", stream.len());
            Ok(())
        }
        Command::Voxelize {
            events,
            t0,
            t1,
            bins,
            signed,
            normalize,
            out,
        } => {
            let stream = io::load_events(&events)?.into_stream(None, None)?;
            let (a, b) = (t0.unwrap_or(stream.t_begin()), t1.unwrap_or(stream.t_end()));
            let mut vol = build_volume(&stream, a, b, bins, !signed)?;
            if normalize {
                vol = normalize_volume(&vol);
            }
            io::write_bytes(&out, &io::encode_volume(&vol)?)
        }
        Command::Integrate {
            input,
            config,
            times,
            out,
            format,
        } => {
            let (c, eps) = thresholds_from(&load_config(config.as_deref())?)?;
            let initial = load_initial(&input)?;
            let times = times
                .resolve(initial.timestamp())?
                .ok_or_else(|| Error::InvalidInput("integrate needs --times or --fps/--duration".into()))?;
            let stream = load_stream(&input.events, &initial, &times)?;
            let frames = times
                .iter()
                .map(|&t| direct_integration(&initial, &stream, t, c, eps))
                .collect::<Result<Vec<_>, _>>()?;
            io::write_sequence(&out, &frames, image_format(format.as_deref())?)?;
            Ok(())
        }
        Command::Decompress {
            input,
            config,
            calibration,
            times,
            out,
            format,
        } => decompress(
            &input,
            config.as_deref(),
            calibration.as_deref(),
            &times,
            &out,
            format.as_deref(),
            cli.seq,
        ),
        Command::Evaluate { pred, gt, border, out } => {
            let pred = io::read_sequence(&pred)?;
            let gt = io::read_sequence(&gt)?;
            let text = evaluate_frames(pred.frames(), &gt, border)?.to_metrics().to_text();
            print!("{text}");
            match out {
                Some(p) => write_text(&p, &text),
                None => Ok(()),
            }
        }
        Command::Calibrate {
            frames,
            events,
            stride,
            config,
            out,
        } => {
            let (_, eps) = thresholds_from(&load_config(config.as_deref())?)?;
            let frames = io::read_sequence(&frames)?.into_frames();
            let first = frames
                .first()
                .ok_or_else(|| Error::InvalidInput("calibration manifest lists no frames".into()))?;
            let last_t = frames.last().map(Frame::timestamp).unwrap_or(0.0);
            let stream = load_stream(&events, first, &[last_t])?;
            if stride == 0 {
                return Err(Error::InvalidInput("--stride must be positive".into()));
            }
            let pairs: Vec<(Frame, Frame)> = frames
                .iter()
                .zip(frames.iter().skip(stride))
                .step_by(stride)
                .map(|(a, b)| (a.clone(), b.clone()))
                .collect();
            let est = estimate_contrast(&pairs, &stream, eps)?;
            let text = format!(
                "c_pos={}\nc_neg={}\nsamples={}\nstatus={:?}\n",
                est.thresholds.c_pos, est.thresholds.c_neg, est.samples, est.status
            );
            print!("{text}");
            match out {
                Some(p) => write_text(&p, &text),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.seq {
        // Ignored if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
