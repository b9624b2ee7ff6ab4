//! `tid`: simulate, calibrate, fit, track, identify and evaluate from the
//! command line. Each subcommand reads and writes plain files, so stages can
//! be run one by one or all at once with `pipeline`.

mod commands;
mod config;
mod errors;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tid_core::pipeline::Method;

use crate::config::RunConfig;
use crate::errors::exit_code;

#[derive(Debug, Parser)]
#[command(name = "tid", version, about = "Identify anonymous tracklets from coarse localisation traces")]
#[command(propagate_version = true, arg_required_else_help = true)]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the built-in default configuration as TOML and exit.
    #[arg(long)]
    dump_defaults: bool,

    /// More logging (-v info with stage timings, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic segment.
    Simulate(SimulateArgs),
    /// Fit the rig-to-prototype image transform and optionally apply it.
    Calibrate(CalibrateArgs),
    /// Fit the weight model from annotations and a trace.
    Fit(FitArgs),
    /// Ingest detections and build tracklets.
    Track(TrackArgs),
    /// Assign identities with the ILP or a per-frame baseline.
    Identify(IdentifyArgs),
    /// Score an identified output against annotations.
    Evaluate(EvaluateArgs),
    /// Fit, track, identify and evaluate one or more segments.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackerArgs {
    /// Detections scoring below this are dropped.
    #[arg(long)]
    min_confidence: Option<f64>,
    /// Keep at most this many detections per frame.
    #[arg(long)]
    max_per_frame: Option<usize>,
    /// IoU a detection must exceed to extend a track.
    #[arg(long)]
    tracker_iou: Option<f64>,
    /// Shortest contiguous run kept as a tracklet.
    #[arg(long)]
    min_length: Option<usize>,
}

impl TrackerArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.ingest.min_confidence, self.min_confidence);
        set(&mut cfg.ingest.max_per_frame, self.max_per_frame);
        set(&mut cfg.tracker.iou_threshold, self.tracker_iou);
        set(&mut cfg.tracker.min_contiguous_length, self.min_length);
    }
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// IoU required for a correct box.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// IoU required for boxes annotated as difficult.
    #[arg(long)]
    difficult_iou_threshold: Option<f64>,
}

impl ThresholdArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.thresholds.normal, self.iou_threshold);
        set(&mut cfg.thresholds.difficult, self.difficult_iou_threshold);
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Number of identities (default: all in the trace).
    #[arg(long)]
    identities: Option<usize>,
    /// Write solver statistics next to the output.
    #[arg(long)]
    diagnostics: bool,
    /// Disable bound pruning in the solver.
    #[arg(long)]
    no_prune: bool,
    /// Score cutoff for static_c.
    #[arg(long)]
    static_c_cutoff: Option<f64>,
}

impl SolverArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.identities.is_some() {
            cfg.identities = self.identities;
        }
        cfg.solver.diagnostics |= self.diagnostics;
        if self.no_prune {
            cfg.solver.prune = false;
        }
        if self.static_c_cutoff.is_some() {
            cfg.baseline.static_c_cutoff = self.static_c_cutoff;
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    out: OutArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    identities: Option<usize>,
    /// Start from the noise-free scenario instead of the configured one.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    out: OutArg,
    /// Calibration points of the rig to map.
    #[arg(long, value_name = "CSV")]
    calibration: Option<PathBuf>,
    /// Calibration points of the prototype rig.
    #[arg(long, value_name = "CSV")]
    prototype: Option<PathBuf>,
    /// Detections to map into the prototype frame.
    #[arg(long, value_name = "CSV")]
    detections: Option<PathBuf>,
    /// Annotations to map into the prototype frame.
    #[arg(long, value_name = "JSON")]
    annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    out: OutArg,
    #[arg(long, value_name = "JSON")]
    annotations: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    out: OutArg,
    #[arg(long, value_name = "CSV")]
    detections: Option<PathBuf>,
    /// Trace fixing the segment span; otherwise the detections do.
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    tracker: TrackerArgs,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    #[command(flatten)]
    out: OutArg,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_name = "JSON")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    /// Tracklets (ilp).
    #[arg(long, value_name = "JSON")]
    tracklets: Option<PathBuf>,
    /// Detections (static_c, static_p).
    #[arg(long, value_name = "CSV")]
    detections: Option<PathBuf>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    max_per_frame: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    out: OutArg,
    /// Label of the report (default: taken from the identified file name).
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_name = "JSON")]
    annotations: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    identified: Option<PathBuf>,
    /// Raw detections the method was given; ingested as configured.
    #[arg(long, value_name = "CSV")]
    detections: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    max_per_frame: Option<usize>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    out: OutArg,
    /// Segment directory with detections.csv, trace.csv and annotations.json (repeatable).
    #[arg(long = "segment", value_name = "DIR")]
    segments: Vec<PathBuf>,
    /// Directory with annotations.json and trace.csv to fit the model on.
    #[arg(long, value_name = "DIR")]
    train: Option<PathBuf>,
    /// Pre-fitted model; takes precedence over --train.
    #[arg(long, value_name = "JSON")]
    model: Option<PathBuf>,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Worker threads for segments (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.dump_defaults {
        print!("{}", RunConfig::default().to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(errors::CliError::Usage("no subcommand given; see --help".into()).into());
    };
    let mut cfg = RunConfig::load(cli.config.as_deref())?;

    match command {
        Command::Simulate(a) => {
            if a.noiseless {
                cfg.scenario = tid_core::simulator::ScenarioConfig::noiseless();
            }
            set_path(&mut cfg.paths.output, &a.out.out);
            set(&mut cfg.scenario.seed, a.seed);
            set(&mut cfg.scenario.frames, a.frames);
            set(&mut cfg.scenario.identities, a.identities);
            cfg.validate()?;
            commands::simulate(&cfg)
        }
        Command::Calibrate(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            set_path(&mut cfg.paths.calibration, &a.calibration);
            set_path(&mut cfg.paths.prototype, &a.prototype);
            set_path(&mut cfg.paths.detections, &a.detections);
            set_path(&mut cfg.paths.annotations, &a.annotations);
            cfg.validate()?;
            commands::calibrate(&cfg)
        }
        Command::Fit(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            set_path(&mut cfg.paths.annotations, &a.annotations);
            set_path(&mut cfg.paths.trace, &a.trace);
            cfg.validate()?;
            commands::fit_command(&cfg)
        }
        Command::Track(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            set_path(&mut cfg.paths.detections, &a.detections);
            set_path(&mut cfg.paths.trace, &a.trace);
            a.tracker.apply(&mut cfg);
            cfg.validate()?;
            commands::track_command(&cfg)
        }
        Command::Identify(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            set(&mut cfg.method, a.method);
            set_path(&mut cfg.paths.model, &a.model);
            set_path(&mut cfg.paths.trace, &a.trace);
            set_path(&mut cfg.paths.tracklets, &a.tracklets);
            set_path(&mut cfg.paths.detections, &a.detections);
            set(&mut cfg.ingest.min_confidence, a.min_confidence);
            set(&mut cfg.ingest.max_per_frame, a.max_per_frame);
            a.solver.apply(&mut cfg);
            cfg.validate()?;
            commands::identify_command(&cfg)
        }
        Command::Evaluate(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            set(&mut cfg.method, a.method);
            set_path(&mut cfg.paths.annotations, &a.annotations);
            set_path(&mut cfg.paths.identified, &a.identified);
            set_path(&mut cfg.paths.detections, &a.detections);
            set_path(&mut cfg.paths.trace, &a.trace);
            if a.identities.is_some() {
                cfg.identities = a.identities;
            }
            set(&mut cfg.ingest.min_confidence, a.min_confidence);
            set(&mut cfg.ingest.max_per_frame, a.max_per_frame);
            a.thresholds.apply(&mut cfg);
            cfg.validate()?;
            commands::evaluate_command(&cfg, a.method.is_some())
        }
        Command::Pipeline(a) => {
            set_path(&mut cfg.paths.output, &a.out.out);
            if !a.segments.is_empty() {
                cfg.paths.segments = a.segments.clone();
            }
            set_path(&mut cfg.paths.train, &a.train);
            set_path(&mut cfg.paths.model, &a.model);
            if !a.methods.is_empty() {
                cfg.methods = a.methods.clone();
            }
            a.tracker.apply(&mut cfg);
            a.solver.apply(&mut cfg);
            a.thresholds.apply(&mut cfg);
            cfg.validate()?;
            let jobs = a
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            commands::pipeline_command(&cfg, jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
