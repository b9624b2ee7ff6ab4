use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use tid_core::dataset::{
    read_annotations, read_calibration, read_detections, read_identified, read_json, read_trace, read_tracklets,
    write_annotations, write_detections, write_identified, write_json, write_tracklets, Annotation,
    CalibrationPoint, LocalisationTrace,
};
use tid_core::evaluation::EvaluationReport;
use tid_core::geometry::{fit_similarity, transform_bbox, SimilarityTransform};
use tid_core::identifier::{Identification, SolveStats};
use tid_core::pipeline::{fit, run_method, score, segment_span, track, Method, TrackOutput};
use tid_core::simulator::generate;
use tid_core::tracker::{group_by_frame, Detection, Frame};
use tid_core::weights::WeightModel;

use crate::config::RunConfig;
use crate::errors::CliError;
use crate::manifest::ManifestBuilder;

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {flag} given (use --{flag} or paths.{} in the config)", flag.replace('-', "_"))))?;
    if !p.exists() {
        return Err(CliError::MissingInput(p.display().to_string()).into());
    }
    Ok(p)
}

fn output_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let out = cfg
        .paths
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory given (use --out)".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::from_io(&out, e))?;
    Ok(out)
}

fn timed<T>(stage: &str, scope: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    let start = Instant::now();
    let r = f();
    info!(
        "stage={stage} scope={scope} seconds={:.3} ok={}",
        start.elapsed().as_secs_f64(),
        r.is_ok()
    );
    r
}

fn identities(cfg: &RunConfig, trace: &LocalisationTrace) -> anyhow::Result<usize> {
    let j = cfg.identities.unwrap_or(trace.identities());
    if j > trace.identities() {
        return Err(CliError::Usage(format!(
            "{j} identities requested but the trace has {}",
            trace.identities()
        ))
        .into());
    }
    Ok(j)
}

pub fn identified_name(method: Method) -> String {
    format!("identified_{method}.json")
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let seg = timed("simulate", &out.display().to_string(), || Ok(generate(&cfg.scenario)?))?;
    seg.write(&out)?;
    let summary = seg.summary();
    write_json(&out.join("summary.json"), &summary)?;
    let mut m = ManifestBuilder::new("simulate", cfg);
    for f in [
        "detections.csv",
        "trace.csv",
        "true_trace.csv",
        "annotations.json",
        "true_model.json",
        "summary.json",
    ] {
        m.output(f);
    }
    m.write(&out)?;
    println!(
        "simulated {} frames, {} identities, {} detections ({} spurious) into {}",
        summary.frames,
        summary.identities,
        summary.detections,
        summary.spurious,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    transform: SimilarityTransform,
    /// Point ids used for the fit (odd ids).
    training_points: Vec<u32>,
    /// Point ids held out (even ids).
    validation_points: Vec<u32>,
    training_residual_mean: f64,
    validation_residual_mean: Option<f64>,
    validation_residual_max: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Fits the rig-to-prototype image similarity on odd point ids and checks it
/// on even ones.
fn calibrate_points(rig: &[CalibrationPoint], prototype: &[CalibrationPoint]) -> anyhow::Result<CalibrationReport> {
    let mut pairs: Vec<(u32, CalibrationPoint, CalibrationPoint)> = Vec::new();
    for r in rig {
        if let Some(p) = prototype.iter().find(|p| p.point_id == r.point_id) {
            pairs.push((r.point_id, r.clone(), p.clone()));
        }
    }
    pairs.sort_by_key(|(id, _, _)| *id);
    let (train, val): (Vec<_>, Vec<_>) = pairs.iter().partition(|(id, _, _)| id % 2 == 1);
    let src: Vec<_> = train.iter().map(|(_, r, _)| r.image()).collect();
    let dst: Vec<_> = train.iter().map(|(_, _, p)| p.image()).collect();
    let fitted = fit_similarity(&src, &dst).context("fitting rig-to-prototype similarity on odd point ids")?;
    let val_res: Vec<f64> = val
        .iter()
        .map(|(_, r, p)| fitted.transform.apply(&r.image()).distance(&p.image()))
        .collect();
    Ok(CalibrationReport {
        transform: fitted.transform,
        training_points: train.iter().map(|(id, _, _)| *id).collect(),
        validation_points: val.iter().map(|(id, _, _)| *id).collect(),
        training_residual_mean: mean(&fitted.residuals).unwrap_or(0.0),
        validation_residual_mean: mean(&val_res),
        validation_residual_max: val_res.iter().copied().reduce(f64::max),
    })
}

pub fn calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let rig_path = require(&cfg.paths.calibration, "calibration")?;
    let proto_path = require(&cfg.paths.prototype, "prototype")?;
    let mut m = ManifestBuilder::new("calibrate", cfg);
    m.input(rig_path);
    m.input(proto_path);
    let report = calibrate_points(&read_calibration(rig_path)?, &read_calibration(proto_path)?)?;
    write_json(&out.join("calibration.json"), &report)?;
    m.output("calibration.json");

    let t = report.transform;
    if cfg.paths.detections.is_some() {
        let p = require(&cfg.paths.detections, "detections")?;
        m.input(p);
        let dets = read_detections(p)?
            .into_iter()
            .map(|d| Ok(Detection { bbox: transform_bbox(&t, &d.bbox)?, ..d }))
            .collect::<anyhow::Result<Vec<_>>>()?;
        write_detections(&out.join("detections.csv"), &dets)?;
        m.output("detections.csv");
    }
    if cfg.paths.annotations.is_some() {
        let p = require(&cfg.paths.annotations, "annotations")?;
        m.input(p);
        let anns = read_annotations(p)?
            .into_iter()
            .map(|a| {
                let bbox = a.bbox.map(|b| transform_bbox(&t, &b)).transpose()?;
                Ok(Annotation { bbox, ..a })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        write_annotations(&out.join("annotations.json"), &anns)?;
        m.output("annotations.json");
    }
    m.write(&out)?;
    println!(
        "scale {:.6} rotation {:.6} rad translation ({:.3}, {:.3}); mean residual train {:.3} px, validation {}",
        t.scale,
        t.rotation,
        t.translation[0],
        t.translation[1],
        report.training_residual_mean,
        report
            .validation_residual_mean
            .map_or("n/a".to_string(), |v| format!("{v:.3} px"))
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitReport {
    emission_samples: usize,
    visibility_samples: usize,
    warnings: Vec<String>,
}

fn fit_model(cfg: &RunConfig, annotations: &Path, trace: &Path) -> anyhow::Result<(WeightModel, FitReport)> {
    let anns = read_annotations(annotations)?;
    let trace = read_trace(trace)?;
    let fitted = timed("fit", &annotations.display().to_string(), || Ok(fit(&anns, &trace, &cfg.pipeline())?))?;
    for w in &fitted.warnings {
        warn!("{w}");
    }
    let report = FitReport {
        emission_samples: fitted.emission_samples,
        visibility_samples: fitted.visibility_samples,
        warnings: fitted.warnings,
    };
    Ok((fitted.model, report))
}

pub fn fit_command(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let anns = require(&cfg.paths.annotations, "annotations")?;
    let trace = require(&cfg.paths.trace, "trace")?;
    let (model, report) = fit_model(cfg, anns, trace)?;
    write_json(&out.join("model.json"), &model)?;
    write_json(&out.join("fit_report.json"), &report)?;
    let mut m = ManifestBuilder::new("fit", cfg);
    m.input(anns);
    m.input(trace);
    m.output("model.json");
    m.output("fit_report.json");
    m.write(&out)?;
    println!(
        "fitted on {} boxes and {} visibility samples, {} warnings",
        report.emission_samples,
        report.visibility_samples,
        report.warnings.len()
    );
    Ok(())
}

/// Frames spanned by the trace, or by the detections when no trace is given.
fn detection_span(dets: &[Detection]) -> anyhow::Result<std::ops::RangeInclusive<Frame>> {
    let first = dets.iter().map(|d| d.frame).min();
    let last = dets.iter().map(|d| d.frame).max();
    match (first, last) {
        (Some(a), Some(b)) => Ok(a..=b),
        _ => Err(CliError::Usage("no detections and no trace to fix the segment span".into()).into()),
    }
}

pub fn track_command(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let det_path = require(&cfg.paths.detections, "detections")?;
    let mut m = ManifestBuilder::new("track", cfg);
    m.input(det_path);
    let dets = read_detections(det_path)?;
    let span = if cfg.paths.trace.is_some() {
        let p = require(&cfg.paths.trace, "trace")?;
        m.input(p);
        segment_span(&read_trace(p)?)
    } else {
        detection_span(&dets)?
    };
    let tracked = timed("track", &det_path.display().to_string(), || Ok(track(&dets, span, &cfg.pipeline())?))?;
    write_tracklets(&out.join("tracklets.json"), &tracked.tracklets)?;
    m.output("tracklets.json");
    m.write(&out)?;
    println!("{} tracklets", tracked.tracklets.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolverDiagnostics {
    objective: f64,
    intervals: usize,
    rows: usize,
    identities: usize,
    stats: SolveStats,
}

fn diagnostics(id: &Identification) -> SolverDiagnostics {
    SolverDiagnostics {
        objective: id.solution.objective,
        intervals: id.problem.interval_count(),
        rows: id.problem.rows(),
        identities: id.problem.identities(),
        stats: id.solution.stats.clone(),
    }
}

pub fn identify_command(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let method = cfg.method;
    let model_path = require(&cfg.paths.model, "model")?;
    let trace_path = require(&cfg.paths.trace, "trace")?;
    let mut m = ManifestBuilder::new(&format!("identify_{method}"), cfg);
    m.input(model_path);
    m.input(trace_path);
    let model: WeightModel = read_json(model_path)?;
    let trace = read_trace(trace_path)?;
    let j = identities(cfg, &trace)?;
    let span = segment_span(&trace);

    let tracked = match method {
        Method::Ilp => {
            let p = require(&cfg.paths.tracklets, "tracklets")?;
            m.input(p);
            TrackOutput {
                by_frame: Vec::new(),
                tracklets: read_tracklets(p)?,
            }
        }
        Method::StaticC | Method::StaticP => {
            let p = require(&cfg.paths.detections, "detections")?;
            m.input(p);
            let dets = read_detections(p)?;
            TrackOutput {
                by_frame: group_by_frame(&dets, *span.start(), *span.end(), &cfg.ingest),
                tracklets: Vec::new(),
            }
        }
    };
    let result = timed("identify", method.name(), || {
        Ok(run_method(method, &tracked, &trace, &model, j, &cfg.pipeline(), &cfg.solver_options())?)
    })?;
    let name = identified_name(method);
    write_identified(&out.join(&name), &result.frames)?;
    m.output(&name);
    if let (true, Some(id)) = (cfg.solver.diagnostics, &result.identification) {
        let diag = format!("solver_{method}.json");
        write_json(&out.join(&diag), &diagnostics(id))?;
        m.output(diag);
    }
    m.write(&out)?;
    match &result.identification {
        Some(id) => println!(
            "{method}: {} tracklets over {} intervals, objective {:.6}",
            tracked.tracklets.len(),
            id.problem.interval_count(),
            id.solution.objective
        ),
        None => println!("{method}: {} frames", result.frames.len()),
    }
    Ok(())
}

/// Method named by an `identified_<method>.json` file.
fn method_from_filename(path: &Path) -> Option<Method> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("identified_")?.parse().ok()
}

/// Writes the JSON and text forms of a report; returns their file names.
fn write_report(out: &Path, report: &EvaluationReport) -> anyhow::Result<[String; 2]> {
    let json = format!("report_{}.json", report.method);
    let txt = format!("report_{}.txt", report.method);
    write_json(&out.join(&json), report)?;
    std::fs::write(out.join(&txt), report.to_text()).map_err(|e| CliError::from_io(&out.join(&txt), e))?;
    Ok([json, txt])
}

pub fn evaluate_command(cfg: &RunConfig, method_given: bool) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    let ann_path = require(&cfg.paths.annotations, "annotations")?;
    let id_path = require(&cfg.paths.identified, "identified")?;
    let det_path = require(&cfg.paths.detections, "detections")?;
    let method = if method_given {
        cfg.method
    } else {
        method_from_filename(id_path).unwrap_or(cfg.method)
    };
    let mut m = ManifestBuilder::new(&format!("evaluate_{method}"), cfg);
    m.input(ann_path);
    m.input(id_path);
    m.input(det_path);

    let anns = read_annotations(ann_path)?;
    let identified = read_identified(id_path)?;
    let dets = read_detections(det_path)?;
    let span = if cfg.paths.trace.is_some() {
        let p = require(&cfg.paths.trace, "trace")?;
        m.input(p);
        segment_span(&read_trace(p)?)
    } else {
        match (identified.first(), identified.last()) {
            (Some(a), Some(b)) => a.frame..=b.frame,
            _ => detection_span(&dets)?,
        }
    };
    let j = cfg
        .identities
        .or_else(|| identified.first().map(|f| f.boxes.len()))
        .ok_or_else(|| CliError::Usage("cannot infer the number of identities".into()))?;
    let ingested: Vec<Detection> = group_by_frame(&dets, *span.start(), *span.end(), &cfg.ingest)
        .into_iter()
        .flatten()
        .collect();
    let report = timed("evaluate", method.name(), || {
        Ok(score(method, &anns, &identified, &ingested, j, &cfg.pipeline())?)
    })?;
    for f in write_report(&out, &report)? {
        m.output(f);
    }
    m.write(&out)?;
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SegmentSummary {
    segment: String,
    tracklets: usize,
    accuracy: BTreeMap<Method, Option<f64>>,
}

#[derive(Debug, Serialize)]
struct PipelineSummary {
    segments: Vec<SegmentSummary>,
    /// Mean overall accuracy per method over segments with a defined value.
    mean_accuracy: BTreeMap<Method, Option<f64>>,
}

struct SegmentResult {
    summary: SegmentSummary,
    outputs: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
}

fn segment_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "segment".to_string())
}

fn run_segment(
    cfg: &RunConfig,
    dir: &Path,
    name: &str,
    out: &Path,
    shared_model: Option<&WeightModel>,
) -> anyhow::Result<SegmentResult> {
    let det_path = dir.join("detections.csv");
    let trace_path = dir.join("trace.csv");
    let ann_path = dir.join("annotations.json");
    for p in [&det_path, &trace_path, &ann_path] {
        if !p.exists() {
            return Err(CliError::MissingInput(p.display().to_string()).into());
        }
    }
    let seg_out = out.join(name);
    std::fs::create_dir_all(&seg_out).map_err(|e| CliError::from_io(&seg_out, e))?;
    let rel = |f: &str| PathBuf::from(name).join(f);
    let mut outputs = Vec::new();

    let dets = read_detections(&det_path)?;
    let trace = read_trace(&trace_path)?;
    let anns = read_annotations(&ann_path)?;
    let j = identities(cfg, &trace)?;
    let pcfg = cfg.pipeline();

    let own_model;
    let model = match shared_model {
        Some(m) => m,
        None => {
            warn!("segment {name}: fitting the weight model on its own annotations");
            let (m, report) = fit_model(cfg, &ann_path, &trace_path)?;
            write_json(&seg_out.join("model.json"), &m)?;
            write_json(&seg_out.join("fit_report.json"), &report)?;
            outputs.push(rel("model.json"));
            outputs.push(rel("fit_report.json"));
            own_model = m;
            &own_model
        }
    };

    let tracked = timed("track", name, || Ok(track(&dets, segment_span(&trace), &pcfg)?))?;
    write_tracklets(&seg_out.join("tracklets.json"), &tracked.tracklets)?;
    outputs.push(rel("tracklets.json"));
    let ingested = tracked.ingested();

    let mut accuracy = BTreeMap::new();
    for &method in &cfg.methods {
        let result = timed("identify", &format!("{name}/{method}"), || {
            Ok(run_method(method, &tracked, &trace, model, j, &pcfg, &cfg.solver_options())?)
        })
        .with_context(|| format!("segment {name}, method {method}"))?;
        let id_name = identified_name(method);
        write_identified(&seg_out.join(&id_name), &result.frames)?;
        outputs.push(rel(&id_name));
        if let (true, Some(id)) = (cfg.solver.diagnostics, &result.identification) {
            let diag = format!("solver_{method}.json");
            write_json(&seg_out.join(&diag), &diagnostics(id))?;
            outputs.push(rel(&diag));
        }
        let report = timed("evaluate", &format!("{name}/{method}"), || {
            Ok(score(method, &anns, &result.frames, &ingested, j, &pcfg)?)
        })?;
        for f in write_report(&seg_out, &report)? {
            outputs.push(rel(&f));
        }
        accuracy.insert(method, report.overall.accuracy.value);
    }
    Ok(SegmentResult {
        summary: SegmentSummary {
            segment: name.to_string(),
            tracklets: tracked.tracklets.len(),
            accuracy,
        },
        outputs,
        inputs: vec![det_path, trace_path, ann_path],
    })
}

pub fn pipeline_command(cfg: &RunConfig, jobs: usize) -> anyhow::Result<()> {
    let out = output_dir(cfg)?;
    if cfg.paths.segments.is_empty() {
        return Err(CliError::Usage("no segments given (use --segment DIR, repeatable)".into()).into());
    }
    let names: Vec<String> = cfg.paths.segments.iter().map(|d| segment_name(d)).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(CliError::Usage("segment directories must have distinct names".into()).into());
    }
    let mut m = ManifestBuilder::new("pipeline", cfg);

    let shared_model = if cfg.paths.model.is_some() {
        let p = require(&cfg.paths.model, "model")?;
        m.input(p);
        Some(read_json::<WeightModel>(p)?)
    } else if let Some(train) = &cfg.paths.train {
        let anns = train.join("annotations.json");
        let trace = train.join("trace.csv");
        m.input(&anns);
        m.input(&trace);
        if !anns.exists() {
            return Err(CliError::MissingInput(anns.display().to_string()).into());
        }
        if !trace.exists() {
            return Err(CliError::MissingInput(trace.display().to_string()).into());
        }
        let (model, report) = fit_model(cfg, &anns, &trace)?;
        write_json(&out.join("model.json"), &model)?;
        write_json(&out.join("fit_report.json"), &report)?;
        m.output("model.json");
        m.output("fit_report.json");
        Some(model)
    } else {
        None
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker threads")?;
    let results: Vec<anyhow::Result<SegmentResult>> = pool.install(|| {
        cfg.paths
            .segments
            .par_iter()
            .zip(names.par_iter())
            .map(|(dir, name)| run_segment(cfg, dir, name, &out, shared_model.as_ref()))
            .collect()
    });

    let mut segments = Vec::new();
    for (r, name) in results.into_iter().zip(&names) {
        let r = r.with_context(|| format!("segment {name}"))?;
        for p in &r.inputs {
            m.input(p);
        }
        for p in r.outputs {
            m.output(p);
        }
        segments.push(r.summary);
    }
    let mean_accuracy = cfg
        .methods
        .iter()
        .map(|&method| {
            let vals: Vec<f64> = segments
                .iter()
                .filter_map(|s| s.accuracy.get(&method).copied().flatten())
                .collect();
            (method, mean(&vals))
        })
        .collect();
    let summary = PipelineSummary {
        segments,
        mean_accuracy,
    };
    write_json(&out.join("summary.json"), &summary)?;
    m.output("summary.json");
    m.write(&out)?;

    for s in &summary.segments {
        let parts: Vec<String> = s
            .accuracy
            .iter()
            .map(|(method, v)| format!("{method} {}", v.map_or("n/a".into(), |v| format!("{v:.3}"))))
            .collect();
        println!("{}: {} tracklets, overall accuracy {}", s.segment, s.tracklets, parts.join(", "));
    }
    Ok(())
}
