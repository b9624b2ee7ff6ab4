//! Stage glue shared by the command line and the end-to-end tests.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineConfig, BaselineKind};
use crate::dataset::{Annotation, IdentifiedFrame, LocalisationTrace};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, ground_truth_frames, EvaluationReport, IoUThresholds};
use crate::identifier::{identify, Identification, SolverOptions};
use crate::tracker::{finalize, group_by_frame, Detection, Frame, IngestConfig, Tracker, TrackerConfig, Tracklet};
use crate::weights::{WeightModel, WeightModelConfig, WeightModelFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ilp,
    StaticC,
    StaticP,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ilp, Method::StaticC, Method::StaticP];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ilp => "ilp",
            Method::StaticC => BaselineKind::StaticC.name(),
            Method::StaticP => BaselineKind::StaticP.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown method {s:?}; expected ilp, static_c or static_p")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub tracker: TrackerConfig,
    pub weights: WeightModelConfig,
    pub baseline: BaselineConfig,
    pub thresholds: IoUThresholds,
}

/// Frames covered by a trace.
pub fn segment_span(trace: &LocalisationTrace) -> RangeInclusive<Frame> {
    trace.first_frame()..=trace.last_frame()
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    /// Ingested detections of each frame of the span.
    pub by_frame: Vec<Vec<Detection>>,
    pub tracklets: Vec<Tracklet>,
}

impl TrackOutput {
    pub fn ingested(&self) -> Vec<Detection> {
        self.by_frame.iter().flatten().copied().collect()
    }
}

pub fn track(detections: &[Detection], span: RangeInclusive<Frame>, cfg: &PipelineConfig) -> Result<TrackOutput> {
    let (first, last) = (*span.start(), *span.end());
    let by_frame = group_by_frame(detections, first, last, &cfg.ingest);
    let tracks = Tracker::run(cfg.tracker.clone(), first, &by_frame)?;
    Ok(TrackOutput {
        by_frame,
        tracklets: finalize(&tracks, &cfg.tracker),
    })
}

pub fn fit(annotations: &[Annotation], trace: &LocalisationTrace, cfg: &PipelineConfig) -> Result<WeightModelFit> {
    WeightModel::fit(annotations, trace, &cfg.weights)
}

/// Output of one identification method over a segment.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub frames: Vec<IdentifiedFrame>,
    /// Present for the ILP.
    pub identification: Option<Identification>,
}

pub fn run_method(
    method: Method,
    tracked: &TrackOutput,
    trace: &LocalisationTrace,
    model: &WeightModel,
    identities: usize,
    cfg: &PipelineConfig,
    solver: &SolverOptions,
) -> Result<MethodOutput> {
    let span = segment_span(trace);
    match method {
        Method::Ilp => {
            let id = identify(&tracked.tracklets, span, model, trace, identities, solver)?;
            Ok(MethodOutput {
                frames: id.frames.clone(),
                identification: Some(id),
            })
        }
        Method::StaticC | Method::StaticP => {
            let kind = if method == Method::StaticC {
                BaselineKind::StaticC
            } else {
                BaselineKind::StaticP
            };
            Ok(MethodOutput {
                frames: run_baseline(kind, *span.start(), &tracked.by_frame, trace, identities, model, &cfg.baseline)?,
                identification: None,
            })
        }
    }
}

pub fn score(
    method: Method,
    annotations: &[Annotation],
    identified: &[IdentifiedFrame],
    ingested: &[Detection],
    identities: usize,
    cfg: &PipelineConfig,
) -> Result<EvaluationReport> {
    let gt = ground_truth_frames(annotations, identities)?;
    evaluate(method.name(), &gt, identified, ingested, &cfg.thresholds)
}
