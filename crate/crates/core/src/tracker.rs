//! Offline SORT-style tracker.
//!
//! Differences from the online tracker it is modelled on:
//!
//! * tracks emit boxes from their first frame (no probation period),
//! * a track is killed as soon as it misses a detection, so every tracklet is
//!   temporally contiguous,
//! * short tracklets are dropped after the run based on contiguous length,
//! * emitted boxes are the raw detections, never the Kalman estimate.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::matching::{solve_with_threshold, CostMatrix};

pub type Frame = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame: Frame, bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Detection { frame, bbox, score })
    }
}

/// Process and measurement noise of the constant-velocity model.
///
/// Defaults follow the reference SORT implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanNoise {
    /// Measurement variance of (cx, cy, area, aspect).
    pub measurement: [f64; 4],
    /// Process variance of (cx, cy, area, aspect, v_cx, v_cy, v_area).
    pub process: [f64; 7],
    /// Initial variance of the state components.
    pub initial: [f64; 7],
}

impl Default for KalmanNoise {
    fn default() -> Self {
        KalmanNoise {
            measurement: [1.0, 1.0, 10.0, 10.0],
            process: [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.0001],
            initial: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
        }
    }
}

const MIN_AREA: f64 = 1e-6;

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;

/// Constant-velocity state over (cx, cy, area, aspect, v_cx, v_cy, v_area).
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: State,
    pub covariance: Cov,
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> SMatrix<f64, 4, 7> {
    let mut h = SMatrix::<f64, 4, 7>::zeros();
    for k in 0..4 {
        h[(k, k)] = 1.0;
    }
    h
}

fn measure(b: &BoundingBox) -> SVector<f64, 4> {
    SVector::<f64, 4>::new(b.cx, b.cy, b.area(), b.w / b.h)
}

impl KalmanState {
    pub fn from_box(b: &BoundingBox, noise: &KalmanNoise) -> Self {
        let z = measure(b);
        let mean = State::from_column_slice(&[z[0], z[1], z[2], z[3], 0.0, 0.0, 0.0]);
        KalmanState {
            mean,
            covariance: Cov::from_diagonal(&State::from_column_slice(&noise.initial)),
        }
    }

    pub fn area(&self) -> f64 {
        self.mean[2]
    }

    pub fn aspect(&self) -> f64 {
        self.mean[3]
    }

    /// Box implied by the current mean, if its geometry is valid.
    pub fn to_box(&self) -> Option<BoundingBox> {
        let (s, r) = (self.mean[2], self.mean[3]);
        if !(s > 0.0 && r > 0.0) {
            return None;
        }
        let w = (s * r).sqrt();
        BoundingBox::new(self.mean[0], self.mean[1], w, s / w).ok()
    }

    /// One constant-velocity step. The flag reports whether the predicted
    /// area had to be clamped to stay positive.
    pub fn predict(&self, noise: &KalmanNoise) -> (KalmanState, bool) {
        let f = transition();
        let mut mean = f * self.mean;
        let mut clamped = false;
        if mean[2] <= 0.0 {
            mean[2] = MIN_AREA;
            mean[6] = 0.0;
            clamped = true;
        }
        let q = Cov::from_diagonal(&State::from_column_slice(&noise.process));
        let covariance = f * self.covariance * f.transpose() + q;
        (KalmanState { mean, covariance }, clamped)
    }

    pub fn update(&self, b: &BoundingBox, noise: &KalmanNoise) -> Result<KalmanState> {
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_column_slice(
            &noise.measurement,
        ));
        let innovation = measure(b) - h * self.mean;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
        let gain = self.covariance * h.transpose() * s_inv;
        let mean = self.mean + gain * innovation;
        let p = (Cov::identity() - gain * h) * self.covariance;
        let covariance = 0.5 * (p + p.transpose());
        let scale = covariance.diagonal().abs().max().max(1.0);
        let min_eig = covariance
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(min_eig >= -1e-9 * scale) {
            return Err(Error::Numerical(format!(
                "posterior covariance not positive semi-definite (min eigenvalue {min_eig})"
            )));
        }
        Ok(KalmanState { mean, covariance })
    }
}

/// Optional region (e.g. a food hopper) inside which detections are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionRegion {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Drop a detection when `overlap / detection area` exceeds this.
    pub max_overlap_ratio: f64,
}

/// Per-frame filtering applied when detections are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_confidence: f64,
    pub max_per_frame: usize,
    pub exclusion: Option<ExclusionRegion>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_confidence: 0.4,
            max_per_frame: 5,
            exclusion: None,
        }
    }
}

/// Applies confidence, exclusion-region and per-frame count filters to the
/// detections of one frame. Survivors keep their input order.
pub fn ingest(detections: &[Detection], cfg: &IngestConfig) -> Vec<Detection> {
    let mut keep: Vec<usize> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.score >= cfg.min_confidence)
        .filter(|(_, d)| match &cfg.exclusion {
            Some(region) => d.bbox.intersection(&region.bbox) / d.bbox.area() <= region.max_overlap_ratio,
            None => true,
        })
        .map(|(k, _)| k)
        .collect();
    if keep.len() > cfg.max_per_frame {
        keep.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
        keep.truncate(cfg.max_per_frame);
        keep.sort_unstable();
    }
    keep.into_iter().map(|k| detections[k]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub min_contiguous_length: usize,
    pub kalman: KalmanNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_threshold: 0.8,
            min_contiguous_length: 2,
            kalman: KalmanNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Domain(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// A detection claimed by a track: its frame, its position in that frame's
/// (ingested) detection list and the raw box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Claim {
    pub frame: Frame,
    pub index: usize,
    pub detection: Detection,
}

/// A live or dead track inside a tracker run.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub claims: Vec<Claim>,
    pub state: KalmanState,
    pub alive: bool,
    /// Number of predictions whose area had to be clamped.
    pub clamped_predictions: usize,
}

impl Track {
    pub fn first_frame(&self) -> Frame {
        self.claims[0].frame
    }

    pub fn last_frame(&self) -> Frame {
        self.claims[self.claims.len() - 1].frame
    }

    /// Longest run of consecutive frames.
    pub fn longest_contiguous_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        let mut prev: Option<Frame> = None;
        for c in &self.claims {
            run = match prev {
                Some(p) if c.frame == p + 1 => run + 1,
                _ => 1,
            };
            best = best.max(run);
            prev = Some(c.frame);
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: Frame,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A finished tracklet: contiguous frames with the raw detection boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u64,
    pub frames: Vec<FrameBox>,
}

impl Tracklet {
    pub fn first_frame(&self) -> Frame {
        self.frames[0].frame
    }

    pub fn last_frame(&self) -> Frame {
        self.frames[self.frames.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn box_at(&self, frame: Frame) -> Option<&BoundingBox> {
        let first = self.first_frame();
        if frame < first {
            return None;
        }
        self.frames
            .get((frame - first) as usize)
            .filter(|fb| fb.frame == frame)
            .map(|fb| &fb.bbox)
    }

    /// Checks the contiguity invariant.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data(format!("tracklet {} has no frames", self.id)));
        }
        for w in self.frames.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::Data(format!(
                    "tracklet {} jumps from frame {} to {}",
                    self.id, w[0].frame, w[1].frame
                )));
            }
        }
        Ok(())
    }
}

/// Result of a single tracker step, by track id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub updated: Vec<u64>,
    pub newborn: Vec<u64>,
    pub killed: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    active: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<Frame>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            active: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Advances to `frame`, which must directly follow the previous step.
    ///
    /// Every active track is predicted, then associated to `detections` by
    /// min-cost matching on `1 - IoU` with pairs below the IoU threshold
    /// forbidden. Unmatched tracks die now, unmatched detections start new
    /// tracks.
    pub fn step(&mut self, frame: Frame, detections: &[Detection]) -> Result<StepOutcome> {
        if let Some(prev) = self.last_frame {
            if frame != prev + 1 {
                return Err(Error::Sequencing { previous: prev, got: frame });
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(Error::Data(format!(
                "detection for frame {} passed to step at frame {frame}",
                d.frame
            )));
        }
        self.last_frame = Some(frame);

        let noise = self.cfg.kalman.clone();
        let mut predicted = Vec::with_capacity(self.active.len());
        for track in &mut self.active {
            let (state, clamped) = track.state.predict(&noise);
            if clamped {
                track.clamped_predictions += 1;
                log::debug!("track {} predicted non-positive area at frame {frame}", track.id);
            }
            predicted.push(state.to_box());
            track.state = state;
        }

        let cost = CostMatrix::from_fn(self.active.len(), detections.len(), |r, k| {
            match &predicted[r] {
                Some(b) => 1.0 - iou(b, &detections[k].bbox),
                None => f64::INFINITY,
            }
        })?;
        let matching = solve_with_threshold(&cost, 1.0 - self.cfg.iou_threshold);
        let track_for_det = {
            let mut v = vec![None; detections.len()];
            for &(r, k) in &matching.pairs {
                v[k] = Some(r);
            }
            v
        };
        let matched_track = matching.col_for_row(self.active.len());

        let mut outcome = StepOutcome::default();
        let mut survivors = Vec::with_capacity(self.active.len());
        for (r, mut track) in std::mem::take(&mut self.active).into_iter().enumerate() {
            match matched_track[r] {
                Some(k) => {
                    let det = detections[k];
                    track.state = track.state.update(&det.bbox, &noise)?;
                    track.claims.push(Claim { frame, index: k, detection: det });
                    outcome.updated.push(track.id);
                    survivors.push(track);
                }
                None => {
                    track.alive = false;
                    outcome.killed.push(track.id);
                    self.finished.push(track);
                }
            }
        }
        for (k, det) in detections.iter().enumerate() {
            if track_for_det[k].is_some() {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            survivors.push(Track {
                id,
                claims: vec![Claim { frame, index: k, detection: *det }],
                state: KalmanState::from_box(&det.bbox, &noise),
                alive: true,
                clamped_predictions: 0,
            });
            outcome.newborn.push(id);
        }
        self.active = survivors;
        Ok(outcome)
    }

    /// Ends the run, returning every track ever created ordered by id.
    pub fn into_tracks(mut self) -> Vec<Track> {
        let mut all = std::mem::take(&mut self.finished);
        all.extend(self.active);
        all.sort_by_key(|t| t.id);
        all
    }

    /// Runs over every frame in `first..=last`; `detections_by_frame` must
    /// hold the already ingested detections indexed by `frame - first`.
    pub fn run(
        cfg: TrackerConfig,
        first: Frame,
        detections_by_frame: &[Vec<Detection>],
    ) -> Result<Vec<Track>> {
        let mut tracker = Tracker::new(cfg)?;
        for (offset, dets) in detections_by_frame.iter().enumerate() {
            tracker.step(first + offset as Frame, dets)?;
        }
        Ok(tracker.into_tracks())
    }
}

/// Drops tracks shorter than the minimum contiguous length and converts the
/// rest to tracklets carrying the raw detection boxes.
pub fn finalize(tracks: &[Track], cfg: &TrackerConfig) -> Vec<Tracklet> {
    tracks
        .iter()
        .filter(|t| !t.claims.is_empty() && t.longest_contiguous_run() >= cfg.min_contiguous_length)
        .map(|t| Tracklet {
            id: t.id,
            frames: t
                .claims
                .iter()
                .map(|c| FrameBox {
                    frame: c.frame,
                    bbox: c.detection.bbox,
                })
                .collect(),
        })
        .collect()
}

/// Groups detections by frame over `first..=last`, applying ingestion.
pub fn group_by_frame(
    detections: &[Detection],
    first: Frame,
    last: Frame,
    ingest_cfg: &IngestConfig,
) -> Vec<Vec<Detection>> {
    let span = (last - first + 1) as usize;
    let mut raw: Vec<Vec<Detection>> = vec![Vec::new(); span];
    for d in detections {
        if d.frame >= first && d.frame <= last {
            raw[(d.frame - first) as usize].push(*d);
        }
    }
    raw.iter().map(|f| ingest(f, ingest_cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn det(frame: Frame, b: BoundingBox) -> Detection {
        Detection::new(frame, b, 0.9).unwrap()
    }

    fn state(cx: f64, v_cx: f64) -> KalmanState {
        let mut s = KalmanState::from_box(&bb(cx, 0.0, 4.0, 2.0), &KalmanNoise::default());
        s.mean[4] = v_cx;
        s
    }

    #[test]
    fn predict_constant_velocity() {
        let noise = KalmanNoise::default();
        let (p, clamped) = state(3.0, 0.0).predict(&noise);
        assert!(!clamped);
        assert_eq!(p.mean[0], 3.0);
        let (p, _) = state(3.0, 2.0).predict(&noise);
        assert_eq!(p.mean[0], 5.0);
        let mut s = state(0.0, 1.0);
        for _ in 0..25 {
            s = s.predict(&noise).0;
        }
        assert_eq!(s.mean[0], 25.0);
        // Aspect has no velocity component.
        assert_eq!(s.mean[3], 2.0);
    }

    #[test]
    fn predict_clamps_area() {
        let mut s = state(0.0, 0.0);
        s.mean[6] = -100.0;
        let (p, clamped) = s.predict(&KalmanNoise::default());
        assert!(clamped);
        assert!(p.area() > 0.0);
    }

    #[test]
    fn update_at_predicted_mean_keeps_mean() {
        let noise = KalmanNoise::default();
        let s = state(10.0, 0.0);
        let b = s.to_box().unwrap();
        let u = s.update(&b, &noise).unwrap();
        assert!((u.mean - s.mean).abs().max() < 1e-9);
    }

    #[test]
    fn update_with_huge_measurement_noise_keeps_prior() {
        let noise = KalmanNoise {
            measurement: [1e15; 4],
            ..KalmanNoise::default()
        };
        let s = state(10.0, 0.0);
        let u = s.update(&bb(40.0, 7.0, 9.0, 3.0), &noise).unwrap();
        assert!((u.mean - s.mean).abs().max() < 1e-6);
    }

    #[test]
    fn update_matches_scalar_kalman_formula() {
        // Position is decoupled from other components at initialisation, so the
        // cx posterior follows the 1-D Kalman correction.
        let noise = KalmanNoise::default();
        let s = state(10.0, 0.0);
        let z = 13.0;
        let u = s.update(&bb(z, 0.0, 4.0, 2.0), &noise).unwrap();
        let (p, r) = (noise.initial[0], noise.measurement[0]);
        let k = p / (p + r);
        assert!((u.mean[0] - (10.0 + k * (z - 10.0))).abs() < 1e-12);
        assert!((u.covariance[(0, 0)] - (1.0 - k) * p).abs() < 1e-12);
    }

    #[test]
    fn step_matches_births_and_kills() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let out = t.step(0, &[det(0, bb(10.0, 10.0, 20.0, 10.0)), det(0, bb(80.0, 10.0, 20.0, 10.0))]).unwrap();
        assert_eq!(out.newborn, vec![1, 2]);
        let out = t.step(1, &[det(1, bb(10.5, 10.0, 20.0, 10.0))]).unwrap();
        assert_eq!(out.updated, vec![1]);
        assert_eq!(out.killed, vec![2]);
        assert!(out.newborn.is_empty());
        let out = t.step(2, &[]).unwrap();
        assert_eq!(out.killed, vec![1]);
        assert!(t.active().is_empty());
    }

    #[test]
    fn step_rejects_out_of_order_frames() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(5, &[]).unwrap();
        assert!(matches!(t.step(7, &[]), Err(Error::Sequencing { previous: 5, got: 7 })));
        assert!(matches!(t.step(5, &[]), Err(Error::Sequencing { .. })));
    }

    #[test]
    fn low_iou_breaks_track() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(0, &[det(0, bb(10.0, 10.0, 10.0, 10.0))]).unwrap();
        // IoU ~ 0.667 < 0.8.
        let out = t.step(1, &[det(1, bb(12.0, 10.0, 10.0, 10.0))]).unwrap();
        assert_eq!(out.killed, vec![1]);
        assert_eq!(out.newborn, vec![2]);
    }

    #[test]
    fn finalize_length_boundary_and_raw_boxes() {
        let cfg = TrackerConfig::default();
        let a = bb(10.0, 10.0, 20.0, 10.0);
        let a2 = bb(10.25, 10.1, 20.1, 10.0);
        let lone = bb(200.0, 10.0, 20.0, 10.0);
        let frames = vec![
            vec![det(0, a), det(0, lone)],
            vec![det(1, a2)],
            vec![],
        ];
        let tracks = Tracker::run(cfg.clone(), 0, &frames).unwrap();
        let out = finalize(&tracks, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frames.len(), 2);
        assert_eq!(out[0].frames[0].bbox, a);
        assert_eq!(out[0].frames[1].bbox, a2);
        out[0].validate().unwrap();
    }

    #[test]
    fn ingest_filters() {
        let mk = |s: f64, cx: f64| Detection::new(0, bb(cx, 0.0, 10.0, 10.0), s).unwrap();
        let dets: Vec<Detection> = vec![
            mk(0.3, 0.0),
            mk(0.5, 10.0),
            mk(0.9, 20.0),
            mk(0.45, 30.0),
            mk(0.8, 40.0),
            mk(0.7, 50.0),
            mk(0.6, 60.0),
            mk(0.95, 70.0),
        ];
        let kept = ingest(&dets, &IngestConfig::default());
        let centres: Vec<f64> = kept.iter().map(|d| d.bbox.cx).collect();
        assert_eq!(centres, vec![20.0, 40.0, 50.0, 60.0, 70.0]);

        let cfg = IngestConfig {
            exclusion: Some(ExclusionRegion {
                bbox: bb(20.0, 0.0, 10.0, 10.0),
                max_overlap_ratio: 0.4,
            }),
            ..IngestConfig::default()
        };
        let kept = ingest(&dets[1..3], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox.cx, 10.0);
    }
}
