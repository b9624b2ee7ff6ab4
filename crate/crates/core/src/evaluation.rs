//! Identification metrics against ground truth: overall per-(frame, identity)
//! scores and scores conditioned on the detections through an IoU oracle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, AnnotationVisibility, IdentifiedFrame};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::matching::{solve_min_cost, CostMatrix};
use crate::tracker::{Detection, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoUThresholds {
    pub normal: f64,
    pub difficult: f64,
}

impl Default for IoUThresholds {
    fn default() -> Self {
        IoUThresholds {
            normal: 0.5,
            difficult: 0.3,
        }
    }
}

impl IoUThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.difficult && self.difficult <= self.normal && self.normal <= 1.0) {
            return Err(Error::Domain(format!(
                "IoU thresholds need 0 < difficult <= normal <= 1, got {} and {}",
                self.difficult, self.normal
            )));
        }
        Ok(())
    }

    pub fn for_annotation(&self, gt: &GroundTruthBox) -> f64 {
        if gt.difficult {
            self.difficult
        } else {
            self.normal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BoundingBox,
    pub difficult: bool,
}

/// Ground truth of one frame; `None` is a hidden identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame: Frame,
    pub identities: Vec<Option<GroundTruthBox>>,
}

/// Groups annotations into frames of `identities` entries. Identities without
/// an annotation in an annotated frame are hidden. A frame with any excluded
/// annotation is dropped entirely.
pub fn ground_truth_frames(annotations: &[Annotation], identities: usize) -> Result<Vec<GroundTruthFrame>> {
    let mut frames: BTreeMap<Frame, (Vec<Option<GroundTruthBox>>, Vec<bool>, bool)> = BTreeMap::new();
    for a in annotations {
        if a.identity >= identities {
            return Err(Error::Data(format!(
                "frame {}: identity {} exceeds the {identities} identities",
                a.frame,
                a.identity + 1
            )));
        }
        let entry = frames
            .entry(a.frame)
            .or_insert_with(|| (vec![None; identities], vec![false; identities], false));
        if entry.1[a.identity] {
            return Err(Error::Data(format!(
                "frame {}: identity {} annotated twice",
                a.frame,
                a.identity + 1
            )));
        }
        entry.1[a.identity] = true;
        entry.2 |= a.exclude;
        if a.visibility != AnnotationVisibility::Hidden {
            if let Some(b) = a.bbox {
                entry.0[a.identity] = Some(GroundTruthBox {
                    bbox: b,
                    difficult: a.difficult,
                });
            }
        }
    }
    Ok(frames
        .into_iter()
        .filter(|(_, (_, _, excluded))| !excluded)
        .map(|(frame, (ids, _, _))| GroundTruthFrame { frame, identities: ids })
        .collect())
}

/// A rate reported together with its count and normaliser. `value` is absent
/// when the normaliser is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: Option<f64>,
    pub count: u64,
    pub normaliser: u64,
}

impl Rate {
    pub fn new(count: u64, normaliser: u64) -> Self {
        Rate {
            value: (normaliser > 0).then(|| count as f64 / normaliser as f64),
            count,
            normaliser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    /// Correct (frame, identity) pairs over all pairs.
    pub accuracy: Rate,
    /// Mean IoU over visible identities; absent with none visible.
    pub mean_iou: Option<f64>,
    /// Predicted hidden while visible, over visible.
    pub false_negative_rate: Rate,
    /// Predicted a box while hidden, over hidden.
    pub false_positive_rate: Rate,
}

impl OverallMetrics {
    pub fn from_counts(correct: u64, visible: u64, hidden: u64, false_negatives: u64, false_positives: u64, iou_sum: f64) -> Self {
        OverallMetrics {
            accuracy: Rate::new(correct, visible + hidden),
            mean_iou: (visible > 0).then(|| iou_sum / visible as f64),
            false_negative_rate: Rate::new(false_negatives, visible),
            false_positive_rate: Rate::new(false_positives, hidden),
        }
    }
}

fn predictions_by_frame<'a>(gt: &[GroundTruthFrame], pred: &'a [IdentifiedFrame]) -> Result<Vec<&'a IdentifiedFrame>> {
    let index: BTreeMap<Frame, &IdentifiedFrame> = pred.iter().map(|p| (p.frame, p)).collect();
    gt.iter()
        .map(|g| {
            let p = index
                .get(&g.frame)
                .ok_or_else(|| Error::Data(format!("no prediction for annotated frame {}", g.frame)))?;
            if p.boxes.len() != g.identities.len() {
                return Err(Error::Data(format!(
                    "frame {}: {} predicted identities, {} annotated",
                    g.frame,
                    p.boxes.len(),
                    g.identities.len()
                )));
            }
            Ok(*p)
        })
        .collect()
}

pub fn overall_metrics(gt: &[GroundTruthFrame], pred: &[IdentifiedFrame], th: &IoUThresholds) -> Result<OverallMetrics> {
    th.validate()?;
    let preds = predictions_by_frame(gt, pred)?;
    let (mut correct, mut visible, mut hidden, mut fneg, mut fpos) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut iou_sum = 0.0;
    for (g, p) in gt.iter().zip(preds) {
        for (truth, guess) in g.identities.iter().zip(&p.boxes) {
            match (truth, guess) {
                (None, None) => {
                    hidden += 1;
                    correct += 1;
                }
                (None, Some(_)) => {
                    hidden += 1;
                    fpos += 1;
                }
                (Some(_), None) => {
                    visible += 1;
                    fneg += 1;
                }
                (Some(t), Some(b)) => {
                    visible += 1;
                    let overlap = iou(&t.bbox, b);
                    iou_sum += overlap;
                    if overlap > th.for_annotation(t) {
                        correct += 1;
                    }
                }
            }
        }
    }
    Ok(OverallMetrics::from_counts(correct, visible, hidden, fneg, fpos, iou_sum))
}

/// Identity of each detection under the IoU-optimal matching to the
/// annotated boxes; pairs below the annotation's threshold are not allowed.
pub fn oracle_assign(gt: &GroundTruthFrame, detections: &[BoundingBox], th: &IoUThresholds) -> Result<Vec<Option<usize>>> {
    let visible: Vec<(usize, &GroundTruthBox)> = gt
        .identities
        .iter()
        .enumerate()
        .filter_map(|(j, g)| g.as_ref().map(|g| (j, g)))
        .collect();
    let cost = CostMatrix::from_fn(detections.len(), visible.len(), |k, v| {
        let overlap = iou(&detections[k], &visible[v].1.bbox);
        if overlap >= th.for_annotation(visible[v].1) {
            1.0 - overlap
        } else {
            f64::INFINITY
        }
    })?;
    Ok(solve_min_cost(&cost)
        .col_for_row(detections.len())
        .into_iter()
        .map(|v| v.map(|v| visible[v].0))
        .collect())
}

/// Identity the method gave each detection, recovered by exact box equality.
/// Detections with identical boxes are interchangeable; their labels are
/// ordered to agree with `oracle` where possible.
pub fn detection_labels(detections: &[BoundingBox], identified: &IdentifiedFrame, oracle: &[Option<usize>]) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; detections.len()];
    let mut groups: Vec<(BoundingBox, Vec<usize>, Vec<usize>)> = Vec::new();
    for (k, d) in detections.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == *d) {
            Some(g) => g.1.push(k),
            None => groups.push((*d, vec![k], Vec::new())),
        }
    }
    for (j, b) in identified.boxes.iter().enumerate() {
        let Some(b) = b else { continue };
        let g = groups.iter_mut().find(|g| g.0 == *b).ok_or_else(|| {
            Error::Data(format!(
                "frame {}: box of identity {} is not one of the frame's detections",
                identified.frame,
                j + 1
            ))
        })?;
        g.2.push(j);
    }
    for (_, positions, mut ids) in groups {
        if ids.len() > positions.len() {
            return Err(Error::Data(format!(
                "frame {}: {} identities share {} identical detections",
                identified.frame,
                ids.len(),
                positions.len()
            )));
        }
        let mut open = Vec::new();
        for &k in &positions {
            match ids.iter().position(|&j| oracle.get(k).copied().flatten() == Some(j)) {
                Some(x) => labels[k] = Some(ids.remove(x)),
                None => open.push(k),
            }
        }
        for (k, j) in open.into_iter().zip(ids) {
            labels[k] = Some(j);
        }
    }
    Ok(labels)
}

/// Oracle and method labels of one frame's detections.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub frame: Frame,
    pub oracle: Vec<Option<usize>>,
    pub predicted: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GivenDetectionsMetrics {
    /// Mean over frames of the fraction of detections labelled as the oracle.
    pub accuracy: Option<f64>,
    /// The same fraction pooled over all detections.
    pub accuracy_pooled: Rate,
    pub frames: u64,
    /// Frames without detections, scored as fully correct.
    pub vacuous_frames: u64,
    /// Wrong animal, over detections the oracle gives an animal.
    pub mis_id_rate: Rate,
    /// Predicted outlier, over detections the oracle gives an animal.
    pub false_negative_rate: Rate,
    /// Predicted an animal, over detections the oracle leaves unmatched.
    pub false_positive_rate: Rate,
    /// Detections not labelled as the oracle.
    pub errors: u64,
}

impl GivenDetectionsMetrics {
    pub fn from_counts(
        detections: u64,
        correct: u64,
        oracle_matched: u64,
        oracle_unmatched: u64,
        mis_ids: u64,
        false_negatives: u64,
        false_positives: u64,
    ) -> Self {
        GivenDetectionsMetrics {
            accuracy: Rate::new(correct, detections).value,
            accuracy_pooled: Rate::new(correct, detections),
            frames: 0,
            vacuous_frames: 0,
            mis_id_rate: Rate::new(mis_ids, oracle_matched),
            false_negative_rate: Rate::new(false_negatives, oracle_matched),
            false_positive_rate: Rate::new(false_positives, oracle_unmatched),
            errors: detections - correct,
        }
    }

    /// Every error is exactly one of mis-identification, false negative or
    /// false positive.
    pub fn decomposition_holds(&self) -> bool {
        self.mis_id_rate.count + self.false_negative_rate.count + self.false_positive_rate.count == self.errors
    }
}

pub fn given_detections_metrics(frames: &[FrameLabels]) -> Result<GivenDetectionsMetrics> {
    let (mut correct, mut total, mut matched, mut unmatched) = (0u64, 0u64, 0u64, 0u64);
    let (mut mis, mut fneg, mut fpos, mut vacuous) = (0u64, 0u64, 0u64, 0u64);
    let mut per_frame_sum = 0.0;
    for f in frames {
        if f.oracle.len() != f.predicted.len() {
            return Err(Error::Data(format!(
                "frame {}: {} oracle labels, {} predicted",
                f.frame,
                f.oracle.len(),
                f.predicted.len()
            )));
        }
        let mut frame_correct = 0u64;
        for (o, p) in f.oracle.iter().zip(&f.predicted) {
            match (o, p) {
                (Some(_), _) => matched += 1,
                (None, _) => unmatched += 1,
            }
            match (o, p) {
                (o, p) if o == p => frame_correct += 1,
                (Some(_), Some(_)) => mis += 1,
                (Some(_), None) => fneg += 1,
                (None, Some(_)) => fpos += 1,
                (None, None) => unreachable!(),
            }
        }
        let n = f.oracle.len() as u64;
        if n == 0 {
            vacuous += 1;
            per_frame_sum += 1.0;
        } else {
            per_frame_sum += frame_correct as f64 / n as f64;
        }
        correct += frame_correct;
        total += n;
    }
    let mut m = GivenDetectionsMetrics::from_counts(total, correct, matched, unmatched, mis, fneg, fpos);
    m.frames = frames.len() as u64;
    m.vacuous_frames = vacuous;
    m.accuracy = (!frames.is_empty()).then(|| per_frame_sum / frames.len() as f64);
    debug_assert!(m.decomposition_holds());
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub thresholds: IoUThresholds,
    pub overall: OverallMetrics,
    pub given_detections: GivenDetectionsMetrics,
}

/// Scores `pred` against `gt`; `detections` are the ingested detections the
/// method was given.
pub fn evaluate(
    method: &str,
    gt: &[GroundTruthFrame],
    pred: &[IdentifiedFrame],
    detections: &[Detection],
    th: &IoUThresholds,
) -> Result<EvaluationReport> {
    let overall = overall_metrics(gt, pred, th)?;
    let preds = predictions_by_frame(gt, pred)?;
    let mut by_frame: BTreeMap<Frame, Vec<BoundingBox>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame).or_default().push(d.bbox);
    }
    let mut labels = Vec::with_capacity(gt.len());
    for (g, p) in gt.iter().zip(preds) {
        let dets = by_frame.get(&g.frame).map(Vec::as_slice).unwrap_or(&[]);
        let oracle = oracle_assign(g, dets, th)?;
        let predicted = detection_labels(dets, p, &oracle)?;
        labels.push(FrameLabels {
            frame: g.frame,
            oracle,
            predicted,
        });
    }
    Ok(EvaluationReport {
        method: method.to_string(),
        thresholds: *th,
        overall,
        given_detections: given_detections_metrics(&labels)?,
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl EvaluationReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let o = &self.overall;
        let g = &self.given_detections;
        let rows: Vec<(&str, Option<f64>, Option<(u64, u64)>)> = vec![
            ("overall accuracy", o.accuracy.value, Some((o.accuracy.count, o.accuracy.normaliser))),
            ("overall mean IoU", o.mean_iou, None),
            ("overall FNR", o.false_negative_rate.value, Some((o.false_negative_rate.count, o.false_negative_rate.normaliser))),
            ("overall FPR", o.false_positive_rate.value, Some((o.false_positive_rate.count, o.false_positive_rate.normaliser))),
            ("given-detections accuracy", g.accuracy, None),
            ("given-detections accuracy (pooled)", g.accuracy_pooled.value, Some((g.accuracy_pooled.count, g.accuracy_pooled.normaliser))),
            ("mis-identification rate", g.mis_id_rate.value, Some((g.mis_id_rate.count, g.mis_id_rate.normaliser))),
            ("given-detections FNR", g.false_negative_rate.value, Some((g.false_negative_rate.count, g.false_negative_rate.normaliser))),
            ("given-detections FPR", g.false_positive_rate.value, Some((g.false_positive_rate.count, g.false_positive_rate.normaliser))),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "method: {}", self.method);
        let _ = writeln!(out, "{:<36} {:>7} {:>8} {:>10}", "metric", "value", "count", "normaliser");
        for (name, v, c) in rows {
            let (count, norm) = c.map_or((String::new(), String::new()), |(c, n)| (c.to_string(), n.to_string()));
            let _ = writeln!(out, "{name:<36} {:>7} {count:>8} {norm:>10}", fmt_value(v));
        }
        let _ = writeln!(out, "frames {} (without detections: {})", g.frames, g.vacuous_frames);
        out
    }
}
