//! Per-frame identification baselines: nearest projected tag (`static_c`)
//! and frame-by-frame probabilistic assignment (`static_p`).

use serde::{Deserialize, Serialize};

use crate::dataset::{IdentifiedFrame, LocalisationTrace};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::grid::{context_vector, Antenna};
use crate::matching::{solve_min_cost, solve_with_threshold, CostMatrix};
use crate::tracker::{Detection, Frame};
use crate::weights::{EmissionModel, VisibilityState, WeightModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    StaticC,
    StaticP,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::StaticC => "static_c",
            BaselineKind::StaticP => "static_p",
        }
    }
}

/// Hungarian matching of identities to boxes on the pixel distance between
/// box centroid and projected pickup. Identities left over are hidden.
/// `cutoff` (px) rejects pairs further apart.
pub fn static_c(
    boxes: &[BoundingBox],
    pickups: &[Antenna],
    emission: &EmissionModel,
    cutoff: Option<f64>,
) -> Result<Vec<Option<BoundingBox>>> {
    let tags: Vec<_> = pickups.iter().map(|&p| emission.centroid(p)).collect();
    let cost = CostMatrix::from_fn(pickups.len(), boxes.len(), |j, k| {
        boxes[k].centroid().distance(&tags[j])
    })?;
    let m = match cutoff {
        Some(c) => solve_with_threshold(&cost, c),
        None => solve_min_cost(&cost),
    };
    Ok(m
        .col_for_row(pickups.len())
        .into_iter()
        .map(|k| k.map(|k| boxes[k]))
        .collect())
}

/// Maximises, over one frame, the summed log-probability of each identity
/// taking one box or its hidden option, with every box left over charged to
/// the outlier model.
///
/// Subtracting the outlier weight of each box turns this into a matching of
/// identities to `boxes ++ hidden slots`, where identity `j` may only use
/// hidden slot `j`.
pub fn static_p(boxes: &[BoundingBox], pickups: &[Antenna], model: &WeightModel) -> Result<Vec<Option<BoundingBox>>> {
    let n = pickups.len();
    let d = boxes.len();
    let outlier: Vec<f64> = boxes.iter().map(|b| model.outlier_weight(b)).collect();
    let mut cost = vec![f64::INFINITY; n * (d + n)];
    for (j, &p) in pickups.iter().enumerate() {
        let others: Vec<Antenna> = pickups
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != j)
            .map(|(_, &a)| a)
            .collect();
        let c = context_vector(p, &others);
        for k in 0..d {
            let w = model.per_frame_weight(Some(&boxes[k]), p, &c) - outlier[k];
            if w.is_finite() {
                cost[j * (d + n) + k] = -w;
            }
        }
        let h = model.per_frame_weight(None, p, &c);
        if h.is_finite() {
            cost[j * (d + n) + d + j] = -h;
        }
    }
    let m = solve_min_cost(&CostMatrix::new(n, d + n, cost)?);
    Ok(m
        .col_for_row(n)
        .into_iter()
        .map(|k| k.filter(|&k| k < d).map(|k| boxes[k]))
        .collect())
}

/// Log-probability of one per-frame outcome under the `static_p` objective.
/// `choice[j]` is a box index or `None` for hidden.
pub fn static_p_score(boxes: &[BoundingBox], pickups: &[Antenna], model: &WeightModel, choice: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut used = vec![false; boxes.len()];
    for (j, &p) in pickups.iter().enumerate() {
        let others: Vec<Antenna> = pickups
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != j)
            .map(|(_, &a)| a)
            .collect();
        let c = context_vector(p, &others);
        match choice[j] {
            Some(k) => {
                used[k] = true;
                total += model.per_frame_weight(Some(&boxes[k]), p, &c);
            }
            None => total += model.per_frame_weight(None, p, &c),
        }
    }
    for (k, b) in boxes.iter().enumerate() {
        if !used[k] {
            total += model.outlier_weight(b);
        }
    }
    total
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Distance cutoff (px) for `static_c`; off when absent.
    pub static_c_cutoff: Option<f64>,
}

/// Runs a baseline over `first..` with `detections_by_frame[k]` holding the
/// ingested detections of frame `first + k`.
pub fn run_baseline(
    kind: BaselineKind,
    first: Frame,
    detections_by_frame: &[Vec<Detection>],
    trace: &LocalisationTrace,
    identities: usize,
    model: &WeightModel,
    cfg: &BaselineConfig,
) -> Result<Vec<IdentifiedFrame>> {
    if identities > trace.identities() {
        return Err(Error::Data(format!(
            "{identities} identities requested but the trace has {}",
            trace.identities()
        )));
    }
    let mut out = Vec::with_capacity(detections_by_frame.len());
    for (k, dets) in detections_by_frame.iter().enumerate() {
        let frame = first + k as Frame;
        let pickups = &trace.frame(frame)?[..identities];
        let boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
        let assigned = match kind {
            BaselineKind::StaticC => static_c(&boxes, pickups, &model.emission, cfg.static_c_cutoff)?,
            BaselineKind::StaticP => static_p(&boxes, pickups, model)?,
        };
        out.push(IdentifiedFrame { frame, boxes: assigned });
    }
    Ok(out)
}

/// `p(hidden)` of identity `j` given the frame's pickups.
pub fn hidden_probability(model: &WeightModel, pickups: &[Antenna], j: usize) -> f64 {
    use crate::weights::VisibilityModel;
    let others: Vec<Antenna> = pickups
        .iter()
        .enumerate()
        .filter(|&(o, _)| o != j)
        .map(|(_, &a)| a)
        .collect();
    model
        .visibility
        .distribution(pickups[j], &context_vector(pickups[j], &others))[VisibilityState::Hidden.index()]
}
