//! Log-probability affinity between tracklets (real or hidden) and identities
//! (animals or the outlier column).
//!
//! For an animal picked up at antenna `p` with neighbourhood context `c`, a
//! frame's box `b` scores
//!
//! ```text
//! log sum_v p(b | p, v) p(v | p, c),   v in {clear, truncated, hidden}
//! ```
//!
//! where `p(b | p, hidden)` is 1 for the hidden box and 0 for any real box,
//! and the visible states use a Gaussian over `(cx, cy, w, h)`. The centroid
//! mean comes from a homography on the antenna position, the size mean is per
//! grid row and visibility, and the covariance is per row. The outlier column
//! scores real boxes under independent centroid and size Gaussians.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, AnnotationVisibility, LocalisationTrace};
use crate::error::{Error, Result};
use crate::geometry::{fit_homography, BoundingBox, Homography, Point2};
use crate::grid::{Antenna, AntennaGrid, ContextVector, ANTENNA_COUNT, GRID_ROWS};
use crate::tracker::{Frame, Tracklet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibilityState {
    Clear,
    Truncated,
    Hidden,
}

impl VisibilityState {
    pub const ALL: [VisibilityState; 3] = [
        VisibilityState::Clear,
        VisibilityState::Truncated,
        VisibilityState::Hidden,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_visible(self) -> bool {
        self != VisibilityState::Hidden
    }

    pub fn from_annotation(v: AnnotationVisibility) -> Option<Self> {
        match v {
            AnnotationVisibility::Clear => Some(VisibilityState::Clear),
            AnnotationVisibility::Truncated => Some(VisibilityState::Truncated),
            AnnotationVisibility::Hidden => Some(VisibilityState::Hidden),
            AnnotationVisibility::Marginal => None,
        }
    }
}

/// Either an animal (0-based) or the outlier model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    Identity(usize),
    Outlier,
}

/// `p(v | p, c)` as `[clear, truncated, hidden]`.
pub trait VisibilityModel: Send + Sync {
    fn distribution(&self, p: Antenna, c: &ContextVector) -> [f64; 3];
}

/// The same distribution everywhere. Mostly useful for tests and ablations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedVisibility(pub [f64; 3]);

impl VisibilityModel for FixedVisibility {
    fn distribution(&self, _: Antenna, _: &ContextVector) -> [f64; 3] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKeying {
    /// Pool pickups by grid row.
    #[default]
    Row,
    /// Key on the full antenna id.
    Cell,
}

impl ContextKeying {
    fn position(self, p: Antenna) -> u8 {
        match self {
            ContextKeying::Row => p.row() as u8,
            ContextKeying::Cell => p.id(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilitySample {
    pub antenna: Antenna,
    pub context: ContextVector,
    pub visibility: VisibilityState,
}

/// Additively smoothed conditional frequency table over
/// `(position key, context) -> visibility`. Unseen keys fall back to the
/// (equally smoothed) marginal over all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VisibilityTableRecord", try_from = "VisibilityTableRecord")]
pub struct VisibilityTable {
    keying: ContextKeying,
    alpha: f64,
    counts: BTreeMap<(u8, ContextVector), [u64; 3]>,
    marginal: [u64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VisibilityTableRecord {
    keying: ContextKeying,
    alpha: f64,
    marginal: [u64; 3],
    entries: Vec<VisibilityEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VisibilityEntry {
    position: u8,
    context: [u8; 9],
    counts: [u64; 3],
}

impl From<VisibilityTable> for VisibilityTableRecord {
    fn from(t: VisibilityTable) -> Self {
        VisibilityTableRecord {
            keying: t.keying,
            alpha: t.alpha,
            marginal: t.marginal,
            entries: t
                .counts
                .into_iter()
                .map(|((position, context), counts)| VisibilityEntry {
                    position,
                    context: context.0,
                    counts,
                })
                .collect(),
        }
    }
}

impl TryFrom<VisibilityTableRecord> for VisibilityTable {
    type Error = Error;

    fn try_from(r: VisibilityTableRecord) -> Result<Self> {
        if !(r.alpha > 0.0) {
            return Err(Error::Domain(format!("smoothing alpha must be positive, got {}", r.alpha)));
        }
        Ok(VisibilityTable {
            keying: r.keying,
            alpha: r.alpha,
            marginal: r.marginal,
            counts: r
                .entries
                .into_iter()
                .map(|e| ((e.position, ContextVector(e.context)), e.counts))
                .collect(),
        })
    }
}

impl VisibilityTable {
    pub fn keying(&self) -> ContextKeying {
        self.keying
    }

    pub fn marginal_distribution(&self) -> [f64; 3] {
        self.smoothed(&self.marginal)
    }

    fn smoothed(&self, n: &[u64; 3]) -> [f64; 3] {
        let total = (n[0] + n[1] + n[2]) as f64 + 3.0 * self.alpha;
        n.map(|k| (k as f64 + self.alpha) / total)
    }

    /// True when `(p, c)` was seen during fitting.
    pub fn has_key(&self, p: Antenna, c: &ContextVector) -> bool {
        self.counts.contains_key(&(self.keying.position(p), *c))
    }
}

impl VisibilityModel for VisibilityTable {
    fn distribution(&self, p: Antenna, c: &ContextVector) -> [f64; 3] {
        match self.counts.get(&(self.keying.position(p), *c)) {
            Some(n) => self.smoothed(n),
            None => self.marginal_distribution(),
        }
    }
}

pub fn fit_visibility(
    samples: &[VisibilitySample],
    keying: ContextKeying,
    alpha: f64,
) -> Result<VisibilityTable> {
    if samples.is_empty() {
        return Err(Error::Fit("no visibility samples".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Fit(format!("smoothing alpha must be positive, got {alpha}")));
    }
    let mut counts: BTreeMap<(u8, ContextVector), [u64; 3]> = BTreeMap::new();
    let mut marginal = [0u64; 3];
    for s in samples {
        let v = s.visibility.index();
        counts
            .entry((keying.position(s.antenna), s.context))
            .or_insert([0; 3])[v] += 1;
        marginal[v] += 1;
    }
    Ok(VisibilityTable {
        keying,
        alpha,
        counts,
        marginal,
    })
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
struct Gaussian<const N: usize> {
    mean: SVector<f64, N>,
    chol: SMatrix<f64, N, N>,
    log_norm: f64,
}

impl<const N: usize> Gaussian<N> {
    fn new(mean: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Result<Self> {
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = 2.0 * (0..N).map(|k| chol[(k, k)].ln()).sum::<f64>();
        Ok(Gaussian {
            mean,
            chol,
            log_norm: -0.5 * (N as f64 * LN_2PI + log_det),
        })
    }

    fn log_density(&self, x: &SVector<f64, N>) -> f64 {
        self.log_density_with_mean(x, &self.mean)
    }

    fn log_density_with_mean(&self, x: &SVector<f64, N>, mean: &SVector<f64, N>) -> f64 {
        let d = x - mean;
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

fn to_matrix<const N: usize>(rows: &[[f64; N]; N]) -> SMatrix<f64, N, N> {
    SMatrix::<f64, N, N>::from_fn(|r, c| rows[r][c])
}

fn is_symmetric<const N: usize>(rows: &[[f64; N]; N]) -> bool {
    (0..N).all(|r| (0..N).all(|c| rows[r][c] == rows[c][r]))
}

/// Serialisable parameters of the per-animal box emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub grid: AntennaGrid,
    /// Base-plate (mm) to image (px) map for box centroids.
    pub centroid_homography: Homography,
    /// `size_means[row][visibility]` = (w, h), visibility 0 = clear, 1 = truncated.
    pub size_means: [[[f64; 2]; 2]; GRID_ROWS],
    /// One (cx, cy, w, h) covariance per grid row, shared by both visibilities.
    pub covariances: [[[f64; 4]; 4]; GRID_ROWS],
}

/// Box emission for visible animals, ready for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EmissionParams", try_from = "EmissionParams")]
pub struct EmissionModel {
    params: EmissionParams,
    /// Mean (cx, cy, w, h) for each antenna (index id - 1) and visible state.
    means: Vec<[SVector<f64, 4>; 2]>,
    rows: Vec<Gaussian<4>>,
}

impl From<EmissionModel> for EmissionParams {
    fn from(m: EmissionModel) -> Self {
        m.params
    }
}

impl TryFrom<EmissionParams> for EmissionModel {
    type Error = Error;

    fn try_from(p: EmissionParams) -> Result<Self> {
        EmissionModel::new(p)
    }
}

impl EmissionModel {
    pub fn new(params: EmissionParams) -> Result<Self> {
        for (row, sizes) in params.size_means.iter().enumerate() {
            if sizes.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!("size means of row {row} must be positive")));
            }
        }
        let mut rows = Vec::with_capacity(GRID_ROWS);
        for (row, cov) in params.covariances.iter().enumerate() {
            if !is_symmetric(cov) {
                return Err(Error::Domain(format!("covariance of row {row} is not symmetric")));
            }
            rows.push(
                Gaussian::new(SVector::zeros(), to_matrix(cov))
                    .map_err(|_| Error::Domain(format!("covariance of row {row} is not positive definite")))?,
            );
        }
        let mut means = Vec::with_capacity(ANTENNA_COUNT);
        for a in Antenna::all() {
            let c = params.centroid_homography.project(&params.grid.world(a))?;
            let s = &params.size_means[a.row()];
            means.push([0, 1].map(|v| SVector::<f64, 4>::new(c.x, c.y, s[v][0], s[v][1])));
        }
        Ok(EmissionModel {
            params,
            means,
            rows,
        })
    }

    pub fn params(&self) -> &EmissionParams {
        &self.params
    }

    pub fn grid(&self) -> &AntennaGrid {
        &self.params.grid
    }

    /// Projected centroid of an antenna.
    pub fn centroid(&self, p: Antenna) -> Point2 {
        let m = &self.means[p.id() as usize - 1][0];
        Point2::new(m[0], m[1])
    }

    /// Mean box of a visible state, `None` for hidden.
    pub fn mean(&self, p: Antenna, v: VisibilityState) -> Option<[f64; 4]> {
        if !v.is_visible() {
            return None;
        }
        let m = &self.means[p.id() as usize - 1][v.index()];
        Some([m[0], m[1], m[2], m[3]])
    }

    pub fn covariance(&self, p: Antenna) -> [[f64; 4]; 4] {
        self.params.covariances[p.row()]
    }

    fn visible_log_density(&self, b: &BoundingBox, p: Antenna, v: VisibilityState) -> f64 {
        let x = SVector::<f64, 4>::from(b.as_array());
        let mean = &self.means[p.id() as usize - 1][v.index()];
        self.rows[p.row()].log_density_with_mean(&x, mean)
    }
}

/// `log p(b | p, v)`; `None` is the hidden box.
pub fn bb_log_density(b: Option<&BoundingBox>, p: Antenna, v: VisibilityState, em: &EmissionModel) -> f64 {
    match (v, b) {
        (VisibilityState::Hidden, None) => 0.0,
        (VisibilityState::Hidden, Some(_)) => f64::NEG_INFINITY,
        (_, None) => f64::NEG_INFINITY,
        (_, Some(b)) => em.visible_log_density(b, p, v),
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(b | p, c)` with the visibility marginalised out.
pub fn per_frame_weight(
    b: Option<&BoundingBox>,
    p: Antenna,
    c: &ContextVector,
    vm: &dyn VisibilityModel,
    em: &EmissionModel,
) -> f64 {
    let dist = vm.distribution(p, c);
    let terms = VisibilityState::ALL.map(|v| {
        let prior = dist[v.index()];
        if prior <= 0.0 {
            f64::NEG_INFINITY
        } else {
            bb_log_density(b, p, v, em) + prior.ln()
        }
    });
    log_sum_exp(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierParams {
    pub centroid_mean: [f64; 2],
    pub centroid_covariance: [[f64; 2]; 2],
    pub size_mean: [f64; 2],
    pub size_covariance: [[f64; 2]; 2],
}

/// Background model: independent Gaussians on the centroid and on the size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "OutlierParams", try_from = "OutlierParams")]
pub struct OutlierModel {
    params: OutlierParams,
    centroid: Gaussian<2>,
    size: Gaussian<2>,
}

impl From<OutlierModel> for OutlierParams {
    fn from(m: OutlierModel) -> Self {
        m.params
    }
}

impl TryFrom<OutlierParams> for OutlierModel {
    type Error = Error;

    fn try_from(p: OutlierParams) -> Result<Self> {
        OutlierModel::new(p)
    }
}

impl OutlierModel {
    pub fn new(params: OutlierParams) -> Result<Self> {
        if !is_symmetric(&params.centroid_covariance) || !is_symmetric(&params.size_covariance) {
            return Err(Error::Domain("outlier covariances must be symmetric".into()));
        }
        let centroid = Gaussian::new(
            SVector::from(params.centroid_mean),
            to_matrix(&params.centroid_covariance),
        )
        .map_err(|_| Error::Domain("outlier centroid covariance is not positive definite".into()))?;
        let size = Gaussian::new(SVector::from(params.size_mean), to_matrix(&params.size_covariance))
            .map_err(|_| Error::Domain("outlier size covariance is not positive definite".into()))?;
        Ok(OutlierModel {
            params,
            centroid,
            size,
        })
    }

    pub fn params(&self) -> &OutlierParams {
        &self.params
    }
}

pub fn outlier_weight(b: Option<&BoundingBox>, om: &OutlierModel) -> Result<f64> {
    let b = b.ok_or_else(|| Error::Domain("the outlier model cannot own a hidden box".into()))?;
    Ok(om.centroid.log_density(&SVector::from([b.cx, b.cy]))
        + om.size.log_density(&SVector::from([b.w, b.h])))
}

/// Sum of per-frame weights of a real tracklet under `column`.
pub fn tracklet_weight(
    t: &Tracklet,
    column: Column,
    trace: &LocalisationTrace,
    vm: &dyn VisibilityModel,
    em: &EmissionModel,
    om: &OutlierModel,
) -> Result<f64> {
    let mut total = 0.0;
    for fb in &t.frames {
        total += match column {
            Column::Identity(j) => {
                let (p, c) = trace.pickup_context(fb.frame, j)?;
                per_frame_weight(Some(&fb.bbox), p, &c, vm, em)
            }
            Column::Outlier => {
                // Keeps the coverage contract of the animal columns.
                trace.frame(fb.frame)?;
                outlier_weight(Some(&fb.bbox), om)?
            }
        };
    }
    Ok(total)
}

/// `sum_f log p(hidden | p_j, c_j)` over the frames of an interval.
pub fn hidden_tracklet_weight(
    frames: RangeInclusive<Frame>,
    identity: usize,
    trace: &LocalisationTrace,
    vm: &dyn VisibilityModel,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Data("interval has no frames".into()));
    }
    let mut total = 0.0;
    for f in frames {
        let (p, c) = trace.pickup_context(f, identity)?;
        let ph = vm.distribution(p, &c)[VisibilityState::Hidden.index()];
        total += if ph > 0.0 { ph.ln() } else { f64::NEG_INFINITY };
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionSample {
    pub bbox: BoundingBox,
    pub antenna: Antenna,
    /// Clear or truncated.
    pub visibility: VisibilityState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightModelConfig {
    pub grid: AntennaGrid,
    pub keying: ContextKeying,
    /// Additive smoothing of the visibility table.
    pub alpha: f64,
    /// Variance added to every covariance diagonal.
    pub covariance_floor: f64,
    /// Rows with fewer residuals borrow the globally pooled covariance.
    pub min_row_samples: usize,
    /// Image width and height (px).
    pub image_size: [f64; 2],
    /// Outlier centroid standard deviation as a fraction of the image size.
    pub outlier_centroid_breadth: f64,
}

impl Default for WeightModelConfig {
    fn default() -> Self {
        WeightModelConfig {
            grid: AntennaGrid::default(),
            keying: ContextKeying::Row,
            alpha: 1.0,
            covariance_floor: 1.0,
            min_row_samples: 5,
            image_size: [1280.0, 720.0],
            outlier_centroid_breadth: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmissionFit {
    pub model: EmissionModel,
    pub warnings: Vec<String>,
}

fn regularised<const N: usize>(mut cov: SMatrix<f64, N, N>, floor: f64) -> SMatrix<f64, N, N> {
    cov = 0.5 * (cov + cov.transpose());
    for k in 0..N {
        cov[(k, k)] += floor;
    }
    let mut jitter = floor.max(1e-9);
    while cov.cholesky().is_none() {
        for k in 0..N {
            cov[(k, k)] += jitter;
        }
        jitter *= 10.0;
    }
    cov
}

fn to_rows<const N: usize>(m: &SMatrix<f64, N, N>) -> [[f64; N]; N] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn scatter<const N: usize>(residuals: &[SVector<f64, N>]) -> SMatrix<f64, N, N> {
    let mut acc = SMatrix::<f64, N, N>::zeros();
    for r in residuals {
        acc += r * r.transpose();
    }
    acc / residuals.len().max(1) as f64
}

/// Fits the emission Gaussian from annotated boxes paired with pickups.
pub fn fit_emission(samples: &[EmissionSample], cfg: &WeightModelConfig) -> Result<EmissionFit> {
    let mut warnings = Vec::new();
    let mut distinct: Vec<Antenna> = samples.iter().map(|s| s.antenna).collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Fit(format!(
            "need boxes on at least 4 distinct antennas, got {}",
            distinct.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !s.visibility.is_visible()) {
        return Err(Error::Fit(format!("hidden sample at antenna {}", s.antenna)));
    }

    let world: Vec<Point2> = samples.iter().map(|s| cfg.grid.world(s.antenna)).collect();
    let image: Vec<Point2> = samples.iter().map(|s| s.bbox.centroid()).collect();
    let homography = fit_homography(&world, &image)?.homography;

    // Size means per (row, visibility).
    let mut sums = [[[0.0f64; 2]; 2]; GRID_ROWS];
    let mut counts = [[0usize; 2]; GRID_ROWS];
    let mut vis_sums = [[0.0f64; 2]; 2];
    let mut vis_counts = [0usize; 2];
    for s in samples {
        let (r, v) = (s.antenna.row(), s.visibility.index());
        sums[r][v][0] += s.bbox.w;
        sums[r][v][1] += s.bbox.h;
        counts[r][v] += 1;
        vis_sums[v][0] += s.bbox.w;
        vis_sums[v][1] += s.bbox.h;
        vis_counts[v] += 1;
    }
    let all_count = vis_counts[0] + vis_counts[1];
    let global = [
        (vis_sums[0][0] + vis_sums[1][0]) / all_count as f64,
        (vis_sums[0][1] + vis_sums[1][1]) / all_count as f64,
    ];
    let mut size_means = [[[0.0f64; 2]; 2]; GRID_ROWS];
    for r in 0..GRID_ROWS {
        for v in 0..2 {
            let other = 1 - v;
            size_means[r][v] = if counts[r][v] > 0 {
                let n = counts[r][v] as f64;
                [sums[r][v][0] / n, sums[r][v][1] / n]
            } else if counts[r][other] > 0 {
                warnings.push(format!(
                    "row {r}: no {:?} boxes, borrowing the {:?} size mean",
                    VisibilityState::ALL[v],
                    VisibilityState::ALL[other]
                ));
                let n = counts[r][other] as f64;
                [sums[r][other][0] / n, sums[r][other][1] / n]
            } else if vis_counts[v] > 0 {
                warnings.push(format!(
                    "row {r}: no boxes, using the all-row {:?} size mean",
                    VisibilityState::ALL[v]
                ));
                let n = vis_counts[v] as f64;
                [vis_sums[v][0] / n, vis_sums[v][1] / n]
            } else {
                warnings.push(format!("row {r}: no boxes, using the global size mean"));
                global
            };
        }
    }

    // Residuals about the fitted means, pooled per row across antennas and visibilities.
    let mut residuals: Vec<Vec<SVector<f64, 4>>> = vec![Vec::new(); GRID_ROWS];
    for s in samples {
        let c = homography.project(&cfg.grid.world(s.antenna))?;
        let m = size_means[s.antenna.row()][s.visibility.index()];
        residuals[s.antenna.row()].push(SVector::<f64, 4>::new(
            s.bbox.cx - c.x,
            s.bbox.cy - c.y,
            s.bbox.w - m[0],
            s.bbox.h - m[1],
        ));
    }
    let pooled: Vec<SVector<f64, 4>> = residuals.iter().flatten().copied().collect();
    let global_cov = regularised(scatter(&pooled), cfg.covariance_floor);
    let mut covariances = [[[0.0f64; 4]; 4]; GRID_ROWS];
    for r in 0..GRID_ROWS {
        covariances[r] = if residuals[r].len() >= cfg.min_row_samples {
            to_rows(&regularised(scatter(&residuals[r]), cfg.covariance_floor))
        } else {
            warnings.push(format!(
                "row {r}: {} samples, using the globally pooled covariance",
                residuals[r].len()
            ));
            to_rows(&global_cov)
        };
    }
    for w in &warnings {
        log::warn!("emission fit: {w}");
    }
    let model = EmissionModel::new(EmissionParams {
        grid: cfg.grid.clone(),
        centroid_homography: homography,
        size_means,
        covariances,
    })?;
    Ok(EmissionFit { model, warnings })
}

/// Broad centroid Gaussian over the image plus a size Gaussian fitted to `boxes`.
pub fn fit_outlier(boxes: &[BoundingBox], cfg: &WeightModelConfig) -> Result<OutlierModel> {
    if boxes.is_empty() {
        return Err(Error::Fit("no boxes to fit the outlier size model".into()));
    }
    let [iw, ih] = cfg.image_size;
    let (sx, sy) = (cfg.outlier_centroid_breadth * iw, cfg.outlier_centroid_breadth * ih);
    let n = boxes.len() as f64;
    let mean = SVector::<f64, 2>::new(
        boxes.iter().map(|b| b.w).sum::<f64>() / n,
        boxes.iter().map(|b| b.h).sum::<f64>() / n,
    );
    let res: Vec<SVector<f64, 2>> = boxes
        .iter()
        .map(|b| SVector::<f64, 2>::new(b.w, b.h) - mean)
        .collect();
    let cov = regularised(scatter(&res), cfg.covariance_floor);
    OutlierModel::new(OutlierParams {
        centroid_mean: [0.5 * iw, 0.5 * ih],
        centroid_covariance: [[sx * sx, 0.0], [0.0, sy * sy]],
        size_mean: [mean[0], mean[1]],
        size_covariance: to_rows(&cov),
    })
}

/// Everything needed to score tracklets against identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub emission: EmissionModel,
    pub outlier: OutlierModel,
    pub visibility: VisibilityTable,
}

#[derive(Debug, Clone)]
pub struct WeightModelFit {
    pub model: WeightModel,
    pub warnings: Vec<String>,
    pub emission_samples: usize,
    pub visibility_samples: usize,
}

impl WeightModel {
    /// Fits all three components from identity-labelled annotations and the
    /// pickups at the annotated frames. Marginal annotations are skipped.
    pub fn fit(
        annotations: &[Annotation],
        trace: &LocalisationTrace,
        cfg: &WeightModelConfig,
    ) -> Result<WeightModelFit> {
        let mut vis_samples = Vec::new();
        let mut em_samples = Vec::new();
        let mut boxes = Vec::new();
        for a in annotations {
            let Some(v) = VisibilityState::from_annotation(a.visibility) else {
                continue;
            };
            if a.identity >= trace.identities() {
                return Err(Error::Data(format!(
                    "annotation identity {} but the trace has {} identities",
                    a.identity + 1,
                    trace.identities()
                )));
            }
            let (p, c) = trace.pickup_context(a.frame, a.identity)?;
            vis_samples.push(VisibilitySample {
                antenna: p,
                context: c,
                visibility: v,
            });
            if let (Some(b), true) = (a.bbox, v.is_visible()) {
                em_samples.push(EmissionSample {
                    bbox: b,
                    antenna: p,
                    visibility: v,
                });
                boxes.push(b);
            }
        }
        let emission = fit_emission(&em_samples, cfg)?;
        let outlier = fit_outlier(&boxes, cfg)?;
        let visibility = fit_visibility(&vis_samples, cfg.keying, cfg.alpha)?;
        Ok(WeightModelFit {
            model: WeightModel {
                emission: emission.model,
                outlier,
                visibility,
            },
            warnings: emission.warnings,
            emission_samples: em_samples.len(),
            visibility_samples: vis_samples.len(),
        })
    }

    pub fn per_frame_weight(&self, b: Option<&BoundingBox>, p: Antenna, c: &ContextVector) -> f64 {
        per_frame_weight(b, p, c, &self.visibility, &self.emission)
    }

    pub fn tracklet_weight(&self, t: &Tracklet, column: Column, trace: &LocalisationTrace) -> Result<f64> {
        tracklet_weight(t, column, trace, &self.visibility, &self.emission, &self.outlier)
    }

    pub fn hidden_tracklet_weight(
        &self,
        frames: RangeInclusive<Frame>,
        identity: usize,
        trace: &LocalisationTrace,
    ) -> Result<f64> {
        hidden_tracklet_weight(frames, identity, trace, &self.visibility)
    }

    pub fn outlier_weight(&self, b: &BoundingBox) -> f64 {
        outlier_weight(Some(b), &self.outlier).expect("real box")
    }
}
