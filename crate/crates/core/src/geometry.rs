//! Image-space primitives: boxes, IoU, similarity calibration between rigs and
//! planar homographies from base-plate coordinates to pixels.
//!
//! Boxes are stored as centroid + size. A fully occluded object has no box at
//! all; callers represent that as `Option<BoundingBox>::None` rather than a
//! zero-filled sentinel.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in image space (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Deserialize)]
struct RawBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoundingBox::new(raw.cx, raw.cy, raw.w, raw.h)
    }
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Domain(format!(
                "box size must be positive, got {w}x{h}"
            )));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    /// Builds a box from its left/top/right/bottom edges.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        BoundingBox::new(
            0.5 * (left + right),
            0.5 * (top + bottom),
            right - left,
            bottom - top,
        )
    }

    pub fn left(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn centroid(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    /// Corners in the order top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point2; 4] {
        let (l, t, r, b) = (self.left(), self.top(), self.right(), self.bottom());
        [
            Point2::new(l, t),
            Point2::new(r, t),
            Point2::new(r, b),
            Point2::new(l, b),
        ]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Area of the intersection with `other`.
    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.left().max(other.left());
        let ih = self.bottom().min(other.bottom()) - self.top().max(other.top());
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// IoU where either side may be missing; a missing box never overlaps.
pub fn iou_opt(a: Option<&BoundingBox>, b: Option<&BoundingBox>) -> Result<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(iou(a, b)),
        _ => Err(Error::Domain("IoU is undefined for a hidden box".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise in the (x, y) frame.
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(
            self.scale * (c * p.x - s * p.y) + self.translation[0],
            self.scale * (s * p.x + c * p.y) + self.translation[1],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityFit {
    pub transform: SimilarityTransform,
    /// Euclidean residual per correspondence, in destination units.
    pub residuals: Vec<f64>,
}

/// Closed-form least-squares similarity mapping `src` onto `dst`.
pub fn fit_similarity(src: &[Point2], dst: &[Point2]) -> Result<SimilarityFit> {
    if src.len() != dst.len() {
        return Err(Error::Fit(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::Fit("need at least 2 correspondences".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point2]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
        Point2::new(sx / n, sy / n)
    };
    let ms = mean(src);
    let md = mean(dst);

    let (mut dot, mut cross, mut var) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s.x - ms.x, s.y - ms.y);
        let (dx, dy) = (d.x - md.x, d.y - md.y);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
        var += sx * sx + sy * sy;
    }
    if var <= f64::EPSILON * n {
        return Err(Error::Fit("source points are coincident".into()));
    }
    let rotation = cross.atan2(dot);
    let scale = dot.hypot(cross) / var;
    if scale <= 0.0 {
        return Err(Error::Fit("degenerate correspondences give zero scale".into()));
    }
    let partial = SimilarityTransform {
        scale,
        rotation,
        translation: [0.0, 0.0],
    }
    .apply(&ms);
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation: [md.x - partial.x, md.y - partial.y],
    };
    let residuals = src
        .iter()
        .zip(dst)
        .map(|(s, d)| transform.apply(s).distance(d))
        .collect();
    Ok(SimilarityFit {
        transform,
        residuals,
    })
}

/// Maps a box through `t` and re-axis-aligns it: the output's four edges pass
/// through the midpoints of the four transformed edges.
pub fn transform_bbox(t: &SimilarityTransform, b: &BoundingBox) -> Result<BoundingBox> {
    let [tl, tr, br, bl] = b.corners().map(|p| t.apply(&p));
    let top = tl.midpoint(&tr);
    let right = tr.midpoint(&br);
    let bottom = br.midpoint(&bl);
    let left = bl.midpoint(&tl);
    BoundingBox::from_edges(left.x, top.y, right.x, bottom.y)
}

/// Planar projective map, normalised so that `m[(2, 2)] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: Matrix3<f64>,
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Homography::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("homography has non-finite entries".into()));
        }
        if m.determinant().abs() < 1e-300 {
            return Err(Error::Domain("homography is singular".into()));
        }
        Ok(Homography { m })
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn project(&self, p: &Point2) -> Result<Point2> {
        project(self, p)
    }
}

/// Applies `h` with perspective divide.
pub fn project(h: &Homography, p: &Point2) -> Result<Point2> {
    let v = h.m * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-15 {
        return Err(Error::Domain(format!(
            "point ({}, {}) maps to infinity",
            p.x, p.y
        )));
    }
    Ok(Point2::new(v.x / v.z, v.y / v.z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Reprojection distance per correspondence (pixels).
    pub residuals: Vec<f64>,
}

impl HomographyFit {
    pub fn mean_residual(&self) -> f64 {
        self.residuals.iter().sum::<f64>() / self.residuals.len().max(1) as f64
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to sqrt(2).
fn normalising_transform(pts: &[Point2]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let c = Point2::new(sx / n, sy / n);
    let mean_dist = pts.iter().map(|p| p.distance(&c)).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::Fit("points are coincident".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Normalised direct linear transform fit of `image ~ H * world`.
pub fn fit_homography(world: &[Point2], image: &[Point2]) -> Result<HomographyFit> {
    let n = world.len();
    if n != image.len() {
        return Err(Error::Fit(format!(
            "{n} world points but {} image points",
            image.len()
        )));
    }
    if n < 4 {
        return Err(Error::Fit(format!("need at least 4 correspondences, got {n}")));
    }
    let tw = normalising_transform(world)?;
    let ti = normalising_transform(image)?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (pw, pi)) in world.iter().zip(image).enumerate() {
        let w = tw * Vector3::new(pw.x, pw.y, 1.0);
        let i = ti * Vector3::new(pi.x, pi.y, 1.0);
        let (x, y, u, v) = (w.x, w.y, i.x, i.y);
        let r0 = 2 * k;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not produce V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if second_smallest <= 1e-10 * largest {
        return Err(Error::Fit(
            "correspondences are rank deficient (collinear or repeated points)".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ti_inv = ti
        .try_inverse()
        .ok_or_else(|| Error::Numerical("normalisation is singular".into()))?;
    let mut m = ti_inv * hn * tw;
    let scale = if m[(2, 2)].abs() > 1e-12 {
        m[(2, 2)]
    } else {
        m.norm()
    };
    m /= scale;
    if m.determinant().abs() < 1e-300 || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("fitted homography is singular".into()));
    }
    let homography = Homography { m };
    let residuals = world
        .iter()
        .zip(image)
        .map(|(pw, pi)| project(&homography, pw).map(|q| q.distance(pi)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HomographyFit {
        homography,
        residuals,
    })
}
