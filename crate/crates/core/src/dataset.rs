//! Shared records and their on-disk formats.
//!
//! | file             | format                                                    |
//! |------------------|-----------------------------------------------------------|
//! | detections       | CSV `frame,x,y,w,h,score` (x, y = box centroid)           |
//! | trace            | CSV `frame,identity,antenna`                              |
//! | annotations      | JSON `[{frame, identity, box, visibility, difficult, exclude}]` |
//! | tracklets        | JSON `[{id, frames: [{frame, box}]}]`                     |
//! | identified       | JSON `[{frame, identities: {id: box or null}}]`           |
//! | calibration      | CSV `point_id,world_x_mm,world_y_mm,image_x_px,image_y_px` |
//!
//! Identities are 1-based in files and 0-based in memory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point2};
use crate::grid::{context_vector, Antenna, ContextVector};
use crate::tracker::{Detection, Frame, Tracklet};

/// Per-frame antenna pickup of every identity over a contiguous frame span.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalisationTrace {
    first: Frame,
    identities: usize,
    /// Frame-major: `cells[(frame - first) * identities + j]`.
    cells: Vec<Antenna>,
}

impl LocalisationTrace {
    pub fn new(first: Frame, identities: usize, cells: Vec<Antenna>) -> Result<Self> {
        if identities == 0 {
            return Err(Error::Data("trace has no identities".into()));
        }
        if cells.len() % identities != 0 {
            return Err(Error::Data("trace is not a whole number of frames".into()));
        }
        Ok(LocalisationTrace {
            first,
            identities,
            cells,
        })
    }

    /// Builds a trace from per-frame pickup rows.
    pub fn from_frames(first: Frame, frames: &[Vec<Antenna>]) -> Result<Self> {
        let identities = frames.first().map(Vec::len).unwrap_or(0);
        if frames.iter().any(|f| f.len() != identities) {
            return Err(Error::Data("every frame needs one pickup per identity".into()));
        }
        LocalisationTrace::new(first, identities, frames.concat())
    }

    pub fn identities(&self) -> usize {
        self.identities
    }

    pub fn first_frame(&self) -> Frame {
        self.first
    }

    pub fn frame_count(&self) -> usize {
        self.cells.len() / self.identities
    }

    pub fn last_frame(&self) -> Frame {
        self.first + self.frame_count() as Frame - 1
    }

    pub fn covers(&self, frame: Frame) -> bool {
        frame >= self.first && ((frame - self.first) as usize) < self.frame_count()
    }

    pub fn frame(&self, frame: Frame) -> Result<&[Antenna]> {
        if !self.covers(frame) {
            return Err(Error::Data(format!(
                "trace covers frames {}..={}, frame {frame} requested",
                self.first,
                self.last_frame()
            )));
        }
        let k = (frame - self.first) as usize * self.identities;
        Ok(&self.cells[k..k + self.identities])
    }

    pub fn pickup(&self, frame: Frame, identity: usize) -> Result<Antenna> {
        self.frame(frame)?
            .get(identity)
            .copied()
            .ok_or_else(|| Error::Data(format!("identity {identity} not in trace")))
    }

    /// Pickup of `identity` and the context formed by all other identities.
    pub fn pickup_context(&self, frame: Frame, identity: usize) -> Result<(Antenna, ContextVector)> {
        let cells = self.frame(frame)?;
        let p = *cells
            .get(identity)
            .ok_or_else(|| Error::Data(format!("identity {identity} not in trace")))?;
        let others: Vec<Antenna> = cells
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != identity)
            .map(|(_, &a)| a)
            .collect();
        Ok((p, context_vector(p, &others)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationVisibility {
    Clear,
    Truncated,
    /// Visible, but too ambiguous to label clear/truncated; excluded when fitting.
    Marginal,
    Hidden,
}

/// One ground-truth entry. Hidden identities either have no entry for the
/// frame or an entry with `bbox = None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub frame: Frame,
    /// 0-based identity.
    pub identity: usize,
    pub bbox: Option<BoundingBox>,
    pub visibility: AnnotationVisibility,
    pub difficult: bool,
    pub exclude: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    frame: Frame,
    identity: u32,
    #[serde(rename = "box")]
    bbox: Option<BoundingBox>,
    visibility: AnnotationVisibility,
    #[serde(default)]
    difficult: bool,
    #[serde(default)]
    exclude: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    frame: Frame,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    frame: Frame,
    identity: u32,
    antenna: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub point_id: u32,
    pub world_x_mm: f64,
    pub world_y_mm: f64,
    pub image_x_px: f64,
    pub image_y_px: f64,
}

impl CalibrationPoint {
    pub fn world(&self) -> Point2 {
        Point2::new(self.world_x_mm, self.world_y_mm)
    }

    pub fn image(&self) -> Point2 {
        Point2::new(self.image_x_px, self.image_y_px)
    }
}

/// Per-frame output of an identification method.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedFrame {
    pub frame: Frame,
    /// Box per 0-based identity, `None` when the identity is hidden.
    pub boxes: Vec<Option<BoundingBox>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IdentifiedRecord {
    frame: Frame,
    identities: BTreeMap<u32, Option<BoundingBox>>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(open(path)?);
    serde_json::from_reader(reader).map_err(|e| {
        if e.is_io() {
            Error::io(path, e.into())
        } else {
            Error::schema(path, e)
        }
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
                _ => Error::schema(path, e),
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for row in rows {
        wtr.serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_csv::<DetectionRecord>(path)?
        .into_iter()
        .map(|r| {
            BoundingBox::new(r.x, r.y, r.w, r.h)
                .and_then(|b| Detection::new(r.frame, b, r.score))
                .map_err(|e| Error::schema(path, format!("frame {}: {e}", r.frame)))
        })
        .collect()
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_csv(
        path,
        detections.iter().map(|d| DetectionRecord {
            frame: d.frame,
            x: d.bbox.cx,
            y: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            score: d.score,
        }),
    )
}

/// Reads a trace; every frame in the covered span must list every identity
/// exactly once.
pub fn read_trace(path: &Path) -> Result<LocalisationTrace> {
    let rows = read_csv::<TraceRecord>(path)?;
    if rows.is_empty() {
        return Err(Error::schema(path, "trace is empty"));
    }
    let identities = rows.iter().map(|r| r.identity).max().unwrap_or(0) as usize;
    if rows.iter().any(|r| r.identity == 0) {
        return Err(Error::schema(path, "identities are numbered from 1"));
    }
    let first = rows.iter().map(|r| r.frame).min().unwrap();
    let last = rows.iter().map(|r| r.frame).max().unwrap();
    let span = (last - first + 1) as usize;
    let mut cells: Vec<Option<Antenna>> = vec![None; span * identities];
    for r in &rows {
        let a = Antenna::new(r.antenna).map_err(|e| Error::schema(path, e))?;
        let slot = &mut cells[(r.frame - first) as usize * identities + r.identity as usize - 1];
        if slot.replace(a).is_some() {
            return Err(Error::schema(
                path,
                format!("duplicate pickup for identity {} at frame {}", r.identity, r.frame),
            ));
        }
    }
    let cells = cells
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            c.ok_or_else(|| {
                Error::schema(
                    path,
                    format!(
                        "missing pickup for identity {} at frame {}",
                        k % identities + 1,
                        first as usize + k / identities
                    ),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LocalisationTrace::new(first, identities, cells)
}

pub fn write_trace(path: &Path, trace: &LocalisationTrace) -> Result<()> {
    let rows = (trace.first_frame()..=trace.last_frame()).flat_map(|f| {
        let cells = trace.frame(f).expect("frame in span").to_vec();
        cells.into_iter().enumerate().map(move |(j, a)| TraceRecord {
            frame: f,
            identity: j as u32 + 1,
            antenna: a.id(),
        })
    });
    write_csv(path, rows)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let records: Vec<AnnotationRecord> = read_json(path)?;
    records
        .into_iter()
        .map(|r| {
            if r.identity == 0 {
                return Err(Error::schema(path, "identities are numbered from 1"));
            }
            let hidden = r.visibility == AnnotationVisibility::Hidden;
            if hidden != r.bbox.is_none() {
                return Err(Error::schema(
                    path,
                    format!(
                        "frame {} identity {}: box must be null exactly when hidden",
                        r.frame, r.identity
                    ),
                ));
            }
            Ok(Annotation {
                frame: r.frame,
                identity: r.identity as usize - 1,
                bbox: r.bbox,
                visibility: r.visibility,
                difficult: r.difficult,
                exclude: r.exclude,
            })
        })
        .collect()
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .map(|a| AnnotationRecord {
            frame: a.frame,
            identity: a.identity as u32 + 1,
            bbox: a.bbox,
            visibility: a.visibility,
            difficult: a.difficult,
            exclude: a.exclude,
        })
        .collect();
    write_json(path, &records)
}

pub fn read_tracklets(path: &Path) -> Result<Vec<Tracklet>> {
    let tracklets: Vec<Tracklet> = read_json(path)?;
    for t in &tracklets {
        t.validate().map_err(|e| Error::schema(path, e))?;
    }
    Ok(tracklets)
}

pub fn write_tracklets(path: &Path, tracklets: &[Tracklet]) -> Result<()> {
    write_json(path, tracklets)
}

pub fn read_identified(path: &Path) -> Result<Vec<IdentifiedFrame>> {
    let records: Vec<IdentifiedRecord> = read_json(path)?;
    records
        .into_iter()
        .map(|r| {
            let n = r.identities.keys().max().copied().unwrap_or(0) as usize;
            if r.identities.contains_key(&0) || r.identities.len() != n {
                return Err(Error::schema(
                    path,
                    format!("frame {}: identities must be numbered 1..=J", r.frame),
                ));
            }
            Ok(IdentifiedFrame {
                frame: r.frame,
                boxes: r.identities.into_values().collect(),
            })
        })
        .collect()
}

pub fn write_identified(path: &Path, frames: &[IdentifiedFrame]) -> Result<()> {
    let records: Vec<IdentifiedRecord> = frames
        .iter()
        .map(|f| IdentifiedRecord {
            frame: f.frame,
            identities: f
                .boxes
                .iter()
                .enumerate()
                .map(|(j, b)| (j as u32 + 1, *b))
                .collect(),
        })
        .collect();
    write_json(path, &records)
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibrationPoint>> {
    read_csv(path)
}

pub fn write_calibration(path: &Path, points: &[CalibrationPoint]) -> Result<()> {
    write_csv(path, points)
}
