//! Synthetic segments with known identities: agents wandering the antenna
//! grid, boxes drawn from a known emission model, occlusion, a lagging and
//! coarsely sampled localisation trace, clutter and detector noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_annotations, write_detections, write_json, write_trace, Annotation, AnnotationVisibility,
    LocalisationTrace,
};
use crate::error::{Error, Result};
use crate::geometry::{fit_homography, BoundingBox, Point2};
use crate::grid::{Antenna, AntennaGrid, GRID_COLS, GRID_ROWS};
use crate::tracker::{Detection, Frame};
use crate::weights::{EmissionModel, EmissionParams, VisibilityState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Chance per frame that an agent past its dwell time moves to a neighbouring cell.
    pub move_probability: f64,
    /// Minimum frames spent in a cell before moving.
    pub min_dwell: u32,
    /// Forbid entering a cell that is occupied (or was occupied the frame before).
    pub exclusive_cells: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            move_probability: 0.02,
            min_dwell: 5,
            exclusive_cells: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    /// When agents share a cell, chance that each agent but one is hidden (else truncated).
    pub shared_hidden: f64,
    /// Chance that an agent with an occupied neighbouring cell is truncated.
    pub neighbour_truncated: f64,
    /// Chance that an agent is hidden regardless of the others.
    pub spontaneous_hidden: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            shared_hidden: 0.6,
            neighbour_truncated: 0.15,
            spontaneous_hidden: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Frames by which the reported cell trails the true one.
    pub lag: u32,
    /// Chance that a scan is lost and the previous reading held.
    pub dropout: f64,
    /// Frames between scans; readings are held in between.
    pub scan_interval: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            lag: 3,
            dropout: 0.05,
            scan_interval: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterConfig {
    /// Chance per frame that a spurious object appears.
    pub rate: f64,
    /// Frames a spurious object persists.
    pub duration: u32,
    pub size_mean: [f64; 2],
    pub size_sd: [f64; 2],
}

impl Default for ClutterConfig {
    fn default() -> Self {
        ClutterConfig {
            rate: 0.02,
            duration: 25,
            size_mean: [120.0, 70.0],
            size_sd: [30.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub centroid_sd: f64,
    pub size_sd: f64,
    pub miss_rate: f64,
    /// Scores are uniform over this range.
    pub score_range: [f64; 2],
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            centroid_sd: 1.5,
            size_sd: 1.5,
            miss_rate: 0.02,
            score_range: [0.5, 1.0],
        }
    }
}

/// Camera and box shape of the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub grid: AntennaGrid,
    /// Image positions of the base-plate corners (0,0), (W,0), (W,D), (0,D),
    /// with W, D the plate extents implied by the grid.
    pub image_corners: [[f64; 2]; 4],
    /// Clear (w, h) per grid row.
    pub size_means: [[f64; 2]; GRID_ROWS],
    /// Height factor of truncated boxes.
    pub truncation_factor: f64,
    /// Standard deviations of (cx, cy, w, h) per row.
    pub sd: [[f64; 4]; GRID_ROWS],
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            grid: AntennaGrid::default(),
            image_corners: [[40.0, 650.0], [1240.0, 650.0], [1040.0, 300.0], [240.0, 300.0]],
            size_means: [[160.0, 90.0], [130.0, 75.0], [105.0, 60.0]],
            truncation_factor: 0.5,
            sd: [[6.0, 4.0, 8.0, 5.0], [5.0, 3.0, 7.0, 4.0], [4.0, 3.0, 6.0, 3.0]],
        }
    }
}

impl TruthConfig {
    pub fn emission_params(&self) -> Result<EmissionParams> {
        let g = &self.grid;
        let (x1, y1) = (
            g.origin_mm[0] - 0.5 * g.pitch_mm[0],
            g.origin_mm[1] - 0.5 * g.pitch_mm[1],
        );
        let (x2, y2) = (
            x1 + g.pitch_mm[0] * GRID_COLS as f64,
            y1 + g.pitch_mm[1] * GRID_ROWS as f64,
        );
        let world = [
            Point2::new(x1, y1),
            Point2::new(x2, y1),
            Point2::new(x2, y2),
            Point2::new(x1, y2),
        ];
        let image = self.image_corners.map(|[x, y]| Point2::new(x, y));
        let homography = fit_homography(&world, &image)?.homography;
        let mut size_means = [[[0.0; 2]; 2]; GRID_ROWS];
        let mut covariances = [[[0.0; 4]; 4]; GRID_ROWS];
        for r in 0..GRID_ROWS {
            let [w, h] = self.size_means[r];
            size_means[r] = [[w, h], [w, h * self.truncation_factor]];
            for k in 0..4 {
                // A tiny variance keeps the model valid when the spread is zero.
                covariances[r][k][k] = (self.sd[r][k] * self.sd[r][k]).max(1e-6);
            }
        }
        Ok(EmissionParams {
            grid: self.grid.clone(),
            centroid_homography: homography,
            size_means,
            covariances,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub identities: usize,
    pub frames: u32,
    pub first_frame: Frame,
    pub seed: u64,
    pub image_size: [f64; 2],
    pub motion: MotionConfig,
    pub occlusion: OcclusionConfig,
    pub sensor: SensorConfig,
    pub clutter: ClutterConfig,
    pub detector: DetectorConfig,
    /// Scale of the per-placement box spread (0 places boxes at the means).
    pub pose_noise: f64,
    pub truth: TruthConfig,
    /// Annotate every n-th frame.
    pub annotate_every: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            identities: 3,
            frames: 4500,
            first_frame: 0,
            seed: 0,
            image_size: [1280.0, 720.0],
            motion: MotionConfig::default(),
            occlusion: OcclusionConfig::default(),
            sensor: SensorConfig::default(),
            clutter: ClutterConfig::default(),
            detector: DetectorConfig::default(),
            pose_noise: 1.0,
            truth: TruthConfig::default(),
            annotate_every: 1,
        }
    }
}

impl ScenarioConfig {
    /// No occlusion, clutter, detector or sensor noise, boxes at the means
    /// and no two agents in one cell.
    pub fn noiseless() -> Self {
        ScenarioConfig {
            motion: MotionConfig {
                exclusive_cells: true,
                ..MotionConfig::default()
            },
            occlusion: OcclusionConfig {
                shared_hidden: 0.0,
                neighbour_truncated: 0.0,
                spontaneous_hidden: 0.0,
            },
            sensor: SensorConfig {
                lag: 0,
                dropout: 0.0,
                scan_interval: 1,
            },
            clutter: ClutterConfig {
                rate: 0.0,
                ..ClutterConfig::default()
            },
            detector: DetectorConfig {
                centroid_sd: 0.0,
                size_sd: 0.0,
                miss_rate: 0.0,
                score_range: [0.9, 0.9],
            },
            pose_noise: 0.0,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("motion.move_probability", self.motion.move_probability),
            ("occlusion.shared_hidden", self.occlusion.shared_hidden),
            ("occlusion.neighbour_truncated", self.occlusion.neighbour_truncated),
            ("occlusion.spontaneous_hidden", self.occlusion.spontaneous_hidden),
            ("sensor.dropout", self.sensor.dropout),
            ("clutter.rate", self.clutter.rate),
            ("detector.miss_rate", self.detector.miss_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("{name} = {p} is not a probability")));
            }
        }
        if self.frames == 0 {
            return Err(Error::Domain("frames must be at least 1".into()));
        }
        if self.identities == 0 {
            return Err(Error::Domain("identities must be at least 1".into()));
        }
        if self.motion.exclusive_cells && self.identities > crate::grid::ANTENNA_COUNT {
            return Err(Error::Domain("more agents than cells with exclusive cells".into()));
        }
        if self.sensor.scan_interval == 0 || self.annotate_every == 0 || self.clutter.duration == 0 {
            return Err(Error::Domain("scan interval, annotation stride and clutter duration must be positive".into()));
        }
        let [lo, hi] = self.detector.score_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Domain(format!("score range [{lo}, {hi}] is not inside [0, 1]")));
        }
        let sds = [
            self.detector.centroid_sd,
            self.detector.size_sd,
            self.pose_noise,
            self.clutter.size_sd[0],
            self.clutter.size_sd[1],
        ];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain("standard deviations must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Everything generated for one segment.
#[derive(Debug, Clone)]
pub struct SyntheticSegment {
    pub config: ScenarioConfig,
    pub detections: Vec<Detection>,
    /// What the localisation sensor reported.
    pub trace: LocalisationTrace,
    /// Where the agents actually were.
    pub true_cells: LocalisationTrace,
    pub annotations: Vec<Annotation>,
    pub emission: EmissionParams,
    /// Visible (frame, agent) pairs over all frames.
    pub visible_count: u64,
    pub missed_count: u64,
    pub spurious_count: u64,
    /// Clutter objects started.
    pub clutter_events: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub frames: u32,
    pub identities: usize,
    pub detections: usize,
    pub visible: u64,
    pub missed: u64,
    pub spurious: u64,
    pub clutter_events: u64,
}

impl SyntheticSegment {
    pub fn summary(&self) -> GenerationSummary {
        GenerationSummary {
            frames: self.config.frames,
            identities: self.config.identities,
            detections: self.detections.len(),
            visible: self.visible_count,
            missed: self.missed_count,
            spurious: self.spurious_count,
            clutter_events: self.clutter_events,
        }
    }

    /// Writes `detections.csv`, `trace.csv`, `true_trace.csv`,
    /// `annotations.json` and `true_model.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_detections(&dir.join("detections.csv"), &self.detections)?;
        write_trace(&dir.join("trace.csv"), &self.trace)?;
        write_trace(&dir.join("true_trace.csv"), &self.true_cells)?;
        write_annotations(&dir.join("annotations.json"), &self.annotations)?;
        write_json(&dir.join("true_model.json"), &self.emission)
    }
}

#[derive(Debug, Clone, Copy)]
struct Agent {
    cell: Antenna,
    dwell: u32,
    visibility: VisibilityState,
    pose: Option<BoundingBox>,
    /// Own cell and the occupied cells around it when the pose was drawn.
    key: [u8; 10],
}

struct Clutter {
    bbox: BoundingBox,
    remaining: u32,
}

fn occupancy_key(cell: Antenna, cells: &[Antenna], me: usize) -> [u8; 10] {
    let ctx = crate::grid::context_vector(
        cell,
        &cells
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != me)
            .map(|(_, &c)| c)
            .collect::<Vec<_>>(),
    );
    let mut key = [0u8; 10];
    key[0] = cell.id();
    key[1..].copy_from_slice(&ctx.0);
    key
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite, non-negative sd")
}

fn draw_pose(
    rng: &mut ChaCha8Rng,
    em: &EmissionModel,
    p: Antenna,
    v: VisibilityState,
    scale: f64,
) -> Option<BoundingBox> {
    let m = em.mean(p, v)?;
    let cov = em.covariance(p);
    let mut x = [0.0; 4];
    for k in 0..4 {
        x[k] = m[k] + normal(0.0, scale * cov[k][k].sqrt()).sample(rng);
    }
    Some(BoundingBox::new(x[0], x[1], x[2].max(m[2] * 0.25), x[3].max(m[3] * 0.25)).expect("positive size"))
}

pub fn generate(cfg: &ScenarioConfig) -> Result<SyntheticSegment> {
    cfg.validate()?;
    let emission_params = cfg.truth.emission_params()?;
    let em = EmissionModel::new(emission_params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.identities;
    let frames = cfg.frames;

    // Initial cells: distinct when exclusive.
    let mut cells_all: Vec<Antenna> = Antenna::all().collect();
    cells_all.shuffle(&mut rng);
    let mut agents: Vec<Agent> = (0..n)
        .map(|k| {
            let cell = if cfg.motion.exclusive_cells {
                cells_all[k]
            } else {
                Antenna::new(rng.random_range(1..=crate::grid::ANTENNA_COUNT as u8)).expect("valid id")
            };
            Agent {
                cell,
                dwell: 0,
                visibility: VisibilityState::Clear,
                pose: None,
                key: [0; 10],
            }
        })
        .collect();

    let mut true_rows: Vec<Vec<Antenna>> = Vec::with_capacity(frames as usize);
    let mut detections = Vec::new();
    let mut annotations = Vec::new();
    let mut clutter: Vec<Clutter> = Vec::new();
    let (mut visible_count, mut missed_count, mut spurious_count, mut clutter_events) = (0u64, 0u64, 0u64, 0u64);
    let [iw, ih] = cfg.image_size;
    let [s_lo, s_hi] = cfg.detector.score_range;

    for k in 0..frames {
        let frame = cfg.first_frame + k;
        // Motion. No move may leave a stay shorter than the dwell time at the end.
        if k > 0 {
            let before: Vec<Antenna> = agents.iter().map(|a| a.cell).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for i in order {
                let a = agents[i];
                let may_move = a.dwell >= cfg.motion.min_dwell && k + cfg.motion.min_dwell <= frames;
                if !(may_move && rng.random_bool(cfg.motion.move_probability)) {
                    agents[i].dwell += 1;
                    continue;
                }
                let options: Vec<Antenna> = a
                    .cell
                    .neighbours()
                    .into_iter()
                    .filter(|c| {
                        !cfg.motion.exclusive_cells
                            || (!before.contains(c) && !agents.iter().any(|o| o.cell == *c))
                    })
                    .collect();
                if options.is_empty() {
                    agents[i].dwell += 1;
                    continue;
                }
                agents[i].cell = options[rng.random_range(0..options.len())];
                agents[i].dwell = 1;
            }
        } else {
            for a in &mut agents {
                a.dwell = 1;
            }
        }

        // Occlusion and poses, redrawn when an agent's surroundings change.
        let cells: Vec<Antenna> = agents.iter().map(|a| a.cell).collect();
        let keys: Vec<[u8; 10]> = (0..n).map(|i| occupancy_key(cells[i], &cells, i)).collect();
        let changed: Vec<bool> = (0..n).map(|i| k == 0 || keys[i] != agents[i].key).collect();
        let mut decided = vec![false; n];
        for i in 0..n {
            if !changed[i] || decided[i] {
                continue;
            }
            let group: Vec<usize> = (0..n).filter(|&o| cells[o] == cells[i]).collect();
            if group.len() > 1 {
                let top = group[rng.random_range(0..group.len())];
                for &g in &group {
                    agents[g].visibility = if g == top {
                        VisibilityState::Clear
                    } else if rng.random_bool(cfg.occlusion.shared_hidden) {
                        VisibilityState::Hidden
                    } else {
                        VisibilityState::Truncated
                    };
                    decided[g] = true;
                }
            } else {
                let crowded = keys[i][1..].iter().any(|&c| c > 0);
                agents[i].visibility = if crowded && rng.random_bool(cfg.occlusion.neighbour_truncated) {
                    VisibilityState::Truncated
                } else {
                    VisibilityState::Clear
                };
                decided[i] = true;
            }
        }
        for i in 0..n {
            if !decided[i] {
                continue;
            }
            if rng.random_bool(cfg.occlusion.spontaneous_hidden) {
                agents[i].visibility = VisibilityState::Hidden;
            }
            agents[i].pose = draw_pose(&mut rng, &em, cells[i], agents[i].visibility, cfg.pose_noise);
            agents[i].key = keys[i];
        }
        true_rows.push(cells.clone());

        // Detections of the agents.
        let mut frame_dets = Vec::new();
        let jitter_c = normal(0.0, cfg.detector.centroid_sd);
        let jitter_s = normal(0.0, cfg.detector.size_sd);
        for (i, a) in agents.iter().enumerate() {
            let annotate = k % cfg.annotate_every == 0;
            match a.pose {
                Some(b) => {
                    visible_count += 1;
                    if annotate {
                        annotations.push(Annotation {
                            frame,
                            identity: i,
                            bbox: Some(b),
                            visibility: if a.visibility == VisibilityState::Truncated {
                                AnnotationVisibility::Truncated
                            } else {
                                AnnotationVisibility::Clear
                            },
                            difficult: a.visibility == VisibilityState::Truncated,
                            exclude: false,
                        });
                    }
                    if rng.random_bool(cfg.detector.miss_rate) {
                        missed_count += 1;
                        continue;
                    }
                    let d = BoundingBox::new(
                        b.cx + jitter_c.sample(&mut rng),
                        b.cy + jitter_c.sample(&mut rng),
                        (b.w + jitter_s.sample(&mut rng)).max(1.0),
                        (b.h + jitter_s.sample(&mut rng)).max(1.0),
                    )?;
                    let score = if s_lo == s_hi { s_lo } else { rng.random_range(s_lo..=s_hi) };
                    frame_dets.push(Detection::new(frame, d, score)?);
                }
                None => {
                    if annotate {
                        annotations.push(Annotation {
                            frame,
                            identity: i,
                            bbox: None,
                            visibility: AnnotationVisibility::Hidden,
                            difficult: false,
                            exclude: false,
                        });
                    }
                }
            }
        }

        // Clutter.
        if rng.random_bool(cfg.clutter.rate) {
            clutter_events += 1;
            let w = normal(cfg.clutter.size_mean[0], cfg.clutter.size_sd[0]).sample(&mut rng).max(10.0);
            let h = normal(cfg.clutter.size_mean[1], cfg.clutter.size_sd[1]).sample(&mut rng).max(10.0);
            clutter.push(Clutter {
                bbox: BoundingBox::new(rng.random_range(0.0..iw), rng.random_range(0.0..ih), w, h)?,
                remaining: cfg.clutter.duration,
            });
        }
        for c in &mut clutter {
            let b = c.bbox;
            let d = BoundingBox::new(
                b.cx + jitter_c.sample(&mut rng),
                b.cy + jitter_c.sample(&mut rng),
                (b.w + jitter_s.sample(&mut rng)).max(1.0),
                (b.h + jitter_s.sample(&mut rng)).max(1.0),
            )?;
            let score = if s_lo == s_hi { s_lo } else { rng.random_range(s_lo..=s_hi) };
            frame_dets.push(Detection::new(frame, d, score)?);
            spurious_count += 1;
            c.remaining -= 1;
        }
        clutter.retain(|c| c.remaining > 0);
        frame_dets.shuffle(&mut rng);
        detections.extend(frame_dets);
    }

    // Sensor: lagged, sampled every scan, scans lost to dropout hold the last reading.
    let mut reported: Vec<Vec<Antenna>> = Vec::with_capacity(true_rows.len());
    for k in 0..frames as usize {
        let source = &true_rows[k.saturating_sub(cfg.sensor.lag as usize)];
        let row = if k == 0 {
            source.clone()
        } else {
            let prev = &reported[k - 1];
            (0..n)
                .map(|j| {
                    let scan = k % cfg.sensor.scan_interval as usize == 0;
                    if scan && !rng.random_bool(cfg.sensor.dropout) {
                        source[j]
                    } else {
                        prev[j]
                    }
                })
                .collect()
        };
        reported.push(row);
    }

    Ok(SyntheticSegment {
        config: cfg.clone(),
        detections,
        trace: LocalisationTrace::from_frames(cfg.first_frame, &reported)?,
        true_cells: LocalisationTrace::from_frames(cfg.first_frame, &true_rows)?,
        annotations,
        emission: emission_params,
        visible_count,
        missed_count,
        spurious_count,
        clutter_events,
    })
}
