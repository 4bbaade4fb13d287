//! Toy detection: per-cell occupancy classification over 3x3 patches,
//! connected-component boxes, IoU matching and temporal smoothing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{rnn_step, Activation, Gradients, Mlp, QuantizedMlp, RecurrentCell};
use crate::rng::SimRng;
use crate::sensors::{degrade_range, variance_factor, SensorSuite, WeatherTable};
use crate::sim::{Obstacle, WeatherCondition, WeatherKind, WorldState};

/// Cells per classifier input: the cell and its 8 neighbours.
pub const PATCH_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellLabel {
    Obstacle,
    Free,
}

/// Ego-relative grid: columns run ahead of the ego, rows across the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Longitudinal offset of column 0's near edge from the ego (m).
    pub origin_x: f64,
    /// Lateral (road frame) position of row 0's lower edge (m).
    pub origin_y: f64,
    values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        origin_x: f64,
        origin_y: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if width * height != values.len() || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "{width}x{height} grid cannot hold {} values",
                values.len()
            )));
        }
        if !(cell_size > 0.0) {
            return Err(Error::Domain("cell size must be > 0".into()));
        }
        Ok(OccupancyGrid {
            width,
            height,
            cell_size,
            origin_x,
            origin_y,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, col: isize, row: isize) -> f64 {
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            0.0
        } else {
            self.values[row as usize * self.width + col as usize]
        }
    }

    /// 3x3 neighbourhood in row-major order, zero-padded at the border.
    pub fn patch(&self, col: usize, row: usize) -> [f64; PATCH_LEN] {
        let mut p = [0.0; PATCH_LEN];
        let mut k = 0;
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                p[k] = self.get(col as isize + dc, row as isize + dr);
                k += 1;
            }
        }
        p
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min <= x_max && y_min <= y_max) {
            return Err(Error::Domain(format!(
                "box [{x_min}, {y_min}, {x_max}, {y_max}] has negative extent"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub label: CellLabel,
}

/// Anything that maps a 3x3 patch to an obstacle score.
pub trait CellScorer {
    fn score(&self, patch: &[f64]) -> Result<f64>;
}

impl CellScorer for Mlp {
    fn score(&self, patch: &[f64]) -> Result<f64> {
        if self.input_dim() != PATCH_LEN || self.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "cell model must map {PATCH_LEN} inputs to 1 score, got {} -> {}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(self.forward(patch)?[0])
    }
}

impl CellScorer for QuantizedMlp {
    fn score(&self, patch: &[f64]) -> Result<f64> {
        if self.input_dim() != PATCH_LEN {
            return Err(Error::Shape(format!(
                "cell model must take {PATCH_LEN} inputs"
            )));
        }
        Ok(self.forward(patch)?[0])
    }
}

pub fn score_cells<M: CellScorer + ?Sized>(model: &M, grid: &OccupancyGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    for row in 0..grid.height {
        for col in 0..grid.width {
            out.push(model.score(&grid.patch(col, row))?);
        }
    }
    Ok(out)
}

fn threshold_scores(scores: &[f64], threshold: f64) -> Vec<CellLabel> {
    scores
        .iter()
        .map(|s| {
            if *s > threshold {
                CellLabel::Obstacle
            } else {
                CellLabel::Free
            }
        })
        .collect()
}

/// A cell is `Obstacle` iff its score strictly exceeds `threshold`.
pub fn classify_cells<M: CellScorer + ?Sized>(
    model: &M,
    grid: &OccupancyGrid,
    threshold: f64,
) -> Result<Vec<CellLabel>> {
    Ok(threshold_scores(&score_cells(model, grid)?, threshold))
}

/// 4-connected components of obstacle cells as tight boxes in meters,
/// ordered by their first cell in row-major order.
pub fn boxes_from_labels(labels: &[CellLabel], grid: &OccupancyGrid) -> Result<Vec<BoundingBox>> {
    Ok(components(labels, grid)?
        .into_iter()
        .map(|c| c.bbox)
        .collect())
}

struct Component {
    bbox: BoundingBox,
    cells: Vec<usize>,
}

fn components(labels: &[CellLabel], grid: &OccupancyGrid) -> Result<Vec<Component>> {
    if labels.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} labels for a {}-cell grid",
            labels.len(),
            grid.len()
        )));
    }
    let (w, h) = (grid.width, grid.height);
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] || labels[start] != CellLabel::Obstacle {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut c0, mut c1, mut r0, mut r1) = (usize::MAX, 0, usize::MAX, 0);
        let mut cells = Vec::new();
        while let Some(idx) = queue.pop_front() {
            cells.push(idx);
            let (r, c) = (idx / w, idx % w);
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
            let mut visit = |n: usize| {
                if !seen[n] && labels[n] == CellLabel::Obstacle {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
        }
        let cs = grid.cell_size;
        out.push(Component {
            bbox: BoundingBox {
                x_min: grid.origin_x + c0 as f64 * cs,
                y_min: grid.origin_y + r0 as f64 * cs,
                x_max: grid.origin_x + (c1 + 1) as f64 * cs,
                y_max: grid.origin_y + (r1 + 1) as f64 * cs,
            },
            cells,
        });
    }
    Ok(out)
}

/// Boxes with their mean cell score.
pub fn detections_from_scores(
    scores: &[f64],
    grid: &OccupancyGrid,
    threshold: f64,
) -> Result<Vec<Detection>> {
    let labels = threshold_scores(scores, threshold);
    Ok(components(&labels, grid)?
        .into_iter()
        .map(|c| Detection {
            bbox: c.bbox,
            score: (c.cells.iter().map(|i| scores[*i]).sum::<f64>() / c.cells.len() as f64)
                .clamp(0.0, 1.0),
            label: CellLabel::Obstacle,
        })
        .collect())
}

/// Overlap area over union area. Zero-area boxes score 0 against anything.
pub fn compute_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

/// Confusion counts. `tp`, `fp`, `fn_` are object-level; `tn` counts free
/// cells correctly classified free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl DetectionCounts {
    pub fn add(&mut self, other: &DetectionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: DetectionCounts,
    /// `(detection index, truth index, IoU)` of each match.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl MatchResult {
    pub fn mean_iou(&self) -> Option<f64> {
        if self.pairs.is_empty() {
            None
        } else {
            Some(self.pairs.iter().map(|p| p.2).sum::<f64>() / self.pairs.len() as f64)
        }
    }
}

/// Greedy one-to-one matching by descending IoU (ties by detection then
/// truth index). `tn_cells` is carried through into the counts.
pub fn match_detections(
    dets: &[Detection],
    truths: &[BoundingBox],
    iou_threshold: f64,
    tn_cells: u64,
) -> MatchResult {
    let mut cand: Vec<(usize, usize, f64)> = dets
        .iter()
        .enumerate()
        .flat_map(|(di, d)| {
            truths
                .iter()
                .enumerate()
                .map(move |(ti, t)| (di, ti, compute_iou(&d.bbox, t)))
        })
        .filter(|c| c.2 >= iou_threshold && c.2 > 0.0)
        .collect();
    cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut det_used = vec![false; dets.len()];
    let mut truth_used = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for (di, ti, iou) in cand {
        if !det_used[di] && !truth_used[ti] {
            det_used[di] = true;
            truth_used[ti] = true;
            pairs.push((di, ti, iou));
        }
    }
    let tp = pairs.len() as u64;
    MatchResult {
        counts: DetectionCounts {
            tp,
            tn: tn_cells,
            fp: dets.len() as u64 - tp,
            fn_: truths.len() as u64 - tp,
        },
        pairs,
    }
}

/// Free cells predicted free.
pub fn true_negative_cells(pred: &[CellLabel], truth: &[CellLabel]) -> u64 {
    pred.iter()
        .zip(truth)
        .filter(|(p, t)| **p == CellLabel::Free && **t == CellLabel::Free)
        .count() as u64
}

/// Run the recurrent cell over per-tick score vectors from `h = 0`; the
/// hidden states are the smoothed scores.
pub fn temporal_smooth(cell: &RecurrentCell, scores: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if scores.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Domain("scores must lie in [0, 1]".into()));
    }
    let mut h = vec![0.0; cell.hidden_dim];
    let mut out = Vec::with_capacity(scores.len());
    for s in scores {
        h = rnn_step(cell, &h, s)?;
        out.push(h.clone());
    }
    Ok(out)
}

/// Contractive per-cell smoother: `h = σ(3h + 6x - 4.5)`.
pub fn default_smoothing_cell(dim: usize) -> RecurrentCell {
    RecurrentCell::diagonal(dim, 3.0, 6.0, -4.5)
}

/// Perception section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Evidence of an occupied cell at full visibility, per weather.
    pub contrast: WeatherTable,
    /// Evidence noise std in clear weather; scaled by the camera's variance
    /// factor under weather.
    pub noise_std: f64,
    /// Evidence attenuation for cells beyond the camera/LiDAR range.
    pub beyond_range_attenuation: f64,
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub hidden: usize,
    pub train_grids: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Share of obstacle patches in each training minibatch.
    pub positive_fraction: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            grid_width: 32,
            grid_height: 8,
            cell_size: 1.0,
            origin_x: 0.0,
            origin_y: -4.0,
            contrast: WeatherTable {
                clear: 0.85,
                fog: 0.55,
                rain: 0.65,
                snow: 0.5,
            },
            noise_std: 0.08,
            beyond_range_attenuation: 0.3,
            score_threshold: 0.5,
            iou_threshold: 0.5,
            hidden: 16,
            train_grids: 400,
            train_steps: 4000,
            batch: 32,
            learning_rate: 0.5,
            positive_fraction: 0.2,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_width == 0 || self.grid_height == 0 {
            return Err(Error::config(
                "perception.grid_width",
                "grid dimensions must be >= 1",
            ));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::config("perception.cell_size", "must be > 0"));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("iou_threshold", self.iou_threshold),
            ("beyond_range_attenuation", self.beyond_range_attenuation),
            ("positive_fraction", self.positive_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("perception.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("perception.noise_std", "must be >= 0"));
        }
        if self.hidden == 0 || self.batch == 0 {
            return Err(Error::config(
                "perception.hidden",
                "hidden and batch must be >= 1",
            ));
        }
        Ok(())
    }

    fn empty_grid(&self) -> OccupancyGrid {
        OccupancyGrid {
            width: self.grid_width,
            height: self.grid_height,
            cell_size: self.cell_size,
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            values: vec![0.0; self.grid_width * self.grid_height],
        }
    }
}

/// Ground-truth labels: a cell is occupied when its center lies inside an
/// obstacle footprint. `obstacles` are given relative to the grid frame
/// (`x` ahead of the ego, `y` in road coordinates).
pub fn truth_labels(grid: &OccupancyGrid, obstacles: &[(f64, f64, f64)]) -> Vec<CellLabel> {
    let mut labels = vec![CellLabel::Free; grid.len()];
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (cx, cy) = grid.cell_center(col, row);
            if obstacles
                .iter()
                .any(|(x, y, he)| (cx - x).abs() <= *he && (cy - y).abs() <= *he)
            {
                labels[row * grid.width + col] = CellLabel::Obstacle;
            }
        }
    }
    labels
}

/// Render weather-degraded occupancy evidence for obstacles given in the
/// grid frame.
pub fn render_grid(
    cfg: &PerceptionConfig,
    sensors: &SensorSuite,
    weather: &WeatherCondition,
    obstacles: &[(f64, f64, f64)],
    rng: &mut SimRng,
) -> (OccupancyGrid, Vec<CellLabel>) {
    let mut grid = cfg.empty_grid();
    let labels = truth_labels(&grid, obstacles);
    let range = degrade_range(&sensors.camera, weather).max(degrade_range(&sensors.lidar, weather));
    let contrast = cfg.contrast.get(weather.kind()) * (1.0 - 0.3 * weather.intensity());
    let noise_var = (cfg.noise_std * cfg.noise_std) * variance_factor(&sensors.camera, weather);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let idx = row * grid.width + col;
            let (cx, _) = grid.cell_center(col, row);
            let visible = if cx <= range {
                1.0
            } else {
                cfg.beyond_range_attenuation
            };
            let signal = if labels[idx] == CellLabel::Obstacle {
                contrast * visible
            } else {
                0.0
            };
            grid.values[idx] = rng.gaussian(signal, noise_var).clamp(0.0, 1.0);
        }
    }
    (grid, labels)
}

/// Obstacles of `world` in grid coordinates.
pub fn grid_obstacles(world: &WorldState) -> Vec<(f64, f64, f64)> {
    world
        .obstacles
        .iter()
        .map(|o: &Obstacle| (o.x - world.ego.x, o.y, o.half_extent))
        .collect()
}

/// A random synthetic scene: up to three obstacles placed in the grid.
pub fn synthetic_scene(cfg: &PerceptionConfig, rng: &mut SimRng) -> Vec<(f64, f64, f64)> {
    let n = rng.below(4);
    let x_max = cfg.origin_x + cfg.grid_width as f64 * cfg.cell_size;
    let y_max = cfg.origin_y + cfg.grid_height as f64 * cfg.cell_size;
    (0..n)
        .map(|_| {
            (
                rng.uniform_range(cfg.origin_x + 1.0, x_max - 1.0),
                rng.uniform_range(cfg.origin_y + 1.0, y_max - 1.0),
                1.0,
            )
        })
        .collect()
}

/// Labelled synthetic grids across all weathers, for training and held-out
/// evaluation.
pub fn synthetic_dataset(
    cfg: &PerceptionConfig,
    sensors: &SensorSuite,
    count: usize,
    seed: u64,
) -> Vec<(OccupancyGrid, Vec<CellLabel>)> {
    let mut rng = SimRng::new(seed);
    (0..count)
        .map(|i| {
            let kind = WeatherKind::ALL[i % 4];
            let weather =
                WeatherCondition::new(kind, rng.uniform_range(0.5, 1.0)).expect("valid intensity");
            let scene = synthetic_scene(cfg, &mut rng);
            render_grid(cfg, sensors, &weather, &scene, &mut rng)
        })
        .collect()
}

/// Train a `9 -> hidden -> 1` sigmoid cell classifier with minibatch SGD on
/// squared error, oversampling obstacle patches.
pub fn train_cell_classifier(
    cfg: &PerceptionConfig,
    sensors: &SensorSuite,
    seed: u64,
) -> Result<Mlp> {
    cfg.validate()?;
    let data = synthetic_dataset(cfg, sensors, cfg.train_grids, seed);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (grid, labels) in &data {
        for row in 0..grid.height {
            for col in 0..grid.width {
                let p = grid.patch(col, row);
                match labels[row * grid.width + col] {
                    CellLabel::Obstacle => pos.push(p),
                    CellLabel::Free => neg.push(p),
                }
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Usage("training grids contain a single class".into()));
    }
    let mut rng = SimRng::new(seed ^ 0x5eed);
    let mut model = Mlp::init(
        &[PATCH_LEN, cfg.hidden, 1],
        Activation::Relu,
        Activation::Sigmoid,
        &mut rng,
    )?;
    let mut grads = Gradients::zeros_like(&model);
    for _ in 0..cfg.train_steps {
        grads.reset();
        for _ in 0..cfg.batch {
            let (x, t) = if rng.uniform() < cfg.positive_fraction {
                (&pos[rng.below(pos.len())], 1.0)
            } else {
                (&neg[rng.below(neg.len())], 0.0)
            };
            let cache = model.forward_cached(x)?;
            let g = [2.0 * (cache.output[0] - t) / cfg.batch as f64];
            model.backward_into(&cache, &g, &mut grads)?;
        }
        model.apply_gradients(&grads, cfg.learning_rate)?;
    }
    Ok(model)
}

/// Fraction of cells classified correctly, in percent.
pub fn cell_accuracy<M: CellScorer + ?Sized>(
    model: &M,
    data: &[(OccupancyGrid, Vec<CellLabel>)],
    threshold: f64,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (grid, truth) in data {
        let pred = classify_cells(model, grid, threshold)?;
        correct += pred.iter().zip(truth).filter(|(p, t)| p == t).count();
        total += truth.len();
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no cells to score".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Per-frame perception outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvaluation {
    pub counts: DetectionCounts,
    pub iou_sum: f64,
    pub matched: u64,
}

/// Render, classify, box and score one frame of `world`.
pub fn perceive_frame<M: CellScorer + ?Sized>(
    model: &M,
    cfg: &PerceptionConfig,
    sensors: &SensorSuite,
    world: &WorldState,
    rng: &mut SimRng,
) -> Result<FrameEvaluation> {
    let (grid, truth) = render_grid(cfg, sensors, &world.weather, &grid_obstacles(world), rng);
    let scores = score_cells(model, &grid)?;
    let pred = threshold_scores(&scores, cfg.score_threshold);
    let dets = detections_from_scores(&scores, &grid, cfg.score_threshold)?;
    let truths = boxes_from_labels(&truth, &grid)?;
    let m = match_detections(
        &dets,
        &truths,
        cfg.iou_threshold,
        true_negative_cells(&pred, &truth),
    );
    Ok(FrameEvaluation {
        counts: m.counts,
        iou_sum: m.pairs.iter().map(|p| p.2).sum(),
        matched: m.pairs.len() as u64,
    })
}
