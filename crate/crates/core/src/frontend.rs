//! Feature extraction.
//!
//! [`FeatureExtractor`] is the seam between the tracker and whatever produces
//! keypoints: the builtin multi-scale grid detector defined here, or a learned
//! model run through [`crate::model_runtime`].

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SequenceFrame;
use crate::geometry::PixelPoint;

/// Descriptor length shared by the builtin and learned extractors.
pub const DESCRIPTOR_DIM: usize = 256;
const UNIT_NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("inference backend failure: {0}")]
    InferenceBackendFailure(String),
    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),
    #[error("image is empty")]
    EmptyImage,
}

/// Keypoints, confidences and unit-norm descriptors for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    keypoints: Vec<PixelPoint>,
    scores: Vec<f32>,
    descriptors: Vec<f32>,
    dim: usize,
    image_size: (u32, u32),
}

impl FeatureSet {
    pub fn empty(image_size: (u32, u32), dim: usize) -> Self {
        Self {
            keypoints: Vec::new(),
            scores: Vec::new(),
            descriptors: Vec::new(),
            dim,
            image_size,
        }
    }

    /// Builds a feature set from row-major descriptors, checking every
    /// invariant.
    pub fn new(
        keypoints: Vec<PixelPoint>,
        scores: Vec<f32>,
        descriptors: Vec<f32>,
        dim: usize,
        image_size: (u32, u32),
    ) -> Result<Self, FrontendError> {
        let fs = Self {
            keypoints,
            scores,
            descriptors,
            dim,
            image_size,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<(), FrontendError> {
        let bad = |m: String| Err(FrontendError::InvalidFeatureSet(m));
        if self.dim == 0 {
            return bad("descriptor dimension is zero".into());
        }
        let n = self.keypoints.len();
        if self.scores.len() != n || self.descriptors.len() != n * self.dim {
            return bad(format!(
                "length mismatch: {} keypoints, {} scores, {} descriptor values (dim {})",
                n,
                self.scores.len(),
                self.descriptors.len(),
                self.dim
            ));
        }
        let (w, h) = self.image_size;
        for (i, kp) in self.keypoints.iter().enumerate() {
            if !(kp.u >= 0.0 && kp.v >= 0.0 && kp.u < w as f64 && kp.v < h as f64) {
                return bad(format!("keypoint {i} at ({}, {}) outside {w}x{h}", kp.u, kp.v));
            }
            let s = self.scores[i];
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("score {s} of keypoint {i} outside [0, 1]"));
            }
            let norm = l2_norm(self.descriptor(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return bad(format!("descriptor {i} has norm {norm}"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[PixelPoint] {
        &self.keypoints
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn descriptor_dim(&self) -> usize {
        self.dim
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

/// Scales `v` to unit length; `false` when it has (near) zero norm.
pub(crate) fn normalize_in_place(v: &mut [f32]) -> bool {
    let norm = l2_norm(v);
    if !norm.is_finite() || norm < 1e-8 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub max_features: usize,
    /// Keypoint confidence cut applied to learned-extractor output.
    pub score_threshold: f32,
    /// Non-maximum suppression radius for learned-extractor output, pixels.
    pub nms_radius: u32,
    /// Builtin grid as (rows, cols).
    pub grid_cells: (u32, u32),
    pub levels: u32,
    pub scale_factor: f64,
    pub fast_threshold: u8,
    pub fast_fallback_threshold: u8,
    pub min_corners_per_cell: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            max_features: 1000,
            score_threshold: 0.005,
            nms_radius: 4,
            grid_cells: (8, 8),
            levels: 8,
            scale_factor: 1.2,
            fast_threshold: 20,
            fast_fallback_threshold: 7,
            min_corners_per_cell: 5,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_features == 0 {
            return Err("max_features must be > 0".into());
        }
        if self.levels == 0 {
            return Err("levels must be >= 1".into());
        }
        if !(self.scale_factor > 1.0) {
            return Err("scale_factor must be > 1".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err("score_threshold must lie in [0, 1]".into());
        }
        if self.grid_cells.0 == 0 || self.grid_cells.1 == 0 {
            return Err("grid_cells must be non-zero".into());
        }
        if self.fast_fallback_threshold > self.fast_threshold {
            return Err("fast_fallback_threshold must not exceed fast_threshold".into());
        }
        Ok(())
    }
}

/// Produces a [`FeatureSet`] for an image.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &GrayImage) -> Result<FeatureSet, FrontendError>;

    /// Extraction entry point used by the tracker. The default converts the
    /// color image to grayscale and calls [`FeatureExtractor::extract`].
    fn extract_frame(&self, frame: &SequenceFrame) -> Result<FeatureSet, FrontendError> {
        self.extract(&to_grayscale(&frame.rgb))
    }

    fn name(&self) -> String;
}

/// ITU-R BT.601 luma, rounded to nearest.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::from_raw(w, h, data).expect("same dimensions")
}

/// Maps keypoints to `[-1, 1]` using the longer image side, the input
/// convention of the learned matcher.
pub fn normalize_keypoints(fs: &FeatureSet) -> Vec<[f64; 2]> {
    let (w, h) = fs.image_size();
    let (w, h) = (w as f64, h as f64);
    let scale = w.max(h);
    fs.keypoints()
        .iter()
        .map(|kp| [(2.0 * kp.u - w) / scale, (2.0 * kp.v - h) / scale])
        .collect()
}

/// Bresenham circle of radius 3 in clockwise order starting at 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const FAST_ARC: usize = 9;
const SADDLE_MIN_ARC: usize = 3;
const PATCH: u32 = 16;
const BORDER: u32 = PATCH / 2;

/// Segment-test corner score at `(x, y)`, or 0 when the pixel is not a corner.
///
/// A pixel is a corner when the circle holds a contiguous arc of at least 9
/// pixels all brighter (or all darker) than the centre by more than
/// `threshold`, or when it is a saddle: exactly two darker arcs alternating
/// with two non-darker arcs (or the mirror), each at least 3 pixels long.
/// The saddle case covers X-junctions such as checkerboard corners.
fn corner_score(img: &GrayImage, x: u32, y: u32, threshold: u8) -> u32 {
    let center = img.get_pixel(x, y).0[0] as i32;
    let t = threshold as i32;
    let mut class = [0i8; 16];
    let mut score = 0u32;
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        let p = img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0] as i32;
        let diff = p - center;
        if diff > t {
            class[k] = 1;
        } else if diff < -t {
            class[k] = -1;
        }
        score += (diff.abs() - t).max(0) as u32;
    }
    if score == 0 {
        return 0;
    }
    let fast = longest_arc(&class, 1) >= FAST_ARC || longest_arc(&class, -1) >= FAST_ARC;
    if fast || is_saddle(&class, 1) || is_saddle(&class, -1) {
        score
    } else {
        0
    }
}

fn longest_arc(class: &[i8; 16], sign: i8) -> usize {
    let mut best = 0;
    let mut run = 0;
    for k in 0..32 {
        if class[k % 16] == sign {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best.min(16)
}

/// Cyclic run lengths of the predicate `class == sign`, starting at a run
/// boundary.
fn arcs(class: &[i8; 16], sign: i8) -> Vec<(bool, usize)> {
    let is = |k: usize| class[k % 16] == sign;
    let Some(start) = (0..16).find(|&k| is(k) != is(k + 15)) else {
        return vec![(is(0), 16)];
    };
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for k in start..start + 16 {
        match runs.last_mut() {
            Some((flag, len)) if *flag == is(k) => *len += 1,
            _ => runs.push((is(k), 1)),
        }
    }
    runs
}

fn is_saddle(class: &[i8; 16], sign: i8) -> bool {
    let runs = arcs(class, sign);
    runs.len() == 4 && runs.iter().all(|(_, len)| *len >= SADDLE_MIN_ARC)
}

/// Score map with non-maximum suppression over 3×3 neighbourhoods. Equal
/// neighbours are resolved in favour of the earliest pixel in raster order.
fn detect_level(img: &GrayImage, threshold: u8) -> Vec<(u32, u32, u32)> {
    let (w, h) = img.dimensions();
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut scores = vec![0u32; (w * h) as usize];
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            scores[idx(x, y)] = corner_score(img, x, y, threshold);
        }
    }
    let mut out = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let s = scores[idx(x, y)];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nbr: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = scores[idx((x as i32 + dx) as u32, (y as i32 + dy) as u32)];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        keep = false;
                        break 'nbr;
                    }
                }
            }
            if keep {
                out.push((x, y, s));
            }
        }
    }
    out
}

/// Mean-subtracted, L2-normalised 16×16 intensity patch around `(x, y)`.
fn patch_descriptor(img: &GrayImage, x: u32, y: u32) -> Option<Vec<f32>> {
    let mut v = Vec::with_capacity((PATCH * PATCH) as usize);
    for py in y - BORDER..y + BORDER {
        for px in x - BORDER..x + BORDER {
            v.push(img.get_pixel(px, py).0[0] as f32);
        }
    }
    let mean = v.iter().sum::<f32>() / v.len() as f32;
    v.iter_mut().for_each(|p| *p -= mean);
    normalize_in_place(&mut v).then_some(v)
}

/// Per-cell record of the threshold fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellTrace {
    pub level: u32,
    pub row: u32,
    pub col: u32,
    pub primary_corners: usize,
    pub fallback_attempted: bool,
    pub final_corners: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    level: u32,
    x: u32,
    y: u32,
    raw_score: u32,
}

/// Builtin multi-scale grid detector.
#[derive(Debug, Clone, Default)]
pub struct GridDetector {
    pub config: ExtractorConfig,
}

impl GridDetector {
    pub fn new(config: ExtractorConfig) -> Self {
        Self { config }
    }
}

impl FeatureExtractor for GridDetector {
    fn extract(&self, image: &GrayImage) -> Result<FeatureSet, FrontendError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(FrontendError::EmptyImage);
        }
        Ok(builtin_grid_detect(image, &self.config))
    }

    fn name(&self) -> String {
        "builtin-grid".into()
    }
}

pub fn builtin_grid_detect(image: &GrayImage, cfg: &ExtractorConfig) -> FeatureSet {
    builtin_grid_detect_traced(image, cfg).0
}

/// Per-level quota following a geometric series in the inverse scale factor.
fn level_quotas(total: usize, levels: u32, scale_factor: f64) -> Vec<usize> {
    let inv = 1.0 / scale_factor;
    let first = total as f64 * (1.0 - inv) / (1.0 - inv.powi(levels as i32));
    let mut quotas = Vec::with_capacity(levels as usize);
    let mut assigned = 0;
    for l in 0..levels {
        let q = if l + 1 == levels {
            total.saturating_sub(assigned)
        } else {
            ((first * inv.powi(l as i32)).round() as usize).min(total - assigned)
        };
        assigned += q;
        quotas.push(q);
    }
    quotas
}

/// Grid detection over an image pyramid. Each cell of each level is searched
/// at the primary threshold and, when that yields fewer than
/// `min_corners_per_cell` corners, searched again at the fallback threshold.
/// Level coordinates are rescaled by `scale_factor^level`.
pub fn builtin_grid_detect_traced(image: &GrayImage, cfg: &ExtractorConfig) -> (FeatureSet, Vec<CellTrace>) {
    let (w, h) = image.dimensions();
    let mut traces = Vec::new();
    let mut per_level: Vec<Vec<(Candidate, Vec<f32>)>> = Vec::new();

    for level in 0..cfg.levels {
        let scale = cfg.scale_factor.powi(level as i32);
        let lw = (w as f64 / scale).round() as u32;
        let lh = (h as f64 / scale).round() as u32;
        let mut found = Vec::new();
        if lw > 2 * BORDER && lh > 2 * BORDER {
            let img = if level == 0 {
                image.clone()
            } else {
                imageops::resize(image, lw, lh, FilterType::Triangle)
            };
            let (rows, cols) = cfg.grid_cells;
            let valid_w = lw - 2 * BORDER;
            let valid_h = lh - 2 * BORDER;
            let cell_w = valid_w.div_ceil(cols).max(1);
            let cell_h = valid_h.div_ceil(rows).max(1);
            let cell_of = |x: u32, y: u32| {
                (
                    ((y - BORDER) / cell_h).min(rows - 1),
                    ((x - BORDER) / cell_w).min(cols - 1),
                )
            };
            let primary = detect_level(&img, cfg.fast_threshold);
            let mut fallback = None;
            let mut cells: Vec<Vec<(u32, u32, u32)>> = vec![Vec::new(); (rows * cols) as usize];
            for &c in &primary {
                let (r, cc) = cell_of(c.0, c.1);
                cells[(r * cols + cc) as usize].push(c);
            }
            for r in 0..rows {
                for c in 0..cols {
                    let slot = (r * cols + c) as usize;
                    let primary_corners = cells[slot].len();
                    let mut fallback_attempted = false;
                    if primary_corners < cfg.min_corners_per_cell && cfg.fast_fallback_threshold < cfg.fast_threshold {
                        fallback_attempted = true;
                        let low = fallback.get_or_insert_with(|| detect_level(&img, cfg.fast_fallback_threshold));
                        let redone: Vec<_> = low.iter().copied().filter(|p| cell_of(p.0, p.1) == (r, c)).collect();
                        if redone.len() > primary_corners {
                            cells[slot] = redone;
                        }
                    }
                    traces.push(CellTrace {
                        level,
                        row: r,
                        col: c,
                        primary_corners,
                        fallback_attempted,
                        final_corners: cells[slot].len(),
                    });
                }
            }
            for (x, y, s) in cells.into_iter().flatten() {
                let (fu, fv) = (x as f64 * scale, y as f64 * scale);
                if fu >= w as f64 || fv >= h as f64 {
                    continue;
                }
                if let Some(desc) = patch_descriptor(&img, x, y) {
                    found.push((
                        Candidate {
                            level,
                            x,
                            y,
                            raw_score: s,
                        },
                        desc,
                    ));
                }
            }
        }
        found.sort_by(|a, b| candidate_order(&a.0, &b.0));
        per_level.push(found);
    }

    // Per-level quotas first, then fill any remaining budget by score.
    let quotas = level_quotas(cfg.max_features, cfg.levels, cfg.scale_factor);
    let mut chosen = Vec::new();
    let mut leftovers = Vec::new();
    for (found, quota) in per_level.into_iter().zip(quotas) {
        let mut it = found.into_iter();
        chosen.extend(it.by_ref().take(quota));
        leftovers.extend(it);
    }
    if chosen.len() < cfg.max_features {
        leftovers.sort_by(|a, b| candidate_order(&a.0, &b.0));
        let missing = cfg.max_features - chosen.len();
        chosen.extend(leftovers.into_iter().take(missing));
    }
    chosen.sort_by(|a, b| candidate_order(&a.0, &b.0));
    chosen.truncate(cfg.max_features);

    let max_raw = (16 * 255) as f32;
    let mut keypoints = Vec::with_capacity(chosen.len());
    let mut scores = Vec::with_capacity(chosen.len());
    let mut descriptors = Vec::with_capacity(chosen.len() * DESCRIPTOR_DIM);
    for (c, desc) in chosen {
        let scale = cfg.scale_factor.powi(c.level as i32);
        keypoints.push(PixelPoint::new(c.x as f64 * scale, c.y as f64 * scale));
        scores.push((c.raw_score as f32 / max_raw).min(1.0));
        descriptors.extend(desc);
    }
    let fs = FeatureSet::new(keypoints, scores, descriptors, DESCRIPTOR_DIM, (w, h))
        .expect("builtin detector output satisfies feature set invariants");
    (fs, traces)
}

fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.raw_score
        .cmp(&a.raw_score)
        .then(a.level.cmp(&b.level))
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}
