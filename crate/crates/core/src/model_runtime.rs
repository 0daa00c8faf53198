//! In-process execution of serialized ONNX extractor and matcher models.
//!
//! Raw model output is never trusted: keypoints outside the image, non-finite
//! values and zero descriptors are dropped, descriptors are re-normalized and
//! duplicate matches are resolved by confidence before anything leaves this
//! module.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::GrayImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use crate::frontend::{normalize_keypoints, FeatureExtractor, FeatureSet, FrontendError};
use crate::geometry::PixelPoint;
use crate::matcher::{FeatureMatcher, MatchError, MatchSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model {path}: {detail}")]
    ModelFileUnreadable { path: PathBuf, detail: String },
    #[error("signature mismatch: expected {expected}, found {found}")]
    SignatureMismatch { expected: String, found: String },
    #[error("inference failed: {0}")]
    InferenceBackendFailure(String),
}

impl From<ModelError> for FrontendError {
    fn from(e: ModelError) -> Self {
        FrontendError::InferenceBackendFailure(e.to_string())
    }
}

impl From<ModelError> for MatchError {
    fn from(e: ModelError) -> Self {
        MatchError::InferenceBackendFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Extractor,
    Matcher,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Extractor => "extractor",
            ModelKind::Matcher => "matcher",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Cpu,
    Gpu,
}

type Plan = TypedRunnableModel<TypedModel>;

/// A loaded model with a validated I/O signature. Inference through one
/// handle is serialized; separate handles run concurrently.
pub struct ModelHandle {
    pub model_path: PathBuf,
    pub kind: ModelKind,
    /// Declared input shapes, `?` for symbolic dimensions.
    pub input_spec: Vec<String>,
    pub device: Device,
    pub sha256: String,
    model: InferenceModel,
    input_types: Vec<Option<DatumType>>,
    input_ranks: Vec<Option<usize>>,
    plans: Mutex<HashMap<Vec<Vec<usize>>, Arc<Plan>>>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("model_path", &self.model_path)
            .field("kind", &self.kind)
            .field("input_spec", &self.input_spec)
            .field("device", &self.device)
            .field("sha256", &self.sha256)
            .finish()
    }
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn describe_shape(fact: &InferenceFact) -> String {
    if fact.shape.is_open() {
        return "[..]".into();
    }
    let dims: Vec<String> = fact
        .shape
        .dims()
        .map(|d| d.concretize().map_or_else(|| "?".to_string(), |d| d.to_string()))
        .collect();
    format!("[{}]", dims.join(","))
}

fn rank_of(fact: &InferenceFact) -> Option<usize> {
    fact.shape.rank().concretize().map(|r| r as usize)
}

fn signature(kind: ModelKind) -> (usize, usize, &'static [&'static [usize]]) {
    match kind {
        // image: rank 4
        ModelKind::Extractor => (1, 3, &[&[4]]),
        // kpts0, kpts1, desc0, desc1: each with or without batch
        ModelKind::Matcher => (4, 2, &[&[2, 3], &[2, 3], &[2, 3], &[2, 3]]),
    }
}

fn unreadable(path: &Path, e: impl fmt::Display) -> ModelError {
    ModelError::ModelFileUnreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Loads and validates a model. A GPU request falls back to the CPU with a
/// warning since this backend executes on the CPU only.
pub fn load_model(path: &Path, kind: ModelKind, device: Device) -> Result<ModelHandle, ModelError> {
    let sha256 = file_sha256(path).map_err(|e| unreadable(path, e))?;
    let model = tract_onnx::onnx()
        .model_for_path(path)
        .map_err(|e| unreadable(path, e))?;
    let n_in = model.input_outlets().map_err(|e| unreadable(path, e))?.len();
    let n_out = model.output_outlets().map_err(|e| unreadable(path, e))?.len();
    let facts: Vec<InferenceFact> = (0..n_in)
        .map(|i| model.input_fact(i).cloned())
        .collect::<TractResult<_>>()
        .map_err(|e| unreadable(path, e))?;
    let input_ranks: Vec<Option<usize>> = facts.iter().map(rank_of).collect();

    let (want_in, want_out, ranks) = signature(kind);
    let found = format!(
        "{n_in} inputs {:?}, {n_out} outputs",
        facts.iter().map(describe_shape).collect::<Vec<_>>()
    );
    let ranks_ok = n_in == want_in
        && input_ranks
            .iter()
            .zip(ranks)
            .all(|(r, allowed)| r.is_none_or(|r| allowed.contains(&r)));
    if !ranks_ok || n_out != want_out {
        let expected = match kind {
            ModelKind::Extractor => "extractor: 1 input [1,1,H,W], 3 outputs (keypoints, scores, descriptors)",
            ModelKind::Matcher => "matcher: 4 inputs (kpts0, kpts1, desc0, desc1), 2 outputs (matches, scores)",
        };
        return Err(ModelError::SignatureMismatch {
            expected: expected.to_string(),
            found,
        });
    }

    let device = match device {
        Device::Gpu => {
            log::warn!("no GPU backend available, running {} on the CPU", path.display());
            Device::Cpu
        }
        Device::Cpu => Device::Cpu,
    };
    Ok(ModelHandle {
        model_path: path.to_path_buf(),
        kind,
        input_spec: facts.iter().map(describe_shape).collect(),
        device,
        sha256,
        input_types: facts.iter().map(|f| f.datum_type.concretize()).collect(),
        input_ranks,
        model,
        plans: Mutex::new(HashMap::new()),
    })
}

fn failure(e: impl fmt::Display) -> ModelError {
    ModelError::InferenceBackendFailure(e.to_string())
}

impl ModelHandle {
    fn expect_kind(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ModelError::SignatureMismatch {
                expected: kind.to_string(),
                found: self.kind.to_string(),
            })
        }
    }

    /// Runs the model on f32 inputs, adding a leading batch axis where the
    /// model declares one more dimension than supplied. Plans are cached per
    /// input shape.
    fn run(&self, inputs: Vec<Tensor>) -> Result<TVec<TValue>, ModelError> {
        let inputs: Vec<Tensor> = inputs
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t = match self.input_ranks.get(i).copied().flatten() {
                    Some(r) if r == t.rank() + 1 => {
                        t.insert_axis(0).map_err(failure)?;
                        t
                    }
                    _ => t,
                };
                if let Some(dt) = self.input_types.get(i).copied().flatten() {
                    if dt != t.datum_type() {
                        t = t.cast_to_dt(dt).map_err(failure)?.into_owned();
                    }
                }
                Ok(t)
            })
            .collect::<Result<_, ModelError>>()?;
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();

        let mut plans = self.plans.lock().map_err(|_| failure("model lock poisoned"))?;
        let plan = match plans.get(&shapes) {
            Some(p) => p.clone(),
            None => {
                let mut m = self.model.clone();
                for (i, t) in inputs.iter().enumerate() {
                    m.set_input_fact(i, InferenceFact::dt_shape(t.datum_type(), t.shape()))
                        .map_err(failure)?;
                }
                let plan = Arc::new(m.into_optimized().and_then(|m| m.into_runnable()).map_err(failure)?);
                plans.insert(shapes, plan.clone());
                plan
            }
        };
        plan.run(inputs.into_iter().map(TValue::from).collect())
            .map_err(failure)
    }
}

fn to_f32_vec(v: &TValue) -> Result<Vec<f32>, ModelError> {
    let t = v.cast_to::<f32>().map_err(failure)?;
    Ok(t.as_slice::<f32>().map_err(failure)?.to_vec())
}

/// Runs an extractor on a grayscale image scaled to [0, 1].
pub fn run_extractor(h: &ModelHandle, image: &GrayImage) -> Result<FeatureSet, FrontendError> {
    h.expect_kind(ModelKind::Extractor)?;
    let (w, ht) = image.dimensions();
    if w == 0 || ht == 0 {
        return Err(FrontendError::EmptyImage);
    }
    let pixels: Vec<f32> = image.as_raw().iter().map(|&p| p as f32 / 255.0).collect();
    let input = Tensor::from_shape(&[1, 1, ht as usize, w as usize], &pixels).map_err(failure)?;
    let out = h.run(vec![input])?;
    let kp = to_f32_vec(&out[0])?;
    let scores = to_f32_vec(&out[1])?;
    let desc = to_f32_vec(&out[2])?;
    let n = scores.len();
    if kp.len() != 2 * n || (n > 0 && desc.len() % n != 0) {
        return Err(FrontendError::InvalidFeatureSet(format!(
            "model emitted {} keypoint values, {} scores, {} descriptor values",
            kp.len(),
            n,
            desc.len()
        )));
    }
    let dim = desc.len().checked_div(n).unwrap_or(crate::frontend::DESCRIPTOR_DIM);
    postprocess_extractor(&kp, &scores, &desc, dim, (w, ht))
}

/// Enforces the feature-set contract on raw model output.
pub fn postprocess_extractor(
    keypoints: &[f32],
    scores: &[f32],
    descriptors: &[f32],
    dim: usize,
    image_size: (u32, u32),
) -> Result<FeatureSet, FrontendError> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut kps = Vec::new();
    let mut sc = Vec::new();
    let mut de = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        let (u, v) = (keypoints[2 * i] as f64, keypoints[2 * i + 1] as f64);
        let d = &descriptors[i * dim..(i + 1) * dim];
        let norm = d.iter().map(|x| x * x).sum::<f32>().sqrt();
        let in_bounds = u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0;
        if !in_bounds || !s.is_finite() || !(norm > 1e-12) || !norm.is_finite() {
            continue;
        }
        kps.push(PixelPoint::new(u, v));
        sc.push(s);
        de.extend(d.iter().map(|x| x / norm));
    }
    FeatureSet::new(kps, sc, de, dim, image_size)
}

/// Runs a matcher on two feature sets. Keypoints are passed in normalized
/// coordinates.
pub fn run_matcher(
    h: &ModelHandle,
    a: &FeatureSet,
    b: &FeatureSet,
    min_confidence: f32,
) -> Result<MatchSet, MatchError> {
    h.expect_kind(ModelKind::Matcher)?;
    if a.is_empty() || b.is_empty() {
        return Ok(MatchSet::empty());
    }
    if a.descriptor_dim() != b.descriptor_dim() {
        return Err(MatchError::DimensionMismatch(a.descriptor_dim(), b.descriptor_dim()));
    }
    let kpts = |fs: &FeatureSet| -> Result<Tensor, ModelError> {
        let flat: Vec<f32> = normalize_keypoints(fs)
            .iter()
            .flat_map(|p| [p[0] as f32, p[1] as f32])
            .collect();
        Tensor::from_shape(&[fs.len(), 2], &flat).map_err(failure)
    };
    let desc =
        |fs: &FeatureSet| Tensor::from_shape(&[fs.len(), fs.descriptor_dim()], fs.descriptors()).map_err(failure);
    let out = h.run(vec![kpts(a)?, kpts(b)?, desc(a)?, desc(b)?])?;
    let idx = out[0]
        .cast_to::<i64>()
        .map_err(failure)?
        .as_slice::<i64>()
        .map_err(failure)?
        .to_vec();
    let scores = to_f32_vec(&out[1])?;
    if idx.len() != 2 * scores.len() {
        return Err(MatchError::InferenceBackendFailure(format!(
            "{} match indices for {} scores",
            idx.len(),
            scores.len()
        )));
    }
    Ok(postprocess_matches(&idx, &scores, a.len(), b.len(), min_confidence))
}

/// Drops out-of-range and non-finite pairs and resolves duplicates by
/// confidence.
pub fn postprocess_matches(
    indices: &[i64],
    scores: &[f32],
    len_a: usize,
    len_b: usize,
    min_confidence: f32,
) -> MatchSet {
    let candidates = scores
        .iter()
        .enumerate()
        .filter_map(|(k, &s)| {
            let (i, j) = (indices[2 * k], indices[2 * k + 1]);
            let valid = i >= 0 && j >= 0 && (i as usize) < len_a && (j as usize) < len_b && s.is_finite();
            valid.then_some((i as usize, j as usize, s))
        })
        .collect();
    MatchSet::from_candidates(candidates, len_a, len_b, min_confidence)
}

/// Extractor backed by a model file.
#[derive(Debug, Clone)]
pub struct LearnedExtractor {
    handle: Arc<ModelHandle>,
}

impl LearnedExtractor {
    pub fn new(handle: Arc<ModelHandle>) -> Result<Self, ModelError> {
        handle.expect_kind(ModelKind::Extractor)?;
        Ok(Self { handle })
    }
}

impl FeatureExtractor for LearnedExtractor {
    fn extract(&self, image: &GrayImage) -> Result<FeatureSet, FrontendError> {
        run_extractor(&self.handle, image)
    }

    fn name(&self) -> String {
        format!("onnx-extractor({})", self.handle.model_path.display())
    }
}

/// Matcher backed by a model file.
#[derive(Debug, Clone)]
pub struct LearnedMatcher {
    handle: Arc<ModelHandle>,
}

impl LearnedMatcher {
    pub fn new(handle: Arc<ModelHandle>) -> Result<Self, ModelError> {
        handle.expect_kind(ModelKind::Matcher)?;
        Ok(Self { handle })
    }
}

impl FeatureMatcher for LearnedMatcher {
    fn match_sets(&self, a: &FeatureSet, b: &FeatureSet, min_confidence: f32) -> Result<MatchSet, MatchError> {
        run_matcher(&self.handle, a, b, min_confidence)
    }

    fn name(&self) -> String {
        format!("onnx-matcher({})", self.handle.model_path.display())
    }
}
