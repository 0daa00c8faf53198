//! Descriptor matching between feature sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{FeatureSet, FrontendError};
use crate::geometry::PixelPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("inference backend failure: {0}")]
    InferenceBackendFailure(String),
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    InvalidInput(#[from] FrontendError),
}

/// One-to-one index pairs between two feature sets, sorted by `index_a`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pairs: Vec<(usize, usize)>,
    confidences: Vec<f32>,
}

impl MatchSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Keeps the highest-confidence pair for every index on either side,
    /// drops out-of-range indices and anything below `min_confidence`.
    /// Equal confidences resolve towards the lower `(index_a, index_b)`.
    pub fn from_candidates(
        mut candidates: Vec<(usize, usize, f32)>,
        len_a: usize,
        len_b: usize,
        min_confidence: f32,
    ) -> Self {
        candidates.retain(|&(a, b, c)| a < len_a && b < len_b && c.is_finite() && c >= min_confidence);
        candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        let mut used_a = vec![false; len_a];
        let mut used_b = vec![false; len_b];
        let mut kept = Vec::new();
        for (a, b, c) in candidates {
            if used_a[a] || used_b[b] {
                continue;
            }
            used_a[a] = true;
            used_b[b] = true;
            kept.push((a, b, c.clamp(0.0, 1.0)));
        }
        kept.sort_by_key(|&(a, b, _)| (a, b));
        Self {
            pairs: kept.iter().map(|&(a, b, _)| (a, b)).collect(),
            confidences: kept.iter().map(|&(_, _, c)| c).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn confidences(&self) -> &[f32] {
        &self.confidences
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        self.pairs.iter().zip(&self.confidences).map(|(&(a, b), &c)| (a, b, c))
    }

    /// True when no index repeats on either side.
    pub fn is_one_to_one(&self) -> bool {
        let mut a: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let mut b: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        a.sort_unstable();
        b.sort_unstable();
        a.windows(2).all(|w| w[0] != w[1]) && b.windows(2).all(|w| w[0] != w[1])
    }
}

/// Projected map points presented to a matcher as a virtual feature set.
#[derive(Debug, Clone)]
pub struct PriorFeatures {
    pub positions: Vec<PixelPoint>,
    /// Row-major unit descriptors.
    pub descriptors: Vec<f32>,
    pub dim: usize,
}

impl PriorFeatures {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_feature_set(&self, image_size: (u32, u32)) -> Result<FeatureSet, FrontendError> {
        FeatureSet::new(
            self.positions.clone(),
            vec![1.0; self.positions.len()],
            self.descriptors.clone(),
            self.dim,
            image_size,
        )
    }
}

pub trait FeatureMatcher: Send + Sync {
    fn match_sets(&self, a: &FeatureSet, b: &FeatureSet, min_confidence: f32) -> Result<MatchSet, MatchError>;

    /// Matches projected map points (index side a) against a frame. The
    /// projected coordinates act as the keypoints of the virtual set.
    fn match_with_prior(
        &self,
        projected: &PriorFeatures,
        frame: &FeatureSet,
        min_confidence: f32,
    ) -> Result<MatchSet, MatchError> {
        if projected.is_empty() || frame.is_empty() {
            return Ok(MatchSet::empty());
        }
        let virtual_set = projected.to_feature_set(frame.image_size())?;
        self.match_sets(&virtual_set, frame, min_confidence)
    }

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub ratio: f32,
    pub min_confidence: f32,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            min_confidence: 0.2,
        }
    }
}

/// Mutual nearest neighbour matcher with a two-sided ratio test.
#[derive(Debug, Clone, Copy)]
pub struct MutualNnMatcher {
    pub ratio: f32,
}

impl Default for MutualNnMatcher {
    fn default() -> Self {
        Self { ratio: 0.9 }
    }
}

impl FeatureMatcher for MutualNnMatcher {
    fn match_sets(&self, a: &FeatureSet, b: &FeatureSet, min_confidence: f32) -> Result<MatchSet, MatchError> {
        builtin_mutual_nn(a, b, self.ratio, min_confidence)
    }

    fn name(&self) -> String {
        format!("builtin-mnn(ratio={})", self.ratio)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance between unit vectors with cosine similarity `s`.
fn unit_distance(s: f32) -> f32 {
    (2.0 - 2.0 * s).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Nearest {
    index: usize,
    best: f32,
    second: Option<f32>,
}

impl Nearest {
    fn passes_ratio(&self, ratio: f32) -> bool {
        match self.second {
            None => true,
            Some(second) => {
                let d_best = unit_distance(self.best);
                let d_second = unit_distance(second);
                d_second > 0.0 && d_best <= ratio * d_second
            }
        }
    }
}

/// Best and runner-up similarity per row; ties keep the lowest index.
fn nearest_per_row<'a>(rows: usize, sims: impl Fn(usize, usize) -> f32 + 'a, cols: usize) -> Vec<Option<Nearest>> {
    (0..rows)
        .map(|i| {
            let mut out: Option<Nearest> = None;
            for j in 0..cols {
                let s = sims(i, j);
                out = Some(match out {
                    None => Nearest {
                        index: j,
                        best: s,
                        second: None,
                    },
                    Some(n) if s > n.best => Nearest {
                        index: j,
                        best: s,
                        second: Some(n.best),
                    },
                    Some(n) => Nearest {
                        second: Some(n.second.map_or(s, |x| x.max(s))),
                        ..n
                    },
                });
            }
            out
        })
        .collect()
}

/// Keeps `(i, j)` when each is the other's most similar descriptor (cosine),
/// both directions pass the distance ratio test, and the similarity reaches
/// `min_similarity`. Confidence is the similarity.
pub fn builtin_mutual_nn(
    a: &FeatureSet,
    b: &FeatureSet,
    ratio: f32,
    min_similarity: f32,
) -> Result<MatchSet, MatchError> {
    if a.is_empty() || b.is_empty() {
        return Ok(MatchSet::empty());
    }
    if a.descriptor_dim() != b.descriptor_dim() {
        return Err(MatchError::DimensionMismatch(a.descriptor_dim(), b.descriptor_dim()));
    }
    let (na, nb) = (a.len(), b.len());
    let mut sim = vec![0f32; na * nb];
    for i in 0..na {
        let da = a.descriptor(i);
        for j in 0..nb {
            sim[i * nb + j] = dot(da, b.descriptor(j));
        }
    }
    let forward = nearest_per_row(na, |i, j| sim[i * nb + j], nb);
    let backward = nearest_per_row(nb, |j, i| sim[i * nb + j], na);

    let mut candidates = Vec::new();
    for (i, f) in forward.iter().enumerate() {
        let Some(f) = f else { continue };
        let Some(back) = backward[f.index] else { continue };
        if back.index != i || f.best < min_similarity {
            continue;
        }
        if f.passes_ratio(ratio) && back.passes_ratio(ratio) {
            candidates.push((i, f.index, f.best));
        }
    }
    Ok(MatchSet::from_candidates(candidates, na, nb, f32::NEG_INFINITY))
}

/// Projection-guided matching: each prior is matched to the most similar
/// frame keypoint within `window_px` of its predicted position.
pub fn guided_window_match(
    projected: &PriorFeatures,
    frame: &FeatureSet,
    window_px: f64,
    min_similarity: f32,
) -> MatchSet {
    let mut candidates = Vec::new();
    for (i, pos) in projected.positions.iter().enumerate() {
        let desc = &projected.descriptors[i * projected.dim..(i + 1) * projected.dim];
        let mut best: Option<(usize, f32)> = None;
        for (j, kp) in frame.keypoints().iter().enumerate() {
            if (kp.u - pos.u).abs() > window_px || (kp.v - pos.v).abs() > window_px {
                continue;
            }
            let s = dot(desc, frame.descriptor(j));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        if let Some((j, s)) = best {
            candidates.push((i, j, s));
        }
    }
    MatchSet::from_candidates(candidates, projected.len(), frame.len(), min_similarity)
}
