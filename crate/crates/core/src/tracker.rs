//! Frame-by-frame tracking state machine.
//!
//! `selm` mode associates the current frame with the previous one by direct
//! descriptor matching over the full feature sets. `baseline` mode predicts
//! the pose with a constant-velocity model and searches a window around the
//! projections of the previous frame's map points. Both feed the same PnP
//! solver, the same local-map refinement and the same keyframe policy.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, SequenceFrame};
use crate::frontend::{FeatureExtractor, FrontendError};
use crate::geometry::{Intrinsics, Pose};
use crate::matcher::{guided_window_match, FeatureMatcher, MatchError, MatchSet, PriorFeatures};
use crate::posesolver::{
    optimize_pose, solve_pnp_ransac, Correspondence3D2D, OptimizerConfig, PoseSolution, RansacConfig,
};
use crate::worldmap::{tracked_ratio, visible_map_points, Frame, KeyFrame, MapPointId, WorldMap, Z_MAX, Z_MIN};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("only {found} keypoints with valid depth, {required} required")]
    InsufficientDepthFeatures { found: usize, required: usize },
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
    #[error("tracking lost: {0}")]
    TrackingLost(String),
    #[error("empty input sequence")]
    EmptySequence,
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerMode {
    Selm,
    Baseline,
}

impl fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackerMode::Selm => "selm",
            TrackerMode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    pub keyframe_min_interval: usize,
    pub keyframe_max_interval: usize,
    pub tracked_ratio_threshold: f64,
    pub min_matches_frame: usize,
    pub min_inliers_pose: usize,
    pub lost_patience: usize,
    /// Search window of the baseline projection matcher, pixels.
    pub guided_window_px: f64,
    pub min_match_confidence: f32,
    pub seed: u64,
    pub ransac: RansacConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: TrackerMode::Selm,
            keyframe_min_interval: 0,
            keyframe_max_interval: 30,
            tracked_ratio_threshold: 0.9,
            min_matches_frame: 50,
            min_inliers_pose: 30,
            lost_patience: 5,
            guided_window_px: 15.0,
            min_match_confidence: 0.2,
            seed: 0,
            ransac: RansacConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tracked_ratio_threshold > 0.0 && self.tracked_ratio_threshold <= 1.0) {
            return Err(format!(
                "tracked_ratio_threshold must lie in (0, 1], got {}",
                self.tracked_ratio_threshold
            ));
        }
        if self.keyframe_min_interval > self.keyframe_max_interval {
            return Err(format!(
                "keyframe_min_interval {} exceeds keyframe_max_interval {}",
                self.keyframe_min_interval, self.keyframe_max_interval
            ));
        }
        if self.lost_patience == 0 {
            return Err("lost_patience must be at least 1".into());
        }
        if !(self.guided_window_px > 0.0) {
            return Err("guided_window_px must be positive".into());
        }
        if !(self.ransac.inlier_threshold_px > 0.0 && self.optimizer.huber_delta_px > 0.0) {
            return Err("pixel thresholds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Initialized,
    Ok,
    Lost,
}

impl fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackStatus::Initialized => "initialized",
            TrackStatus::Ok => "ok",
            TrackStatus::Lost => "lost",
        })
    }
}

/// Per-frame telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub frame_id: usize,
    pub timestamp: f64,
    pub status: TrackStatus,
    pub pose: Option<Pose>,
    pub matches_prev: usize,
    pub matches_local_map: usize,
    pub keyframe_inserted: bool,
    /// Ratio against the reference keyframe used by the keyframe policy.
    pub tracked_ratio: Option<f64>,
    /// Frames since the last keyframe, counting this one.
    pub frames_since_keyframe: usize,
    pub relocalized: bool,
}

impl TrackResult {
    /// One `key=value` record per frame.
    pub fn to_line(&self) -> String {
        format!(
            "frame={} ts={:.6} status={} matches_prev={} matches_local_map={} keyframe={} tracked_ratio={} frames_since_keyframe={} relocalized={}",
            self.frame_id,
            self.timestamp,
            self.status,
            self.matches_prev,
            self.matches_local_map,
            u8::from(self.keyframe_inserted),
            self.tracked_ratio.map_or_else(|| "na".to_string(), |r| format!("{r:.6}")),
            self.frames_since_keyframe,
            u8::from(self.relocalized),
        )
    }
}

/// Applies the last inter-frame motion once more: `prev ∘ (prev_prev⁻¹ ∘ prev)`.
pub fn predict_pose_constant_velocity(prev: &Pose, prev_prev: &Pose) -> Pose {
    prev.compose(&prev_prev.inverse().compose(prev))
}

/// Extracts features and looks up metric depth at every keypoint.
pub fn build_frame(seq: &SequenceFrame, extractor: &dyn FeatureExtractor) -> Result<Frame, TrackerError> {
    let features = extractor.extract_frame(seq)?;
    let depth = features
        .keypoints()
        .iter()
        .map(|p| {
            let d = seq.depth.sample_nearest(p.u, p.v);
            if d.is_finite() && d > Z_MIN && d < Z_MAX {
                d
            } else {
                0.0
            }
        })
        .collect();
    Ok(Frame::new(seq.index, seq.timestamp, features, depth))
}

/// Places the first frame at the identity, promotes it to keyframe and
/// backprojects its depth-valid keypoints.
pub fn initialize(mut frame: Frame, k: &Intrinsics, cfg: &TrackerConfig) -> Result<WorldMap, TrackerError> {
    let found = frame.valid_depth_count();
    if found < cfg.min_matches_frame.max(1) {
        return Err(TrackerError::InsufficientDepthFeatures {
            found,
            required: cfg.min_matches_frame,
        });
    }
    frame.clear_associations();
    frame.pose = Some(Pose::identity());
    let mut map = WorldMap::new();
    let id = map
        .insert_keyframe(frame)
        .map_err(|e| TrackerError::InitializationFailed(e.to_string()))?;
    map.create_map_points(id, k)
        .map_err(|e| TrackerError::InitializationFailed(e.to_string()))?;
    Ok(map)
}

/// A frame-to-frame tracking result: the solved pose and how many
/// map-backed matches fed the solver.
#[derive(Debug, Clone)]
pub struct FrameTrack {
    pub solution: PoseSolution,
    pub matches: usize,
}

fn frame_seed(cfg: &TrackerConfig, frame_id: usize, attempt: u64) -> u64 {
    cfg.seed
        ^ (frame_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ attempt.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Turns `(prev index, cur index)` matches into 3D–2D correspondences through
/// the previous frame's map associations, solves the pose and hands the
/// associations of the inliers to `cur`.
fn solve_from_matches(
    prev: &Frame,
    cur: &mut Frame,
    matches: &MatchSet,
    map: &WorldMap,
    k: &Intrinsics,
    cfg: &TrackerConfig,
    attempt: u64,
) -> Result<FrameTrack, TrackerError> {
    let mut corrs = Vec::new();
    let mut targets: Vec<(usize, MapPointId)> = Vec::new();
    for &(i, j) in matches.pairs() {
        let Some(mp_id) = prev.matches_to_map.get(i).copied().flatten() else {
            continue;
        };
        let Some(mp) = map.map_point(mp_id) else { continue };
        corrs.push(Correspondence3D2D {
            world_point: mp.position,
            pixel: cur.features.keypoints()[j],
        });
        targets.push((j, mp_id));
    }
    if corrs.len() < cfg.min_matches_frame {
        return Err(TrackerError::TrackingLost(format!(
            "{} map-backed matches, {} required",
            corrs.len(),
            cfg.min_matches_frame
        )));
    }
    let ransac = RansacConfig {
        seed: frame_seed(cfg, cur.id, attempt),
        ..cfg.ransac
    };
    let solution =
        solve_pnp_ransac(&corrs, k, &ransac, &cfg.optimizer).map_err(|e| TrackerError::TrackingLost(e.to_string()))?;
    cur.clear_associations();
    for (&(j, mp_id), &inlier) in targets.iter().zip(&solution.inlier_flags) {
        if inlier {
            cur.matches_to_map[j] = Some(mp_id);
        }
    }
    cur.pose = Some(solution.pose);
    Ok(FrameTrack {
        matches: corrs.len(),
        solution,
    })
}

/// Direct matching of the full previous and current feature sets, no
/// projection window.
pub fn track_previous_frame(
    prev: &Frame,
    cur: &mut Frame,
    map: &WorldMap,
    k: &Intrinsics,
    cfg: &TrackerConfig,
    matcher: &dyn FeatureMatcher,
) -> Result<FrameTrack, TrackerError> {
    if cur.features.is_empty() {
        return Err(TrackerError::TrackingLost("current frame has no features".into()));
    }
    let matches = matcher.match_sets(&prev.features, &cur.features, cfg.min_match_confidence)?;
    solve_from_matches(prev, cur, &matches, map, k, cfg, 0)
}

/// Constant-velocity comparator: the previous frame's map points are
/// projected with `predicted` and matched inside a square window.
pub fn track_with_motion_model(
    prev: &Frame,
    cur: &mut Frame,
    map: &WorldMap,
    predicted: &Pose,
    k: &Intrinsics,
    cfg: &TrackerConfig,
) -> Result<FrameTrack, TrackerError> {
    if cur.features.is_empty() {
        return Err(TrackerError::TrackingLost("current frame has no features".into()));
    }
    let cam_from_world = predicted.inverse();
    let mut prior = PriorFeatures {
        positions: Vec::new(),
        descriptors: Vec::new(),
        dim: cur.features.descriptor_dim(),
    };
    let mut prev_index = Vec::new();
    for (i, mp_id) in prev.matches_to_map.iter().enumerate() {
        let Some(mp) = mp_id.and_then(|id| map.map_point(id)) else {
            continue;
        };
        let pc = cam_from_world.transform_point(&mp.position);
        if !(pc.z > Z_MIN && pc.z < Z_MAX) {
            continue;
        }
        let Ok(px) = crate::geometry::project(&pc, k) else {
            continue;
        };
        if !k.contains(&px) {
            continue;
        }
        prior.positions.push(px);
        prior.descriptors.extend_from_slice(prev.features.descriptor(i));
        prev_index.push(i);
    }
    if prior.dim != prev.features.descriptor_dim() {
        return Err(MatchError::DimensionMismatch(prev.features.descriptor_dim(), prior.dim).into());
    }
    let windowed = guided_window_match(&prior, &cur.features, cfg.guided_window_px, cfg.min_match_confidence);
    let candidates = windowed.iter().map(|(p, j, c)| (prev_index[p], j, c)).collect();
    let matches = MatchSet::from_candidates(candidates, prev.features.len(), cur.features.len(), f32::NEG_INFINITY);
    solve_from_matches(prev, cur, &matches, map, k, cfg, 0)
}

/// Local-map refinement outcome.
#[derive(Debug, Clone)]
pub struct LocalMapTrack {
    pub solution: PoseSolution,
    /// Inlier map associations of the frame after refinement.
    pub matches: usize,
    pub new_matches: usize,
}

/// Matches visible, not yet associated map points into `cur` (projected
/// coordinates act as the virtual keypoints), then refines the pose over the
/// union of old and new associations. Outlier associations are dropped.
pub fn track_local_map(
    map: &WorldMap,
    cur: &mut Frame,
    pose_estimate: &Pose,
    k: &Intrinsics,
    cfg: &TrackerConfig,
    matcher: &dyn FeatureMatcher,
) -> Result<LocalMapTrack, TrackerError> {
    let associated: std::collections::HashSet<MapPointId> = cur.matches_to_map.iter().flatten().copied().collect();
    let visible: Vec<_> = visible_map_points(map, pose_estimate, k)
        .into_iter()
        .filter(|(mp, _)| !associated.contains(&mp.id))
        .collect();

    let mut new_matches = 0;
    if !visible.is_empty() && !cur.features.is_empty() {
        let prior = PriorFeatures {
            positions: visible.iter().map(|(_, px)| *px).collect(),
            descriptors: visible
                .iter()
                .flat_map(|(mp, _)| mp.descriptor.iter().copied())
                .collect(),
            dim: cur.features.descriptor_dim(),
        };
        let matches = matcher.match_with_prior(&prior, &cur.features, cfg.min_match_confidence)?;
        for &(p, j) in matches.pairs() {
            if cur.matches_to_map[j].is_none() {
                cur.matches_to_map[j] = Some(visible[p].0.id);
                new_matches += 1;
            }
        }
    }

    let (slots, corrs): (Vec<usize>, Vec<Correspondence3D2D>) = cur
        .matches_to_map
        .iter()
        .enumerate()
        .filter_map(|(j, id)| {
            let mp = map.map_point((*id)?)?;
            Some((
                j,
                Correspondence3D2D {
                    world_point: mp.position,
                    pixel: cur.features.keypoints()[j],
                },
            ))
        })
        .unzip();

    let solution = if new_matches == 0 {
        // Nothing new to constrain the pose; keep the estimate.
        let cost = crate::posesolver::robust_cost(pose_estimate, &corrs, k, cfg.optimizer.huber_delta_px);
        let flags = corrs
            .iter()
            .map(|c| {
                crate::posesolver::reprojection_residual(pose_estimate, c, k)
                    .is_ok_and(|r| r.norm() <= 2.0 * cfg.optimizer.huber_delta_px)
            })
            .collect::<Vec<_>>();
        let norms: Vec<f64> = corrs
            .iter()
            .zip(&flags)
            .filter(|(_, &f)| f)
            .filter_map(|(c, _)| crate::posesolver::reprojection_residual(pose_estimate, c, k).ok())
            .map(|r| r.norm())
            .collect();
        PoseSolution {
            pose: *pose_estimate,
            mean_reprojection_error: if norms.is_empty() {
                f64::NAN
            } else {
                norms.iter().sum::<f64>() / norms.len() as f64
            },
            inlier_flags: flags,
            cost_trace: vec![cost],
        }
    } else {
        optimize_pose(pose_estimate, &corrs, k, &cfg.optimizer)
            .map_err(|e| TrackerError::TrackingLost(e.to_string()))?
    };

    for (&j, &inlier) in slots.iter().zip(&solution.inlier_flags) {
        if !inlier {
            cur.matches_to_map[j] = None;
        }
    }
    let matches = solution.inlier_count();
    if matches < cfg.min_inliers_pose {
        return Err(TrackerError::TrackingLost(format!(
            "{matches} local-map inliers, {} required",
            cfg.min_inliers_pose
        )));
    }
    cur.pose = Some(solution.pose);
    Ok(LocalMapTrack {
        solution,
        matches,
        new_matches,
    })
}

/// The keyframe rule on precomputed inputs.
pub fn keyframe_decision(frames_since_last: usize, ratio: f64, cfg: &TrackerConfig) -> bool {
    frames_since_last >= cfg.keyframe_max_interval
        || (frames_since_last >= cfg.keyframe_min_interval && ratio < cfg.tracked_ratio_threshold)
}

/// A reference without map points counts as fully lost (ratio 0).
pub fn need_new_keyframe(frames_since_last: usize, cur: &Frame, reference: &KeyFrame, cfg: &TrackerConfig) -> bool {
    keyframe_decision(frames_since_last, tracked_ratio(cur, reference).unwrap_or(0.0), cfg)
}

/// Everything a tracking run produces.
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub trajectory: Vec<(f64, Pose)>,
    pub telemetry: Vec<TrackResult>,
    pub map: WorldMap,
    pub final_status: TrackStatus,
}

pub struct Tracker<'a> {
    cfg: TrackerConfig,
    k: Intrinsics,
    extractor: &'a dyn FeatureExtractor,
    matcher: &'a dyn FeatureMatcher,
    map: Option<WorldMap>,
    last: Option<Frame>,
    prev_poses: Vec<Pose>,
    frames_since_keyframe: usize,
    consecutive_lost: usize,
    trajectory: Vec<(f64, Pose)>,
    telemetry: Vec<TrackResult>,
}

impl<'a> Tracker<'a> {
    pub fn new(
        k: Intrinsics,
        cfg: TrackerConfig,
        extractor: &'a dyn FeatureExtractor,
        matcher: &'a dyn FeatureMatcher,
    ) -> Self {
        Self {
            cfg,
            k,
            extractor,
            matcher,
            map: None,
            last: None,
            prev_poses: Vec::new(),
            frames_since_keyframe: 0,
            consecutive_lost: 0,
            trajectory: Vec::new(),
            telemetry: Vec::new(),
        }
    }

    /// True once `lost_patience` consecutive frames failed.
    pub fn is_lost(&self) -> bool {
        self.consecutive_lost >= self.cfg.lost_patience
    }

    pub fn map(&self) -> Option<&WorldMap> {
        self.map.as_ref()
    }

    fn track(&self, map: &WorldMap, last: &Frame, cur: &mut Frame) -> Result<(FrameTrack, bool), TrackerError> {
        let first = match self.cfg.mode {
            TrackerMode::Selm => track_previous_frame(last, cur, map, &self.k, &self.cfg, self.matcher),
            TrackerMode::Baseline => {
                let prev = self.prev_poses.last().copied().unwrap_or_default();
                let predicted = match self.prev_poses.len() {
                    n if n >= 2 => predict_pose_constant_velocity(&prev, &self.prev_poses[n - 2]),
                    _ => prev,
                };
                track_with_motion_model(last, cur, map, &predicted, &self.k, &self.cfg)
            }
        };
        match first {
            Ok(t) => Ok((t, false)),
            Err(TrackerError::TrackingLost(_)) => {
                let reference = &map.reference_keyframe().expect("initialized map has a reference").frame;
                let matches =
                    self.matcher
                        .match_sets(&reference.features, &cur.features, self.cfg.min_match_confidence)?;
                solve_from_matches(reference, cur, &matches, map, &self.k, &self.cfg, 1).map(|t| (t, true))
            }
            Err(e) => Err(e),
        }
    }

    /// Processes one frame. Tracking loss is reported in the result; only
    /// extraction failures and a failed initialization are errors.
    pub fn process(&mut self, seq: &SequenceFrame) -> Result<TrackResult, TrackerError> {
        let mut cur = build_frame(seq, self.extractor)?;

        let Some(map) = self.map.as_ref() else {
            let map =
                initialize(cur, &self.k, &self.cfg).map_err(|e| TrackerError::InitializationFailed(e.to_string()))?;
            let kf = map.reference_keyframe().expect("initialized map has a reference");
            let result = TrackResult {
                frame_id: seq.index,
                timestamp: seq.timestamp,
                status: TrackStatus::Initialized,
                pose: Some(Pose::identity()),
                matches_prev: 0,
                matches_local_map: kf.frame.associated_count(),
                keyframe_inserted: true,
                tracked_ratio: None,
                frames_since_keyframe: 0,
                relocalized: false,
            };
            self.last = Some(kf.frame.clone());
            self.map = Some(map);
            self.prev_poses = vec![Pose::identity()];
            self.trajectory.push((seq.timestamp, Pose::identity()));
            self.telemetry.push(result.clone());
            return Ok(result);
        };

        self.frames_since_keyframe += 1;
        let last = self.last.as_ref().expect("initialized tracker keeps its last frame");
        let outcome = self.track(map, last, &mut cur).and_then(|(ft, relocalized)| {
            let lm = track_local_map(map, &mut cur, &ft.solution.pose, &self.k, &self.cfg, self.matcher)?;
            Ok((ft, lm, relocalized))
        });

        let (ft, lm, relocalized) = match outcome {
            Ok(v) => v,
            Err(TrackerError::TrackingLost(reason)) => {
                log::debug!("frame {}: {reason}", seq.index);
                self.consecutive_lost += 1;
                self.prev_poses.clear();
                if let Some(p) = self.last.as_ref().and_then(|f| f.pose) {
                    self.prev_poses.push(p);
                }
                let result = TrackResult {
                    frame_id: seq.index,
                    timestamp: seq.timestamp,
                    status: TrackStatus::Lost,
                    pose: None,
                    matches_prev: 0,
                    matches_local_map: 0,
                    keyframe_inserted: false,
                    tracked_ratio: None,
                    frames_since_keyframe: self.frames_since_keyframe,
                    relocalized: false,
                };
                self.telemetry.push(result.clone());
                return Ok(result);
            }
            Err(e) => return Err(e),
        };

        self.consecutive_lost = 0;
        let pose = lm.solution.pose;
        let reference = map.reference_keyframe().expect("initialized map has a reference");
        let ratio = tracked_ratio(&cur, reference).unwrap_or(0.0);
        let insert = keyframe_decision(self.frames_since_keyframe, ratio, &self.cfg);
        let frames_since = self.frames_since_keyframe;

        let map = self.map.as_mut().expect("checked above");
        if insert {
            let id = map
                .insert_keyframe(cur)
                .map_err(|e| TrackerError::TrackingLost(e.to_string()))?;
            map.create_map_points(id, &self.k)
                .map_err(|e| TrackerError::TrackingLost(e.to_string()))?;
            self.last = Some(map.keyframe(id).expect("just inserted").frame.clone());
            self.frames_since_keyframe = 0;
        } else {
            self.last = Some(cur);
        }

        self.prev_poses.push(pose);
        if self.prev_poses.len() > 2 {
            self.prev_poses.remove(0);
        }
        self.trajectory.push((seq.timestamp, pose));
        let result = TrackResult {
            frame_id: seq.index,
            timestamp: seq.timestamp,
            status: TrackStatus::Ok,
            pose: Some(pose),
            matches_prev: ft.matches,
            matches_local_map: lm.matches,
            keyframe_inserted: insert,
            tracked_ratio: Some(ratio),
            frames_since_keyframe: frames_since,
            relocalized,
        };
        self.telemetry.push(result.clone());
        Ok(result)
    }

    pub fn finish(self) -> TrackOutput {
        let final_status = match self.telemetry.last() {
            Some(r) if r.status == TrackStatus::Lost => TrackStatus::Lost,
            Some(r) => r.status,
            None => TrackStatus::Lost,
        };
        TrackOutput {
            trajectory: self.trajectory,
            telemetry: self.telemetry,
            map: self.map.unwrap_or_default(),
            final_status,
        }
    }
}

/// Runs the tracker over a frame stream. Stops early after `lost_patience`
/// consecutive lost frames and returns the partial trajectory.
pub fn track_sequence<I>(
    frames: I,
    k: &Intrinsics,
    cfg: &TrackerConfig,
    extractor: &dyn FeatureExtractor,
    matcher: &dyn FeatureMatcher,
) -> Result<TrackOutput, TrackerError>
where
    I: IntoIterator<Item = Result<SequenceFrame, DatasetError>>,
{
    let mut tracker = Tracker::new(*k, *cfg, extractor, matcher);
    let mut any = false;
    for frame in frames {
        any = true;
        tracker.process(&frame?)?;
        if tracker.is_lost() {
            break;
        }
    }
    if !any {
        return Err(TrackerError::EmptySequence);
    }
    Ok(tracker.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn constant_velocity_closed_forms() {
        let id = Pose::identity();
        assert_eq!(predict_pose_constant_velocity(&id, &id), id);
        let prev = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let p = predict_pose_constant_velocity(&prev, &id);
        assert!((p.translation() - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn keyframe_rule_cases() {
        let cfg = TrackerConfig::default();
        assert!(!keyframe_decision(5, 0.95, &cfg));
        assert!(keyframe_decision(5, 0.85, &cfg));
        assert!(keyframe_decision(30, 1.0, &cfg));
        let strict = TrackerConfig {
            keyframe_min_interval: 10,
            ..cfg
        };
        assert!(!keyframe_decision(5, 0.5, &strict));
        assert!(keyframe_decision(10, 0.5, &strict));
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        let bad = TrackerConfig {
            tracked_ratio_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrackerConfig {
            keyframe_min_interval: 40,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
