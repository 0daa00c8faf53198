//! Sparse map: frames, keyframes and map points.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use nalgebra::Vector3;
use thiserror::Error;

use crate::frontend::FeatureSet;
use crate::geometry::{backproject, project, Intrinsics, PixelPoint, Pose};

/// Camera-frame depth range accepted by field-of-view queries, meters.
pub const Z_MIN: f64 = 0.05;
pub const Z_MAX: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("reference keyframe holds no map points")]
    EmptyReference,
    #[error("keyframe {0} has no pose")]
    MissingPose(u64),
    #[error("unknown keyframe {0}")]
    UnknownKeyFrame(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapPointId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyFrameId(pub u64);

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: usize,
    pub timestamp: f64,
    pub features: FeatureSet,
    /// Metric depth per keypoint, 0 when invalid.
    pub depth_at_keypoints: Vec<f64>,
    /// World-from-camera pose once tracked.
    pub pose: Option<Pose>,
    pub matches_to_map: Vec<Option<MapPointId>>,
}

impl Frame {
    pub fn new(id: usize, timestamp: f64, features: FeatureSet, depth_at_keypoints: Vec<f64>) -> Self {
        assert_eq!(features.len(), depth_at_keypoints.len(), "one depth value per keypoint");
        let n = features.len();
        Self {
            id,
            timestamp,
            features,
            depth_at_keypoints,
            pose: None,
            matches_to_map: vec![None; n],
        }
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth_at_keypoints.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn associated_count(&self) -> usize {
        self.matches_to_map.iter().flatten().count()
    }

    pub fn clear_associations(&mut self) {
        self.matches_to_map.iter_mut().for_each(|m| *m = None);
    }
}

#[derive(Debug, Clone)]
pub struct KeyFrame {
    pub id: KeyFrameId,
    pub frame: Frame,
}

impl KeyFrame {
    pub fn pose(&self) -> Pose {
        self.frame.pose.expect("keyframes always carry a pose")
    }

    pub fn map_point_ids(&self) -> impl Iterator<Item = MapPointId> + '_ {
        self.frame.matches_to_map.iter().flatten().copied()
    }
}

#[derive(Debug, Clone)]
pub struct MapPoint {
    pub id: MapPointId,
    pub position: Vector3<f64>,
    /// Descriptor of the creating observation.
    pub descriptor: Vec<f32>,
    /// Creating keyframe and keypoint index.
    pub origin: (KeyFrameId, usize),
    pub observation_count: u32,
}

#[derive(Debug, Clone, Default)]
pub struct WorldMap {
    keyframes: BTreeMap<KeyFrameId, KeyFrame>,
    map_points: BTreeMap<MapPointId, MapPoint>,
    reference: Option<KeyFrameId>,
    next_point: u64,
    next_keyframe: u64,
}

impl WorldMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Promotes a tracked frame to a keyframe and makes it the reference.
    pub fn insert_keyframe(&mut self, frame: Frame) -> Result<KeyFrameId, MapError> {
        let id = KeyFrameId(self.next_keyframe);
        if frame.pose.is_none() {
            return Err(MapError::MissingPose(id.0));
        }
        self.next_keyframe += 1;
        for mp in frame.matches_to_map.iter().flatten() {
            if let Some(p) = self.map_points.get_mut(mp) {
                p.observation_count += 1;
            }
        }
        self.keyframes.insert(id, KeyFrame { id, frame });
        self.reference = Some(id);
        Ok(id)
    }

    /// Backprojects every depth-valid, unassociated keypoint of a keyframe into
    /// a new map point. A second call on the same keyframe creates nothing.
    pub fn create_map_points(&mut self, kf_id: KeyFrameId, k: &Intrinsics) -> Result<usize, MapError> {
        let kf = self
            .keyframes
            .get_mut(&kf_id)
            .ok_or(MapError::UnknownKeyFrame(kf_id.0))?;
        let pose = kf.frame.pose.ok_or(MapError::MissingPose(kf_id.0))?;
        let mut created = 0;
        for i in 0..kf.frame.features.len() {
            let depth = kf.frame.depth_at_keypoints[i];
            if kf.frame.matches_to_map[i].is_some() || !(depth > 0.0) {
                continue;
            }
            let Ok(p_cam) = backproject(&kf.frame.features.keypoints()[i], depth, k) else {
                continue;
            };
            let position = pose.transform_point(&p_cam);
            if !position.iter().all(|v| v.is_finite()) {
                continue;
            }
            let id = MapPointId(self.next_point);
            self.next_point += 1;
            self.map_points.insert(
                id,
                MapPoint {
                    id,
                    position,
                    descriptor: kf.frame.features.descriptor(i).to_vec(),
                    origin: (kf_id, i),
                    observation_count: 1,
                },
            );
            kf.frame.matches_to_map[i] = Some(id);
            created += 1;
        }
        Ok(created)
    }

    pub fn keyframe(&self, id: KeyFrameId) -> Option<&KeyFrame> {
        self.keyframes.get(&id)
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &KeyFrame> {
        self.keyframes.values()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn reference_keyframe(&self) -> Option<&KeyFrame> {
        self.reference.and_then(|id| self.keyframes.get(&id))
    }

    pub fn map_point(&self, id: MapPointId) -> Option<&MapPoint> {
        self.map_points.get(&id)
    }

    pub fn map_points(&self) -> impl Iterator<Item = &MapPoint> {
        self.map_points.values()
    }

    pub fn map_point_count(&self) -> usize {
        self.map_points.len()
    }

    /// Writes `id x y z` per map point.
    pub fn export_points<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for p in self.map_points.values() {
            writeln!(
                out,
                "{} {:.9} {:.9} {:.9}",
                p.id.0, p.position.x, p.position.y, p.position.z
            )?;
        }
        Ok(())
    }
}

/// Map points inside the camera frustum for `pose` (world-from-camera),
/// with their projections, in id order.
pub fn visible_map_points<'m>(map: &'m WorldMap, pose: &Pose, k: &Intrinsics) -> Vec<(&'m MapPoint, PixelPoint)> {
    let cam_from_world = pose.inverse();
    map.map_points()
        .filter_map(|mp| {
            let pc = cam_from_world.transform_point(&mp.position);
            if !(pc.z > Z_MIN && pc.z < Z_MAX) {
                return None;
            }
            let px = project(&pc, k).ok()?;
            k.contains(&px).then_some((mp, px))
        })
        .collect()
}

/// Fraction of the reference keyframe's map points that `frame` re-observes.
pub fn tracked_ratio(frame: &Frame, reference: &KeyFrame) -> Result<f64, MapError> {
    let ref_points: HashSet<MapPointId> = reference.map_point_ids().collect();
    if ref_points.is_empty() {
        return Err(MapError::EmptyReference);
    }
    let seen: HashSet<MapPointId> = frame
        .matches_to_map
        .iter()
        .flatten()
        .filter(|id| ref_points.contains(id))
        .copied()
        .collect();
    Ok(seen.len() as f64 / ref_points.len() as f64)
}
