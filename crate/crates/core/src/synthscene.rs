//! Seeded synthetic RGB-D scenes with exact ground truth.
//!
//! Landmarks carry unique random unit descriptors. A frame observes every
//! landmark inside the frustum; observations can be perturbed by pixel and
//! depth noise or replaced by outliers (random pixel, same descriptor, no
//! depth). The same observations drive the injected [`SyntheticExtractor`]
//! and the rendered images, where each landmark is painted as a small
//! X-junction patch so the builtin detector also fires on them.

use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{save_tum_trajectory, write_depth_png, DatasetError, DepthMap, SequenceFrame};
use crate::frontend::{FeatureExtractor, FeatureSet, FrontendError, DESCRIPTOR_DIM};
use crate::geometry::{project, Intrinsics, PixelPoint, Pose};
use crate::worldmap::{Z_MAX, Z_MIN};

/// Half size of the painted landmark patch, pixels.
pub const PATCH_RADIUS: i64 = 4;
const BACKGROUND: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    pub outlier_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub descriptor: Vec<f32>,
    /// Patch intensities (bright, dark).
    pub shade: (u8, u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub landmarks: Vec<Landmark>,
    /// World-from-camera ground truth per frame.
    pub trajectory: Vec<Pose>,
    pub timestamps: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub noise: NoiseModel,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub landmark: usize,
    pub pixel: PixelPoint,
    /// Measured depth, 0 for outliers.
    pub depth: f64,
    pub outlier: bool,
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: SequenceFrame,
    pub features: FeatureSet,
    /// Landmark index per keypoint.
    pub association: Vec<usize>,
    pub observations: Vec<Observation>,
}

pub fn random_unit_descriptor<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// World-from-camera pose at `center` looking at `target`, with the camera
/// y axis (image down) aligned to world +y as far as possible.
pub fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let z = (target - center).normalize();
    let mut down = Vector3::y();
    if z.cross(&down).norm() < 1e-6 {
        down = Vector3::x();
    }
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    Pose::from_rotation_matrix(&Matrix3::from_columns(&[x, y, z]), center)
}

impl SyntheticScene {
    pub fn new(
        positions: &[Vector3<f64>],
        trajectory: Vec<Pose>,
        intrinsics: Intrinsics,
        noise: NoiseModel,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let landmarks = positions
            .iter()
            .map(|&position| Landmark {
                position,
                descriptor: random_unit_descriptor(&mut rng, DESCRIPTOR_DIM),
                shade: (rng.random_range(170..=255), rng.random_range(0..=80)),
            })
            .collect();
        let timestamps = (0..trajectory.len()).map(|i| i as f64 / 30.0).collect();
        Self {
            landmarks,
            trajectory,
            timestamps,
            intrinsics,
            noise,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn ground_truth(&self) -> Vec<(f64, Pose)> {
        self.timestamps
            .iter()
            .copied()
            .zip(self.trajectory.iter().copied())
            .collect()
    }

    /// Landmarks in front of the camera whose patch lies fully inside the
    /// image, with exact projections and depths.
    pub fn visible(&self, frame_index: usize) -> Vec<(usize, PixelPoint, f64)> {
        let k = &self.intrinsics;
        let cw = self.trajectory[frame_index].inverse();
        let margin = PATCH_RADIUS as f64 + 1.0;
        self.landmarks
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let pc = cw.transform_point(&l.position);
                if !(pc.z > Z_MIN && pc.z < Z_MAX) {
                    return None;
                }
                let px = project(&pc, k).ok()?;
                let inside = px.u >= margin
                    && px.v >= margin
                    && px.u <= k.width as f64 - 1.0 - margin
                    && px.v <= k.height as f64 - 1.0 - margin;
                inside.then_some((i, px, pc.z))
            })
            .collect()
    }

    pub fn min_visible(&self) -> usize {
        (0..self.len()).map(|i| self.visible(i).len()).min().unwrap_or(0)
    }

    fn frame_rng(&self, frame_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index as u64 + 1);
        rng
    }

    /// Seeded observations for one frame, ordered by landmark index. Where
    /// a patch covers the centre of another observation, the one behind is
    /// dropped.
    pub fn observe(&self, frame_index: usize) -> Vec<Observation> {
        let k = &self.intrinsics;
        let mut rng = self.frame_rng(frame_index);
        let pixel_noise = Normal::new(0.0, self.noise.pixel_sigma.max(0.0)).expect("finite sigma");
        let depth_noise = Normal::new(0.0, self.noise.depth_sigma.max(0.0)).expect("finite sigma");
        let margin = PATCH_RADIUS as f64 + 1.0;
        let mut obs: Vec<Observation> = self
            .visible(frame_index)
            .into_iter()
            .map(|(landmark, px, z)| {
                let outlier = self.noise.outlier_rate > 0.0 && rng.random::<f64>() < self.noise.outlier_rate;
                let (du, dv) = (pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
                let dz = depth_noise.sample(&mut rng);
                let (ru, rv) = (rng.random::<f64>(), rng.random::<f64>());
                if outlier {
                    let pixel = PixelPoint::new(
                        margin + ru * (k.width as f64 - 1.0 - 2.0 * margin),
                        margin + rv * (k.height as f64 - 1.0 - 2.0 * margin),
                    );
                    Observation {
                        landmark,
                        pixel,
                        depth: 0.0,
                        outlier,
                    }
                } else {
                    let u = (px.u + du).clamp(margin, k.width as f64 - 1.0 - margin);
                    let v = (px.v + dv).clamp(margin, k.height as f64 - 1.0 - margin);
                    Observation {
                        landmark,
                        pixel: PixelPoint::new(u, v),
                        depth: (z + dz).max(Z_MIN),
                        outlier,
                    }
                }
            })
            .collect();

        // An observation hidden under the patch of a front one is dropped.
        let mut kept: Vec<(i64, i64)> = Vec::new();
        let mut keep = vec![false; obs.len()];
        for i in front_to_back(&obs) {
            let c = (obs[i].pixel.u.round() as i64, obs[i].pixel.v.round() as i64);
            let hidden = kept
                .iter()
                .any(|k| (k.0 - c.0).abs() <= PATCH_RADIUS && (k.1 - c.1).abs() <= PATCH_RADIUS);
            if !hidden {
                kept.push(c);
                keep[i] = true;
            }
        }
        let mut idx = 0;
        obs.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
        obs
    }

    pub fn features(&self, frame_index: usize) -> (FeatureSet, Vec<usize>, Vec<Observation>) {
        let k = &self.intrinsics;
        let obs = self.observe(frame_index);
        let mut descriptors = Vec::with_capacity(obs.len() * DESCRIPTOR_DIM);
        for o in &obs {
            descriptors.extend_from_slice(&self.landmarks[o.landmark].descriptor);
        }
        let features = FeatureSet::new(
            obs.iter().map(|o| o.pixel).collect(),
            vec![1.0; obs.len()],
            descriptors,
            DESCRIPTOR_DIM,
            (k.width, k.height),
        )
        .expect("synthetic features satisfy the feature set contract");
        let association = obs.iter().map(|o| o.landmark).collect();
        (features, association, obs)
    }

    /// Paints observations far to near. Each landmark becomes a
    /// `2·PATCH_RADIUS+1` square X-junction; depth fills the same footprint.
    fn paint(&self, obs: &[Observation]) -> (RgbImage, DepthMap) {
        let k = &self.intrinsics;
        let mut rgb = RgbImage::from_pixel(k.width, k.height, Rgb([BACKGROUND; 3]));
        let mut depth = DepthMap::new(k.width, k.height);
        for o in front_to_back(obs).into_iter().rev().map(|i| &obs[i]) {
            let (hi, lo) = self.landmarks[o.landmark].shade;
            let cu = o.pixel.u.round() as i64;
            let cv = o.pixel.v.round() as i64;
            for dv in -PATCH_RADIUS..=PATCH_RADIUS {
                for du in -PATCH_RADIUS..=PATCH_RADIUS {
                    let (x, y) = (cu + du, cv + dv);
                    if x < 0 || y < 0 || x >= k.width as i64 || y >= k.height as i64 {
                        continue;
                    }
                    let bright = (du < 0) == (dv < 0);
                    let g = if bright { hi } else { lo };
                    rgb.put_pixel(x as u32, y as u32, Rgb([g; 3]));
                    if o.depth > 0.0 {
                        depth.set(x as u32, y as u32, o.depth as f32);
                    }
                }
            }
        }
        (rgb, depth)
    }

    pub fn render_frame(&self, frame_index: usize) -> RenderedFrame {
        let (features, association, observations) = self.features(frame_index);
        let (rgb, depth) = self.paint(&observations);
        RenderedFrame {
            frame: SequenceFrame {
                index: frame_index,
                timestamp: self.timestamps[frame_index],
                rgb,
                depth,
                ground_truth: Some(self.trajectory[frame_index]),
            },
            features,
            association,
            observations,
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = SequenceFrame> + '_ {
        (0..self.len()).map(|i| self.render_frame(i).frame)
    }

    /// Writes the scene as a TUM-layout directory (`rgb/`, `depth/`, index
    /// files and `groundtruth.txt`).
    pub fn export_tum(&self, out: &Path) -> Result<(), DatasetError> {
        let io = |context: String| move |source| DatasetError::Io { context, source };
        std::fs::create_dir_all(out.join("rgb")).map_err(io(out.display().to_string()))?;
        std::fs::create_dir_all(out.join("depth")).map_err(io(out.display().to_string()))?;
        let mut rgb_index = String::from("# timestamp filename\n");
        let mut depth_index = String::from("# timestamp filename\n");
        for i in 0..self.len() {
            let r = self.render_frame(i);
            let ts = self.timestamps[i];
            let rgb_path = out.join(format!("rgb/{i:06}.png"));
            r.frame
                .rgb
                .save(&rgb_path)
                .map_err(|e| DatasetError::ImageDecodeError {
                    path: rgb_path.clone(),
                    detail: e.to_string(),
                })?;
            write_depth_png(
                &out.join(format!("depth/{i:06}.png")),
                &r.frame.depth,
                self.intrinsics.depth_factor,
            )?;
            rgb_index.push_str(&format!("{ts:.6} rgb/{i:06}.png\n"));
            depth_index.push_str(&format!("{ts:.6} depth/{i:06}.png\n"));
        }
        std::fs::write(out.join("rgb.txt"), rgb_index).map_err(io("rgb.txt".into()))?;
        std::fs::write(out.join("depth.txt"), depth_index).map_err(io("depth.txt".into()))?;
        save_tum_trajectory(&out.join("groundtruth.txt"), &self.ground_truth())
    }
}

/// Paint priority: outliers on top, then inliers by increasing depth.
fn front_to_back(obs: &[Observation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let key = |o: &Observation| if o.outlier { f64::NEG_INFINITY } else { o.depth };
    order.sort_by(|&a, &b| {
        key(&obs[a])
            .total_cmp(&key(&obs[b]))
            .then(obs[a].landmark.cmp(&obs[b].landmark))
    });
    order
}

/// Camera circling a ball of landmarks (radius `0.4 · radius`) at distance
/// `radius`, always facing its centre. Pose `i` sits at angle `2π·i/frames`.
/// Coordinates are expressed in the first camera frame, so pose 0 is the
/// identity and the ball centre lies at `(0, 0, radius)`.
pub fn make_orbit_scene(radius: f64, frames: usize, landmark_count: usize, seed: u64) -> SyntheticScene {
    assert!(
        radius > 0.0 && frames >= 2,
        "orbit needs radius > 0 and at least 2 frames"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b17);
    let ball = 0.4 * radius;
    let positions: Vec<Vector3<f64>> = (0..landmark_count)
        .map(|_| loop {
            let p = Vector3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            if p.norm_squared() <= 1.0 {
                break p * ball;
            }
        })
        .collect();
    let orbit: Vec<Pose> = (0..frames)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / frames as f64;
            let c = Vector3::new(radius * theta.sin(), 0.0, -radius * theta.cos());
            look_at(c, Vector3::zeros())
        })
        .collect();
    let first_inv = orbit[0].inverse();
    let positions: Vec<Vector3<f64>> = positions.iter().map(|p| first_inv.transform_point(p)).collect();
    let trajectory = orbit.iter().map(|p| first_inv.compose(p)).collect();
    SyntheticScene::new(
        &positions,
        trajectory,
        Intrinsics::tum_freiburg1(),
        NoiseModel::default(),
        seed,
    )
}

/// Extractor replaying a scene's observations, keyed by frame index.
#[derive(Debug, Clone)]
pub struct SyntheticExtractor {
    scene: Arc<SyntheticScene>,
}

impl SyntheticExtractor {
    pub fn new(scene: Arc<SyntheticScene>) -> Self {
        Self { scene }
    }
}

impl FeatureExtractor for SyntheticExtractor {
    fn extract(&self, _image: &GrayImage) -> Result<FeatureSet, FrontendError> {
        Err(FrontendError::InvalidFeatureSet(
            "synthetic extractor needs the frame index".into(),
        ))
    }

    fn extract_frame(&self, frame: &SequenceFrame) -> Result<FeatureSet, FrontendError> {
        if frame.index >= self.scene.len() {
            return Err(FrontendError::EmptyImage);
        }
        Ok(self.scene.features(frame.index).0)
    }

    fn name(&self) -> String {
        format!("synthetic(seed={})", self.scene.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose_projects_to_principal_point() {
        let k = Intrinsics::tum_freiburg1();
        let s = SyntheticScene::new(
            &[Vector3::new(0.0, 0.0, 2.0)],
            vec![Pose::identity()],
            k,
            NoiseModel::default(),
            1,
        );
        let r = s.render_frame(0);
        assert_eq!(r.features.len(), 1);
        let p = r.features.keypoints()[0];
        assert!((p.u - k.cx).abs() < 1e-12 && (p.v - k.cy).abs() < 1e-12);
        assert!((r.frame.depth.sample_nearest(p.u, p.v) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn orbit_of_four_frames() {
        let s = make_orbit_scene(1.0, 4, 10, 3);
        assert_eq!(s.trajectory[0], Pose::identity());
        let centre = Vector3::new(0.0, 0.0, 1.0);
        for i in 0..4 {
            let a = s.trajectory[i].translation();
            let b = s.trajectory[(i + 1) % 4].translation();
            assert!(((a - b).norm() - 2f64.sqrt()).abs() < 1e-12);
            let fwd = s.trajectory[i].rotation_matrix().column(2).into_owned();
            assert!(
                (fwd - (centre - a).normalize()).norm() < 1e-12,
                "camera faces the centre"
            );
        }
        assert!(s.landmarks.iter().all(|l| (l.position - centre).norm() <= 0.4 + 1e-12));
        assert_eq!(s, make_orbit_scene(1.0, 4, 10, 3));
    }

    #[test]
    fn association_is_one_to_one_and_descriptors_unit() {
        let s = make_orbit_scene(3.0, 5, 200, 9).with_noise(NoiseModel {
            pixel_sigma: 0.5,
            depth_sigma: 0.0,
            outlier_rate: 0.1,
        });
        let r = s.render_frame(2);
        let mut seen = r.association.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), r.association.len());
        assert!(r.features.validate().is_ok());
        assert!(r.observations.iter().any(|o| o.outlier));
        assert_eq!(s.render_frame(2).features, r.features);
    }
}
