//! Rigid transforms, the pinhole camera model and the TartanAir NED frame
//! conversion.
//!
//! Poses are stored as a unit quaternion plus a translation. A pose applied to
//! a point maps it from the pose's local frame into its parent frame, so a
//! camera pose `T_wc` maps camera coordinates into world coordinates.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid body transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from quaternion components in `(w, x, y, z)` order.
    /// The quaternion is normalized; a zero quaternion yields `None`.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Option<Self> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return None;
        }
        Some(Self::new(UnitQuaternion::from_quaternion(q), translation))
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Rotation given as an axis-angle (scaled axis) vector.
    pub fn from_axis_angle(scaled_axis: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(scaled_axis), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// 4×4 homogeneous matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: renormalize(inv),
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle of the pose, in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation angle and translation distance between two poses.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.rotation_angle(), (self.translation - other.translation).norm())
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

/// Sub-pixel image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// Pinhole intrinsics plus the raw-depth scale of the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Raw depth units per meter.
    pub depth_factor: f64,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        depth_factor: f64,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_factor,
        };
        k.validate()?;
        Ok(k)
    }

    /// TUM freiburg1 calibration (640×480, factor 5000).
    pub fn tum_freiburg1() -> Self {
        Self {
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
            width: 640,
            height: 480,
            depth_factor: 5000.0,
        }
    }

    /// ICL-NUIM calibration; depth is stored TUM-style at factor 5000.
    pub fn icl_nuim() -> Self {
        Self {
            fx: 481.2,
            fy: 480.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            depth_factor: 5000.0,
        }
    }

    /// TartanAir pinhole camera after conversion to the TUM layout.
    pub fn tartanair() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            depth_factor: 5000.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie inside the image");
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie inside the image");
        }
        if !(self.depth_factor > 0.0) {
            return bad("depth_factor must be positive");
        }
        Ok(())
    }

    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(point_cam: &Vector3<f64>, k: &Intrinsics) -> Result<PixelPoint, GeometryError> {
    let z = point_cam.z;
    if !(z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(PixelPoint {
        u: k.fx * point_cam.x / z + k.cx,
        v: k.fy * point_cam.y / z + k.cy,
    })
}

/// Lifts a pixel with metric z-depth into the camera frame.
pub fn backproject(px: &PixelPoint, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (px.u - k.cx) * depth / k.fx,
        (px.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Axis permutation taking NED vectors (x forward, y right, z down) to camera
/// vectors (x right, y down, z forward): `cam = (ned.y, ned.z, ned.x)`.
pub fn ned_to_camera_axes() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0,
    )
}

/// Re-expresses a TartanAir NED pose in the camera convention. Both the world
/// and body axes are permuted, so the pose becomes `P · T · Pᵀ`.
pub fn ned_to_camera(pose_ned: &Pose) -> Pose {
    let p = ned_to_camera_axes();
    let rotation = p * pose_ned.rotation_matrix() * p.transpose();
    Pose::from_rotation_matrix(&rotation, p * pose_ned.translation)
}

/// Expresses every pose relative to the first one, so the trajectory starts
/// at the identity.
pub fn rebase_trajectory(poses: &[Pose]) -> Result<Vec<Pose>, GeometryError> {
    let first = poses.first().ok_or(GeometryError::EmptyTrajectory)?;
    let origin = first.inverse();
    Ok(poses.iter().map(|p| origin.compose(p)).collect())
}

/// Least-squares rigid transform `T` minimising `Σ‖T·src_i − dst_i‖²`
/// (Kabsch, SVD of the cross-covariance with a reflection fix). Returns
/// `None` for mismatched, short or collinear inputs.
pub fn fit_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[order[0]] > 0.0) || sv[order[1]] <= 1e-12 * sv[order[0]] {
        return None;
    }
    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        correction[(order[2], order[2])] = -1.0;
    }
    let r = v * correction * u.transpose();
    let pose = Pose::from_rotation_matrix(&r, Vector3::zeros());
    let t = cd - pose.transform_point(&cs);
    Some(Pose::new(*pose.rotation(), t))
}
