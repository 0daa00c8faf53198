//! Camera pose from 3D–2D correspondences: P3P inside a seeded RANSAC loop,
//! followed by Huber-robust Levenberg–Marquardt refinement.
//!
//! Poses passed in and out are world-from-camera. Internally the optimizer
//! works on camera-from-world and applies increments on the left:
//! `T_cw ← (exp(φ), ρ) · T_cw`, with the tangent vector ordered `(ρ, φ)`.

use nalgebra::{Matrix2x6, Matrix3, Matrix4, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fit_rigid, project, Intrinsics, PixelPoint, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("point lies behind the camera")]
    PointBehindCamera,
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("best hypothesis has {found} inliers, {required} required")]
    NoConsensus { found: usize, required: usize },
    #[error("optimization diverged")]
    DivergedOptimization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence3D2D {
    pub world_point: Vector3<f64>,
    pub pixel: PixelPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSolution {
    /// World-from-camera.
    pub pose: Pose,
    pub inlier_flags: Vec<bool>,
    /// Mean residual norm over inliers, pixels.
    pub mean_reprojection_error: f64,
    /// Robust cost at the start and after every accepted optimizer step.
    pub cost_trace: Vec<f64>,
}

impl PoseSolution {
    pub fn inlier_count(&self) -> usize {
        self.inlier_flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub minimum_inliers: usize,
    pub seed: u64,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold_px: 3.0,
            minimum_inliers: 15,
            seed: 0,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub huber_delta_px: f64,
    pub convergence_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            huber_delta_px: 2.0,
            convergence_tol: 1e-10,
        }
    }
}

/// Residual standing in for a point behind the camera inside the robust cost.
const BEHIND_CAMERA_RESIDUAL: f64 = 1e6;
const MAX_DAMPING: f64 = 1e12;

/// `project(T_wc⁻¹ · X) − pixel`, i.e. predicted minus observed.
pub fn reprojection_residual(pose: &Pose, c: &Correspondence3D2D, k: &Intrinsics) -> Result<Vector2<f64>, SolveError> {
    residual_cw(&pose.inverse(), c, k)
}

fn residual_cw(cam_from_world: &Pose, c: &Correspondence3D2D, k: &Intrinsics) -> Result<Vector2<f64>, SolveError> {
    let pc = cam_from_world.transform_point(&c.world_point);
    let px = project(&pc, k).map_err(|_| SolveError::PointBehindCamera)?;
    Ok(Vector2::new(px.u - c.pixel.u, px.v - c.pixel.v))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn jacobian_cw(cam_from_world: &Pose, c: &Correspondence3D2D, k: &Intrinsics) -> Result<Matrix2x6<f64>, SolveError> {
    let pc = cam_from_world.transform_point(&c.world_point);
    if !(pc.z > 0.0) {
        return Err(SolveError::PointBehindCamera);
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let dproj = nalgebra::Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let mut dpoint = nalgebra::Matrix3x6::zeros();
    dpoint.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    dpoint.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&pc)));
    Ok(dproj * dpoint)
}

/// Derivative of the residual with respect to a left increment `(ρ, φ)` of
/// the camera-from-world transform.
pub fn reprojection_jacobian(
    pose: &Pose,
    c: &Correspondence3D2D,
    k: &Intrinsics,
) -> Result<Matrix2x6<f64>, SolveError> {
    jacobian_cw(&pose.inverse(), c, k)
}

/// Applies a left increment `(ρ, φ)` to camera-from-world and returns the
/// updated world-from-camera pose.
pub fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let rho = Vector3::new(delta[0], delta[1], delta[2]);
    let phi = Vector3::new(delta[3], delta[4], delta[5]);
    let step = Pose::new(UnitQuaternion::from_scaled_axis(phi), rho);
    step.compose(&pose.inverse()).inverse()
}

/// Huber penalty on a residual norm: `s²` inside `delta`, linear outside.
pub fn huber(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        norm * norm
    } else {
        2.0 * delta * norm - delta * delta
    }
}

fn huber_weight(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        1.0
    } else {
        delta / norm
    }
}

fn cost_cw(cam_from_world: &Pose, corrs: &[Correspondence3D2D], k: &Intrinsics, delta: f64) -> f64 {
    corrs
        .iter()
        .map(|c| match residual_cw(cam_from_world, c, k) {
            Ok(r) => huber(r.norm(), delta),
            Err(_) => huber(BEHIND_CAMERA_RESIDUAL, delta),
        })
        .sum()
}

/// Sum of Huber-robustified reprojection residuals.
pub fn robust_cost(pose: &Pose, corrs: &[Correspondence3D2D], k: &Intrinsics, huber_delta_px: f64) -> f64 {
    cost_cw(&pose.inverse(), corrs, k, huber_delta_px)
}

/// Weighted normal equations `(JᵀWJ, JᵀWr)` at a camera-from-world pose.
fn normal_equations(
    cam_from_world: &Pose,
    corrs: &[Correspondence3D2D],
    k: &Intrinsics,
    delta: f64,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corrs {
        let (Ok(r), Ok(j)) = (residual_cw(cam_from_world, c, k), jacobian_cw(cam_from_world, c, k)) else {
            continue;
        };
        let w = huber_weight(r.norm(), delta);
        h += w * j.transpose() * j;
        g += w * j.transpose() * r;
    }
    (h, g)
}

/// Gradient of [`robust_cost`] with respect to the left increment `(ρ, φ)`.
pub fn robust_cost_gradient(
    pose: &Pose,
    corrs: &[Correspondence3D2D],
    k: &Intrinsics,
    huber_delta_px: f64,
) -> Vector6<f64> {
    2.0 * normal_equations(&pose.inverse(), corrs, k, huber_delta_px).1
}

fn finalize(
    pose: Pose,
    corrs: &[Correspondence3D2D],
    k: &Intrinsics,
    inlier_threshold: f64,
    cost_trace: Vec<f64>,
) -> PoseSolution {
    let cw = pose.inverse();
    let norms: Vec<Option<f64>> = corrs
        .iter()
        .map(|c| residual_cw(&cw, c, k).ok().map(|r| r.norm()))
        .collect();
    let inlier_flags: Vec<bool> = norms.iter().map(|n| n.is_some_and(|n| n <= inlier_threshold)).collect();
    let inlier_norms: Vec<f64> = norms
        .iter()
        .zip(&inlier_flags)
        .filter(|(_, &f)| f)
        .filter_map(|(n, _)| *n)
        .collect();
    let mean_reprojection_error = if inlier_norms.is_empty() {
        f64::NAN
    } else {
        inlier_norms.iter().sum::<f64>() / inlier_norms.len() as f64
    };
    PoseSolution {
        pose,
        inlier_flags,
        mean_reprojection_error,
        cost_trace,
    }
}

/// Levenberg–Marquardt on the Huber-robust reprojection cost. Steps are only
/// accepted when they lower the cost, so `cost_trace` is non-increasing.
/// Inliers are residuals within `2 · huber_delta_px`.
pub fn optimize_pose(
    initial: &Pose,
    corrs: &[Correspondence3D2D],
    k: &Intrinsics,
    cfg: &OptimizerConfig,
) -> Result<PoseSolution, SolveError> {
    if corrs.len() < 4 {
        return Err(SolveError::InsufficientCorrespondences(corrs.len()));
    }
    let mut cw = initial.inverse();
    let in_front = corrs
        .iter()
        .filter(|c| cw.transform_point(&c.world_point).z > 0.0)
        .count();
    if in_front < 4 {
        return Err(SolveError::InsufficientCorrespondences(in_front));
    }
    let delta = cfg.huber_delta_px;
    let mut cost = cost_cw(&cw, corrs, k, delta);
    if !cost.is_finite() {
        return Err(SolveError::DivergedOptimization);
    }
    let mut trace = vec![cost];
    let mut lambda = 1e-4;

    'outer: for _ in 0..cfg.max_iterations {
        if cost <= 1e-24 {
            break;
        }
        let (h, g) = normal_equations(&cw, corrs, k, delta);
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (h[(i, i)] + 1e-9);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    break 'outer;
                }
                continue;
            };
            if !step.iter().all(|v| v.is_finite()) {
                return Err(SolveError::DivergedOptimization);
            }
            if step.norm() < cfg.convergence_tol {
                break 'outer;
            }
            let candidate = Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(step[3], step[4], step[5])),
                Vector3::new(step[0], step[1], step[2]),
            )
            .compose(&cw);
            let new_cost = cost_cw(&candidate, corrs, k, delta);
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                cw = candidate;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda * 0.3).max(1e-12);
                if rel < 1e-15 {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                // Damped steps no longer reduce the cost. Only a sizeable
                // gradient means we stalled away from a minimum.
                if 2.0 * g.norm() > 1e-6 * (1.0 + cost) * (1.0 + h.diagonal().norm().sqrt()) {
                    return Err(SolveError::DivergedOptimization);
                }
                break 'outer;
            }
        }
    }
    let pose = cw.inverse();
    if !pose.is_finite() {
        return Err(SolveError::DivergedOptimization);
    }
    Ok(finalize(pose, corrs, k, 2.0 * delta, trace))
}

fn bearing(px: &PixelPoint, k: &Intrinsics) -> Vector3<f64> {
    Vector3::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0).normalize()
}

/// Real roots of `a4 x⁴ + a3 x³ + a2 x² + a1 x + a0`, from the companion
/// matrix eigenvalues and polished with Newton steps.
fn quartic_real_roots(a4: f64, a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    if a4.abs() < 1e-14 * (a3.abs() + a2.abs() + a1.abs() + a0.abs()).max(1e-300) {
        return Vec::new();
    }
    let (b3, b2, b1, b0) = (a3 / a4, a2 / a4, a1 / a4, a0 / a4);
    let companion = Matrix4::new(
        -b3, -b2, -b1, -b0, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let poly = |x: f64| (((x + b3) * x + b2) * x + b1) * x + b0;
    let dpoly = |x: f64| ((4.0 * x + 3.0 * b3) * x + 2.0 * b2) * x + b1;
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let d = dpoly(x);
                if d.abs() < 1e-300 {
                    break;
                }
                let next = x - poly(x) / d;
                if !next.is_finite() {
                    break;
                }
                x = next;
            }
            x
        })
        .collect()
}

/// Grunert's three-point solution. Returns candidate camera-from-world poses.
fn p3p(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let [j1, j2, j3] = bearings;
    let [p1, p2, p3] = points;
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let cos_a = j2.dot(j3);
    let cos_b = j1.dot(j3);
    let cos_g = j1.dot(j2);
    let m = (a2 - c2) / b2;
    let p = (a2 + c2) / b2;

    let a4 = (m - 1.0).powi(2) - 4.0 * c2 / b2 * cos_a * cos_a;
    let a3 = 4.0 * (m * (1.0 - m) * cos_b - (1.0 - p) * cos_a * cos_g + 2.0 * c2 / b2 * cos_a * cos_a * cos_b);
    let a2c = 2.0
        * (m * m - 1.0 + 2.0 * m * m * cos_b * cos_b + 2.0 * (b2 - c2) / b2 * cos_a * cos_a
            - 4.0 * p * cos_a * cos_b * cos_g
            + 2.0 * (b2 - a2) / b2 * cos_g * cos_g);
    let a1 = 4.0 * (-m * (1.0 + m) * cos_b + 2.0 * a2 / b2 * cos_g * cos_g * cos_b - (1.0 - p) * cos_a * cos_g);
    let a0 = (1.0 + m).powi(2) - 4.0 * a2 / b2 * cos_g * cos_g;

    let mut out = Vec::new();
    for v in quartic_real_roots(a4, a3, a2c, a1, a0) {
        if !(v > 0.0) {
            continue;
        }
        let denom = 2.0 * (cos_g - v * cos_a);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((m - 1.0) * v * v - 2.0 * m * cos_b * v + 1.0 + m) / denom;
        if !(u > 0.0) {
            continue;
        }
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let cam = [j1 * s1, j2 * (u * s1), j3 * (v * s1)];
        if let Some(pose) = fit_rigid(points, &cam) {
            out.push(pose);
        }
    }
    out
}

/// Minimal hypotheses from four correspondences: P3P on the first three,
/// disambiguated by reprojection of the fourth. Camera-from-world.
fn minimal_hypothesis(sample: &[&Correspondence3D2D; 4], k: &Intrinsics) -> Option<Pose> {
    let bearings = [
        bearing(&sample[0].pixel, k),
        bearing(&sample[1].pixel, k),
        bearing(&sample[2].pixel, k),
    ];
    let points = [sample[0].world_point, sample[1].world_point, sample[2].world_point];
    p3p(&bearings, &points)
        .into_iter()
        .filter_map(|cw| residual_cw(&cw, sample[3], k).ok().map(|r| (r.norm(), cw)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, cw)| cw)
}

fn inliers_cw(cw: &Pose, corrs: &[Correspondence3D2D], k: &Intrinsics, threshold: f64) -> Vec<bool> {
    corrs
        .iter()
        .map(|c| residual_cw(cw, c, k).is_ok_and(|r| r.norm() <= threshold))
        .collect()
}

fn select<T: Copy>(items: &[T], flags: &[bool]) -> Vec<T> {
    items.iter().zip(flags).filter(|(_, &f)| f).map(|(x, _)| *x).collect()
}

/// Robust PnP: seeded RANSAC over 4-point samples, then robust refinement
/// on the consensus set. Deterministic for a fixed seed.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence3D2D],
    k: &Intrinsics,
    cfg: &RansacConfig,
    opt: &OptimizerConfig,
) -> Result<PoseSolution, SolveError> {
    let n = corrs.len();
    if n < 4 {
        return Err(SolveError::InsufficientCorrespondences(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Pose)> = None;
    let mut max_iterations = cfg.iterations.max(1);
    let mut iteration = 0;
    while iteration < max_iterations {
        iteration += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let sample = [
            &corrs[idx.index(0)],
            &corrs[idx.index(1)],
            &corrs[idx.index(2)],
            &corrs[idx.index(3)],
        ];
        let Some(cw) = minimal_hypothesis(&sample, k) else {
            continue;
        };
        let count = inliers_cw(&cw, corrs, k, cfg.inlier_threshold_px)
            .iter()
            .filter(|&&f| f)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, cw));
            let w = count as f64 / n as f64;
            let needed = if w >= 1.0 {
                1.0
            } else {
                (1.0 - cfg.confidence).ln() / (1.0 - w.powi(4)).ln()
            };
            if needed.is_finite() {
                max_iterations = max_iterations.min(needed.ceil().max(1.0) as usize);
            }
        }
    }
    let Some((count, cw)) = best else {
        return Err(SolveError::NoConsensus {
            found: 0,
            required: cfg.minimum_inliers,
        });
    };
    if count < cfg.minimum_inliers.max(4) {
        return Err(SolveError::NoConsensus {
            found: count,
            required: cfg.minimum_inliers,
        });
    }

    let mut flags = inliers_cw(&cw, corrs, k, cfg.inlier_threshold_px);
    let mut pose = cw.inverse();
    let mut trace = Vec::new();
    for _ in 0..2 {
        let subset = select(corrs, &flags);
        let refined = optimize_pose(&pose, &subset, k, opt)?;
        pose = refined.pose;
        trace.extend(refined.cost_trace);
        let updated = inliers_cw(&pose.inverse(), corrs, k, cfg.inlier_threshold_px);
        let stable = updated == flags;
        flags = updated;
        if stable || flags.iter().filter(|&&f| f).count() < 4 {
            break;
        }
    }
    let solution = finalize(pose, corrs, k, cfg.inlier_threshold_px, trace);
    let found = solution.inlier_count();
    if found < cfg.minimum_inliers.max(4) {
        return Err(SolveError::NoConsensus {
            found,
            required: cfg.minimum_inliers,
        });
    }
    Ok(solution)
}
