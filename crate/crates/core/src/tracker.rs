//! Frame-to-model camera tracking against a distance field and absolute
//! trajectory error.

use nalgebra::{
    Isometry3, Matrix3, Matrix6, Point3, Translation3, UnitQuaternion, Vector3, Vector6,
};

use crate::error::{Error, Result};
use crate::ingest::{associate, DepthFrame, StampedPose, Trajectory};
use crate::volume::TsdfVolume;

/// Exponential coordinates of a rigid increment: rotation `omega`, translation `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    /// `[omega; v]`.
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            omega: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.omega * s, self.v * s)
    }

    /// The SE(3) exponential.
    pub fn exp(&self) -> Isometry3<f64> {
        let theta = self.omega.norm();
        let k = self.omega.cross_matrix();
        let k2 = k * k;
        let (a, b) = if theta < 1e-6 {
            let t2 = theta * theta;
            (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            (
                (1.0 - theta.cos()) / (theta * theta),
                (theta - theta.sin()) / (theta * theta * theta),
            )
        };
        let v_mat = Matrix3::identity() + k * a + k2 * b;
        let rotation = UnitQuaternion::from_scaled_axis(self.omega);
        Isometry3::from_parts(Translation3::from(v_mat * self.v), rotation)
    }
}

/// A scalar field sampled in world coordinates, as seen by the tracker.
pub trait DistanceField {
    fn distance(&self, p: &Point3<f64>) -> Option<f64>;
    fn gradient(&self, p: &Point3<f64>) -> Option<Vector3<f64>>;
    /// The positive truncation distance; the cost of a point that left the field.
    fn truncation(&self) -> f64;
}

impl DistanceField for TsdfVolume {
    fn distance(&self, p: &Point3<f64>) -> Option<f64> {
        self.sample_trilinear(p)
    }

    fn gradient(&self, p: &Point3<f64>) -> Option<Vector3<f64>> {
        TsdfVolume::gradient(self, p)
    }

    fn truncation(&self) -> f64 {
        self.d_max() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    pub max_iterations: usize,
    /// Stop once the norm of the accepted twist drops below this.
    pub convergence_tol: f64,
    pub huber_delta: f64,
    /// Use every `stride`-th pixel along both image axes.
    pub point_stride: usize,
    /// Fewer usable points than this is a tracking failure.
    pub min_points: usize,
    pub max_step_halvings: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            convergence_tol: 1e-7,
            huber_delta: 0.02,
            point_stride: 2,
            min_points: 100,
            max_step_halvings: 12,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.convergence_tol > 0.0)
            || !(self.huber_delta > 0.0)
            || self.point_stride == 0
            || self.min_points == 0
        {
            return Err(Error::Config(format!(
                "invalid tracker configuration {self:?}"
            )));
        }
        Ok(())
    }
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Camera-frame points of the valid pixels on a `stride` grid.
pub fn frame_points(frame: &DepthFrame, stride: usize) -> Vec<Point3<f64>> {
    let mut pts = Vec::new();
    for v in (0..frame.height).step_by(stride) {
        for u in (0..frame.width).step_by(stride) {
            let d = frame.at(u, v);
            if d > 0.0 {
                pts.push(frame.intrinsics.back_project(u as f64, v as f64, d as f64));
            }
        }
    }
    pts
}

/// Robust cost of a pose; points outside the field cost as much as a truncated one.
pub fn pose_cost<F: DistanceField + ?Sized>(
    field: &F,
    points: &[Point3<f64>],
    pose: &Isometry3<f64>,
    delta: f64,
) -> f64 {
    let outside = huber(field.truncation(), delta);
    points
        .iter()
        .map(|p| {
            field
                .distance(&(pose * p))
                .map_or(outside, |d| huber(d, delta))
        })
        .sum()
}

fn count_usable<F: DistanceField + ?Sized>(
    field: &F,
    points: &[Point3<f64>],
    pose: &Isometry3<f64>,
) -> usize {
    points
        .iter()
        .filter(|p| {
            let q = pose * *p;
            field.distance(&q).is_some()
                && field.gradient(&q).is_some_and(|g| g.norm_squared() > 0.0)
        })
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameResult {
    pub pose: Isometry3<f64>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub usable_points: usize,
    pub converged: bool,
}

/// Aligns one depth frame to the field by Gauss–Newton on the Huber cost of
/// the field values at the transformed points, starting from `init`
/// (camera to world). Increments are applied on the left, `T ← exp(ξ)·T`,
/// and halved until the cost does not increase.
pub fn track_frame<F: DistanceField + ?Sized>(
    field: &F,
    frame: &DepthFrame,
    init: &Isometry3<f64>,
    cfg: &TrackerConfig,
) -> Result<FrameResult> {
    cfg.validate()?;
    let points = frame_points(frame, cfg.point_stride);
    let usable = count_usable(field, &points, init);
    if usable < cfg.min_points {
        return Err(Error::TrackingFailure {
            usable,
            required: cfg.min_points,
        });
    }
    let delta = cfg.huber_delta;
    let mut pose = *init;
    let mut cost = pose_cost(field, &points, &pose, delta);
    let initial_cost = cost;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for p in &points {
            let q = pose * p;
            let (Some(d), Some(grad)) = (field.distance(&q), field.gradient(&q)) else {
                continue;
            };
            let c = q.coords.cross(&grad);
            let j = Vector6::new(c.x, c.y, c.z, grad.x, grad.y, grad.z);
            let w = huber_weight(d, delta);
            h += j * j.transpose() * w;
            g += j * (w * d);
        }
        let damping = 1e-9 * h.trace().max(1e-12) / 6.0;
        let Some(chol) = (h + Matrix6::identity() * damping).cholesky() else {
            break;
        };
        let mut step = Twist::from_vector(&(-chol.solve(&g)));
        let mut accepted = None;
        for _ in 0..=cfg.max_step_halvings {
            let candidate = step.exp() * pose;
            let c = pose_cost(field, &points, &candidate, delta);
            if c <= cost {
                accepted = Some((candidate, c));
                break;
            }
            step = step.scaled(0.5);
        }
        let Some((candidate, c)) = accepted else {
            converged = true;
            break;
        };
        pose = candidate;
        cost = c;
        if step.norm() < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    Ok(FrameResult {
        pose,
        iterations,
        initial_cost,
        final_cost: cost,
        usable_points: usable,
        converged,
    })
}

/// Per-frame outcome of chained tracking.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameOutcome {
    Tracked(FrameResult),
    /// The previous pose was kept.
    Failed {
        usable: usize,
    },
}

#[derive(Clone, Debug)]
pub struct TrackingRun {
    pub trajectory: Trajectory,
    pub outcomes: Vec<FrameOutcome>,
}

impl TrackingRun {
    pub fn failures(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, FrameOutcome::Failed { .. }))
            .count()
    }
}

/// Tracks frames in order, each starting from the previous estimate; a failed
/// frame holds the previous pose.
pub fn estimate_trajectory<F: DistanceField + ?Sized>(
    field: &F,
    frames: &[DepthFrame],
    init: &Isometry3<f64>,
    cfg: &TrackerConfig,
) -> Result<TrackingRun> {
    cfg.validate()?;
    let mut pose = *init;
    let mut poses = Vec::with_capacity(frames.len());
    let mut outcomes = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        match track_frame(field, frame, &pose, cfg) {
            Ok(r) => {
                pose = r.pose;
                outcomes.push(FrameOutcome::Tracked(r));
            }
            Err(Error::TrackingFailure { usable, .. }) => {
                log::warn!(
                    "frame {i} (t={}): tracking failed with {usable} usable points",
                    frame.timestamp
                );
                outcomes.push(FrameOutcome::Failed { usable });
            }
            Err(e) => return Err(e),
        }
        poses.push(StampedPose::new(frame.timestamp, pose));
    }
    Ok(TrackingRun {
        trajectory: Trajectory::new(poses)?,
        outcomes,
    })
}

/// Translational errors of an estimate against ground truth, without alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct AteReport {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub max: f64,
    pub per_pose: Vec<f64>,
}

/// Absolute trajectory error; each estimated pose is matched to the nearest
/// ground-truth timestamp within `max_dt` seconds, unmatched ones are skipped.
pub fn ate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<AteReport> {
    let per_pose: Vec<f64> = est
        .poses()
        .iter()
        .filter_map(|p| {
            associate(gt, p.timestamp, max_dt)
                .ok()
                .map(|g| (p.pose.translation.vector - g.pose.translation.vector).norm())
        })
        .collect();
    if per_pose.is_empty() {
        return Err(Error::Evaluation("no associable pose pairs".into()));
    }
    let n = per_pose.len() as f64;
    let mean = per_pose.iter().sum::<f64>() / n;
    let rmse = (per_pose.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let max = per_pose.iter().fold(0.0f64, |m, &e| m.max(e));
    let mut sorted = per_pose.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    Ok(AteReport {
        mean,
        median,
        rmse,
        max,
        per_pose,
    })
}

/// Rotation angle between two poses, in radians.
pub fn rotation_error(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    a.rotation.angle_to(&b.rotation)
}

pub fn translation_error(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    (a.translation.vector - b.translation.vector).norm()
}
