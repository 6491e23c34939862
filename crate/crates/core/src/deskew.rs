//! Per-point timestamping and IMU-based motion compensation of lidar scans.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use crate::geometry::{wrap_to_pi, LaserScan, Pose, Rotation, Vec3};

/// One dead-reckoned IMU state in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuPoseSample {
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Rotation,
}

impl ImuPoseSample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BracketError {
    #[error("pose buffer is empty")]
    Empty,
    #[error("t = {t} precedes the pose buffer (first sample at {first})")]
    BeforeStart { t: f64, first: f64 },
    #[error("t = {t} is past the pose buffer (last sample at {last})")]
    AfterEnd { t: f64, last: f64 },
    #[error("sample at t = {t} is older than the buffer tail at {last}")]
    OutOfOrder { t: f64, last: f64 },
}

/// Time-ordered, append-only buffer of IMU poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImuPoseBuffer {
    samples: Vec<ImuPoseSample>,
}

/// Tolerance for queries just outside the buffer span.
const TIME_EPS: f64 = 1e-9;

/// How orientation is interpolated between two buffer samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrientationInterp {
    /// Constant angular velocity between the two rotations.
    #[default]
    Manifold,
    /// Linear blend of roll, pitch and yaw as plain numbers. Breaks across
    /// the yaw wrap.
    Componentwise,
}

/// Result of [`ImuPoseBuffer::interpolate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolatedPose {
    pub pose: Pose,
    pub velocity: Vec3,
    pub ratio_front: f64,
    pub ratio_back: f64,
}

impl ImuPoseBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a sample. A sample at the tail's timestamp replaces the tail.
    pub fn push(&mut self, sample: ImuPoseSample) -> Result<(), BracketError> {
        if let Some(last) = self.samples.last_mut() {
            if sample.time < last.time {
                return Err(BracketError::OutOfOrder {
                    t: sample.time,
                    last: last.time,
                });
            }
            if sample.time == last.time {
                *last = sample;
                return Ok(());
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[ImuPoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.time, self.samples.last()?.time))
    }

    /// Drops samples no longer needed to bracket times `>= t`.
    pub fn discard_before(&mut self, t: f64) {
        let keep_from = self.samples.partition_point(|s| s.time <= t).saturating_sub(1);
        self.samples.drain(..keep_from);
    }

    /// Samples `k, k+1` bracketing `t`.
    fn bracket(&self, t: f64) -> Result<(&ImuPoseSample, &ImuPoseSample), BracketError> {
        let (first, last) = self.span().ok_or(BracketError::Empty)?;
        if !(t >= first - TIME_EPS) {
            return Err(BracketError::BeforeStart { t, first });
        }
        if !(t <= last + TIME_EPS) {
            return Err(BracketError::AfterEnd { t, last });
        }
        if self.samples.len() == 1 {
            return Ok((&self.samples[0], &self.samples[0]));
        }
        let k = self
            .samples
            .partition_point(|s| s.time <= t)
            .clamp(1, self.samples.len() - 1);
        Ok((&self.samples[k - 1], &self.samples[k]))
    }

    /// Linear interpolation between the bracketing samples.
    pub fn interpolate(&self, t: f64, mode: OrientationInterp) -> Result<InterpolatedPose, BracketError> {
        let (a, b) = self.bracket(t)?;
        let span = b.time - a.time;
        let (ratio_front, ratio_back) = if span > 0.0 {
            let f = ((t - a.time) / span).clamp(0.0, 1.0);
            (f, 1.0 - f)
        } else {
            (0.0, 1.0)
        };
        let position = b.position * ratio_front + a.position * ratio_back;
        let velocity = b.velocity * ratio_front + a.velocity * ratio_back;
        let rotation = match mode {
            OrientationInterp::Manifold => a.rotation.interpolate(&b.rotation, ratio_front),
            OrientationInterp::Componentwise => {
                let (ra, pa, ya) = a.rotation.quaternion().euler_angles();
                let (rb, pb, yb) = b.rotation.quaternion().euler_angles();
                Rotation::from_euler(
                    rb * ratio_front + ra * ratio_back,
                    pb * ratio_front + pa * ratio_back,
                    yb * ratio_front + ya * ratio_back,
                )
            }
        };
        Ok(InterpolatedPose {
            pose: Pose::new(rotation, position),
            velocity,
            ratio_front,
            ratio_back,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DeskewError {
    #[error("scan theta_end must be positive, got {0}")]
    InvalidThetaEnd(f64),
    #[error("point {index} has a non-finite azimuth")]
    NonFiniteAzimuth { index: usize },
    #[error("scan spans more than one revolution (point {index} at {angle} rad)")]
    MultiRevolution { index: usize, angle: f64 },
    #[error(transparent)]
    Bracket(#[from] BracketError),
}

/// Rotation of every point relative to the first, unwrapped sequentially.
pub fn unwrapped_angles(scan: &LaserScan) -> Result<Vec<f64>, DeskewError> {
    if !(scan.theta_end > 0.0) {
        return Err(DeskewError::InvalidThetaEnd(scan.theta_end));
    }
    let mut out = Vec::with_capacity(scan.len());
    let mut prev_az = None;
    let mut angle = 0.0f64;
    for (index, p) in scan.points.iter().enumerate() {
        if !p.azimuth.is_finite() {
            return Err(DeskewError::NonFiniteAzimuth { index });
        }
        if let Some(prev) = prev_az {
            angle = (angle + wrap_to_pi(p.azimuth - prev)).max(0.0);
        }
        prev_az = Some(p.azimuth);
        if angle > scan.theta_end * (1.0 + 1e-9) + 1e-9 {
            return Err(DeskewError::MultiRevolution { index, angle });
        }
        out.push(angle);
    }
    Ok(out)
}

/// Assigns `t_start + scan_period * theta_curr / theta_end` to every point.
pub fn stamp_points(scan: &LaserScan) -> Result<LaserScan, DeskewError> {
    let angles = unwrapped_angles(scan)?;
    let mut out = scan.clone();
    for (p, a) in out.points.iter_mut().zip(&angles) {
        p.timestamp = scan.t_start + scan.scan_period * (a / scan.theta_end);
    }
    Ok(out)
}

/// World-frame position error of every point relative to uniform motion
/// from the start pose, expressed in the start frame.
pub fn motion_distortion(scan: &LaserScan, buffer: &ImuPoseBuffer, mode: OrientationInterp) -> Result<Vec<Vec3>, DeskewError> {
    let start = buffer.interpolate(scan.t_start, mode)?;
    scan.points
        .iter()
        .map(|p| {
            let cur = buffer.interpolate(p.timestamp, mode)?;
            let dt = p.timestamp - scan.t_start;
            let dp_world = cur.pose.translation - (start.pose.translation + start.velocity * dt);
            Ok(start.pose.rotation.inverse_rotate(&dp_world))
        })
        .collect()
}

/// Re-expresses every point in the sensor frame at `t_start`.
///
/// Each point is rotated by the relative orientation at its timestamp and
/// shifted by the uniform-motion displacement `R_s^T v_s dt` plus the
/// distortion `R_s^T dP`; the sum is the exact reprojection
/// `R_s^T (R_i x + p_i - p_s)`.
pub fn deskew(scan: &LaserScan, buffer: &ImuPoseBuffer, mode: OrientationInterp) -> Result<LaserScan, DeskewError> {
    let start = buffer.interpolate(scan.t_start, mode)?;
    let rs_inv = start.pose.rotation.inverse();
    let mut out = scan.clone();
    for p in out.points.iter_mut() {
        let cur = buffer.interpolate(p.timestamp, mode)?;
        let dt = p.timestamp - scan.t_start;
        let rotated = rs_inv.compose(&cur.pose.rotation).rotate(&p.position);
        let uniform = rs_inv.rotate(&(start.velocity * dt));
        let dp_world = cur.pose.translation - (start.pose.translation + start.velocity * dt);
        p.position = rotated + uniform + rs_inv.rotate(&dp_world);
    }
    Ok(out)
}
