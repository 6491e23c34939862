//! Rotations, rigid transforms, and the timestamped sensor records shared by
//! every stage of the pipeline.
//!
//! Conventions: the world frame is z-up, angles are radians, and orientation
//! errors are injected on the right, `R_true = R_est * Exp(dtheta)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the exponential and logarithm maps switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix `[v]x`, so that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `Exp(phi + d) ~= Exp(phi) * Exp(J_r(phi) d)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() - k * 0.5 + k * k * (1.0 / 6.0);
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Mat3::identity() - k * a + k * k * b
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let mut a = (angle + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_to_2pi(angle: f64) -> f64 {
    let a = angle % (2.0 * PI);
    let a = if a < 0.0 { a + 2.0 * PI } else { a };
    if a >= 2.0 * PI {
        0.0
    } else {
        a
    }
}

/// An element of SO(3), stored as a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Normalizes `q`; a zero quaternion yields the identity.
    pub fn from_quaternion(q: Quaternion<f64>) -> Self {
        let n = q.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::identity();
        }
        Rotation(UnitQuaternion::new_unchecked(q / n))
    }

    /// Keeps `q` bit for bit when its norm is within `1e-12` of one and
    /// normalizes it otherwise.
    pub fn from_unit_quaternion(q: Quaternion<f64>) -> Self {
        if (q.norm() - 1.0).abs() <= 1e-12 {
            return Rotation(UnitQuaternion::new_unchecked(q));
        }
        Self::from_quaternion(q)
    }

    /// Builds a rotation from a matrix assumed orthonormal with det +1.
    pub fn from_matrix(m: &Mat3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*m);
        Self::from_quaternion(UnitQuaternion::from_rotation_matrix(&rot).into_inner())
    }

    /// Exponential map from a rotation vector (axis times angle).
    pub fn exp(phi: &Vec3) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let (w, k) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        Self::from_quaternion(Quaternion::new(w, phi.x * k, phi.y * k, phi.z * k))
    }

    /// Logarithm map; the returned rotation vector has norm in `[0, pi]`.
    pub fn log(&self) -> Vec3 {
        let q = self.0.quaternion();
        let (w, v) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        let s = v.norm();
        if s < SMALL_ANGLE {
            // theta ~= 2 s / w, first-order in s.
            return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w));
        }
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Mat3 {
        self.0.to_rotation_matrix().into_inner()
    }

    /// `self * other`, renormalized.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::from_quaternion((self.0 * other.0).into_inner())
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0.transform_vector(v)
    }

    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.0.inverse_transform_vector(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Geodesic interpolation: `self * Exp(s * Log(self^-1 * other))`.
    pub fn interpolate(&self, other: &Rotation, s: f64) -> Rotation {
        let delta = self.inverse().compose(other).log();
        self.compose(&Rotation::exp(&(delta * s)))
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Rotation(UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }
}

/// Exponential map from a rotation vector to a rotation.
pub fn rotation_from_vector(phi: &Vec3) -> Rotation {
    Rotation::exp(phi)
}

/// A rigid transform mapping points from a child frame into a parent frame:
/// `x_parent = R x_child + t`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose::new(Rotation::identity(), translation)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            translation: -rotation.rotate(&self.translation),
            rotation,
        }
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.rotation.rotate(x) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Applies a tangent increment ordered `(dp, dtheta)`:
    /// `t + dp`, `R * Exp(dtheta)`. This matches the filter's error state.
    pub fn boxplus(&self, xi: &Vector6<f64>) -> Pose {
        let dp = Vec3::new(xi[0], xi[1], xi[2]);
        let dtheta = Vec3::new(xi[3], xi[4], xi[5]);
        Pose {
            rotation: self.rotation.compose(&Rotation::exp(&dtheta)),
            translation: self.translation + dp,
        }
    }

    /// Inverse of [`Pose::boxplus`]: the increment taking `base` to `self`.
    pub fn boxminus(&self, base: &Pose) -> Vector6<f64> {
        let dp = self.translation - base.translation;
        let dtheta = base.rotation.inverse().compose(&self.rotation).log();
        Vector6::new(dp.x, dp.y, dp.z, dtheta.x, dtheta.y, dtheta.z)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.quaternion().coords.iter().all(|v| v.is_finite())
    }
}

/// One lidar return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPoint {
    /// Sensor-frame position, meters.
    pub position: Vec3,
    /// Return intensity in `[0, 1]`.
    pub intensity: f64,
    /// Firing azimuth in `[0, 2pi)`.
    pub azimuth: f64,
    /// Absolute emission time, seconds.
    pub timestamp: f64,
}

impl TimedPoint {
    pub fn new(position: Vec3, intensity: f64) -> Self {
        let azimuth = wrap_to_2pi(position.y.atan2(position.x));
        TimedPoint {
            position,
            intensity,
            azimuth,
            timestamp: 0.0,
        }
    }
}

/// Ground-truth point label written by the simulator.
pub const LABEL_STATIC: u8 = 0;
pub const LABEL_DYNAMIC: u8 = 1;

/// One sweep of a spinning lidar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaserScan {
    /// Points in firing order.
    pub points: Vec<TimedPoint>,
    pub t_start: f64,
    /// Sweep duration, seconds.
    pub scan_period: f64,
    /// Rotation angle of the end point relative to the start point, `(0, 2pi]`.
    pub theta_end: f64,
    /// Optional per-point ground-truth labels, aligned with `points`.
    pub labels: Option<Vec<u8>>,
}

impl LaserScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Keeps the points whose index passes `keep`, carrying labels along.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> LaserScan {
        let mut points = Vec::new();
        let mut labels = self.labels.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if keep(i) {
                points.push(*p);
                if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        LaserScan {
            points,
            labels,
            ..*self
        }
    }
}

/// Accelerometer and gyroscope reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame, m/s^2.
    pub accel: Vec3,
    /// Angular rate in the body frame, rad/s.
    pub gyro: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ImuTrackError {
    #[error("imu timestamps not strictly increasing at sample {index}")]
    NonIncreasing { index: usize },
    #[error("imu sample {index} is not finite")]
    NonFinite { index: usize },
}

/// Time-ordered IMU samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImuTrack {
    samples: Vec<ImuSample>,
}

impl ImuTrack {
    pub fn new(samples: Vec<ImuSample>) -> Result<Self, ImuTrackError> {
        for (index, s) in samples.iter().enumerate() {
            let finite = s.timestamp.is_finite()
                && s.accel.iter().all(|v| v.is_finite())
                && s.gyro.iter().all(|v| v.is_finite());
            if !finite {
                return Err(ImuTrackError::NonFinite { index });
            }
            if index > 0 && s.timestamp <= samples[index - 1].timestamp {
                return Err(ImuTrackError::NonIncreasing { index });
            }
        }
        Ok(ImuTrack { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ImuSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_of_zero_is_identity() {
        let r = rotation_from_vector(&Vec3::zeros());
        assert_eq!(r.matrix(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_from_vector(&Vec3::new(0.0, 0.0, PI / 2.0));
        let v = r.rotate(&Vec3::x());
        assert_relative_eq!(v, Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn exp_is_continuous_at_zero() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        let mut last = f64::INFINITY;
        for k in 1..12 {
            let eps = 10f64.powi(-k);
            let d = (rotation_from_vector(&(axis * eps)).matrix() - Mat3::identity()).norm();
            assert!(d <= last);
            assert!(d < 2.0 * eps);
            last = d;
        }
    }

    #[test]
    fn small_angle_branches_agree() {
        let phi = Vec3::new(3e-9, -2e-9, 1e-9);
        let r = Rotation::exp(&phi);
        assert_relative_eq!(r.log(), phi, epsilon = 1e-20);
        let above = Vec3::new(3e-8, -2e-8, 1e-8);
        assert_relative_eq!(Rotation::exp(&above).log(), above, epsilon = 1e-20);
    }

    #[test]
    fn log_near_pi() {
        let phi = Vec3::new(0.0, 0.0, PI - 1e-6);
        assert_relative_eq!(Rotation::exp(&phi).log(), phi, epsilon = 1e-9);
    }

    #[test]
    fn compose_identity_law() {
        let p = Pose::new(Rotation::exp(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, 2.0, 3.0));
        let q = Pose::identity().compose(&p);
        assert_relative_eq!(q.translation, p.translation, epsilon = 1e-15);
        assert_relative_eq!(q.rotation.matrix(), p.rotation.matrix(), epsilon = 1e-15);
    }

    #[test]
    fn right_jacobian_matches_perturbation() {
        let phi = Vec3::new(0.4, -0.3, 0.9);
        let d = Vec3::new(1e-7, -2e-7, 3e-7);
        let lhs = Rotation::exp(&(phi + d));
        let rhs = Rotation::exp(&phi).compose(&Rotation::exp(&(right_jacobian(&phi) * d)));
        assert!(lhs.inverse().compose(&rhs).angle() < 1e-12);
    }

    #[test]
    fn boxplus_boxminus_roundtrip() {
        let base = Pose::new(Rotation::exp(&Vec3::new(0.5, -0.1, 2.0)), Vec3::new(4.0, 5.0, 6.0));
        let xi = Vector6::new(0.1, -0.2, 0.3, 0.01, 0.2, -0.3);
        assert_relative_eq!(base.boxplus(&xi).boxminus(&base), xi, epsilon = 1e-12);
    }

    #[test]
    fn wrap_to_pi_range() {
        assert_relative_eq!(wrap_to_pi(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_to_pi(-3.0 * PI / 2.0), PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_to_pi(0.25), 0.25);
    }

    #[test]
    fn imu_track_rejects_non_increasing() {
        let s = |t| ImuSample {
            timestamp: t,
            accel: Vec3::zeros(),
            gyro: Vec3::zeros(),
        };
        assert_eq!(
            ImuTrack::new(alloc::vec![s(0.0), s(0.01), s(0.01)]),
            Err(ImuTrackError::NonIncreasing { index: 2 })
        );
        assert!(ImuTrack::new(alloc::vec![s(0.0), s(0.01)]).is_ok());
    }

    #[test]
    fn select_keeps_labels_aligned() {
        let scan = LaserScan {
            points: (0..4)
                .map(|i| TimedPoint::new(Vec3::new(i as f64 + 1.0, 0.0, 0.0), 0.5))
                .collect(),
            t_start: 0.0,
            scan_period: 0.1,
            theta_end: 2.0 * PI,
            labels: Some(alloc::vec![0, 1, 0, 1]),
        };
        let odd = scan.select(|i| i % 2 == 1);
        assert_eq!(odd.labels, Some(alloc::vec![1, 1]));
        assert_eq!(odd.points[0].position.x, 2.0);
    }
}
