//! Laser-inertial odometry and mapping algorithms.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! computation: rigid-body geometry, a synthetic lidar/IMU simulator, scan
//! deskewing, grid-based dynamic point rejection, a 15-state error-state
//! Kalman filter, NDT registration, frame-to-model mapping, and trajectory
//! accuracy metrics. File formats, configuration and the threaded batch
//! pipeline live in the `lio-tools` crate.
//!
//! Enable the `parallel` feature to evaluate NDT scores with rayon. The
//! reduction order is fixed, so results are identical to the serial path.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod deskew;
pub mod dynamic;
pub mod eskf;
pub mod eval;
pub mod geometry;
pub mod mapping;
pub mod ndt;
pub mod odometry;
pub mod sim;

pub use geometry::{
    rotation_from_vector, ImuSample, ImuTrack, LaserScan, Pose, Rotation, TimedPoint, Vec3,
};
