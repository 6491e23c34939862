//! Per-scan laser-inertial odometry: deskew, dynamic point rejection,
//! scan-to-local-model NDT, and the filter update.
//!
//! The stages are separate methods so a driver can time or pipeline them;
//! [`LioFrontend::process_scan`] runs them in order.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix6};
#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use crate::deskew::{deskew, DeskewError, ImuPoseBuffer, ImuPoseSample, OrientationInterp};
use crate::dynamic::{ClassifierError, DynamicFilter};
use crate::eskf::{Eskf, EskfConfig, EskfError, NominalState, PoseObservation, UpdateDiagnostics};
use crate::geometry::{ImuSample, LaserScan, Pose, Vec3};
use crate::mapping::downsample;
use crate::ndt::{register_coarse_to_fine, NdtConfig, NdtError, NdtPyramid, Neighborhood};

#[derive(Clone, Debug, PartialEq)]
pub struct OdometryConfig {
    pub eskf: EskfConfig,
    pub interp: OrientationInterp,
    /// Lidar pose in the IMU body frame.
    pub extrinsic: Pose,
    /// Downsample leaf for the matched points, meters.
    pub leaf: f64,
    /// Points farther than this are not matched, meters.
    pub match_range: f64,
    /// Points farther than this do not enter the local model, meters.
    pub model_range: f64,
    /// Keyframes kept in the local model.
    pub window: usize,
    /// A scan becomes a keyframe once the pose has moved this far from the
    /// previous keyframe, meters.
    pub keyframe_distance: f64,
    /// Same, for rotation, radians.
    pub keyframe_angle: f64,
    /// A keyframe joins the local model only once the sensor is this far
    /// from where it was taken, meters. Scans taken from nearly the same
    /// spot share their ring pattern, and matching against it pulls the
    /// estimate towards zero motion.
    pub model_clearance: f64,
    /// Local model voxel sizes, coarse to fine.
    pub ndt_levels: Vec<f64>,
    pub ndt: NdtConfig,
    /// Multiplies the NDT information before the filter update.
    pub information_scale: f64,
    /// Matches moving the pose farther than this from the prediction are
    /// rejected, meters.
    pub max_innovation: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        OdometryConfig {
            eskf: EskfConfig::default(),
            interp: OrientationInterp::Manifold,
            extrinsic: Pose::identity(),
            leaf: 0.5,
            match_range: 80.0,
            model_range: 55.0,
            window: 10,
            keyframe_distance: 1.0,
            keyframe_angle: 0.1,
            model_clearance: 1.0,
            ndt_levels: alloc::vec![2.0, 1.0],
            ndt: NdtConfig {
                neighborhood: Neighborhood::Seven,
                lattice_offset: 0.37,
                ..NdtConfig::default()
            },
            information_scale: 1.0,
            max_innovation: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum OdometryError {
    #[error("deskew: {0}")]
    Deskew(#[from] DeskewError),
    #[error("filter: {0}")]
    Filter(#[from] EskfError),
}

/// Why a scan produced no filter update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SkipReason {
    /// No keyframe had entered the local model yet.
    EmptyModel,
    Registration(NdtError),
    NotConverged,
    LargeInnovation,
    NoPoints,
    /// The filter found the match uninformative or ill-conditioned.
    Degenerate(EskfError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationSummary {
    /// Matched lidar pose before fusion with the prediction.
    pub pose: Pose,
    pub iterations: usize,
    pub score: f64,
    pub hits: usize,
    pub converged: bool,
}

/// Outcome of the match-and-update stage for one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanUpdate {
    pub time: f64,
    /// Lidar pose at the scan start before the update.
    pub predicted: Pose,
    /// Lidar pose at the scan start after the update.
    pub pose: Pose,
    pub registration: Option<RegistrationSummary>,
    pub update: Option<UpdateDiagnostics>,
    pub skipped: Option<SkipReason>,
    /// Points matched against the local model.
    pub matched_points: usize,
    /// Only the rotation was used: a keyframe in the model lay within the
    /// clearance distance.
    pub rotation_only: bool,
}

/// Full record of one processed scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub update: ScanUpdate,
    /// Deskewed static points in the lidar frame at the scan start.
    pub static_scan: LaserScan,
    pub removed: usize,
    pub detection_fail_open: Option<ClassifierError>,
}

/// Rotation information with translation marginalized out, plus a weak
/// translation term so the measurement stays full rank.
fn rotation_information(info: &Matrix6<f64>) -> Matrix6<f64> {
    let tt = info.fixed_view::<3, 3>(0, 0).into_owned();
    let tr = info.fixed_view::<3, 3>(0, 3).into_owned();
    let rr = info.fixed_view::<3, 3>(3, 3).into_owned();
    let marginal = match tt.try_inverse() {
        Some(inv) => rr - tr.transpose() * inv * tr,
        None => rr,
    };
    let marginal = (marginal + marginal.transpose()) * 0.5;
    let weak = 1e-6 * marginal.abs().max();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * weak));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&marginal);
    out
}

/// Owner of the filter and the local model.
pub struct LioFrontend {
    pub config: OdometryConfig,
    filter: Eskf,
    detector: Option<DynamicFilter>,
    model: NdtPyramid,
    window: VecDeque<(Vec3, Vec<Vec3>)>,
    /// Keyframes waiting for clearance: origin and world points.
    pending: VecDeque<(Vec3, Vec<Vec3>)>,
    last_key: Option<Pose>,
}

impl core::fmt::Debug for LioFrontend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LioFrontend")
            .field("config", &self.config)
            .field("filter", &self.filter)
            .field("detector", &self.detector)
            .field("window", &self.window.len())
            .field("pending", &self.pending.len())
            .finish_non_exhaustive()
    }
}

impl LioFrontend {
    /// Starts at rest at `initial` (a lidar pose) at time `t0`.
    pub fn new(config: OdometryConfig, initial: &Pose, t0: f64, detector: Option<DynamicFilter>) -> Self {
        let body = initial.compose(&config.extrinsic.inverse());
        let filter = Eskf::new(NominalState::at_rest(&body), t0, config.eskf);
        let model = NdtPyramid::new(&config.ndt_levels, &config.ndt);
        LioFrontend {
            config,
            filter,
            detector,
            model,
            window: VecDeque::new(),
            pending: VecDeque::new(),
            last_key: None,
        }
    }

    pub fn filter(&self) -> &Eskf {
        &self.filter
    }

    pub fn detection_enabled(&self) -> bool {
        self.detector.is_some()
    }

    /// Current lidar pose.
    pub fn pose(&self) -> Pose {
        self.filter.state().pose().compose(&self.config.extrinsic)
    }

    /// Propagates through one IMU sample and returns the lidar pose at its
    /// time.
    pub fn ingest_imu(&mut self, sample: &ImuSample) -> Result<(f64, Pose), OdometryError> {
        self.filter.ingest_imu(sample)?;
        Ok((self.filter.time(), self.pose()))
    }

    /// Brings the filter to `t` with the latched sample.
    pub fn advance_to(&mut self, t: f64) -> Result<(), OdometryError> {
        self.filter.advance_to(t)?;
        Ok(())
    }

    /// Lidar poses predicted from the filter state through `upcoming` IMU
    /// samples until `t_end`.
    pub fn predict_lidar_buffer(&self, upcoming: &[ImuSample], t_end: f64) -> ImuPoseBuffer {
        let body = self.filter.predict_buffer(upcoming, t_end);
        if self.config.extrinsic == Pose::identity() {
            return body;
        }
        let e = self.config.extrinsic;
        let mut out = ImuPoseBuffer::new();
        for s in body.samples() {
            let pose = s.pose().compose(&e);
            let pushed = out.push(ImuPoseSample {
                time: s.time,
                position: pose.translation,
                velocity: s.velocity,
                rotation: pose.rotation,
            });
            debug_assert!(pushed.is_ok());
        }
        out
    }

    /// Motion-compensates a timestamped scan starting at the filter time.
    pub fn deskew_scan(&self, scan: &LaserScan, upcoming: &[ImuSample]) -> Result<LaserScan, OdometryError> {
        let end = scan
            .points
            .iter()
            .map(|p| p.timestamp)
            .fold(scan.t_start + scan.scan_period, f64::max);
        let buffer = self.predict_lidar_buffer(upcoming, end);
        Ok(deskew(scan, &buffer, self.config.interp)?)
    }

    /// Removes dynamic points when a detector is configured.
    pub fn detect(&self, scan: LaserScan) -> (LaserScan, usize, Option<ClassifierError>) {
        match &self.detector {
            Some(d) => {
                let out = d.apply(&scan);
                let removed = out.removed();
                (out.separation.static_scan, removed, out.fail_open)
            }
            None => (scan, 0, None),
        }
    }

    /// Registers the static scan against the local model from the filter's
    /// prediction, updates the filter, and adds the scan to the model. The
    /// filter must be at `scan.t_start`.
    pub fn match_and_update(&mut self, scan: &LaserScan) -> Result<ScanUpdate, OdometryError> {
        let predicted = self.pose();
        self.promote(&predicted.translation);
        let cfg = &self.config;
        let near = |range: f64| -> Vec<Vec3> {
            scan.points
                .iter()
                .map(|p| p.position)
                .filter(|p| p.norm_squared() <= range * range)
                .collect()
        };
        let query = downsample(&near(cfg.match_range), cfg.leaf);
        let mut out = ScanUpdate {
            time: scan.t_start,
            predicted,
            pose: predicted,
            registration: None,
            update: None,
            skipped: None,
            matched_points: query.len(),
            rotation_only: false,
        };
        if query.is_empty() {
            out.skipped = Some(SkipReason::NoPoints);
            return Ok(out);
        }
        if self.window.is_empty() {
            out.skipped = Some(SkipReason::EmptyModel);
        } else {
            match register_coarse_to_fine(&self.model, &query, &predicted, &cfg.ndt) {
                Err(e) => out.skipped = Some(SkipReason::Registration(e)),
                Ok(r) => {
                    out.registration = Some(RegistrationSummary {
                        pose: r.pose,
                        iterations: r.iterations,
                        score: r.score,
                        hits: r.hits,
                        converged: r.converged,
                    });
                    if !r.converged {
                        out.skipped = Some(SkipReason::NotConverged);
                    } else if (r.pose.translation - predicted.translation).norm() > cfg.max_innovation {
                        out.skipped = Some(SkipReason::LargeInnovation);
                    } else {
                        let near = self
                            .window
                            .iter()
                            .any(|(o, _)| (o - predicted.translation).norm() < cfg.model_clearance);
                        let mut information: Matrix6<f64> = r.information() * cfg.information_scale;
                        let mut matched = r.pose;
                        if near {
                            information = rotation_information(&information);
                            matched = Pose::new(r.pose.rotation, predicted.translation);
                            out.rotation_only = true;
                        }
                        let body = matched.compose(&cfg.extrinsic.inverse());
                        let obs = PoseObservation {
                            time: scan.t_start,
                            pose: body,
                            information,
                        };
                        match self.filter.update_pose(&obs) {
                            Ok(d) => {
                                out.update = Some(d);
                                out.pose = self.pose();
                            }
                            Err(
                                e @ (EskfError::DegenerateMeasurement { .. }
                                | EskfError::IllConditioned { .. }
                                | EskfError::SingularInnovation),
                            ) => out.skipped = Some(SkipReason::Degenerate(e)),
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        }
        let is_key = match &self.last_key {
            None => true,
            Some(k) => {
                let d = out.pose.boxminus(k);
                d.fixed_rows::<3>(0).norm() >= self.config.keyframe_distance
                    || d.fixed_rows::<3>(3).norm() >= self.config.keyframe_angle
            }
        };
        if !is_key {
            return Ok(out);
        }
        self.last_key = Some(out.pose);
        let world: Vec<Vec3> = near(self.config.model_range)
            .iter()
            .map(|p| out.pose.transform_point(p))
            .collect();
        self.pending.push_back((out.pose.translation, world));
        Ok(out)
    }

    /// Moves cleared keyframes into the local model.
    fn promote(&mut self, position: &Vec3) {
        let clearance = self.config.model_clearance;
        while let Some((origin, _)) = self.pending.front() {
            // The first keyframe bootstraps the model.
            if !self.window.is_empty() && (origin - position).norm() < clearance {
                break;
            }
            let Some((origin, world)) = self.pending.pop_front() else { break };
            self.model.insert(&world);
            self.window.push_back((origin, world));
        }
        while self.window.len() > self.config.window.max(1) {
            if let Some((_, old)) = self.window.pop_front() {
                self.model.remove(&old);
            }
        }
    }

    /// All stages for one scan. IMU samples up to the scan start must have
    /// been ingested; `upcoming` covers the sweep.
    pub fn process_scan(&mut self, scan: &LaserScan, upcoming: &[ImuSample]) -> Result<ScanResult, OdometryError> {
        self.advance_to(scan.t_start)?;
        let deskewed = self.deskew_scan(scan, upcoming)?;
        let (static_scan, removed, fail_open) = self.detect(deskewed);
        let update = self.match_and_update(&static_scan)?;
        Ok(ScanResult {
            update,
            static_scan,
            removed,
            detection_fail_open: fail_open,
        })
    }
}
