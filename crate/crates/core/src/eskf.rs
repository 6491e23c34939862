//! 15-state error-state Kalman filter for laser-inertial odometry.
//!
//! The nominal state `(v, p, R, a_b, w_b)` is propagated with Euler
//! integration of the IMU; the error state `(dv, dp, dtheta, da_b, dw_b)`
//! and its covariance follow the linearized discrete dynamics. Scan matching
//! produces a 6-dof pose posterior from a pose prior; the equivalent
//! measurement and its noise are recovered by inverting a Kalman update,
//! then fused as an ordinary observation of `(dp, dtheta)`, and the error is
//! injected back into the nominal state.

use alloc::vec::Vec;

use nalgebra::{Cholesky, SMatrix, SVector, SymmetricEigen, Vector6};
#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use crate::deskew::{ImuPoseBuffer, ImuPoseSample};
use crate::geometry::{right_jacobian, skew, ImuSample, Mat3, Pose, Rotation, Vec3};
use crate::sim::DEFAULT_GRAVITY;

pub type Vector15 = SVector<f64, 15>;
pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix6x15 = SMatrix<f64, 6, 15>;
pub type Matrix15x6 = SMatrix<f64, 15, 6>;

/// Block offsets in the error state.
pub const IDX_V: usize = 0;
pub const IDX_P: usize = 3;
pub const IDX_THETA: usize = 6;
pub const IDX_AB: usize = 9;
pub const IDX_WB: usize = 12;

/// Largest propagation step accepted, seconds.
pub const MAX_DT: f64 = 0.1;

/// Condition number above which the measurement gain is considered singular.
const MAX_GAIN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EskfError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("propagation step {dt} s outside (0, {MAX_DT}]")]
    InvalidStep { dt: f64 },
    #[error("degenerate measurement: matcher posterior adds no information (smallest information eigenvalue {min_eigenvalue:e})")]
    DegenerateMeasurement { min_eigenvalue: f64 },
    #[error("covariance is not symmetric positive semi-definite ({0})")]
    NotPsd(&'static str),
    #[error("measurement gain is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("no IMU propagation since the last update at t = {time}")]
    NoPropagation { time: f64 },
    #[error("measurement at t = {measurement} is stale (filter at t = {filter})")]
    StaleMeasurement { measurement: f64, filter: f64 },
    #[error("IMU sample at t = {sample} precedes filter time {filter}")]
    OutOfOrder { sample: f64, filter: f64 },
}

/// The large, nonlinearly propagated estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NominalState {
    pub velocity: Vec3,
    pub position: Vec3,
    pub rotation: Rotation,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
}

impl Default for NominalState {
    fn default() -> Self {
        Self::at_rest(&Pose::identity())
    }
}

impl NominalState {
    pub fn at_rest(pose: &Pose) -> Self {
        NominalState {
            velocity: Vec3::zeros(),
            position: pose.translation,
            rotation: pose.rotation,
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.iter().all(|v| v.is_finite())
            && self.pose().is_finite()
            && self.accel_bias.iter().all(|v| v.is_finite())
            && self.gyro_bias.iter().all(|v| v.is_finite())
    }

    /// Error state taking `self` to `truth`: `truth = self (+) dx`.
    pub fn error_to(&self, truth: &NominalState) -> ErrorState {
        ErrorState::from_parts(
            &(truth.velocity - self.velocity),
            &(truth.position - self.position),
            &self.rotation.inverse().compose(&truth.rotation).log(),
            &(truth.accel_bias - self.accel_bias),
            &(truth.gyro_bias - self.gyro_bias),
        )
    }
}

/// Error state stacked `(dv, dp, dtheta, da_b, dw_b)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ErrorState(pub Vector15);

impl ErrorState {
    pub fn zero() -> Self {
        ErrorState(Vector15::zeros())
    }

    pub fn from_parts(dv: &Vec3, dp: &Vec3, dtheta: &Vec3, dab: &Vec3, dwb: &Vec3) -> Self {
        let mut x = Vector15::zeros();
        for (offset, part) in [(IDX_V, dv), (IDX_P, dp), (IDX_THETA, dtheta), (IDX_AB, dab), (IDX_WB, dwb)] {
            x.fixed_rows_mut::<3>(offset).copy_from(part);
        }
        ErrorState(x)
    }

    fn block(&self, offset: usize) -> Vec3 {
        self.0.fixed_rows::<3>(offset).into_owned()
    }

    pub fn dv(&self) -> Vec3 {
        self.block(IDX_V)
    }
    pub fn dp(&self) -> Vec3 {
        self.block(IDX_P)
    }
    pub fn dtheta(&self) -> Vec3 {
        self.block(IDX_THETA)
    }
    pub fn dab(&self) -> Vec3 {
        self.block(IDX_AB)
    }
    pub fn dwb(&self) -> Vec3 {
        self.block(IDX_WB)
    }
}

/// 15x15 error-state covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateCovariance(pub Matrix15);

impl StateCovariance {
    /// Diagonal covariance from per-block standard deviations.
    pub fn from_std(v: f64, p: f64, theta: f64, ab: f64, wb: f64) -> Self {
        let mut d = Vector15::zeros();
        for (offset, s) in [(IDX_V, v), (IDX_P, p), (IDX_THETA, theta), (IDX_AB, ab), (IDX_WB, wb)] {
            d.fixed_rows_mut::<3>(offset).fill(s * s);
        }
        StateCovariance(Matrix15::from_diagonal(&d))
    }

    pub fn matrix(&self) -> &Matrix15 {
        &self.0
    }

    /// The `(p, theta)` block seen by the observation model.
    pub fn pose_block(&self) -> Matrix6 {
        let h = observation_matrix();
        h * self.0 * h.transpose()
    }

    pub fn symmetrized(&self) -> Self {
        StateCovariance((self.0 + self.0.transpose()) * 0.5)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.symmetrized().0).eigenvalues.min()
    }

    pub fn asymmetry(&self) -> f64 {
        (self.0 - self.0.transpose()).abs().max()
    }
}

/// White-noise and random-walk standard deviations.
///
/// `accel_noise` and `gyro_noise` are per-sample standard deviations of the
/// measurements; the walks are per square-root second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub accel_noise: Vec3,
    pub gyro_noise: Vec3,
    pub accel_walk: Vec3,
    pub gyro_walk: Vec3,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            accel_noise: Vec3::repeat(0.02),
            gyro_noise: Vec3::repeat(0.001),
            accel_walk: Vec3::repeat(1e-4),
            gyro_walk: Vec3::repeat(1e-5),
        }
    }
}

impl NoiseParams {
    pub fn is_valid(&self) -> bool {
        [self.accel_noise, self.gyro_noise, self.accel_walk, self.gyro_walk]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite() && *x >= 0.0))
    }
}

/// `H`: selects `(dp, dtheta)` from the error state.
pub fn observation_matrix() -> Matrix6x15 {
    let mut h = Matrix6x15::zeros();
    h.fixed_view_mut::<3, 3>(0, IDX_P).fill_with_identity();
    h.fixed_view_mut::<3, 3>(3, IDX_THETA).fill_with_identity();
    h
}

/// Euler step of the nominal state.
pub fn propagate_nominal(state: &NominalState, imu: &ImuSample, dt: f64, gravity: &Vec3) -> NominalState {
    let accel_world = state.rotation.rotate(&(imu.accel - state.accel_bias)) + gravity;
    NominalState {
        velocity: state.velocity + accel_world * dt,
        position: state.position + state.velocity * dt + accel_world * (0.5 * dt * dt),
        rotation: state
            .rotation
            .compose(&Rotation::exp(&((imu.gyro - state.gyro_bias) * dt))),
        accel_bias: state.accel_bias,
        gyro_bias: state.gyro_bias,
    }
}

/// Jacobian of the discrete error dynamics with respect to the error state.
pub fn error_transition(state: &NominalState, imu: &ImuSample, dt: f64) -> Matrix15 {
    let r = state.rotation.matrix();
    let a = imu.accel - state.accel_bias;
    let w = (imu.gyro - state.gyro_bias) * dt;
    let ra = r * skew(&a);
    let mut f = Matrix15::identity();
    let mut set = |row: usize, col: usize, m: Mat3| {
        f.fixed_view_mut::<3, 3>(row, col).copy_from(&m);
    };
    set(IDX_V, IDX_THETA, -ra * dt);
    set(IDX_V, IDX_AB, -r * dt);
    set(IDX_P, IDX_V, Mat3::identity() * dt);
    set(IDX_P, IDX_THETA, -ra * (0.5 * dt * dt));
    set(IDX_P, IDX_AB, -r * (0.5 * dt * dt));
    set(IDX_THETA, IDX_THETA, Rotation::exp(&w).matrix().transpose());
    set(IDX_THETA, IDX_WB, -right_jacobian(&w) * dt);
    f
}

/// `F_n Q_n F_n^T` for one step.
pub fn process_noise(state: &NominalState, noise: &NoiseParams, dt: f64) -> Matrix15 {
    let r = state.rotation.matrix();
    let mut q = Matrix15::zeros();
    let diag = |v: &Vec3| Mat3::from_diagonal(&v.component_mul(v));
    let v_block = r * diag(&noise.accel_noise) * r.transpose() * (dt * dt);
    q.fixed_view_mut::<3, 3>(IDX_V, IDX_V).copy_from(&v_block);
    q.fixed_view_mut::<3, 3>(IDX_THETA, IDX_THETA)
        .copy_from(&(diag(&noise.gyro_noise) * (dt * dt)));
    q.fixed_view_mut::<3, 3>(IDX_AB, IDX_AB)
        .copy_from(&(diag(&noise.accel_walk) * dt));
    q.fixed_view_mut::<3, 3>(IDX_WB, IDX_WB)
        .copy_from(&(diag(&noise.gyro_walk) * dt));
    q
}

/// One prediction step: nominal Euler integration plus
/// `Sigma+ = F_x Sigma F_x^T + F_n Q_n F_n^T`.
pub fn propagate(
    state: &NominalState,
    cov: &StateCovariance,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseParams,
    gravity: &Vec3,
) -> Result<(NominalState, StateCovariance), EskfError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(EskfError::InvalidStep { dt });
    }
    if !state.is_finite() {
        return Err(EskfError::NonFinite("nominal state"));
    }
    if !(imu.accel.iter().chain(imu.gyro.iter()).all(|v| v.is_finite())) {
        return Err(EskfError::NonFinite("imu sample"));
    }
    if !cov.0.iter().all(|v| v.is_finite()) {
        return Err(EskfError::NonFinite("covariance"));
    }
    let f = error_transition(state, imu, dt);
    let next = propagate_nominal(state, imu, dt, gravity);
    let sigma = f * cov.0 * f.transpose() + process_noise(state, noise, dt);
    Ok((next, StateCovariance(sigma).symmetrized()))
}

/// A 6-dof Gaussian over `(dp, dtheta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian6 {
    pub mean: Vector6<f64>,
    pub cov: Matrix6,
}

/// Prior handed to the scan matcher and the posterior it returned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseMeasurement {
    pub prior: Gaussian6,
    pub posterior: Gaussian6,
}

impl PoseMeasurement {
    /// Treats a matcher result as a Bayesian update of `prior`: the matcher
    /// observed the increment `offset` with information `information`.
    pub fn from_match(prior: Gaussian6, offset: &Vector6<f64>, information: &Matrix6) -> Result<Self, EskfError> {
        let prior_info = spd_inverse(&prior.cov).ok_or(EskfError::NotPsd("prior"))?;
        let post_info = sym(&(prior_info + information));
        let post_cov = spd_inverse(&post_info).ok_or(EskfError::NotPsd("posterior"))?;
        let mean = post_cov * (prior_info * prior.mean + information * offset);
        Ok(PoseMeasurement {
            prior,
            posterior: Gaussian6 { mean, cov: post_cov },
        })
    }
}

/// Measurement and noise equivalent to a matcher's prior-to-posterior update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveredMeasurement {
    pub value: Vector6<f64>,
    pub noise: Matrix6,
    /// `K^m`, the gain of the inverted update.
    pub gain: Matrix6,
}

fn sym(m: &Matrix6) -> Matrix6 {
    (m + m.transpose()) * 0.5
}

fn spd_inverse<const N: usize>(m: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    Cholesky::new(*m).map(|c| c.inverse())
}

fn check_psd(m: &Matrix6, what: &'static str) -> Result<(), EskfError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(EskfError::NonFinite(what));
    }
    let scale = m.abs().max().max(1e-300);
    if (m - m.transpose()).abs().max() > 1e-9 * scale {
        return Err(EskfError::NotPsd(what));
    }
    if SymmetricEigen::new(sym(m)).eigenvalues.min() < -1e-9 * scale {
        return Err(EskfError::NotPsd(what));
    }
    Ok(())
}

/// Recovers `(dy, C)` such that a Kalman update of the prior with `dy` and
/// noise `C` reproduces the posterior:
///
/// `C = (Sigma_post^-1 - Sigma_prior^-1)^-1`,
/// `K = Sigma_prior (Sigma_prior + C)^-1`,
/// `dy = K^-1 (x_post - x_prior) + x_prior`.
pub fn recover_measurement(prior: &Gaussian6, posterior: &Gaussian6) -> Result<RecoveredMeasurement, EskfError> {
    check_psd(&prior.cov, "matcher prior")?;
    check_psd(&posterior.cov, "matcher posterior")?;
    let prior_info = spd_inverse(&prior.cov).ok_or(EskfError::NotPsd("matcher prior"))?;
    let post_info = spd_inverse(&posterior.cov).ok_or(EskfError::DegenerateMeasurement { min_eigenvalue: 0.0 })?;
    let gained = sym(&(post_info - prior_info));
    let min_eigenvalue = SymmetricEigen::new(gained).eigenvalues.min();
    let scale = post_info.abs().max();
    if !(min_eigenvalue > 1e-12 * scale) {
        return Err(EskfError::DegenerateMeasurement { min_eigenvalue });
    }
    let noise = spd_inverse(&gained).ok_or(EskfError::DegenerateMeasurement { min_eigenvalue })?;
    let innovation_cov = sym(&(prior.cov + noise));
    let gain = prior.cov * spd_inverse(&innovation_cov).ok_or(EskfError::SingularInnovation)?;
    let sv = gain.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_GAIN_CONDITION) {
        return Err(EskfError::IllConditioned { condition });
    }
    let delta = gain
        .lu()
        .solve(&(posterior.mean - prior.mean))
        .ok_or(EskfError::IllConditioned { condition })?;
    Ok(RecoveredMeasurement {
        value: delta + prior.mean,
        noise,
        gain,
    })
}

/// Covariance update form used by [`correct`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CovarianceUpdate {
    /// `(I - K H) Sigma`, symmetrized.
    #[default]
    Standard,
    /// `(I - K H) Sigma (I - K H)^T + K C K^T`.
    Joseph,
}

/// `K = Sigma H^T (H Sigma H^T + C)^-1`.
pub fn kalman_gain(cov: &StateCovariance, noise: &Matrix6) -> Result<Matrix15x6, EskfError> {
    let h = observation_matrix();
    let s = sym(&(h * cov.0 * h.transpose() + noise));
    let s_inv = spd_inverse(&s)
        .or_else(|| s.try_inverse())
        .ok_or(EskfError::SingularInnovation)?;
    Ok(cov.0 * h.transpose() * s_inv)
}

/// The gain exactly as printed in the source formulation, without the
/// inverse. Its units do not match a gain; kept to demonstrate that.
#[cfg(test)]
pub(crate) fn kalman_gain_literal(cov: &StateCovariance, noise: &Matrix6) -> Matrix15x6 {
    let h = observation_matrix();
    cov.0 * h.transpose() * (h * cov.0 * h.transpose() + noise)
}

/// Fuses a recovered pose measurement into the error state.
pub fn correct(
    cov: &StateCovariance,
    prior_error: &ErrorState,
    measurement: &Vector6<f64>,
    noise: &Matrix6,
    update: CovarianceUpdate,
) -> Result<(ErrorState, StateCovariance), EskfError> {
    check_psd(noise, "measurement noise")?;
    let h = observation_matrix();
    let k = kalman_gain(cov, noise)?;
    let innovation = measurement - h * prior_error.0;
    let dx = prior_error.0 + k * innovation;
    let ikh = Matrix15::identity() - k * h;
    let sigma = match update {
        CovarianceUpdate::Standard => ikh * cov.0,
        CovarianceUpdate::Joseph => ikh * cov.0 * ikh.transpose() + k * noise * k.transpose(),
    };
    Ok((ErrorState(dx), StateCovariance(sigma).symmetrized()))
}

/// Injects the error into the nominal state.
pub fn reset(state: &NominalState, dx: &ErrorState) -> NominalState {
    NominalState {
        velocity: state.velocity + dx.dv(),
        position: state.position + dx.dp(),
        rotation: state.rotation.compose(&Rotation::exp(&dx.dtheta())),
        accel_bias: state.accel_bias + dx.dab(),
        gyro_bias: state.gyro_bias + dx.dwb(),
    }
}

/// Normalized estimation error squared of `estimate` against `truth`.
pub fn nees(truth: &NominalState, estimate: &NominalState, cov: &StateCovariance) -> f64 {
    let e = estimate.error_to(truth).0;
    match Cholesky::new(cov.symmetrized().0) {
        Some(c) => e.dot(&c.solve(&e)),
        None => f64::INFINITY,
    }
}

/// Initial standard deviations per error block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialStd {
    pub velocity: f64,
    pub position: f64,
    pub orientation: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
}

impl Default for InitialStd {
    fn default() -> Self {
        InitialStd {
            velocity: 0.1,
            position: 0.1,
            orientation: 0.05,
            accel_bias: 0.05,
            gyro_bias: 0.01,
        }
    }
}

impl InitialStd {
    pub fn covariance(&self) -> StateCovariance {
        StateCovariance::from_std(
            self.velocity,
            self.position,
            self.orientation,
            self.accel_bias,
            self.gyro_bias,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EskfConfig {
    pub gravity: Vec3,
    pub noise: NoiseParams,
    pub initial_std: InitialStd,
    pub covariance_update: CovarianceUpdate,
    /// Measurements older than the filter time by more than this are dropped.
    pub staleness: f64,
}

impl Default for EskfConfig {
    fn default() -> Self {
        EskfConfig {
            gravity: DEFAULT_GRAVITY,
            noise: NoiseParams::default(),
            initial_std: InitialStd::default(),
            covariance_update: CovarianceUpdate::Standard,
            staleness: 0.05,
        }
    }
}

/// An absolute pose observation from scan matching with its information
/// matrix over `(dp, dtheta)` at the observed pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseObservation {
    pub time: f64,
    pub pose: Pose,
    pub information: Matrix6,
}

/// Per-update health record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateDiagnostics {
    pub time: f64,
    pub innovation: Vector6<f64>,
    /// Normalized innovation squared.
    pub nis: f64,
    /// Frobenius norm of the 15x6 gain.
    pub gain_norm: f64,
    pub correction: ErrorState,
}

/// Filter instance: the single owner of the estimate.
#[derive(Clone, Debug)]
pub struct Eskf {
    state: NominalState,
    cov: StateCovariance,
    time: f64,
    last_imu: Option<ImuSample>,
    propagated: bool,
    config: EskfConfig,
}

impl Eskf {
    pub fn new(state: NominalState, time: f64, config: EskfConfig) -> Self {
        Eskf {
            state,
            cov: config.initial_std.covariance(),
            time,
            last_imu: None,
            propagated: true,
            config,
        }
    }

    pub fn with_covariance(mut self, cov: StateCovariance) -> Self {
        self.cov = cov;
        self
    }

    pub fn state(&self) -> &NominalState {
        &self.state
    }

    pub fn covariance(&self) -> &StateCovariance {
        &self.cov
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn config(&self) -> &EskfConfig {
        &self.config
    }

    pub fn last_imu(&self) -> Option<&ImuSample> {
        self.last_imu.as_ref()
    }

    /// Propagates up to the sample's time with the previous sample held
    /// constant, then latches the new sample.
    pub fn ingest_imu(&mut self, sample: &ImuSample) -> Result<(), EskfError> {
        if sample.timestamp < self.time - 1e-9 {
            return Err(EskfError::OutOfOrder {
                sample: sample.timestamp,
                filter: self.time,
            });
        }
        match self.last_imu {
            Some(_) => self.advance_to(sample.timestamp)?,
            None => self.time = self.time.max(sample.timestamp),
        }
        self.last_imu = Some(*sample);
        Ok(())
    }

    /// Propagates with the latched sample up to `t`, in steps of at most
    /// [`MAX_DT`].
    pub fn advance_to(&mut self, t: f64) -> Result<(), EskfError> {
        let Some(imu) = self.last_imu else {
            return Ok(());
        };
        while t - self.time > 1e-12 {
            let remaining = t - self.time;
            let dt = remaining.min(MAX_DT);
            let (s, c) = propagate(&self.state, &self.cov, &imu, dt, &self.config.noise, &self.config.gravity)?;
            self.state = s;
            self.cov = c;
            self.time = if dt == remaining { t } else { self.time + dt };
            self.propagated = true;
        }
        self.time = self.time.max(t);
        Ok(())
    }

    /// Dead-reckons the nominal state (no covariance) from the current time
    /// through `upcoming` samples until `t_end`, recording every step.
    pub fn predict_buffer(&self, upcoming: &[ImuSample], t_end: f64) -> ImuPoseBuffer {
        let mut buffer = ImuPoseBuffer::new();
        let mut state = self.state;
        let mut time = self.time;
        let push = |buffer: &mut ImuPoseBuffer, t: f64, s: &NominalState| {
            let r = buffer.push(ImuPoseSample {
                time: t,
                position: s.position,
                velocity: s.velocity,
                rotation: s.rotation,
            });
            debug_assert!(r.is_ok());
        };
        push(&mut buffer, time, &state);
        let mut held = self.last_imu;
        let t0 = self.time;
        let mut samples = upcoming.iter().filter(|s| s.timestamp > t0).peekable();
        while time < t_end - 1e-12 {
            let next_t = samples.peek().map_or(t_end, |s| s.timestamp.min(t_end));
            let Some(imu) = held.or_else(|| samples.peek().copied().copied()) else {
                break;
            };
            let mut remaining = next_t - time;
            while remaining > 1e-12 {
                let dt = remaining.min(MAX_DT);
                state = propagate_nominal(&state, &imu, dt, &self.config.gravity);
                remaining -= dt;
            }
            time = next_t;
            push(&mut buffer, time, &state);
            if let Some(s) = samples.peek() {
                if s.timestamp <= next_t {
                    held = Some(**s);
                    samples.next();
                }
            }
        }
        buffer
    }

    /// The matcher prior `(0, H Sigma H^T)` at the current time.
    pub fn pose_prior(&self) -> Gaussian6 {
        Gaussian6 {
            mean: Vector6::zeros(),
            cov: sym(&self.cov.pose_block()),
        }
    }

    /// Full measurement update from a matcher prior/posterior pair.
    pub fn update(&mut self, measurement: &PoseMeasurement) -> Result<UpdateDiagnostics, EskfError> {
        if !self.propagated {
            return Err(EskfError::NoPropagation { time: self.time });
        }
        let recovered = recover_measurement(&measurement.prior, &measurement.posterior)?;
        let h = observation_matrix();
        let prior_error = ErrorState::zero();
        let innovation = recovered.value - h * prior_error.0;
        let s = sym(&(h * self.cov.0 * h.transpose() + recovered.noise));
        let nis = spd_inverse(&s).map_or(f64::INFINITY, |si| innovation.dot(&(si * innovation)));
        let gain_norm = kalman_gain(&self.cov, &recovered.noise)?.norm();
        let (dx, cov) = correct(
            &self.cov,
            &prior_error,
            &recovered.value,
            &recovered.noise,
            self.config.covariance_update,
        )?;
        self.state = reset(&self.state, &dx);
        self.cov = cov;
        self.propagated = false;
        Ok(UpdateDiagnostics {
            time: self.time,
            innovation,
            nis,
            gain_norm,
            correction: dx,
        })
    }

    /// Update from an absolute pose observation at the current filter time.
    pub fn update_pose(&mut self, obs: &PoseObservation) -> Result<UpdateDiagnostics, EskfError> {
        if obs.time < self.time - self.config.staleness {
            return Err(EskfError::StaleMeasurement {
                measurement: obs.time,
                filter: self.time,
            });
        }
        if !self.propagated {
            return Err(EskfError::NoPropagation { time: self.time });
        }
        let offset = obs.pose.boxminus(&self.state.pose());
        let measurement = PoseMeasurement::from_match(self.pose_prior(), &offset, &obs.information)?;
        self.update(&measurement)
    }
}

/// Output of [`run_odometry`].
#[derive(Clone, Debug)]
pub struct OdometryRun {
    /// One pose per IMU sample.
    pub trajectory: Vec<(f64, Pose)>,
    pub buffer: ImuPoseBuffer,
    pub states: Vec<(f64, NominalState)>,
    pub diagnostics: Vec<UpdateDiagnostics>,
    /// Indices of measurements dropped as stale.
    pub dropped: Vec<usize>,
}

/// Batch driver: propagates on every IMU sample and applies each pose
/// observation at its timestamp.
pub fn run_odometry(
    initial: NominalState,
    initial_time: f64,
    imu: &[ImuSample],
    observations: &[PoseObservation],
    config: EskfConfig,
) -> Result<OdometryRun, EskfError> {
    let mut filter = Eskf::new(initial, initial_time, config);
    let mut run = OdometryRun {
        trajectory: Vec::with_capacity(imu.len()),
        buffer: ImuPoseBuffer::new(),
        states: Vec::with_capacity(imu.len()),
        diagnostics: Vec::new(),
        dropped: Vec::new(),
    };
    let mut next_obs = 0;
    let mut apply_due = |filter: &mut Eskf, run: &mut OdometryRun, until: f64| -> Result<(), EskfError> {
        while next_obs < observations.len() && observations[next_obs].time <= until {
            let obs = &observations[next_obs];
            if obs.time > filter.time() {
                filter.advance_to(obs.time)?;
            }
            match filter.update_pose(obs) {
                Ok(d) => run.diagnostics.push(d),
                Err(EskfError::StaleMeasurement { .. }) => run.dropped.push(next_obs),
                Err(e) => return Err(e),
            }
            next_obs += 1;
        }
        Ok(())
    };
    for sample in imu {
        apply_due(&mut filter, &mut run, sample.timestamp - 1e-12)?;
        filter.ingest_imu(sample)?;
        apply_due(&mut filter, &mut run, sample.timestamp)?;
        let s = *filter.state();
        run.trajectory.push((filter.time(), s.pose()));
        run.states.push((filter.time(), s));
        let pushed = run.buffer.push(ImuPoseSample {
            time: filter.time(),
            position: s.position,
            velocity: s.velocity,
            rotation: s.rotation,
        });
        debug_assert!(pushed.is_ok());
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn imu(accel: Vec3, gyro: Vec3) -> ImuSample {
        ImuSample {
            timestamp: 0.0,
            accel,
            gyro,
        }
    }

    #[test]
    fn stationary_equilibrium() {
        let state = NominalState::default();
        let cov = InitialStd::default().covariance();
        let (next, sigma) = propagate(
            &state,
            &cov,
            &imu(Vec3::new(0.0, 0.0, 9.81), Vec3::zeros()),
            0.01,
            &NoiseParams::default(),
            &DEFAULT_GRAVITY,
        )
        .unwrap();
        assert_relative_eq!(next.velocity, Vec3::zeros(), epsilon = 1e-15);
        assert_relative_eq!(next.position, Vec3::zeros(), epsilon = 1e-15);
        assert_eq!(next.rotation, state.rotation);
        // Position variance grows by the velocity contribution.
        assert!(sigma.0[(IDX_P, IDX_P)] > cov.0[(IDX_P, IDX_P)]);
        assert!(sigma.0.trace() > cov.0.trace());
    }

    #[test]
    fn unit_world_acceleration_step() {
        let state = NominalState::default();
        let (next, _) = propagate(
            &state,
            &InitialStd::default().covariance(),
            &imu(Vec3::new(1.0, 0.0, 9.81), Vec3::zeros()),
            0.01,
            &NoiseParams::default(),
            &DEFAULT_GRAVITY,
        )
        .unwrap();
        assert_relative_eq!(next.velocity, Vec3::new(0.01, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(next.position, Vec3::new(5e-5, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_steps() {
        let state = NominalState::default();
        let cov = InitialStd::default().covariance();
        let s = imu(Vec3::zeros(), Vec3::zeros());
        for dt in [0.0, -0.01, 0.2] {
            assert_eq!(
                propagate(&state, &cov, &s, dt, &NoiseParams::default(), &DEFAULT_GRAVITY),
                Err(EskfError::InvalidStep { dt })
            );
        }
        let bad = imu(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::zeros());
        assert!(matches!(
            propagate(&state, &cov, &bad, 0.01, &NoiseParams::default(), &DEFAULT_GRAVITY),
            Err(EskfError::NonFinite(_))
        ));
    }

    #[test]
    fn zero_innovation_returns_prior_mean() {
        let prior = Gaussian6 {
            mean: Vector6::new(0.1, -0.2, 0.3, 0.01, 0.02, -0.03),
            cov: Matrix6::from_diagonal(&Vector6::repeat(0.04)),
        };
        let posterior = Gaussian6 {
            mean: prior.mean,
            cov: Matrix6::from_diagonal(&Vector6::new(0.01, 0.02, 0.03, 0.001, 0.002, 0.003)),
        };
        let r = recover_measurement(&prior, &posterior).unwrap();
        assert_relative_eq!(r.value, prior.mean, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_when_posterior_not_tighter() {
        let prior = Gaussian6 {
            mean: Vector6::zeros(),
            cov: Matrix6::identity() * 0.1,
        };
        let mut cov = Matrix6::identity() * 0.05;
        cov[(2, 2)] = 0.1; // no information gained on z
        let posterior = Gaussian6 {
            mean: Vector6::zeros(),
            cov,
        };
        assert!(matches!(
            recover_measurement(&prior, &posterior),
            Err(EskfError::DegenerateMeasurement { .. })
        ));
        cov[(2, 2)] = 0.2; // inflated
        let posterior = Gaussian6 {
            mean: Vector6::zeros(),
            cov,
        };
        assert!(matches!(
            recover_measurement(&prior, &posterior),
            Err(EskfError::DegenerateMeasurement { .. })
        ));
    }

    #[test]
    fn literal_gain_scales_with_noise_instead_of_inversely() {
        let cov = InitialStd::default().covariance();
        let c = Matrix6::identity() * 0.01;
        let k1 = kalman_gain(&cov, &c).unwrap();
        let k2 = kalman_gain(&cov, &(c * 100.0)).unwrap();
        let l1 = kalman_gain_literal(&cov, &c);
        let l2 = kalman_gain_literal(&cov, &(c * 100.0));
        // A noisier measurement must shrink the gain.
        assert!(k2.norm() < k1.norm());
        assert!(l2.norm() > l1.norm());
        // The inverted gain maps position to position with a dimensionless
        // factor in (0, 1); the literal one carries units of m^4.
        let kpp = k1[(IDX_P, 0)];
        assert!(kpp > 0.0 && kpp < 1.0);
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let cov = InitialStd::default().covariance();
        let c = Matrix6::identity() * 1e12;
        let y = Vector6::new(1.0, 2.0, 3.0, 0.1, 0.2, 0.3);
        let (dx, sigma) = correct(&cov, &ErrorState::zero(), &y, &c, CovarianceUpdate::Standard).unwrap();
        assert!(dx.0.norm() < 1e-10);
        assert_relative_eq!(sigma.0, cov.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_measurement_pins_position() {
        let mut cov = InitialStd::default().covariance();
        for i in 0..3 {
            cov.0[(IDX_P + i, IDX_P + i)] = 1e6;
        }
        let eps = 1e-8;
        let y = Vector6::new(1.0, -2.0, 0.5, 0.0, 0.0, 0.0);
        let (dx, sigma) =
            correct(&cov, &ErrorState::zero(), &y, &(Matrix6::identity() * eps), CovarianceUpdate::Standard).unwrap();
        assert_relative_eq!(dx.dp(), Vec3::new(1.0, -2.0, 0.5), epsilon = 1e-9);
        for i in 0..3 {
            assert!(sigma.0[(IDX_P + i, IDX_P + i)] < 2.0 * eps);
        }
    }

    #[test]
    fn reset_injects_error() {
        let state = NominalState::default();
        assert_eq!(reset(&state, &ErrorState::zero()), state);
        let dx = ErrorState::from_parts(
            &Vec3::zeros(),
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.0, 0.1),
            &Vec3::zeros(),
            &Vec3::zeros(),
        );
        let r = reset(&state, &dx).rotation;
        assert_relative_eq!(
            r.matrix(),
            crate::geometry::rotation_from_vector(&Vec3::new(0.0, 0.0, 0.1)).matrix(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn update_without_propagation_errors() {
        let mut f = Eskf::new(NominalState::default(), 0.0, EskfConfig::default());
        let obs = PoseObservation {
            time: 0.0,
            pose: Pose::identity(),
            information: Matrix6::identity() * 1e4,
        };
        f.update_pose(&obs).unwrap();
        assert_eq!(f.update_pose(&obs), Err(EskfError::NoPropagation { time: 0.0 }));
        let s = ImuSample {
            timestamp: 0.0,
            accel: Vec3::new(0.0, 0.0, 9.81),
            gyro: Vec3::zeros(),
        };
        f.ingest_imu(&s).unwrap();
        f.ingest_imu(&ImuSample { timestamp: 0.01, ..s }).unwrap();
        assert!(f.update_pose(&PoseObservation { time: 0.01, ..obs }).is_ok());
    }

    #[test]
    fn stale_measurement_dropped() {
        let imu: Vec<ImuSample> = (0..50)
            .map(|k| ImuSample {
                timestamp: k as f64 * 0.01,
                accel: Vec3::new(0.0, 0.0, 9.81),
                gyro: Vec3::zeros(),
            })
            .collect();
        let obs = [PoseObservation {
            time: 0.2,
            pose: Pose::identity(),
            information: Matrix6::identity() * 1e4,
        }];
        let run = run_odometry(NominalState::default(), 0.0, &imu, &obs, EskfConfig::default()).unwrap();
        assert_eq!(run.diagnostics.len(), 1);
        assert_eq!(run.trajectory.len(), 50);
        let mut f = Eskf::new(NominalState::default(), 0.0, EskfConfig::default());
        for s in &imu {
            f.ingest_imu(s).unwrap();
        }
        assert!(matches!(f.update_pose(&obs[0]), Err(EskfError::StaleMeasurement { .. })));
    }

    #[test]
    fn predict_buffer_dead_reckons() {
        let mut f = Eskf::new(NominalState::default(), 0.0, EskfConfig::default());
        let samples: Vec<ImuSample> = (0..30)
            .map(|k| ImuSample {
                timestamp: k as f64 * 0.01,
                accel: Vec3::new(2.0, 0.0, 9.81),
                gyro: Vec3::zeros(),
            })
            .collect();
        f.ingest_imu(&samples[0]).unwrap();
        let buf = f.predict_buffer(&samples[1..], 0.105);
        let last = buf.samples().last().unwrap();
        assert_relative_eq!(last.time, 0.105, epsilon = 1e-12);
        assert_relative_eq!(last.velocity.x, 2.0 * 0.105, epsilon = 1e-12);
        assert_relative_eq!(last.position.x, 0.5 * 2.0 * 0.105 * 0.105, epsilon = 1e-12);
        // The live filter is untouched.
        assert_eq!(f.time(), 0.0);
    }
}
