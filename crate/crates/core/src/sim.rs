//! Synthetic lidar and IMU data with exact ground truth.
//!
//! A [`WorldModel`] holds static planes and boxes plus rigid boxes moving on
//! piecewise-linear paths. A [`TrajectoryProfile`] is an analytic,
//! infinitely differentiable pose function, so accelerometer and gyroscope
//! signals are available in closed form. [`render_scan`] raycasts every beam
//! from the true sensor pose at that beam's own emission time, which bakes
//! genuine motion distortion into the scan.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{
    ImuSample, ImuTrack, LaserScan, Pose, Rotation, TimedPoint, Vec3, LABEL_DYNAMIC,
    LABEL_STATIC,
};

/// Gravity in the z-up world frame, m/s^2.
pub const DEFAULT_GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    /// Angular frequency, rad/s.
    pub frequency: f64,
    pub phase: f64,
}

/// Cubic polynomial plus a sum of sinusoids, with analytic derivatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Signal {
    pub coeffs: [f64; 4],
    pub waves: Vec<Wave>,
}

impl Signal {
    pub fn constant(c: f64) -> Self {
        Signal {
            coeffs: [c, 0.0, 0.0, 0.0],
            waves: Vec::new(),
        }
    }

    pub fn polynomial(coeffs: [f64; 4]) -> Self {
        Signal {
            coeffs,
            waves: Vec::new(),
        }
    }

    pub fn with_wave(mut self, amplitude: f64, frequency: f64, phase: f64) -> Self {
        self.waves.push(Wave {
            amplitude,
            frequency,
            phase,
        });
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        let poly = c0 + t * (c1 + t * (c2 + t * c3));
        poly + self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.frequency * t + w.phase).sin())
            .sum::<f64>()
    }

    pub fn rate(&self, t: f64) -> f64 {
        let [_, c1, c2, c3] = self.coeffs;
        let poly = c1 + t * (2.0 * c2 + t * 3.0 * c3);
        poly + self
            .waves
            .iter()
            .map(|w| w.amplitude * w.frequency * (w.frequency * t + w.phase).cos())
            .sum::<f64>()
    }

    pub fn accel(&self, t: f64) -> f64 {
        let [_, _, c2, c3] = self.coeffs;
        let poly = 2.0 * c2 + 6.0 * c3 * t;
        poly - self
            .waves
            .iter()
            .map(|w| w.amplitude * w.frequency * w.frequency * (w.frequency * t + w.phase).sin())
            .sum::<f64>()
    }
}

/// Exact kinematics of the body at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicState {
    pub pose: Pose,
    /// World-frame velocity.
    pub velocity: Vec3,
    /// World-frame acceleration.
    pub acceleration: Vec3,
    /// Body-frame angular velocity.
    pub angular_velocity: Vec3,
}

/// Analytic ground-truth motion.
#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryProfile {
    /// Independent signals for position and `Rz(yaw) Ry(pitch) Rx(roll)` angles.
    Free {
        x: Signal,
        y: Signal,
        z: Signal,
        roll: Signal,
        pitch: Signal,
        yaw: Signal,
    },
    /// A car-like path: `x = along(t)`, `y = lateral(x)`, constant height,
    /// heading tangent to the path.
    Road {
        along: Signal,
        lateral: Signal,
        height: f64,
    },
}

impl TrajectoryProfile {
    pub fn stationary(pose: &Pose) -> Self {
        let t = pose.translation;
        let e = pose.rotation.quaternion().euler_angles();
        TrajectoryProfile::Free {
            x: Signal::constant(t.x),
            y: Signal::constant(t.y),
            z: Signal::constant(t.z),
            roll: Signal::constant(e.0),
            pitch: Signal::constant(e.1),
            yaw: Signal::constant(e.2),
        }
    }

    /// Straight motion along +x with constant velocity and acceleration.
    pub fn straight(x0: f64, speed: f64, accel: f64, height: f64) -> Self {
        TrajectoryProfile::Free {
            x: Signal::polynomial([x0, speed, 0.5 * accel, 0.0]),
            y: Signal::constant(0.0),
            z: Signal::constant(height),
            roll: Signal::constant(0.0),
            pitch: Signal::constant(0.0),
            yaw: Signal::constant(0.0),
        }
    }

    pub fn state(&self, t: f64) -> KinematicState {
        match self {
            TrajectoryProfile::Free {
                x,
                y,
                z,
                roll,
                pitch,
                yaw,
            } => {
                let (phi, theta, psi) = (roll.value(t), pitch.value(t), yaw.value(t));
                let (dphi, dtheta, dpsi) = (roll.rate(t), pitch.rate(t), yaw.rate(t));
                let (sp, cp) = (phi.sin(), phi.cos());
                let (st, ct) = (theta.sin(), theta.cos());
                let angular_velocity = Vec3::new(
                    dphi - dpsi * st,
                    dtheta * cp + dpsi * sp * ct,
                    -dtheta * sp + dpsi * cp * ct,
                );
                KinematicState {
                    pose: Pose::new(
                        Rotation::from_euler(phi, theta, psi),
                        Vec3::new(x.value(t), y.value(t), z.value(t)),
                    ),
                    velocity: Vec3::new(x.rate(t), y.rate(t), z.rate(t)),
                    acceleration: Vec3::new(x.accel(t), y.accel(t), z.accel(t)),
                    angular_velocity,
                }
            }
            TrajectoryProfile::Road {
                along,
                lateral,
                height,
            } => {
                let (s, ds, dds) = (along.value(t), along.rate(t), along.accel(t));
                let (y, dy, ddy) = (lateral.value(s), lateral.rate(s), lateral.accel(s));
                let heading = dy.atan();
                let heading_rate = ddy * ds / (1.0 + dy * dy);
                KinematicState {
                    pose: Pose::new(
                        Rotation::from_euler(0.0, 0.0, heading),
                        Vec3::new(s, y, *height),
                    ),
                    velocity: Vec3::new(ds, dy * ds, 0.0),
                    acceleration: Vec3::new(dds, ddy * ds * ds + dy * dds, 0.0),
                    angular_velocity: Vec3::new(0.0, 0.0, heading_rate),
                }
            }
        }
    }

    pub fn pose(&self, t: f64) -> Pose {
        self.state(t).pose
    }

    /// Largest speed and angular speed seen on a 10 ms grid over `[t0, t1]`.
    pub fn max_rates(&self, t0: f64, t1: f64) -> (f64, f64) {
        let n = ((t1 - t0) / 0.01).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| self.state(t0 + (t1 - t0) * k as f64 / n as f64))
            .fold((0.0f64, 0.0f64), |(v, w), s| {
                (v.max(s.velocity.norm()), w.max(s.angular_velocity.norm()))
            })
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Aabb {
            min: center - half,
            max: center + half,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Entry distance of the ray `origin + s * dir` for `s > 0`.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        slab_entry(&self.min, &self.max, origin, dir)
    }
}

fn slab_entry(min: &Vec3, max: &Vec3, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if dir[i].abs() < 1e-300 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let mut a = (min[i] - origin[i]) * inv;
        let mut b = (max[i] - origin[i]) * inv;
        if a > b {
            core::mem::swap(&mut a, &mut b);
        }
        t_near = t_near.max(a);
        t_far = t_far.min(b);
        if t_near > t_far {
            return None;
        }
    }
    if t_far <= 0.0 {
        return None;
    }
    // An origin inside the box reports no hit.
    (t_near > 0.0).then_some(t_near)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Infinite plane `coord[axis] == offset`.
    Plane { axis: usize, offset: f64 },
    Box(Aabb),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    /// Reported as the return intensity.
    pub reflectivity: f64,
}

impl Surface {
    pub fn plane(axis: usize, offset: f64, reflectivity: f64) -> Self {
        Surface {
            shape: Shape::Plane { axis, offset },
            reflectivity,
        }
    }

    pub fn cuboid(min: Vec3, max: Vec3, reflectivity: f64) -> Self {
        Surface {
            shape: Shape::Box(Aabb::new(min, max)),
            reflectivity,
        }
    }

    fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match self.shape {
            Shape::Plane { axis, offset } => {
                if dir[axis].abs() < 1e-12 {
                    return None;
                }
                let s = (offset - origin[axis]) / dir[axis];
                (s > 0.0).then_some(s)
            }
            Shape::Box(b) => b.ray_entry(origin, dir),
        }
    }

    /// Whether the surface can be hit from within `radius` of `center`.
    fn near(&self, center: &Vec3, radius: f64) -> bool {
        match self.shape {
            Shape::Plane { .. } => true,
            Shape::Box(b) => {
                let closest = Vec3::new(
                    center.x.clamp(b.min.x, b.max.x),
                    center.y.clamp(b.min.y, b.max.y),
                    center.z.clamp(b.min.z, b.max.z),
                );
                (closest - center).norm() <= radius
            }
        }
    }
}

/// A rigid box following a piecewise-linear trajectory. Outside the
/// waypoint span the box holds its first or last pose.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingBox {
    pub half_extent: Vec3,
    /// `(time, pose of the box center)`, strictly increasing in time.
    pub waypoints: Vec<(f64, Pose)>,
    pub reflectivity: f64,
}

impl MovingBox {
    pub fn pose_at(&self, t: f64) -> Pose {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return w[0].1;
        }
        if t >= w[w.len() - 1].0 {
            return w[w.len() - 1].1;
        }
        let k = w.partition_point(|(tk, _)| *tk <= t) - 1;
        let (t0, p0) = w[k];
        let (t1, p1) = w[k + 1];
        let s = (t - t0) / (t1 - t0);
        Pose::new(
            p0.rotation.interpolate(&p1.rotation, s),
            p0.translation * (1.0 - s) + p1.translation * s,
        )
    }

    pub fn contains(&self, t: f64, p: &Vec3) -> bool {
        let local = self.pose_at(t).inverse().transform_point(p);
        (0..3).all(|i| local[i].abs() <= self.half_extent[i])
    }

    fn ray_entry(&self, t: f64, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let pose = self.pose_at(t);
        let o = pose.inverse().transform_point(origin);
        let d = pose.rotation.inverse_rotate(dir);
        slab_entry(&-self.half_extent, &self.half_extent, &o, &d)
    }

    fn bounding_radius(&self) -> f64 {
        self.half_extent.norm()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldModel {
    pub static_surfaces: Vec<Surface>,
    pub dynamic_objects: Vec<MovingBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub reflectivity: f64,
    /// Index into `dynamic_objects` when a moving box was hit.
    pub dynamic: Option<usize>,
}

impl WorldModel {
    /// Nearest hit within `[min_range, max_range]`.
    pub fn cast(&self, t: f64, origin: &Vec3, dir: &Vec3, min_range: f64, max_range: f64) -> Option<RayHit> {
        let statics = 0..self.static_surfaces.len();
        let dynamics = 0..self.dynamic_objects.len();
        self.cast_subset(t, origin, dir, min_range, max_range, statics, dynamics)
    }

    #[allow(clippy::too_many_arguments)]
    fn cast_subset(
        &self,
        t: f64,
        origin: &Vec3,
        dir: &Vec3,
        min_range: f64,
        max_range: f64,
        statics: impl IntoIterator<Item = usize>,
        dynamics: impl IntoIterator<Item = usize>,
    ) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut consider = |range: f64, reflectivity: f64, dynamic: Option<usize>| {
            if range >= min_range && range <= max_range && best.is_none_or(|b| range < b.range) {
                best = Some(RayHit {
                    range,
                    reflectivity,
                    dynamic,
                });
            }
        };
        for i in statics {
            let s = &self.static_surfaces[i];
            if let Some(r) = s.ray_entry(origin, dir) {
                consider(r, s.reflectivity, None);
            }
        }
        for i in dynamics {
            let b = &self.dynamic_objects[i];
            if let Some(r) = b.ray_entry(t, origin, dir) {
                consider(r, b.reflectivity, Some(i));
            }
        }
        best
    }

    /// Whether `p` lies inside any moving box at time `t`.
    pub fn inside_dynamic(&self, t: f64, p: &Vec3) -> bool {
        self.dynamic_objects.iter().any(|b| b.contains(t, p))
    }
}

/// Spinning multi-ring lidar model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarConfig {
    pub rings: usize,
    /// Lowest and highest beam elevation, radians.
    pub elevation_min: f64,
    pub elevation_max: f64,
    /// Firings per revolution.
    pub azimuth_steps: usize,
    pub scan_period: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Gaussian range noise, meters.
    pub range_noise_std: f64,
    pub seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            rings: 16,
            elevation_min: -15f64.to_radians(),
            elevation_max: 15f64.to_radians(),
            azimuth_steps: 1800,
            scan_period: 0.1,
            min_range: 0.5,
            max_range: 100.0,
            range_noise_std: 0.0,
            seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn elevation(&self, ring: usize) -> f64 {
        if self.rings <= 1 {
            return 0.5 * (self.elevation_min + self.elevation_max);
        }
        self.elevation_min
            + (self.elevation_max - self.elevation_min) * ring as f64 / (self.rings - 1) as f64
    }

    /// Azimuth and emission offset of firing `step`.
    pub fn firing(&self, step: usize) -> (f64, f64) {
        let frac = step as f64 / self.azimuth_steps as f64;
        (2.0 * PI * frac, self.scan_period * frac)
    }
}

/// A rendered scan together with its hidden ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScan {
    /// Points carry their true emission time and labels.
    pub scan: LaserScan,
    /// World-frame hit point of every emitted point.
    pub world_points: Vec<Vec3>,
    /// Index of the moving box hit by each point, if any.
    pub hit_object: Vec<Option<usize>>,
}

/// Raycasts one revolution starting at `t_start`.
///
/// Firing `j` happens at azimuth `2 pi j / M` and time
/// `t_start + scan_period * j / M` from the true pose at that time. The scan's
/// `theta_end` is a full revolution.
pub fn render_scan(
    world: &WorldModel,
    profile: &TrajectoryProfile,
    t_start: f64,
    cfg: &LidarConfig,
) -> RenderedScan {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ t_start.to_bits().rotate_left(17));
    let noise = Normal::new(0.0, cfg.range_noise_std.max(0.0)).ok();

    // Cull objects that cannot be reached during this sweep.
    let p0 = profile.pose(t_start).translation;
    let p1 = profile.pose(t_start + cfg.scan_period).translation;
    let mid = (p0 + p1) * 0.5;
    let reach = cfg.max_range + 0.5 * (p1 - p0).norm() + 1.0;
    let statics: Vec<usize> = (0..world.static_surfaces.len())
        .filter(|&i| world.static_surfaces[i].near(&mid, reach))
        .collect();
    let dynamics: Vec<usize> = (0..world.dynamic_objects.len())
        .filter(|&i| {
            let b = &world.dynamic_objects[i];
            let c0 = b.pose_at(t_start).translation;
            let c1 = b.pose_at(t_start + cfg.scan_period).translation;
            let r = b.bounding_radius() + 0.5 * (c1 - c0).norm();
            ((c0 + c1) * 0.5 - mid).norm() <= reach + r
        })
        .collect();

    let ring_dirs: Vec<(f64, f64)> = (0..cfg.rings)
        .map(|r| {
            let el = cfg.elevation(r);
            (el.cos(), el.sin())
        })
        .collect();

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut world_points = Vec::new();
    let mut hit_object = Vec::new();
    for step in 0..cfg.azimuth_steps {
        let (azimuth, offset) = cfg.firing(step);
        let t = t_start + offset;
        let pose = profile.pose(t);
        let (sa, ca) = azimuth.sin_cos();
        for &(ce, se) in &ring_dirs {
            let dir_s = Vec3::new(ce * ca, ce * sa, se);
            let dir_w = pose.rotation.rotate(&dir_s);
            let origin = pose.translation;
            let hit = world.cast_subset(
                t,
                &origin,
                &dir_w,
                cfg.min_range,
                cfg.max_range,
                statics.iter().copied(),
                dynamics.iter().copied(),
            );
            let Some(hit) = hit else { continue };
            let measured = match noise {
                Some(n) if cfg.range_noise_std > 0.0 => hit.range + n.sample(&mut rng),
                _ => hit.range,
            };
            points.push(TimedPoint {
                position: dir_s * measured,
                intensity: hit.reflectivity.clamp(0.0, 1.0),
                azimuth,
                timestamp: t,
            });
            labels.push(if hit.dynamic.is_some() {
                LABEL_DYNAMIC
            } else {
                LABEL_STATIC
            });
            world_points.push(origin + dir_w * hit.range);
            hit_object.push(hit.dynamic);
        }
    }
    RenderedScan {
        scan: LaserScan {
            points,
            t_start,
            scan_period: cfg.scan_period,
            theta_end: 2.0 * PI,
            labels: Some(labels),
        },
        world_points,
        hit_object,
    }
}

/// Additive IMU errors: constant biases plus white noise per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuErrorModel {
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub accel_noise_std: Vec3,
    pub gyro_noise_std: Vec3,
}

/// Samples the profile at `rate` Hz over `[t0, t1]`:
/// `a_m = R^T (a - g) + a_b + n_a`, `w_m = w + w_b + n_w`.
pub fn synthesize_imu(
    profile: &TrajectoryProfile,
    t0: f64,
    t1: f64,
    rate: f64,
    model: &ImuErrorModel,
    gravity: &Vec3,
    seed: u64,
) -> ImuTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |std: &Vec3| -> Vec3 {
        Vec3::new(
            std.x * std_normal.sample(&mut rng),
            std.y * std_normal.sample(&mut rng),
            std.z * std_normal.sample(&mut rng),
        )
    };
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = t0 + k as f64 / rate;
        let s = profile.state(t);
        let specific = s.pose.rotation.inverse_rotate(&(s.acceleration - gravity));
        samples.push(ImuSample {
            timestamp: t,
            accel: specific + model.accel_bias + draw(&model.accel_noise_std),
            gyro: s.angular_velocity + model.gyro_bias + draw(&model.gyro_noise_std),
        });
    }
    ImuTrack::new(samples).expect("synthesized timestamps increase")
}

/// Ground-truth poses sampled at `rate` Hz over `[t0, t1]`.
pub fn sample_trajectory(profile: &TrajectoryProfile, t0: f64, t1: f64, rate: f64) -> Vec<(f64, Pose)> {
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| {
            let t = t0 + k as f64 / rate;
            (t, profile.pose(t))
        })
        .collect()
}

/// Named scenario presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioPreset {
    /// 300 m highway drive, 16 m/s peak, guardrails and sparse posts.
    HighwayStatic,
    /// The same drive with six cars: three pacing the sensor, three oncoming.
    HighwayDynamic,
    /// A few seconds with a coarse lidar, for quick end-to-end checks.
    Smoke,
}

impl ScenarioPreset {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioPreset::HighwayStatic => "highway-static",
            ScenarioPreset::HighwayDynamic => "highway-dynamic",
            ScenarioPreset::Smoke => "smoke",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ScenarioPreset::HighwayStatic,
            ScenarioPreset::HighwayDynamic,
            ScenarioPreset::Smoke,
        ]
        .into_iter()
        .find(|p| p.name() == name)
    }
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub world: WorldModel,
    pub profile: TrajectoryProfile,
    pub duration: f64,
    pub lidar: LidarConfig,
    pub imu_rate: f64,
    pub imu_model: ImuErrorModel,
    pub gravity: Vec3,
    pub seed: u64,
}

/// Sensor height above the road for the highway presets.
pub const SENSOR_HEIGHT: f64 = 1.8;

impl Scenario {
    pub fn preset(preset: ScenarioPreset, seed: u64) -> Scenario {
        let imu_model = ImuErrorModel {
            accel_bias: Vec3::new(0.05, -0.03, 0.04),
            gyro_bias: Vec3::new(0.002, -0.001, 0.0015),
            accel_noise_std: Vec3::repeat(0.02),
            gyro_noise_std: Vec3::repeat(0.001),
        };
        let lidar = LidarConfig {
            range_noise_std: 0.01,
            seed,
            ..LidarConfig::default()
        };
        match preset {
            ScenarioPreset::HighwayStatic | ScenarioPreset::HighwayDynamic => {
                let duration = 37.5;
                let mut world = highway_world(-60.0, 420.0);
                if preset == ScenarioPreset::HighwayDynamic {
                    world.dynamic_objects = highway_traffic(&highway_profile(duration), duration);
                }
                Scenario {
                    world,
                    profile: highway_profile(duration),
                    duration,
                    lidar,
                    imu_rate: 100.0,
                    imu_model,
                    gravity: DEFAULT_GRAVITY,
                    seed,
                }
            }
            ScenarioPreset::Smoke => Scenario {
                world: highway_world(-60.0, 120.0),
                profile: TrajectoryProfile::Road {
                    along: Signal::polynomial([0.0, 0.0, 1.0, 0.0]),
                    lateral: Signal::constant(0.0).with_wave(1.0, 2.0 * PI / 60.0, 0.0),
                    height: SENSOR_HEIGHT,
                },
                duration: 4.0,
                lidar: LidarConfig {
                    azimuth_steps: 360,
                    ..lidar
                },
                imu_rate: 100.0,
                imu_model,
                gravity: DEFAULT_GRAVITY,
                seed,
            },
        }
    }

    /// Start times of every complete sweep within the duration.
    pub fn scan_times(&self) -> Vec<f64> {
        let n = ((self.duration - self.lidar.scan_period) / self.lidar.scan_period + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.lidar.scan_period).collect()
    }

    pub fn render(&self, t_start: f64) -> RenderedScan {
        render_scan(&self.world, &self.profile, t_start, &self.lidar)
    }

    pub fn imu(&self) -> ImuTrack {
        synthesize_imu(
            &self.profile,
            0.0,
            self.duration,
            self.imu_rate,
            &self.imu_model,
            &self.gravity,
            self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
        )
    }

    pub fn ground_truth(&self) -> Vec<(f64, Pose)> {
        sample_trajectory(&self.profile, 0.0, self.duration, self.imu_rate)
    }
}

/// Speeds up from rest to 16 m/s and back to rest, covering 300 m in
/// `duration` seconds while weaving +-2 m across the lane.
pub fn highway_profile(duration: f64) -> TrajectoryProfile {
    let omega = 2.0 * PI / duration;
    let mean_speed = 300.0 / duration;
    TrajectoryProfile::Road {
        along: Signal::polynomial([0.0, mean_speed, 0.0, 0.0]).with_wave(
            -mean_speed / omega,
            omega,
            0.0,
        ),
        lateral: Signal::constant(0.0).with_wave(2.0, 2.0 * PI / 100.0, 0.0),
        height: SENSOR_HEIGHT,
    }
}

/// Ground plane, guardrails at y = +-9 m, light posts every 20 m at
/// y = +-11 m, and a sparse row of buildings set back from the road.
pub fn highway_world(x_min: f64, x_max: f64) -> WorldModel {
    let mut s = vec![Surface::plane(2, 0.0, 0.2)];
    for side in [-1.0, 1.0] {
        s.push(Surface::cuboid(
            Vec3::new(x_min, side * 9.0 - 0.15, 0.0),
            Vec3::new(x_max, side * 9.0 + 0.15, 0.9),
            0.5,
        ));
        let mut x = x_min + 5.0;
        while x < x_max {
            s.push(Surface::cuboid(
                Vec3::new(x - 0.15, side * 11.0 - 0.15, 0.0),
                Vec3::new(x + 0.15, side * 11.0 + 0.15, 6.0),
                0.7,
            ));
            x += 20.0;
        }
    }
    let mut x = x_min + 20.0;
    let mut k = 0usize;
    while x < x_max {
        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
        let depth = 8.0 + 4.0 * (k % 3) as f64;
        let y0 = side * 28.0;
        let y1 = side * (28.0 + depth);
        s.push(Surface::cuboid(
            Vec3::new(x, y0.min(y1), 0.0),
            Vec3::new(x + 12.0 + 3.0 * (k % 2) as f64, y0.max(y1), 6.0 + 2.0 * (k % 4) as f64),
            0.4,
        ));
        x += 45.0;
        k += 1;
    }
    WorldModel {
        static_surfaces: s,
        dynamic_objects: Vec::new(),
    }
}

/// Six cars: three in the +5.5 m lane pacing the sensor at fixed
/// along-track offsets, three oncoming in the -5.5 m lane.
pub fn highway_traffic(ego: &TrajectoryProfile, duration: f64) -> Vec<MovingBox> {
    let half = Vec3::new(2.25, 0.9, 0.7);
    let car_z = 0.3 + half.z;
    let mut cars = Vec::new();
    for offset in [12.0, -10.0, -26.0] {
        let mut waypoints = Vec::new();
        let mut t = 0.0;
        while t <= duration + 1e-9 {
            let x = ego.pose(t).translation.x + offset;
            waypoints.push((t, Pose::from_translation(Vec3::new(x, 5.5, car_z))));
            t += 0.5;
        }
        cars.push(MovingBox {
            half_extent: half,
            waypoints,
            reflectivity: 0.9,
        });
    }
    for (x0, speed) in [(120.0, 14.0), (260.0, 18.0), (420.0, 16.0)] {
        let heading = Rotation::from_euler(0.0, 0.0, PI);
        cars.push(MovingBox {
            half_extent: half,
            waypoints: vec![
                (0.0, Pose::new(heading, Vec3::new(x0, -5.5, car_z))),
                (duration, Pose::new(heading, Vec3::new(x0 - speed * duration, -5.5, car_z))),
            ],
            reflectivity: 0.9,
        });
    }
    cars
}
