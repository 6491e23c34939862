//! Flat `key = value` pipeline configuration.
//!
//! Every tunable has one dotted key. Files may contain `#` comments and
//! blank lines; unknown keys are errors. [`PipelineConfig::to_text`] writes
//! every key, and parsing that text gives back the same configuration.

use std::fmt;
use std::path::Path;

use lio_core::deskew::OrientationInterp;
use lio_core::dynamic::{DynamicFilterConfig, HeuristicClassifier, OracleClassifier};
use lio_core::eskf::CovarianceUpdate;
use lio_core::geometry::{Pose, Rotation, Vec3};
use lio_core::mapping::MapConfig;
use lio_core::ndt::{NdtConfig, Neighborhood};
use lio_core::odometry::OdometryConfig;
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassifierKind {
    #[default]
    Heuristic,
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub odometry: OdometryConfig,
    /// Lidar position in the body frame, meters.
    pub extrinsic_translation: Vec3,
    /// Lidar roll, pitch, yaw in the body frame, radians.
    pub extrinsic_rpy: Vec3,
    pub mapping: MapConfig,
    /// Every n-th scan goes to the mapper.
    pub mapping_cadence: usize,
    pub detection_enabled: bool,
    pub classifier: ClassifierKind,
    pub detection: DynamicFilterConfig,
    pub heuristic: HeuristicClassifier,
    pub oracle: OracleClassifier,
    /// Scan loading and timestamping workers.
    pub loader_threads: usize,
    /// Bound of every inter-stage queue.
    pub queue_depth: usize,
    pub simulate_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            odometry: OdometryConfig::default(),
            extrinsic_translation: Vec3::zeros(),
            extrinsic_rpy: Vec3::zeros(),
            mapping: MapConfig::default(),
            mapping_cadence: 10,
            detection_enabled: true,
            classifier: ClassifierKind::Heuristic,
            detection: DynamicFilterConfig::default(),
            heuristic: HeuristicClassifier::default(),
            oracle: OracleClassifier::default(),
            loader_threads: 2,
            queue_depth: 8,
            simulate_seed: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("`{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("`{key}` is set twice")]
    Duplicate { key: String },
    #[error("`{key}`: {message}")]
    Invalid { key: &'static str, message: &'static str },
    #[error("{0}")]
    Io(String),
}

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value {s:?}"))
    }
}

fn list(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .map(number)
        .collect()
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        number(s)
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.trim().parse().map_err(|_| format!("not a count: {s:?}"))
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for i32 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.trim().parse().map_err(|_| format!("not an integer: {s:?}"))
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.trim().parse().map_err(|_| format!("not a count: {s:?}"))
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s.trim() {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            other => Err(format!("not a boolean: {other:?}")),
        }
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

/// One number applies to all three axes.
impl ConfigValue for Vec3 {
    fn parse_value(s: &str) -> Result<Self, String> {
        match list(s)?.as_slice() {
            [v] => Ok(Vec3::repeat(*v)),
            [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
            other => Err(format!("expected 1 or 3 numbers, found {}", other.len())),
        }
    }
    fn render(&self) -> String {
        format!("{} {} {}", self.x, self.y, self.z)
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v = list(s)?;
        if v.is_empty() {
            return Err("empty list".into());
        }
        Ok(v)
    }
    fn render(&self) -> String {
        self.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
    }
}

impl ConfigValue for [f64; 2] {
    fn parse_value(s: &str) -> Result<Self, String> {
        match list(s)?.as_slice() {
            [a, b] => Ok([*a, *b]),
            other => Err(format!("expected 2 numbers, found {}", other.len())),
        }
    }
    fn render(&self) -> String {
        format!("{} {}", self[0], self[1])
    }
}

macro_rules! enum_value {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl ConfigValue for $ty {
            fn parse_value(s: &str) -> Result<Self, String> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(format!("expected one of {}, found {other:?}", [$($name),+].join("|"))),
                }
            }
            fn render(&self) -> String {
                $(if *self == $variant { return $name.to_string(); })+
                unreachable!()
            }
        }
    };
}

enum_value!(CovarianceUpdate { "standard" => CovarianceUpdate::Standard, "joseph" => CovarianceUpdate::Joseph });
enum_value!(OrientationInterp {
    "manifold" => OrientationInterp::Manifold,
    "componentwise" => OrientationInterp::Componentwise,
});
enum_value!(Neighborhood { "single" => Neighborhood::Single, "seven" => Neighborhood::Seven });
enum_value!(ClassifierKind { "heuristic" => ClassifierKind::Heuristic, "oracle" => ClassifierKind::Oracle });

macro_rules! ndt_keys {
    ($prefix:literal, $n:expr, $f:ident) => {
        $f!(concat!($prefix, ".voxel_size"), $n.voxel_size);
        $f!(concat!($prefix, ".lattice_offset"), $n.lattice_offset);
        $f!(concat!($prefix, ".min_points"), $n.min_points);
        $f!(concat!($prefix, ".reg_ratio"), $n.reg_ratio);
        $f!(concat!($prefix, ".reg_floor"), $n.reg_floor);
        $f!(concat!($prefix, ".neighborhood"), $n.neighborhood);
        $f!(concat!($prefix, ".max_iter"), $n.max_iter);
        $f!(concat!($prefix, ".step_tol"), $n.step_tol);
        $f!(concat!($prefix, ".rot_tol"), $n.rot_tol);
        $f!(concat!($prefix, ".max_step"), $n.max_step);
        $f!(concat!($prefix, ".parallel"), $n.parallel);
    };
}

/// The key table, in file order.
macro_rules! keys {
    ($c:ident, $f:ident) => {
        $f!("eskf.gravity", $c.odometry.eskf.gravity);
        $f!("eskf.accel_noise", $c.odometry.eskf.noise.accel_noise);
        $f!("eskf.gyro_noise", $c.odometry.eskf.noise.gyro_noise);
        $f!("eskf.accel_walk", $c.odometry.eskf.noise.accel_walk);
        $f!("eskf.gyro_walk", $c.odometry.eskf.noise.gyro_walk);
        $f!("eskf.initial_std.velocity", $c.odometry.eskf.initial_std.velocity);
        $f!("eskf.initial_std.position", $c.odometry.eskf.initial_std.position);
        $f!("eskf.initial_std.orientation", $c.odometry.eskf.initial_std.orientation);
        $f!("eskf.initial_std.accel_bias", $c.odometry.eskf.initial_std.accel_bias);
        $f!("eskf.initial_std.gyro_bias", $c.odometry.eskf.initial_std.gyro_bias);
        $f!("eskf.covariance_update", $c.odometry.eskf.covariance_update);
        $f!("eskf.staleness", $c.odometry.eskf.staleness);
        $f!("deskew.interp", $c.odometry.interp);
        $f!("extrinsic.translation", $c.extrinsic_translation);
        $f!("extrinsic.rpy", $c.extrinsic_rpy);
        $f!("odometry.leaf", $c.odometry.leaf);
        $f!("odometry.match_range", $c.odometry.match_range);
        $f!("odometry.model_range", $c.odometry.model_range);
        $f!("odometry.window", $c.odometry.window);
        $f!("odometry.keyframe_distance", $c.odometry.keyframe_distance);
        $f!("odometry.keyframe_angle", $c.odometry.keyframe_angle);
        $f!("odometry.model_clearance", $c.odometry.model_clearance);
        $f!("odometry.ndt_levels", $c.odometry.ndt_levels);
        $f!("odometry.information_scale", $c.odometry.information_scale);
        $f!("odometry.max_innovation", $c.odometry.max_innovation);
        ndt_keys!("odometry.ndt", $c.odometry.ndt, $f);
        $f!("mapping.cadence", $c.mapping_cadence);
        $f!("mapping.leaf", $c.mapping.leaf);
        $f!("mapping.ndt_levels", $c.mapping.ndt_levels);
        $f!("mapping.submap_radius", $c.mapping.submap_radius);
        $f!("mapping.match_range", $c.mapping.match_range);
        $f!("mapping.integrate_range", $c.mapping.integrate_range);
        $f!("mapping.prior_std", $c.mapping.prior_std);
        $f!("mapping.max_correction", $c.mapping.max_correction);
        ndt_keys!("mapping.ndt", $c.mapping.ndt, $f);
        $f!("detection.enabled", $c.detection_enabled);
        $f!("detection.classifier", $c.classifier);
        $f!("detection.grid.half_range", $c.detection.grid.half_range);
        $f!("detection.grid.resolution", $c.detection.grid.resolution);
        $f!("detection.grid.ground_block", $c.detection.grid.ground_block);
        $f!("detection.objectness_threshold", $c.detection.objectness_threshold);
        $f!("detection.gates.min_points", $c.detection.gates.min_points);
        $f!("detection.gates.min_extent", $c.detection.gates.min_extent);
        $f!("detection.gates.max_extent", $c.detection.gates.max_extent);
        $f!("detection.gates.min_objectness", $c.detection.gates.min_objectness);
        $f!("detection.gates.min_positiveness", $c.detection.gates.min_positiveness);
        $f!("detection.gates.ground_clearance", $c.detection.gates.ground_clearance);
        $f!("detection.heuristic.min_height", $c.heuristic.min_height);
        $f!("detection.heuristic.max_height", $c.heuristic.max_height);
        $f!("detection.heuristic.ramp", $c.heuristic.ramp);
        $f!("detection.heuristic.min_points", $c.heuristic.min_points);
        $f!("detection.oracle.link_radius", $c.oracle.link_radius);
        $f!("pipeline.loader_threads", $c.loader_threads);
        $f!("pipeline.queue_depth", $c.queue_depth);
        $f!("simulate.seed", $c.simulate_seed);
    };
}

impl PipelineConfig {
    /// Every key, in file order.
    pub fn keys() -> Vec<&'static str> {
        let mut out = Vec::new();
        let c = PipelineConfig::default();
        macro_rules! name {
            ($k:expr, $field:expr) => {{
                let _ = &$field;
                out.push($k);
            }};
        }
        keys!(c, name);
        out
    }

    /// Sets one key without validating the whole configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let c = self;
        macro_rules! try_set {
            ($k:expr, $field:expr) => {
                if key == $k {
                    $field = ConfigValue::parse_value(value).map_err(|message| ConfigError::BadValue {
                        key: key.to_string(),
                        message,
                    })?;
                    return Ok(());
                }
            };
        }
        keys!(c, try_set);
        Err(ConfigError::UnknownKey { key: key.to_string() })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let c = self;
        macro_rules! try_get {
            ($k:expr, $field:expr) => {
                if key == $k {
                    return Some($field.render());
                }
            };
        }
        keys!(c, try_get);
        None
    }

    /// Applies a `key = value` file on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { key: key.to_string() });
            }
            self.set(key, value.trim())?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = PipelineConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides, then validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let (key, value) = o.as_ref().split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = self;
        macro_rules! line {
            ($k:expr, $field:expr) => {
                out.push_str(&format!("{} = {}\n", $k, $field.render()));
            };
        }
        keys!(c, line);
        out
    }

    pub fn extrinsic(&self) -> Pose {
        let r = self.extrinsic_rpy;
        Pose::new(Rotation::from_euler(r.x, r.y, r.z), self.extrinsic_translation)
    }

    /// Odometry settings with the extrinsic filled in.
    pub fn odometry_config(&self) -> OdometryConfig {
        OdometryConfig {
            extrinsic: self.extrinsic(),
            ..self.odometry.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, message: &'static str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, message })
            }
        }
        fn levels(v: &[f64], key: &'static str) -> Result<(), ConfigError> {
            check(!v.is_empty() && v.iter().all(|s| *s > 0.0), key, "voxel sizes must be positive")?;
            check(v.windows(2).all(|w| w[0] > w[1]), key, "voxel sizes must decrease")
        }
        fn ndt(n: &NdtConfig, key: &'static str) -> Result<(), ConfigError> {
            check(n.min_points >= 3, key, "min_points below 3 gives singular voxels")?;
            check(n.reg_ratio > 0.0 && n.reg_ratio < 1.0, key, "reg_ratio must lie in (0, 1)")?;
            check(n.reg_floor > 0.0, key, "reg_floor must be positive")?;
            check(n.max_iter > 0, key, "max_iter must be positive")?;
            check(n.step_tol > 0.0 && n.rot_tol > 0.0 && n.max_step > 0.0, key, "tolerances and max_step must be positive")
        }
        let o = &self.odometry;
        let e = &o.eskf;
        check(e.noise.is_valid(), "eskf.*_noise", "noise densities must be positive")?;
        let s = &e.initial_std;
        check(
            [s.velocity, s.position, s.orientation, s.accel_bias, s.gyro_bias].iter().all(|v| *v > 0.0),
            "eskf.initial_std",
            "must be positive",
        )?;
        check(e.staleness > 0.0, "eskf.staleness", "must be positive")?;
        check(o.leaf > 0.0, "odometry.leaf", "must be positive")?;
        check(o.match_range > 0.0 && o.model_range > 0.0, "odometry.*_range", "must be positive")?;
        check(o.window > 0, "odometry.window", "must be positive")?;
        check(o.keyframe_distance > 0.0 && o.keyframe_angle > 0.0, "odometry.keyframe_*", "must be positive")?;
        check(o.model_clearance >= 0.0, "odometry.model_clearance", "must not be negative")?;
        check(o.information_scale > 0.0, "odometry.information_scale", "must be positive")?;
        check(o.max_innovation > 0.0, "odometry.max_innovation", "must be positive")?;
        levels(&o.ndt_levels, "odometry.ndt_levels")?;
        ndt(&o.ndt, "odometry.ndt")?;
        let m = &self.mapping;
        check(self.mapping_cadence > 0, "mapping.cadence", "must be positive")?;
        check(m.leaf > 0.0, "mapping.leaf", "must be positive")?;
        check(m.submap_radius > 0.0, "mapping.submap_radius", "must be positive")?;
        check(m.match_range > 0.0 && m.integrate_range > 0.0, "mapping.*_range", "must be positive")?;
        check(m.prior_std.iter().all(|v| *v > 0.0), "mapping.prior_std", "must be positive")?;
        check(m.max_correction.iter().all(|v| *v > 0.0), "mapping.max_correction", "must be positive")?;
        levels(&m.ndt_levels, "mapping.ndt_levels")?;
        ndt(&m.ndt, "mapping.ndt")?;
        let d = &self.detection;
        check(d.grid.is_valid(), "detection.grid", "range, resolution and ground_block must be positive")?;
        check(
            d.objectness_threshold > 0.0 && d.objectness_threshold < 1.0,
            "detection.objectness_threshold",
            "must lie in (0, 1)",
        )?;
        check(d.gates.min_extent <= d.gates.max_extent, "detection.gates", "min_extent exceeds max_extent")?;
        check(
            self.heuristic.min_height < self.heuristic.max_height && self.heuristic.ramp > 0.0,
            "detection.heuristic",
            "needs min_height < max_height and a positive ramp",
        )?;
        check(self.oracle.link_radius >= 0.0, "detection.oracle.link_radius", "must not be negative")?;
        check(self.loader_threads > 0, "pipeline.loader_threads", "must be positive")?;
        check(self.queue_depth > 0, "pipeline.queue_depth", "must be positive")?;
        Ok(())
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
