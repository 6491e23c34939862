//! Dataset and output file formats.
//!
//! * cloud: little-endian `f32` records `[x, y, z, intensity]`, no header
//! * labels: one byte per point, 0 static, 1 dynamic
//! * IMU log: `t ax ay az wx wy wz` per line, `#` comments
//! * trajectory: TUM `t x y z qx qy qz qw`
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! written file returns the same values.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lio_core::geometry::{ImuSample, LaserScan, Pose, Rotation, TimedPoint, Vec3, LABEL_DYNAMIC, LABEL_STATIC};
use lio_core::ImuTrack;
use nalgebra::Quaternion;
use thiserror::Error;

pub const CLOUD_RECORD_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: byte {offset}: {message}")]
    Binary { path: PathBuf, offset: usize, message: String },
    #[error("{path}: line {line}: {message}")]
    Text { path: PathBuf, line: usize, message: String },
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn text(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Text {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

/// Parses cloud records. Points get their azimuth from `atan2(y, x)` and
/// no timestamp.
pub fn parse_cloud(bytes: &[u8], path: &Path) -> Result<Vec<TimedPoint>, FormatError> {
    if bytes.len() % CLOUD_RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % CLOUD_RECORD_BYTES;
        return Err(FormatError::Binary {
            path: path.to_path_buf(),
            offset,
            message: format!(
                "truncated record: {} trailing bytes, records are {CLOUD_RECORD_BYTES} bytes",
                bytes.len() - offset
            ),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / CLOUD_RECORD_BYTES);
    for (k, rec) in bytes.chunks_exact(CLOUD_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes([rec[4 * i], rec[4 * i + 1], rec[4 * i + 2], rec[4 * i + 3]]);
        let v = [f(0), f(1), f(2), f(3)];
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(FormatError::Binary {
                path: path.to_path_buf(),
                offset: k * CLOUD_RECORD_BYTES + 4 * i,
                message: "non-finite value".into(),
            });
        }
        out.push(TimedPoint::new(
            Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64),
            v[3] as f64,
        ));
    }
    Ok(out)
}

pub fn encode_cloud(points: &[TimedPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * CLOUD_RECORD_BYTES);
    for p in points {
        for v in [p.position.x, p.position.y, p.position.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_cloud(path: &Path) -> Result<Vec<TimedPoint>, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    parse_cloud(&bytes, path)
}

/// Reads a cloud file as a scan starting at `t_start`. Timestamps are
/// left at zero; see [`lio_core::deskew::stamp_points`].
pub fn read_scan_bin(path: &Path, t_start: f64, scan_period: f64, theta_end: f64) -> Result<LaserScan, FormatError> {
    Ok(LaserScan {
        points: read_cloud(path)?,
        t_start,
        scan_period,
        theta_end,
        labels: None,
    })
}

pub fn write_scan_bin(path: &Path, scan: &LaserScan) -> Result<(), FormatError> {
    fs::write(path, encode_cloud(&scan.points)).map_err(|e| FormatError::io(path, e))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, FormatError> {
    if let Some(offset) = bytes.iter().position(|b| *b != LABEL_STATIC && *b != LABEL_DYNAMIC) {
        return Err(FormatError::Binary {
            path: path.to_path_buf(),
            offset,
            message: format!("label {} is neither 0 nor 1", bytes[offset]),
        });
    }
    Ok(bytes.to_vec())
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    parse_labels(&bytes, path)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<(), FormatError> {
    fs::write(path, labels).map_err(|e| FormatError::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn numbers<const N: usize>(line: &str, lineno: usize, path: &Path) -> Result<[f64; N], FormatError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != N {
        return Err(FormatError::text(path, lineno, format!("expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(&fields) {
        *o = f
            .parse::<f64>()
            .map_err(|_| FormatError::text(path, lineno, format!("not a number: {f:?}")))?;
        if !o.is_finite() {
            return Err(FormatError::text(path, lineno, format!("non-finite value {f:?}")));
        }
    }
    Ok(out)
}

pub fn parse_imu(text: &str, path: &Path) -> Result<ImuTrack, FormatError> {
    let mut samples = Vec::new();
    let mut lines = Vec::new();
    for (lineno, line) in records(text) {
        let [t, ax, ay, az, wx, wy, wz] = numbers::<7>(line, lineno, path)?;
        samples.push(ImuSample {
            timestamp: t,
            accel: Vec3::new(ax, ay, az),
            gyro: Vec3::new(wx, wy, wz),
        });
        lines.push(lineno);
    }
    ImuTrack::new(samples).map_err(|e| {
        let index = match e {
            lio_core::geometry::ImuTrackError::NonIncreasing { index } => index,
            lio_core::geometry::ImuTrackError::NonFinite { index } => index,
        };
        FormatError::text(path, lines[index], e.to_string())
    })
}

pub fn encode_imu(samples: &[ImuSample]) -> String {
    let mut out = String::from("# t ax ay az wx wy wz\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            s.timestamp, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        );
    }
    out
}

pub fn read_imu_csv(path: &Path) -> Result<ImuTrack, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_imu(&text, path)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), FormatError> {
    fs::write(path, encode_imu(samples)).map_err(|e| FormatError::io(path, e))
}

/// Parses TUM lines. Times must increase strictly.
pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<(f64, Pose)>, FormatError> {
    let mut out: Vec<(f64, Pose)> = Vec::new();
    for (lineno, line) in records(text) {
        let [t, x, y, z, qx, qy, qz, qw] = numbers::<8>(line, lineno, path)?;
        if let Some((prev, _)) = out.last() {
            if t <= *prev {
                return Err(FormatError::text(path, lineno, format!("time {t} does not follow {prev}")));
            }
        }
        let q = Quaternion::new(qw, qx, qy, qz);
        if q.norm() < 1e-9 {
            return Err(FormatError::text(path, lineno, "zero quaternion"));
        }
        out.push((t, Pose::new(Rotation::from_unit_quaternion(q), Vec3::new(x, y, z))));
    }
    Ok(out)
}

pub fn encode_tum(poses: &[(f64, Pose)]) -> String {
    let mut out = String::from("# t x y z qx qy qz qw\n");
    for (t, p) in poses {
        let q = p.rotation.quaternion();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            t, p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w
        );
    }
    out
}

pub fn read_traj_tum(path: &Path) -> Result<Vec<(f64, Pose)>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_tum(&text, path)
}

pub fn write_traj_tum(path: &Path, poses: &[(f64, Pose)]) -> Result<(), FormatError> {
    fs::write(path, encode_tum(poses)).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_error_names_the_bad_value() {
        let mut bytes = encode_cloud(&[TimedPoint::new(Vec3::new(1.0, 2.0, 3.0), 0.5); 3]);
        bytes[16 + 8..16 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_cloud(&bytes, Path::new("x.bin")) {
            Err(FormatError::Binary { offset, .. }) => assert_eq!(offset, 24),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# header\n\n0 0 0 9.81 0 0 0 # trailing\n0.01 0 0 9.81 0 0 0\n";
        let track = parse_imu(text, Path::new("imu.txt")).unwrap();
        assert_eq!(track.len(), 2);
    }

    #[test]
    fn imu_order_error_names_the_line() {
        let text = "0 0 0 9.81 0 0 0\n# c\n0 0 0 9.81 0 0 0\n";
        match parse_imu(text, Path::new("imu.txt")) {
            Err(FormatError::Text { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_label_names_the_byte() {
        match parse_labels(&[0, 1, 0, 7], Path::new("l")) {
            Err(FormatError::Binary { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }
}
