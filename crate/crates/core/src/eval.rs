//! Trajectory accuracy: absolute trajectory error and KITTI relative error.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, SVD};
#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("timestamps must strictly increase (index {index})")]
    NotIncreasing { index: usize },
    #[error("only {pairs} pose pairs associated, need at least 3")]
    InsufficientOverlap { pairs: usize },
    #[error("positions are collinear or coincident; alignment is not unique")]
    Degenerate,
    #[error("reference path is {length:.1} m, shorter than the 100 m minimum segment")]
    InsufficientLength { length: f64 },
    #[error("max_dt must be positive")]
    InvalidTolerance,
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Time-ordered poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(i) = poses.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NotIncreasing { index: i + 1 });
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[(f64, Pose)] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }

    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }
}

/// Matched estimate and reference poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePair {
    pub time: f64,
    pub est: Pose,
    pub reference: Pose,
}

/// Default association tolerance, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing time difference, each pose at most once.
/// Output is sorted by estimate time.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<PosePair>, EvalError> {
    if !(max_dt > 0.0) {
        return Err(EvalError::InvalidTolerance);
    }
    let r = reference.poses();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (t, _)) in est.poses().iter().enumerate() {
        let start = r.partition_point(|(s, _)| *s < t - max_dt);
        for (j, (s, _)) in r.iter().enumerate().skip(start) {
            if *s > t + max_dt {
                break;
            }
            candidates.push(((s - t).abs(), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = alloc::vec![false; est.len()];
    let mut ref_used = alloc::vec![false; r.len()];
    let mut matched: Vec<(usize, usize)> = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !ref_used[j] {
            est_used[i] = true;
            ref_used[j] = true;
            matched.push((i, j));
        }
    }
    matched.sort_unstable();
    if matched.len() < 3 {
        return Err(EvalError::InsufficientOverlap { pairs: matched.len() });
    }
    Ok(matched
        .into_iter()
        .map(|(i, j)| PosePair {
            time: est.poses()[i].0,
            est: est.poses()[i].1,
            reference: r[j].1,
        })
        .collect())
}

/// Rigid `T` minimizing `sum |p_ref - T p_est|^2` (closed form through the
/// SVD of the cross-covariance, no scale).
pub fn align_6dof(pairs: &[PosePair]) -> Result<Pose, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::InsufficientOverlap { pairs: pairs.len() });
    }
    let n = pairs.len() as f64;
    let mu_e = pairs.iter().map(|p| p.est.translation).sum::<Vec3>() / n;
    let mu_r = pairs.iter().map(|p| p.reference.translation).sum::<Vec3>() / n;
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for p in pairs {
        let de = p.est.translation - mu_e;
        let dr = p.reference.translation - mu_r;
        cross += dr * de.transpose();
        spread += de * de.transpose();
    }
    let eig = SymmetricEigen::new(spread);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(1e-300)) {
        return Err(EvalError::Degenerate);
    }
    let svd = SVD::new(cross, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rot = u * s * v_t;
    let rotation = Rotation::from_matrix(&rot);
    Ok(Pose::new(rotation, mu_r - rotation.rotate(&mu_e)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub max: f64,
    pub mean: f64,
    /// `(time, residual)` per pair.
    pub residuals: Vec<(f64, f64)>,
    /// Applied to the estimate.
    pub alignment: Pose,
}

pub fn ate_from_pairs(pairs: &[PosePair]) -> Result<AteReport, EvalError> {
    let alignment = align_6dof(pairs)?;
    let residuals: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| (p.time, (p.reference.translation - alignment.transform_point(&p.est.translation)).norm()))
        .collect();
    let n = residuals.len() as f64;
    let rmse = (residuals.iter().map(|r| r.1 * r.1).sum::<f64>() / n).sqrt();
    let mean = residuals.iter().map(|r| r.1).sum::<f64>() / n;
    let max = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(AteReport {
        rmse,
        max,
        mean,
        residuals,
        alignment,
    })
}

pub fn ate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<AteReport, EvalError> {
    ate_from_pairs(&associate(est, reference, max_dt)?)
}

/// Segment lengths of the relative error, meters.
pub const KITTI_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentError {
    pub length: f64,
    /// Mean translation error over segments of this length, percent.
    /// `None` when no segment of this length fits.
    pub percent: Option<f64>,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelErrorReport {
    pub label: String,
    pub per_length: Vec<SegmentError>,
    /// Mean over every segment of every length, percent.
    pub average_percent: f64,
}

/// KITTI-style relative translation error over associated pairs. Segments
/// start at every `start_step`-th pose and end at the first pose whose
/// reference path distance exceeds the start's by at least `L`.
pub fn kitti_rel_error(pairs: &[PosePair], start_step: usize) -> Result<RelErrorReport, EvalError> {
    let mut dist = Vec::with_capacity(pairs.len());
    let mut acc = 0.0;
    for (k, p) in pairs.iter().enumerate() {
        if k > 0 {
            acc += (p.reference.translation - pairs[k - 1].reference.translation).norm();
        }
        dist.push(acc);
    }
    if acc < KITTI_LENGTHS[0] {
        return Err(EvalError::InsufficientLength { length: acc });
    }
    let step = start_step.max(1);
    let mut sums = [0.0; 8];
    let mut counts = [0usize; 8];
    for i in (0..pairs.len()).step_by(step) {
        for (l, &len) in KITTI_LENGTHS.iter().enumerate() {
            let target = dist[i] + len;
            let j = dist.partition_point(|&d| d < target);
            if j >= pairs.len() {
                continue;
            }
            let rel_ref = pairs[i].reference.inverse().compose(&pairs[j].reference);
            let rel_est = pairs[i].est.inverse().compose(&pairs[j].est);
            let err = rel_ref.inverse().compose(&rel_est).translation.norm();
            sums[l] += err / len;
            counts[l] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let per_length = KITTI_LENGTHS
        .iter()
        .enumerate()
        .map(|(l, &length)| SegmentError {
            length,
            percent: (counts[l] > 0).then(|| 100.0 * sums[l] / counts[l] as f64),
            segments: counts[l],
        })
        .collect();
    Ok(RelErrorReport {
        label: String::new(),
        per_length,
        average_percent: 100.0 * sums.iter().sum::<f64>() / total.max(1) as f64,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, v: &str) -> Result<f64, EvalError> {
    v.trim().parse::<f64>().map_err(|_| parse_err(line, format!("not a number: {v:?}")))
}

/// `key: value` lines, `#` comments and blank lines skipped.
fn key_values(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str), EvalError>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(match line.split_once(':') {
            Some((k, v)) => Ok((i + 1, k.trim(), v.trim())),
            None => Err(parse_err(i + 1, "expected `key: value`")),
        })
    })
}

impl RelErrorReport {
    /// Report with only an average, as published tables give it.
    pub fn summary(label: &str, average_percent: f64) -> Self {
        RelErrorReport {
            label: label.to_string(),
            per_length: Vec::new(),
            average_percent,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric: kitti_relative_translation");
        let _ = writeln!(s, "label: {}", self.label);
        let _ = writeln!(s, "average_percent: {}", self.average_percent);
        for e in &self.per_length {
            match e.percent {
                Some(p) => {
                    let _ = writeln!(s, "length_{}: {} {}", e.length, p, e.segments);
                }
                None => {
                    let _ = writeln!(s, "length_{}: - {}", e.length, e.segments);
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut label = None;
        let mut average = None;
        let mut per_length = Vec::new();
        let mut metric_seen = false;
        for kv in key_values(text) {
            let (line, k, v) = kv?;
            match k {
                "metric" => {
                    if v != "kitti_relative_translation" {
                        return Err(parse_err(line, format!("unexpected metric {v:?}")));
                    }
                    metric_seen = true;
                }
                "label" => label = Some(v.to_string()),
                "average_percent" => average = Some(parse_f64(line, v)?),
                _ if k.starts_with("length_") => {
                    let length = parse_f64(line, &k["length_".len()..])?;
                    let mut it = v.split_whitespace();
                    let (p, n) = match (it.next(), it.next(), it.next()) {
                        (Some(p), Some(n), None) => (p, n),
                        _ => return Err(parse_err(line, "expected `<percent|-> <segments>`")),
                    };
                    let percent = if p == "-" { None } else { Some(parse_f64(line, p)?) };
                    let segments = n.parse().map_err(|_| parse_err(line, format!("bad segment count {n:?}")))?;
                    per_length.push(SegmentError {
                        length,
                        percent,
                        segments,
                    });
                }
                _ => return Err(parse_err(line, format!("unknown key {k:?}"))),
            }
        }
        if !metric_seen {
            return Err(parse_err(0, "missing `metric`"));
        }
        Ok(RelErrorReport {
            label: label.unwrap_or_default(),
            per_length,
            average_percent: average.ok_or_else(|| parse_err(0, "missing `average_percent`"))?,
        })
    }
}

impl AteReport {
    /// Summary lines followed by a `time residual` table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let q = self.alignment.rotation.quaternion();
        let t = self.alignment.translation;
        let _ = writeln!(s, "metric: ate");
        let _ = writeln!(s, "pairs: {}", self.residuals.len());
        let _ = writeln!(s, "rmse: {}", self.rmse);
        let _ = writeln!(s, "mean: {}", self.mean);
        let _ = writeln!(s, "max: {}", self.max);
        let _ = writeln!(s, "alignment: {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
        let _ = writeln!(s, "# time residual");
        for (time, r) in &self.residuals {
            let _ = writeln!(s, "{time} {r}");
        }
        s
    }
}
