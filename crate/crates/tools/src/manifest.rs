//! Dataset directory descriptor, `manifest.txt`:
//!
//! ```text
//! scan_period 0.1
//! theta_end 6.283185307179586
//! imu imu.txt
//! ground_truth ground_truth.tum
//! scan 0 scans/000000.bin labels/000000.lbl
//! scan 0.1 scans/000001.bin labels/000001.lbl
//! ```
//!
//! Paths are relative to the directory. `ground_truth` and the per-scan
//! label files are optional.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ScanEntry {
    pub t_start: f64,
    pub cloud: PathBuf,
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub scan_period: f64,
    pub theta_end: f64,
    pub imu: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub scans: Vec<ScanEntry>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("manifest is missing `{0}`")]
    Missing(&'static str),
    #[error("scan {index}: start time {t} does not follow {previous}")]
    NotIncreasing { index: usize, t: f64, previous: f64 },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self, ManifestError> {
        let mut scan_period = None;
        let mut theta_end = None;
        let mut imu = None;
        let mut ground_truth = None;
        let mut scans = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ManifestError::Syntax { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let number = |s: &str| -> Result<f64, ManifestError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| syntax(format!("not a number: {s:?}")))
            };
            match (fields[0], fields.len()) {
                ("scan_period", 2) => scan_period = Some(number(fields[1])?),
                ("theta_end", 2) => theta_end = Some(number(fields[1])?),
                ("imu", 2) => imu = Some(PathBuf::from(fields[1])),
                ("ground_truth", 2) => ground_truth = Some(PathBuf::from(fields[1])),
                ("scan", 3 | 4) => scans.push(ScanEntry {
                    t_start: number(fields[1])?,
                    cloud: PathBuf::from(fields[2]),
                    labels: fields.get(3).map(PathBuf::from),
                }),
                (key, n) => return Err(syntax(format!("unexpected `{key}` with {} values", n - 1))),
            }
        }
        let m = DatasetManifest {
            root: root.to_path_buf(),
            scan_period: scan_period.ok_or(ManifestError::Missing("scan_period"))?,
            theta_end: theta_end.ok_or(ManifestError::Missing("theta_end"))?,
            imu: imu.ok_or(ManifestError::Missing("imu"))?,
            ground_truth,
            scans,
        };
        m.check_values()?;
        Ok(m)
    }

    /// Reads `dir/manifest.txt` and checks every referenced file exists.
    pub fn load(dir: &Path) -> Result<Self, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ManifestError::Read {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let m = Self::parse(&text, dir)?;
        m.check_files()?;
        Ok(m)
    }

    fn check_values(&self) -> Result<(), ManifestError> {
        if !(self.scan_period > 0.0) {
            return Err(ManifestError::Invalid(format!("scan_period {} must be positive", self.scan_period)));
        }
        if !(self.theta_end > 0.0 && self.theta_end <= 2.0 * std::f64::consts::PI) {
            return Err(ManifestError::Invalid(format!("theta_end {} must lie in (0, 2pi]", self.theta_end)));
        }
        if self.scans.is_empty() {
            return Err(ManifestError::Invalid("no scans".into()));
        }
        for (index, w) in self.scans.windows(2).enumerate() {
            if w[1].t_start <= w[0].t_start {
                return Err(ManifestError::NotIncreasing {
                    index: index + 1,
                    t: w[1].t_start,
                    previous: w[0].t_start,
                });
            }
        }
        Ok(())
    }

    fn check_files(&self) -> Result<(), ManifestError> {
        let mut files = vec![&self.imu];
        files.extend(&self.ground_truth);
        for s in &self.scans {
            files.push(&s.cloud);
            files.extend(&s.labels);
        }
        for f in files {
            let p = self.root.join(f);
            if !p.is_file() {
                return Err(ManifestError::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scan_period {}", self.scan_period);
        let _ = writeln!(out, "theta_end {}", self.theta_end);
        let _ = writeln!(out, "imu {}", self.imu.display());
        if let Some(gt) = &self.ground_truth {
            let _ = writeln!(out, "ground_truth {}", gt.display());
        }
        for s in &self.scans {
            let _ = write!(out, "scan {} {}", s.t_start, s.cloud.display());
            if let Some(l) = &s.labels {
                let _ = write!(out, " {}", l.display());
            }
            out.push('\n');
        }
        out
    }
}
