//! Writes a simulated dataset directory.

use std::fs;
use std::path::{Path, PathBuf};

use lio_core::sim::{Scenario, ScenarioPreset};
use rayon::prelude::*;
use thiserror::Error;

use crate::formats::{self, FormatError};
use crate::manifest::{DatasetManifest, ScanEntry, MANIFEST_FILE};

pub const IMU_FILE: &str = "imu.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tum";

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("output directory {0} exists and is not empty")]
    NotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimulateError + '_ {
    move |source| SimulateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Renders every scan of the preset and writes clouds, labels, the IMU
/// log, ground truth and the manifest into `out`. The directory is built
/// next to `out` and renamed into place when complete.
pub fn simulate(preset: ScenarioPreset, seed: u64, out: &Path) -> Result<DatasetManifest, SimulateError> {
    if out.exists() && fs::read_dir(out).map_err(io(out))?.next().is_some() {
        return Err(SimulateError::NotEmpty(out.to_path_buf()));
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".lio-simulate-")
        .tempdir_in(&parent)
        .map_err(io(&parent))?;
    let root = staging.path();
    fs::create_dir(root.join("scans")).map_err(io(root))?;
    fs::create_dir(root.join("labels")).map_err(io(root))?;

    let scenario = Scenario::preset(preset, seed);
    let times = scenario.scan_times();
    let scans: Vec<ScanEntry> = times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| -> Result<ScanEntry, SimulateError> {
            let rendered = scenario.render(t);
            let entry = ScanEntry {
                t_start: t,
                cloud: PathBuf::from(format!("scans/{k:06}.bin")),
                labels: Some(PathBuf::from(format!("labels/{k:06}.lbl"))),
            };
            formats::write_scan_bin(&root.join(&entry.cloud), &rendered.scan)?;
            let labels = rendered.scan.labels.unwrap_or_default();
            formats::write_labels(&root.join(entry.labels.as_ref().unwrap()), &labels)?;
            Ok(entry)
        })
        .collect::<Result<_, _>>()?;

    formats::write_imu_csv(&root.join(IMU_FILE), scenario.imu().samples())?;
    formats::write_traj_tum(&root.join(GROUND_TRUTH_FILE), &scenario.ground_truth())?;
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        scan_period: scenario.lidar.scan_period,
        theta_end: 2.0 * std::f64::consts::PI,
        imu: PathBuf::from(IMU_FILE),
        ground_truth: Some(PathBuf::from(GROUND_TRUTH_FILE)),
        scans,
    };
    fs::write(root.join(MANIFEST_FILE), manifest.to_text()).map_err(io(root))?;

    if out.exists() {
        fs::remove_dir(out).map_err(io(out))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out).map_err(io(out))?;
    Ok(manifest)
}
