//! Threaded batch run over a dataset.
//!
//! Three kinds of thread share the work:
//!
//! * loader workers read clouds and labels and stamp point times,
//! * the filter owner (the calling thread) propagates the IMU and runs
//!   deskew, detection and scan matching in scan order,
//! * the mapping owner refines every `mapping.cadence`-th scan against the
//!   global map and integrates it.
//!
//! Queues are bounded by `pipeline.queue_depth`. Results depend only on
//! the order of scans, never on thread timing, so two runs produce the same
//! trajectories and map.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Instant;

use lio_core::deskew::stamp_points;
use lio_core::dynamic::{CellClassifier, DynamicFilter};
use lio_core::geometry::{ImuSample, LaserScan, Pose, TimedPoint, Vec3, LABEL_DYNAMIC};
use lio_core::mapping::{MapStatus, Mapper, RefinedPoseEvent};
use lio_core::odometry::{LioFrontend, SkipReason};
use thiserror::Error;

use crate::config::{ClassifierKind, ConfigError, PipelineConfig};
use crate::formats::{self, FormatError};
use crate::manifest::DatasetManifest;

pub const ODOMETRY_FILE: &str = "odometry.tum";
pub const REFINED_FILE: &str = "refined.tum";
pub const MAP_FILE: &str = "map.bin";
pub const REPORT_FILE: &str = "report.txt";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("imu log: {0}")]
    Imu(FormatError),
    #[error("{0}")]
    Startup(String),
    #[error("scan {index}, stage {stage}: {message}")]
    Stage {
        index: usize,
        stage: &'static str,
        message: String,
    },
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
}

fn stage(index: usize, stage: &'static str) -> impl FnOnce(String) -> PipelineError {
    move |message| PipelineError::Stage { index, stage, message }
}

/// Per-stage wall times, seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub samples: Vec<f64>,
}

impl StageTimes {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn total(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.total() / self.samples.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRecord {
    pub index: usize,
    pub time: f64,
    pub points: usize,
    pub removed: usize,
    pub fail_open: bool,
    /// Labelled dynamic points in the input, when labels were given.
    pub labelled_dynamic: Option<usize>,
    /// Labelled dynamic points left in the static scan.
    pub missed_dynamic: Option<usize>,
    pub matched: usize,
    pub skipped: Option<SkipReason>,
    pub rotation_only: bool,
    pub nis: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapRecord {
    pub index: usize,
    pub odometry: Pose,
    pub event: RefinedPoseEvent,
}

/// Filter state at the end of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterHealth {
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scans: usize,
    pub imu_samples: usize,
    pub sequence_seconds: f64,
    pub wall_seconds: f64,
    pub detection: Option<ClassifierKind>,
    pub cadence: usize,
    pub loading: StageTimes,
    pub preprocessing: StageTimes,
    pub detection_times: StageTimes,
    pub odometry: StageTimes,
    pub mapping: StageTimes,
    pub odometry_poses: usize,
    pub scan_records: Vec<ScanRecord>,
    pub map_records: Vec<MapRecord>,
    pub health: FilterHealth,
    pub map_points: usize,
}

impl RunReport {
    /// Odometry poses emitted per second of wall time.
    pub fn odometry_rate_hz(&self) -> f64 {
        self.odometry_poses as f64 / self.wall_seconds.max(1e-9)
    }

    /// Refined poses emitted per second of wall time.
    pub fn mapping_rate_hz(&self) -> f64 {
        self.map_records.len() as f64 / self.wall_seconds.max(1e-9)
    }

    /// Stage rows: name, times.
    pub fn stages(&self) -> [(&'static str, &StageTimes); 5] {
        [
            ("scan loading", &self.loading),
            ("scan pre-processing", &self.preprocessing),
            ("dynamic object detection", &self.detection_times),
            ("laser-inertial odometry", &self.odometry),
            ("laser mapping", &self.mapping),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "# lio run report");
        let _ = writeln!(o, "scans: {}", self.scans);
        let _ = writeln!(o, "imu_samples: {}", self.imu_samples);
        let _ = writeln!(o, "sequence_seconds: {:.3}", self.sequence_seconds);
        let _ = writeln!(o, "wall_seconds: {:.3}", self.wall_seconds);
        let detection = match self.detection {
            None => "off".to_string(),
            Some(ClassifierKind::Heuristic) => "on (heuristic)".to_string(),
            Some(ClassifierKind::Oracle) => "on (oracle)".to_string(),
        };
        let _ = writeln!(o, "detection: {detection}");
        let _ = writeln!(o, "mapping_cadence: {}", self.cadence);

        let _ = writeln!(o, "\n## stage timings");
        let _ = writeln!(o, "{:<26} {:>9} {:>9} {:>7}", "stage", "mean_ms", "max_ms", "count");
        for (name, t) in self.stages() {
            let _ = writeln!(
                o,
                "{:<26} {:>9.2} {:>9.2} {:>7}",
                name,
                t.mean() * 1e3,
                t.max() * 1e3,
                t.count()
            );
        }

        let _ = writeln!(o, "\n## rates");
        let _ = writeln!(o, "odometry_poses: {}", self.odometry_poses);
        let _ = writeln!(o, "mapping_events: {}", self.map_records.len());
        let _ = writeln!(o, "odometry_rate_hz: {:.2}", self.odometry_rate_hz());
        let _ = writeln!(o, "mapping_rate_hz: {:.2}", self.mapping_rate_hz());
        let seq = self.sequence_seconds.max(1e-9);
        let _ = writeln!(o, "odometry_rate_sequence_hz: {:.2}", self.odometry_poses as f64 / seq);
        let _ = writeln!(o, "mapping_rate_sequence_hz: {:.2}", self.map_records.len() as f64 / seq);

        let r = &self.scan_records;
        let _ = writeln!(o, "\n## detection");
        let _ = writeln!(o, "points_in: {}", r.iter().map(|s| s.points).sum::<usize>());
        let _ = writeln!(o, "points_removed: {}", r.iter().map(|s| s.removed).sum::<usize>());
        let _ = writeln!(o, "fail_open_scans: {}", r.iter().filter(|s| s.fail_open).count());
        if r.iter().all(|s| s.labelled_dynamic.is_some()) {
            let labelled: usize = r.iter().filter_map(|s| s.labelled_dynamic).sum();
            let missed: usize = r.iter().filter_map(|s| s.missed_dynamic).sum();
            let _ = writeln!(o, "labelled_dynamic: {labelled}");
            let _ = writeln!(o, "missed_dynamic: {missed}");
        }

        let _ = writeln!(o, "\n## filter health");
        let mut skips: BTreeMap<String, usize> = BTreeMap::new();
        for s in r {
            if let Some(k) = &s.skipped {
                let name = format!("{k:?}");
                let kind = name.split(['(', ' ']).next().unwrap_or_default().to_string();
                *skips.entry(kind).or_default() += 1;
            }
        }
        let _ = writeln!(o, "updates: {}", r.iter().filter(|s| s.nis.is_some()).count());
        let _ = writeln!(o, "rotation_only_updates: {}", r.iter().filter(|s| s.rotation_only).count());
        let _ = writeln!(o, "skipped_scans: {}", r.iter().filter(|s| s.skipped.is_some()).count());
        for (k, n) in &skips {
            let _ = writeln!(o, "skipped.{k}: {n}");
        }
        let nis: Vec<f64> = r.iter().filter_map(|s| s.nis).collect();
        if !nis.is_empty() {
            let _ = writeln!(o, "mean_nis: {:.4}", nis.iter().sum::<f64>() / nis.len() as f64);
        }
        let h = &self.health;
        let v = |v: &Vec3| format!("{:.6} {:.6} {:.6}", v.x, v.y, v.z);
        let _ = writeln!(o, "final_accel_bias: {}", v(&h.accel_bias));
        let _ = writeln!(o, "final_gyro_bias: {}", v(&h.gyro_bias));
        let _ = writeln!(o, "covariance_min_eigenvalue: {:e}", h.min_eigenvalue);
        let _ = writeln!(o, "covariance_asymmetry: {:e}", h.asymmetry);

        let _ = writeln!(o, "\n## mapping");
        let m = &self.map_records;
        let count = |f: &dyn Fn(&MapStatus) -> bool| m.iter().filter(|e| f(&e.event.status)).count();
        let _ = writeln!(o, "bootstrap: {}", count(&|s| matches!(s, MapStatus::Bootstrap)));
        let _ = writeln!(o, "converged: {}", count(&|s| matches!(s, MapStatus::Converged)));
        let _ = writeln!(o, "fallback: {}", count(&|s| matches!(s, MapStatus::Fallback(_))));
        let _ = writeln!(o, "map_points: {}", self.map_points);

        let _ = writeln!(o, "\n## scans");
        let _ = writeln!(o, "index time points removed matched nis iterations status");
        for s in r {
            let status = match (&s.skipped, s.rotation_only) {
                (Some(k), _) => format!("skipped:{k:?}"),
                (None, true) => "rotation-only".into(),
                (None, false) => "full".into(),
            };
            let nis = s.nis.map_or("-".to_string(), |n| format!("{n:.4}"));
            let _ = writeln!(
                o,
                "{} {:.3} {} {} {} {} {} {}{}",
                s.index,
                s.time,
                s.points,
                s.removed,
                s.matched,
                nis,
                s.iterations,
                status,
                if s.fail_open { " fail-open" } else { "" }
            );
        }

        let _ = writeln!(o, "\n## mapping events");
        let _ = writeln!(o, "index time status integrated iterations correction_m correction_rad");
        for e in m {
            let d = e.event.refined.boxminus(&e.event.prior);
            let _ = writeln!(
                o,
                "{} {:.3} {:?} {} {} {:.4} {:.5}",
                e.index,
                e.event.time,
                e.event.status,
                e.event.integrated,
                e.event.iterations,
                d.fixed_rows::<3>(0).norm(),
                d.fixed_rows::<3>(3).norm()
            );
        }
        o
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutputs {
    /// Lidar poses at every IMU sample, replaced by the filter posterior at
    /// scan times.
    pub odometry: Vec<(f64, Pose)>,
    /// Odometry poses with the latest mapping correction applied.
    pub refined: Vec<(f64, Pose)>,
    /// Global map centroids.
    pub map: Vec<Vec3>,
    pub report: RunReport,
}

/// Hands out scan indices to loaders, at most `depth` ahead of the filter.
struct Gate {
    state: Mutex<GateState>,
    cv: Condvar,
    depth: usize,
    total: usize,
}

struct GateState {
    next: usize,
    consumed: usize,
    stop: bool,
}

impl Gate {
    fn claim(&self) -> Option<usize> {
        let mut s = self.state.lock().unwrap();
        while !s.stop && s.next < self.total && s.next >= s.consumed + self.depth {
            s = self.cv.wait(s).unwrap();
        }
        if s.stop || s.next >= self.total {
            return None;
        }
        s.next += 1;
        Some(s.next - 1)
    }

    fn consumed(&self, n: usize) {
        self.state.lock().unwrap().consumed = n;
        self.cv.notify_all();
    }

    fn stop(&self) {
        self.state.lock().unwrap().stop = true;
        self.cv.notify_all();
    }
}

struct Loaded {
    index: usize,
    scan: Result<LaserScan, String>,
    seconds: f64,
}

fn load_scan(manifest: &DatasetManifest, index: usize) -> Result<LaserScan, String> {
    let entry = &manifest.scans[index];
    let mut scan = formats::read_scan_bin(
        &manifest.resolve(&entry.cloud),
        entry.t_start,
        manifest.scan_period,
        manifest.theta_end,
    )
    .map_err(|e| e.to_string())?;
    if let Some(l) = &entry.labels {
        let path = manifest.resolve(l);
        let labels = formats::read_labels(&path).map_err(|e| e.to_string())?;
        if labels.len() != scan.points.len() {
            return Err(format!(
                "{}: {} labels for {} points",
                path.display(),
                labels.len(),
                scan.points.len()
            ));
        }
        scan.labels = Some(labels);
    }
    stamp_points(&scan).map_err(|e| e.to_string())
}

fn loader(manifest: &DatasetManifest, gate: &Gate, tx: SyncSender<Loaded>) {
    while let Some(index) = gate.claim() {
        let start = Instant::now();
        let scan = load_scan(manifest, index);
        let seconds = start.elapsed().as_secs_f64();
        if tx.send(Loaded { index, scan, seconds }).is_err() {
            return;
        }
    }
}

struct MapJob {
    index: usize,
    scan: LaserScan,
    odometry: Pose,
}

struct MappingResult {
    records: Vec<MapRecord>,
    map: Vec<Vec3>,
    times: StageTimes,
}

/// Refines each job with the prior `correction * odometry`, where the
/// correction comes from the previous job.
fn mapping_owner(config: &PipelineConfig, rx: Receiver<MapJob>) -> MappingResult {
    let mut mapper = Mapper::new(config.mapping.clone());
    let cov = mapper.config.prior_covariance();
    let mut correction = Pose::identity();
    let mut records = Vec::new();
    let mut times = StageTimes::default();
    for job in rx {
        let start = Instant::now();
        let prior = correction.compose(&job.odometry);
        let event = mapper.refine_and_integrate(&job.scan, &prior, &cov);
        correction = event.refined.compose(&job.odometry.inverse());
        times.samples.push(start.elapsed().as_secs_f64());
        records.push(MapRecord {
            index: job.index,
            odometry: job.odometry,
            event,
        });
    }
    MappingResult {
        records,
        map: mapper.map().points(),
        times,
    }
}

fn detector(config: &PipelineConfig) -> Option<DynamicFilter> {
    config.detection_enabled.then(|| {
        let classifier: Box<dyn CellClassifier + Send + Sync> = match config.classifier {
            ClassifierKind::Heuristic => Box::new(config.heuristic),
            ClassifierKind::Oracle => Box::new(config.oracle),
        };
        DynamicFilter::new(config.detection.clone(), classifier)
    })
}

fn dynamic_count(scan: &LaserScan) -> Option<usize> {
    scan.labels
        .as_ref()
        .map(|l| l.iter().filter(|v| **v == LABEL_DYNAMIC).count())
}

struct FilterResult {
    odometry: Vec<(f64, Pose)>,
    records: Vec<ScanRecord>,
    loading: StageTimes,
    preprocessing: StageTimes,
    detection: StageTimes,
    odometry_times: StageTimes,
    health: FilterHealth,
}

fn filter_owner(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    imu: &[ImuSample],
    gate: &Gate,
    scans: Receiver<Loaded>,
    jobs: SyncSender<MapJob>,
) -> Result<FilterResult, PipelineError> {
    let mut fe = LioFrontend::new(config.odometry_config(), &Pose::identity(), imu[0].timestamp, detector(config));
    let mut out = FilterResult {
        odometry: Vec::new(),
        records: Vec::new(),
        loading: StageTimes::default(),
        preprocessing: StageTimes::default(),
        detection: StageTimes::default(),
        odometry_times: StageTimes::default(),
        health: FilterHealth {
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            min_eigenvalue: 0.0,
            asymmetry: 0.0,
        },
    };
    let mut reorder: BTreeMap<usize, Loaded> = BTreeMap::new();
    let mut cursor = 0;
    for index in 0..manifest.scans.len() {
        let loaded = loop {
            if let Some(l) = reorder.remove(&index) {
                break l;
            }
            let l = scans.recv().map_err(|_| PipelineError::Stage {
                index,
                stage: "load",
                message: "loader threads stopped".into(),
            })?;
            reorder.insert(l.index, l);
        };
        gate.consumed(index + 1);
        out.loading.samples.push(loaded.seconds);
        let scan = loaded.scan.map_err(stage(index, "load"))?;

        while cursor < imu.len() && imu[cursor].timestamp <= scan.t_start + 1e-9 {
            let pose = fe
                .ingest_imu(&imu[cursor])
                .map_err(|e| stage(index, "propagate")(e.to_string()))?;
            out.odometry.push(pose);
            cursor += 1;
        }

        let start = Instant::now();
        fe.advance_to(scan.t_start)
            .map_err(|e| stage(index, "propagate")(e.to_string()))?;
        let deskewed = fe
            .deskew_scan(&scan, &imu[cursor..])
            .map_err(|e| stage(index, "deskew")(e.to_string()))?;
        out.preprocessing.samples.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        let labelled_dynamic = dynamic_count(&deskewed);
        let (static_scan, removed, fail_open) = fe.detect(deskewed);
        out.detection.samples.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        let update = fe
            .match_and_update(&static_scan)
            .map_err(|e| stage(index, "odometry")(e.to_string()))?;
        out.odometry_times.samples.push(start.elapsed().as_secs_f64());

        match out.odometry.last_mut() {
            Some((t, p)) if (*t - scan.t_start).abs() < 1e-9 => *p = update.pose,
            _ => out.odometry.push((scan.t_start, update.pose)),
        }
        out.records.push(ScanRecord {
            index,
            time: scan.t_start,
            points: scan.points.len(),
            removed,
            fail_open: fail_open.is_some(),
            labelled_dynamic,
            missed_dynamic: dynamic_count(&static_scan),
            matched: update.matched_points,
            skipped: update.skipped,
            rotation_only: update.rotation_only,
            nis: update.update.as_ref().map(|d| d.nis),
            iterations: update.registration.as_ref().map_or(0, |r| r.iterations),
        });

        if index % config.mapping_cadence == 0 {
            let job = MapJob {
                index,
                scan: static_scan,
                odometry: update.pose,
            };
            jobs.send(job).map_err(|_| PipelineError::Stage {
                index,
                stage: "mapping",
                message: "mapping thread stopped".into(),
            })?;
        }
    }

    // Dead reckoning through the last sweep.
    let last = manifest.scans.last().map_or(0.0, |s| s.t_start + manifest.scan_period);
    while cursor < imu.len() && imu[cursor].timestamp <= last + 1e-9 {
        let pose = fe
            .ingest_imu(&imu[cursor])
            .map_err(|e| stage(manifest.scans.len() - 1, "propagate")(e.to_string()))?;
        out.odometry.push(pose);
        cursor += 1;
    }

    let f = fe.filter();
    out.health = FilterHealth {
        accel_bias: f.state().accel_bias,
        gyro_bias: f.state().gyro_bias,
        min_eigenvalue: f.covariance().min_eigenvalue(),
        asymmetry: f.covariance().asymmetry(),
    };
    Ok(out)
}

/// Applies, at each odometry time, the correction of the latest mapping
/// event at or before it. Poses before the first event are unchanged.
pub fn refine_trajectory(odometry: &[(f64, Pose)], records: &[MapRecord]) -> Vec<(f64, Pose)> {
    let mut k = 0;
    let mut correction = Pose::identity();
    odometry
        .iter()
        .map(|(t, p)| {
            while k < records.len() && records[k].event.time <= t + 1e-9 {
                correction = records[k].event.refined.compose(&records[k].odometry.inverse());
                k += 1;
            }
            (*t, correction.compose(p))
        })
        .collect()
}

/// Checks the inputs that can be checked before any work starts.
fn check_startup(manifest: &DatasetManifest, config: &PipelineConfig, imu: &[ImuSample]) -> Result<(), PipelineError> {
    let first = manifest.scans[0].t_start;
    match imu.first() {
        None => return Err(PipelineError::Startup("imu log is empty".into())),
        Some(s) if s.timestamp > first => {
            return Err(PipelineError::Startup(format!(
                "imu log starts at {} after the first scan at {first}",
                s.timestamp
            )))
        }
        _ => {}
    }
    if config.detection_enabled
        && config.classifier == ClassifierKind::Oracle
        && manifest.scans.iter().any(|s| s.labels.is_none())
    {
        return Err(PipelineError::Startup("the oracle classifier needs label files for every scan".into()));
    }
    Ok(())
}

pub fn run_pipeline(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<RunOutputs, PipelineError> {
    config.validate()?;
    let imu = formats::read_imu_csv(&manifest.resolve(&manifest.imu))
        .map_err(PipelineError::Imu)?
        .into_samples();
    check_startup(manifest, config, &imu)?;
    let wall = Instant::now();
    let gate = Gate {
        state: Mutex::new(GateState {
            next: 0,
            consumed: 0,
            stop: false,
        }),
        cv: Condvar::new(),
        depth: config.queue_depth,
        total: manifest.scans.len(),
    };

    let (filtered, mapped) = thread::scope(|s| {
        let (scan_tx, scan_rx) = sync_channel(config.queue_depth);
        for _ in 0..config.loader_threads {
            let tx = scan_tx.clone();
            let gate = &gate;
            s.spawn(move || loader(manifest, gate, tx));
        }
        drop(scan_tx);
        let (job_tx, job_rx) = sync_channel(config.queue_depth);
        let mapping = s.spawn(move || mapping_owner(config, job_rx));
        let filtered = filter_owner(manifest, config, &imu, &gate, scan_rx, job_tx);
        gate.stop();
        let mapped = mapping.join().expect("mapping thread panicked");
        (filtered, mapped)
    });
    let filtered = filtered?;
    let wall_seconds = wall.elapsed().as_secs_f64();

    let refined = refine_trajectory(&filtered.odometry, &mapped.records);
    let sequence_seconds = match (filtered.odometry.first(), filtered.odometry.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    let report = RunReport {
        scans: manifest.scans.len(),
        imu_samples: imu.len(),
        sequence_seconds,
        wall_seconds,
        detection: config.detection_enabled.then_some(config.classifier),
        cadence: config.mapping_cadence,
        loading: filtered.loading,
        preprocessing: filtered.preprocessing,
        detection_times: filtered.detection,
        odometry: filtered.odometry_times,
        mapping: mapped.times,
        odometry_poses: filtered.odometry.len(),
        scan_records: filtered.records,
        map_records: mapped.records,
        health: filtered.health,
        map_points: mapped.map.len(),
    };
    Ok(RunOutputs {
        odometry: filtered.odometry,
        refined,
        map: mapped.map,
        report,
    })
}

pub fn map_cloud(map: &[Vec3]) -> Vec<u8> {
    let points: Vec<TimedPoint> = map.iter().map(|p| TimedPoint::new(*p, 0.0)).collect();
    formats::encode_cloud(&points)
}

/// Writes every output to a temporary file in `out` first and renames them
/// into place only once all are written.
pub fn write_outputs(out: &Path, outputs: &RunOutputs, config: &PipelineConfig) -> Result<(), PipelineError> {
    let err = |path: &Path, e: &dyn std::fmt::Display| PipelineError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(out).map_err(|e| err(out, &e))?;
    let files: [(&str, Vec<u8>); 5] = [
        (ODOMETRY_FILE, formats::encode_tum(&outputs.odometry).into_bytes()),
        (REFINED_FILE, formats::encode_tum(&outputs.refined).into_bytes()),
        (MAP_FILE, map_cloud(&outputs.map)),
        (REPORT_FILE, outputs.report.to_text().into_bytes()),
        (CONFIG_FILE, config.to_text().into_bytes()),
    ];
    let mut staged = Vec::new();
    for (name, bytes) in &files {
        let mut tmp = tempfile::NamedTempFile::new_in(out).map_err(|e| err(out, &e))?;
        tmp.write_all(bytes).map_err(|e| err(tmp.path(), &e))?;
        tmp.as_file().sync_all().map_err(|e| err(tmp.path(), &e))?;
        staged.push((tmp, out.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| err(&path, &e))?;
    }
    Ok(())
}
