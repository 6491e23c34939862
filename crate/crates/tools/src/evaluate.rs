//! `evaluate` and `inspect` subcommand bodies.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use lio_core::eval::{associate, ate_from_pairs, kitti_rel_error, EvalError, Trajectory};
use lio_core::geometry::Vec3;
use thiserror::Error;

use crate::formats::{self, FormatError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Ate,
    Kitti,
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Associates `est` with `reference` within `max_dt` seconds and returns
/// the metric report text.
pub fn evaluate(est: &Path, reference: &Path, metric: Metric, max_dt: f64, kitti_step: usize) -> Result<String, EvaluateError> {
    let est = Trajectory::new(formats::read_traj_tum(est)?)?;
    let reference = Trajectory::new(formats::read_traj_tum(reference)?)?;
    let pairs = associate(&est, &reference, max_dt)?;
    Ok(match metric {
        Metric::Ate => ate_from_pairs(&pairs)?.to_text(),
        Metric::Kitti => kitti_rel_error(&pairs, kitti_step)?.to_text(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapStats {
    pub points: usize,
    pub min: Vec3,
    pub max: Vec3,
    /// Occupied cells of `cell` meters.
    pub occupied_cells: usize,
    pub cell: f64,
}

impl MapStats {
    pub fn compute(points: &[Vec3], cell: f64) -> Option<MapStats> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        let mut cells = BTreeSet::new();
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
            cells.insert([
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            ]);
        }
        Some(MapStats {
            points: points.len(),
            min,
            max,
            occupied_cells: cells.len(),
            cell,
        })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn to_text(&self) -> String {
        let e = self.extent();
        let footprint = (e.x * e.y).max(1e-9);
        let mut s = String::new();
        let _ = writeln!(s, "points: {}", self.points);
        let _ = writeln!(s, "min: {:.3} {:.3} {:.3}", self.min.x, self.min.y, self.min.z);
        let _ = writeln!(s, "max: {:.3} {:.3} {:.3}", self.max.x, self.max.y, self.max.z);
        let _ = writeln!(s, "extent: {:.3} {:.3} {:.3}", e.x, e.y, e.z);
        let _ = writeln!(s, "points_per_m2_footprint: {:.3}", self.points as f64 / footprint);
        let _ = writeln!(s, "occupied_cells_{}m: {}", self.cell, self.occupied_cells);
        let _ = writeln!(
            s,
            "points_per_occupied_cell: {:.3}",
            self.points as f64 / self.occupied_cells as f64
        );
        s
    }
}

pub fn inspect(map: &Path) -> Result<String, FormatError> {
    let points: Vec<Vec3> = formats::read_cloud(map)?.iter().map(|p| p.position).collect();
    Ok(match MapStats::compute(&points, 1.0) {
        Some(stats) => stats.to_text(),
        None => "points: 0\n".to_string(),
    })
}
