//! Per-cell obstacle predictions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use super::cluster::UnionFind;
use super::features::{CellIndex, ChannelGrid, GridCell};
use crate::geometry::{LaserScan, LABEL_DYNAMIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Background,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::Background,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPrediction {
    pub cell: CellIndex,
    pub objectness: f64,
    pub positiveness: f64,
    /// Offset from the cell centre to the object centre, meters.
    pub center_offset: Option<[f64; 2]>,
    pub object_height: f64,
    /// Indexed like [`ObjectClass::ALL`].
    pub class_probs: [f64; 4],
}

impl CellPrediction {
    /// Prediction with no learned offset and a vehicle/background split.
    pub fn from_objectness(cell: CellIndex, objectness: f64, height: f64) -> Self {
        let o = objectness.clamp(0.0, 1.0);
        CellPrediction {
            cell,
            objectness: o,
            positiveness: o,
            center_offset: None,
            object_height: height,
            class_probs: [o, 0.0, 0.0, 1.0 - o],
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.objectness)
            && unit(self.positiveness)
            && self.class_probs.iter().all(|&p| unit(p))
            && (self.class_probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }

    pub fn class(&self) -> ObjectClass {
        let mut best = 0;
        for k in 1..4 {
            if self.class_probs[k] > self.class_probs[best] {
                best = k;
            }
        }
        ObjectClass::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("classifier needs ground-truth labels but the scan has none")]
    MissingLabels,
    #[error("classifier produced an invalid prediction for cell ({row}, {col})")]
    InvalidPrediction { row: i32, col: i32 },
    #[error("{0}")]
    Other(String),
}

/// Maps a feature grid to one prediction per occupied cell. Empty cells
/// have objectness 0 implicitly.
pub trait CellClassifier {
    fn classify(&self, grid: &ChannelGrid, scan: &LaserScan) -> Result<Vec<CellPrediction>, ClassifierError>;
}

/// Height-above-ground gates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicClassifier {
    /// Tallest point must clear the ground by this much, meters.
    pub min_height: f64,
    /// Cells taller than this are structure, not traffic.
    pub max_height: f64,
    /// Width of the linear ramps at both gates.
    pub ramp: f64,
    pub min_points: usize,
}

impl Default for HeuristicClassifier {
    fn default() -> Self {
        HeuristicClassifier {
            min_height: 0.4,
            max_height: 3.5,
            ramp: 0.3,
            min_points: 2,
        }
    }
}

impl HeuristicClassifier {
    pub fn objectness(&self, cell: &GridCell) -> f64 {
        if cell.count < self.min_points {
            return 0.0;
        }
        let h = cell.height_above_ground();
        let rise = ((h - self.min_height) / self.ramp + 0.5).clamp(0.0, 1.0);
        let fall = ((self.max_height - h) / self.ramp + 0.5).clamp(0.0, 1.0);
        rise * fall
    }
}

impl CellClassifier for HeuristicClassifier {
    fn classify(&self, grid: &ChannelGrid, _scan: &LaserScan) -> Result<Vec<CellPrediction>, ClassifierError> {
        Ok(grid
            .cells()
            .iter()
            .map(|c| CellPrediction::from_objectness(c.index, self.objectness(c), c.height_above_ground()))
            .collect())
    }
}

/// Reads the simulator labels: objectness 1 exactly on cells holding a
/// dynamic point.
///
/// Dynamic cells closer than `link_radius` are taken to be one object. Each
/// cell's centre offset points at the object's member cell nearest the
/// object's point centroid, the way a trained network's offsets converge on
/// an object centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleClassifier {
    pub link_radius: f64,
}

impl Default for OracleClassifier {
    fn default() -> Self {
        OracleClassifier { link_radius: 2.0 }
    }
}

impl CellClassifier for OracleClassifier {
    fn classify(&self, grid: &ChannelGrid, scan: &LaserScan) -> Result<Vec<CellPrediction>, ClassifierError> {
        let labels = scan.labels.as_ref().ok_or(ClassifierError::MissingLabels)?;
        let res = grid.config.resolution;
        let mut preds: Vec<CellPrediction> = grid
            .cells()
            .iter()
            .map(|c| {
                let hit = c.members.iter().any(|&i| labels[i] == LABEL_DYNAMIC);
                CellPrediction::from_objectness(c.index, if hit { 1.0 } else { 0.0 }, c.height_above_ground())
            })
            .collect();

        let dynamic: Vec<usize> = (0..preds.len()).filter(|&k| preds[k].objectness > 0.0).collect();
        let id: BTreeMap<CellIndex, usize> = dynamic.iter().enumerate().map(|(n, &k)| (preds[k].cell, n)).collect();
        let reach = (self.link_radius / res).floor() as i32;
        let mut uf = UnionFind::new(dynamic.len());
        for (n, &k) in dynamic.iter().enumerate() {
            let c = preds[k].cell;
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    if ((dr * dr + dc * dc) as f64).sqrt() * res > self.link_radius {
                        continue;
                    }
                    if let Some(&m) = id.get(&c.offset(dr, dc)) {
                        uf.union(n, m);
                    }
                }
            }
        }
        for group in uf.groups() {
            let mut sum = [0.0, 0.0];
            let mut count = 0.0;
            for &n in &group {
                for &i in &grid.cells()[dynamic[n]].members {
                    if labels[i] == LABEL_DYNAMIC {
                        sum[0] += scan.points[i].position.x;
                        sum[1] += scan.points[i].position.y;
                        count += 1.0;
                    }
                }
            }
            let centroid = [sum[0] / count, sum[1] / count];
            let dist = |n: usize| {
                let (x, y) = grid.config.center(preds[dynamic[n]].cell);
                (x - centroid[0]).hypot(y - centroid[1])
            };
            let anchor = *group.iter().min_by(|&&a, &&b| dist(a).total_cmp(&dist(b))).unwrap();
            let (ax, ay) = grid.config.center(preds[dynamic[anchor]].cell);
            for &n in &group {
                let p = &mut preds[dynamic[n]];
                let (x, y) = grid.config.center(p.cell);
                p.center_offset = Some([ax - x, ay - y]);
            }
        }
        Ok(preds)
    }
}

/// Runs the classifier and checks its output.
pub fn classify_cells(
    grid: &ChannelGrid,
    scan: &LaserScan,
    classifier: &dyn CellClassifier,
) -> Result<Vec<CellPrediction>, ClassifierError> {
    let preds = classifier.classify(grid, scan)?;
    if let Some(bad) = preds.iter().find(|p| !p.is_valid()) {
        return Err(ClassifierError::InvalidPrediction {
            row: bad.cell.row,
            col: bad.cell.col,
        });
    }
    Ok(preds)
}
