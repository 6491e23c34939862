//! Candidate gating and point removal.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;

use super::classify::{CellPrediction, ObjectClass};
use super::cluster::CellCluster;
use super::features::{CellIndex, ChannelGrid};
use crate::geometry::{LaserScan, Vec3};

/// Cluster acceptance gates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionGates {
    pub min_points: usize,
    /// Longer horizontal side of the box, meters.
    pub min_extent: f64,
    pub max_extent: f64,
    pub min_objectness: f64,
    pub min_positiveness: f64,
    /// Points closer than this to the cluster's ground stay static, meters.
    pub ground_clearance: f64,
}

impl Default for DetectionGates {
    fn default() -> Self {
        DetectionGates {
            min_points: 5,
            min_extent: 0.0,
            max_extent: 8.0,
            min_objectness: 0.5,
            min_positiveness: 0.5,
            ground_clearance: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleCluster {
    pub cells: Vec<CellIndex>,
    /// Scan indices of the points above ground clearance, ascending.
    pub points: Vec<usize>,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub class: ObjectClass,
    /// Mean objectness.
    pub confidence: f64,
    pub positiveness: f64,
}

impl ObstacleCluster {
    /// Longer horizontal side of the bounding box.
    pub fn extent(&self) -> f64 {
        let d = self.bbox_max - self.bbox_min;
        d.x.max(d.y)
    }

    pub fn build(
        cluster: &CellCluster,
        grid: &ChannelGrid,
        predictions: &[CellPrediction],
        scan: &LaserScan,
        clearance: f64,
    ) -> Self {
        let ground = cluster
            .cells
            .iter()
            .filter_map(|c| grid.cell(*c))
            .map(|c| c.ground_height)
            .fold(f64::INFINITY, f64::min);
        let mut points: Vec<usize> = cluster
            .cells
            .iter()
            .filter_map(|c| grid.cell(*c))
            .flat_map(|c| c.members.iter().copied())
            .filter(|&i| scan.points[i].position.z > ground + clearance)
            .collect();
        points.sort_unstable();
        let mut bbox_min = Vec3::repeat(f64::INFINITY);
        let mut bbox_max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &points {
            bbox_min = bbox_min.inf(&scan.points[i].position);
            bbox_max = bbox_max.sup(&scan.points[i].position);
        }
        if points.is_empty() {
            bbox_min = Vec3::zeros();
            bbox_max = Vec3::zeros();
        }
        let n = cluster.predictions.len().max(1) as f64;
        let mut probs = [0.0; 4];
        let mut confidence = 0.0;
        let mut positiveness = 0.0;
        for &k in &cluster.predictions {
            let p = &predictions[k];
            confidence += p.objectness / n;
            positiveness += p.positiveness / n;
            for (acc, v) in probs.iter_mut().zip(p.class_probs) {
                *acc += v / n;
            }
        }
        let class = CellPrediction {
            class_probs: probs,
            ..predictions[cluster.predictions[0]]
        }
        .class();
        ObstacleCluster {
            cells: cluster.cells.clone(),
            points,
            bbox_min,
            bbox_max,
            class,
            confidence,
            positiveness,
        }
    }

    pub fn passes(&self, gates: &DetectionGates) -> bool {
        let e = self.extent();
        self.points.len() >= gates.min_points
            && e >= gates.min_extent
            && e <= gates.max_extent
            && self.confidence >= gates.min_objectness
            && self.positiveness >= gates.min_positiveness
    }
}

/// Result of removing the accepted clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub static_scan: LaserScan,
    /// Removed points, ascending scan index.
    pub dynamic_indices: Vec<usize>,
    pub dynamic_scan: LaserScan,
    pub accepted: Vec<ObstacleCluster>,
    pub rejected: usize,
}

/// Removes the points of every cluster that passes the gates; the rest of
/// the scan, including failed clusters, stays static.
pub fn postprocess_and_remove(scan: &LaserScan, clusters: &[ObstacleCluster], gates: &DetectionGates) -> Separation {
    let mut remove = alloc::vec![false; scan.len()];
    let mut accepted = Vec::new();
    let mut rejected = 0;
    for c in clusters {
        if c.passes(gates) {
            for &i in &c.points {
                remove[i] = true;
            }
            accepted.push(c.clone());
        } else {
            rejected += 1;
        }
    }
    let dynamic_indices: Vec<usize> = (0..scan.len()).filter(|&i| remove[i]).collect();
    Separation {
        static_scan: scan.select(|i| !remove[i]),
        dynamic_scan: scan.select(|i| remove[i]),
        dynamic_indices,
        accepted,
        rejected,
    }
}
