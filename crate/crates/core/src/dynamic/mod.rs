//! Moving-object point rejection on a bird's-eye grid.
//!
//! Four stages: channel features per cell, per-cell classification,
//! union-find clustering, and gated removal. The classifier is pluggable;
//! [`HeuristicClassifier`] works from geometry alone and
//! [`OracleClassifier`] reads simulator labels.

mod classify;
mod cluster;
mod features;
mod postprocess;

use alloc::boxed::Box;
use alloc::vec::Vec;

pub use classify::{
    classify_cells, CellClassifier, CellPrediction, ClassifierError, HeuristicClassifier, ObjectClass,
    OracleClassifier,
};
pub use cluster::{cluster_cells, CellCluster, UnionFind};
pub use features::{extract_channel_features, CellIndex, ChannelGrid, GridCell, GridConfig};
pub use postprocess::{postprocess_and_remove, DetectionGates, ObstacleCluster, Separation};

use crate::geometry::LaserScan;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicFilterConfig {
    pub grid: GridConfig,
    pub objectness_threshold: f64,
    pub gates: DetectionGates,
}

impl Default for DynamicFilterConfig {
    fn default() -> Self {
        DynamicFilterConfig {
            grid: GridConfig::default(),
            objectness_threshold: 0.5,
            gates: DetectionGates::default(),
        }
    }
}

/// Per-scan detection record.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionOutput {
    pub separation: Separation,
    pub candidates: usize,
    /// Set when the classifier failed and the scan passed through whole.
    pub fail_open: Option<ClassifierError>,
}

impl DetectionOutput {
    pub fn static_scan(&self) -> &LaserScan {
        &self.separation.static_scan
    }

    pub fn removed(&self) -> usize {
        self.separation.dynamic_indices.len()
    }
}

pub struct DynamicFilter {
    pub config: DynamicFilterConfig,
    classifier: Box<dyn CellClassifier + Send + Sync>,
}

impl core::fmt::Debug for DynamicFilter {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("DynamicFilter").field("config", &self.config).finish_non_exhaustive()
    }
}

impl DynamicFilter {
    pub fn new(config: DynamicFilterConfig, classifier: Box<dyn CellClassifier + Send + Sync>) -> Self {
        DynamicFilter { config, classifier }
    }

    /// Splits `scan` into static and dynamic points. Never fails: a
    /// classifier error keeps every point and is reported in `fail_open`.
    pub fn apply(&self, scan: &LaserScan) -> DetectionOutput {
        let grid = extract_channel_features(scan, &self.config.grid);
        let predictions = match classify_cells(&grid, scan, self.classifier.as_ref()) {
            Ok(p) => p,
            Err(e) => {
                return DetectionOutput {
                    separation: postprocess_and_remove(scan, &[], &self.config.gates),
                    candidates: 0,
                    fail_open: Some(e),
                }
            }
        };
        let cell_clusters = cluster_cells(&predictions, self.config.objectness_threshold, self.config.grid.resolution);
        let clusters: Vec<ObstacleCluster> = cell_clusters
            .iter()
            .map(|c| ObstacleCluster::build(c, &grid, &predictions, scan, self.config.gates.ground_clearance))
            .collect();
        DetectionOutput {
            separation: postprocess_and_remove(scan, &clusters, &self.config.gates),
            candidates: clusters.len(),
            fail_open: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TimedPoint, Vec3};

    fn point(x: f64, y: f64, z: f64) -> TimedPoint {
        TimedPoint::new(Vec3::new(x, y, z), 0.5)
    }

    fn scan_of(points: Vec<TimedPoint>) -> LaserScan {
        LaserScan {
            points,
            scan_period: 0.1,
            theta_end: core::f64::consts::TAU,
            ..LaserScan::default()
        }
    }

    #[test]
    fn empty_scan_has_no_occupied_cells() {
        let grid = extract_channel_features(&LaserScan::default(), &GridConfig::default());
        assert!(grid.cells().is_empty());
        assert_eq!(grid.count(CellIndex { row: 240, col: 240 }), 0);
        let preds = classify_cells(&grid, &LaserScan::default(), &HeuristicClassifier::default()).unwrap();
        assert!(preds.is_empty());
    }

    #[test]
    fn single_point_lands_in_one_cell() {
        let scan = scan_of(alloc::vec![point(0.1, 0.1, 1.5)]);
        let grid = extract_channel_features(&scan, &GridConfig::default());
        assert_eq!(grid.cells().len(), 1);
        let c = &grid.cells()[0];
        assert_eq!(c.count, 1);
        assert_eq!(c.max_height, 1.5);
        assert_eq!(c.index, CellIndex { row: 240, col: 240 });
    }

    #[test]
    fn out_of_range_points_bypass_detection() {
        let scan = scan_of(alloc::vec![point(70.0, 0.0, 0.0), point(1.0, -60.5, 0.0), point(60.0, -60.0, 0.0)]);
        let grid = extract_channel_features(&scan, &GridConfig::default());
        assert_eq!(grid.out_of_range, alloc::vec![0, 1]);
        assert_eq!(grid.cells().len(), 1);
    }

    #[test]
    fn small_cluster_reinstated() {
        let scan = scan_of(alloc::vec![point(5.0, 5.0, -1.0), point(5.1, 5.1, -0.9), point(20.0, 0.0, -1.8)]);
        let filter = DynamicFilter::new(DynamicFilterConfig::default(), Box::new(OracleClassifier::default()));
        let out = filter.apply(&LaserScan {
            labels: Some(alloc::vec![1, 1, 0]),
            ..scan
        });
        assert_eq!(out.removed(), 0);
        assert_eq!(out.separation.rejected, 1);
    }

    #[test]
    fn classifier_failure_keeps_every_point() {
        let scan = scan_of(alloc::vec![point(5.0, 5.0, -1.0)]);
        let filter = DynamicFilter::new(DynamicFilterConfig::default(), Box::new(OracleClassifier::default()));
        let out = filter.apply(&scan);
        assert_eq!(out.fail_open, Some(ClassifierError::MissingLabels));
        assert_eq!(out.static_scan(), &scan);
    }

    #[test]
    fn no_clusters_is_identity() {
        let scan = scan_of(alloc::vec![point(5.0, 5.0, -1.0), point(-3.0, 2.0, 0.0)]);
        let sep = postprocess_and_remove(&scan, &[], &DetectionGates::default());
        assert_eq!(sep.static_scan, scan);
        assert!(sep.dynamic_indices.is_empty());
    }

    #[test]
    fn union_find_compresses() {
        let mut uf = UnionFind::new(6);
        uf.union(0, 1);
        uf.union(2, 3);
        uf.union(1, 3);
        assert_eq!(uf.find(0), uf.find(2));
        assert_ne!(uf.find(4), uf.find(0));
        assert_eq!(uf.groups(), alloc::vec![alloc::vec![0, 1, 2, 3], alloc::vec![4], alloc::vec![5]]);
    }

    #[test]
    fn offsets_link_towards_centre() {
        let c = |col| CellIndex { row: 0, col };
        let mut a = CellPrediction::from_objectness(c(0), 1.0, 1.0);
        let mut b = CellPrediction::from_objectness(c(1), 1.0, 1.0);
        let mut far = CellPrediction::from_objectness(c(5), 1.0, 1.0);
        // Both point at cell 1; the far cell points at itself.
        a.center_offset = Some([0.25, 0.0]);
        b.center_offset = Some([0.0, 0.0]);
        far.center_offset = Some([0.0, 0.0]);
        let clusters = cluster_cells(&[a, b, far], 0.5, 0.25);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].cells, alloc::vec![c(0), c(1)]);
    }
}
