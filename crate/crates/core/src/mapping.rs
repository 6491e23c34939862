//! Frame-to-model refinement and the global static map.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix6, Vector6};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::geometry::{LaserScan, Pose, Vec3};
use crate::ndt::{register_coarse_to_fine, NdtConfig, NdtError, NdtPyramid, Neighborhood};

type Key = [i64; 3];

fn key_of(p: &Vec3, leaf: f64) -> Key {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// One centroid per occupied `leaf` voxel, in voxel-index order.
pub fn downsample(points: &[Vec3], leaf: f64) -> Vec<Vec3> {
    assert!(leaf > 0.0, "leaf must be positive");
    let mut cells: BTreeMap<Key, (Vec3, usize)> = BTreeMap::new();
    for p in points {
        if !p.iter().all(|v| v.is_finite()) {
            continue;
        }
        let e = cells.entry(key_of(p, leaf)).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    cells.values().map(|(s, n)| s / *n as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapConfig {
    /// Downsample leaf for scans and the point store, meters.
    pub leaf: f64,
    /// NDT voxel sizes, coarse to fine.
    pub ndt_levels: Vec<f64>,
    pub ndt: NdtConfig,
    pub submap_radius: f64,
    /// Scan points farther than this are not matched, meters.
    pub match_range: f64,
    /// Scan points farther than this are not integrated, meters. Kept a car
    /// length inside the detection grid, since a car cut by the grid edge
    /// can leave a fragment too small for the cluster gates.
    pub integrate_range: f64,
    /// Prior standard deviations for translation (m) and rotation (rad).
    pub prior_std: [f64; 2],
    /// Corrections beyond these bounds count as divergence.
    pub max_correction: [f64; 2],
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            leaf: 0.5,
            ndt_levels: alloc::vec![2.0, 1.0],
            ndt: NdtConfig {
                neighborhood: Neighborhood::Seven,
                lattice_offset: 0.37,
                ..NdtConfig::default()
            },
            submap_radius: 150.0,
            match_range: 80.0,
            integrate_range: 55.0,
            prior_std: [0.5, 0.02],
            max_correction: [2.0, 0.1],
        }
    }
}

impl MapConfig {
    pub fn prior_covariance(&self) -> Matrix6<f64> {
        let [t, r] = self.prior_std;
        Matrix6::from_diagonal(&Vector6::new(t * t, t * t, t * t, r * r, r * r, r * r))
    }
}

/// Accumulated static map: voxel centroids plus an incremental NDT model.
#[derive(Clone, Debug)]
pub struct GlobalMap {
    leaf: f64,
    store: BTreeMap<Key, (Vec3, usize)>,
    ndt: NdtPyramid,
    min: Vec3,
    max: Vec3,
}

impl GlobalMap {
    pub fn new(cfg: &MapConfig) -> Self {
        GlobalMap {
            leaf: cfg.leaf,
            store: BTreeMap::new(),
            ndt: NdtPyramid::new(&cfg.ndt_levels, &cfg.ndt),
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// Number of stored centroids.
    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.store.values().map(|(s, n)| s / *n as f64).collect()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        (!self.is_empty()).then_some((self.min, self.max))
    }

    pub fn ndt(&self) -> &NdtPyramid {
        &self.ndt
    }

    /// NDT model restricted to `radius` around `center`.
    pub fn submap(&self, center: &Vec3, radius: f64) -> NdtPyramid {
        self.ndt.extract(center, radius)
    }

    /// Adds world-frame points: the downsampled batch joins the centroid
    /// store and every point updates the NDT statistics.
    pub fn integrate(&mut self, world: &[Vec3]) {
        let batch = downsample(world, self.leaf);
        for p in &batch {
            let e = self.store.entry(key_of(p, self.leaf)).or_insert((Vec3::zeros(), 0));
            e.0 += p;
            e.1 += 1;
            self.min = self.min.inf(p);
            self.max = self.max.sup(p);
        }
        self.ndt.insert(world);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapStatus {
    /// First scan, placed at the prior.
    Bootstrap,
    Converged,
    /// Registration failed; the prior was kept and nothing integrated.
    Fallback(FallbackReason),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FallbackReason {
    Registration(NdtError),
    NotConverged,
    LargeCorrection,
    EmptyScan,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinedPoseEvent {
    pub time: f64,
    pub prior: Pose,
    pub prior_covariance: Matrix6<f64>,
    pub refined: Pose,
    pub covariance: Matrix6<f64>,
    pub integrated: bool,
    pub status: MapStatus,
    /// Registration iterations, 0 when skipped.
    pub iterations: usize,
}

/// Single writer of the global map.
#[derive(Clone, Debug)]
pub struct Mapper {
    pub config: MapConfig,
    map: GlobalMap,
}

impl Mapper {
    pub fn new(config: MapConfig) -> Self {
        let map = GlobalMap::new(&config);
        Mapper { config, map }
    }

    pub fn map(&self) -> &GlobalMap {
        &self.map
    }

    /// Sensor-frame points within `range`.
    pub fn crop(scan: &LaserScan, range: f64) -> Vec<Vec3> {
        let r2 = range * range;
        scan.points
            .iter()
            .map(|p| p.position)
            .filter(|p| p.norm_squared() <= r2)
            .collect()
    }

    /// Downsampled sensor-frame points used for matching.
    pub fn prepare(&self, scan: &LaserScan) -> Vec<Vec3> {
        downsample(&Self::crop(scan, self.config.match_range), self.config.leaf)
    }

    /// Sensor-frame points that are integrated.
    pub fn integrable(&self, scan: &LaserScan) -> Vec<Vec3> {
        Self::crop(scan, self.config.integrate_range)
    }

    /// Registers a deskewed static scan against the map around `prior`, then
    /// integrates it at the refined pose.
    ///
    /// The refined pose is the posterior of the prior and the NDT match in
    /// the pose tangent at the prior.
    pub fn refine_and_integrate(&mut self, scan: &LaserScan, prior: &Pose, prior_covariance: &Matrix6<f64>) -> RefinedPoseEvent {
        let cropped = self.integrable(scan);
        let points = self.prepare(scan);
        let mut event = RefinedPoseEvent {
            time: scan.t_start,
            prior: *prior,
            prior_covariance: *prior_covariance,
            refined: *prior,
            covariance: *prior_covariance,
            integrated: false,
            status: MapStatus::Bootstrap,
            iterations: 0,
        };
        if points.is_empty() {
            event.status = MapStatus::Fallback(FallbackReason::EmptyScan);
            return event;
        }
        if self.map.is_empty() {
            self.integrate(&cropped, prior);
            event.integrated = true;
            return event;
        }
        let submap = self.map.submap(&prior.translation, self.config.submap_radius);
        let result = match register_coarse_to_fine(&submap, &points, prior, &self.config.ndt) {
            Ok(r) => r,
            Err(e) => {
                event.status = MapStatus::Fallback(FallbackReason::Registration(e));
                return event;
            }
        };
        event.iterations = result.iterations;
        if !result.converged {
            event.status = MapStatus::Fallback(FallbackReason::NotConverged);
            return event;
        }
        let z = result.pose.boxminus(prior);
        let Some(prior_info) = prior_covariance.try_inverse() else {
            event.status = MapStatus::Fallback(FallbackReason::Registration(NdtError::NonFiniteInitial));
            return event;
        };
        let info = result.information();
        let Some(post_cov) = (prior_info + info).try_inverse() else {
            event.status = MapStatus::Fallback(FallbackReason::NotConverged);
            return event;
        };
        let post_cov = (post_cov + post_cov.transpose()) * 0.5;
        let delta = post_cov * (info * z);
        let [max_t, max_r] = self.config.max_correction;
        if delta.fixed_rows::<3>(0).norm() > max_t || delta.fixed_rows::<3>(3).norm() > max_r {
            event.status = MapStatus::Fallback(FallbackReason::LargeCorrection);
            return event;
        }
        event.refined = prior.boxplus(&delta);
        event.covariance = post_cov;
        event.status = MapStatus::Converged;
        self.integrate(&cropped, &event.refined);
        event.integrated = true;
        event
    }

    fn integrate(&mut self, points: &[Vec3], pose: &Pose) {
        let world: Vec<Vec3> = points.iter().map(|p| pose.transform_point(p)).collect();
        self.map.integrate(&world);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_voxel_gives_one_centroid() {
        let pts = [Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.3, 0.2, 0.4), Vec3::new(0.2, 0.45, 0.05)];
        let out = downsample(&pts, 0.5);
        assert_eq!(out.len(), 1);
        assert!((out[0] - Vec3::new(0.2, 0.25, 0.55 / 3.0)).norm() < 1e-15);
    }

    #[test]
    fn separated_points_pass_through() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.5 + 0.1, 0.2, 0.3)).collect();
        let out = downsample(&pts, 0.5);
        assert_eq!(out, pts);
    }

    #[test]
    fn reintegration_keeps_one_centroid_per_voxel() {
        let pts: Vec<Vec3> = (0..500)
            .map(|i| Vec3::new((i % 25) as f64 * 0.13, (i / 25) as f64 * 0.17, (i % 7) as f64 * 0.05))
            .collect();
        let mut map = GlobalMap::new(&MapConfig::default());
        map.integrate(&pts);
        let once = map.len();
        for _ in 0..4 {
            map.integrate(&pts);
        }
        assert_eq!(map.len(), once);
    }
}
