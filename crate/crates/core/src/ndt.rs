//! Normal Distributions Transform registration.
//!
//! The reference cloud is summarized per voxel by a Gaussian. A query cloud
//! is scored as `sum exp(-1/2 d^T S^-1 d)` over its points, with `d` the
//! offset of the transformed point from the mean of its voxel, and the pose
//! is found by damped Newton iterations on that score. Derivatives are taken in the
//! pose tangent `(dp, dtheta)`, with `y = R Exp(dtheta) x + t + dp`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
#[allow(unused_imports)]
use num_traits::Float as _;
use thiserror::Error;

use crate::geometry::{skew, Mat3, Pose, Vec3};

pub type VoxelKey = [i64; 3];

/// Points are scored in fixed chunks so serial and parallel sums agree bit for bit.
const CHUNK: usize = 256;

/// Which voxels a transformed point is scored against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Neighborhood {
    /// The containing voxel only.
    #[default]
    Single,
    /// The containing voxel and its six face neighbours.
    Seven,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NdtConfig {
    pub voxel_size: f64,
    /// Lattice origin on every axis, meters. Voxel boundaries lie at
    /// `lattice_offset + k * voxel_size`.
    pub lattice_offset: f64,
    /// Voxels with fewer points are not scored.
    pub min_points: usize,
    /// Covariance eigenvalues are raised to at least this fraction of the largest.
    pub reg_ratio: f64,
    /// Absolute eigenvalue floor, m^2.
    pub reg_floor: f64,
    pub neighborhood: Neighborhood,
    pub max_iter: usize,
    /// Translation step below which iteration stops, meters.
    pub step_tol: f64,
    /// Rotation step below which iteration stops, radians.
    pub rot_tol: f64,
    /// Largest translation accepted in one step, meters.
    pub max_step: f64,
    /// Evaluate scores with rayon when the `parallel` feature is on.
    pub parallel: bool,
}

impl Default for NdtConfig {
    fn default() -> Self {
        NdtConfig {
            voxel_size: 1.0,
            lattice_offset: 0.0,
            min_points: 5,
            reg_ratio: 1e-3,
            reg_floor: 1e-4,
            neighborhood: Neighborhood::Single,
            max_iter: 30,
            step_tol: 1e-4,
            rot_tol: 1e-5,
            max_step: 0.5,
            parallel: true,
        }
    }
}

/// Gaussian summary of one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel {
    pub count: usize,
    pub mean: Vec3,
    /// Regularized covariance.
    pub covariance: Mat3,
    /// Inverse of `covariance`.
    pub information: Mat3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    count: usize,
    // Sums of positions relative to the voxel corner.
    sum: Vec3,
    sum_outer: Mat3,
    stats: Option<Voxel>,
}

impl Cell {
    fn empty() -> Self {
        Cell {
            count: 0,
            sum: Vec3::zeros(),
            sum_outer: Mat3::zeros(),
            stats: None,
        }
    }
}

/// Sparse voxel grid of running point statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NdtVoxelMap {
    voxel_size: f64,
    offset: f64,
    min_points: usize,
    reg_ratio: f64,
    reg_floor: f64,
    cells: BTreeMap<VoxelKey, Cell>,
}

/// Clamps the eigenvalues of a symmetric matrix from below.
pub fn regularize_covariance(cov: &Mat3, ratio: f64, floor: f64) -> Mat3 {
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let largest = eig.eigenvalues.max();
    let min = (ratio * largest).max(floor);
    let clamped = eig.eigenvalues.map(|l| l.max(min));
    eig.eigenvectors * Mat3::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

impl NdtVoxelMap {
    pub fn new(cfg: &NdtConfig) -> Self {
        assert!(cfg.voxel_size > 0.0, "voxel size must be positive");
        NdtVoxelMap {
            voxel_size: cfg.voxel_size,
            offset: cfg.lattice_offset,
            min_points: cfg.min_points,
            reg_ratio: cfg.reg_ratio,
            reg_floor: cfg.reg_floor,
            cells: BTreeMap::new(),
        }
    }

    pub fn build(points: &[Vec3], cfg: &NdtConfig) -> Self {
        let mut map = Self::new(cfg);
        map.insert(points);
        map
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key_of(&self, p: &Vec3) -> VoxelKey {
        let (s, o) = (self.voxel_size, self.offset);
        [
            ((p.x - o) / s).floor() as i64,
            ((p.y - o) / s).floor() as i64,
            ((p.z - o) / s).floor() as i64,
        ]
    }

    fn corner(&self, key: &VoxelKey) -> Vec3 {
        Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) * self.voxel_size + Vec3::repeat(self.offset)
    }

    fn refresh(&mut self, key: VoxelKey) {
        let corner = self.corner(&key);
        let (min_points, ratio, floor) = (self.min_points.max(1), self.reg_ratio, self.reg_floor);
        let Some(cell) = self.cells.get_mut(&key) else {
            return;
        };
        if cell.count == 0 {
            self.cells.remove(&key);
            return;
        }
        cell.stats = (cell.count >= min_points).then(|| {
            let n = cell.count as f64;
            let local_mean = cell.sum / n;
            let scatter = cell.sum_outer - local_mean * cell.sum.transpose();
            let raw = if cell.count > 1 { scatter / (n - 1.0) } else { Mat3::zeros() };
            let covariance = regularize_covariance(&raw, ratio, floor);
            let information = covariance.try_inverse().unwrap_or_else(|| Mat3::identity() / floor);
            Voxel {
                count: cell.count,
                mean: local_mean + corner,
                covariance,
                information: (information + information.transpose()) * 0.5,
            }
        });
    }

    fn accumulate(&mut self, points: &[Vec3], sign: f64) {
        let mut touched = Vec::with_capacity(points.len());
        for p in points {
            if !p.iter().all(|v| v.is_finite()) {
                continue;
            }
            let key = self.key_of(p);
            let local = p - self.corner(&key);
            let cell = if sign > 0.0 {
                let cell = self.cells.entry(key).or_insert_with(Cell::empty);
                cell.count += 1;
                cell
            } else {
                match self.cells.get_mut(&key) {
                    Some(cell) if cell.count > 0 => {
                        cell.count -= 1;
                        cell
                    }
                    _ => continue,
                }
            };
            cell.sum += local * sign;
            cell.sum_outer += local * local.transpose() * sign;
            touched.push(key);
        }
        touched.sort_unstable();
        touched.dedup();
        for key in touched {
            self.refresh(key);
        }
    }

    /// Adds points to the running statistics.
    pub fn insert(&mut self, points: &[Vec3]) {
        self.accumulate(points, 1.0);
    }

    /// Removes previously inserted points.
    pub fn remove(&mut self, points: &[Vec3]) {
        self.accumulate(points, -1.0);
    }

    pub fn voxel(&self, key: &VoxelKey) -> Option<&Voxel> {
        self.cells.get(key).and_then(|c| c.stats.as_ref())
    }

    /// All occupied cells, including those below the count gate.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Voxels that pass the count gate.
    pub fn scoreable(&self) -> impl Iterator<Item = (&VoxelKey, &Voxel)> {
        self.cells.iter().filter_map(|(k, c)| c.stats.as_ref().map(|v| (k, v)))
    }

    pub fn scoreable_count(&self) -> usize {
        self.scoreable().count()
    }

    pub fn point_count(&self) -> usize {
        self.cells.values().map(|c| c.count).sum()
    }

    /// Copy of the cells whose centre lies within `radius` of `center`.
    pub fn extract(&self, center: &Vec3, radius: f64) -> NdtVoxelMap {
        let half = Vec3::repeat(0.5 * self.voxel_size);
        let reach = radius + half.norm();
        let lo = self.key_of(&(center - Vec3::repeat(reach)));
        let hi = self.key_of(&(center + Vec3::repeat(reach)));
        let cells = self
            .cells
            .range(lo..=[hi[0], i64::MAX, i64::MAX])
            .filter(|(k, _)| (lo[1]..=hi[1]).contains(&k[1]) && (lo[2]..=hi[2]).contains(&k[2]))
            .filter(|(k, _)| (self.corner(k) + half - center).norm() <= radius)
            .map(|(k, c)| (*k, *c))
            .collect();
        NdtVoxelMap { cells, ..*self }
    }

    fn lookup<'a>(&'a self, y: &Vec3, mode: Neighborhood, out: &mut [Option<&'a Voxel>; 7]) {
        let k = self.key_of(y);
        *out = [None; 7];
        out[0] = self.voxel(&k);
        if mode == Neighborhood::Seven {
            const OFFSETS: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
            for (slot, o) in out[1..].iter_mut().zip(OFFSETS.iter()) {
                *slot = self.voxel(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]]);
            }
        }
    }
}

/// Score with first and second derivatives in the pose tangent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreEval {
    pub score: f64,
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
    /// Positive semi-definite part `sum s J^T A J` of `-hessian`.
    pub normal: Matrix6<f64>,
    /// Points that landed in a scoreable voxel.
    pub hits: usize,
}

impl ScoreEval {
    fn zero() -> Self {
        ScoreEval {
            score: 0.0,
            gradient: Vector6::zeros(),
            hessian: Matrix6::zeros(),
            normal: Matrix6::zeros(),
            hits: 0,
        }
    }

    fn add(&mut self, other: &ScoreEval) {
        self.score += other.score;
        self.gradient += other.gradient;
        self.hessian += other.hessian;
        self.normal += other.normal;
        self.hits += other.hits;
    }
}

fn score_chunk(map: &NdtVoxelMap, points: &[Vec3], pose: &Pose, mode: Neighborhood, derivatives: bool) -> ScoreEval {
    let r = pose.rotation.matrix();
    let mut acc = ScoreEval::zero();
    let mut voxels = [None; 7];
    for x in points {
        let y = r * x + pose.translation;
        map.lookup(&y, mode, &mut voxels);
        let mut hit = false;
        // d y / d theta = -R [x]x; second derivatives are R * (1/2 (e_i x_j + e_j x_i) - x delta_ij).
        let jr = if derivatives { -r * skew(x) } else { Mat3::zeros() };
        for v in voxels.iter().flatten() {
            hit = true;
            let d = y - v.mean;
            let ad = v.information * d;
            let s = (-0.5 * d.dot(&ad)).exp();
            acc.score += s;
            if !derivatives {
                continue;
            }
            // g_k = -s d^T A J_k
            let mut dj = Vector6::zeros();
            dj.fixed_rows_mut::<3>(0).copy_from(&ad);
            dj.fixed_rows_mut::<3>(3).copy_from(&(jr.transpose() * ad));
            acc.gradient -= dj * s;
            // J^T A J
            let mut jaj = Matrix6::zeros();
            let a = v.information;
            let ajr = a * jr;
            jaj.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
            jaj.fixed_view_mut::<3, 3>(0, 3).copy_from(&ajr);
            jaj.fixed_view_mut::<3, 3>(3, 0).copy_from(&ajr.transpose());
            jaj.fixed_view_mut::<3, 3>(3, 3).copy_from(&(jr.transpose() * ajr));
            // d^T A H_ij for the rotation block.
            let rad = r.transpose() * ad;
            let mut second = Mat3::zeros();
            let xd = x.dot(&rad);
            for i in 0..3 {
                for j in 0..3 {
                    let mut val = 0.5 * (rad[i] * x[j] + rad[j] * x[i]);
                    if i == j {
                        val -= xd;
                    }
                    second[(i, j)] = val;
                }
            }
            acc.normal += jaj * s;
            let mut h = dj * dj.transpose() - jaj;
            let mut rot = h.fixed_view_mut::<3, 3>(3, 3);
            rot -= second;
            h *= s;
            acc.hessian += h;
        }
        if hit {
            acc.hits += 1;
        }
    }
    acc
}

fn reduce(parts: impl Iterator<Item = ScoreEval>) -> ScoreEval {
    let mut total = ScoreEval::zero();
    for p in parts {
        total.add(&p);
    }
    total
}

/// Score, gradient and Hessian with one thread.
pub fn ndt_score_serial(map: &NdtVoxelMap, points: &[Vec3], pose: &Pose, mode: Neighborhood) -> ScoreEval {
    reduce(points.chunks(CHUNK).map(|c| score_chunk(map, c, pose, mode, true)))
}

/// Score, gradient and Hessian across the rayon pool, summed in chunk order.
#[cfg(feature = "parallel")]
pub fn ndt_score_parallel(map: &NdtVoxelMap, points: &[Vec3], pose: &Pose, mode: Neighborhood) -> ScoreEval {
    use rayon::prelude::*;
    let parts: Vec<ScoreEval> = points
        .par_chunks(CHUNK)
        .map(|c| score_chunk(map, c, pose, mode, true))
        .collect();
    reduce(parts.into_iter())
}

/// Score, gradient and Hessian, parallel when enabled in `cfg`.
pub fn ndt_score(map: &NdtVoxelMap, points: &[Vec3], pose: &Pose, cfg: &NdtConfig) -> ScoreEval {
    #[cfg(feature = "parallel")]
    if cfg.parallel {
        return ndt_score_parallel(map, points, pose, cfg.neighborhood);
    }
    ndt_score_serial(map, points, pose, cfg.neighborhood)
}

fn score_only(map: &NdtVoxelMap, points: &[Vec3], pose: &Pose, cfg: &NdtConfig) -> f64 {
    #[cfg(feature = "parallel")]
    if cfg.parallel {
        use rayon::prelude::*;
        let parts: Vec<f64> = points
            .par_chunks(CHUNK)
            .map(|c| score_chunk(map, c, pose, cfg.neighborhood, false).score)
            .collect();
        return parts.iter().sum();
    }
    points
        .chunks(CHUNK)
        .map(|c| score_chunk(map, c, pose, cfg.neighborhood, false).score)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NdtError {
    #[error("reference map has no scoreable voxels")]
    EmptyMap,
    #[error("no scan point falls in a scoreable voxel")]
    NoOverlap,
    #[error("initial pose is not finite")]
    NonFiniteInitial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Score Hessian at the returned pose.
    pub hessian: Matrix6<f64>,
    /// PSD projection of `(-hessian)^-1`.
    pub covariance: Matrix6<f64>,
    /// Points scored at the returned pose.
    pub hits: usize,
    /// Pose after every accepted step, starting with the initial pose.
    pub iterates: Vec<Pose>,
}

impl RegistrationResult {
    /// Information matrix `-hessian`, PSD-projected.
    pub fn information(&self) -> Matrix6<f64> {
        psd_project(&(-self.hessian), 0.0)
    }
}

/// Symmetric PSD projection: eigenvalues raised to at least `floor`.
pub fn psd_project(m: &Matrix6<f64>, floor: f64) -> Matrix6<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Inverse of `-hessian` with the eigenvalues of `-hessian` floored at
/// `1e-9` times the largest, so unconstrained directions get large but
/// finite variance.
pub fn covariance_from_hessian(hessian: &Matrix6<f64>) -> Matrix6<f64> {
    let eig = SymmetricEigen::new(-(hessian + hessian.transpose()) * 0.5);
    let floor = (eig.eigenvalues.max() * 1e-9).max(1e-12);
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    eig.eigenvectors * Matrix6::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Ascent step `N^-1 g`, with `N` the positive part of `-H`. The full
/// Hessian is indefinite away from the optimum; the two agree at it.
fn ascent_step(eval: &ScoreEval) -> Vector6<f64> {
    let eig = SymmetricEigen::new((eval.normal + eval.normal.transpose()) * 0.5);
    let floor = (eig.eigenvalues.max() * 1e-6).max(1e-12);
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    eig.eigenvectors * Matrix6::from_diagonal(&inv) * eig.eigenvectors.transpose() * eval.gradient
}

/// Aligns `points` (sensor frame) to `map`, starting from `initial`.
pub fn register(map: &NdtVoxelMap, points: &[Vec3], initial: &Pose, cfg: &NdtConfig) -> Result<RegistrationResult, NdtError> {
    if !initial.is_finite() {
        return Err(NdtError::NonFiniteInitial);
    }
    if map.scoreable_count() == 0 {
        return Err(NdtError::EmptyMap);
    }
    let mut pose = *initial;
    let mut eval = ndt_score(map, points, &pose, cfg);
    if eval.hits == 0 {
        return Err(NdtError::NoOverlap);
    }
    let mut iterates = Vec::from([pose]);
    let mut converged = false;
    let mut iterations = 0;
    let mut finite = eval.score.is_finite();
    while finite && iterations < cfg.max_iter {
        iterations += 1;
        let mut step = ascent_step(&eval);
        let mut trans = step.fixed_rows::<3>(0).norm();
        if trans > cfg.max_step {
            step *= cfg.max_step / trans;
            trans = cfg.max_step;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let candidate = pose.boxplus(&(step * alpha));
            let s = score_only(map, points, &candidate, cfg);
            if !s.is_finite() {
                finite = false;
                break;
            }
            if s >= eval.score {
                accepted = Some((candidate, s));
                break;
            }
            alpha *= 0.5;
        }
        let Some((mut next, mut best)) = accepted else {
            converged = finite;
            break;
        };
        // A full step that improved may be short along weak directions; keep
        // doubling while the score rises.
        if alpha == 1.0 {
            while trans * alpha * 2.0 <= cfg.max_step.max(trans) * 4.0 && alpha < 8.0 {
                let candidate = pose.boxplus(&(step * (alpha * 2.0)));
                let s = score_only(map, points, &candidate, cfg);
                if !(s.is_finite() && s > best) {
                    break;
                }
                alpha *= 2.0;
                next = candidate;
                best = s;
            }
        }
        let taken = step * alpha;
        pose = next;
        eval = ndt_score(map, points, &pose, cfg);
        finite = eval.score.is_finite();
        iterates.push(pose);
        if taken.fixed_rows::<3>(0).norm() < cfg.step_tol && taken.fixed_rows::<3>(3).norm() < cfg.rot_tol {
            converged = finite;
            break;
        }
    }
    if !finite {
        converged = false;
    }
    Ok(RegistrationResult {
        pose,
        score: eval.score,
        iterations,
        converged,
        hessian: eval.hessian,
        covariance: covariance_from_hessian(&eval.hessian),
        hits: eval.hits,
        iterates,
    })
}

/// Voxel maps of the same cloud at decreasing voxel sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct NdtPyramid {
    levels: Vec<NdtVoxelMap>,
}

impl NdtPyramid {
    /// `sizes` run from coarse to fine.
    pub fn new(sizes: &[f64], cfg: &NdtConfig) -> Self {
        assert!(!sizes.is_empty(), "pyramid needs at least one level");
        NdtPyramid {
            levels: sizes
                .iter()
                .map(|&voxel_size| NdtVoxelMap::new(&NdtConfig { voxel_size, ..*cfg }))
                .collect(),
        }
    }

    pub fn build(points: &[Vec3], sizes: &[f64], cfg: &NdtConfig) -> Self {
        let mut p = Self::new(sizes, cfg);
        p.insert(points);
        p
    }

    pub fn insert(&mut self, points: &[Vec3]) {
        for l in &mut self.levels {
            l.insert(points);
        }
    }

    pub fn remove(&mut self, points: &[Vec3]) {
        for l in &mut self.levels {
            l.remove(points);
        }
    }

    pub fn levels(&self) -> &[NdtVoxelMap] {
        &self.levels
    }

    pub fn finest(&self) -> &NdtVoxelMap {
        self.levels.last().expect("non-empty pyramid")
    }

    pub fn extract(&self, center: &Vec3, radius: f64) -> NdtPyramid {
        NdtPyramid {
            levels: self.levels.iter().map(|l| l.extract(center, radius)).collect(),
        }
    }
}

/// Registers level by level, each starting where the coarser one ended.
/// The result describes the finest level; iterations and iterates span all.
pub fn register_coarse_to_fine(
    pyramid: &NdtPyramid,
    points: &[Vec3],
    initial: &Pose,
    cfg: &NdtConfig,
) -> Result<RegistrationResult, NdtError> {
    let mut pose = *initial;
    let mut iterations = 0;
    let mut iterates = Vec::from([pose]);
    let (coarse, finest) = pyramid.levels.split_at(pyramid.levels.len() - 1);
    for map in coarse {
        let level_cfg = NdtConfig {
            voxel_size: map.voxel_size(),
            max_step: cfg.max_step.max(0.5 * map.voxel_size()),
            ..*cfg
        };
        match register(map, points, &pose, &level_cfg) {
            Ok(r) => {
                iterations += r.iterations;
                iterates.extend_from_slice(&r.iterates[1..]);
                if r.converged || r.score.is_finite() {
                    pose = r.pose;
                }
            }
            Err(NdtError::NoOverlap) | Err(NdtError::EmptyMap) => {}
            Err(e) => return Err(e),
        }
    }
    let mut r = register(&finest[0], points, &pose, cfg)?;
    iterates.extend_from_slice(&r.iterates[1..]);
    r.iterations += iterations;
    r.iterates = iterates;
    Ok(r)
}
