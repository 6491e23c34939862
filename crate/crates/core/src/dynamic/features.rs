//! Bird's-eye channel features.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::geometry::LaserScan;

/// Square grid centred on the sensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    /// Points with `|x|` or `|y|` above this bypass detection, meters.
    pub half_range: f64,
    /// Cell edge, meters.
    pub resolution: f64,
    /// Cells per side of the coarse ground block.
    pub ground_block: i32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_range: 60.0,
            resolution: 0.25,
            ground_block: 8,
        }
    }
}

impl GridConfig {
    pub fn is_valid(&self) -> bool {
        self.half_range > 0.0 && self.resolution > 0.0 && self.ground_block > 0
    }

    /// Cells per side.
    pub fn dim(&self) -> i32 {
        (2.0 * self.half_range / self.resolution).ceil() as i32
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellIndex> {
        if !(x.abs() <= self.half_range && y.abs() <= self.half_range) {
            return None;
        }
        let dim = self.dim();
        let col = (((x + self.half_range) / self.resolution).floor() as i32).min(dim - 1);
        let row = (((y + self.half_range) / self.resolution).floor() as i32).min(dim - 1);
        Some(CellIndex { row, col })
    }

    /// Sensor-frame x, y of a cell centre.
    pub fn center(&self, cell: CellIndex) -> (f64, f64) {
        (
            (cell.col as f64 + 0.5) * self.resolution - self.half_range,
            (cell.row as f64 + 0.5) * self.resolution - self.half_range,
        )
    }
}

/// Row indexes y, column indexes x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: i32,
    pub col: i32,
}

impl CellIndex {
    pub fn offset(&self, dr: i32, dc: i32) -> CellIndex {
        CellIndex {
            row: self.row + dr,
            col: self.col + dc,
        }
    }

    pub fn is_adjacent(&self, other: &CellIndex) -> bool {
        *self != *other && (self.row - other.row).abs() <= 1 && (self.col - other.col).abs() <= 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub index: CellIndex,
    pub count: usize,
    pub max_height: f64,
    pub mean_height: f64,
    /// Intensity of the highest point.
    pub top_intensity: f64,
    pub mean_intensity: f64,
    pub center_range: f64,
    pub center_angle: f64,
    /// Local ground estimate, sensor-frame z.
    pub ground_height: f64,
    /// Indices into the scan.
    pub members: Vec<usize>,
}

impl GridCell {
    pub const FEATURES: usize = 8;

    /// Count, max height, mean height, top intensity, mean intensity, centre
    /// range, centre angle, occupancy.
    pub fn features(&self) -> [f64; Self::FEATURES] {
        [
            self.count as f64,
            self.max_height,
            self.mean_height,
            self.top_intensity,
            self.mean_intensity,
            self.center_range,
            self.center_angle,
            if self.count > 0 { 1.0 } else { 0.0 },
        ]
    }

    pub fn height_above_ground(&self) -> f64 {
        self.max_height - self.ground_height
    }
}

/// Occupied cells of one scan. Cells not stored are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    pub config: GridConfig,
    cells: Vec<GridCell>,
    lookup: BTreeMap<CellIndex, usize>,
    /// Points outside the grid; always kept as static.
    pub out_of_range: Vec<usize>,
}

impl ChannelGrid {
    /// Occupied cells in `(row, col)` order.
    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn cell(&self, index: CellIndex) -> Option<&GridCell> {
        self.lookup.get(&index).map(|&i| &self.cells[i])
    }

    pub fn count(&self, index: CellIndex) -> usize {
        self.cell(index).map_or(0, |c| c.count)
    }

    pub fn position(&self, index: CellIndex) -> Option<usize> {
        self.lookup.get(&index).copied()
    }
}

/// 5th percentile, nearest-rank below.
fn low_percentile(values: &mut [f64]) -> f64 {
    let k = ((values.len() - 1) as f64 * 0.05).floor() as usize;
    let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

/// Bins every in-range point and computes the per-cell statistics.
///
/// Ground is the lowest of three 5th percentiles of z: over the 3x3 cell
/// window, over the 3x3 window of coarse blocks, and over every in-range
/// point. The wider terms catch cells whose windows hold no ground return,
/// such as the roof of a distant car.
pub fn extract_channel_features(scan: &LaserScan, cfg: &GridConfig) -> ChannelGrid {
    let mut lookup: BTreeMap<CellIndex, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut out_of_range = Vec::new();
    let mut order: Vec<CellIndex> = Vec::new();
    for (i, p) in scan.points.iter().enumerate() {
        match cfg.cell_of(p.position.x, p.position.y) {
            Some(c) => {
                let slot = *lookup.entry(c).or_insert_with(|| {
                    members.push(Vec::new());
                    order.push(c);
                    members.len() - 1
                });
                members[slot].push(i);
            }
            None => out_of_range.push(i),
        }
    }

    let z = |i: usize| scan.points[i].position.z;
    let block_of = |c: &CellIndex| (c.row.div_euclid(cfg.ground_block), c.col.div_euclid(cfg.ground_block));
    let mut blocks: BTreeMap<(i32, i32), Vec<f64>> = BTreeMap::new();
    for (c, m) in order.iter().zip(&members) {
        blocks.entry(block_of(c)).or_default().extend(m.iter().map(|&i| z(i)));
    }
    let mut block_ground: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    let mut buf = Vec::new();
    for &(br, bc) in blocks.keys() {
        buf.clear();
        for dr in -1..=1 {
            for dc in -1..=1 {
                if let Some(v) = blocks.get(&(br + dr, bc + dc)) {
                    buf.extend_from_slice(v);
                }
            }
        }
        block_ground.insert((br, bc), low_percentile(&mut buf));
    }

    buf.clear();
    for v in blocks.values() {
        buf.extend_from_slice(v);
    }
    let floor = if buf.is_empty() { f64::INFINITY } else { low_percentile(&mut buf) };

    let mut cells = Vec::with_capacity(order.len());
    let mut new_lookup = BTreeMap::new();
    for (&c, &slot) in lookup.iter() {
        let m = &members[slot];
        let n = m.len();
        let mut max_height = f64::NEG_INFINITY;
        let mut top_intensity = 0.0;
        let mut sum_z = 0.0;
        let mut sum_i = 0.0;
        for &i in m {
            let p = &scan.points[i];
            if p.position.z > max_height {
                max_height = p.position.z;
                top_intensity = p.intensity;
            }
            sum_z += p.position.z;
            sum_i += p.intensity;
        }
        buf.clear();
        for dr in -1..=1 {
            for dc in -1..=1 {
                if let Some(&s) = lookup.get(&c.offset(dr, dc)) {
                    buf.extend(members[s].iter().map(|&i| z(i)));
                }
            }
        }
        let ground = low_percentile(&mut buf).min(block_ground[&block_of(&c)]).min(floor);
        let (cx, cy) = cfg.center(c);
        new_lookup.insert(c, cells.len());
        cells.push(GridCell {
            index: c,
            count: n,
            max_height,
            mean_height: sum_z / n as f64,
            top_intensity,
            mean_intensity: sum_i / n as f64,
            center_range: cx.hypot(cy),
            center_angle: cy.atan2(cx),
            ground_height: ground,
            members: m.clone(),
        });
    }
    ChannelGrid {
        config: *cfg,
        cells,
        lookup: new_lookup,
        out_of_range,
    }
}
