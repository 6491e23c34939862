use std::collections::BTreeMap;

use lio_core::dynamic::*;
use lio_core::geometry::{LaserScan, TimedPoint, Vec3, LABEL_DYNAMIC, LABEL_STATIC};
use lio_core::sim::{Scenario, ScenarioPreset};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan_of(points: Vec<TimedPoint>) -> LaserScan {
    LaserScan {
        points,
        scan_period: 0.1,
        theta_end: std::f64::consts::TAU,
        ..LaserScan::default()
    }
}

fn random_scan(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> LaserScan {
    let pts = (0..n)
        .map(|_| {
            let p = Vec3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-2.0..2.0),
            );
            TimedPoint::new(p, rng.random_range(0.0..1.0))
        })
        .collect();
    scan_of(pts)
}

#[test]
fn features_match_group_by() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scan = random_scan(&mut rng, 10_000, 8.0);
    let cfg = GridConfig::default();
    let grid = extract_channel_features(&scan, &cfg);

    let mut groups: BTreeMap<(i32, i32), Vec<usize>> = BTreeMap::new();
    for (i, p) in scan.points.iter().enumerate() {
        let col = ((p.position.x + 60.0) / 0.25).floor() as i32;
        let row = ((p.position.y + 60.0) / 0.25).floor() as i32;
        groups.entry((row, col)).or_default().push(i);
    }
    assert_eq!(grid.cells().len(), groups.len());
    let mut total = 0;
    for ((row, col), idx) in &groups {
        let cell = grid.cell(CellIndex { row: *row, col: *col }).expect("cell present");
        assert_eq!(cell.count, idx.len());
        assert_eq!(&cell.members, idx);
        let zs: Vec<f64> = idx.iter().map(|&i| scan.points[i].position.z).collect();
        let is: Vec<f64> = idx.iter().map(|&i| scan.points[i].intensity).collect();
        let top = idx
            .iter()
            .max_by(|&&a, &&b| scan.points[a].position.z.total_cmp(&scan.points[b].position.z))
            .unwrap();
        assert_eq!(cell.max_height, zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        assert_eq!(cell.mean_height, zs.iter().sum::<f64>() / zs.len() as f64);
        assert_eq!(cell.mean_intensity, is.iter().sum::<f64>() / is.len() as f64);
        assert_eq!(cell.top_intensity, scan.points[*top].intensity);
        let cx = (*col as f64 + 0.5) * 0.25 - 60.0;
        let cy = (*row as f64 + 0.5) * 0.25 - 60.0;
        assert!((cell.center_range - cx.hypot(cy)).abs() < 1e-12);
        assert!((cell.center_angle - cy.atan2(cx)).abs() < 1e-12);
        assert_eq!(cell.features()[7], 1.0);
        total += cell.count;
    }
    assert_eq!(total + grid.out_of_range.len(), scan.len());
}

/// Ground at -1.8 over a 14 m square, a 1.8 m box on 3x4 cells, and a 6 m
/// wall.
fn box_and_wall() -> (LaserScan, Vec<CellIndex>, Vec<CellIndex>) {
    let mut pts = Vec::new();
    let g = -1.8;
    let mut x = -2.0;
    while x < 12.0 {
        let mut y = -6.0;
        while y < 6.0 {
            pts.push(TimedPoint::new(Vec3::new(x + 0.01, y + 0.01, g), 0.2));
            y += 0.1;
        }
        x += 0.1;
    }
    let cfg = GridConfig::default();
    let mut box_cells = Vec::new();
    let mut wall_cells = Vec::new();
    for i in 0..15 {
        for j in 0..20 {
            let (px, py) = (5.0 + 0.05 * i as f64 + 0.01, 2.0 + 0.05 * j as f64 + 0.01);
            for k in 0..6 {
                pts.push(TimedPoint::new(Vec3::new(px, py, g + 0.3 * (k + 1) as f64), 0.8));
            }
            box_cells.push(cfg.cell_of(px, py).unwrap());
        }
    }
    for j in 0..200 {
        let py = -5.0 + 0.05 * j as f64 + 0.01;
        for k in 0..30 {
            pts.push(TimedPoint::new(Vec3::new(10.1, py, g + 0.2 * (k + 1) as f64), 0.5));
        }
        wall_cells.push(cfg.cell_of(10.1, py).unwrap());
    }
    box_cells.sort();
    box_cells.dedup();
    wall_cells.sort();
    wall_cells.dedup();
    (scan_of(pts), box_cells, wall_cells)
}

#[test]
fn heuristic_separates_box_from_wall() {
    let (scan, box_cells, wall_cells) = box_and_wall();
    assert_eq!(box_cells.len(), 12);
    let grid = extract_channel_features(&scan, &GridConfig::default());
    let preds = classify_cells(&grid, &scan, &HeuristicClassifier::default()).unwrap();
    let by_cell: BTreeMap<CellIndex, f64> = preds.iter().map(|p| (p.cell, p.objectness)).collect();
    for c in &box_cells {
        assert!(by_cell[c] >= 0.5, "box cell {c:?}: {}", by_cell[c]);
    }
    for c in &wall_cells {
        assert!(by_cell[c] < 0.5, "wall cell {c:?}: {}", by_cell[c]);
    }
    // Ground cells away from both stay at zero.
    let far = GridConfig::default().cell_of(0.0, -4.0).unwrap();
    assert_eq!(by_cell[&far], 0.0);
}

#[test]
fn oracle_marks_exactly_dynamic_cells() {
    let scenario = Scenario::preset(ScenarioPreset::HighwayDynamic, 5);
    let scan = scenario.render(10.0).scan;
    let labels = scan.labels.clone().unwrap();
    let grid = extract_channel_features(&scan, &GridConfig::default());
    let preds = classify_cells(&grid, &scan, &OracleClassifier::default()).unwrap();
    for (cell, p) in grid.cells().iter().zip(&preds) {
        let dynamic = cell.members.iter().any(|&i| labels[i] == LABEL_DYNAMIC);
        assert_eq!(p.objectness, if dynamic { 1.0 } else { 0.0 });
        assert!(p.is_valid());
    }
}

fn predictions_from_mask(mask: &[Vec<bool>]) -> Vec<CellPrediction> {
    let mut out = Vec::new();
    for (r, row) in mask.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            let cell = CellIndex { row: r as i32, col: c as i32 };
            out.push(CellPrediction::from_objectness(cell, if on { 0.9 } else { 0.1 }, 1.0));
        }
    }
    out
}

/// Connected components by breadth-first search over 8-neighbours.
fn flood_fill(mask: &[Vec<bool>]) -> Vec<Vec<CellIndex>> {
    let (h, w) = (mask.len() as i32, mask[0].len() as i32);
    let mut seen = vec![vec![false; w as usize]; h as usize];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask[r as usize][c as usize] || seen[r as usize][c as usize] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = std::collections::VecDeque::from([(r, c)]);
            seen[r as usize][c as usize] = true;
            while let Some((y, x)) = queue.pop_front() {
                comp.push(CellIndex { row: y, col: x });
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && ny < h && nx >= 0 && nx < w && mask[ny as usize][nx as usize] && !seen[ny as usize][nx as usize] {
                            seen[ny as usize][nx as usize] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
    }
    out.sort();
    out
}

fn partition(clusters: &[CellCluster]) -> Vec<Vec<CellIndex>> {
    let mut p: Vec<Vec<CellIndex>> = clusters.iter().map(|c| c.cells.clone()).collect();
    p.sort();
    p
}

#[test]
fn two_blobs_give_two_clusters() {
    let mut mask = vec![vec![false; 12]; 12];
    for (r, c) in [(1, 1), (1, 2), (2, 2), (3, 3), (4, 4)] {
        mask[r][c] = true;
    }
    for (r, c) in [(8, 1), (8, 2), (8, 3), (9, 3), (10, 4), (10, 5), (11, 6)] {
        mask[r][c] = true;
    }
    let clusters = cluster_cells(&predictions_from_mask(&mask), 0.5, 0.25);
    let mut sizes: Vec<usize> = clusters.iter().map(|c| c.cells.len()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![5, 7]);
    assert_eq!(partition(&clusters), flood_fill(&mask));
}

#[test]
fn union_find_matches_flood_fill() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let density = rng.random_range(0.2..0.6);
        let mask: Vec<Vec<bool>> = (0..50).map(|_| (0..50).map(|_| rng.random_bool(density)).collect()).collect();
        let mut preds = predictions_from_mask(&mask);
        let clusters = cluster_cells(&preds, 0.5, 0.25);
        assert_eq!(partition(&clusters), flood_fill(&mask), "seed {seed}");
        preds.shuffle(&mut rng);
        let shuffled = cluster_cells(&preds, 0.5, 0.25);
        let cells = |cs: &[CellCluster]| cs.iter().map(|c| c.cells.clone()).collect::<Vec<_>>();
        assert_eq!(cells(&shuffled), cells(&clusters), "seed {seed}");
    }
}

#[test]
fn nothing_above_threshold_gives_no_clusters() {
    let mask = vec![vec![false; 10]; 10];
    assert!(cluster_cells(&predictions_from_mask(&mask), 0.5, 0.25).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn static_and_dynamic_partition_the_scan(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scan = random_scan(&mut rng, 2000, 70.0);
        // A few dense labelled blobs so some clusters survive the gates.
        for _ in 0..5 {
            let c = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);
            for _ in 0..40 {
                let p = c + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5));
                scan.points.push(TimedPoint::new(p, 0.9));
            }
        }
        let labels: Vec<u8> = (0..scan.len()).map(|i| if i >= 2000 || rng.random_bool(0.05) { LABEL_DYNAMIC } else { LABEL_STATIC }).collect();
        scan.labels = Some(labels);
        let filter = DynamicFilter::new(DynamicFilterConfig::default(), Box::new(OracleClassifier::default()));
        let out = filter.apply(&scan);
        let sep = &out.separation;
        prop_assert_eq!(sep.static_scan.len() + sep.dynamic_scan.len(), scan.len());
        let removed: std::collections::BTreeSet<usize> = sep.dynamic_indices.iter().copied().collect();
        prop_assert_eq!(removed.len(), sep.dynamic_indices.len());
        let kept: Vec<usize> = (0..scan.len()).filter(|i| !removed.contains(i)).collect();
        for (k, &i) in kept.iter().enumerate() {
            prop_assert_eq!(sep.static_scan.points[k], scan.points[i]);
        }
        for (k, &i) in sep.dynamic_indices.iter().enumerate() {
            prop_assert_eq!(sep.dynamic_scan.points[k], scan.points[i]);
        }
        prop_assert!(sep.dynamic_indices.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn oracle_removes_moving_cars() {
    let scenario = Scenario::preset(ScenarioPreset::HighwayDynamic, 11);
    let filter = DynamicFilter::new(DynamicFilterConfig::default(), Box::new(OracleClassifier::default()));
    let (mut dyn_total, mut dyn_hit, mut static_total, mut static_removed) = (0usize, 0usize, 0usize, 0usize);
    for k in 0..12 {
        let scan = scenario.render(1.0 + 3.0 * k as f64).scan;
        let labels = scan.labels.clone().unwrap();
        let out = filter.apply(&scan);
        let removed: std::collections::BTreeSet<usize> = out.separation.dynamic_indices.iter().copied().collect();
        for (i, &l) in labels.iter().enumerate() {
            if l == LABEL_DYNAMIC {
                dyn_total += 1;
                dyn_hit += removed.contains(&i) as usize;
            } else {
                static_total += 1;
                static_removed += removed.contains(&i) as usize;
            }
        }
    }
    let recall = dyn_hit as f64 / dyn_total as f64;
    let false_removal = static_removed as f64 / static_total as f64;
    assert!(dyn_total > 1000, "only {dyn_total} dynamic points rendered");
    assert!(recall >= 0.99, "recall {recall:.4} ({dyn_hit}/{dyn_total})");
    assert!(false_removal <= 0.001, "false removal {false_removal:.5} ({static_removed}/{static_total})");
}
