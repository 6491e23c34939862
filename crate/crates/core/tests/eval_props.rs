use lio_core::eval::*;
use lio_core::geometry::{Pose, Rotation, Vec3};
use nalgebra::{Matrix4, Quaternion, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Horn's closed-form absolute orientation: the rotation taking `est` onto
/// `reference` is the top eigenvector of a 4x4 matrix built from the
/// centred cross sums.
fn horn(pairs: &[PosePair]) -> Pose {
    let n = pairs.len() as f64;
    let me = pairs.iter().map(|p| p.est.translation).sum::<Vec3>() / n;
    let mr = pairs.iter().map(|p| p.reference.translation).sum::<Vec3>() / n;
    let mut s = [[0.0; 3]; 3];
    for p in pairs {
        let e = p.est.translation - me;
        let r = p.reference.translation - mr;
        for a in 0..3 {
            for b in 0..3 {
                s[a][b] += e[a] * r[b];
            }
        }
    }
    let (sxx, sxy, sxz) = (s[0][0], s[0][1], s[0][2]);
    let (syx, syy, syz) = (s[1][0], s[1][1], s[1][2]);
    let (szx, szy, szz) = (s[2][0], s[2][1], s[2][2]);
    #[rustfmt::skip]
    let m = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(m);
    let q = eig.eigenvectors.column(eig.eigenvalues.imax());
    let rot = Rotation::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    Pose::new(rot, mr - rot.rotate(&me))
}

fn random_pose(rng: &mut ChaCha8Rng, span: f64) -> Pose {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Pose::new(
        Rotation::exp(&(axis * rng.random_range(0.0..3.0) / axis.norm().max(1e-9))),
        Vec3::new(rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(-span..span)),
    )
}

fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    Trajectory::new((0..n).map(|i| (i as f64 * 0.1, random_pose(rng, 50.0))).collect()).unwrap()
}

fn pose_dist(a: &Pose, b: &Pose) -> f64 {
    a.boxminus(b).norm()
}

#[test]
fn alignment_matches_horn() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let reference = random_traj(&mut rng, 40);
        let noisy = Trajectory::new(
            reference
                .poses()
                .iter()
                .map(|(t, p)| (*t, Pose::from_translation(Vec3::new(rng.random_range(-1.0..1.0), 0.0, 0.0)).compose(p)))
                .collect(),
        )
        .unwrap();
        let est = noisy.transformed(&random_pose(&mut rng, 100.0));
        let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
        let ours = align_6dof(&pairs).unwrap();
        let oracle = horn(&pairs);
        assert!(pose_dist(&ours, &oracle) < 1e-9, "{}", pose_dist(&ours, &oracle));
    }
}

#[test]
fn known_rigid_relation_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = random_traj(&mut rng, 30);
    let q = random_pose(&mut rng, 20.0);
    let est = reference.transformed(&q);
    let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
    let t = align_6dof(&pairs).unwrap();
    assert!(pose_dist(&t, &q.inverse()) < 1e-9);
    let same = align_6dof(&associate(&reference, &reference, DEFAULT_MAX_DT).unwrap()).unwrap();
    assert!(pose_dist(&same, &Pose::identity()) < 1e-12);
}

#[test]
fn noisy_alignment_residual_tracks_sigma() {
    let sigma = 0.01;
    let normal = Normal::new(0.0, sigma).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let reference = random_traj(&mut rng, 200);
        let q = random_pose(&mut rng, 20.0);
        let est = Trajectory::new(
            reference
                .poses()
                .iter()
                .map(|(t, p)| {
                    let mut e = q.compose(p);
                    e.translation += Vec3::from_fn(|_, _| normal.sample(&mut rng));
                    (*t, e)
                })
                .collect(),
        )
        .unwrap();
        let report = ate(&est, &reference, DEFAULT_MAX_DT).unwrap();
        assert!(report.rmse >= 0.5 * sigma && report.rmse <= 2.0 * sigma, "rmse {}", report.rmse);
    }
}

#[test]
fn single_displaced_pose_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = random_traj(&mut rng, 25);
    let mut poses = reference.poses().to_vec();
    poses[7].1.translation += Vec3::new(0.6, -0.8, 0.0);
    let est = Trajectory::new(poses).unwrap();
    let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
    let oracle = horn(&pairs);
    let residuals: Vec<f64> = pairs
        .iter()
        .map(|p| (p.reference.translation - oracle.transform_point(&p.est.translation)).norm())
        .collect();
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let report = ate_from_pairs(&pairs).unwrap();
    assert!((report.max - max).abs() < 1e-9);
    assert!((report.rmse - rmse).abs() < 1e-9);
    assert!(report.max < 1.0 && report.max > 0.9);
}

#[test]
fn identical_trajectories_have_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reference = random_traj(&mut rng, 30);
    let r = ate(&reference, &reference, DEFAULT_MAX_DT).unwrap();
    assert!(r.rmse < 1e-9 && r.max < 1e-9);
}

fn straight(n: usize, scale: f64) -> Trajectory {
    Trajectory::new(
        (0..=n)
            .map(|i| {
                let s = i as f64;
                (s * 0.1, Pose::from_translation(Vec3::new(scale * s, 0.0, 1.8)))
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn one_percent_drift_reports_one_percent() {
    let reference = straight(900, 1.0);
    let est = straight(900, 1.01);
    let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
    let r = kitti_rel_error(&pairs, 1).unwrap();
    assert!((r.average_percent - 1.0).abs() <= 0.05, "{}", r.average_percent);
    for e in &r.per_length {
        assert!(e.segments > 0);
        assert!((e.percent.unwrap() - 1.0).abs() <= 0.05);
    }
    let zero = kitti_rel_error(&associate(&reference, &reference, DEFAULT_MAX_DT).unwrap(), 1).unwrap();
    assert!(zero.average_percent.abs() < 1e-12);
}

#[test]
fn thinned_starts_keep_the_average() {
    let reference = straight(900, 1.0);
    let est = straight(900, 1.01);
    let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
    let dense = kitti_rel_error(&pairs, 1).unwrap();
    let thin = kitti_rel_error(&pairs, 10).unwrap();
    assert!((dense.average_percent - thin.average_percent).abs() < 0.01);
    assert!(thin.per_length[0].segments < dense.per_length[0].segments);
}

#[test]
fn fixtures_round_trip() {
    for (text, label, value) in [
        (include_str!("fixtures/rel_error_frame_to_model.txt"), "frame-to-model average", 0.85),
        (include_str!("fixtures/rel_error_sequence_01.txt"), "sequence 01", 1.0),
    ] {
        let report = RelErrorReport::parse(text).unwrap();
        assert_eq!(report.label, label);
        assert_eq!(report.average_percent, value);
        assert_eq!(RelErrorReport::parse(&report.to_text()).unwrap(), report);
    }
}

#[test]
fn computed_report_round_trips() {
    let reference = straight(900, 1.0);
    let est = straight(300, 1.01);
    let pairs = associate(&est, &reference, DEFAULT_MAX_DT).unwrap();
    let mut r = kitti_rel_error(&pairs, 1).unwrap();
    r.label = "short".into();
    assert!(r.per_length.iter().any(|e| e.percent.is_none()));
    assert_eq!(RelErrorReport::parse(&r.to_text()).unwrap(), r);
}

#[test]
fn malformed_report_names_the_line() {
    let text = "metric: kitti_relative_translation\naverage_percent: 0.85\nlength_100: abc 3\n";
    assert!(matches!(RelErrorReport::parse(text), Err(EvalError::Parse { line: 3, .. })));
    let text = "metric: kitti_relative_translation\nbogus: 1\n";
    assert!(matches!(RelErrorReport::parse(text), Err(EvalError::Parse { line: 2, .. })));
}

#[test]
fn ate_report_lists_every_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reference = random_traj(&mut rng, 12);
    let r = ate(&reference, &reference, DEFAULT_MAX_DT).unwrap();
    let text = r.to_text();
    assert!(text.starts_with("metric: ate\n"));
    assert_eq!(text.lines().filter(|l| !l.contains(':') && !l.starts_with('#')).count(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ate_is_rigid_invariant(seed in 0u64..10_000, qx in -100.0f64..100.0, yaw in -3.0f64..3.0, roll in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_traj(&mut rng, 30);
        let est = Trajectory::new(
            reference.poses().iter().map(|(t, p)| {
                let mut e = *p;
                e.translation += Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
                (*t, e)
            }).collect(),
        ).unwrap();
        let q = Pose::new(Rotation::from_euler(roll, 0.2, yaw), Vec3::new(qx, -qx, 3.0));
        let a = ate(&est, &reference, DEFAULT_MAX_DT).unwrap();
        let b = ate(&est.transformed(&q), &reference, DEFAULT_MAX_DT).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
        prop_assert!((a.max - b.max).abs() < 1e-9);
        prop_assert!(a.rmse <= a.max + 1e-15);
        for (x, y) in a.residuals.iter().zip(&b.residuals) {
            prop_assert!((x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rel_error_is_rigid_invariant(yaw in -3.0f64..3.0, tx in -50.0f64..50.0, wiggle in 0.0f64..0.02) {
        let reference = straight(400, 1.0);
        let est = Trajectory::new(
            reference.poses().iter().enumerate().map(|(i, (t, p))| {
                let mut e = *p;
                e.translation.y += wiggle * (i as f64 * 0.05).sin() * i as f64;
                e.rotation = Rotation::exp(&Vec3::new(0.0, 0.0, 1e-4 * i as f64));
                (*t, e)
            }).collect(),
        ).unwrap();
        let q = Pose::new(Rotation::from_euler(0.0, 0.0, yaw), Vec3::new(tx, 2.0, -1.0));
        let a = kitti_rel_error(&associate(&est, &reference, DEFAULT_MAX_DT).unwrap(), 1).unwrap();
        let b = kitti_rel_error(&associate(&est.transformed(&q), &reference, DEFAULT_MAX_DT).unwrap(), 1).unwrap();
        prop_assert!((a.average_percent - b.average_percent).abs() < 1e-9);
        prop_assert!(a.per_length.iter().all(|e| e.percent.is_none_or(|p| p >= 0.0)));
    }

    #[test]
    fn association_is_one_to_one(offsets in proptest::collection::vec(-0.05f64..0.05, 30)) {
        let reference = straight(29, 1.0);
        let est = Trajectory::new(
            reference.poses().iter().zip(&offsets).map(|((t, p), o)| (t + 0.3 * o, *p)).collect::<Vec<_>>()
        );
        if let Ok(est) = est {
            if let Ok(pairs) = associate(&est, &reference, DEFAULT_MAX_DT) {
                let mut refs: Vec<[u64; 3]> = pairs.iter().map(|p| p.reference.translation.map(f64::to_bits).into()).collect();
                let n = refs.len();
                refs.sort_unstable();
                refs.dedup();
                prop_assert_eq!(refs.len(), n);
            }
        }
    }
}
