use std::path::Path;

use lio_core::deskew::stamp_points;
use lio_core::geometry::{ImuSample, Pose, Rotation, TimedPoint, Vec3};
use lio_core::sim::{Scenario, ScenarioPreset};
use lio_tools::formats::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn thousand_random_points_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points: Vec<TimedPoint> = (0..1000)
        .map(|_| {
            let v: [f32; 4] = [
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-3.0..10.0),
                rng.random_range(0.0..1.0),
            ];
            TimedPoint::new(Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64), v[3] as f64)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.bin");
    let bytes = encode_cloud(&points);
    std::fs::write(&path, &bytes).unwrap();
    let back = read_cloud(&path).unwrap();
    assert_eq!(back, points);
    assert_eq!(encode_cloud(&back), bytes);
}

#[test]
fn truncated_cloud_names_the_offset() {
    let bytes = encode_cloud(&[TimedPoint::new(Vec3::new(1.0, 2.0, 3.0), 0.5); 4]);
    let err = parse_cloud(&bytes[..bytes.len() - 5], Path::new("cut.bin")).unwrap_err();
    match &err {
        FormatError::Binary { offset, .. } => assert_eq!(*offset, 48),
        other => panic!("{other:?}"),
    }
    assert!(err.to_string().contains("byte 48"), "{err}");
}

#[test]
fn velodyne_fixture_has_the_scripted_count() {
    let expected: usize = std::fs::read_to_string(fixture("kitti_sample.count"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let points = read_cloud(&fixture("kitti_sample.bin")).unwrap();
    assert_eq!(points.len(), expected);
}

#[test]
fn velodyne_fixture_timestamps_follow_azimuth() {
    // The fixture sweeps once, counter-clockwise from azimuth 0.
    let scan = read_scan_bin(&fixture("kitti_sample.bin"), 5.0, 0.1, std::f64::consts::TAU).unwrap();
    let stamped = stamp_points(&scan).unwrap();
    let n = stamped.points.len() as f64;
    for (i, p) in stamped.points.iter().enumerate() {
        assert!((p.timestamp - (5.0 + 0.1 * i as f64 / n)).abs() < 1e-7, "point {i}");
    }
}

#[test]
fn written_simulator_scan_recovers_emission_times() {
    let scenario = Scenario::preset(ScenarioPreset::Smoke, 4);
    let rendered = scenario.render(1.0).scan;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    write_scan_bin(&path, &rendered).unwrap();
    let scan = read_scan_bin(&path, rendered.t_start, rendered.scan_period, rendered.theta_end).unwrap();
    let stamped = stamp_points(&scan).unwrap();
    let worst = stamped
        .points
        .iter()
        .zip(&rendered.points)
        .map(|(a, b)| (a.timestamp - b.timestamp).abs())
        .fold(0.0, f64::max);
    // Limited by the f32 coordinates of the file.
    assert!(worst < 1e-6, "worst time error {worst}");
}

#[test]
fn labels_round_trip_and_reject_other_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.lbl");
    write_labels(&path, &[0, 1, 1, 0]).unwrap();
    assert_eq!(read_labels(&path).unwrap(), vec![0, 1, 1, 0]);
    std::fs::write(&path, [0u8, 2]).unwrap();
    assert!(matches!(read_labels(&path), Err(FormatError::Binary { offset: 1, .. })));
}

#[test]
fn tum_bad_line_is_named() {
    let text = "# header\n0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n";
    match parse_tum(text, Path::new("t.tum")) {
        Err(FormatError::Text { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(read_traj_tum(Path::new("/nonexistent/t.tum")), Err(FormatError::Io { .. })));
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e4..1e4f64, -1.0..1.0f64, Just(0.0), Just(-0.0)]
}

proptest! {
    #[test]
    fn tum_round_trip_is_exact(
        raw in proptest::collection::vec((0.001..1.0f64, [finite(), finite(), finite()], [-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64]), 1..40)
    ) {
        let mut t = 0.0;
        let poses: Vec<(f64, Pose)> = raw
            .iter()
            .map(|(dt, p, r)| {
                t += dt;
                (t, Pose::new(Rotation::exp(&Vec3::new(r[0], r[1], r[2])), Vec3::new(p[0], p[1], p[2])))
            })
            .collect();
        let back = parse_tum(&encode_tum(&poses), Path::new("x")).unwrap();
        prop_assert_eq!(back, poses);
    }

    #[test]
    fn imu_round_trip_is_exact(raw in proptest::collection::vec((0.001..0.1f64, [finite(), finite(), finite()], [finite(), finite(), finite()]), 1..40)) {
        let mut t = 0.0;
        let samples: Vec<ImuSample> = raw
            .iter()
            .map(|(dt, a, w)| {
                t += dt;
                ImuSample { timestamp: t, accel: Vec3::new(a[0], a[1], a[2]), gyro: Vec3::new(w[0], w[1], w[2]) }
            })
            .collect();
        let back = parse_imu(&encode_imu(&samples), Path::new("x")).unwrap();
        prop_assert_eq!(back.samples(), &samples[..]);
    }

    #[test]
    fn cloud_bytes_round_trip(bits in proptest::collection::vec(any::<[f32; 4]>().prop_filter("finite", |v| v.iter().all(|x| x.is_finite())), 0..200)) {
        let bytes: Vec<u8> = bits.iter().flat_map(|v| v.iter().flat_map(|x| x.to_le_bytes())).collect();
        let points = parse_cloud(&bytes, Path::new("x")).unwrap();
        prop_assert_eq!(points.len(), bits.len());
        prop_assert_eq!(encode_cloud(&points), bytes);
    }
}
