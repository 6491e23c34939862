use lio_core::geometry::Vec3;
use lio_tools::config::*;

#[test]
fn default_text_round_trips() {
    let c = PipelineConfig::default();
    let text = c.to_text();
    assert_eq!(PipelineConfig::parse(&text).unwrap(), c);
    assert_eq!(text.lines().count(), PipelineConfig::keys().len());
}

#[test]
fn every_key_reads_back_what_was_set() {
    let defaults = PipelineConfig::default();
    for key in PipelineConfig::keys() {
        let mut c = PipelineConfig::default();
        let value = defaults.get(key).unwrap();
        c.set(key, &value).unwrap();
        assert_eq!(c.get(key).unwrap(), value, "{key}");
        assert_eq!(c, defaults, "{key}");
    }
}

#[test]
fn keys_are_unique() {
    let keys = PipelineConfig::keys();
    let unique: std::collections::BTreeSet<_> = keys.iter().collect();
    assert_eq!(unique.len(), keys.len());
}

#[test]
fn comments_blank_lines_and_spacing() {
    let c = PipelineConfig::parse("# mapping\n\n  mapping.cadence=5   # every half second\nodometry.leaf = 0.25\n").unwrap();
    assert_eq!(c.mapping_cadence, 5);
    assert_eq!(c.odometry.leaf, 0.25);
}

#[test]
fn unknown_key_is_rejected() {
    let err = PipelineConfig::parse("odometry.leef = 0.5\n").unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey { key: "odometry.leef".into() });
}

#[test]
fn malformed_lines_and_values() {
    assert_eq!(PipelineConfig::parse("a\n").unwrap_err(), ConfigError::Syntax { line: 1 });
    assert!(matches!(
        PipelineConfig::parse("odometry.leaf = fast\n"),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        PipelineConfig::parse("odometry.window = 2.5\n"),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        PipelineConfig::parse("eskf.gravity = 1 2\n"),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        PipelineConfig::parse("detection.classifier = cnn\n"),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        PipelineConfig::parse("mapping.leaf = 1\nmapping.leaf = 2\n"),
        Err(ConfigError::Duplicate { .. })
    ));
}

#[test]
fn values_are_validated() {
    for bad in [
        "odometry.leaf = 0",
        "odometry.ndt_levels = 1 2",
        "mapping.cadence = 0",
        "detection.objectness_threshold = 1.5",
        "eskf.accel_noise = -1",
        "mapping.ndt.min_points = 2",
        "pipeline.queue_depth = 0",
    ] {
        assert!(matches!(PipelineConfig::parse(bad), Err(ConfigError::Invalid { .. })), "{bad}");
    }
}

#[test]
fn overrides_apply_after_the_file() {
    let mut c = PipelineConfig::parse("mapping.cadence = 5\n").unwrap();
    c.apply_overrides(&["mapping.cadence=20", "eskf.gravity = 0 0 -9.8", "eskf.gyro_noise=0.002"])
        .unwrap();
    assert_eq!(c.mapping_cadence, 20);
    assert_eq!(c.odometry.eskf.gravity, Vec3::new(0.0, 0.0, -9.8));
    assert_eq!(c.odometry.eskf.noise.gyro_noise, Vec3::repeat(0.002));
    assert!(c.apply_overrides(&["nope=1"]).is_err());
}

#[test]
fn extrinsic_reaches_the_odometry() {
    let c = PipelineConfig::parse("extrinsic.translation = 0.1 0 0.2\nextrinsic.rpy = 0 0 0.5\n").unwrap();
    let e = c.odometry_config().extrinsic;
    assert_eq!(e.translation, Vec3::new(0.1, 0.0, 0.2));
    assert!((e.rotation.log() - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
}

#[test]
fn odometry_and_mapping_ndt_are_separate() {
    let c = PipelineConfig::parse("odometry.ndt.max_iter = 7\n").unwrap();
    assert_eq!(c.odometry.ndt.max_iter, 7);
    assert_eq!(c.mapping.ndt.max_iter, PipelineConfig::default().mapping.ndt.max_iter);
}
