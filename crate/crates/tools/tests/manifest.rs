use std::path::Path;

use lio_tools::manifest::*;

const TEXT: &str = "scan_period 0.1\ntheta_end 6.283185307179586\nimu imu.txt\n# two scans\nscan 0 a.bin a.lbl\nscan 0.1 b.bin\n";

#[test]
fn parses_and_round_trips() {
    let m = DatasetManifest::parse(TEXT, Path::new("/d")).unwrap();
    assert_eq!(m.scans.len(), 2);
    assert_eq!(m.scans[0].labels.as_deref(), Some(Path::new("a.lbl")));
    assert_eq!(m.scans[1].labels, None);
    assert_eq!(m.ground_truth, None);
    assert_eq!(DatasetManifest::parse(&m.to_text(), Path::new("/d")).unwrap(), m);
}

#[test]
fn scan_times_must_increase() {
    let text = TEXT.replace("scan 0.1", "scan 0");
    assert!(matches!(
        DatasetManifest::parse(&text, Path::new("/d")),
        Err(ManifestError::NotIncreasing { index: 1, .. })
    ));
}

#[test]
fn required_keys_and_values() {
    assert_eq!(
        DatasetManifest::parse("theta_end 1\nimu i\nscan 0 a\n", Path::new("/d")),
        Err(ManifestError::Missing("scan_period"))
    );
    assert!(matches!(
        DatasetManifest::parse(&TEXT.replace("theta_end 6.283185307179586", "theta_end 7"), Path::new("/d")),
        Err(ManifestError::Invalid(_))
    ));
    assert!(matches!(
        DatasetManifest::parse(&TEXT.replace("scan 0 a.bin a.lbl", "scan 0"), Path::new("/d")),
        Err(ManifestError::Syntax { line: 5, .. })
    ));
}

#[test]
fn missing_referenced_file_fails_load() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(MANIFEST_FILE), TEXT).unwrap();
    for f in ["imu.txt", "a.bin", "a.lbl"] {
        std::fs::write(dir.path().join(f), b"").unwrap();
    }
    match DatasetManifest::load(dir.path()) {
        Err(ManifestError::MissingFile(p)) => assert!(p.ends_with("b.bin")),
        other => panic!("{other:?}"),
    }
    std::fs::write(dir.path().join("b.bin"), b"").unwrap();
    assert!(DatasetManifest::load(dir.path()).is_ok());
}
