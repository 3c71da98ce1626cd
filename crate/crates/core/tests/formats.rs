use std::fs;

use simparts::geometry::{PointCloud, Vec3};
use simparts::io::{parse_indices, read_cloud, read_model, write_cloud, write_model, format_indices};
use simparts::synth::{generate, SynthSpec, Template};
use simparts::Error;

#[test]
fn cloud_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&SynthSpec { points_per_part: 12, ..SynthSpec::new(Template::Table4Leg, 0.02, 8) }).unwrap();
    let path = dir.path().join("c.xyz");
    write_cloud(&path, &s.cloud).unwrap();
    let back = read_cloud(&path).unwrap();
    assert_eq!(back, s.cloud);
    let again = dir.path().join("d.xyz");
    write_cloud(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn ply_output_lists_every_vertex() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = PointCloud::new(vec![Vec3::new(0.5, -1.0, 2.0), Vec3::zeros(), Vec3::x()]).unwrap();
    let path = dir.path().join("c.PLY");
    write_cloud(&path, &cloud).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 3\n"));
    assert!(!text.contains("property int part"));
    assert_eq!(text.split("end_header\n").nth(1).unwrap().lines().count(), 3);
}

#[test]
fn model_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for t in [Template::Table4Leg, Template::ChairArms, Template::PlaneWings] {
        let s = generate(&SynthSpec { points_per_part: 10, ..SynthSpec::new(t, 0.0, 3) }).unwrap();
        let path = dir.path().join("m.toml");
        write_model(&path, &s.truth).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back, s.truth);
        let again = dir.path().join("n.toml");
        write_model(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn read_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.xyz");
    match read_cloud(&missing) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("{other:?}"),
    }
    let bad = dir.path().join("bad.xyz");
    fs::write(&bad, "0 0 0\n1 1\n").unwrap();
    let err = read_cloud(&bad).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }));
    assert!(err.to_string().contains("bad.xyz"));
    let model = dir.path().join("bad.toml");
    fs::write(&model, "version = 1\ntau = \"x\"\n").unwrap();
    assert!(read_model(&model).is_err());
}

#[test]
fn index_lists_round_trip() {
    let idx = vec![3, 1, 4, 1, 5, 9, 2, 6];
    assert_eq!(parse_indices(&format_indices(&idx), std::path::Path::new("i")).unwrap(), idx);
    assert!(parse_indices("1\nx\n", std::path::Path::new("i")).is_err());
}
