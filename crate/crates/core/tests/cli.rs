use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simparts::geometry::Vec3;
use simparts::io::{parse_cloud, read_cloud, read_model};
use simparts::fit::assemble;

fn simparts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simparts"))
        .args(args)
        .env_remove("SIMPARTS_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = simparts(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report_value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in report:\n{report}"))
}

fn synth(dir: &Path, template: &str, n: usize, seed: &str) -> (PathBuf, PathBuf) {
    let cloud = dir.join(format!("{template}.xyz"));
    let truth = dir.join(format!("{template}.toml"));
    ok(&[
        "--seed",
        seed,
        "synth",
        "--template",
        template,
        "--points-per-part",
        &n.to_string(),
        "--out",
        s(&cloud),
        "--truth",
        s(&truth),
    ]);
    (cloud, truth)
}

#[test]
fn missing_input_names_the_path() {
    let out = simparts(&["fit", "--input", "/no/such/cloud.xyz", "--shapes", "1", "--parts", "1", "--out", "m.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/cloud.xyz"));
}

#[test]
fn bad_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = synth(dir.path(), "plane-wings", 16, "1");
    let cfg = dir.path().join("fit.toml");
    fs::write(&cfg, "no_such_field = 3\n").unwrap();
    let out = simparts(&[
        "fit", "--input", s(&cloud), "--shapes", "2", "--parts", "3", "--config", s(&cfg), "--out", "m.toml",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit.toml"));
}

#[test]
fn synth_writes_labelled_parts() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, truth) = synth(dir.path(), "chair-arms", 20, "3");
    let c = read_cloud(&cloud).unwrap();
    assert_eq!(c.len(), 80);
    for m in 0..4 {
        assert_eq!(c.indices_with_label(m).len(), 20);
    }
    assert_eq!(read_model(&truth).unwrap().hot(), vec![0, 1, 2, 2]);
}

#[test]
fn corrupt_removes_k_points_of_the_part_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = synth(dir.path(), "table4leg", 64, "2");
    let run = |name: &str, kind: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--seed", "9", "corrupt", "--input", s(&cloud), "--kind", kind, "--part", "1", "--k", "20", "--out",
            s(&out),
        ]);
        let removed = fs::read_to_string(dir.path().join(format!("{name}.removed"))).unwrap();
        (fs::read(&out).unwrap(), removed)
    };
    let full = read_cloud(&cloud).unwrap();
    for kind in ["cut", "hole"] {
        let (a, removed) = run(&format!("{kind}_a.xyz"), kind);
        let (b, removed_b) = run(&format!("{kind}_b.xyz"), kind);
        assert_eq!(a, b);
        assert_eq!(removed, removed_b);
        let kept = parse_cloud(std::str::from_utf8(&a).unwrap(), Path::new("x")).unwrap();
        assert_eq!(kept.len(), full.len() - 20);
        let idx: Vec<usize> = removed.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| full.labels().unwrap()[i] == 1));
    }
}

#[test]
fn seed_flag_and_environment_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    let b = dir.path().join("b.xyz");
    ok(&["--seed", "5", "synth", "--template", "plane-wings", "--points-per-part", "8", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_simparts"))
        .args(["synth", "--template", "plane-wings", "--points-per-part", "8", "--out", s(&b)])
        .env("SIMPARTS_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn fit_is_deterministic_and_reports_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = synth(dir.path(), "plane-wings", 24, "1");
    let fit = |name: &str| {
        let model = dir.path().join(name);
        let report = ok(&[
            "--seed", "4", "fit", "--input", s(&cloud), "--shapes", "2", "--parts", "3", "--preset", "airplane",
            "--stage1-iters", "15", "--stage2-iters", "10", "--restarts", "2", "--points-per-part", "12", "--out",
            s(&model),
        ]);
        (fs::read_to_string(&model).unwrap(), report)
    };
    let (a, report) = fit("a.toml");
    let (b, _) = fit("b.toml");
    assert_eq!(a, b);
    assert_eq!(report_value(&report, "w_o"), "0.001");
    assert_eq!(report_value(&report, "w_d"), "0.00001");
    assert_eq!(report_value(&report, "c1"), "4");
    assert_eq!(report_value(&report, "seed"), "4");
    assert_eq!(report_value(&report, "restart_finals").split(',').count(), 2);
    assert!(report.contains("# trace\nrestart stage iter total"));
    let model = read_model(&dir.path().join("a.toml")).unwrap();
    assert_eq!((model.num_shapes(), model.num_parts(), model.points_per_shape()), (2, 3, 12));
}

#[test]
fn complete_with_a_given_model() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, truth) = synth(dir.path(), "table4leg", 32, "6");
    let cut = dir.path().join("cut.xyz");
    ok(&["corrupt", "--input", s(&cloud), "--kind", "cut", "--part", "2", "--k", "16", "--out", s(&cut)]);
    let inc = fs::read_to_string(&cut).unwrap();

    let out_s = dir.path().join("s.xyz");
    ok(&["complete", "--input", s(&cut), "--mode", "s", "--model", s(&truth), "--out", s(&out_s)]);
    let completed = fs::read_to_string(&out_s).unwrap();
    let inc_points = parse_cloud(&inc, Path::new("x")).unwrap();
    let done = parse_cloud(&completed, Path::new("x")).unwrap();
    assert!(done.len() > inc_points.len());
    assert_eq!(&done.points()[..inc_points.len()], inc_points.points());

    let out_r = dir.path().join("r.xyz");
    ok(&["complete", "--input", s(&cut), "--mode", "r", "--model", s(&truth), "--out", s(&out_r)]);
    assert_eq!(read_cloud(&out_r).unwrap().len(), 32 * 5);
}

#[test]
fn eval_of_identical_sets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    for (i, (t, n)) in [("table4leg", 8), ("chair-arms", 10)].iter().enumerate() {
        let (cloud, _) = synth(dir.path(), t, *n, &i.to_string());
        let text = fs::read_to_string(cloud).unwrap();
        // scale into the voxel cube
        let scaled: String = text
            .lines()
            .map(|l| {
                let v: Vec<f64> = l.split_whitespace().take(3).map(|f| f.parse::<f64>().unwrap() * 0.3).collect();
                format!("{} {} {}\n", v[0], v[1], v[2])
            })
            .collect();
        fs::write(a.join(format!("{i}.xyz")), &scaled).unwrap();
        fs::write(b.join(format!("{i}.xyz")), &scaled).unwrap();
    }
    let report = ok(&["eval", "--a", s(&a), "--b", s(&b)]);
    assert_eq!(report_value(&report, "jsd"), "0");
    assert_eq!(report_value(&report, "jsd.clamped"), "0");
    assert_eq!(report_value(&report, "mmd-cd"), "0");
    assert_eq!(report_value(&report, "cov-cd"), "1");
    assert_eq!(report_value(&report, "mmd-emd"), "0");
    assert_eq!(report_value(&report, "cov-emd"), "1");
    let only = ok(&["eval", "--a", s(&a), "--b", s(&b), "--metrics", "jsd", "--grid-res", "8"]);
    assert_eq!(report_value(&only, "jsd.grid_res"), "8");
    assert!(!only.contains("mmd-cd"));
}

const SPHERE_MODEL: &str = "version = 1
tau = 1.0
logits = [[0.0]]

[[shapes]]
alpha = [1.0, 1.0, 1.0]
eps = [1.0, 1.0]
taper = [0.0, 0.0]
points = [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [0.0, 0.0, -1.0]]

[[poses]]
q = [1.0, 0.0, 0.0, 0.0]
t = [0.0, 0.0, 0.0]
";

#[test]
fn export_of_a_sphere_model() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("sphere.toml");
    fs::write(&model_path, SPHERE_MODEL).unwrap();
    let prims = dir.path().join("prims.xyz");
    ok(&["export", "--model", s(&model_path), "--what", "primitives", "--n-surface", "100", "--out", s(&prims)]);
    let surface = read_cloud(&prims).unwrap();
    assert_eq!(surface.len(), 100);
    assert!(surface.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));

    let pts = dir.path().join("points.ply");
    ok(&["export", "--model", s(&model_path), "--what", "points", "--out", s(&pts)]);
    let ply = fs::read_to_string(&pts).unwrap();
    let body = ply.split("end_header\n").nth(1).unwrap();
    let exported = parse_cloud(body, &pts).unwrap();
    let model = read_model(&model_path).unwrap();
    assert_eq!(exported, assemble(&model).cloud);
    assert_eq!(exported.points()[1], Vec3::new(0.0, 0.6, 0.8));
}
