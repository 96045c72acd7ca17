use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qpat::experiment::{ExperimentConfig, FieldFile};
use qpat::geometry::SpatialMesh;

fn qpat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpat")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, sim_n: usize) -> PathBuf {
    let cfg = ExperimentConfig {
        sim_n,
        inv_n: 10,
        n_angles: 8,
        n_detectors: 24,
        n_times: 120,
        iters: 4,
        noise_level: 0.05,
        ..Default::default()
    };
    let path = dir.join(format!("run{sim_n}.cfg"));
    std::fs::write(&path, cfg.to_text()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_reconstruct() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 20);
    let data = tmp.path().join("data");
    let out = qpat(&["simulate", s(&cfg), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["pressure.bin", "pressure_clean.bin", "mu_true.bin", "heating_true.bin", "config.txt", "manifest.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let m = manifest(&data.join("manifest.json"));
    assert_eq!(m["noise"]["seed"], 1);
    assert_eq!(m["warnings"].as_array().unwrap().len(), 0);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let out = qpat(&["reconstruct", s(&cfg), s(&data), "--method", "single"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = std::fs::read_to_string(data.join("trace_single.csv")).unwrap();
    let objectives: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(objectives.len() >= 2);
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]));
    let recon = FieldFile::load(&data.join("mu_single.bin")).unwrap();
    recon.check_mesh(&SpatialMesh::uniform(10).unwrap()).unwrap();
    assert!(recon.values.iter().all(|v| (0.0..=1.0).contains(v)));
    let m = manifest(&data.join("manifest_single.json"));
    assert!(m["results"]["relative_error"].as_f64().unwrap() < 1.0);

    let truth = data.join("mu_true.bin");
    let double = tmp.path().join("double.bin");
    let t = FieldFile::load(&truth).unwrap();
    FieldFile::new(&SpatialMesh::uniform(10).unwrap(), t.values.iter().map(|v| 2.0 * v).collect())
        .unwrap()
        .save(&double)
        .unwrap();
    let csv = tmp.path().join("sections.csv");
    let out = qpat(&["compare", s(&truth), s(&double), s(&truth), "--csv", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("0.000000") && table.contains("1.000000"), "{table}");
    let csv = std::fs::read_to_string(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("section,index,x,y,truth,a,b"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("horizontal,")).count(), 11);
    assert_eq!(rows.iter().filter(|r| r.starts_with("vertical,")).count(), 11);

    std::fs::write(data.join("pressure.bin"), b"tampered").unwrap();
    let out = qpat(&["reconstruct", s(&cfg), s(&data), "--method", "two"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pressure.bin"), "{}", stderr(&out));
}

#[test]
fn same_mesh_is_flagged_as_inverse_crime() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 10);
    let data = tmp.path().join("data");
    let out = qpat(&["simulate", s(&cfg), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("inverse crime"));
    let m = manifest(&data.join("manifest.json"));
    assert!(m["warnings"][0].as_str().unwrap().contains("inverse crime"));
}

#[test]
fn bad_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 20);
    assert_eq!(code(&qpat(&[])), 1);
    assert_eq!(code(&qpat(&["--help"])), 0);
    assert_eq!(code(&qpat(&["reconstruct", s(&cfg), "nowhere", "--method", "three"])), 1);

    let text = std::fs::read_to_string(&cfg).unwrap();
    let missing = tmp.path().join("missing.cfg");
    std::fs::write(&missing, text.replace("angles.n = 8\n", "")).unwrap();
    let out = qpat(&["simulate", s(&missing), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("angles.n"), "{}", stderr(&out));

    let unknown = tmp.path().join("unknown.cfg");
    std::fs::write(&unknown, format!("{text}solver.momentum = 0.9\n")).unwrap();
    let out = qpat(&["simulate", s(&unknown)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("solver.momentum"), "{}", stderr(&out));

    let out = qpat(&["reconstruct", s(&cfg), s(&tmp.path().join("nowhere")), "--method", "single"]);
    assert_ne!(code(&out), 0);
}

#[test]
fn mesh_export_format() {
    let out = qpat(&["mesh", "export", "--n", "2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "vertices 9 triangles 8");
    assert_eq!(lines.len(), 1 + 9 + 8);
    assert_eq!(lines[1], "-1 -1");
    for t in &lines[10..] {
        let idx: Vec<usize> = t.split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!(idx.len(), 3);
        assert!(idx.iter().all(|&i| i < 9));
    }
    assert_eq!(code(&qpat(&["mesh", "export", "--n", "0"])), 1);
}
