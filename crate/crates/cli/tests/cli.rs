use l1dfl_core::volgrid::{read_vvol, write_vvol, VolumeGrid, VolumeKind};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn l1dfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1dfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_COHORT: &str = r#"{
  "base": {"dims": [20, 20, 20], "seed": 0},
  "cohort": {"n_cases": 6, "seed": 11, "radius_mm": [4, 5], "trap_radius_mm": [4, 5], "max_lesions": 2}
}"#;

fn make_cohort(root: &Path) -> PathBuf {
    let cfg = root.join("cohort.json");
    fs::write(&cfg, SMALL_COHORT).unwrap();
    let out = root.join("cohort");
    let o = l1dfl(&["phantom", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_writes_triplets_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = make_cohort(tmp.path());
    let vvols = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vvol"))
        .count();
    assert_eq!(vvols, 18);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "phantom");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["started_at"].is_string());
    let gt = read_vvol(out.join("case000_gt.vvol")).unwrap();
    assert_eq!(gt.kind(), VolumeKind::Mask);
}

#[test]
fn phantom_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = l1dfl(&["phantom", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config parse error"));

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"cohrt": {}}"#).unwrap();
    let o = l1dfl(&["phantom", "--config", s(&unknown), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2));

    let out = make_cohort(tmp.path());
    let cfg = tmp.path().join("cohort.json");
    let o = l1dfl(&["phantom", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let o = l1dfl(&["phantom", "--config", s(&cfg), "--out", s(&out), "--force"]);
    assert!(o.status.success());
}

#[test]
fn phantom_output_is_independent_of_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, SMALL_COHORT).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        let o = l1dfl(&["--jobs", jobs, "--no-timestamps", "phantom", "--config", s(&cfg), "--out", s(dir)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn loss_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = make_cohort(tmp.path());
    let gt = out.join("case000_gt.vvol");
    for loss in ["dice", "focal", "dfl", "l1dfl"] {
        let o = l1dfl(&["loss", "--pred", s(&gt), "--gt", s(&gt), "--loss", loss]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v = stdout_json(&o);
        assert!(v["value"].as_f64().unwrap().abs() < 1e-5, "{loss}: {}", v["value"]);
    }

    let g = read_vvol(&gt).unwrap();
    let p = g.like(VolumeKind::Prob, g.data().iter().map(|&x| 0.2 + 0.6 * x).collect()).unwrap();
    let pred = tmp.path().join("p.vvol");
    write_vvol(&p, &pred).unwrap();
    let o = l1dfl(&["loss", "--pred", s(&pred), "--gt", s(&gt), "--loss", "l1dfl", "--gamma-bin", "0.1"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    let bins = v["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 11);
    assert_eq!(bins[2]["count"].as_u64().unwrap() as usize, g.len());
    assert!(v["grad"]["l2_norm"].as_f64().unwrap() > 0.0);
    let o = l1dfl(&["loss", "--pred", s(&pred), "--gt", s(&gt), "--loss", "dice"]);
    assert!(stdout_json(&o)["bins"].is_null());

    let small = VolumeGrid::filled([4, 4, 4], [2.0; 3], VolumeKind::Prob, 0.5).unwrap();
    let small_path = tmp.path().join("small.vvol");
    write_vvol(&small, &small_path).unwrap();
    let o = l1dfl(&["loss", "--pred", s(&small_path), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("geometry mismatch"));

    let garbage = tmp.path().join("garbage.vvol");
    fs::write(&garbage, b"NOTVVOL").unwrap();
    let o = l1dfl(&["loss", "--pred", s(&garbage), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("bad_magic"));

    let o = l1dfl(&["loss", "--pred", s(&pred), "--gt", s(&gt), "--gamma-bin", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_command() {
    let o = l1dfl(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = stdout_json(&o);
    assert_eq!(v["passed"], true);
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    for r in reports {
        assert!(r["max_rel_err"].as_f64().unwrap() < 1e-4);
        for k in ["worst_index", "worst_coords", "analytic", "numeric"] {
            assert!(!r[k].is_null(), "{k}");
        }
    }

    let o = l1dfl(&["gradcheck", "--loss", "focal", "--h", "1e-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["passed"], false);

    let o = l1dfl(&["gradcheck", "--dims", "2,2"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_preds(dir: &Path, cohort: &Path, f: impl Fn(&VolumeGrid) -> VolumeGrid) {
    fs::create_dir_all(dir).unwrap();
    for e in fs::read_dir(cohort).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if let Some(id) = name.strip_suffix("_gt.vvol") {
            let gt = read_vvol(&path).unwrap();
            write_vvol(&f(&gt), dir.join(format!("{id}_pred.vvol"))).unwrap();
        }
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn evaluate_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = make_cohort(tmp.path());
    let report = tmp.path().join("self").join("report.csv");
    fs::create_dir_all(report.parent().unwrap()).unwrap();
    let o = l1dfl(&[
        "evaluate", "--pred-dir", s(&cohort), "--gt-dir", s(&cohort), "--pet-dir", s(&cohort), "--out", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&report);
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[col("patient_dsc")], "1");
        assert_eq!(r[col("fp")], "0");
        assert_eq!(r[col("fn")], "0");
        assert_eq!(r[col("f1")], "1");
    }
    let (sh, _) = read_csv(&report.with_file_name("report_summary.csv"));
    assert!(!sh.contains(&"p_value".to_string()));
    assert!(report.with_file_name("manifest.json").exists());

    let o = l1dfl(&[
        "evaluate", "--pred-dir", s(&cohort), "--gt-dir", s(&cohort), "--pet-dir", s(&cohort), "--out", s(&report),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let empty = tmp.path().join("empty");
    write_preds(&empty, &cohort, |g| VolumeGrid::filled(g.dims(), g.spacing(), VolumeKind::Mask, 0.0).unwrap());
    let report2 = tmp.path().join("cmp").join("report.csv");
    fs::create_dir_all(report2.parent().unwrap()).unwrap();
    let o = l1dfl(&[
        "evaluate", "--pred-dir", s(&empty), "--pred-dir-b", s(&cohort), "--gt-dir", s(&cohort), "--pet-dir",
        s(&cohort), "--out", s(&report2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&report2);
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    for r in rows.iter().filter(|r| r[col("pred_set")] == "a") {
        assert_eq!(r[col("patient_dsc")], "0");
        assert_eq!(r[col("fn")], r[col("n_gt_lesions")]);
        assert_eq!(r[col("tp")], "0");
    }
    let (sh, srows) = read_csv(&report2.with_file_name("report_summary.csv"));
    let p = sh.iter().position(|x| x == "p_value").expect("p_value column");
    // Set b (perfect) beats set a (empty) on all 6 cases.
    assert_eq!(srows[1][p].parse::<f64>().unwrap(), 1.0 / 64.0);

    let wrong = tmp.path().join("wrong");
    write_preds(&wrong, &cohort, |g| VolumeGrid::filled([3, 3, 3], g.spacing(), VolumeKind::Mask, 0.0).unwrap());
    let o = l1dfl(&[
        "evaluate", "--pred-dir", s(&wrong), "--gt-dir", s(&cohort), "--pet-dir", s(&cohort), "--out",
        s(&tmp.path().join("w.csv")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("geometry mismatch"));
}

const TINY_EXPERIMENT: &str = r#"{
  "phantom": {
    "base": {"dims": [16, 16, 16]},
    "cohort": {"n_cases": 6, "seed": 2, "radius_mm": [3, 4], "trap_radius_mm": [3, 4], "max_lesions": 2}
  },
  "optim": {"steps": 12, "lr0": 0.05, "eval_every": 4}
}"#;

#[test]
fn experiment_tables_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("e.json");
    fs::write(&cfg, TINY_EXPERIMENT).unwrap();
    let out = tmp.path().join("out");
    let o = l1dfl(&["experiment", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(rows.len(), 4);
    let losses: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(losses, ["dice", "focal", "dfl", "l1dfl"]);
    for c in ["mean_dsc_s", "mean_dsc_m", "median_dsc", "mean_fp", "f1", "p_value"] {
        assert!(h.contains(&c.to_string()), "{c}");
    }
    for loss in losses {
        let t = fs::read_to_string(out.join(format!("trajectory_{loss}.jsonl"))).unwrap();
        let steps: Vec<u64> = t
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
            .collect();
        assert_eq!(steps, [0, 4, 8, 12]);
    }

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"optim": {"steps": 0}}"#).unwrap();
    let o = l1dfl(&["experiment", "--config", s(&bad), "--out", s(&tmp.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(2));
}
