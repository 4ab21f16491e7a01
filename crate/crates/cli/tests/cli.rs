use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use uman_cli::{run_experiment, run_sweep, value_dir, ExperimentConfig, SweepAxis};

fn quick() -> Value {
    json!({
        "umda_matrix": {"rows": [[2, 2, 3], [1, 1, 1]]},
        "synthetic": {"feature_dim": 6, "samples_per_class_per_domain": 20,
                      "class_center_scale": 2.0, "domain_shift_scale": 0.5, "noise_sigma": 0.3},
        "hyperparams": {"max_steps": 40, "lr_feature": 0.05, "lr_classifier": 0.1,
                        "lr_discriminator": 0.1, "batch_size": 8},
        "methods": ["uman", "unweighted_adv", "source_only"],
        "seeds": [3, 4],
        "test_samples_per_class": 10
    })
}

fn write_config(dir: &Path, mut v: Value) -> PathBuf {
    v["output_dir"] = json!(dir.join("out"));
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn uman(args: &[&str], path: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uman"))
        .args(args)
        .arg(path)
        .env_remove("UMAN_SEED_OFFSET")
        .output()
        .unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path)
        .unwrap()
        .headers()
        .unwrap()
        .iter()
        .map(String::from)
        .collect()
}

fn col(path: &Path, name: &str) -> usize {
    header(path).iter().position(|h| h == name).unwrap()
}

#[test]
fn zero_step_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["hyperparams"]["max_steps"] = json!(0);
    let path = write_config(dir.path(), v);
    let out = uman(&["run"], &path);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out_dir = dir.path().join("out");
    let summary = out_dir.join("summary.csv");
    assert_eq!(rows(&summary).len(), 6);
    let run = out_dir.join("runs/uman_3");
    assert_eq!(rows(&run.join("trace.csv")).len(), 0);
    let tmr = rows(&run.join("tmr.csv"));
    assert!(tmr.iter().all(|r| &r[2] == "0"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let hash = ExperimentConfig::load(&path).unwrap().hash();
    assert_eq!(report["config_hash"], json!(hash));
    assert!(rows(&summary).iter().all(|r| r[0] == *hash));
}

#[test]
fn summary_has_one_row_per_method_and_seed_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), quick());
    assert!(uman(&["run", "--jobs", "2"], &path).status.success());
    let summary = dir.path().join("out/summary.csv");
    let h = header(&summary);
    assert_eq!(
        h,
        [
            "config_hash",
            "method",
            "seed",
            "status",
            "mean_per_class_accuracy",
            "acc_0",
            "acc_1",
            "acc_2",
            "acc_unknown",
            "report",
            "error"
        ]
    );
    let got: Vec<(String, String)> = rows(&summary)
        .iter()
        .map(|r| (r[1].to_string(), r[2].to_string()))
        .collect();
    let want: Vec<(String, String)> = ["uman", "unweighted_adv", "source_only"]
        .iter()
        .flat_map(|m| ["3", "4"].map(|s| (m.to_string(), s.to_string())))
        .collect();
    assert_eq!(got, want);
    for r in rows(&summary) {
        assert_eq!(&r[3], "ok");
        assert!(dir.path().join("out").join(&r[9]).exists());
        let mean: f64 = r[4].parse().unwrap();
        let per_class: Vec<f64> = (5..9).map(|i| r[i].parse().unwrap()).collect();
        assert!((mean - per_class.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }
}

#[test]
fn rerun_reproduces_summary_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = write_config(a.path(), quick());
    let pb = write_config(b.path(), quick());
    assert!(uman(&["run"], &pa).status.success());
    assert!(uman(&["run", "--jobs", "3"], &pb).status.success());
    let first = fs::read(a.path().join("out/summary.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("out/summary.csv")).unwrap());
    assert!(uman(&["run"], &pa).status.success());
    assert_eq!(first, fs::read(a.path().join("out/summary.csv")).unwrap());
}

#[test]
fn divergent_run_becomes_a_failed_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["hyperparams"]["lr_classifier"] = json!(1e308);
    v["hyperparams"]["lr_feature"] = json!(1e308);
    v["methods"] = json!(["source_only"]);
    v["seeds"] = json!([0]);
    let path = write_config(dir.path(), v);
    let stale = dir.path().join("out/runs/source_only_0");
    fs::create_dir_all(&stale).unwrap();
    fs::write(stale.join("trace.csv"), "old").unwrap();
    let out = uman(&["run"], &path);
    assert!(out.status.success());
    let summary = dir.path().join("out/summary.csv");
    let r = &rows(&summary)[0];
    assert_eq!(&r[col(&summary, "status")], "failed");
    assert!(r[col(&summary, "error")].contains("diverged"), "{:?}", r);
    assert_eq!(&r[col(&summary, "mean_per_class_accuracy")], "");
    assert!(!stale.join("trace.csv").exists());
}

#[test]
fn sweep_writes_one_group_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(&quick().to_string()).unwrap();
    let rows_out = run_sweep(
        &cfg,
        dir.path(),
        SweepAxis::TargetPrivateSize,
        &[0, 1, 2],
        1,
    )
    .unwrap();
    assert_eq!(rows_out.len(), 9);
    let table = dir.path().join("sweep_target_private_size.csv");
    let rs = rows(&table);
    assert_eq!(rs.len(), 9);
    for (i, value) in ["0", "1", "2"].iter().enumerate() {
        let group: Vec<_> = rs[i * 3..i * 3 + 3].iter().collect();
        assert!(group.iter().all(|r| &r[1] == *value && &r[2] == "ok"));
        let hashes: Vec<&str> = group.iter().map(|r| &r[3]).collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
        assert!(value_dir(dir.path(), SweepAxis::TargetPrivateSize, i)
            .join("summary.csv")
            .exists());
    }
    assert_ne!(&rs[0][3], &rs[3][3]);
}

#[test]
fn single_value_sweep_matches_a_plain_run() {
    let cfg = ExperimentConfig::from_json(&quick().to_string()).unwrap();
    let sweep_dir = tempfile::tempdir().unwrap();
    let run_dir = tempfile::tempdir().unwrap();
    run_sweep(
        &cfg,
        sweep_dir.path(),
        SweepAxis::TargetPrivateSize,
        &[1],
        1,
    )
    .unwrap();
    run_experiment(&cfg, run_dir.path(), 1).unwrap();
    let swept =
        fs::read(value_dir(sweep_dir.path(), SweepAxis::TargetPrivateSize, 1).join("summary.csv"))
            .unwrap();
    assert_eq!(swept, fs::read(run_dir.path().join("summary.csv")).unwrap());
}

#[test]
fn transfer_gain_matches_the_per_run_summaries() {
    let cfg = ExperimentConfig::from_json(&quick().to_string()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_sweep(&cfg, dir.path(), SweepAxis::TargetPrivateSize, &[2], 1).unwrap();
    let summary = value_dir(dir.path(), SweepAxis::TargetPrivateSize, 2).join("summary.csv");
    let acc = |method: &str, seed: &str| -> f64 {
        rows(&summary)
            .iter()
            .find(|r| &r[1] == method && &r[2] == seed)
            .unwrap()[4]
            .parse()
            .unwrap()
    };
    let table = dir.path().join("sweep_target_private_size.csv");
    let gain_col = col(&table, "transfer_gain");
    for r in rows(&table) {
        let m = &r[4];
        let expect = ((acc(m, "3") - acc("source_only", "3"))
            + (acc(m, "4") - acc("source_only", "4")))
            / 2.0;
        let got: f64 = r[gain_col].parse().unwrap();
        assert!((got - expect).abs() < 1e-12, "{m}: {got} vs {expect}");
        let seeds: Vec<f64> = ["seed_3", "seed_4"]
            .iter()
            .map(|c| r[col(&table, c)].parse().unwrap())
            .collect();
        assert_eq!(seeds, vec![acc(m, "3"), acc(m, "4")]);
    }
}

#[test]
fn infeasible_sweep_values_are_marked_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["methods"] = json!(["uman", "source_only"]);
    let path = write_config(dir.path(), v);
    let out = uman(
        &["sweep", "--axis", "common_overlap", "--values", "1,9,2"],
        &path,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = dir.path().join("out/sweep_common_overlap.csv");
    let statuses: Vec<(String, String)> = rows(&table)
        .iter()
        .map(|r| (r[1].to_string(), r[2].to_string()))
        .collect();
    assert_eq!(
        statuses,
        [
            ("1", "ok"),
            ("1", "ok"),
            ("9", "infeasible"),
            ("2", "ok"),
            ("2", "ok")
        ]
        .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    let infeasible = &rows(&table)[2];
    assert!(infeasible[col(&table, "note")].contains("exceeds"));

    let out = uman(
        &["sweep", "--axis", "num_sources", "--values", "0,3"],
        &path,
    );
    assert!(out.status.success());
    let rs = rows(&dir.path().join("out/sweep_num_sources.csv"));
    assert_eq!(&rs[0][2], "infeasible");
    assert!(rs[1..].iter().all(|r| &r[2] == "ok"));
}

#[test]
fn common_overlap_splits_the_common_set_evenly() {
    let cfg = ExperimentConfig::from_json(&quick().to_string()).unwrap();
    let swept = SweepAxis::CommonOverlap.apply(&cfg, 2).unwrap();
    assert_eq!(swept.umda_matrix.common_sizes, vec![3, 2]);
    let p = swept.partition().unwrap();
    let shared = p
        .common_of(0)
        .iter()
        .filter(|c| p.common_of(1).contains(c))
        .count();
    assert_eq!(shared, 2);
    let mut three = cfg.clone();
    three.umda_matrix.common_sizes.push(2);
    three.umda_matrix.private_sizes.push(1);
    assert!(SweepAxis::CommonOverlap.apply(&three, 1).is_err());
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = uman(&["validate"], &path);
            assert!(
                out.status.success(),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            seen += 1;
        }
    }
    assert!(seen >= 2);
}

#[test]
fn validate_prints_exact_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["umda_matrix"] = json!({"rows": [[7, 7, 10], [5, 5, 11]]});
    let path = write_config(dir.path(), v);
    let out = uman(&["validate"], &path);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("xi_1    7/26 = 0.2692"), "{text}");
    assert!(text.contains("xi_2    7/26 = 0.2692"), "{text}");
}

#[test]
fn validate_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["umda_matrix"] = json!({"rows": [[5, 1, 3], [1, 1, 1]]});
    v["hyperparams"]["batch_size"] = json!(0);
    v["seeds"] = json!([1, 1]);
    let path = write_config(dir.path(), v);
    let out = uman(&["validate"], &path);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("|C_1| = 5 exceeds |C| = 3"), "{err}");
    assert!(err.contains("batch_size"), "{err}");
    assert!(err.contains("seeds: duplicate"), "{err}");
    assert!(!uman(&["run"], &path).status.success());
}

#[test]
fn hash_is_stable_under_reordering_and_output_dir() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = write_config(a.path(), quick());
    // serde_json::Value keeps keys sorted, so write a reversed layout by hand
    let v = quick();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<&String> = obj.keys().collect();
    keys.reverse();
    let body: Vec<String> = keys
        .iter()
        .map(|k| format!("{:?}: {}", k, obj[*k]))
        .collect();
    let pb = b.path().join("config.json");
    fs::write(
        &pb,
        format!("{{{}, \"output_dir\": \"elsewhere\"}}", body.join(", ")),
    )
    .unwrap();
    let hash = |p: &Path| {
        let out = uman(&["validate"], p);
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(hash(&pa), hash(&pb));
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = quick();
    v["methods"] = json!(["source_only"]);
    v["hyperparams"]["max_steps"] = json!(1);
    let path = write_config(dir.path(), v);
    let out = Command::new(env!("CARGO_BIN_EXE_uman"))
        .args(["run"])
        .arg(&path)
        .env("UMAN_SEED_OFFSET", "10")
        .output()
        .unwrap();
    assert!(out.status.success());
    let seeds: Vec<String> = rows(&dir.path().join("out/summary.csv"))
        .iter()
        .map(|r| r[2].to_string())
        .collect();
    assert_eq!(seeds, ["13", "14"]);
}
