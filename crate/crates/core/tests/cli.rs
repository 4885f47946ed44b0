mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use common::fixture_dir;
use serde_json::Value;

fn relconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relconv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn relconv_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relconv"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parses a TSV file with a `#` header into header names and rows, checking
/// that every row has the header's width.
fn read_tsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let mut header = lines.next().unwrap();
    while let Some(rest) = header.strip_prefix('#') {
        if rest.contains('\t') {
            header = rest;
            break;
        }
        header = lines.next().unwrap();
    }
    let header: Vec<String> = header.trim().split('\t').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split('\t').map(String::from).collect::<Vec<_>>())
        .collect();
    for row in &rows {
        assert_eq!(row.len(), header.len(), "{}: {row:?}", path.display());
    }
    (header, rows)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const QUICK: [&str; 8] = [
    "--set",
    "max_epochs=5",
    "--set",
    "depth=1",
    "--set",
    "filters=8",
    "--set",
    "hidden=16",
];

#[test]
fn train_on_fixture_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let start = Instant::now();
    let o = relconv(&["train", "--data", s(&fixture_dir()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 60);
    for name in ["model.json", "metrics.tsv", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let (header, rows) = read_tsv(&out.join("metrics.tsv"));
    assert_eq!(
        header,
        [
            "epoch",
            "train_loss",
            "val_loss",
            "val_f1_micro",
            "val_f1_macro"
        ]
    );
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), i + 1);
        for x in &row[1..] {
            assert!(x.parse::<f64>().unwrap().is_finite());
        }
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "train");
    assert_eq!(m["dataset"]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["metrics"]["test_f1_micro"].as_f64().unwrap() >= 0.9);

    // The checkpoint evaluates to the same test score.
    let e = relconv(&[
        "eval",
        "--data",
        s(&fixture_dir()),
        "--checkpoint",
        s(&out.join("model.json")),
    ]);
    assert!(e.status.success());
    let stdout = String::from_utf8(e.stdout).unwrap();
    let test_row = stdout.lines().find(|l| l.starts_with("test\t")).unwrap();
    let micro: f64 = test_row.split('\t').nth(2).unwrap().parse().unwrap();
    assert_eq!(micro, m["metrics"]["test_f1_micro"].as_f64().unwrap());
}

#[test]
fn same_seed_same_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture_dir();
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let mut args = vec!["train", "--data", s(&data), "--seed", "1", "--out", s(&out)];
        args.extend(QUICK);
        assert!(relconv(&args).status.success());
        tables.push(fs::read_to_string(out.join("metrics.tsv")).unwrap());
        assert_eq!(manifest(&out)["seed"], 1);
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "# quick\nmax_epochs = 3\ndepth=1\nfilters=4\nhidden=8\nseed=9\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = relconv(&[
        "train",
        "--data",
        s(&fixture_dir()),
        "--config",
        s(&cfg),
        "--seed",
        "2",
        "--set",
        "max_epochs=2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let m = manifest(&out);
    assert_eq!(m["config"]["seed"], 2);
    assert_eq!(m["config"]["max_epochs"], 2);
    assert_eq!(m["config"]["filters"], 4);
    assert_eq!(read_tsv(&out.join("metrics.tsv")).1.len(), 2);
}

#[test]
fn missing_dataset_is_a_data_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let o = relconv(&[
        "train",
        "--data",
        s(&tmp.path().join("absent")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture_dir();
    for args in [
        vec!["train"],
        vec!["frobnicate"],
        vec![
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--set",
            "k=0",
        ],
        vec![
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--set",
            "colour=red",
        ],
        vec![
            "sweep",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "colour=1,2",
        ],
        vec!["synth", "--out", s(tmp.path()), "--set", "papers=0"],
    ] {
        assert_eq!(relconv(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    assert!(relconv(&["synth", "--out", s(&out), "--seed", "4"])
        .status
        .success());
    let before = fs::read_to_string(out.join("nodes.tsv")).unwrap();
    let o = relconv(&["synth", "--out", s(&out), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("nodes.tsv")).unwrap(), before);
    let o = relconv(&["synth", "--out", s(&out), "--seed", "5", "--force"]);
    assert!(o.status.success());
    assert_ne!(fs::read_to_string(out.join("nodes.tsv")).unwrap(), before);
}

#[test]
fn synth_output_loads_and_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let o = relconv(&[
        "synth",
        "--out",
        s(&out),
        "--set",
        "papers=40",
        "--set",
        "authors=20",
    ]);
    assert!(o.status.success());
    let g = relconv::dataset::load_dataset(&out).unwrap();
    assert_eq!(g.node_count(), 60);
    assert_eq!(
        manifest(&out)["dataset"]["sha256"].as_str().unwrap(),
        relconv::dataset::dataset_hash(&out).unwrap()
    );
}

#[test]
fn gradcheck_reports_each_group() {
    let o = relconv(&["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let groups: Vec<&str> = stdout
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(groups, ["v_t", "kernels", "mlp", "head"]);
    for line in stdout.lines().filter(|l| !l.starts_with('#')) {
        let err: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-5);
    }
}

#[test]
fn gradcheck_fault_names_kernels() {
    let o = relconv(&["gradcheck", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("kernels"), "{stderr}");
    assert!(!stderr.contains("mlp") && !stderr.contains("head"));
}

#[test]
fn embed_with_pca() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let data = fixture_dir();
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run)];
    args.extend(QUICK);
    assert!(relconv(&args).status.success());
    let ckpt = run.join("model.json");
    let out = tmp.path().join("emb");
    let o = relconv(&[
        "embed",
        "--data",
        s(&fixture_dir()),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
        "--pca",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_tsv(&out.join("embeddings.tsv"));
    assert_eq!(header.len(), 17);
    assert_eq!(rows.len(), 200);
    let (header, rows) = read_tsv(&out.join("pca2d.tsv"));
    assert_eq!(header, ["node_id", "label", "x", "y"]);
    assert_eq!(rows.len(), 200);
    // Authors are unlabeled, papers are labeled.
    assert_eq!(rows[0][1], "");
    assert!(rows[199][1].parse::<usize>().is_ok());

    // A graph with a different relation set is rejected.
    let other = tmp.path().join("other");
    assert!(
        relconv(&["synth", "--out", s(&other), "--set", "self_loops=false"])
            .status
            .success()
    );
    let o = relconv(&[
        "embed",
        "--data",
        s(&other),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_rows_and_thread_independence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture_dir();
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(threads);
        let mut args = vec![
            "sweep",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "hidden=64,128,256,512",
        ];
        args.extend(&QUICK[..6]);
        let o = relconv_env(&args, "RELCONV_THREADS", threads);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let (header, rows) = read_tsv(&out.join("sweep.tsv"));
        assert_eq!(header, ["hidden", "test_f1_micro", "test_f1_macro"]);
        let values: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(values, ["64", "128", "256", "512"]);
        let m = manifest(&out);
        assert_eq!(
            m["dataset"]["sha256"].as_str().unwrap(),
            relconv::dataset::dataset_hash(&fixture_dir()).unwrap()
        );
        tables.push(fs::read_to_string(out.join("sweep.tsv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}
