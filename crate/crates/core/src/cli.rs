//! Command-line driver: `train`, `eval`, `gradcheck`, `embed`, `sweep`, `synth`.
//!
//! Exit codes: 0 ok, 2 usage, 3 data, 4 numeric. Every failure prints one
//! line to stderr. Output files are written only after all computation has
//! succeeded, and existing files are never replaced without `--force`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::Fault;
use crate::config::TrainConfig;
use crate::dataset::{
    dataset_hash, load_dataset, save_dataset, EDGES_FILE, FEATURES_FILE, NODES_FILE,
};
use crate::error::{Error, GraphError};
use crate::gradcheck::{check_gradients, tiny_problem, GradcheckOptions, GradcheckReport};
use crate::graph::{split, HeteroGraph};
use crate::io::write_atomic;
use crate::model::Model;
use crate::pca::pca;
use crate::synth::{synth_graph, SynthSpec};
use crate::train::{evaluate, train, EpochRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "RELCONV_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const EVAL_FILE: &str = "eval.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const PCA_FILE: &str = "pca2d.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "relconv",
    version,
    about = "Relation pooling and convolution on heterogeneous graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint, epoch metrics and manifest.
    Train(Shared),
    /// Score a checkpoint on the train/val/test split of a dataset.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare autodiff gradients with finite differences on a tiny model.
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        /// Corrupt the convolution kernel gradient (test hook).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Export last-layer node embeddings, optionally with a 2-D PCA.
    Embed {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pca: bool,
    },
    /// Train once per value of one hyperparameter, e.g. `hidden=64,128,256`.
    Sweep {
        #[command(flatten)]
        shared: Shared,
        sweep: String,
    },
    /// Generate a synthetic author/paper dataset directory.
    Synth(Shared),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Shared {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Flat `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    /// Override one setting, `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Graph(_) | Error::Incompatible(_) | Error::Checkpoint(_) | Error::Io { .. } => {
                EXIT_DATA
            }
            Error::Tensor(_)
            | Error::NonFinite { .. }
            | Error::NonFiniteLoss(_)
            | Error::ZeroFan(..)
            | Error::Metric(_) => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;
type SweepSlot = Option<crate::error::Result<(f64, f64)>>;

#[derive(Debug, Serialize)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run, written last.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<TrainConfig>,
    pub extra: BTreeMap<String, String>,
    pub dataset: Option<DatasetRef>,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Parses `args` (program name first), runs the command and returns its exit
/// code. Output tables go to `--out`; short summaries go to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message.lines().next().unwrap_or_default());
            f.code
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(shared) => cmd_train(&shared),
        Command::Eval { shared, checkpoint } => cmd_eval(&shared, &checkpoint),
        Command::Gradcheck {
            shared,
            inject_fault,
        } => cmd_gradcheck(&shared, inject_fault),
        Command::Embed {
            shared,
            checkpoint,
            pca,
        } => cmd_embed(&shared, &checkpoint, pca),
        Command::Sweep { shared, sweep } => cmd_sweep(&shared, &sweep),
        Command::Synth(shared) => cmd_synth(&shared),
    }
}

/// Defaults, then `--config`, then `--seed`, then each `--set`.
pub fn resolve_config(shared: &Shared) -> CliResult<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &shared.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    for kv in &shared.set {
        let (k, v) = split_assignment(kv)?;
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn split_assignment(kv: &str) -> CliResult<(&str, &str)> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::usage(format!("expected key=value, got {kv:?}")))
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Failure::usage(format!("--{flag} is required")))
}

fn load_data(shared: &Shared) -> CliResult<(HeteroGraph, DatasetRef)> {
    let dir = require(&shared.data, "data")?;
    if !dir.is_dir() {
        return Err(Failure::data(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let graph = load_dataset(dir)?;
    let reference = DatasetRef {
        path: dir.display().to_string(),
        sha256: dataset_hash(dir)?,
    };
    Ok((graph, reference))
}

/// Fails with a usage error if any of `names` already exists under `out`.
fn check_collisions(out: &Path, names: &[&str], force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    for name in names {
        let path = out.join(name);
        if path.exists() {
            return Err(Failure::usage(format!(
                "{} exists; pass --force to overwrite",
                path.display()
            )));
        }
    }
    Ok(())
}

fn write_file(out: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    write_atomic(&out.join(name), bytes)?;
    Ok(())
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Failure::data(e.to_string()))?;
    write_file(out, MANIFEST_FILE, text.as_bytes())
}

fn manifest(
    command: &str,
    config: Option<&TrainConfig>,
    dataset: Option<DatasetRef>,
    seed: u64,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        config: config.cloned(),
        extra: BTreeMap::new(),
        dataset,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: Vec::new(),
        metrics: BTreeMap::new(),
    }
}

/// Tab-separated table with a `#`-commented header line.
pub fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = format!("# {}\n", header.join("\t"));
    for row in rows {
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    s
}

pub fn metrics_tsv(records: &[EpochRecord]) -> String {
    tsv(
        &[
            "epoch",
            "train_loss",
            "val_loss",
            "val_f1_micro",
            "val_f1_macro",
        ],
        records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_f1_micro.to_string(),
                r.val_f1_macro.to_string(),
            ]
        }),
    )
}

fn cmd_train(shared: &Shared) -> CliResult<()> {
    let config = resolve_config(shared)?;
    let out = require(&shared.out, "out")?;
    let (graph, dataset) = load_data(shared)?;
    let files = [CHECKPOINT_FILE, METRICS_FILE, MANIFEST_FILE];
    check_collisions(out, &files, shared.force)?;

    let outcome = train(&graph, &config)?;
    let test = evaluate(&outcome.model, &graph, &outcome.split.test)?;
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    outcome.model.save(&out.join(CHECKPOINT_FILE))?;
    write_file(out, METRICS_FILE, metrics_tsv(&outcome.records).as_bytes())?;

    let mut m = manifest("train", Some(&config), Some(dataset), config.seed);
    m.outputs = files.iter().map(|s| s.to_string()).collect();
    m.metrics
        .insert("best_epoch".into(), outcome.best_epoch as f64);
    m.metrics
        .insert("epochs".into(), outcome.records.len() as f64);
    m.metrics
        .insert("val_f1_micro".into(), outcome.best_val.f1_micro);
    m.metrics
        .insert("val_f1_macro".into(), outcome.best_val.f1_macro);
    m.metrics.insert("test_f1_micro".into(), test.f1_micro);
    m.metrics.insert("test_f1_macro".into(), test.f1_macro);
    write_manifest(out, &m)?;
    println!(
        "best epoch {} of {}: val f1 {:.4}/{:.4}, test f1 {:.4}/{:.4}",
        outcome.best_epoch,
        outcome.records.len(),
        outcome.best_val.f1_micro,
        outcome.best_val.f1_macro,
        test.f1_micro,
        test.f1_macro
    );
    Ok(())
}

fn cmd_eval(shared: &Shared, checkpoint: &Path) -> CliResult<()> {
    let (graph, dataset) = load_data(shared)?;
    let model = Model::load(checkpoint)?;
    model.check_compatible(&graph)?;
    // The split comes from the checkpoint's own config unless overridden.
    let mut config = model.config.clone();
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    for kv in &shared.set {
        let (k, v) = split_assignment(kv)?;
        config.set(k, v)?;
    }
    config.validate()?;
    let parts = split(&graph, config.ratios(), config.seed)?;
    let mut rows = Vec::new();
    let mut m = manifest("eval", Some(&config), Some(dataset), config.seed);
    for (name, nodes) in [
        ("train", &parts.train),
        ("val", &parts.val),
        ("test", &parts.test),
    ] {
        let e = evaluate(&model, &graph, nodes)?;
        m.metrics.insert(format!("{name}_f1_micro"), e.f1_micro);
        m.metrics.insert(format!("{name}_f1_macro"), e.f1_macro);
        rows.push(vec![
            name.to_string(),
            e.loss.to_string(),
            e.f1_micro.to_string(),
            e.f1_macro.to_string(),
        ]);
    }
    let table = tsv(&["split", "loss", "f1_micro", "f1_macro"], rows);
    print!("{table}");
    if let Some(out) = &shared.out {
        check_collisions(out, &[EVAL_FILE, MANIFEST_FILE], shared.force)?;
        write_file(out, EVAL_FILE, table.as_bytes())?;
        m.extra
            .insert("checkpoint".into(), checkpoint.display().to_string());
        m.outputs = vec![EVAL_FILE.into(), MANIFEST_FILE.into()];
        write_manifest(out, &m)?;
    }
    Ok(())
}

/// Seeds tried after `--seed` when its top-k selection is not stable.
pub const GRADCHECK_SEED_ATTEMPTS: u64 = 100;

/// Runs the check from `seed` onward and returns the first stable seed with
/// its report.
pub fn gradcheck_from(
    seed: u64,
    options: &GradcheckOptions,
) -> crate::error::Result<Option<(u64, GradcheckReport)>> {
    for s in seed..seed.saturating_add(GRADCHECK_SEED_ATTEMPTS) {
        let (graph, model) = tiny_problem(s)?;
        let report = check_gradients(&model, &graph, options)?;
        if report.is_stable() {
            return Ok(Some((s, report)));
        }
        log::info!("seed {s}: top-k selection changes under perturbation, skipping");
    }
    Ok(None)
}

pub fn gradcheck_table(seed: u64, report: &GradcheckReport) -> String {
    let mut s = format!("# seed {seed}, tolerance {:e}\n", report.tolerance);
    s.push_str(&tsv(
        &["group", "max_rel_error", "entries", "status"],
        report.groups.iter().map(|g| {
            let ok = g.max_rel_error < report.tolerance;
            vec![
                g.group.name().into(),
                format!("{:e}", g.max_rel_error),
                g.entries.to_string(),
                if ok { "pass" } else { "FAIL" }.into(),
            ]
        }),
    ));
    s
}

fn cmd_gradcheck(shared: &Shared, inject_fault: bool) -> CliResult<()> {
    let options = GradcheckOptions {
        fault: inject_fault.then_some(Fault::FlipConvKernelGrad),
        ..GradcheckOptions::default()
    };
    let seed = shared.seed.unwrap_or(0);
    let Some((used, report)) = gradcheck_from(seed, &options)? else {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: format!(
                "no top-k-stable seed in {seed}..{}",
                seed + GRADCHECK_SEED_ATTEMPTS
            ),
        });
    };
    let table = gradcheck_table(used, &report);
    print!("{table}");
    if let Some(out) = &shared.out {
        check_collisions(out, &["gradcheck.tsv", MANIFEST_FILE], shared.force)?;
        write_file(out, "gradcheck.tsv", table.as_bytes())?;
        let mut m = manifest("gradcheck", None, None, used);
        m.outputs = vec!["gradcheck.tsv".into(), MANIFEST_FILE.into()];
        for g in &report.groups {
            m.metrics
                .insert(format!("{}_max_rel_error", g.group.name()), g.max_rel_error);
        }
        write_manifest(out, &m)?;
    }
    let failing: Vec<&str> = report.failing().iter().map(|g| g.group.name()).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("gradient check failed for {}", failing.join(", ")),
        })
    }
}

fn cmd_embed(shared: &Shared, checkpoint: &Path, with_pca: bool) -> CliResult<()> {
    let out = require(&shared.out, "out")?;
    let (graph, dataset) = load_data(shared)?;
    let model = Model::load(checkpoint)?;
    model.check_compatible(&graph)?;
    let mut files = vec![EMBEDDINGS_FILE, MANIFEST_FILE];
    if with_pca {
        files.push(PCA_FILE);
    }
    check_collisions(out, &files, shared.force)?;

    let emb = model.embeddings(&graph)?;
    let mut header = vec!["node_id".to_string()];
    header.extend((0..emb.cols()).map(|j| format!("h{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let table = tsv(
        &header,
        (0..emb.rows()).map(|v| {
            std::iter::once(v.to_string())
                .chain(emb.row(v).iter().map(f64::to_string))
                .collect()
        }),
    );
    let mut m = manifest(
        "embed",
        Some(&model.config),
        Some(dataset),
        model.config.seed,
    );
    m.extra
        .insert("checkpoint".into(), checkpoint.display().to_string());
    let projection = if with_pca {
        if emb.cols() < 2 {
            return Err(Failure::usage("PCA needs embeddings of width at least 2"));
        }
        let p = pca(&emb, 2)?;
        m.metrics.insert("pca_variance_0".into(), p.variances[0]);
        m.metrics.insert("pca_variance_1".into(), p.variances[1]);
        Some(tsv(
            &["node_id", "label", "x", "y"],
            (0..emb.rows()).map(|v| {
                vec![
                    v.to_string(),
                    graph.label(v).map(|l| l.to_string()).unwrap_or_default(),
                    p.projected.at(&[v, 0]).to_string(),
                    p.projected.at(&[v, 1]).to_string(),
                ]
            }),
        ))
    } else {
        None
    };
    write_file(out, EMBEDDINGS_FILE, table.as_bytes())?;
    if let Some(p) = projection {
        write_file(out, PCA_FILE, p.as_bytes())?;
    }
    m.outputs = files.iter().map(|s| s.to_string()).collect();
    write_manifest(out, &m)?;
    println!("{} embeddings of width {}", emb.rows(), emb.cols());
    Ok(())
}

/// Worker count from `RELCONV_THREADS`; 1 when unset or invalid.
pub fn thread_budget() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// One row per value: `(value, test_f1_micro, test_f1_macro)`. Runs are
/// independent, so results do not depend on `threads`.
pub fn run_sweep(
    graph: &HeteroGraph,
    base: &TrainConfig,
    key: &str,
    values: &[String],
    threads: usize,
) -> crate::error::Result<Vec<(String, f64, f64)>> {
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = base.clone();
        c.set(key, v)?;
        c.validate()?;
        configs.push(c);
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<SweepSlot>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(config) = configs.get(i) else { break };
                let r = train(graph, config).and_then(|o| {
                    let t = evaluate(&o.model, graph, &o.split.test)?;
                    Ok((t.f1_micro, t.f1_macro))
                });
                results.lock().expect("sweep worker panicked")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("sweep worker panicked");
    values
        .iter()
        .zip(results)
        .map(|(v, r)| {
            let (micro, macro_) = r.expect("every sweep point ran")?;
            Ok((v.clone(), micro, macro_))
        })
        .collect()
}

fn cmd_sweep(shared: &Shared, sweep: &str) -> CliResult<()> {
    let (key, list) = split_assignment(sweep)?;
    if key == "seed" || TrainConfig::default().get(key).is_none() {
        return Err(Failure::usage(format!(
            "cannot sweep {key:?}: not a training parameter"
        )));
    }
    let values: Vec<String> = list
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Failure::usage("sweep needs at least one value"));
    }
    let base = resolve_config(shared)?;
    let out = require(&shared.out, "out")?;
    let (graph, dataset) = load_data(shared)?;
    check_collisions(out, &[SWEEP_FILE, MANIFEST_FILE], shared.force)?;

    let rows = run_sweep(&graph, &base, key, &values, thread_budget())?;
    let table = tsv(
        &[key, "test_f1_micro", "test_f1_macro"],
        rows.iter()
            .map(|(v, a, b)| vec![v.clone(), a.to_string(), b.to_string()]),
    );
    write_file(out, SWEEP_FILE, table.as_bytes())?;
    let mut m = manifest("sweep", Some(&base), Some(dataset), base.seed);
    m.extra.insert("parameter".into(), key.into());
    m.extra.insert("values".into(), values.join(","));
    for (v, micro, macro_) in &rows {
        m.metrics.insert(format!("{key}={v}/test_f1_micro"), *micro);
        m.metrics
            .insert(format!("{key}={v}/test_f1_macro"), *macro_);
    }
    m.outputs = vec![SWEEP_FILE.into(), MANIFEST_FILE.into()];
    write_manifest(out, &m)?;
    print!("{table}");
    Ok(())
}

/// Applies a `--set` assignment to a generator spec.
pub fn set_synth(spec: &mut SynthSpec, key: &str, value: &str) -> CliResult<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
        value
            .parse()
            .map_err(|_| Failure::usage(format!("invalid value {value:?} for {key}")))
    }
    match key {
        "authors" => spec.authors = parse(key, value)?,
        "papers" => spec.papers = parse(key, value)?,
        "classes" => spec.classes = parse(key, value)?,
        "feature_dim" => spec.feature_dim = parse(key, value)?,
        "seniority" => spec.seniority = parse(key, value)?,
        "magnitude_lo" => spec.magnitude.0 = parse(key, value)?,
        "magnitude_hi" => spec.magnitude.1 = parse(key, value)?,
        "noise" => spec.noise = parse(key, value)?,
        "self_loops" => spec.self_loops = parse(key, value)?,
        _ => return Err(Failure::usage(format!("unknown generator setting {key:?}"))),
    }
    Ok(())
}

fn cmd_synth(shared: &Shared) -> CliResult<()> {
    let out = require(&shared.out, "out")?;
    let mut spec = SynthSpec::default();
    for kv in &shared.set {
        let (k, v) = split_assignment(kv)?;
        set_synth(&mut spec, k, v)?;
    }
    let seed = shared.seed.unwrap_or(0);
    let graph = synth_graph(&spec, seed).map_err(|e| Failure::usage(e.to_string()))?;
    let files = [NODES_FILE, EDGES_FILE, FEATURES_FILE, MANIFEST_FILE];
    check_collisions(out, &files, shared.force)?;
    save_dataset(&graph, out)?;
    let mut m = manifest(
        "synth",
        None,
        Some(DatasetRef {
            path: out.display().to_string(),
            sha256: dataset_hash(out)?,
        }),
        seed,
    );
    let spec_text = serde_json::to_string(&spec).map_err(|e| Failure::data(e.to_string()))?;
    m.extra.insert("generator".into(), spec_text);
    m.outputs = files.iter().map(|s| s.to_string()).collect();
    write_manifest(out, &m)?;
    println!(
        "{} nodes, {} edges, {} relations",
        graph.node_count(),
        graph.edge_count(),
        graph.relation_count()
    );
    Ok(())
}
