//! `srl4h` command-line entry points: train, eval, sweep and export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::trainer::{
    apply_override, evaluate, latest_checkpoint_path, load_agent, read_metrics, ExperimentConfig, Trainer,
    RESOLVED_CONFIG,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "SRL4H_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "srl4h", version, about = "PPO with auxiliary representation-learning objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run (resumes if the output directory holds a checkpoint).
    Train(TrainArgs),
    /// Evaluate a checkpoint for a fixed number of episodes.
    Eval(EvalArgs),
    /// Run a grid of training configurations sequentially.
    Sweep(SweepArgs),
    /// Export metrics of one or more runs to long-format CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted override, e.g. `srl.method=pvp`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the resolved config of the checkpoint's run directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample actions instead of acting with the policy mean.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Summary path; defaults to `<checkpoint>.eval.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON object of axis -> list of values, inline or as a file path.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directories, each holding metrics.jsonl.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Metric names; comma-separated and/or repeated.
    #[arg(long = "metrics", value_delimiter = ',', required = true)]
    pub metrics: Vec<String>,
    /// Long CSV path; the aggregate goes next to it as `<stem>-aggregate.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a).map(|_| EXIT_OK),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Export(a) => cmd_export(&a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Config for one run: file, then `--set` overrides, then seed and output
/// directory. Resolved and validated.
pub fn build_config(
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("trainer.seed={s}"));
    }
    let mut cfg = ExperimentConfig::load_with_overrides(config, &all)?;
    cfg.resolve();
    cfg.validate()?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => out_root().join(format!("{}-seed{}", cfg.srl.method.name(), cfg.trainer.seed)),
    };
    cfg.logging.out_dir = Some(dir);
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = build_config(a.config.as_deref(), &a.overrides, a.seed, a.out.as_deref())?;
    let dir = cfg.logging.out_dir.clone().expect("set by build_config");
    let mut trainer = Trainer::resume_or_new(cfg)?;
    if trainer.iteration() > 0 {
        eprintln!("resuming {} at iteration {}", dir.display(), trainer.iteration());
    }
    let records = trainer.run()?;
    if let Some(r) = records.last() {
        println!(
            "finished {} iterations in {:.1}s; last mean step reward {:.4}",
            r.iteration, r.wall_time, r.mean_step_reward
        );
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg_path = match &a.config {
        Some(p) => p.clone(),
        None => a
            .checkpoint
            .parent()
            .and_then(Path::parent)
            .map(|d| d.join(RESOLVED_CONFIG))
            .filter(|p| p.exists())
            .ok_or_else(|| Error::config("--config", "not given and no resolved config next to the checkpoint"))?,
    };
    let cfg = ExperimentConfig::load_with_overrides(Some(&cfg_path), &a.overrides)?;
    cfg.validate()?;
    let agent = load_agent(&cfg, &a.checkpoint)?;
    let summary = evaluate(&agent, &cfg.env, a.episodes, a.seed, !a.stochastic)?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    println!("{text}");
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.checkpoint.clone().into_os_string();
        p.push(".eval.json");
        PathBuf::from(p)
    });
    std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))
}

/// Sweep axes: accepted name and the config key it sets.
const SWEEP_AXES: &[(&str, &str)] = &[
    ("srl.method", "srl.method"),
    ("method", "srl.method"),
    ("srl.lambda", "srl.lambda"),
    ("lambda", "srl.lambda"),
    ("trainer.srl_interval", "trainer.srl_interval"),
    ("interval", "trainer.srl_interval"),
    ("trainer.data_proportion", "trainer.data_proportion"),
    ("data_proportion", "trainer.data_proportion"),
    ("srl.target", "srl.target"),
    ("target", "srl.target"),
    ("trainer.seed", "trainer.seed"),
    ("seed", "trainer.seed"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub id: String,
    /// Config key -> value for this point.
    pub settings: BTreeMap<String, Value>,
    pub status: PointStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub points: Vec<SweepPoint>,
}

impl SweepManifest {
    pub const FILE: &'static str = "sweep.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Cartesian product of a grid spec, in key order with the last key
/// varying fastest.
pub fn expand_grid(spec: &str) -> Result<Vec<SweepPoint>> {
    let text = if Path::new(spec).is_file() {
        std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?
    } else {
        spec.to_string()
    };
    let grid: serde_json::Map<String, Value> =
        serde_json::from_str(&text).map_err(|e| Error::config("--grid", format!("expected a JSON object: {e}")))?;
    let mut axes: Vec<(String, Vec<Value>)> = vec![];
    for (name, values) in grid {
        let key = SWEEP_AXES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| k.to_string())
            .ok_or_else(|| Error::config(format!("--grid.{name}"), "not a sweepable axis"))?;
        if axes.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(format!("--grid.{name}"), "axis given twice"));
        }
        let values = match values {
            Value::Array(v) if !v.is_empty() => v,
            _ => return Err(Error::config(format!("--grid.{name}"), "must be a non-empty list")),
        };
        axes.push((key, values));
    }
    if axes.is_empty() {
        return Err(Error::config("--grid", "no axes given"));
    }
    let mut points: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    Ok(points
        .into_iter()
        .map(|settings| {
            let id = axes
                .iter()
                .map(|(k, _)| {
                    let short = k.rsplit('.').next().unwrap_or(k);
                    format!("{short}-{}", value_label(&settings[k]))
                })
                .collect::<Vec<_>>()
                .join("_");
            SweepPoint {
                id,
                settings,
                status: PointStatus::Pending,
                error: None,
            }
        })
        .collect())
}

fn point_overrides(base: &[String], p: &SweepPoint) -> Vec<String> {
    let mut o = base.to_vec();
    o.extend(p.settings.iter().map(|(k, v)| format!("{k}={v}")));
    o
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let mut points = expand_grid(&a.grid)?;
    let root = a.out.clone().unwrap_or_else(|| out_root().join("sweep"));
    // Reject bad points before any training starts.
    for p in &points {
        build_config(a.config.as_deref(), &point_overrides(&a.overrides, p), None, Some(&root.join(&p.id)))
            .map_err(|e| Error::config(format!("sweep point {}", p.id), e.to_string()))?;
    }
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let manifest_path = root.join(SweepManifest::FILE);
    if manifest_path.exists() {
        let old = SweepManifest::load(&manifest_path)?;
        for p in points.iter_mut() {
            let done = old
                .points
                .iter()
                .any(|o| o.id == p.id && o.settings == p.settings && o.status == PointStatus::Completed);
            if done {
                p.status = PointStatus::Completed;
            }
        }
    }
    let mut manifest = SweepManifest { points };
    manifest.save(&manifest_path)?;
    let mut failed = 0;
    for i in 0..manifest.points.len() {
        if manifest.points[i].status == PointStatus::Completed {
            println!("[{}/{}] {} already completed", i + 1, manifest.points.len(), manifest.points[i].id);
            continue;
        }
        let p = manifest.points[i].clone();
        println!("[{}/{}] {}", i + 1, manifest.points.len(), p.id);
        let args = TrainArgs {
            config: a.config.clone(),
            seed: None,
            out: Some(root.join(&p.id)),
            overrides: point_overrides(&a.overrides, &p),
        };
        let point = &mut manifest.points[i];
        match cmd_train(&args) {
            Ok(()) => {
                point.status = PointStatus::Completed;
                point.error = None;
            }
            Err(e) => {
                eprintln!("point {} failed: {e}", p.id);
                point.status = PointStatus::Failed;
                point.error = Some(e.to_string());
                failed += 1;
            }
        }
        manifest.save(&manifest_path)?;
    }
    Ok(if failed > 0 { EXIT_RUNTIME } else { EXIT_OK })
}

/// One run's identity for export grouping.
struct RunInfo {
    id: String,
    method: String,
    seed: u64,
    /// Resolved config without seed and output directory.
    group_key: String,
}

fn run_info(dir: &Path) -> Result<RunInfo> {
    let path = dir.join(RESOLVED_CONFIG);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_value(v.clone())?;
    apply_override(&mut v, "trainer.seed=0")?;
    apply_override(&mut v, "logging.out_dir=null")?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunInfo {
        id,
        method: cfg.srl.method.name().to_string(),
        seed: cfg.trainer.seed,
        group_key: v.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Runtime(format!("{}: {e}", path.display()))
}

/// Path of the aggregate CSV belonging to `long`.
pub fn aggregate_path(long: &Path) -> PathBuf {
    let stem = long.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    long.with_file_name(format!("{stem}-aggregate.csv"))
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let mut runs = vec![];
    for dir in &a.runs {
        let info = run_info(dir)?;
        let records = read_metrics(&dir.join("metrics.jsonl"))?;
        runs.push((info, records));
    }
    // Groups share every config value except the seed; label by method,
    // numbered when one method appears under several configs.
    let mut group_keys: Vec<(String, String)> = vec![];
    let mut labels = vec![];
    for (info, _) in &runs {
        let label = match group_keys.iter().find(|(k, _)| *k == info.group_key) {
            Some((_, l)) => l.clone(),
            None => {
                let n = group_keys.iter().filter(|(_, l)| l.split('#').next() == Some(&info.method)).count();
                let l = if n == 0 { info.method.clone() } else { format!("{}#{}", info.method, n + 1) };
                group_keys.push((info.group_key.clone(), l.clone()));
                l
            }
        };
        labels.push(label);
    }

    let mut long = csv::Writer::from_path(&a.out).map_err(csv_err(&a.out))?;
    long.write_record(["run_id", "group", "method", "seed", "iteration", "metric", "value"])
        .map_err(csv_err(&a.out))?;
    // (group, metric, iteration) -> values across runs
    let mut agg: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for metric in &a.metrics {
        for ((info, records), label) in runs.iter().zip(&labels) {
            let present = records.iter().any(|r| r.get(metric).is_some());
            if !present {
                eprintln!("metric `{metric}` missing from run {}; omitted", info.id);
                continue;
            }
            for r in records {
                if let Some(v) = r.get(metric) {
                    long.write_record([
                        info.id.as_str(),
                        label,
                        info.method.as_str(),
                        &info.seed.to_string(),
                        &r.iteration.to_string(),
                        metric,
                        &v.to_string(),
                    ])
                    .map_err(csv_err(&a.out))?;
                    agg.entry((label.clone(), metric.clone(), r.iteration)).or_default().push(v);
                }
            }
        }
    }
    long.flush().map_err(|e| Error::io(&a.out, e))?;

    let agg_path = aggregate_path(&a.out);
    let mut w = csv::Writer::from_path(&agg_path).map_err(csv_err(&agg_path))?;
    w.write_record(["group", "metric", "iteration", "n", "mean", "std"])
        .map_err(csv_err(&agg_path))?;
    for ((group, metric, iteration), values) in &agg {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        w.write_record([
            group.as_str(),
            metric.as_str(),
            &iteration.to_string(),
            &values.len().to_string(),
            &mean.to_string(),
            &var.sqrt().to_string(),
        ])
        .map_err(csv_err(&agg_path))?;
    }
    w.flush().map_err(|e| Error::io(&agg_path, e))
}

/// Latest checkpoint of a run directory, if training got that far.
pub fn run_checkpoint(dir: &Path) -> Option<PathBuf> {
    Some(latest_checkpoint_path(dir)).filter(|p| p.exists())
}
