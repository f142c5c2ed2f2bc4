//! `posevolume` command line: generate, evaluate, report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use posevolume_core::metrics::ModelPoints;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_config, EvaluateConfig, GenerateConfig};
use crate::error::{io_err, Error, Result};
use crate::eval::{evaluate_scene, read_csv, summarize, write_csv, Method, ResultRow, SceneRecord};
use crate::experiments::sweep_config;
use crate::io::{list_manifests, read_json, read_scene_features, write_json, write_scene_features, SceneManifest};
use crate::synth::Benchmark;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "POSEVOLUME_THREADS";

/// Two-view geometric-volume pose estimation on synthetic scenes.
#[derive(Debug, Parser)]
#[command(name = "posevolume", version, about)]
pub struct Cli {
    /// subcommand
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample scenes and write manifests and feature dumps.
    Generate(GenerateArgs),
    /// Run one method over a scene directory.
    Evaluate(EvaluateArgs),
    /// Summarize every results CSV in a directory.
    Report(ReportArgs),
}

/// `generate` options.
#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON generate config
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// existing output directory
    #[arg(long)]
    pub out: PathBuf,
    /// scene count, overrides the config
    #[arg(long)]
    pub scenes: Option<u64>,
    /// RNG seed, overrides the config
    #[arg(long)]
    pub seed: Option<u64>,
    /// cycle scenes through occlusion levels 0.1, 0.3, 0.5, 0.7, 0.9
    #[arg(long)]
    pub occlusion_sweep: bool,
    /// skip feature dumps; evaluate regenerates features from the seed
    #[arg(long)]
    pub no_features: bool,
}

/// `evaluate` options.
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// directory written by `generate`
    pub scene_dir: PathBuf,
    /// pose estimation method
    #[arg(long, value_enum)]
    pub method: Method,
    /// JSON pipeline config
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// output directory, defaults to the scene directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// evaluate only the first N scenes
    #[arg(long)]
    pub scenes: Option<u64>,
}

/// `report` options.
#[derive(Debug, Args)]
pub struct ReportArgs {
    /// directory holding `results_<method>.csv` files
    pub results_dir: PathBuf,
    /// where to write `occlusion_curve.csv`, defaults to the results directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run a parsed command line, writing its report lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let pool = worker_pool()?;
    let report = pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
    })?;
    out.write_all(report.as_bytes()).map_err(io_err("<stdout>"))
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

fn require_dir(path: &Path) -> Result<()> {
    match fs::metadata(path) {
        Ok(m) if m.is_dir() => Ok(()),
        Ok(_) => Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        }),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Write scene manifests (and feature dumps) into an existing directory.
pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let mut cfg = match &args.config {
        Some(p) => load_config::<GenerateConfig>(p)?,
        None => GenerateConfig::default(),
    };
    if let Some(n) = args.scenes {
        cfg.scenes = n;
    }
    if let Some(s) = args.seed {
        cfg.synth.seed = s;
    }
    cfg.occlusion_sweep |= args.occlusion_sweep;
    cfg.write_features &= !args.no_features;
    if cfg.scenes == 0 {
        return Err(Error::InvalidConfig("scene count must be at least 1".into()));
    }
    require_dir(&args.out)?;
    let bench = Benchmark::new(cfg.synth.clone())?;

    let fractions: Vec<f64> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let scene_cfg = if cfg.occlusion_sweep {
                sweep_config(&cfg.synth, i)
            } else {
                cfg.synth.clone()
            };
            let scene = bench.scene_with(&scene_cfg, i)?;
            let files = if cfg.write_features {
                Some(write_scene_features(&args.out, &scene.id(), &bench.features(&scene)?)?)
            } else {
                None
            };
            let manifest = SceneManifest::new(&bench, &scene, files);
            write_json(&args.out.join(format!("{}.json", scene.id())), &manifest)?;
            Ok(scene.invisible_fraction)
        })
        .collect::<Result<_>>()?;
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Ok(format!(
            "generated {} scenes in {} (seed {}, model {}, mean invisible fraction {:.3}, features {})\n",
            cfg.scenes,
            args.out.display(),
            cfg.synth.seed,
            cfg.synth.model.name(),
            mean,
            if cfg.write_features { "written" } else { "on demand" },
        ))
}

/// Results file name of a method.
pub fn results_file(method: Method) -> String {
    format!("results_{method}.csv")
}

/// Summary file name of a method.
pub fn summary_file(method: Method) -> String {
    format!("summary_{method}.json")
}

/// Per-scene record file name of a method.
pub fn records_file(method: Method) -> String {
    format!("records_{method}.jsonl")
}

/// Run a method over a scene directory; writes CSV, summary and records.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let pipeline = match &args.config {
        Some(p) => load_config::<EvaluateConfig>(p)?,
        None => EvaluateConfig::default(),
    }
    .to_pipeline()?;
    require_dir(&args.scene_dir)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.scene_dir.clone());
    require_dir(&out_dir)?;

    let mut paths = list_manifests(&args.scene_dir)?;
    if let Some(n) = args.scenes {
        paths.truncate(n as usize);
    }
    if paths.is_empty() {
        return Err(Error::SchemaMismatch {
            path: args.scene_dir.clone(),
            message: "no scene manifests found".into(),
        });
    }
    let manifests: Vec<SceneManifest> = paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;

    let mut models: BTreeMap<String, ModelPoints> = BTreeMap::new();
    for m in &manifests {
        let key = m.config.model.name();
        if let std::collections::btree_map::Entry::Vacant(slot) = models.entry(key) {
            slot.insert(m.config.model.load()?);
        }
    }

    let records: Vec<SceneRecord> = manifests
        .par_iter()
        .zip(&paths)
        .map(|(m, path)| {
            let scene = m.to_scene(path)?;
            let bench = Benchmark {
                config: m.config.clone(),
                model: models[&m.config.model.name()].clone(),
                keypoints: m.keypoints(),
            };
            let features = match &m.feature_files {
                Some(files) => read_scene_features(&args.scene_dir, files)?,
                None => bench.features(&scene)?,
            };
            Ok(evaluate_scene(&bench, &scene, &features, args.method, &pipeline))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ResultRow> = records.iter().map(SceneRecord::row).collect();
    let csv_path = out_dir.join(results_file(args.method));
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_csv(std::io::BufWriter::new(file), &rows).map_err(io_err(&csv_path))?;

    let summary = summarize(args.method, &rows);
    write_json(&out_dir.join(summary_file(args.method)), &summary)?;

    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).expect("serializable"));
        jsonl.push('\n');
    }
    let rec_path = out_dir.join(records_file(args.method));
    fs::write(&rec_path, jsonl).map_err(io_err(&rec_path))?;

    Ok(format!(
            "{}: {} scenes, success rate {:.3}, median ADD {:.4} m, {} failures -> {}\n",
            args.method,
            summary.scenes,
            summary.success_rate,
            summary.median_add_m,
            summary.failures,
            csv_path.display()
        ))
}

#[derive(Serialize)]
struct CurveRow {
    method: Method,
    bin_lower: f64,
    bin_upper: f64,
    total: usize,
    successes: usize,
    accuracy: Option<f64>,
}

/// Summarize all results CSVs in a directory and write plot-ready curve data.
pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    require_dir(&args.results_dir)?;
    let mut found = false;
    let mut report = String::new();
    let mut curve = Vec::new();
    for method in Method::ALL {
        let path = args.results_dir.join(results_file(method));
        if !path.exists() {
            continue;
        }
        found = true;
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let rows = read_csv(file).map_err(|message| Error::SchemaMismatch {
            path: path.clone(),
            message,
        })?;
        let s = summarize(method, &rows);
        report.push_str(&format!(
                "{:<12} scenes {:>5}  success {:.3}  median ADD {:.4} m  median ADD-S {:.4} m  occlusion slope {}\n",
                method.name(),
                s.scenes,
                s.success_rate,
                s.median_add_m,
                s.median_adds_m,
                s.occlusion_slope.map_or("n/a".to_string(), |x| format!("{x:.3}")),
            ));
        curve.extend(s.occlusion_bins.iter().map(|b| CurveRow {
            method,
            bin_lower: b.lower,
            bin_upper: b.upper,
            total: b.total,
            successes: b.successes,
            accuracy: b.accuracy,
        }));
    }
    if !found {
        return Err(Error::SchemaMismatch {
            path: args.results_dir.clone(),
            message: "no results_<method>.csv files found".into(),
        });
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.results_dir.clone());
    require_dir(&out_dir)?;
    let path = out_dir.join("occlusion_curve.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: std::io::Error::other(e),
    })?;
    for row in &curve {
        w.serialize(row).map_err(|e| Error::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(report)
}
