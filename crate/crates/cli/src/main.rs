//! `flowtrack`: simulate recordings, track them, evaluate the tracks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 malformed input data,
//! 4 predictions and ground truth disagree on the video.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{info, Level};

use flowtrack::engine::{run, EngineConfig};
use flowtrack::metrics::{evaluate, EvalOptions, Protocol};
use flowtrack::perception::{FileProvider, Recorder};
use flowtrack::records::{write_records, TrackTable};
use flowtrack::simulator::{generate, occlusion_trial, random_scene, OracleProvider, SceneConfig, SceneRecipe};

use config::{apply_overrides, has_key, prepare_output, read_json, write_json};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug)]
pub enum Fail {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Mismatch(anyhow::Error),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Config(_) => 2,
            Fail::Data(_) => 3,
            Fail::Mismatch(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Fail::Config(e) | Fail::Data(e) | Fail::Mismatch(e) => e,
        }
    }

    /// Classifies a library error that happened while processing inputs.
    fn from_core(e: flowtrack::Error, context: String) -> Fail {
        let wrapped = anyhow::Error::new(e).context(context);
        let core = wrapped.downcast_ref::<flowtrack::Error>().expect("just wrapped");
        match core {
            flowtrack::Error::ProtocolMismatch(_) => Fail::Mismatch(wrapped),
            flowtrack::Error::Config(_) => Fail::Config(wrapped),
            _ => Fail::Data(wrapped),
        }
    }
}

#[derive(Parser)]
#[command(name = "flowtrack", version, about = "Open-vocabulary video tracking on recorded perception outputs")]
struct Cli {
    /// Verbosity of the JSON log written to standard error.
    #[arg(long, global = true, default_value = "info")]
    log_level: Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene and write it as a recording plus ground truth.
    Simulate(SimulateArgs),
    /// Track every object of one or more recordings.
    Track(TrackArgs),
    /// Score predicted tracks against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeName {
    Closure,
    FastMotion,
    Occlusion,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene config JSON, or a resolved_config.json of an earlier run.
    #[arg(long, required_unless_present = "recipe", conflicts_with = "recipe")]
    config: Option<PathBuf>,
    /// Draw the scene from a built-in recipe instead.
    #[arg(long, value_enum)]
    recipe: Option<RecipeName>,
    /// Scene seed (also picks the recipe draw).
    #[arg(long)]
    seed: Option<u64>,
    /// Engine config whose segmentation queries are recorded into the dump.
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Scene override KEY=VALUE; `engine.` keys go to the engine config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Recording manifest; repeat for several videos.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Engine config JSON, or a resolved_config.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only track this category (repeatable); lowers its threshold.
    #[arg(long = "prompt")]
    prompts: Vec<String>,
    #[arg(long)]
    no_motion_propagation: bool,
    #[arg(long)]
    no_refinement: bool,
    #[arg(long)]
    no_cycle_consistency: bool,
    #[arg(long)]
    no_box_adaptation: bool,
    /// Engine override KEY=VALUE, e.g. `lambda_flow=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Videos processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted tracks (NDJSON).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth tracks (NDJSON).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Evaluation options JSON, or a resolved_config.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = |s: &str| s.parse::<Protocol>().map_err(|e| e.to_string()))]
    protocol: Option<Protocol>,
    /// Only same-label tracks may match.
    #[arg(long)]
    class_aware: bool,
    /// Number of frames of the video.
    #[arg(long)]
    frames: Option<usize>,
    /// JSON object of named label lists, each reported as an extra HOTA.
    #[arg(long)]
    subsets: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    scene: SceneConfig,
    engine: EngineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackConfig {
    manifests: Vec<PathBuf>,
    engine: EngineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    pred: PathBuf,
    gt: PathBuf,
    options: EvalOptions,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .flatten_event(true)
        .with_writer(std::io::stderr)
        .with_max_level(cli.log_level)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn print_line(value: serde_json::Value) {
    println!("{value}");
}

fn simulate(a: SimulateArgs) -> Result<(), Fail> {
    let mut cfg = match (&a.config, a.recipe) {
        (Some(path), _) if has_key(path, "scene")? => read_json::<SimulateConfig>(path)?,
        (Some(path), _) => SimulateConfig {
            scene: read_json(path)?,
            engine: EngineConfig::default(),
        },
        (None, Some(r)) => {
            let seed = a.seed.unwrap_or(0);
            let scene = match r {
                RecipeName::Closure => random_scene(&SceneRecipe::closure(), seed),
                RecipeName::FastMotion => random_scene(&SceneRecipe::fast_motion(), seed),
                RecipeName::Occlusion => occlusion_trial(seed, 0.05),
            };
            SimulateConfig {
                scene,
                engine: EngineConfig::default(),
            }
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(path) = &a.engine {
        cfg.engine = read_json(path)?;
    }
    if let Some(seed) = a.seed {
        cfg.scene.seed = seed;
    }
    let sets: Vec<String> = a
        .set
        .iter()
        .map(|s| if s.starts_with("engine.") { s.clone() } else { format!("scene.{s}") })
        .collect();
    let cfg = apply_overrides(&cfg, &sets)?;
    cfg.engine
        .validate()
        .map_err(|e| Fail::from_core(e, "engine config".into()))?;
    let truth = generate(&cfg.scene).map_err(|e| Fail::from_core(e, "scene config".into()))?;
    prepare_output(&a.output)?;

    info!(objects = cfg.scene.objects.len(), frames = cfg.scene.frames, seed = cfg.scene.seed, "simulating");
    let oracle = OracleProvider::new(truth);
    let recorder = Recorder::new(&oracle);
    run(&recorder, &cfg.engine).map_err(|e| Fail::from_core(e, "recording run".into()))?;
    let recorded = recorder
        .finish()
        .map_err(|e| Fail::from_core(e, "recording run".into()))?;
    oracle
        .dump_with(&a.output, recorded)
        .map_err(|e| Fail::Data(anyhow!(e).context("writing the recording")))?;
    let resolved = SimulateConfig {
        scene: cfg.scene.clone(),
        engine: cfg.engine.resolved(),
    };
    write_json(&a.output.join(RESOLVED_CONFIG), &resolved)?;

    let mut bytes = 0;
    for entry in fs::read_dir(&a.output).map_err(|e| Fail::Data(anyhow!(e)))? {
        let meta = entry.and_then(|e| e.metadata()).map_err(|e| Fail::Data(anyhow!(e)))?;
        if meta.is_file() {
            bytes += meta.len();
        }
    }
    print_line(json!({
        "objects": cfg.scene.objects.len(),
        "frames": cfg.scene.frames,
        "bytes": bytes,
    }));
    Ok(())
}

fn track(a: TrackArgs) -> Result<(), Fail> {
    let mut cfg = match &a.config {
        Some(path) if has_key(path, "engine")? => read_json::<TrackConfig>(path)?,
        Some(path) => TrackConfig {
            manifests: Vec::new(),
            engine: read_json(path)?,
        },
        None => TrackConfig {
            manifests: Vec::new(),
            engine: EngineConfig::default(),
        },
    };
    if !a.manifests.is_empty() {
        cfg.manifests = a.manifests.clone();
    }
    if cfg.manifests.is_empty() {
        return Err(Fail::Config(anyhow!("no --manifest given")));
    }
    let mut engine = apply_overrides(&cfg.engine, &a.set)?;
    engine.prompts.extend(a.prompts.iter().cloned());
    engine.enable_motion_propagation &= !a.no_motion_propagation;
    engine.enable_refinement &= !a.no_refinement;
    engine.enable_cycle_consistency &= !a.no_cycle_consistency;
    engine.enable_box_adaptation &= !a.no_box_adaptation;
    engine
        .validate()
        .map_err(|e| Fail::from_core(e, "engine config".into()))?;
    for m in &cfg.manifests {
        if !m.is_file() {
            return Err(Fail::Config(anyhow!("manifest {} does not exist", m.display())));
        }
    }
    if a.jobs == 0 {
        return Err(Fail::Config(anyhow!("--jobs must be at least 1")));
    }
    prepare_output(&a.output)?;
    let cfg = TrackConfig {
        manifests: cfg.manifests,
        engine: engine.resolved(),
    };

    let single = cfg.manifests.len() == 1;
    let targets: Vec<(PathBuf, PathBuf)> = cfg
        .manifests
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let out = if single {
                a.output.clone()
            } else {
                a.output.join(format!("{i:03}"))
            };
            (m.clone(), out)
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Fail::Config(anyhow!(e)))?;
    let results: Vec<Result<serde_json::Value, Fail>> = pool.install(|| {
        targets
            .par_iter()
            .map(|(manifest, out)| track_one(manifest, out, &cfg.engine))
            .collect()
    });
    write_json(&a.output.join(RESOLVED_CONFIG), &cfg)?;
    for r in results {
        print_line(r?);
    }
    Ok(())
}

fn track_one(manifest: &Path, out: &Path, engine: &EngineConfig) -> Result<serde_json::Value, Fail> {
    let ctx = || format!("{}", manifest.display());
    let provider = FileProvider::load(manifest).map_err(|e| Fail::Data(anyhow!(e).context(ctx())))?;
    info!(manifest = %manifest.display(), "tracking");
    let ts = run(&provider, engine).map_err(|e| match e {
        flowtrack::Error::Config(_) => Fail::from_core(e, ctx()),
        e => Fail::Data(anyhow!(e).context(ctx())),
    })?;
    fs::create_dir_all(out).map_err(|e| Fail::Config(anyhow!("{}: {e}", out.display())))?;
    let records = ts.records();
    write_records(&out.join("tracks.ndjson"), &records)
        .map_err(|e| Fail::Data(anyhow!(e).context("writing tracks")))?;
    use flowtrack::perception::Perception;
    write_json(
        &out.join("summary.json"),
        &ts.summary(provider.frame_count(), provider.dims()),
    )?;
    Ok(json!({
        "manifest": manifest,
        "output": out,
        "tracks": ts.visible_tracks().count(),
        "records": records.len(),
    }))
}

fn eval(a: EvalArgs) -> Result<(), Fail> {
    let (mut pred, mut gt, mut options) = (None, None, EvalOptions::default());
    if let Some(path) = &a.config {
        if has_key(path, "options")? {
            let c: EvalConfig = read_json(path)?;
            (pred, gt, options) = (Some(c.pred), Some(c.gt), c.options);
        } else {
            options = read_json(path)?;
        }
    }
    pred = a.pred.clone().or(pred);
    gt = a.gt.clone().or(gt);
    let (Some(pred), Some(gt)) = (pred, gt) else {
        return Err(Fail::Config(anyhow!("both --pred and --gt are required")));
    };
    let mut options = apply_overrides(&options, &a.set)?;
    if let Some(p) = a.protocol {
        options.protocol = p;
    }
    options.class_aware |= a.class_aware;
    if a.frames.is_some() {
        options.frames = a.frames;
    }
    if let Some(path) = &a.subsets {
        options.label_subsets = read_json(path)?;
    }
    for p in [&pred, &gt] {
        if !p.is_file() {
            return Err(Fail::Config(anyhow!("{} does not exist", p.display())));
        }
    }
    prepare_output(&a.output)?;

    let load = |p: &Path| TrackTable::read_ndjson(p).map_err(|e| Fail::Data(anyhow!(e)));
    let (pred_table, gt_table) = (load(&pred)?, load(&gt)?);
    let report = evaluate(&pred_table, &gt_table, &options)
        .map_err(|e| Fail::from_core(e, format!("{} vs {}", pred.display(), gt.display())))?;
    info!(gt_tracks = report.gt_tracks, pred_tracks = report.pred_tracks, "evaluated");

    write_json(&a.output.join("report.json"), &report)?;
    let columns = report.columns();
    let csv_err = |e: csv::Error| Fail::Data(anyhow!("writing report.csv: {e}"));
    let mut w = csv::Writer::from_path(a.output.join("report.csv")).map_err(csv_err)?;
    w.write_record(columns.iter().map(|(k, _)| k)).map_err(csv_err)?;
    w.write_record(columns.iter().map(|(_, v)| v)).map_err(csv_err)?;
    w.flush().map_err(|e| Fail::Data(anyhow!(e)))?;
    write_json(
        &a.output.join(RESOLVED_CONFIG),
        &EvalConfig {
            pred,
            gt,
            options: options.clone(),
        },
    )?;
    print_line(json!({
        "protocol": report.protocol,
        "jf": report.jf,
        "j": report.j,
        "f": report.f,
        "hota": report.hota,
        "mar": report.mar,
        "id_switches": report.id_switches,
    }));
    Ok(())
}
