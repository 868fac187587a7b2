use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde::{Deserialize, Serialize};

use arcurate::eval::{self, EvalConfig, FewShotDataset, LabeledExample, FEWSHOT_SIZES};
use arcurate::pipeline::{self, PipelineConfig, RunManifest, Stage};
use arcurate::plan::{hyperparam_grid, plan_parallelism, LrSchedule, PlanReport};
use arcurate::synth::{write_fixture, FixtureFormat, SynthConfig};
use arcurate::{Error, Result};

#[derive(Parser)]
#[command(name = "arcurate", version, about = "Arabic corpus curation and pretraining-data preparation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Read sources into normalized documents.
    Ingest(Common),
    /// Run through the quality filter.
    Filter(Common),
    /// Run through deduplication.
    Dedup(Common),
    /// Run through tokenizer training.
    TrainTokenizer(Common),
    /// Run through span corruption.
    Corrupt(Common),
    /// Run every stage from scratch.
    Run(Common),
    /// Continue a previous run in `--output`.
    Resume(Common),
    /// Render the manifest in `--output` as text and JSON.
    Report(Common),
    /// Score prediction files.
    Eval(Common),
    /// Sample few-shot folds.
    Fewshot(Common),
    /// Training-plan arithmetic and the fine-tuning grid.
    Plan(Common),
    /// Write a synthetic corpus with planted duplicates and noise.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Approximate corpus size in bytes.
    #[arg(long)]
    bytes: Option<u64>,
    #[arg(long, value_enum, default_value = "wet")]
    format: SynthFormat,
    #[arg(long, default_value_t = 128 << 20)]
    shard_bytes: u64,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum SynthFormat {
    Wet,
    Jsonl,
}

fn need_config(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))
}

fn need_output(c: &Common) -> Result<&Path> {
    c.output
        .as_deref()
        .ok_or_else(|| Error::Config("--output is required".into()))
}

fn pipeline_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::from_json_file(need_config(c)?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(o) = &c.output {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn write_out(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::IoPath {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::IoPath { path, source: e })
}

fn report(manifest: &RunManifest, dir: &Path) -> Result<()> {
    let r = pipeline::emit_report(manifest)?;
    write_out(dir, "report.json", &r.json)?;
    write_out(dir, "report.txt", &r.text)?;
    print!("{}", r.text);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FewshotConfig {
    /// JSONL of `{"id": ..., "label": ...}`.
    dataset: PathBuf,
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    sizes: Option<Vec<usize>>,
    #[serde(default = "default_folds")]
    folds: usize,
    #[serde(default)]
    seed: u64,
}

fn default_folds() -> usize {
    eval::DEFAULT_FOLDS
}

#[derive(Serialize)]
struct FewshotOutput {
    seed: u64,
    folds: BTreeMap<usize, Vec<eval::FewShotFold>>,
}

fn fewshot(c: &Common) -> Result<()> {
    let path = need_config(c)?;
    let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let cfg: FewshotConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let data_path = base.join(&cfg.dataset);
    let data = fs::read_to_string(&data_path).map_err(|e| Error::IoPath {
        path: data_path.clone(),
        source: e,
    })?;
    let examples = data
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<LabeledExample>(l).map_err(|e| Error::InvalidInput(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let dataset = match cfg.classes {
        Some(classes) => FewShotDataset::with_classes(examples, classes),
        None => FewShotDataset::new(examples),
    };
    let seed = c.seed.unwrap_or(cfg.seed);
    let mut folds = BTreeMap::new();
    for size in cfg.sizes.unwrap_or_else(|| FEWSHOT_SIZES.to_vec()) {
        if size > dataset.len() {
            log::warn!("skipping size {size}: dataset has {} examples", dataset.len());
            continue;
        }
        folds.insert(size, eval::sample_folds(&dataset, size, seed, cfg.folds)?);
    }
    let json = serde_json::to_string_pretty(&FewshotOutput { seed, folds })? + "\n";
    match &c.output {
        Some(dir) => write_out(dir, "folds.json", &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanConfig {
    gpus: u64,
    model_parallel: u64,
    micro_batch: u64,
    global_batch: u64,
    #[serde(default)]
    schedule: LrSchedule,
    #[serde(default = "default_steps")]
    steps: Vec<u64>,
}

fn default_steps() -> Vec<u64> {
    vec![1, 1_000, 10_000, 40_000, 100_000, 1_000_000]
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            gpus: 128,
            model_parallel: 4,
            micro_batch: 32,
            global_batch: 4096,
            schedule: LrSchedule::default(),
            steps: default_steps(),
        }
    }
}

fn plan(c: &Common) -> Result<()> {
    let cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::IoPath {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => PlanConfig::default(),
    };
    let layout = plan_parallelism(cfg.gpus, cfg.model_parallel, cfg.micro_batch, cfg.global_batch)?;
    let report = PlanReport::new(layout, cfg.schedule, &cfg.steps)?;
    println!(
        "gpus {} = model_parallel {} x data_parallel {}; global batch {} = {} x micro {} x accum {}",
        layout.gpus,
        layout.model_parallel,
        layout.data_parallel,
        layout.global_batch,
        layout.data_parallel,
        layout.micro_batch,
        layout.grad_accum
    );
    for (step, lr) in &report.lr_samples {
        println!("step {step:>9}  lr {lr}");
    }
    if let Some(dir) = &c.output {
        write_out(dir, "plan.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
        write_out(dir, "grid.json", &(serde_json::to_string_pretty(&hyperparam_grid())? + "\n"))?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::IoPath {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.bytes {
        cfg.target_bytes = b;
    }
    let out = need_output(&a.common)?;
    let format = match a.format {
        SynthFormat::Wet => FixtureFormat::Wet,
        SynthFormat::Jsonl => FixtureFormat::Jsonl,
    };
    let fx = write_fixture(&cfg, out, format, a.shard_bytes)?;
    let json = serde_json::to_string_pretty(&fx)? + "\n";
    write_out(out, "fixture.json", &json)?;
    print!("{json}");
    Ok(())
}

fn eval_cmd(c: &Common) -> Result<()> {
    let path = need_config(c)?;
    let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let cfg: EvalConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let rep = eval::evaluate(&cfg, path.parent().unwrap_or(Path::new(".")))?;
    print!("{}", rep.render_text());
    if let Some(dir) = &c.output {
        write_out(dir, "eval_report.json", &(serde_json::to_string_pretty(&rep)? + "\n"))?;
        write_out(dir, "eval_report.txt", &rep.render_text())?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    let through = |c: &Common, stage: Stage| -> Result<()> {
        let cfg = pipeline_config(c)?;
        let m = pipeline::run_through(&cfg, stage)?;
        report(&m, &cfg.output_dir)
    };
    match cmd {
        Command::Ingest(c) => through(&c, Stage::Ingest),
        Command::Filter(c) => through(&c, Stage::Filter),
        Command::Dedup(c) => through(&c, Stage::Dedup),
        Command::TrainTokenizer(c) => through(&c, Stage::TrainTokenizer),
        Command::Corrupt(c) => through(&c, Stage::Corrupt),
        Command::Run(c) => {
            let cfg = pipeline_config(&c)?;
            let m = pipeline::run_pipeline(&cfg)?;
            report(&m, &cfg.output_dir)
        }
        Command::Resume(c) => {
            let out = need_output(&c)?.to_path_buf();
            let cfg = match &c.config {
                Some(_) => Some(pipeline_config(&c)?),
                None => None,
            };
            let cfg = match (cfg, c.workers) {
                (Some(cfg), _) => Some(cfg),
                (None, Some(w)) => {
                    let mut recorded = RunManifest::load(&out)?.config;
                    recorded.workers = w;
                    Some(recorded)
                }
                (None, None) => None,
            };
            let m = pipeline::resume(&out, cfg.as_ref())?;
            report(&m, &out)
        }
        Command::Report(c) => {
            let out = need_output(&c)?;
            report(&RunManifest::load(out)?, out)
        }
        Command::Eval(c) => eval_cmd(&c),
        Command::Fewshot(c) => fewshot(&c),
        Command::Plan(c) => plan(&c),
        Command::Synth(a) => synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
