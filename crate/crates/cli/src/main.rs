//! `cof`: data generation, training, editing, evaluation, ablations, GIF
//! rendering and RoPE plan dumps.
//!
//! Failures print one JSON object to stderr and exit nonzero: 2 for usage
//! errors, 1 for runtime errors, 3 when `ablate --check` finds a failing
//! ordering check.

mod config;
mod render;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cof_core::bench::{evaluate, AblationAxis, AblationSetup, EvalOptions, EvalReport};
use cof_core::dit::{checkpoint, ModelState};
use cof_core::rope::{collisions, plan_with_grid, RopeScheme};
use cof_core::sampler::{sample, ModelField, TargetOracle, VelocityField};
use cof_core::trainer::{encode_triplet, train};
use cof_core::worlds::store::{read_dataset, read_frames, read_manifest, write_dataset, write_frames};
use cof_core::worlds::{BenchmarkSampler, ConditionCode, FrameClip, Task};
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "cof", version, about = "Chain-of-frames video editing on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate edit triplets and a dataset manifest.
    GenData(GenData),
    /// Train a model on a generated dataset.
    Train(Train),
    /// Edit one source clip with a trained model.
    Edit(Edit),
    /// Score a checkpoint, or the exact-target oracle, on a dataset.
    Eval(Eval),
    /// Train and evaluate ablation cells.
    Ablate(Ablate),
    /// Render a frame directory, triplet or edit output as an animated GIF.
    Render(Render),
    /// Print the rotary index plan for a sequence layout.
    PlanDump(PlanDump),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Comma-separated subset of remove,add,swap,recolor.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    reasoning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// sequential, naive_reset or cof.
    #[arg(long)]
    scheme: Option<String>,
    /// Train without reasoning frames.
    #[arg(long)]
    no_cof: bool,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct Edit {
    /// Run config; defaults to the `config.json` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame directory, or a triplet directory whose `source/` is edited.
    #[arg(long)]
    source: PathBuf,
    /// Condition as JSON, or a path to a triplet manifest.
    #[arg(long)]
    cond: Option<String>,
    /// Target length in pixel frames; defaults to the source length.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "oracle")]
    ckpt: Option<PathBuf>,
    /// Score the exact-target oracle instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    oracle: bool,
    /// RoPE scheme for the oracle.
    #[arg(long, default_value = "cof")]
    scheme: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated axes, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    axis: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Training steps per cell.
    #[arg(long)]
    steps: Option<u64>,
    /// Held-out samples per cell.
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Cells not started within this many seconds are left as holes.
    #[arg(long)]
    max_seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Exit with status 3 when an ordering check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct Render {
    #[arg(long)]
    frames_dir: PathBuf,
    #[arg(long)]
    gif: PathBuf,
    /// Frame delay in hundredths of a second.
    #[arg(long, default_value_t = 25)]
    delay: u16,
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Args)]
struct PlanDump {
    /// sequential, naive_reset or cof.
    #[arg(long)]
    scheme: String,
    /// Source latent frames.
    #[arg(long = "F")]
    f: usize,
    /// Reasoning latent frames.
    #[arg(long = "L")]
    l: usize,
    /// Target latent frames; defaults to F.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value_t = 1)]
    grid_h: usize,
    #[arg(long, default_value_t = 1)]
    grid_w: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string().trim(), "kind": "usage" }));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Edit(a) => edit(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Render(a) => render_cmd(a),
        Command::PlanDump(a) => plan_dump(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}"), "kind": "runtime" }));
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: GenData) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(tasks) = &a.tasks {
        cfg.data.tasks = tasks
            .iter()
            .map(|t| Task::parse(t.trim()))
            .collect::<cof_core::Result<_>>()?;
    }
    if let Some(f) = a.frames {
        cfg.data.frames = f;
        cfg.data.frames_max = cfg.data.frames_max.max(f);
    }
    if let Some(k) = a.reasoning {
        cfg.data.reasoning_frames = k;
    }
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    let cfg = cfg.resolve();
    if a.out.exists() && fs::read_dir(&a.out)?.next().is_some() {
        bail!("output directory {} is not empty", a.out.display());
    }
    let sampler = BenchmarkSampler::new(cfg.data.clone())?;
    let triplets = sampler.triplets(a.n)?;
    let indices: Vec<u64> = (0..a.n as u64).collect();
    let manifest = write_dataset(&a.out, &triplets, &indices)?;
    cfg.echo(&a.out)?;
    print_json(&json!({ "out": a.out, "count": manifest.count, "task_histogram": manifest.task_histogram }))?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: Train) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.train.model.seed = s;
    }
    if let Some(s) = &a.scheme {
        cfg.train.model.rope = RopeScheme::parse(s)?;
    }
    if a.no_cof {
        cfg.train.cof = false;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.train.checkpoint_every = n;
    }
    let cfg = cfg.resolve();
    let triplets = read_dataset(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    if let Some(t) = triplets.first() {
        // The sampler needs the reasoning length the model was trained with.
        let mut cfg = cfg.clone();
        cfg.data.reasoning_frames = t.reasoning_frames();
        cfg.data.frames = t.frames();
        cfg.echo(&a.out)?;
    } else {
        bail!("dataset {} is empty", a.data.display());
    }
    let data = triplets
        .iter()
        .map(|t| encode_triplet(t, &cfg.train.codec, cfg.train.cof))
        .collect::<cof_core::Result<Vec<_>>>()?;
    let mut log = fs::File::create(a.out.join("log.jsonl"))?;
    let every = (cfg.train.steps / 20).max(1);
    let t0 = Instant::now();
    let mut io_err = None;
    let (state, records) = train(&cfg.train, &data, Some(&a.out), |rec| {
        let line = serde_json::to_string(rec)
            .map_err(anyhow::Error::from)
            .and_then(|l| Ok(writeln!(log, "{l}")?));
        if let Err(e) = line {
            io_err.get_or_insert(e);
        }
        if rec.step % every == 0 {
            eprintln!(
                "step {:>6}  loss {:.5}  |g| {:.3}  {:.0}s",
                rec.step,
                rec.loss,
                rec.grad_norm,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.context("writing log.jsonl"));
    }
    print_json(&json!({
        "checkpoint": a.out.join("final.bin"),
        "steps": state.step,
        "final_loss": records.last().map(|r| r.loss),
        "parameters": state.param_count(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

/// Run config for a checkpoint: `--config`, else the echo beside it, else defaults.
fn config_for(explicit: Option<&Path>, ckpt: Option<&Path>) -> Result<RunConfig> {
    let beside = ckpt
        .and_then(Path::parent)
        .map(|d| d.join("config.json"))
        .filter(|p| p.exists());
    Ok(RunConfig::load(explicit.or(beside.as_deref()))?.resolve())
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<ModelState> {
    let state = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if state.config.channels != cfg.train.codec.channels() {
        bail!(
            "checkpoint has {} channels but codec {:?} produces {}; pass the training --config",
            state.config.channels,
            cfg.train.codec,
            cfg.train.codec.channels()
        );
    }
    Ok(state)
}

fn parse_condition(s: &str) -> Result<ConditionCode> {
    let cond: ConditionCode = if s.trim_start().starts_with('{') {
        serde_json::from_str(s).context("parsing --cond JSON")?
    } else {
        let p = Path::new(s);
        let dir = if p.is_dir() {
            p
        } else {
            p.parent().unwrap_or(Path::new("."))
        };
        read_manifest(dir)?.condition()?
    };
    cond.validate()?;
    Ok(cond)
}

fn edit(a: Edit) -> Result<ExitCode> {
    let mut cfg = config_for(a.config.as_deref(), Some(&a.ckpt))?;
    if let Some(s) = a.steps {
        cfg.sample.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.sample.seed = s;
    }
    cfg.sample.target_frames = a.frames;
    let state = load_checkpoint(&a.ckpt, &cfg)?;
    cfg.sample.reasoning_frames = if cfg.train.cof { cfg.data.reasoning_frames } else { 0 };
    let triplet_dir = a.source.join("source").is_dir();
    let source = read_frames(&if triplet_dir {
        a.source.join("source")
    } else {
        a.source.clone()
    })?;
    let cond = match (&a.cond, triplet_dir) {
        (Some(c), _) => parse_condition(c)?,
        (None, true) => read_manifest(&a.source)?.condition()?,
        (None, false) => bail!("--cond is required unless --source is a triplet directory"),
    };
    let out = sample(&state, &source, &cond, &cfg.sample)?;
    write_frames(&a.out.join("edited"), &out.edited)?;
    if let Some(r) = &out.reasoning {
        write_frames(&a.out.join("reasoning"), r)?;
    }
    write_frames(&a.out.join("source"), &source)?;
    cfg.echo(&a.out)?;
    let summary = json!({
        "condition": cond,
        "scheme": state.config.rope,
        "source_frames": source.frames(),
        "edited_frames": out.edited.frames(),
        "reasoning_frames": out.reasoning.as_ref().map_or(0, FrameClip::frames),
        "steps": cfg.sample.steps,
        "seed": cfg.sample.seed,
    });
    write_json(&a.out.join("edit.json"), &summary)?;
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: Eval) -> Result<ExitCode> {
    let mut cfg = config_for(a.config.as_deref(), a.ckpt.as_deref())?;
    if let Some(s) = a.steps {
        cfg.sample.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.sample.seed = s;
    }
    let triplets = read_dataset(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let state;
    let (field, scheme, cof): (Box<dyn VelocityField>, RopeScheme, bool);
    if a.oracle {
        field = Box::new(TargetOracle::new(&triplets, &cfg.train.codec)?);
        scheme = RopeScheme::parse(&a.scheme)?;
        cof = true;
    } else {
        let path = a.ckpt.as_deref().expect("clap requires --ckpt without --oracle");
        state = load_checkpoint(path, &cfg)?;
        scheme = state.config.rope;
        cof = cfg.train.cof;
        field = Box::new(ModelField::new(&state));
    }
    cfg.sample.reasoning_frames = match (cof, triplets.first()) {
        (true, Some(t)) => t.reasoning_frames(),
        _ => 0,
    };
    let opts = EvalOptions {
        sample: cfg.sample.clone(),
        thresholds: cfg.thresholds,
        ..Default::default()
    };
    let run = json!({ "checkpoint": a.ckpt, "oracle": a.oracle, "data": a.data });
    let report: EvalReport = evaluate(field.as_ref(), scheme, &triplets, &opts, run)?;
    fs::create_dir_all(&a.out)?;
    cfg.echo(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    fs::write(a.out.join("report.md"), report.markdown())?;
    print_json(&json!({ "fingerprint": report.fingerprint, "overall": report.overall }))?;
    Ok(ExitCode::SUCCESS)
}

fn ablate(a: Ablate) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let ab = &mut cfg.ablation;
    if let Some(s) = a.steps {
        ab.budget.train_steps = s;
    }
    if let Some(n) = a.eval_samples {
        ab.budget.eval_samples = n;
    }
    if a.max_seconds.is_some() {
        ab.budget.max_seconds = a.max_seconds;
    }
    if let Some(s) = a.seed {
        ab.seed = s;
    }
    if a.cache_dir.is_some() {
        ab.cache_dir = a.cache_dir.clone();
    }
    let cfg = cfg.resolve();
    let axes: Vec<AblationAxis> = if a.axis.iter().any(|s| s == "all") {
        AblationAxis::ALL.to_vec()
    } else {
        a.axis
            .iter()
            .map(|s| AblationAxis::parse(s.trim()))
            .collect::<cof_core::Result<_>>()?
    };
    let setup = AblationSetup {
        data: cfg.data.clone(),
        train_count: cfg.ablation.train_count,
        eval_offset: cfg.ablation.eval_offset,
        train: cfg.train.clone(),
        sample_steps: cfg.sample.steps,
        thresholds: cfg.thresholds,
        cache_dir: cfg.ablation.cache_dir.clone(),
    };
    fs::create_dir_all(&a.out)?;
    cfg.echo(&a.out)?;
    let results = setup.run(&axes, &cfg.ablation.budget, cfg.ablation.seed)?;
    let checks = results.checks();
    write_json(
        &a.out.join("ablation.json"),
        &json!({ "results": results, "checks": checks }),
    )?;
    let mut md = results.markdown();
    if !checks.is_empty() {
        md.push_str("### checks\n\n");
        for c in &checks {
            md.push_str(&format!(
                "- {} {}: {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
    }
    fs::write(a.out.join("ablation.md"), &md)?;
    print!("{md}");
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if a.check && !failed.is_empty() {
        eprintln!(
            "{}",
            json!({ "error": "ordering checks failed", "kind": "check", "failed": failed })
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn render_cmd(a: Render) -> Result<ExitCode> {
    let dir = &a.frames_dir;
    let clips: Vec<FrameClip> = if dir.join("0000.ppm").exists() {
        vec![read_frames(dir)?]
    } else {
        ["source", "reasoning", "target", "edited"]
            .iter()
            .map(|s| dir.join(s))
            .filter(|d| d.join("0000.ppm").exists())
            .map(|d| read_frames(&d))
            .collect::<cof_core::Result<_>>()?
    };
    if clips.is_empty() {
        bail!("{} holds no frames", dir.display());
    }
    render::write_gif(&a.gif, &clips.iter().collect::<Vec<_>>(), a.delay, a.scale)?;
    print_json(&json!({ "gif": a.gif, "panels": clips.len(), "frames": clips.iter().map(FrameClip::frames).max() }))?;
    Ok(ExitCode::SUCCESS)
}

fn plan_dump(a: PlanDump) -> Result<ExitCode> {
    let scheme = RopeScheme::parse(&a.scheme)?;
    let plan = plan_with_grid(scheme, a.f, a.l, a.target.unwrap_or(a.f), a.grid_h, a.grid_w)?;
    let clashes = collisions(&plan);
    let mut v = serde_json::to_value(&plan)?;
    v["collisions"] = serde_json::to_value(&clashes)?;
    print_json(&v)?;
    Ok(ExitCode::SUCCESS)
}
