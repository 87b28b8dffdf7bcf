//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fieldcache_core::cache::CacheSet;
use fieldcache_core::fields::SceneModel;
use fieldcache_core::math::Vec3;
use fieldcache_core::render::{render_image, RenderMode};
use fieldcache_core::reuse::{PathCounters, ReuseConfig};
use fieldcache_core::scene::{manipulate, PoseEdit};
use fieldcache_core::train::{LossRecord, TrainConfig};

use crate::config::{RunConfig, SkipRuleName, StorageName};
use crate::experiment::{self, Dataset, TrainedRun};
use crate::formats;
use crate::image_io::{write_image, write_text};
use crate::metrics::{psnr, ssim};
use crate::redundancy;

#[derive(Debug, Parser)]
#[command(name = "fieldcache", version, about = "Train and render scene-graph radiance fields with a consistency-scored feature cache")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured scene; writes model.ckpt, cache.snap and loss.csv.
    Train(TrainArgs),
    /// Render one frame from a trained run.
    Render(RenderArgs),
    /// Edit one object's pose track and render the result.
    Manipulate(ManipulateArgs),
    /// Fraction of bins whose values barely change between frames, per ε.
    AnalyzeRedundancy(RedundancyArgs),
    /// Sweep τ and report quality against cost.
    Bench(BenchArgs),
    /// Skip-rule or storage ablation.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Print a progress line every N steps (0 disables).
    #[arg(long, default_value_t = 250)]
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Cf,
    Naive,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Output image (.ppm or .png); defaults to render-<mode>-<frame>.ppm in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManipulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub object: u32,
    /// Translation as x,y,z.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub translate: Vec3,
    /// Extra yaw in radians about the object's centre.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rotate_yaw: f64,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, value_enum, default_value = "baseline")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RedundancyArgs {
    pub config: PathBuf,
    /// Comma-separated ε values; defaults to 0.01..0.2 then 0.3..1.0.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub config: PathBuf,
    /// Comma-separated τ values.
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.7,0.5,0.3,0.1")]
    pub taus: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "ablation")]
pub struct AblateArgs {
    pub config: PathBuf,
    /// Compare skip rules (score+density or density-only) with reuse disabled.
    #[arg(long, group = "ablation", value_parser = SkipRuleName::parse)]
    pub skip_rule: Option<SkipRuleName>,
    /// Retrain with another bin storage (lowrank, direct or encdec).
    #[arg(long, group = "ablation", value_parser = StorageName::parse)]
    pub storage: Option<StorageName>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {} values", parts.len())),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Manipulate(a) => manipulate_cmd(a),
        Command::AnalyzeRedundancy(a) => analyze(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = format!("{}\n", LossRecord::CSV_HEADER);
    for r in trace {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Trains with `cfg`, writing checkpoints, the snapshot and the loss trace into `dir`.
pub fn train_into(cfg: &RunConfig, data: &Dataset, train: TrainConfig, dir: &Path, log_every: usize) -> Result<TrainedRun> {
    let every = cfg.train.checkpoint_every;
    let mut failed = None;
    let run = experiment::train(data, cfg.fields(), train, cfg.sampling(), |t, r| {
        let step = r.step + 1;
        if log_every > 0 && step % log_every == 0 {
            eprintln!(
                "step {step} {} total {:.5} photometric {:.5} mixed {:.5}",
                r.phase.name(),
                r.terms.total,
                r.terms.photometric,
                r.terms.mixed
            );
        }
        if every > 0 && step % every == 0 && failed.is_none() {
            let path = dir.join(format!("model-{step:06}.ckpt"));
            if let Err(e) = formats::save_checkpoint(&path, &t.model.store) {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    formats::save_checkpoint(&dir.join("model.ckpt"), &run.model.store)?;
    formats::save_snapshot(&dir.join("cache.snap"), &run.stores)?;
    write_text(&dir.join("loss.csv"), &loss_csv(&run.trace))?;
    Ok(run)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let dir = out_dir(&cfg)?;
    let run = train_into(&cfg, &data, cfg.train_config(), &dir, a.log_every)?;
    let ctx = experiment::context(&data, &run.model, cfg.sampling(), cfg.reuse_config());
    let base = experiment::evaluate(&ctx, data.frames.len(), RenderMode::Baseline)?;
    let cf = experiment::evaluate(&ctx, data.frames.len(), RenderMode::CfInference(&run.stores))?;
    println!("baseline_psnr {:.3}", base.psnr_against(&data.frames)?);
    println!("cf_psnr {:.3}", cf.psnr_against(&data.frames)?);
    println!("cf_full_fraction {:.4}", cf.counters.full_fraction());
    println!("cache_entries {} cache_bytes {}", run.stores.len(), run.stores.memory_usage());
    println!("wrote {}", dir.display());
    Ok(())
}

/// Loads the checkpoint and snapshot of a finished run.
pub fn load_run(cfg: &RunConfig, data: &Dataset) -> Result<TrainedRun> {
    let ckpt = cfg.checkpoint_path();
    ensure!(ckpt.exists(), "checkpoint {} not found (run `fieldcache train` first)", ckpt.display());
    let mut model = SceneModel::new(&data.scene, cfg.fields(), cfg.train.seed)?;
    formats::load_checkpoint(&ckpt, &mut model.store).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let snap = cfg.snapshot_path();
    ensure!(snap.exists(), "cache snapshot {} not found", snap.display());
    let stores = formats::load_snapshot(&snap).with_context(|| format!("loading snapshot {}", snap.display()))?;
    ensure!(
        stores.objects.len() == data.scene.objects.len(),
        "snapshot {} has {} object stores, scene has {} objects",
        snap.display(),
        stores.objects.len(),
        data.scene.objects.len()
    );
    Ok(TrainedRun {
        model,
        stores,
        trace: Vec::new(),
    })
}

fn naive_for(cfg: &RunConfig, data: &Dataset, run: &TrainedRun) -> Result<CacheSet> {
    let path = cfg.output_dir().join("naive.snap");
    if path.exists() {
        return Ok(formats::load_snapshot(&path)?);
    }
    let stores = experiment::naive_stores(data, &run.model, &cfg.sampling(), cfg.cache.bins)?;
    formats::save_snapshot(&path, &stores)?;
    Ok(stores)
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Baseline => "baseline",
        ModeArg::Cf => "cf",
        ModeArg::Naive => "naive",
    }
}

fn render_frame(
    cfg: &RunConfig,
    data: &Dataset,
    run: &TrainedRun,
    scene: &fieldcache_core::scene::SceneGraph,
    mode: ModeArg,
    frame: usize,
) -> Result<(fieldcache_core::render::Image, PathCounters)> {
    ensure!(frame < data.frames.len(), "frame {frame} out of range (scene has {} frames)", data.frames.len());
    let naive;
    let mode = match mode {
        ModeArg::Baseline => RenderMode::Baseline,
        ModeArg::Cf => RenderMode::CfInference(&run.stores),
        ModeArg::Naive => {
            naive = naive_for(cfg, data, run)?;
            RenderMode::Naive(&naive)
        }
    };
    let ctx = fieldcache_core::render::RenderContext {
        model: &run.model,
        scene,
        camera: &data.preset.camera,
        sampling: cfg.sampling(),
        reuse: cfg.reuse_config(),
    };
    let (img, out) = render_image(&ctx, frame, mode)?;
    Ok((img, out.counters))
}

fn render(a: RenderArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let run = load_run(&cfg, &data)?;
    let (img, counters) = render_frame(&cfg, &data, &run, &data.scene, a.mode, a.frame)?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.output_dir().join(format!("render-{}-{:03}.ppm", mode_name(a.mode), a.frame)));
    write_image(&out, &img)?;
    println!("{}", PathCounters::CSV_HEADER);
    println!("{}", counters.csv_line(a.frame));
    println!("psnr {:.3} ssim {:.4}", psnr(&img, &data.frames[a.frame])?, ssim(&img, &data.frames[a.frame])?);
    println!("wrote {}", out.display());
    Ok(())
}

fn manipulate_cmd(a: ManipulateArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let run = load_run(&cfg, &data)?;
    let edit = PoseEdit::Transform {
        translate: a.translate,
        yaw: a.rotate_yaw,
    };
    let scene = manipulate(&data.scene, a.object, &edit)?;
    let (img, counters) = render_frame(&cfg, &data, &run, &scene, a.mode, a.frame)?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.output_dir().join(format!("manipulate-{}-{:03}.ppm", a.object, a.frame)));
    write_image(&out, &img)?;
    println!("{}", PathCounters::CSV_HEADER);
    println!("{}", counters.csv_line(a.frame));
    println!("wrote {}", out.display());
    Ok(())
}

fn analyze(a: RedundancyArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let run = load_run(&cfg, &data)?;
    let eps = a.eps.unwrap_or_else(redundancy::default_eps_grid);
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        bail!("--eps values must be positive");
    }
    let tracked = experiment::touched_bins(&data, &cfg.sampling(), cfg.cache.bins)?;
    let history = redundancy::build_history(&run.model, &data.scene, &data.preset.camera, &tracked, cfg.cache.bins)?;
    let ratios = redundancy::analyze_redundancy(&history, &eps);
    let csv = redundancy::to_csv(&eps, &ratios);
    let out = a.out.unwrap_or_else(|| cfg.output_dir().join("redundancy.csv"));
    write_text(&out, &csv)?;
    print!("{csv}");
    println!("bins {} events {}", history.series.len(), history.events());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let run = load_run(&cfg, &data)?;
    let rows = experiment::bench(&data, &run, cfg.sampling(), cfg.reuse_config(), &a.taus)?;
    let mut csv = format!("{}\n", experiment::BENCH_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    let out = a.out.unwrap_or_else(|| cfg.output_dir().join("bench.csv"));
    write_text(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = Dataset::new(cfg.preset()?)?;
    let (csv, name) = match (a.skip_rule, a.storage) {
        (Some(rule), None) => (skip_rule_ablation(&cfg, &data, rule)?, format!("ablate-{}.csv", rule.name())),
        (None, Some(storage)) => (storage_ablation(&cfg, &data, storage)?, format!("ablate-{}.csv", storage.name())),
        _ => bail!("give exactly one of --skip-rule or --storage"),
    };
    let out = a.out.unwrap_or_else(|| cfg.output_dir().join(name));
    write_text(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub const SKIP_ABLATION_HEADER: &str = "rule,psnr_vs_full,object_max_err,object_mean_err,empty_max_err,empty_mean_err,skip_fraction,full_fraction";

fn skip_rule_ablation(cfg: &RunConfig, data: &Dataset, rule: SkipRuleName) -> Result<String> {
    let run = load_run(cfg, data)?;
    let frames = data.frames.len();
    let reuse = ReuseConfig {
        skip_rule: rule.rule(),
        allow_reuse: false,
        ..cfg.reuse_config()
    };
    let ctx = experiment::context(data, &run.model, cfg.sampling(), reuse);
    let full = experiment::evaluate(&ctx, frames, RenderMode::Baseline)?;
    let ev = experiment::evaluate(&ctx, frames, RenderMode::CfInference(&run.stores))?;
    let s = experiment::skip_ablation_stats(data, &full, &ev)?;
    Ok(format!(
        "{SKIP_ABLATION_HEADER}\n{},{:.4},{:.6e},{:.6e},{:.6e},{:.6e},{:.6},{:.6}\n",
        rule.name(),
        ev.psnr_against(&full.images)?,
        s.object_max,
        s.object_mean,
        s.empty_max,
        s.empty_mean,
        ev.counters.skip as f64 / ev.counters.total.max(1) as f64,
        ev.counters.full_fraction()
    ))
}

pub const STORAGE_ABLATION_HEADER: &str = "storage,scalars_per_entry,entries,cache_bytes,baseline_psnr,cf_psnr,full_fraction";

fn storage_ablation(cfg: &RunConfig, data: &Dataset, storage: StorageName) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.model.storage = storage;
    cfg.validate()?;
    let dir = cfg.output_dir().join(format!("ablate-{}", storage.name()));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let run = train_into(&cfg, data, cfg.train_config(), &dir, 0)?;
    let frames = data.frames.len();
    let ctx = experiment::context(data, &run.model, cfg.sampling(), cfg.reuse_config());
    let base = experiment::evaluate(&ctx, frames, RenderMode::Baseline)?;
    let cf = experiment::evaluate(&ctx, frames, RenderMode::CfInference(&run.stores))?;
    Ok(format!(
        "{STORAGE_ABLATION_HEADER}\n{},{},{},{},{:.4},{:.4},{:.6}\n",
        storage.name(),
        run.stores.objects.first().map_or(run.stores.background.strategy(), |s| s.strategy()).scalars_per_entry(),
        run.stores.len(),
        run.stores.memory_usage(),
        base.psnr_against(&data.frames)?,
        cf.psnr_against(&data.frames)?,
        cf.counters.full_fraction()
    ))
}
