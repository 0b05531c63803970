mod config;
mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fanerv_core::checkpoint::Checkpoint;
use fanerv_core::compress::{compress_finetune, initial_embeddings, CompressedArtifact, QuantSpec};
use fanerv_core::data::{apply_mask, load_clip, make_mask, synthetic_clip, write_png, VideoClip};
use fanerv_core::losses::{format_metric, ms_ssim, psnr};
use fanerv_core::model::{normalized_time, Fanerv};
use fanerv_core::report::{bar_chart, csv_table, line_plot, param_table, rd_table, write_text, RdPoint};
use fanerv_core::trainer::{evaluate, fit, mean_metrics, metrics_csv, run_ablation, MetricRow, Task};

use config::{parse_override, RunConfig};
use manifest::{file_sha256, Run};

#[derive(Parser)]
#[command(name = "fanerv", version, about = "Frequency-aware neural video representation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file with `key = value` lines and `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed (same as `train.seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; defaults to $FANERV_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value` overrides, applied after the config file.
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every frame of a clip.
    Train(Common),
    /// Score a checkpoint on a clip.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Quantize, fine-tune and entropy-code a checkpoint for each lambda.
    Compress {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train on even frames, evaluate on odd frames.
    Interpolate(Common),
    /// Train on masked frames, evaluate on full frames.
    Inpaint {
        #[command(flatten)]
        common: Common,
        /// `center` or `scatter` (same as `task.mask=...`).
        #[arg(long)]
        mask: Option<String>,
    },
    /// Train the full model and one variant per disabled component.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated components, e.g. `wfub,fsfb,tgfn,creb`.
        #[arg(long)]
        flags: Option<String>,
    },
    /// Per-stage parameter table and chart.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn output_root(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os("FANERV_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve(common: &Common, extra: Vec<(String, String)>) -> Result<RunConfig> {
    let mut ov = extra;
    if let Some(s) = common.seed {
        ov.push(("train.seed".into(), s.to_string()));
    }
    for o in &common.overrides {
        ov.push(parse_override(o)?);
    }
    RunConfig::load(common.config.as_deref(), &ov)?.resolve()
}

fn load_data(cfg: &RunConfig, stride: usize, run: &mut Run) -> Result<VideoClip> {
    let d = &cfg.data;
    let clip = if d.path.is_empty() {
        let c = synthetic_clip(d.frames, d.height, d.width, d.seed)?;
        c.check_stride(stride)?;
        c
    } else {
        load_clip(Path::new(&d.path), &d.load_options(stride)?).with_context(|| format!("loading {}", d.path))?
    };
    run.input(format!("clip:{}", clip.source), clip.content_hash())?;
    log::info!("clip {}: {} frames of {}x{}", clip.source, clip.len(), clip.height, clip.width);
    Ok(clip)
}

fn load_checkpoint(path: &Path, run: &mut Run) -> Result<Checkpoint> {
    run.input(format!("checkpoint:{}", path.display()), file_sha256(path)?)?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_metrics(run: &mut Run, rows: &[MetricRow]) -> Result<()> {
    let p = run.output("metrics.csv");
    write_text(&p, &metrics_csv(rows))?;
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, task: Task, run: &mut Run) -> Result<()> {
    let clip = load_data(cfg, cfg.model.total_stride(), run)?;
    let state = fit(&cfg.model, &clip, &task, &cfg.train, &cfg.loss)?;
    write_metrics(run, &state.history)?;
    let ckpt = run.output("checkpoint.fanc");
    Checkpoint::from_state(&state, Some(cfg.train.clone()), Some(task.clone())).save(&ckpt)?;
    let split = task.split(clip.len())?;
    match &task {
        Task::Inpainting { mask } => {
            for t in 0..clip.len() {
                let m = make_mask(mask, clip.height, clip.width, t)?;
                let masked = apply_mask(&clip.frames[t], &m)?;
                write_png(&run.output(&format!("masked_{t:05}.png")), &masked)?;
                let out = state.model.reconstruct(&state.params, &masked, normalized_time(t, clip.len()))?;
                write_png(&run.output(&format!("recon_{t:05}.png")), &out)?;
            }
        }
        Task::Interpolation => {
            for &t in &split.test {
                let out = state.model.reconstruct(&state.params, &clip.frames[t], normalized_time(t, clip.len()))?;
                write_png(&run.output(&format!("recon_{t:05}.png")), &out)?;
            }
        }
        Task::Regression => {}
    }
    for name in ["train", "test"] {
        if let Some(p) = state.last_psnr(name) {
            println!("{name} psnr {}", format_metric(p));
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint, run)?;
    let task = ckpt.task.clone().unwrap_or(Task::Regression);
    let epoch = ckpt.epoch;
    let state = ckpt.into_state()?;
    let clip = load_data(cfg, state.model.config.total_stride(), run)?;
    let split = task.split(clip.len())?;
    let mut rows = Vec::new();
    for (name, frames) in [("train", &split.train), ("test", &split.test)] {
        if frames.is_empty() {
            continue;
        }
        let m = evaluate(&state.model, &state.params, &clip, &task, frames, &cfg.loss)?;
        let (mp, ms) = mean_metrics(&m);
        for r in &m {
            rows.push(MetricRow {
                epoch,
                split: name.into(),
                frame: Some(r.frame),
                psnr: r.psnr,
                ms_ssim: r.ms_ssim,
                loss: f64::NAN,
                lr: f64::NAN,
            });
        }
        rows.push(MetricRow {
            epoch,
            split: name.into(),
            frame: None,
            psnr: mp,
            ms_ssim: ms,
            loss: f64::NAN,
            lr: f64::NAN,
        });
        println!("{name} psnr {} ms-ssim {ms:.4}", format_metric(mp));
    }
    write_metrics(run, &rows)
}

fn score_artifact(art: &CompressedArtifact, clip: &VideoClip, cfg: &RunConfig) -> Result<(f64, f64)> {
    let decoded = art.decode()?;
    let mut p = Vec::new();
    for t in 0..clip.len() {
        let out = decoded.frame(t)?;
        p.push(fanerv_core::trainer::FrameMetric {
            frame: t,
            psnr: psnr(&out, &clip.frames[t])?,
            ms_ssim: ms_ssim(&out, &clip.frames[t], &cfg.loss)?,
        });
    }
    Ok(mean_metrics(&p))
}

fn cmd_compress(cfg: &RunConfig, checkpoint: &Path, run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint, run)?;
    let task = ckpt.task.clone().unwrap_or(Task::Regression);
    let state = ckpt.into_state()?;
    let model = &state.model;
    let clip = load_data(cfg, model.config.total_stride(), run)?;
    let spec = QuantSpec::new(cfg.compress.bits)?;
    let emb = initial_embeddings(model, &state.params, &clip, &task)?;
    let mut points = Vec::new();
    let mut history = Vec::new();
    for (i, &lambda) in cfg.compress.lambdas.iter().enumerate() {
        let ft = compress_finetune(model, &state.params, &emb, &clip, &task, &cfg.finetune(lambda), &cfg.loss)?;
        history.extend(ft.history.iter().cloned().map(|mut r| {
            r.split = format!("finetune:{lambda}");
            r
        }));
        let art = CompressedArtifact::build(model, &ft.params, &ft.embeddings, clip.height, clip.width, spec)?;
        let name = format!("artifact_{i:02}.fanv");
        let path = run.output(&name);
        art.save(&path)?;
        let size = std::fs::metadata(&path)?.len();
        let bpp = fanerv_core::compress::compute_bpp(8 * size, clip.len(), clip.height, clip.width);
        let (p, s) = score_artifact(&art, &clip, cfg)?;
        println!("lambda {lambda}: {bpp:.4} bpp, psnr {} ms-ssim {s:.4}", format_metric(p));
        points.push(RdPoint {
            lambda,
            bits: spec.bits,
            bpp,
            psnr: p,
            ms_ssim: s,
            artifact: name,
        });
    }
    write_text(&run.output("finetune.csv"), &metrics_csv(&history))?;
    write_text(&run.output("rd.csv"), &rd_table(&points))?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.bpp, p.psnr)).collect();
    let stem = run.dir.join("rd_psnr");
    line_plot(&stem, "bpp", "psnr", &xy)?;
    run.output("rd_psnr.png");
    run.output("rd_psnr.dat");
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.bpp, p.ms_ssim)).collect();
    line_plot(&run.dir.join("rd_msssim"), "bpp", "ms_ssim", &xy)?;
    run.output("rd_msssim.png");
    run.output("rd_msssim.dat");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let clip = load_data(cfg, cfg.model.total_stride(), run)?;
    let budget = match cfg.ablate.budget {
        Some(b) => b,
        None => Fanerv::new(cfg.model.clone())?.param_count(),
    };
    let rows = run_ablation(
        &cfg.model,
        &cfg.ablate.flags,
        budget,
        &clip,
        &cfg.train,
        &cfg.loss,
        &cfg.ablate.seeds,
    )?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.clone(),
                r.params.to_string(),
                r.base_channels.to_string(),
                r.psnr_per_seed.iter().map(|p| format_metric(*p)).collect::<Vec<_>>().join(";"),
                format_metric(r.psnr_median),
            ]
        })
        .collect();
    write_text(
        &run.output("ablation.csv"),
        &csv_table(&["variant", "params", "base_channels", "psnr_per_seed", "psnr_median"], &table),
    )?;
    for r in &rows {
        println!("{:<12} {:>9} params  median psnr {}", r.variant, r.params, format_metric(r.psnr_median));
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, checkpoint: Option<&Path>, run: &mut Run) -> Result<()> {
    let model = match checkpoint {
        Some(p) => Fanerv::new(load_checkpoint(p, run)?.model)?,
        None => Fanerv::new(cfg.model.clone())?,
    };
    let dist = model.param_distribution();
    write_text(&run.output("params.csv"), &param_table(&dist))?;
    bar_chart(&run.dir.join("params"), &dist)?;
    run.output("params.png");
    run.output("params.dat");
    for (l, n) in &dist {
        println!("{l:<10} {n}");
    }
    println!("decoder total {}", model.decoder_param_count());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (name, common, extra) = match &cli.command {
        Command::Train(c) => ("train", c, vec![]),
        Command::Eval { common, .. } => ("eval", common, vec![]),
        Command::Compress { common, .. } => ("compress", common, vec![]),
        Command::Interpolate(c) => ("interpolate", c, vec![]),
        Command::Inpaint { common, mask } => (
            "inpaint",
            common,
            mask.iter().map(|m| ("task.mask".to_string(), m.clone())).collect(),
        ),
        Command::Ablate { common, flags } => (
            "ablate",
            common,
            flags.iter().map(|f| ("ablate.flags".to_string(), f.clone())).collect(),
        ),
        Command::Report { common, .. } => ("report", common, vec![]),
    };
    let cfg = resolve(common, extra).context("invalid configuration")?;
    let mut run = Run::start(
        &output_root(common),
        name,
        args,
        cfg.train.seed,
        serde_json::to_value(&cfg)?,
    )?;
    write_text(&run.output("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let result = match &cli.command {
        Command::Train(_) => cmd_fit(&cfg, Task::Regression, &mut run),
        Command::Interpolate(_) => cmd_fit(&cfg, Task::Interpolation, &mut run),
        Command::Inpaint { .. } => cmd_fit(
            &cfg,
            Task::Inpainting {
                mask: cfg.task.mask_spec()?,
            },
            &mut run,
        ),
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, checkpoint, &mut run),
        Command::Compress { checkpoint, .. } => cmd_compress(&cfg, checkpoint, &mut run),
        Command::Ablate { .. } => cmd_ablate(&cfg, &mut run),
        Command::Report { checkpoint, .. } => cmd_report(&cfg, checkpoint.as_deref(), &mut run),
    };
    run.finish(&result)?;
    println!("run directory: {}", run.dir.display());
    result
}
