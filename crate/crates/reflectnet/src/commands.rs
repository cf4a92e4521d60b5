//! Subcommands. Flags override the matching keys of `--config`; the merged
//! configuration is echoed as `<command>.toml` into each output directory and
//! can be passed back through `--config` to repeat the run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use reflectnet_core::infer::infer;
use reflectnet_core::model::{receptive_field, Generator};
use reflectnet_core::train::{TrainPair, Trainer};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{image_key, is_input, load_pairs, synthesize_corpus};
use crate::error::{CliError, Result};
use crate::imageio::{is_image, list_images, read_image, write_image};
use crate::losslog;
use crate::report::{evaluate, kv_path, render_kv, render_table};

pub const LOG_FILE: &str = "loss_log.txt";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

#[derive(Debug, Parser)]
#[command(name = "reflectnet", version, about = "Single-image reflection suppression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (input, target, recipe) triples from transmission and reflection images.
    Synth(SynthArgs),
    /// Train the generator and discriminator on a paired dataset.
    Train(TrainArgs),
    /// Remove reflections from one image or every image of a directory.
    Infer(InferArgs),
    /// PSNR/SSIM of predictions against ground truth.
    Eval(EvalArgs),
    /// Print the generator's per-layer parameter table and total.
    Params(ParamsArgs),
    /// Print the default configuration file.
    Defaults,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub transmission: Option<PathBuf>,
    #[arg(long)]
    pub reflection: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint; its configuration replaces the file's.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs to reach, counting those already in a resumed checkpoint.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// An image, or a directory of images.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn required(value: &Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or paths.{key} in the config file)")))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn overlay(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Params(a) => params(a).map(|text| print!("{text}")),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    overlay(&mut cfg.paths.transmission, &a.transmission);
    overlay(&mut cfg.paths.reflection, &a.reflection);
    overlay(&mut cfg.paths.out, &a.out);
    if let Some(c) = a.count {
        cfg.synth.count = c;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    let t = required(&cfg.paths.transmission, "transmission", "transmission")?;
    let r = required(&cfg.paths.reflection, "reflection", "reflection")?;
    let out = required(&cfg.paths.out, "out", "out")?;
    let ranges = cfg.synth.ranges()?;
    if cfg.synth.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let text = cfg.to_toml()?;
    synthesize_corpus(&t, &r, &out, cfg.synth.count, cfg.synth.seed, &ranges)?;
    let echo = out.join("synth.toml");
    fs::write(&echo, text).map_err(|e| CliError::io(&echo, e))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    overlay(&mut cfg.paths.data, &a.data);
    overlay(&mut cfg.paths.out, &a.out);
    overlay(&mut cfg.paths.resume, &a.resume);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data = required(&cfg.paths.data, "data", "data")?;
    let out = required(&cfg.paths.out, "out", "out")?;
    let mut trainer = match &cfg.paths.resume {
        Some(path) => {
            let state = checkpoint::load(path)?;
            let epochs = a.epochs.unwrap_or(state.config.epochs);
            let step = state.step;
            let t = Trainer::resume(state, epochs).map_err(CliError::config)?;
            if a.config.is_some() && cfg.train_config().ok().as_ref() != Some(t.config()) {
                warn!("resuming: model, training and loss settings come from the checkpoint, not the config file");
            }
            info!("resuming {} at epoch {}, step {step}", path.display(), t.epoch());
            t
        }
        None => Trainer::new(cfg.train_config()?).map_err(CliError::config)?,
    };
    cfg.set_train_config(trainer.config());
    let echo_text = cfg.to_toml()?;

    let named = load_pairs(&data)?;
    let (keys, pairs): (Vec<String>, Vec<TrainPair>) = named.into_iter().unzip();
    let (ok, skipped) = trainer.usable(&pairs)?;
    let p = trainer.config().patch_size;
    for i in skipped {
        warn!("pair {} is smaller than the {p}x{p} patch; skipped", keys[i]);
    }
    info!("{} training pairs from {}", ok.len(), data.display());

    make_dir(&out)?;
    let echo = out.join("train.toml");
    fs::write(&echo, echo_text).map_err(|e| CliError::io(&echo, e))?;
    let log_path = out.join(LOG_FILE);
    if cfg.paths.resume.is_some() {
        losslog::truncate_after(&log_path, trainer.step())?;
    } else {
        losslog::create(&log_path)?;
    }
    while !trainer.is_done() {
        let records = trainer.run_epoch(&pairs)?;
        losslog::append(&log_path, &records)?;
        let path = out.join(checkpoint_name(trainer.epoch()));
        checkpoint::save(&path, &trainer.state())?;
        if let Some(last) = records.last() {
            info!(
                "epoch {} step {} lr {} pixel {:.5} total {:.5} -> {}",
                trainer.epoch(),
                last.step,
                last.lr,
                last.pixel,
                last.total,
                path.display()
            );
        }
    }
    Ok(())
}

/// Files `infer` processes for `input`: the file itself, or the images of a
/// directory. A directory holding `*_input` images contributes only those.
pub fn infer_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        if !is_image(input) {
            return Err(CliError::Usage(format!("{}: not a .png or .ppm image", input.display())));
        }
        return Ok(vec![input.to_path_buf()]);
    }
    let all = list_images(input)?;
    if all.iter().any(|p| is_input(p)) {
        Ok(all.into_iter().filter(|p| is_input(p)).collect())
    } else {
        Ok(all)
    }
}

pub fn infer_cmd(a: InferArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    overlay(&mut cfg.paths.ckpt, &a.ckpt);
    overlay(&mut cfg.paths.input, &a.input);
    overlay(&mut cfg.paths.out, &a.out);
    let ckpt = required(&cfg.paths.ckpt, "ckpt", "ckpt")?;
    let input = required(&cfg.paths.input, "in", "input")?;
    let out = required(&cfg.paths.out, "out", "out")?;
    let generator: Generator = checkpoint::load_generator(&ckpt)?;
    let files = infer_inputs(&input)?;
    make_dir(&out)?;
    let mut written = 0;
    for path in files {
        let img = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("{e}; skipped");
                continue;
            }
        };
        let restored = infer(&generator, &img)?;
        write_image(&out.join(format!("{}.png", image_key(&path))), &restored)?;
        written += 1;
    }
    cfg.echo(&out, "infer")?;
    if written == 0 {
        return Err(CliError::Data(format!("{}: no readable images", input.display())));
    }
    info!("wrote {written} images to {}", out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    overlay(&mut cfg.paths.pred, &a.pred);
    overlay(&mut cfg.paths.gt, &a.gt);
    overlay(&mut cfg.paths.report, &a.report);
    let pred = required(&cfg.paths.pred, "pred", "pred")?;
    let gt = required(&cfg.paths.gt, "gt", "gt")?;
    let report_path = required(&cfg.paths.report, "report", "report")?;
    let report = evaluate(&pred, &gt)?;
    let dir = report_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    make_dir(dir)?;
    let table = render_table(&report);
    fs::write(&report_path, &table).map_err(|e| CliError::io(&report_path, e))?;
    let kv = kv_path(&report_path);
    fs::write(&kv, render_kv(&report)).map_err(|e| CliError::io(&kv, e))?;
    cfg.echo(dir, "eval")?;
    print!("{table}");
    if report.rows.is_empty() {
        return Err(CliError::Data("no prediction matched a ground-truth image".into()));
    }
    Ok(())
}

/// The table `params` prints.
pub fn params(a: ParamsArgs) -> Result<String> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let g = Generator::new(cfg.model.generator()?)?;
    let rows = g.params().table();
    let width = rows.iter().map(|(n, _, _)| n.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (name, shape, count) in &rows {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{name:<width$}  {:<14}  {count:>8}\n", dims.join("x")));
    }
    s.push_str(&format!("total {}\n", g.param_count()));
    s.push_str(&format!("receptive field {}\n", receptive_field(&g.dilations(), 2, 3)));
    Ok(s)
}
