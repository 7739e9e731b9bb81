use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plantar_core::data::{prepare_all, Prepared};
use plantar_core::eval::{evaluate_set, metric_table, train_evaluator, EvalPair, Evaluator};
use plantar_core::features::pretrain_f_traj;
use plantar_core::io::{read_split, save_bundle, write_atomic, Bundle, Manifest};
use plantar_core::nn::ParamSet;
use plantar_core::pipeline::{load_backbone, load_branch, load_traj, read_samples, synthesize, write_samples};
use plantar_core::synth::build_dataset;
use plantar_core::training::{cache_items, caption_encoder, pretrain_backbone, run_training, TrainMode, Trainer};
use plantar_core::{selftest, RunConfig};

/// Optional root joined onto relative `--out` paths.
const OUT_ROOT_VAR: &str = "PLANTAR_OUT_ROOT";

#[derive(Parser)]
#[command(name = "plantar", version, about = "Pressure- and text-conditioned motion reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the pressure-to-trajectory extractor.
    PretrainTraj {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Pretrain the text-to-motion denoiser.
    PretrainBackbone {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the control branch over the frozen backbone.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long, default_value = "full")]
        mode: TrainMode,
        /// Continue from a previous `train` output directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct motions for a split.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        branch: Option<PathBuf>,
        /// Defaults to the mode the branch was trained in, or text_only without one.
        #[arg(long)]
        mode: Option<TrainMode>,
    },
    /// Score samples (or the ground truth) and emit a metric table.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, conflicts_with = "gt")]
        samples: Option<PathBuf>,
        /// Evaluate the ground truth against itself.
        #[arg(long)]
        gt: bool,
        /// Trained evaluator bundle; trained on the train split when absent.
        #[arg(long)]
        evaluator: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Run the oracle and invariant checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(RunConfig::default()),
        }
    }

    fn out_dir(&self) -> Option<PathBuf> {
        let out = self.out.clone()?;
        match std::env::var_os(OUT_ROOT_VAR) {
            Some(root) if out.is_relative() => Some(PathBuf::from(root).join(out)),
            _ => Some(out),
        }
    }

    fn out(&self) -> Result<PathBuf> {
        let out = self.out_dir().context("--out is required")?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }
}

fn finish(command: &str, cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let mut m = Manifest::new(command, cfg.digest(), seed);
    m.record_outputs(out)?;
    m.write(out)?;
    Ok(())
}

fn load_split(data: &Path, split: &str) -> Result<(Vec<plantar_core::synth::SequenceRecord>, Vec<Prepared>)> {
    let recs = read_split(data, split).with_context(|| format!("reading split {split} of {}", data.display()))?;
    if recs.is_empty() {
        bail!("split {split} of {} is empty", data.display());
    }
    let prepared = prepare_all(&recs)?;
    Ok((recs, prepared))
}

fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{v:.8}\n"));
    }
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = common.config()?;
            let out = common.out_dir().context("--out is required")?;
            let summary = build_dataset(&cfg.data, common.seed, &out)?;
            log::info!("dataset: {summary:?}");
            finish("gen-data", &cfg, common.seed, &out)
        }
        Command::PretrainTraj { common, data } => {
            let cfg = common.config()?;
            let (_, items) = load_split(&data, "train")?;
            let out = common.out()?;
            let (set, report) = pretrain_f_traj(&items, &cfg.model, &cfg.training, common.seed)?;
            log::info!("trajectory loss {:.5} -> {:.5}", report.initial(), report.final_loss());
            save_bundle(&out, &cfg, report.curve.len(), None, &[("traj", &set)])?;
            write_loss_curve(&out.join("curve.csv"), &report.curve)?;
            finish("pretrain-traj", &cfg, common.seed, &out)
        }
        Command::PretrainBackbone { common, data } => {
            let cfg = common.config()?;
            let (_, items) = load_split(&data, "train")?;
            let out = common.out()?;
            let items = cache_items(items, None, &caption_encoder(&cfg.model))?;
            let (set, curve) = pretrain_backbone(&items, &cfg, common.seed)?;
            save_bundle(&out, &cfg, curve.len(), None, &[("backbone", &set)])?;
            write_loss_curve(&out.join("curve.csv"), &curve)?;
            finish("pretrain-backbone", &cfg, common.seed, &out)
        }
        Command::Train {
            common,
            data,
            traj,
            backbone,
            mode,
            resume,
        } => {
            let cfg = common.config()?;
            let (_, items) = load_split(&data, "train")?;
            let mat = items[0].mat_size();
            let (_, traj_net) = load_traj(&traj, &cfg, mat)?;
            let (bset, _) = load_backbone(&backbone, &cfg)?;
            let items = cache_items(items, Some(&traj_net), &caption_encoder(&cfg.model))?;
            let mut trainer = Trainer::new(&cfg, &bset, mode, mat, common.seed)?;
            if let Some(dir) = &resume {
                let bundle = Bundle::read(dir)?;
                bundle.ensure_config(&cfg)?;
                if bundle.mode.as_deref() != Some(mode.as_str()) {
                    bail!("cannot resume a {:?} run in mode {}", bundle.mode, mode.as_str());
                }
                trainer.resume_from(&bundle, dir)?;
            }
            let out = common.out()?;
            let remaining = cfg.training.steps.saturating_sub(trainer.steps_done());
            let outcome = run_training(&mut trainer, &items, remaining, cfg.training.checkpoint_every, Some(&out))?;
            if let Some(last) = outcome.curve.last() {
                log::info!("step {} total {:.5}", last.step, last.total);
            }
            save_bundle(&out, &cfg, trainer.steps_done(), Some(mode.as_str()), &[("branch", trainer.branch_set())])?;
            finish("train", &cfg, common.seed, &out)
        }
        Command::Sample {
            common,
            data,
            split,
            traj,
            backbone,
            branch,
            mode,
        } => {
            let cfg = common.config()?;
            let (recs, items) = load_split(&data, &split)?;
            let mat = items[0].mat_size();
            let (_, traj_net) = load_traj(&traj, &cfg, mat)?;
            let (_, backbone) = load_backbone(&backbone, &cfg)?;
            let loaded = branch.as_deref().map(|d| load_branch(d, &cfg, mat)).transpose()?;
            let mode = mode
                .or_else(|| loaded.as_ref().and_then(|l| l.2))
                .unwrap_or(TrainMode::TextOnly);
            let items = cache_items(items, Some(&traj_net), &caption_encoder(&cfg.model))?;
            let motions = synthesize(&backbone, loaded.as_ref().map(|l| &l.1), &items, &cfg, mode, common.seed)?;
            let out = common.out()?;
            let names: Vec<String> = recs.iter().map(|r| r.name.clone()).collect();
            write_samples(&out, mode, &names, &motions)?;
            finish("sample", &cfg, common.seed, &out)
        }
        Command::Eval {
            common,
            data,
            split,
            samples,
            gt,
            evaluator,
            label,
        } => {
            let cfg = common.config()?;
            let recs = read_split(&data, &split)?;
            if recs.is_empty() {
                bail!("split {split} of {} is empty", data.display());
            }
            let (default_label, preds) = if gt {
                ("GT".to_string(), recs.iter().map(|r| r.pose.data().to_owned()).collect())
            } else {
                let dir = samples.context("either --samples or --gt is required")?;
                let (index, motions) = read_samples(&dir)?;
                let by_name: HashMap<&str, usize> = index.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
                let preds = recs
                    .iter()
                    .map(|r| {
                        by_name
                            .get(r.name.as_str())
                            .map(|&i| motions[i].clone())
                            .with_context(|| format!("no sample for {}", r.name))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (index.mode.as_str().to_string(), preds)
            };
            let out = common.out()?;
            let mut set = ParamSet::new(0, candle_core::DType::F32);
            let net = Evaluator::new(set.root(), cfg.eval.evaluator_dim)?;
            match &evaluator {
                Some(dir) => Bundle::read(dir)?.restore(dir, "evaluator", &mut set)?,
                None => {
                    let train = read_split(&data, "train")?;
                    let pairs: Vec<EvalPair> = train
                        .iter()
                        .map(|r| EvalPair {
                            pose: r.pose.data().to_owned(),
                            captions: r.captions.to_vec(),
                        })
                        .collect();
                    let (trained, _) = train_evaluator(&pairs, &cfg.eval, common.seed)?;
                    let dir = out.join("evaluator");
                    save_bundle(&dir, &cfg, cfg.eval.evaluator_steps, None, &[("evaluator", &trained)])?;
                    Bundle::read(&dir)?.restore(&dir, "evaluator", &mut set)?;
                }
            }
            let report = evaluate_set(&label.unwrap_or(default_label), &recs, &preds, Some(&net), &cfg.eval)?;
            let table = metric_table(std::slice::from_ref(&report));
            write_atomic(&out.join("report.jsonl"), format!("{}\n", report.to_json_line()).as_bytes())?;
            write_atomic(&out.join("table.txt"), table.as_bytes())?;
            print!("{table}");
            finish("eval", &cfg, common.seed, &out)
        }
        Command::Selftest { common } => {
            let cfg = common.config()?;
            let checks = selftest::run();
            let mut text = String::new();
            for c in &checks {
                text.push_str(&format!("{} {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            print!("{text}");
            if let Some(out) = common.out_dir() {
                fs::create_dir_all(&out)?;
                write_atomic(&out.join("selftest.txt"), text.as_bytes())?;
                finish("selftest", &cfg, common.seed, &out)?;
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if !failed.is_empty() {
                bail!("selftest failed: {}", failed.join(", "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut reason = String::new();
            for cause in e.chain() {
                let text = cause.to_string().replace('\n', " ");
                if !reason.contains(&text) {
                    if !reason.is_empty() {
                        reason.push_str(": ");
                    }
                    reason.push_str(&text);
                }
            }
            eprintln!("error: {reason}");
            ExitCode::FAILURE
        }
    }
}
