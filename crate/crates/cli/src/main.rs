//! Pipeline command-line entry point.
//!
//! Every artifact embeds the config hash and global seed, so any two runs with
//! equal hashes and seeds produce equal outputs. Failures print one
//! machine-parsable JSON line on stderr and exit nonzero.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use vlcrit_core::critic::load_checkpoint;
use vlcrit_core::dataio::{dataset_hash_all, generate_dataset, read_dataset, read_stamp};
use vlcrit_core::evalsuite::{evaluate_split, export_reward_curves};
use vlcrit_core::rl::{sac_train, RewardSource};
use vlcrit_core::runconfig::{RunConfig, RunStamp};
use vlcrit_core::taskworld::{enumerate_tasks, task_by_id};
use vlcrit_core::trainer::{select_checkpoint, train};

mod ablate;

#[derive(Parser)]
#[command(name = "vlcrit", about = "Language-conditioned video reward model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Run configuration (TOML). Omit to use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<RunConfig> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the episode dataset (train/val/test splits).
    GenerateData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output dataset root.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the reward model and select the best checkpoint.
    TrainCritic {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset root produced by generate-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank/monotonicity/robustness evaluation of a checkpoint.
    EvalCritic {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation split: train, val, test (alias: heldout).
        #[arg(long, default_value = "test")]
        split: String,
        /// Extra perturbation level "brightness,noise", may repeat.
        #[arg(long)]
        perturb: Vec<String>,
        /// Groups per task (defaults to the config's eval section).
        #[arg(long)]
        groups: Option<usize>,
        /// Report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an SAC policy against the sparse or critic-shaped reward.
    TrainPolicy {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        task_id: String,
        /// Reward source: sparse or vlc.
        #[arg(long, default_value = "sparse")]
        reward: String,
        /// Critic checkpoint (required for --reward vlc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scene-matched 1-vs-K trajectory ranking for one task.
    RankTrajectories {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task_id: String,
        #[arg(long)]
        groups: usize,
    },
    /// Export per-episode reward curves (CSV + plot).
    PlotRewards {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root; episodes come from --split.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Number of episodes to plot.
        #[arg(long, default_value_t = 4)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand a grid of config overrides into runs and a merged results table.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// Grid file: [[runs]] name = ... with [runs.overrides...] tables.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn split_dir<'a>(split: &'a str) -> anyhow::Result<&'a str> {
    match split {
        "train" => Ok("train"),
        "val" => Ok("val"),
        "test" | "heldout" => Ok("test"),
        other => bail!("unknown split {other:?}; expected train, val, test or heldout"),
    }
}

fn parse_perturb(spec: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        bail!("perturbation must be \"brightness,noise\", got {spec:?}");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateData { config, out, force } => {
            let cfg = config.load()?;
            let stamp = RunStamp::of(&cfg);
            let summary = generate_dataset(&cfg.data, cfg.seed, &out, &stamp, force)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::TrainCritic { config, data, out } => {
            let cfg = config.load()?;
            let stamp = RunStamp::of(&cfg);
            let recorded = read_stamp(&data)?;
            if recorded.data_hash != stamp.data_hash {
                bail!(
                    "dataset at {} was generated from different data settings \
                     (hash {} != {})",
                    data.display(),
                    recorded.data_hash,
                    stamp.data_hash
                );
            }
            let (train_reader, _) = read_dataset(&data.join("train"))?;
            let (val_reader, _) = read_dataset(&data.join("val"))?;
            let dataset_hash = dataset_hash_all(&data)?;
            let (_best, checkpoints) = train(
                &cfg.critic,
                &cfg.train_config(),
                &train_reader,
                &val_reader,
                Some(&out),
                &dataset_hash,
                &stamp.config_hash,
            )?;
            let best = select_checkpoint(&checkpoints)?;
            let selected = serde_json::json!({
                "epoch": best.epoch,
                "dir": best.dir,
                "v2t_xent": best.metrics.v2t_xent,
                "ranking_accuracy": best.metrics.ranking_accuracy,
                "monotonicity_rate": best.metrics.monotonicity_rate,
                "stamp": stamp,
            });
            std::fs::write(out.join("selected.json"), serde_json::to_vec_pretty(&selected)?)
                .with_context(|| format!("writing {}", out.join("selected.json").display()))?;
            println!("{selected:#}");
        }
        Command::EvalCritic {
            config,
            checkpoint,
            split,
            perturb,
            groups,
            out,
        } => {
            let cfg = config.load()?;
            let (model, _meta) = load_checkpoint(&checkpoint)?;
            let tasks = match split.as_str() {
                // evaluation without a dataset on disk: derive the task split
                "train" | "heldin" => {
                    let (t, _) = vlcrit_core::dataio::split_tasks(&enumerate_tasks(), cfg.data.heldout_every)?;
                    t
                }
                "test" | "heldout" => {
                    let (_, h) = vlcrit_core::dataio::split_tasks(&enumerate_tasks(), cfg.data.heldout_every)?;
                    h
                }
                other => bail!("unknown split {other:?}; expected train/heldin or test/heldout"),
            };
            let mut perturbations = cfg.eval.perturbations.clone();
            for p in &perturb {
                perturbations.push(parse_perturb(p)?);
            }
            let sampling = cfg.trainer.eval_sampling;
            let evaluation = evaluate_split(
                &model,
                &tasks,
                groups.unwrap_or(cfg.eval.groups_per_task),
                cfg.eval.k_failures,
                &perturbations,
                &sampling,
                cfg.seed,
                &split,
            )?;
            let report = serde_json::json!({
                "stamp": RunStamp::of(&cfg),
                "evaluation": evaluation,
            });
            std::fs::write(&out, serde_json::to_vec_pretty(&report)?)
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}",
                serde_json::json!({
                    "split": evaluation.split,
                    "ranking_accuracy": evaluation.ranking_accuracy,
                    "monotonicity_rate": evaluation.monotonicity_rate,
                    "n_groups": evaluation.n_groups,
                })
            );
        }
        Command::TrainPolicy {
            config,
            task_id,
            reward,
            checkpoint,
            out,
        } => {
            let cfg = config.load()?;
            let task = task_by_id(&task_id)?;
            let mut rl_cfg = cfg.rl_config();
            let critic = match reward.as_str() {
                "sparse" => {
                    rl_cfg.reward_source = RewardSource::Sparse;
                    None
                }
                "vlc" => {
                    rl_cfg.reward_source = RewardSource::VlcPlusSparse;
                    let dir = checkpoint
                        .as_ref()
                        .ok_or_else(|| anyhow::anyhow!("--reward vlc requires --checkpoint"))?;
                    Some(load_checkpoint(dir)?.0)
                }
                other => bail!("unknown reward source {other:?}; expected sparse or vlc"),
            };
            let (policy, curve) = sac_train(&task, &rl_cfg, critic.as_ref())?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            curve.save_jsonl(&out.join("curve.jsonl"))?;
            let meta = serde_json::json!({
                "task_id": task.task_id,
                "reward": reward,
                "converged_at": curve.converged_at,
                "stamp": RunStamp::of(&cfg),
            });
            policy.save(&out, &meta)?;
            println!("{meta:#}");
        }
        Command::RankTrajectories {
            config,
            checkpoint,
            task_id,
            groups,
        } => {
            if groups == 0 {
                bail!("--groups must be positive");
            }
            let cfg = config.load()?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let task = task_by_id(&task_id)?;
            let gs = vlcrit_core::evalsuite::build_primitive_groups(
                &task,
                groups,
                cfg.eval.k_failures,
                cfg.seed,
            )?;
            let acc = vlcrit_core::evalsuite::ranking_accuracy(
                &model,
                &gs,
                &cfg.trainer.eval_sampling,
            )?;
            println!(
                "{}",
                serde_json::json!({"task_id": task.task_id, "groups": groups, "accuracy": acc})
            );
        }
        Command::PlotRewards {
            config,
            checkpoint,
            data,
            split,
            limit,
            out,
        } => {
            let cfg = config.load()?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let (reader, _) = read_dataset(&data.join(split_dir(&split)?))?;
            let episodes: Vec<_> = (0..reader.len().min(limit))
                .map(|i| reader.load(i))
                .collect::<vlcrit_core::Result<_>>()?;
            let csvs = export_reward_curves(&model, &episodes, &cfg.trainer.eval_sampling, &out)?;
            println!(
                "{}",
                serde_json::json!({"episodes": csvs.len(), "out": out})
            );
        }
        Command::Ablate {
            config,
            grid,
            data,
            out,
        } => {
            let base_text = match &config.config {
                Some(p) => std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?,
                None => String::new(),
            };
            ablate::run_grid(&base_text, &grid, &data, &out)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
