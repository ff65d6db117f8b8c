//! Ablation grids: a list of named config overrides expanded into sequential
//! train + eval runs and one merged results table.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use vlcrit_core::dataio::{dataset_hash_all, read_dataset};
use vlcrit_core::evalsuite::evaluate_split;
use vlcrit_core::runconfig::{RunConfig, RunStamp};
use vlcrit_core::trainer::{select_checkpoint, train};

#[derive(Deserialize)]
struct Grid {
    runs: Vec<GridRun>,
}

#[derive(Deserialize)]
struct GridRun {
    name: String,
    #[serde(default)]
    overrides: toml::Table,
}

fn deep_merge(base: &mut toml::Value, overlay: &toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Apply a grid entry's overrides to the base config document.
pub fn merged_config(base_text: &str, overrides: &toml::Table) -> anyhow::Result<RunConfig> {
    let table: toml::Table = if base_text.trim().is_empty() {
        toml::Table::new()
    } else {
        toml::from_str(base_text).context("parsing base config")?
    };
    let mut doc = toml::Value::Table(table);
    deep_merge(&mut doc, &toml::Value::Table(overrides.clone()));
    Ok(RunConfig::from_toml(&toml::to_string(&doc)?)?)
}

pub fn run_grid(base_text: &str, grid_path: &Path, data: &Path, out: &Path) -> anyhow::Result<()> {
    let grid: Grid = toml::from_str(
        &std::fs::read_to_string(grid_path)
            .with_context(|| format!("reading {}", grid_path.display()))?,
    )?;
    std::fs::create_dir_all(out)?;
    let (train_reader, _) = read_dataset(&data.join("train"))?;
    let (val_reader, _) = read_dataset(&data.join("val"))?;
    let dataset_hash = dataset_hash_all(data)?;

    let mut table = Vec::new();
    for run in &grid.runs {
        let cfg = merged_config(base_text, &run.overrides)?;
        let stamp = RunStamp::of(&cfg);
        let run_dir = out.join(&run.name);
        let (best_model, checkpoints) = train(
            &cfg.critic,
            &cfg.train_config(),
            &train_reader,
            &val_reader,
            Some(&run_dir),
            &dataset_hash,
            &stamp.config_hash,
        )?;
        let best = select_checkpoint(&checkpoints)?;
        // quick held-in grid metric: scene-matched ranking over a task sample
        let (train_tasks, _) = vlcrit_core::dataio::split_tasks(
            &vlcrit_core::taskworld::enumerate_tasks(),
            cfg.data.heldout_every,
        )?;
        let sample: Vec<_> = train_tasks.into_iter().step_by(8).collect();
        let evaluation = evaluate_split(
            &best_model,
            &sample,
            cfg.eval.groups_per_task.min(8),
            cfg.eval.k_failures,
            &[],
            &cfg.trainer.eval_sampling,
            cfg.seed,
            "grid",
        )?;
        println!(
            "{}",
            serde_json::json!({
                "run": run.name,
                "epoch": best.epoch,
                "v2t_xent": best.metrics.v2t_xent,
                "ranking_accuracy": evaluation.ranking_accuracy,
            })
        );
        table.push(serde_json::json!({
            "run": run.name,
            "config_hash": stamp.config_hash,
            "selected_epoch": best.epoch,
            "v2t_xent": best.metrics.v2t_xent,
            "val_ranking_accuracy": best.metrics.ranking_accuracy,
            "val_monotonicity_rate": best.metrics.monotonicity_rate,
            "grid_ranking_accuracy": evaluation.ranking_accuracy,
            "grid_monotonicity_rate": evaluation.monotonicity_rate,
        }));
    }
    let results = out.join("ablate_results.json");
    std::fs::write(&results, serde_json::to_vec_pretty(&table)?)
        .with_context(|| format!("writing {}", results.display()))?;
    println!("{}", serde_json::json!({"results": results}));
    Ok(())
}
