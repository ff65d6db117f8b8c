//! Full dataset construction: expert calibration gate, task split, episode
//! generation (expert successes + corrupted-rollout failures), and
//! train/val/test manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::split_tasks;
use super::store::{DatasetWriter, SplitTag};
use crate::runconfig::{DataConfig, RunStamp};
use crate::seeds::child_seed_str;
use crate::taskworld::{
    corrupt_policy, enumerate_tasks, expert_success_rate, generate_episode, EpisodeRecord,
    ExpertPolicy, TaskSpec,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub train_tasks: usize,
    pub heldout_tasks: usize,
}

fn expert_successes(task: &TaskSpec, n: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        let ep_seed = child_seed_str(seed, "success", &format!("{}-{attempt}", task.task_id));
        attempt += 1;
        if attempt > 20 * n as u64 {
            return Err(Error::InvalidArgument(format!(
                "expert cannot produce {n} successes on {}",
                task.task_id
            )));
        }
        let ep = generate_episode(task, &mut ExpertPolicy, ep_seed)?;
        if ep.success {
            out.push(ep);
        }
    }
    Ok(out)
}

fn corrupted_failures(task: &TaskSpec, n: usize, p: f64, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        let tag = format!("{}-{attempt}", task.task_id);
        let ep_seed = child_seed_str(seed, "failure", &tag);
        let policy_seed = child_seed_str(seed, "failure-policy", &tag);
        attempt += 1;
        if attempt > 50 * n as u64 {
            return Err(Error::InvalidArgument(format!(
                "corrupted rollouts cannot produce {n} failures on {}",
                task.task_id
            )));
        }
        let mut policy = corrupt_policy(ExpertPolicy, p, policy_seed)?;
        let ep = generate_episode(task, &mut policy, ep_seed)?;
        if !ep.success {
            out.push(ep);
        }
    }
    Ok(out)
}

/// Generate the full dataset under `root` (`train/`, `val/`, `test/`).
///
/// Runs the expert calibration gate first, then splits tasks (every k-th held
/// out), generates per-task successes and failures, and diverts a fraction of
/// training-task episodes (by episode, not by task) into the validation split.
pub fn generate_dataset(
    cfg: &DataConfig,
    seed: u64,
    root: &Path,
    stamp: &RunStamp,
    force: bool,
) -> Result<DatasetSummary> {
    if root.exists() && root.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "output directory {} is not empty (pass force to overwrite)",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    let tasks = enumerate_tasks();
    for task in &tasks {
        let rate = expert_success_rate(task, cfg.expert_gate_resets);
        if rate < cfg.expert_gate {
            return Err(Error::InvalidArgument(format!(
                "expert calibration gate failed on {}: {rate:.3} < {}",
                task.task_id, cfg.expert_gate
            )));
        }
    }
    let (train_tasks, heldout_tasks) = split_tasks(&tasks, cfg.heldout_every)?;

    let mut train = DatasetWriter::create(&root.join("train"), SplitTag::Train)?;
    let mut val = DatasetWriter::create(&root.join("val"), SplitTag::Val)?;
    let mut test = DatasetWriter::create(&root.join("test"), SplitTag::Test)?;
    let val_every = (1.0 / cfg.val_fraction.max(1e-9)).round() as usize;

    let mut counts = DatasetSummary {
        train: 0,
        val: 0,
        test: 0,
        train_tasks: train_tasks.len(),
        heldout_tasks: heldout_tasks.len(),
    };
    for task in &train_tasks {
        let succ = expert_successes(task, cfg.successes_per_task, seed)?;
        let fail = corrupted_failures(task, cfg.failures_per_task, cfg.corrupt_prob, seed)?;
        // the every-k rule applies within successes and failures separately so
        // both kinds appear in validation
        for list in [&succ, &fail] {
            for (i, ep) in list.iter().enumerate() {
                if val_every > 0 && i % val_every == val_every - 1 {
                    val.append(ep)?;
                    counts.val += 1;
                } else {
                    train.append(ep)?;
                    counts.train += 1;
                }
            }
        }
    }
    for task in &heldout_tasks {
        let succ = expert_successes(task, cfg.successes_per_task, seed)?;
        let fail = corrupted_failures(task, cfg.failures_per_task, cfg.corrupt_prob, seed)?;
        for ep in succ.iter().chain(fail.iter()) {
            test.append(ep)?;
            counts.test += 1;
        }
    }
    train.finish()?;
    val.finish()?;
    test.finish()?;
    let stamp_path = root.join("run.json");
    std::fs::write(&stamp_path, serde_json::to_vec_pretty(stamp)?)
        .map_err(|e| Error::io(&stamp_path, e))?;
    Ok(counts)
}

/// Read back the provenance stamp of a generated dataset root.
pub fn read_stamp(root: &Path) -> Result<RunStamp> {
    let p = root.join("run.json");
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Combined content hash over the three split manifests.
pub fn dataset_hash_all(root: &Path) -> Result<String> {
    let mut combined = String::new();
    for split in ["train", "val", "test"] {
        combined.push_str(&super::store::dataset_hash(&root.join(split))?);
    }
    Ok(super::store::hex_digest(combined.as_bytes()))
}
