use crate::taskworld::TaskSpec;
use crate::{Error, Result};

/// Partition alphabetically sorted tasks: every `k`-th task (indices k-1,
/// 2k-1, ...) is held out, the rest train. Errors on unsorted input.
pub fn split_tasks(tasks: &[TaskSpec], k: usize) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>)> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("split period {k} must be >= 2")));
    }
    for w in tasks.windows(2) {
        if w[0].task_id >= w[1].task_id {
            return Err(Error::InvalidArgument(format!(
                "tasks must be sorted alphabetically by id; {:?} precedes {:?}",
                w[0].task_id, w[1].task_id
            )));
        }
    }
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        if (i + 1) % k == 0 {
            heldout.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok((train, heldout))
}
