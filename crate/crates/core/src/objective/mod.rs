//! Loss functions: symmetric contrastive cross-entropy over (caption, video)
//! score grids, the sequential ranking hinge on per-prefix scores of
//! successful videos, their weighted combination, and a binary-classification
//! baseline objective.
//!
//! Failure videos appear only as extra candidate columns in the text-to-video
//! direction; they have no captions, so they are never anchors and never enter
//! the ranking term.
//!
//! Each operation exists twice: a plain numeric form (the public contract) and
//! a graph form used for training. A test pins them to each other.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::graph::{Graph, NodeId};
use crate::nn::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Vlc,
    ContrastiveOnly,
    BinaryClassification,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Vlc => "vlc",
            ObjectiveKind::ContrastiveOnly => "contrastive_only",
            ObjectiveKind::BinaryClassification => "binary_classification",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "vlc" => Ok(ObjectiveKind::Vlc),
            "contrastive_only" => Ok(ObjectiveKind::ContrastiveOnly),
            "binary_classification" => Ok(ObjectiveKind::BinaryClassification),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Ranking-term weight.
    pub alpha: f64,
    pub objective: ObjectiveKind,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha: 33.0,
            objective: ObjectiveKind::Vlc,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        Ok(())
    }

    /// `contrastive_only` is the same objective with the ranking term off.
    pub fn effective_alpha(&self) -> f64 {
        match self.objective {
            ObjectiveKind::ContrastiveOnly => 0.0,
            _ => self.alpha,
        }
    }
}

/// Final-prefix score grids for one training batch.
#[derive(Debug, Clone)]
pub struct BatchScores {
    /// Caption i vs success video j.
    pub success_matrix: Array2<f64>,
    /// Caption i vs failure video j (zero columns when no failures).
    pub failure_matrix: Array2<f64>,
    /// Per-prefix scores of success video i against its own caption.
    pub prefix_scores: Vec<Vec<f64>>,
}

// ---- numeric ops ----

/// `-(1/N) Σ_i log softmax(row_i)[pos_i]`, with max-subtraction.
pub fn xent_directional(score_rows: &Array2<f64>, positive_index: &[usize]) -> Result<f64> {
    let (n, m) = score_rows.dim();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty score matrix".into()));
    }
    assert_eq!(positive_index.len(), n, "one positive per row");
    let mut total = 0.0;
    for (i, &pos) in positive_index.iter().enumerate() {
        assert!(pos < m, "positive index {pos} outside row of width {m}");
        let row = score_rows.row(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[pos];
    }
    Ok(total / n as f64)
}

/// Mean of the text-to-video direction (candidates: success and failure
/// videos) and the video-to-text direction (success videos vs success
/// captions only).
pub fn symmetric_xent(batch: &BatchScores) -> Result<f64> {
    let n_s = batch.success_matrix.nrows();
    if n_s == 0 {
        return Err(Error::InvalidArgument(
            "symmetric cross-entropy needs at least one success pair".into(),
        ));
    }
    let n_f = batch.failure_matrix.ncols();
    let mut t2v_rows = Array2::zeros((n_s, n_s + n_f));
    for i in 0..n_s {
        for j in 0..n_s {
            t2v_rows[[i, j]] = batch.success_matrix[[i, j]];
        }
        for j in 0..n_f {
            t2v_rows[[i, n_s + j]] = batch.failure_matrix[[i, j]];
        }
    }
    let diag: Vec<usize> = (0..n_s).collect();
    let t2v = xent_directional(&t2v_rows, &diag)?;
    let v2t_rows = batch.success_matrix.t().to_owned();
    let v2t = xent_directional(&v2t_rows, &diag)?;
    Ok(0.5 * (t2v + v2t))
}

/// Hinge on any decrease between consecutive prefix scores.
pub fn ranking_loss(prefix_scores: &[f64]) -> f64 {
    assert!(
        !prefix_scores.is_empty(),
        "ranking loss needs at least one prefix score"
    );
    prefix_scores
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .sum()
}

/// Contrastive term plus `alpha / N_s` times the summed ranking hinges.
pub fn total_loss(batch: &BatchScores, cfg: &ObjectiveConfig) -> Result<f64> {
    if cfg.objective == ObjectiveKind::BinaryClassification {
        return Err(Error::InvalidArgument(
            "total_loss covers the contrastive objectives; use binary_classification_loss".into(),
        ));
    }
    cfg.validate()?;
    let n_s = batch.success_matrix.nrows();
    let sym = symmetric_xent(batch)?;
    let alpha = cfg.effective_alpha();
    let rank: f64 = batch.prefix_scores.iter().map(|p| ranking_loss(p)).sum();
    Ok(sym + alpha / n_s as f64 * rank)
}

/// Mean binary cross-entropy of `sigmoid(score)` against labels in {0, 1}.
pub fn binary_classification_loss(pairs: &[(f64, u8)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty classification batch".into()));
    }
    let mut total = 0.0;
    for &(score, label) in pairs {
        if label > 1 {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside {{0, 1}}"
            )));
        }
        let softplus = score.max(0.0) + (1.0 + (-score.abs()).exp()).ln();
        total += softplus - score * label as f64;
    }
    Ok(total / pairs.len() as f64)
}

// ---- graph ops (training path) ----

/// Score-grid nodes for one batch; pair layout is caption-major over
/// `[success videos, failure videos]`.
pub struct BatchScoreNodes {
    /// `[N_s, N_s + N_f]`: caption i vs all videos.
    pub t2v: NodeId,
    /// `[N_s, N_s]`: caption i vs success video j.
    pub success: NodeId,
    /// Per success video i: `[T_i, 1]` prefix scores vs its own caption.
    pub prefix: Vec<NodeId>,
}

pub fn xent_directional_node<R: Real>(
    g: &mut Graph<R>,
    scores: NodeId,
    positive_index: Vec<usize>,
) -> NodeId {
    let lse = g.logsumexp_rows(scores);
    let pos = g.select_one_per_row(scores, positive_index);
    let diff = g.sub(lse, pos);
    g.mean_all(diff)
}

pub fn ranking_loss_node<R: Real>(g: &mut Graph<R>, prefix: NodeId) -> NodeId {
    let t = g.value(prefix).dim().0;
    if t < 2 {
        return g.scalar(R::zero());
    }
    let a = g.select_rows(prefix, (0..t - 1).collect());
    let b = g.select_rows(prefix, (1..t).collect());
    let d = g.sub(a, b);
    let h = g.relu(d);
    g.sum_all(h)
}

pub fn symmetric_xent_node<R: Real>(g: &mut Graph<R>, nodes: &BatchScoreNodes) -> NodeId {
    let n_s = g.value(nodes.success).dim().0;
    let diag: Vec<usize> = (0..n_s).collect();
    let t2v = xent_directional_node(g, nodes.t2v, diag.clone());
    let v2t_rows = g.transpose(nodes.success);
    let v2t = xent_directional_node(g, v2t_rows, diag);
    let s = g.add(t2v, v2t);
    g.scale(s, R::from_f64(0.5))
}

pub fn total_loss_node<R: Real>(
    g: &mut Graph<R>,
    nodes: &BatchScoreNodes,
    cfg: &ObjectiveConfig,
) -> NodeId {
    let n_s = g.value(nodes.success).dim().0;
    let sym = symmetric_xent_node(g, nodes);
    let alpha = cfg.effective_alpha();
    if alpha == 0.0 {
        return sym;
    }
    let ranks: Vec<NodeId> = nodes
        .prefix
        .iter()
        .map(|&p| ranking_loss_node(g, p))
        .collect();
    let stacked = g.concat_rows(&ranks);
    let total_rank = g.sum_all(stacked);
    let weighted = g.scale(total_rank, R::from_f64(alpha / n_s as f64));
    g.add(sym, weighted)
}

/// Mean BCE-with-logits over `[N, 1]` scores.
pub fn bce_with_logits_node<R: Real>(g: &mut Graph<R>, scores: NodeId, labels: &[f64]) -> NodeId {
    let n = g.value(scores).dim().0;
    assert_eq!(n, labels.len());
    let y = g.constant(Array2::from_shape_vec((n, 1), labels.iter().map(|&l| R::from_f64(l)).collect()).unwrap());
    let sp = g.softplus(scores);
    let xy = g.mul(scores, y);
    let diff = g.sub(sp, xy);
    g.mean_all(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn simple_batch() -> BatchScores {
        BatchScores {
            success_matrix: arr2(&[[2.0, 0.0], [0.0, 2.0]]),
            failure_matrix: Array2::zeros((2, 0)),
            prefix_scores: vec![vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0]],
        }
    }

    #[test]
    fn xent_single_candidate_is_zero() {
        let m = arr2(&[[3.7]]);
        assert_eq!(xent_directional(&m, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn xent_uniform_is_log_n() {
        let m = arr2(&[[0.0, 0.0], [0.0, 0.0]]);
        let loss = xent_directional(&m, &[0, 1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn xent_diagonal_two() {
        let m = arr2(&[[2.0, 0.0], [0.0, 2.0]]);
        let loss = xent_directional(&m, &[0, 1]).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn xent_empty_rejected() {
        let m = Array2::<f64>::zeros((0, 0));
        assert!(xent_directional(&m, &[]).is_err());
    }

    #[test]
    fn symmetric_xent_examples() {
        // single pair, no failures: both directions degenerate
        let b = BatchScores {
            success_matrix: arr2(&[[5.0]]),
            failure_matrix: Array2::zeros((1, 0)),
            prefix_scores: vec![vec![5.0]],
        };
        assert_eq!(symmetric_xent(&b).unwrap(), 0.0);

        let b = simple_batch();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((symmetric_xent(&b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn far_negative_failure_column_is_inert() {
        let base = simple_batch();
        let mut with_fail = base.clone();
        with_fail.failure_matrix = arr2(&[[-1e4], [-1e4]]);
        let a = symmetric_xent(&base).unwrap();
        let b = symmetric_xent(&with_fail).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn failure_columns_never_reduce_t2v_loss() {
        let base = simple_batch();
        let diag = vec![0, 1];
        let t2v_base = xent_directional(&base.success_matrix, &diag).unwrap();
        for fail_score in [-3.0, 0.0, 1.0, 5.0] {
            let rows = arr2(&[[2.0, 0.0, fail_score], [0.0, 2.0, fail_score]]);
            let t2v = xent_directional(&rows, &diag).unwrap();
            assert!(t2v >= t2v_base - 1e-12, "failure col {fail_score} reduced loss");
        }
    }

    #[test]
    fn ranking_loss_examples() {
        assert_eq!(ranking_loss(&[0.0, 1.0, 2.0, 3.0]), 0.0);
        assert!((ranking_loss(&[3.0, 2.0, 1.0]) - 2.0).abs() < 1e-12);
        assert!((ranking_loss(&[0.0, 0.5, 0.3, 0.9]) - 0.2).abs() < 1e-12);
        assert_eq!(ranking_loss(&[7.0]), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let b = simple_batch();
        // all prefixes non-decreasing: hinge is zero at any alpha
        let vlc = ObjectiveConfig { alpha: 33.0, objective: ObjectiveKind::Vlc };
        let a0 = ObjectiveConfig { alpha: 33.0, objective: ObjectiveKind::ContrastiveOnly };
        assert!((total_loss(&b, &vlc).unwrap() - symmetric_xent(&b).unwrap()).abs() < 1e-12);
        assert!((total_loss(&b, &a0).unwrap() - symmetric_xent(&b).unwrap()).abs() < 1e-12);

        // N_s = 1, prefix [1, 0], xent 0 -> 33
        let b = BatchScores {
            success_matrix: arr2(&[[4.0]]),
            failure_matrix: Array2::zeros((1, 0)),
            prefix_scores: vec![vec![1.0, 0.0]],
        };
        assert!((total_loss(&b, &vlc).unwrap() - 33.0).abs() < 1e-9);
    }

    #[test]
    fn bce_examples() {
        assert!(binary_classification_loss(&[(20.0, 1)]).unwrap() <= 1e-8);
        assert!((binary_classification_loss(&[(0.0, 0)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((binary_classification_loss(&[(0.0, 1)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let sym = binary_classification_loss(&[(2.0, 1), (-2.0, 0)]).unwrap();
        assert!((sym - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!(binary_classification_loss(&[(0.0, 2)]).is_err());
        assert!(binary_classification_loss(&[]).is_err());
    }

    #[test]
    fn graph_and_numeric_losses_agree() {
        let mut rng = crate::seeds::rng_from(9);
        use rand::Rng;
        for _ in 0..10 {
            let n_s = rng.random_range(1..5usize);
            let n_f = rng.random_range(0..4usize);
            let success = Array2::from_shape_fn((n_s, n_s), |_| rng.random_range(-2.0..2.0));
            let failure = Array2::from_shape_fn((n_s, n_f), |_| rng.random_range(-2.0..2.0));
            let prefixes: Vec<Vec<f64>> = (0..n_s)
                .map(|_| {
                    let t = rng.random_range(1..6usize);
                    (0..t).map(|_| rng.random_range(-2.0..2.0)).collect()
                })
                .collect();
            let batch = BatchScores {
                success_matrix: success.clone(),
                failure_matrix: failure.clone(),
                prefix_scores: prefixes.clone(),
            };
            let cfg = ObjectiveConfig { alpha: 33.0, objective: ObjectiveKind::Vlc };
            let numeric = total_loss(&batch, &cfg).unwrap();

            let mut g = Graph::<f64>::new();
            let mut t2v = Array2::zeros((n_s, n_s + n_f));
            for i in 0..n_s {
                for j in 0..n_s {
                    t2v[[i, j]] = success[[i, j]];
                }
                for j in 0..n_f {
                    t2v[[i, n_s + j]] = failure[[i, j]];
                }
            }
            let t2v = g.constant(t2v);
            let succ = g.constant(success);
            let prefix_nodes: Vec<_> = prefixes
                .iter()
                .map(|p| g.constant(Array2::from_shape_vec((p.len(), 1), p.clone()).unwrap()))
                .collect();
            let nodes = BatchScoreNodes { t2v, success: succ, prefix: prefix_nodes };
            let node = total_loss_node(&mut g, &nodes, &cfg);
            let graph_val = g.scalar_value(node);
            assert!((numeric - graph_val).abs() < 1e-9, "{numeric} vs {graph_val}");
        }
    }

    proptest! {
        #[test]
        fn ranking_nonneg_zero_iff_nondecreasing(scores in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
            let r = ranking_loss(&scores);
            prop_assert!(r >= 0.0);
            let nondecreasing = scores.windows(2).all(|w| w[0] <= w[1]);
            prop_assert_eq!(r == 0.0, nondecreasing);
        }

        #[test]
        fn ranking_shift_invariant(scores in proptest::collection::vec(-5.0f64..5.0, 1..12), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            prop_assert!((ranking_loss(&scores) - ranking_loss(&shifted)).abs() < 1e-9);
        }

        #[test]
        fn xent_row_shift_invariant(c in -10.0f64..10.0) {
            let m = arr2(&[[1.0, -0.5, 0.3], [0.2, 0.9, -1.0]]);
            let mut shifted = m.clone();
            for v in shifted.row_mut(0).iter_mut() {
                *v += c;
            }
            let a = xent_directional(&m, &[0, 1]).unwrap();
            let b = xent_directional(&shifted, &[0, 1]).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn symmetric_xent_permutation_equivariant(perm_seed in 0u64..50) {
            use rand::seq::SliceRandom;
            let mut rng = crate::seeds::rng_from(perm_seed);
            let n_s = 4;
            let success = Array2::from_shape_fn((n_s, n_s), |(i, j)| ((i * 31 + j * 7) % 13) as f64 * 0.3 - 1.5);
            let failure = Array2::from_shape_fn((n_s, 2), |(i, j)| ((i * 17 + j * 5) % 11) as f64 * 0.2 - 1.0);
            let prefixes: Vec<Vec<f64>> = (0..n_s).map(|i| vec![i as f64, i as f64 + 0.5]).collect();
            let base = BatchScores {
                success_matrix: success.clone(),
                failure_matrix: failure.clone(),
                prefix_scores: prefixes.clone(),
            };
            let mut order: Vec<usize> = (0..n_s).collect();
            order.shuffle(&mut rng);
            // permute captions and success videos together
            let mut p_success = Array2::zeros((n_s, n_s));
            let mut p_failure = Array2::zeros((n_s, 2));
            for i in 0..n_s {
                for j in 0..n_s {
                    p_success[[i, j]] = success[[order[i], order[j]]];
                }
                for j in 0..2 {
                    p_failure[[i, j]] = failure[[order[i], j]];
                }
            }
            let permuted = BatchScores {
                success_matrix: p_success,
                failure_matrix: p_failure,
                prefix_scores: order.iter().map(|&i| prefixes[i].clone()).collect(),
            };
            let a = symmetric_xent(&base).unwrap();
            let b = symmetric_xent(&permuted).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
