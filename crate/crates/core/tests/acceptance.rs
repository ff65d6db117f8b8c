//! Acceptance suite, part 1: exact, deterministic property gates.
//!
//! Each criterion prints one PASS line when its assertions hold (failures
//! panic, so a printed line means the criterion passed). The statistical
//! desk-scale gates live in `acceptance_stat.rs`.

use ndarray::{arr2, Array2};
use vlcrit_core::critic::{tokenize, CriticConfig, CriticModel, TokenizedCaption, Vocab};
use vlcrit_core::dataio::{
    read_dataset, subsample_indices, write_dataset, FrameSampleConfig, SampleMode, SplitTag,
};
use vlcrit_core::nn::ParamStore;
use vlcrit_core::objective::{
    ranking_loss, symmetric_xent, BatchScores, ObjectiveConfig, ObjectiveKind,
};
use vlcrit_core::trainer::contrastive_loss_graph;
use vlcrit_core::reward_adapter::{combine, NormalizerState, RewardCombinerConfig};
use vlcrit_core::seeds::rng_from;
use vlcrit_core::taskworld::{
    corrupt_policy, enumerate_tasks, generate_episode, ExpertPolicy, Frame,
};

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = std::time::Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}

/// Criterion 1: contrastive loss arithmetic.
#[test]
fn acceptance_01_loss_arithmetic() {
    let ((), secs) = timed(|| {
        let diag = BatchScores {
            success_matrix: arr2(&[[2.0, 0.0], [0.0, 2.0]]),
            failure_matrix: Array2::zeros((2, 0)),
            prefix_scores: vec![vec![0.0], vec![0.0]],
        };
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((symmetric_xent(&diag).unwrap() - expected).abs() < 1e-6);

        for n in [2usize, 4, 8] {
            let uniform = BatchScores {
                success_matrix: Array2::zeros((n, n)),
                failure_matrix: Array2::zeros((n, 0)),
                prefix_scores: vec![vec![0.0]; n],
            };
            assert!((symmetric_xent(&uniform).unwrap() - (n as f64).ln()).abs() < 1e-6);
        }

        let single = BatchScores {
            success_matrix: arr2(&[[3.7]]),
            failure_matrix: Array2::zeros((1, 0)),
            prefix_scores: vec![vec![0.0]],
        };
        assert!(symmetric_xent(&single).unwrap().abs() < 1e-6);
    });
    assert!(secs < 1.0, "criterion 1 must finish within 1 s, took {secs:.3}");
    println!("ACCEPTANCE 01 loss-arithmetic: PASS ({secs:.3}s)");
}

/// Criterion 2: ranking hinge values.
#[test]
fn acceptance_02_ranking_hinge() {
    let ((), secs) = timed(|| {
        assert!(ranking_loss(&[0.0, 1.0, 2.0, 3.0]).abs() < 1e-9);
        assert!((ranking_loss(&[3.0, 2.0, 1.0]) - 2.0).abs() < 1e-9);
        assert!((ranking_loss(&[0.0, 0.5, 0.3, 0.9]) - 0.2).abs() < 1e-9);
    });
    assert!(secs < 1.0);
    println!("ACCEPTANCE 02 ranking-hinge: PASS ({secs:.3}s)");
}

fn tiny_frame(rng: &mut rand_chacha::ChaCha8Rng, size: usize) -> Frame {
    use rand::Rng;
    Frame::from_shape_fn((size, size, 3), |_| rng.random_range(0.0..1.0))
}

/// Criterion 3: analytic gradients of the full objective against central
/// finite differences on a tiny f64 model (d=8, K=3, N_s=2, N_f=1).
#[test]
fn acceptance_03_gradient_check() {
    let ((max_rel, n_params), secs) = timed(|| {
        let cfg = CriticConfig {
            embed_dim: 8,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 1,
            temporal_heads: 2,
            frame_patch: 8,
            image_size: 16,
            max_frames: 12,
            ..Default::default()
        };
        let vocab = Vocab::build(enumerate_tasks().iter().take(6).map(|t| t.caption.as_str()));
        let model = CriticModel::<f64>::init(cfg, vocab, 42).unwrap();
        let mut rng = rng_from(7);
        let videos: Vec<Vec<Frame>> = (0..3).map(|_| (0..3).map(|_| tiny_frame(&mut rng, 16)).collect()).collect();
        let captions = [
            "push the red square to the left goal",
            "reach the blue circle",
        ];
        let objective = ObjectiveConfig {
            alpha: 33.0,
            objective: ObjectiveKind::Vlc,
        };

        let toks: Vec<TokenizedCaption> = captions
            .iter()
            .map(|c| tokenize(c, &model.vocab).unwrap())
            .collect();
        let succ: Vec<&[Frame]> = videos[..2].iter().map(|v| v.as_slice()).collect();
        let fail: Vec<&[Frame]> = videos[2..].iter().map(|v| v.as_slice()).collect();
        let loss_of = |params: &ParamStore<f64>| -> f64 {
            let m = CriticModel::from_store(model.cfg.clone(), model.vocab.clone(), params.clone())
                .unwrap();
            let (g, node) = contrastive_loss_graph(&m, &toks, &succ, &fail, &objective).unwrap();
            g.scalar_value(node)
        };

        // analytic gradients through the real training-loss builder
        let (g, node) = contrastive_loss_graph(&model, &toks, &succ, &fail, &objective).unwrap();
        let grads = g.backward(node);

        let mut max_rel: f64 = 0.0;
        let mut n_params = 0usize;
        let h = 1e-5;
        for pid in model.params.ids() {
            let dim = model.params.value(pid).dim();
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    n_params += 1;
                    let mut plus = model.params.clone();
                    plus.value_mut(pid)[[i, j]] += h;
                    let fp = loss_of(&plus);
                    let mut minus = model.params.clone();
                    minus.value_mut(pid)[[i, j]] -= h;
                    let fm = loss_of(&minus);
                    let numeric = (fp - fm) / (2.0 * h);
                    let analytic = grads.get(pid).map(|g| g[[i, j]]).unwrap_or(0.0);
                    let rel = (analytic - numeric).abs()
                        / analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        rel < 1e-4,
                        "param {} [{i},{j}]: analytic {analytic} vs numeric {numeric} (rel {rel})",
                        model.params.name(pid)
                    );
                    max_rel = max_rel.max(rel);
                }
            }
        }
        (max_rel, n_params)
    });
    assert!(secs < 60.0, "criterion 3 must finish within 1 min, took {secs:.1}");
    println!(
        "ACCEPTANCE 03 gradient-check: PASS (max rel err {max_rel:.2e} over {n_params} params, {secs:.1}s)"
    );
}

/// Criterion 4: one causally masked pass equals per-prefix recomputation.
#[test]
fn acceptance_04_causal_prefix_equivalence() {
    let ((max_diff, n_pairs), secs) = timed(|| {
        let cfg = CriticConfig {
            embed_dim: 32,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 2,
            temporal_heads: 4,
            frame_patch: 16,
            ..Default::default()
        };
        let vocab = Vocab::build(enumerate_tasks().iter().map(|t| t.caption.as_str()));
        let model = CriticModel::<f32>::init(cfg, vocab, 3).unwrap();
        let tasks = enumerate_tasks();
        let mut rng = rng_from(11);
        use rand::Rng;
        let mut max_diff: f64 = 0.0;
        let mut n_pairs = 0;
        for k in 0..50u64 {
            let task = &tasks[rng.random_range(0..tasks.len())];
            let ep = generate_episode(task, &mut ExpertPolicy, 1000 + k).unwrap();
            let t_len = ep.frames.len();
            let idx = subsample_indices(t_len, &FrameSampleConfig::deterministic(12), 0).unwrap();
            let frames: Vec<Frame> = idx.into_iter().map(|i| ep.frames[i].clone()).collect();
            let caption = &tasks[rng.random_range(0..tasks.len())].caption;
            let one = model.score_prefixes(&frames, caption).unwrap();
            let reference = model.score_prefixes_reference(&frames, caption).unwrap();
            for (a, b) in one.scores.iter().zip(reference.scores.iter()) {
                max_diff = max_diff.max((a - b).abs());
                n_pairs += 1;
            }
            assert!(max_diff < 1e-5, "pair {k}: max abs diff {max_diff}");
        }
        (max_diff, n_pairs)
    });
    assert!(secs < 60.0);
    println!(
        "ACCEPTANCE 04 causal-prefix-equivalence: PASS (max abs diff {max_diff:.2e} over {n_pairs} prefixes, {secs:.1}s)"
    );
}

/// Criterion 6: reward adapter exactness (offset zero, variance-scale oracle,
/// combination weights).
#[test]
fn acceptance_06_reward_adapter() {
    let ((), secs) = timed(|| {
        // independent reference implementation of the parallel-variance update
        struct Oracle {
            mean: f64,
            var: f64,
            count: f64,
            ret: f64,
            gamma: f64,
        }
        impl Oracle {
            fn scale(&mut self, r: f64) -> f64 {
                self.ret = self.gamma * self.ret + r;
                let (m_a, m_b) = (self.var * self.count, 0.0);
                let tot = self.count + 1.0;
                let delta = self.ret - self.mean;
                let m2 = m_a + m_b + delta * delta * self.count * 1.0 / tot;
                self.mean += delta / tot;
                self.var = m2 / tot;
                self.count = tot;
                r / (self.var + 1e-8).sqrt()
            }
        }
        let mut oracle = Oracle {
            mean: 0.0,
            var: 1.0,
            count: 1e-4,
            ret: 0.0,
            gamma: 0.9,
        };
        let expected: Vec<f64> = vec![oracle.scale(1.0), oracle.scale(1.0)];
        // 4 significant figures against the spec-stated values
        assert!((expected[0] - 70.71).abs() / 70.71 < 5e-4);
        assert!((expected[1] - 2.221).abs() / 2.221 < 5e-4);

        let mut state = NormalizerState::new(0.9);
        let got = [state.scale(1.0).unwrap(), state.scale(1.0).unwrap()];
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() / e.abs() < 1e-9, "{g} vs oracle {e}");
        }

        assert_eq!(combine(0.2, 1.0, &RewardCombinerConfig::default()), 50.2);

        // first emitted reward of every episode is exactly zero
        let mut buffer = vlcrit_core::reward_adapter::EpisodeBuffer::new("caption");
        assert_eq!(vlcrit_core::reward_adapter::offset(&mut buffer, 3.7), 0.0);
        for episode in 0..5 {
            let mut b = vlcrit_core::reward_adapter::EpisodeBuffer::new("caption");
            let first = vlcrit_core::reward_adapter::offset(&mut b, episode as f64 * 1.3 - 2.0);
            assert_eq!(first, 0.0);
        }
    });
    assert!(secs < 1.0);
    println!("ACCEPTANCE 06 reward-adapter: PASS ({secs:.3}s)");
}

/// Criterion 7: subsampling indices.
#[test]
fn acceptance_07_subsampling() {
    let ((), secs) = timed(|| {
        let det = FrameSampleConfig::deterministic(12);
        assert_eq!(
            subsample_indices(24, &det, 0).unwrap(),
            vec![1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23]
        );
        let rnd = FrameSampleConfig {
            budget: 12,
            mode: SampleMode::RandomInInterval,
        };
        for seed in 0..10_000u64 {
            let t_len = 13 + (seed as usize % 120);
            let idx = subsample_indices(t_len, &rnd, seed).unwrap();
            for (k, &x) in idx.iter().enumerate() {
                let lo = k * t_len / 12;
                let hi = (k + 1) * t_len / 12;
                assert!(x >= lo && x < hi, "seed {seed}: index {x} outside [{lo},{hi})");
            }
        }
    });
    assert!(secs < 5.0);
    println!("ACCEPTANCE 07 subsampling: PASS ({secs:.3}s)");
}

/// Criterion 8: dataset round-trip bit-exactness on 100 episodes.
#[test]
fn acceptance_08_dataset_round_trip() {
    let ((), secs) = timed(|| {
        let tasks = enumerate_tasks();
        let mut episodes = Vec::with_capacity(100);
        let mut i = 0u64;
        while episodes.len() < 100 {
            let task = &tasks[(i as usize) % tasks.len()];
            let ep = if i % 3 == 2 {
                let mut pol = corrupt_policy(ExpertPolicy, 1.0, i).unwrap();
                generate_episode(task, &mut pol, i).unwrap()
            } else {
                generate_episode(task, &mut ExpertPolicy, i).unwrap()
            };
            i += 1;
            if ep.caption.is_some() == ep.success {
                episodes.push(ep);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&episodes, dir.path(), SplitTag::Train).unwrap();
        let (reader, manifest) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 100);
        for (k, ep) in episodes.iter().enumerate() {
            let loaded = reader.load(k).unwrap();
            assert_eq!(&loaded, ep, "episode {k} must round-trip bit-exactly");
        }
    });
    assert!(secs < 60.0);
    println!("ACCEPTANCE 08 dataset-round-trip: PASS ({secs:.1}s)");
}

/// Part of criterion 5 that needs no trained model: mean-pool full-video
/// scores are permutation invariant.
#[test]
fn acceptance_05a_mean_pool_invariance() {
    let ((), secs) = timed(|| {
        let cfg = CriticConfig {
            embed_dim: 32,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 1,
            temporal_heads: 4,
            frame_patch: 16,
            aggregator: "mean_pool".into(),
            ..Default::default()
        };
        let vocab = Vocab::build(enumerate_tasks().iter().map(|t| t.caption.as_str()));
        let model = CriticModel::<f32>::init(cfg, vocab, 5).unwrap();
        let tasks = enumerate_tasks();
        use rand::seq::SliceRandom;
        let mut rng = rng_from(21);
        for v in 0..5u64 {
            let task = &tasks[(v as usize * 13) % tasks.len()];
            let ep = generate_episode(task, &mut ExpertPolicy, 700 + v).unwrap();
            let idx =
                subsample_indices(ep.frames.len(), &FrameSampleConfig::deterministic(12), 0).unwrap();
            let frames: Vec<Frame> = idx.into_iter().map(|i| ep.frames[i].clone()).collect();
            let base = model.score(&frames, &task.caption).unwrap();
            for _ in 0..20 {
                let mut perm = frames.clone();
                perm.shuffle(&mut rng);
                let s = model.score(&perm, &task.caption).unwrap();
                assert!(
                    (s - base).abs() <= 1e-6,
                    "video {v}: permuted {s} vs {base}"
                );
            }
        }
    });
    println!("ACCEPTANCE 05a mean-pool-invariance: PASS ({secs:.1}s)");
}
