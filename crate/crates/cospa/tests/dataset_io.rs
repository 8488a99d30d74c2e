//! Dataset collection, serialization, and batch-sampling oracles.

use cospa::behavior::{collect_deployments, BehaviorPolicy};
use cospa::dataset::{
    dataset_from_bytes, dataset_to_bytes, load_dataset, sample_cpc_batch, sample_latent_window,
    save_dataset, CpcWindow,
};
use cospa::envs::{EnvId, EnvSpec, ACTION_BOUND, STATE_BOUND};
use cospa::rng::substream;
use cospa::CospaError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dataset(seed: u64) -> cospa::dataset::Dataset {
    let spec = EnvSpec::standard(EnvId::Goal1d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = BehaviorPolicy::fresh(spec.state_dim, spec.action_dim, &[16, 16], &mut rng)
        .unwrap();
    collect_deployments(&spec, &policy, 6, 0.1, seed).unwrap()
}

#[test]
fn collected_shapes_match_the_header() {
    let ds = small_dataset(41);
    let h = &ds.header;
    assert_eq!((h.n_deployments, h.episodes, h.horizon), (6, 10, 50));
    assert_eq!(ds.deployments.len(), 6);
    for d in &ds.deployments {
        assert_eq!(d.states.len(), 10 * 50 * h.state_dim);
        assert_eq!(d.next_states.len(), 10 * 50 * h.state_dim);
        assert_eq!(d.actions.len(), 10 * 50 * h.action_dim);
        assert_eq!(d.rewards.len(), 10 * 50);
        assert_eq!(d.hips.len(), 10);
    }
    assert_eq!(ds.total_transitions(), 6 * 10 * 50);
}

#[test]
fn stored_values_respect_env_boxes_and_schedule() {
    let ds = small_dataset(42);
    for d in &ds.deployments {
        assert!(d.states.iter().chain(&d.next_states).all(|s| s.abs() <= STATE_BOUND));
        // Raw executed actions in env units.
        assert!(d.actions.iter().all(|a| a.abs() <= ACTION_BOUND + 1e-6));
        assert!(d.rewards.iter().all(|r| *r <= 0.0));
        for w in d.hips.windows(2) {
            assert_eq!(w[1], -w[0], "certain alternation");
        }
    }
    // Both goals appear across the corpus.
    let hist = ds.hip_histogram();
    assert_eq!(hist.len(), 2);
    assert!(hist.iter().all(|(_, n)| *n > 0));
}

#[test]
fn trajectory_views_agree_with_raw_arrays() {
    let ds = small_dataset(43);
    let traj = ds.trajectory(2, 3);
    assert_eq!(traj.horizon, 50);
    let manual: f32 = ds.deployments[2].rewards[3 * 50..4 * 50].iter().sum();
    assert!((traj.episode_return() - manual).abs() < 1e-5);

    // Transition rows are (s, a, r, s') in order.
    let mut row = Vec::new();
    traj.push_transition_row(7, &mut row);
    assert_eq!(row.len(), traj.transition_dim());
    assert_eq!(row[0], traj.states[7]);
    assert_eq!(row[1], traj.actions[7]);
    assert_eq!(row[2], traj.rewards[7]);
    assert_eq!(row[3], traj.next_states[7]);
    // Next state of step t is the state of step t+1 inside an episode.
    assert_eq!(traj.next_states[7], traj.states[8]);
}

#[test]
fn byte_round_trip_is_bitwise() {
    let ds = small_dataset(44);
    let bytes = dataset_to_bytes(&ds).unwrap();
    let back = dataset_from_bytes(&bytes).unwrap();
    assert_eq!(ds, back);
    let again = dataset_to_bytes(&back).unwrap();
    assert_eq!(bytes, again, "serialization is canonical");
}

#[test]
fn file_round_trip_and_missing_file() {
    let dir = std::env::temp_dir().join(format!("cospa-ds-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roundtrip.ds");
    let ds = small_dataset(45);
    save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(ds, back);
    let missing = load_dataset(&dir.join("nope.ds"));
    assert!(matches!(missing, Err(CospaError::MissingArtifact(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn corrupted_bytes_error_cleanly() {
    let ds = small_dataset(46);
    let bytes = dataset_to_bytes(&ds).unwrap();

    let truncated = &bytes[..bytes.len() / 2];
    let err = dataset_from_bytes(truncated).unwrap_err();
    assert!(matches!(err, CospaError::Format(_)), "truncation: {err}");
    let msg = format!("{err}");
    assert!(msg.contains("truncated"), "names the failure: {msg}");

    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0u8; 16]);
    let err = dataset_from_bytes(&trailing).unwrap_err();
    assert!(matches!(err, CospaError::Format(_)), "trailing bytes: {err}");

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xFF;
    assert!(dataset_from_bytes(&bad_magic).is_err());

    assert!(dataset_from_bytes(&[]).is_err());
}

#[test]
fn collection_is_deterministic_in_the_seed() {
    let a = dataset_to_bytes(&small_dataset(47)).unwrap();
    let b = dataset_to_bytes(&small_dataset(47)).unwrap();
    let c = dataset_to_bytes(&small_dataset(48)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn embedded_behavior_checkpoint_is_loadable() {
    let ds = small_dataset(49);
    let policy = BehaviorPolicy::from_bytes(&ds.behavior_ckpt).unwrap();
    let obs = cospa::autodiff::Tensor::from_vec(1, 1, vec![0.5f32]).unwrap();
    let a = policy.act(&obs);
    assert!(a.get(0, 0).abs() <= 1.0, "tanh actor output");
}

#[test]
fn contrastive_batch_indices_respect_the_window_law() {
    let ds = small_dataset(50);
    let m = ds.header.episodes; // 10
    let (n_cpc, k, n_neg) = (5usize, 1usize, 3usize);
    let window = CpcWindow { n_cpc, k, n_neg };
    let mut rng = substream(7, "cpc-idx", 0);
    let mut seen_i = vec![0usize; m + 1];
    for _ in 0..4000 {
        let idx = sample_cpc_batch(&ds, window, &mut rng).unwrap();
        assert!(idx.i >= n_cpc && idx.i <= m - k, "context end {} in [{n_cpc}, {}]", idx.i, m - k);
        let ctx = idx.context_range_0idx(n_cpc);
        assert_eq!(ctx.len(), n_cpc);
        assert_eq!(ctx.end, idx.i);
        assert_eq!(idx.future_0idx(k), idx.i + k - 1);
        assert!(idx.future_0idx(k) < m);
        assert_eq!(idx.neg_deps.len(), n_neg);
        assert!(!idx.neg_deps.contains(&idx.pos_dep), "negatives from other deployments");
        let mut uniq = idx.neg_deps.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), n_neg, "negatives are distinct");
        seen_i[idx.i] += 1;
    }
    // i is uniform over [n_cpc, m-k]: chi-squared against uniform,
    // 5 cells, 4 dof, 4000 draws; 23.5 is far beyond the 0.9999 quantile.
    let cells: Vec<usize> = (n_cpc..=m - k).map(|i| seen_i[i]).collect();
    let expect = 4000.0 / cells.len() as f64;
    let chi2: f64 = cells.iter().map(|c| (*c as f64 - expect).powi(2) / expect).sum();
    assert!(chi2 < 23.5, "chi2 {chi2} over cells {cells:?}");
}

#[test]
fn contrastive_batch_preconditions() {
    let ds = small_dataset(51);
    let mut rng = substream(7, "cpc-idx", 1);
    // Window longer than the deployment.
    let w = CpcWindow { n_cpc: 10, k: 1, n_neg: 3 };
    assert!(sample_cpc_batch(&ds, w, &mut rng).is_err());
    // Not enough other deployments for distinct negatives.
    let w = CpcWindow { n_cpc: 5, k: 1, n_neg: 6 };
    assert!(sample_cpc_batch(&ds, w, &mut rng).is_err());
    // Degenerate window.
    let w = CpcWindow { n_cpc: 0, k: 1, n_neg: 3 };
    assert!(sample_cpc_batch(&ds, w, &mut rng).is_err());
}

#[test]
fn shuffling_preserves_marginals_and_breaks_alignment() {
    let ds = small_dataset(52);
    let mut rng = substream(9, "shuffle", 0);
    let shuffled = ds.shuffle_trajectories(&mut rng);
    assert_eq!(shuffled.header, ds.header);
    assert_eq!(shuffled.total_transitions(), ds.total_transitions());

    // The multiset of (hip, episode-return) pairs is exactly preserved.
    let collect = |d: &cospa::dataset::Dataset| {
        let mut v: Vec<(i32, i64)> = Vec::new();
        for dep in 0..d.header.n_deployments {
            for ep in 0..d.header.episodes {
                let hip = d.deployments[dep].hips[ep];
                let ret = d.trajectory(dep, ep).episode_return();
                v.push((hip as i32, (ret * 1e4) as i64));
            }
        }
        v.sort_unstable();
        v
    };
    assert_eq!(collect(&ds), collect(&shuffled));

    // Alternation within deployments is destroyed with overwhelming
    // probability for 60 shuffled slots.
    let intact = shuffled
        .deployments
        .iter()
        .all(|d| d.hips.windows(2).all(|w| w[1] == -w[0]));
    assert!(!intact, "shuffle left every deployment perfectly alternating");
}

#[test]
fn latent_window_sampling_stays_in_range() {
    let ds = small_dataset(53);
    let aug = cospa::offline_rl::build_augmented(
        &ds,
        cospa::offline_rl::AugmentationMode::Oracle { sigma: 0.0 },
        None,
        cospa::offline_rl::CorruptLaw::DifferentHip,
        3,
    )
    .unwrap()
    .0;
    let mut rng = substream(11, "win", 0);
    for _ in 0..500 {
        let (dep, target) = sample_latent_window(&aug, 5, &mut rng).unwrap();
        assert!(dep < aug.n_deployments);
        assert!((5..aug.episodes).contains(&target));
    }
    assert!(sample_latent_window(&aug, aug.episodes, &mut rng).is_err());
    assert!(sample_latent_window(&aug, 0, &mut rng).is_err());

    // Fixed-horizon boundaries are the only terminals.
    assert!(aug.done_at(49));
    assert!(!aug.done_at(50));
    assert!(aug.done_at(aug.total_transitions() - 1));
}
