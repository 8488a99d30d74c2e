//! Offline TD3+BC over augmented transitions. Augmentation modes: none
//! (blind), ground-truth HiP with optional corruption (oracle), or inferred
//! contrastive latents. States are z-score normalized with dataset
//! statistics; augmentation columns pass through untouched.

use rand::Rng;

use crate::autodiff::{Act, Mlp, ParamSet, Tensor};
use crate::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use crate::dataset::{sample_rl_batch, AugmentedDataset, Dataset};
use crate::envs::{EnvId, ACTION_BOUND};
use crate::error::{CospaError, Result};
use crate::repr_cpc::{augment_dataset, build_augmented_from_latents, CpcModel, LatentStats};
use crate::rl_core::{ActorObjective, Batch, Td3Config, Td3Nets};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentationMode {
    Blind,
    Oracle { sigma: f32 },
    Latent,
}

impl AugmentationMode {
    pub fn validate(&self) -> Result<()> {
        if let AugmentationMode::Oracle { sigma } = self {
            if !(0.0..=1.0).contains(sigma) || !sigma.is_finite() {
                return Err(CospaError::Config(format!(
                    "oracle sigma must lie in [0, 1], got {sigma}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationMode::Blind => "blind",
            AugmentationMode::Oracle { .. } => "oracle",
            AugmentationMode::Latent => "latent",
        }
    }
}

/// How oracle corruption redraws: the default never returns the true HiP;
/// the alternative draws uniformly over all of Z.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptLaw {
    DifferentHip,
    AnyHip,
}

/// With probability sigma, replace z by a uniform draw per the law.
pub fn corrupt_hip(
    z: f32,
    sigma: f32,
    values: &[f32],
    law: CorruptLaw,
    rng: &mut impl Rng,
) -> f32 {
    if sigma > 0.0 && rng.random::<f64>() < sigma as f64 {
        match law {
            CorruptLaw::AnyHip => values[rng.random_range(0..values.len())],
            CorruptLaw::DifferentHip => {
                let others: Vec<f32> = values.iter().copied().filter(|v| *v != z).collect();
                if others.is_empty() {
                    z
                } else {
                    others[rng.random_range(0..others.len())]
                }
            }
        }
    } else {
        z
    }
}

/// Standardization constants over the discrete HiP value set.
pub fn hip_standardizer(values: &[f32]) -> (f32, f32) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = values.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean as f32, (var.sqrt().max(1e-6)) as f32)
}

/// Attach the chosen augmentation to every transition. Oracle corruption is
/// independent per trajectory.
pub fn build_augmented(
    ds: &Dataset,
    mode: AugmentationMode,
    cpc: Option<&CpcModel<f32>>,
    law: CorruptLaw,
    master_seed: u64,
) -> Result<(AugmentedDataset, Option<LatentStats>)> {
    mode.validate()?;
    let (n, m) = (ds.header.n_deployments, ds.header.episodes);
    match mode {
        AugmentationMode::Blind => {
            let rows = vec![Vec::new(); n * m];
            Ok((build_augmented_from_latents(ds, &rows, 0)?, None))
        }
        AugmentationMode::Oracle { sigma } => {
            let values = ds.header.schedule.hip_values();
            let (mu, sd) = hip_standardizer(&values);
            let mut rng = substream(master_seed, "oracle-corrupt", 0);
            let mut rows = Vec::with_capacity(n * m);
            for dep in 0..n {
                for ep in 0..m {
                    let z = ds.deployments[dep].hips[ep];
                    let zc = corrupt_hip(z, sigma, &values, law, &mut rng);
                    rows.push(vec![(zc - mu) / sd]);
                }
            }
            Ok((build_augmented_from_latents(ds, &rows, 1)?, None))
        }
        AugmentationMode::Latent => {
            let model = cpc.ok_or_else(|| {
                CospaError::Config("latent augmentation requires a trained encoder".into())
            })?;
            let (aug, stats) = augment_dataset(model, ds)?;
            Ok((aug, Some(stats)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Td3BcConfig {
    pub hidden: Vec<usize>,
    pub critic_layer_norm: bool,
    pub lambda: f32,
    /// Scale the Q term by lambda / mean|Q| (detached) instead of lambda.
    pub adaptive_lambda: bool,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub normalize_states: bool,
}

impl Td3BcConfig {
    /// Tuned per-task values: 2x256 nets, batch 512, and the task's
    /// (layer-norm, lambda, lr) triple.
    pub fn task_defaults(env: EnvId) -> Td3BcConfig {
        let (layer_norm, lambda, lr) = match env {
            EnvId::Goal1d => (true, 2.5, 3e-4),
            EnvId::Wind2d => (true, 6.5, 3e-4),
            EnvId::Goal2d => (false, 6.5, 1e-3),
        };
        Td3BcConfig {
            hidden: vec![256, 256],
            critic_layer_norm: layer_norm,
            lambda,
            adaptive_lambda: true,
            lr,
            batch: 512,
            steps: 10_000,
            eval_every: 500,
            normalize_states: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(CospaError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(CospaError::Config("batch and steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-dimension state standardization, identity when disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct StateNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl StateNorm {
    pub fn identity(dim: usize) -> StateNorm {
        StateNorm { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(states: &[f32], dim: usize) -> StateNorm {
        let n = states.len() / dim;
        let mut mean = vec![0.0f64; dim];
        for row in states.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0f64; dim];
        for row in states.chunks_exact(dim) {
            for (j, v) in row.iter().enumerate() {
                let c = *v as f64 - mean[j];
                var[j] += c * c;
            }
        }
        StateNorm {
            mean: mean.iter().map(|m| *m as f32).collect(),
            std: var.iter().map(|v| ((v / n as f64).sqrt().max(1e-6)) as f32).collect(),
        }
    }

    pub fn apply(&self, s: &mut [f32]) {
        for (j, v) in s.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.std[j];
        }
    }
}

/// Everything needed to run the learned policy: actor, twin critics, the
/// augmentation contract it was trained under, and the exact input
/// normalizations. Dependency hashes ride in the run manifest, not here.
#[derive(Clone, Debug)]
pub struct PolicyBundle {
    pub actor_net: Mlp,
    pub actor: ParamSet<f32>,
    pub critic1_net: Mlp,
    pub critic2_net: Mlp,
    pub critic: ParamSet<f32>,
    pub mode: AugmentationMode,
    pub state_norm: StateNorm,
    pub latent_stats: Option<LatentStats>,
    pub state_dim: usize,
    pub aug_dim: usize,
}

impl PolicyBundle {
    /// Normalized action for already-assembled observations.
    pub fn act(&self, obs: &Tensor<f32>) -> Tensor<f32> {
        self.actor_net.forward_valued(&self.actor, obs)
    }

    /// Build one observation row: normalized state then augmentation.
    pub fn push_obs(&self, state: &[f32], aug: &[f32], out: &mut Vec<f32>) {
        debug_assert_eq!(state.len(), self.state_dim);
        debug_assert_eq!(aug.len(), self.aug_dim);
        let start = out.len();
        out.extend_from_slice(state);
        self.state_norm.apply(&mut out[start..]);
        out.extend_from_slice(aug);
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim + self.aug_dim
    }

    /// Environment-unit actions for a batch of raw states + augmentations.
    pub fn act_env(&self, states: &[f32], aug_rows: &[f32]) -> Result<Vec<f32>> {
        let n = states.len() / self.state_dim;
        let mut obs = Vec::with_capacity(n * self.obs_dim());
        for i in 0..n {
            let s = &states[i * self.state_dim..(i + 1) * self.state_dim];
            let a = if self.aug_dim == 0 {
                &[][..]
            } else {
                &aug_rows[i * self.aug_dim..(i + 1) * self.aug_dim]
            };
            self.push_obs(s, a, &mut obs);
        }
        let acts = self.act(&Tensor::from_vec(n, self.obs_dim(), obs)?);
        Ok(acts.as_slice().iter().map(|v| v * ACTION_BOUND).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = ParamSet::new();
        let (code, sigma) = match self.mode {
            AugmentationMode::Blind => (0.0, 0.0),
            AugmentationMode::Oracle { sigma } => (1.0, sigma),
            AugmentationMode::Latent => (2.0, 0.0),
        };
        meta.add("meta.info", Tensor::from_vec(1, 3, vec![code, sigma, self.aug_dim as f32])?)?;
        meta.add(
            "norm.smean",
            Tensor::from_vec(1, self.state_dim, self.state_norm.mean.clone())?,
        )?;
        meta.add("norm.sstd", Tensor::from_vec(1, self.state_dim, self.state_norm.std.clone())?)?;
        if let Some(stats) = &self.latent_stats {
            meta.add("norm.zmean", Tensor::from_vec(1, stats.mean.len(), stats.mean.clone())?)?;
            meta.add("norm.zstd", Tensor::from_vec(1, stats.std.len(), stats.std.clone())?)?;
        }
        Ok(checkpoint_to_bytes(&[&self.actor, &self.critic, &meta]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyBundle> {
        let entries = checkpoint_from_bytes::<f32>(bytes)?;
        let (actor_net, actor) = Mlp::from_entries("pi", Act::Relu, true, &entries)?;
        let (critic1_net, _) = Mlp::from_entries("q1", Act::Relu, false, &entries)?;
        let (critic2_net, _) = Mlp::from_entries("q2", Act::Relu, false, &entries)?;
        let mut critic = ParamSet::new();
        for (name, t) in &entries {
            if name.starts_with("q1.") || name.starts_with("q2.") {
                critic.add(name.clone(), t.clone())?;
            }
        }
        let find = |key: &str| -> Result<&Tensor<f32>> {
            entries
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| CospaError::Format(format!("policy checkpoint missing {key}")))
        };
        let info = find("meta.info")?;
        let mode = match info.get(0, 0) as i32 {
            0 => AugmentationMode::Blind,
            1 => AugmentationMode::Oracle { sigma: info.get(0, 1) },
            2 => AugmentationMode::Latent,
            other => {
                return Err(CospaError::Format(format!("unknown augmentation code {other}")))
            }
        };
        let aug_dim = info.get(0, 2) as usize;
        let smean = find("norm.smean")?;
        let sstd = find("norm.sstd")?;
        let state_norm =
            StateNorm { mean: smean.as_slice().to_vec(), std: sstd.as_slice().to_vec() };
        let latent_stats = match entries.iter().find(|(n, _)| n == "norm.zmean") {
            Some((_, zm)) => Some(LatentStats {
                mean: zm.as_slice().to_vec(),
                std: find("norm.zstd")?.as_slice().to_vec(),
            }),
            None => None,
        };
        if actor_net.in_dim() != smean.cols() + aug_dim {
            return Err(CospaError::Format(format!(
                "actor expects {} inputs but normalization covers {} + {} dims",
                actor_net.in_dim(),
                smean.cols(),
                aug_dim
            )));
        }
        Ok(PolicyBundle {
            actor_net,
            actor,
            critic1_net,
            critic2_net,
            critic,
            mode,
            state_norm,
            latent_stats,
            state_dim: smean.cols(),
            aug_dim,
        })
    }
}

fn fill_batch(
    aug: &AugmentedDataset,
    norm: &StateNorm,
    idxs: &[usize],
) -> Result<Batch> {
    let sd = aug.state_dim;
    let ad = aug.action_dim;
    let zd = aug.aug_dim;
    let od = sd + zd;
    let b = idxs.len();
    let mut obs = Vec::with_capacity(b * od);
    let mut next_obs = Vec::with_capacity(b * od);
    let mut actions = Vec::with_capacity(b * ad);
    let mut rewards = Vec::with_capacity(b);
    for &i in idxs {
        let push_state = |out: &mut Vec<f32>, src: &[f32]| {
            let start = out.len();
            out.extend_from_slice(&src[i * sd..(i + 1) * sd]);
            norm.apply(&mut out[start..]);
            out.extend_from_slice(&aug.aug[i * zd..(i + 1) * zd]);
        };
        push_state(&mut obs, &aug.states);
        push_state(&mut next_obs, &aug.next_states);
        actions.extend(
            aug.actions[i * ad..(i + 1) * ad].iter().map(|a| (a / ACTION_BOUND).clamp(-1.0, 1.0)),
        );
        rewards.push(aug.rewards[i]);
    }
    let mut not_done = Tensor::zeros(b, 1);
    // Fixed-horizon episode ends are timeouts; the critic bootstraps on.
    not_done.as_mut_slice().fill(1.0);
    Ok(Batch {
        obs: Tensor::from_vec(b, od, obs)?,
        actions: Tensor::from_vec(b, ad, actions)?,
        rewards: Tensor::from_vec(b, 1, rewards)?,
        next_obs: Tensor::from_vec(b, od, next_obs)?,
        not_done,
    })
}

pub struct Td3BcOutcome {
    pub bundle: PolicyBundle,
    /// (step, critic loss, actor BC mean squared error) rows.
    pub loss_curve: Vec<(usize, f32, f32)>,
    /// (step, mean return) rows from the evaluation hook.
    pub eval_curve: Vec<(usize, f32)>,
}

/// Train TD3+BC on the augmented transitions. `latent_stats` must carry the
/// normalization of the augmentation columns for latent mode (the bundle
/// re-applies it at evaluation time). The hook runs every `eval_every`
/// steps on a snapshot bundle; return None to skip recording.
pub fn train_td3bc(
    aug: &AugmentedDataset,
    mode: AugmentationMode,
    latent_stats: Option<LatentStats>,
    cfg: &Td3BcConfig,
    master_seed: u64,
    mut eval_hook: impl FnMut(usize, &PolicyBundle) -> Result<Option<f32>>,
) -> Result<Td3BcOutcome> {
    cfg.validate()?;
    mode.validate()?;
    if aug.total_transitions() == 0 {
        return Err(CospaError::Config("cannot train on an empty dataset".into()));
    }
    if mode == AugmentationMode::Latent && latent_stats.is_none() {
        return Err(CospaError::Config("latent mode requires latent statistics".into()));
    }
    let norm = if cfg.normalize_states {
        StateNorm::fit(&aug.states, aug.state_dim)
    } else {
        StateNorm::identity(aug.state_dim)
    };
    let net_cfg = Td3Config {
        obs_dim: aug.state_dim + aug.aug_dim,
        action_dim: aug.action_dim,
        hidden: cfg.hidden.clone(),
        critic_layer_norm: cfg.critic_layer_norm,
        actor_lr: cfg.lr,
        critic_lr: cfg.lr,
    };
    let mut rng_init = substream(master_seed, "rl-init", 0);
    let mut rng_batch = substream(master_seed, "rl-batch", 0);
    let mut rng_noise = substream(master_seed, "rl-noise", 0);
    let mut nets = Td3Nets::init(&net_cfg, &mut rng_init)?;
    let objective = ActorObjective::Td3Bc { lambda: cfg.lambda, adaptive: cfg.adaptive_lambda };

    let snapshot = |nets: &Td3Nets| PolicyBundle {
        actor_net: nets.actor_net.clone(),
        actor: nets.actor.clone(),
        critic1_net: nets.critic1_net.clone(),
        critic2_net: nets.critic2_net.clone(),
        critic: nets.critic.clone(),
        mode,
        state_norm: norm.clone(),
        latent_stats: latent_stats.clone(),
        state_dim: aug.state_dim,
        aug_dim: aug.aug_dim,
    };

    let mut loss_curve = Vec::new();
    let mut eval_curve = Vec::new();
    for step in 0..cfg.steps {
        let idxs = sample_rl_batch(aug, cfg.batch, &mut rng_batch)?;
        let batch = fill_batch(aug, &norm, &idxs)?;
        let (closs, _) = nets.update(&batch, &objective, &mut rng_noise)?;
        if !closs.is_finite() {
            return Err(CospaError::Divergence(format!(
                "critic loss became non-finite at step {step}"
            )));
        }
        if step % 50 == 0 || step + 1 == cfg.steps {
            loss_curve.push((step, closs, nets.bc_mse_valued(&batch)));
        }
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            if let Some(ret) = eval_hook(step + 1, &snapshot(&nets))? {
                eval_curve.push((step + 1, ret));
            }
        }
    }
    let bundle = snapshot(&nets);
    if !bundle.actor.all_finite() || !bundle.critic.all_finite() {
        return Err(CospaError::Divergence("trained networks hold non-finite values".into()));
    }
    Ok(Td3BcOutcome { bundle, loss_curve, eval_curve })
}
