//! Online training of the task-blind behavior policy and dataset
//! collection. Training runs standard TD3 on raw states while the hidden
//! parameter drifts between episodes, which the policy experiences as
//! domain randomization. Collection rolls the trained actor with the same
//! exploration noise and records whole deployments.
//!
//! Fixed-horizon episode ends are timeouts, not absorbing states, so the
//! critic bootstraps through them everywhere in this crate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Act, Mlp, MlpSpec, ParamSet, Tensor};
use crate::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use crate::dataset::{Dataset, DatasetHeader, Deployment};
use crate::envs::{env_reset, env_step, EnvSpec, EnvState, ACTION_BOUND};
use crate::error::{CospaError, Result};
use crate::rl_core::{ActorObjective, Batch, Td3Config, Td3Nets};
use crate::rng::{normal, substream};

#[derive(Clone, Debug)]
pub struct BehaviorConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub batch: usize,
    /// Exploration noise std in normalized action units.
    pub explore_std: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Append the true HiP to the observation. Off for the shipped
    /// behavior policy; on only for the RL-core sanity property.
    pub oracle_hip: bool,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            total_steps: 100_000,
            warmup_steps: 1_000,
            batch: 256,
            explore_std: 0.1,
            eval_every: 5_000,
            eval_episodes: 20,
            oracle_hip: false,
        }
    }
}

/// The deterministic collection-time actor. Only the actor survives
/// behavior training; it serializes standalone so datasets can embed it.
#[derive(Clone, Debug)]
pub struct BehaviorPolicy {
    pub net: Mlp,
    pub params: ParamSet<f32>,
    pub oracle_hip: bool,
}

impl BehaviorPolicy {
    /// Untrained random actor, useful when a dataset's content matters less
    /// than its shape.
    pub fn fresh(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<BehaviorPolicy> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut params = ParamSet::new();
        let net =
            Mlp::init("pi", MlpSpec { tanh_out: true, ..MlpSpec::relu(sizes) }, &mut params, rng)?;
        Ok(BehaviorPolicy { net, params, oracle_hip: false })
    }

    pub fn act(&self, obs: &Tensor<f32>) -> Tensor<f32> {
        self.net.forward_valued(&self.params, obs)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint_to_bytes(&[&self.params])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<BehaviorPolicy> {
        let entries = checkpoint_from_bytes::<f32>(bytes)?;
        let (net, params) = Mlp::from_entries("pi", Act::Relu, true, &entries)?;
        Ok(BehaviorPolicy { net, params, oracle_hip: false })
    }
}

struct Replay {
    s: Vec<f32>,
    a: Vec<f32>,
    r: Vec<f32>,
    s2: Vec<f32>,
    obs_dim: usize,
    act_dim: usize,
    cap: usize,
    len: usize,
    head: usize,
}

impl Replay {
    fn new(cap: usize, obs_dim: usize, act_dim: usize) -> Replay {
        Replay {
            s: vec![0.0; cap * obs_dim],
            a: vec![0.0; cap * act_dim],
            r: vec![0.0; cap],
            s2: vec![0.0; cap * obs_dim],
            obs_dim,
            act_dim,
            cap,
            len: 0,
            head: 0,
        }
    }

    fn push(&mut self, s: &[f32], a: &[f32], r: f32, s2: &[f32]) {
        let i = self.head;
        self.s[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(s);
        self.a[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(a);
        self.r[i] = r;
        self.s2[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(s2);
        self.head = (self.head + 1) % self.cap;
        self.len = (self.len + 1).min(self.cap);
    }

    fn sample(&self, batch: usize, rng: &mut impl Rng) -> Batch {
        let od = self.obs_dim;
        let ad = self.act_dim;
        let mut obs = Tensor::zeros(batch, od);
        let mut actions = Tensor::zeros(batch, ad);
        let mut rewards = Tensor::zeros(batch, 1);
        let mut next_obs = Tensor::zeros(batch, od);
        let mut not_done = Tensor::zeros(batch, 1);
        not_done.as_mut_slice().fill(1.0);
        for b in 0..batch {
            let i = rng.random_range(0..self.len);
            obs.as_mut_slice()[b * od..(b + 1) * od]
                .copy_from_slice(&self.s[i * od..(i + 1) * od]);
            actions.as_mut_slice()[b * ad..(b + 1) * ad]
                .copy_from_slice(&self.a[i * ad..(i + 1) * ad]);
            rewards.as_mut_slice()[b] = self.r[i];
            next_obs.as_mut_slice()[b * od..(b + 1) * od]
                .copy_from_slice(&self.s2[i * od..(i + 1) * od]);
        }
        Batch { obs, actions, rewards, next_obs, not_done }
    }
}

fn obs_of(state: &EnvState, oracle_hip: bool) -> Vec<f32> {
    let mut o = state.s.clone();
    if oracle_hip {
        o.push(state.z);
    }
    o
}

/// Mean per-episode return of the deterministic actor over fresh
/// deployments, blind or oracle to match training.
pub fn eval_behavior(
    spec: &EnvSpec,
    policy: &BehaviorPolicy,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<f32> {
    let mut total = 0.0f64;
    let mut done_eps = 0usize;
    while done_eps < episodes {
        let hips = spec.schedule.sequence(spec.episodes, rng);
        for &z in hips.iter().take(episodes - done_eps) {
            let mut st = env_reset(spec, z, rng);
            let mut ep_ret = 0.0f64;
            loop {
                let o = obs_of(&st, policy.oracle_hip);
                let a = policy.act(&Tensor::from_vec(1, o.len(), o)?);
                let a_env: Vec<f32> =
                    a.as_slice().iter().map(|v| v * ACTION_BOUND).collect();
                let (next, r, done) = env_step(spec, &st, &a_env)?;
                ep_ret += r as f64;
                st = next;
                if done {
                    break;
                }
            }
            total += ep_ret;
            done_eps += 1;
        }
    }
    Ok((total / episodes as f64) as f32)
}

pub struct BehaviorOutcome {
    pub policy: BehaviorPolicy,
    /// (env step, mean eval return) rows.
    pub curve: Vec<(usize, f32)>,
}

pub fn train_behavior(
    spec: &EnvSpec,
    cfg: &BehaviorConfig,
    master_seed: u64,
) -> Result<BehaviorOutcome> {
    let obs_dim = spec.state_dim + if cfg.oracle_hip { 1 } else { 0 };
    let net_cfg = Td3Config {
        obs_dim,
        action_dim: spec.action_dim,
        hidden: cfg.hidden.clone(),
        critic_layer_norm: false,
        actor_lr: cfg.actor_lr,
        critic_lr: cfg.critic_lr,
    };
    let mut rng_init = substream(master_seed, "behavior-init", 0);
    let mut rng_env = substream(master_seed, "behavior-env", 0);
    let mut rng_learn = substream(master_seed, "behavior-learn", 0);
    let mut rng_eval = substream(master_seed, "behavior-eval", 0);

    let mut nets = Td3Nets::init(&net_cfg, &mut rng_init)?;
    let mut replay = Replay::new(cfg.total_steps.max(1), obs_dim, spec.action_dim);
    let mut curve = Vec::new();

    let mut hips = spec.schedule.sequence(spec.episodes, &mut rng_env);
    let mut ep_idx = 0usize;
    let mut st = env_reset(spec, hips[0], &mut rng_env);
    let objective = ActorObjective::OnlineTd3;

    for step in 0..cfg.total_steps {
        let o = obs_of(&st, cfg.oracle_hip);
        let mut a_norm = if step < cfg.warmup_steps {
            (0..spec.action_dim)
                .map(|_| (rng_env.random::<f64>() * 2.0 - 1.0) as f32)
                .collect::<Vec<f32>>()
        } else {
            let t = nets.act(&Tensor::from_vec(1, obs_dim, o.clone())?);
            t.as_slice().to_vec()
        };
        for v in a_norm.iter_mut() {
            *v = (*v + (normal(&mut rng_env) * cfg.explore_std) as f32).clamp(-1.0, 1.0);
        }
        let a_env: Vec<f32> = a_norm.iter().map(|v| v * ACTION_BOUND).collect();
        let (next, r, done) = env_step(spec, &st, &a_env)?;
        let o2 = obs_of(&next, cfg.oracle_hip);
        replay.push(&o, &a_norm, r, &o2);

        if done {
            ep_idx += 1;
            if ep_idx == spec.episodes {
                hips = spec.schedule.sequence(spec.episodes, &mut rng_env);
                ep_idx = 0;
            }
            st = env_reset(spec, hips[ep_idx], &mut rng_env);
        } else {
            st = next;
        }

        if step >= cfg.warmup_steps {
            let batch = replay.sample(cfg.batch, &mut rng_learn);
            let (closs, _) = nets.update(&batch, &objective, &mut rng_learn)?;
            if !closs.is_finite() {
                return Err(CospaError::Divergence(format!(
                    "behavior critic loss became non-finite at step {step}"
                )));
            }
        }

        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let policy = BehaviorPolicy {
                net: nets.actor_net.clone(),
                params: nets.actor.clone(),
                oracle_hip: cfg.oracle_hip,
            };
            let ret = eval_behavior(spec, &policy, cfg.eval_episodes, &mut rng_eval)?;
            curve.push((step + 1, ret));
        }
    }

    let policy = BehaviorPolicy {
        net: nets.actor_net,
        params: nets.actor,
        oracle_hip: cfg.oracle_hip,
    };
    if !policy.params.all_finite() {
        return Err(CospaError::Divergence("behavior actor holds non-finite values".into()));
    }
    Ok(BehaviorOutcome { policy, curve })
}

/// Roll the behavior policy with exploration noise over `n_deployments`
/// fresh deployments, all advanced in lockstep so the actor forward runs
/// once per step over every deployment. Each deployment consumes its own
/// rng substream, so the result does not depend on the batching.
pub fn collect_deployments(
    spec: &EnvSpec,
    policy: &BehaviorPolicy,
    n_deployments: usize,
    noise_std: f64,
    master_seed: u64,
) -> Result<Dataset> {
    if n_deployments == 0 {
        return Err(CospaError::Config("n_deployments must be >= 1".into()));
    }
    if policy.oracle_hip {
        return Err(CospaError::Config(
            "collection requires a task-blind behavior policy".into(),
        ));
    }
    if policy.net.in_dim() != spec.state_dim {
        return Err(CospaError::Shape(format!(
            "behavior policy expects {} state dims, env has {}",
            policy.net.in_dim(),
            spec.state_dim
        )));
    }
    let n = n_deployments;
    let m = spec.episodes;
    let h = spec.horizon;
    let sd = spec.state_dim;
    let ad = spec.action_dim;

    let mut rngs: Vec<ChaCha8Rng> =
        (0..n).map(|d| substream(master_seed, "collect", d as u64)).collect();
    let hips: Vec<Vec<f32>> =
        rngs.iter_mut().map(|rng| spec.schedule.sequence(m, rng)).collect();

    let mut deployments: Vec<Deployment> = (0..n)
        .map(|d| Deployment {
            states: Vec::with_capacity(m * h * sd),
            actions: Vec::with_capacity(m * h * ad),
            rewards: Vec::with_capacity(m * h),
            next_states: Vec::with_capacity(m * h * sd),
            hips: hips[d].clone(),
        })
        .collect();

    let mut a_env = vec![0.0f32; ad];
    // ep indexes the per-deployment HiP columns, not a single slice.
    #[allow(clippy::needless_range_loop)]
    for ep in 0..m {
        let mut states: Vec<EnvState> = (0..n)
            .map(|d| env_reset(spec, hips[d][ep], &mut rngs[d]))
            .collect();
        for _t in 0..h {
            let mut obs = Tensor::zeros(n, sd);
            for (d, st) in states.iter().enumerate() {
                obs.as_mut_slice()[d * sd..(d + 1) * sd].copy_from_slice(&st.s);
            }
            let acts = policy.act(&obs);
            for d in 0..n {
                for (j, v) in a_env.iter_mut().enumerate() {
                    let noisy = (acts.get(d, j)
                        + (normal(&mut rngs[d]) * noise_std) as f32)
                        .clamp(-1.0, 1.0);
                    *v = noisy * ACTION_BOUND;
                }
                let (next, r, _done) = env_step(spec, &states[d], &a_env)?;
                let dep = &mut deployments[d];
                dep.states.extend_from_slice(&states[d].s);
                dep.actions.extend_from_slice(&a_env);
                dep.rewards.push(r);
                dep.next_states.extend_from_slice(&next.s);
                states[d] = next;
            }
        }
    }

    let header = DatasetHeader {
        env: spec.id,
        n_deployments: n,
        episodes: m,
        horizon: h,
        state_dim: sd,
        action_dim: ad,
        schedule: spec.schedule.clone(),
        seed: master_seed,
    };
    Ok(Dataset { header, deployments, behavior_ckpt: policy.to_bytes() })
}
