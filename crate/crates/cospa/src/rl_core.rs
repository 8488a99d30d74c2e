//! Twin-critic deterministic actor core shared by online behavior training
//! and offline policy learning: clipped double-Q targets with smoothed
//! target actions, delayed actor updates, soft target blending.
//!
//! Actions are normalized to [-1, 1] inside the learner (tanh actor); the
//! environment interface scales by ACTION_BOUND. Batches must already be in
//! normalized units.

use rand::Rng;

use crate::autodiff::{
    adam_step, AdamCfg, AdamState, BoundParams, Mlp, MlpSpec, ParamSet, Tape, Tensor,
};
use crate::error::Result;
use crate::rng::normal;

pub const GAMMA: f64 = 0.99;
pub const TAU: f64 = 0.005;
pub const POLICY_NOISE: f64 = 0.2;
pub const NOISE_CLIP: f64 = 0.5;
pub const POLICY_DELAY: usize = 2;

#[derive(Clone, Debug)]
pub struct Td3Config {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Hidden widths, e.g. [256, 256].
    pub hidden: Vec<usize>,
    /// Linear -> LayerNorm -> ReLU blocks in the critics. The actor never
    /// normalizes.
    pub critic_layer_norm: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

/// One transition batch in learner units: observations already carry any
/// augmentation columns, actions are in [-1, 1].
pub struct Batch {
    pub obs: Tensor<f32>,
    pub actions: Tensor<f32>,
    pub rewards: Tensor<f32>,
    pub next_obs: Tensor<f32>,
    /// 1.0 where the episode continues after this transition, else 0.0.
    pub not_done: Tensor<f32>,
}

pub struct Td3Nets {
    pub actor_net: Mlp,
    pub critic1_net: Mlp,
    pub critic2_net: Mlp,
    pub actor: ParamSet<f32>,
    pub critic: ParamSet<f32>,
    pub actor_target: ParamSet<f32>,
    pub critic_target: ParamSet<f32>,
    actor_opt: AdamState<f32>,
    critic_opt: AdamState<f32>,
    actor_adam: AdamCfg,
    critic_adam: AdamCfg,
    pub action_dim: usize,
    critic_updates: usize,
}

/// Actor loss variants. The offline form adds behavior cloning; with
/// `adaptive` the Q term is scaled by lambda / mean|Q| (the running batch's
/// detached mean), otherwise by lambda directly.
pub enum ActorObjective {
    OnlineTd3,
    Td3Bc { lambda: f32, adaptive: bool },
}

fn hcat(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    assert_eq!(a.rows(), b.rows());
    let (m, ca) = a.shape();
    let cb = b.cols();
    let mut out = Tensor::zeros(m, ca + cb);
    for i in 0..m {
        out.as_mut_slice()[i * (ca + cb)..i * (ca + cb) + ca]
            .copy_from_slice(&a.as_slice()[i * ca..(i + 1) * ca]);
        out.as_mut_slice()[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
            .copy_from_slice(&b.as_slice()[i * cb..(i + 1) * cb]);
    }
    out
}

impl Td3Nets {
    pub fn init(cfg: &Td3Config, rng: &mut impl Rng) -> Result<Td3Nets> {
        let mut actor_sizes = vec![cfg.obs_dim];
        actor_sizes.extend_from_slice(&cfg.hidden);
        actor_sizes.push(cfg.action_dim);
        let mut critic_sizes = vec![cfg.obs_dim + cfg.action_dim];
        critic_sizes.extend_from_slice(&cfg.hidden);
        critic_sizes.push(1);

        let actor_spec = MlpSpec { tanh_out: true, ..MlpSpec::relu(actor_sizes) };
        let critic_spec =
            MlpSpec { layer_norm: cfg.critic_layer_norm, ..MlpSpec::relu(critic_sizes) };

        let mut actor = ParamSet::new();
        let actor_net = Mlp::init("pi", actor_spec, &mut actor, rng)?;
        let mut critic = ParamSet::new();
        let critic1_net = Mlp::init("q1", critic_spec.clone(), &mut critic, rng)?;
        let critic2_net = Mlp::init("q2", critic_spec, &mut critic, rng)?;

        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let actor_opt = AdamState::new(&actor);
        let critic_opt = AdamState::new(&critic);
        Ok(Td3Nets {
            actor_net,
            critic1_net,
            critic2_net,
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            actor_adam: AdamCfg::with_lr(cfg.actor_lr),
            critic_adam: AdamCfg::with_lr(cfg.critic_lr),
            action_dim: cfg.action_dim,
            critic_updates: 0,
        })
    }

    /// Deterministic normalized actions from the online actor.
    pub fn act(&self, obs: &Tensor<f32>) -> Tensor<f32> {
        self.actor_net.forward_valued(&self.actor, obs)
    }

    /// Clipped double-Q regression target:
    /// y = r + gamma * not_done * min(Q1', Q2')(s', pi'(s') + clipped noise).
    pub fn critic_targets(&self, batch: &Batch, rng: &mut impl Rng) -> Tensor<f32> {
        let mut next_a = self.actor_net.forward_valued(&self.actor_target, &batch.next_obs);
        for v in next_a.as_mut_slice() {
            let eps =
                (normal(rng) * POLICY_NOISE).clamp(-NOISE_CLIP, NOISE_CLIP) as f32;
            *v = (*v + eps).clamp(-1.0, 1.0);
        }
        let x = hcat(&batch.next_obs, &next_a);
        let q1 = self.critic1_net.forward_valued(&self.critic_target, &x);
        let q2 = self.critic2_net.forward_valued(&self.critic_target, &x);
        let mut y = batch.rewards.clone();
        let g = GAMMA as f32;
        for ((yv, (q1v, q2v)), nd) in y
            .as_mut_slice()
            .iter_mut()
            .zip(q1.as_slice().iter().zip(q2.as_slice()))
            .zip(batch.not_done.as_slice())
        {
            *yv += g * *nd * q1v.min(*q2v);
        }
        y
    }

    /// One critic gradient step on both Q networks against fixed targets.
    /// Returns the summed MSE loss.
    pub fn critic_step(&mut self, batch: &Batch, targets: &Tensor<f32>) -> Result<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &self.critic);
        let x = tape.constant_owned(hcat(&batch.obs, &batch.actions));
        let y = tape.constant(targets);
        let q1 = self.critic1_net.forward(&mut tape, &bp, &self.critic, x)?;
        let q2 = self.critic2_net.forward(&mut tape, &bp, &self.critic, x)?;
        let l1 = tape.mse(q1, y)?;
        let l2 = tape.mse(q2, y)?;
        let loss = tape.add(l1, l2)?;
        tape.backward(loss)?;
        let grads = bp.grads(&tape);
        adam_step(&mut self.critic, &grads, &mut self.critic_opt, self.critic_adam);
        Ok(tape.value(loss).item())
    }

    /// One actor gradient step. Online: maximize Q1(s, pi(s)). Offline:
    /// lambda-weighted Q term plus mean-squared behavior cloning.
    pub fn actor_step(&mut self, batch: &Batch, objective: &ActorObjective) -> Result<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &self.actor);
        let frozen = BoundParams::bind_frozen(&mut tape, &self.critic);
        let obs = tape.constant(&batch.obs);
        let pi = self.actor_net.forward(&mut tape, &bp, &self.actor, obs)?;
        let x = tape.concat_cols(&[obs, pi])?;
        let q1 = self.critic1_net.forward(&mut tape, &frozen, &self.critic, x)?;
        let mq = tape.mean_all(q1);
        let loss = match objective {
            ActorObjective::OnlineTd3 => tape.scale(mq, -1.0),
            ActorObjective::Td3Bc { lambda, adaptive } => {
                let coef = if *adaptive {
                    let qvals = tape.value(q1);
                    let mean_abs: f32 = qvals.as_slice().iter().map(|v| v.abs()).sum::<f32>()
                        / qvals.numel() as f32;
                    lambda / mean_abs.max(1e-8)
                } else {
                    *lambda
                };
                let qterm = tape.scale(mq, -coef);
                let a = tape.constant(&batch.actions);
                let bc = tape.mse(pi, a)?;
                tape.add(qterm, bc)?
            }
        };
        tape.backward(loss)?;
        let grads = bp.grads(&tape);
        adam_step(&mut self.actor, &grads, &mut self.actor_opt, self.actor_adam);
        Ok(tape.value(loss).item())
    }

    /// Mean squared error between the deterministic actor and the batch
    /// actions, gradient-free. Cloning-progress probe.
    pub fn bc_mse_valued(&self, batch: &Batch) -> f32 {
        let pi = self.act(&batch.obs);
        let mut acc = 0.0f64;
        for (p, a) in pi.as_slice().iter().zip(batch.actions.as_slice()) {
            let d = (p - a) as f64;
            acc += d * d;
        }
        (acc / pi.numel() as f64) as f32
    }

    fn blend_targets(&mut self) {
        self.actor_target.blend_from(&self.actor, TAU as f32);
        self.critic_target.blend_from(&self.critic, TAU as f32);
    }

    /// Full TD3 update: critic step always, actor step plus target blending
    /// every POLICY_DELAY critic steps. Returns (critic loss, actor loss).
    pub fn update(
        &mut self,
        batch: &Batch,
        objective: &ActorObjective,
        rng: &mut impl Rng,
    ) -> Result<(f32, Option<f32>)> {
        let targets = self.critic_targets(batch, rng);
        let closs = self.critic_step(batch, &targets)?;
        self.critic_updates += 1;
        let aloss = if self.critic_updates.is_multiple_of(POLICY_DELAY) {
            let l = self.actor_step(batch, objective)?;
            self.blend_targets();
            Some(l)
        } else {
            None
        };
        Ok((closs, aloss))
    }
}
