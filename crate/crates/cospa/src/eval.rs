//! Evaluation protocols. A policy is scored per deployment: sample a HiP
//! sequence, roll the behavior policy with exploration noise for the
//! context episodes, condition the learned policy per its augmentation mode
//! (nothing, corrupted true HiP, or predicted latent), and record the
//! return of the single following episode. Also: linear probes on
//! trajectory latents, the two corruption sweeps, and the scripted
//! reference policy used to sanity-check the horizon.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamCfg, AdamState, BoundParams, ParamSet, Tape, Tensor};
use crate::behavior::{collect_deployments, BehaviorPolicy};
use crate::dataset::Dataset;
use crate::envs::{env_reset, env_step, EnvId, EnvSpec, ACTION_BOUND};
use crate::error::{CospaError, Result};
use crate::offline_rl::{
    build_augmented, corrupt_hip, hip_standardizer, train_td3bc, AugmentationMode, CorruptLaw,
    PolicyBundle, Td3BcConfig,
};
use crate::predictor::{train_predictor, PredictorConfig, PredictorModel};
use crate::repr_cpc::{latent_stats, train_cpc, CpcConfig, CpcModel};
use crate::rng::{fnv1a, normal, substream};

/// Mean and 95% half-width under the normal approximation, with the
/// sample (n-1) standard deviation.
pub fn mean_ci95(xs: &[f32]) -> (f32, f32) {
    let n = xs.len();
    if n == 0 {
        return (f32::NAN, f32::NAN);
    }
    let mean = xs.iter().map(|x| *x as f64).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean as f32, f32::INFINITY);
    }
    let var = xs.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    ((mean as f32), (1.96 * (var / n as f64).sqrt()) as f32)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub returns: Vec<f32>,
    pub mean: f32,
    pub ci_half: f32,
    pub n_c: usize,
    pub n_deployments: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f32>, n_c: usize, seed: u64) -> EvalReport {
        let (mean, ci_half) = mean_ci95(&returns);
        let n_deployments = returns.len();
        EvalReport { returns, mean, ci_half, n_c, n_deployments, seed }
    }

    /// CIs overlap iff the distance of means is below the summed half-widths.
    pub fn ci_disjoint_from(&self, other: &EvalReport) -> bool {
        (self.mean - other.mean).abs() > self.ci_half + other.ci_half
    }
}

/// Where the latent conditioning the evaluated episode comes from:
/// regressed from the context (the deployable protocol), or leaked by
/// encoding a behavior rollout of the evaluated episode itself (an upper
/// bound used only as a diagnostic).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Predicted,
    LeakTrueEncoding,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub n_deployments: usize,
    pub n_c: usize,
    /// Exploration noise applied to the behavior policy while generating
    /// contexts, matching collection.
    pub behavior_noise: f64,
    pub latent_source: LatentSource,
    pub corrupt_law: CorruptLaw,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_deployments: 100,
            n_c: 5,
            behavior_noise: 0.1,
            latent_source: LatentSource::Predicted,
            corrupt_law: CorruptLaw::DifferentHip,
        }
    }
}

/// Destination buffer plus a per-deployment row offset.
type RowSink<'a, 'b> = (&'a mut [f32], &'b dyn Fn(usize) -> usize);

/// Lockstep rollout of the behavior policy over one episode per deployment.
/// Optionally records encoder-layout transition rows (s, a, r, s') at
/// `rows[dep_row_offset(d) + t]`.
fn roll_behavior_lockstep(
    spec: &EnvSpec,
    behavior: &BehaviorPolicy,
    zs: &[f32],
    noise_std: f64,
    rngs: &mut [ChaCha8Rng],
    rows: Option<RowSink<'_, '_>>,
) -> Result<()> {
    let d_count = zs.len();
    let sd = spec.state_dim;
    let ad = spec.action_dim;
    let in_dim = 2 * sd + ad + 1;
    let mut states: Vec<_> =
        (0..d_count).map(|d| env_reset(spec, zs[d], &mut rngs[d])).collect();
    let mut row_buf = rows;
    for t in 0..spec.horizon {
        let mut obs = Tensor::zeros(d_count, sd);
        for (d, st) in states.iter().enumerate() {
            obs.as_mut_slice()[d * sd..(d + 1) * sd].copy_from_slice(&st.s);
        }
        let acts = behavior.act(&obs);
        for d in 0..d_count {
            let mut a_env = [0.0f32; 2];
            let a_env = &mut a_env[..ad];
            for (j, v) in a_env.iter_mut().enumerate() {
                *v = (acts.get(d, j) + (normal(&mut rngs[d]) * noise_std) as f32)
                    .clamp(-1.0, 1.0)
                    * ACTION_BOUND;
            }
            let (next, r, _done) = env_step(spec, &states[d], a_env)?;
            if let Some((buf, offset_of)) = &mut row_buf {
                let at = (offset_of(d) + t) * in_dim;
                buf[at..at + sd].copy_from_slice(&states[d].s);
                buf[at + sd..at + sd + ad].copy_from_slice(a_env);
                buf[at + sd + ad] = r;
                buf[at + sd + ad + 1..at + in_dim].copy_from_slice(&next.s);
            }
            states[d] = next;
        }
    }
    Ok(())
}

/// Lockstep rollout of the learned policy, deterministic, one episode per
/// deployment. Returns per-deployment episode returns.
fn roll_bundle_lockstep(
    spec: &EnvSpec,
    bundle: &PolicyBundle,
    zs: &[f32],
    aug_rows: &[f32],
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<f32>> {
    let d_count = zs.len();
    let sd = spec.state_dim;
    let mut states: Vec<_> =
        (0..d_count).map(|d| env_reset(spec, zs[d], &mut rngs[d])).collect();
    let mut returns = vec![0.0f32; d_count];
    let mut flat = vec![0.0f32; d_count * sd];
    for _t in 0..spec.horizon {
        for (d, st) in states.iter().enumerate() {
            flat[d * sd..(d + 1) * sd].copy_from_slice(&st.s);
        }
        let acts = bundle.act_env(&flat, aug_rows)?;
        for d in 0..d_count {
            let a = &acts[d * spec.action_dim..(d + 1) * spec.action_dim];
            let (next, r, _done) = env_step(spec, &states[d], a)?;
            returns[d] += r;
            states[d] = next;
        }
    }
    Ok(returns)
}

/// The context-conditioned evaluation protocol. Ground-truth HiPs are read
/// only by the environment itself and by the oracle corruption path.
pub fn evaluate_policy(
    spec: &EnvSpec,
    bundle: &PolicyBundle,
    behavior: &BehaviorPolicy,
    cpc: Option<&CpcModel<f32>>,
    predictor: Option<&PredictorModel<f32>>,
    opts: &EvalOptions,
    master_seed: u64,
) -> Result<EvalReport> {
    if opts.n_deployments == 0 {
        return Err(CospaError::Config("evaluation needs at least one deployment".into()));
    }
    if bundle.state_dim != spec.state_dim {
        return Err(CospaError::Shape(format!(
            "policy expects {} state dims, env has {}",
            bundle.state_dim, spec.state_dim
        )));
    }
    if behavior.oracle_hip {
        return Err(CospaError::Config(
            "context episodes must come from a HiP-blind behavior policy".into(),
        ));
    }
    if behavior.net.in_dim() != spec.state_dim {
        return Err(CospaError::Shape(format!(
            "behavior policy expects {} input dims, env has {}",
            behavior.net.in_dim(),
            spec.state_dim
        )));
    }
    match bundle.mode {
        AugmentationMode::Blind => {}
        AugmentationMode::Oracle { .. } => {
            if bundle.aug_dim != 1 {
                return Err(CospaError::Shape("oracle bundles carry one augmentation dim".into()));
            }
        }
        AugmentationMode::Latent => {
            let model = cpc.ok_or_else(|| {
                CospaError::MissingArtifact("latent-mode evaluation needs the encoder".into())
            })?;
            if model.d_z != bundle.aug_dim {
                return Err(CospaError::Shape(format!(
                    "encoder latent dim {} vs policy augmentation dim {}",
                    model.d_z, bundle.aug_dim
                )));
            }
            if bundle.latent_stats.is_none() {
                return Err(CospaError::Format(
                    "latent-mode bundle lacks latent normalization stats".into(),
                ));
            }
            if opts.latent_source == LatentSource::Predicted {
                let pred = predictor.ok_or_else(|| {
                    CospaError::MissingArtifact("latent-mode evaluation needs the predictor".into())
                })?;
                if pred.n_c != opts.n_c {
                    return Err(CospaError::Config(format!(
                        "predictor consumes {} context episodes, evaluation provides {}",
                        pred.n_c, opts.n_c
                    )));
                }
                if pred.d_z != bundle.aug_dim {
                    return Err(CospaError::Shape(format!(
                        "predictor regresses {} latent dims, policy consumes {}",
                        pred.d_z, bundle.aug_dim
                    )));
                }
            }
        }
    }

    let d_count = opts.n_deployments;
    let n_c = opts.n_c;
    let sd = spec.state_dim;
    let in_dim = 2 * sd + spec.action_dim + 1;
    let mut rngs: Vec<ChaCha8Rng> =
        (0..d_count).map(|d| substream(master_seed, "eval", d as u64)).collect();

    let hips: Vec<Vec<f32>> =
        rngs.iter_mut().map(|rng| spec.schedule.sequence(n_c + 1, rng)).collect();

    // Oracle corruption draws happen here, before any rollout consumes the
    // per-deployment streams further.
    let oracle_rows: Option<Vec<f32>> = match bundle.mode {
        AugmentationMode::Oracle { sigma } => {
            let values = spec.hip_values();
            let (mu, std) = hip_standardizer(&values);
            Some(
                (0..d_count)
                    .map(|d| {
                        let z = hips[d][n_c];
                        (corrupt_hip(z, sigma, &values, opts.corrupt_law, &mut rngs[d]) - mu) / std
                    })
                    .collect(),
            )
        }
        _ => None,
    };

    // Context episodes, recorded only when something will encode them.
    let need_rows = bundle.mode == AugmentationMode::Latent
        && opts.latent_source == LatentSource::Predicted;
    let mut ctx_rows = vec![0.0f32; if need_rows { d_count * n_c * spec.horizon * in_dim } else { 0 }];
    // ep indexes the per-deployment HiP columns, not a single slice.
    #[allow(clippy::needless_range_loop)]
    for ep in 0..n_c {
        let zs: Vec<f32> = (0..d_count).map(|d| hips[d][ep]).collect();
        let offset = |d: usize| (d * n_c + ep) * spec.horizon;
        let rows = if need_rows {
            Some((&mut ctx_rows[..], &offset as &dyn Fn(usize) -> usize))
        } else {
            None
        };
        roll_behavior_lockstep(spec, behavior, &zs, opts.behavior_noise, &mut rngs, rows)?;
    }

    let eval_zs: Vec<f32> = (0..d_count).map(|d| hips[d][n_c]).collect();

    let aug_rows: Vec<f32> = match bundle.mode {
        AugmentationMode::Blind => Vec::new(),
        AugmentationMode::Oracle { .. } => oracle_rows.unwrap(),
        AugmentationMode::Latent => {
            let model = cpc.unwrap();
            let stats = bundle.latent_stats.as_ref().unwrap();
            match opts.latent_source {
                LatentSource::Predicted => {
                    // Encode all context trajectories at once, then regress.
                    let enc = model.enc.forward_valued(
                        &model.params,
                        &Tensor::from_vec(d_count * n_c * spec.horizon, in_dim, ctx_rows)?,
                    );
                    let d_z = model.d_z;
                    let mut latents = vec![0.0f32; d_count * n_c * d_z];
                    for traj in 0..d_count * n_c {
                        let base = traj * spec.horizon;
                        let dst = &mut latents[traj * d_z..(traj + 1) * d_z];
                        for t in 0..spec.horizon {
                            for (j, v) in dst.iter_mut().enumerate() {
                                *v += enc.get(base + t, j);
                            }
                        }
                        for v in dst.iter_mut() {
                            *v /= spec.horizon as f32;
                        }
                        stats.apply(dst);
                    }
                    let steps: Vec<Tensor<f32>> = (0..n_c)
                        .map(|s| {
                            let mut rows = Vec::with_capacity(d_count * d_z);
                            for d in 0..d_count {
                                let traj = d * n_c + s;
                                rows.extend_from_slice(
                                    &latents[traj * d_z..(traj + 1) * d_z],
                                );
                            }
                            Tensor::from_vec(d_count, d_z, rows)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let pred = predictor.unwrap().predict_batch(&steps)?;
                    pred.as_slice().to_vec()
                }
                LatentSource::LeakTrueEncoding => {
                    // One extra behavior episode at the evaluated HiP, whose
                    // encoding replaces the prediction.
                    let mut rows = vec![0.0f32; d_count * spec.horizon * in_dim];
                    let offset = |d: usize| d * spec.horizon;
                    roll_behavior_lockstep(
                        spec,
                        behavior,
                        &eval_zs,
                        opts.behavior_noise,
                        &mut rngs,
                        Some((&mut rows[..], &offset as &dyn Fn(usize) -> usize)),
                    )?;
                    let enc = model.enc.forward_valued(
                        &model.params,
                        &Tensor::from_vec(d_count * spec.horizon, in_dim, rows)?,
                    );
                    let d_z = model.d_z;
                    let mut out = vec![0.0f32; d_count * d_z];
                    for d in 0..d_count {
                        let dst = &mut out[d * d_z..(d + 1) * d_z];
                        for t in 0..spec.horizon {
                            for (j, v) in dst.iter_mut().enumerate() {
                                *v += enc.get(d * spec.horizon + t, j);
                            }
                        }
                        for v in dst.iter_mut() {
                            *v /= spec.horizon as f32;
                        }
                        stats.apply(dst);
                    }
                    out
                }
            }
        }
    };

    let returns = roll_bundle_lockstep(spec, bundle, &eval_zs, &aug_rows, &mut rngs)?;
    Ok(EvalReport::from_returns(returns, n_c, master_seed))
}

/// Multinomial logistic regression on the autodiff core: full-batch
/// gradient steps on the train split, accuracy on the held-out split.
/// Labels are matched exactly; every distinct value is one class.
pub fn linear_probe(
    latents: &[Vec<f32>],
    labels: &[f32],
    split: f64,
    master_seed: u64,
) -> Result<f32> {
    if latents.len() != labels.len() || latents.is_empty() {
        return Err(CospaError::Shape("probe needs matching latents and labels".into()));
    }
    if !(0.0 < split && split < 1.0) {
        return Err(CospaError::Config(format!("split must lie in (0,1), got {split}")));
    }
    let mut classes: Vec<f32> = labels.to_vec();
    classes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    classes.dedup();
    let k = classes.len();
    if k < 2 {
        return Err(CospaError::Config("probe needs at least two classes".into()));
    }
    let class_of = |y: f32| classes.iter().position(|c| *c == y).unwrap();
    let n = latents.len();
    let d = latents[0].len();

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = substream(master_seed, "probe-split", 0);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((split * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = idx.split_at(n_train);

    let gather = |ids: &[usize]| -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut x = Vec::with_capacity(ids.len() * d);
        let mut y = Vec::with_capacity(ids.len());
        for &i in ids {
            x.extend_from_slice(&latents[i]);
            y.push(class_of(labels[i]));
        }
        Ok((Tensor::from_vec(ids.len(), d, x)?, y))
    };
    let (x_train, y_train) = gather(train_idx)?;
    let (x_test, y_test) = gather(test_idx)?;

    let mut params = ParamSet::new();
    params.add("w", Tensor::zeros(d, k))?;
    params.add("b", Tensor::zeros(1, k))?;
    let mut opt = AdamState::new(&params);
    let adam = AdamCfg::with_lr(5e-2);
    for _ in 0..300 {
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &params);
        let x = tape.constant(&x_train);
        let w = bp.var(&params, "w");
        let b = bp.var(&params, "b");
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_bias(logits, b)?;
        let loss = tape.cross_entropy_logits(logits, &y_train)?;
        tape.backward(loss)?;
        let grads = bp.grads(&tape);
        adam_step(&mut params, &grads, &mut opt, adam);
    }

    let w = params.get("w");
    let b = params.get("b");
    let mut correct = 0usize;
    for (i, &y) in y_test.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for c in 0..k {
            let mut v = b.get(0, c);
            for j in 0..d {
                v += x_test.get(i, j) * w.get(j, c);
            }
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f32 / y_test.len() as f32)
}

/// Normalized per-trajectory latents of a whole dataset, with the
/// ground-truth HiPs as probe labels.
pub fn trajectory_latents(
    model: &CpcModel<f32>,
    ds: &Dataset,
) -> Result<(Vec<Vec<f32>>, Vec<f32>)> {
    let (n, m) = (ds.header.n_deployments, ds.header.episodes);
    let mut latents = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n * m);
    for dep in 0..n {
        for ep in 0..m {
            latents.push(model.encode_trajectory(&ds.trajectory(dep, ep))?);
            labels.push(ds.deployments[dep].hips[ep]);
        }
    }
    let stats = latent_stats(&latents)?;
    for z in latents.iter_mut() {
        stats.apply(z);
    }
    Ok((latents, labels))
}

/// Everything the multi-stage runs share.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub collect_deployments: usize,
    pub collect_noise: f64,
    pub cpc: CpcConfig,
    pub predictor: PredictorConfig,
    pub rl: Td3BcConfig,
    pub eval: EvalOptions,
}

pub struct CospaArtifacts {
    pub cpc: CpcModel<f32>,
    pub predictor: PredictorModel<f32>,
    pub bundle: PolicyBundle,
    pub report: EvalReport,
    pub cpc_curve: Vec<(usize, f32)>,
    pub predictor_curve: Vec<(usize, f32)>,
    pub rl_loss_curve: Vec<(usize, f32, f32)>,
    pub rl_eval_curve: Vec<(usize, f32)>,
}

/// Latent pipeline on an existing dataset: encoder, augmentation,
/// predictor, policy, evaluation.
pub fn train_and_eval_cospa(
    spec: &EnvSpec,
    ds: &Dataset,
    behavior: &BehaviorPolicy,
    pcfg: &PipelineConfig,
    master_seed: u64,
) -> Result<CospaArtifacts> {
    let cpc_out = train_cpc(ds, &pcfg.cpc, master_seed)?;
    let (aug, stats) =
        build_augmented(ds, AugmentationMode::Latent, Some(&cpc_out.model), pcfg.eval.corrupt_law, master_seed)?;
    let pred_out = train_predictor(&aug, &pcfg.predictor, master_seed)?;
    let hook_ctx = (&cpc_out.model, &pred_out.model);
    let rl_out = train_td3bc(
        &aug,
        AugmentationMode::Latent,
        stats,
        &pcfg.rl,
        master_seed,
        |step, bundle| {
            let opts = EvalOptions { n_deployments: 20, ..pcfg.eval.clone() };
            let report = evaluate_policy(
                spec,
                bundle,
                behavior,
                Some(hook_ctx.0),
                Some(hook_ctx.1),
                &opts,
                master_seed ^ fnv1a(&step.to_le_bytes()),
            )?;
            Ok(Some(report.mean))
        },
    )?;
    let report = evaluate_policy(
        spec,
        &rl_out.bundle,
        behavior,
        Some(&cpc_out.model),
        Some(&pred_out.model),
        &pcfg.eval,
        master_seed,
    )?;
    Ok(CospaArtifacts {
        cpc: cpc_out.model,
        predictor: pred_out.model,
        bundle: rl_out.bundle,
        report,
        cpc_curve: cpc_out.curve,
        predictor_curve: pred_out.curve,
        rl_loss_curve: rl_out.loss_curve,
        rl_eval_curve: rl_out.eval_curve,
    })
}

pub struct SimpleArtifacts {
    pub bundle: PolicyBundle,
    pub report: EvalReport,
    pub rl_loss_curve: Vec<(usize, f32, f32)>,
    pub rl_eval_curve: Vec<(usize, f32)>,
}

/// Blind or oracle pipeline on an existing dataset.
pub fn train_and_eval_simple(
    spec: &EnvSpec,
    ds: &Dataset,
    behavior: &BehaviorPolicy,
    mode: AugmentationMode,
    pcfg: &PipelineConfig,
    master_seed: u64,
) -> Result<SimpleArtifacts> {
    if mode == AugmentationMode::Latent {
        return Err(CospaError::Config("latent mode runs through the full pipeline".into()));
    }
    let (aug, _) = build_augmented(ds, mode, None, pcfg.eval.corrupt_law, master_seed)?;
    let rl_out = train_td3bc(&aug, mode, None, &pcfg.rl, master_seed, |step, bundle| {
        let opts = EvalOptions { n_deployments: 20, ..pcfg.eval.clone() };
        let report = evaluate_policy(
            spec,
            bundle,
            behavior,
            None,
            None,
            &opts,
            master_seed ^ fnv1a(&step.to_le_bytes()),
        )?;
        Ok(Some(report.mean))
    })?;
    let report =
        evaluate_policy(spec, &rl_out.bundle, behavior, None, None, &pcfg.eval, master_seed)?;
    Ok(SimpleArtifacts {
        bundle: rl_out.bundle,
        report,
        rl_loss_curve: rl_out.loss_curve,
        rl_eval_curve: rl_out.eval_curve,
    })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub sigma: f32,
    pub mean: f32,
    pub ci_half: f32,
}

/// Fresh oracle policy per corruption level on a fixed dataset; evaluation
/// corrupts with the same sigma.
pub fn run_noisy_oracle_sweep(
    spec: &EnvSpec,
    ds: &Dataset,
    behavior: &BehaviorPolicy,
    sigmas: &[f32],
    pcfg: &PipelineConfig,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for (i, &sigma) in sigmas.iter().enumerate() {
        let seed = master_seed ^ fnv1a(format!("noisy-oracle-{i}").as_bytes());
        let out = train_and_eval_simple(
            spec,
            ds,
            behavior,
            AugmentationMode::Oracle { sigma },
            pcfg,
            seed,
        )?;
        rows.push(SweepRow { sigma, mean: out.report.mean, ci_half: out.report.ci_half });
    }
    Ok(rows)
}

/// Full latent pipeline per schedule-randomness level: collection under the
/// corrupted schedule, encoder, predictor, policy, evaluation.
pub fn run_hip_randomness_sweep(
    env: EnvId,
    behavior: &BehaviorPolicy,
    sigmas: &[f32],
    pcfg: &PipelineConfig,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for (i, &sigma) in sigmas.iter().enumerate() {
        let seed = master_seed ^ fnv1a(format!("hip-random-{i}").as_bytes());
        let spec = EnvSpec::standard(env).with_hip_sigma(sigma)?;
        let ds = collect_deployments(
            &spec,
            behavior,
            pcfg.collect_deployments,
            pcfg.collect_noise,
            seed,
        )?;
        let out = train_and_eval_cospa(&spec, &ds, behavior, pcfg, seed)?;
        rows.push(SweepRow { sigma, mean: out.report.mean, ci_half: out.report.ci_half });
    }
    Ok(rows)
}

/// Mean return of the goal-aware scripted policy (step straight toward the
/// goal) on the 1-D task at an arbitrary horizon. Pins down what "optimal"
/// looks like when checking the horizon choice.
pub fn scripted_goal1d_return(horizon: usize, episodes: usize, master_seed: u64) -> Result<f32> {
    if horizon == 0 || episodes == 0 {
        return Err(CospaError::Config("scripted reference needs horizon and episodes".into()));
    }
    let mut spec = EnvSpec::standard(EnvId::Goal1d);
    spec.horizon = horizon;
    let mut rng = substream(master_seed, "scripted", 0);
    let mut total = 0.0f64;
    let mut done = 0usize;
    while done < episodes {
        let hips = spec.schedule.sequence(spec.episodes, &mut rng);
        for &z in hips.iter().take(episodes - done) {
            let mut st = env_reset(&spec, z, &mut rng);
            let mut ep_ret = 0.0f64;
            loop {
                let a = [(z - st.s[0]).clamp(-ACTION_BOUND, ACTION_BOUND)];
                let (next, r, fin) = env_step(&spec, &st, &a)?;
                ep_ret += r as f64;
                st = next;
                if fin {
                    break;
                }
            }
            total += ep_ret;
            done += 1;
        }
    }
    Ok((total / episodes as f64) as f32)
}
