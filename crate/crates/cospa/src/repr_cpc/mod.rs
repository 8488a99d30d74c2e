//! Trajectory-level contrastive task inference. A shared transition encoder
//! maps (s, a, r, s') rows to d_z-dimensional latents; a trajectory's latent
//! is the mean over its transitions; a GRU summarizes the last N_CPC
//! trajectory latents into a context; a classifier scores (context,
//! candidate latent) pairs. Training minimizes InfoNCE: the true next
//! trajectory against negatives drawn from other deployments at the same
//! episode index.
//!
//! Training subsamples transitions per trajectory for throughput; public
//! encoding always takes the full-horizon mean.

pub mod toy;

use rand::Rng;

use crate::autodiff::{
    adam_step, AdamCfg, AdamState, BoundParams, Gru, Mlp, MlpSpec, ParamSet, Real, Tape,
    Tensor, Var,
};
use crate::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use crate::dataset::{sample_cpc_batch, AugmentedDataset, CpcWindow, Dataset};
use crate::error::{CospaError, Result};
use crate::rng::substream;

#[derive(Clone, Debug)]
pub struct CpcConfig {
    pub d_z: usize,
    pub n_neg: usize,
    pub n_cpc: usize,
    pub k: usize,
    pub lr: f64,
    pub steps: usize,
    /// Contrastive items folded into one gradient step.
    pub items_per_step: usize,
    /// Transitions sampled per trajectory during training; 0 means all.
    pub n_sub: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    /// Diagnostic ablation: negatives become resampled views of the positive
    /// trajectory. Candidates are then exchangeable, so no classifier can
    /// beat chance and the loss is pinned at ln(n_neg + 1).
    pub same_source_negatives: bool,
}

impl Default for CpcConfig {
    fn default() -> Self {
        CpcConfig {
            d_z: 2,
            n_neg: 16,
            n_cpc: 5,
            k: 1,
            lr: 3e-4,
            steps: 20_000,
            items_per_step: 32,
            n_sub: 10,
            gru_hidden: 16,
            mlp_hidden: 128,
            same_source_negatives: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CpcModel<R: Real = f32> {
    pub params: ParamSet<R>,
    pub enc: Mlp,
    pub gru: Gru,
    pub clf: Mlp,
    pub in_dim: usize,
    pub d_z: usize,
}

impl<R: Real> CpcModel<R> {
    pub fn init(in_dim: usize, cfg: &CpcConfig, rng: &mut impl Rng) -> Result<CpcModel<R>> {
        let mut params = ParamSet::new();
        let h = cfg.mlp_hidden;
        let enc = Mlp::init("enc", MlpSpec::relu(vec![in_dim, h, h, cfg.d_z]), &mut params, rng)?;
        let gru = Gru::init("ar", cfg.d_z, cfg.gru_hidden, &mut params, rng)?;
        let clf = Mlp::init(
            "clf",
            MlpSpec::relu(vec![cfg.gru_hidden + cfg.d_z, h, h, 1]),
            &mut params,
            rng,
        )?;
        Ok(CpcModel { params, enc, gru, clf, in_dim, d_z: cfg.d_z })
    }

    /// Trajectory latent: mean of per-transition encodings.
    pub fn encode_rows(&self, rows: &Tensor<R>) -> Result<Vec<R>> {
        if rows.rows() == 0 {
            return Err(CospaError::Shape("cannot encode an empty trajectory".into()));
        }
        let enc = self.enc.forward_valued(&self.params, rows);
        let (n, d) = enc.shape();
        let mut mean = vec![R::zero(); d];
        for i in 0..n {
            for (j, v) in mean.iter_mut().enumerate() {
                *v += enc.get(i, j);
            }
        }
        let nr = R::from_f64(n as f64);
        for v in mean.iter_mut() {
            *v = *v / nr;
        }
        Ok(mean)
    }

    /// Final GRU hidden state after consuming the latents in order.
    pub fn summarize_context(&self, latents: &Tensor<R>) -> Result<Tensor<R>> {
        if latents.rows() == 0 {
            return Err(CospaError::Shape("context needs at least one latent".into()));
        }
        let mut h = Tensor::zeros(1, self.gru.hidden);
        for i in 0..latents.rows() {
            let x = Tensor::from_vec(1, latents.cols(), latents.row(i).to_vec())?;
            h = self.gru.step_valued(&self.params, &x, &h);
        }
        Ok(h)
    }

    /// Classifier logit for one (context, candidate latent) pair.
    pub fn score(&self, context: &Tensor<R>, candidate: &[R]) -> Result<R> {
        let mut x = context.row(0).to_vec();
        x.extend_from_slice(candidate);
        let t = Tensor::from_vec(1, x.len(), x)?;
        Ok(self.clf.forward_valued(&self.params, &t).item())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint_to_bytes(&[&self.params])
    }

    pub fn from_bytes(bytes: &[u8], in_dim: usize, cfg: &CpcConfig) -> Result<CpcModel<R>> {
        let entries = checkpoint_from_bytes::<R>(bytes)?;
        let mut probe_rng = substream(0, "cpc-shape", 0);
        let mut model = CpcModel::init(in_dim, cfg, &mut probe_rng)?;
        if entries.len() != model.params.len() {
            return Err(CospaError::Format(format!(
                "cpc checkpoint holds {} tensors, expected {}",
                entries.len(),
                model.params.len()
            )));
        }
        let mut params = ParamSet::new();
        for (i, (name, t)) in entries.into_iter().enumerate() {
            let (want_name, want_t) = model.params.at(i);
            if name != want_name || t.shape() != want_t.shape() {
                return Err(CospaError::Format(format!(
                    "cpc checkpoint entry {i} is {name} {:?}, expected {want_name} {:?}",
                    t.shape(),
                    want_t.shape()
                )));
            }
            params.add(name, t)?;
        }
        model.params = params;
        Ok(model)
    }
}

impl CpcModel<f32> {
    /// Full-horizon trajectory latent straight from a dataset slice.
    pub fn encode_trajectory(&self, traj: &crate::dataset::TrajSlice<'_>) -> Result<Vec<f32>> {
        let mut rows = Vec::with_capacity(traj.horizon * self.in_dim);
        for t in 0..traj.horizon {
            traj.push_transition_row(t, &mut rows);
        }
        self.encode_rows(&Tensor::from_vec(traj.horizon, self.in_dim, rows)?)
    }
}

/// One materialized gradient-step batch. Context transitions are stored per
/// GRU step (each tensor is items*n_sub rows); candidates are item-major
/// with the positive first in every item's block.
pub struct CpcBatchData<R: Real = f32> {
    pub items: usize,
    pub n_cpc: usize,
    pub n_cand: usize,
    pub n_sub: usize,
    pub ctx_steps: Vec<Tensor<R>>,
    pub cands: Tensor<R>,
}

/// InfoNCE on the tape. Returns the scalar loss Var; callers decide whether
/// to backprop.
pub fn cpc_loss_on_tape<R: Real>(
    model: &CpcModel<R>,
    tape: &mut Tape<R>,
    bp: &BoundParams,
    batch: &CpcBatchData<R>,
) -> Result<Var> {
    let set = &model.params;
    let mut h = tape.constant_owned(Tensor::zeros(batch.items, model.gru.hidden));
    for step_rows in &batch.ctx_steps {
        let x = tape.constant(step_rows);
        let enc = model.enc.forward(tape, bp, set, x)?;
        let z = tape.mean_segments(enc, batch.n_sub)?;
        h = model.gru.step(tape, bp, set, z, h)?;
    }
    let cand_rows = tape.constant(&batch.cands);
    let cand_enc = model.enc.forward(tape, bp, set, cand_rows)?;
    let cand_z = tape.mean_segments(cand_enc, batch.n_sub)?;
    let c_rep = tape.repeat_rows(h, batch.n_cand);
    let pairs = tape.concat_cols(&[c_rep, cand_z])?;
    let logits = model.clf.forward(tape, bp, set, pairs)?;
    let logits = tape.reshape(logits, batch.items, batch.n_cand)?;
    tape.cross_entropy_logits(logits, &vec![0usize; batch.items])
}

/// Loss value only, no gradients.
pub fn infonce_loss<R: Real>(model: &CpcModel<R>, batch: &CpcBatchData<R>) -> Result<R> {
    let mut tape: Tape<R> = Tape::new();
    let bp = BoundParams::bind_frozen(&mut tape, &model.params);
    let loss = cpc_loss_on_tape(model, &mut tape, &bp, batch)?;
    Ok(tape.value(loss).item())
}

/// Draw one training batch from a deployment dataset.
pub fn assemble_cpc_batch(
    ds: &Dataset,
    cfg: &CpcConfig,
    model_in_dim: usize,
    rng: &mut impl Rng,
) -> Result<CpcBatchData<f32>> {
    let h = ds.header.horizon;
    let n_sub = if cfg.n_sub == 0 || cfg.n_sub > h { h } else { cfg.n_sub };
    let items = cfg.items_per_step;
    let n_cand = cfg.n_neg + 1;
    let mut ctx_steps: Vec<Vec<f32>> = vec![Vec::with_capacity(items * n_sub * model_in_dim); cfg.n_cpc];
    let mut cands = Vec::with_capacity(items * n_cand * n_sub * model_in_dim);
    let sample_into = |out: &mut Vec<f32>, dep: usize, ep: usize, rng: &mut dyn rand::RngCore| {
        let traj = ds.trajectory(dep, ep);
        if n_sub == h {
            for t in 0..h {
                traj.push_transition_row(t, out);
            }
        } else {
            for _ in 0..n_sub {
                let t = rand::Rng::random_range(&mut *rng, 0..h);
                traj.push_transition_row(t, out);
            }
        }
    };
    let mut idxs = Vec::with_capacity(items);
    for _ in 0..items {
        idxs.push(sample_cpc_batch(
            ds,
            CpcWindow { n_cpc: cfg.n_cpc, k: cfg.k, n_neg: cfg.n_neg },
            rng,
        )?);
    }
    for idx in &idxs {
        let ctx = idx.context_range_0idx(cfg.n_cpc);
        for (s, ep) in ctx.enumerate() {
            sample_into(&mut ctx_steps[s], idx.pos_dep, ep, rng);
        }
        let fut = idx.future_0idx(cfg.k);
        sample_into(&mut cands, idx.pos_dep, fut, rng);
        if cfg.same_source_negatives {
            for _ in 0..cfg.n_neg {
                sample_into(&mut cands, idx.pos_dep, fut, rng);
            }
        } else {
            for &nd in &idx.neg_deps {
                sample_into(&mut cands, nd, fut, rng);
            }
        }
    }
    let ctx_steps = ctx_steps
        .into_iter()
        .map(|v| Tensor::from_vec(items * n_sub, model_in_dim, v))
        .collect::<Result<Vec<_>>>()?;
    let cands = Tensor::from_vec(items * n_cand * n_sub, model_in_dim, cands)?;
    Ok(CpcBatchData { items, n_cpc: cfg.n_cpc, n_cand, n_sub, ctx_steps, cands })
}

pub struct CpcOutcome {
    pub model: CpcModel<f32>,
    /// (step, loss) rows.
    pub curve: Vec<(usize, f32)>,
}

pub fn train_cpc(ds: &Dataset, cfg: &CpcConfig, master_seed: u64) -> Result<CpcOutcome> {
    let in_dim = 2 * ds.header.state_dim + ds.header.action_dim + 1;
    let mut rng_init = substream(master_seed, "cpc-init", 0);
    let mut rng_batch = substream(master_seed, "cpc-batch", 0);
    let mut model: CpcModel<f32> = CpcModel::init(in_dim, cfg, &mut rng_init)?;
    let mut opt = AdamState::new(&model.params);
    let adam = AdamCfg::with_lr(cfg.lr);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let batch = assemble_cpc_batch(ds, cfg, in_dim, &mut rng_batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &model.params);
        let loss = cpc_loss_on_tape(&model, &mut tape, &bp, &batch)?;
        tape.backward(loss)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(CospaError::Divergence(format!(
                "cpc loss became non-finite at step {step}"
            )));
        }
        let grads = bp.grads(&tape);
        adam_step(&mut model.params, &grads, &mut opt, adam);
        if step % 50 == 0 || step + 1 == cfg.steps {
            curve.push((step, lv));
        }
    }
    Ok(CpcOutcome { model, curve })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentStats {
    pub fn apply(&self, z: &mut [f32]) {
        for (j, v) in z.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.std[j];
        }
    }
}

/// Compute per-dimension mean/std over rows; std is eps-guarded.
pub fn latent_stats(latents: &[Vec<f32>]) -> Result<LatentStats> {
    let n = latents.len();
    if n == 0 {
        return Err(CospaError::Shape("no latents to normalize".into()));
    }
    let d = latents[0].len();
    let mut mean = vec![0.0f64; d];
    for z in latents {
        for j in 0..d {
            mean[j] += z[j] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; d];
    for z in latents {
        for j in 0..d {
            let c = z[j] as f64 - mean[j];
            var[j] += c * c;
        }
    }
    let std: Vec<f32> = var.iter().map(|v| ((v / n as f64).sqrt().max(1e-6)) as f32).collect();
    Ok(LatentStats { mean: mean.into_iter().map(|m| m as f32).collect(), std })
}

/// Encode every trajectory (full horizon), z-score the latents, and attach
/// them to every transition. Ground-truth HiPs are dropped here.
pub fn augment_dataset(
    model: &CpcModel<f32>,
    ds: &Dataset,
) -> Result<(AugmentedDataset, LatentStats)> {
    let header = &ds.header;
    let (n, m) = (header.n_deployments, header.episodes);
    let mut raw: Vec<Vec<f32>> = Vec::with_capacity(n * m);
    for dep in 0..n {
        for ep in 0..m {
            raw.push(model.encode_trajectory(&ds.trajectory(dep, ep))?);
        }
    }
    let stats = latent_stats(&raw)?;
    for z in raw.iter_mut() {
        stats.apply(z);
    }
    let aug = build_augmented_from_latents(ds, &raw, model.d_z)?;
    Ok((aug, stats))
}

/// Assemble the flat transition store given one augmentation row per
/// trajectory (already normalized / corrupted as the caller intends).
pub fn build_augmented_from_latents(
    ds: &Dataset,
    traj_rows: &[Vec<f32>],
    aug_dim: usize,
) -> Result<AugmentedDataset> {
    let h = &ds.header;
    let (n, m, hor) = (h.n_deployments, h.episodes, h.horizon);
    if traj_rows.len() != n * m {
        return Err(CospaError::Shape(format!(
            "need {} augmentation rows, got {}",
            n * m,
            traj_rows.len()
        )));
    }
    let total = n * m * hor;
    let mut out = AugmentedDataset {
        env: h.env,
        state_dim: h.state_dim,
        action_dim: h.action_dim,
        aug_dim,
        n_deployments: n,
        episodes: m,
        horizon: hor,
        states: Vec::with_capacity(total * h.state_dim),
        actions: Vec::with_capacity(total * h.action_dim),
        rewards: Vec::with_capacity(total),
        next_states: Vec::with_capacity(total * h.state_dim),
        aug: Vec::with_capacity(total * aug_dim),
        traj_aug: Vec::with_capacity(n * m * aug_dim),
    };
    for dep in 0..n {
        let d = &ds.deployments[dep];
        out.states.extend_from_slice(&d.states);
        out.actions.extend_from_slice(&d.actions);
        out.rewards.extend_from_slice(&d.rewards);
        out.next_states.extend_from_slice(&d.next_states);
        for ep in 0..m {
            let row = &traj_rows[dep * m + ep];
            if row.len() != aug_dim {
                return Err(CospaError::Shape(format!(
                    "augmentation row for ({dep},{ep}) has {} dims, expected {aug_dim}",
                    row.len()
                )));
            }
            out.traj_aug.extend_from_slice(row);
            for _ in 0..hor {
                out.aug.extend_from_slice(row);
            }
        }
    }
    Ok(out)
}
