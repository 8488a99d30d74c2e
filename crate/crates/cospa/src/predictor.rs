//! Next-latent regression: a two-layer MLP embeds each context latent, a
//! GRU consumes the embeddings in order, and a linear head regresses the
//! following trajectory latent. Used at evaluation time, where the upcoming
//! episode's latent cannot be inferred from data that does not exist yet.

use rand::Rng;

use crate::autodiff::{
    adam_step, AdamCfg, AdamState, BoundParams, Gru, Mlp, MlpSpec, ParamSet, Real, Tape, Tensor,
    Var,
};
use crate::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use crate::dataset::{sample_latent_window, AugmentedDataset};
use crate::error::{CospaError, Result};
use crate::rng::substream;

#[derive(Clone, Debug)]
pub struct PredictorConfig {
    pub n_c: usize,
    pub mlp_hidden: usize,
    pub gru_hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            n_c: 5,
            mlp_hidden: 128,
            gru_hidden: 16,
            lr: 1e-3,
            steps: 10_000,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PredictorModel<R: Real = f32> {
    pub params: ParamSet<R>,
    pub embed: Mlp,
    pub gru: Gru,
    pub head: Mlp,
    pub d_z: usize,
    pub n_c: usize,
}

impl<R: Real> PredictorModel<R> {
    pub fn init(d_z: usize, cfg: &PredictorConfig, rng: &mut impl Rng) -> Result<PredictorModel<R>> {
        let mut params = ParamSet::new();
        let h = cfg.mlp_hidden;
        let embed = Mlp::init("emb", MlpSpec::relu(vec![d_z, h, h]), &mut params, rng)?;
        let gru = Gru::init("seq", h, cfg.gru_hidden, &mut params, rng)?;
        let head = Mlp::init("head", MlpSpec::relu(vec![cfg.gru_hidden, d_z]), &mut params, rng)?;
        Ok(PredictorModel { params, embed, gru, head, d_z, n_c: cfg.n_c })
    }

    /// Batched regression: `ctx_steps` holds one (batch, d_z) tensor per
    /// context position, oldest first.
    pub fn predict_batch(&self, ctx_steps: &[Tensor<R>]) -> Result<Tensor<R>> {
        if ctx_steps.len() != self.n_c {
            return Err(CospaError::Shape(format!(
                "predictor needs exactly {} context latents, got {}",
                self.n_c,
                ctx_steps.len()
            )));
        }
        let batch = ctx_steps[0].rows();
        let mut h = Tensor::zeros(batch, self.gru.hidden);
        for x in ctx_steps {
            let e = self.embed.forward_valued(&self.params, x);
            h = self.gru.step_valued(&self.params, &e, &h);
        }
        Ok(self.head.forward_valued(&self.params, &h))
    }

    /// Single-window regression from a (n_c, d_z) context, oldest first.
    pub fn predict_next(&self, context: &Tensor<R>) -> Result<Vec<R>> {
        if context.rows() != self.n_c || context.cols() != self.d_z {
            return Err(CospaError::Shape(format!(
                "predictor context must be {}x{}, got {}x{}",
                self.n_c,
                self.d_z,
                context.rows(),
                context.cols()
            )));
        }
        let steps: Vec<Tensor<R>> = (0..self.n_c)
            .map(|i| Tensor::from_vec(1, self.d_z, context.row(i).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_batch(&steps)?.as_slice().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint_to_bytes(&[&self.params])
    }

    pub fn from_bytes(bytes: &[u8], d_z: usize, cfg: &PredictorConfig) -> Result<PredictorModel<R>> {
        let entries = checkpoint_from_bytes::<R>(bytes)?;
        let mut probe_rng = substream(0, "pred-shape", 0);
        let mut model = PredictorModel::init(d_z, cfg, &mut probe_rng)?;
        if entries.len() != model.params.len() {
            return Err(CospaError::Format(format!(
                "predictor checkpoint holds {} tensors, expected {}",
                entries.len(),
                model.params.len()
            )));
        }
        let mut params = ParamSet::new();
        for (i, (name, t)) in entries.into_iter().enumerate() {
            let (want_name, want_t) = model.params.at(i);
            if name != want_name || t.shape() != want_t.shape() {
                return Err(CospaError::Format(format!(
                    "predictor checkpoint entry {i} is {name} {:?}, expected {want_name} {:?}",
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

/// MSE between the regressed and true next latents, on the tape.
pub fn predictor_loss_on_tape<R: Real>(
    model: &PredictorModel<R>,
    tape: &mut Tape<R>,
    bp: &BoundParams,
    ctx_steps: &[Tensor<R>],
    targets: &Tensor<R>,
) -> Result<Var> {
    let set = &model.params;
    let batch = targets.rows();
    let mut h = tape.constant_owned(Tensor::zeros(batch, model.gru.hidden));
    for step_rows in ctx_steps {
        let x = tape.constant(step_rows);
        let e = model.embed.forward(tape, bp, set, x)?;
        h = model.gru.step(tape, bp, set, e, h)?;
    }
    let pred = model.head.forward(tape, bp, set, h)?;
    let y = tape.constant(targets);
    tape.mse(pred, y)
}

/// Materialize one training batch of latent windows from the augmented
/// dataset's per-trajectory rows.
pub fn assemble_latent_batch(
    aug: &AugmentedDataset,
    n_c: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Tensor<f32>>, Tensor<f32>)> {
    let d = aug.aug_dim;
    if d == 0 {
        return Err(CospaError::Config("dataset carries no latents to regress".into()));
    }
    let mut steps: Vec<Vec<f32>> = vec![Vec::with_capacity(batch * d); n_c];
    let mut targets = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        let (dep, tgt) = sample_latent_window(aug, n_c, rng)?;
        for (s, step) in steps.iter_mut().enumerate() {
            step.extend_from_slice(aug.traj_aug_at(dep, tgt - n_c + s));
        }
        targets.extend_from_slice(aug.traj_aug_at(dep, tgt));
    }
    let steps = steps
        .into_iter()
        .map(|v| Tensor::from_vec(batch, d, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((steps, Tensor::from_vec(batch, d, targets)?))
}

pub struct PredictorOutcome {
    pub model: PredictorModel<f32>,
    /// (step, loss) rows.
    pub curve: Vec<(usize, f32)>,
}

pub fn train_predictor(
    aug: &AugmentedDataset,
    cfg: &PredictorConfig,
    master_seed: u64,
) -> Result<PredictorOutcome> {
    if aug.episodes < cfg.n_c + 1 {
        return Err(CospaError::Config(format!(
            "predictor needs at least {} episodes per deployment, have {}",
            cfg.n_c + 1,
            aug.episodes
        )));
    }
    let mut rng_init = substream(master_seed, "pred-init", 0);
    let mut rng_batch = substream(master_seed, "pred-batch", 0);
    let mut model: PredictorModel<f32> = PredictorModel::init(aug.aug_dim, cfg, &mut rng_init)?;
    let mut opt = AdamState::new(&model.params);
    let adam = AdamCfg::with_lr(cfg.lr);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let (ctx_steps, targets) = assemble_latent_batch(aug, cfg.n_c, cfg.batch, &mut rng_batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &model.params);
        let loss = predictor_loss_on_tape(&model, &mut tape, &bp, &ctx_steps, &targets)?;
        tape.backward(loss)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(CospaError::Divergence(format!(
                "predictor loss became non-finite at step {step}"
            )));
        }
        let grads = bp.grads(&tape);
        adam_step(&mut model.params, &grads, &mut opt, adam);
        if step % 50 == 0 || step + 1 == cfg.steps {
            curve.push((step, lv));
        }
    }
    Ok(PredictorOutcome { model, curve })
}
