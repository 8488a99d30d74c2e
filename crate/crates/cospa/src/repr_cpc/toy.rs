//! An exactly enumerable contrastive problem for validating the loss
//! against its information-theoretic floor and the classifier against the
//! true density ratio.
//!
//! Two latent states alternate deterministically between episode slots; a
//! deployment's phase is uniform. Each "trajectory" is a single symbol from
//! one of four archetypes, emitted from a latent-conditional law. Contexts
//! are three consecutive symbols, the candidate sits at the next slot, and
//! negatives are marginal draws (independent deployments, same slot). Every
//! probability below comes from full enumeration, no sampling.

use rand::Rng;

use crate::autodiff::{
    adam_step, AdamCfg, AdamState, BoundParams, Tape, Tensor,
};
use crate::error::Result;
use crate::rng::substream;

use super::{cpc_loss_on_tape, CpcBatchData, CpcConfig, CpcModel};

pub const SYMBOLS: usize = 4;
pub const CTX_LEN: usize = 3;
pub const N_NEG: usize = 3;

pub const EMIT: [[f64; SYMBOLS]; 2] =
    [[0.6, 0.25, 0.1, 0.05], [0.05, 0.1, 0.25, 0.6]];

pub fn marginal(a: usize) -> f64 {
    0.5 * EMIT[0][a] + 0.5 * EMIT[1][a]
}

pub fn toy_config() -> CpcConfig {
    CpcConfig {
        d_z: 2,
        n_neg: N_NEG,
        n_cpc: CTX_LEN,
        k: 1,
        lr: 1e-3,
        steps: 1500,
        items_per_step: 64,
        n_sub: 1,
        gru_hidden: 16,
        mlp_hidden: 64,
        same_source_negatives: false,
    }
}

fn one_hot(a: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; SYMBOLS];
    v[a] = 1.0;
    v
}

/// Context symbols are emitted at alternating latents ending one slot
/// before the candidate: temporal latents (1-z, z, 1-z) for candidate
/// latent z.
fn ctx_latents(z_next: usize) -> [usize; CTX_LEN] {
    [1 - z_next, z_next, 1 - z_next]
}

pub fn p_ctx_given_z(ctx: &[usize; CTX_LEN], z_next: usize) -> f64 {
    let zs = ctx_latents(z_next);
    ctx.iter().zip(zs.iter()).map(|(&a, &z)| EMIT[z][a]).product()
}

pub fn p_ctx(ctx: &[usize; CTX_LEN]) -> f64 {
    0.5 * p_ctx_given_z(ctx, 0) + 0.5 * p_ctx_given_z(ctx, 1)
}

/// Posterior over the candidate-slot latent given the context.
pub fn posterior_z(ctx: &[usize; CTX_LEN]) -> [f64; 2] {
    let j0 = 0.5 * p_ctx_given_z(ctx, 0);
    let j1 = 0.5 * p_ctx_given_z(ctx, 1);
    [j0 / (j0 + j1), j1 / (j0 + j1)]
}

/// P(candidate = a | ctx).
pub fn p_cand_given_ctx(ctx: &[usize; CTX_LEN], a: usize) -> f64 {
    let post = posterior_z(ctx);
    post[0] * EMIT[0][a] + post[1] * EMIT[1][a]
}

/// True contrastive density ratio P(a | ctx) / P(a).
pub fn density_ratio(ctx: &[usize; CTX_LEN], a: usize) -> f64 {
    p_cand_given_ctx(ctx, a) / marginal(a)
}

pub fn all_contexts() -> Vec<[usize; CTX_LEN]> {
    let mut out = Vec::with_capacity(SYMBOLS.pow(CTX_LEN as u32));
    for a in 0..SYMBOLS {
        for b in 0..SYMBOLS {
            for c in 0..SYMBOLS {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Exact mutual information I(candidate; context) in nats.
pub fn exact_mutual_information() -> f64 {
    let mut i = 0.0;
    for ctx in all_contexts() {
        let pc = p_ctx(&ctx);
        for a in 0..SYMBOLS {
            let pa = p_cand_given_ctx(&ctx, a);
            if pa > 0.0 {
                i += pc * pa * (pa / marginal(a)).ln();
            }
        }
    }
    i
}

/// Classifier logits for every (context, candidate) pair, via the same
/// encode-summarize-score path as training.
fn logit_table(model: &CpcModel<f32>) -> Result<Vec<[f32; SYMBOLS]>> {
    let sym_emb: Vec<Vec<f32>> = (0..SYMBOLS)
        .map(|a| model.encode_rows(&Tensor::from_vec(1, SYMBOLS, one_hot(a))?))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for ctx in all_contexts() {
        let mut lat = Vec::with_capacity(CTX_LEN * model.d_z);
        for &a in &ctx {
            lat.extend_from_slice(&sym_emb[a]);
        }
        let c = model.summarize_context(&Tensor::from_vec(CTX_LEN, model.d_z, lat)?)?;
        let mut row = [0.0f32; SYMBOLS];
        for (a, r) in row.iter_mut().enumerate() {
            *r = model.score(&c, &sym_emb[a])?;
        }
        out.push(row);
    }
    Ok(out)
}

/// Exact population InfoNCE of a model: expectation over context, positive,
/// and every negative combination, weighted by the generative law.
pub fn population_loss(model: &CpcModel<f32>) -> Result<f64> {
    let logits = logit_table(model)?;
    let contexts = all_contexts();
    let mut loss = 0.0;
    for (ci, ctx) in contexts.iter().enumerate() {
        let pc = p_ctx(ctx);
        let row = &logits[ci];
        let exps: Vec<f64> = row.iter().map(|l| (*l as f64).exp()).collect();
        for pos in 0..SYMBOLS {
            let p_pos = pc * p_cand_given_ctx(ctx, pos);
            for n1 in 0..SYMBOLS {
                for n2 in 0..SYMBOLS {
                    for n3 in 0..SYMBOLS {
                        let w = p_pos * marginal(n1) * marginal(n2) * marginal(n3);
                        let denom = exps[pos] + exps[n1] + exps[n2] + exps[n3];
                        loss -= w * (exps[pos] / denom).ln();
                    }
                }
            }
        }
    }
    Ok(loss)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
}

/// Probability-weighted mean Spearman between exp(logit) and the true
/// density ratio, over contexts whose latent posterior is decisive. Flat
/// true ratios on near-ambiguous contexts carry no rankable signal, so
/// those contexts are excluded.
pub fn density_ratio_diagnostic(model: &CpcModel<f32>) -> Result<f64> {
    let logits = logit_table(model)?;
    let contexts = all_contexts();
    let mut num = 0.0;
    let mut den = 0.0;
    for (ci, ctx) in contexts.iter().enumerate() {
        let post = posterior_z(ctx);
        if post[0].max(post[1]) < 0.75 {
            continue;
        }
        let truth: Vec<f64> = (0..SYMBOLS).map(|a| density_ratio(ctx, a)).collect();
        let scored: Vec<f64> = logits[ci].iter().map(|l| (*l as f64).exp()).collect();
        let w = p_ctx(ctx);
        num += w * spearman(&scored, &truth);
        den += w;
    }
    Ok(num / den)
}

fn sample_symbol(law: &[f64; SYMBOLS], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (a, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    SYMBOLS - 1
}

/// Draw one training batch straight from the generative law.
pub fn sample_toy_batch(cfg: &CpcConfig, rng: &mut impl Rng) -> Result<CpcBatchData<f32>> {
    let items = cfg.items_per_step;
    let n_cand = cfg.n_neg + 1;
    let marg = [marginal(0), marginal(1), marginal(2), marginal(3)];
    let mut ctx_steps: Vec<Vec<f32>> = vec![Vec::new(); CTX_LEN];
    let mut cands = Vec::new();
    for _ in 0..items {
        let z_next = if rng.random::<f64>() < 0.5 { 1 } else { 0 };
        let zs = ctx_latents(z_next);
        for (s, &z) in zs.iter().enumerate() {
            ctx_steps[s].extend_from_slice(&one_hot(sample_symbol(&EMIT[z], rng)));
        }
        cands.extend_from_slice(&one_hot(sample_symbol(&EMIT[z_next], rng)));
        for _ in 0..cfg.n_neg {
            cands.extend_from_slice(&one_hot(sample_symbol(&marg, rng)));
        }
    }
    let ctx_steps = ctx_steps
        .into_iter()
        .map(|v| Tensor::from_vec(items, SYMBOLS, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(CpcBatchData {
        items,
        n_cpc: CTX_LEN,
        n_cand,
        n_sub: 1,
        ctx_steps,
        cands: Tensor::from_vec(items * n_cand, SYMBOLS, cands)?,
    })
}

pub fn train_toy(cfg: &CpcConfig, master_seed: u64) -> Result<CpcModel<f32>> {
    let mut rng_init = substream(master_seed, "toy-init", 0);
    let mut rng_batch = substream(master_seed, "toy-batch", 0);
    let mut model: CpcModel<f32> = CpcModel::init(SYMBOLS, cfg, &mut rng_init)?;
    let mut opt = AdamState::new(&model.params);
    let adam = AdamCfg::with_lr(cfg.lr);
    for _ in 0..cfg.steps {
        let batch = sample_toy_batch(cfg, &mut rng_batch)?;
        let mut tape: Tape<f32> = Tape::new();
        let bp = BoundParams::bind(&mut tape, &model.params);
        let loss = cpc_loss_on_tape(&model, &mut tape, &bp, &batch)?;
        tape.backward(loss)?;
        let grads = bp.grads(&tape);
        adam_step(&mut model.params, &grads, &mut opt, adam);
    }
    Ok(model)
}
