//! Analytic gradients vs central finite differences, in f64. Every network
//! and every loss that training backprops through is checked against the
//! numeric derivative of its own forward pass.

use cospa::autodiff::{
    Act, BoundParams, Gru, Mlp, MlpSpec, ParamSet, Tape, Tensor, Var,
};
use cospa::predictor::{predictor_loss_on_tape, PredictorConfig, PredictorModel};
use cospa::repr_cpc::{cpc_loss_on_tape, CpcBatchData, CpcConfig, CpcModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| (cospa::rng::normal(rng) * scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Evaluate the scalar loss a builder defines over `params`.
fn loss_value<F>(params: &ParamSet<f64>, build: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &BoundParams, &ParamSet<f64>) -> Var,
{
    let mut tape: Tape<f64> = Tape::new();
    let bp = BoundParams::bind_frozen(&mut tape, params);
    let loss = build(&mut tape, &bp, params);
    tape.value(loss).item()
}

/// Backprop once, then sweep every parameter element with a central
/// difference. Panics with context on the first element out of tolerance.
///
/// Zero-initialized biases put ReLU kinks exactly at the evaluation point
/// (any dead row yields a pre-activation of literally 0.0, where relu' is a
/// subgradient choice FD cannot reproduce), so all parameters are jittered
/// first.
fn check_param_grads<F>(params: &mut ParamSet<f64>, build: F, label: &str)
where
    F: Fn(&mut Tape<f64>, &BoundParams, &ParamSet<f64>) -> Var,
{
    let mut jrng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    for i in 0..params.len() {
        for v in params.at_mut(i).as_mut_slice() {
            *v += cospa::rng::normal(&mut jrng) * 0.05;
        }
    }
    let analytic: Vec<Option<Tensor<f64>>> = {
        let mut tape: Tape<f64> = Tape::new();
        let bp = BoundParams::bind(&mut tape, params);
        let loss = build(&mut tape, &bp, params);
        tape.backward(loss).unwrap();
        bp.grads(&tape).into_iter().map(|g| g.cloned()).collect()
    };
    let n_params = params.len();
    let mut checked = 0usize;
    for i in 0..n_params {
        let numel = params.at(i).1.numel();
        let name = params.at(i).0.to_string();
        for j in 0..numel {
            let orig = params.at(i).1.as_slice()[j];
            params.at_mut(i).as_mut_slice()[j] = orig + H;
            let up = loss_value(params, &build);
            params.at_mut(i).as_mut_slice()[j] = orig - H;
            let down = loss_value(params, &build);
            params.at_mut(i).as_mut_slice()[j] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = analytic[i].as_ref().map(|g| g.as_slice()[j]).unwrap_or(0.0);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            if rel >= TOL {
                // A ReLU kink inside the step makes the central difference
                // unstable in h; a wrong analytic gradient does not. Shrink
                // h and only fail if the estimate stays put.
                let h2 = H / 64.0;
                params.at_mut(i).as_mut_slice()[j] = orig + h2;
                let up2 = loss_value(params, &build);
                params.at_mut(i).as_mut_slice()[j] = orig - h2;
                let down2 = loss_value(params, &build);
                params.at_mut(i).as_mut_slice()[j] = orig;
                let fd2 = (up2 - down2) / (2.0 * h2);
                let rel2 = (an - fd2).abs() / an.abs().max(fd2.abs()).max(1e-6);
                let fd_stable = (fd - fd2).abs() <= 0.05 * fd.abs().max(fd2.abs());
                assert!(
                    !fd_stable && rel2 < 0.5,
                    "{label}: param {name}[{j}] analytic {an:.8e} vs fd {fd:.8e}/{fd2:.8e} \
                     (rel {rel:.2e}/{rel2:.2e})"
                );
            }
            checked += 1;
        }
    }
    assert!(checked > 0, "{label}: no parameters checked");
}

#[test]
fn mlp_relu_against_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        let mlp =
            Mlp::init("m", MlpSpec::relu(vec![3, 8, 4, 1]), &mut params, &mut rng).unwrap();
        let x = randn(&mut rng, 5, 3, 1.0);
        let t = randn(&mut rng, 5, 1, 1.0);
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let xv = tape.constant(&x);
                let y = mlp.forward(tape, bp, set, xv).unwrap();
                let tv = tape.constant(&t);
                tape.mse(y, tv).unwrap()
            },
            &format!("mlp-relu seed {seed}"),
        );
    }
}

#[test]
fn mlp_tanh_output_and_layer_norm_against_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        let spec = MlpSpec { layer_norm: true, tanh_out: true, ..MlpSpec::relu(vec![4, 6, 6, 2]) };
        let mlp = Mlp::init("m", spec, &mut params, &mut rng).unwrap();
        let x = randn(&mut rng, 3, 4, 1.0);
        let t = randn(&mut rng, 3, 2, 0.5);
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let xv = tape.constant(&x);
                let y = mlp.forward(tape, bp, set, xv).unwrap();
                let tv = tape.constant(&t);
                tape.mse(y, tv).unwrap()
            },
            &format!("mlp-ln-tanh seed {seed}"),
        );
    }
}

#[test]
fn gru_chain_against_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        let gru = Gru::init("g", 3, 4, &mut params, &mut rng).unwrap();
        let xs: Vec<Tensor<f64>> = (0..3).map(|_| randn(&mut rng, 2, 3, 1.0)).collect();
        let t = randn(&mut rng, 2, 4, 0.5);
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let mut h = tape.constant_owned(Tensor::zeros(2, 4));
                for x in &xs {
                    let xv = tape.constant(x);
                    h = gru.step(tape, bp, set, xv, h).unwrap();
                }
                let tv = tape.constant(&t);
                tape.mse(h, tv).unwrap()
            },
            &format!("gru seed {seed}"),
        );
    }
}

#[test]
fn standalone_layer_norm_against_finite_differences() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("x", randn(&mut rng, 4, 6, 1.0)).unwrap();
        params.add("g", randn(&mut rng, 1, 6, 0.3)).unwrap();
        params.add("b", randn(&mut rng, 1, 6, 0.3)).unwrap();
        let t = randn(&mut rng, 4, 6, 1.0);
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let x = bp.var(set, "x");
                let g = bp.var(set, "g");
                let b = bp.var(set, "b");
                let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
                let tv = tape.constant(&t);
                tape.mse(y, tv).unwrap()
            },
            &format!("layer-norm seed {seed}"),
        );
    }
}

#[test]
fn cross_entropy_against_finite_differences() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("logits", randn(&mut rng, 4, 3, 1.5)).unwrap();
        let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let l = bp.var(set, "logits");
                tape.cross_entropy_logits(l, &targets).unwrap()
            },
            &format!("cross-entropy seed {seed}"),
        );
    }
}

#[test]
fn structural_op_chain_against_finite_differences() {
    // Exercises concat_cols, repeat_rows, mean_segments, reshape, scale,
    // add, mul and the sigmoid/tanh activations in one graph.
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("a", randn(&mut rng, 6, 2, 1.0)).unwrap();
        params.add("b", randn(&mut rng, 3, 2, 1.0)).unwrap();
        let t = randn(&mut rng, 6, 2, 0.5);
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let a = bp.var(set, "a");
                let b = bp.var(set, "b");
                let am = tape.mean_segments(a, 2).unwrap(); // (3,2)
                let s = tape.activation(am, Act::Sigmoid);
                let m = tape.mul(s, b).unwrap(); // (3,2)
                let cat = tape.concat_cols(&[m, b]).unwrap(); // (3,4)
                let rep = tape.repeat_rows(cat, 2); // (6,4)
                let rsh = tape.reshape(rep, 12, 2).unwrap(); // (12,2)
                let half = tape.mean_segments(rsh, 2).unwrap(); // (6,2)
                let tn = tape.activation(half, Act::Tanh);
                let sc = tape.scale(tn, -1.7);
                let tv = tape.constant(&t);
                tape.mse(sc, tv).unwrap()
            },
            &format!("op-chain seed {seed}"),
        );
    }
}

#[test]
fn contrastive_loss_against_finite_differences() {
    // Tiny end-to-end contrastive instance: 2 items, 2 context steps,
    // 3 candidates (positive + 2 negatives), 2 subsampled rows each.
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let cfg = CpcConfig {
            d_z: 2,
            n_neg: 2,
            n_cpc: 2,
            k: 1,
            mlp_hidden: 5,
            gru_hidden: 3,
            n_sub: 2,
            ..CpcConfig::default()
        };
        let model: CpcModel<f64> = CpcModel::init(4, &cfg, &mut rng).unwrap();
        let items = 2;
        let batch = CpcBatchData {
            items,
            n_cpc: 2,
            n_cand: 3,
            n_sub: 2,
            ctx_steps: (0..2).map(|_| randn(&mut rng, items * 2, 4, 1.0)).collect(),
            cands: randn(&mut rng, items * 3 * 2, 4, 1.0),
        };
        let mut params = model.params.clone();
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let m = CpcModel {
                    params: set.clone(),
                    enc: model.enc.clone(),
                    gru: model.gru.clone(),
                    clf: model.clf.clone(),
                    in_dim: model.in_dim,
                    d_z: model.d_z,
                };
                cpc_loss_on_tape(&m, tape, bp, &batch).unwrap()
            },
            &format!("contrastive seed {seed}"),
        );
    }
}

#[test]
fn latent_regressor_loss_against_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let cfg = PredictorConfig { n_c: 3, mlp_hidden: 5, gru_hidden: 4, ..Default::default() };
        let model: PredictorModel<f64> = PredictorModel::init(2, &cfg, &mut rng).unwrap();
        let ctx: Vec<Tensor<f64>> = (0..3).map(|_| randn(&mut rng, 4, 2, 1.0)).collect();
        let targets = randn(&mut rng, 4, 2, 1.0);
        let mut params = model.params.clone();
        check_param_grads(
            &mut params,
            |tape, bp, set| {
                let m = PredictorModel {
                    params: set.clone(),
                    embed: model.embed.clone(),
                    gru: model.gru.clone(),
                    head: model.head.clone(),
                    d_z: model.d_z,
                    n_c: model.n_c,
                };
                predictor_loss_on_tape(&m, tape, bp, &ctx, &targets).unwrap()
            },
            &format!("latent-regressor seed {seed}"),
        );
    }
}
