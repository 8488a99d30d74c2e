//! Closed-form value oracles for tensor ops, losses, the optimizer, and
//! target-network blending.

use cospa::autodiff::{
    adam_step, AdamCfg, AdamState, Act, BoundParams, ParamSet, Tape, Tensor,
};

fn t64(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln_k() {
    for k in [2usize, 3, 5, 17] {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.constant_owned(Tensor::zeros(4, k));
        let loss = tape.cross_entropy_logits(logits, &[0, 1, 0, k - 1]).unwrap();
        let got = tape.value(loss).item();
        assert!(
            (got - (k as f64).ln()).abs() < 1e-12,
            "uniform CE over {k} classes: {got} vs {}",
            (k as f64).ln()
        );
    }
}

#[test]
fn cross_entropy_saturates_to_margin_exponential() {
    // One distractor 20 nats below the target: loss = ln(1 + e^-20).
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.constant_owned(t64(1, 2, &[20.0, 0.0]));
    let loss = tape.cross_entropy_logits(logits, &[0]).unwrap();
    let expect = (1.0 + (-20.0f64).exp()).ln(); // 2.0611536e-9
    assert!((tape.value(loss).item() - expect).abs() < 1e-18);
    assert!((expect - 2.0611536181902037e-9).abs() < 1e-15);
}

#[test]
fn cross_entropy_rejects_bad_targets() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.constant_owned(Tensor::zeros(2, 3));
    assert!(tape.cross_entropy_logits(logits, &[0]).is_err());
    let logits = tape.constant_owned(Tensor::zeros(2, 3));
    assert!(tape.cross_entropy_logits(logits, &[0, 3]).is_err());
}

#[test]
fn activation_values_match_references() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant_owned(t64(1, 4, &[-1.0, 0.5, 2.0, 1.5]));
    let r = tape.activation(x, Act::Relu);
    assert_eq!(tape.value(r).as_slice(), &[0.0, 0.5, 2.0, 1.5]);
    let t = tape.activation(x, Act::Tanh);
    assert!((tape.value(t).get(0, 1) - 0.46211715726000974).abs() < 1e-15);
    let s = tape.activation(x, Act::Sigmoid);
    assert!((tape.value(s).get(0, 2) - 0.8807970779778823).abs() < 1e-15);
    assert!((tape.value(s).get(0, 0) - 0.2689414213699951).abs() < 1e-15);
}

#[test]
fn layer_norm_standardizes_each_row() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant_owned(t64(2, 4, &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]));
    let g = tape.constant_owned(t64(1, 4, &[1.0, 1.0, 1.0, 1.0]));
    let b = tape.constant_owned(Tensor::zeros(1, 4));
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let v = tape.value(y);
    for i in 0..2 {
        let row: Vec<f64> = (0..4).map(|j| v.get(i, j)).collect();
        let mean = row.iter().sum::<f64>() / 4.0;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9, "row {i} mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
    }
    // Equal entries: variance 0, output must be the (finite) bias.
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant_owned(t64(1, 3, &[2.0, 2.0, 2.0]));
    let g = tape.constant_owned(t64(1, 3, &[1.0, 1.0, 1.0]));
    let b = tape.constant_owned(t64(1, 3, &[0.5, 0.5, 0.5]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    for j in 0..3 {
        let v = tape.value(y).get(0, j);
        assert!(v.is_finite() && (v - 0.5).abs() < 1e-9);
    }
}

#[test]
fn matmul_and_bias_match_hand_example() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.constant_owned(t64(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = tape.constant_owned(t64(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    let bias = tape.constant_owned(t64(1, 2, &[0.5, -0.5]));
    let z = tape.add_bias(y, bias).unwrap();
    assert_eq!(tape.value(z).as_slice(), &[58.5, 63.5, 139.5, 153.5]);
}

#[test]
fn structural_ops_match_hand_examples() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant_owned(t64(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    let m = tape.mean_segments(x, 2).unwrap();
    assert_eq!(tape.value(m).shape(), (2, 2));
    assert_eq!(tape.value(m).as_slice(), &[2.0, 3.0, 6.0, 7.0]);

    let r = tape.repeat_rows(m, 3);
    assert_eq!(tape.value(r).shape(), (6, 2));
    assert_eq!(tape.value(r).get(2, 0), 2.0);
    assert_eq!(tape.value(r).get(3, 0), 6.0);

    let c = tape.concat_cols(&[m, m]).unwrap();
    assert_eq!(tape.value(c).shape(), (2, 4));
    assert_eq!(tape.value(c).as_slice(), &[2.0, 3.0, 2.0, 3.0, 6.0, 7.0, 6.0, 7.0]);

    let rs = tape.reshape(c, 4, 2).unwrap();
    assert_eq!(tape.value(rs).as_slice(), &[2.0, 3.0, 2.0, 3.0, 6.0, 7.0, 6.0, 7.0]);
    assert!(tape.reshape(rs, 3, 3).is_err());

    let mean = tape.mean_all(rs);
    assert!((tape.value(mean).item() - 4.5).abs() < 1e-15);
}

#[test]
fn mse_is_elementwise_mean() {
    let mut tape: Tape<f64> = Tape::new();
    let p = tape.constant_owned(t64(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let t = tape.constant_owned(t64(2, 2, &[0.0, 2.0, 5.0, 1.0]));
    let l = tape.mse(p, t).unwrap();
    // (1 + 0 + 4 + 9) / 4
    assert!((tape.value(l).item() - 3.5).abs() < 1e-15);
}

#[test]
fn adam_matches_straight_line_oracle() {
    // Constant gradient g: bias correction cancels exactly, so every step
    // moves by lr * g / (|g| + eps). Verified to 1e-12 over 25 steps.
    let mut params: ParamSet<f64> = ParamSet::new();
    params.add("theta", t64(1, 2, &[1.0, -3.0])).unwrap();
    let mut state = AdamState::new(&params);
    let cfg = AdamCfg::with_lr(1e-3);
    let g = t64(1, 2, &[0.5, -0.25]);
    for step in 1..=25usize {
        adam_step(&mut params, &[Some(&g)], &mut state, cfg);
        let got = params.get("theta");
        for (j, g0) in [0.5f64, -0.25].iter().enumerate() {
            let expect = [1.0, -3.0][j] - step as f64 * 1e-3 * g0 / (g0.abs() + 1e-8);
            assert!(
                (got.get(0, j) - expect).abs() < 1e-12,
                "step {step} coord {j}: {} vs {expect}",
                got.get(0, j)
            );
        }
    }
}

#[test]
fn adam_decays_moments_on_missing_gradient() {
    // A None gradient decays m and v but must not inject new signal; after
    // one real step, many empty steps keep moving theta along m-hat with
    // shrinking magnitude (sign preserved, displacement bounded).
    let mut params: ParamSet<f64> = ParamSet::new();
    params.add("theta", t64(1, 1, &[0.0])).unwrap();
    let mut state = AdamState::new(&params);
    let cfg = AdamCfg::with_lr(1e-3);
    let g = t64(1, 1, &[1.0]);
    adam_step(&mut params, &[Some(&g)], &mut state, cfg);
    let after_one = params.get("theta").item();
    assert!(after_one < 0.0);
    for _ in 0..5 {
        adam_step(&mut params, &[None], &mut state, cfg);
    }
    let after_decay = params.get("theta").item();
    assert!(after_decay < after_one, "decay steps still follow the stale moment");
    assert!(after_decay > after_one - 10.0 * 1e-3, "decay steps stay bounded");
}

#[test]
fn target_blend_moves_by_tau_fraction() {
    let mut target: ParamSet<f64> = ParamSet::new();
    target.add("w", t64(1, 3, &[1.0, 0.0, -2.0])).unwrap();
    let mut online: ParamSet<f64> = ParamSet::new();
    online.add("w", t64(1, 3, &[2.0, 1.0, -2.0])).unwrap();
    target.blend_from(&online, 0.005);
    let w = target.get("w");
    assert!((w.get(0, 0) - 1.005).abs() < 1e-15);
    assert!((w.get(0, 1) - 0.005).abs() < 1e-15);
    assert!((w.get(0, 2) + 2.0).abs() < 1e-15);
}

#[test]
fn frozen_binding_blocks_gradients() {
    let mut params: ParamSet<f64> = ParamSet::new();
    params.add("w", t64(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let mut tape: Tape<f64> = Tape::new();
    let bp = BoundParams::bind_frozen(&mut tape, &params);
    let w = bp.var(&params, "w");
    let loss = tape.mean_all(w);
    tape.backward(loss).unwrap();
    assert!(bp.grads(&tape)[0].is_none());
}

#[test]
fn shape_mismatches_error_instead_of_panic() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.constant_owned(Tensor::<f64>::zeros(2, 3));
    let b = tape.constant_owned(Tensor::<f64>::zeros(2, 3));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.constant_owned(Tensor::<f64>::zeros(3, 2));
    assert!(tape.add(a, c).is_err());
    assert!(tape.mse(a, c).is_err());
    let seg = tape.mean_segments(a, 4);
    assert!(seg.is_err(), "segment size must divide row count");
}
