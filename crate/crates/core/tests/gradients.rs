mod common;

use common::*;
use maskwise::model::{classifier_loss_and_grads, ClassSample, Mode, ModelConfig, Params};
use maskwise::objective::Objective;

const MASK: u32 = 4;

#[test]
fn untied_head_with_dropout_free_train_mode_matches_differences() {
    let mut cfg = small_config(24);
    cfg.hidden_dim = 16;
    cfg.num_layers = 1;
    cfg.tie_mlm_head = false;
    let params = Params::init(&cfg, 5);
    let mut r = rng(1);
    let batch: Vec<_> = (0..2).map(|_| random_sample(&mut r, 24, 6, MASK, Objective::Mlm)).collect();
    let (err, at) = max_gradient_error(&cfg, &params, &batch);
    assert!(err < 1e-4, "{err:e} at {at}");
}

#[test]
fn padded_keys_receive_no_gradient_leak() {
    let cfg = small_config(24);
    let params = Params::init(&cfg, 2);
    let mut r = rng(3);
    let mut s = random_sample(&mut r, 24, 8, MASK, Objective::Atp);
    s.input_ids.extend([0, 0]);
    s.labels.extend([u32::MAX, u32::MAX]);
    s.attention_mask.extend([false, false]);
    let (err, at) = max_gradient_error(&cfg, &params, &[s]);
    assert!(err < 1e-4, "{err:e} at {at}");
}

#[test]
fn classifier_gradients_match_differences() {
    let mut cfg: ModelConfig = small_config(20);
    cfg.hidden_dim = 16;
    cfg.num_layers = 1;
    cfg.num_classes = Some(3);
    let params = Params::init(&cfg, 9);
    let batch = vec![
        ClassSample { input_ids: vec![2, 9, 11, 3], attention_mask: vec![true; 4], label: 1 },
        ClassSample { input_ids: vec![2, 14, 3], attention_mask: vec![true; 3], label: 2 },
    ];
    let loss = |p: &Params| classifier_loss_and_grads(p, &cfg, &batch, Mode::Eval).unwrap().0;
    let (_, grads) = classifier_loss_and_grads(&params, &cfg, &batch, Mode::Eval).unwrap();
    let mut work = params.clone();
    let n = params.slices().len();
    for ti in 0..n {
        for j in 0..params.slices()[ti].len() {
            let numeric = numeric_grad(&mut work, ti, j, loss);
            let a = grads.slices()[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            assert!(rel < 1e-4, "tensor {ti}[{j}]: {a:e} vs {numeric:e}");
        }
    }
}

#[test]
fn two_token_closed_form_loss() {
    // Zero encoder, only the output bias: p(label) = softmax(bias)[label].
    let cfg = ModelConfig {
        vocab_size: 2,
        hidden_dim: 4,
        num_layers: 0,
        num_heads: 1,
        ffn_dim: 4,
        max_seq_len: 4,
        dropout: 0.0,
        tie_mlm_head: true,
        num_classes: None,
    };
    let mut p = Params::zeros(&cfg);
    p.mlm_bias = vec![0.3, -0.9];
    let s = maskwise::objective::TemplatedSample {
        input_ids: vec![0, 1],
        labels: vec![u32::MAX, 1],
        objective: Objective::Atp,
        attention_mask: vec![true, true],
    };
    let want = -((-0.9f64).exp() / (0.3f64.exp() + (-0.9f64).exp())).ln();
    let got = loss(&p, &cfg, &[s]);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}
