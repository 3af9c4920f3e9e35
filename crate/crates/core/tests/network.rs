mod common;

use paramixer::datagen::{generate, Task};
use paramixer::harness::{self, RunConfig};
use paramixer::mixer::apply_block;
use paramixer::network::{
    count_flops_estimate, reference_attention_weights, AttentionParams, Input, InputMode, Model, Pooling, Target,
};
use paramixer::numerics::{mlp3, Array2, Mlp3Params};
use paramixer::protocol::ProtocolKind;

use common::{hull_excess, model_config, model_gradient_check};

#[test]
fn full_model_gradients() {
    let cases = [
        (Pooling::Flat, InputMode::Token),
        (Pooling::Cls, InputMode::Token),
        (Pooling::Flat, InputMode::RealPair),
    ];
    for kind in [ProtocolKind::Chord, ProtocolKind::Cdil] {
        for (pooling, mode) in cases {
            let cfg = model_config(kind, 16, pooling, mode);
            let model = Model::init(cfg, 5).unwrap();
            let (input, target) = match mode {
                InputMode::Token => {
                    let len = model.config.max_input_len();
                    (Input::Tokens((0..len).map(|i| (i * 5 + 1) % 6).collect()), Target::Class(1))
                }
                InputMode::RealPair => {
                    (Input::Pairs((0..16).map(|i| ((i as f64 * 0.37).sin(), (i % 7 == 2) as u8 as f64)).collect()), Target::Value(0.6))
                }
            };
            for (name, ratio) in model_gradient_check(&model, &input, target, 1e-5) {
                assert!(ratio <= 1.0, "{kind} {pooling:?} {mode:?} {name}: violation ratio {ratio}");
            }
        }
    }
}

/// Value MLP with `g(x) = gelu(x) − gelu(−x) = x`.
fn identity_value(d: usize) -> Mlp3Params {
    let mut p = Mlp3Params::zeros(d, 2 * d, d);
    for j in 0..d {
        p.w1[(j, j)] = 1.0;
        p.w1[(j, d + j)] = -1.0;
        p.w2[(j, j)] = 1.0;
        p.w2[(d + j, j)] = -1.0;
    }
    p
}

#[test]
fn mixer_output_leaves_hull_where_softmax_cannot() {
    let mut params = common::block(ProtocolKind::Chord, 3, 2, 4, 1);
    params.value_mlp = identity_value(2);
    for (f, row) in params.factor_mlps.iter_mut().zip([[2.0, -0.5, -0.5], [1.0, 0.0, 0.0]]) {
        *f = Mlp3Params::zeros(2, 4, 3);
        f.b2 = Array2::from_rows(&[row]).unwrap();
    }
    let x = Array2::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let v = mlp3(&x, &params.value_mlp).unwrap();
    let out = apply_block(&x, &x, &params).unwrap();
    // Row 0 is 2·v0 − 0.5·v1 − 0.5·v2 = (−0.5, −0.5), beyond the triangle along (−1, −1).
    assert!(hull_excess(out.row(0), &v, &[-1.0, -1.0]) > 0.9);

    let mut rng = common::rng(4);
    let attn = AttentionParams {
        wq: common::uniform(2, 3, -2.0, 2.0, &mut rng),
        wk: common::uniform(2, 3, -2.0, 2.0, &mut rng),
        wv: common::uniform(2, 2, -2.0, 2.0, &mut rng),
    };
    let (weights, reference) = reference_attention_weights(&x, &attn).unwrap();
    let values = x.matmul(&attn.wv).unwrap();
    for (i, row) in weights.rows_iter().enumerate() {
        assert!(row.iter().all(|&w| w >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for step in 0..16 {
            let theta = step as f64 * std::f64::consts::PI / 8.0;
            assert!(hull_excess(reference.row(i), &values, &[theta.cos(), theta.sin()]) <= 1e-12);
        }
    }
}

#[test]
fn trained_model_depends_on_token_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("task", "temporal_order"),
        ("seq_len", "16"),
        ("embed_dim", "8"),
        ("hidden", "8"),
        ("epochs", "2"),
        ("train_count", "400"),
        ("test_count", "100"),
        ("train_eval_count", "100"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.out = dir.path().to_path_buf();
    let model = harness::train(&cfg).unwrap().model;
    assert!(model.config.use_pos_embed);

    let spec = cfg.dataset_spec();
    let mut changed = 0;
    for index in 0..10 {
        let (input, _) = generate(&spec, index).unwrap().to_example();
        let Input::Tokens(tokens) = &input else { unreachable!() };
        let reversed = Input::Tokens(tokens.iter().rev().cloned().collect());
        if model.forward(&input).unwrap() != model.forward(&reversed).unwrap() {
            changed += 1;
        }
    }
    assert_eq!(changed, 10);
    assert_eq!(spec.task, Task::TemporalOrder);
}

#[test]
fn mixing_cost_growth() {
    let cost = |n: usize| {
        let cfg = model_config(ProtocolKind::Chord, n, Pooling::Flat, InputMode::Token);
        count_flops_estimate(&cfg).unwrap().mixing_multiplies as f64
    };
    for log in 3..9 {
        let n = 1usize << log;
        let l = log as f64;
        let expected = 2.0 * (l + 1.0) * (l + 2.0) / (l * (l + 1.0));
        assert!((cost(2 * n) / cost(n) - expected).abs() < 1e-12);
    }
}
