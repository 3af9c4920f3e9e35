mod common;

use paramixer::mixer::{apply_block, dense_attention_matrix, scatter_factor, FactorBank, MixerBlockParams};
use paramixer::numerics::{Array2, Mlp3Params, Tape};
use paramixer::protocol::{build_layout, ProtocolKind, ProtocolSpec};

use common::{block, dense_block, layout, svd_rank, uniform};

const KINDS: [ProtocolKind; 2] = [ProtocolKind::Chord, ProtocolKind::Cdil];

#[test]
fn sparse_chain_matches_dense_product() {
    for kind in KINDS {
        for n in [8, 16, 64] {
            for d in [4, 8] {
                for seed in 0..3 {
                    let params = block(kind, n, d, d, seed);
                    let mut rng = common::rng(1000 + seed);
                    let x_prev = uniform(n, d, -1.0, 1.0, &mut rng);
                    let x0 = uniform(n, d, -1.0, 1.0, &mut rng);
                    let sparse = apply_block(&x_prev, &x0, &params).unwrap();
                    let dense = dense_block(&x_prev, &x0, &params);
                    let err = sparse.max_rel_diff(&dense);
                    assert!(err < 1e-10, "{kind} N={n} d={d} seed={seed}: {err}");
                }
            }
        }
    }
}

fn positive_bank(n: usize, kind: ProtocolKind, seed: u64) -> FactorBank {
    let layout = layout(kind, n);
    let mut rng = common::rng(seed);
    FactorBank { values: (0..layout.m()).map(|_| uniform(n, layout.k(), 0.5, 1.5, &mut rng)).collect() }
}

#[test]
fn positive_factors_are_full_rank() {
    for n in [8, 16, 32] {
        let lay = layout(ProtocolKind::Chord, n);
        for seed in 0..20 {
            let bank = positive_bank(n, ProtocolKind::Chord, seed);
            for m in 0..lay.m() {
                assert_eq!(svd_rank(&scatter_factor(&bank.values[m], &lay, m)), n, "N={n} seed={seed} factor {m}");
            }
            assert_eq!(svd_rank(&dense_attention_matrix(&bank, &lay).unwrap()), n, "N={n} seed={seed} product");
        }
    }
}

#[test]
fn positive_factors_give_full_support() {
    for kind in KINDS {
        for n in [4, 8, 16, 32, 64] {
            let lay = layout(kind, n);
            let bank = positive_bank(n, kind, 7);
            let a = dense_attention_matrix(&bank, &lay).unwrap();
            assert!(a.as_slice().iter().all(|&v| v > 0.0), "{kind} N={n}");
            let ones = FactorBank { values: bank.values.iter().map(|_| Array2::filled(n, lay.k(), 1.0)).collect() };
            assert!(dense_attention_matrix(&ones, &lay).unwrap().as_slice().iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn single_factor_is_its_scatter() {
    let spec = ProtocolSpec::new(ProtocolKind::Chord, 8, Some(3), Some(1)).unwrap();
    let lay = build_layout(&spec).unwrap();
    let values = uniform(8, 3, -1.0, 1.0, &mut common::rng(2));
    let a = dense_attention_matrix(&FactorBank { values: vec![values.clone()] }, &lay).unwrap();
    assert_eq!(a, scatter_factor(&values, &lay, 0));
}

/// Factor generators that ignore their input and emit `row` for every position.
fn constant_factors(params: &mut MixerBlockParams, rows: &[&[f64]]) {
    for (f, row) in params.factor_mlps.iter_mut().zip(rows) {
        let (d, hidden, k) = (f.input_width(), f.w1.cols(), f.output_width());
        *f = Mlp3Params::zeros(d, hidden, k);
        f.b2 = Array2::from_rows(&[*row]).unwrap();
    }
}

#[test]
fn rows_of_mixing_matrix_need_not_be_convex() {
    // N = 3: two factors with offsets {0, 1, 2}.
    let mut params = block(ProtocolKind::Chord, 3, 2, 4, 1);
    constant_factors(&mut params, &[&[2.0, -0.5, -0.5], &[1.0, 0.0, 0.0]]);
    let x0 = Array2::zeros(3, 2);
    let bank = paramixer::mixer::generate_factors(&x0, &params).unwrap();
    let a = dense_attention_matrix(&bank, &params.layout).unwrap();
    assert!(a.as_slice().iter().any(|&v| v < 0.0));
    let sums: Vec<f64> = a.rows_iter().map(|r| r.iter().sum()).collect();
    assert_eq!(sums, [1.0, 1.0, 1.0]);

    constant_factors(&mut params, &[&[2.0, 0.5, 0.0], &[1.0, 0.0, 0.0]]);
    let bank = paramixer::mixer::generate_factors(&x0, &params).unwrap();
    let a = dense_attention_matrix(&bank, &params.layout).unwrap();
    assert!(a.rows_iter().all(|r| (r.iter().sum::<f64>() - 2.5).abs() < 1e-15));
}

#[test]
fn block_gradients_match_finite_differences() {
    for kind in KINDS {
        let n = 8;
        let params = block(kind, n, 3, 4, 9);
        let mut rng = common::rng(17);
        let x_prev = uniform(n, 3, -1.0, 1.0, &mut rng);
        let x0 = uniform(n, 3, -1.0, 1.0, &mut rng);
        let target = uniform(n, 3, -1.0, 1.0, &mut rng);

        let loss = |params: &MixerBlockParams, x_prev: &Array2, grads: bool| {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape).unwrap();
            let xp = tape.leaf(x_prev.clone()).unwrap();
            let x0v = tape.leaf(x0.clone()).unwrap();
            let out = vars.apply(&mut tape, xp, x0v).unwrap();
            let l = tape.mse(out, &target).unwrap();
            let value = tape.value(l)[(0, 0)];
            let g = grads.then(|| {
                let g = tape.backward(l).unwrap();
                let mut all: Vec<Array2> = vars.vars().into_iter().map(|v| g.get_or_zeros(v)).collect();
                all.push(g.get_or_zeros(xp));
                all
            });
            (value, g)
        };

        let analytic = loss(&params, &x_prev, true).1.unwrap();
        let h = 1e-5;
        let tensor_count = params.tensors().len();
        for t in 0..=tensor_count {
            let len = analytic[t].len();
            for e in 0..len {
                let shifted = |delta: f64| {
                    let mut p = params.clone();
                    let mut x = x_prev.clone();
                    if t < tensor_count {
                        p.tensors_mut()[t].as_mut_slice()[e] += delta;
                    } else {
                        x.as_mut_slice()[e] += delta;
                    }
                    loss(&p, &x, false).0
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = analytic[t].as_slice()[e];
                assert!(common::close(a, numeric, 1e-4, 1e-8), "{kind} tensor {t} element {e}: {a} vs {numeric}");
            }
        }
    }
}
