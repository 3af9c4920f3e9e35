#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paramixer::mixer::{self, MixerBlockParams};
use paramixer::network::{FactorSource, InputMode, Model, ModelConfig, Pooling, TaskHead};
use paramixer::numerics::Array2;
use paramixer::protocol::{build_layout, ProtocolKind, ProtocolSpec, SparseLayout};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2 {
    Array2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn to_dmatrix(a: &Array2) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

/// Singular values above `max(rows, cols) · σmax · ε`.
pub fn svd_rank(a: &Array2) -> usize {
    let sv = to_dmatrix(a).singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = a.rows().max(a.cols()) as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Binary circulant with `C[i][(i + o) mod n] += 1` for every offset.
pub fn binary_circulant(offsets: &[usize], n: usize) -> Array2 {
    let mut c = Array2::zeros(n, n);
    for i in 0..n {
        for &o in offsets {
            c[(i, (i + o) % n)] += 1.0;
        }
    }
    c
}

pub fn layout(kind: ProtocolKind, n: usize) -> Arc<SparseLayout> {
    Arc::new(build_layout(&ProtocolSpec::with_defaults(kind, n).unwrap()).unwrap())
}

pub fn block(kind: ProtocolKind, n: usize, d: usize, hidden: usize, seed: u64) -> MixerBlockParams {
    MixerBlockParams::init(layout(kind, n), d, hidden, &mut rng(seed))
}

/// Dense path: `A · g(x_prev)` with `A` rebuilt from the factor bank.
pub fn dense_block(x_prev: &Array2, x0: &Array2, params: &MixerBlockParams) -> Array2 {
    let bank = mixer::generate_factors(x0, params).unwrap();
    let a = mixer::dense_attention_matrix(&bank, &params.layout).unwrap();
    let v = paramixer::numerics::mlp3(x_prev, &params.value_mlp).unwrap();
    a.matmul(&v).unwrap()
}

pub fn model_config(kind: ProtocolKind, n: usize, pooling: Pooling, mode: InputMode) -> ModelConfig {
    let (head, vocab) = match mode {
        InputMode::Token => (TaskHead::Classification { classes: 4 }, 7),
        InputMode::RealPair => (TaskHead::Regression, 0),
    };
    ModelConfig {
        head,
        n,
        blocks: 2,
        d: 4,
        hidden: 4,
        vocab,
        pooling,
        use_pos_embed: true,
        protocol: ProtocolSpec::with_defaults(kind, n).unwrap(),
        input_mode: mode,
        factor_source: FactorSource::Input,
        pad_token: 0,
        cls_token: (pooling == Pooling::Cls).then_some(6),
    }
}

/// True when `|a − b| ≤ max(rel · max(|a|, |b|), floor)`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(floor)
}

/// Worst violation ratio per parameter tensor of the analytic gradient
/// against central differences; a ratio ≤ 1 passes.
pub fn model_gradient_check(
    model: &Model,
    input: &paramixer::network::Input,
    target: paramixer::network::Target,
    h: f64,
) -> Vec<(String, f64)> {
    let analytic = model.loss_and_grads(input, target).unwrap().grads;
    let names = model.params.tensor_names();
    let mut out = Vec::new();
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic[t].len();
        let mut worst: f64 = 0.0;
        for e in 0..len {
            let mut probe = model.clone();
            let orig = probe.params.tensors()[t].as_slice()[e];
            probe.params.tensors_mut()[t].as_mut_slice()[e] = orig + h;
            let plus = probe.loss(input, target).unwrap().0;
            probe.params.tensors_mut()[t].as_mut_slice()[e] = orig - h;
            let minus = probe.loss(input, target).unwrap().0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t].as_slice()[e];
            let allowed = (1e-4 * a.abs().max(numeric.abs())).max(1e-8);
            worst = worst.max((a - numeric).abs() / allowed);
        }
        out.push((name, worst));
    }
    out
}

/// Largest projection of `point` onto `dir` minus the largest projection of
/// any hull vertex. Positive means the point lies outside the hull.
pub fn hull_excess(point: &[f64], vertices: &Array2, dir: &[f64]) -> f64 {
    let proj = |p: &[f64]| p.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>();
    let best = vertices.rows_iter().map(proj).fold(f64::NEG_INFINITY, f64::max);
    proj(point) - best
}
