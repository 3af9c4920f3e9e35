//! Training, evaluation, protocol analysis and data export behind the CLI.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, KEYS};

use crate::datagen::{adding_correct, export_dataset, generate, mix64, DatasetSpec};
use crate::mixer::{dense_attention_matrix, generate_factors, MixerBlockParams};
use crate::network::{count_flops_estimate, FlopsEstimate, Model, ModelConfig, Target};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::{AdamConfig, AdamState, Array2};
use crate::protocol::{build_layout, circulant_rank, reachability_complete, stored_entries, ProtocolSpec};
use crate::{Error, Result};

/// Process exit code for an error: 1 for usage and configuration problems,
/// 2 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidProtocol(_)
        | Error::Input(_)
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::Label { .. }
        | Error::EmptyOffsets => 1,
        _ => 2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub count: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy over `indices`, summed in index order.
pub fn evaluate(model: &Model, data: &DatasetSpec, indices: std::ops::Range<usize>) -> Result<EvalResult> {
    let count = indices.len();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for index in indices {
        let (input, target) = generate(data, index)?.to_example();
        let (l, pred) = model.loss(&input, target)?;
        loss += l;
        let hit = match target {
            Target::Value(y) => adding_correct(y, pred.value()),
            Target::Class(c) => pred.argmax() == c,
        };
        correct += usize::from(hit);
    }
    let denom = count.max(1) as f64;
    Ok(EvalResult { count, loss: loss / denom, accuracy: correct as f64 / denom })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub epochs_run: usize,
    pub final_test: EvalResult,
    pub best_test: EvalResult,
    pub records: Vec<MetricsRecord>,
    pub model: Model,
}

struct MetricsSink {
    file: fs::File,
    records: Vec<MetricsRecord>,
    started: Instant,
    record_time: bool,
}

impl MetricsSink {
    fn push(&mut self, step: u64, epoch: usize, split: &str, r: EvalResult) -> Result<()> {
        let rec = MetricsRecord {
            step,
            epoch,
            split: split.into(),
            loss: r.loss,
            accuracy: r.accuracy,
            wall_seconds: self.record_time.then(|| self.started.elapsed().as_secs_f64()),
        };
        writeln!(self.file, "{}", serde_json::to_string(&rec)?)?;
        self.file.flush()?;
        log::info!("step {step} epoch {epoch} {split}: loss {:.6} accuracy {:.4}", r.loss, r.accuracy);
        self.records.push(rec);
        Ok(())
    }
}

fn epoch_order(cfg: &RunConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = cfg.train_indices().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ mix64(epoch as u64 + 1)));
    order.shuffle(&mut rng);
    order
}

/// Runs Adam over generated batches, logging evaluations to
/// `out/metrics.jsonl` and writing `final.ckpt`, `best.ckpt` and `run.conf`.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("run.conf"), cfg.to_text())?;

    let data = cfg.dataset_spec();
    let model_config = cfg.model_config()?;
    let mut model = Model::init(model_config, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, model.params.tensors());
    log::info!(
        "training {} on N = {} with {} parameters",
        cfg.task,
        cfg.seq_len,
        model.params.parameter_count()
    );

    let mut sink = MetricsSink {
        file: fs::File::create(cfg.out.join("metrics.jsonl"))?,
        records: Vec::new(),
        started: Instant::now(),
        record_time: cfg.record_time,
    };

    let mut step = 0u64;
    let mut epochs_run = 0;
    let mut last_test = evaluate(&model, &data, cfg.test_indices())?;
    sink.push(0, 0, "test", last_test)?;
    let mut best_test = last_test;
    model.to_checkpoint()?.save(&cfg.out.join("best.ckpt"))?;

    let mut last_logged = 0u64;
    let done_already = cfg.early_stop && last_test.accuracy >= cfg.stop_accuracy;
    let epochs = if done_already { 0 } else { cfg.epochs };
    'epochs: for epoch in 1..=epochs {
        epochs_run = epoch;
        let order = epoch_order(cfg, epoch);
        let batches = order.len().div_ceil(cfg.batch_size);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut sum: Option<Vec<Array2>> = None;
            for &index in batch {
                let (input, target) = generate(&data, index)?.to_example();
                let lg = model.loss_and_grads(&input, target)?;
                match &mut sum {
                    None => sum = Some(lg.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&lg.grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Array2> = sum.expect("non-empty batch").iter().map(|g| g.scaled(scale)).collect();
            for g in &grads {
                g.check_finite("gradient")?;
            }
            adam.step(&mut model.params.tensors_mut(), &grads)?;
            step += 1;

            let at_epoch_end = batch_no + 1 == batches;
            let due = if cfg.eval_interval == 0 { at_epoch_end } else { step % cfg.eval_interval as u64 == 0 };
            if due || (epoch == epochs && batch_no + 1 == batches) {
                last_test = log_evaluation(&model, cfg, &data, &mut sink, step, epoch)?;
                last_logged = step;
                if better(&last_test, &best_test) {
                    best_test = last_test;
                    model.to_checkpoint()?.save(&cfg.out.join("best.ckpt"))?;
                }
                if cfg.early_stop && last_test.accuracy >= cfg.stop_accuracy {
                    log::info!("stopping early at step {step}: test accuracy {:.4}", last_test.accuracy);
                    break 'epochs;
                }
            }
        }
    }
    debug_assert_eq!(last_logged, step);
    model.to_checkpoint()?.save(&cfg.out.join("final.ckpt"))?;
    Ok(TrainReport { steps: step, epochs_run, final_test: last_test, best_test, records: sink.records, model })
}

fn log_evaluation(
    model: &Model,
    cfg: &RunConfig,
    data: &DatasetSpec,
    sink: &mut MetricsSink,
    step: u64,
    epoch: usize,
) -> Result<EvalResult> {
    let test = evaluate(model, data, cfg.test_indices())?;
    let train = evaluate(model, data, 0..cfg.train_eval_count)?;
    sink.push(step, epoch, "train", train)?;
    sink.push(step, epoch, "test", test)?;
    Ok(test)
}

fn better(a: &EvalResult, b: &EvalResult) -> bool {
    a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.loss < b.loss)
}

/// Which slice of a run's dataset to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// The leading `train_eval_count` training samples.
    Train,
    Test,
}

/// Scores a checkpoint on a split of the run's dataset. The checkpoint's
/// model configuration must match the one implied by `cfg`.
pub fn eval_checkpoint(path: &Path, cfg: &RunConfig, split: Split) -> Result<EvalResult> {
    let model = Model::from_checkpoint(&Checkpoint::load(path)?)?;
    let expected = cfg.model_config()?;
    check_compatible(&model.config, &expected)?;
    let indices = match split {
        Split::Train => 0..cfg.train_eval_count,
        Split::Test => cfg.test_indices(),
    };
    evaluate(&model, &cfg.dataset_spec(), indices)
}

fn check_compatible(have: &ModelConfig, want: &ModelConfig) -> Result<()> {
    if have != want {
        return Err(Error::Checkpoint(format!(
            "checkpoint model {} does not match requested {}",
            serde_json::to_string(have)?,
            serde_json::to_string(want)?
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub kind: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub entries: usize,
    pub allocated_entries: usize,
    pub complete: bool,
    /// Smallest exact rank over the factors' 0/1 patterns.
    pub rank: usize,
    pub factor_ranks: Vec<usize>,
    pub warnings: Vec<String>,
    pub flops: FlopsEstimate,
}

/// Options for [`analyze`] beyond the protocol itself.
#[derive(Clone, Debug, Default)]
pub struct AnalyzeOptions {
    pub blocks: usize,
    pub d: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Writes a dense `A` from a randomly initialized block as CSV.
    pub dense_csv: Option<PathBuf>,
    /// Writes the layout export.
    pub layout_out: Option<PathBuf>,
}

pub const MAX_DUMP_N: usize = 256;

pub fn analyze(spec: &ProtocolSpec, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    spec.validate()?;
    let layout = build_layout(spec)?;
    let factor_ranks =
        (1..=spec.m).map(|m| circulant_rank(&spec.offsets(m), spec.n)).collect::<Result<Vec<_>>>()?;
    let model_config = ModelConfig {
        head: crate::network::TaskHead::Regression,
        n: spec.n,
        blocks: opts.blocks,
        d: opts.d.max(1),
        hidden: opts.hidden.max(1),
        vocab: 1,
        pooling: crate::network::Pooling::Flat,
        use_pos_embed: false,
        protocol: *spec,
        input_mode: crate::network::InputMode::Token,
        factor_source: crate::network::FactorSource::Input,
        pad_token: 0,
        cls_token: None,
    };

    if opts.dense_csv.is_some() || opts.layout_out.is_some() {
        if spec.n > MAX_DUMP_N {
            return Err(Error::Config(format!("dumps are limited to N <= {MAX_DUMP_N}")));
        }
    }
    if let Some(path) = &opts.layout_out {
        fs::write(path, layout.export_text())?;
    }
    if let Some(path) = &opts.dense_csv {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let d = model_config.d;
        let block = MixerBlockParams::init(Arc::new(layout.clone()), d, model_config.hidden, &mut rng);
        let x0 = Array2::from_vec(spec.n, d, (0..spec.n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let a = dense_attention_matrix(&generate_factors(&x0, &block)?, &layout)?;
        fs::write(path, dense_csv(&a))?;
    }

    Ok(AnalyzeReport {
        kind: spec.kind.to_string(),
        n: spec.n,
        k: spec.k,
        m: spec.m,
        entries: stored_entries(spec),
        allocated_entries: layout.allocated_entries(),
        complete: reachability_complete(&layout),
        rank: factor_ranks.iter().copied().min().unwrap_or(0),
        factor_ranks,
        warnings: spec.warnings(),
        flops: count_flops_estimate(&model_config)?,
    })
}

/// Row-major CSV with 17 significant digits per value.
pub fn dense_csv(a: &Array2) -> String {
    let mut out = String::new();
    for row in a.rows_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes the dataset export for `spec` to `path`.
pub fn gendata(spec: &DatasetSpec, path: &Path) -> Result<()> {
    let text = export_dataset(spec)?;
    fs::write(path, text)?;
    Ok(())
}
