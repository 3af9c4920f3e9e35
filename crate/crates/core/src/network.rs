//! Full model: input encoding, optional positional table, `L` mixing blocks
//! and a pooling head. Also hosts the dense softmax attention block used as
//! a reference point.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticSample;
use crate::mixer::{BlockVars, MixerBlockParams};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::{Array2, Tape, Var};
use crate::protocol::{build_layout, stored_entries, ProtocolSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskHead {
    Regression,
    Classification { classes: usize },
}

impl TaskHead {
    pub fn outputs(&self) -> usize {
        match self {
            TaskHead::Regression => 1,
            TaskHead::Classification { classes } => *classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Flatten all `N·d` features into one linear head.
    Flat,
    /// Linear head on the row of the classification token at position 0.
    Cls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Symbol ids looked up in an embedding table.
    Token,
    /// Real `(a, b)` pairs projected to width `d` by a linear layer.
    RealPair,
}

/// Which tensor feeds the factor generators of every block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    /// The encoded input `X⁽⁰⁾` (embedding plus positional table).
    Input,
    /// The block's own input `X⁽ˡ⁻¹⁾`.
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: TaskHead,
    /// Model length, including the classification slot under CLS pooling.
    pub n: usize,
    pub blocks: usize,
    pub d: usize,
    pub hidden: usize,
    /// Alphabet size in token mode, including padding and CLS symbols.
    pub vocab: usize,
    pub pooling: Pooling,
    pub use_pos_embed: bool,
    pub protocol: ProtocolSpec,
    pub input_mode: InputMode,
    pub factor_source: FactorSource,
    /// Symbol appended to short token sequences.
    pub pad_token: usize,
    pub cls_token: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.protocol.validate()?;
        if self.protocol.n != self.n {
            return bad(format!("protocol length {} differs from model length {}", self.protocol.n, self.n));
        }
        if self.d == 0 || self.hidden == 0 {
            return bad("embedding and hidden widths must be positive".into());
        }
        if let TaskHead::Classification { classes } = self.head {
            if classes < 2 {
                return bad(format!("classification needs at least 2 classes, got {classes}"));
            }
        }
        if self.input_mode == InputMode::Token {
            if self.vocab == 0 {
                return bad("token mode needs a non-empty vocabulary".into());
            }
            if self.pad_token >= self.vocab {
                return bad(format!("pad token {} outside vocabulary of {}", self.pad_token, self.vocab));
            }
        }
        if self.pooling == Pooling::Cls {
            if self.input_mode == InputMode::RealPair {
                return bad("CLS pooling is not available for real-pair inputs".into());
            }
            match self.cls_token {
                Some(t) if t < self.vocab => {}
                Some(t) => return bad(format!("CLS token {t} outside vocabulary of {}", self.vocab)),
                None => return bad("CLS pooling needs a reserved CLS token".into()),
            }
        }
        Ok(())
    }

    /// Longest input sequence accepted.
    pub fn max_input_len(&self) -> usize {
        match self.pooling {
            Pooling::Flat => self.n,
            Pooling::Cls => self.n - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputParams {
    /// `vocab × d`
    Embedding(Array2),
    /// `2 × d` weight and `1 × d` bias.
    Projection { w: Array2, b: Array2 },
}

/// All trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub input: InputParams,
    /// `N × d`, present when the positional table is enabled.
    pub pos: Option<Array2>,
    pub blocks: Vec<MixerBlockParams>,
    /// FLAT: `(N·d) × out`; CLS: `d × out`.
    pub head_w: Array2,
    pub head_b: Array2,
}

impl ModelParams {
    /// Xavier-uniform weights and zero biases from a seeded ChaCha8 stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let input = match config.input_mode {
            InputMode::Token => InputParams::Embedding(Array2::xavier_uniform(config.vocab, d, &mut rng)),
            InputMode::RealPair => {
                InputParams::Projection { w: Array2::xavier_uniform(2, d, &mut rng), b: Array2::zeros(1, d) }
            }
        };
        let pos = config.use_pos_embed.then(|| Array2::xavier_uniform(config.n, d, &mut rng));
        let layout = Arc::new(build_layout(&config.protocol)?);
        let blocks =
            (0..config.blocks).map(|_| MixerBlockParams::init(Arc::clone(&layout), d, config.hidden, &mut rng)).collect();
        let head_in = match config.pooling {
            Pooling::Flat => config.n * d,
            Pooling::Cls => d,
        };
        let out = config.head.outputs();
        Ok(Self {
            input,
            pos,
            blocks,
            head_w: Array2::xavier_uniform(head_in, out, &mut rng),
            head_b: Array2::zeros(1, out),
        })
    }

    /// Tensors in a fixed order, matching [`ModelParams::tensor_names`].
    pub fn tensors(&self) -> Vec<&Array2> {
        let mut out: Vec<&Array2> = match &self.input {
            InputParams::Embedding(e) => vec![e],
            InputParams::Projection { w, b } => vec![w, b],
        };
        out.extend(self.pos.as_ref());
        for block in &self.blocks {
            out.extend(block.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2> {
        let mut out: Vec<&mut Array2> = match &mut self.input {
            InputParams::Embedding(e) => vec![e],
            InputParams::Projection { w, b } => vec![w, b],
        };
        out.extend(self.pos.as_mut());
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match &self.input {
            InputParams::Embedding(_) => vec!["embedding".into()],
            InputParams::Projection { .. } => vec!["input.w".into(), "input.b".into()],
        };
        if self.pos.is_some() {
            names.push("pos".into());
        }
        for (l, block) in self.blocks.iter().enumerate() {
            names.extend(block.tensor_names(&format!("block{l}.")));
        }
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let input = match &self.input {
            InputParams::Embedding(e) => BoundInput::Embedding(tape.leaf(e.clone())?),
            InputParams::Projection { w, b } => {
                BoundInput::Projection { w: tape.leaf(w.clone())?, b: tape.leaf(b.clone())? }
            }
        };
        let pos = self.pos.as_ref().map(|p| tape.leaf(p.clone())).transpose()?;
        let blocks = self.blocks.iter().map(|b| b.bind(tape)).collect::<Result<_>>()?;
        let head_w = tape.leaf(self.head_w.clone())?;
        let head_b = tape.leaf(self.head_b.clone())?;
        Ok(BoundParams { input, pos, blocks, head_w, head_b })
    }
}

enum BoundInput {
    Embedding(Var),
    Projection { w: Var, b: Var },
}

struct BoundParams {
    input: BoundInput,
    pos: Option<Var>,
    blocks: Vec<BlockVars>,
    head_w: Var,
    head_b: Var,
}

impl BoundParams {
    /// Same order as [`ModelParams::tensors`].
    fn vars(&self) -> Vec<Var> {
        let mut out = match self.input {
            BoundInput::Embedding(e) => vec![e],
            BoundInput::Projection { w, b } => vec![w, b],
        };
        out.extend(self.pos);
        for block in &self.blocks {
            out.extend(block.vars());
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

/// One model input sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Tokens(Vec<usize>),
    Pairs(Vec<(f64, f64)>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}

impl SyntheticSample {
    pub fn to_example(&self) -> (Input, Target) {
        match self {
            SyntheticSample::Adding { pairs, target } => (Input::Pairs(pairs.clone()), Target::Value(*target)),
            SyntheticSample::TemporalOrder { symbols, label } => {
                (Input::Tokens(symbols.iter().map(|s| s.token()).collect()), Target::Class(*label))
            }
        }
    }
}

/// Model outputs: one value for regression, `C` logits for classification.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction(pub Vec<f64>);

impl Prediction {
    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// Index of the largest logit; the first one on ties.
    pub fn argmax(&self) -> usize {
        self.0.iter().enumerate().fold(0, |best, (i, &v)| if v > self.0[best] { i } else { best })
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Forward/backward result for one example.
#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    pub prediction: Prediction,
    /// Gradients in [`ModelParams::tensors`] order.
    pub grads: Vec<Array2>,
}

struct Trace {
    x0: Var,
    hidden: Var,
    output: Var,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    fn encode_on_tape(&self, tape: &mut Tape, bound: &BoundParams, input: &Input) -> Result<Var> {
        let cfg = &self.config;
        let n = cfg.n;
        let x = match (input, &bound.input) {
            (Input::Tokens(tokens), BoundInput::Embedding(table)) => {
                if tokens.len() > cfg.max_input_len() {
                    return Err(Error::Input(format!(
                        "sequence of {} symbols exceeds capacity {}",
                        tokens.len(),
                        cfg.max_input_len()
                    )));
                }
                if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab) {
                    return Err(Error::Input(format!("symbol {bad} outside vocabulary of {}", cfg.vocab)));
                }
                let mut ids = Vec::with_capacity(n);
                if cfg.pooling == Pooling::Cls {
                    ids.push(cfg.cls_token.expect("validated"));
                }
                ids.extend_from_slice(tokens);
                ids.resize(n, cfg.pad_token);
                tape.gather(*table, &ids)?
            }
            (Input::Pairs(pairs), BoundInput::Projection { w, b }) => {
                if pairs.len() > n {
                    return Err(Error::Input(format!("sequence of {} pairs exceeds capacity {n}", pairs.len())));
                }
                let mut raw = Array2::zeros(n, 2);
                for (i, &(a, b)) in pairs.iter().enumerate() {
                    raw[(i, 0)] = a;
                    raw[(i, 1)] = b;
                }
                let raw = tape.leaf(raw)?;
                tape.linear(raw, *w, Some(*b))?
            }
            _ => return Err(Error::Input("input kind does not match the model's input mode".into())),
        };
        match bound.pos {
            Some(pos) => tape.add(x, pos),
            None => Ok(x),
        }
    }

    fn trace(&self, tape: &mut Tape, bound: &BoundParams, input: &Input) -> Result<Trace> {
        let x0 = self.encode_on_tape(tape, bound, input)?;
        let mut x = x0;
        for block in &bound.blocks {
            let source = match self.config.factor_source {
                FactorSource::Input => x0,
                FactorSource::Previous => x,
            };
            x = block.apply(tape, x, source)?;
        }
        let pooled = match self.config.pooling {
            Pooling::Flat => tape.reshape(x, 1, self.config.n * self.config.d)?,
            Pooling::Cls => tape.select_row(x, 0)?,
        };
        let output = tape.linear(pooled, bound.head_w, Some(bound.head_b))?;
        Ok(Trace { x0, hidden: x, output })
    }

    /// `X⁽⁰⁾`: encoded input plus positional table.
    pub fn encode(&self, input: &Input) -> Result<Array2> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let x0 = self.encode_on_tape(&mut tape, &bound, input)?;
        Ok(tape.value(x0).clone())
    }

    /// `X⁽ᴸ⁾`, the output of the last block.
    pub fn hidden_states(&self, input: &Input) -> Result<Array2> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let trace = self.trace(&mut tape, &bound, input)?;
        Ok(tape.value(trace.hidden).clone())
    }

    pub fn forward(&self, input: &Input) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let trace = self.trace(&mut tape, &bound, input)?;
        debug_assert!(tape.value(trace.x0).rows() == self.config.n);
        Ok(Prediction(tape.value(trace.output).as_slice().to_vec()))
    }

    /// MSE for regression targets, cross-entropy for class targets.
    pub fn loss(&self, input: &Input, target: Target) -> Result<(f64, Prediction)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let (loss, output) = self.loss_on_tape(&mut tape, &bound, input, target)?;
        Ok((tape.value(loss)[(0, 0)], Prediction(tape.value(output).as_slice().to_vec())))
    }

    fn loss_on_tape(&self, tape: &mut Tape, bound: &BoundParams, input: &Input, target: Target) -> Result<(Var, Var)> {
        let trace = self.trace(tape, bound, input)?;
        let loss = match (self.config.head, target) {
            (TaskHead::Regression, Target::Value(y)) => tape.mse(trace.output, &Array2::scalar(y))?,
            (TaskHead::Classification { .. }, Target::Class(c)) => tape.cross_entropy(trace.output, &[c])?,
            _ => return Err(Error::Input("target kind does not match the model head".into())),
        };
        Ok((loss, trace.output))
    }

    pub fn loss_and_grads(&self, input: &Input, target: Target) -> Result<LossAndGrads> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let (loss, output) = self.loss_on_tape(&mut tape, &bound, input, target)?;
        let loss_value = tape.value(loss)[(0, 0)];
        let prediction = Prediction(tape.value(output).as_slice().to_vec());
        let mut grads = tape.backward(loss)?;
        let grads = bound.vars().into_iter().map(|v| grads.take_or_zeros(v)).collect();
        Ok(LossAndGrads { loss: loss_value, prediction, grads })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let names = self.params.tensor_names();
        let tensors = names.into_iter().zip(self.params.tensors().into_iter().cloned()).collect();
        Ok(Checkpoint { config: serde_json::to_value(&self.config)?, tensors })
    }

    /// Rebuilds a model; every tensor name and shape must match the
    /// configuration echoed in the manifest.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Model::init(config, 0)?;
        let names = model.params.tensor_names();
        if names.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                names.len(),
                ckpt.tensors.len()
            )));
        }
        for ((name, slot), (ck_name, value)) in names.iter().zip(model.params.tensors_mut()).zip(&ckpt.tensors) {
            if name != ck_name || slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {ck_name} {:?} does not match expected {name} {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            value.check_finite("checkpoint tensor")?;
            *slot = value.clone();
        }
        Ok(model)
    }
}

/// Free-function form of [`Model::encode`].
pub fn encode(input: &Input, config: &ModelConfig, params: &ModelParams) -> Result<Array2> {
    Model { config: config.clone(), params: params.clone() }.encode(input)
}

/// Free-function form of [`Model::forward`].
pub fn forward(input: &Input, config: &ModelConfig, params: &ModelParams) -> Result<Prediction> {
    Model { config: config.clone(), params: params.clone() }.forward(input)
}

/// Projections of the softmax attention reference block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d × D`
    pub wq: Array2,
    /// `d × D`
    pub wk: Array2,
    /// `d × d_v`
    pub wv: Array2,
}

/// Attention matrix `softmax(QKᵀ/√D)` and output `A·V`, recorded on `tape`.
pub fn reference_attention_on_tape(
    tape: &mut Tape,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<(Var, Var)> {
    let width = tape.value(wq).cols();
    if width == 0 || tape.value(wk).cols() != width {
        return Err(Error::shape("query and key projections need the same positive width"));
    }
    let q = tape.linear(x, wq, None)?;
    let k = tape.linear(x, wk, None)?;
    let v = tape.linear(x, wv, None)?;
    let scores = tape.matmul_t(q, k)?;
    let scores = tape.scale(scores, 1.0 / (width as f64).sqrt());
    let a = tape.softmax_rows(scores);
    let out = tape.linear(a, v, None)?;
    Ok((a, out))
}

/// Returns `(A, A·V)` for dense softmax attention.
pub fn reference_attention_weights(x: &Array2, params: &AttentionParams) -> Result<(Array2, Array2)> {
    let mut tape = Tape::new();
    let x = tape.leaf(x.clone())?;
    let wq = tape.leaf(params.wq.clone())?;
    let wk = tape.leaf(params.wk.clone())?;
    let wv = tape.leaf(params.wv.clone())?;
    let (a, out) = reference_attention_on_tape(&mut tape, x, wq, wk, wv)?;
    Ok((tape.value(a).clone(), tape.value(out).clone()))
}

/// `softmax(XWq (XWk)ᵀ / √D) · XWv`.
pub fn reference_attention(x: &Array2, params: &AttentionParams) -> Result<Array2> {
    Ok(reference_attention_weights(x, params)?.1)
}

/// Multiply counts for one forward pass of one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    /// Stored factor entries per block, `M·N·K`.
    pub stored_entries: usize,
    /// `L·M·N·K·d`, the sparse factor chain.
    pub mixing_multiplies: usize,
    /// Factor generators and value MLPs over all blocks.
    pub mlp_multiplies: usize,
    pub encode_multiplies: usize,
    pub head_multiplies: usize,
    pub total_multiplies: usize,
}

pub fn count_flops_estimate(config: &ModelConfig) -> Result<FlopsEstimate> {
    config.validate()?;
    let p = &config.protocol;
    let (n, d, h, l) = (config.n, config.d, config.hidden, config.blocks);
    let mixing = l * p.m * n * p.k * d;
    let factor_mlps = p.m * n * (d * h + h * p.k);
    let value_mlp = n * (d * h + h * d);
    let mlp = l * (factor_mlps + value_mlp);
    let encode = match config.input_mode {
        InputMode::Token => 0,
        InputMode::RealPair => n * 2 * d,
    };
    let head = match config.pooling {
        Pooling::Flat => n * d,
        Pooling::Cls => d,
    } * config.head.outputs();
    Ok(FlopsEstimate {
        stored_entries: stored_entries(p),
        mixing_multiplies: mixing,
        mlp_multiplies: mlp,
        encode_multiplies: encode,
        head_multiplies: head,
        total_multiplies: mixing + mlp + encode + head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mlp3Params;
    use crate::protocol::ProtocolKind;

    pub(crate) fn config(n: usize, pooling: Pooling, mode: InputMode, kind: ProtocolKind) -> ModelConfig {
        ModelConfig {
            head: TaskHead::Classification { classes: 4 },
            n,
            blocks: 2,
            d: 4,
            hidden: 5,
            vocab: 7,
            pooling,
            use_pos_embed: true,
            protocol: ProtocolSpec::with_defaults(kind, n).unwrap(),
            input_mode: mode,
            factor_source: FactorSource::Input,
            pad_token: 6,
            cls_token: Some(6),
        }
    }

    #[test]
    fn encode_examples() {
        let mut cfg = config(8, Pooling::Flat, InputMode::Token, ProtocolKind::Chord);
        cfg.use_pos_embed = false;
        let mut model = Model::init(cfg.clone(), 1).unwrap();
        model.params.input = InputParams::Embedding(Array2::zeros(7, 4));
        assert_eq!(model.encode(&Input::Tokens(vec![1, 2, 3])).unwrap(), Array2::zeros(8, 4));

        cfg.use_pos_embed = true;
        let mut model = Model::init(cfg, 1).unwrap();
        model.params.input = InputParams::Embedding(Array2::zeros(7, 4));
        let x0 = model.encode(&Input::Tokens(vec![0; 8])).unwrap();
        assert_eq!(&x0, model.params.pos.as_ref().unwrap());

        let mut cfg = config(8, Pooling::Flat, InputMode::RealPair, ProtocolKind::Chord);
        cfg.head = TaskHead::Regression;
        cfg.use_pos_embed = false;
        let mut model = Model::init(cfg, 1).unwrap();
        let mut w = Array2::zeros(2, 4);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        model.params.input = InputParams::Projection { w, b: Array2::zeros(1, 4) };
        let x0 = model.encode(&Input::Pairs(vec![(0.5, 1.0)])).unwrap();
        assert_eq!(x0.row(0), &[0.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_errors() {
        let model = Model::init(config(8, Pooling::Flat, InputMode::Token, ProtocolKind::Chord), 1).unwrap();
        assert!(matches!(model.encode(&Input::Tokens(vec![7])), Err(Error::Input(_))));
        assert!(matches!(model.encode(&Input::Tokens(vec![0; 9])), Err(Error::Input(_))));
        assert!(model.encode(&Input::Pairs(vec![(0.0, 0.0)])).is_err());
        let cls = Model::init(config(8, Pooling::Cls, InputMode::Token, ProtocolKind::Chord), 1).unwrap();
        assert!(cls.encode(&Input::Tokens(vec![0; 8])).is_err());
        assert!(cls.encode(&Input::Tokens(vec![0; 7])).is_ok());
    }

    #[test]
    fn config_validation() {
        let ok = config(8, Pooling::Flat, InputMode::Token, ProtocolKind::Chord);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.head = TaskHead::Classification { classes: 1 };
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.pooling = Pooling::Cls;
        c.cls_token = None;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.pooling = Pooling::Cls;
        c.input_mode = InputMode::RealPair;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.n = 16;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hidden_state_keeps_shape() {
        for blocks in [0, 1, 3] {
            let mut cfg = config(16, Pooling::Flat, InputMode::Token, ProtocolKind::Cdil);
            cfg.blocks = blocks;
            let model = Model::init(cfg, 3).unwrap();
            let h = model.hidden_states(&Input::Tokens(vec![1; 16])).unwrap();
            assert_eq!(h.shape(), (16, 4));
        }
    }

    #[test]
    fn identity_blocks_and_zero_head_give_bias() {
        let mut model = Model::init(config(8, Pooling::Flat, InputMode::Token, ProtocolKind::Chord), 4).unwrap();
        let k = model.config.protocol.k;
        for block in &mut model.params.blocks {
            for f in &mut block.factor_mlps {
                *f = Mlp3Params::zeros(4, 5, k);
                f.b2[(0, 0)] = 1.0;
            }
        }
        model.params.head_w = Array2::zeros(32, 4);
        model.params.head_b = Array2::from_rows(&[[0.1, 0.2, 0.3, 0.4]]).unwrap();
        let p = model.forward(&Input::Tokens(vec![2; 8])).unwrap();
        assert_eq!(p.0, [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(p.argmax(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Model::init(config(8, Pooling::Cls, InputMode::Token, ProtocolKind::Cdil), 9).unwrap();
        let ckpt = Checkpoint::from_bytes(&model.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap();
        assert_eq!(Model::from_checkpoint(&ckpt).unwrap(), model);

        let mut broken = ckpt.clone();
        broken.tensors.pop();
        assert!(Model::from_checkpoint(&broken).is_err());
        let mut broken = ckpt;
        broken.tensors[0].1 = Array2::zeros(3, 3);
        assert!(Model::from_checkpoint(&broken).is_err());
    }

    #[test]
    fn attention_examples() {
        let x = Array2::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let params = AttentionParams { wq: Array2::zeros(2, 3), wk: Array2::zeros(2, 3), wv: Array2::identity(2) };
        let (a, out) = reference_attention_weights(&x, &params).unwrap();
        assert!(a.as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(out.as_slice(), &[2.0, 0.5, 2.0, 0.5]);

        let single = Array2::from_rows(&[[0.3, -0.7]]).unwrap();
        let params = AttentionParams {
            wq: Array2::filled(2, 2, 0.4),
            wk: Array2::filled(2, 2, -0.2),
            wv: Array2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
        };
        let out = reference_attention(&single, &params).unwrap();
        assert_eq!(out, single.matmul(&params.wv).unwrap());
    }

    #[test]
    fn flops() {
        let mut cfg = config(16, Pooling::Flat, InputMode::Token, ProtocolKind::Chord);
        let est = count_flops_estimate(&cfg).unwrap();
        assert_eq!(est.mixing_multiplies, 2 * 4 * 16 * 5 * 4);
        assert_eq!(est.stored_entries, 320);
        cfg.blocks = 0;
        assert_eq!(count_flops_estimate(&cfg).unwrap().mixing_multiplies, 0);
    }
}
