//! Synthetic long-sequence tasks.
//!
//! Every sample is a pure function of `(seed, index)`: the generator seeds a
//! SplitMix64 stream from `mix(mix(seed) ^ index)` and draws fields in a
//! fixed order (signal positions first, then per-position values), so any
//! index can be regenerated in isolation.
//!
//! - Adding: pairs `(a_i, b_i)` with `a_i ~ U(-1, 1)`, exactly two `b = 1`
//!   markers at distinct positions `t1, t2`, target `y = 0.5 + (a_t1 + a_t2)/4`.
//! - Temporal Order: noise symbols from `{a, b, c, d}` with two signal symbols
//!   from `{X, Y}`; the class encodes the ordered pair
//!   `(X,X) → 0, (X,Y) → 1, (Y,X) → 2, (Y,Y) → 3` read in position order.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Adding,
    TemporalOrder,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Adding => "adding",
            Task::TemporalOrder => "temporal_order",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "adding" => Ok(Task::Adding),
            "temporal_order" | "temporalorder" => Ok(Task::TemporalOrder),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("sequence length must be at least 2, got {}", self.n)));
        }
        if self.count < 1 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Temporal Order alphabet; discriminants are the token ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    A = 0,
    B = 1,
    C = 2,
    D = 3,
    X = 4,
    Y = 5,
}

impl Symbol {
    pub const NOISE: [Symbol; 4] = [Symbol::A, Symbol::B, Symbol::C, Symbol::D];
    pub const ALPHABET_SIZE: usize = 6;

    pub fn token(self) -> usize {
        self as usize
    }

    pub fn is_signal(self) -> bool {
        matches!(self, Symbol::X | Symbol::Y)
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::A => 'a',
            Symbol::B => 'b',
            Symbol::C => 'c',
            Symbol::D => 'd',
            Symbol::X => 'X',
            Symbol::Y => 'Y',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'a' => Symbol::A,
            'b' => Symbol::B,
            'c' => Symbol::C,
            'd' => Symbol::D,
            'X' => Symbol::X,
            'Y' => Symbol::Y,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyntheticSample {
    Adding { pairs: Vec<(f64, f64)>, target: f64 },
    TemporalOrder { symbols: Vec<Symbol>, label: usize },
}

impl SyntheticSample {
    pub fn len(&self) -> usize {
        match self {
            SyntheticSample::Adding { pairs, .. } => pairs.len(),
            SyntheticSample::TemporalOrder { symbols, .. } => symbols.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 stream keyed by `(seed, index)`.
#[derive(Clone, Debug)]
pub struct SampleRng {
    state: u64,
}

impl SampleRng {
    const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

    pub fn new(seed: u64, index: u64) -> Self {
        Self { state: mix64(mix64(seed) ^ index) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `0..bound` by rejection, no modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Two distinct positions in `0..n`, uniform over ordered pairs.
    pub fn distinct_pair(&mut self, n: usize) -> (usize, usize) {
        let t1 = self.below(n as u64) as usize;
        let mut t2 = self.below(n as u64 - 1) as usize;
        if t2 >= t1 {
            t2 += 1;
        }
        (t1, t2)
    }
}

fn check_index(spec: &DatasetSpec, index: usize) -> Result<()> {
    spec.validate()?;
    if index >= spec.count {
        return Err(Error::IndexOutOfRange { index, len: spec.count });
    }
    Ok(())
}

/// Target of an Adding sample from its two marked values.
pub fn adding_target(a1: f64, a2: f64) -> f64 {
    0.5 + (a1 + a2) / 4.0
}

/// Recomputes the target from the stored pairs; `None` unless exactly two
/// markers are set.
pub fn recompute_adding_target(pairs: &[(f64, f64)]) -> Option<f64> {
    let marked: Vec<f64> = pairs.iter().filter(|(_, b)| *b == 1.0).map(|(a, _)| *a).collect();
    match marked[..] {
        [a1, a2] => Some(adding_target(a1, a2)),
        _ => None,
    }
}

pub fn gen_adding(spec: &DatasetSpec, index: usize) -> Result<SyntheticSample> {
    if spec.task != Task::Adding {
        return Err(Error::Config(format!("gen_adding on a {} spec", spec.task)));
    }
    check_index(spec, index)?;
    let mut rng = SampleRng::new(spec.seed, index as u64);
    let (t1, t2) = rng.distinct_pair(spec.n);
    let pairs: Vec<(f64, f64)> = (0..spec.n)
        .map(|i| {
            let a = 2.0 * rng.next_f64() - 1.0;
            let b = if i == t1 || i == t2 { 1.0 } else { 0.0 };
            (a, b)
        })
        .collect();
    let (lo, hi) = (t1.min(t2), t1.max(t2));
    let target = adding_target(pairs[lo].0, pairs[hi].0);
    Ok(SyntheticSample::Adding { pairs, target })
}

/// Class of an ordered signal pair.
pub fn temporal_order_label(first: Symbol, second: Symbol) -> usize {
    2 * usize::from(first == Symbol::Y) + usize::from(second == Symbol::Y)
}

/// Class of a symbol sequence, `None` unless it carries exactly two signals.
pub fn classify_temporal_order(symbols: &[Symbol]) -> Option<usize> {
    let signals: Vec<Symbol> = symbols.iter().copied().filter(|s| s.is_signal()).collect();
    match signals[..] {
        [first, second] => Some(temporal_order_label(first, second)),
        _ => None,
    }
}

pub fn gen_temporal_order(spec: &DatasetSpec, index: usize) -> Result<SyntheticSample> {
    if spec.task != Task::TemporalOrder {
        return Err(Error::Config(format!("gen_temporal_order on a {} spec", spec.task)));
    }
    check_index(spec, index)?;
    let mut rng = SampleRng::new(spec.seed, index as u64);
    let (t1, t2) = rng.distinct_pair(spec.n);
    let signal = |rng: &mut SampleRng| if rng.below(2) == 0 { Symbol::X } else { Symbol::Y };
    let (s1, s2) = (signal(&mut rng), signal(&mut rng));
    let symbols: Vec<Symbol> = (0..spec.n)
        .map(|i| {
            let noise = Symbol::NOISE[rng.below(4) as usize];
            if i == t1 {
                s1
            } else if i == t2 {
                s2
            } else {
                noise
            }
        })
        .collect();
    let label = classify_temporal_order(&symbols).expect("two signals placed");
    Ok(SyntheticSample::TemporalOrder { symbols, label })
}

pub fn generate(spec: &DatasetSpec, index: usize) -> Result<SyntheticSample> {
    match spec.task {
        Task::Adding => gen_adding(spec, index),
        Task::TemporalOrder => gen_temporal_order(spec, index),
    }
}

/// Adding evaluation rule: correct iff `|y - ŷ| < 0.04`.
pub fn adding_correct(target: f64, prediction: f64) -> bool {
    (target - prediction).abs() < 0.04
}

/// One export line: Adding is `a0,b0,a1,b1,…,y`; Temporal Order is
/// `s0,s1,…,label` with symbols as letters. Floats use the shortest
/// representation that round-trips.
pub fn sample_line(sample: &SyntheticSample) -> String {
    let mut line = String::new();
    match sample {
        SyntheticSample::Adding { pairs, target } => {
            for (a, b) in pairs {
                write!(line, "{a},{b},").expect("writing to String");
            }
            write!(line, "{target}").expect("writing to String");
        }
        SyntheticSample::TemporalOrder { symbols, label } => {
            for s in symbols {
                line.push(s.as_char());
                line.push(',');
            }
            write!(line, "{label}").expect("writing to String");
        }
    }
    line
}

/// Parses a line produced by [`sample_line`].
pub fn parse_sample_line(task: Task, line: &str) -> Result<SyntheticSample> {
    let fields: Vec<&str> = line.trim_end().split(',').collect();
    let bad = |what: &str| Error::Input(format!("malformed {task} line: {what}"));
    let (last, body) = fields.split_last().ok_or_else(|| bad("empty"))?;
    match task {
        Task::Adding => {
            if body.len() % 2 != 0 {
                return Err(bad("odd number of pair fields"));
            }
            let nums = body.iter().map(|f| f.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("number"))?;
            let pairs = nums.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let target = last.parse().map_err(|_| bad("target"))?;
            Ok(SyntheticSample::Adding { pairs, target })
        }
        Task::TemporalOrder => {
            let symbols = body
                .iter()
                .map(|f| {
                    let mut chars = f.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => Symbol::from_char(c),
                        _ => None,
                    }
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("symbol"))?;
            let label = last.parse().map_err(|_| bad("label"))?;
            Ok(SyntheticSample::TemporalOrder { symbols, label })
        }
    }
}

/// Full export: a JSON header line carrying the spec, then one line per sample.
pub fn export_dataset(spec: &DatasetSpec) -> Result<String> {
    spec.validate()?;
    let mut out = serde_json::to_string(spec)?;
    out.push('\n');
    for index in 0..spec.count {
        out.push_str(&sample_line(&generate(spec, index)?));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: Task, n: usize, count: usize) -> DatasetSpec {
        DatasetSpec { task, n, count, seed: 42 }
    }

    #[test]
    fn adding_target_examples() {
        assert_eq!(adding_target(0.5, 0.6), 0.775);
        assert_eq!(adding_target(0.0, 0.0), 0.5);
    }

    #[test]
    fn adding_threshold_is_strict() {
        assert!(adding_correct(0.5, 0.5));
        assert!(!adding_correct(0.5, 0.541));
        assert!(adding_correct(0.5, 0.5399));
        assert!(!adding_correct(0.0, 0.04));
        assert!(!adding_correct(0.0, -0.04));
    }

    #[test]
    fn temporal_order_labels() {
        use Symbol::*;
        assert_eq!(classify_temporal_order(&[A, D, Y, C, B, A, Y, C, D]), Some(3));
        assert_eq!(classify_temporal_order(&[X, A, X]), Some(0));
        assert_eq!(classify_temporal_order(&[B, X, Y]), Some(1));
        assert_eq!(classify_temporal_order(&[Y, X, C]), Some(2));
        assert_eq!(classify_temporal_order(&[Y, A, C]), None);
    }

    #[test]
    fn samples_are_structurally_valid() {
        let s = spec(Task::Adding, 17, 200);
        for i in 0..s.count {
            let SyntheticSample::Adding { pairs, target } = gen_adding(&s, i).unwrap() else { panic!() };
            assert_eq!(pairs.len(), 17);
            assert_eq!(pairs.iter().filter(|p| p.1 == 1.0).count(), 2);
            assert!(pairs.iter().all(|p| (-1.0..1.0).contains(&p.0) && (p.1 == 0.0 || p.1 == 1.0)));
            assert!((0.0..=1.0).contains(&target));
            assert_eq!(recompute_adding_target(&pairs), Some(target));
        }
        let s = spec(Task::TemporalOrder, 9, 200);
        for i in 0..s.count {
            let SyntheticSample::TemporalOrder { symbols, label } = gen_temporal_order(&s, i).unwrap() else { panic!() };
            assert_eq!(symbols.iter().filter(|s| s.is_signal()).count(), 2);
            assert_eq!(classify_temporal_order(&symbols), Some(label));
        }
    }

    #[test]
    fn two_positions_cover_both_slots() {
        let s = spec(Task::Adding, 2, 50);
        for i in 0..s.count {
            let SyntheticSample::Adding { pairs, .. } = gen_adding(&s, i).unwrap() else { panic!() };
            assert!(pairs.iter().all(|p| p.1 == 1.0));
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let s = spec(Task::Adding, 64, 10);
        assert_eq!(gen_adding(&s, 7).unwrap(), gen_adding(&s, 7).unwrap());
        assert_ne!(gen_adding(&s, 7).unwrap(), gen_adding(&s, 8).unwrap());
        let other = DatasetSpec { seed: 43, ..s };
        assert_ne!(gen_adding(&s, 7).unwrap(), gen_adding(&other, 7).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(gen_adding(&spec(Task::Adding, 8, 3), 3), Err(Error::IndexOutOfRange { index: 3, len: 3 })));
        assert!(gen_adding(&spec(Task::TemporalOrder, 8, 3), 0).is_err());
        assert!(gen_temporal_order(&spec(Task::TemporalOrder, 1, 3), 0).is_err());
        assert!(gen_adding(&spec(Task::Adding, 8, 0), 0).is_err());
    }

    #[test]
    fn export_lines_round_trip() {
        for task in [Task::Adding, Task::TemporalOrder] {
            let s = spec(task, 12, 5);
            let text = export_dataset(&s).unwrap();
            let mut lines = text.lines();
            let header: DatasetSpec = serde_json::from_str(lines.next().unwrap()).unwrap();
            assert_eq!(header, s);
            for (i, line) in lines.enumerate() {
                assert_eq!(parse_sample_line(task, line).unwrap(), generate(&s, i).unwrap());
            }
        }
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = SampleRng::new(1, 2);
        for bound in 1..50 {
            assert!(rng.below(bound) < bound);
        }
    }
}
