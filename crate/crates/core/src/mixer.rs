//! The mixing block.
//!
//! For input `X_prev` (`N × d`) and factor source `X0`:
//!
//! 1. `V = g(X_prev)`, a row-wise MLP.
//! 2. For each factor `m`, row `i` of `W⁽ᵐ⁾` stores `f⁽ᵐ⁾(X0[i])` (`K` values)
//!    at the layout's columns.
//! 3. `X_new = W⁽¹⁾·(W⁽²⁾·(…·(W⁽ᴹ⁾·V)))`, so the dense equivalent is
//!    `A·V` with `A = W⁽¹⁾·W⁽²⁾·…·W⁽ᴹ⁾`.
//!
//! Factor values are used raw: no softmax, no normalization.

use std::sync::Arc;

use rand::Rng;

use crate::numerics::{sparse_mix_forward, Array2, Mlp3Params, Mlp3Vars, Tape, Var};
use crate::protocol::SparseLayout;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MixerBlockParams {
    pub layout: Arc<SparseLayout>,
    /// One `d → K` generator per factor.
    pub factor_mlps: Vec<Mlp3Params>,
    /// `d → d` value transform.
    pub value_mlp: Mlp3Params,
}

/// Stored values of all factors, `M` arrays of `N × K` aligned with the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorBank {
    pub values: Vec<Array2>,
}

impl MixerBlockParams {
    pub fn init<R: Rng + ?Sized>(layout: Arc<SparseLayout>, d: usize, hidden: usize, rng: &mut R) -> Self {
        let factor_mlps = (0..layout.m()).map(|_| Mlp3Params::init(d, hidden, layout.k(), rng)).collect();
        let value_mlp = Mlp3Params::init(d, hidden, d, rng);
        Self { layout, factor_mlps, value_mlp }
    }

    pub fn width(&self) -> usize {
        self.value_mlp.input_width()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        if self.factor_mlps.len() != self.layout.m() {
            return Err(Error::shape(format!(
                "{} factor generators for {} factors",
                self.factor_mlps.len(),
                self.layout.m()
            )));
        }
        for (m, f) in self.factor_mlps.iter().enumerate() {
            if f.input_width() != d || f.output_width() != self.layout.k() {
                return Err(Error::shape(format!(
                    "factor generator {m}: {} -> {}, expected {d} -> {}",
                    f.input_width(),
                    f.output_width(),
                    self.layout.k()
                )));
            }
        }
        if self.value_mlp.output_width() != d {
            return Err(Error::shape(format!("value MLP maps {d} -> {}", self.value_mlp.output_width())));
        }
        Ok(())
    }

    /// Tensors in a fixed order: each factor generator, then the value MLP.
    pub fn tensors(&self) -> Vec<&Array2> {
        self.factor_mlps.iter().chain(std::iter::once(&self.value_mlp)).flat_map(|p| p.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2> {
        self.factor_mlps.iter_mut().chain(std::iter::once(&mut self.value_mlp)).flat_map(|p| p.tensors_mut()).collect()
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for m in 0..self.factor_mlps.len() {
            for t in ["w1", "b1", "w2", "b2"] {
                names.push(format!("{prefix}factor{m}.{t}"));
            }
        }
        for t in ["w1", "b1", "w2", "b2"] {
            names.push(format!("{prefix}value.{t}"));
        }
        names
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BlockVars> {
        self.validate()?;
        let factor_mlps = self.factor_mlps.iter().map(|p| p.bind(tape)).collect::<Result<_>>()?;
        let value_mlp = self.value_mlp.bind(tape)?;
        Ok(BlockVars { layout: Arc::clone(&self.layout), factor_mlps, value_mlp })
    }
}

/// A block's parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BlockVars {
    pub layout: Arc<SparseLayout>,
    pub factor_mlps: Vec<Mlp3Vars>,
    pub value_mlp: Mlp3Vars,
}

impl BlockVars {
    pub fn vars(&self) -> Vec<Var> {
        self.factor_mlps.iter().chain(std::iter::once(&self.value_mlp)).flat_map(|p| p.vars()).collect()
    }

    /// One `N × K` value array per factor, each a function of `x0` only.
    pub fn generate_factors(&self, tape: &mut Tape, x0: Var) -> Result<Vec<Var>> {
        let rows = tape.value(x0).rows();
        if rows != self.layout.n() {
            return Err(Error::shape(format!("factor source has {rows} rows, layout has N = {}", self.layout.n())));
        }
        self.factor_mlps.iter().map(|f| f.forward(tape, x0)).collect()
    }

    /// `A · g(x_prev)` with `A` generated from `x0`.
    pub fn apply(&self, tape: &mut Tape, x_prev: Var, x0: Var) -> Result<Var> {
        let (n, d) = tape.value(x_prev).shape();
        if tape.value(x0).shape() != (n, d) {
            return Err(Error::shape("block input and factor source differ in shape"));
        }
        let factors = self.generate_factors(tape, x0)?;
        let mut out = self.value_mlp.forward(tape, x_prev)?;
        for (m, &w) in factors.iter().enumerate().rev() {
            out = tape.sparse_mix(w, self.layout.factor(m), out)?;
        }
        Ok(out)
    }
}

/// Factor values for `x0`, outside of any tape.
pub fn generate_factors(x0: &Array2, params: &MixerBlockParams) -> Result<FactorBank> {
    let mut tape = Tape::new();
    let block = params.bind(&mut tape)?;
    let x0 = tape.leaf(x0.clone())?;
    let vars = block.generate_factors(&mut tape, x0)?;
    Ok(FactorBank { values: vars.into_iter().map(|v| tape.value(v).clone()).collect() })
}

/// One block forward pass outside of any tape.
pub fn apply_block(x_prev: &Array2, x0: &Array2, params: &MixerBlockParams) -> Result<Array2> {
    let mut tape = Tape::new();
    let block = params.bind(&mut tape)?;
    let x_prev = tape.leaf(x_prev.clone())?;
    let x0 = tape.leaf(x0.clone())?;
    let out = block.apply(&mut tape, x_prev, x0)?;
    Ok(tape.value(out).clone())
}

/// Applies an existing bank to `v` right to left, without a tape.
pub fn apply_bank(bank: &FactorBank, layout: &SparseLayout, v: &Array2) -> Result<Array2> {
    check_bank(bank, layout)?;
    if v.rows() != layout.n() {
        return Err(Error::shape(format!("{} value rows for N = {}", v.rows(), layout.n())));
    }
    let mut out = v.clone();
    for (m, w) in bank.values.iter().enumerate().rev() {
        out = sparse_mix_forward(w, layout.factor(m), &out);
    }
    Ok(out)
}

fn check_bank(bank: &FactorBank, layout: &SparseLayout) -> Result<()> {
    if bank.values.len() != layout.m() {
        return Err(Error::shape(format!("bank has {} factors, layout {}", bank.values.len(), layout.m())));
    }
    for w in &bank.values {
        if w.shape() != (layout.n(), layout.k()) {
            return Err(Error::shape(format!(
                "bank factor {}x{}, layout {}x{}",
                w.rows(),
                w.cols(),
                layout.n(),
                layout.k()
            )));
        }
    }
    Ok(())
}

/// Dense `N × N` scatter of factor `m`; repeated columns accumulate.
pub fn scatter_factor(values: &Array2, layout: &SparseLayout, m: usize) -> Array2 {
    let (n, k) = (layout.n(), layout.k());
    let mut dense = Array2::zeros(n, n);
    let cols = layout.factor(m);
    for i in 0..n {
        for t in 0..k {
            dense[(i, cols[i * k + t])] += values[(i, t)];
        }
    }
    dense
}

/// Dense `A = W⁽¹⁾ · … · W⁽ᴹ⁾`. Cubic cost; meant for tests and analysis.
pub fn dense_attention_matrix(bank: &FactorBank, layout: &SparseLayout) -> Result<Array2> {
    check_bank(bank, layout)?;
    let mut a = scatter_factor(&bank.values[0], layout, 0);
    for (m, w) in bank.values.iter().enumerate().skip(1) {
        a = a.matmul(&scatter_factor(w, layout, m))?;
    }
    Ok(a)
}
