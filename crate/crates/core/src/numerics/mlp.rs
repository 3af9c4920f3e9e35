use rand::Rng;

use super::{Array2, Tape, Var};
use crate::Result;

/// Weights of a Linear-GELU-Linear network.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp3Params {
    pub w1: Array2,
    pub b1: Array2,
    pub w2: Array2,
    pub b2: Array2,
}

/// [`Mlp3Params`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Mlp3Vars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp3Params {
    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: Array2::xavier_uniform(input, hidden, rng),
            b1: Array2::zeros(1, hidden),
            w2: Array2::xavier_uniform(hidden, output, rng),
            b2: Array2::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Array2::zeros(input, hidden),
            b1: Array2::zeros(1, hidden),
            w2: Array2::zeros(hidden, output),
            b2: Array2::zeros(1, output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn tensors(&self) -> [&Array2; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Mlp3Vars> {
        Ok(Mlp3Vars {
            w1: tape.leaf(self.w1.clone())?,
            b1: tape.leaf(self.b1.clone())?,
            w2: tape.leaf(self.w2.clone())?,
            b2: tape.leaf(self.b2.clone())?,
        })
    }
}

impl Mlp3Vars {
    pub fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Row-wise `linear → gelu → linear`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.linear(x, self.w1, Some(self.b1))?;
        let h = tape.gelu(h);
        tape.linear(h, self.w2, Some(self.b2))
    }
}

/// Evaluates an MLP on `x` outside of any tape.
pub fn mlp3(x: &Array2, params: &Mlp3Params) -> Result<Array2> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape)?;
    let x = tape.leaf(x.clone())?;
    let y = vars.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}
