//! Dense differentiable numeric core: arrays, reverse-mode tape, MLPs,
//! Adam, and the checkpoint file format.

mod adam;
mod array;
pub mod checkpoint;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::Array2;
pub use mlp::{mlp3, Mlp3Params, Mlp3Vars};
pub use tape::{gelu_scalar, normal_cdf, Gradients, Tape, Var};

pub(crate) use tape::sparse_mix_forward;

use crate::Result;

/// Applies one sparse factor to `v` outside of any tape.
///
/// `values` is `N × K`, `cols` holds the `N·K` column indices row by row.
pub fn sparse_mix(values: &Array2, cols: &[usize], v: &Array2) -> Result<Array2> {
    let mut tape = Tape::new();
    let w = tape.leaf(values.clone())?;
    let x = tape.leaf(v.clone())?;
    let out = tape.sparse_mix(w, cols, x)?;
    Ok(tape.value(out).clone())
}
