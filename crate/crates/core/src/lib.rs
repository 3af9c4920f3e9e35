//! Sequence mixing with data-dependent sparse matrix factors.
//!
//! A mixing block replaces softmax attention with a product of `M` sparse
//! factors `A = W1 · W2 · … · WM`. Each factor stores `K` entries per row at
//! positions fixed by a protocol (CHORD or CDIL); the stored values are
//! produced per row by small MLPs from the embedded input. Applying the chain
//! to an `N × d` value matrix costs `O(M·N·K·d)`.
//!
//! Modules:
//! - [`protocol`]: sparse layouts, receptive-field completeness, circulant rank.
//! - [`numerics`]: dense arrays, a reverse-mode tape, Adam, checkpoints.
//! - [`mixer`]: the mixing block and its dense reconstruction.
//! - [`network`]: full model, heads, and the softmax attention reference.
//! - [`datagen`]: Adding and Temporal Order generators.
//! - [`harness`]: training, evaluation, analysis and data export.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod mixer;
pub mod network;
pub mod numerics;
pub mod protocol;

pub use error::{Error, Result};
