//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation as it is applied; node order on the
//! tape is a topological order, so [`Graph::backward`] is a single reverse
//! sweep. Parameters live outside the graph as plain [`Tensor`]s and are
//! bound as leaves for each forward pass.

mod adam;
mod checkpoint;
mod graph;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
