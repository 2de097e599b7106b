//! Minimal reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! Every activation in the model is a `rows × cols` matrix (time × features),
//! so a single rank keeps the op set small. Batches are handled by running one
//! graph per sample and summing parameter gradients.

mod graph;
mod optim;
mod params;

pub use graph::{Gradients, Graph, Var, ZERO};
pub use optim::{clip_global_norm, Adam, AdamConfig, GradAccumulator};
pub use params::{Param, ParamId, ParamStore};

pub type Mat = ndarray::Array2<f64>;
