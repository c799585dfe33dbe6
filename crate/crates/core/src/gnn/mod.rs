//! A small graph neural network for point-wise segmentation, with its own
//! reverse-mode autodiff.
//!
//! [`Tape`] records matrix operations; [`SegModel`] wires them into the
//! network described in [`model`]; [`Sgd`] updates the parameters and
//! [`checkpoint`] persists them.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{coordinate_graph, covariance_features, edge_features, feature_graph, Neighbors};
pub use loss::cross_entropy_loss;
pub use model::{forward, Forward, ForwardPass, ModelConfig, NetInput, SegModel};
pub use optim::Sgd;
pub use tape::{Grads, Tape, Var};
pub use tensor::{Real, Tensor};
