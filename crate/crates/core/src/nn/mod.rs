//! Minimal reverse-mode layer stack.

pub mod checkpoint;
pub mod conv;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use conv::{conv2d_forward, maxpool2d_forward, Padding};
pub use layer::{Layer, LayerKind, LayerSpec};
pub use loss::softmax_xent_loss;
pub use network::{Gradients, Network, Trace};
pub use optim::{sgd_momentum_step, TrainConfig};
