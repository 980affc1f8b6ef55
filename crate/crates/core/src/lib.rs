//! Competitive group-restricted Boltzmann machine prior as a trainable layer.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`rng`]: dense float64 storage and a pinned PRNG.
//! * [`nn`]: a small reverse-mode layer stack (dense, conv2d, max-pool, ReLU,
//!   dropout, softmax cross-entropy) with momentum SGD and checkpoints.
//! * [`gsmax`]: channel groups, the group softmax with ground state, and
//!   group maxout.
//! * [`boltzmann`]: exact enumeration and Gibbs sampling of the competitive
//!   machine, used to certify [`gsmax`].
//! * [`discovery`]: neuron/sub-class association and its accuracy metrics.
//! * [`data`]: synthetic hierarchical data, rotated edge orbits, CIFAR readers.
//! * [`config`], [`pipeline`], [`oracle`], [`ppm`]: reproducible runs.

pub mod boltzmann;
pub mod config;
pub mod data;
pub mod discovery;
pub mod error;
pub mod gsmax;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod ppm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use gsmax::{GroupSpec, GsmaxParams};
pub use rng::Prng;
pub use tensor::Tensor;
