//! Policy/value network over simulator observations, with exact
//! reverse-mode gradients and a small binary checkpoint format.
//!
//! All layers read their weights from one flat parameter slice indexed by a
//! [`ParamLayout`], and write gradients into a slice of the same shape.

pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod layers;
pub mod layout;
pub mod model;
pub mod scalar;

pub use checkpoint::Checkpoint;
pub use dist::{entropy, log_prob, log_softmax, sample_actions, Sampled};
pub use error::{NnError, Result};
pub use layout::{Init, ParamEntry, ParamLayout};
pub use model::{Cache, ForwardOut, HeadGrads, Modality, Model, ModelConfig};
pub use scalar::Scalar;

pub type ForwardOut32 = ForwardOut<f32>;
pub type ForwardOut64 = ForwardOut<f64>;
pub type HeadGrads32 = HeadGrads<f32>;
pub type HeadGrads64 = HeadGrads<f64>;
