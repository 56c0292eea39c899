//! Toy-scale operator-feature networks.
//!
//! The forward path fits each operator kind with a DeepONet whose branch
//! has one encoder per kind and a decoder shared by all of them. The
//! backward path reads data through a permutation-invariant set encoder,
//! maps the result into operator-feature space and lets an attention head
//! score every kind-to-kind edge.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod source;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{HyperParams, Model, ModelError};
pub use tensor::Mat;
