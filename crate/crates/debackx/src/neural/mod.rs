//! Differentiable substrate shared by all model components: parameter
//! storage, a reverse-mode tape, transformer blocks, the optimizer, the
//! frozen perceptual feature net, patch geometry, losses, checkpoints.

pub mod checkpoint;
pub mod frozen;
pub mod graph;
pub mod loss;
pub mod optim;
pub mod params;
pub mod patch;
pub mod transformer;
pub mod vit;

pub use frozen::FrozenFeatureNet;
pub use graph::{Gradients, Graph, NodeId};
pub use params::{Init, ParamStore};
pub use patch::PatchGrid;
pub use transformer::{Decoder, Encoder, TransformerConfig};
