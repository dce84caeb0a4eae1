//! The MLP noise predictor and its reverse-mode differentiation tape.

pub mod graph;
pub mod model;

pub use graph::{BoundModel, GradientBundle, Graph, LayerGrad, NodeId, ParamKind};
pub use model::{compat_hash, Activation, DenoiserModel, Layer, ModelArch};
