//! Graph-adaptive normalization (GRANOLA), the competing GNN normalization
//! layers, message-passing backbones and a small reverse-mode autodiff
//! engine that trains them.

pub mod autodiff;
pub mod context;
pub mod error;
pub mod gradcheck;
pub mod granola;
pub mod graph;
pub mod mpnn;
pub mod norm;
pub mod params;
pub mod props;
pub mod reference;
pub mod train;
pub mod tensor;

pub use autodiff::{NeighborLists, Tape, Var};
pub use context::{ForwardCtx, RnfSource};
pub use error::{Error, Result};
pub use granola::{GranolaLayer, GranolaSpec, GranolaVariant};
pub use graph::{Graph, GraphBatch};
pub use mpnn::{ModelStack, StackSpec};
pub use norm::{NormLayer, NormSpec, NormVariant};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
