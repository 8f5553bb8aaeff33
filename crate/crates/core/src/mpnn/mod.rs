//! Message-passing layers and the GNN, norm, activation stack.

mod layers;
mod stack;

pub use layers::{GinLayer, GnnLayer, GraphConvLayer, Linear, Mlp};
pub use stack::{
    mean_pool, sum_pool, Activation, LayerSpec, ModelOutput, ModelStack, NormChoice, NormStage, Pooling, StackLayer,
    StackSpec, RNF_PE_SLOT,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnKind {
    Graphconv,
    Gin,
}

impl GnnKind {
    pub fn name(self) -> &'static str {
        match self {
            GnnKind::Graphconv => "graphconv",
            GnnKind::Gin => "gin",
        }
    }
}
