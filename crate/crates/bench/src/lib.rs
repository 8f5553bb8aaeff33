//! Benchmark fixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use granola_core::graph::erdos_renyi;
use granola_core::mpnn::{Activation, GnnKind, LayerSpec, NormChoice, Pooling};
use granola_core::{GraphBatch, ModelStack, ParamStore, Result, StackSpec};

/// A built model with its parameters and one input batch.
pub struct Fixture {
    pub stack: ModelStack,
    pub store: ParamStore,
    pub batch: GraphBatch,
}

/// Two GIN layers of width `width` with `norm` after each, on one
/// Erdos-Renyi graph of `n` nodes and expected degree 4.
pub fn gin_fixture(norm: NormChoice, n: usize, width: usize) -> Result<Fixture> {
    let layer = LayerSpec {
        gnn: GnnKind::Gin,
        width,
        norm,
        activation: Activation::Relu,
    };
    let spec = StackSpec {
        input_width: 1,
        layers: vec![layer.clone(), layer],
        pooling: Pooling::Sum,
        readout: None,
        rnf_pe: 0,
    };
    let mut store = ParamStore::new();
    let stack = spec.build(&mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let g = erdos_renyi(n, 4.0 / (n.max(2) - 1) as f64, n as u64)?;
    let batch = GraphBatch::new(&[g])?;
    Ok(Fixture { stack, store, batch })
}
