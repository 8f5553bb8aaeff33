//! Weight settings under which a GraphConv stack with GRANOLA reduces to a
//! plain GraphConv stack on `X ⊕ R`.

use rand::Rng;

use super::{GranolaLayer, GranolaSpec, GranolaVariant};
use crate::error::{Error, Result};
use crate::mpnn::{GnnKind, GnnLayer, LayerSpec, Mlp, ModelStack, NormChoice, NormStage, Pooling, StackSpec};
use crate::mpnn::Activation;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// `[rows, cols]` matrix with `f(i, j)` entries.
fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized by construction")
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

fn set_checked(store: &mut ParamStore, id: crate::params::ParamId, value: Tensor) -> Result<()> {
    if store.get(id).shape() != value.shape() {
        return Err(Error::shape("default_to_rnf_weights", store.get(id).shape(), value.shape()));
    }
    store.set(id, value);
    Ok(())
}

fn zero_mlp(store: &mut ParamStore, mlp: &Mlp) {
    for l in &mlp.layers {
        let s = store.get(l.weight).shape().to_vec();
        store.set(l.weight, Tensor::zeros(s));
        if let Some(b) = l.bias {
            let s = store.get(b).shape().to_vec();
            store.set(b, Tensor::zeros(s));
        }
    }
}

/// Exact identity through a ReLU MLP: `z = relu(z) - relu(-z)`.
fn identity_mlp(store: &mut ParamStore, mlp: &Mlp) -> Result<()> {
    if mlp.layers.len() != 2 {
        return Err(Error::arg("identity f2 needs a two-layer MLP"));
    }
    let w = mlp.input_width();
    if mlp.output_width() != w {
        return Err(Error::shape("identity f2", &[w], &[mlp.output_width()]));
    }
    zero_mlp(store, mlp);
    set_checked(store, mlp.layers[0].weight, matrix(w, 2 * w, |i, j| {
        if j < w {
            delta(i, j)
        } else {
            -delta(i, j - w)
        }
    }))?;
    set_checked(store, mlp.layers[1].weight, matrix(2 * w, w, |i, j| {
        if i < w {
            delta(i, j)
        } else {
            -delta(i - w, j)
        }
    }))
}

fn granola_of(stack: &ModelStack, i: usize) -> Result<&GranolaLayer> {
    match &stack.layers[i].norm {
        NormStage::Granola(g) if g.spec.variant == GranolaVariant::Full => Ok(g),
        _ => Err(Error::arg(format!("layer {i} needs a full GRANOLA norm"))),
    }
}

fn single_graphconv(g: &GranolaLayer, i: usize) -> Result<&crate::mpnn::GraphConvLayer> {
    match g.norm_gnn.as_slice() {
        [GnnLayer::GraphConv(l)] => Ok(l),
        _ => Err(Error::arg(format!("layer {i}: normalization GNN must be one GraphConv layer"))),
    }
}

/// The architecture the construction applies to: `depth` GraphConv layers,
/// the first mapping `c -> 2c`, each followed by a full GRANOLA layer with
/// a single-GraphConv normalization GNN and ReLU.
pub fn prop2_stack(store: &mut ParamStore, rng: &mut impl Rng, c: usize, depth: usize) -> Result<ModelStack> {
    if depth == 0 {
        return Err(Error::arg("the construction needs at least one layer"));
    }
    let layers = (0..depth)
        .map(|i| {
            let mut g = GranolaSpec::new(GranolaVariant::Full);
            g.l_norm = 1;
            g.norm_gnn = GnnKind::Graphconv;
            g.mlp_hidden = Some(4 * c);
            g.resample_each_forward = false;
            if i == 0 {
                g.k = Some(c);
            }
            LayerSpec {
                gnn: GnnKind::Graphconv,
                width: 2 * c,
                norm: NormChoice::Granola(g),
                activation: Activation::Relu,
            }
        })
        .collect();
    StackSpec {
        input_width: c,
        layers,
        pooling: Pooling::None,
        readout: None,
        rnf_pe: 0,
    }
    .build(store, rng)
}

/// Overwrite the weights of `stack` so that after the first layer the
/// features are `ReLU(X ⊕ R)` and every later GRANOLA layer passes its
/// input through. GraphConv weights after the first layer are left as they
/// are.
pub fn default_to_rnf_weights(store: &mut ParamStore, stack: &ModelStack, c: usize) -> Result<()> {
    if stack.input_width != c || stack.rnf_pe != 0 {
        return Err(Error::shape("default_to_rnf_weights input", &[stack.input_width], &[c]));
    }
    if stack.layers.is_empty() {
        return Err(Error::arg("empty stack"));
    }
    let first = match &stack.layers[0].gnn {
        GnnLayer::GraphConv(l) => l,
        _ => return Err(Error::arg("layer 0 must be GraphConv")),
    };
    set_checked(store, first.w1, matrix(c, 2 * c, |i, j| delta(i, j % c)))?;
    set_checked(store, first.w2, Tensor::zeros(vec![c, 2 * c]))?;

    for i in 0..stack.layers.len() {
        let g = granola_of(stack, i)?;
        let conv = single_graphconv(g, i)?;
        let ch = g.channels;
        let w1 = if i == 0 {
            if g.k != c || ch != 2 * c {
                return Err(Error::shape("first GRANOLA layer", &[ch, g.k], &[2 * c, c]));
            }
            // rows: [X | X | R], columns: [X | R]
            matrix(3 * c, 2 * c, |r, col| {
                if r >= c && r < 2 * c && col < c {
                    delta(r - c, col)
                } else if r >= 2 * c && col >= c {
                    delta(r - 2 * c, col - c)
                } else {
                    0.0
                }
            })
        } else {
            matrix(ch + g.k, ch, |r, col| if r < ch { delta(r, col) } else { 0.0 })
        };
        set_checked(store, conv.w1, w1)?;
        let s = store.get(conv.w2).shape().to_vec();
        store.set(conv.w2, Tensor::zeros(s));
        zero_mlp(store, &g.f1);
        identity_mlp(store, &g.f2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::context::{ForwardCtx, RnfSource};
    use crate::graph::{batch_graphs, Graph};

    fn single_node(x: f64, r: f64) -> Vec<f64> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stack = prop2_stack(&mut store, &mut rng, 1, 1).unwrap();
        default_to_rnf_weights(&mut store, &stack, 1).unwrap();
        let g = Graph::with_features(1, vec![], Tensor::full(vec![1, 1], x)).unwrap();
        let batch = batch_graphs(&[g]).unwrap();
        let rnf = BTreeMap::from([(1, Tensor::full(vec![1, 1, 1], r))]);
        let tape = Tape::new();
        let ctx = ForwardCtx::inference(&tape, &store, RnfSource::Fixed(rnf));
        stack.forward(&ctx, &batch).unwrap().node.value().data().to_vec()
    }

    #[test]
    fn first_layer_outputs_features_and_noise() {
        assert_eq!(single_node(2.0, 0.5), vec![2.0, 0.5]);
        assert_eq!(single_node(-1.0, 0.5), vec![0.0, 0.5]);
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stack = prop2_stack(&mut store, &mut rng, 2, 2).unwrap();
        assert!(matches!(default_to_rnf_weights(&mut store, &stack, 3), Err(Error::Shape { .. })));
    }
}
