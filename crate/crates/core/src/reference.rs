//! Loop-based recomputations of every layer, written directly from the
//! per-element formulas over nested vectors and the dense adjacency. They
//! share nothing with the tape kernels and serve as oracles.

use crate::granola::{GranolaLayer, GranolaVariant, StatsMode};
use crate::graph::GraphBatch;
use crate::mpnn::{GinLayer, GnnLayer, GraphConvLayer, Linear, Mlp, ModelStack, NormStage};
use crate::norm::{NormLayer, NormVariant};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `[b][n][c]` values.
pub type Cube = Vec<Vec<Vec<f64>>>;

pub fn to_cube(t: &Tensor) -> Cube {
    let s = t.shape();
    (0..s[0])
        .map(|b| (0..s[1]).map(|n| (0..s[2]).map(|c| t.at(&[b, n, c])).collect()).collect())
        .collect()
}

pub fn from_cube(x: &Cube) -> Tensor {
    let (bsz, n) = (x.len(), x[0].len());
    let c = x[0][0].len();
    let data = x.iter().flatten().flatten().copied().collect();
    Tensor::new(vec![bsz, n, c], data).expect("rectangular cube")
}

fn shape(x: &Cube) -> (usize, usize, usize) {
    (x.len(), x[0].len(), x[0][0].len())
}

fn zeros(bsz: usize, n: usize, c: usize) -> Cube {
    vec![vec![vec![0.0; c]; n]; bsz]
}

fn vec_of(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.get(id).data().to_vec()
}

fn mat_of(store: &ParamStore, id: ParamId) -> Vec<Vec<f64>> {
    let t = store.get(id);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| (0..c).map(|j| t.at(&[i, j])).collect()).collect()
}

fn real(batch: &GraphBatch, b: usize, n: usize) -> bool {
    n < batch.node_counts()[b]
}

/// Mean and biased variance of a list of values, two passes.
fn moments(vals: &[f64]) -> (f64, f64) {
    let k = vals.len() as f64;
    let mu = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / k;
    (mu, var)
}

#[derive(Clone, Copy)]
enum Group {
    Batch,
    Instance,
    Node,
    Graph,
}

/// Statistics of the group containing element `(b, n, c)`, collected by
/// scanning every real element and testing membership.
fn group_moments(x: &Cube, batch: &GraphBatch, g: Group, b: usize, n: usize, c: usize) -> (f64, f64) {
    let (bsz, nn, cc) = shape(x);
    let mut vals = Vec::new();
    for b2 in 0..bsz {
        for n2 in 0..nn {
            if !real(batch, b2, n2) {
                continue;
            }
            for c2 in 0..cc {
                let member = match g {
                    Group::Batch => c2 == c,
                    Group::Instance => b2 == b && c2 == c,
                    Group::Node => b2 == b && n2 == n,
                    Group::Graph => b2 == b,
                };
                if member {
                    vals.push(x[b2][n2][c2]);
                }
            }
        }
    }
    moments(&vals)
}

fn standardize_group(x: &Cube, batch: &GraphBatch, g: Group, eps: f64, affine: Option<(&[f64], &[f64])>) -> Cube {
    let (bsz, nn, cc) = shape(x);
    let mut out = zeros(bsz, nn, cc);
    for b in 0..bsz {
        for n in 0..nn {
            if !real(batch, b, n) {
                continue;
            }
            for c in 0..cc {
                let (mu, var) = group_moments(x, batch, g, b, n, c);
                let z = (x[b][n][c] - mu) / (var + eps).sqrt();
                out[b][n][c] = match affine {
                    Some((gamma, beta)) => gamma[c] * z + beta[c],
                    None => z,
                };
            }
        }
    }
    out
}

fn adjacency_norm(x: &Cube, batch: &GraphBatch, eps: f64, affine: Option<(&[f64], &[f64])>) -> Cube {
    let adj = batch.adjacency();
    let (bsz, nn, cc) = shape(x);
    let mut out = zeros(bsz, nn, cc);
    for b in 0..bsz {
        for n in 0..nn {
            if !real(batch, b, n) {
                continue;
            }
            let nbrs: Vec<usize> = (0..nn).filter(|&u| adj.at(&[b, n, u]) != 0.0).collect();
            let group: Vec<usize> = if nbrs.is_empty() { vec![n] } else { nbrs };
            let vals: Vec<f64> = group.iter().flat_map(|&u| x[b][u].iter().copied()).collect();
            let (mu, var) = moments(&vals);
            for c in 0..cc {
                let z = (x[b][n][c] - mu) / (var + eps).sqrt();
                out[b][n][c] = match affine {
                    Some((gamma, beta)) => gamma[c] * z + beta[c],
                    None => z,
                };
            }
        }
    }
    out
}

/// Any normalization layer, recomputed from its per-element definition.
pub fn norm(layer: &NormLayer, store: &ParamStore, batch: &GraphBatch, h: &Tensor) -> Tensor {
    let x = to_cube(h);
    let (bsz, nn, cc) = shape(&x);
    let spec = &layer.spec;
    let eps = spec.eps;
    let aff_vals = layer.affine.map(|a| (vec_of(store, a.gamma), vec_of(store, a.beta)));
    let aff = aff_vals.as_ref().map(|(g, b)| (g.as_slice(), b.as_slice()));
    let mut out = match spec.variant {
        NormVariant::Identity => x.clone(),
        NormVariant::Batchnorm => standardize_group(&x, batch, Group::Batch, eps, aff),
        NormVariant::Instancenorm => standardize_group(&x, batch, Group::Instance, eps, aff),
        NormVariant::LayernormNode => standardize_group(&x, batch, Group::Node, eps, aff),
        NormVariant::LayernormGraph => standardize_group(&x, batch, Group::Graph, eps, aff),
        NormVariant::Pairnorm => {
            let mut out = zeros(bsz, nn, cc);
            for b in 0..bsz {
                let count = batch.node_counts()[b];
                let mut centered = zeros(1, nn, cc).remove(0);
                for n in 0..count {
                    for c in 0..cc {
                        let (mu, _) = group_moments(&x, batch, Group::Instance, b, n, c);
                        centered[n][c] = x[b][n][c] - mu;
                    }
                }
                let msq = (0..count)
                    .map(|n| centered[n].iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    / count as f64;
                let denom = msq.max(eps).sqrt();
                for n in 0..count {
                    for c in 0..cc {
                        out[b][n][c] = spec.s * centered[n][c] / denom;
                    }
                }
            }
            out
        }
        NormVariant::MeanSubtraction => map_real(&x, batch, |b, n, c, v| {
            v - group_moments(&x, batch, Group::Instance, b, n, c).0
        }),
        NormVariant::Nodenorm => map_real(&x, batch, |b, n, c, v| {
            let (_, var) = group_moments(&x, batch, Group::Node, b, n, c);
            v / (var + eps).sqrt().powf(1.0 / spec.p)
        }),
        NormVariant::Graphnorm => {
            let alpha = vec_of(store, layer.alpha.expect("graphnorm alpha"));
            map_real(&x, batch, |b, n, c, v| {
                let (mu, var) = group_moments(&x, batch, Group::Instance, b, n, c);
                let z = (v - alpha[c] * mu) / (var + eps).sqrt();
                match aff {
                    Some((g, be)) => g[c] * z + be[c],
                    None => z,
                }
            })
        }
        NormVariant::Graphsizenorm => {
            let scaled = map_real(&x, batch, |b, _, _, v| v / (batch.node_counts()[b] as f64).sqrt());
            if spec.then_batchnorm {
                standardize_group(&scaled, batch, Group::Batch, eps, aff)
            } else {
                scaled
            }
        }
        NormVariant::Diffgroupnorm => {
            let w = mat_of(store, layer.cluster_weight.expect("cluster weights"));
            let d = spec.clusters;
            let mut s = zeros(bsz, nn, d);
            for b in 0..bsz {
                for n in 0..nn {
                    let logits: Vec<f64> = (0..d)
                        .map(|i| (0..cc).map(|c| x[b][n][c] * w[c][i]).sum())
                        .collect();
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let total: f64 = e.iter().sum();
                    for i in 0..d {
                        s[b][n][i] = e[i] / total;
                    }
                }
            }
            let mut out = x.clone();
            for i in 0..d {
                let weighted = map_real(&x, batch, |b, n, _, v| s[b][n][i] * v);
                let cluster = layer
                    .cluster_affine
                    .get(i)
                    .map(|a| (vec_of(store, a.gamma), vec_of(store, a.beta)));
                let bn = standardize_group(
                    &weighted,
                    batch,
                    Group::Batch,
                    eps,
                    cluster.as_ref().map(|(g, be)| (g.as_slice(), be.as_slice())),
                );
                for b in 0..bsz {
                    for n in 0..nn {
                        for c in 0..cc {
                            out[b][n][c] += spec.lambda * bn[b][n][c];
                        }
                    }
                }
            }
            out
        }
        NormVariant::Unitynorm => {
            let lam = vec_of(store, layer.unity_weights.expect("unity weights"));
            let parts: Vec<(Vec<f64>, Vec<f64>)> = layer
                .unity_affine
                .iter()
                .map(|a| (vec_of(store, a.gamma), vec_of(store, a.beta)))
                .collect();
            let a = |i: usize| parts.get(i).map(|(g, b)| (g.as_slice(), b.as_slice()));
            let comps = [
                standardize_group(&x, batch, Group::Node, eps, a(0)),
                adjacency_norm(&x, batch, eps, a(1)),
                standardize_group(&x, batch, Group::Instance, eps, a(2)),
                standardize_group(&x, batch, Group::Batch, eps, a(3)),
            ];
            let mut out = zeros(bsz, nn, cc);
            for (i, comp) in comps.iter().enumerate() {
                for b in 0..bsz {
                    for n in 0..nn {
                        for c in 0..cc {
                            out[b][n][c] += lam[i] * comp[b][n][c];
                        }
                    }
                }
            }
            out
        }
    };
    zero_padding(&mut out, batch);
    from_cube(&out)
}

fn map_real(x: &Cube, batch: &GraphBatch, f: impl Fn(usize, usize, usize, f64) -> f64) -> Cube {
    let (bsz, nn, cc) = shape(x);
    let mut out = zeros(bsz, nn, cc);
    for b in 0..bsz {
        for n in 0..nn {
            if real(batch, b, n) {
                for c in 0..cc {
                    out[b][n][c] = f(b, n, c, x[b][n][c]);
                }
            }
        }
    }
    out
}

fn zero_padding(x: &mut Cube, batch: &GraphBatch) {
    for (b, graph) in x.iter_mut().enumerate() {
        for (n, row) in graph.iter_mut().enumerate() {
            if !real(batch, b, n) {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

fn row_matmul(row: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let c_out = w[0].len();
    (0..c_out).map(|j| row.iter().zip(w).map(|(x, wr)| x * wr[j]).sum()).collect()
}

fn linear_row(store: &ParamStore, l: &Linear, row: &[f64]) -> Vec<f64> {
    let mut y = row_matmul(row, &mat_of(store, l.weight));
    if let Some(b) = l.bias {
        for (v, bias) in y.iter_mut().zip(vec_of(store, b)) {
            *v += bias;
        }
    }
    y
}

/// MLP on one feature row.
pub fn mlp_row(store: &ParamStore, mlp: &Mlp, row: &[f64]) -> Vec<f64> {
    let mut h = row.to_vec();
    for (i, l) in mlp.layers.iter().enumerate() {
        if i > 0 {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = linear_row(store, l, &h);
    }
    h
}

fn neighbor_sum(adj: &Tensor, x: &Cube, b: usize, n: usize) -> Vec<f64> {
    let (_, nn, cc) = shape(x);
    let mut s = vec![0.0; cc];
    for u in 0..nn {
        if adj.at(&[b, n, u]) != 0.0 {
            for c in 0..cc {
                s[c] += x[b][u][c];
            }
        }
    }
    s
}

fn per_node(batch: &GraphBatch, x: &Cube, c_out: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Tensor {
    let (bsz, nn, _) = shape(x);
    let mut out = zeros(bsz, nn, c_out);
    for b in 0..bsz {
        for n in 0..nn {
            if real(batch, b, n) {
                out[b][n] = f(b, n);
            }
        }
    }
    from_cube(&out)
}

pub fn graphconv(store: &ParamStore, layer: &GraphConvLayer, batch: &GraphBatch, h: &Tensor) -> Tensor {
    let x = to_cube(h);
    let adj = batch.adjacency();
    let (w1, w2) = (mat_of(store, layer.w1), mat_of(store, layer.w2));
    per_node(batch, &x, layer.c_out, |b, n| {
        let own = row_matmul(&x[b][n], &w1);
        let nbr = row_matmul(&neighbor_sum(&adj, &x, b, n), &w2);
        own.iter().zip(nbr).map(|(a, c)| a + c).collect()
    })
}

pub fn gin(store: &ParamStore, layer: &GinLayer, batch: &GraphBatch, h: &Tensor) -> Tensor {
    let x = to_cube(h);
    let adj = batch.adjacency();
    per_node(batch, &x, layer.c_out(), |b, n| {
        let s = neighbor_sum(&adj, &x, b, n);
        let agg: Vec<f64> = x[b][n].iter().zip(s).map(|(v, s)| (1.0 + layer.eps) * v + s).collect();
        mlp_row(store, &layer.mlp, &agg)
    })
}

pub fn gnn(store: &ParamStore, layer: &GnnLayer, batch: &GraphBatch, h: &Tensor) -> Tensor {
    match layer {
        GnnLayer::GraphConv(l) => graphconv(store, l, batch, h),
        GnnLayer::Gin(l) => gin(store, l, batch, h),
    }
}

/// Masked per-graph sum, `[B, C]`.
pub fn sum_pool(batch: &GraphBatch, h: &Tensor) -> Tensor {
    let x = to_cube(h);
    let (bsz, nn, cc) = shape(&x);
    let mut data = vec![0.0; bsz * cc];
    for b in 0..bsz {
        for n in 0..nn {
            if real(batch, b, n) {
                for c in 0..cc {
                    data[b * cc + c] += x[b][n][c];
                }
            }
        }
    }
    Tensor::new(vec![bsz, cc], data).expect("sized")
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let (x, y) = (to_cube(a), to_cube(b));
    let out: Cube = x
        .iter()
        .zip(&y)
        .map(|(gx, gy)| gx.iter().zip(gy).map(|(rx, ry)| rx.iter().chain(ry).copied().collect()).collect())
        .collect();
    from_cube(&out)
}

fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// A GRANOLA layer with the random features `r` given explicitly.
pub fn granola(store: &ParamStore, layer: &GranolaLayer, batch: &GraphBatch, h: &Tensor, r: Option<&Tensor>) -> Tensor {
    let spec = &layer.spec;
    let z = match spec.variant {
        GranolaVariant::RnfNorm => r.expect("rnf_norm needs random features").clone(),
        v => {
            let mut z = match v {
                GranolaVariant::NoRnf => h.clone(),
                _ => concat(h, r.expect("random features")),
            };
            for (i, l) in layer.norm_gnn.iter().enumerate() {
                if i > 0 {
                    z = relu(&z);
                }
                z = gnn(store, l, batch, &z);
            }
            z
        }
    };
    let zc = to_cube(&z);
    let x = to_cube(h);
    let (bsz, nn, cc) = shape(&x);
    let group = match spec.stats_mode {
        StatsMode::LayernormNode => Group::Node,
        StatsMode::Batchnorm => Group::Batch,
    };
    let mut out = zeros(bsz, nn, cc);
    for b in 0..bsz {
        for n in 0..nn {
            if !real(batch, b, n) {
                continue;
            }
            let (gamma, beta): (Vec<f64>, Vec<f64>) = if spec.variant == GranolaVariant::Ms {
                let (m, v) = moments(&zc[b][n]);
                if spec.ms_swap {
                    (vec![(v + spec.eps).sqrt(); cc], vec![m; cc])
                } else {
                    (vec![m; cc], vec![v; cc])
                }
            } else {
                (mlp_row(store, &layer.f1, &zc[b][n]), mlp_row(store, &layer.f2, &zc[b][n]))
            };
            for c in 0..cc {
                out[b][n][c] = if spec.gamma_zero {
                    beta[c]
                } else {
                    let (mu, var) = group_moments(&x, batch, group, b, n, c);
                    gamma[c] * (x[b][n][c] - mu) / (var + spec.eps).sqrt() + beta[c]
                };
            }
        }
    }
    from_cube(&out)
}

/// Node outputs of `stack` recomputed layer by layer. `rnf` supplies the
/// random features by slot.
pub fn stack_forward(
    store: &ParamStore,
    stack: &ModelStack,
    batch: &GraphBatch,
    rnf: &std::collections::BTreeMap<usize, Tensor>,
) -> Tensor {
    let mut h = batch.features().clone();
    if stack.rnf_pe > 0 {
        h = concat(&h, &rnf[&crate::mpnn::RNF_PE_SLOT]);
    }
    for layer in &stack.layers {
        let pre = gnn(store, &layer.gnn, batch, &h);
        let normed = match &layer.norm {
            NormStage::Zoo(n) => norm(n, store, batch, &pre),
            NormStage::Granola(g) => granola(store, g, batch, &pre, rnf.get(&g.slot)),
        };
        h = match layer.activation {
            crate::mpnn::Activation::Relu => relu(&normed),
            crate::mpnn::Activation::Identity => normed,
        };
    }
    h
}

/// MPNN + RNF: `ReLU(X ⊕ R)` followed by `ReLU(GraphConv(H))` with the
/// GraphConv weights of layers `1..` of `stack`.
pub fn mpnn_rnf(store: &ParamStore, stack: &ModelStack, batch: &GraphBatch, r: &Tensor) -> Tensor {
    let mut h = relu(&concat(batch.features(), r));
    for layer in &stack.layers[1..] {
        match &layer.gnn {
            GnnLayer::GraphConv(l) => h = relu(&graphconv(store, l, batch, &h)),
            GnnLayer::Gin(l) => h = relu(&gin(store, l, batch, &h)),
        }
    }
    h
}
