use rand::Rng;

use super::{check, map_real, normal, permute_all, permute_rows, randomize_params, random_graphs, rng_for, Check, PropsOptions};
use crate::autodiff::Tape;
use crate::context::{ForwardCtx, RnfSource};
use crate::error::Result;
use crate::graph::{batch_graphs, disjoint_union, path, star, Graph, GraphBatch};
use crate::mpnn::{GnnLayer, GraphConvLayer};
use crate::norm::{NormLayer, NormSpec, NormVariant};
use crate::params::ParamStore;
use crate::reference;
use crate::tensor::Tensor;

const FIDELITY_BATCHES: usize = 200;
const FIDELITY_TOL: f64 = 1e-10;

pub(crate) fn norm_output(layer: &NormLayer, store: &ParamStore, batch: &GraphBatch, h: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, RnfSource::Seeded { root: 0, step: 0 });
    let y = layer.forward(&ctx, batch, ctx.constant(h.clone()))?;
    Ok((*y.value()).clone())
}

fn random_spec(rng: &mut impl Rng, variant: NormVariant, eps: f64) -> NormSpec {
    let mut spec = NormSpec::new(variant).with_eps(eps);
    spec.affine = rng.random_bool(0.7);
    spec.s = rng.random_range(0.5..2.0);
    spec.p = rng.random_range(1.0..4.0);
    spec.lambda = rng.random_range(0.0..1.0);
    spec.clusters = rng.random_range(1..=4);
    spec.then_batchnorm = rng.random_bool(0.5);
    spec
}

fn fresh_layer(rng: &mut impl Rng, spec: NormSpec, c: usize) -> (NormLayer, ParamStore) {
    let mut store = ParamStore::new();
    let layer = NormLayer::new(&mut store, rng, spec, c, "norm");
    randomize_params(&mut store, rng);
    (layer, store)
}

/// Every variant against its loop-based recomputation on random masked
/// batches with random parameters and hyperparameters. A constant-feature
/// batch goes first so a zero epsilon is reported, not hidden.
pub fn norm_fidelity(opts: &PropsOptions) -> Check {
    check("norm-fidelity", || {
        let mut rng = rng_for(opts.seed, 1);
        let constant: Vec<Graph> = (0..2)
            .map(|_| Graph::with_features(3, vec![(0, 1), (1, 2)], Tensor::full(vec![3, 2], 0.5)))
            .collect::<Result<_>>()?;
        let constant = batch_graphs(&constant)?;
        let mut worst = 0.0f64;
        let mut worst_at = NormVariant::Identity;
        for variant in NormVariant::ALL {
            let (layer, store) = fresh_layer(&mut rng, NormSpec::new(variant).with_eps(opts.eps), 2);
            norm_output(&layer, &store, &constant, constant.features())?;
            for _ in 0..FIDELITY_BATCHES {
                let c = rng.random_range(1..=5);
                let batch = batch_graphs(&random_graphs(&mut rng, 4, 7, c)?)?;
                let spec = random_spec(&mut rng, variant, opts.eps);
                let (layer, store) = fresh_layer(&mut rng, spec, c);
                let got = norm_output(&layer, &store, &batch, batch.features())?;
                let want = reference::norm(&layer, &store, &batch, batch.features());
                let d = got.max_abs_diff(&want);
                if !(d <= worst) {
                    worst = d;
                    worst_at = variant;
                }
            }
        }
        Ok((
            worst < FIDELITY_TOL,
            format!(
                "{} variants x {FIDELITY_BATCHES} batches, max |diff| {worst:.2e} ({})",
                NormVariant::ALL.len(),
                worst_at.name()
            ),
        ))
    })
}

struct Tally {
    failures: Vec<String>,
    checks: usize,
}

impl Tally {
    fn new() -> Self {
        Self { failures: Vec::new(), checks: 0 }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failures.len() < 5 {
            self.failures.push(what());
        }
    }

    fn finish(self) -> (bool, String) {
        if self.failures.is_empty() {
            (true, format!("{} checks", self.checks))
        } else {
            (false, format!("{} of {} checks failed: {}", self.failures.len(), self.checks, self.failures.join("; ")))
        }
    }
}

/// Scale, shift, idempotence, post-condition, permutation and padding
/// properties of the standard variants.
pub fn norm_invariances(opts: &PropsOptions) -> Check {
    check("norm-invariances", || {
        let mut rng = rng_for(opts.seed, 2);
        let mut t = Tally::new();
        for _ in 0..20 {
            let c = rng.random_range(2..=5);
            let graphs = loop {
                let g = random_graphs(&mut rng, 4, 7, c)?;
                if !has_tight_group(&g) {
                    break g;
                }
            };
            let batch = batch_graphs(&graphs)?;
            let h = batch.features().clone();
            let a = rng.random_range(0.5..10.0);
            // Wide inputs keep every variance far above epsilon.
            let wide = h.scale(10.0);
            let shift: Vec<f64> = (0..c).map(|_| 3.0 * normal(&mut rng)).collect();
            let scalar = 3.0 * normal(&mut rng);

            let exact = |v: NormVariant| NormSpec::new(v).without_affine().with_eps(1e-8);
            for v in [
                NormVariant::Batchnorm,
                NormVariant::Instancenorm,
                NormVariant::LayernormNode,
                NormVariant::LayernormGraph,
            ] {
                let (layer, store) = fresh_layer(&mut rng, exact(v), c);
                let base = norm_output(&layer, &store, &batch, &wide)?;
                let scaled = norm_output(&layer, &store, &batch, &wide.scale(a))?;
                let d = base.max_abs_diff(&scaled);
                t.expect(d < 1e-6, || format!("{} scale {a:.2}: {d:.2e}", v.name()));
            }
            for v in [NormVariant::Batchnorm, NormVariant::Instancenorm] {
                let (layer, store) = fresh_layer(&mut rng, exact(v), c);
                let base = norm_output(&layer, &store, &batch, &h)?;
                let moved = norm_output(&layer, &store, &batch, &map_real(&batch, &h, |k, x| x + shift[k]))?;
                let d = base.max_abs_diff(&moved);
                t.expect(d < 1e-6, || format!("{} channel shift: {d:.2e}", v.name()));
            }
            {
                // Statistics pool over channels too, so only a uniform shift
                // cancels.
                let (layer, store) = fresh_layer(&mut rng, exact(NormVariant::LayernormGraph), c);
                let base = norm_output(&layer, &store, &batch, &h)?;
                let moved = norm_output(&layer, &store, &batch, &map_real(&batch, &h, |_, x| x + scalar))?;
                let d = base.max_abs_diff(&moved);
                t.expect(d < 1e-6, || format!("layernorm_graph shift: {d:.2e}"));
            }
            {
                let (layer, store) = fresh_layer(&mut rng, exact(NormVariant::LayernormNode), c);
                let once = norm_output(&layer, &store, &batch, &wide)?;
                let twice = norm_output(&layer, &store, &batch, &once)?;
                let d = once.max_abs_diff(&twice);
                t.expect(d < 1e-6, || format!("layernorm_node idempotence: {d:.2e}"));
            }
            {
                let mut spec = NormSpec::new(NormVariant::Pairnorm);
                spec.s = rng.random_range(0.5..3.0);
                let s = spec.s;
                let (layer, store) = fresh_layer(&mut rng, spec, c);
                let out = norm_output(&layer, &store, &batch, &h)?;
                for (b, &count) in batch.node_counts().iter().enumerate() {
                    let rows = &out.data()[b * batch.n_max() * c..(b * batch.n_max() + count) * c];
                    let msq = rows.iter().map(|v| v * v).sum::<f64>() / count as f64;
                    let centered_msq = {
                        let inp = &h.data()[b * batch.n_max() * c..(b * batch.n_max() + count) * c];
                        let mean: Vec<f64> =
                            (0..c).map(|k| inp.iter().skip(k).step_by(c).sum::<f64>() / count as f64).collect();
                        inp.iter().enumerate().map(|(i, x)| (x - mean[i % c]).powi(2)).sum::<f64>() / count as f64
                    };
                    // Constant graphs are clamped to zero output.
                    if centered_msq > 1e-5 {
                        t.expect((msq - s * s).abs() < 1e-9, || format!("pairnorm msq {msq} vs {}", s * s));
                    }
                }
            }
            let (perm_graphs, perms) = permute_all(&mut rng, &graphs)?;
            let perm_batch = batch_graphs(&perm_graphs)?;
            let padded = GraphBatch::with_padding(&graphs, batch.n_max() + 3)?;
            for v in NormVariant::ALL {
                let spec = random_spec(&mut rng, v, 1e-5);
                let (layer, store) = fresh_layer(&mut rng, spec, c);
                let base = norm_output(&layer, &store, &batch, &h)?;
                let perm_out = norm_output(&layer, &store, &perm_batch, perm_batch.features())?;
                let d = permute_rows(&base, &perms).max_abs_diff(&perm_out);
                t.expect(d < 1e-10, || format!("{} permutation: {d:.2e}", v.name()));
                let extra = norm_output(&layer, &store, &padded, padded.features())?;
                let d = unpad(&extra, batch.n_max()).max_abs_diff(&base);
                t.expect(d == 0.0, || format!("{} extra padding: {d:.2e}", v.name()));
            }
        }
        Ok(t.finish())
    })
}

/// True when a node's channels, or a channel over a graph with two or more
/// nodes, have variance below 1e-2. There the epsilon term is not
/// negligible and the scale and idempotence identities only hold loosely.
fn has_tight_group(graphs: &[Graph]) -> bool {
    fn var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    }
    graphs.iter().any(|g| {
        let f = g.features();
        let (n, c) = (f.shape()[0], f.shape()[1]);
        let rows = (0..n).any(|i| var(&f.data()[i * c..(i + 1) * c]) < 1e-2);
        let cols = n >= 2 && (0..c).any(|k| var(&(0..n).map(|i| f.at(&[i, k])).collect::<Vec<_>>()) < 1e-2);
        rows || cols
    })
}

/// Drop padding rows beyond `n_max`.
pub(crate) fn unpad(t: &Tensor, n_max: usize) -> Tensor {
    let (bsz, wide, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut data = Vec::with_capacity(bsz * n_max * c);
    for b in 0..bsz {
        data.extend_from_slice(&t.data()[b * wide * c..(b * wide + n_max) * c]);
    }
    Tensor::new(vec![bsz, n_max, c], data).expect("sized")
}

/// A GraphConv layer on all-ones features with `W1`, `W2` set explicitly.
pub(crate) fn degree_layer(store: &mut ParamStore, w1: Tensor, w2: Tensor) -> GraphConvLayer {
    let (c_in, c_out) = (w1.shape()[0], w1.shape()[1]);
    let mut rng = rng_for(0, 0);
    let layer = GraphConvLayer::new(store, &mut rng, c_in, c_out, "degree");
    store.set(layer.w1, w1);
    store.set(layer.w2, w2);
    layer
}

pub(crate) fn gnn_output(layer: &GnnLayer, store: &ParamStore, batch: &GraphBatch, h: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, RnfSource::Seeded { root: 0, step: 0 });
    Ok((*layer.forward(&ctx, batch, ctx.constant(h.clone()))?.value()).clone())
}

/// Nodes of `batch` whose ReLU output after `norm` is nonzero although
/// their degree is below the mean of their statistics group.
fn surviving_low_degree(
    store: &mut ParamStore,
    batch: &GraphBatch,
    degrees: &[Vec<usize>],
    variant: NormVariant,
    w2: f64,
) -> Result<usize> {
    let layer = GnnLayer::GraphConv(degree_layer(store, Tensor::from_rows(&[vec![0.3]])?, Tensor::from_rows(&[vec![w2]])?));
    let pre = gnn_output(&layer, store, batch, batch.features())?;
    let mut rng = rng_for(0, 0);
    let norm = NormLayer::new(store, &mut rng, NormSpec::new(variant).without_affine(), 1, "n");
    let out = norm_output(&norm, store, batch, &pre)?;
    let all: Vec<usize> = degrees.iter().flatten().copied().collect();
    let mean = all.iter().sum::<usize>() as f64 / all.len() as f64;
    let mut bad = 0;
    for (b, ds) in degrees.iter().enumerate() {
        for (n, &d) in ds.iter().enumerate() {
            let y = out.at(&[b, n, 0]).max(0.0);
            if (d as f64) < mean && y != 0.0 {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// The degree-erasure examples: BatchNorm over `{path(3), star(5)}`,
/// InstanceNorm over their union as one graph, and node-wise LayerNorm
/// equating degree `d` and `2d` when only neighbors are counted.
pub fn norm_failure_cases() -> Check {
    check("norm-failure-cases", || {
        let mut t = Tally::new();
        let parts = [path(3)?, star(5)?];
        let split = batch_graphs(&parts)?;
        let merged_graph = disjoint_union(&parts)?;
        let merged = batch_graphs(std::slice::from_ref(&merged_graph))?;
        let split_deg: Vec<Vec<usize>> = parts.iter().map(|g| g.degrees()).collect();
        let merged_deg = vec![merged_graph.degrees()];
        for w2 in [0.1, 0.7, 2.5] {
            let mut store = ParamStore::new();
            let bad = surviving_low_degree(&mut store, &split, &split_deg, NormVariant::Batchnorm, w2)?;
            t.expect(bad == 0, || format!("batchnorm w2={w2}: {bad} low-degree nodes survive"));
            let bad = surviving_low_degree(&mut store, &merged, &merged_deg, NormVariant::Instancenorm, w2)?;
            t.expect(bad == 0, || format!("instancenorm w2={w2}: {bad} low-degree nodes survive"));
        }
        // Node-wise LayerNorm: with W1 = 0 a node's features are its degree
        // times W2, and the degree cancels.
        let g = path(3)?;
        let deg = g.degrees();
        let (low, high) = (0, 1);
        let c = 3;
        let g = Graph::with_features(3, g.edges().to_vec(), Tensor::ones(vec![3, c]))?;
        let batch = batch_graphs(&[g])?;
        let mut rng = rng_for(0, 3);
        let mut store = ParamStore::new();
        let w2 = super::normal_tensor(&mut rng, vec![c, c]);
        let layer = GnnLayer::GraphConv(degree_layer(&mut store, Tensor::zeros(vec![c, c]), w2));
        let pre = gnn_output(&layer, &store, &batch, batch.features())?;
        let ln = NormLayer::new(&mut store, &mut rng, NormSpec::new(NormVariant::LayernormNode).without_affine().with_eps(1e-12), c, "ln");
        let out = norm_output(&ln, &store, &batch, &pre)?;
        let d = (0..c).map(|k| (out.at(&[0, low, k]) - out.at(&[0, high, k])).abs()).fold(0.0, f64::max);
        t.expect(d < 1e-6, || format!("layernorm_node degree {} vs {}: {d:.2e}", deg[low], deg[high]));
        Ok(t.finish())
    })
}
