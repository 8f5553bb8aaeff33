use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::norms::{gnn_output, unpad};
use super::{
    check, permute_all, permute_rows, random_graph, random_graphs, randomize_params, rng_for, Check,
    PropsOptions,
};
use crate::autodiff::Tape;
use crate::context::{sample_rnf, stream_seed, ForwardCtx, RnfSource};
use crate::error::Result;
use crate::granola::{default_to_rnf_weights, prop2_stack, GranolaLayer, GranolaSpec, GranolaVariant, StatsMode};
use crate::graph::{batch_graphs, GraphBatch};
use crate::mpnn::{
    Activation, GinLayer, GnnKind, GnnLayer, GraphConvLayer, LayerSpec, NormChoice, Pooling, StackSpec,
};
use crate::norm::{NormSpec, NormVariant};
use crate::params::ParamStore;
use crate::reference;
use crate::tensor::Tensor;
use crate::train::{benchmark, probe_kink_margin, run_grad_suite};

struct Tally {
    failures: Vec<String>,
    checks: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            checks: 0,
            worst: 0.0,
        }
    }

    /// Record `diff` against `tol`; `tol = 0` demands bit equality.
    fn within(&mut self, diff: f64, tol: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        self.worst = self.worst.max(diff);
        let ok = if tol == 0.0 { diff == 0.0 } else { diff < tol };
        if !ok && self.failures.len() < 5 {
            self.failures.push(format!("{}: {diff:.2e}", what()));
        }
    }

    fn finish(self) -> (bool, String) {
        if self.failures.is_empty() {
            (true, format!("{} checks, max |diff| {:.2e}", self.checks, self.worst))
        } else {
            (false, format!("{} of {} failed: {}", self.failures.len(), self.checks, self.failures.join("; ")))
        }
    }
}

fn granola_output(layer: &GranolaLayer, store: &ParamStore, batch: &GraphBatch, h: &Tensor, rnf: RnfSource) -> Result<Tensor> {
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, rnf);
    Ok((*layer.forward(&ctx, batch, ctx.constant(h.clone()))?.value()).clone())
}

/// The random features one forward pass of `layer` consumed.
fn drawn(layer: &GranolaLayer, store: &ParamStore, batch: &GraphBatch, rnf: RnfSource) -> Result<Tensor> {
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, rnf);
    layer.forward(&ctx, batch, ctx.constant(batch.features().clone()))?;
    Ok(ctx.drawn_rnf().remove(&layer.slot).unwrap_or_else(|| Tensor::zeros(vec![0])))
}

fn fixed(slot: usize, r: Tensor) -> RnfSource {
    RnfSource::Fixed(BTreeMap::from([(slot, r)]))
}

fn random_gnn(rng: &mut impl Rng, store: &mut ParamStore, kind: GnnKind, c_in: usize, c_out: usize) -> GnnLayer {
    let layer = match kind {
        GnnKind::Graphconv => GnnLayer::GraphConv(GraphConvLayer::new(store, rng, c_in, c_out, "gnn")),
        GnnKind::Gin => GnnLayer::Gin(GinLayer::new(store, rng, c_in, c_out, "gnn")),
    };
    randomize_params(store, rng);
    layer
}

/// GraphConv and GIN against their loop oracles, plus permutation
/// equivariance, invariance of sum pooling and padding isolation.
pub fn gnn_oracles(opts: &PropsOptions) -> Check {
    check("gnn-oracles", || {
        let mut rng = rng_for(opts.seed, 10);
        let mut t = Tally::new();
        for _ in 0..50 {
            let c_in = rng.random_range(1..=5);
            let c_out = rng.random_range(1..=5);
            let graphs = random_graphs(&mut rng, 4, 7, c_in)?;
            let batch = batch_graphs(&graphs)?;
            let (perm_graphs, perms) = permute_all(&mut rng, &graphs)?;
            let perm_batch = batch_graphs(&perm_graphs)?;
            let padded = GraphBatch::with_padding(&graphs, batch.n_max() + 2)?;
            for kind in [GnnKind::Graphconv, GnnKind::Gin] {
                let mut store = ParamStore::new();
                let layer = random_gnn(&mut rng, &mut store, kind, c_in, c_out);
                let got = gnn_output(&layer, &store, &batch, batch.features())?;
                let want = reference::gnn(&store, &layer, &batch, batch.features());
                t.within(got.max_abs_diff(&want), 1e-10, || format!("{} oracle", kind.name()));
                let perm = gnn_output(&layer, &store, &perm_batch, perm_batch.features())?;
                t.within(permute_rows(&got, &perms).max_abs_diff(&perm), 1e-12, || {
                    format!("{} permutation", kind.name())
                });
                let pooled = reference::sum_pool(&batch, &got);
                let pooled_perm = reference::sum_pool(&perm_batch, &perm);
                t.within(pooled.max_abs_diff(&pooled_perm), 1e-12, || "sum pool permutation".into());
                let wide = gnn_output(&layer, &store, &padded, padded.features())?;
                t.within(unpad(&wide, batch.n_max()).max_abs_diff(&got), 0.0, || {
                    format!("{} extra padding", kind.name())
                });
            }
        }
        Ok(t.finish())
    })
}

/// The GRANOLA configurations exercised by the oracle and gradient checks.
fn granola_configs() -> Vec<(&'static str, GranolaSpec)> {
    let base = |v: GranolaVariant| GranolaSpec::new(v);
    let mut out = vec![
        ("full", base(GranolaVariant::Full)),
        ("no_rnf", base(GranolaVariant::NoRnf)),
        ("ms", base(GranolaVariant::Ms)),
        ("rnf_norm", base(GranolaVariant::RnfNorm)),
    ];
    let mut s = base(GranolaVariant::Ms);
    s.ms_swap = true;
    out.push(("ms_swap", s));
    let mut s = base(GranolaVariant::Full);
    s.gamma_zero = true;
    out.push(("beta_only", s));
    let mut s = base(GranolaVariant::Full);
    s.stats_mode = StatsMode::Batchnorm;
    s.norm_gnn = GnnKind::Graphconv;
    s.l_norm = 3;
    s.k = Some(2);
    s.mlp_hidden = Some(6);
    out.push(("full_bn_graphconv", s));
    out
}

fn rnf_width(layer: &GranolaLayer) -> Option<usize> {
    (layer.spec.variant != GranolaVariant::NoRnf).then_some(layer.k)
}

/// Each GRANOLA configuration against the loop oracle with pinned random
/// features.
pub fn granola_oracle(opts: &PropsOptions) -> Check {
    check("granola-oracle", || {
        let mut rng = rng_for(opts.seed, 11);
        let mut t = Tally::new();
        for (name, spec) in granola_configs() {
            for _ in 0..25 {
                let c = rng.random_range(1..=5);
                let batch = batch_graphs(&random_graphs(&mut rng, 4, 7, c)?)?;
                let mut store = ParamStore::new();
                let layer = GranolaLayer::new(&mut store, &mut rng, spec.clone(), c, 1, "g");
                randomize_params(&mut store, &mut rng);
                let r = rnf_width(&layer).map(|k| sample_rnf(&batch, k, rng.random()));
                let source = fixed(1, r.clone().unwrap_or_else(|| Tensor::zeros(vec![0])));
                let got = granola_output(&layer, &store, &batch, batch.features(), source)?;
                let want = reference::granola(&store, &layer, &batch, batch.features(), r.as_ref());
                t.within(got.max_abs_diff(&want), 1e-10, || name.to_string());
            }
        }
        Ok(t.finish())
    })
}

/// Equivariance with matched random features, seeded determinism and the
/// resampling switch.
pub fn granola_invariances(opts: &PropsOptions) -> Check {
    check("granola-invariances", || {
        let mut rng = rng_for(opts.seed, 12);
        let mut t = Tally::new();
        for (name, spec) in granola_configs() {
            for _ in 0..10 {
                let c = rng.random_range(1..=4);
                let graphs = random_graphs(&mut rng, 3, 7, c)?;
                let batch = batch_graphs(&graphs)?;
                let (perm_graphs, perms) = permute_all(&mut rng, &graphs)?;
                let perm_batch = batch_graphs(&perm_graphs)?;
                let mut store = ParamStore::new();
                let layer = GranolaLayer::new(&mut store, &mut rng, spec.clone(), c, 1, "g");
                randomize_params(&mut store, &mut rng);
                let k = rnf_width(&layer).unwrap_or(1);
                let r = sample_rnf(&batch, k, rng.random());
                let base = granola_output(&layer, &store, &batch, batch.features(), fixed(1, r.clone()))?;
                let moved = granola_output(
                    &layer,
                    &store,
                    &perm_batch,
                    perm_batch.features(),
                    fixed(1, permute_rows(&r, &perms)),
                )?;
                t.within(permute_rows(&base, &perms).max_abs_diff(&moved), 1e-10, || {
                    format!("{name} permutation")
                });

                let seeded = |step| RnfSource::Seeded { root: 7, step };
                let a = granola_output(&layer, &store, &batch, batch.features(), seeded(3))?;
                let b = granola_output(&layer, &store, &batch, batch.features(), seeded(3))?;
                t.within(a.max_abs_diff(&b), 0.0, || format!("{name} determinism"));
                if layer.spec.variant != GranolaVariant::NoRnf {
                    let r3 = drawn(&layer, &store, &batch, seeded(3))?;
                    let r4 = drawn(&layer, &store, &batch, seeded(4))?;
                    t.checks += 1;
                    if r3.max_abs_diff(&r4) == 0.0 && t.failures.len() < 5 {
                        t.failures.push(format!("{name}: consecutive steps drew equal features"));
                    }
                    let mut frozen = layer.clone();
                    frozen.spec.resample_each_forward = false;
                    let x = granola_output(&frozen, &store, &batch, batch.features(), seeded(3))?;
                    let y = granola_output(&frozen, &store, &batch, batch.features(), seeded(4))?;
                    t.within(x.max_abs_diff(&y), 0.0, || format!("{name} without resampling"));
                } else {
                    let c2 = granola_output(&layer, &store, &batch, batch.features(), seeded(4))?;
                    t.within(a.max_abs_diff(&c2), 0.0, || format!("{name} ignores the stream"));
                }
            }
        }
        Ok(t.finish())
    })
}

/// The weight setting under which GRANOLA layers reproduce an MPNN on
/// random-feature-augmented inputs, checked on Erdos-Renyi graphs.
pub fn rnf_default_construction(opts: &PropsOptions) -> Check {
    const GRAPHS: usize = 100;
    const PER_BATCH: usize = 10;
    check("rnf-default-construction", || {
        let mut rng = rng_for(opts.seed, 13);
        let mut t = Tally::new();
        for _ in 0..GRAPHS / PER_BATCH {
            let c = rng.random_range(1..=3);
            let depth = rng.random_range(1..=3);
            let graphs = (0..PER_BATCH)
                .map(|_| {
                    let n = rng.random_range(2..=12);
                    let p = rng.random_range(0.1..0.6);
                    random_graph(&mut rng, n, p, c)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = batch_graphs(&graphs)?;
            let mut store = ParamStore::new();
            let stack = prop2_stack(&mut store, &mut rng, c, depth)?;
            default_to_rnf_weights(&mut store, &stack, c)?;
            let mut rnf = BTreeMap::new();
            for (i, layer) in stack.layers.iter().enumerate() {
                if let crate::mpnn::NormStage::Granola(g) = &layer.norm {
                    rnf.insert(i + 1, sample_rnf(&batch, g.k, rng.random()));
                }
            }
            let tape = Tape::new();
            let ctx = ForwardCtx::inference(&tape, &store, RnfSource::Fixed(rnf.clone()));
            let got = (*stack.forward(&ctx, &batch)?.node.value()).clone();
            let want = reference::mpnn_rnf(&store, &stack, &batch, &rnf[&1]);
            t.within(got.max_abs_diff(&want), 1e-9, || format!("c={c} depth={depth}"));
        }
        let (ok, detail) = t.finish();
        Ok((ok, format!("{GRAPHS} graphs, {detail}")))
    })
}

fn single_layer_stack(c: usize, gnn: GnnKind, norm: NormChoice, activation: Activation) -> StackSpec {
    StackSpec {
        input_width: c,
        layers: vec![LayerSpec {
            gnn,
            width: c,
            norm,
            activation,
        }],
        pooling: Pooling::None,
        readout: None,
        rnf_pe: 0,
    }
}

/// Stacks whose every trainable parameter is checked against central
/// differences.
fn gradient_stacks() -> Vec<(String, StackSpec)> {
    let mut out = Vec::new();
    for gnn in [GnnKind::Graphconv, GnnKind::Gin] {
        out.push((
            format!("{} + identity", gnn.name()),
            single_layer_stack(3, gnn, NormChoice::zoo(NormVariant::Identity), Activation::Relu),
        ));
    }
    for v in NormVariant::ALL {
        if v == NormVariant::Identity {
            continue;
        }
        out.push((
            v.name().to_string(),
            single_layer_stack(3, GnnKind::Graphconv, NormChoice::Zoo(NormSpec::new(v)), Activation::Identity),
        ));
    }
    for (name, spec) in granola_configs() {
        out.push((
            format!("granola {name}"),
            single_layer_stack(3, GnnKind::Graphconv, NormChoice::Granola(spec), Activation::Identity),
        ));
    }
    let layer = |gnn, width| LayerSpec {
        gnn,
        width,
        norm: NormChoice::granola(GranolaVariant::Full),
        activation: Activation::Relu,
    };
    out.push((
        "gin + granola stack".into(),
        StackSpec {
            input_width: 2,
            layers: vec![layer(GnnKind::Gin, 4), layer(GnnKind::Gin, 3)],
            pooling: Pooling::Sum,
            readout: Some(vec![3, 1]),
            rnf_pe: 0,
        },
    ));
    out
}

/// Central-difference gradient checks of every trainable layer with the
/// random features pinned. Draws whose ReLU inputs come within 1e-2 of a
/// kink are redrawn.
pub fn gradient_correctness(opts: &PropsOptions) -> Check {
    const TOL: f64 = 1e-4;
    const KINK: f64 = 1e-2;
    check("gradient-correctness", || {
        let mut worst: (f64, String) = (0.0, String::new());
        let mut failures = Vec::new();
        for (k, (name, spec)) in gradient_stacks().into_iter().enumerate() {
            let mut attempt = 0u64;
            let entries = loop {
                let seed = stream_seed(opts.seed, 20 + k, attempt);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                let stack = spec.build(&mut store, &mut rng)?;
                randomize_params(&mut store, &mut rng);
                let n = if name.ends_with("stack") { 5 } else { rng.random_range(4..=6) };
                let m = rng.random_range(3..=6);
                let graphs = vec![
                    random_graph(&mut rng, n, 0.5, spec.input_width)?,
                    random_graph(&mut rng, m, 0.5, spec.input_width)?,
                ];
                let batch = batch_graphs(&graphs)?;
                let rnf = RnfSource::Seeded { root: seed, step: 0 };
                let margin = probe_kink_margin(&stack, &store, &batch, &rnf)?;
                if margin < KINK && attempt < 20 {
                    attempt += 1;
                    continue;
                }
                break run_grad_suite(&stack, &store, &batch, seed)?;
            };
            for e in entries {
                if e.worst > worst.0 {
                    worst = (e.worst, format!("{name}/{}", e.group));
                }
                if !(e.worst < TOL) {
                    failures.push(format!("{name}/{}: {:.2e}", e.group, e.worst));
                }
            }
        }
        let n = gradient_stacks().len();
        Ok(if failures.is_empty() {
            (true, format!("{n} stacks, worst relative error {:.2e} ({})", worst.0, worst.1))
        } else {
            (false, format!("{} groups above {TOL:e}: {}", failures.len(), failures.join("; ")))
        })
    })
}

fn timing_stack(norm: NormChoice) -> StackSpec {
    let layer = |norm: NormChoice| LayerSpec {
        gnn: GnnKind::Gin,
        width: 16,
        norm,
        activation: Activation::Relu,
    };
    StackSpec {
        input_width: 16,
        layers: vec![layer(norm.clone()), layer(norm)],
        pooling: Pooling::Sum,
        readout: None,
        rnf_pe: 0,
    }
}

/// The variants compared by the scaling benchmark.
pub fn timing_variants() -> Vec<(String, StackSpec)> {
    vec![
        ("gin".into(), timing_stack(NormChoice::zoo(NormVariant::Identity))),
        ("gin+granola".into(), timing_stack(NormChoice::granola(GranolaVariant::Full))),
    ]
}

/// Forward+backward time per doubling of the node count stays between
/// 1.5x and 3x, and GRANOLA costs at most 6x the plain stack.
pub fn linear_timing(opts: &PropsOptions) -> Check {
    check("linear-timing", || {
        let rows = benchmark(&timing_variants(), &[1000, 2000, 4000], 15, opts.seed)?;
        let mut ok = true;
        let mut parts = Vec::new();
        for r in &rows {
            if let Some(ratio) = r.ratio {
                ok &= (1.5..=3.0).contains(&ratio);
                parts.push(format!("{} {}: {:.2}x", r.variant, r.nodes, ratio));
            }
        }
        for pair in rows.chunks(2) {
            let overhead = pair[1].median_ms / pair[0].median_ms;
            ok &= overhead <= 6.0;
            parts.push(format!("overhead@{} {:.2}x", pair[0].nodes, overhead));
        }
        Ok((ok, parts.join(", ")))
    })
}
