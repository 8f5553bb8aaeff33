//! Standard and graph-specific normalization layers over masked
//! `[B, n, C]` batches.

mod stats;

pub use stats::{masked_moments, masked_stats, standardize, StatAxes};
pub(crate) use stats::{ensure_positive, mask_var};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    Identity,
    Batchnorm,
    Instancenorm,
    LayernormNode,
    LayernormGraph,
    Pairnorm,
    MeanSubtraction,
    Diffgroupnorm,
    Nodenorm,
    Graphnorm,
    Graphsizenorm,
    Unitynorm,
}

impl NormVariant {
    pub const ALL: [NormVariant; 12] = [
        NormVariant::Identity,
        NormVariant::Batchnorm,
        NormVariant::Instancenorm,
        NormVariant::LayernormNode,
        NormVariant::LayernormGraph,
        NormVariant::Pairnorm,
        NormVariant::MeanSubtraction,
        NormVariant::Diffgroupnorm,
        NormVariant::Nodenorm,
        NormVariant::Graphnorm,
        NormVariant::Graphsizenorm,
        NormVariant::Unitynorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormVariant::Identity => "identity",
            NormVariant::Batchnorm => "batchnorm",
            NormVariant::Instancenorm => "instancenorm",
            NormVariant::LayernormNode => "layernorm_node",
            NormVariant::LayernormGraph => "layernorm_graph",
            NormVariant::Pairnorm => "pairnorm",
            NormVariant::MeanSubtraction => "mean_subtraction",
            NormVariant::Diffgroupnorm => "diffgroupnorm",
            NormVariant::Nodenorm => "nodenorm",
            NormVariant::Graphnorm => "graphnorm",
            NormVariant::Graphsizenorm => "graphsizenorm",
            NormVariant::Unitynorm => "unitynorm",
        }
    }

    /// Whether the variant owns per-channel `gamma`/`beta` when `affine` is set.
    pub fn supports_affine(self) -> bool {
        !matches!(
            self,
            NormVariant::Identity | NormVariant::Pairnorm | NormVariant::MeanSubtraction | NormVariant::Nodenorm
        )
    }
}

impl fmt::Display for NormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown norm variant `{s}`")))
    }
}

fn default_eps() -> f64 {
    1e-5
}
fn default_true() -> bool {
    true
}
fn default_s() -> f64 {
    1.0
}
fn default_p() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    0.01
}
fn default_clusters() -> usize {
    4
}
fn default_unity() -> [f64; 4] {
    [0.25; 4]
}

/// One normalization variant and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub variant: NormVariant,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_true")]
    pub affine: bool,
    /// PairNorm target row-norm scale.
    #[serde(default = "default_s")]
    pub s: f64,
    /// NodeNorm root order.
    #[serde(default = "default_p")]
    pub p: f64,
    /// DiffGroupNorm mixing weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// DiffGroupNorm cluster count.
    #[serde(default = "default_clusters", alias = "D")]
    pub clusters: usize,
    /// UnityNorm initial weights for (LayerNorm-node, AdjacencyNorm,
    /// InstanceNorm, BatchNorm).
    #[serde(default = "default_unity")]
    pub unity_lambdas: [f64; 4],
    /// GraphSizeNorm: follow the size division with BatchNorm.
    #[serde(default = "default_true")]
    pub then_batchnorm: bool,
}

impl NormSpec {
    pub fn new(variant: NormVariant) -> Self {
        Self {
            variant,
            eps: default_eps(),
            affine: true,
            s: default_s(),
            p: default_p(),
            lambda: default_lambda(),
            clusters: default_clusters(),
            unity_lambdas: default_unity(),
            then_batchnorm: true,
        }
    }

    pub fn without_affine(mut self) -> Self {
        self.affine = false;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::arg(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.clusters < 1 {
            return Err(Error::arg("clusters (D) must be >= 1"));
        }
        if !(self.p >= 1.0) {
            return Err(Error::arg(format!("p must be >= 1, got {}", self.p)));
        }
        if self.unity_lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::arg("unity_lambdas must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    fn new(store: &mut ParamStore, name: &str, group: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), group, Tensor::ones(vec![c])),
            beta: store.add(format!("{name}.beta"), group, Tensor::zeros(vec![c])),
        }
    }

    fn vars<'t>(&self, ctx: &ForwardCtx<'t>) -> (Var<'t>, Var<'t>) {
        (ctx.param(self.gamma), ctx.param(self.beta))
    }
}

/// A normalization layer over `channels` features.
#[derive(Debug, Clone)]
pub struct NormLayer {
    pub spec: NormSpec,
    pub channels: usize,
    /// Shared affine for the single-standardization variants.
    pub affine: Option<Affine>,
    /// GraphNorm mean multiplier `alpha`, initialised to 1.
    pub alpha: Option<ParamId>,
    /// DiffGroupNorm cluster weights `[C, D]` and per-cluster affines.
    pub cluster_weight: Option<ParamId>,
    pub cluster_affine: Vec<Affine>,
    /// UnityNorm mixing weights `[4]` and per-component affines.
    pub unity_weights: Option<ParamId>,
    pub unity_affine: Vec<Affine>,
}

impl NormLayer {
    /// Allocate parameters for `spec`. Validation is the caller's choice;
    /// property suites deliberately build degenerate specs.
    pub fn new(store: &mut ParamStore, rng: &mut impl rand::Rng, spec: NormSpec, channels: usize, name: &str) -> Self {
        let group = spec.variant.name();
        let mut layer = NormLayer {
            spec: spec.clone(),
            channels,
            affine: None,
            alpha: None,
            cluster_weight: None,
            cluster_affine: Vec::new(),
            unity_weights: None,
            unity_affine: Vec::new(),
        };
        match spec.variant {
            NormVariant::Diffgroupnorm => {
                layer.cluster_weight = Some(store.add(
                    format!("{name}.cluster_weight"),
                    group,
                    glorot_uniform(rng, channels, spec.clusters),
                ));
                if spec.affine {
                    layer.cluster_affine = (0..spec.clusters)
                        .map(|i| Affine::new(store, &format!("{name}.cluster{i}"), group, channels))
                        .collect();
                }
            }
            NormVariant::Unitynorm => {
                layer.unity_weights = Some(store.add(
                    format!("{name}.lambda"),
                    group,
                    Tensor::new(vec![4], spec.unity_lambdas.to_vec()).expect("four weights"),
                ));
                if spec.affine {
                    layer.unity_affine = ["ln_node", "adjacency", "instance", "batch"]
                        .iter()
                        .map(|part| Affine::new(store, &format!("{name}.{part}"), group, channels))
                        .collect();
                }
            }
            v => {
                if spec.affine && v.supports_affine() {
                    layer.affine = Some(Affine::new(store, name, group, channels));
                }
                if v == NormVariant::Graphnorm {
                    layer.alpha = Some(store.add(format!("{name}.alpha"), group, Tensor::ones(vec![channels])));
                }
            }
        }
        layer
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        let shape = h.shape();
        if shape.len() != 3 || shape[2] != self.channels {
            return Err(Error::shape("normalization width", &shape, &[self.channels]));
        }
        let eps = self.spec.eps;
        let affine = self.affine.map(|a| a.vars(ctx));
        let mask = mask_var(ctx, batch);
        let out = match self.spec.variant {
            NormVariant::Identity => h,
            NormVariant::Batchnorm => standard(ctx, batch, h, StatAxes::BatchNode, eps, affine)?,
            NormVariant::Instancenorm => standard(ctx, batch, h, StatAxes::Node, eps, affine)?,
            NormVariant::LayernormNode => standard(ctx, batch, h, StatAxes::Channel, eps, affine)?,
            NormVariant::LayernormGraph => standard(ctx, batch, h, StatAxes::NodeChannel, eps, affine)?,
            NormVariant::Pairnorm => pairnorm(ctx, batch, h, self.spec.s, eps)?,
            NormVariant::MeanSubtraction => {
                let (mu, _) = masked_moments(ctx, batch, h, StatAxes::Node)?;
                h.sub(mu)?
            }
            NormVariant::Nodenorm => {
                let (_, sigma) = masked_stats(ctx, batch, h, StatAxes::Channel, eps)?;
                h.div(sigma.powf(1.0 / self.spec.p))?
            }
            NormVariant::Graphnorm => {
                let alpha = ctx.param(self.alpha.expect("graphnorm owns alpha"));
                let (mu, sigma) = masked_stats(ctx, batch, h, StatAxes::Node, eps)?;
                standardize(h, mu.mul(alpha)?, sigma, affine)?
            }
            NormVariant::Graphsizenorm => {
                let inv = Tensor::new(
                    vec![batch.batch_size(), 1, 1],
                    batch.node_counts().iter().map(|&n| 1.0 / (n as f64).sqrt()).collect(),
                )?;
                if inv.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::DegenerateReduction("graph size norm over an empty graph".into()));
                }
                let scaled = h.mul(ctx.constant(inv))?;
                if self.spec.then_batchnorm {
                    standard(ctx, batch, scaled, StatAxes::BatchNode, eps, affine)?
                } else {
                    scaled
                }
            }
            NormVariant::Diffgroupnorm => self.diffgroupnorm(ctx, batch, h)?,
            NormVariant::Unitynorm => self.unitynorm(ctx, batch, h)?,
        };
        out.mul(mask)
    }

    fn diffgroupnorm<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        let w = ctx.param(self.cluster_weight.expect("diffgroupnorm owns cluster weights"));
        let s = softmax_last(ctx, h.linear(w)?)?;
        let mut acc: Option<Var<'t>> = None;
        for i in 0..self.spec.clusters {
            let weighted = s.slice_last(i, 1)?.mul(h)?;
            let affine = self.cluster_affine.get(i).map(|a| a.vars(ctx));
            let bn = standard(ctx, batch, weighted, StatAxes::BatchNode, self.spec.eps, affine)?;
            acc = Some(match acc {
                None => bn,
                Some(a) => a.add(bn)?,
            });
        }
        h.add(acc.expect("at least one cluster").scale(self.spec.lambda))
    }

    fn unitynorm<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        let eps = self.spec.eps;
        let lambdas = ctx.param(self.unity_weights.expect("unitynorm owns weights"));
        let aff = |i: usize| self.unity_affine.get(i).map(|a| a.vars(ctx));
        let parts = [
            standard(ctx, batch, h, StatAxes::Channel, eps, aff(0))?,
            {
                let (mu, sigma) = adjacency_stats(ctx, batch, h, eps)?;
                standardize(h, mu, sigma, aff(1))?
            },
            standard(ctx, batch, h, StatAxes::Node, eps, aff(2))?,
            standard(ctx, batch, h, StatAxes::BatchNode, eps, aff(3))?,
        ];
        let mut acc: Option<Var<'t>> = None;
        for (i, part) in parts.into_iter().enumerate() {
            let term = part.mul(lambdas.slice_last(i, 1)?)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(term)?,
            });
        }
        Ok(acc.expect("four parts"))
    }
}

fn standard<'t>(
    ctx: &ForwardCtx<'t>,
    batch: &GraphBatch,
    h: Var<'t>,
    axes: StatAxes,
    eps: f64,
    affine: Option<(Var<'t>, Var<'t>)>,
) -> Result<Var<'t>> {
    let (mu, sigma) = masked_stats(ctx, batch, h, axes, eps)?;
    standardize(h, mu, sigma, affine)
}

/// Center per graph, then scale so the mean squared row norm of each graph
/// is `s^2`. The denominator is `sqrt(max(msq, eps))` so constant graphs map
/// to zero instead of dividing by zero.
fn pairnorm<'t>(ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>, s: f64, eps: f64) -> Result<Var<'t>> {
    let mask = mask_var(ctx, batch);
    let (mu, _) = masked_moments(ctx, batch, h, StatAxes::Node)?;
    let centered = h.sub(mu)?.mul(mask)?;
    let inv_n = Tensor::new(
        vec![batch.batch_size(), 1, 1],
        batch.node_counts().iter().map(|&n| 1.0 / n as f64).collect(),
    )?;
    let msq = centered.square().sum_keepdim(&[1, 2])?.mul(ctx.constant(inv_n))?;
    for (b, &v) in msq.value().data().iter().enumerate() {
        if v < eps {
            ctx.note(format!("pairnorm: graph {b} has near-constant features; output is clamped toward zero"));
        }
    }
    centered.div(msq.clamp_min(eps).sqrt())?.scale(s).mul(mask)
}

/// Row-wise softmax over the last axis. The row max is subtracted as a
/// constant, which leaves values and gradients unchanged.
pub(crate) fn softmax_last<'t>(ctx: &ForwardCtx<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let v = x.value();
    let d = *v.shape().last().expect("rank >= 1");
    let mut shape = v.shape().to_vec();
    *shape.last_mut().unwrap() = 1;
    let maxes: Vec<f64> = v
        .data()
        .chunks(d)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let shifted = x.sub(ctx.constant(Tensor::new(shape, maxes)?))?;
    let e = shifted.exp();
    let last = v.rank() - 1;
    e.div(e.sum_keepdim(&[last])?)
}

/// Per-node statistics over all channels of all neighbors (the node itself
/// excluded). Isolated real nodes fall back to their own channel statistics.
pub fn adjacency_stats<'t>(
    ctx: &ForwardCtx<'t>,
    batch: &GraphBatch,
    h: Var<'t>,
    eps: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let shape = h.shape();
    let (bsz, n, c) = (shape[0], shape[1], shape[2]);
    let adj = batch.neighbors();
    let mut inv = vec![0.0; bsz * n];
    let mut has = vec![0.0; bsz * n];
    let mut iso = vec![0.0; bsz * n];
    let mut isolated = Vec::new();
    for b in 0..bsz {
        for v in 0..batch.node_counts()[b] {
            let i = b * n + v;
            let d = adj.degree(i);
            if d == 0 {
                iso[i] = 1.0;
                isolated.push((b, v));
            } else {
                has[i] = 1.0;
                inv[i] = 1.0 / (d * c) as f64;
            }
        }
    }
    if !isolated.is_empty() {
        ctx.note(format!(
            "adjacency norm: isolated nodes {isolated:?} use their own statistics"
        ));
    }
    let shape1 = vec![bsz, n, 1];
    let inv = ctx.constant(Tensor::new(shape1.clone(), inv)?);
    let iso = ctx.constant(Tensor::new(shape1.clone(), iso)?);
    let has = ctx.constant(Tensor::new(shape1, has)?);

    let row_sum = h.sum_keepdim(&[2])?;
    let row_sq = h.square().sum_keepdim(&[2])?;
    let nb_mean = row_sum.aggregate(adj)?.mul(inv)?;
    let nb_sq = row_sq.aggregate(adj)?.mul(inv)?;
    let nb_var = nb_sq.sub(nb_mean.square())?.clamp_min(0.0);

    let (self_mu, self_var) = masked_moments(ctx, batch, h, StatAxes::Channel)?;
    let mu = nb_mean.mul(has)?.add(self_mu.mul(iso)?)?;
    let var = nb_var.mul(has)?.add(self_var.mul(iso)?)?;
    let sigma = var.offset(eps).sqrt();
    ensure_positive(batch, sigma)?;
    Ok((mu, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::context::RnfSource;
    use crate::graph::{path, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(spec: NormSpec, graphs: &[Graph], feats: Tensor) -> Tensor {
        let batch = GraphBatch::new(graphs).unwrap().with_features(feats).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = NormLayer::new(&mut store, &mut rng, spec, batch.feature_width(), "n");
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &store, RnfSource::Seeded { root: 0, step: 0 });
        let h = ctx.constant(batch.features().clone());
        layer.forward(&ctx, &batch, h).unwrap().value().as_ref().clone()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn batchnorm_two_nodes() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        let out = run(
            NormSpec::new(NormVariant::Batchnorm).without_affine().with_eps(1e-12),
            &[g],
            t(&[1, 2, 1], &[1.0, 3.0]),
        );
        assert!((out.data()[0] + 1.0).abs() < 1e-9 && (out.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pairnorm_example() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        let out = run(NormSpec::new(NormVariant::Pairnorm), &[g], t(&[1, 2, 1], &[1.0, 3.0]));
        assert!((out.data()[0] + 1.0).abs() < 1e-12 && (out.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nodenorm_p1() {
        let g = Graph::new(1, vec![]).unwrap();
        let mut spec = NormSpec::new(NormVariant::Nodenorm).with_eps(1e-14);
        spec.p = 1.0;
        let out = run(spec, &[g], t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        let want = [1.224744871391589, 2.449489742783178, 3.674234614174767];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn graphsizenorm_divides_by_root_size() {
        let mut spec = NormSpec::new(NormVariant::Graphsizenorm);
        spec.then_batchnorm = false;
        let out = run(spec.clone(), &[path(4).unwrap()], t(&[1, 4, 1], &[2.0, 4.0, 6.0, 8.0]));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
        let out = run(spec, &[Graph::new(1, vec![]).unwrap()], t(&[1, 1, 1], &[5.0]));
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn unknown_variant_names_itself() {
        let err = "superduper".parse::<NormVariant>().unwrap_err();
        assert!(err.to_string().contains("superduper"));
        assert_eq!("layernorm_node".parse::<NormVariant>().unwrap(), NormVariant::LayernormNode);
    }

    #[test]
    fn zero_eps_on_constant_graph_is_degenerate() {
        let batch = GraphBatch::new(&[path(3).unwrap()]).unwrap();
        let store = ParamStore::new();
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &store, RnfSource::Seeded { root: 0, step: 0 });
        let h = ctx.constant(batch.features().clone());
        let err = masked_stats(&ctx, &batch, h, StatAxes::Node, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateReduction(_)));
    }

    #[test]
    fn isolated_node_is_flagged() {
        let g = Graph::with_features(3, vec![(0, 1)], t(&[3, 2], &[1.0, 2.0, 3.0, 5.0, 7.0, 4.0])).unwrap();
        let batch = GraphBatch::new(&[g]).unwrap();
        let store = ParamStore::new();
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &store, RnfSource::Seeded { root: 0, step: 0 });
        let h = ctx.constant(batch.features().clone());
        let (mu, _) = adjacency_stats(&ctx, &batch, h, 1e-5).unwrap();
        // node 0 sees node 1 = (3, 5); node 2 is alone and uses (7, 4)
        assert_eq!(mu.value().data(), &[4.0, 1.5, 5.5]);
        assert_eq!(ctx.diagnostics().len(), 1);
    }
}
