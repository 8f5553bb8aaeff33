//! GRANOLA: normalization whose per-node affine parameters come from a
//! shallow GNN run over the pre-normalized features and random node
//! features.

mod construct;

pub use construct::{default_to_rnf_weights, prop2_stack};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{reduce, ReduceKind, Var};
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::mpnn::{GinLayer, GnnKind, GnnLayer, GraphConvLayer, Mlp};
use crate::norm::{mask_var, masked_stats, StatAxes};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GranolaVariant {
    /// Affine parameters from `GNN_norm(A, H ⊕ R)`.
    #[serde(rename = "granola")]
    Full,
    /// Affine parameters from `GNN_norm(A, H)`; no random features.
    #[serde(rename = "granola_no_rnf")]
    NoRnf,
    /// Full input, but `gamma`/`beta` are the per-node mean and variance of `Z`.
    #[serde(rename = "granola_ms")]
    Ms,
    /// `Z = R`: random features only, no message passing.
    #[serde(rename = "rnf_norm")]
    RnfNorm,
}

impl GranolaVariant {
    pub const ALL: [GranolaVariant; 4] = [
        GranolaVariant::Full,
        GranolaVariant::NoRnf,
        GranolaVariant::Ms,
        GranolaVariant::RnfNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GranolaVariant::Full => "granola",
            GranolaVariant::NoRnf => "granola_no_rnf",
            GranolaVariant::Ms => "granola_ms",
            GranolaVariant::RnfNorm => "rnf_norm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        GranolaVariant::ALL.into_iter().find(|v| v.name() == s)
    }

    fn uses_rnf(self) -> bool {
        !matches!(self, GranolaVariant::NoRnf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    #[default]
    LayernormNode,
    Batchnorm,
}

fn default_variant() -> GranolaVariant {
    GranolaVariant::Full
}
fn default_l_norm() -> usize {
    2
}
fn default_norm_gnn() -> GnnKind {
    GnnKind::Gin
}
fn default_eps() -> f64 {
    1e-5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GranolaSpec {
    #[serde(default = "default_variant")]
    pub variant: GranolaVariant,
    /// Random feature width; defaults to the layer's channel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Message-passing layers inside the normalization GNN.
    #[serde(default = "default_l_norm")]
    pub l_norm: usize,
    #[serde(default = "default_norm_gnn")]
    pub norm_gnn: GnnKind,
    /// Hidden width of `f1`/`f2`; defaults to the channel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_hidden: Option<usize>,
    #[serde(default)]
    pub stats_mode: StatsMode,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Reuse one set of weights at every depth.
    #[serde(default)]
    pub share_across_layers: bool,
    /// Force `gamma = 0`, leaving only the shift.
    #[serde(default)]
    pub gamma_zero: bool,
    /// `ms` only: `beta = mean`, `gamma = sqrt(var + eps)` instead of
    /// `gamma = mean`, `beta = var`.
    #[serde(default)]
    pub ms_swap: bool,
    #[serde(default = "default_true")]
    pub resample_each_forward: bool,
}

impl GranolaSpec {
    pub fn new(variant: GranolaVariant) -> Self {
        Self {
            variant,
            k: None,
            l_norm: default_l_norm(),
            norm_gnn: default_norm_gnn(),
            mlp_hidden: None,
            stats_mode: StatsMode::default(),
            eps: default_eps(),
            share_across_layers: false,
            gamma_zero: false,
            ms_swap: false,
            resample_each_forward: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::arg(format!("granola eps must be > 0, got {}", self.eps)));
        }
        if self.k == Some(0) {
            return Err(Error::arg("granola k must be >= 1"));
        }
        if self.l_norm == 0 && self.variant != GranolaVariant::RnfNorm {
            return Err(Error::arg("granola l_norm must be >= 1"));
        }
        if self.mlp_hidden == Some(0) {
            return Err(Error::arg("granola mlp_hidden must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GranolaLayer {
    pub spec: GranolaSpec,
    pub channels: usize,
    pub k: usize,
    pub norm_gnn: Vec<GnnLayer>,
    pub f1: Mlp,
    pub f2: Mlp,
    /// Random-feature stream index; distinct per depth even when weights
    /// are shared.
    pub slot: usize,
}

impl GranolaLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, spec: GranolaSpec, channels: usize, slot: usize, name: &str) -> Self {
        let k = spec.k.unwrap_or(channels);
        let z_in = match spec.variant {
            GranolaVariant::NoRnf => channels,
            _ => channels + k,
        };
        let norm_gnn = if spec.variant == GranolaVariant::RnfNorm {
            Vec::new()
        } else {
            (0..spec.l_norm)
                .map(|i| {
                    let c_out = if i + 1 == spec.l_norm { channels } else { z_in };
                    let lname = format!("{name}.norm_gnn.{i}");
                    match spec.norm_gnn {
                        GnnKind::Graphconv => GnnLayer::GraphConv(GraphConvLayer::new(store, rng, z_in, c_out, &lname)),
                        GnnKind::Gin => GnnLayer::Gin(GinLayer::new(store, rng, z_in, c_out, &lname)),
                    }
                })
                .collect()
        };
        let z_width = if spec.variant == GranolaVariant::RnfNorm { k } else { channels };
        let hidden = spec.mlp_hidden.unwrap_or(channels);
        let f1 = Mlp::new(store, rng, &[z_width, hidden, channels], true, &format!("{name}.f1"), "granola");
        let f2 = Mlp::new(store, rng, &[z_width, hidden, channels], true, &format!("{name}.f2"), "granola");
        Self {
            spec,
            channels,
            k,
            norm_gnn,
            f1,
            f2,
            slot,
        }
    }

    /// The same weights at another depth.
    pub fn shared_at(&self, slot: usize) -> Self {
        Self { slot, ..self.clone() }
    }

    /// `Z` from the normalization GNN. ReLU between layers, none after the
    /// last.
    pub fn norm_gnn_forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        let r = if self.spec.variant.uses_rnf() {
            Some(ctx.constant(ctx.rnf(self.slot, batch, self.k, self.spec.resample_each_forward)?))
        } else {
            None
        };
        let input = match (self.spec.variant, r) {
            (GranolaVariant::RnfNorm, Some(r)) => return Ok(r),
            (GranolaVariant::NoRnf, _) => h,
            (_, Some(r)) => Var::concat_last(&[h, r])?,
            (_, None) => unreachable!("random features drawn for every rnf variant"),
        };
        let mut z = input;
        for (i, layer) in self.norm_gnn.iter().enumerate() {
            if i > 0 {
                z = z.relu();
            }
            z = layer.forward(ctx, batch, z)?;
        }
        Ok(z)
    }

    /// Per-node `(gamma, beta)`, broadcastable against `[B, n, C]`.
    pub fn affine_from_z<'t>(&self, ctx: &ForwardCtx<'t>, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (gamma, beta) = if self.spec.variant == GranolaVariant::Ms {
            let shape = z.shape();
            let keep = vec![shape[0], shape[1], 1];
            let mean = reduce(z, &[2], ReduceKind::Mean)?.reshape(keep.clone())?;
            let var = reduce(z, &[2], ReduceKind::Var)?.reshape(keep)?;
            if self.spec.ms_swap {
                (var.offset(self.spec.eps).sqrt(), mean)
            } else {
                (mean, var)
            }
        } else {
            (self.f1.forward(ctx, z)?, self.f2.forward(ctx, z)?)
        };
        if self.spec.gamma_zero {
            let shape = gamma.shape();
            return Ok((ctx.constant(Tensor::zeros(shape)), beta));
        }
        Ok((gamma, beta))
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        let shape = h.shape();
        if shape.len() != 3 || shape[2] != self.channels {
            return Err(Error::shape("granola input", &shape, &[self.channels]));
        }
        let z = self.norm_gnn_forward(ctx, batch, h)?;
        let (gamma, beta) = self.affine_from_z(ctx, z)?;
        let axes = match self.spec.stats_mode {
            StatsMode::LayernormNode => StatAxes::Channel,
            StatsMode::Batchnorm => StatAxes::BatchNode,
        };
        let (mu, sigma) = masked_stats(ctx, batch, h, axes, self.spec.eps)?;
        let scaled = if self.spec.gamma_zero {
            beta
        } else {
            h.sub(mu)?.div(sigma)?.mul(gamma)?.add(beta)?
        };
        scaled.mul(mask_var(ctx, batch))
    }
}

/// Append `k` random feature channels to the input features.
pub fn rnf_pe_wrap(batch: &GraphBatch, k: usize, seed: u64) -> Result<GraphBatch> {
    if k == 0 {
        return Ok(batch.clone());
    }
    let r = crate::context::sample_rnf(batch, k, seed);
    rnf_pe_wrap_with(batch, &r)
}

/// Append a given `[B, n_max, K]` tensor to the input features.
pub fn rnf_pe_wrap_with(batch: &GraphBatch, r: &Tensor) -> Result<GraphBatch> {
    batch.with_features(Tensor::concat_last(&[batch.features(), r])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::context::RnfSource;
    use crate::graph::{path, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx_for<'t>(tape: &'t Tape, store: &'t ParamStore) -> ForwardCtx<'t> {
        ForwardCtx::new(tape, store, RnfSource::Seeded { root: 3, step: 0 })
    }

    #[test]
    fn ms_affine_is_mean_and_variance() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GranolaLayer::new(&mut store, &mut rng, GranolaSpec::new(GranolaVariant::Ms), 2, 1, "g");
        let tape = Tape::new();
        let ctx = ctx_for(&tape, &store);
        let z = ctx.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap());
        let (g, b) = layer.affine_from_z(&ctx, z).unwrap();
        assert_eq!(g.value().data(), &[2.0]);
        assert_eq!(b.value().data(), &[1.0]);
    }

    #[test]
    fn gamma_zero_returns_zeros() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut spec = GranolaSpec::new(GranolaVariant::Full);
        spec.gamma_zero = true;
        let layer = GranolaLayer::new(&mut store, &mut rng, spec, 2, 1, "g");
        let tape = Tape::new();
        let ctx = ctx_for(&tape, &store);
        let z = ctx.constant(Tensor::new(vec![1, 2, 2], vec![1.0, -3.0, 0.5, 8.0]).unwrap());
        let (g, _) = layer.affine_from_z(&ctx, z).unwrap();
        assert!(g.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnf_norm_z_is_r() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GranolaLayer::new(&mut store, &mut rng, GranolaSpec::new(GranolaVariant::RnfNorm), 3, 2, "g");
        let batch = GraphBatch::new(&[path(4).unwrap()]).unwrap();
        let tape = Tape::new();
        let ctx = ctx_for(&tape, &store);
        let h = ctx.constant(Tensor::ones(vec![1, 4, 3]));
        let z = layer.norm_gnn_forward(&ctx, &batch, h).unwrap();
        assert_eq!(z.value().as_ref(), &ctx.drawn_rnf()[&2]);
    }

    #[test]
    fn identity_affine_gives_layernorm_node() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GranolaLayer::new(&mut store, &mut rng, GranolaSpec::new(GranolaVariant::Full), 2, 1, "g");
        // f1 -> 1, f2 -> 0 via zero weights and constant output biases
        for mlp in [&layer.f1, &layer.f2] {
            for l in &mlp.layers {
                let shape = store.get(l.weight).shape().to_vec();
                store.set(l.weight, Tensor::zeros(shape));
            }
        }
        let last = layer.f1.layers.last().unwrap().bias.unwrap();
        store.set(last, Tensor::ones(vec![2]));
        let g = Graph::with_features(2, vec![(0, 1)], Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 5.0]]).unwrap()).unwrap();
        let batch = GraphBatch::new(&[g]).unwrap();
        let tape = Tape::new();
        let ctx = ctx_for(&tape, &store);
        let h = ctx.constant(batch.features().clone());
        let out = layer.forward(&ctx, &batch, h).unwrap();
        let s0 = (1.0f64 + 1e-5).sqrt();
        let s1 = (2.25f64 + 1e-5).sqrt();
        let want = [1.0 / s0, -1.0 / s0, -1.5 / s1, 1.5 / s1];
        for (a, b) in out.value().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pe_wrap_widths() {
        let batch = GraphBatch::new(&[path(3).unwrap()]).unwrap();
        assert_eq!(rnf_pe_wrap(&batch, 0, 1).unwrap().features(), batch.features());
        let w = rnf_pe_wrap(&batch, 4, 1).unwrap();
        assert_eq!(w.feature_width(), 5);
        let r = crate::context::sample_rnf(&batch, 4, 1);
        let manual = Tensor::concat_last(&[batch.features(), &r]).unwrap();
        assert_eq!(w.features(), &manual);
    }
}
