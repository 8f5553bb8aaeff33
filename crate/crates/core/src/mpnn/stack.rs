use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize};

use super::{GinLayer, GnnKind, GnnLayer, GraphConvLayer, Mlp};
use crate::autodiff::Var;
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::granola::{GranolaLayer, GranolaSpec, GranolaVariant};
use crate::graph::GraphBatch;
use crate::norm::{mask_var, NormLayer, NormSpec, NormVariant};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Random-feature slot of the positional-encoding baseline. GRANOLA layer
/// `i` uses slot `i + 1`.
pub const RNF_PE_SLOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, h: Var<'_>) -> Var<'_> {
        match self {
            Activation::Relu => h.relu(),
            Activation::Identity => h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    None,
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
pub enum NormStage {
    Zoo(NormLayer),
    Granola(GranolaLayer),
}

impl NormStage {
    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        match self {
            NormStage::Zoo(n) => n.forward(ctx, batch, h),
            NormStage::Granola(g) => g.forward(ctx, batch, h),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormStage::Zoo(n) => n.spec.variant.name(),
            NormStage::Granola(g) => g.spec.variant.name(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackLayer {
    pub gnn: GnnLayer,
    pub norm: NormStage,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ModelStack {
    pub input_width: usize,
    pub layers: Vec<StackLayer>,
    pub pooling: Pooling,
    pub readout: Option<Mlp>,
    /// Width of random features appended to the input (0 = none).
    pub rnf_pe: usize,
}

pub struct ModelOutput<'t> {
    /// Node embeddings after the last layer, `[B, n, C]`.
    pub node: Var<'t>,
    /// Pooled graph embeddings `[B, C]` when pooling is enabled.
    pub pooled: Option<Var<'t>>,
    /// Readout applied to `pooled` (graph tasks) or `node` (node tasks).
    pub prediction: Var<'t>,
}

/// Masked per-graph sum over nodes: `[B, n, C] -> [B, C]`.
pub fn sum_pool<'t>(h: Var<'t>, mask: Var<'t>) -> Result<Var<'t>> {
    let shape = h.shape();
    h.mul(mask)?.sum_keepdim(&[1])?.reshape(vec![shape[0], shape[2]])
}

/// Masked per-graph mean over nodes.
pub fn mean_pool<'t>(ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
    let inv: Vec<f64> = batch.node_counts().iter().map(|&n| 1.0 / n as f64).collect();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateReduction("mean pooling over an empty graph".into()));
    }
    let sum = sum_pool(h, mask_var(ctx, batch))?;
    sum.mul(ctx.constant(Tensor::new(vec![inv.len(), 1], inv)?))
}

fn ensure_finite(v: Var<'_>, location: String) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            epoch: 0,
            location,
            detail: "non-finite activations".into(),
        })
    }
}

impl ModelStack {
    pub fn output_width(&self) -> usize {
        match &self.readout {
            Some(r) => r.output_width(),
            None => self.layers.last().map_or(self.input_width + self.rnf_pe, |l| l.gnn.c_out()),
        }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch) -> Result<ModelOutput<'t>> {
        if batch.feature_width() != self.input_width {
            return Err(Error::shape("model input", &[batch.feature_width()], &[self.input_width]));
        }
        let mut h = ctx.constant(batch.features().clone());
        if self.rnf_pe > 0 {
            let r = ctx.constant(ctx.rnf(RNF_PE_SLOT, batch, self.rnf_pe, true)?);
            h = Var::concat_last(&[h, r])?;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.gnn.forward(ctx, batch, h)?;
            ensure_finite(pre, format!("layer {i} ({})", layer.gnn.kind()))?;
            let normed = layer.norm.forward(ctx, batch, pre)?;
            ensure_finite(normed, format!("layer {i} ({})", layer.norm.name()))?;
            h = layer.activation.apply(normed);
        }
        let node = h;
        let pooled = match self.pooling {
            Pooling::None => None,
            Pooling::Sum => Some(sum_pool(node, mask_var(ctx, batch))?),
            Pooling::Mean => Some(mean_pool(ctx, batch, node)?),
        };
        let base = pooled.unwrap_or(node);
        let prediction = match &self.readout {
            Some(r) => {
                let p = r.forward(ctx, base)?;
                if pooled.is_none() {
                    p.mul(mask_var(ctx, batch))?
                } else {
                    p
                }
            }
            None => base,
        };
        ensure_finite(prediction, "readout".into())?;
        Ok(ModelOutput { node, pooled, prediction })
    }
}

/// The norm of one stack layer: a zoo variant or a GRANOLA variant,
/// distinguished by the `variant` name.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum NormChoice {
    Zoo(NormSpec),
    Granola(GranolaSpec),
}

impl NormChoice {
    pub fn zoo(variant: NormVariant) -> Self {
        NormChoice::Zoo(NormSpec::new(variant))
    }

    pub fn granola(variant: GranolaVariant) -> Self {
        NormChoice::Granola(GranolaSpec::new(variant))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NormChoice::Zoo(s) => s.validate(),
            NormChoice::Granola(s) => s.validate(),
        }
    }
}

impl<'de> Deserialize<'de> for NormChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        let name = v
            .get("variant")
            .and_then(|n| n.as_str())
            .ok_or_else(|| D::Error::custom("norm needs a string field `variant`"))?
            .to_string();
        if GranolaVariant::from_name(&name).is_some() {
            serde_json::from_value(v).map(NormChoice::Granola).map_err(D::Error::custom)
        } else if name.parse::<NormVariant>().is_ok() {
            serde_json::from_value(v).map(NormChoice::Zoo).map_err(D::Error::custom)
        } else {
            Err(D::Error::custom(format!("unknown norm variant `{name}`")))
        }
    }
}

fn default_norm() -> NormChoice {
    NormChoice::zoo(NormVariant::Identity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub gnn: GnnKind,
    /// Output width of the GNN layer.
    pub width: usize,
    #[serde(default = "default_norm")]
    pub norm: NormChoice,
    #[serde(default)]
    pub activation: Activation,
}

/// Declarative description of a [`ModelStack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub pooling: Pooling,
    /// Readout MLP widths after the input: `[hidden.., out]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Vec<usize>>,
    #[serde(default)]
    pub rnf_pe: usize,
}

impl StackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::arg("input_width must be >= 1"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::arg(format!("layers[{i}].width must be >= 1")));
            }
            l.norm
                .validate()
                .map_err(|e| Error::arg(format!("layers[{i}].norm: {e}")))?;
        }
        if let Some(r) = &self.readout {
            if r.is_empty() || r.contains(&0) {
                return Err(Error::arg("readout widths must be non-empty and positive"));
            }
        }
        Ok(())
    }

    pub fn build(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<ModelStack> {
        self.validate()?;
        let mut c_in = self.input_width + self.rnf_pe;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut shared: Option<GranolaLayer> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let name = format!("layer{i}");
            let gnn = match l.gnn {
                GnnKind::Graphconv => GnnLayer::GraphConv(GraphConvLayer::new(store, rng, c_in, l.width, &name)),
                GnnKind::Gin => GnnLayer::Gin(GinLayer::new(store, rng, c_in, l.width, &name)),
            };
            let norm = match &l.norm {
                NormChoice::Zoo(spec) => {
                    NormStage::Zoo(NormLayer::new(store, rng, spec.clone(), l.width, &format!("{name}.norm")))
                }
                NormChoice::Granola(spec) => {
                    let reuse = shared
                        .as_ref()
                        .filter(|s| spec.share_across_layers && s.spec == *spec && s.channels == l.width);
                    let g = match reuse {
                        Some(s) => s.shared_at(i + 1),
                        None => {
                            let g = GranolaLayer::new(store, rng, spec.clone(), l.width, i + 1, &format!("{name}.granola"));
                            if spec.share_across_layers {
                                shared = Some(g.clone());
                            }
                            g
                        }
                    };
                    NormStage::Granola(g)
                }
            };
            layers.push(StackLayer {
                gnn,
                norm,
                activation: l.activation,
            });
            c_in = l.width;
        }
        let readout = self.readout.as_ref().map(|widths| {
            let mut w = vec![c_in];
            w.extend(widths);
            Mlp::new(store, rng, &w, true, "readout", "readout")
        });
        Ok(ModelStack {
            input_width: self.input_width,
            layers,
            pooling: self.pooling,
            readout,
            rnf_pe: self.rnf_pe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_choice_dispatches_on_variant() {
        let z: NormChoice = serde_json::from_str(r#"{"variant": "batchnorm", "affine": false}"#).unwrap();
        assert!(matches!(z, NormChoice::Zoo(ref s) if !s.affine));
        let g: NormChoice = serde_json::from_str(r#"{"variant": "granola_ms", "l_norm": 1}"#).unwrap();
        assert!(matches!(g, NormChoice::Granola(ref s) if s.l_norm == 1));
        let err = serde_json::from_str::<NormChoice>(r#"{"variant": "fancynorm"}"#).unwrap_err();
        assert!(err.to_string().contains("fancynorm"));
    }
}
