use rand::Rng;

use crate::autodiff::Var;
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::norm::mask_var;
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Dense layer applied to the trailing axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, c_in: usize, c_out: usize, bias: bool, name: &str, group: &str) -> Self {
        let weight = store.add(format!("{name}.weight"), group, glorot_uniform(rng, c_in, c_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(vec![c_out])));
        Self { weight, bias, c_in, c_out }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.linear(ctx.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.param(b)),
            None => Ok(y),
        }
    }
}

/// Linear layers with ReLU between them and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, widths: &[usize], bias: bool, name: &str, group: &str) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, w[0], w[1], bias, &format!("{name}.{i}"), group))
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].c_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").c_out
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.relu();
            }
            h = layer.forward(ctx, h)?;
        }
        Ok(h)
    }
}

/// `H W1 + A H W2`, no bias.
#[derive(Debug, Clone)]
pub struct GraphConvLayer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl GraphConvLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, c_in: usize, c_out: usize, name: &str) -> Self {
        Self {
            w1: store.add(format!("{name}.w1"), "graphconv", glorot_uniform(rng, c_in, c_out)),
            w2: store.add(format!("{name}.w2"), "graphconv", glorot_uniform(rng, c_in, c_out)),
            c_in,
            c_out,
        }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        check_width("graphconv", &h, self.c_in)?;
        let own = h.linear(ctx.param(self.w1))?;
        let nbr = h.aggregate(batch.neighbors())?.linear(ctx.param(self.w2))?;
        own.add(nbr)
    }
}

/// `MLP((1 + eps) h_v + sum_{u in N(v)} h_u)` with a two-layer MLP.
#[derive(Debug, Clone)]
pub struct GinLayer {
    pub eps: f64,
    pub mlp: Mlp,
}

impl GinLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, c_in: usize, c_out: usize, name: &str) -> Self {
        Self {
            eps: 0.0,
            mlp: Mlp::new(store, rng, &[c_in, c_out, c_out], true, &format!("{name}.mlp"), "gin"),
        }
    }

    pub fn c_in(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn c_out(&self) -> usize {
        self.mlp.output_width()
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        check_width("gin", &h, self.c_in())?;
        let agg = h.scale(1.0 + self.eps).add(h.aggregate(batch.neighbors())?)?;
        self.mlp.forward(ctx, agg)?.mul(mask_var(ctx, batch))
    }
}

#[derive(Debug, Clone)]
pub enum GnnLayer {
    GraphConv(GraphConvLayer),
    Gin(GinLayer),
}

impl GnnLayer {
    pub fn c_in(&self) -> usize {
        match self {
            GnnLayer::GraphConv(l) => l.c_in,
            GnnLayer::Gin(l) => l.c_in(),
        }
    }

    pub fn c_out(&self) -> usize {
        match self {
            GnnLayer::GraphConv(l) => l.c_out,
            GnnLayer::Gin(l) => l.c_out(),
        }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t>, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        match self {
            GnnLayer::GraphConv(l) => l.forward(ctx, batch, h),
            GnnLayer::Gin(l) => l.forward(ctx, batch, h),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GnnLayer::GraphConv(_) => "graphconv",
            GnnLayer::Gin(_) => "gin",
        }
    }
}

fn check_width(op: &'static str, h: &Var<'_>, c_in: usize) -> Result<()> {
    let shape = h.shape();
    if shape.last() != Some(&c_in) {
        return Err(Error::shape(op, &shape, &[c_in]));
    }
    Ok(())
}
