use crate::autodiff::Var;
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::tensor::Tensor;

/// Which elements of `[B, n, C]` share a mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatAxes {
    /// All nodes of all graphs, per channel.
    BatchNode,
    /// All nodes of one graph, per channel.
    Node,
    /// All channels of one node.
    Channel,
    /// All nodes and channels of one graph.
    NodeChannel,
}

impl StatAxes {
    fn axes(self) -> &'static [usize] {
        match self {
            StatAxes::BatchNode => &[0, 1],
            StatAxes::Node => &[1],
            StatAxes::Channel => &[2],
            StatAxes::NodeChannel => &[1, 2],
        }
    }

    /// Element count per group, shaped to broadcast against the keepdim sums.
    fn counts(self, batch: &GraphBatch, c: usize) -> Result<Tensor> {
        let bsz = batch.batch_size();
        let counts = batch.node_counts();
        let t = match self {
            StatAxes::BatchNode => Tensor::full(vec![1, 1, 1], batch.total_nodes() as f64),
            StatAxes::Node => Tensor::new(vec![bsz, 1, 1], counts.iter().map(|&n| n as f64).collect())?,
            StatAxes::Channel => Tensor::full(vec![1, 1, 1], c as f64),
            StatAxes::NodeChannel => {
                Tensor::new(vec![bsz, 1, 1], counts.iter().map(|&n| (n * c) as f64).collect())?
            }
        };
        if t.data().iter().any(|&n| n == 0.0) {
            return Err(Error::DegenerateReduction(format!(
                "{self:?} statistics over a group with no valid elements"
            )));
        }
        Ok(t)
    }
}

pub(crate) fn mask_var<'t>(ctx: &ForwardCtx<'t>, batch: &GraphBatch) -> Var<'t> {
    ctx.constant(batch.mask().clone())
}

fn check_input(batch: &GraphBatch, h: Var<'_>) -> Result<usize> {
    let shape = h.shape();
    if shape.len() != 3 || shape[0] != batch.batch_size() || shape[1] != batch.n_max() {
        return Err(Error::shape(
            "normalization input",
            &shape,
            &[batch.batch_size(), batch.n_max()],
        ));
    }
    Ok(shape[2])
}

/// Masked mean and biased variance of `h` over `axes`, as keepdim tensors
/// that broadcast against `h`. Padded nodes are excluded from every count.
pub fn masked_moments<'t>(
    ctx: &ForwardCtx<'t>,
    batch: &GraphBatch,
    h: Var<'t>,
    axes: StatAxes,
) -> Result<(Var<'t>, Var<'t>)> {
    let c = check_input(batch, h)?;
    let mask = mask_var(ctx, batch);
    let inv = ctx.constant(axes.counts(batch, c)?.map(|n| 1.0 / n));
    let hm = h.mul(mask)?;
    let mu = hm.sum_keepdim(axes.axes())?.mul(inv)?;
    let centered = h.sub(mu)?.mul(mask)?;
    let var = centered.square().sum_keepdim(axes.axes())?.mul(inv)?;
    Ok((mu, var))
}

/// `(mu, sigma)` with `sigma = sqrt(var + eps)`.
pub fn masked_stats<'t>(
    ctx: &ForwardCtx<'t>,
    batch: &GraphBatch,
    h: Var<'t>,
    axes: StatAxes,
    eps: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let (mu, var) = masked_moments(ctx, batch, h, axes)?;
    let sigma = var.offset(eps).sqrt();
    ensure_positive(batch, sigma)?;
    Ok((mu, sigma))
}

/// Reject a zero or non-finite standard deviation at a real node.
pub(crate) fn ensure_positive(batch: &GraphBatch, sigma: Var<'_>) -> Result<()> {
    let s = sigma.value();
    let per_node = s.shape().len() == 3 && s.shape()[0] == batch.batch_size() && s.shape()[1] == batch.n_max();
    let bad = if per_node {
        let m = batch.mask().data();
        let width = s.shape()[2];
        s.data()
            .iter()
            .enumerate()
            .any(|(i, &v)| m[i / width] != 0.0 && !(v > 0.0 && v.is_finite()))
    } else {
        s.data().iter().any(|&v| !(v > 0.0 && v.is_finite()))
    };
    if bad {
        return Err(Error::DegenerateReduction(
            "zero standard deviation (eps must be positive)".into(),
        ));
    }
    Ok(())
}

/// `gamma * (h - mu) / sigma + beta`; no affine means `gamma = 1, beta = 0`.
pub fn standardize<'t>(
    h: Var<'t>,
    mu: Var<'t>,
    sigma: Var<'t>,
    affine: Option<(Var<'t>, Var<'t>)>,
) -> Result<Var<'t>> {
    let z = h.sub(mu)?.div(sigma)?;
    match affine {
        None => Ok(z),
        Some((gamma, beta)) => z.mul(gamma)?.add(beta),
    }
}
