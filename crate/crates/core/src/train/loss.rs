use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::context::ForwardCtx;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

fn masked_mean<'t>(ctx: &ForwardCtx<'t>, err: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let count = mask.sum_all();
    if count == 0.0 {
        return Err(Error::DegenerateReduction("loss over an empty mask".into()));
    }
    Ok(err.mul(ctx.constant(mask.clone()))?.sum_all().scale(1.0 / count))
}

/// Masked mean absolute error.
pub fn mae_loss<'t>(ctx: &ForwardCtx<'t>, pred: Var<'t>, target: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
    let diff = pred.sub(ctx.constant(target.clone()))?;
    masked_mean(ctx, diff.abs(), mask)
}

/// Masked mean squared error.
pub fn mse_loss<'t>(ctx: &ForwardCtx<'t>, pred: Var<'t>, target: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
    let diff = pred.sub(ctx.constant(target.clone()))?;
    masked_mean(ctx, diff.square(), mask)
}

pub fn loss<'t>(kind: LossKind, ctx: &ForwardCtx<'t>, pred: Var<'t>, target: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
    match kind {
        LossKind::Mae => mae_loss(ctx, pred, target, mask),
        LossKind::Mse => mse_loss(ctx, pred, target, mask),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::context::RnfSource;
    use crate::params::ParamStore;

    fn eval(kind: LossKind, pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
        let store = ParamStore::new();
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &store, RnfSource::Seeded { root: 0, step: 0 });
        let n = pred.len();
        let p = ctx.constant(Tensor::new(vec![n], pred.to_vec()).unwrap());
        let t = Tensor::new(vec![n], target.to_vec()).unwrap();
        let m = Tensor::new(vec![n], mask.to_vec()).unwrap();
        Ok(loss(kind, &ctx, p, &t, &m)?.value().item())
    }

    #[test]
    fn mae_cases() {
        assert_eq!(eval(LossKind::Mae, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(eval(LossKind::Mae, &[0.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(eval(LossKind::Mae, &[0.0, 9.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(eval(LossKind::Mse, &[0.0, 3.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 2.5);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let err = eval(LossKind::Mae, &[1.0], &[0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateReduction(_)));
    }
}
