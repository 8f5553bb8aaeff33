//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Worst relative error between the tape gradient of the scalar function
/// `f` at `x` and its central-difference estimate with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let grads = f(leaf)?.backward()?;
    let analytic = grads.get(leaf);
    compare_with_differences(&analytic, x, h, |probe| {
        let tape = Tape::new();
        let v = tape.constant(probe.clone());
        Ok(f(v)?.value().item())
    })
}

/// Worst relative error between `analytic` and central differences of
/// `eval` around `x`.
pub fn compare_with_differences(
    analytic: &Tensor,
    x: &Tensor,
    h: f64,
    mut eval: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        // Divide by the step actually represented, not the nominal 2h.
        let step = plus.data()[i] - minus.data()[i];
        let numeric = (eval(&plus)? - eval(&minus)?) / step;
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{reduce, ReduceKind};

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let g = v.square().sum_all().backward().unwrap();
        assert_eq!(g.get(v).data(), &[2.0, 4.0]);
        let err = grad_check(|v| Ok(v.square().sum_all()), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        // Rounding of f itself limits the estimate to about ulp(f) / h, so
        // the 1e-10 bound needs |f| of order one.
        let x = Tensor::new(vec![4], vec![0.3, -0.7, 0.45, 0.2]).unwrap();
        let err = grad_check(|v| Ok(v.sum_all()), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn composed_smooth_ops() {
        let x = Tensor::new(vec![2, 3], vec![0.5, 1.5, -0.25, 2.0, 0.75, -1.2]).unwrap();
        let err = grad_check(
            |v| {
                let var = reduce(v, &[1], ReduceKind::Var)?;
                let s = var.offset(1e-5).sqrt();
                let e = v.exp().sum_keepdim(&[1])?;
                let r = e.div(s.reshape(vec![2, 1])?)?;
                Ok(r.powf(1.5).sum_all())
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
