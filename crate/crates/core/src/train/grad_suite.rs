use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::context::{ForwardCtx, RnfSource};
use crate::error::Result;
use crate::gradcheck::{compare_with_differences, DEFAULT_STEP};
use crate::graph::GraphBatch;
use crate::mpnn::ModelStack;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Worst relative error over the parameters of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub group: String,
    pub params: usize,
    pub worst: f64,
}

/// Fixed random projection that turns the prediction into a scalar.
fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let scale = 1.0 / (n as f64).sqrt();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

fn objective<'t>(
    ctx: &ForwardCtx<'t>,
    stack: &ModelStack,
    batch: &GraphBatch,
    proj: &Tensor,
) -> Result<Var<'t>> {
    let pred = stack.forward(ctx, batch)?.prediction;
    Ok(pred.mul(ctx.constant(proj.clone()))?.sum_all())
}

/// Smallest distance of any ReLU input from its kink in one forward pass.
pub fn probe_kink_margin(stack: &ModelStack, store: &ParamStore, batch: &GraphBatch, rnf: &RnfSource) -> Result<f64> {
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, rnf.clone());
    stack.forward(&ctx, batch)?;
    Ok(tape.kink_margin())
}

/// Finite-difference check of the gradient with respect to parameter `id`,
/// everything else held fixed and the random features pinned by `rnf`.
pub fn check_param(
    stack: &ModelStack,
    store: &ParamStore,
    batch: &GraphBatch,
    id: ParamId,
    rnf: &RnfSource,
    proj_seed: u64,
) -> Result<f64> {
    let shape = {
        let tape = Tape::new();
        let ctx = ForwardCtx::inference(&tape, store, rnf.clone());
        stack.forward(&ctx, batch)?.prediction.shape()
    };
    let proj = projection(&shape, proj_seed);
    let analytic = {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, rnf.clone());
        let y = objective(&ctx, stack, batch, &proj)?;
        let grads = y.backward()?;
        grads.get(ctx.param(id))
    };
    let mut probe_store = store.clone();
    compare_with_differences(&analytic, store.get(id), DEFAULT_STEP, |x| {
        probe_store.set(id, x.clone());
        let tape = Tape::new();
        let ctx = ForwardCtx::inference(&tape, &probe_store, rnf.clone());
        Ok(objective(&ctx, stack, batch, &proj)?.value().item())
    })
}

/// Check every parameter the stack touches, grouped by layer kind.
pub fn run_grad_suite(stack: &ModelStack, store: &ParamStore, batch: &GraphBatch, seed: u64) -> Result<Vec<GradEntry>> {
    let rnf = RnfSource::Seeded { root: seed, step: 0 };
    let used: Vec<ParamId> = {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, rnf.clone());
        let y = stack.forward(&ctx, batch)?.prediction.sum_all();
        ctx.param_grads(&y.backward()?).into_iter().map(|(id, _)| id).collect()
    };
    let mut groups: BTreeMap<String, GradEntry> = BTreeMap::new();
    for (k, id) in used.into_iter().enumerate() {
        let err = check_param(stack, store, batch, id, &rnf, seed.wrapping_add(k as u64 + 1))?;
        let group = store.param(id).group.clone();
        let e = groups.entry(group.clone()).or_insert(GradEntry {
            group,
            params: 0,
            worst: 0.0,
        });
        e.params += 1;
        e.worst = e.worst.max(err);
    }
    Ok(groups.into_values().collect())
}
