use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::context::{ForwardCtx, RnfSource};
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, GraphBatch};
use crate::mpnn::{ModelStack, StackSpec};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub variant: String,
    pub nodes: usize,
    pub edges: usize,
    pub median_ms: f64,
    /// Median over the median of the previous (smaller) size.
    pub ratio: Option<f64>,
}

/// Wall-clock milliseconds of one forward and backward pass.
pub fn time_forward_backward(stack: &ModelStack, store: &ParamStore, batch: &GraphBatch, step: u64) -> Result<f64> {
    let start = Instant::now();
    let tape = Tape::new();
    let ctx = ForwardCtx::new(&tape, store, RnfSource::Seeded { root: 0, step });
    let y = stack.forward(&ctx, batch)?.prediction.sum_all();
    let grads = y.backward()?;
    std::hint::black_box(ctx.param_grads(&grads));
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median forward+backward time for each variant on one Erdos-Renyi graph
/// per size with expected degree 4. Variants are timed round-robin so slow
/// drift in machine load hits all of them alike; 2 warmup passes per
/// variant are discarded.
pub fn benchmark(variants: &[(String, StackSpec)], sizes: &[usize], reps: usize, seed: u64) -> Result<Vec<TimingRow>> {
    if reps == 0 {
        return Err(Error::arg("reps must be >= 1"));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::arg(format!("graph size {n} is too small; need >= 2")));
    }
    let mut rows: Vec<TimingRow> = Vec::new();
    for &n in sizes {
        let g = erdos_renyi(n, 4.0 / (n - 1) as f64, seed ^ n as u64)?;
        let edges = g.num_edges();
        let mut built = Vec::with_capacity(variants.len());
        for (_, spec) in variants {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stack = spec.build(&mut store, &mut rng)?;
            let batch = GraphBatch::new(&[g.clone()])?;
            let batch = if spec.input_width == batch.feature_width() {
                batch
            } else {
                let c = spec.input_width;
                batch.with_features(crate::tensor::Tensor::ones(vec![1, n, c]))?
            };
            built.push((stack, store, batch));
        }
        for (stack, store, batch) in &built {
            for w in 0..2 {
                time_forward_backward(stack, store, batch, w)?;
            }
        }
        let mut samples = vec![Vec::with_capacity(reps); variants.len()];
        for r in 0..reps {
            for (i, (stack, store, batch)) in built.iter().enumerate() {
                samples[i].push(time_forward_backward(stack, store, batch, r as u64)?);
            }
        }
        for (i, s) in samples.into_iter().enumerate() {
            let name = variants[i].0.clone();
            let median_ms = median(s);
            let ratio = rows
                .iter()
                .rev()
                .find(|r| r.variant == name)
                .map(|prev| median_ms / prev.median_ms);
            rows.push(TimingRow {
                variant: name,
                nodes: n,
                edges,
                median_ms,
                ratio,
            });
        }
    }
    Ok(rows)
}
