//! Per-forward state: the tape, parameter leaves, random node feature
//! streams and diagnostics.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::graph::GraphBatch;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the random stream for `(root seed, layer slot, step)`.
pub fn stream_seed(root: u64, layer: usize, step: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ layer as u64) ^ step)
}

/// Where random node features come from.
#[derive(Debug, Clone)]
pub enum RnfSource {
    /// Fresh draw per `(root, slot, step)`. Equal triples give equal draws.
    Seeded { root: u64, step: u64 },
    /// Pre-drawn tensors per slot, `[B, n_max, K]` each.
    Fixed(BTreeMap<usize, Tensor>),
}

/// i.i.d. standard normal entries at real nodes, zero at padding.
pub fn sample_rnf(batch: &GraphBatch, k: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bsz, n) = (batch.batch_size(), batch.n_max());
    let mut data = vec![0.0; bsz * n * k];
    for b in 0..bsz {
        for v in 0..batch.node_counts()[b] {
            for c in 0..k {
                data[(b * n + v) * k + c] = StandardNormal.sample(&mut rng);
            }
        }
    }
    Tensor::new(vec![bsz, n, k], data).expect("sized by construction")
}

pub struct ForwardCtx<'t> {
    tape: &'t Tape,
    store: &'t ParamStore,
    trainable: bool,
    leaves: RefCell<HashMap<ParamId, Var<'t>>>,
    overrides: HashMap<ParamId, Var<'t>>,
    rnf: RnfSource,
    drawn: RefCell<BTreeMap<usize, Tensor>>,
    diagnostics: RefCell<Vec<String>>,
}

impl<'t> ForwardCtx<'t> {
    /// Parameters become gradient-requiring leaves.
    pub fn new(tape: &'t Tape, store: &'t ParamStore, rnf: RnfSource) -> Self {
        Self {
            tape,
            store,
            trainable: true,
            leaves: RefCell::new(HashMap::new()),
            overrides: HashMap::new(),
            rnf,
            drawn: RefCell::new(BTreeMap::new()),
            diagnostics: RefCell::new(Vec::new()),
        }
    }

    /// Parameters enter the tape as constants.
    pub fn inference(tape: &'t Tape, store: &'t ParamStore, rnf: RnfSource) -> Self {
        Self {
            trainable: false,
            ..Self::new(tape, store, rnf)
        }
    }

    /// Use `var` in place of the stored value of `id`.
    pub fn with_override(mut self, id: ParamId, var: Var<'t>) -> Self {
        self.overrides.insert(id, var);
        self
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore {
        self.store
    }

    /// The tape node for `id`, created on first use so every use of a
    /// shared parameter feeds one gradient.
    pub fn param(&self, id: ParamId) -> Var<'t> {
        if let Some(v) = self.overrides.get(&id) {
            return *v;
        }
        *self.leaves.borrow_mut().entry(id).or_insert_with(|| {
            let value = self.store.get(id).clone();
            if self.trainable {
                self.tape.leaf(value)
            } else {
                self.tape.constant(value)
            }
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }

    /// Random features for slot `slot`, `[B, n_max, k]`. With `resample`
    /// off the draw ignores the step counter.
    pub fn rnf(&self, slot: usize, batch: &GraphBatch, k: usize, resample: bool) -> crate::Result<Tensor> {
        let r = match &self.rnf {
            RnfSource::Seeded { root, step } => {
                let step = if resample { *step } else { 0 };
                sample_rnf(batch, k, stream_seed(*root, slot, step))
            }
            RnfSource::Fixed(map) => {
                let r = map.get(&slot).cloned().ok_or_else(|| {
                    crate::Error::arg(format!("no fixed random features for slot {slot}"))
                })?;
                let want = [batch.batch_size(), batch.n_max(), k];
                if r.shape() != want {
                    return Err(crate::Error::shape("fixed random features", r.shape(), &want));
                }
                r
            }
        };
        self.drawn.borrow_mut().insert(slot, r.clone());
        Ok(r)
    }

    /// Every random feature tensor drawn so far, by slot.
    pub fn drawn_rnf(&self) -> BTreeMap<usize, Tensor> {
        self.drawn.borrow().clone()
    }

    pub fn note(&self, msg: impl Into<String>) {
        let msg = msg.into();
        let mut d = self.diagnostics.borrow_mut();
        if !d.contains(&msg) {
            d.push(msg);
        }
    }

    pub fn diagnostics(&self) -> Vec<String> {
        self.diagnostics.borrow().clone()
    }

    /// Gradient of every parameter touched by the forward pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .leaves
            .borrow()
            .iter()
            .map(|(&id, &v)| (id, grads.get(v)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path, star};

    #[test]
    fn rnf_is_seeded_and_masked() {
        let batch = GraphBatch::new(&[path(3).unwrap(), star(5).unwrap()]).unwrap();
        let a = sample_rnf(&batch, 3, 11);
        assert_eq!(a, sample_rnf(&batch, 3, 11));
        assert_ne!(a, sample_rnf(&batch, 3, 12));
        for v in 3..5 {
            for c in 0..3 {
                assert_eq!(a.at(&[0, v, c]), 0.0);
            }
        }
    }

    #[test]
    fn rnf_moments() {
        let g = crate::graph::Graph::new(1000, vec![]).unwrap();
        let batch = GraphBatch::new(&[g]).unwrap();
        let r = sample_rnf(&batch, 1000, 5);
        let n = r.len() as f64;
        let mean = r.sum_all() / n;
        let var = r.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn streams_differ_by_layer_and_step() {
        let s = stream_seed(1, 0, 0);
        assert_ne!(s, stream_seed(1, 1, 0));
        assert_ne!(s, stream_seed(1, 0, 1));
        assert_ne!(s, stream_seed(2, 0, 0));
        assert_eq!(s, stream_seed(1, 0, 0));
    }

    #[test]
    fn shared_param_is_one_leaf() {
        let mut store = ParamStore::new();
        let id = store.add("w", "test", Tensor::scalar(3.0));
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &store, RnfSource::Seeded { root: 0, step: 0 });
        let y = ctx.param(id).mul(ctx.param(id)).unwrap().sum_all();
        let g = y.backward().unwrap();
        let grads = ctx.param_grads(&g);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1.item(), 6.0);
    }
}
