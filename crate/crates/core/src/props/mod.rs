//! Executable property suites: equation fidelity of every layer, the
//! failure cases of standard normalization, the expressiveness results and
//! the numerical checks of the engine.

mod expressiveness;
mod granola_props;
mod norms;

pub use expressiveness::{
    convergence_maes,
    convergence_trend, degree_batchnorm_collapse, degree_trainability, no_rnf_matches_wl, regular_graph_collapse,
    rnf_separates_wl_pair,
};
pub use granola_props::{
    gnn_oracles, granola_invariances, granola_oracle, gradient_correctness, linear_timing, rnf_default_construction,
    timing_variants,
};
pub use norms::{norm_failure_cases, norm_fidelity, norm_invariances};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, Graph, GraphBatch};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Outcome of one property.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4}  {:<28} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Run `body` and turn its verdict or error into a [`Check`].
pub(crate) fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Norms,
    Granola,
    Expressiveness,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "norms" => Ok(Suite::Norms),
            "granola" => Ok(Suite::Granola),
            "expressiveness" => Ok(Suite::Expressiveness),
            other => Err(Error::arg(format!(
                "unknown suite `{other}` (expected all, norms, granola or expressiveness)"
            ))),
        }
    }
}

fn default_eps() -> f64 {
    1e-5
}

/// Knobs shared by the suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropsOptions {
    /// Normalization epsilon used by the fidelity and gradient checks.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PropsOptions {
    fn default() -> Self {
        Self { eps: default_eps(), seed: 0 }
    }
}

/// Run every property of `suite`, in a fixed order.
pub fn run_suite(suite: Suite, opts: &PropsOptions) -> Vec<Check> {
    let mut out = Vec::new();
    if matches!(suite, Suite::All | Suite::Norms) {
        out.push(norm_fidelity(opts));
        out.push(norm_invariances(opts));
        out.push(norm_failure_cases());
    }
    if matches!(suite, Suite::All | Suite::Granola) {
        out.push(gnn_oracles(opts));
        out.push(granola_oracle(opts));
        out.push(granola_invariances(opts));
        out.push(rnf_default_construction(opts));
        out.push(gradient_correctness(opts));
    }
    if matches!(suite, Suite::All | Suite::Expressiveness) {
        out.push(degree_batchnorm_collapse(opts));
        out.push(degree_trainability(opts));
        out.push(regular_graph_collapse());
        out.push(no_rnf_matches_wl(opts));
        out.push(rnf_separates_wl_pair(opts));
        out.push(convergence_trend(opts));
    }
    if suite == Suite::All {
        out.push(linear_timing(opts));
    }
    out
}

pub(crate) fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn normal_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal(rng)).collect()).expect("sized")
}

/// Replace every parameter with `N(0, 1)` draws, keeping `gamma`-like
/// parameters near one so standardized outputs stay of order one.
pub(crate) fn randomize_params(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let near_one = {
            let name = &store.param(id).name;
            name.ends_with(".gamma") || name.ends_with(".alpha")
        };
        let t = store.get_mut(id);
        for v in t.data_mut() {
            let z = normal(rng);
            *v = if near_one { 1.0 + 0.5 * z } else { z };
        }
    }
}

/// Random graph with `N(0, 1)` features of width `c`.
pub(crate) fn random_graph(rng: &mut impl Rng, n: usize, p: f64, c: usize) -> Result<Graph> {
    let g = erdos_renyi(n, p, rng.random())?;
    let feats = normal_tensor(rng, vec![n, c]);
    Graph::with_features(n, g.edges().to_vec(), feats)
}

/// `1..=max_b` random graphs with `1..=max_n` nodes each.
pub(crate) fn random_graphs(rng: &mut impl Rng, max_b: usize, max_n: usize, c: usize) -> Result<Vec<Graph>> {
    let bsz = rng.random_range(1..=max_b);
    (0..bsz)
        .map(|_| {
            let n = rng.random_range(1..=max_n);
            random_graph(rng, n, 0.4, c)
        })
        .collect()
}

/// Random permutation of `0..n`.
pub(crate) fn random_perm(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Permute every graph of a batch; returns the permuted graphs and the
/// per-graph permutations.
pub(crate) fn permute_all(rng: &mut impl Rng, graphs: &[Graph]) -> Result<(Vec<Graph>, Vec<Vec<usize>>)> {
    let perms: Vec<Vec<usize>> = graphs.iter().map(|g| random_perm(rng, g.num_nodes())).collect();
    let permuted = graphs.iter().zip(&perms).map(|(g, p)| g.permute(p)).collect::<Result<_>>()?;
    Ok((permuted, perms))
}

/// Apply per-graph node permutations to a `[B, n_max, C]` tensor.
pub(crate) fn permute_rows(t: &Tensor, perms: &[Vec<usize>]) -> Tensor {
    let (n_max, c) = (t.shape()[1], t.shape()[2]);
    let mut out = Tensor::zeros(t.shape().to_vec());
    for (b, p) in perms.iter().enumerate() {
        for (i, &j) in p.iter().enumerate() {
            for k in 0..c {
                out.data_mut()[(b * n_max + j) * c + k] = t.data()[(b * n_max + i) * c + k];
            }
        }
    }
    out
}

/// `f(v)` at real nodes of `h`, zero at padding.
pub(crate) fn map_real(batch: &GraphBatch, h: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
    let c = h.shape()[2];
    let mask = batch.node_mask();
    let data = h
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i / c] { f(i % c, v) } else { 0.0 })
        .collect();
    Tensor::new(h.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::context::stream_seed(seed, salt as usize, 0))
}
