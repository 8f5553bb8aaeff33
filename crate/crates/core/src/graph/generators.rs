//! Deterministic graph families used by the failure cases and expressiveness
//! checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn path(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::arg(format!("path needs n >= 2, got {n}")));
    }
    Graph::new(n, (0..n - 1).map(|i| (i, i + 1)).collect())
}

pub fn cycle(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::arg(format!("cycle needs n >= 3, got {n}")));
    }
    Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)).collect())
}

/// Star with node 0 as the centre and `n - 1` leaves.
pub fn star(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::arg(format!("star needs n >= 2, got {n}")));
    }
    Graph::new(n, (1..n).map(|i| (0, i)).collect())
}

/// Circulant skip-link graph: cycle edges `{i, i+1}` plus skip edges
/// `{i, i+skip}` (indices mod `n`).
///
/// With `skip = n/2` the skip edges pair up and the graph is 3-regular;
/// otherwise it is 4-regular with `2n` edges. `n = 5` is rejected since
/// every admissible skip then yields the complete graph `K5`.
pub fn csl(n: usize, skip: usize) -> Result<Graph> {
    if n < 6 {
        return Err(Error::arg(format!(
            "csl needs n >= 6 (n = 5 degenerates to K5), got n = {n}"
        )));
    }
    if skip < 2 || skip > n - 2 {
        return Err(Error::arg(format!(
            "csl skip must satisfy 2 <= skip <= n - 2, got skip = {skip}, n = {n}"
        )));
    }
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let mut seen: std::collections::BTreeSet<(usize, usize)> =
        edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    for i in 0..n {
        let j = (i + skip) % n;
        if seen.insert((i.min(j), i.max(j))) {
            edges.push((i, j));
        }
    }
    Graph::new(n, edges)
}

/// G(n, p) with each unordered pair included independently.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges)
}

pub fn disjoint_union(parts: &[Graph]) -> Result<Graph> {
    let width = parts.first().map_or(1, Graph::feature_width);
    let mut edges = Vec::new();
    let mut feats = Vec::new();
    let mut offset = 0;
    for g in parts {
        if g.feature_width() != width {
            return Err(Error::arg("disjoint union of graphs with different feature widths"));
        }
        edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        feats.extend_from_slice(g.features().data());
        offset += g.num_nodes();
    }
    Graph::with_features(offset, edges, Tensor::new(vec![offset, width], feats)?)
}

/// Two disjoint triangles; 1-WL-equivalent to the 6-cycle.
pub fn two_triangles() -> Graph {
    let c3 = cycle(3).expect("valid size");
    disjoint_union(&[c3.clone(), c3]).expect("same widths")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_and_cycle_degrees() {
        assert_eq!(path(3).unwrap().degrees(), vec![1, 2, 1]);
        assert_eq!(cycle(3).unwrap().degrees(), vec![2, 2, 2]);
        let c6 = cycle(6).unwrap();
        assert_eq!(c6.num_edges(), 6);
        assert!(c6.degrees().iter().all(|&d| d == 2));
        assert!(path(1).is_err());
        assert!(cycle(2).is_err());
    }

    #[test]
    fn star_center_degree() {
        let s = star(5).unwrap();
        assert_eq!(s.degrees(), vec![4, 1, 1, 1, 1]);
    }

    #[test]
    fn csl_is_four_regular() {
        for (n, s) in [(8, 2), (8, 3), (11, 2), (41, 9)] {
            let g = csl(n, s).unwrap();
            assert_eq!(g.num_edges(), 2 * n);
            assert!(g.degrees().iter().all(|&d| d == 4), "csl({n},{s})");
        }
    }

    #[test]
    fn csl_half_skip_is_three_regular() {
        let g = csl(8, 4).unwrap();
        assert_eq!(g.num_edges(), 12);
        assert!(g.degrees().iter().all(|&d| d == 3));
    }

    #[test]
    fn csl_rejects_degenerate_inputs() {
        assert!(csl(5, 2).is_err());
        assert!(csl(8, 1).is_err());
        assert!(csl(8, 7).is_err());
    }

    #[test]
    fn er_extremes() {
        assert_eq!(erdos_renyi(10, 0.0, 3).unwrap().num_edges(), 0);
        assert_eq!(erdos_renyi(10, 1.0, 3).unwrap().num_edges(), 45);
        assert!(erdos_renyi(10, 1.5, 3).is_err());
    }

    #[test]
    fn er_is_seeded() {
        assert_eq!(erdos_renyi(30, 0.2, 7).unwrap(), erdos_renyi(30, 0.2, 7).unwrap());
        assert_ne!(erdos_renyi(30, 0.2, 7).unwrap(), erdos_renyi(30, 0.2, 8).unwrap());
    }

    #[test]
    fn er_mean_edge_count_matches_expectation() {
        // Monte Carlo over seeds: E[|E|] = p n (n - 1) / 2 = 2 (n - 1) for p = 4/n.
        let n = 1000;
        let p = 4.0 / n as f64;
        let total: usize = (0..100).map(|s| erdos_renyi(n, p, s).unwrap().num_edges()).sum();
        let mean = total as f64 / 100.0;
        let expected = 2.0 * (n as f64 - 1.0);
        assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
    }
}
