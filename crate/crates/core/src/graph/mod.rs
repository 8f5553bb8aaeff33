//! Undirected graphs, padded batches, synthetic generators and 1-WL.

mod batch;
pub mod generators;
pub mod io;
pub mod wl;

pub use batch::GraphBatch;
pub use generators::{csl, cycle, disjoint_union, erdos_renyi, path, star, two_triangles};
pub use wl::{wl_equivalent, wl_refinement, wl_refinement_joint, ColorHistogram};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pad `graphs` into one batch.
pub fn batch_graphs(graphs: &[Graph]) -> Result<GraphBatch> {
    GraphBatch::new(graphs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Option<Vec<f64>>,
}

impl Graph {
    /// Build a graph with the all-ones feature column.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::with_features(num_nodes, edges, Tensor::ones(vec![num_nodes, 1]))
    }

    pub fn with_features(num_nodes: usize, edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::arg(format!(
                    "edge {i} ({u}, {v}) has an endpoint >= num_nodes {num_nodes}"
                )));
            }
            if u == v {
                return Err(Error::arg(format!("edge {i} is a self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::arg(format!("edge {i} ({u}, {v}) is a duplicate")));
            }
        }
        if features.rank() != 2 || features.shape()[0] != num_nodes {
            return Err(Error::shape("graph features", features.shape(), &[num_nodes]));
        }
        Ok(Self {
            num_nodes,
            edges,
            features,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::shape("graph labels", &[labels.len()], &[self.num_nodes]));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn set_features(&mut self, features: Tensor) -> Result<()> {
        if features.rank() != 2 || features.shape()[0] != self.num_nodes {
            return Err(Error::shape("graph features", features.shape(), &[self.num_nodes]));
        }
        self.features = features;
        Ok(())
    }

    /// Sorted neighbor list per node.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn adjacency(&self) -> Tensor {
        let n = self.num_nodes;
        let mut a = Tensor::zeros(vec![n, n]);
        for &(u, v) in &self.edges {
            a.set(&[u, v], 1.0);
            a.set(&[v, u], 1.0);
        }
        a
    }

    /// Relabel nodes: old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::arg("not a permutation"));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let c = self.feature_width();
        let mut feats = Tensor::zeros(vec![n, c]);
        for i in 0..n {
            for j in 0..c {
                feats.set(&[perm[i], j], self.features.at(&[i, j]));
            }
        }
        let mut g = Graph::with_features(n, edges, feats)?;
        if let Some(labels) = &self.labels {
            let mut l = vec![0.0; n];
            for i in 0..n {
                l[perm[i]] = labels[i];
            }
            g.labels = Some(l);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::new(3, vec![(0, 3)]).is_err());
        assert!(Graph::new(3, vec![(1, 1)]).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn adjacency_is_symmetric_zero_one() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (3, 0)]).unwrap();
        let a = g.adjacency();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.at(&[i, j]), a.at(&[j, i]));
                assert!(a.at(&[i, j]) == 0.0 || a.at(&[i, j]) == 1.0);
            }
        }
        assert_eq!(a.sum_all(), 6.0);
    }
}
