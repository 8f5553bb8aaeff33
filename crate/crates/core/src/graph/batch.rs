use std::sync::Arc;

use super::Graph;
use crate::autodiff::NeighborLists;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `B` graphs padded to a shared node count `n_max`.
///
/// Node `(b, n)` has flat index `b * n_max + n`. Connectivity is held as
/// neighbor lists over flat indices, so message passing costs `O(|E| C)`;
/// [`GraphBatch::adjacency`] materializes the dense `[B, n_max, n_max]` form.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    n_max: usize,
    node_counts: Vec<usize>,
    features: Tensor,
    mask: Tensor,
    neighbors: Arc<NeighborLists>,
    labels: Option<Tensor>,
}

impl GraphBatch {
    /// Pad to the largest graph in `graphs`.
    pub fn new(graphs: &[Graph]) -> Result<Self> {
        let n_max = graphs.iter().map(Graph::num_nodes).max().unwrap_or(0);
        Self::with_padding(graphs, n_max)
    }

    /// Pad to an explicit `n_max`, which must cover every graph.
    pub fn with_padding(graphs: &[Graph], n_max: usize) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::arg("cannot batch an empty list of graphs"))?;
        let c = first.feature_width();
        for (b, g) in graphs.iter().enumerate() {
            if g.feature_width() != c {
                return Err(Error::arg(format!(
                    "graph {b} has feature width {}, expected {c}",
                    g.feature_width()
                )));
            }
            if g.num_nodes() > n_max {
                return Err(Error::arg(format!(
                    "graph {b} has {} nodes, more than n_max = {n_max}",
                    g.num_nodes()
                )));
            }
        }
        let bsz = graphs.len();
        let mut features = vec![0.0; bsz * n_max * c];
        let mut mask = vec![0.0; bsz * n_max];
        let mut lists = vec![Vec::new(); bsz * n_max];
        let has_labels = graphs.iter().all(|g| g.labels().is_some());
        let mut labels = vec![0.0; bsz * n_max];
        for (b, g) in graphs.iter().enumerate() {
            let base = b * n_max;
            let src = g.features().data();
            features[base * c..(base + g.num_nodes()) * c].copy_from_slice(src);
            for v in 0..g.num_nodes() {
                mask[base + v] = 1.0;
            }
            for (v, nb) in g.neighbors().into_iter().enumerate() {
                lists[base + v] = nb.into_iter().map(|u| base + u).collect();
            }
            if let Some(l) = g.labels() {
                labels[base..base + g.num_nodes()].copy_from_slice(l);
            }
        }
        Ok(Self {
            n_max,
            node_counts: graphs.iter().map(Graph::num_nodes).collect(),
            features: Tensor::new(vec![bsz, n_max, c], features)?,
            mask: Tensor::new(vec![bsz, n_max, 1], mask)?,
            neighbors: Arc::new(NeighborLists::from_adjacency(lists)),
            labels: if has_labels {
                Some(Tensor::new(vec![bsz, n_max, 1], labels)?)
            } else {
                None
            },
        })
    }

    pub fn batch_size(&self) -> usize {
        self.node_counts.len()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn total_nodes(&self) -> usize {
        self.node_counts.iter().sum()
    }

    pub fn feature_width(&self) -> usize {
        self.features.shape()[2]
    }

    /// `[B, n_max, C]`, zero at padded positions.
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// `[B, n_max, 1]` with 1 at real nodes and 0 at padding.
    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn node_mask(&self) -> Vec<bool> {
        self.mask.data().iter().map(|&m| m != 0.0).collect()
    }

    pub fn is_real(&self, b: usize, n: usize) -> bool {
        n < self.node_counts[b]
    }

    pub fn neighbors(&self) -> &Arc<NeighborLists> {
        &self.neighbors
    }

    /// Per-node labels as `[B, n_max, 1]` when every graph carries them.
    pub fn labels(&self) -> Option<&Tensor> {
        self.labels.as_ref()
    }

    /// Dense `[B, n_max, n_max]` adjacency.
    pub fn adjacency(&self) -> Tensor {
        let n = self.n_max;
        let bsz = self.batch_size();
        let mut a = Tensor::zeros(vec![bsz, n, n]);
        for b in 0..bsz {
            for v in 0..n {
                for &u in self.neighbors.neighbors(b * n + v) {
                    a.set(&[b, v, u - b * n], 1.0);
                }
            }
        }
        a
    }

    /// Replace node features. `features` must be `[B, n_max, C']`; padded
    /// rows are zeroed.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        let want = [self.batch_size(), self.n_max];
        if features.rank() != 3 || features.shape()[..2] != want {
            return Err(Error::shape("batch features", features.shape(), &want));
        }
        let masked = features.zip_map(&self.mask, |x, m| x * m)?;
        Ok(Self {
            features: masked,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path, star};

    #[test]
    fn pads_to_largest_graph() {
        let b = GraphBatch::new(&[path(3).unwrap(), star(5).unwrap()]).unwrap();
        assert_eq!(b.n_max(), 5);
        assert_eq!(b.node_counts(), &[3, 5]);
        let mask = b.node_mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 8);
        assert_eq!(b.features().shape(), &[2, 5, 1]);
    }

    #[test]
    fn single_graph_has_no_padding() {
        let b = GraphBatch::new(&[path(4).unwrap()]).unwrap();
        assert_eq!(b.batch_size(), 1);
        assert!(b.node_mask().iter().all(|&m| m));
    }

    #[test]
    fn padded_rows_and_columns_are_zero() {
        let b = GraphBatch::with_padding(&[path(3).unwrap(), star(5).unwrap()], 7).unwrap();
        let a = b.adjacency();
        let f = b.features();
        for g in 0..2 {
            for v in 0..7 {
                let real_v = b.is_real(g, v);
                if !real_v {
                    assert_eq!(f.at(&[g, v, 0]), 0.0);
                }
                for u in 0..7 {
                    if !real_v || !b.is_real(g, u) {
                        assert_eq!(a.at(&[g, v, u]), 0.0);
                    }
                }
            }
        }
        assert_eq!(a.sum_all(), 2.0 * (2.0 + 4.0));
    }

    #[test]
    fn rejects_mixed_widths_and_empty() {
        assert!(GraphBatch::new(&[]).is_err());
        let mut g = path(3).unwrap();
        g.set_features(Tensor::ones(vec![3, 2])).unwrap();
        assert!(GraphBatch::new(&[g, path(3).unwrap()]).is_err());
    }
}
