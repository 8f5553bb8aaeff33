use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cycle, erdos_renyi, path, star, two_triangles, Graph, GraphBatch};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Predict each node's degree on `{path(3), star(5)}`.
    DegreeRegression,
    /// Tell a 6-cycle (target 0) from two disjoint triangles (target 1).
    PairDistinguish,
    /// Graph-level regression on random graphs, target a nonlinear function
    /// of the degree histogram.
    SyntheticGraphRegression,
}

impl TaskKind {
    pub fn node_level(self) -> bool {
        matches!(self, TaskKind::DegreeRegression)
    }
}

fn default_num_graphs() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Dataset size for the synthetic regression task.
    #[serde(default = "default_num_graphs")]
    pub num_graphs: usize,
    /// Seed of the dataset, independent of the model seed.
    #[serde(default)]
    pub data_seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            num_graphs: default_num_graphs(),
            data_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TaskKind::SyntheticGraphRegression && self.num_graphs == 0 {
            return Err(Error::arg("task.num_graphs must be >= 1"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Task> {
        self.validate()?;
        let (graphs, targets) = match self.kind {
            TaskKind::DegreeRegression => {
                let graphs = vec![path(3)?, star(5)?];
                let targets = graphs
                    .iter()
                    .map(|g| g.degrees().into_iter().map(|d| d as f64).collect())
                    .collect();
                (graphs, targets)
            }
            TaskKind::PairDistinguish => (vec![cycle(6)?, two_triangles()], vec![vec![0.0], vec![1.0]]),
            TaskKind::SyntheticGraphRegression => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
                let mut graphs = Vec::with_capacity(self.num_graphs);
                let mut targets = Vec::with_capacity(self.num_graphs);
                for _ in 0..self.num_graphs {
                    let n = rng.random_range(8..=16);
                    let g = erdos_renyi(n, 0.25, rng.random())?;
                    targets.push(vec![degree_histogram_target(&g)]);
                    graphs.push(g);
                }
                (graphs, targets)
            }
        };
        Ok(Task {
            kind: self.kind,
            graphs,
            targets,
        })
    }
}

/// `sum_d (1 + d) * (h_d / N)^2` for the degree histogram `h`.
pub fn degree_histogram_target(g: &Graph) -> f64 {
    let degrees = g.degrees();
    let max = degrees.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; max + 1];
    for d in degrees {
        hist[d] += 1;
    }
    let n = g.num_nodes() as f64;
    hist.iter()
        .enumerate()
        .map(|(d, &h)| (1.0 + d as f64) * (h as f64 / n).powi(2))
        .sum()
}

/// Graphs with their targets: one per node for node-level tasks, one per
/// graph otherwise.
#[derive(Debug, Clone)]
pub struct Task {
    pub kind: TaskKind,
    pub graphs: Vec<Graph>,
    pub targets: Vec<Vec<f64>>,
}

/// A batch of a task: inputs, targets and the mask of counted entries.
pub struct TaskBatch {
    pub batch: GraphBatch,
    /// `[B, n, 1]` for node-level tasks, `[B, 1]` otherwise.
    pub target: Tensor,
    pub mask: Tensor,
}

impl Task {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn node_level(&self) -> bool {
        self.kind.node_level()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<TaskBatch> {
        let graphs: Vec<Graph> = idx.iter().map(|&i| self.graphs[i].clone()).collect();
        let batch = GraphBatch::new(&graphs)?;
        let bsz = idx.len();
        if self.node_level() {
            let n = batch.n_max();
            let mut target = vec![0.0; bsz * n];
            for (b, &i) in idx.iter().enumerate() {
                for (v, &t) in self.targets[i].iter().enumerate() {
                    target[b * n + v] = t;
                }
            }
            Ok(TaskBatch {
                target: Tensor::new(vec![bsz, n, 1], target)?,
                mask: batch.mask().clone(),
                batch,
            })
        } else {
            let target = idx.iter().map(|&i| self.targets[i][0]).collect();
            Ok(TaskBatch {
                target: Tensor::new(vec![bsz, 1], target)?,
                mask: Tensor::ones(vec![bsz, 1]),
                batch,
            })
        }
    }

    pub fn full_batch(&self) -> Result<TaskBatch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_task_targets() {
        let task = TaskSpec::new(TaskKind::DegreeRegression).build().unwrap();
        assert_eq!(task.targets, vec![vec![1.0, 2.0, 1.0], vec![4.0, 1.0, 1.0, 1.0, 1.0]]);
        let tb = task.full_batch().unwrap();
        assert_eq!(tb.target.shape(), &[2, 5, 1]);
        assert_eq!(tb.target.at(&[0, 3, 0]), 0.0);
        assert_eq!(tb.mask.sum_all(), 8.0);
    }

    #[test]
    fn synthetic_task_is_seeded() {
        let spec = TaskSpec {
            num_graphs: 20,
            ..TaskSpec::new(TaskKind::SyntheticGraphRegression)
        };
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.full_batch().unwrap().target.shape(), &[20, 1]);
    }

    #[test]
    fn histogram_target_by_hand() {
        // path(3): degrees [1, 2, 1] -> h_1 = 2, h_2 = 1
        let t = degree_histogram_target(&path(3).unwrap());
        assert!((t - (2.0 * 4.0 / 9.0 + 3.0 / 9.0)).abs() < 1e-15);
    }
}
