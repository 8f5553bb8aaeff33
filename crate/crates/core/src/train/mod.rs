//! Synthetic tasks, losses, optimizers and the training loop, plus the
//! gradient-check runner and the timing benchmark.

mod grad_suite;
mod loss;
mod optim;
mod task;
mod timing;

pub use grad_suite::{check_param, probe_kink_margin, run_grad_suite, GradEntry};
pub use loss::{loss, mae_loss, mse_loss, LossKind};
pub use optim::{Optimizer, OptimizerKind};
pub use task::{degree_histogram_target, Task, TaskBatch, TaskKind, TaskSpec};
pub use timing::{benchmark, time_forward_backward, TimingRow};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::context::{stream_seed, ForwardCtx, RnfSource};
use crate::error::{Error, Result};
use crate::mpnn::{ModelStack, Pooling, StackSpec};
use crate::params::ParamStore;

/// Stream index for minibatch shuffling, apart from every layer slot.
const SHUFFLE_STREAM: usize = usize::MAX;
/// Root-seed offset of the random features used for evaluation.
const EVAL_STREAM: u64 = 0x5EED_E7A1;

fn default_epochs() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Graphs per step; `None` trains on the full dataset each step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: None,
            lr: default_lr(),
            optimizer: OptimizerKind::Adam,
            loss: LossKind::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("train.epochs must be >= 1"));
        }
        // lr = 0 is allowed as a frozen-model control.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::arg("train.batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Mean training loss per epoch, epochs counted from 1.
pub type History = Vec<(usize, f64)>;

fn check_pairing(stack: &ModelStack, task: &Task) -> Result<()> {
    if stack.output_width() != 1 {
        return Err(Error::arg(format!(
            "model output width must be 1 for task {:?}, got {}",
            task.kind,
            stack.output_width()
        )));
    }
    let pooled = stack.pooling != Pooling::None;
    if task.node_level() == pooled {
        return Err(Error::arg(if pooled {
            "node-level task needs model.pooling = \"none\""
        } else {
            "graph-level task needs model.pooling = \"sum\" or \"mean\""
        }));
    }
    if let Some(g) = task.graphs.first() {
        if g.feature_width() != stack.input_width {
            return Err(Error::arg(format!(
                "model.input_width is {} but the task features have width {}",
                stack.input_width,
                g.feature_width()
            )));
        }
    }
    Ok(())
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical { location, detail, .. } => Error::Numerical { epoch, location, detail },
        other => other,
    }
}

/// Train `stack` in place. Random node features are redrawn every step;
/// shuffling and features derive from `seed` only.
pub fn train(stack: &ModelStack, store: &mut ParamStore, task: &Task, cfg: &TrainConfig, seed: u64) -> Result<History> {
    cfg.validate()?;
    check_pairing(stack, task)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let n = task.len();
    let bs = cfg.batch_size.unwrap_or(n).min(n);
    let full = if bs == n { Some(task.full_batch()?) } else { None };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let chunks: Vec<Vec<usize>> = if full.is_some() {
            vec![order.clone()]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, SHUFFLE_STREAM, epoch as u64));
            order.shuffle(&mut rng);
            order.chunks(bs).map(|c| c.to_vec()).collect()
        };
        let mut total = 0.0;
        for idx in &chunks {
            let owned;
            let tb = match &full {
                Some(tb) => tb,
                None => {
                    owned = task.batch(idx)?;
                    &owned
                }
            };
            let grads = {
                let tape = Tape::new();
                let ctx = ForwardCtx::new(&tape, store, RnfSource::Seeded { root: seed, step });
                let out = stack.forward(&ctx, &tb.batch).map_err(|e| with_epoch(e, epoch))?;
                let l = loss(cfg.loss, &ctx, out.prediction, &tb.target, &tb.mask)?;
                let value = l.value().item();
                if !value.is_finite() {
                    return Err(Error::Numerical {
                        epoch,
                        location: "loss".into(),
                        detail: format!("loss is {value}"),
                    });
                }
                total += value;
                let grads = ctx.param_grads(&l.backward()?);
                if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                    return Err(Error::Numerical {
                        epoch,
                        location: store.param(*id).name.clone(),
                        detail: "non-finite gradient".into(),
                    });
                }
                grads
            };
            opt.step(store, &grads);
            step += 1;
        }
        history.push((epoch, total / chunks.len() as f64));
    }
    Ok(history)
}

/// Full-dataset metrics with fixed evaluation features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

pub fn evaluate(stack: &ModelStack, store: &ParamStore, task: &Task, seed: u64) -> Result<Metrics> {
    check_pairing(stack, task)?;
    let tb = task.full_batch()?;
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, store, RnfSource::Seeded { root: seed ^ EVAL_STREAM, step: 0 });
    let pred = stack.forward(&ctx, &tb.batch)?.prediction;
    let mae = mae_loss(&ctx, pred, &tb.target, &tb.mask)?.value().item();
    let accuracy = (task.kind == TaskKind::PairDistinguish).then(|| {
        let p = pred.value();
        let hits = p
            .data()
            .iter()
            .zip(tb.target.data())
            .filter(|(p, t)| (**p > 0.5) == (**t > 0.5))
            .count();
        hits as f64 / task.len() as f64
    });
    Ok(Metrics { mae, accuracy })
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream: initialisation, shuffling, features.
    #[serde(default)]
    pub seed: u64,
    pub task: TaskSpec,
    pub model: StackSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Results path; the CSV history goes next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate().map_err(|e| Error::arg(format!("model: {e}")))?;
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: History,
    pub metrics: Metrics,
    pub wall_time_s: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let task = cfg.task.build()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stack = cfg.model.build(&mut store, &mut rng)?;
    check_pairing(&stack, &task)?;
    let history = train(&stack, &mut store, &task, &cfg.train, cfg.seed)?;
    let metrics = evaluate(&stack, &store, &task, cfg.seed)?;
    Ok(RunOutcome {
        history,
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpnn::{Activation, GnnKind, LayerSpec, NormChoice};
    use crate::norm::NormVariant;

    fn degree_model(norm: NormChoice) -> StackSpec {
        StackSpec {
            input_width: 1,
            layers: vec![LayerSpec {
                gnn: GnnKind::Graphconv,
                width: 1,
                norm,
                activation: Activation::Relu,
            }],
            pooling: Pooling::None,
            readout: None,
            rnf_pe: 0,
        }
    }

    fn config(norm: NormChoice, epochs: usize, lr: f64) -> ExperimentConfig {
        ExperimentConfig {
            seed: 1,
            task: TaskSpec::new(TaskKind::DegreeRegression),
            model: degree_model(norm),
            train: TrainConfig {
                epochs,
                lr,
                ..TrainConfig::default()
            },
            output: None,
        }
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let out = run_experiment(&config(NormChoice::zoo(NormVariant::Identity), 5, 0.0)).unwrap();
        assert!(out.history.windows(2).all(|w| w[0].1 == w[1].1));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = config(NormChoice::zoo(NormVariant::Identity), 20, 1e-2);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn linear_model_descends() {
        let mut cfg = config(NormChoice::zoo(NormVariant::Identity), 10, 1e-2);
        cfg.model.layers[0].activation = Activation::Identity;
        cfg.train.loss = LossKind::Mse;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.history.windows(2).all(|w| w[1].1 < w[0].1), "{:?}", out.history);
    }

    #[test]
    fn pooling_mismatch_is_rejected() {
        let mut cfg = config(NormChoice::zoo(NormVariant::Identity), 1, 1e-3);
        cfg.model.pooling = Pooling::Sum;
        assert!(matches!(run_experiment(&cfg), Err(Error::Argument(_))));
    }
}
