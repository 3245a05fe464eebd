//! Alternating optimization of the graph objective and the intra-session
//! objective, with the item table overwritten by the propagated embeddings
//! between the two phases.
//!
//! L2 regularization is applied per phase to the tensors that phase
//! updates: propagation weights, `W_g` and the item table in the graph
//! phase; the intra tensors and the item table in the intra phase.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::graph::{corrupt, gcn_forward, mi_objective, MiStep, SparseAdjacency};
use crate::intra::{intra_loss, IntraConfig, PositionalMode};
use crate::model::ModelState;
use crate::numerics::{seeded_rng, AdamConfig, AdamMoments, ParamTensor, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Intra-objective passes per graph pass.
    pub freq: usize,
    pub dropout: f64,
    pub seed: u64,
    pub gcn_layers: usize,
    /// Skip the graph phase entirely (intra-only ablation).
    pub disable_graph: bool,
    pub positional: PositionalMode,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            lr: 1e-3,
            batch: 512,
            epochs: 10,
            lambda1: 1.0,
            lambda2: 1e-6,
            freq: 1,
            dropout: 0.2,
            seed: 0,
            gcn_layers: 1,
            disable_graph: false,
            positional: PositionalMode::Decay,
            max_len: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut errs = Vec::new();
        if self.dim == 0 {
            errs.push("dim must be positive".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            errs.push("batch must be positive".into());
        }
        if self.freq == 0 {
            errs.push("freq must be at least 1".into());
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            errs.push(format!("lambda1 must be non-negative, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            errs.push(format!("lambda2 must be non-negative, got {}", self.lambda2));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(1..=3).contains(&self.gcn_layers) {
            errs.push(format!("gcn_layers must be 1..=3, got {}", self.gcn_layers));
        }
        if self.max_len == 0 {
            errs.push("max_len must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    pub fn intra_config(&self) -> IntraConfig {
        IntraConfig {
            positional: self.positional,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// `λ·Σθ²` over `tensors`, accumulating `2λθ` into their gradients.
pub fn regularization<'a>(tensors: impl IntoIterator<Item = &'a mut ParamTensor>, lambda: f64) -> f64 {
    tensors.into_iter().map(|p| p.add_l2(lambda)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Graph-phase loss (MI + L2); `None` when the graph phase is disabled.
    pub graph_loss: Option<f64>,
    /// Mean intra cross-entropy over all intra passes, before weighting.
    pub intra_loss: f64,
    pub graph_time: Duration,
    pub intra_time: Duration,
    pub intra_steps: usize,
}

/// Owns the model, the optimizer state and the RNG stream of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub state: ModelState,
    /// Moment estimates of the item table under the graph objective; the
    /// intra objective uses the ones stored in the tensor itself.
    graph_table_moments: AdamMoments,
    rng: SeededRng,
    epochs_done: usize,
    graph_steps: usize,
    intra_steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_items: usize) -> Result<Self> {
        config.validate().map_err(Error::Data)?;
        let mut rng = seeded_rng(config.seed);
        let state = ModelState::init(num_items, config.dim, config.gcn_layers, &mut rng);
        Ok(Self::from_state(config, state, rng))
    }

    fn from_state(config: TrainConfig, state: ModelState, rng: SeededRng) -> Self {
        let (m, d) = state.item_table.shape();
        Self {
            config,
            state,
            graph_table_moments: AdamMoments::zeros(m, d),
            rng,
            epochs_done: 0,
            graph_steps: 0,
            intra_steps: 0,
        }
    }

    /// Wraps an existing state; the RNG is seeded from `config.seed`.
    pub fn with_state(config: TrainConfig, state: ModelState) -> Result<Self> {
        config.validate().map_err(Error::Data)?;
        let rng = seeded_rng(config.seed);
        Ok(Self::from_state(config, state, rng))
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One optimizer step on the graph objective with a fresh corruption.
    pub fn graph_step(&mut self, adj: &SparseAdjacency) -> Result<MiStep> {
        let (_, perm) = corrupt(&self.state.item_table.value, &mut self.rng)?;
        let s = &mut self.state;
        s.item_table.zero_grad();
        for p in s.graph.tensors_mut() {
            p.zero_grad();
        }
        let mut step = mi_objective(adj, &mut s.item_table, &mut s.graph, &perm, 1.0)?;
        let lambda = self.config.lambda2;
        step.loss += regularization(
            s.graph.tensors_mut().into_iter().chain(std::iter::once(&mut s.item_table)),
            lambda,
        );
        self.graph_steps += 1;
        if !step.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                phase: "graph",
                step: self.graph_steps,
            });
        }
        let adam = self.config.adam();
        for p in s.graph.tensors_mut() {
            p.adam_step(&adam)?;
        }
        s.item_table.swap_moments(&mut self.graph_table_moments);
        let res = s.item_table.adam_step(&adam);
        s.item_table.swap_moments(&mut self.graph_table_moments);
        res?;
        Ok(step)
    }

    /// Graph pass followed by the table overwrite with the propagated
    /// embeddings.
    pub fn graph_phase(&mut self, adj: &SparseAdjacency) -> Result<f64> {
        if adj.num_nodes() != self.state.num_items() {
            return Err(Error::Data(format!(
                "adjacency has {} nodes but the model has {} items",
                adj.num_nodes(),
                self.state.num_items()
            )));
        }
        let step = self.graph_step(adj)?;
        let h = gcn_forward(adj, &self.state.item_table.value, &self.state.graph)?;
        self.state.item_table.value = h;
        Ok(step.loss)
    }

    /// One shuffled pass over `instances` in mini-batches. Returns the mean
    /// unweighted cross-entropy.
    pub fn intra_pass(&mut self, instances: &[Instance]) -> Result<f64> {
        if instances.is_empty() {
            return Err(Error::Data("no training instances".into()));
        }
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut self.rng);
        let cfg = self.config.intra_config();
        let adam = self.config.adam();
        let (l1, l2) = (self.config.lambda1, self.config.lambda2);
        let mut weighted = 0.0;
        for chunk in order.chunks(self.config.batch) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &instances[i]).collect();
            let s = &mut self.state;
            s.item_table.zero_grad();
            for p in s.intra.tensors_mut() {
                p.zero_grad();
            }
            let loss = intra_loss(&batch, &mut s.item_table, &mut s.intra, &cfg, l1, Some(&mut self.rng))?;
            let reg = regularization(
                s.intra.tensors_mut().into_iter().chain(std::iter::once(&mut s.item_table)),
                l2,
            );
            self.intra_steps += 1;
            if !(l1 * loss + reg).is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "intra",
                    step: self.intra_steps,
                });
            }
            for p in s.intra.tensors_mut() {
                p.adam_step(&adam)?;
            }
            s.item_table.adam_step(&adam)?;
            weighted += loss * batch.len() as f64;
        }
        Ok(weighted / instances.len() as f64)
    }

    /// Graph phase (unless disabled), table sync, then `freq` intra passes.
    pub fn train_epoch(&mut self, instances: &[Instance], adj: &SparseAdjacency) -> Result<EpochReport> {
        let t0 = Instant::now();
        let graph_loss = if self.config.disable_graph {
            None
        } else {
            Some(self.graph_phase(adj)?)
        };
        let graph_time = t0.elapsed();
        let t1 = Instant::now();
        let steps_before = self.intra_steps;
        let mut total = 0.0;
        for _ in 0..self.config.freq {
            total += self.intra_pass(instances)?;
        }
        self.epochs_done += 1;
        Ok(EpochReport {
            epoch: self.epochs_done,
            graph_loss,
            intra_loss: total / self.config.freq as f64,
            graph_time,
            intra_time: t1.elapsed(),
            intra_steps: self.intra_steps - steps_before,
        })
    }
}
