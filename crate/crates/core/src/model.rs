//! Block-chained training model.
//!
//! Each training step appends one block: the input window is standardized,
//! lifted to leaf states, folded into an LSTM tree that starts from the
//! carried state, read out by a linear head, squashed with tanh and scored
//! with MSE. Block losses are linked into a running sum. Backward starts at
//! the running sum and is restricted to the newest block. Every `intvl`
//! steps the carried state is zeroed and the accumulated graph released.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::functions::{batch_stats, standardize, DEFAULT_EPSILON};
use crate::graph::{BlockId, Graph, TraversalTrace, VarId};
use crate::lstm::{build_lstm_tree, CellVariant, LstmState, SLstmParams};
use crate::tensor::{seeded_rng, Tensor};

/// Twenty-five samples per sine period, so 50-step averages of the loss
/// always cover whole periods.
pub const DEFAULT_SINE_STEP: f64 = 2.0 * std::f64::consts::PI / 25.0;

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Steps between state initializations.
    pub intvl: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
    /// Leaf samples per block.
    pub seq_len: usize,
    /// Phase increment between consecutive sine samples.
    pub sine_step: f64,
    /// Samples used for the standardization statistics; the block's leaves are
    /// the last `seq_len` of them.
    pub batch_m: usize,
    pub epsilon: f64,
    pub eq17_variant: CellVariant,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            intvl: 10,
            epochs: 1000,
            hidden: 16,
            lr: 0.05,
            seed: 42,
            seq_len: 4,
            sine_step: DEFAULT_SINE_STEP,
            batch_m: 16,
            epsilon: DEFAULT_EPSILON,
            eq17_variant: CellVariant::AsPrinted,
            clip: None,
            init_scale: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("intvl", self.intvl),
            ("epochs", self.epochs),
            ("hidden", self.hidden),
            ("seq_len", self.seq_len),
            ("batch_m", self.batch_m),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        let positive_real = [
            ("lr", self.lr),
            ("sine_step", self.sine_step),
            ("epsilon", self.epsilon),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive_real {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Argument(format!("clip must be positive, got {c}")));
            }
        }
        if self.batch_m < self.seq_len {
            return Err(Error::Argument(format!(
                "batch_m ({}) must be at least seq_len ({})",
                self.batch_m, self.seq_len
            )));
        }
        Ok(())
    }

    /// Samples consumed by one block.
    pub fn window(&self) -> usize {
        self.batch_m.max(self.seq_len)
    }
}

/// Trainable parameters of the block model.
#[derive(Clone, Copy, Debug)]
pub struct ModelParams {
    pub cell: SLstmParams,
    /// Lifts one standardized sample to a leaf hidden state (`hidden x 1`).
    pub lift_w: VarId,
    pub lift_b: VarId,
    /// Reads the tree root out to a scalar (`1 x hidden`).
    pub head_w: VarId,
    pub head_b: VarId,
}

impl ModelParams {
    fn init(graph: &mut Graph, config: &TrainConfig) -> Result<Self> {
        let mut rng = seeded_rng(config.seed);
        let h = config.hidden;
        let s = config.init_scale;
        let cell = SLstmParams::init(graph, h, s, &mut rng)?;
        let lift_w = graph.param(Tensor::rand_init(h, 1, s, &mut rng)?)?;
        let lift_b = graph.param(Tensor::rand_init(h, 1, s, &mut rng)?)?;
        let head_w = graph.param(Tensor::rand_init(1, h, s, &mut rng)?)?;
        let head_b = graph.param(Tensor::rand_init(1, 1, s, &mut rng)?)?;
        Ok(Self {
            cell,
            lift_w,
            lift_b,
            head_w,
            head_b,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockRecord {
    pub id: BlockId,
    /// Head output (pre-tanh); carries the block id.
    pub root: VarId,
    pub prediction: VarId,
    pub loss: VarId,
    /// State handed to the next block.
    pub state: LstmState,
}

/// Forward products of one block before it is scored.
struct BuiltBlock {
    id: BlockId,
    root: VarId,
    prediction: VarId,
    state: LstmState,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub elapsed: Duration,
}

pub struct BlockChain {
    graph: Graph,
    params: ModelParams,
    config: TrainConfig,
    blocks: Vec<BlockRecord>,
    running_loss: Option<VarId>,
    carried: LstmState,
    steps_since_reset: usize,
    next_block: u64,
    steps_taken: usize,
}

impl BlockChain {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut graph = Graph::new();
        let params = ModelParams::init(&mut graph, &config)?;
        let carried = LstmState::zeros(&mut graph, config.hidden);
        Ok(Self {
            graph,
            params,
            config,
            blocks: Vec::new(),
            running_loss: None,
            carried,
            steps_since_reset: 0,
            next_block: 1,
            steps_taken: 0,
        })
    }

    /// A fresh chain (zero state, empty graph) with the same parameter values.
    pub fn fresh_copy(&self) -> Result<Self> {
        let mut copy = Self::new(self.config.clone())?;
        copy.set_param_values(&self.param_values())?;
        Ok(copy)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn blocks(&self) -> &[BlockRecord] {
        &self.blocks
    }

    pub fn running_loss(&self) -> Option<VarId> {
        self.running_loss
    }

    pub fn steps_since_reset(&self) -> usize {
        self.steps_since_reset
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.graph
            .params()
            .map(|p| self.graph.value(p).clone())
            .collect()
    }

    pub fn set_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.graph.param_count() {
            return Err(Error::Argument(format!(
                "expected {} parameter tensors, got {}",
                self.graph.param_count(),
                values.len()
            )));
        }
        let ids: Vec<VarId> = self.graph.params().collect();
        for (id, v) in ids.into_iter().zip(values) {
            self.graph.set_value(id, v.clone())?;
        }
        Ok(())
    }

    /// Current parameter gradients (zeros where nothing arrived).
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.graph
            .params()
            .map(|p| self.graph.grad_or_zeros(p))
            .collect()
    }

    /// Values `(c, h)` of the state the next block will start from.
    pub fn carried_state(&self) -> (Tensor, Tensor) {
        (
            self.graph.value(self.carried.c).clone(),
            self.graph.value(self.carried.h).clone(),
        )
    }

    /// Replaces the carried state by constants.
    pub fn set_carried_state(&mut self, c: Tensor, h: Tensor) -> Result<()> {
        let hidden = self.config.hidden;
        for t in [&c, &h] {
            if t.shape() != (hidden, 1) {
                return Err(Error::Dimension {
                    op: "carried state",
                    lhs: (hidden, 1),
                    rhs: t.shape(),
                });
            }
        }
        self.carried = LstmState::constant(&mut self.graph, c, h)?;
        Ok(())
    }

    fn build_block(&mut self, inputs: &Tensor) -> Result<BuiltBlock> {
        let window = self.config.window();
        if inputs.shape() != (window, 1) {
            return Err(Error::Dimension {
                op: "block inputs",
                lhs: (window, 1),
                rhs: inputs.shape(),
            });
        }
        let stats = batch_stats(inputs, self.config.epsilon)?;
        let standardized = standardize(inputs, &stats)?;

        let id = BlockId(self.next_block);
        self.next_block += 1;
        self.graph.set_block_tag(Some(id));
        let built = self.build_tree_and_head(&standardized, id);
        self.graph.set_block_tag(None);
        let (root, state) = built?;
        let prediction = self.graph.tanh(root)?;
        Ok(BuiltBlock {
            id,
            root,
            prediction,
            state,
        })
    }

    fn build_tree_and_head(
        &mut self,
        standardized: &Tensor,
        id: BlockId,
    ) -> Result<(VarId, LstmState)> {
        let p = self.params;
        let hidden = self.config.hidden;
        let first = standardized.len() - self.config.seq_len;
        let mut leaves = Vec::with_capacity(self.config.seq_len + 1);
        leaves.push(self.carried);
        for &x in &standardized.data()[first..] {
            let xv = self.graph.constant(Tensor::scalar(x));
            let h = self.graph.linear(p.lift_w, xv, p.lift_b)?;
            let c = self.graph.constant(Tensor::zeros(hidden, 1));
            leaves.push(LstmState { c, h });
        }
        let tree = build_lstm_tree(&mut self.graph, &p.cell, &leaves, self.config.eq17_variant)?;
        let root = self.graph.linear(p.head_w, tree.root, p.head_b)?;
        self.graph.set_block_id(root, id);
        Ok((root, tree.state))
    }

    /// Builds and scores one block and links its loss into the running sum.
    pub fn append_block(&mut self, inputs: &Tensor, target: &Tensor) -> Result<VarId> {
        let built = self.build_block(inputs)?;
        let loss = self.graph.mse(built.prediction, target)?;
        let running = match self.running_loss {
            Some(prev) => self.graph.sum_loss(&[prev, loss])?,
            None => self.graph.sum_loss(&[loss])?,
        };
        self.running_loss = Some(running);
        self.blocks.push(BlockRecord {
            id: built.id,
            root: built.root,
            prediction: built.prediction,
            loss,
            state: built.state,
        });
        self.carried = built.state;
        self.steps_since_reset += 1;
        Ok(loss)
    }

    /// Backward from the running loss, entering only the latest block.
    pub fn constrained_backward(&mut self) -> Result<TraversalTrace> {
        let latest = self.latest_block()?;
        let root = self.running_loss.expect("blocks imply a running loss");
        self.graph
            .backward(root, &Tensor::scalar(1.0), Some(latest))
    }

    /// Backward from the running loss through every block.
    pub fn unconstrained_backward(&mut self) -> Result<TraversalTrace> {
        self.latest_block()?;
        let root = self.running_loss.expect("blocks imply a running loss");
        self.graph.backward(root, &Tensor::scalar(1.0), None)
    }

    /// The newest block id. The registry is ordered, so this is its last entry.
    pub fn latest_block(&self) -> Result<BlockId> {
        self.blocks
            .last()
            .map(|b| b.id)
            .ok_or_else(|| Error::State("no block has been appended".into()))
    }

    pub fn zero_grads(&mut self) {
        if let Some(root) = self.running_loss {
            self.graph.zero_grads(&[root]);
        }
    }

    /// Plain SGD, `w <- w - lr * grad`, with optional global-norm clipping.
    pub fn sgd_update(&mut self, lr: f64) -> Result<()> {
        let ids: Vec<VarId> = self.graph.params().collect();
        let scale = match self.config.clip {
            Some(limit) => {
                let norm = ids
                    .iter()
                    .filter_map(|&p| self.graph.grad(p))
                    .flat_map(|g| g.data().iter())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for id in ids {
            let Some(g) = self.graph.grad(id) else {
                continue;
            };
            let updated = self.graph.value(id).sub(&g.scale(lr * scale))?;
            self.graph.set_value(id, updated)?;
        }
        Ok(())
    }

    /// Zeroes the carried state and releases every non-parameter node.
    pub fn reset_state(&mut self) {
        self.graph.release();
        self.blocks.clear();
        self.running_loss = None;
        self.carried = LstmState::zeros(&mut self.graph, self.config.hidden);
        self.steps_since_reset = 0;
    }

    /// Append, constrained backward, update, zero, and reset when the
    /// interval is complete.
    pub fn train_step(&mut self, inputs: &Tensor, target: &Tensor, lr: f64) -> Result<StepOutcome> {
        let start = Instant::now();
        self.steps_taken += 1;
        let loss_var = self.append_block(inputs, target)?;
        let loss = self.graph.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.steps_taken,
                loss,
            });
        }
        self.constrained_backward()?;
        self.sgd_update(lr)?;
        self.zero_grads();
        if self.steps_since_reset >= self.config.intvl {
            self.reset_state();
        }
        Ok(StepOutcome {
            loss,
            elapsed: start.elapsed(),
        })
    }

    /// Forward-only step: returns the prediction for the window and carries
    /// the state on. The graph is collapsed to parameters plus the carried
    /// state afterwards; the interval reset applies as in training.
    pub fn infer_step(&mut self, inputs: &Tensor) -> Result<f64> {
        let built = self.build_block(inputs)?;
        let prediction = self.graph.value(built.prediction).item();
        let c = self.graph.value(built.state.c).clone();
        let h = self.graph.value(built.state.h).clone();
        self.graph.release();
        self.blocks.clear();
        self.running_loss = None;
        self.steps_since_reset += 1;
        if self.steps_since_reset >= self.config.intvl {
            self.reset_state();
        } else {
            self.carried = LstmState::constant(&mut self.graph, c, h)?;
        }
        Ok(prediction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            intvl: 3,
            batch_m: 4,
            ..TrainConfig::default()
        }
    }

    fn window(offset: f64) -> (Tensor, Tensor) {
        let xs: Vec<f64> = (0..4).map(|i| (offset + 0.3 * i as f64).sin()).collect();
        (Tensor::column(&xs), Tensor::scalar((offset + 1.2).sin()))
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            intvl: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_m: 2,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_block_and_running_sum() {
        let mut chain = BlockChain::new(TrainConfig {
            intvl: 10,
            ..small_config()
        })
        .unwrap();
        let mut losses = Vec::new();
        for k in 0..3 {
            let (x, t) = window(k as f64);
            let l = chain.append_block(&x, &t).unwrap();
            losses.push(chain.graph().value(l).item());
            if k == 0 {
                assert_eq!(chain.blocks()[0].id, BlockId(1));
                let run = chain.running_loss().unwrap();
                assert_eq!(chain.graph().value(run).item(), losses[0]);
            }
        }
        let run = chain.graph().value(chain.running_loss().unwrap()).item();
        assert!((run - losses.iter().sum::<f64>()).abs() < 1e-12);
        let ids: Vec<u64> = chain.blocks().iter().map(|b| b.id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn perfect_target_contributes_zero() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let (x, _) = window(0.0);
        let mut probe = chain.fresh_copy().unwrap();
        let pred = probe.infer_step(&x).unwrap();
        let l = chain.append_block(&x, &Tensor::scalar(pred)).unwrap();
        assert_eq!(chain.graph().value(l).item(), 0.0);
    }

    #[test]
    fn backward_requires_a_block() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        assert!(matches!(chain.constrained_backward(), Err(Error::State(_))));
    }

    #[test]
    fn reset_releases_graph_and_keeps_params() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let params_before = chain.param_values();
        for k in 0..2 {
            let (x, t) = window(k as f64);
            chain.append_block(&x, &t).unwrap();
        }
        assert!(chain.graph().var_count() > chain.graph().param_count() + 2);
        chain.reset_state();
        // parameters plus the two zero-state constants
        assert_eq!(chain.graph().var_count(), chain.graph().param_count() + 2);
        assert_eq!(chain.graph().node_count(), 0);
        assert_eq!(chain.param_values(), params_before);
        assert_eq!(chain.steps_since_reset(), 0);
        assert!(chain.blocks().is_empty());
        let (c, h) = chain.carried_state();
        assert_eq!(c.max_abs() + h.max_abs(), 0.0);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let before = chain.param_values();
        let (x, t) = window(0.5);
        let out = chain.train_step(&x, &t, 0.0).unwrap();
        assert_eq!(chain.param_values(), before);
        assert!(out.elapsed > Duration::ZERO);
    }

    #[test]
    fn one_step_descends() {
        let config = TrainConfig {
            init_scale: 0.5,
            ..small_config()
        };
        let (x, t) = window(0.7);
        let loss_of = |chain: &BlockChain| {
            let mut probe = chain.fresh_copy().unwrap();
            let l = probe.append_block(&x, &t).unwrap();
            probe.graph().value(l).item()
        };
        let mut chain = BlockChain::new(config).unwrap();
        let before = loss_of(&chain);
        chain.train_step(&x, &t, 1e-3).unwrap();
        assert!(loss_of(&chain) < before);
    }

    #[test]
    fn reset_fires_every_intvl_steps() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let base = chain.graph().var_count();
        let mut counts = Vec::new();
        for k in 0..7 {
            let (x, t) = window(k as f64 * 0.4);
            chain.train_step(&x, &t, 0.01).unwrap();
            counts.push((chain.steps_since_reset(), chain.graph().var_count()));
        }
        let since: Vec<usize> = counts.iter().map(|c| c.0).collect();
        assert_eq!(since, vec![1, 2, 0, 1, 2, 0, 1]);
        assert!(counts[0].1 < counts[1].1);
        assert_eq!(counts[2].1, base);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let (x, _) = window(0.0);
        let err = chain
            .train_step(&x, &Tensor::scalar(f64::NAN), 0.01)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }));
    }

    #[test]
    fn wrong_window_rejected() {
        let mut chain = BlockChain::new(small_config()).unwrap();
        let err = chain
            .append_block(&Tensor::column(&[0.0, 1.0]), &Tensor::scalar(0.0))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
