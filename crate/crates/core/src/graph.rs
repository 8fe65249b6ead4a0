//! Define-by-run computation graph and its gated backward pass.
//!
//! Variables and function nodes live in an arena owned by [`Graph`]. Every
//! computed variable keeps a creator link to the [`FunctionNode`] that produced
//! it, and every variable counts how many node input slots consume it.
//!
//! Backward traversal starts at an output and walks creator links depth-first.
//! Two guards restrict it:
//!
//! * the branch gate: a variable consumed by `k` nodes collects all `k`
//!   gradient contributions and only then recurses into its own creator, once;
//! * the block guard: a variable tagged as the root of a model block is
//!   only entered when its block is the latest one built.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::functions::Op;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a model block. Issued in strictly increasing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Trainable leaf; survives [`Graph::release`].
    Param,
    /// Non-trainable leaf (inputs, initial states).
    Constant,
    /// Output of a function node.
    Computed,
}

#[derive(Clone, Debug)]
struct Variable {
    value: Tensor,
    grad: Option<Tensor>,
    creator: Option<NodeId>,
    kind: VarKind,
    /// Number of node input slots consuming this variable.
    consumers: usize,
    /// Consumers that have not yet handed back a gradient in the current pass.
    forward_count: usize,
    proceeded: bool,
    block_id: Option<BlockId>,
    is_last_backward: Option<bool>,
}

impl Variable {
    fn new(value: Tensor, kind: VarKind, creator: Option<NodeId>) -> Self {
        Self {
            value,
            grad: None,
            creator,
            kind,
            consumers: 0,
            forward_count: 0,
            proceeded: false,
            block_id: None,
            is_last_backward: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FunctionNode {
    op: Op,
    inputs: Vec<VarId>,
    output: VarId,
    block: Option<BlockId>,
}

impl FunctionNode {
    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn inputs(&self) -> &[VarId] {
        &self.inputs
    }

    pub fn output(&self) -> VarId {
        self.output
    }

    pub fn output_shape(&self, graph: &Graph) -> (usize, usize) {
        graph.value(self.output).shape()
    }

    /// Block that was being built when this node was created, if any.
    pub fn block(&self) -> Option<BlockId> {
        self.block
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Proceed,
    Defer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    Proceed,
    Prune,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    /// A gradient contribution reached a variable; `remaining` is its counter after the gate.
    Gate {
        var: VarId,
        outcome: Gate,
        remaining: usize,
    },
    /// A block root was skipped by the block guard.
    Prune { var: VarId, block: BlockId },
    /// A function node ran its backward rule.
    Execute {
        node: NodeId,
        kind: &'static str,
        count: usize,
    },
}

/// Instrumentation collected by one [`Graph::backward`] call.
#[derive(Clone, Debug, Default)]
pub struct TraversalTrace {
    gate_calls: Vec<usize>,
    recursions: Vec<usize>,
    executions: Vec<usize>,
    events: Vec<TraceEvent>,
}

impl TraversalTrace {
    fn for_graph(graph: &Graph) -> Self {
        Self {
            gate_calls: vec![0; graph.vars.len()],
            recursions: vec![0; graph.vars.len()],
            executions: vec![0; graph.nodes.len()],
            events: Vec::new(),
        }
    }

    /// Number of gradient contributions `v` received.
    pub fn visits(&self, v: VarId) -> usize {
        self.gate_calls.get(v.0).copied().unwrap_or(0)
    }

    /// Number of times traversal continued past `v` into its creator.
    pub fn recursions(&self, v: VarId) -> usize {
        self.recursions.get(v.0).copied().unwrap_or(0)
    }

    pub fn executions(&self, n: NodeId) -> usize {
        self.executions.get(n.0).copied().unwrap_or(0)
    }

    pub fn total_executions(&self) -> usize {
        self.executions.iter().sum()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Total executions of nodes created while `block` was being built.
    pub fn block_executions(&self, graph: &Graph, block: BlockId) -> usize {
        graph
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.block == Some(block))
            .map(|(i, _)| self.executions[i])
            .sum()
    }

    /// Event log as `event,node_id,kind,count` lines.
    pub fn dump(&self) -> String {
        let mut out = String::from("event,node_id,kind,count\n");
        for e in &self.events {
            let _ = match e {
                TraceEvent::Gate {
                    var,
                    outcome,
                    remaining,
                } => {
                    let kind = match outcome {
                        Gate::Proceed => "proceed",
                        Gate::Defer => "defer",
                    };
                    writeln!(out, "gate,{},{kind},{remaining}", var.0)
                }
                TraceEvent::Prune { var, block } => {
                    writeln!(out, "prune,{},block,{}", var.0, block.0)
                }
                TraceEvent::Execute { node, kind, count } => {
                    writeln!(out, "exec,{},{kind},{count}", node.0)
                }
            };
        }
        out
    }
}

/// Arena holding one model's variables and function nodes.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    vars: Vec<Variable>,
    nodes: Vec<FunctionNode>,
    param_count: usize,
    block_tag: Option<BlockId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf. Parameters must be created before any
    /// other variable so that [`Graph::release`] can keep them in place.
    pub fn param(&mut self, value: Tensor) -> Result<VarId> {
        if self.vars.len() != self.param_count {
            return Err(Error::State(
                "parameters must be registered before any other variable".into(),
            ));
        }
        self.vars.push(Variable::new(value, VarKind::Param, None));
        self.param_count += 1;
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.vars
            .push(Variable::new(value, VarKind::Constant, None));
        VarId(self.vars.len() - 1)
    }

    /// Runs `op` forward on `inputs` and records the node.
    pub fn apply(&mut self, op: Op, inputs: &[VarId]) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(Error::Argument(format!(
                "{} needs at least one input",
                op.name()
            )));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.vars.len()) {
            return Err(Error::Argument(format!("unknown variable #{}", bad.0)));
        }
        let value = {
            let values: Vec<&Tensor> = inputs.iter().map(|&v| &self.vars[v.0].value).collect();
            op.forward(&values)?
        };
        let node = NodeId(self.nodes.len());
        let output = VarId(self.vars.len());
        for &v in inputs {
            self.register_consumption(v);
        }
        self.vars
            .push(Variable::new(value, VarKind::Computed, Some(node)));
        self.nodes.push(FunctionNode {
            op,
            inputs: inputs.to_vec(),
            output,
            block: self.block_tag,
        });
        Ok(output)
    }

    /// Records one more consumer slot for `v`.
    pub fn register_consumption(&mut self, v: VarId) {
        let var = &mut self.vars[v.0];
        var.consumers += 1;
        var.forward_count += 1;
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.vars[v.0].value
    }

    pub fn grad(&self, v: VarId) -> Option<&Tensor> {
        self.vars[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of its shape when nothing reached it.
    pub fn grad_or_zeros(&self, v: VarId) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.value(v).shape();
            Tensor::zeros(r, c)
        })
    }

    /// Overwrites a leaf value. Shapes must match.
    pub fn set_value(&mut self, v: VarId, value: Tensor) -> Result<()> {
        let var = &mut self.vars[v.0];
        if var.creator.is_some() {
            return Err(Error::State(format!(
                "variable #{} is computed, not a leaf",
                v.0
            )));
        }
        if var.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set_value",
                lhs: var.value.shape(),
                rhs: value.shape(),
            });
        }
        var.value = value;
        Ok(())
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        self.vars[v.0].kind
    }

    pub fn creator(&self, v: VarId) -> Option<NodeId> {
        self.vars[v.0].creator
    }

    pub fn is_leaf(&self, v: VarId) -> bool {
        self.vars[v.0].creator.is_none()
    }

    pub fn forward_count(&self, v: VarId) -> usize {
        self.vars[v.0].forward_count
    }

    pub fn consumer_count(&self, v: VarId) -> usize {
        self.vars[v.0].consumers
    }

    pub fn node(&self, n: NodeId) -> &FunctionNode {
        &self.nodes[n.0]
    }

    pub fn set_block_id(&mut self, v: VarId, block: BlockId) {
        self.vars[v.0].block_id = Some(block);
    }

    pub fn block_id(&self, v: VarId) -> Option<BlockId> {
        self.vars[v.0].block_id
    }

    pub fn is_last_backward(&self, v: VarId) -> Option<bool> {
        self.vars[v.0].is_last_backward
    }

    /// Tags every node created from now on with `block` (or nothing).
    pub fn set_block_tag(&mut self, block: Option<BlockId>) {
        self.block_tag = block;
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn params(&self) -> impl Iterator<Item = VarId> {
        (0..self.param_count).map(VarId)
    }

    /// Branch gate: called each time a consumer has handed `v` a gradient
    /// contribution. Proceeds exactly once, when the last pending consumer
    /// has reported.
    pub fn branch_gate(&mut self, v: VarId) -> Result<Gate> {
        let var = &mut self.vars[v.0];
        if var.forward_count > 0 {
            var.forward_count -= 1;
        } else if var.proceeded {
            return Err(Error::DoubleBackward(v.0));
        }
        if var.forward_count != 0 {
            return Ok(Gate::Defer);
        }
        var.proceeded = true;
        Ok(Gate::Proceed)
    }

    /// Block guard: marks `v` as the latest block's root or prunes it.
    /// Variables without a block id always proceed.
    pub fn block_guard(&mut self, v: VarId, latest: BlockId) -> Guard {
        let var = &mut self.vars[v.0];
        let Some(id) = var.block_id else {
            return Guard::Proceed;
        };
        let is_last = id == latest;
        var.is_last_backward = Some(is_last);
        if is_last {
            Guard::Proceed
        } else {
            Guard::Prune
        }
    }

    fn accumulate(&mut self, v: VarId, contribution: Tensor) -> Result<()> {
        let var = &mut self.vars[v.0];
        if contribution.shape() != var.value.shape() {
            return Err(Error::Internal(format!(
                "gradient for variable #{} has shape {:?}, value has {:?}",
                v.0,
                contribution.shape(),
                var.value.shape()
            )));
        }
        match &mut var.grad {
            Some(g) => g.add_assign(&contribution)?,
            None => var.grad = Some(contribution),
        }
        Ok(())
    }

    /// Reverse pass from `output` seeded with `seed`.
    ///
    /// With `latest = Some(block)`, block roots of any other block are pruned.
    /// Traversal is depth-first in input order, using an explicit stack.
    pub fn backward(
        &mut self,
        output: VarId,
        seed: &Tensor,
        latest: Option<BlockId>,
    ) -> Result<TraversalTrace> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::Dimension {
                op: "backward seed",
                lhs: self.value(output).shape(),
                rhs: seed.shape(),
            });
        }
        if self.vars[output.0].proceeded {
            return Err(Error::DoubleBackward(output.0));
        }
        let mut trace = TraversalTrace::for_graph(self);
        self.accumulate(output, seed.clone())?;
        self.vars[output.0].proceeded = true;

        let mut stack = vec![output];
        let mut ready = Vec::new();
        while let Some(v) = stack.pop() {
            if let Some(latest) = latest {
                if self.block_guard(v, latest) == Guard::Prune {
                    let block = self.vars[v.0]
                        .block_id
                        .expect("pruned variable has a block id");
                    trace.events.push(TraceEvent::Prune { var: v, block });
                    continue;
                }
            }
            let Some(node_id) = self.vars[v.0].creator else {
                continue;
            };
            trace.recursions[v.0] += 1;

            let grads = {
                let node = &self.nodes[node_id.0];
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|i| &self.vars[i.0].value).collect();
                let out = &self.vars[node.output.0];
                let g = out.grad.as_ref().ok_or_else(|| {
                    Error::Internal(format!("variable #{} entered without a gradient", v.0))
                })?;
                node.op.backward(&inputs, &out.value, g)?
            };
            trace.executions[node_id.0] += 1;
            trace.events.push(TraceEvent::Execute {
                node: node_id,
                kind: self.nodes[node_id.0].op.name(),
                count: trace.executions[node_id.0],
            });

            let inputs = self.nodes[node_id.0].inputs.clone();
            if grads.len() != inputs.len() {
                return Err(Error::Internal(format!(
                    "{} returned {} gradients for {} inputs",
                    self.nodes[node_id.0].op.name(),
                    grads.len(),
                    inputs.len()
                )));
            }
            ready.clear();
            for (input, g) in inputs.into_iter().zip(grads) {
                self.accumulate(input, g)?;
                trace.gate_calls[input.0] += 1;
                let outcome = self.branch_gate(input)?;
                trace.events.push(TraceEvent::Gate {
                    var: input,
                    outcome,
                    remaining: self.vars[input.0].forward_count,
                });
                if outcome == Gate::Proceed {
                    ready.push(input);
                }
            }
            stack.extend(ready.iter().rev().copied());
        }
        Ok(trace)
    }

    /// Clears gradients and restores the branch counters of every variable
    /// reachable from `roots` through creator links.
    pub fn zero_grads(&mut self, roots: &[VarId]) {
        let mut seen = vec![false; self.vars.len()];
        let mut stack: Vec<VarId> = roots.to_vec();
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v.0], true) {
                continue;
            }
            let var = &mut self.vars[v.0];
            var.grad = None;
            var.forward_count = var.consumers;
            var.proceeded = false;
            var.is_last_backward = None;
            if let Some(n) = var.creator {
                stack.extend(self.nodes[n.0].inputs.iter().copied());
            }
        }
    }

    /// Drops every function node and non-parameter variable. Parameters keep
    /// their values; their gradients and consumer counts are cleared.
    pub fn release(&mut self) {
        self.vars.truncate(self.param_count);
        self.nodes.clear();
        for var in &mut self.vars {
            var.grad = None;
            var.consumers = 0;
            var.forward_count = 0;
            var.proceeded = false;
            var.is_last_backward = None;
        }
    }
}
