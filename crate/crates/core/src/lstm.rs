//! LSTM cells assembled from graph nodes.
//!
//! [`chain_lstm_step`] is the peephole LSTM over a sequence; [`slstm_step`]
//! is the binary tree-structured cell that merges a left and a right child
//! state. [`build_lstm_tree`] folds a list of leaf states with the tree cell.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::tensor::{SeededRng, Tensor};

/// Memory cell and hidden state, both `hidden x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub c: VarId,
    pub h: VarId,
}

impl LstmState {
    /// Constant all-zero state.
    pub fn zeros(graph: &mut Graph, hidden: usize) -> Self {
        Self {
            c: graph.constant(Tensor::zeros(hidden, 1)),
            h: graph.constant(Tensor::zeros(hidden, 1)),
        }
    }

    /// Constant state with the given values.
    pub fn constant(graph: &mut Graph, c: Tensor, h: Tensor) -> Result<Self> {
        if c.shape() != h.shape() {
            return Err(Error::Dimension {
                op: "state",
                lhs: c.shape(),
                rhs: h.shape(),
            });
        }
        Ok(Self {
            c: graph.constant(c),
            h: graph.constant(h),
        })
    }
}

fn param(
    graph: &mut Graph,
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Result<VarId> {
    graph.param(Tensor::rand_init(rows, cols, scale, rng)?)
}

/// Weights of one gate of the chain cell.
#[derive(Clone, Copy, Debug)]
pub struct ChainGate {
    /// `hidden x input_dim`
    pub input: VarId,
    /// `hidden x hidden`
    pub recurrent: VarId,
    /// `hidden x 1`, applied elementwise to the cell.
    pub peephole: Option<VarId>,
    pub bias: VarId,
}

impl ChainGate {
    fn init(
        graph: &mut Graph,
        input_dim: usize,
        hidden: usize,
        peephole: bool,
        scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            input: param(graph, hidden, input_dim, scale, rng)?,
            recurrent: param(graph, hidden, hidden, scale, rng)?,
            peephole: if peephole {
                Some(param(graph, hidden, 1, scale, rng)?)
            } else {
                None
            },
            bias: param(graph, hidden, 1, scale, rng)?,
        })
    }

    fn vars(&self) -> Vec<VarId> {
        let mut v = vec![self.input, self.recurrent];
        v.extend(self.peephole);
        v.push(self.bias);
        v
    }

    /// `input·x + recurrent·h + peephole ⊙ c + bias`
    fn preactivation(&self, graph: &mut Graph, x: VarId, h: VarId, c: VarId) -> Result<VarId> {
        let wx = graph.linear(self.input, x, self.bias)?;
        let uh = graph.matmul(self.recurrent, h)?;
        let mut acc = graph.add(wx, uh)?;
        if let Some(p) = self.peephole {
            let pc = graph.hadamard(p, c)?;
            acc = graph.add(acc, pc)?;
        }
        Ok(acc)
    }
}

/// Peephole LSTM parameters: forget, input, modulation (no peephole) and output gates.
#[derive(Clone, Copy, Debug)]
pub struct ChainLstmParams {
    pub forget: ChainGate,
    pub input: ChainGate,
    pub modulation: ChainGate,
    pub output: ChainGate,
    pub input_dim: usize,
    pub hidden: usize,
}

impl ChainLstmParams {
    pub fn init(
        graph: &mut Graph,
        input_dim: usize,
        hidden: usize,
        scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            forget: ChainGate::init(graph, input_dim, hidden, true, scale, rng)?,
            input: ChainGate::init(graph, input_dim, hidden, true, scale, rng)?,
            modulation: ChainGate::init(graph, input_dim, hidden, false, scale, rng)?,
            output: ChainGate::init(graph, input_dim, hidden, true, scale, rng)?,
            input_dim,
            hidden,
        })
    }

    pub fn vars(&self) -> Vec<VarId> {
        [self.forget, self.input, self.modulation, self.output]
            .iter()
            .flat_map(ChainGate::vars)
            .collect()
    }

    /// Rebuilds the parameter handles from ids laid out as [`Self::vars`] returns them.
    pub fn from_vars(ids: &[VarId], input_dim: usize, hidden: usize) -> Result<Self> {
        if ids.len() != 15 {
            return Err(Error::Argument(format!(
                "chain cell has 15 parameters, got {}",
                ids.len()
            )));
        }
        let gate = |at: usize, peephole: bool| -> (ChainGate, usize) {
            let width = if peephole { 4 } else { 3 };
            let g = ChainGate {
                input: ids[at],
                recurrent: ids[at + 1],
                peephole: peephole.then(|| ids[at + 2]),
                bias: ids[at + width - 1],
            };
            (g, at + width)
        };
        let (forget, at) = gate(0, true);
        let (input, at) = gate(at, true);
        let (modulation, at) = gate(at, false);
        let (output, _) = gate(at, true);
        Ok(Self {
            forget,
            input,
            modulation,
            output,
            input_dim,
            hidden,
        })
    }

    pub fn peepholes(&self) -> Vec<VarId> {
        [self.forget, self.input, self.output]
            .iter()
            .filter_map(|g| g.peephole)
            .collect()
    }
}

/// Gate variables of one chain step.
#[derive(Clone, Copy, Debug)]
pub struct ChainStepTrace {
    pub f: VarId,
    pub i: VarId,
    pub g: VarId,
    pub o: VarId,
    pub c: VarId,
    pub h: VarId,
}

/// One step of the peephole LSTM. Forget and input gates peek at the
/// previous cell, the output gate at the new one.
pub fn chain_lstm_step(
    graph: &mut Graph,
    p: &ChainLstmParams,
    x: VarId,
    prev: LstmState,
) -> Result<(LstmState, ChainStepTrace)> {
    let f_pre = p.forget.preactivation(graph, x, prev.h, prev.c)?;
    let f = graph.sigmoid(f_pre)?;
    let i_pre = p.input.preactivation(graph, x, prev.h, prev.c)?;
    let i = graph.sigmoid(i_pre)?;
    let g_pre = p.modulation.preactivation(graph, x, prev.h, prev.c)?;
    let g = graph.tanh(g_pre)?;

    let ig = graph.hadamard(i, g)?;
    let fc = graph.hadamard(f, prev.c)?;
    let c = graph.add(ig, fc)?;

    let o_pre = p.output.preactivation(graph, x, prev.h, c)?;
    let o = graph.sigmoid(o_pre)?;
    let tc = graph.tanh(c)?;
    let h = graph.hadamard(o, tc)?;

    Ok((LstmState { c, h }, ChainStepTrace { f, i, g, o, c, h }))
}

/// Closed-form per-step deltas of the chain cell, given `dh` at `h_t`.
/// Peephole paths are not included.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSet {
    pub d_o: Tensor,
    pub d_c: Tensor,
    pub d_f: Tensor,
    pub d_c_prev: Tensor,
    pub d_i: Tensor,
    pub d_g: Tensor,
}

pub fn chain_lstm_deltas(
    graph: &Graph,
    trace: &ChainStepTrace,
    prev_c: &Tensor,
    dh: &Tensor,
) -> Result<DeltaSet> {
    let c = graph.value(trace.c);
    let tanh_c = c.map_with(f64::tanh);
    let d_o = tanh_c.mul(dh)?;
    let d_c = tanh_c
        .map_with(|t| 1.0 - t * t)
        .mul(graph.value(trace.o))?
        .mul(dh)?;
    let d_f = prev_c.mul(&d_c)?;
    let d_c_prev = graph.value(trace.f).mul(&d_c)?;
    let d_i = graph.value(trace.g).mul(&d_c)?;
    let d_g = graph.value(trace.i).mul(&d_c)?;
    Ok(DeltaSet {
        d_o,
        d_c,
        d_f,
        d_c_prev,
        d_i,
        d_g,
    })
}

/// How the tree cell forms its new memory cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CellVariant {
    /// `c = f_L ⊙ c_L + f_R ⊙ i ⊙ tanh(x)`; the right child's cell only reaches the gates.
    #[default]
    AsPrinted,
    /// `c = f_L ⊙ c_L + f_R ⊙ c_R + i ⊙ tanh(x)`
    Symmetric,
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellVariant::AsPrinted => "as_printed",
            CellVariant::Symmetric => "symmetric",
        })
    }
}

impl FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_printed" => Ok(CellVariant::AsPrinted),
            "symmetric" => Ok(CellVariant::Symmetric),
            other => Err(Error::Argument(format!(
                "unknown cell variant {other:?} (expected as_printed or symmetric)"
            ))),
        }
    }
}

/// Tree-cell gate reading both children's hidden and cell states.
#[derive(Clone, Copy, Debug)]
pub struct TreeGate {
    pub h_left: VarId,
    pub h_right: VarId,
    pub c_left: VarId,
    pub c_right: VarId,
    pub bias: VarId,
}

impl TreeGate {
    fn init(graph: &mut Graph, hidden: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            h_left: param(graph, hidden, hidden, scale, rng)?,
            h_right: param(graph, hidden, hidden, scale, rng)?,
            c_left: param(graph, hidden, hidden, scale, rng)?,
            c_right: param(graph, hidden, hidden, scale, rng)?,
            bias: param(graph, hidden, 1, scale, rng)?,
        })
    }

    fn vars(&self) -> [VarId; 5] {
        [
            self.h_left,
            self.h_right,
            self.c_left,
            self.c_right,
            self.bias,
        ]
    }

    fn activate(&self, graph: &mut Graph, left: LstmState, right: LstmState) -> Result<VarId> {
        let hl = graph.linear(self.h_left, left.h, self.bias)?;
        let hr = graph.matmul(self.h_right, right.h)?;
        let cl = graph.matmul(self.c_left, left.c)?;
        let cr = graph.matmul(self.c_right, right.c)?;
        let pre = graph.add_all(&[hl, hr, cl, cr])?;
        graph.sigmoid(pre)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeCandidate {
    pub h_left: VarId,
    pub h_right: VarId,
    pub bias: VarId,
}

#[derive(Clone, Copy, Debug)]
pub struct TreeOutputGate {
    pub h_left: VarId,
    pub h_right: VarId,
    /// Reads the new cell.
    pub cell: VarId,
    pub bias: VarId,
}

/// Parameters of the binary tree cell. All matrices are `hidden x hidden`.
#[derive(Clone, Copy, Debug)]
pub struct SLstmParams {
    pub input: TreeGate,
    pub forget_left: TreeGate,
    pub forget_right: TreeGate,
    pub candidate: TreeCandidate,
    pub output: TreeOutputGate,
    pub hidden: usize,
}

impl SLstmParams {
    pub fn init(graph: &mut Graph, hidden: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let input = TreeGate::init(graph, hidden, scale, rng)?;
        let forget_left = TreeGate::init(graph, hidden, scale, rng)?;
        let forget_right = TreeGate::init(graph, hidden, scale, rng)?;
        let candidate = TreeCandidate {
            h_left: param(graph, hidden, hidden, scale, rng)?,
            h_right: param(graph, hidden, hidden, scale, rng)?,
            bias: param(graph, hidden, 1, scale, rng)?,
        };
        let output = TreeOutputGate {
            h_left: param(graph, hidden, hidden, scale, rng)?,
            h_right: param(graph, hidden, hidden, scale, rng)?,
            cell: param(graph, hidden, hidden, scale, rng)?,
            bias: param(graph, hidden, 1, scale, rng)?,
        };
        Ok(Self {
            input,
            forget_left,
            forget_right,
            candidate,
            output,
            hidden,
        })
    }

    /// Rebuilds the parameter handles from ids laid out as [`Self::vars`] returns them.
    pub fn from_vars(ids: &[VarId], hidden: usize) -> Result<Self> {
        if ids.len() != 22 {
            return Err(Error::Argument(format!(
                "tree cell has 22 parameters, got {}",
                ids.len()
            )));
        }
        let gate = |at: usize| TreeGate {
            h_left: ids[at],
            h_right: ids[at + 1],
            c_left: ids[at + 2],
            c_right: ids[at + 3],
            bias: ids[at + 4],
        };
        Ok(Self {
            input: gate(0),
            forget_left: gate(5),
            forget_right: gate(10),
            candidate: TreeCandidate {
                h_left: ids[15],
                h_right: ids[16],
                bias: ids[17],
            },
            output: TreeOutputGate {
                h_left: ids[18],
                h_right: ids[19],
                cell: ids[20],
                bias: ids[21],
            },
            hidden,
        })
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut v = Vec::with_capacity(22);
        v.extend(self.input.vars());
        v.extend(self.forget_left.vars());
        v.extend(self.forget_right.vars());
        v.extend([
            self.candidate.h_left,
            self.candidate.h_right,
            self.candidate.bias,
        ]);
        v.extend([
            self.output.h_left,
            self.output.h_right,
            self.output.cell,
            self.output.bias,
        ]);
        v
    }
}

/// Intermediate variables of one tree-cell application.
#[derive(Clone, Copy, Debug)]
pub struct TreeStepTrace {
    pub f_left: VarId,
    pub f_right: VarId,
    pub i: VarId,
    pub x: VarId,
    pub c: VarId,
    pub h: VarId,
}

/// Merges `left` and `right` into a parent state.
pub fn slstm_step(
    graph: &mut Graph,
    p: &SLstmParams,
    left: LstmState,
    right: LstmState,
    variant: CellVariant,
) -> Result<(LstmState, TreeStepTrace)> {
    let shape_l = graph.value(left.h).shape();
    let shape_r = graph.value(right.h).shape();
    if shape_l != shape_r {
        return Err(Error::Dimension {
            op: "slstm_step children",
            lhs: shape_l,
            rhs: shape_r,
        });
    }

    let i = p.input.activate(graph, left, right)?;
    let f_left = p.forget_left.activate(graph, left, right)?;
    let f_right = p.forget_right.activate(graph, left, right)?;

    let xl = graph.linear(p.candidate.h_left, left.h, p.candidate.bias)?;
    let xr = graph.matmul(p.candidate.h_right, right.h)?;
    let x = graph.add(xl, xr)?;
    let tx = graph.tanh(x)?;

    let keep_left = graph.hadamard(f_left, left.c)?;
    let c = match variant {
        CellVariant::AsPrinted => {
            let fi = graph.hadamard(f_right, i)?;
            let write = graph.hadamard(fi, tx)?;
            graph.add(keep_left, write)?
        }
        CellVariant::Symmetric => {
            let keep_right = graph.hadamard(f_right, right.c)?;
            let write = graph.hadamard(i, tx)?;
            graph.add_all(&[keep_left, keep_right, write])?
        }
    };

    let ol = graph.linear(p.output.h_left, left.h, p.output.bias)?;
    let or = graph.matmul(p.output.h_right, right.h)?;
    let oc = graph.matmul(p.output.cell, c)?;
    let o_pre = graph.add_all(&[ol, or, oc])?;
    let o = graph.sigmoid(o_pre)?;
    let tc = graph.tanh(c)?;
    let h = graph.hadamard(o, tc)?;

    Ok((
        LstmState { c, h },
        TreeStepTrace {
            f_left,
            f_right,
            i,
            x,
            c,
            h,
        },
    ))
}

/// Result of folding leaf states into one tree.
#[derive(Clone, Copy, Debug)]
pub struct LstmTree {
    pub state: LstmState,
    /// The root's hidden state.
    pub root: VarId,
    /// Number of tree-cell applications.
    pub steps: usize,
}

/// Left-leaning fold `((s1, s2), s3), ...` of the leaves with [`slstm_step`].
pub fn build_lstm_tree(
    graph: &mut Graph,
    p: &SLstmParams,
    leaves: &[LstmState],
    variant: CellVariant,
) -> Result<LstmTree> {
    let (&first, rest) = leaves
        .split_first()
        .ok_or_else(|| Error::Argument("an LSTM tree needs at least one leaf".into()))?;
    let mut state = first;
    for &leaf in rest {
        state = slstm_step(graph, p, state, leaf, variant)?.0;
    }
    Ok(LstmTree {
        state,
        root: state.h,
        steps: rest.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_rng, sigmoid};

    fn zero_all(graph: &mut Graph, vars: &[VarId]) {
        for &v in vars {
            let (r, c) = graph.value(v).shape();
            graph.set_value(v, Tensor::zeros(r, c)).unwrap();
        }
    }

    #[test]
    fn zero_chain_cell() {
        let mut g = Graph::new();
        let p = ChainLstmParams::init(&mut g, 2, 3, 0.1, &mut seeded_rng(1)).unwrap();
        zero_all(&mut g, &p.vars());
        let x = g.constant(Tensor::column(&[0.7, -0.2]));
        let prev = LstmState::zeros(&mut g, 3);
        let (state, tr) = chain_lstm_step(&mut g, &p, x, prev).unwrap();
        assert_eq!(g.value(state.c), &Tensor::zeros(3, 1));
        assert_eq!(g.value(state.h), &Tensor::zeros(3, 1));
        for gate in [tr.f, tr.i, tr.o] {
            assert_eq!(g.value(gate), &Tensor::filled(3, 1, 0.5));
        }
        assert_eq!(g.value(tr.g), &Tensor::zeros(3, 1));
    }

    #[test]
    fn chain_gates_stay_in_unit_interval() {
        let mut g = Graph::new();
        let p = ChainLstmParams::init(&mut g, 1, 4, 2.0, &mut seeded_rng(3)).unwrap();
        let x = g.constant(Tensor::scalar(5.0));
        let prev = LstmState::constant(
            &mut g,
            Tensor::filled(4, 1, 3.0),
            Tensor::filled(4, 1, -0.9),
        )
        .unwrap();
        let (state, tr) = chain_lstm_step(&mut g, &p, x, prev).unwrap();
        for gate in [tr.f, tr.i, tr.o] {
            assert!(g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(g.value(state.h).data().iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn deltas_vanish_without_incoming_gradient() {
        let mut g = Graph::new();
        let p = ChainLstmParams::init(&mut g, 1, 3, 0.5, &mut seeded_rng(4)).unwrap();
        let x = g.constant(Tensor::scalar(0.3));
        let prev_c = Tensor::column(&[0.1, -0.2, 0.3]);
        let prev = LstmState::constant(&mut g, prev_c.clone(), Tensor::zeros(3, 1)).unwrap();
        let (_, tr) = chain_lstm_step(&mut g, &p, x, prev).unwrap();
        let d = chain_lstm_deltas(&g, &tr, &prev_c, &Tensor::zeros(3, 1)).unwrap();
        for t in [&d.d_o, &d.d_c, &d.d_f, &d.d_c_prev, &d.d_i, &d.d_g] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }

    #[test]
    fn output_delta_zero_when_cell_zero() {
        let mut g = Graph::new();
        let p = ChainLstmParams::init(&mut g, 1, 2, 0.5, &mut seeded_rng(5)).unwrap();
        zero_all(&mut g, &p.vars());
        let x = g.constant(Tensor::scalar(1.0));
        let prev = LstmState::zeros(&mut g, 2);
        let (_, tr) = chain_lstm_step(&mut g, &p, x, prev).unwrap();
        assert_eq!(g.value(tr.c), &Tensor::zeros(2, 1));
        let d = chain_lstm_deltas(&g, &tr, &Tensor::zeros(2, 1), &Tensor::ones(2, 1)).unwrap();
        assert_eq!(d.d_o, Tensor::zeros(2, 1));
    }

    #[test]
    fn zero_tree_cell() {
        let mut g = Graph::new();
        let p = SLstmParams::init(&mut g, 3, 0.1, &mut seeded_rng(1)).unwrap();
        zero_all(&mut g, &p.vars());
        let l = LstmState::zeros(&mut g, 3);
        let r = LstmState::zeros(&mut g, 3);
        for variant in [CellVariant::AsPrinted, CellVariant::Symmetric] {
            let (s, _) = slstm_step(&mut g, &p, l, r, variant).unwrap();
            assert_eq!(g.value(s.c), &Tensor::zeros(3, 1));
            assert_eq!(g.value(s.h), &Tensor::zeros(3, 1));
        }
    }

    #[test]
    fn as_printed_cell_ignores_right_memory_directly() {
        // With every weight zero the gates are all 1/2 and tanh(x) = 0, so
        // the printed cell is c_L / 2 while the symmetric one adds c_R / 2.
        let mut g = Graph::new();
        let p = SLstmParams::init(&mut g, 2, 0.1, &mut seeded_rng(2)).unwrap();
        zero_all(&mut g, &p.vars());
        let l =
            LstmState::constant(&mut g, Tensor::column(&[1.0, 2.0]), Tensor::zeros(2, 1)).unwrap();
        let r =
            LstmState::constant(&mut g, Tensor::column(&[4.0, 8.0]), Tensor::zeros(2, 1)).unwrap();
        let (a, _) = slstm_step(&mut g, &p, l, r, CellVariant::AsPrinted).unwrap();
        let (b, _) = slstm_step(&mut g, &p, l, r, CellVariant::Symmetric).unwrap();
        assert_eq!(g.value(a.c), &Tensor::column(&[0.5, 1.0]));
        assert_eq!(g.value(b.c), &Tensor::column(&[2.5, 5.0]));
        let o = sigmoid(0.0);
        assert_eq!(g.value(a.h).data()[0], o * 0.5f64.tanh());
    }

    #[test]
    fn mismatched_children_rejected() {
        let mut g = Graph::new();
        let p = SLstmParams::init(&mut g, 2, 0.1, &mut seeded_rng(2)).unwrap();
        let l = LstmState::zeros(&mut g, 2);
        let r = LstmState::zeros(&mut g, 3);
        assert!(matches!(
            slstm_step(&mut g, &p, l, r, CellVariant::AsPrinted),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tree_fold_counts() {
        let mut g = Graph::new();
        let p = SLstmParams::init(&mut g, 2, 0.3, &mut seeded_rng(9)).unwrap();
        let leaves: Vec<LstmState> = (0..4).map(|_| LstmState::zeros(&mut g, 2)).collect();

        let one = build_lstm_tree(&mut g, &p, &leaves[..1], CellVariant::AsPrinted).unwrap();
        assert_eq!(one.steps, 0);
        assert_eq!(one.state, leaves[0]);

        let before = g.node_count();
        let two = build_lstm_tree(&mut g, &p, &leaves[..2], CellVariant::AsPrinted).unwrap();
        let per_step = g.node_count() - before;
        assert_eq!(two.steps, 1);

        let before = g.node_count();
        let four = build_lstm_tree(&mut g, &p, &leaves, CellVariant::AsPrinted).unwrap();
        assert_eq!(four.steps, 3);
        assert_eq!(g.node_count() - before, 3 * per_step);

        assert!(matches!(
            build_lstm_tree(&mut g, &p, &[], CellVariant::AsPrinted),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn params_round_trip_through_ids() {
        let mut g = Graph::new();
        let chain = ChainLstmParams::init(&mut g, 2, 3, 0.1, &mut seeded_rng(1)).unwrap();
        let ids = chain.vars();
        assert_eq!(ChainLstmParams::from_vars(&ids, 2, 3).unwrap().vars(), ids);
        let tree = SLstmParams::init(&mut g, 3, 0.1, &mut seeded_rng(1)).unwrap();
        let ids = tree.vars();
        assert_eq!(SLstmParams::from_vars(&ids, 3).unwrap().vars(), ids);
        assert!(SLstmParams::from_vars(&ids[..3], 3).is_err());
    }

    #[test]
    fn cell_variant_parses() {
        assert_eq!(
            "as_printed".parse::<CellVariant>().unwrap(),
            CellVariant::AsPrinted
        );
        assert_eq!(
            "symmetric".parse::<CellVariant>().unwrap(),
            CellVariant::Symmetric
        );
        assert!("other".parse::<CellVariant>().is_err());
        assert_eq!(CellVariant::Symmetric.to_string(), "symmetric");
    }
}
