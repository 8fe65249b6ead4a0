use proptest::prelude::*;
use treegrad::graph::TraceEvent;
use treegrad::tensor::{seeded_rng, Tensor};
use treegrad::{Error, Graph, Result, VarId};

/// Output of branch `j`: a seeded affine map of `shared`, squashed and scored.
fn branch(g: &mut Graph, shared: VarId, j: u64, dim: usize) -> Result<VarId> {
    let mut rng = seeded_rng(100 + j);
    let w = g.constant(Tensor::rand_init(2, dim, 1.0, &mut rng)?);
    let b = g.constant(Tensor::rand_init(2, 1, 1.0, &mut rng)?);
    let y = g.linear(w, shared, b)?;
    let y = if j.is_multiple_of(2) {
        g.tanh(y)?
    } else {
        g.sigmoid(y)?
    };
    g.mse(y, &Tensor::filled(2, 1, 0.1 * j as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shared_variable_recurses_once_and_sums_branches(
        k in 1usize..7,
        values in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let x0 = Tensor::column(&values);
        let mut g = Graph::new();
        let x = g.param(x0.clone()).unwrap();
        let shared = g.tanh(x).unwrap();
        let losses: Vec<VarId> = (0..k as u64).map(|j| branch(&mut g, shared, j, 3).unwrap()).collect();
        let total = g.sum_loss(&losses).unwrap();
        prop_assert_eq!(g.forward_count(shared), k);

        let trace = g.backward(total, &Tensor::scalar(1.0), None).unwrap();
        prop_assert_eq!(trace.recursions(shared), 1);
        prop_assert_eq!(trace.visits(shared), k);
        prop_assert_eq!(g.forward_count(shared), 0);

        let mut separate = Tensor::zeros(3, 1);
        for j in 0..k as u64 {
            let mut h = Graph::new();
            let x = h.param(x0.clone()).unwrap();
            let shared = h.tanh(x).unwrap();
            let l = branch(&mut h, shared, j, 3).unwrap();
            h.backward(l, &Tensor::scalar(1.0), None).unwrap();
            separate.add_assign(&h.grad_or_zeros(x)).unwrap();
        }
        prop_assert!(g.grad_or_zeros(x).sub(&separate).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn every_node_runs_backward_exactly_once(depth in 1usize..6, width in 1usize..4) {
        // A ladder where each rung reuses the previous rung `width` times.
        let mut g = Graph::new();
        let mut v = g.param(Tensor::column(&[0.3, -0.4])).unwrap();
        for _ in 0..depth {
            let terms: Vec<VarId> = (0..width).map(|_| g.tanh(v).unwrap()).collect();
            v = g.add_all(&terms).unwrap();
        }
        let w = g.constant(Tensor::from_rows(&[&[1.0, 1.0]]));
        let out = g.matmul(w, v).unwrap();
        let trace = g.backward(out, &Tensor::scalar(1.0), None).unwrap();
        let executed: Vec<usize> = trace
            .events()
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Execute { node, .. } => Some(node.index()),
                _ => None,
            })
            .collect();
        let mut unique = executed.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), executed.len());
        prop_assert_eq!(executed.len(), g.node_count());
    }

    #[test]
    fn release_restores_parameter_baseline(steps in 1usize..20) {
        let mut g = Graph::new();
        let w = g.param(Tensor::identity(2)).unwrap();
        let params = g.var_count();
        for _ in 0..steps {
            let x = g.constant(Tensor::column(&[1.0, 2.0]));
            let y = g.matmul(w, x).unwrap();
            let y = g.tanh(y).unwrap();
            let l = g.mse(y, &Tensor::zeros(2, 1)).unwrap();
            g.backward(l, &Tensor::scalar(1.0), None).unwrap();
            g.release();
            prop_assert_eq!(g.var_count(), params);
            prop_assert_eq!(g.node_count(), 0);
            prop_assert_eq!(g.forward_count(w), 0);
            prop_assert!(g.grad(w).is_none());
        }
    }
}

#[test]
fn second_backward_without_zeroing_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.5)).unwrap();
    let y = g.tanh(x).unwrap();
    g.backward(y, &Tensor::scalar(1.0), None).unwrap();
    assert!(matches!(
        g.backward(y, &Tensor::scalar(1.0), None),
        Err(Error::DoubleBackward(_))
    ));
    g.zero_grads(&[y]);
    g.backward(y, &Tensor::scalar(1.0), None).unwrap();
    let expected = 1.0 - 0.5f64.tanh().powi(2);
    assert!((g.grad(x).unwrap().item() - expected).abs() < 1e-15);
}

#[test]
fn trace_dump_is_csv_with_one_line_per_event() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.2)).unwrap();
    let a = g.tanh(x).unwrap();
    let b = g.sigmoid(x).unwrap();
    let s = g.add(a, b).unwrap();
    let trace = g.backward(s, &Tensor::scalar(1.0), None).unwrap();
    let dump = trace.dump();
    let mut lines = dump.lines();
    assert_eq!(lines.next(), Some("event,node_id,kind,count"));
    assert_eq!(lines.count(), trace.events().len());
    assert!(dump.contains("defer"));
    assert!(dump.contains("proceed"));
}

#[test]
fn seed_shape_must_match_output() {
    let mut g = Graph::new();
    let x = g.param(Tensor::column(&[1.0, 2.0])).unwrap();
    let y = g.tanh(x).unwrap();
    assert!(matches!(
        g.backward(y, &Tensor::scalar(1.0), None),
        Err(Error::Dimension { .. })
    ));
}
