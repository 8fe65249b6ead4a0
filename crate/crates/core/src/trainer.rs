//! Sine-wave experiment harness: data, training loop, closed-loop
//! prediction, interval sweeps, CSV logs and finite-difference gradient checks.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::lstm::{
    build_lstm_tree, chain_lstm_step, slstm_step, CellVariant, ChainLstmParams, LstmState,
    SLstmParams,
};
use crate::model::{BlockChain, TrainConfig};
use crate::tensor::{seeded_rng, SeededRng, Tensor};

/// `s_i = sin(phase + i * step)` for `i = 0..n`.
pub fn gen_sine(n: usize, step: f64, phase: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Argument("gen_sine needs n >= 1".into()));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Argument(format!(
            "sine step must be positive, got {step}"
        )));
    }
    Ok((0..n).map(|i| (phase + i as f64 * step).sin()).collect())
}

fn sine_at(config: &TrainConfig, index: usize) -> f64 {
    (index as f64 * config.sine_step).sin()
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// Global training step, starting at 1.
    pub epoch: usize,
    /// Position inside the current state-initialization interval, starting at 1.
    pub step: usize,
    pub loss: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,loss,elapsed_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.6}",
                r.epoch, r.step, r.loss, r.elapsed_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv())
    }

    /// Mean loss over `window` steps ending at `end` (1-based, inclusive).
    pub fn trailing_mean(&self, end: usize, window: usize) -> Option<f64> {
        trailing_mean(&self.losses(), end, window)
    }

    pub fn mean_elapsed_ms(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.elapsed_ms).sum::<f64>() / self.rows.len() as f64
    }
}

/// Mean of `values[end - window .. end]`, with `end` counted from 1.
pub fn trailing_mean(values: &[f64], end: usize, window: usize) -> Option<f64> {
    if window == 0 || end > values.len() || end < window {
        return None;
    }
    let slice = &values[end - window..end];
    Some(slice.iter().sum::<f64>() / window as f64)
}

/// Kendall rank correlation (tau-a) of `values` against their positions.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    score as f64 / (n * (n - 1) / 2) as f64
}

/// Training failed part-way; `log` holds every completed step.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub log: Box<TrainLog>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} logged steps",
            self.error,
            self.log.rows.len()
        )
    }
}

impl std::error::Error for TrainFailure {}

/// Stateful training loop over the sine stream. Step `k` (0-based) sees the
/// samples `k .. k + window` and is scored against sample `k + window`.
pub struct Trainer {
    chain: BlockChain,
    log: TrainLog,
    cursor: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let chain = BlockChain::new(config.clone())?;
        Ok(Self {
            chain,
            log: TrainLog {
                config,
                rows: Vec::new(),
            },
            cursor: 0,
        })
    }

    pub fn chain(&self) -> &BlockChain {
        &self.chain
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_parts(self) -> (BlockChain, TrainLog) {
        (self.chain, self.log)
    }

    pub fn step(&mut self) -> Result<LogRow> {
        let config = self.chain.config().clone();
        let window = config.window();
        let xs: Vec<f64> = (self.cursor..self.cursor + window)
            .map(|i| sine_at(&config, i))
            .collect();
        let target = Tensor::scalar(sine_at(&config, self.cursor + window));
        let outcome = self
            .chain
            .train_step(&Tensor::column(&xs), &target, config.lr)?;
        self.cursor += 1;
        let position = match self.chain.steps_since_reset() {
            0 => config.intvl,
            k => k,
        };
        let row = LogRow {
            epoch: self.chain.steps_taken(),
            step: position,
            loss: outcome.loss,
            elapsed_ms: outcome.elapsed.as_secs_f64() * 1e3,
        };
        self.log.rows.push(row);
        Ok(row)
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains for `config.epochs` steps.
pub fn train(config: TrainConfig) -> Result<(BlockChain, TrainLog), TrainFailure> {
    let mut trainer = Trainer::new(config.clone()).map_err(|error| TrainFailure {
        error,
        log: Box::new(TrainLog {
            config: config.clone(),
            rows: Vec::new(),
        }),
    })?;
    match trainer.run(config.epochs) {
        Ok(()) => Ok(trainer.into_parts()),
        Err(error) => Err(TrainFailure {
            error,
            log: Box::new(trainer.log),
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionRow {
    pub t: f64,
    /// Most recent sample fed to the model.
    pub input: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug)]
pub struct PredictionTrace {
    pub rows: Vec<PredictionRow>,
    /// Leading rows made while still reading the prime sequence.
    pub primed: usize,
}

impl PredictionTrace {
    /// Rows generated in closed loop.
    pub fn generated(&self) -> &[PredictionRow] {
        &self.rows[self.primed..]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,input,predicted\n");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", r.t, r.input, r.predicted);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv())
    }
}

/// Reads `prime` one window at a time to build up state, then feeds each
/// prediction back as the newest sample for `horizon` steps. Works on a
/// fresh copy of the parameters; `chain` is not touched.
pub fn predict(chain: &BlockChain, prime: &[f64], horizon: usize) -> Result<PredictionTrace> {
    let window = chain.config().window();
    let dt = chain.config().sine_step;
    if prime.len() < window {
        return Err(Error::Argument(format!(
            "prime needs at least {window} samples, got {}",
            prime.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    let mut model = chain.fresh_copy()?;
    let mut history = prime.to_vec();
    let mut rows = Vec::with_capacity(prime.len() - window + horizon);

    for start in 0..prime.len() - window {
        let predicted = model.infer_step(&Tensor::column(&history[start..start + window]))?;
        rows.push(PredictionRow {
            t: (start + window) as f64 * dt,
            input: history[start + window - 1],
            predicted,
        });
    }
    let primed = rows.len();
    for _ in 0..horizon {
        let n = history.len();
        let predicted = model.infer_step(&Tensor::column(&history[n - window..]))?;
        rows.push(PredictionRow {
            t: n as f64 * dt,
            input: history[n - 1],
            predicted,
        });
        history.push(predicted);
    }
    Ok(PredictionTrace { rows, primed })
}

/// Samples in one sine period at the configured phase step.
pub fn period_samples(config: &TrainConfig) -> usize {
    (2.0 * PI / config.sine_step).ceil() as usize
}

/// Mean `|predicted - sin|` over one closed-loop period, primed with
/// `prime_len` samples of the wave starting at phase 0.
pub fn period_error(chain: &BlockChain, prime_len: usize) -> Result<f64> {
    let config = chain.config();
    let prime = gen_sine(prime_len, config.sine_step, 0.0)?;
    let trace = predict(chain, &prime, period_samples(config))?;
    let generated = trace.generated();
    let total: f64 = generated
        .iter()
        .map(|r| (r.predicted - (r.t).sin()).abs())
        .sum();
    Ok(total / generated.len() as f64)
}

#[derive(Debug)]
pub struct SweepResult {
    pub intvl: usize,
    pub outcome: Result<TrainLog, TrainFailure>,
}

/// Trains once per interval with otherwise identical configuration. With
/// `parallel`, each configuration runs on its own thread.
pub fn sweep(base: &TrainConfig, intvls: &[usize], parallel: bool) -> Result<Vec<SweepResult>> {
    if intvls.is_empty() {
        return Err(Error::Argument("sweep needs at least one interval".into()));
    }
    let configs: Vec<TrainConfig> = intvls
        .iter()
        .map(|&intvl| TrainConfig {
            intvl,
            ..base.clone()
        })
        .collect();
    let run = |config: TrainConfig| SweepResult {
        intvl: config.intvl,
        outcome: train(config).map(|(_, log)| log),
    };
    if parallel {
        Ok(std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .into_iter()
                .map(|c| s.spawn(move || run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        }))
    } else {
        Ok(configs.into_iter().map(run).collect())
    }
}

/// Outcome of comparing autodiff against central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / |analytic|` over coordinates with `|analytic| >= 1e-8`.
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over coordinates with `|analytic| < 1e-8`.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub const SMALL: f64 = 1e-8;

    /// Relative error with the absolute fallback folded in.
    pub fn max_error(&self) -> f64 {
        self.max_rel_error.max(self.max_abs_error)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error < Self::SMALL
    }

    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            coordinates: self.coordinates + other.coordinates,
        }
    }
}

/// Checks the autodiff gradient of a scalar graph against central
/// differences `(f(θ + εe_i) - f(θ - εe_i)) / 2ε`. `builder` receives the
/// parameter ids in the order of `theta` and returns the scalar output.
pub fn grad_check<F>(theta: &[Tensor], builder: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[VarId]) -> Result<VarId>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Argument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let evaluate = |values: &[Tensor]| -> Result<(Graph, Vec<VarId>, VarId)> {
        let mut graph = Graph::new();
        let ids = values
            .iter()
            .map(|v| graph.param(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = builder(&mut graph, &ids)?;
        if graph.value(out).shape() != (1, 1) {
            return Err(Error::Argument(format!(
                "grad_check needs a scalar output, got {:?}",
                graph.value(out).shape()
            )));
        }
        let value = graph.value(out).item();
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("f = {value}")));
        }
        Ok((graph, ids, out))
    };
    let scalar = |values: &[Tensor]| -> Result<f64> {
        let (graph, _, out) = evaluate(values)?;
        Ok(graph.value(out).item())
    };

    let (mut graph, ids, out) = evaluate(theta)?;
    graph.backward(out, &Tensor::scalar(1.0), None)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| graph.grad_or_zeros(id)).collect();

    let mut report = GradCheckReport::default();
    let mut probe = theta.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let original = probe[pi].data()[k];
            probe[pi].data_mut()[k] = original + epsilon;
            let plus = scalar(&probe)?;
            probe[pi].data_mut()[k] = original - epsilon;
            let minus = scalar(&probe)?;
            probe[pi].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[k];
            let err = (a - numeric).abs();
            if a.abs() < GradCheckReport::SMALL {
                report.max_abs_error = report.max_abs_error.max(err);
            } else {
                report.max_rel_error = report.max_rel_error.max(err / a.abs());
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

fn uniform(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    Tensor::rand_init(rows, cols, 1.0, rng).expect("positive shape and scale")
}

/// `weights · y` for a column `y`, as a scalar graph output.
fn project(graph: &mut Graph, y: VarId, weights: &Tensor) -> Result<VarId> {
    let w = graph.constant(weights.clone());
    graph.matmul(w, y)
}

/// Builds a scalar graph from parameter ids.
pub type GraphBuilder = Box<dyn Fn(&mut Graph, &[VarId]) -> Result<VarId>>;

/// One named gradient-check case: parameter values plus the graph recipe.
pub struct GradCase {
    pub name: &'static str,
    pub theta: Vec<Tensor>,
    pub builder: GraphBuilder,
}

/// A randomized instance of every function kind and of both LSTM cells.
pub fn gradient_cases(hidden: usize, seed: u64) -> Vec<GradCase> {
    let mut rng = seeded_rng(seed);
    let h = hidden;
    let proj = uniform(1, h, &mut rng);
    let mut cases: Vec<GradCase> = Vec::new();

    let mut push = |name, theta, builder: GraphBuilder| {
        cases.push(GradCase {
            name,
            theta,
            builder,
        })
    };

    let p = proj.clone();
    push(
        "linear",
        vec![
            uniform(h, h, &mut rng),
            uniform(h, 1, &mut rng),
            uniform(h, 1, &mut rng),
        ],
        Box::new(move |g, ids| {
            let y = g.linear(ids[0], ids[1], ids[2])?;
            project(g, y, &p)
        }),
    );
    let p = proj.clone();
    push(
        "matmul",
        vec![uniform(h, h, &mut rng), uniform(h, 1, &mut rng)],
        Box::new(move |g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            project(g, y, &p)
        }),
    );
    let p = proj.clone();
    push(
        "add",
        vec![uniform(h, 1, &mut rng), uniform(h, 1, &mut rng)],
        Box::new(move |g, ids| {
            let y = g.add(ids[0], ids[1])?;
            let y = g.hadamard(y, ids[0])?;
            project(g, y, &p)
        }),
    );
    let p = proj.clone();
    push(
        "hadamard",
        vec![uniform(h, 1, &mut rng), uniform(h, 1, &mut rng)],
        Box::new(move |g, ids| {
            let y = g.hadamard(ids[0], ids[1])?;
            project(g, y, &p)
        }),
    );
    let p = proj.clone();
    push(
        "tanh",
        vec![uniform(h, 1, &mut rng).scale(2.0)],
        Box::new(move |g, ids| {
            let y = g.tanh(ids[0])?;
            project(g, y, &p)
        }),
    );
    let p = proj.clone();
    push(
        "sigmoid",
        vec![uniform(h, 1, &mut rng).scale(3.0)],
        Box::new(move |g, ids| {
            let y = g.sigmoid(ids[0])?;
            project(g, y, &p)
        }),
    );
    let target = uniform(h, 1, &mut rng);
    push(
        "mse",
        vec![uniform(h, 1, &mut rng)],
        Box::new(move |g, ids| g.mse(ids[0], &target)),
    );
    let p = proj.clone();
    push(
        "sum_loss",
        vec![
            uniform(h, 1, &mut rng),
            uniform(h, 1, &mut rng),
            uniform(h, 1, &mut rng),
        ],
        Box::new(move |g, ids| {
            let terms = ids
                .iter()
                .map(|&v| {
                    let t = g.tanh(v)?;
                    project(g, t, &p)
                })
                .collect::<Result<Vec<_>>>()?;
            g.sum_loss(&terms)
        }),
    );

    // Chain cell: 15 parameters, then x, c_prev, h_prev.
    let mut scratch = Graph::new();
    let chain = ChainLstmParams::init(&mut scratch, 1, h, 1.0, &mut rng).expect("valid shapes");
    let mut theta: Vec<Tensor> = chain
        .vars()
        .iter()
        .map(|&v| scratch.value(v).clone())
        .collect();
    theta.extend([
        uniform(1, 1, &mut rng),
        uniform(h, 1, &mut rng),
        uniform(h, 1, &mut rng),
    ]);
    let p = proj.clone();
    push(
        "chain_lstm_step",
        theta,
        Box::new(move |g, ids| {
            let params = ChainLstmParams::from_vars(&ids[..15], 1, h)?;
            let prev = LstmState {
                c: ids[16],
                h: ids[17],
            };
            let (state, _) = chain_lstm_step(g, &params, ids[15], prev)?;
            project(g, state.h, &p)
        }),
    );

    for (name, variant) in [
        ("slstm_step", CellVariant::AsPrinted),
        ("slstm_step_symmetric", CellVariant::Symmetric),
    ] {
        // Tree cell: 22 parameters, then left (c, h) and right (c, h).
        let mut scratch = Graph::new();
        let tree = SLstmParams::init(&mut scratch, h, 1.0, &mut rng).expect("valid shapes");
        let mut theta: Vec<Tensor> = tree
            .vars()
            .iter()
            .map(|&v| scratch.value(v).clone())
            .collect();
        theta.extend((0..4).map(|_| uniform(h, 1, &mut rng)));
        let p = proj.clone();
        push(
            name,
            theta,
            Box::new(move |g, ids| {
                let params = SLstmParams::from_vars(&ids[..22], h)?;
                let left = LstmState {
                    c: ids[22],
                    h: ids[23],
                };
                let right = LstmState {
                    c: ids[24],
                    h: ids[25],
                };
                let (state, _) = slstm_step(g, &params, left, right, variant)?;
                let out = g.hadamard(state.c, state.h)?;
                let out = g.add(out, state.h)?;
                project(g, out, &p)
            }),
        );
    }

    // Four-leaf tree: parameters shared by three cell applications.
    let mut scratch = Graph::new();
    let tree = SLstmParams::init(&mut scratch, h, 0.6, &mut rng).expect("valid shapes");
    let mut theta: Vec<Tensor> = tree
        .vars()
        .iter()
        .map(|&v| scratch.value(v).clone())
        .collect();
    theta.extend((0..8).map(|_| uniform(h, 1, &mut rng)));
    let p = proj;
    let target = rng.gen_range(-0.5..0.5);
    push(
        "lstm_tree_4",
        theta,
        Box::new(move |g, ids| {
            let params = SLstmParams::from_vars(&ids[..22], h)?;
            let leaves: Vec<LstmState> = ids[22..]
                .chunks(2)
                .map(|pair| LstmState {
                    c: pair[0],
                    h: pair[1],
                })
                .collect();
            let tree = build_lstm_tree(g, &params, &leaves, CellVariant::AsPrinted)?;
            let y = project(g, tree.root, &p)?;
            let y = g.tanh(y)?;
            g.mse(y, &Tensor::scalar(target))
        }),
    );
    cases
}

/// Runs [`gradient_cases`] for `seeds` seeds and merges reports per case name.
pub fn gradient_suite(
    hidden: usize,
    seeds: u64,
    epsilon: f64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut merged: Vec<(&'static str, GradCheckReport)> = Vec::new();
    for seed in 0..seeds {
        for case in gradient_cases(hidden, seed) {
            let report = grad_check(&case.theta, &case.builder, epsilon)?;
            match merged.iter_mut().find(|(n, _)| *n == case.name) {
                Some((_, r)) => *r = r.merge(report),
                None => merged.push((case.name, report)),
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_values() {
        let s = gen_sine(3, PI / 2.0, 0.0).unwrap();
        assert!((s[0]).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12 && s[2].abs() < 1e-12);

        let a = gen_sine(20, 0.37, 0.0).unwrap();
        let b = gen_sine(20, 0.37, PI).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y).abs() < 1e-12);
        }

        let k = 16;
        let s = gen_sine(3 * k, 2.0 * PI / k as f64, 0.3).unwrap();
        for i in 0..2 * k {
            assert!((s[i] - s[i + k]).abs() < 1e-9);
        }
        assert!(gen_sine(0, 0.1, 0.0).is_err());
        assert!(gen_sine(3, 0.0, 0.0).is_err());
    }

    #[test]
    fn quadratic_grad_check() {
        let theta = vec![Tensor::ones(3, 1)];
        let report = grad_check(
            &theta,
            |g, ids| {
                let sq = g.hadamard(ids[0], ids[0])?;
                let ones = g.constant(Tensor::ones(1, 3));
                g.matmul(ones, sq)
            },
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn grad_check_rejects_non_finite_objective() {
        let theta = vec![Tensor::scalar(1.0)];
        let err = grad_check(
            &theta,
            |g, _| Ok(g.constant(Tensor::scalar(f64::NAN))),
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn lstm_cells_match_central_differences() {
        // At step 1e-6 a one-ulp error in f becomes ~1e-11 in the quotient,
        // so the bound is relative plus a small absolute floor.
        for seed in 0..5 {
            for case in gradient_cases(4, seed) {
                if !case.name.contains("lstm") {
                    continue;
                }
                let mut graph = Graph::new();
                let ids: Vec<VarId> = case
                    .theta
                    .iter()
                    .map(|t| graph.param(t.clone()).unwrap())
                    .collect();
                let out = (case.builder)(&mut graph, &ids).unwrap();
                graph.backward(out, &Tensor::scalar(1.0), None).unwrap();
                let eval = |theta: &[Tensor]| {
                    let mut g = Graph::new();
                    let ids: Vec<VarId> =
                        theta.iter().map(|t| g.param(t.clone()).unwrap()).collect();
                    let out = (case.builder)(&mut g, &ids).unwrap();
                    g.value(out).item()
                };
                let mut probe = case.theta.clone();
                for (pi, &id) in ids.iter().enumerate() {
                    let analytic = graph.grad_or_zeros(id);
                    for k in 0..analytic.len() {
                        let x = probe[pi].data()[k];
                        probe[pi].data_mut()[k] = x + 1e-6;
                        let plus = eval(&probe);
                        probe[pi].data_mut()[k] = x - 1e-6;
                        let minus = eval(&probe);
                        probe[pi].data_mut()[k] = x;
                        let numeric = (plus - minus) / 2e-6;
                        let a = analytic.data()[k];
                        assert!(
                            (a - numeric).abs() <= 1e-5 * a.abs() + 1e-9,
                            "{} seed {seed}: {a} vs {numeric}",
                            case.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kendall_and_trailing_mean() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau(&[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0]), 0.0);
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(trailing_mean(&v, 4, 2), Some(3.5));
        assert_eq!(trailing_mean(&v, 2, 2), Some(1.5));
        assert_eq!(trailing_mean(&v, 5, 2), None);
    }

    fn quick(intvl: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            intvl,
            epochs,
            hidden: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_epoch_log() {
        let (_, log) = train(quick(10, 1)).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].epoch, 1);
        assert!(log.rows[0].elapsed_ms > 0.0);
    }

    #[test]
    fn interval_positions_cycle() {
        let (_, log) = train(quick(3, 7)).unwrap();
        let pos: Vec<usize> = log.rows.iter().map(|r| r.step).collect();
        assert_eq!(pos, vec![1, 2, 3, 1, 2, 3, 1]);
    }

    #[test]
    fn training_is_deterministic() {
        let (_, a) = train(quick(5, 30)).unwrap();
        let (_, b) = train(quick(5, 30)).unwrap();
        assert_eq!(a.losses(), b.losses());
    }

    #[test]
    fn divergence_keeps_partial_log() {
        let config = TrainConfig {
            lr: 1e6,
            init_scale: 3.0,
            ..quick(50, 200)
        };
        match train(config) {
            Err(failure) => {
                assert!(matches!(failure.error, Error::Divergence { .. }));
                if let Error::Divergence { step, .. } = failure.error {
                    assert_eq!(failure.log.rows.len(), step - 1);
                }
            }
            Ok((_, log)) => {
                // a saturating model may stay finite; losses must then be finite too
                assert!(log.losses().iter().all(|l| l.is_finite()));
            }
        }
    }

    #[test]
    fn prediction_shapes() {
        let (chain, _) = train(quick(10, 5)).unwrap();
        let window = chain.config().window();
        let prime = gen_sine(window + 2, 0.1, 0.0).unwrap();
        let trace = predict(&chain, &prime, 1).unwrap();
        assert_eq!(trace.generated().len(), 1);
        assert_eq!(trace.rows.len(), 2 + 1);
        assert!(trace.rows.windows(2).all(|w| w[0].t < w[1].t));
        assert!(predict(&chain, &prime[..window - 1], 1).is_err());
        assert!(predict(&chain, &prime, 0).is_err());
    }

    #[test]
    fn zero_head_predicts_constant() {
        let mut chain = BlockChain::new(quick(10, 1)).unwrap();
        let mut values = chain.param_values();
        let n = values.len();
        values[n - 2] = Tensor::zeros(1, 4);
        values[n - 1] = Tensor::zeros(1, 1);
        chain.set_param_values(&values).unwrap();
        let prime = gen_sine(24, 0.1, 0.0).unwrap();
        let trace = predict(&chain, &prime, 10).unwrap();
        assert!(trace.rows.iter().all(|r| r.predicted == 0.0));
    }

    #[test]
    fn predict_leaves_chain_untouched() {
        let (chain, _) = train(quick(4, 6)).unwrap();
        let before = chain.param_values();
        let vars = chain.graph().var_count();
        predict(&chain, &gen_sine(24, 0.1, 0.0).unwrap(), 5).unwrap();
        assert_eq!(chain.param_values(), before);
        assert_eq!(chain.graph().var_count(), vars);
    }

    #[test]
    fn sweep_runs_each_interval() {
        let base = quick(1, 12);
        let results = sweep(&base, &[2, 3, 4], true).unwrap();
        assert_eq!(
            results.iter().map(|r| r.intvl).collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
        for r in &results {
            assert_eq!(r.outcome.as_ref().unwrap().rows.len(), 12);
        }

        let single = sweep(&quick(3, 12), &[3], false).unwrap();
        let (_, direct) = train(quick(3, 12)).unwrap();
        assert_eq!(
            single[0].outcome.as_ref().unwrap().losses(),
            direct.losses()
        );
        assert!(sweep(&base, &[], false).is_err());
    }

    #[test]
    fn csv_layout() {
        let (_, log) = train(quick(3, 2)).unwrap();
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,step,loss,elapsed_ms"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "1");
        let mantissa = first[2].split('e').next().unwrap();
        assert_eq!(mantissa.replace(['.', '-'], "").len(), 17);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
    }
}
