//! Equivalence oracles between direct and state-space evaluation, run over
//! a grid of orders, widths, depths and seeds.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::steps::{self, LayerHistory, StateVector};
use crate::arch::ForcingFunction;
use crate::autodiff::{Activation, Graph, Var};
use crate::dynamics::{self, BlockMatrix, LayerSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Deliberate defects used to show that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mutation {
    /// Negates the dense forcing matrix.
    FlipDenseForcingSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub orders: Vec<usize>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Rows per random input batch.
    pub batch: usize,
    pub dl: f64,
    pub tolerance: f64,
    pub identity_tolerance: f64,
    pub mutation: Option<Mutation>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3, 4],
            widths: vec![1, 2, 8],
            depths: vec![3, 10],
            seeds: (0..50).collect(),
            batch: 2,
            dl: 1.0,
            tolerance: 1e-9,
            identity_tolerance: 1e-10,
            mutation: None,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.widths.is_empty() || self.depths.is_empty() || self.seeds.is_empty() {
            return Err(Error::contract("verification ranges must be non-empty"));
        }
        if self.orders.contains(&0) || self.widths.contains(&0) || self.batch == 0 {
            return Err(Error::contract("orders, widths and batch must be >= 1"));
        }
        if !(self.tolerance >= 0.0 && self.identity_tolerance >= 0.0) {
            return Err(Error::contract("tolerances must be >= 0"));
        }
        Ok(())
    }
}

/// Where a check's worst deviation occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub k: usize,
    pub d: usize,
    pub depth: usize,
    pub seed: u64,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} d={} L={} seed={}", self.k, self.d, self.depth, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub worst: Option<Case>,
    pub cases: usize,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_deviation: 0.0,
            tolerance,
            worst: None,
            cases: 0,
        }
    }

    fn record(&mut self, dev: f64, case: Option<Case>) {
        self.cases += 1;
        // NaN counts as the worst possible deviation
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        if dev > self.max_deviation || self.worst.is_none() {
            self.max_deviation = self.max_deviation.max(dev);
            self.worst = case.or(self.worst);
        }
    }

    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<24} max deviation {:.3e} (tolerance {:.1e}, {} cases)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_deviation,
            self.tolerance,
            self.cases
        )?;
        if let (false, Some(c)) = (self.passed(), self.worst) {
            write!(f, " worst at {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

pub const CK_EQUIVALENCE: &str = "ck equivalence";
pub const CK_STATES: &str = "ck extracted states";
pub const CK_MATRIX_FORM: &str = "ck matrix form";
pub const DENSE_EQUIVALENCE: &str = "dense equivalence";
pub const DENSE_STATES: &str = "dense extracted states";
pub const DENSE_IDENTITY: &str = "dense difference identity";
pub const COLLAPSE: &str = "k=1 collapse (bitwise)";
pub const BINOMIAL_ROUNDTRIP: &str = "binomial roundtrip";
pub const ALTERNATING_SUMS: &str = "alternating binomial sums";

/// Random forcing functions `block0..` and a `batch x d` input.
pub fn random_instance(d: usize, depth: usize, batch: usize, seed: u64) -> (Vec<ForcingFunction>, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = (0..depth)
        .map(|l| {
            let w = Tensor::randn([d, d], &mut rng).scale(1.0 / (d as f64).sqrt());
            let b = Tensor::randn([d], &mut rng).scale(0.5);
            ForcingFunction::from_parts(&format!("block{l}"), w, b, Activation::Tanh).expect("square")
        })
        .collect();
    (fs, Tensor::randn([batch, d], &mut rng))
}

fn values(q: &StateVector<Var<'_>>) -> Vec<Tensor> {
    q.parts().iter().map(Var::value).collect()
}

fn max_dev(a: &[Tensor], b: &[Tensor]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(x.max_abs_diff(y)))
}

/// Per-layer states of the direct `C^k` recurrence (extracted from the lag
/// window) and of the state-space form, plus the matrix-form states.
fn ck_runs(fs: &[ForcingFunction], x0: &Tensor, k: usize, dl: f64) -> Result<[Vec<Vec<Tensor>>; 3]> {
    let g = Graph::new();
    let x = g.constant(x0.clone());
    let mut hist = LayerHistory::ghost(x, k);
    let mut q = steps::initialize_state(x, k)?;
    let mut qm = q.clone();
    let (u, input) = dynamics::build_ck_matrices(k, x0.cols())?;
    let mut direct = vec![values(&hist.states()?)];
    let mut state = vec![values(&q)];
    let mut matrix = vec![values(&qm)];
    for f in fs {
        let next = steps::ck_direct_step(f, &hist, k, dl)?;
        hist.push(next);
        q = steps::ck_state_step(f, &q, k, dl)?;
        qm = steps::ck_state_step_matrix(f, &qm, &u, &input, dl)?;
        direct.push(values(&hist.states()?));
        state.push(values(&q));
        matrix.push(values(&qm));
    }
    Ok([direct, state, matrix])
}

struct DenseRun {
    direct_states: Vec<Vec<Tensor>>,
    positions: Vec<Tensor>,
    forcing: Vec<Tensor>,
    state: Vec<Vec<Tensor>>,
}

fn dense_runs(fs: &[ForcingFunction], x0: &Tensor, k: usize, dl: f64, matrix: &BlockMatrix) -> Result<DenseRun> {
    let g = Graph::new();
    let x = g.constant(x0.clone());
    let mut hist = LayerHistory::ghost(x, k);
    let mut q = steps::initialize_state(x, k)?;
    let mut run = DenseRun {
        direct_states: vec![values(&hist.states()?)],
        positions: vec![x0.clone()],
        forcing: Vec::with_capacity(fs.len()),
        state: vec![values(&q)],
    };
    for l in 0..fs.len() {
        let window: Vec<&ForcingFunction> = (0..k.min(l + 1)).map(|j| &fs[l - j]).collect();
        run.forcing.push(window[0].apply(hist.lags()[0])?.value());
        let next = steps::dense_direct_step(&window, &hist, dl)?;
        run.positions.push(next.value());
        hist.push(next);
        q = steps::dense_state_step_with(&window, &q, dl, matrix)?;
        run.direct_states.push(values(&hist.states()?));
        run.state.push(values(&q));
    }
    Ok(run)
}

/// Residual trajectory from [`steps::c1_step`].
fn residual_run(fs: &[ForcingFunction], x0: &Tensor, dl: f64) -> Result<Vec<Tensor>> {
    let g = Graph::new();
    let mut x = g.constant(x0.clone());
    let mut out = vec![x.value()];
    for f in fs {
        x = steps::c1_step(f, x, dl)?;
        out.push(x.value());
    }
    Ok(out)
}

/// Largest violation of the dense identity over `n = 0..k-1`, on the
/// trajectory padded with `k - 1` ghost layers (constant activation, zero
/// forcing) so every order is checkable.
fn dense_identity_deviation(run: &DenseRun, k: usize, dl: f64) -> Result<f64> {
    let x0 = &run.positions[0];
    let zero = Tensor::zeros(x0.shape().to_vec());
    let mut xs = vec![x0.clone(); k - 1];
    xs.extend(run.positions.iter().cloned());
    let mut fs = vec![zero; k - 1];
    fs.extend(run.forcing.iter().cloned());
    let (xs, fs) = (LayerSequence::new(xs)?, LayerSequence::new(fs)?);
    let mut worst: f64 = 0.0;
    for n in 0..k {
        worst = worst.max(steps::dense_difference_residual(&xs, &fs, n, dl)?);
    }
    Ok(worst)
}

fn binomial_checks(tol: f64, seeds: &[u64]) -> Result<(CheckResult, CheckResult)> {
    let mut roundtrip = CheckResult::new(BINOMIAL_ROUNDTRIP, tol.min(1e-12));
    for n in 1..=8usize {
        let ints: Vec<Tensor> = (0..n).map(|i| Tensor::scalar(((i * 7 + 3) % 11) as f64 - 5.0)).collect();
        let back = dynamics::binomial_invert(&dynamics::extract_states(&ints, n)?)?;
        // integers stay exact
        roundtrip.record(if back == ints { 0.0 } else { f64::INFINITY }, None);
        for &seed in seeds.iter().take(10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1);
            let lags: Vec<Tensor> = (0..n).map(|_| Tensor::randn([3], &mut rng)).collect();
            let back = dynamics::binomial_invert(&dynamics::extract_states(&lags, n)?)?;
            roundtrip.record(max_dev(&lags, &back), None);
        }
    }
    let mut sums = CheckResult::new(ALTERNATING_SUMS, 0.0);
    for n in 1..=dynamics::MAX_BINOMIAL_N {
        sums.record(dynamics::alternating_binomial_sum(n)?.unsigned_abs() as f64, None);
    }
    Ok((roundtrip, sums))
}

/// Runs every check over the configured grid.
pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let tol = cfg.tolerance;
    let mut ck_eq = CheckResult::new(CK_EQUIVALENCE, tol);
    let mut ck_states = CheckResult::new(CK_STATES, tol);
    let mut ck_matrix = CheckResult::new(CK_MATRIX_FORM, tol);
    let mut dense_eq = CheckResult::new(DENSE_EQUIVALENCE, tol);
    let mut dense_states = CheckResult::new(DENSE_STATES, tol);
    let mut identity = CheckResult::new(DENSE_IDENTITY, cfg.identity_tolerance);
    let mut collapse = CheckResult::new(COLLAPSE, 0.0);

    for &k in &cfg.orders {
        for &d in &cfg.widths {
            let (_, mut forcing_matrix) = dynamics::build_dense_matrices(k, d)?;
            if cfg.mutation == Some(Mutation::FlipDenseForcingSign) {
                for i in 0..k {
                    for j in 0..k {
                        forcing_matrix.set(i, j, -forcing_matrix.get(i, j));
                    }
                }
            }
            for &depth in &cfg.depths {
                for &seed in &cfg.seeds {
                    let case = Some(Case { k, d, depth, seed });
                    let (fs, x0) = random_instance(d, depth, cfg.batch, seed);

                    let [direct, state, matrix] = ck_runs(&fs, &x0, k, cfg.dl)?;
                    let pos = |run: &[Vec<Tensor>]| run.iter().map(|s| s[0].clone()).collect::<Vec<_>>();
                    ck_eq.record(max_dev(&pos(&direct), &pos(&state)), case);
                    ck_states.record(
                        direct.iter().zip(&state).fold(0.0, |m, (a, b)| m.max(max_dev(a, b))),
                        case,
                    );
                    ck_matrix.record(
                        state.iter().zip(&matrix).fold(0.0, |m, (a, b)| m.max(max_dev(a, b))),
                        case,
                    );

                    let run = dense_runs(&fs, &x0, k, cfg.dl, &forcing_matrix)?;
                    dense_eq.record(max_dev(&run.positions, &pos(&run.state)), case);
                    dense_states.record(
                        run.direct_states.iter().zip(&run.state).fold(0.0, |m, (a, b)| m.max(max_dev(a, b))),
                        case,
                    );
                    if depth >= 1 {
                        identity.record(dense_identity_deviation(&run, k, cfg.dl)?, case);
                    }

                    if k == 1 {
                        let residual = residual_run(&fs, &x0, cfg.dl)?;
                        let same = residual == pos(&direct) && residual == run.positions;
                        collapse.record(if same { 0.0 } else { f64::INFINITY }, case);
                    }
                }
            }
        }
    }

    let (roundtrip, sums) = binomial_checks(tol, &cfg.seeds)?;
    let mut checks = vec![ck_eq, ck_states, ck_matrix, dense_eq, dense_states, identity];
    if collapse.cases > 0 {
        checks.push(collapse);
    }
    checks.push(roundtrip);
    checks.push(sums);
    Ok(VerifyReport { checks })
}
