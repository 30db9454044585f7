//! Single-layer updates for every block family, in direct (multi-lag) and
//! state-space form.
//!
//! Direct forms consume a [`LayerHistory`] of the last `k` activations and
//! return `x(l+1)`; the caller pushes it. State-space forms map a
//! [`StateVector`] `q(l)` to `q(l+1)`.

use crate::autodiff::Var;
use crate::dynamics::{self, BlockMatrix, LayerSequence, Linear};
use crate::error::{Error, Result};

use super::forcing::ForcingFunction;

/// The most recent `k` activations, newest first.
#[derive(Debug, Clone)]
pub struct LayerHistory<T> {
    window: Vec<T>,
    capacity: usize,
}

impl<T: Linear> LayerHistory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history needs capacity >= 1");
        Self {
            window: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// Constant ghost history `x(0) = x(-1) = ... = x(-k+1) = x0`.
    pub fn ghost(x0: T, k: usize) -> Self {
        let mut h = Self::new(k);
        h.window = vec![x0; k];
        h
    }

    pub fn push(&mut self, x: T) {
        self.window.insert(0, x);
        self.window.truncate(self.capacity);
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn newest(&self) -> Option<&T> {
        self.window.first()
    }

    pub fn lags(&self) -> &[T] {
        &self.window
    }

    /// States `q_1..q_k` implied by the window.
    pub fn states(&self) -> Result<StateVector<T>> {
        Ok(StateVector::new(dynamics::extract_states(&self.window, self.window.len())?))
    }
}

/// Stacked backward differences `q = [q_1; ...; q_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    parts: Vec<T>,
}

impl<T: Linear> StateVector<T> {
    pub fn new(parts: Vec<T>) -> Self {
        assert!(!parts.is_empty(), "state vector needs at least one part");
        Self { parts }
    }

    pub fn order(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[T] {
        &self.parts
    }

    pub fn into_parts(self) -> Vec<T> {
        self.parts
    }

    pub fn position(&self) -> &T {
        &self.parts[0]
    }

    /// Dimension of the equivalent first-order system: `k * d`.
    pub fn embedding_dim(&self) -> usize {
        self.parts.iter().map(Linear::width).sum()
    }

    /// Lags `x(l), ..., x(l-k+1)` recovered by binomial inversion.
    pub fn lags(&self) -> Result<Vec<T>> {
        dynamics::binomial_invert(&self.parts)
    }
}

/// `q_1 = x0`, all higher differences zero.
pub fn initialize_state<T: Linear>(x0: T, k: usize) -> Result<StateVector<T>> {
    if k == 0 {
        return Err(Error::contract("state order k must be >= 1"));
    }
    let zero = x0.zeros_like();
    let mut parts = vec![x0];
    parts.extend(std::iter::repeat_n(zero, k - 1));
    Ok(StateVector::new(parts))
}

fn check_dl(dl: f64) -> Result<()> {
    if dl > 0.0 && dl.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("mesh size dl must be positive and finite, got {dl}")))
    }
}

/// `f(x) * dl^k`, the forcing term of a `k`-th order block.
pub fn perturbation<'g>(f: &ForcingFunction, x: Var<'g>, k: usize, dl: f64) -> Result<Var<'g>> {
    check_dl(dl)?;
    let out = f.apply(x)?;
    let s = dl.powi(k as i32);
    Ok(if s == 1.0 { out } else { out.scale(s) })
}

/// Plain layer: `x(l+1) = f(x(l))`.
pub fn c0_step<'g>(f: &ForcingFunction, x: Var<'g>) -> Result<Var<'g>> {
    f.apply(x)
}

/// Residual layer: `x(l+1) = x(l) + f(x(l)) dl`.
pub fn c1_step<'g>(f: &ForcingFunction, x: Var<'g>, dl: f64) -> Result<Var<'g>> {
    x.add(perturbation(f, x, 1, dl)?)
}

/// `x(l+1) = f(x(l)) dl^k - sum_{j=1}^{k} (-1)^j C(k, j) x(l+1-j)`.
pub fn ck_direct_step<'g>(f: &ForcingFunction, history: &LayerHistory<Var<'g>>, k: usize, dl: f64) -> Result<Var<'g>> {
    let lags = history.lags();
    if lags.len() < k {
        return Err(Error::contract(format!(
            "C^{k} step needs {k} lagged activations, history holds {}",
            lags.len()
        )));
    }
    let coeffs = dynamics::mixed_diff_coefficients(k)?;
    let forcing = perturbation(f, lags[0], k, dl)?;
    let mut terms: Vec<(f64, &Var<'g>)> = vec![(1.0, &forcing)];
    for j in 1..=k {
        terms.push((-coeffs[j] as f64, &lags[j - 1]));
    }
    Linear::lin_comb(&terms)
}

/// `q_n(l+1) = sum_{j=n}^{k} q_j(l) + f(q_1(l)) dl^k` for `n = 1..k`.
pub fn ck_state_step<'g>(f: &ForcingFunction, q: &StateVector<Var<'g>>, k: usize, dl: f64) -> Result<StateVector<Var<'g>>> {
    if q.order() != k {
        return Err(Error::contract(format!("C^{k} state step got {} state parts", q.order())));
    }
    let forcing = perturbation(f, *q.position(), k, dl)?;
    let parts = q.parts();
    let next = (0..k)
        .map(|n| {
            let mut terms: Vec<(f64, &Var<'g>)> = parts[n..].iter().map(|p| (1.0, p)).collect();
            terms.push((1.0, &forcing));
            Linear::lin_comb(&terms)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StateVector::new(next))
}

/// The same update evaluated through the block matrices
/// `q(l+1) = U q(l) + I [u; ...; u]`, `u = f(q_1) dl^k`.
pub fn ck_state_step_matrix<'g>(
    f: &ForcingFunction,
    q: &StateVector<Var<'g>>,
    transition: &BlockMatrix,
    input: &BlockMatrix,
    dl: f64,
) -> Result<StateVector<Var<'g>>> {
    let k = transition.order();
    if q.order() != k || input.order() != k {
        return Err(Error::contract("block matrix order does not match state"));
    }
    let forcing = perturbation(f, *q.position(), k, dl)?;
    let drift = transition.apply(q.parts())?;
    let drive = input.apply(&vec![forcing; k])?;
    let next = drift
        .into_iter()
        .zip(drive)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => a.add(b),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Ok(q.position().zeros_like()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StateVector::new(next))
}

/// Additive dense update from precomputed forcing outputs
/// `forcing[j] = f(l-j)(x(l-j))`, newest first:
/// `x(l+1) = sum_j forcing[j] dl + x(l+1-k)`.
///
/// Fewer than `k` forcing outputs is the warm-up window: layers before the
/// input contribute nothing.
pub fn dense_direct_update<'g>(forcing: &[Var<'g>], history: &LayerHistory<Var<'g>>, dl: f64) -> Result<Var<'g>> {
    check_dl(dl)?;
    let lags = history.lags();
    let k = lags.len();
    if forcing.is_empty() || forcing.len() > k {
        return Err(Error::contract(format!(
            "dense step with {} forcing outputs and {k} lags",
            forcing.len()
        )));
    }
    let mut terms: Vec<(f64, &Var<'g>)> = forcing.iter().map(|f| (dl, f)).collect();
    terms.push((1.0, &lags[k - 1]));
    Linear::lin_comb(&terms)
}

/// Additive dense layer; `fs[j]` is the forcing function of layer `l-j`.
pub fn dense_direct_step<'g>(fs: &[&ForcingFunction], history: &LayerHistory<Var<'g>>, dl: f64) -> Result<Var<'g>> {
    let lags = history.lags();
    if fs.len() > lags.len() {
        return Err(Error::contract(format!(
            "dense step with {} forcing functions and {} lags",
            fs.len(),
            lags.len()
        )));
    }
    let forcing = fs
        .iter()
        .zip(lags)
        .map(|(f, x)| f.apply(*x))
        .collect::<Result<Vec<_>>>()?;
    dense_direct_update(&forcing, history, dl)
}

/// Additive dense layer in state-space form. The forcing arguments
/// `x(l-j)` are reconstructed from `q(l)` by binomial inversion, and
/// `q_n(l+1) = q_n(l) + sum_j B[n][j] f(l-j)(x(l-j)) dl`.
pub fn dense_state_step<'g>(fs: &[&ForcingFunction], q: &StateVector<Var<'g>>, dl: f64) -> Result<StateVector<Var<'g>>> {
    let (_, forcing) = dynamics::build_dense_matrices(q.order(), q.position().width())?;
    dense_state_step_with(fs, q, dl, &forcing)
}

/// [`dense_state_step`] with an explicit forcing matrix.
pub fn dense_state_step_with<'g>(
    fs: &[&ForcingFunction],
    q: &StateVector<Var<'g>>,
    dl: f64,
    forcing_matrix: &BlockMatrix,
) -> Result<StateVector<Var<'g>>> {
    check_dl(dl)?;
    let k = q.order();
    if forcing_matrix.order() != k {
        return Err(Error::contract(format!(
            "forcing matrix of order {} for {k} states",
            forcing_matrix.order()
        )));
    }
    if fs.is_empty() || fs.len() > k {
        return Err(Error::contract(format!("dense state step with {} forcing functions for order {k}", fs.len())));
    }
    let forcing = fs
        .iter()
        .enumerate()
        .map(|(j, f)| f.apply(dynamics::reconstruct_lag(q.parts(), j)?))
        .collect::<Result<Vec<_>>>()?;
    let next = q
        .parts()
        .iter()
        .enumerate()
        .map(|(n, qn)| {
            let mut terms: Vec<(f64, &Var<'g>)> = vec![(1.0, qn)];
            for (j, fj) in forcing.iter().enumerate() {
                let c = forcing_matrix.get(n, j);
                if c != 0 {
                    terms.push((c as f64 * dl, fj));
                }
            }
            Linear::lin_comb(&terms)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StateVector::new(next))
}

/// Largest deviation in `forward(backward^n) x(l) = backward^n (f(l) dl)`
/// over every layer with enough history. `forcing[l] = f(l)(x(l))`.
pub fn dense_difference_residual(trajectory: &LayerSequence, forcing: &LayerSequence, n: usize, dl: f64) -> Result<f64> {
    let coeffs = dynamics::mixed_diff_coefficients(n + 1)?;
    let last = forcing.len().min(trajectory.len().saturating_sub(1));
    if last <= n {
        return Err(Error::Bounds {
            what: "dense difference identity",
            required: n + 2,
            available: trajectory.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for l in n..last {
        let window = trajectory.lags(l + 1, n + 2, "dense difference identity")?;
        let terms: Vec<(f64, &_)> = coeffs.iter().zip(&window).map(|(&c, x)| (c as f64, x)).collect();
        let lhs = Linear::lin_comb(&terms)?;
        let rhs = forcing.backward_diff_power(l, n + 1)?.scale(dl);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    Ok(worst)
}

/// True iff the dense identity holds within `tol` at every checkable layer.
pub fn dense_difference_identity_check(
    trajectory: &LayerSequence,
    forcing: &LayerSequence,
    n: usize,
    dl: f64,
    tol: f64,
) -> Result<bool> {
    Ok(dense_difference_residual(trajectory, forcing, n, dl)? <= tol)
}
