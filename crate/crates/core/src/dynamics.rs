//! Exact finite-difference algebra on layer sequences.
//!
//! Binomial coefficients are exact integers from a Pascal table. Difference
//! operators, binomial inversion and the block-structured transition/forcing
//! matrices of the higher-order state-space forms are written against the
//! small [`Linear`] trait so the same code runs on plain tensors and on
//! autodiff variables.
//!
//! Lag windows are passed newest first: `lags[0] = x(l)`, `lags[1] = x(l-1)`, ...
//!
//! Layer indices are integers; the mesh size `dl` only ever appears as a
//! scalar multiplier (constant mesh, no per-layer `dl(n)`).

use std::sync::OnceLock;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest `n` accepted by [`binomial`].
pub const MAX_BINOMIAL_N: u64 = 64;

/// Values that support weighted sums. Terms are accumulated left to right.
pub trait Linear: Sized + Clone {
    fn lin_comb(terms: &[(f64, &Self)]) -> Result<Self>;

    fn zeros_like(&self) -> Self;

    /// Size of the trailing (feature) axis.
    fn width(&self) -> usize;
}

impl Linear for Tensor {
    fn lin_comb(terms: &[(f64, &Self)]) -> Result<Self> {
        let (c0, first) = *terms.first().ok_or_else(|| Error::contract("empty linear combination"))?;
        let mut acc = if c0 == 1.0 { first.clone() } else { first.scale(c0) };
        for &(c, t) in &terms[1..] {
            if t.shape() != acc.shape() {
                return Err(Error::Dimension {
                    op: "lin_comb",
                    left: acc.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            acc.axpy(c, t);
        }
        Ok(acc)
    }

    fn zeros_like(&self) -> Self {
        Tensor::zeros(self.shape().to_vec())
    }

    fn width(&self) -> usize {
        *self.shape().last().unwrap_or(&1)
    }
}

impl<'g> Linear for Var<'g> {
    fn lin_comb(terms: &[(f64, &Self)]) -> Result<Self> {
        let owned: Vec<(f64, Var<'g>)> = terms.iter().map(|&(c, v)| (c, *v)).collect();
        Var::lin_comb(&owned)
    }

    fn zeros_like(&self) -> Self {
        self.graph().constant(Tensor::zeros(self.shape()))
    }

    fn width(&self) -> usize {
        *self.shape().last().unwrap_or(&1)
    }
}

fn pascal() -> &'static Vec<Vec<u128>> {
    static TABLE: OnceLock<Vec<Vec<u128>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows: Vec<Vec<u128>> = vec![vec![1]];
        for n in 1..=MAX_BINOMIAL_N as usize {
            let prev = &rows[n - 1];
            let mut row = vec![1u128; n + 1];
            for r in 1..n {
                row[r] = prev[r - 1].checked_add(prev[r]).expect("Pascal row fits in u128");
            }
            rows.push(row);
        }
        rows
    })
}

/// Exact `C(n, r)`; zero when `r > n`. Fails for `n` beyond [`MAX_BINOMIAL_N`].
pub fn binomial(n: u64, r: u64) -> Result<u128> {
    if n > MAX_BINOMIAL_N {
        return Err(Error::Overflow(format!("binomial({n}, {r}): n exceeds {MAX_BINOMIAL_N}")));
    }
    if r > n {
        return Ok(0);
    }
    Ok(pascal()[n as usize][r as usize])
}

/// `(-1)^r C(n, r)` as a signed integer.
pub fn signed_binomial(n: u64, r: u64) -> Result<i128> {
    let c = i128::try_from(binomial(n, r)?).map_err(|_| Error::Overflow(format!("C({n},{r}) as i128")))?;
    Ok(if r.is_multiple_of(2) { c } else { -c })
}

fn signed_f64(n: usize, r: usize) -> f64 {
    signed_binomial(n as u64, r as u64).expect("order within binomial table") as f64
}

/// `sum_{j=0}^{n} (-1)^j C(n, j)`, which vanishes for every `n >= 1`.
pub fn alternating_binomial_sum(n: u64) -> Result<i128> {
    if n == 0 {
        return Err(Error::contract("alternating binomial sum needs n >= 1"));
    }
    (0..=n).try_fold(0i128, |acc, j| Ok(acc + signed_binomial(n, j)?))
}

/// Coefficients of `x(l+1-j)`, `j = 0..=k`, in the mixed difference
/// `forward(backward^(k-1)) x(l)`: the alternating row `(-1)^j C(k, j)`.
pub fn mixed_diff_coefficients(k: usize) -> Result<Vec<i128>> {
    if k == 0 {
        return Err(Error::contract("mixed difference needs order k >= 1"));
    }
    (0..=k).map(|j| signed_binomial(k as u64, j as u64)).collect()
}

/// `n-1` backward differences of the newest lag:
/// `sum_{j=0}^{n-1} (-1)^j C(n-1, j) x(l-j)`. `n = 1` returns `x(l)`.
pub fn backward_diff_power<T: Linear>(lags: &[T], n: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::contract("difference order n must be >= 1"));
    }
    if lags.len() < n {
        return Err(Error::Bounds {
            what: "backward difference",
            required: n,
            available: lags.len(),
        });
    }
    if n == 1 {
        return Ok(lags[0].clone());
    }
    let terms: Vec<(f64, &T)> = (0..n).map(|j| (signed_f64(n - 1, j), &lags[j])).collect();
    T::lin_comb(&terms)
}

/// States `q_1..q_n` of a lag window: `q_m = backward_diff_power(lags, m)`.
pub fn extract_states<T: Linear>(lags: &[T], n: usize) -> Result<Vec<T>> {
    (1..=n).map(|m| backward_diff_power(lags, m)).collect()
}

/// Recovers the lags `x(l), x(l-1), ..., x(l-n+1)` from states `q_1..q_n`:
/// `x(l-m) = sum_{j=0}^{m} (-1)^j C(m, j) q_{j+1}`. The alternating binomial
/// matrix is its own inverse, so this undoes [`extract_states`].
pub fn binomial_invert<T: Linear>(states: &[T]) -> Result<Vec<T>> {
    if states.is_empty() {
        return Err(Error::contract("binomial inversion needs at least one state"));
    }
    (0..states.len()).map(|m| reconstruct_lag(states, m)).collect()
}

/// One lag `x(l-m)` reconstructed from the states.
pub fn reconstruct_lag<T: Linear>(states: &[T], m: usize) -> Result<T> {
    if states.len() <= m {
        return Err(Error::Bounds {
            what: "binomial inversion",
            required: m + 1,
            available: states.len(),
        });
    }
    if m == 0 {
        return Ok(states[0].clone());
    }
    let terms: Vec<(f64, &T)> = (0..=m).map(|j| (signed_f64(m, j), &states[j])).collect();
    T::lin_comb(&terms)
}

/// Trajectory of equally shaped activations, index 0 = earliest layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSequence {
    entries: Vec<Tensor>,
}

impl LayerSequence {
    pub fn new(entries: Vec<Tensor>) -> Result<Self> {
        if let Some(first) = entries.first() {
            if let Some(bad) = entries.iter().find(|e| e.shape() != first.shape()) {
                return Err(Error::Dimension {
                    op: "layer sequence",
                    left: first.shape().to_vec(),
                    right: bad.shape().to_vec(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            entries: values.iter().map(|&v| Tensor::vector(vec![v])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, l: usize) -> Option<&Tensor> {
        self.entries.get(l)
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.entries
    }

    pub fn width(&self) -> Option<usize> {
        self.entries.first().map(Tensor::numel)
    }

    /// `x(l+1) - x(l)`.
    pub fn forward_diff(&self, l: usize) -> Result<Tensor> {
        if l + 1 >= self.entries.len() {
            return Err(Error::Bounds {
                what: "forward difference",
                required: l + 2,
                available: self.entries.len(),
            });
        }
        self.entries[l + 1].sub(&self.entries[l])
    }

    /// `x(l) - x(l-1)`.
    pub fn backward_diff(&self, l: usize) -> Result<Tensor> {
        self.backward_diff_power(l, 2)
    }

    /// The `(n-1)`-th backward difference at layer `l`.
    pub fn backward_diff_power(&self, l: usize, n: usize) -> Result<Tensor> {
        let lags = self.lags(l, n, "backward difference")?;
        backward_diff_power(&lags, n)
    }

    /// `x(l), x(l-1), ..., x(l-count+1)`.
    pub fn lags(&self, l: usize, count: usize, what: &'static str) -> Result<Vec<Tensor>> {
        if l >= self.entries.len() || l + 1 < count {
            return Err(Error::Bounds {
                what,
                required: count,
                available: (l + 1).min(self.entries.len()),
            });
        }
        Ok((0..count).map(|j| self.entries[l - j].clone()).collect())
    }
}

/// `k x k` integer block matrix; entry `(i, j)` stands for `value * I_d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMatrix {
    k: usize,
    d: usize,
    blocks: Vec<i64>,
}

impl BlockMatrix {
    pub fn from_fn(k: usize, d: usize, f: impl Fn(usize, usize) -> i64) -> Self {
        assert!(k >= 1 && d >= 1, "block matrix needs k, d >= 1");
        let blocks = (0..k * k).map(|idx| f(idx / k, idx % k)).collect();
        Self { k, d, blocks }
    }

    pub fn identity(k: usize, d: usize) -> Self {
        Self::from_fn(k, d, |i, j| i64::from(i == j))
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.blocks[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: i64) {
        self.blocks[i * self.k + j] = value;
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.blocks[i * self.k..(i + 1) * self.k]
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.k).all(|i| (i + 1..self.k).all(|j| self.get(i, j) == 0))
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.k).all(|i| (0..i).all(|j| self.get(i, j) == 0))
    }

    /// Exact determinant of the `k x k` scalar pattern (fraction-free
    /// Bareiss elimination).
    pub fn scalar_determinant(&self) -> i128 {
        let n = self.k;
        let mut m: Vec<i128> = self.blocks.iter().map(|&v| v as i128).collect();
        let mut sign = 1i128;
        let mut prev = 1i128;
        for p in 0..n {
            if m[p * n + p] == 0 {
                match (p + 1..n).find(|&r| m[r * n + p] != 0) {
                    Some(r) => {
                        for c in 0..n {
                            m.swap(p * n + c, r * n + c);
                        }
                        sign = -sign;
                    }
                    None => return 0,
                }
            }
            for i in p + 1..n {
                for j in p + 1..n {
                    m[i * n + j] = (m[i * n + j] * m[p * n + p] - m[i * n + p] * m[p * n + j]) / prev;
                }
            }
            prev = m[p * n + p];
        }
        sign * m[(n - 1) * n + (n - 1)]
    }

    /// Determinant of the expanded `(k d) x (k d)` matrix, `det(pattern)^d`.
    pub fn determinant(&self) -> i128 {
        self.scalar_determinant().pow(self.d as u32)
    }

    /// Dense `(k d) x (k d)` expansion, for checks only.
    pub fn expand(&self) -> Tensor {
        let n = self.k * self.d;
        let mut data = vec![0.0; n * n];
        for i in 0..self.k {
            for j in 0..self.k {
                let v = self.get(i, j) as f64;
                if v != 0.0 {
                    for t in 0..self.d {
                        data[(i * self.d + t) * n + j * self.d + t] = v;
                    }
                }
            }
        }
        Tensor::new([n, n], data).expect("square expansion")
    }

    /// Block matrix-vector product over `k` parts, skipping zero blocks.
    /// A row of zeros yields `None`.
    pub fn apply<T: Linear>(&self, parts: &[T]) -> Result<Vec<Option<T>>> {
        if parts.len() != self.k {
            return Err(Error::contract(format!(
                "block matrix of order {} applied to {} parts",
                self.k,
                parts.len()
            )));
        }
        (0..self.k)
            .map(|i| {
                let terms: Vec<(f64, &T)> = self
                    .row(i)
                    .iter()
                    .zip(parts)
                    .filter(|(&c, _)| c != 0)
                    .map(|(&c, p)| (c as f64, p))
                    .collect();
                if terms.is_empty() {
                    Ok(None)
                } else {
                    T::lin_comb(&terms).map(Some)
                }
            })
            .collect()
    }
}

/// Transition and input matrices of the C^k state-space form:
/// `q(l+1) = U q(l) + I [f(q_1) dl^k; ...]` with `U` upper-triangular ones.
pub fn build_ck_matrices(k: usize, d: usize) -> Result<(BlockMatrix, BlockMatrix)> {
    if k == 0 || d == 0 {
        return Err(Error::contract("C^k matrices need k >= 1 and d >= 1"));
    }
    Ok((
        BlockMatrix::from_fn(k, d, |i, j| i64::from(j >= i)),
        BlockMatrix::identity(k, d),
    ))
}

/// Transition (identity) and forcing matrices of the additive dense
/// state-space form. Forcing row `n` (0-based) holds `(-1)^j C(n, j)`.
pub fn build_dense_matrices(k: usize, d: usize) -> Result<(BlockMatrix, BlockMatrix)> {
    if k == 0 || d == 0 {
        return Err(Error::contract("dense matrices need k >= 1 and d >= 1"));
    }
    let mut forcing = BlockMatrix::identity(k, d);
    for n in 0..k {
        for j in 0..=n {
            forcing.set(n, j, signed_binomial(n as u64, j as u64)? as i64);
        }
    }
    Ok((BlockMatrix::identity(k, d), forcing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_binomials() {
        assert_eq!(binomial(4, 2).unwrap(), 6);
        for k in 0..=MAX_BINOMIAL_N {
            assert_eq!(binomial(k, 0).unwrap(), 1);
        }
        assert_eq!(binomial(3, 5).unwrap(), 0);
        assert!(matches!(binomial(65, 2), Err(Error::Overflow(_))));
    }

    #[test]
    fn mixed_coefficients_low_orders() {
        assert_eq!(mixed_diff_coefficients(1).unwrap(), vec![1, -1]);
        assert_eq!(mixed_diff_coefficients(2).unwrap(), vec![1, -2, 1]);
        assert!(matches!(mixed_diff_coefficients(0), Err(Error::Contract(_))));
    }

    #[test]
    fn alternating_sums_vanish() {
        assert_eq!(alternating_binomial_sum(1).unwrap(), 0);
        assert_eq!(alternating_binomial_sum(3).unwrap(), 0);
    }

    #[test]
    fn forward_diff_examples() {
        let s = LayerSequence::from_scalars(&[0.0, 1.0, 4.0]);
        assert_eq!(s.forward_diff(1).unwrap().data(), &[3.0]);
        let c = LayerSequence::from_scalars(&[2.5; 4]);
        assert_eq!(c.forward_diff(0).unwrap().data(), &[0.0]);
        assert!(matches!(s.forward_diff(2), Err(Error::Bounds { .. })));
    }

    #[test]
    fn backward_diff_power_examples() {
        let s = LayerSequence::from_scalars(&[1.0, 3.0]);
        assert_eq!(s.backward_diff_power(1, 1).unwrap().data(), &[3.0]);
        assert_eq!(s.backward_diff_power(1, 2).unwrap().data(), &[2.0]);
        let err = s.backward_diff_power(1, 3).unwrap_err();
        assert!(err.to_string().contains("need 3"), "{err}");
    }

    #[test]
    fn inversion_k3_matches_pattern() {
        let q: Vec<Tensor> = [5.0, 7.0, 11.0].iter().map(|&v| Tensor::vector(vec![v])).collect();
        let lags = binomial_invert(&q).unwrap();
        assert_eq!(lags[0].data(), &[5.0]);
        assert_eq!(lags[1].data(), &[5.0 - 7.0]);
        assert_eq!(lags[2].data(), &[5.0 - 2.0 * 7.0 + 11.0]);
    }

    #[test]
    fn ck_matrices_k1_and_k3() {
        let (t, i) = build_ck_matrices(1, 4).unwrap();
        assert_eq!((t.get(0, 0), i.get(0, 0)), (1, 1));
        let (t, _) = build_ck_matrices(3, 2).unwrap();
        assert_eq!(t.row(0), &[1, 1, 1]);
        assert_eq!(t.row(1), &[0, 1, 1]);
        assert_eq!(t.row(2), &[0, 0, 1]);
    }

    #[test]
    fn dense_matrices_k3_rows() {
        let (t, f) = build_dense_matrices(3, 2).unwrap();
        assert_eq!(t, BlockMatrix::identity(3, 2));
        assert_eq!(f.row(0), &[1, 0, 0]);
        assert_eq!(f.row(1), &[1, -1, 0]);
        assert_eq!(f.row(2), &[1, -2, 1]);
        assert_eq!(build_dense_matrices(1, 3).unwrap().1.row(0), &[1]);
    }

    #[test]
    fn bareiss_with_pivoting() {
        let m = BlockMatrix::from_fn(3, 1, |i, j| [[0, 2, 1], [1, 1, 0], [3, 0, 1]][i][j]);
        // 0*(1) - 2*(1) + 1*(-3) = -5
        assert_eq!(m.scalar_determinant(), -5);
        let singular = BlockMatrix::from_fn(2, 1, |i, _| i as i64);
        assert_eq!(singular.scalar_determinant(), 0);
    }

    #[test]
    fn expansion_places_scaled_identities() {
        let (_, f) = build_dense_matrices(2, 2).unwrap();
        let e = f.expand();
        assert_eq!(e.shape(), &[4, 4]);
        assert_eq!(e.row(2), &[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(e.row(3), &[0.0, 1.0, 0.0, -1.0]);
    }
}
