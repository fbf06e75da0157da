//! Dense matrix/vector primitives and the log-domain kernels used by every
//! solver iteration.
//!
//! All accumulation is plain `f64`. Matrices are dense and row-major; a
//! `D x N` matrix stores feature dimensions as rows and samples as columns.

use std::ops::Index;

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by [`SimplexVector::new`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Row-major dense matrix with at least one row and one column.
///
/// Matrices built through the public constructors have finite entries.
/// Solver outputs may carry NaN or infinities; those only reach callers
/// wrapped in a [`TransportPlan`](crate::TransportPlan) whose diagnostics
/// flag the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::EntryCount {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "matrix",
                index,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(Error::LengthMismatch {
                    left: n_cols,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n_rows, n_cols, data)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Skips the finiteness check. Used for solver iterates.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert!(rows > 0 && cols > 0 && data.len() == rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `M 1_N`: one sum per row.
    pub fn row_sums(&self) -> Vec<f64> {
        self.iter_rows().map(|r| r.iter().sum()).collect()
    }

    /// `M^T 1_D`: one sum per column.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += v;
            }
        }
        out
    }

    /// Column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.cols {
            return Err(Error::LengthMismatch {
                left: self.cols,
                right: perm.len(),
            });
        }
        let mut seen = vec![false; self.cols];
        for &p in perm {
            if p >= self.cols || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParams(format!(
                    "{perm:?} is not a permutation"
                )));
            }
        }
        let data = self
            .iter_rows()
            .flat_map(|row| perm.iter().map(move |&p| row[p]))
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    /// Columns of `self` followed by the columns of `other`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} rows next to {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (a, b) in self.iter_rows().zip(other.iter_rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Self::from_raw(self.rows, cols, data))
    }

    /// `self * v` for a vector of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::LengthMismatch {
                left: self.cols,
                right: v.len(),
            });
        }
        Ok(self
            .iter_rows()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.data[row * self.cols + col]
    }
}

/// A probability vector: nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    weights: Vec<f64>,
}

impl SimplexVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("simplex vector"));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidSimplex(format!("weight {i} is {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidSimplex(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("simplex vector"));
        }
        Ok(Self {
            weights: vec![1.0 / dim as f64; dim],
        })
    }

    /// Normalizes nonnegative weights with positive total mass.
    pub fn from_unnormalized(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::InvalidSimplex(format!("total mass {total}")));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Elementwise natural log.
    pub fn ln(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln()).collect()
    }
}

/// `max + ln sum exp(v - max)`. NaN in, NaN out; all `-inf` gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v.is_nan() {
            return f64::NAN;
        }
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One log-sum-exp per row (reduction over the `N` columns).
pub fn logsumexp_rows(m: &DenseMatrix) -> Vec<f64> {
    m.iter_rows().map(logsumexp).collect()
}

/// One log-sum-exp per column (reduction over the `D` rows).
pub fn logsumexp_cols(m: &DenseMatrix) -> Vec<f64> {
    let cols = m.cols();
    let mut max = vec![f64::NEG_INFINITY; cols];
    let mut nan = vec![false; cols];
    for row in m.iter_rows() {
        for ((mx, bad), &v) in max.iter_mut().zip(nan.iter_mut()).zip(row) {
            if v.is_nan() {
                *bad = true;
            } else if v > *mx {
                *mx = v;
            }
        }
    }
    let mut acc = vec![0.0; cols];
    for row in m.iter_rows() {
        for ((a, mx), &v) in acc.iter_mut().zip(&max).zip(row) {
            if mx.is_finite() {
                *a += (v - mx).exp();
            }
        }
    }
    acc.iter()
        .zip(&max)
        .zip(&nan)
        .map(|((a, mx), bad)| {
            if *bad {
                f64::NAN
            } else if !mx.is_finite() {
                *mx
            } else {
                mx + a.ln()
            }
        })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(values: &[f64]) -> Result<SimplexVector> {
    if values.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "softmax input",
            index,
        });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(SimplexVector {
        weights: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// `ln(1 + e^x)` without overflow for large `x` or underflow to zero for
/// moderately negative `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Generalized KL divergence `<a, ln a - ln b> - <a - b, 1>` with `0 ln 0 = 0`.
///
/// Neither argument has to be normalized.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if let Some((index, &value)) = b.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(Error::NonPositiveReference { index, value });
    }
    if let Some(index) = a.iter().position(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidParams(format!(
            "KL first argument entry {index} is negative or NaN"
        )));
    }
    Ok(kl_unchecked(a, b))
}

pub(crate) fn kl_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let cross = if x == 0.0 { 0.0 } else { x * (x.ln() - y.ln()) };
            cross - (x - y)
        })
        .sum()
}

/// `diag^{-1}(P 1_N) P`: each row rescaled to sum to one.
pub fn row_conditional(plan: &DenseMatrix) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(plan.rows() * plan.cols());
    for (row_idx, row) in plan.iter_rows().enumerate() {
        let total: f64 = row.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::DegenerateRow { row: row_idx });
        }
        data.extend(row.iter().map(|v| v / total));
    }
    Ok(DenseMatrix::from_raw(plan.rows(), plan.cols(), data))
}
