//! Dense linear algebra and sampling primitives.
//!
//! Storage is `f32`; every reduction (dot products, softmax normaliser,
//! mean square) accumulates in `f64`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, contract, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Wraps row-major data. Fails if the length does not match or an entry
    /// is not finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(contract(format!("non-finite matrix entry at {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix by stacking equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(contract("cannot stack zero rows"));
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Matrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f32]) -> Result<Vec<f32>> {
        check_dim("Matrix::mul_vec", self.cols, v.len())?;
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), v) as f32)
            .collect())
    }

    /// `vᵀ · self` for a row vector `v`.
    pub fn vec_mul(&self, v: &[f32]) -> Result<Vec<f32>> {
        check_dim("Matrix::vec_mul", self.rows, v.len())?;
        let mut acc = vec![0.0f64; self.cols];
        for (r, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let x = x as f64;
            for (a, &m) in acc.iter_mut().zip(self.row(r)) {
                *a += x * m as f64;
            }
        }
        Ok(acc.into_iter().map(|a| a as f32).collect())
    }

    /// Largest absolute entry-wise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Entry-wise `self + scale * other`.
    pub fn add_scaled(&self, other: &Matrix, scale: f32) -> Result<Matrix> {
        check_dim("Matrix::add_scaled rows", self.rows, other.rows)?;
        check_dim("Matrix::add_scaled cols", self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }
}

/// `f64`-accumulated dot product.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// Matrix product `a · b`, accumulated in `f64` per output entry.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dim("gemm", a.cols, b.rows)?;
    let mut out = vec![0.0f32; a.rows * b.cols];
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (k, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let x = x as f64;
            for (s, &y) in acc.iter_mut().zip(b.row(k)) {
                *s += x * y as f64;
            }
        }
        for (o, s) in out[i * b.cols..(i + 1) * b.cols].iter_mut().zip(&acc) {
            *o = *s as f32;
        }
    }
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data: out,
    })
}

/// Numerically stable softmax. Probabilities are returned in `f64`.
pub fn softmax(logits: &[f32]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(contract("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(contract("softmax input must be finite"));
    }
    Ok(softmax_unchecked(logits.iter().map(|&v| v as f64)))
}

pub(crate) fn softmax_unchecked(logits: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Epsilon inside [`rmsnorm`].
pub const RMS_EPS: f64 = 1e-6;

/// `x / sqrt(mean(x²) + ε)` without a learned gain.
pub fn rmsnorm(x: &[f32]) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(contract("rmsnorm of an empty vector"));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(contract("rmsnorm input contains NaN"));
    }
    let ms = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    Ok(x.iter().map(|&v| (v as f64 * inv) as f32).collect())
}

/// The `k` largest entries in descending order; ties go to the lower index.
pub fn top_k<T: PartialOrd + Copy>(p: &[T], k: usize) -> Result<Vec<(usize, T)>> {
    if k == 0 || k > p.len() {
        return Err(contract(format!(
            "top_k needs 1 <= k <= dim, got k = {k}, dim = {}",
            p.len()
        )));
    }
    let mut best: Vec<(usize, T)> = Vec::with_capacity(k + 1);
    for (i, &v) in p.iter().enumerate() {
        if best.len() == k && !(v > best[k - 1].1) {
            continue;
        }
        // Strict comparison keeps earlier indices ahead of equal values.
        let pos = best.partition_point(|&(_, b)| !(v > b));
        best.insert(pos, (i, v));
        best.truncate(k);
    }
    Ok(best)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Deterministic synthetic weights.
///
/// Entries are drawn row-major from a ChaCha8 stream seeded with `seed`: each
/// entry takes one `u64`, keeps its top 53 bits as `u ∈ [0, 1)` and maps it to
/// `scale · (2u − 1)`. ChaCha8 output is specified bit-for-bit, so the matrix
/// is identical on every platform.
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64, scale: f32) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(contract(format!("seeded_matrix scale must be > 0, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (scale as f64 * (2.0 * u - 1.0)) as f32
        })
        .collect();
    Ok(Matrix { rows, cols, data })
}

impl TryFrom<(usize, usize, Vec<f32>)> for Matrix {
    type Error = Error;

    fn try_from((rows, cols, data): (usize, usize, Vec<f32>)) -> Result<Self> {
        Matrix::from_vec(rows, cols, data)
    }
}
