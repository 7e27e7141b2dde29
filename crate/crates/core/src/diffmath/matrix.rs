//! Dense row-major matrix of `f64` with the element-wise and linear-algebra
//! kernels the rest of the crate is built from.
//!
//! Every kernel here is a pure function of its inputs; the gradient tape
//! records calls to these same kernels, so a value computed with and without
//! a tape is bit-identical.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// What a matrix holds. Purely descriptive metadata; kernels ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Role {
    Embedding,
    Feature,
    Weight,
    Cost,
    Plan,
}

/// Dense 2-D array of row vectors in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub role: Role,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, role: Role) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::Parameter {
                name: "shape",
                reason: format!("rows and cols must be >= 1, got {rows}x{cols}"),
            });
        }
        if data.len() != rows * cols {
            return Err(CoreError::Parameter {
                name: "data",
                reason: format!("expected {} values for {rows}x{cols}, got {}", rows * cols, data.len()),
            });
        }
        let m = Self { rows, cols, data, role };
        m.check_finite("new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols], role: Role::Feature }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols], role: Role::Feature }
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m.role = Role::Weight;
        m
    }

    /// Row vector from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec(), role: Role::Feature }
    }

    /// Seeded Gaussian entries with the given standard deviation.
    pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Self { rows, cols, data, role: Role::Weight }
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

    pub fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// The single entry of a 1x1 matrix.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CoreError::Numeric(format!("{op}: produced a non-finite value")))
        }
    }

    // ── kernels ─────────────────────────────────────────────────────────

    /// Matrix product via the blocked dgemm kernel.
    pub fn matmul(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != other.rows {
            return Err(CoreError::Dimension {
                op: "matmul",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = FeatureMatrix::zeros(m, n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn transpose(&self) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::Dimension {
                op: "add",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += v;
        }
        Ok(out)
    }

    /// Adds a single row to every row of the matrix.
    pub fn add_row(&self, row: &FeatureMatrix) -> Result<FeatureMatrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(CoreError::Dimension {
                op: "add_row",
                lhs: self.shape_string(),
                rhs: row.shape_string(),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] += row.data[c];
            }
        }
        Ok(out)
    }

    /// `alpha * x + beta`, element-wise.
    pub fn affine(&self, alpha: f64, beta: f64) -> FeatureMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = alpha * *v + beta;
        }
        out
    }

    /// Hadamard product.
    pub fn mul(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::Dimension {
                op: "mul",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o *= v;
        }
        Ok(out)
    }

    pub fn relu(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    pub fn ln(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.ln();
        }
        out
    }

    /// Scales every row to unit Euclidean norm. Rows with norm below `eps`
    /// are returned unchanged.
    pub fn l2_normalize_rows(&self, eps: f64) -> Result<FeatureMatrix> {
        if eps <= 0.0 {
            return Err(CoreError::Parameter {
                name: "eps",
                reason: format!("must be > 0, got {eps}"),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= eps {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        Ok(out)
    }

    /// Row-wise softmax of `x / tau` with max-subtraction for stability.
    pub fn softmax_rows(&self, tau: f64) -> Result<FeatureMatrix> {
        if tau <= 0.0 {
            return Err(CoreError::Parameter {
                name: "tau",
                reason: format!("temperature must be > 0, got {tau}"),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / tau).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(out)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column-wise mean over rows; returns a `1 x cols` row.
    pub fn mean_rows(&self) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c] += self.data[r * self.cols + c];
            }
        }
        let inv = 1.0 / self.rows as f64;
        for v in &mut out.data {
            *v *= inv;
        }
        out
    }

    /// Vertical stack; all parts must share the column count.
    pub fn concat_rows(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or_else(|| CoreError::Parameter {
            name: "parts",
            reason: "concat_rows of zero matrices".into(),
        })?;
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(CoreError::Dimension {
                    op: "concat_rows",
                    lhs: first.shape_string(),
                    rhs: p.shape_string(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(FeatureMatrix { rows, cols, data, role: first.role })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<FeatureMatrix> {
        if start + len > self.rows || len == 0 {
            return Err(CoreError::Parameter {
                name: "slice_rows",
                reason: format!("range {start}..{} out of {} rows", start + len, self.rows),
            });
        }
        Ok(FeatureMatrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
            role: self.role,
        })
    }

    /// Row lookup by index list (embedding-table gather).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(CoreError::Vocabulary { id: i, vocab: self.rows });
            }
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(indices.len(), self.cols, data, self.role)
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &FeatureMatrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(CoreError::Dimension {
                op: "dot",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &FeatureMatrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    if na < eps || nb < eps {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_returns_operand() {
        let a = FeatureMatrix::new(2, 3, vec![1.0, -2.5, 3.0, 0.0, 4.0, 5.5], Role::Feature).unwrap();
        let id = FeatureMatrix::eye(2);
        let prod = id.matmul(&a).unwrap();
        assert_eq!(prod.data(), a.data());
    }

    #[test]
    fn one_by_one_matmul() {
        let a = FeatureMatrix::new(1, 2, vec![1.0, 2.0], Role::Feature).unwrap();
        let b = FeatureMatrix::new(2, 1, vec![3.0, 4.0], Role::Feature).unwrap();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.shape(), (1, 1));
        assert_eq!(p.scalar(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = FeatureMatrix::zeros(2, 3);
        let b = FeatureMatrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "unexpected message: {msg}");
    }

    #[test]
    fn normalize_three_four_five() {
        let a = FeatureMatrix::new(1, 2, vec![3.0, 4.0], Role::Feature).unwrap();
        let n = a.l2_normalize_rows(1e-12).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_keeps_zero_row() {
        let a = FeatureMatrix::zeros(1, 3);
        let n = a.l2_normalize_rows(1e-12).unwrap();
        assert_eq!(n.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_unit_row_unchanged() {
        let a = FeatureMatrix::new(1, 2, vec![0.0, 1.0], Role::Feature).unwrap();
        let n = a.l2_normalize_rows(1e-12).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        let a = FeatureMatrix::row_vector(&[1.0, 2.0]);
        assert!(a.softmax_rows(0.0).is_err());
        assert!(a.softmax_rows(-1.0).is_err());
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let a = FeatureMatrix::row_vector(&[1e3, -1e3, 0.0]);
        let p = a.softmax_rows(1.0).unwrap();
        assert!(p.is_finite());
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gather_rejects_out_of_vocab() {
        let t = FeatureMatrix::zeros(4, 2);
        assert!(matches!(t.gather_rows(&[5]), Err(CoreError::Vocabulary { id: 5, vocab: 4 })));
    }
}
