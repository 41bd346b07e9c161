//! Dense f32 kernels for the decoder runtime.
//!
//! Everything here is a pure function with a fixed accumulation order
//! (row-major, left to right), so repeated calls on identical inputs are
//! bit-identical regardless of which thread runs them.

use std::fmt;

use crate::error::ShapeError;

/// Epsilon added to the mean square inside [`rms_norm`].
pub const RMS_EPS: f32 = 1e-6;

/// Row-major 2D matrix of f32 values.
#[derive(Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::new("tensor data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(ShapeError::new("row length", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f32) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of the first `cols` columns.
    pub fn truncate_cols(&self, cols: usize) -> Result<Self, ShapeError> {
        if cols > self.cols {
            return Err(ShapeError::new("truncated column count", self.cols, cols));
        }
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[..cols]);
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copy of the column range `start..start + width`.
    pub fn col_slice(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D, ShapeError> {
    if a.cols != b.rows {
        return Err(ShapeError::new("matmul inner dimension", a.cols, b.rows));
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * b_kj;
            }
        }
    }
    Ok(out)
}

/// Row vector times matrix: `v · m`.
pub fn vec_matmul(v: &[f32], m: &Tensor2D) -> Result<Vec<f32>, ShapeError> {
    if v.len() != m.rows {
        return Err(ShapeError::new(
            "vector-matrix inner dimension",
            m.rows,
            v.len(),
        ));
    }
    let mut out = vec![0.0f32; m.cols];
    for (k, &v_k) in v.iter().enumerate() {
        for (o, &m_kj) in out.iter_mut().zip(m.row(k)) {
            *o += v_k * m_kj;
        }
    }
    Ok(out)
}

pub fn softmax(v: &[f32]) -> Result<Vec<f32>, ShapeError> {
    if v.is_empty() {
        return Err(ShapeError::new("softmax input length", 1, 0));
    }
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Root-mean-square normalization followed by an elementwise gain.
pub fn rms_norm(v: &[f32], gain: &[f32]) -> Result<Vec<f32>, ShapeError> {
    if v.is_empty() {
        return Err(ShapeError::new("rms_norm input length", 1, 0));
    }
    if v.len() != gain.len() {
        return Err(ShapeError::new("rms_norm gain length", v.len(), gain.len()));
    }
    let mean_sq = v.iter().map(|x| x * x).sum::<f32>() / v.len() as f32;
    let inv = 1.0 / (mean_sq + RMS_EPS).sqrt();
    Ok(v.iter().zip(gain).map(|(x, g)| x * inv * g).collect())
}

/// Single-head causal attention. Row `i` of the output mixes rows `0..=i`
/// of `v`.
pub fn causal_attention(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    scale: f32,
) -> Result<Tensor2D, ShapeError> {
    if q.rows != k.rows || q.rows != v.rows {
        return Err(ShapeError::new(
            "attention sequence length",
            q.rows,
            k.rows.max(v.rows),
        ));
    }
    if q.cols != k.cols {
        return Err(ShapeError::new("attention key dimension", q.cols, k.cols));
    }
    let seq = q.rows;
    let mut out = Tensor2D::zeros(seq, v.cols);
    let mut scores = Vec::with_capacity(seq);
    for i in 0..seq {
        scores.clear();
        let q_row = q.row(i);
        for j in 0..=i {
            let dot: f32 = q_row.iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            scores.push(dot * scale);
        }
        let weights = softmax(&scores)?;
        let out_row = &mut out.data[i * v.cols..(i + 1) * v.cols];
        for (j, w) in weights.iter().enumerate() {
            for (o, &x) in out_row.iter_mut().zip(v.row(j)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(v: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
