use serde::{Deserialize, Serialize};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · wᵀ` for `self: n×d`, `w: m×d`, giving `n×m`.
    pub fn mul_transposed(&self, w: &Matrix) -> Matrix {
        assert_eq!(self.cols, w.cols, "inner dimensions");
        let mut out = Matrix::zeros(self.rows, w.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for o in 0..w.rows {
                out.data[i * w.rows + o] = dot(a, w.row(o));
            }
        }
        out
    }

    /// `self · b` for `self: n×m`, `b: m×d`.
    pub fn mul(&self, b: &Matrix) -> Matrix {
        assert_eq!(self.cols, b.rows, "inner dimensions");
        let mut out = Matrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(out_row, a, b.row(k));
                }
            }
        }
        out
    }

    /// `self += aᵀ · b` for `a: n×m`, `b: n×d`, `self: m×d`.
    pub fn add_transposed_product(&mut self, a: &Matrix, b: &Matrix) {
        assert_eq!(a.rows, b.rows);
        assert_eq!((self.rows, self.cols), (a.cols, b.cols));
        for i in 0..a.rows {
            let b_row = b.row(i);
            for o in 0..a.cols {
                let coef = a.data[i * a.cols + o];
                if coef != 0.0 {
                    axpy(self.row_mut(o), coef, b_row);
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(&mut self.data, 1.0, &other.data);
    }

    /// Copy of the column block `start..start + width`.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Write `block` into the columns starting at `start`.
    pub fn set_columns(&mut self, start: usize, block: &Matrix) {
        assert_eq!(self.rows, block.rows);
        for r in 0..self.rows {
            let w = block.cols;
            self.row_mut(r)[start..start + w].copy_from_slice(block.row(r));
        }
    }
}

/// Inner product with four interleaved partial sums, combined in a fixed
/// order so results stay reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a · x`
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Softmax with max subtraction; `-inf` entries get weight exactly 0.
/// Returns `None` when every entry is `-inf` or any is NaN/`+inf`.
pub fn softmax(values: &[f64]) -> Option<Vec<f64>> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut out: Vec<f64> = values
        .iter()
        .map(|&v| {
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                (v - max).exp()
            }
        })
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Some(out)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_hand_values() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]]);
        let at = a.mul_transposed(&w);
        assert_eq!(at.data, vec![1.0, 3.0, 4.0, 3.0, 7.0, 8.0]);
        assert_eq!(a.mul(&a).data, vec![7.0, 10.0, 15.0, 22.0]);
        let mut acc = Matrix::zeros(2, 2);
        acc.add_transposed_product(&a, &a);
        assert_eq!(acc.data, vec![10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn softmax_masks() {
        let p = softmax(&[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
        assert!(softmax(&[f64::NEG_INFINITY; 2]).is_none());
        assert!(softmax(&[1000.0, 0.0]).unwrap()[0] > 0.999);
    }

    #[test]
    fn column_blocks() {
        let mut m = Matrix::zeros(2, 4);
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        m.set_columns(2, &b);
        assert_eq!(m.columns(2, 2), b);
        assert_eq!(m.row(1), &[0.0, 0.0, 3.0, 4.0]);
    }
}
