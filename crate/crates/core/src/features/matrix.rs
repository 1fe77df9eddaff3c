/// Dense `rows x cols` matrix stored column by column, so that one time
/// frame of a spectrogram is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from column-major data.
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length must equal rows * cols"
        );
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    pub fn col(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn col_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.rows.max(1)).take(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean of each row across columns.
    pub fn row_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows];
        for col in self.columns() {
            for (s, v) in sums.iter_mut().zip(col) {
                *s += v;
            }
        }
        let n = self.cols as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// `self * other` where `self` is a `[k x rows(other)]` weight matrix
    /// given as dense rows; used to apply a filterbank to every frame.
    pub(crate) fn apply_rows(weights: &[Vec<f64>], input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(weights.len(), input.cols);
        for c in 0..input.cols {
            let frame = input.col(c);
            let dst = out.col_mut(c);
            for (d, w) in dst.iter_mut().zip(weights) {
                *d = w.iter().zip(frame).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}
