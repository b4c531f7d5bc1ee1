use crate::error::{invalid, Result};

/// Dense row-major 2-D array of `f64`. Scalars are 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "tensor data has {} values, shape {rows}x{cols} needs {}",
                data.len(),
                rows * cols
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("tensor contains non-finite values");
        }
        Ok(Self { rows, cols, data })
    }

    /// Skips the finiteness scan; used for op results.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(1, 1, vec![value])
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self::from_raw(rows.len(), 3, rows.iter().flatten().copied().collect())
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows as 3-vectors; the tensor must have three columns.
    pub fn to_vec3(&self) -> Vec<[f64; 3]> {
        debug_assert_eq!(self.cols, 3);
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (n x k) * b (k x m)`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_raw(n, m, out)
}

/// `a (n x k) * b^T` where `b` is `m x k`.
pub(crate) fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = a.row(i);
        for j in 0..m {
            out[i * m + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_raw(n, m, out)
}

/// `a^T * b` where `a` is `n x k` and `b` is `n x m`.
pub(crate) fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.cols, b.cols);
    let mut out = vec![0.0; k * m];
    for i in 0..a.rows {
        let br = b.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_raw(k, m, out)
}
