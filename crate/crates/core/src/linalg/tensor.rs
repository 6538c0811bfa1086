use super::Matrix;

/// Operations shared by eager matrices and recorded tape variables.
///
/// Every kernel in this crate is written against this trait, so the same code
/// evaluates plain values (`Matrix`) or records a differentiable trace
/// (`autodiff::Var`). Binary elementwise operations accept a `1 x 1` operand
/// on either side and broadcast it. Shape mismatches are programming errors
/// and panic.
pub trait Tensor: Clone {
    fn shape(&self) -> (usize, usize);
    /// Snapshot of the current value.
    fn value(&self) -> Matrix;
    /// A constant living in the same context as `self`.
    fn lift(&self, m: Matrix) -> Self;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn matmul(&self, o: &Self) -> Self;
    fn transpose(&self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn add_scalar(&self, s: f64) -> Self;

    fn exp(&self) -> Self;
    fn log(&self) -> Self;
    fn tanh(&self) -> Self;
    fn elu(&self) -> Self;
    fn relu(&self) -> Self;
    fn sigmoid(&self) -> Self;
    /// Softmax over all entries.
    fn softmax(&self) -> Self;
    fn square(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn reciprocal(&self) -> Self;
    fn clamp_min(&self, lo: f64) -> Self;
    /// `(exp(x * dt) - 1) / x` elementwise, continuous at `x = 0`.
    fn expm1_div(&self, dt: f64) -> Self;

    /// Sum of all entries as a `1 x 1`.
    fn sum(&self) -> Self;
    fn mean(&self) -> Self;

    fn concat_rows(parts: &[Self]) -> Self;
    fn concat_cols(parts: &[Self]) -> Self;
    fn slice(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Self;
    fn reshape(&self, rows: usize, cols: usize) -> Self;
    /// Column vector to diagonal matrix.
    fn diag(&self) -> Self;
    /// Diagonal of a square matrix as a column vector.
    fn diag_part(&self) -> Self;
    /// Places the entries of `self` (row-major order) at `positions` of a zero
    /// `rows x cols` matrix.
    fn scatter(&self, rows: usize, cols: usize, positions: &[(usize, usize)]) -> Self;

    fn rows_of(&self, r0: usize, nr: usize) -> Self {
        let (_, c) = self.shape();
        self.slice(r0, nr, 0, c)
    }
}

pub(crate) fn broadcast_shape(a: (usize, usize), b: (usize, usize), op: &str) -> (usize, usize) {
    if a == b || b == (1, 1) {
        a
    } else if a == (1, 1) {
        b
    } else {
        panic!("{op}: incompatible shapes {a:?} and {b:?}")
    }
}

pub(crate) fn broadcast_zip(a: &Matrix, b: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let shape = broadcast_shape(a.shape(), b.shape(), op);
    let (sa, sb) = (a.as_slice(), b.as_slice());
    let n = shape.0 * shape.1;
    let data = (0..n)
        .map(|i| {
            let x = if sa.len() == 1 { sa[0] } else { sa[i] };
            let y = if sb.len() == 1 { sb[0] } else { sb[i] };
            f(x, y)
        })
        .collect();
    Matrix::from_vec(shape.0, shape.1, data)
}

/// Removable-singularity threshold for `expm1_div`.
pub const EXPM1_DIV_SERIES_THRESHOLD: f64 = 1e-8;

pub(crate) fn expm1_div_scalar(d: f64, dt: f64) -> f64 {
    if d.abs() < EXPM1_DIV_SERIES_THRESHOLD {
        dt + d * dt * dt / 2.0 + d * d * dt * dt * dt / 6.0
    } else {
        (d * dt).exp_m1() / d
    }
}

/// Derivative of `expm1_div_scalar` with respect to `d`.
pub(crate) fn expm1_div_grad(d: f64, dt: f64) -> f64 {
    let x = d * dt;
    if x.abs() < 1e-3 {
        // dt^2 * sum_{n>=0} x^n / (n! (n + 2))
        let mut term = 1.0;
        let mut acc = 0.5;
        for n in 1..8 {
            term *= x / n as f64;
            acc += term / (n as f64 + 2.0);
        }
        dt * dt * acc
    } else {
        (dt * x.exp() * d - x.exp_m1()) / (d * d)
    }
}

pub(crate) fn softmax_values(m: &Matrix) -> Matrix {
    let mx = m.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = m.map(|x| (x - mx).exp());
    let s = e.sum();
    e.scale(1.0 / s)
}

pub(crate) fn concat_rows_values(parts: &[&Matrix]) -> Matrix {
    assert!(!parts.is_empty(), "concat of zero parts");
    let cols = parts[0].cols();
    assert!(parts.iter().all(|p| p.cols() == cols), "concat_rows column mismatch");
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    Matrix::from_vec(rows, cols, data)
}

pub(crate) fn concat_cols_values(parts: &[&Matrix]) -> Matrix {
    assert!(!parts.is_empty(), "concat of zero parts");
    let rows = parts[0].rows();
    assert!(parts.iter().all(|p| p.rows() == rows), "concat_cols row mismatch");
    let cols = parts.iter().map(|p| p.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c0 = 0;
    for p in parts {
        out.set_block(0, c0, p);
        c0 += p.cols();
    }
    out
}

pub(crate) fn scatter_values(src: &Matrix, rows: usize, cols: usize, positions: &[(usize, usize)]) -> Matrix {
    assert_eq!(src.len(), positions.len(), "scatter needs one position per entry");
    let mut out = Matrix::zeros(rows, cols);
    for (v, &(i, j)) in src.as_slice().iter().zip(positions) {
        out[(i, j)] = *v;
    }
    out
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor for Matrix {
    fn shape(&self) -> (usize, usize) {
        Matrix::shape(self)
    }
    fn value(&self) -> Matrix {
        self.clone()
    }
    fn lift(&self, m: Matrix) -> Self {
        m
    }
    fn add(&self, o: &Self) -> Self {
        broadcast_zip(self, o, "add", |a, b| a + b)
    }
    fn sub(&self, o: &Self) -> Self {
        broadcast_zip(self, o, "sub", |a, b| a - b)
    }
    fn mul(&self, o: &Self) -> Self {
        broadcast_zip(self, o, "mul", |a, b| a * b)
    }
    fn div(&self, o: &Self) -> Self {
        broadcast_zip(self, o, "div", |a, b| a / b)
    }
    fn matmul(&self, o: &Self) -> Self {
        Matrix::matmul(self, o)
    }
    fn transpose(&self) -> Self {
        Matrix::transpose(self)
    }
    fn neg(&self) -> Self {
        self.map(|x| -x)
    }
    fn scale(&self, s: f64) -> Self {
        Matrix::scale(self, s)
    }
    fn add_scalar(&self, s: f64) -> Self {
        self.map(|x| x + s)
    }
    fn exp(&self) -> Self {
        self.map(f64::exp)
    }
    fn log(&self) -> Self {
        self.map(f64::ln)
    }
    fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }
    fn elu(&self) -> Self {
        self.map(elu)
    }
    fn relu(&self) -> Self {
        self.map(|x| x.max(0.0))
    }
    fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }
    fn softmax(&self) -> Self {
        softmax_values(self)
    }
    fn square(&self) -> Self {
        self.map(|x| x * x)
    }
    fn sqrt(&self) -> Self {
        self.map(f64::sqrt)
    }
    fn reciprocal(&self) -> Self {
        self.map(|x| 1.0 / x)
    }
    fn clamp_min(&self, lo: f64) -> Self {
        self.map(|x| x.max(lo))
    }
    fn expm1_div(&self, dt: f64) -> Self {
        self.map(|d| expm1_div_scalar(d, dt))
    }
    fn sum(&self) -> Self {
        Matrix::scalar(Matrix::sum(self))
    }
    fn mean(&self) -> Self {
        Matrix::scalar(Matrix::sum(self) / self.len() as f64)
    }
    fn concat_rows(parts: &[Self]) -> Self {
        concat_rows_values(&parts.iter().collect::<Vec<_>>())
    }
    fn concat_cols(parts: &[Self]) -> Self {
        concat_cols_values(&parts.iter().collect::<Vec<_>>())
    }
    fn slice(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Self {
        self.block(r0, nr, c0, nc)
    }
    fn reshape(&self, rows: usize, cols: usize) -> Self {
        Matrix::reshape(self, rows, cols)
    }
    fn diag(&self) -> Self {
        assert_eq!(self.cols(), 1, "diag expects a column vector");
        Matrix::from_diag(self.as_slice())
    }
    fn diag_part(&self) -> Self {
        assert!(self.is_square(), "diag_part expects a square matrix");
        Matrix::column(&Matrix::diag(self))
    }
    fn scatter(&self, rows: usize, cols: usize, positions: &[(usize, usize)]) -> Self {
        scatter_values(self, rows, cols, positions)
    }
}
