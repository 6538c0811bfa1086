use super::AdError;
use crate::linalg::{
    broadcast_shape, broadcast_zip, concat_cols_values, concat_rows_values, elu, expm1_div_grad, expm1_div_scalar,
    scatter_values, sigmoid, softmax_values, Matrix,
};

/// The differentiable primitives a tape can record.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Tanh,
    Elu,
    Relu,
    Sigmoid,
    Softmax,
    Square,
    Sqrt,
    Reciprocal,
    ClampMin(f64),
    Expm1Div(f64),
    Sum,
    Mean,
    ConcatRows,
    ConcatCols,
    Slice { r0: usize, nr: usize, c0: usize, nc: usize },
    Reshape { rows: usize, cols: usize },
    Diag,
    DiagPart,
    Scatter { rows: usize, cols: usize, positions: Vec<(usize, usize)> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Neg => "neg",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Tanh => "tanh",
            Primitive::Elu => "elu",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Reciprocal => "reciprocal",
            Primitive::ClampMin(_) => "clamp_min",
            Primitive::Expm1Div(_) => "expm1_div",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::ConcatRows => "concat_rows",
            Primitive::ConcatCols => "concat_cols",
            Primitive::Slice { .. } => "slice",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Diag => "diag",
            Primitive::DiagPart => "diag_part",
            Primitive::Scatter { .. } => "scatter",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => Some(2),
            Primitive::ConcatRows | Primitive::ConcatCols => None,
            _ => Some(1),
        }
    }

    fn shape_err(&self, detail: String) -> AdError {
        AdError::Shape { op: self.name(), detail }
    }

    /// Validates shapes and computes the output value.
    pub(crate) fn forward(&self, xs: &[&Matrix]) -> Result<Matrix, AdError> {
        match self.arity() {
            Some(n) if xs.len() != n => {
                return Err(AdError::Arity(xs.len(), if n == 1 { "one" } else { "two" }));
            }
            None if xs.is_empty() => return Err(AdError::Arity(0, "at least one")),
            _ => {}
        }
        let binary = |f: fn(f64, f64) -> f64| -> Result<Matrix, AdError> {
            let (a, b) = (xs[0], xs[1]);
            if a.shape() != b.shape() && a.shape() != (1, 1) && b.shape() != (1, 1) {
                return Err(self.shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            Ok(zip(a, b, f))
        };
        let a = xs[0];
        Ok(match self {
            Primitive::Add => binary(|x, y| x + y)?,
            Primitive::Sub => binary(|x, y| x - y)?,
            Primitive::Mul => binary(|x, y| x * y)?,
            Primitive::Div => binary(|x, y| x / y)?,
            Primitive::MatMul => {
                let b = xs[1];
                if a.cols() != b.rows() {
                    return Err(self.shape_err(format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                a.matmul(b)
            }
            Primitive::Transpose => a.transpose(),
            Primitive::Neg => a.map(|x| -x),
            Primitive::Scale(s) => a.scale(*s),
            Primitive::AddScalar(s) => a.map(|x| x + s),
            Primitive::Exp => a.map(f64::exp),
            Primitive::Log => a.map(f64::ln),
            Primitive::Tanh => a.map(f64::tanh),
            Primitive::Elu => a.map(elu),
            Primitive::Relu => a.map(|x| x.max(0.0)),
            Primitive::Sigmoid => a.map(sigmoid),
            Primitive::Softmax => softmax_values(a),
            Primitive::Square => a.map(|x| x * x),
            Primitive::Sqrt => a.map(f64::sqrt),
            Primitive::Reciprocal => a.map(|x| 1.0 / x),
            Primitive::ClampMin(lo) => a.map(|x| x.max(*lo)),
            Primitive::Expm1Div(dt) => a.map(|d| expm1_div_scalar(d, *dt)),
            Primitive::Sum => Matrix::scalar(a.sum()),
            Primitive::Mean => Matrix::scalar(a.sum() / a.len() as f64),
            Primitive::ConcatRows => {
                if xs.iter().any(|x| x.cols() != a.cols()) {
                    return Err(self.shape_err("column counts differ".into()));
                }
                concat_rows_values(xs)
            }
            Primitive::ConcatCols => {
                if xs.iter().any(|x| x.rows() != a.rows()) {
                    return Err(self.shape_err("row counts differ".into()));
                }
                concat_cols_values(xs)
            }
            Primitive::Slice { r0, nr, c0, nc } => {
                if r0 + nr > a.rows() || c0 + nc > a.cols() {
                    return Err(self.shape_err(format!("block ({r0},{c0})+({nr},{nc}) outside {:?}", a.shape())));
                }
                a.block(*r0, *nr, *c0, *nc)
            }
            Primitive::Reshape { rows, cols } => {
                if rows * cols != a.len() {
                    return Err(self.shape_err(format!("{} entries into {rows}x{cols}", a.len())));
                }
                a.reshape(*rows, *cols)
            }
            Primitive::Diag => {
                if a.cols() != 1 {
                    return Err(self.shape_err(format!("expected a column, got {:?}", a.shape())));
                }
                Matrix::from_diag(a.as_slice())
            }
            Primitive::DiagPart => {
                if !a.is_square() {
                    return Err(self.shape_err(format!("expected square, got {:?}", a.shape())));
                }
                Matrix::column(&a.diag())
            }
            Primitive::Scatter { rows, cols, positions } => {
                if positions.len() != a.len() || positions.iter().any(|&(i, j)| i >= *rows || j >= *cols) {
                    return Err(self.shape_err("scatter positions do not match the source".into()));
                }
                scatter_values(a, *rows, *cols, positions)
            }
        })
    }

    /// Domain restrictions checked on the inputs before recording.
    pub(crate) fn domain_violation(&self, xs: &[&Matrix]) -> Option<&'static str> {
        let any = |m: &Matrix, p: fn(f64) -> bool| m.as_slice().iter().any(|&x| p(x));
        match self {
            Primitive::Log if any(xs[0], |x| x <= 0.0) => Some("log of a non-positive value"),
            Primitive::Sqrt if any(xs[0], |x| x < 0.0) => Some("sqrt of a negative value"),
            Primitive::Div if any(xs[1], |x| x == 0.0) => Some("division by zero"),
            Primitive::Reciprocal if any(xs[0], |x| x == 0.0) => Some("reciprocal of zero"),
            _ => None,
        }
    }

    /// Local gradients: one matrix per input, given the upstream gradient `g`.
    pub(crate) fn backward(&self, xs: &[&Matrix], out: &Matrix, g: &Matrix) -> Vec<Matrix> {
        let a = xs[0];
        match self {
            Primitive::Add => vec![reduce_to(g.clone(), a), reduce_to(g.clone(), xs[1])],
            Primitive::Sub => vec![reduce_to(g.clone(), a), reduce_to(g.map(|x| -x), xs[1])],
            Primitive::Mul => {
                let b = xs[1];
                vec![reduce_to(zip(g, b, |g, b| g * b), a), reduce_to(zip(g, a, |g, a| g * a), b)]
            }
            Primitive::Div => {
                let b = xs[1];
                let ga = zip(g, b, |g, b| g / b);
                let gb = zip(&zip(g, out, |g, o| g * o), b, |go, b| -go / b);
                vec![reduce_to(ga, a), reduce_to(gb, b)]
            }
            Primitive::MatMul => {
                let b = xs[1];
                vec![g.matmul_t(b), a.t_matmul(g)]
            }
            Primitive::Transpose => vec![g.transpose()],
            Primitive::Neg => vec![g.map(|x| -x)],
            Primitive::Scale(s) => vec![g.scale(*s)],
            Primitive::AddScalar(_) => vec![g.clone()],
            Primitive::Exp => vec![g.zip_map(out, |g, o| g * o)],
            Primitive::Log => vec![g.zip_map(a, |g, x| g / x)],
            Primitive::Tanh => vec![g.zip_map(out, |g, o| g * (1.0 - o * o))],
            Primitive::Elu => {
                let d = a.zip_map(out, |x, o| if x > 0.0 { 1.0 } else { o + 1.0 });
                vec![g.zip_map(&d, |g, d| g * d)]
            }
            Primitive::Relu => vec![g.zip_map(a, |g, x| if x > 0.0 { g } else { 0.0 })],
            Primitive::Sigmoid => vec![g.zip_map(out, |g, o| g * o * (1.0 - o))],
            Primitive::Softmax => {
                let dot: f64 = g.as_slice().iter().zip(out.as_slice()).map(|(g, o)| g * o).sum();
                vec![g.zip_map(out, |g, o| o * (g - dot))]
            }
            Primitive::Square => vec![g.zip_map(a, |g, x| 2.0 * g * x)],
            Primitive::Sqrt => vec![g.zip_map(out, |g, o| g / (2.0 * o))],
            Primitive::Reciprocal => vec![g.zip_map(out, |g, o| -g * o * o)],
            Primitive::ClampMin(lo) => vec![g.zip_map(a, |g, x| if x >= *lo { g } else { 0.0 })],
            Primitive::Expm1Div(dt) => vec![g.zip_map(a, |g, d| g * expm1_div_grad(d, *dt))],
            Primitive::Sum => vec![Matrix::filled(a.rows(), a.cols(), g[(0, 0)])],
            Primitive::Mean => vec![Matrix::filled(a.rows(), a.cols(), g[(0, 0)] / a.len() as f64)],
            Primitive::ConcatRows => {
                let mut r0 = 0;
                xs.iter()
                    .map(|x| {
                        let b = g.block(r0, x.rows(), 0, x.cols());
                        r0 += x.rows();
                        b
                    })
                    .collect()
            }
            Primitive::ConcatCols => {
                let mut c0 = 0;
                xs.iter()
                    .map(|x| {
                        let b = g.block(0, x.rows(), c0, x.cols());
                        c0 += x.cols();
                        b
                    })
                    .collect()
            }
            Primitive::Slice { r0, c0, .. } => {
                let mut ga = Matrix::zeros(a.rows(), a.cols());
                ga.set_block(*r0, *c0, g);
                vec![ga]
            }
            Primitive::Reshape { .. } => vec![g.reshape(a.rows(), a.cols())],
            Primitive::Diag => vec![Matrix::column(&g.diag())],
            Primitive::DiagPart => vec![Matrix::from_diag(g.as_slice())],
            Primitive::Scatter { positions, .. } => {
                let data = positions.iter().map(|&(i, j)| g[(i, j)]).collect();
                vec![Matrix::from_vec(a.rows(), a.cols(), data)]
            }
        }
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    broadcast_zip(a, b, "elementwise", f)
}

/// Sums a broadcast gradient back down to a `1 x 1` input.
fn reduce_to(g: Matrix, input: &Matrix) -> Matrix {
    if input.shape() == g.shape() {
        g
    } else {
        debug_assert_eq!(input.shape(), (1, 1));
        let _ = broadcast_shape(g.shape(), input.shape(), "reduce");
        Matrix::scalar(g.sum())
    }
}
