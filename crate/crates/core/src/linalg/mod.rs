//! Dense kernels for the latent linear SDE: the matrix exponential, the
//! matrix-fraction prior covariance, the eigenbasis (fast) prior, and the
//! orthogonal parameterization of the shared eigenvectors.
//!
//! All kernels are generic over [`Tensor`] and built from its primitives, so
//! they run eagerly on [`Matrix`] or record onto an autodiff tape unchanged.

mod matrix;
mod tensor;

pub use matrix::Matrix;
pub use tensor::{Tensor, EXPM1_DIV_SERIES_THRESHOLD};
pub(crate) use tensor::{
    broadcast_shape, broadcast_zip, concat_cols_values, concat_rows_values, elu, expm1_div_grad, expm1_div_scalar,
    scatter_values, sigmoid, softmax_values,
};

use thiserror::Error;

/// Truncation order of the Taylor series inside the matrix exponential.
pub const EXPM_SERIES_ORDER: usize = 10;

/// Maximum tolerated `max|E^T E - I|` for a transition eigenbasis.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("eigenbasis is not orthogonal: max|E^T E - I| = {0:e}")]
    NotOrthogonal(f64),
    #[error("skew parameters for dim {dim} need {expected} entries, got {got}")]
    SkewLength { dim: usize, expected: usize, got: usize },
}

fn require_square<T: Tensor>(a: &T) -> Result<usize, LinalgError> {
    let (r, c) = a.shape();
    if r != c {
        return Err(LinalgError::NotSquare { rows: r, cols: c });
    }
    Ok(r)
}

fn require_finite<T: Tensor>(a: &T, what: &'static str) -> Result<(), LinalgError> {
    if a.value().is_finite() {
        Ok(())
    } else {
        Err(LinalgError::NonFinite(what))
    }
}

fn identity_like<T: Tensor>(a: &T, n: usize) -> T {
    a.lift(Matrix::identity(n))
}

/// Number of squarings used for `exp(X)` with the given infinity norm.
pub fn squaring_count(norm_inf: f64) -> u32 {
    if norm_inf <= 0.0 {
        return 0;
    }
    let s = norm_inf.log2().ceil() + 1.0;
    if s <= 0.0 {
        0
    } else {
        s as u32
    }
}

/// `exp(A t)` by scaling and squaring over an order-10 Taylor series.
pub fn matrix_exponential<T: Tensor>(a: &T, t: f64) -> Result<T, LinalgError> {
    let n = require_square(a)?;
    if !t.is_finite() {
        return Err(LinalgError::NonFinite("duration"));
    }
    require_finite(a, "generator")?;
    Ok(expm_unchecked(a, t, n))
}

pub(crate) fn expm_unchecked<T: Tensor>(a: &T, t: f64, n: usize) -> T {
    let at = a.scale(t);
    let s = squaring_count(at.value().norm_inf());
    let x = at.scale(0.5f64.powi(s as i32));
    let id = identity_like(a, n);
    // Horner: I + X (I + X/2 (I + X/3 (...)))
    let mut acc = id.add(&x.scale(1.0 / EXPM_SERIES_ORDER as f64));
    for k in (1..EXPM_SERIES_ORDER).rev() {
        acc = id.add(&x.matmul(&acc).scale(1.0 / k as f64));
    }
    for _ in 0..s {
        acc = acc.matmul(&acc);
    }
    acc
}

fn symmetrized<T: Tensor>(x: &T) -> T {
    x.add(&x.transpose()).scale(0.5)
}

/// Prior covariance over `dt` by matrix fraction decomposition.
///
/// Exponentiates `B = [[A, GQG^T], [0, -A^T]]` and returns the symmetrized
/// `Phi Sigma Phi^T + M2 Phi^T` where `Phi = exp(A dt)` is the upper-left block.
pub fn matrix_fraction_prior_cov<T: Tensor>(a: &T, gqgt: &T, sigma_post: &T, dt: f64) -> Result<T, LinalgError> {
    matrix_fraction(a, gqgt, sigma_post, dt).map(|(_, cov)| cov)
}

/// Like [`matrix_fraction_prior_cov`] but also returns `exp(A dt)`.
pub fn matrix_fraction<T: Tensor>(a: &T, gqgt: &T, sigma_post: &T, dt: f64) -> Result<(T, T), LinalgError> {
    let m = require_square(a)?;
    for (name, x) in [("diffusion", gqgt), ("posterior covariance", sigma_post)] {
        if x.shape() != (m, m) {
            return Err(LinalgError::DimensionMismatch(format!(
                "{name} is {:?}, transition is {m}x{m}",
                x.shape()
            )));
        }
    }
    if !(dt >= 0.0) {
        return Err(LinalgError::NegativeDuration(dt));
    }
    Ok(matrix_fraction_unchecked(a, gqgt, sigma_post, dt, m))
}

pub(crate) fn matrix_fraction_unchecked<T: Tensor>(a: &T, gqgt: &T, sigma_post: &T, dt: f64, m: usize) -> (T, T) {
    if dt == 0.0 {
        return (identity_like(a, m), symmetrized(sigma_post));
    }
    let zero = a.lift(Matrix::zeros(m, m));
    let top = T::concat_cols(&[a.clone(), gqgt.clone()]);
    let bottom = T::concat_cols(&[zero, a.transpose().neg()]);
    let b = T::concat_rows(&[top, bottom]);
    let eb = expm_unchecked(&b, dt, 2 * m);
    let phi = eb.slice(0, m, 0, m);
    let m2 = eb.slice(0, m, m, m);
    let phi_t = phi.transpose();
    let cov = phi.matmul(sigma_post).matmul(&phi_t).add(&m2.matmul(&phi_t));
    (phi, symmetrized(&cov))
}

/// Prior mean and covariance when the transition is `E diag(d_sum) E^T` with
/// orthogonal `E`, computed with elementwise exponentials in the eigenbasis.
pub fn eigen_prior<T: Tensor>(e: &T, d_sum: &T, q: &T, mu_post: &T, sigma_post: &T, dt: f64) -> Result<(T, T), LinalgError> {
    let m = require_square(e)?;
    for (name, x, want) in [
        ("eigenvalue sum", d_sum, (m, 1)),
        ("diffusion", q, (m, 1)),
        ("posterior mean", mu_post, (m, 1)),
        ("posterior covariance", sigma_post, (m, m)),
    ] {
        if x.shape() != want {
            return Err(LinalgError::DimensionMismatch(format!("{name} is {:?}, expected {want:?}", x.shape())));
        }
    }
    if !(dt >= 0.0) {
        return Err(LinalgError::NegativeDuration(dt));
    }
    let ev = e.value();
    let dev = ev.t_matmul(&ev).max_abs_diff(&Matrix::identity(m));
    if !(dev <= ORTHOGONALITY_TOLERANCE) {
        return Err(LinalgError::NotOrthogonal(dev));
    }
    let noise = eigen_noise(e, q);
    Ok(eigen_prior_unchecked(e, d_sum, &noise, mu_post, sigma_post, dt, m))
}

/// `S = E^T diag(q) E`, the diffusion expressed in the eigenbasis.
pub(crate) fn eigen_noise<T: Tensor>(e: &T, q: &T) -> T {
    e.transpose().matmul(&q.diag()).matmul(e)
}

pub(crate) fn eigen_prior_unchecked<T: Tensor>(
    e: &T,
    d_sum: &T,
    noise: &T,
    mu_post: &T,
    sigma_post: &T,
    dt: f64,
    m: usize,
) -> (T, T) {
    if dt == 0.0 {
        return (mu_post.clone(), symmetrized(sigma_post));
    }
    let et = e.transpose();
    let mu = e.matmul(&d_sum.scale(dt).exp().mul(&et.matmul(mu_post)));
    let ones_row = e.lift(Matrix::filled(1, m, 1.0));
    let ones_col = e.lift(Matrix::filled(m, 1, 1.0));
    let d_pair = d_sum.matmul(&ones_row).add(&ones_col.matmul(&d_sum.transpose()));
    let growth = d_pair.scale(dt).exp();
    // sigma_post is sparse in the filter; multiplying it first skips its zeros
    let sigma_w = et.matmul(&sigma_post.matmul(e));
    let sigma_w_t = noise.mul(&d_pair.expm1_div(dt)).add(&sigma_w.mul(&growth));
    let cov = e.matmul(&sigma_w_t).matmul(&et);
    (mu, symmetrized(&cov))
}

/// Strict lower triangle of a skew-symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParams {
    dim: usize,
    raw: Vec<f64>,
}

impl SkewParams {
    pub fn new(dim: usize, raw: Vec<f64>) -> Result<Self, LinalgError> {
        let expected = skew_len(dim);
        if raw.len() != expected {
            return Err(LinalgError::SkewLength { dim, expected, got: raw.len() });
        }
        Ok(Self { dim, raw })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, raw: vec![0.0; skew_len(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }
}

pub fn skew_len(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// Row-major positions of the strict lower triangle.
pub fn strict_lower_positions(dim: usize) -> Vec<(usize, usize)> {
    (1..dim).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

/// `exp(W)` for the skew-symmetric `W` described by `p`.
pub fn orthogonal_map(p: &SkewParams) -> Matrix {
    orthogonal_map_tensor(&Matrix::column(&p.raw), p.dim)
}

/// [`orthogonal_map`] over a column of raw parameters of any tensor type.
pub fn orthogonal_map_tensor<T: Tensor>(raw: &T, dim: usize) -> T {
    assert_eq!(raw.shape(), (skew_len(dim), 1), "skew parameter column has the wrong length");
    if dim <= 1 {
        return identity_like(raw, dim);
    }
    let lower = raw.scatter(dim, dim, &strict_lower_positions(dim));
    let w = lower.sub(&lower.transpose());
    expm_unchecked(&w, 1.0, dim)
}

#[cfg(test)]
mod tests;
