use super::{LatentState, Mode, SsmError};
use crate::linalg::{
    eigen_noise, eigen_prior_unchecked, matrix_fraction_unchecked, orthogonal_map_tensor, skew_len, Matrix, Tensor,
    ORTHOGONALITY_TOLERANCE,
};
use crate::nn::{ParamId, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Initial diffusion on every latent coordinate.
pub const INITIAL_DIFFUSION: f64 = 0.1;

/// Initial eigenvalue of every fast-mode basis.
pub const INITIAL_EIGENVALUE: f64 = 1e-5;

/// Sizes of a transition model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionShape {
    pub latent_dim: usize,
    pub num_basis: usize,
    /// Half-width of the band kept in each of the four blocks (full mode).
    pub bandwidth: usize,
    pub mode: Mode,
}

/// Where the transition parameters live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLayout {
    pub shape: TransitionShape,
    /// `K x M` logits weights.
    pub psi_w: ParamId,
    /// `K x 1`.
    pub psi_b: ParamId,
    /// `M x 1`, `q = exp(log_q)`.
    pub log_q: ParamId,
    pub kind: LayoutKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutKind {
    /// Banded entries of every basis matrix, `K * P x 1`, scattered into a
    /// `K x M^2` row-major stack.
    Full { basis: ParamId, positions: Vec<(usize, usize)> },
    /// Skew parameters of `E` and the `K x M` eigenvalue table.
    Fast { skew: ParamId, eig: ParamId },
}

/// Row-major flat indices `(block row, block col)` of the band in every
/// `D x D` block of an `M x M` matrix.
pub fn band_indices(latent_dim: usize, bandwidth: usize) -> Vec<usize> {
    let d = latent_dim / 2;
    let mut out = Vec::new();
    for bi in 0..2 {
        for bj in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    if i.abs_diff(j) <= bandwidth {
                        out.push((bi * d + i) * latent_dim + bj * d + j);
                    }
                }
            }
        }
    }
    out
}

impl TransitionLayout {
    pub fn build<R: Rng + ?Sized>(store: &mut ParamStore, shape: TransitionShape, rng: &mut R) -> Self {
        let (m, k) = (shape.latent_dim, shape.num_basis);
        let limit = (6.0 / (m + k) as f64).sqrt();
        let psi_w = store.add("transition.psi.weight", Matrix::from_fn(k, m, |_, _| rng.random_range(-limit..limit)));
        let psi_b = store.add("transition.psi.bias", Matrix::zeros(k, 1));
        let log_q = store.add("transition.log_q", Matrix::filled(m, 1, INITIAL_DIFFUSION.ln()));
        let kind = match shape.mode {
            Mode::Full => {
                let band = band_indices(m, shape.bandwidth);
                let positions: Vec<_> = (0..k).flat_map(|b| band.iter().map(move |&idx| (b, idx))).collect();
                let basis = store.add("transition.basis", Matrix::zeros(positions.len(), 1));
                LayoutKind::Full { basis, positions }
            }
            Mode::Fast => LayoutKind::Fast {
                skew: store.add("transition.skew", Matrix::zeros(skew_len(m), 1)),
                eig: store.add("transition.eigenvalues", Matrix::filled(k, m, INITIAL_EIGENVALUE)),
            },
        };
        Self { shape, psi_w, psi_b, log_q, kind }
    }

    /// Resolves parameter ids against `params` and precomputes everything
    /// that does not depend on the state.
    pub fn bind<T: Tensor>(&self, params: &[T]) -> Result<TransitionModel<T>, SsmError> {
        let m = self.shape.latent_dim;
        let q = params[self.log_q.0].exp();
        let kind = match &self.kind {
            LayoutKind::Full { basis, positions } => BoundKind::Full {
                basis: params[basis.0].scatter(self.shape.num_basis, m * m, positions),
                diffusion: q.diag(),
            },
            LayoutKind::Fast { skew, eig } => {
                let e = orthogonal_map_tensor(&params[skew.0], m);
                let ev = e.value();
                let dev = ev.t_matmul(&ev).max_abs_diff(&Matrix::identity(m));
                if !(dev <= ORTHOGONALITY_TOLERANCE) {
                    return Err(SsmError::Linalg(crate::linalg::LinalgError::NotOrthogonal(dev)));
                }
                BoundKind::Fast { noise: eigen_noise(&e, &q), e, eig: params[eig.0].clone() }
            }
        };
        Ok(TransitionModel { latent_dim: m, psi_w: params[self.psi_w.0].clone(), psi_b: params[self.psi_b.0].clone(), kind })
    }
}

/// A transition model with parameters resolved to tensors.
#[derive(Debug, Clone)]
pub struct TransitionModel<T> {
    latent_dim: usize,
    psi_w: T,
    psi_b: T,
    kind: BoundKind<T>,
}

#[derive(Debug, Clone)]
enum BoundKind<T> {
    Full { basis: T, diffusion: T },
    Fast { e: T, noise: T, eig: T },
}

impl<T: Tensor> TransitionModel<T> {
    pub fn mode(&self) -> Mode {
        match self.kind {
            BoundKind::Full { .. } => Mode::Full,
            BoundKind::Fast { .. } => Mode::Fast,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `softmax(psi_w mu + psi_b)`.
    pub fn transition_weights(&self, mu_post: &T) -> T {
        self.psi_w.matmul(mu_post).add(&self.psi_b).softmax()
    }

    /// `sum_k alpha_k A_k` (full mode only).
    pub fn transition_matrix(&self, alpha: &T) -> Option<T> {
        match &self.kind {
            BoundKind::Full { basis, .. } => {
                let m = self.latent_dim;
                Some(alpha.transpose().matmul(basis).reshape(m, m))
            }
            BoundKind::Fast { .. } => None,
        }
    }

    /// `sum_k alpha_k D_k` (fast mode only).
    pub fn eigenvalue_sum(&self, alpha: &T) -> Option<T> {
        match &self.kind {
            BoundKind::Fast { eig, .. } => Some(eig.transpose().matmul(alpha)),
            BoundKind::Full { .. } => None,
        }
    }

    /// Prior belief `dt` after the posterior `state`.
    pub fn predict(&self, state: &LatentState<T>, dt: f64) -> Result<LatentState<T>, SsmError> {
        if !(dt >= 0.0) {
            return Err(SsmError::NegativeDuration(dt));
        }
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let alpha = self.transition_weights(&state.mu);
        self.predict_with_weights(state, &alpha, dt)
    }

    /// [`Self::predict`] with externally fixed mixture weights.
    pub fn predict_with_weights(&self, state: &LatentState<T>, alpha: &T, dt: f64) -> Result<LatentState<T>, SsmError> {
        if !(dt >= 0.0) {
            return Err(SsmError::NegativeDuration(dt));
        }
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let m = self.latent_dim;
        if state.mu.shape() != (m, 1) {
            return Err(SsmError::Shape(format!("state mean is {:?}, model has M = {m}", state.mu.shape())));
        }
        let sigma = state.dense_cov();
        let (mu, cov) = match &self.kind {
            BoundKind::Full { basis, diffusion } => {
                let a = alpha.transpose().matmul(basis).reshape(m, m);
                let (phi, cov) = matrix_fraction_unchecked(&a, diffusion, &sigma, dt, m);
                (phi.matmul(&state.mu), cov)
            }
            BoundKind::Fast { e, noise, eig } => {
                let d_sum = eig.transpose().matmul(alpha);
                eigen_prior_unchecked(e, &d_sum, noise, &state.mu, &sigma, dt, m)
            }
        };
        Ok(LatentState::from_dense(mu, &cov))
    }
}
