use super::SsmError;
use crate::linalg::{Matrix, Tensor};

/// Initial variance on every latent coordinate.
pub const INITIAL_VARIANCE: f64 = 10.0;

/// Lower bound on `sigma_u` and `sigma_l` after an update.
pub const VARIANCE_CLAMP: f64 = 1e-6;

/// Gaussian belief over the latent state with block-diagonal covariance
/// `[[diag(u), diag(s)], [diag(s), diag(l)]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub mu: T,
    pub sigma_u: T,
    pub sigma_l: T,
    pub sigma_s: T,
}

/// Encoder output: a noisy measurement of the upper half of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentObservation<T> {
    pub y: T,
    /// Elementwise variance.
    pub sigma_obs: T,
}

impl LatentState<Matrix> {
    pub fn from_parts(mu: Vec<f64>, u: Vec<f64>, l: Vec<f64>, s: Vec<f64>) -> Self {
        Self { mu: Matrix::column(&mu), sigma_u: Matrix::column(&u), sigma_l: Matrix::column(&l), sigma_s: Matrix::column(&s) }
    }
}

impl<T: Tensor> LatentState<T> {
    /// Zero mean, covariance `INITIAL_VARIANCE * I`.
    pub fn initial(like: &T, half_dim: usize) -> Self {
        let d = half_dim;
        Self {
            mu: like.lift(Matrix::zeros(2 * d, 1)),
            sigma_u: like.lift(Matrix::filled(d, 1, INITIAL_VARIANCE)),
            sigma_l: like.lift(Matrix::filled(d, 1, INITIAL_VARIANCE)),
            sigma_s: like.lift(Matrix::zeros(d, 1)),
        }
    }

    pub fn half_dim(&self) -> usize {
        self.sigma_u.shape().0
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.shape().0
    }

    /// Full `M x M` covariance with zeros off the four block diagonals.
    pub fn dense_cov(&self) -> T {
        let d = self.half_dim();
        let values = T::concat_rows(&[self.sigma_u.clone(), self.sigma_l.clone(), self.sigma_s.clone(), self.sigma_s.clone()]);
        values.scatter(2 * d, 2 * d, &block_positions(d))
    }

    /// Reads the three block diagonals off a full covariance.
    pub fn from_dense(mu: T, cov: &T) -> Self {
        let d = mu.shape().0 / 2;
        let diag = cov.diag_part();
        Self {
            mu,
            sigma_u: diag.rows_of(0, d),
            sigma_l: diag.rows_of(d, d),
            sigma_s: cov.slice(0, d, d, d).diag_part(),
        }
    }

    /// Smallest `u * l - s^2` over coordinates.
    pub fn psd_margin(&self) -> f64 {
        let (u, l, s) = (self.sigma_u.value(), self.sigma_l.value(), self.sigma_s.value());
        (0..u.rows()).map(|i| u[(i, 0)] * l[(i, 0)] - s[(i, 0)] * s[(i, 0)]).fold(f64::INFINITY, f64::min)
    }

    pub fn values(&self) -> LatentState<Matrix> {
        LatentState {
            mu: self.mu.value(),
            sigma_u: self.sigma_u.value(),
            sigma_l: self.sigma_l.value(),
            sigma_s: self.sigma_s.value(),
        }
    }
}

/// Positions of `[u; l; s; s]` inside the dense covariance.
fn block_positions(d: usize) -> Vec<(usize, usize)> {
    let mut p = Vec::with_capacity(4 * d);
    p.extend((0..d).map(|i| (i, i)));
    p.extend((0..d).map(|i| (d + i, d + i)));
    p.extend((0..d).map(|i| (i, d + i)));
    p.extend((0..d).map(|i| (d + i, i)));
    p
}

fn check_observation<T: Tensor>(prior: &LatentState<T>, obs: &LatentObservation<T>) -> Result<(), SsmError> {
    let d = prior.half_dim();
    if obs.y.shape() != (d, 1) || obs.sigma_obs.shape() != (d, 1) {
        return Err(SsmError::Shape(format!(
            "observation {:?}/{:?} does not match half dimension {d}",
            obs.y.shape(),
            obs.sigma_obs.shape()
        )));
    }
    let v = obs.sigma_obs.value();
    if let Some(bad) = v.as_slice().iter().find(|x| !(**x > 0.0)) {
        return Err(SsmError::ObservationVariance(*bad));
    }
    Ok(())
}

/// Upper and lower gains `(k_u, k_l)`.
pub fn gains<T: Tensor>(prior: &LatentState<T>, obs: &LatentObservation<T>) -> Result<(T, T), SsmError> {
    check_observation(prior, obs)?;
    let denom = prior.sigma_u.add(&obs.sigma_obs);
    Ok((prior.sigma_u.div(&denom), prior.sigma_s.div(&denom)))
}

/// Factorized Bayesian update with `H = [I, 0]`.
pub fn update<T: Tensor>(prior: &LatentState<T>, obs: &LatentObservation<T>) -> Result<LatentState<T>, SsmError> {
    let (ku, kl) = gains(prior, obs)?;
    Ok(apply_gains(prior, obs, &ku, &kl))
}

/// [`update`] plus the Frobenius norm of the stacked gain.
pub fn update_with_gain<T: Tensor>(
    prior: &LatentState<T>,
    obs: &LatentObservation<T>,
) -> Result<(LatentState<T>, f64), SsmError> {
    let (ku, kl) = gains(prior, obs)?;
    let norm = stacked_norm(&ku, &kl);
    Ok((apply_gains(prior, obs, &ku, &kl), norm))
}

fn apply_gains<T: Tensor>(prior: &LatentState<T>, obs: &LatentObservation<T>, ku: &T, kl: &T) -> LatentState<T> {
    let d = prior.half_dim();
    let residual = obs.y.sub(&prior.mu.rows_of(0, d));
    let mu = prior.mu.add(&T::concat_rows(&[ku.mul(&residual), kl.mul(&residual)]));
    let keep = ku.neg().add_scalar(1.0);
    LatentState {
        mu,
        sigma_u: keep.mul(&prior.sigma_u).clamp_min(VARIANCE_CLAMP),
        sigma_l: prior.sigma_l.sub(&kl.mul(&prior.sigma_s)).clamp_min(VARIANCE_CLAMP),
        sigma_s: keep.mul(&prior.sigma_s),
    }
}

fn stacked_norm<T: Tensor>(ku: &T, kl: &T) -> f64 {
    let (a, b) = (ku.value(), kl.value());
    a.as_slice().iter().chain(b.as_slice()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of `[k_u; k_l]`.
pub fn gain_norm<T: Tensor>(prior: &LatentState<T>, obs: &LatentObservation<T>) -> Result<f64, SsmError> {
    let (ku, kl) = gains(prior, obs)?;
    Ok(stacked_norm(&ku, &kl))
}
