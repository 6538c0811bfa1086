use super::TrainError;
use crate::linalg::{Matrix, Tensor};
use std::f64::consts::PI;

/// Bernoulli outputs are kept inside `[BERNOULLI_CLAMP, 1 - BERNOULLI_CLAMP]`.
pub const BERNOULLI_CLAMP: f64 = 1e-7;

fn half_log_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// Summed negative log density of one time point over the masked entries.
/// `target` must already be zero where `mask` is zero.
pub fn gaussian_nll_step<T: Tensor>(target: &T, mask: &T, o: &T, sigma: &T) -> T {
    let z = target.sub(o).div(sigma);
    let per = sigma.log().add(&z.square().scale(0.5)).add_scalar(half_log_2pi());
    per.mul(mask).sum()
}

/// Summed Bernoulli negative log-likelihood of one time point.
pub fn bernoulli_nll_step<T: Tensor>(target: &T, mask: &T, o: &T) -> T {
    let p = o.clamp_min(BERNOULLI_CLAMP);
    let q = o.neg().add_scalar(1.0).clamp_min(BERNOULLI_CLAMP);
    let one_minus_s = target.neg().add_scalar(1.0);
    let ll = target.mul(&p.log()).add(&one_minus_s.mul(&q.log()));
    ll.mul(mask).sum().neg()
}

/// `-(1/N) sum_t log N(s_t | o_t, sigma_t^2)` over observed entries, `N` the
/// number of time points.
pub fn gaussian_nll(
    targets: &[Vec<f64>],
    masks: &[Vec<bool>],
    o: &[Vec<f64>],
    sigma: &[Vec<f64>],
) -> Result<f64, TrainError> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..targets.len() {
        for j in 0..targets[t].len() {
            if !masks[t][j] {
                continue;
            }
            let s = sigma[t][j];
            if !(s > 0.0) {
                return Err(TrainError::Variance { step: t, entry: j, value: s });
            }
            let z = (targets[t][j] - o[t][j]) / s;
            total += s.ln() + 0.5 * z * z + half_log_2pi();
        }
    }
    Ok(total / targets.len() as f64)
}

/// `-(1/N) sum_t sum_i [s log o + (1 - s) log(1 - o)]` over observed entries.
pub fn bernoulli_nll(targets: &[Vec<f64>], masks: &[Vec<bool>], o: &[Vec<f64>]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 0..targets.len() {
        for j in 0..targets[t].len() {
            if masks[t][j] {
                let p = o[t][j].clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                let s = targets[t][j];
                total -= s * p.ln() + (1.0 - s) * (1.0 - p).ln();
            }
        }
    }
    total / targets.len() as f64
}

/// Mean squared error over observed entries; `(sum, count)` so callers can pool.
pub fn masked_sse(targets: &[Vec<f64>], masks: &[Vec<bool>], o: &[Vec<f64>]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for t in 0..targets.len() {
        for j in 0..targets[t].len() {
            if masks[t][j] {
                let e = targets[t][j] - o[t][j];
                sum += e * e;
                n += 1;
            }
        }
    }
    (sum, n)
}

/// Column with masked entries replaced by zero, whatever they held.
pub fn masked_column(values: &[f64], mask: &[bool]) -> Matrix {
    Matrix::from_fn(values.len(), 1, |i, _| if mask[i] { values[i] } else { 0.0 })
}

pub fn mask_column(mask: &[bool]) -> Matrix {
    Matrix::from_fn(mask.len(), 1, |i, _| if mask[i] { 1.0 } else { 0.0 })
}
