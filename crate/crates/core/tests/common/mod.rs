//! Reference computations written directly from the textbook formulas, with
//! no code shared with the crate beyond the `Matrix` container.

#![allow(dead_code)]

use cru::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn from_dense(d: &Dense) -> Matrix {
    Matrix::from_fn(d.len(), d.first().map_or(0, Vec::len), |i, j| d[i][j])
}

pub fn eye(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                c[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    c
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn lin(a: &Dense, sa: f64, b: &Dense, sb: f64) -> Dense {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| sa * p + sb * q).collect()).collect()
}

pub fn max_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mat_vec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut w: Dense = a.iter().zip(eye(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| w[i][c].abs().total_cmp(&w[j][c].abs())).unwrap();
        w.swap(c, p);
        let piv = w[c][c];
        assert!(piv.abs() > 1e-300, "singular matrix");
        for x in &mut w[c] {
            *x /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = w[r][c];
                let row_c = w[c].clone();
                for (x, y) in w[r].iter_mut().zip(row_c) {
                    *x -= f * y;
                }
            }
        }
    }
    w.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `exp(A t)`: halve until the norm is below 1/2, sum 30 Taylor terms, square back.
pub fn expm(a: &Dense, t: f64) -> Dense {
    let n = a.len();
    let norm = a.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t.abs();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let x: Dense = a.iter().map(|r| r.iter().map(|v| v * t / 2f64.powi(s)).collect()).collect();
    let mut term = eye(n);
    let mut sum = eye(n);
    for k in 1..=30 {
        term = mul(&term, &x).into_iter().map(|r| r.into_iter().map(|v| v / k as f64).collect()).collect();
        sum = lin(&sum, 1.0, &term, 1.0);
    }
    for _ in 0..s {
        sum = mul(&sum, &sum);
    }
    sum
}

fn lyap_rhs(a: &Dense, q: &Dense, p: &Dense) -> Dense {
    let ap = mul(a, p);
    lin(&lin(&ap, 1.0, &transpose(&ap), 1.0), 1.0, q, 1.0)
}

/// Integrates `dP/dt = A P + P A^T + Q` over `dt` with classical RK4.
pub fn lyapunov_rk4(a: &Dense, q: &Dense, p0: &Dense, dt: f64, steps: usize) -> Dense {
    let h = dt / steps as f64;
    let mut p = p0.clone();
    for _ in 0..steps {
        let k1 = lyap_rhs(a, q, &p);
        let k2 = lyap_rhs(a, q, &lin(&p, 1.0, &k1, h / 2.0));
        let k3 = lyap_rhs(a, q, &lin(&p, 1.0, &k2, h / 2.0));
        let k4 = lyap_rhs(a, q, &lin(&p, 1.0, &k3, h));
        let incr = lin(&lin(&k1, 1.0, &k2, 2.0), 1.0, &lin(&k3, 2.0, &k4, 1.0), 1.0);
        p = lin(&p, 1.0, &incr, h / 6.0);
    }
    p
}

/// Kalman update with `H = [I, 0]` and diagonal observation noise, using a
/// general inverse of the innovation covariance. Returns the posterior and
/// the gain.
pub fn dense_update(mu: &[f64], p: &Dense, y: &[f64], r: &[f64]) -> (Vec<f64>, Dense, Dense) {
    let (m, d) = (mu.len(), y.len());
    let h: Dense = (0..d).map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let pht = mul(p, &transpose(&h));
    let mut s = mul(&h, &pht);
    for i in 0..d {
        s[i][i] += r[i];
    }
    let k = mul(&pht, &inverse(&s));
    let innov: Vec<f64> = (0..d).map(|i| y[i] - mu[i]).collect();
    let mu_post: Vec<f64> = mu.iter().zip(mat_vec(&k, &innov)).map(|(a, b)| a + b).collect();
    let ikh = lin(&eye(m), 1.0, &mul(&k, &h), -1.0);
    (mu_post, mul(&ikh, p), k)
}

/// Random belief with the covariance structure the filter keeps: diagonal
/// blocks and a diagonal cross block.
pub fn block_belief(d: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Dense) {
    let mu = (0..2 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut p = vec![vec![0.0; 2 * d]; 2 * d];
    for i in 0..d {
        let u: f64 = rng.random_range(0.05..3.0);
        let l: f64 = rng.random_range(0.05..3.0);
        let s = rng.random_range(-0.9..0.9) * (u * l).sqrt();
        p[i][i] = u;
        p[d + i][d + i] = l;
        p[i][d + i] = s;
        p[d + i][i] = s;
    }
    (mu, p)
}

/// Continuous-discrete Kalman filter for `dz = A z dt + dbeta`, `Cov(dbeta) = Q dt`,
/// observing `[I, 0] z` with noise `diag(r)`. The first observation updates the
/// initial belief directly. Returns the posterior at every time.
pub fn continuous_discrete_filter(
    a: &Dense,
    q: &Dense,
    r: &[f64],
    mu0: &[f64],
    p0: &Dense,
    times: &[f64],
    obs: &[Vec<f64>],
    rk4_step: f64,
) -> Vec<(Vec<f64>, Dense)> {
    let mut out: Vec<(Vec<f64>, Dense)> = Vec::new();
    let (mut mu, mut p) = (mu0.to_vec(), p0.clone());
    for (t, y) in obs.iter().enumerate() {
        if t > 0 {
            let dt = times[t] - times[t - 1];
            mu = mat_vec(&expm(a, dt), &mu);
            p = lyapunov_rk4(a, q, &p, dt, ((dt / rk4_step).ceil() as usize).max(1));
        }
        let (m2, p2, _) = dense_update(&mu, &p, y, r);
        mu = m2;
        p = p2;
        out.push((mu.clone(), p.clone()));
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
