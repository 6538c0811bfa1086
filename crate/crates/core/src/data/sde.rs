use super::{item_rng, DataError, Sequence, SequenceBatch};
use crate::linalg::{matrix_fraction, Matrix};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const GRID_STEPS: usize = 1000;

/// `dz = A z dt + dbeta` with `Cov(dbeta) = diag(q) dt`, observed as
/// `x = C z + N(0, diag(r))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSdeModel {
    pub a: Matrix,
    pub q: Vec<f64>,
    pub c: Matrix,
    pub r: Vec<f64>,
    /// Variance of every entry of the initial state.
    pub z0_var: f64,
}

impl LinearSdeModel {
    /// Damped oscillator on `(position, velocity)` observing the position.
    pub fn oscillator(omega: f64, damping: f64, q: [f64; 2], r: f64) -> Self {
        Self {
            a: Matrix::from_vec(2, 2, vec![0.0, 1.0, -omega * omega, -2.0 * damping * omega]),
            q: q.to_vec(),
            c: Matrix::from_vec(1, 2, vec![1.0, 0.0]),
            r: vec![r],
            z0_var: 1.0,
        }
    }

    /// A random stable system: `A = -lambda I + rotation part`, random `C`.
    pub fn random(latent: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(latent, latent, |_, _| rng.random_range(-1.0..1.0));
        let mut a = w.zip_map(&w.transpose(), |x, y| x - y);
        for i in 0..latent {
            a[(i, i)] -= rng.random_range(0.2..0.6);
        }
        let c = Matrix::from_fn(features, latent, |_, _| rng.random_range(-1.0..1.0));
        Self { a, q: vec![0.1; latent], c, r: vec![0.05; features], z0_var: 1.0 }
    }

    pub fn latent_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn features(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.a.rows();
        if !self.a.is_square() || self.q.len() != n || self.c.cols() != n || self.r.len() != self.c.rows() {
            return Err(DataError::Config("linear SDE matrices do not fit together".into()));
        }
        if self.q.iter().chain(&self.r).any(|&v| !(v >= 0.0)) || !(self.z0_var >= 0.0) {
            return Err(DataError::Config("variances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSdeConfig {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub horizon: f64,
    pub model: LinearSdeModel,
    pub seed: u64,
}

/// Lower-triangular `L` with `L L^T = s`; non-positive pivots give zero columns.
pub fn cholesky(s: &Matrix) -> Matrix {
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = s[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d <= 0.0 {
            continue;
        }
        let d = d.sqrt();
        l.as_mut_slice()[j * n + j] = d;
        for i in j + 1..n {
            let v = (s[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>()) / d;
            l.as_mut_slice()[i * n + j] = v;
        }
    }
    l
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact discretization of the SDE at irregular grid times. Targets are the
/// noiseless `C z`; the latent path is returned alongside.
pub fn simulate_linear_sde(cfg: &LinearSdeConfig) -> Result<(SequenceBatch, Vec<Vec<Vec<f64>>>), DataError> {
    let m = &cfg.model;
    m.validate()?;
    if cfg.seq_len < 1 || cfg.seq_len > GRID_STEPS + 1 || !(cfg.horizon > 0.0) {
        return Err(DataError::Config("seq_len or horizon out of range".into()));
    }
    let (n, k) = (m.latent_dim(), m.features());
    let qm = Matrix::from_diag(&m.q);
    let h = cfg.horizon / GRID_STEPS as f64;
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    let mut latents = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let mut rng = item_rng(cfg.seed, i as u64);
        let mut grid = index::sample(&mut rng, GRID_STEPS + 1, cfg.seq_len).into_vec();
        grid.sort_unstable();
        let times: Vec<f64> = grid.iter().map(|&g| g as f64 * h).collect();
        let mut z: Vec<f64> = gaussian(&mut rng, n).iter().map(|e| e * m.z0_var.sqrt()).collect();
        let (mut values, mut targets, mut path) = (vec![], vec![], vec![]);
        for t in 0..times.len() {
            if t > 0 {
                let dt = times[t] - times[t - 1];
                let (phi, cov) = matrix_fraction(&m.a, &qm, &Matrix::zeros(n, n), dt)
                    .map_err(|e| DataError::Config(e.to_string()))?;
                let l = cholesky(&cov);
                let noise = l.matmul(&Matrix::column(&gaussian(&mut rng, n)));
                z = phi.matmul(&Matrix::column(&z)).as_slice().iter().zip(noise.as_slice()).map(|(a, b)| a + b).collect();
            }
            let clean = m.c.matmul(&Matrix::column(&z)).into_vec();
            let obs = clean.iter().zip(&m.r).map(|(c, r)| c + r.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            values.push(obs);
            targets.push(clean);
            path.push(z.clone());
        }
        let len = times.len();
        sequences.push(Sequence {
            id: format!("sde-{i:05}"),
            times,
            values,
            mask: vec![vec![true; k]; len],
            targets,
            target_mask: vec![vec![true; k]; len],
            noise: None,
        });
        latents.push(path);
    }
    let features: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
    let target_names = (0..k).map(|j| format!("y{j}")).collect();
    Ok((SequenceBatch { features, target_names, sequences }, latents))
}
