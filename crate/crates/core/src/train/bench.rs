use super::TrainError;
use crate::linalg::{orthogonal_map, Matrix, SkewParams};
use crate::nn::ParamStore;
use crate::ssm::{update, LatentObservation, LatentState, LayoutKind, Mode, TransitionLayout, TransitionModel, TransitionShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub latent_dim: usize,
    pub mode: Mode,
    /// Median wall time of one predict + update.
    pub seconds: f64,
    /// Largest belief difference between the two modes over all samples.
    pub guard_max_diff: f64,
}

/// A random fast-mode model and the full-mode model with
/// `A_k = E diag(D_k) E^T`, sharing weights and diffusion.
pub fn mirrored_models(m: usize, k: usize, seed: u64) -> (TransitionModel<Matrix>, TransitionModel<Matrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = TransitionShape { latent_dim: m, num_basis: k, bandwidth: m / 2, mode: Mode::Fast };
    let mut fast_store = ParamStore::new();
    let fast = TransitionLayout::build(&mut fast_store, shape, &mut rng);
    let mut full_store = ParamStore::new();
    let full = TransitionLayout::build(&mut full_store, TransitionShape { mode: Mode::Full, ..shape }, &mut rng);
    let LayoutKind::Fast { skew, eig } = fast.kind.clone() else { unreachable!() };
    let LayoutKind::Full { basis, positions } = full.kind.clone() else { unreachable!() };

    let raw: Vec<f64> = (0..m * (m - 1) / 2).map(|_| rng.random_range(-0.6..0.6)).collect();
    fast_store.set(skew, Matrix::column(&raw));
    let d = Matrix::from_fn(k, m, |_, _| rng.random_range(-1.0..-0.05));
    fast_store.set(eig, d.clone());
    let log_q = Matrix::from_fn(m, 1, |_, _| rng.random_range(0.05f64..0.3).ln());
    fast_store.set(fast.log_q, log_q.clone());
    let psi_w = fast_store.get(fast.psi_w).scale(0.3);
    fast_store.set(fast.psi_w, psi_w.clone());

    let e = orthogonal_map(&SkewParams::new(m, raw).expect("length matches"));
    let mats: Vec<Matrix> = (0..k)
        .map(|b| {
            let row: Vec<f64> = (0..m).map(|j| d[(b, j)]).collect();
            e.matmul(&Matrix::from_diag(&row)).matmul_t(&e)
        })
        .collect();
    let values: Vec<f64> = positions.iter().map(|&(b, idx)| mats[b].as_slice()[idx]).collect();
    full_store.set(basis, Matrix::column(&values));
    full_store.set(full.psi_w, psi_w);
    full_store.set(full.psi_b, fast_store.get(fast.psi_b).clone());
    full_store.set(full.log_q, log_q);

    let fast_model = fast.bind(fast_store.tensors()).expect("orthogonal basis");
    let full_model = full.bind(full_store.tensors()).expect("full mode binds");
    (fast_model, full_model)
}

/// A random valid belief with half dimension `d`.
pub(crate) fn random_state(d: usize, rng: &mut ChaCha8Rng) -> LatentState<Matrix> {
    let mu = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
    let l: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
    let s = (0..d).map(|i| rng.random_range(-0.5..0.5) * (u[i] * l[i]).sqrt()).collect();
    LatentState::from_parts(mu, u, l, s)
}

fn belief_diff(a: &LatentState<Matrix>, b: &LatentState<Matrix>) -> f64 {
    a.mu.max_abs_diff(&b.mu)
        .max(a.sigma_u.max_abs_diff(&b.sigma_u))
        .max(a.sigma_l.max_abs_diff(&b.sigma_l))
        .max(a.sigma_s.max_abs_diff(&b.sigma_s))
}

fn step(tm: &TransitionModel<Matrix>, s: &LatentState<Matrix>, obs: &LatentObservation<Matrix>, dt: f64) -> Result<LatentState<Matrix>, TrainError> {
    Ok(update(&tm.predict(s, dt)?, obs)?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times one predict + update in both modes on mirrored models for every
/// latent size; each sample also checks that both modes agree.
pub fn runtime_benchmark(dims: &[usize], k: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>, TrainError> {
    if dims.iter().any(|&m| m < 2 || m % 2 != 0) {
        return Err(TrainError::Config("latent sizes must be even and at least 2".into()));
    }
    if k == 0 || repeats == 0 {
        return Err(TrainError::Config("need at least one basis matrix and one repeat".into()));
    }
    let mut rows = Vec::new();
    for (i, &m) in dims.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let (fast, full) = mirrored_models(m, k, rng.random());
        let d = m / 2;
        let state = random_state(d, &mut rng);
        let obs = LatentObservation {
            y: Matrix::from_fn(d, 1, |_, _| rng.random_range(-1.0..1.0)),
            sigma_obs: Matrix::from_fn(d, 1, |_, _| rng.random_range(0.1..1.0)),
        };
        let dt = 0.5;
        // warm up and size the inner loop so a fast sample lasts about 2 ms
        let t0 = Instant::now();
        black_box(step(&fast, &state, &obs, dt)?);
        let one = t0.elapsed().as_secs_f64().max(1e-7);
        let iters = ((2e-3 / one) as usize).clamp(1, 10_000);
        black_box(step(&full, &state, &obs, dt)?);
        let (mut tf, mut tu, mut guard) = (Vec::new(), Vec::new(), 0.0f64);
        for _ in 0..repeats {
            let t = Instant::now();
            let mut a = None;
            for _ in 0..iters {
                a = Some(black_box(step(&fast, black_box(&state), &obs, dt)?));
            }
            tf.push(t.elapsed().as_secs_f64() / iters as f64);
            let t = Instant::now();
            let mut b = None;
            for _ in 0..iters {
                b = Some(black_box(step(&full, black_box(&state), &obs, dt)?));
            }
            tu.push(t.elapsed().as_secs_f64() / iters as f64);
            guard = guard.max(belief_diff(a.as_ref().expect("iters >= 1"), b.as_ref().expect("iters >= 1")));
        }
        rows.push(BenchRow { latent_dim: m, mode: Mode::Fast, seconds: median(tf), guard_max_diff: guard });
        rows.push(BenchRow { latent_dim: m, mode: Mode::Full, seconds: median(tu), guard_max_diff: guard });
    }
    Ok(rows)
}
