use super::*;
use crate::linalg::Matrix;
use crate::nn::{Activation, NetShape, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout(mode: Mode, m: usize, k: usize, seed: u64) -> (ParamStore, TransitionLayout) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = TransitionShape { latent_dim: m, num_basis: k, bandwidth: 2, mode };
    let l = TransitionLayout::build(&mut store, shape, &mut rng);
    (store, l)
}

fn state(d: usize, rng: &mut ChaCha8Rng) -> LatentState<Matrix> {
    let mu: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let l: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let s: Vec<f64> = (0..d).map(|i| rng.random_range(-0.4..0.4) * (u[i] * l[i]).sqrt()).collect();
    LatentState::from_parts(mu, u, l, s)
}

#[test]
fn zero_psi_gives_uniform_weights() {
    let (mut store, l) = layout(Mode::Full, 4, 5, 0);
    store.set(l.psi_w, Matrix::zeros(5, 4));
    let tm = l.bind(store.tensors()).unwrap();
    let a = tm.transition_weights(&Matrix::column(&[1.0, 2.0, 3.0, 4.0]));
    assert!(a.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let (store, l) = layout(Mode::Fast, 4, 1, 0);
    let tm = l.bind(store.tensors()).unwrap();
    assert_eq!(tm.transition_weights(&Matrix::column(&[1.0, 2.0, 3.0, 4.0])), Matrix::scalar(1.0));
}

#[test]
fn weights_match_naive_softmax() {
    let (store, l) = layout(Mode::Fast, 6, 4, 3);
    let tm = l.bind(store.tensors()).unwrap();
    let mu = Matrix::column(&[0.5, -1.0, 2.0, 0.1, 0.0, 1.5]);
    let w = store.get(l.psi_w);
    let logits: Vec<f64> = (0..4).map(|k| (0..6).map(|j| w[(k, j)] * mu[(j, 0)]).sum()).collect();
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let a = tm.transition_weights(&mu);
    for k in 0..4 {
        assert!((a[(k, 0)] - logits[k].exp() / z).abs() < 1e-15);
    }
}

#[test]
fn zero_duration_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [Mode::Full, Mode::Fast] {
        let (store, l) = layout(mode, 6, 3, 1);
        let tm = l.bind(store.tensors()).unwrap();
        let s = state(3, &mut rng);
        assert_eq!(tm.predict(&s, 0.0).unwrap(), s);
        assert!(matches!(tm.predict(&s, -0.5), Err(SsmError::NegativeDuration(_))));
    }
}

#[test]
fn pure_diffusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut store, l) = layout(Mode::Full, 6, 3, 1);
    let q = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    store.set(l.log_q, Matrix::column(&q.map(f64::ln)));
    let tm = l.bind(store.tensors()).unwrap();
    let s = state(3, &mut rng);
    let dt = 0.7;
    let p = tm.predict(&s, dt).unwrap();
    assert!(p.mu.max_abs_diff(&s.mu) < 1e-14);
    for i in 0..3 {
        assert!((p.sigma_u[(i, 0)] - s.sigma_u[(i, 0)] - q[i] * dt).abs() < 1e-13);
        assert!((p.sigma_l[(i, 0)] - s.sigma_l[(i, 0)] - q[3 + i] * dt).abs() < 1e-13);
        assert!((p.sigma_s[(i, 0)] - s.sigma_s[(i, 0)]).abs() < 1e-13);
    }
}

#[test]
fn band_layout() {
    // D = 3, b = 0: only the block diagonals.
    let idx = band_indices(6, 0);
    assert_eq!(idx, vec![0, 7, 14, 3, 10, 17, 18, 25, 32, 21, 28, 35]);
    assert_eq!(band_indices(6, 5).len(), 36);
}

fn obs(y: &[f64], v: &[f64]) -> LatentObservation<Matrix> {
    LatentObservation { y: Matrix::column(y), sigma_obs: Matrix::column(v) }
}

#[test]
fn equal_precision_fusion() {
    let prior = LatentState::from_parts(vec![2.0, -1.0], vec![1.0], vec![3.0], vec![0.0]);
    let (ku, _) = gains(&prior, &obs(&[4.0], &[1.0])).unwrap();
    assert_eq!(ku[(0, 0)], 0.5);
    let post = update(&prior, &obs(&[4.0], &[1.0])).unwrap();
    assert_eq!(post.mu[(0, 0)], 3.0);
    assert_eq!(post.sigma_u[(0, 0)], 0.5);
    assert_eq!(post.mu[(1, 0)], -1.0);
}

#[test]
fn uninformative_observation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let prior = state(4, &mut rng);
    let o = obs(&[5.0, -3.0, 1.0, 0.0], &[1e12; 4]);
    let post = update(&prior, &o).unwrap();
    for (a, b) in [
        (&post.mu, &prior.mu),
        (&post.sigma_u, &prior.sigma_u),
        (&post.sigma_l, &prior.sigma_l),
        (&post.sigma_s, &prior.sigma_s),
    ] {
        assert!(a.max_abs_diff(b) < 1e-6);
    }
    assert!(gain_norm(&prior, &o).unwrap() < 1e-10);
}

#[test]
fn perfect_observation_gain() {
    let d = 5;
    let prior = LatentState::from_parts(vec![0.0; 2 * d], vec![1.0; d], vec![1.0; d], vec![0.0; d]);
    let g = gain_norm(&prior, &obs(&[0.0; 5], &[1e-14; 5])).unwrap();
    assert!((g - (d as f64).sqrt()).abs() < 1e-10);
}

#[test]
fn gain_norm_decreases_with_noise() {
    let prior = LatentState::from_parts(vec![0.0, 0.0], vec![1.3], vec![0.8], vec![0.4]);
    let norms: Vec<f64> = (0..100)
        .map(|i| gain_norm(&prior, &obs(&[1.0], &[0.01 * 1.1f64.powi(i)])).unwrap())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn update_rejects_bad_variance() {
    let prior = LatentState::from_parts(vec![0.0, 0.0], vec![1.0], vec![1.0], vec![0.0]);
    assert!(matches!(update(&prior, &obs(&[0.0], &[0.0])), Err(SsmError::ObservationVariance(_))));
    assert!(matches!(update(&prior, &obs(&[0.0], &[-1.0])), Err(SsmError::ObservationVariance(_))));
    assert!(matches!(update(&prior, &obs(&[0.0, 1.0], &[1.0, 1.0])), Err(SsmError::Shape(_))));
}

#[test]
fn dense_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = state(3, &mut rng);
    let back = LatentState::from_dense(s.mu.clone(), &s.dense_cov());
    assert_eq!(back, s);
    let c = s.dense_cov();
    assert_eq!(c[(1, 4)], s.sigma_s[(1, 0)]);
    assert_eq!(c[(4, 1)], s.sigma_s[(1, 0)]);
    assert_eq!(c[(0, 4)], 0.0);
}

pub(crate) fn small_config(mode: Mode) -> CruConfig {
    CruConfig {
        input_dim: 2,
        mask_input: false,
        output_dim: 2,
        latent_obs_dim: 2,
        num_basis: 3,
        bandwidth: 1,
        mode,
        encoder_hidden: NetShape { sizes: vec![5], activation: Activation::Tanh, layer_norm: false },
        encoder_var: Activation::EluPlusOne,
        decoder_hidden: NetShape { sizes: vec![5], activation: Activation::Tanh, layer_norm: false },
        decoder_var_hidden: NetShape { sizes: vec![], activation: Activation::Tanh, layer_norm: false },
        output: OutputKind::Gaussian,
    }
}

fn steps(times: &[f64], xs: &[Option<[f64; 2]>]) -> Vec<Step<Matrix>> {
    times.iter().zip(xs).map(|(&time, x)| Step { time, input: x.map(|v| Matrix::column(&v)) }).collect()
}

#[test]
fn single_observation_skips_predict() {
    let cru = Cru::new(small_config(Mode::Full), 3).unwrap();
    let b = cru.bind(cru.params().tensors()).unwrap();
    let x = Matrix::column(&[0.4, -0.2]);
    let out = b.run(&steps(&[2.5], &[Some([0.4, -0.2])]), true).unwrap();
    let init = LatentState::initial(&x, 2);
    assert_eq!(init.sigma_u, Matrix::filled(2, 1, 10.0));
    let post = update(&init, &b.encode(&x).unwrap()).unwrap();
    let (o, s) = b.decode(&post).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].state, post);
    assert_eq!((out[0].mean.clone(), out[0].sigma.clone()), (o, s));
    assert!(out[0].gain_norm.is_some());
}

#[test]
fn sequence_errors() {
    let cru = Cru::new(small_config(Mode::Fast), 3).unwrap();
    let b = cru.bind(cru.params().tensors()).unwrap();
    assert!(matches!(b.run(&[], true), Err(SsmError::EmptySequence)));
    let r = b.run(&steps(&[0.0, 1.0, 1.0], &[Some([0.0; 2]), None, Some([1.0; 2])]), true);
    assert!(matches!(r, Err(SsmError::NonIncreasingTime { index: 2, .. })));
}

#[test]
fn query_steps_decode_prior_without_update() {
    let cru = Cru::new(small_config(Mode::Full), 4).unwrap();
    let b = cru.bind(cru.params().tensors()).unwrap();
    let out = b.run(&steps(&[0.0, 0.5, 1.0], &[Some([0.3, 0.1]), None, Some([0.2, 0.2])]), true).unwrap();
    assert!(out[1].gain_norm.is_none());
    let direct = b.transition().predict(&out[0].state, 0.5).unwrap();
    assert_eq!(out[1].state, direct);
    // the third step predicts from the first posterior over the full gap
    let prior = b.transition().predict(&out[0].state, 1.0).unwrap();
    let post = update(&prior, &b.encode(&Matrix::column(&[0.2, 0.2])).unwrap()).unwrap();
    assert_eq!(out[2].state, post);
}

#[test]
fn no_filter_decodes_encoder_output() {
    let cru = Cru::new(small_config(Mode::Fast), 4).unwrap();
    let b = cru.bind(cru.params().tensors()).unwrap();
    let out = b.run(&steps(&[0.0, 1.0], &[Some([0.3, 0.1]), Some([0.9, 0.2])]), false).unwrap();
    let o = b.encode(&Matrix::column(&[0.9, 0.2])).unwrap();
    assert_eq!(out[1].state.mu.as_slice()[..2], *o.y.as_slice());
    assert_eq!(out[1].state.sigma_u, o.sigma_obs);
    assert!(out[1].gain_norm.is_none());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    for mode in [Mode::Full, Mode::Fast] {
        let cru = Cru::new(small_config(mode), 17).unwrap();
        cru.save(&path).unwrap();
        let back = Cru::load(&path).unwrap();
        assert_eq!(back, cru);
    }
    std::fs::write(&path, "{\"format\":\"other\"}").unwrap();
    assert!(matches!(Cru::load(&path), Err(SsmError::Checkpoint(_))));
}

#[test]
fn config_validation() {
    let mut c = small_config(Mode::Full);
    c.num_basis = 0;
    assert!(matches!(Cru::new(c, 0), Err(SsmError::Config(_))));
    let mut c = small_config(Mode::Full);
    c.encoder_var = Activation::Linear;
    assert!(matches!(Cru::new(c, 0), Err(SsmError::Config(_))));
}

#[test]
fn initial_parameters() {
    let cru = Cru::new(small_config(Mode::Fast), 0).unwrap();
    let l = cru.transition();
    assert!(cru.params().get(l.log_q).as_slice().iter().all(|v| (v.exp() - 0.1).abs() < 1e-15));
    let LayoutKind::Fast { skew, eig } = &l.kind else { panic!() };
    assert!(cru.params().get(*skew).as_slice().iter().all(|&v| v == 0.0));
    assert!(cru.params().get(*eig).as_slice().iter().all(|&v| v == 1e-5));
    let cru = Cru::new(small_config(Mode::Full), 0).unwrap();
    let LayoutKind::Full { basis, .. } = &cru.transition().kind else { panic!() };
    assert!(cru.params().get(*basis).as_slice().iter().all(|&v| v == 0.0));
}
