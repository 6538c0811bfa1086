//! WebAssembly bindings behind `www/index.html`: the matrix exponential, the
//! gain of a single latent pair, and a continuous recurrent unit run as the
//! exact filter of a noisy damped oscillator.

use cru::data::{simulate_linear_sde, sparsify, LinearSdeConfig, LinearSdeModel};
use cru::linalg::{matrix_exponential, Matrix};
use cru::nn::{Activation, NetShape};
use cru::ssm::{gain_norm, Cru, CruConfig, LatentObservation, LatentState, LayoutKind, Mode, OutputKind, Step};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DIFFUSION: f64 = 0.1;
const HORIZON: f64 = 10.0;
const SAMPLES: usize = 80;
const QUERY_POINTS: usize = 200;

/// `exp(A t)` for the row-major `n x n` matrix `values`.
#[wasm_bindgen]
pub fn expm(values: Vec<f64>, n: usize, t: f64) -> Result<Vec<f64>, String> {
    if values.len() != n * n {
        return Err(format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, values.len()));
    }
    matrix_exponential(&Matrix::from_vec(n, n, values), t).map(Matrix::into_vec).map_err(|e| e.to_string())
}

/// Gain norm of one latent pair with prior variances `u`, `l`, covariance `s`
/// and observation variance `obs_var`.
#[wasm_bindgen]
pub fn gain(u: f64, l: f64, s: f64, obs_var: f64) -> Result<f64, String> {
    if !(u > 0.0 && l > 0.0) || u * l < s * s {
        return Err("the prior covariance must be positive definite".into());
    }
    let prior = LatentState::from_parts(vec![0.0, 0.0], vec![u], vec![l], vec![s]);
    let obs = LatentObservation { y: Matrix::scalar(0.0), sigma_obs: Matrix::scalar(obs_var) };
    gain_norm(&prior, &obs).map_err(|e| e.to_string())
}

fn linear() -> NetShape {
    NetShape { sizes: vec![], activation: Activation::Tanh, layer_norm: false }
}

/// A one-pair model whose encoder passes the observation through with
/// variance `r`, whose transition is `model.a` and whose decoder reads the
/// position.
fn exact_filter(model: &LinearSdeModel, r: f64) -> Result<Cru, String> {
    let cfg = CruConfig {
        input_dim: 1,
        mask_input: false,
        output_dim: 1,
        latent_obs_dim: 1,
        num_basis: 1,
        bandwidth: 0,
        mode: Mode::Full,
        encoder_hidden: linear(),
        encoder_var: Activation::EluPlusOne,
        decoder_hidden: linear(),
        decoder_var_hidden: linear(),
        output: OutputKind::Gaussian,
    };
    let mut cru = Cru::new(cfg, 0).map_err(|e| e.to_string())?;
    // elu(x) + 1 = exp(x) for x < 0
    let var_bias = if r < 1.0 { r.ln() } else { r - 1.0 };
    let LayoutKind::Full { basis, positions } = cru.transition().kind.clone() else {
        return Err("expected a full transition".into());
    };
    let basis_values: Vec<f64> = positions.iter().map(|&(_, i)| model.a.as_slice()[i]).collect();
    let store = cru.params_mut();
    for (name, value) in [
        ("encoder.mean.0.weight", Matrix::scalar(1.0)),
        ("encoder.mean.0.bias", Matrix::scalar(0.0)),
        ("encoder.var.0.weight", Matrix::scalar(0.0)),
        ("encoder.var.0.bias", Matrix::scalar(var_bias)),
        ("decoder.mean.0.weight", Matrix::from_vec(1, 2, vec![1.0, 0.0])),
        ("decoder.mean.0.bias", Matrix::scalar(0.0)),
        ("transition.log_q", Matrix::column(&[DIFFUSION.ln(), DIFFUSION.ln()])),
    ] {
        let id = store.find(name).ok_or_else(|| format!("model has no parameter {name}"))?;
        store.set(id, value);
    }
    store.set(basis, Matrix::column(&basis_values));
    Ok(cru)
}

/// Simulates one damped oscillator path, keeps a fraction `keep` of its
/// noisy samples and filters them. Returns JSON with the clean path, the kept
/// observations, and the filter mean, standard deviation and gain norm on a
/// grid that includes every observation time.
#[wasm_bindgen]
pub fn filter_oscillator(seed: u32, omega: f64, damping: f64, obs_var: f64, keep: f64) -> Result<String, String> {
    if !(obs_var > 0.0) || !(omega > 0.0) || !(damping >= 0.0) {
        return Err("need omega > 0, damping >= 0 and a positive observation variance".into());
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err("keep must be in (0, 1]".into());
    }
    let model = LinearSdeModel::oscillator(omega, damping, [DIFFUSION, DIFFUSION], obs_var);
    let cfg = LinearSdeConfig { n_sequences: 1, seq_len: SAMPLES, horizon: HORIZON, model: model.clone(), seed: u64::from(seed) };
    let (batch, _) = simulate_linear_sde(&cfg).map_err(|e| e.to_string())?;
    let kept = sparsify(&batch, keep, 0.0, u64::from(seed) + 1).map_err(|e| e.to_string())?;
    let (full, obs) = (&batch.sequences[0], &kept.sequences[0]);

    let mut steps: Vec<Step<Matrix>> =
        obs.times.iter().zip(&obs.values).map(|(&time, v)| Step { time, input: Some(Matrix::column(v)) }).collect();
    for i in 0..=QUERY_POINTS {
        let time = HORIZON * i as f64 / QUERY_POINTS as f64;
        if time >= obs.times[0] && !obs.times.contains(&time) {
            steps.push(Step { time, input: None });
        }
    }
    steps.sort_by(|a, b| a.time.total_cmp(&b.time));

    let cru = exact_filter(&model, obs_var)?;
    let bound = cru.bind(cru.params().tensors()).map_err(|e| e.to_string())?;
    let out = bound.run(&steps, true).map_err(|e| e.to_string())?;
    let filtered: Vec<_> = steps
        .iter()
        .zip(&out)
        .map(|(s, o)| json!({ "t": s.time, "mean": o.state.mu[(0, 0)], "sd": o.state.sigma_u[(0, 0)].sqrt(), "gain": o.gain_norm }))
        .collect();
    let truth: Vec<_> = full.times.iter().zip(&full.targets).map(|(t, v)| json!([t, v[0]])).collect();
    let observed: Vec<_> = obs.times.iter().zip(&obs.values).map(|(t, v)| json!([t, v[0]])).collect();
    Ok(json!({ "truth": truth, "observed": observed, "filtered": filtered }).to_string())
}
