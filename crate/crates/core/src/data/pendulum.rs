use super::{item_rng, DataError, Sequence, SequenceBatch};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Side length of the rendered image observation.
pub const IMAGE_SIDE: usize = 16;

const FINE_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// `(sin theta, cos theta)`.
    AnglePair,
    /// Flattened 16x16 grey image of the pendulum bob.
    Image16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub horizon: f64,
    /// `g / L`.
    pub gravity_ratio: f64,
    /// Initial angle is uniform in `[-max, max]`.
    pub theta0_max: f64,
    /// Initial angular velocity is uniform in `[-max, max]`.
    pub omega0_max: f64,
    pub noise_max: f64,
    /// The noise level of the first frame is uniform in `[0, max]`.
    pub noise_start_max: f64,
    pub walk_step: f64,
    pub kind: ObservationKind,
    pub seed: u64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            n_sequences: 100,
            seq_len: 50,
            horizon: 5.0,
            gravity_ratio: 4.0,
            theta0_max: std::f64::consts::PI,
            omega0_max: 1.0,
            noise_max: 1.0,
            noise_start_max: 0.0,
            walk_step: 0.1,
            kind: ObservationKind::AnglePair,
            seed: 0,
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.seq_len < 2 || self.seq_len > FINE_STEPS + 1 {
            return bad(format!("seq_len must be in 2..={}, got {}", FINE_STEPS + 1, self.seq_len));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.noise_max >= 0.0) || !(self.walk_step >= 0.0) {
            return bad("noise_max and walk_step must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.noise_start_max) {
            return bad(format!("noise_start_max must be in [0, 1], got {}", self.noise_start_max));
        }
        if !self.gravity_ratio.is_finite() || !(self.theta0_max >= 0.0) || !(self.omega0_max >= 0.0) {
            return bad("invalid pendulum dynamics".into());
        }
        Ok(())
    }
}

/// `(theta, omega)` on `steps + 1` equally spaced points over `[0, horizon]`.
pub fn trajectory(theta0: f64, omega0: f64, gravity_ratio: f64, horizon: f64, steps: usize) -> Vec<(f64, f64)> {
    let h = horizon / steps as f64;
    let f = |th: f64, om: f64| (om, -gravity_ratio * th.sin());
    let mut out = Vec::with_capacity(steps + 1);
    let (mut th, mut om) = (theta0, omega0);
    out.push((th, om));
    for _ in 0..steps {
        let k1 = f(th, om);
        let k2 = f(th + 0.5 * h * k1.0, om + 0.5 * h * k1.1);
        let k3 = f(th + 0.5 * h * k2.0, om + 0.5 * h * k2.1);
        let k4 = f(th + h * k3.0, om + h * k3.1);
        th += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        om += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        out.push((th, om));
    }
    out
}

pub fn energy(theta: f64, omega: f64, gravity_ratio: f64) -> f64 {
    (1.0 - theta.cos()) * gravity_ratio + 0.5 * omega * omega
}

fn render(theta: f64) -> Vec<f64> {
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (bx, by) = (c + 0.7 * c * theta.sin(), c + 0.7 * c * theta.cos());
    let r2 = (IMAGE_SIDE as f64 / 8.0).powi(2);
    let mut img = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            img.push((-d2 / (2.0 * r2)).exp());
        }
    }
    img
}

/// Irregular pendulum sequences with a correlated noise level per frame.
///
/// Frame `t` is `(1 - lambda) * clean + lambda * eps` with
/// `lambda = min(1, noise_max * u_t)`, `u_t` a clamped random walk in `[0, 1]`
/// and `eps` standard normal (angle pair) or uniform (image) noise.
pub fn simulate_pendulum(cfg: &PendulumConfig) -> Result<SequenceBatch, DataError> {
    cfg.validate()?;
    let dt = cfg.horizon / FINE_STEPS as f64;
    let width = match cfg.kind {
        ObservationKind::AnglePair => 2,
        ObservationKind::Image16 => IMAGE_SIDE * IMAGE_SIDE,
    };
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let mut rng = item_rng(cfg.seed, i as u64);
        let theta0 = rng.random_range(-1.0..=1.0) * cfg.theta0_max;
        let omega0 = rng.random_range(-1.0..=1.0) * cfg.omega0_max;
        let path = trajectory(theta0, omega0, cfg.gravity_ratio, cfg.horizon, FINE_STEPS);
        let mut grid = index::sample(&mut rng, FINE_STEPS + 1, cfg.seq_len).into_vec();
        grid.sort_unstable();
        let mut u: f64 = rng.random::<f64>() * cfg.noise_start_max;
        let (mut times, mut values, mut targets, mut noise) = (vec![], vec![], vec![], vec![]);
        for (t, &g) in grid.iter().enumerate() {
            if t > 0 {
                let e: f64 = rng.sample(StandardNormal);
                u = (u + cfg.walk_step * e).clamp(0.0, 1.0);
            }
            let th = path[g].0;
            let clean = match cfg.kind {
                ObservationKind::AnglePair => vec![th.sin(), th.cos()],
                ObservationKind::Image16 => render(th),
            };
            let lambda = (cfg.noise_max * u).min(1.0);
            let x: Vec<f64> = clean
                .iter()
                .map(|&c| {
                    let e: f64 = match cfg.kind {
                        ObservationKind::AnglePair => rng.sample(StandardNormal),
                        ObservationKind::Image16 => rng.random_range(0.0..1.0),
                    };
                    if lambda == 0.0 {
                        c
                    } else {
                        (1.0 - lambda) * c + lambda * e
                    }
                })
                .collect();
            times.push(g as f64 * dt);
            values.push(x);
            targets.push(vec![th.sin(), th.cos()]);
            noise.push(u);
        }
        let n = times.len();
        sequences.push(Sequence {
            id: format!("pendulum-{i:05}"),
            times,
            values,
            mask: vec![vec![true; width]; n],
            targets,
            target_mask: vec![vec![true; 2]; n],
            noise: Some(noise),
        });
    }
    let features = match cfg.kind {
        ObservationKind::AnglePair => vec!["sin".to_string(), "cos".to_string()],
        ObservationKind::Image16 => (0..width).map(|p| format!("px{p}")).collect(),
    };
    Ok(SequenceBatch { features, target_names: vec!["sin_theta".into(), "cos_theta".into()], sequences })
}
