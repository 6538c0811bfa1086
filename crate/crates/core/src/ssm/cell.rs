use super::{update_with_gain, LatentObservation, LatentState, Mode, SsmError, TransitionLayout, TransitionModel, TransitionShape};
use super::INITIAL_VARIANCE;
use crate::linalg::{Matrix, Tensor};
use crate::nn::{Activation, Decoder, Encoder, NamedTensor, NetShape, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "cru-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// Real-valued outputs with a predicted scale.
    Gaussian,
    /// Outputs in `(0, 1)` through a sigmoid.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CruConfig {
    /// Raw feature count of an observation.
    pub input_dim: usize,
    /// Append the observation mask to the encoder input.
    pub mask_input: bool,
    pub output_dim: usize,
    /// `D`; the latent state has `M = 2D` entries.
    pub latent_obs_dim: usize,
    pub num_basis: usize,
    pub bandwidth: usize,
    pub mode: Mode,
    pub encoder_hidden: NetShape,
    pub encoder_var: Activation,
    pub decoder_hidden: NetShape,
    pub decoder_var_hidden: NetShape,
    pub output: OutputKind,
}

impl CruConfig {
    pub fn latent_dim(&self) -> usize {
        2 * self.latent_obs_dim
    }

    pub fn encoder_input_dim(&self) -> usize {
        if self.mask_input {
            2 * self.input_dim
        } else {
            self.input_dim
        }
    }

    pub fn validate(&self) -> Result<(), SsmError> {
        let bad = |m: &str| Err(SsmError::Config(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be positive");
        }
        if self.latent_obs_dim == 0 {
            return bad("latent observation dimension must be positive");
        }
        if self.num_basis == 0 {
            return bad("need at least one basis matrix");
        }
        for s in [&self.encoder_hidden, &self.decoder_hidden, &self.decoder_var_hidden] {
            if s.sizes.contains(&0) {
                return bad("hidden layer sizes must be positive");
            }
        }
        if matches!(self.encoder_var, Activation::Linear | Activation::Softmax) {
            return bad("encoder variance head needs a positive activation");
        }
        Ok(())
    }
}

/// One time point of a sequence; `input` is the prepared encoder input or
/// `None` at a query-only time.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub time: f64,
    pub input: Option<T>,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub time: f64,
    pub mean: T,
    /// Output standard deviation.
    pub sigma: T,
    /// Present at observed steps when filtering.
    pub gain_norm: Option<f64>,
    /// Posterior at observed steps, prior at query steps.
    pub state: LatentState<T>,
}

/// A CRU model: configuration, parameters and where each network reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Cru {
    config: CruConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    transition: TransitionLayout,
}

/// On-disk model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: CruConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Cru {
    pub fn new(config: CruConfig, seed: u64) -> Result<Self, SsmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.latent_obs_dim;
        let encoder = Encoder::build(
            &mut store,
            config.encoder_input_dim(),
            d,
            &config.encoder_hidden,
            config.encoder_var,
            &mut rng,
        );
        let transition = TransitionLayout::build(
            &mut store,
            TransitionShape {
                latent_dim: config.latent_dim(),
                num_basis: config.num_basis,
                bandwidth: config.bandwidth,
                mode: config.mode,
            },
            &mut rng,
        );
        let mean_act = match config.output {
            OutputKind::Gaussian => Activation::Linear,
            OutputKind::Bernoulli => Activation::Sigmoid,
        };
        let decoder = Decoder::build(
            &mut store,
            config.latent_dim(),
            config.output_dim,
            &config.decoder_hidden,
            &config.decoder_var_hidden,
            mean_act,
            Activation::EluPlusOne,
            &mut rng,
        );
        Ok(Self { config, store, encoder, decoder, transition })
    }

    pub fn config(&self) -> &CruConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn transition(&self) -> &TransitionLayout {
        &self.transition
    }

    /// Resolves every parameter against `params`, which is indexed like
    /// [`Self::params`].
    pub fn bind<'a, T: Tensor>(&'a self, params: &'a [T]) -> Result<BoundCru<'a, T>, SsmError> {
        if params.len() != self.store.len() {
            return Err(SsmError::Shape(format!("{} parameter tensors for a model with {}", params.len(), self.store.len())));
        }
        Ok(BoundCru { cru: self, params, transition: self.transition.bind(params)? })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self.store.to_named(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SsmError> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(SsmError::Checkpoint(format!("format is '{}', expected '{CHECKPOINT_FORMAT}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(SsmError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut cru = Self::new(ck.config.clone(), 0)?;
        cru.store.load_named(&ck.tensors)?;
        Ok(cru)
    }

    pub fn save(&self, path: &Path) -> Result<(), SsmError> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| SsmError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| SsmError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SsmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SsmError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| SsmError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ck)
    }
}

/// A model whose parameters are resolved to tensors of one context.
pub struct BoundCru<'a, T> {
    cru: &'a Cru,
    params: &'a [T],
    transition: TransitionModel<T>,
}

impl<'a, T: Tensor> BoundCru<'a, T> {
    pub fn transition(&self) -> &TransitionModel<T> {
        &self.transition
    }

    pub fn encode(&self, x: &T) -> Result<LatentObservation<T>, SsmError> {
        Ok(self.cru.encoder.encode(self.params, x)?)
    }

    pub fn decode(&self, state: &LatentState<T>) -> Result<(T, T), SsmError> {
        Ok(self.cru.decoder.decode(self.params, state)?)
    }

    /// Filters `steps` and decodes at every time point. With `filter` off the
    /// encoder output is decoded directly, without predict or update.
    pub fn run(&self, steps: &[Step<T>], filter: bool) -> Result<Vec<StepOutput<T>>, SsmError> {
        let first = steps.first().ok_or(SsmError::EmptySequence)?;
        for (i, w) in steps.windows(2).enumerate() {
            if !(w[1].time > w[0].time) {
                return Err(SsmError::NonIncreasingTime { index: i + 1, previous: w[0].time, time: w[1].time });
            }
        }
        let like = &self.params[0];
        let d = self.cru.config.latent_obs_dim;
        let initial = LatentState::initial(like, d);
        let mut post = initial.clone();
        let mut last = first.time;
        let mut out = Vec::with_capacity(steps.len());
        for step in steps {
            let (state, gain) = if filter {
                let prior = self.transition.predict(&post, step.time - last)?;
                match &step.input {
                    Some(x) => {
                        let obs = self.encode(x)?;
                        let (p, g) = update_with_gain(&prior, &obs)?;
                        post = p.clone();
                        last = step.time;
                        (p, Some(g))
                    }
                    None => (prior, None),
                }
            } else {
                match &step.input {
                    Some(x) => {
                        let obs = self.encode(x)?;
                        let pad = like.lift(Matrix::zeros(d, 1));
                        let state = LatentState {
                            mu: T::concat_rows(&[obs.y, pad.clone()]),
                            sigma_u: obs.sigma_obs,
                            sigma_l: like.lift(Matrix::filled(d, 1, INITIAL_VARIANCE)),
                            sigma_s: pad,
                        };
                        (state, None)
                    }
                    None => (initial.clone(), None),
                }
            };
            let (mean, sigma) = self.decode(&state)?;
            out.push(StepOutput { time: step.time, mean, sigma, gain_norm: gain, state });
        }
        Ok(out)
    }
}
