use super::{Activation, DenseNet, NetShape, NnError, ParamStore};
use crate::linalg::Tensor;
use crate::ssm::{LatentObservation, LatentState};
use rand::Rng;

/// Lower bound applied to every variance head output.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Maps an observation to a latent observation and its elementwise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    trunk: Option<DenseNet>,
    mean: DenseNet,
    var: DenseNet,
    input_dim: usize,
}

impl Encoder {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        latent_obs_dim: usize,
        hidden: &NetShape,
        var_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let (trunk, feat) = match hidden.sizes.split_last() {
            None => (None, input_dim),
            Some((&last, _)) => {
                let shapes: Vec<_> = hidden
                    .sizes
                    .iter()
                    .map(|&size| super::LayerShape { size, activation: hidden.activation, layer_norm: hidden.layer_norm })
                    .collect();
                (Some(DenseNet::build(store, "encoder.trunk", input_dim, &shapes, rng)), last)
            }
        };
        let linear = NetShape { sizes: vec![], activation: Activation::Linear, layer_norm: false };
        let mean = DenseNet::mlp(store, "encoder.mean", feat, &linear, latent_obs_dim, Activation::Linear, rng);
        let var = DenseNet::mlp(store, "encoder.var", feat, &linear, latent_obs_dim, var_activation, rng);
        Self { trunk, mean, var, input_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mean_head(&self) -> &DenseNet {
        &self.mean
    }

    pub fn var_head(&self) -> &DenseNet {
        &self.var
    }

    pub fn trunk(&self) -> Option<&DenseNet> {
        self.trunk.as_ref()
    }

    /// `x` must already be zero-filled at masked positions.
    pub fn encode<T: Tensor>(&self, params: &[T], x: &T) -> Result<LatentObservation<T>, NnError> {
        if x.shape() != (self.input_dim, 1) {
            return Err(NnError::DimensionMismatch { expected: self.input_dim, got: x.shape().0 });
        }
        let h = match &self.trunk {
            Some(t) => t.forward(params, x),
            None => x.clone(),
        };
        Ok(LatentObservation {
            y: self.mean.forward(params, &h),
            sigma_obs: self.var.forward(params, &h).clamp_min(VARIANCE_FLOOR),
        })
    }
}

/// Maps a latent belief to an output mean and an elementwise output scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    mean: DenseNet,
    var: DenseNet,
    latent_dim: usize,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        latent_dim: usize,
        output_dim: usize,
        mean_hidden: &NetShape,
        var_hidden: &NetShape,
        mean_activation: Activation,
        var_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let d = latent_dim / 2;
        let mean = DenseNet::mlp(store, "decoder.mean", latent_dim, mean_hidden, output_dim, mean_activation, rng);
        let var = DenseNet::mlp(store, "decoder.var", 3 * d, var_hidden, output_dim, var_activation, rng);
        Self { mean, var, latent_dim }
    }

    pub fn mean_net(&self) -> &DenseNet {
        &self.mean
    }

    pub fn var_net(&self) -> &DenseNet {
        &self.var
    }

    pub fn output_dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// Mean head reads `mu`; variance head reads `[sigma_u; sigma_l; sigma_s]`.
    pub fn decode<T: Tensor>(&self, params: &[T], state: &LatentState<T>) -> Result<(T, T), NnError> {
        if state.mu.shape() != (self.latent_dim, 1) {
            return Err(NnError::DimensionMismatch { expected: self.latent_dim, got: state.mu.shape().0 });
        }
        let o = self.mean.forward(params, &state.mu);
        let cov = T::concat_rows(&[state.sigma_u.clone(), state.sigma_l.clone(), state.sigma_s.clone()]);
        let s = self.var.forward(params, &cov).clamp_min(VARIANCE_FLOOR);
        Ok((o, s))
    }
}
