use super::{NnError, ParamId, ParamStore};
use crate::linalg::{Matrix, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    EluPlusOne,
    Square,
    Softmax,
}

impl Activation {
    pub fn apply<T: Tensor>(self, x: &T) -> T {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Linear => x.clone(),
            Activation::EluPlusOne => x.elu().add_scalar(1.0),
            Activation::Square => x.square(),
            Activation::Softmax => x.softmax(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "linear" => Activation::Linear,
            "elu-plus-one" | "elu+1" => Activation::EluPlusOne,
            "square" => Activation::Square,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerShape {
    pub size: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

/// Hidden-layer description shared by the encoder and decoder builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub layer_norm: bool,
    pub inputs: usize,
    pub outputs: usize,
}

/// A chain of affine layers, each followed by optional layer normalization
/// of the pre-activation and an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds the chain `input -> shapes[0] -> shapes[1] -> ...`.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        shapes: &[LayerShape],
        rng: &mut R,
    ) -> Self {
        assert!(!shapes.is_empty(), "a dense net needs at least one layer");
        let mut layers = Vec::with_capacity(shapes.len());
        let mut fan_in = input;
        for (i, shape) in shapes.iter().enumerate() {
            let fan_out = shape.size;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
            layers.push(Layer {
                weight: store.add(format!("{name}.{i}.weight"), w),
                bias: store.add(format!("{name}.{i}.bias"), Matrix::zeros(fan_out, 1)),
                activation: shape.activation,
                layer_norm: shape.layer_norm,
                inputs: fan_in,
                outputs: fan_out,
            });
            fan_in = fan_out;
        }
        Self { layers }
    }

    /// Hidden layers of `hidden` units followed by an un-normalized output layer.
    pub fn mlp<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &NetShape,
        output: usize,
        out_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut shapes: Vec<LayerShape> = hidden
            .sizes
            .iter()
            .map(|&size| LayerShape { size, activation: hidden.activation, layer_norm: hidden.layer_norm })
            .collect();
        shapes.push(LayerShape { size: output, activation: out_act, layer_norm: false });
        Self::build(store, name, input, &shapes, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn check_input(&self, x: (usize, usize)) -> Result<(), NnError> {
        if x != (self.input_dim(), 1) {
            return Err(NnError::DimensionMismatch { expected: self.input_dim(), got: x.0 });
        }
        Ok(())
    }

    /// Runs the chain on a column vector; `params` is indexed by [`ParamId`].
    pub fn forward<T: Tensor>(&self, params: &[T], x: &T) -> T {
        let mut h = x.clone();
        for layer in &self.layers {
            let pre = params[layer.weight.0].matmul(&h).add(&params[layer.bias.0]);
            let pre = if layer.layer_norm { layer_norm(&pre) } else { pre };
            h = layer.activation.apply(&pre);
        }
        h
    }
}

/// Zero mean, unit variance over the entries of `x` (no affine part).
pub fn layer_norm<T: Tensor>(x: &T) -> T {
    let centered = x.sub(&x.mean());
    let var = centered.square().mean();
    centered.div(&var.add_scalar(LAYER_NORM_EPS).sqrt())
}
