use super::NnError;
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};

/// Index of a named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

/// On-disk form of one tensor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        assert_eq!(self.tensors[id.0].shape(), value.shape(), "parameter {} changes shape", self.names[id.0]);
        self.tensors[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedTensor { name: n.clone(), rows: t.rows(), cols: t.cols(), data: t.as_slice().to_vec() })
            .collect()
    }

    /// Overwrites every tensor from `named`, which must cover this store
    /// exactly (same names, same shapes).
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), NnError> {
        if named.len() != self.tensors.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for (i, t) in named.iter().enumerate() {
            if t.name != self.names[i] {
                return Err(NnError::Checkpoint(format!("tensor {i} is '{}', expected '{}'", t.name, self.names[i])));
            }
            if (t.rows, t.cols) != self.tensors[i].shape() || t.data.len() != t.rows * t.cols {
                return Err(NnError::Checkpoint(format!(
                    "tensor '{}' has shape {}x{} ({} values), expected {:?}",
                    t.name,
                    t.rows,
                    t.cols,
                    t.data.len(),
                    self.tensors[i].shape()
                )));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(NnError::Checkpoint(format!("tensor '{}' holds non-finite values", t.name)));
            }
            self.tensors[i] = Matrix::from_vec(t.rows, t.cols, t.data.clone());
        }
        Ok(())
    }
}
