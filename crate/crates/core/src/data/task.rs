use super::{item_rng, DataError, SequenceBatch};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// A random half of the time points is fed in; all are predicted.
    Interpolation,
    /// Every time point is fed in and predicted.
    Regression,
    /// The first half is fed in; both halves are predicted, the second is scored.
    Extrapolation,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Interpolation => "interpolation",
            Task::Regression => "regression",
            Task::Extrapolation => "extrapolation",
        })
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "interpolation" => Ok(Task::Interpolation),
            "regression" => Ok(Task::Regression),
            "extrapolation" => Ok(Task::Extrapolation),
            _ => Err(format!("unknown task '{s}' (expected interpolation, regression or extrapolation)")),
        }
    }
}

/// Where the observed part of an extrapolation sequence ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtrapolationSplit {
    /// The first `ceil(N/2)` time points.
    Median,
    /// Time points strictly before the given time.
    Before(f64),
}

/// A sequence prepared for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub id: String,
    pub times: Vec<f64>,
    /// Whether the step is given to the encoder.
    pub is_input: Vec<bool>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<f64>>,
    pub target_mask: Vec<Vec<bool>>,
    /// Steps scored by evaluation.
    pub eval: Vec<bool>,
    pub noise: Option<Vec<f64>>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fraction of unobserved features at step `t`.
    pub fn sparseness(&self, t: usize) -> f64 {
        let m = &self.mask[t];
        m.iter().filter(|&&b| !b).count() as f64 / m.len().max(1) as f64
    }
}

pub fn make_task(batch: &SequenceBatch, task: Task, split: ExtrapolationSplit, seed: u64) -> Result<Vec<TaskSequence>, DataError> {
    let mut out = Vec::with_capacity(batch.len());
    for (i, s) in batch.sequences.iter().enumerate() {
        let n = s.len();
        if n == 0 {
            return Err(DataError::Split { id: s.id.clone(), msg: "empty sequence".into() });
        }
        let (chosen, eval) = match task {
            Task::Regression => (vec![true; n], vec![true; n]),
            Task::Interpolation => {
                let mut rng = item_rng(seed, i as u64);
                let mut c = vec![false; n];
                for k in index::sample(&mut rng, n, n.div_ceil(2)) {
                    c[k] = true;
                }
                (c, vec![true; n])
            }
            Task::Extrapolation => {
                let first: Vec<bool> = match split {
                    ExtrapolationSplit::Median => (0..n).map(|t| t < n.div_ceil(2)).collect(),
                    ExtrapolationSplit::Before(tk) => s.times.iter().map(|&t| t < tk).collect(),
                };
                let k = first.iter().filter(|&&b| b).count();
                if k == 0 || k == n {
                    return Err(DataError::Split {
                        id: s.id.clone(),
                        msg: format!("extrapolation split leaves {k} of {n} points observed"),
                    });
                }
                let eval = first.iter().map(|b| !b).collect();
                (first, eval)
            }
        };
        let is_input = chosen.iter().zip(&s.mask).map(|(&c, m)| c && m.iter().any(|&b| b)).collect();
        out.push(TaskSequence {
            id: s.id.clone(),
            times: s.times.clone(),
            is_input,
            values: s.values.clone(),
            mask: s.mask.clone(),
            targets: s.targets.clone(),
            target_mask: s.target_mask.clone(),
            eval,
            noise: s.noise.clone(),
        });
    }
    Ok(out)
}
