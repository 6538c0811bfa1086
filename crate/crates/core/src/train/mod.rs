//! Losses, the optimizer, the training and evaluation loops, gain tracing and
//! the runtime benchmark.

mod adam;
mod bench;
mod fit;
mod losses;
mod trace;

pub use adam::{clip_global_norm, global_norm, Adam};
pub use bench::{mirrored_models, runtime_benchmark, BenchRow};
pub use fit::{
    encoder_input, evaluate, predict, score, sequence_pass, steps_for, train_model, EvalMetrics, Prediction,
    SequencePass, TrainConfig, TrainSummary,
};
pub use losses::{
    bernoulli_nll, bernoulli_nll_step, gaussian_nll, gaussian_nll_step, mask_column, masked_column, masked_sse,
    BERNOULLI_CLAMP,
};
pub use trace::{gain_trace, pearson, Correlation, SparsenessBucket, TraceRecord, TraceReport};

use crate::autodiff::AdError;
use crate::data::{Split, TaskSequence};
use crate::ssm::{Cru, SsmError};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] SsmError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("non-positive output scale {value} at step {step}, entry {entry}")]
    Variance { step: usize, entry: usize, value: f64 },
    #[error("non-finite loss in epoch {}, batch {}", .0.epoch, .0.batch)]
    NonFinite(Box<NanDump>),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

/// Snapshot written when a batch produces a non-finite loss or gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NanDump {
    pub epoch: usize,
    pub batch: usize,
    pub sequence_ids: Vec<String>,
    pub losses: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub param_max_abs: Vec<(String, f64)>,
}

impl NanDump {
    fn new(
        epoch: usize,
        batch: usize,
        idx: &[usize],
        seqs: &[TaskSequence],
        results: &[Result<SequencePass, TrainError>],
        cru: &Cru,
    ) -> Self {
        let store = cru.params();
        Self {
            epoch,
            batch,
            sequence_ids: idx.iter().map(|&i| seqs[i].id.clone()).collect(),
            losses: results.iter().map(|r| r.as_ref().ok().map(|p| p.loss)).collect(),
            errors: results.iter().map(|r| r.as_ref().err().map(|e| e.to_string())).collect(),
            param_max_abs: (0..store.len())
                .map(|i| {
                    let id = crate::nn::ParamId(i);
                    (store.name(id).to_string(), store.get(id).max_abs())
                })
                .collect(),
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: Split,
    pub mse: f64,
    pub gaussian_nll: Option<f64>,
    pub bernoulli_nll: Option<f64>,
    pub seconds: f64,
    pub mean_gain_norm: Option<f64>,
}

impl MetricRecord {
    pub fn from_eval(epoch: usize, split: Split, m: &EvalMetrics, seconds: f64) -> Self {
        Self {
            epoch,
            split,
            mse: m.mse,
            gaussian_nll: m.gaussian_nll,
            bernoulli_nll: m.bernoulli_nll,
            seconds,
            mean_gain_norm: m.mean_gain_norm,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let line = serde_json::to_string(self).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")
    }
}

pub const SUMMARY_HEADER: &str = "epoch,split,mse,gaussian_nll,bernoulli_nll,seconds,mean_gain_norm";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary CSV with one row per record.
pub fn write_summary_csv<W: Write>(mut out: W, records: &[MetricRecord]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.split,
            r.mse,
            opt(r.gaussian_nll),
            opt(r.bernoulli_nll),
            r.seconds,
            opt(r.mean_gain_norm)
        )?;
    }
    Ok(())
}
