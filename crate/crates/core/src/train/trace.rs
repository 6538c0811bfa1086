use super::{predict, TrainError};
use crate::data::TaskSequence;
use crate::ssm::Cru;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub series_id: String,
    pub time: f64,
    pub gain_norm: f64,
    pub noise: Option<f64>,
    /// Fraction of unobserved features.
    pub sparseness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Value(f64),
    Undefined(String),
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(*v),
            Correlation::Undefined(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsenessBucket {
    pub sparseness: f64,
    pub mean_gain_norm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub records: Vec<TraceRecord>,
    /// Between gain norm and injected noise level.
    pub correlation: Correlation,
    /// Ascending sparseness.
    pub buckets: Vec<SparsenessBucket>,
}

/// Pearson correlation; undefined when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Correlation::Undefined(format!("need two or more paired values, have {n}"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined("zero variance".into());
    }
    Correlation::Value(sxy / (sxx * syy).sqrt())
}

/// Gain norm at every observed step, aligned with the noise and sparseness
/// annotations.
pub fn gain_trace(cru: &Cru, seqs: &[TaskSequence], workers: usize) -> Result<TraceReport, TrainError> {
    let preds = predict(cru, seqs, true, workers)?;
    let mut records = Vec::new();
    for (s, p) in seqs.iter().zip(&preds) {
        for t in 0..s.len() {
            if let Some(g) = p.gain[t] {
                records.push(TraceRecord {
                    series_id: s.id.clone(),
                    time: s.times[t],
                    gain_norm: g,
                    noise: s.noise.as_ref().map(|n| n[t]),
                    sparseness: s.sparseness(t),
                });
            }
        }
    }
    if records.is_empty() {
        return Err(TrainError::Config("no observed steps to trace".into()));
    }
    let paired: Vec<(f64, f64)> = records.iter().filter_map(|r| r.noise.map(|u| (r.gain_norm, u))).collect();
    let correlation = if paired.is_empty() {
        Correlation::Undefined("no noise annotations".into())
    } else if paired.len() != records.len() {
        return Err(TrainError::Config("noise annotations are missing for some sequences".into()));
    } else {
        let (g, u): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
        pearson(&g, &u)
    };
    let mut buckets: Vec<SparsenessBucket> = Vec::new();
    let mut sorted: Vec<&TraceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sparseness.total_cmp(&b.sparseness));
    for r in sorted {
        match buckets.last_mut() {
            Some(b) if b.sparseness == r.sparseness => {
                b.mean_gain_norm += r.gain_norm;
                b.count += 1;
            }
            _ => buckets.push(SparsenessBucket { sparseness: r.sparseness, mean_gain_norm: r.gain_norm, count: 1 }),
        }
    }
    for b in &mut buckets {
        b.mean_gain_norm /= b.count as f64;
    }
    Ok(TraceReport { records, correlation, buckets })
}
