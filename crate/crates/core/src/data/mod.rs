//! Irregularly sampled, masked sequence data: synthetic generators, CSV
//! ingestion, sparsification and task views.

mod csv_io;
mod pendulum;
mod sde;
mod task;

pub use csv_io::{
    load_csv, load_dataset, load_noise_csv, save_csv, save_dataset, save_noise_csv, write_csv, CsvOptions, Dataset,
    DatasetMeta,
};
pub use pendulum::{energy, simulate_pendulum, trajectory, ObservationKind, PendulumConfig, IMAGE_SIDE};
pub use sde::{cholesky, simulate_linear_sde, LinearSdeConfig, LinearSdeModel};
pub use task::{make_task, ExtrapolationSplit, Task, TaskSequence};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence '{0}' has no observed entries left")]
    EmptySequence(String),
    #[error("sequence '{id}': {msg}")]
    Split { id: String, msg: String },
    #[error("missing {0}")]
    Missing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown split '{s}'"))
    }
}

/// One irregularly sampled series. Every per-time vector has the same length
/// within its field; masked-out values are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<f64>>,
    pub target_mask: Vec<Vec<bool>>,
    /// Injected noise level per time, when the generator knows it.
    pub noise: Option<Vec<f64>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }

    /// Keeps only the time points at `keep` (sorted indices).
    pub fn select(&self, keep: &[usize]) -> Sequence {
        let pick = |v: &Vec<Vec<f64>>| keep.iter().map(|&i| v[i].clone()).collect();
        let pick_m = |v: &Vec<Vec<bool>>| keep.iter().map(|&i| v[i].clone()).collect();
        Sequence {
            id: self.id.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            values: pick(&self.values),
            mask: pick_m(&self.mask),
            targets: pick(&self.targets),
            target_mask: pick_m(&self.target_mask),
            noise: self.noise.as_ref().map(|n| keep.iter().map(|&i| n[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub features: Vec<String>,
    pub target_names: Vec<String>,
    pub sequences: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        let (k, r) = (self.features.len(), self.target_names.len());
        for s in &self.sequences {
            let bad = |msg: String| Err(DataError::Split { id: s.id.clone(), msg });
            let n = s.times.len();
            if s.values.len() != n || s.mask.len() != n || s.targets.len() != n || s.target_mask.len() != n {
                return bad("field lengths differ".into());
            }
            if s.noise.as_ref().is_some_and(|v| v.len() != n) {
                return bad("noise annotation length differs".into());
            }
            if let Some(w) = s.times.windows(2).find(|w| !(w[1] > w[0])) {
                return bad(format!("time {} does not increase past {}", w[1], w[0]));
            }
            for t in 0..n {
                if s.values[t].len() != k || s.mask[t].len() != k || s.targets[t].len() != r || s.target_mask[t].len() != r {
                    return bad(format!("row {t} has the wrong width"));
                }
                if s.values[t].iter().zip(&s.mask[t]).any(|(&v, &m)| !m && v != 0.0) {
                    return bad(format!("row {t} has a nonzero masked value"));
                }
            }
        }
        Ok(())
    }
}

/// Random stream for item `index` of a generator seeded with `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Keeps `ceil(keep_time_frac * N)` random time points of every sequence, then
/// masks `round(drop_value_frac * observed)` random observed entries.
pub fn sparsify(batch: &SequenceBatch, keep_time_frac: f64, drop_value_frac: f64, seed: u64) -> Result<SequenceBatch, DataError> {
    for (name, f) in [("keep_time_frac", keep_time_frac), ("drop_value_frac", drop_value_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(DataError::Config(format!("{name} = {f} is outside [0, 1]")));
        }
    }
    let mut out = Vec::with_capacity(batch.len());
    for (i, s) in batch.sequences.iter().enumerate() {
        let mut rng = item_rng(seed, i as u64);
        let n = s.len();
        let keep_n = ((keep_time_frac * n as f64).ceil() as usize).min(n);
        let mut keep = index::sample(&mut rng, n, keep_n).into_vec();
        keep.sort_unstable();
        let mut s = s.select(&keep);
        let observed: Vec<(usize, usize)> = s
            .mask
            .iter()
            .enumerate()
            .flat_map(|(t, row)| row.iter().enumerate().filter(|(_, &m)| m).map(move |(j, _)| (t, j)))
            .collect();
        let drop_n = (drop_value_frac * observed.len() as f64).round() as usize;
        for k in index::sample(&mut rng, observed.len(), drop_n) {
            let (t, j) = observed[k];
            s.mask[t][j] = false;
            s.values[t][j] = 0.0;
        }
        if s.observed_count() == 0 {
            return Err(DataError::EmptySequence(s.id));
        }
        out.push(s);
    }
    Ok(SequenceBatch { features: batch.features.clone(), target_names: batch.target_names.clone(), sequences: out })
}

/// Per-feature `(min, max)` over observed entries; `None` for never-observed features.
pub fn feature_ranges(batch: &SequenceBatch) -> Vec<Option<(f64, f64)>> {
    let mut r: Vec<Option<(f64, f64)>> = vec![None; batch.features.len()];
    for s in &batch.sequences {
        for (row, m) in s.values.iter().zip(&s.mask) {
            for j in 0..row.len() {
                if m[j] {
                    let v = row[j];
                    r[j] = Some(match r[j] {
                        None => (v, v),
                        Some((lo, hi)) => (lo.min(v), hi.max(v)),
                    });
                }
            }
        }
    }
    r
}

/// Min-max scales observed features to `[0, 1]`; a constant feature maps to 0.
pub fn normalize(batch: &mut SequenceBatch) {
    let ranges = feature_ranges(batch);
    for s in &mut batch.sequences {
        for (row, m) in s.values.iter_mut().zip(&s.mask) {
            for j in 0..row.len() {
                row[j] = match (m[j], ranges[j]) {
                    (true, Some((lo, hi))) if hi > lo => (row[j] - lo) / (hi - lo),
                    _ => 0.0,
                };
            }
        }
    }
}
