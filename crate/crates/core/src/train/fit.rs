use super::losses::{bernoulli_nll, bernoulli_nll_step, gaussian_nll, gaussian_nll_step, mask_column, masked_column, masked_sse};
use super::{clip_global_norm, Adam, MetricRecord, NanDump, TrainError};
use crate::autodiff::Tape;
use crate::data::{Split, TaskSequence};
use crate::linalg::{Matrix, Tensor};
use crate::ssm::{Cru, Mode, OutputKind, Step};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm threshold.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub workers: usize,
    /// Off trains the no-filter ablation.
    pub filter: bool,
}

impl TrainConfig {
    pub fn default_lr(mode: Mode) -> f64 {
        match mode {
            Mode::Full => 0.001,
            Mode::Fast => 0.005,
        }
    }

    pub fn new(mode: Mode) -> Self {
        Self { epochs: 100, batch_size: 50, lr: Self::default_lr(mode), grad_clip: None, seed: 0, workers: 1, filter: true }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.workers == 0 {
            return Err(TrainError::Config("batch size and workers must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(TrainError::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder input at step `t`: values with masked entries zeroed, followed by
/// the mask when the model reads it.
pub fn encoder_input(seq: &TaskSequence, t: usize, mask_input: bool) -> Matrix {
    let v = masked_column(&seq.values[t], &seq.mask[t]);
    if mask_input {
        Matrix::from_fn(2 * v.rows(), 1, |i, _| if i < v.rows() { v[(i, 0)] } else { f64::from(u8::from(seq.mask[t][i - v.rows()])) })
    } else {
        v
    }
}

pub fn steps_for<T: Tensor>(like: &T, seq: &TaskSequence, mask_input: bool) -> Vec<Step<T>> {
    (0..seq.len())
        .map(|t| Step {
            time: seq.times[t],
            input: seq.is_input[t].then(|| like.lift(encoder_input(seq, t, mask_input))),
        })
        .collect()
}

/// Per-sequence outcome of a training pass.
#[derive(Debug, Clone)]
pub struct SequencePass {
    pub loss: f64,
    pub points: usize,
    pub sse: f64,
    pub entries: usize,
    pub gain_sum: f64,
    pub gain_count: usize,
    pub grads: Vec<Matrix>,
}

/// Loss (summed over time points) and parameter gradients of one sequence.
pub fn sequence_pass(cru: &Cru, seq: &TaskSequence, filter: bool) -> Result<SequencePass, TrainError> {
    let tape = Tape::new();
    let params: Vec<_> = cru.params().tensors().iter().map(|m| tape.param(m.clone())).collect();
    let bound = cru.bind(&params)?;
    let out = bound.run(&steps_for(&params[0], seq, cru.config().mask_input), filter)?;
    let mut loss = tape.constant(Matrix::scalar(0.0));
    let (mut sse, mut entries, mut gain_sum, mut gain_count) = (0.0, 0, 0.0, 0);
    for (t, step) in out.iter().enumerate() {
        if let Some(g) = step.gain_norm {
            gain_sum += g;
            gain_count += 1;
        }
        let m = &seq.target_mask[t];
        if !m.iter().any(|&b| b) {
            continue;
        }
        let target = tape.constant(masked_column(&seq.targets[t], m));
        let mask = tape.constant(mask_column(m));
        let term = match cru.config().output {
            OutputKind::Gaussian => gaussian_nll_step(&target, &mask, &step.mean, &step.sigma),
            OutputKind::Bernoulli => bernoulli_nll_step(&target, &mask, &step.mean),
        };
        loss = loss.add(&term);
        let o = step.mean.value();
        for j in 0..m.len() {
            if m[j] {
                sse += (seq.targets[t][j] - o[(j, 0)]).powi(2);
                entries += 1;
            }
        }
    }
    let value = loss.item();
    let g = tape.backward(loss)?;
    Ok(SequencePass {
        loss: value,
        points: seq.len(),
        sse,
        entries,
        gain_sum,
        gain_count,
        grads: params.iter().map(|p| g.wrt(p)).collect(),
    })
}

/// Runs `f` on every index, spread over `workers` threads; results keep index order.
pub(crate) fn par_map<R: Send>(n: usize, workers: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Model outputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub gain: Vec<Option<f64>>,
}

pub fn predict(cru: &Cru, seqs: &[TaskSequence], filter: bool, workers: usize) -> Result<Vec<Prediction>, TrainError> {
    par_map(seqs.len(), workers, |i| {
        let params = cru.params().tensors();
        let bound = cru.bind(params)?;
        let out = bound.run(&steps_for(&params[0], &seqs[i], cru.config().mask_input), filter)?;
        Ok(Prediction {
            mean: out.iter().map(|s| s.mean.as_slice().to_vec()).collect(),
            sigma: out.iter().map(|s| s.sigma.as_slice().to_vec()).collect(),
            gain: out.iter().map(|s| s.gain_norm).collect(),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Over the evaluation mask.
    pub mse: f64,
    pub gaussian_nll: Option<f64>,
    pub bernoulli_nll: Option<f64>,
    pub mean_gain_norm: Option<f64>,
    pub points: usize,
    pub entries: usize,
}

/// Scores predictions on each sequence's evaluation steps.
pub fn score(seqs: &[TaskSequence], preds: &[Prediction], output: OutputKind) -> Result<EvalMetrics, TrainError> {
    if seqs.len() != preds.len() {
        return Err(TrainError::Config(format!("{} predictions for {} sequences", preds.len(), seqs.len())));
    }
    let (mut sse, mut entries, mut points, mut nll) = (0.0, 0usize, 0usize, 0.0);
    let (mut gsum, mut gcount) = (0.0, 0usize);
    for (s, p) in seqs.iter().zip(preds) {
        if p.mean.len() != s.len() || p.mean.iter().zip(&s.targets).any(|(a, b)| a.len() != b.len()) {
            return Err(TrainError::Config(format!("prediction for '{}' does not match its targets", s.id)));
        }
        let idx: Vec<usize> = (0..s.len()).filter(|&t| s.eval[t]).collect();
        let pick = |v: &Vec<Vec<f64>>| idx.iter().map(|&t| v[t].clone()).collect::<Vec<_>>();
        let targets = pick(&s.targets);
        let masks: Vec<Vec<bool>> = idx.iter().map(|&t| s.target_mask[t].clone()).collect();
        let (o, sig) = (pick(&p.mean), pick(&p.sigma));
        let (e, n) = masked_sse(&targets, &masks, &o);
        sse += e;
        entries += n;
        points += idx.len();
        nll += idx.len() as f64
            * match output {
                OutputKind::Gaussian => gaussian_nll(&targets, &masks, &o, &sig)?,
                OutputKind::Bernoulli => bernoulli_nll(&targets, &masks, &o),
            };
        for g in p.gain.iter().flatten() {
            gsum += g;
            gcount += 1;
        }
    }
    let nll = if points == 0 { 0.0 } else { nll / points as f64 };
    Ok(EvalMetrics {
        mse: if entries == 0 { 0.0 } else { sse / entries as f64 },
        gaussian_nll: (output == OutputKind::Gaussian).then_some(nll),
        bernoulli_nll: (output == OutputKind::Bernoulli).then_some(nll),
        mean_gain_norm: (gcount > 0).then(|| gsum / gcount as f64),
        points,
        entries,
    })
}

pub fn evaluate(cru: &Cru, seqs: &[TaskSequence], filter: bool, workers: usize) -> Result<EvalMetrics, TrainError> {
    let preds = predict(cru, seqs, filter, workers)?;
    score(seqs, &preds, cru.config().output)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    pub records: Vec<MetricRecord>,
    /// Mean training loss per time point, per epoch.
    pub train_losses: Vec<f64>,
}

/// Mini-batch Adam over shuffled sequences. Keeps the parameters with the
/// lowest validation MSE (the last epoch's when `valid` is empty).
pub fn train_model(
    cru: &mut Cru,
    train: &[TaskSequence],
    valid: &[TaskSequence],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&MetricRecord) -> Result<(), TrainError>,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("no training sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;
    let mut records = Vec::new();
    let mut train_losses = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut points, mut sse, mut entries, mut gsum, mut gcount) = (0.0, 0, 0.0, 0, 0.0, 0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let frozen: &Cru = cru;
            let results = par_map(batch.len(), cfg.workers, |i| sequence_pass(frozen, &train[batch[i]], cfg.filter));
            let bad = results.iter().any(|r| r.as_ref().map_or(true, |p| !p.loss.is_finite()));
            if bad {
                return Err(TrainError::NonFinite(Box::new(NanDump::new(epoch, b, batch, train, &results, frozen))));
            }
            let passes: Vec<SequencePass> = results.into_iter().map(|r| r.expect("checked above")).collect();
            let n: usize = passes.iter().map(|p| p.points).sum();
            let mut grads: Vec<Matrix> = cru.params().tensors().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
            for p in &passes {
                for (g, pg) in grads.iter_mut().zip(&p.grads) {
                    g.add_assign(pg);
                }
                loss_sum += p.loss;
                sse += p.sse;
                entries += p.entries;
                gsum += p.gain_sum;
                gcount += p.gain_count;
            }
            points += n;
            let scale = 1.0 / n.max(1) as f64;
            for g in &mut grads {
                *g = g.scale(scale);
            }
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            if grads.iter().any(|g| !g.is_finite()) {
                let results: Vec<Result<SequencePass, TrainError>> = passes.into_iter().map(Ok).collect();
                return Err(TrainError::NonFinite(Box::new(NanDump::new(epoch, b, batch, train, &results, cru))));
            }
            adam.step(cru.params_mut().tensors_mut(), &grads);
        }
        let seconds = start.elapsed().as_secs_f64();
        let train_loss = loss_sum / points.max(1) as f64;
        train_losses.push(train_loss);
        let output = cru.config().output;
        let rec = MetricRecord {
            epoch,
            split: Split::Train,
            mse: if entries == 0 { 0.0 } else { sse / entries as f64 },
            gaussian_nll: (output == OutputKind::Gaussian).then_some(train_loss),
            bernoulli_nll: (output == OutputKind::Bernoulli).then_some(train_loss),
            seconds,
            mean_gain_norm: (gcount > 0).then(|| gsum / gcount as f64),
        };
        on_record(&rec)?;
        records.push(rec);
        let valid_mse = if valid.is_empty() {
            f64::NEG_INFINITY
        } else {
            let vstart = Instant::now();
            let m = evaluate(cru, valid, cfg.filter, cfg.workers)?;
            let rec = MetricRecord::from_eval(epoch, Split::Valid, &m, vstart.elapsed().as_secs_f64());
            on_record(&rec)?;
            records.push(rec);
            m.mse
        };
        if best.as_ref().is_none_or(|(_, b, _)| valid_mse <= *b) {
            best = Some((epoch, valid_mse, cru.params().tensors().to_vec()));
        }
    }
    let (best_epoch, best_valid_mse) = match best {
        Some((e, m, params)) => {
            cru.params_mut().tensors_mut().clone_from_slice(&params);
            (e, m)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainSummary { best_epoch, best_valid_mse, records, train_losses })
}
