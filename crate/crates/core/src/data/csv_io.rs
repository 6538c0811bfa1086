use super::{normalize, DataError, Sequence, SequenceBatch, Split};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    /// Min-max scale features to `[0, 1]` over this file's observed entries.
    pub normalize: bool,
    /// Multiplies every timestamp.
    pub time_scale: f64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { normalize: false, time_scale: 1.0 }
    }
}

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub features: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: Option<DatasetMeta>,
    pub splits: BTreeMap<Split, SequenceBatch>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> Result<&SequenceBatch, DataError> {
        self.splits.get(&s).ok_or_else(|| DataError::Missing(format!("{s} split")))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |e| DataError::Io(path.display().to_string(), e)
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DataError::Parse { path: path.display().to_string(), line, msg: e.to_string() }
}

/// Writes `values`/`mask` of `batch` (or its targets) in the
/// `series_id,time,<features>,<masks>` layout.
pub fn write_csv<W: Write>(out: W, batch: &SequenceBatch, targets: bool) -> Result<(), csv::Error> {
    let names = if targets { &batch.target_names } else { &batch.features };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["series_id".to_string(), "time".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("mask_{n}")));
    w.write_record(&header)?;
    for s in &batch.sequences {
        let (vals, mask) = if targets { (&s.targets, &s.target_mask) } else { (&s.values, &s.mask) };
        for t in 0..s.len() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(s.id.clone());
            rec.push(s.times[t].to_string());
            rec.extend(vals[t].iter().map(|v| v.to_string()));
            rec.extend(mask[t].iter().map(|&m| if m { "1" } else { "0" }.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, batch: &SequenceBatch, targets: bool) -> Result<(), DataError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_csv(f, batch, targets).map_err(|e| csv_err(path, e))
}

fn parse_f64(path: &Path, line: usize, what: &str, s: &str) -> Result<f64, DataError> {
    s.trim().parse::<f64>().map_err(|_| DataError::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("{what}: '{s}' is not a number"),
    })
}

/// Reads a series file. Targets are a copy of the (possibly normalized)
/// values; pair with a targets file through [`load_dataset`].
pub fn load_csv(path: &Path, opts: CsvOptions) -> Result<SequenceBatch, DataError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let perr = |line: usize, msg: String| DataError::Parse { path: path.display().to_string(), line, msg };
    if header.len() < 4 || header.len() % 2 != 0 || &header[0] != "series_id" || &header[1] != "time" {
        return Err(perr(1, "header must be series_id,time,<features...>,<masks...>".into()));
    }
    let k = (header.len() - 2) / 2;
    let features: Vec<String> = header.iter().skip(2).take(k).map(str::to_string).collect();
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(perr(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = &rec[0];
        let time = parse_f64(path, line, "time", &rec[1])?;
        if !time.is_finite() {
            return Err(perr(line, format!("non-finite time {time}")));
        }
        let time = time * opts.time_scale;
        let mut values = Vec::with_capacity(k);
        let mut mask = Vec::with_capacity(k);
        for j in 0..k {
            let m = match rec[2 + k + j].trim() {
                "1" => true,
                "0" => false,
                other => return Err(perr(line, format!("mask '{}' must be 0 or 1, got '{other}'", &header[2 + k + j]))),
            };
            let v = if m {
                let v = parse_f64(path, line, &features[j], &rec[2 + j])?;
                if !v.is_finite() {
                    return Err(perr(line, format!("non-finite value {v} in observed '{}'", features[j])));
                }
                v
            } else {
                0.0
            };
            values.push(v);
            mask.push(m);
        }
        let start_new = sequences.last().is_none_or(|s| s.id != id);
        if start_new {
            if !seen.insert(id.to_string()) {
                return Err(perr(line, format!("rows of series '{id}' are not contiguous")));
            }
            sequences.push(Sequence {
                id: id.to_string(),
                times: vec![],
                values: vec![],
                mask: vec![],
                targets: vec![],
                target_mask: vec![],
                noise: None,
            });
        }
        let s = sequences.last_mut().expect("pushed above");
        if let Some(&prev) = s.times.last() {
            if time == prev {
                return Err(perr(line, format!("duplicate time {time} in series '{id}'")));
            }
            if time < prev {
                return Err(perr(line, format!("time {time} in series '{id}' is earlier than {prev}")));
            }
        }
        s.times.push(time);
        s.values.push(values);
        s.mask.push(mask);
    }
    let mut batch = SequenceBatch { features: features.clone(), target_names: features, sequences };
    if opts.normalize {
        normalize(&mut batch);
    }
    for s in &mut batch.sequences {
        s.targets = s.values.clone();
        s.target_mask = s.mask.clone();
    }
    Ok(batch)
}

/// Writes `series_id,time,noise`.
pub fn save_noise_csv(path: &Path, batch: &SequenceBatch) -> Result<(), DataError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(f);
    let run = |w: &mut csv::Writer<File>| -> Result<(), csv::Error> {
        w.write_record(["series_id", "time", "noise"])?;
        for s in &batch.sequences {
            let Some(noise) = &s.noise else { continue };
            for (t, u) in s.times.iter().zip(noise) {
                w.write_record([s.id.clone(), t.to_string(), u.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

/// Attaches noise annotations; rows must match the batch time for time.
pub fn load_noise_csv(path: &Path, batch: &mut SequenceBatch) -> Result<(), DataError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(f);
    let perr = |line: usize, msg: String| DataError::Parse { path: path.display().to_string(), line, msg };
    let mut by_id: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 3 {
            return Err(perr(line, "expected series_id,time,noise".into()));
        }
        let u = parse_f64(path, line, "noise", &rec[2])?;
        by_id.entry(rec[0].to_string()).or_default().push(u);
    }
    for s in &mut batch.sequences {
        let v = by_id.remove(&s.id).ok_or_else(|| perr(0, format!("no noise rows for series '{}'", s.id)))?;
        if v.len() != s.len() {
            return Err(perr(0, format!("series '{}' has {} noise rows for {} times", s.id, v.len(), s.len())));
        }
        s.noise = Some(v);
    }
    Ok(())
}

fn merge_targets(path: &Path, batch: &mut SequenceBatch, targets: SequenceBatch) -> Result<(), DataError> {
    let perr = |msg: String| DataError::Parse { path: path.display().to_string(), line: 0, msg };
    if targets.sequences.len() != batch.sequences.len() {
        return Err(perr("targets list a different set of series".into()));
    }
    for (s, t) in batch.sequences.iter_mut().zip(targets.sequences) {
        if s.id != t.id || s.times != t.times {
            return Err(perr(format!("targets of series '{}' do not align with its inputs", s.id)));
        }
        s.targets = t.values;
        s.target_mask = t.mask;
    }
    batch.target_names = targets.features;
    Ok(())
}

/// Loads `{split}.csv` plus the optional `{split}_targets.csv`,
/// `{split}_noise.csv` and `dataset.json` from `dir`.
pub fn load_dataset(dir: &Path, opts: CsvOptions) -> Result<Dataset, DataError> {
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let p = dir.join(format!("{split}.csv"));
        if !p.exists() {
            continue;
        }
        let mut batch = load_csv(&p, opts)?;
        let tp = dir.join(format!("{split}_targets.csv"));
        if tp.exists() {
            let t = load_csv(&tp, CsvOptions { normalize: false, ..opts })?;
            merge_targets(&tp, &mut batch, t)?;
        }
        let np = dir.join(format!("{split}_noise.csv"));
        if np.exists() {
            load_noise_csv(&np, &mut batch)?;
        }
        splits.insert(split, batch);
    }
    if splits.is_empty() {
        return Err(DataError::Missing(format!("train/valid/test csv files in {}", dir.display())));
    }
    let mp = dir.join("dataset.json");
    let meta = if mp.exists() {
        let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
        Some(serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: mp.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    Ok(Dataset { meta, splits })
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (split, batch) in &data.splits {
        save_csv(&dir.join(format!("{split}.csv")), batch, false)?;
        save_csv(&dir.join(format!("{split}_targets.csv")), batch, true)?;
        if batch.sequences.iter().any(|s| s.noise.is_some()) {
            save_noise_csv(&dir.join(format!("{split}_noise.csv")), batch)?;
        }
    }
    if let Some(meta) = &data.meta {
        let p = dir.join("dataset.json");
        let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
        std::fs::write(&p, text + "\n").map_err(io_err(&p))?;
    }
    Ok(())
}
