use super::CliError;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

/// Every accepted config key with its built-in default.
pub const KEYS: &[KeySpec] = &[
    k("preset", "pendulum-regression", "named bundle of defaults, see PRESETS"),
    k("task", "regression", "interpolation | regression | extrapolation"),
    k("mode", "full", "full (matrix exponential) | fast (shared eigenbasis)"),
    k("data", "", "dataset directory; empty generates the preset's data in memory"),
    k("out", "", "output directory; empty picks one under the output root"),
    k("checkpoint", "", "checkpoint file for eval and trace"),
    k("split", "test", "split scored by eval and trace"),
    k("seed", "0", "master seed"),
    k("workers", "1", "threads for per-sequence work"),
    k("epochs", "100", ""),
    k("batch_size", "50", ""),
    k("lr", "auto", "learning rate; auto picks 0.001 (full) or 0.005 (fast)"),
    k("grad_clip", "1.0", "global gradient norm limit, or none"),
    k("filter", "true", "false decodes each observation directly without predict/update"),
    k("latent_obs_dim", "15", "D; the latent state has 2D entries"),
    k("num_basis", "15", "K"),
    k("bandwidth", "3", "band half-width of the basis blocks (full mode)"),
    k("mask_input", "false", "append the observation mask to the encoder input"),
    k("encoder_hidden", "32,32", "comma-separated hidden sizes"),
    k("encoder_activation", "tanh", ""),
    k("encoder_layer_norm", "false", ""),
    k("encoder_var", "elu-plus-one", "activation of the observation variance head"),
    k("decoder_hidden", "32", ""),
    k("decoder_activation", "tanh", ""),
    k("decoder_var_hidden", "", "hidden sizes of the output variance net"),
    k("output", "gaussian", "gaussian | bernoulli"),
    k("target_source", "targets", "targets | inputs (reconstruct the observations)"),
    k("time_scale", "1.0", "multiplies every timestamp on load"),
    k("normalize", "false", "min-max scale features per split on load"),
    k("extrapolation_split", "median", "median, or a time before which points are observed"),
    k("generator", "pendulum", "pendulum | sde-oscillator | sde-random"),
    k("n_train", "2000", ""),
    k("n_valid", "1000", ""),
    k("n_test", "1000", ""),
    k("seq_len", "50", ""),
    k("horizon", "5.0", ""),
    k("gravity_ratio", "4.0", "pendulum g/L"),
    k("noise_max", "1.0", "pendulum noise scale"),
    k("noise_start_max", "0.0", "pendulum noise level of the first frame is uniform in [0, this]"),
    k("walk_step", "0.1", "pendulum noise-level random walk step"),
    k("observation", "angle-pair", "angle-pair | image16"),
    k("sde_latent", "4", "latent size of sde-random"),
    k("sde_features", "5", "feature count of sde-random"),
    k("sde_omega", "2.0", "sde-oscillator angular frequency"),
    k("sde_damping", "0.1", "sde-oscillator damping"),
    k("sde_q", "0.1", "sde-oscillator diffusion"),
    k("sde_r", "0.05", "sde-oscillator observation variance"),
    k("keep_time_frac", "1.0", "fraction of time points kept per sequence"),
    k("drop_value_frac", "0.0", "fraction of the remaining observed entries masked"),
    k("dims", "32,64,128", "latent sizes timed by bench"),
    k("repeats", "5", "timing samples per size"),
];

/// Named bundles of overrides applied on top of the built-in defaults.
pub const PRESETS: &[(&str, &[(&str, &str)])] = &[
    ("pendulum-regression", &[("observation", "image16")]),
    (
        "pendulum-interpolation",
        &[
            ("task", "interpolation"),
            ("observation", "image16"),
            ("output", "bernoulli"),
            ("target_source", "inputs"),
        ],
    ),
    (
        "pendulum-desk",
        &[
            ("mode", "fast"),
            ("observation", "image16"),
            ("n_train", "500"),
            ("n_valid", "100"),
            ("n_test", "200"),
            ("seq_len", "30"),
            ("epochs", "50"),
            ("latent_obs_dim", "6"),
            ("num_basis", "10"),
            ("batch_size", "10"),
        ],
    ),
    (
        "sde-interpolation",
        &[
            ("generator", "sde-random"),
            ("task", "interpolation"),
            ("n_train", "400"),
            ("n_valid", "100"),
            ("n_test", "100"),
            ("horizon", "10.0"),
            ("keep_time_frac", "0.5"),
            ("drop_value_frac", "0.2"),
            ("mask_input", "true"),
            ("epochs", "30"),
            ("latent_obs_dim", "4"),
            ("num_basis", "5"),
        ],
    ),
    (
        "sde-extrapolation",
        &[
            ("generator", "sde-oscillator"),
            ("task", "extrapolation"),
            ("n_train", "200"),
            ("n_valid", "50"),
            ("n_test", "50"),
            ("horizon", "10.0"),
            ("epochs", "30"),
            ("latent_obs_dim", "1"),
            ("num_basis", "1"),
            ("encoder_hidden", ""),
            ("decoder_hidden", ""),
        ],
    ),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Default,
    Preset(String),
    File { path: String, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::Preset(p) => write!(f, "preset {p}"),
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

/// One problem found while reading a config file or flag list.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: String,
    pub msg: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

/// `(key, value, line)` triples of a `key = value` file. Blank lines and
/// lines starting with `#` are skipped; every bad line is reported.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String, usize)>, Vec<ConfigIssue>> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((key, value)) = t.split_once('=') else {
            issues.push(ConfigIssue { line: Some(line), key: t.to_string(), msg: format!("expected 'key = value', got '{t}'") });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key_spec(&key).is_none() {
            issues.push(ConfigIssue { line: Some(line), key: key.clone(), msg: format!("unknown key '{key}'") });
            continue;
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            issues.push(ConfigIssue { line: Some(line), key: key.clone(), msg: format!("duplicate key '{key}' (first set on line {first})") });
            continue;
        }
        out.push((key, value, line));
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(issues)
    }
}

/// Resolved key-value configuration: defaults, then preset, then file, then flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Origin)>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, CliError> {
        let mut flag_issues = Vec::new();
        for (key, _) in flags {
            if key_spec(key).is_none() {
                flag_issues.push(ConfigIssue { line: None, key: key.clone(), msg: format!("unknown key '{key}'") });
            }
        }
        if !flag_issues.is_empty() {
            return Err(CliError::Config { path: "command line".into(), issues: flag_issues });
        }
        let file_entries = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.display().to_string(), e))?;
                parse_config_text(&text)
                    .map_err(|issues| CliError::Config { path: p.display().to_string(), issues })?
                    .into_iter()
                    .map(|(k, v, l)| (k, v, Origin::File { path: p.display().to_string(), line: l }))
                    .collect()
            }
            None => Vec::new(),
        };
        let preset = flags
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| (v.clone(), Origin::Flag))
            .or_else(|| file_entries.iter().find(|(k, _, _)| k == "preset").map(|(_, v, o)| (v.clone(), o.clone())))
            .unwrap_or_else(|| (key_spec("preset").expect("known").default.to_string(), Origin::Default));
        let Some((_, overrides)) = PRESETS.iter().find(|(n, _)| *n == preset.0) else {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            return Err(CliError::Value {
                key: "preset".into(),
                origin: preset.1.to_string(),
                msg: format!("unknown preset '{}' (known: {})", preset.0, names.join(", ")),
            });
        };
        let mut values: BTreeMap<&'static str, (String, Origin)> =
            KEYS.iter().map(|s| (s.key, (s.default.to_string(), Origin::Default))).collect();
        for (key, v) in overrides.iter() {
            let spec = key_spec(key).expect("preset keys are known");
            values.insert(spec.key, (v.to_string(), Origin::Preset(preset.0.clone())));
        }
        for (key, v, o) in file_entries {
            values.insert(key_spec(&key).expect("checked").key, (v, o));
        }
        for (key, v) in flags {
            values.insert(key_spec(key).expect("checked").key, (v.clone(), Origin::Flag));
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.entry(key).0
    }

    pub fn origin(&self, key: &str) -> &Origin {
        &self.entry(key).1
    }

    fn entry(&self, key: &str) -> &(String, Origin) {
        self.values.get(key).unwrap_or_else(|| panic!("config key '{key}' is not registered"))
    }

    fn bad(&self, key: &str, msg: String) -> CliError {
        CliError::Value { key: key.into(), origin: self.origin(key).to_string(), msg }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>().map_err(|e| self.bad(key, format!("cannot parse '{raw}': {e}")))
    }

    /// Empty string maps to `None`.
    pub fn path(&self, key: &str) -> Option<&Path> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| Path::new(raw))
    }

    /// Comma-separated list; empty string is the empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|e| self.bad(key, format!("cannot parse '{s}': {e}"))))
            .collect()
    }

    /// A float, or `None` for `none`.
    pub fn optional_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            "none" | "" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn probability(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.get(key)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.bad(key, format!("{v} is outside [0, 1]")));
        }
        Ok(v)
    }

    pub fn positive(&self, key: &str) -> Result<usize, CliError> {
        let v: usize = self.get(key)?;
        if v == 0 {
            return Err(self.bad(key, "must be positive".into()));
        }
        Ok(v)
    }

    pub fn set(&mut self, key: &str, value: String) {
        let spec = key_spec(key).unwrap_or_else(|| panic!("config key '{key}' is not registered"));
        self.values.insert(spec.key, (value, Origin::Flag));
    }

    /// Every key with its resolved value, loadable again with `--config`.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration; each value is followed by where it came from\n");
        for spec in KEYS {
            let (v, o) = self.entry(spec.key);
            s.push_str(&format!("{} = {}\n", spec.key, v));
            s.push_str(&format!("#   ^ {o}\n"));
        }
        s
    }
}
