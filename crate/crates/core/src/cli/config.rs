//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{CsvOptions, MissingPolicy, Sinusoid, SplitSpec, SynthSpec, TrendSpec};
use crate::error::{Error, Result};
use crate::model::{BranchKind, Component, ModelConfig};
use crate::objective::LossWeights;
use crate::ssm::ScanMode;
use crate::train::{AdamConfig, TrainConfig};

/// Parsed but not yet interpreted entries. Every key must be consumed by
/// [`KeyValues::take`]; [`KeyValues::finish`] rejects the leftovers.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<KeyValues> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(line, format!("line {line_no}: expected `key = value`")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(config_err("", format!("line {line_no}: empty key")));
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line_no, value.trim().to_string())) {
                return Err(config_err(key, format!("line {line_no}: duplicate key, first set on line {first}")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<KeyValues> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeyValues::parse(&text)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| config_err(key, format!("line {line}: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse::<T>()
                        .map_err(|e| config_err(key, format!("line {line}: cannot parse `{s}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Keys still present that start with `prefix`.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(config_err(&key, format!("line {line}: unknown key"))),
        }
    }
}

fn parse_bool(key: &str, v: Option<String>, default: bool) -> Result<bool> {
    match v.as_deref() {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(config_err(key, format!("expected true or false, got `{other}`"))),
    }
}

fn pair(key: &str, v: Vec<f64>) -> Result<(f64, f64)> {
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(config_err(key, format!("expected two comma-separated numbers, got {}", v.len()))),
    }
}

/// Everything a `train`/`evaluate`/`forecast`/`decompose` run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub csv: CsvOptions,
    pub split: SplitSpec,
    pub train_stride: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub state_dim: usize,
    pub asp_hidden: Option<usize>,
    pub bands: [(f64, f64); 3],
    pub eps_norm: f64,
    pub scan_mode: ScanMode,
    pub use_gcrm: bool,
    pub branch: BranchKind,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

pub const DEFAULT_LOOKBACK: usize = 96;
pub const DEFAULT_HORIZON: usize = 96;
pub const DEFAULT_D_MODEL: usize = 128;
pub const DEFAULT_STATE_DIM: usize = 64;

impl RunConfig {
    /// Parses and validates a run configuration. Relative paths resolve
    /// against `base` (the directory holding the config file).
    pub fn from_text(text: &str, base: &Path) -> Result<RunConfig> {
        let mut kv = KeyValues::parse(text)?;
        let data = kv.take_str("data").ok_or_else(|| config_err("data", "required key is missing"))?;
        let missing = match kv.take_str("missing").as_deref() {
            None | Some("ffill") => MissingPolicy::ForwardFill,
            Some("error") => MissingPolicy::Error,
            Some(other) => return Err(config_err("missing", format!("expected ffill or error, got `{other}`"))),
        };
        let ratios = kv.take_list::<f64>("split")?;
        let bounds = kv.take_list::<usize>("split_bounds")?;
        let split = match (ratios, bounds) {
            (Some(_), Some(_)) => return Err(config_err("split_bounds", "give either split or split_bounds, not both")),
            (Some(r), None) => match r[..] {
                [a, b, c] => SplitSpec::Ratios(a, b, c),
                _ => return Err(config_err("split", "expected three ratios train,val,test")),
            },
            (None, Some(b)) => match b[..] {
                [train_end, val_end] => SplitSpec::Bounds { train_end, val_end },
                _ => return Err(config_err("split_bounds", "expected train_end,val_end")),
            },
            (None, None) => SplitSpec::default(),
        };
        split.validate()?;

        let mut bands = Component::ALL.map(Component::default_band);
        for (i, c) in Component::ALL.iter().enumerate() {
            let key = format!("{c}_band");
            if let Some(v) = kv.take_list::<f64>(&key)? {
                bands[i] = pair(&key, v)?;
            }
        }
        let scan_mode = match kv.take_str("scan").as_deref() {
            None | Some("parallel") => ScanMode::Parallel,
            Some("sequential") => ScanMode::Sequential,
            Some(other) => return Err(config_err("scan", format!("expected parallel or sequential, got `{other}`"))),
        };
        let use_gcrm = parse_bool("gcrm", kv.take_str("gcrm"), true)?;
        let branch = match kv.take_str("branch") {
            None => BranchKind::GtSsm,
            Some(v) => v.parse()?,
        };

        let defaults = TrainConfig::default();
        let adam_defaults = AdamConfig::default();
        let weight_defaults = LossWeights::default();
        let train = TrainConfig {
            epochs: kv.take_or("epochs", defaults.epochs)?,
            batch_size: kv.take_or("batch_size", defaults.batch_size)?,
            adam: AdamConfig {
                lr: kv.take_or("lr", adam_defaults.lr)?,
                beta1: kv.take_or("beta1", adam_defaults.beta1)?,
                beta2: kv.take_or("beta2", adam_defaults.beta2)?,
                eps: kv.take_or("adam_eps", adam_defaults.eps)?,
            },
            clip_norm: kv.take("clip_norm")?,
            weights: LossWeights {
                lambda_rec: kv.take_or("lambda_rec", weight_defaults.lambda_rec)?,
                lambda_orth: kv.take_or("lambda_orth", weight_defaults.lambda_orth)?,
            },
            seed: kv.take_or("seed", defaults.seed)?,
            eval_batch: kv.take_or("eval_batch", defaults.eval_batch)?,
        };

        let cfg = RunConfig {
            data: base.join(data),
            csv: CsvOptions { missing },
            split,
            train_stride: kv.take_or("train_stride", 1)?,
            lookback: kv.take_or("lookback", DEFAULT_LOOKBACK)?,
            horizon: kv.take_or("horizon", DEFAULT_HORIZON)?,
            d_model: kv.take_or("d_model", DEFAULT_D_MODEL)?,
            state_dim: kv.take_or("state_dim", DEFAULT_STATE_DIM)?,
            asp_hidden: kv.take("asp_hidden")?,
            bands,
            eps_norm: kv.take_or("eps_norm", 1e-5)?,
            scan_mode,
            use_gcrm,
            branch,
            train,
            out_dir: base.join(kv.take_str("out_dir").unwrap_or_else(|| "out".into())),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_text(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_stride == 0 {
            return Err(config_err("train_stride", "must be at least 1"));
        }
        self.model_config(1).validate()?;
        self.train.validate()
    }

    pub fn model_config(&self, n_vars: usize) -> ModelConfig {
        let mut c = ModelConfig::new(n_vars, self.lookback, self.horizon, self.d_model, self.state_dim);
        if let Some(a) = self.asp_hidden {
            c.asp_hidden = a;
        }
        c.bands = self.bands;
        c.eps_norm = self.eps_norm;
        c.scan_mode = self.scan_mode;
        c.use_gcrm = self.use_gcrm;
        c.branch = self.branch;
        c
    }

    /// Canonical `key = value` echo stored alongside checkpoints.
    pub fn to_text(&self) -> String {
        let split = match self.split {
            SplitSpec::Ratios(a, b, c) => format!("split = {a},{b},{c}"),
            SplitSpec::Bounds { train_end, val_end } => format!("split_bounds = {train_end},{val_end}"),
        };
        let mut lines = vec![
            format!("data = {}", self.data.display()),
            format!(
                "missing = {}",
                match self.csv.missing {
                    MissingPolicy::ForwardFill => "ffill",
                    MissingPolicy::Error => "error",
                }
            ),
            split,
            format!("train_stride = {}", self.train_stride),
            format!("lookback = {}", self.lookback),
            format!("horizon = {}", self.horizon),
            format!("d_model = {}", self.d_model),
            format!("state_dim = {}", self.state_dim),
        ];
        if let Some(a) = self.asp_hidden {
            lines.push(format!("asp_hidden = {a}"));
        }
        for (c, (lo, hi)) in Component::ALL.iter().zip(self.bands) {
            lines.push(format!("{c}_band = {lo},{hi}"));
        }
        let t = &self.train;
        lines.extend([
            format!("eps_norm = {}", self.eps_norm),
            format!(
                "scan = {}",
                match self.scan_mode {
                    ScanMode::Parallel => "parallel",
                    ScanMode::Sequential => "sequential",
                }
            ),
            format!("gcrm = {}", self.use_gcrm),
            format!(
                "branch = {}",
                match self.branch {
                    BranchKind::GtSsm => "gt_ssm",
                    BranchKind::SharedLinear => "shared_linear",
                }
            ),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("lr = {}", t.adam.lr),
            format!("beta1 = {}", t.adam.beta1),
            format!("beta2 = {}", t.adam.beta2),
            format!("adam_eps = {}", t.adam.eps),
        ]);
        if let Some(c) = t.clip_norm {
            lines.push(format!("clip_norm = {c}"));
        }
        lines.extend([
            format!("lambda_rec = {}", t.weights.lambda_rec),
            format!("lambda_orth = {}", t.weights.lambda_orth),
            format!("seed = {}", t.seed),
            format!("eval_batch = {}", t.eval_batch),
            format!("out_dir = {}", self.out_dir.display()),
        ]);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

fn sinusoids(key: &str, v: &str) -> Result<Vec<Sinusoid>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|term| {
            let nums: Vec<f64> = term
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| config_err(key, format!("cannot parse `{term}`: {e}")))?;
            match nums[..] {
                [amplitude, period] => Ok(Sinusoid { amplitude, period, phase: 0.0 }),
                [amplitude, period, phase] => Ok(Sinusoid { amplitude, period, phase }),
                _ => Err(config_err(key, format!("expected amplitude:period[:phase], got `{term}`"))),
            }
        })
        .collect()
}

fn per_variable(key: &str, v: Option<Vec<f64>>, m: usize) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![0.0; m]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; m]),
        Some(v) if v.len() == m => Ok(v),
        Some(v) => Err(config_err(key, format!("expected 1 or {m} values, got {}", v.len()))),
    }
}

/// Synthetic-series spec. `slope`, `intercept` and `quadratic` take one
/// value for every variable or one per variable; `seasonal` is a list of
/// `amplitude:period[:phase]` terms shared by all variables, and
/// `seasonal.<j>` replaces it for variable `j`.
pub fn synth_spec_from_text(text: &str) -> Result<SynthSpec> {
    let mut kv = KeyValues::parse(text)?;
    let n: usize = kv.take("n")?.ok_or_else(|| config_err("n", "required key is missing"))?;
    let m: usize = kv.take("m")?.ok_or_else(|| config_err("m", "required key is missing"))?;
    if m == 0 {
        return Err(config_err("m", "must be at least 1"));
    }
    let slope = per_variable("slope", kv.take_list("slope")?, m)?;
    let intercept = per_variable("intercept", kv.take_list("intercept")?, m)?;
    let quadratic = per_variable("quadratic", kv.take_list("quadratic")?, m)?;
    let shared = match kv.take_str("seasonal") {
        Some(v) => sinusoids("seasonal", &v)?,
        None => Vec::new(),
    };
    let mut seasonal = vec![shared; m];
    for key in kv.keys_with_prefix("seasonal.") {
        let j: usize = key["seasonal.".len()..]
            .parse()
            .ok()
            .filter(|&j| j < m)
            .ok_or_else(|| config_err(&key, format!("variable index must be below {m}")))?;
        let v = kv.take_str(&key).expect("listed key");
        seasonal[j] = sinusoids(&key, &v)?;
    }
    let spec = SynthSpec {
        n,
        m,
        trend: (0..m)
            .map(|j| TrendSpec {
                slope: slope[j],
                intercept: intercept[j],
                quadratic: quadratic[j],
            })
            .collect(),
        seasonal,
        noise_std: kv.take_or("noise_std", 0.0)?,
        seed: kv.take_or("seed", 0)?,
    };
    kv.finish()?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_defaults() {
        let text = "# tiny run\ndata = series.csv  # relative\nepochs = 3\nsplit = 0.6, 0.2, 0.2\ngcrm = false\n";
        let cfg = RunConfig::from_text(text, Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.data, PathBuf::from("/tmp/run/series.csv"));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.split, SplitSpec::Ratios(0.6, 0.2, 0.2));
        assert!(!cfg.use_gcrm);
        assert_eq!(cfg.lookback, 96);
        assert_eq!(cfg.train.batch_size, 1);
        assert_eq!(cfg.train.adam.lr, 1e-3);
    }

    #[test]
    fn echo_parses_back_to_the_same_config() {
        let text = "data = /d/x.csv\nsplit_bounds = 10,20\nclip_norm = 1.5\nasp_hidden = 7\nbranch = shared_linear\n";
        let cfg = RunConfig::from_text(text, Path::new("/")).unwrap();
        let again = RunConfig::from_text(&cfg.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        let base = Path::new(".");
        let err = RunConfig::from_text("data = a.csv\nepoch = 3\n", base).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "epoch"), "{err}");
        let err = RunConfig::from_text("data = a.csv\nlr = 1\nlr = 2\n", base).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let err = RunConfig::from_text("data = a.csv\nlr = fast\n", base).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "lr"));
        let err = RunConfig::from_text("data = a.csv\nsplit = 0.5,0.1,0.1\n", base).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "split"));
        let err = RunConfig::from_text("data = a.csv\nstate_dim = 3\n", base).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "state_dim"));
        assert!(RunConfig::from_text("epochs = 3\n", base).is_err());
        assert!(RunConfig::from_text("data a.csv\n", base).is_err());
    }

    #[test]
    fn synth_spec_broadcasts_and_overrides() {
        let spec = synth_spec_from_text(
            "n = 50\nm = 3\nslope = 0.1\nintercept = 1,2,3\nseasonal = 1:24, 0.5:168:0.3\nseasonal.2 = 2:12\nnoise_std = 0.1\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(spec.trend[2].intercept, 3.0);
        assert_eq!(spec.trend[1].slope, 0.1);
        assert_eq!(spec.seasonal[0].len(), 2);
        assert_eq!(spec.seasonal[0][1].phase, 0.3);
        assert_eq!(spec.seasonal[2], vec![Sinusoid { amplitude: 2.0, period: 12.0, phase: 0.0 }]);

        let err = synth_spec_from_text("n = 5\nm = 1\nseasonal = 1:1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "period"), "{err}");
        let err = synth_spec_from_text("n = 5\nm = 1\nsesonal = 1:4\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sesonal"));
        assert!(synth_spec_from_text("n = 5\nm = 2\nseasonal.2 = 1:4\n").is_err());
    }
}
