//! Experiment configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, and dotted prefixes select a
//! section: `synth.tanh_amp = 0.4`, `flow.epochs = 1500`. Lists are
//! comma-separated. Unset keys keep their defaults; unknown or repeated keys
//! are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bayes::{LinearPriors, SamplerConfig};
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::synth::{ReferenceModel, SynthConfig, FALLBACK_PROFILE};

/// A correction method, or the uncorrected judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Constant,
    Transport,
    Bayes,
    Flow,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Raw,
        Method::Constant,
        Method::Transport,
        Method::Bayes,
        Method::Flow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Constant => "constant",
            Method::Transport => "transport",
            Method::Bayes => "bayes",
            Method::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where items come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// CSV to ingest; absent means the synthetic fallback.
    pub path: Option<PathBuf>,
    /// Number of synthetic references to draw.
    pub n_items: usize,
    pub reference: ReferenceModel,
    /// Seed for the synthetic references. Absent means the run seed, so every
    /// seed sees a fresh reference sample.
    pub reference_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            n_items: 1700,
            reference: ReferenceModel::default(),
            reference_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: vec![50, 100, 200, 400, 800, 1500],
            methods: vec![Method::Bayes, Method::Flow],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiseedConfig {
    pub n_seeds: usize,
    /// Use the closed-form least-squares line in place of MCMC.
    pub fast_bayes: bool,
    pub include_flow: bool,
}

impl Default for MultiseedConfig {
    fn default() -> Self {
        Self {
            n_seeds: 50,
            fast_bayes: true,
            include_flow: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub priors: LinearPriors,
    pub sampler: SamplerConfig,
    pub flow: TrainConfig,
    pub methods: Vec<Method>,
    pub anchor_sizes: Vec<usize>,
    pub sweep: SweepConfig,
    pub multiseed: MultiseedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let split = SplitSpec::default();
        Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            anchor_sizes: split.nested_anchor_sizes.clone(),
            split,
            priors: LinearPriors::default(),
            sampler: SamplerConfig::default(),
            flow: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            sweep: SweepConfig::default(),
            multiseed: MultiseedConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.data.reference.validate()?;
        self.priors.validate()?;
        self.sampler.validate()?;
        self.flow.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if let Some(k) = self
            .anchor_sizes
            .iter()
            .find(|k| !self.split.nested_anchor_sizes.contains(k))
        {
            return Err(Error::Config(format!(
                "anchor size {k} is not one of split.nested_anchor_sizes"
            )));
        }
        if let Some(k) = self
            .sweep
            .grid
            .iter()
            .find(|&&k| k > self.split.n_train_pool)
        {
            return Err(Error::Config(format!(
                "sweep size {k} exceeds the training pool of {}",
                self.split.n_train_pool
            )));
        }
        if self.multiseed.n_seeds < 2 {
            return Err(Error::Config("multiseed.n_seeds must be at least 2".into()));
        }
        Ok(())
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let mut cfg = Self::default();
        let mut sections: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (key, value) in &entries {
            match key.split_once('.') {
                Some((section, field)) => sections.entry(section).or_default().push((field, value)),
                None => cfg.set_top_level(key, value)?,
            }
        }
        for (section, fields) in sections {
            cfg.set_section(section, &fields)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// SHA-256 over the canonical JSON of every setting except the seed.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("seed");
        }
        let hash = Sha256::digest(value.to_string().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn set_top_level(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "methods" => {
                self.methods = split_list(value)
                    .map(Method::parse)
                    .collect::<Result<_>>()?
            }
            "anchor_sizes" => self.anchor_sizes = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn set_section(&mut self, section: &str, fields: &[(&str, &str)]) -> Result<()> {
        match section {
            "synth" => self.synth = overlay(section, &self.synth, fields)?,
            "split" => self.split = overlay(section, &self.split, fields)?,
            "priors" => self.priors = overlay(section, &self.priors, fields)?,
            "sampler" => self.sampler = overlay(section, &self.sampler, fields)?,
            "flow" => self.flow = overlay(section, &self.flow, fields)?,
            "multiseed" => self.multiseed = overlay(section, &self.multiseed, fields)?,
            "sweep" => {
                for &(field, value) in fields {
                    match field {
                        "grid" => self.sweep.grid = parse_list("sweep.grid", value)?,
                        "methods" => {
                            self.sweep.methods = split_list(value)
                                .map(Method::parse)
                                .collect::<Result<_>>()?
                        }
                        _ => return Err(Error::Config(format!("unknown key \"sweep.{field}\""))),
                    }
                }
            }
            "data" => self.set_data(fields)?,
            _ => return Err(Error::Config(format!("unknown section {section:?}"))),
        }
        Ok(())
    }

    fn set_data(&mut self, fields: &[(&str, &str)]) -> Result<()> {
        let mut model: Option<&str> = None;
        let (mut mean, mut sd, mut weights) = (None, None, None);
        for &(field, value) in fields {
            let key = format!("data.{field}");
            match field {
                "path" => self.data.path = Some(PathBuf::from(value)),
                "n_items" => self.data.n_items = parse_num(&key, value)?,
                "reference_seed" => self.data.reference_seed = Some(parse_num(&key, value)?),
                "reference" => model = Some(value),
                "reference_mean" => mean = Some(parse_num::<f64>(&key, value)?),
                "reference_sd" => sd = Some(parse_num::<f64>(&key, value)?),
                "profile_weights" => weights = Some(parse_list::<f64>(&key, value)?),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        match model.unwrap_or("profile") {
            "profile" => {
                if mean.is_some() || sd.is_some() {
                    return Err(Error::Config(
                        "data.reference_mean/sd apply to truncated_normal only".into(),
                    ));
                }
                self.data.reference = ReferenceModel::Profile {
                    weights: weights.unwrap_or_else(|| FALLBACK_PROFILE.to_vec()),
                };
            }
            "truncated_normal" => {
                if weights.is_some() {
                    return Err(Error::Config(
                        "data.profile_weights applies to profile only".into(),
                    ));
                }
                let (Some(mean), Some(sd)) = (mean, sd) else {
                    return Err(Error::Config(
                        "truncated_normal needs data.reference_mean and data.reference_sd".into(),
                    ));
                };
                self.data.reference = ReferenceModel::TruncatedNormal { mean, sd };
            }
            other => return Err(Error::Config(format!("unknown reference model {other:?}"))),
        }
        Ok(())
    }
}

fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value",
                i + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some(first) = seen.insert(key.to_string(), i + 1) {
            return Err(Error::Config(format!(
                "line {}: key {key:?} already set on line {first}",
                i + 1
            )));
        }
        entries.push((key.to_string(), value.to_string()));
    }
    Ok(entries)
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    split_list(value).map(|v| parse_num(key, v)).collect()
}

/// JSON value for one setting: booleans, numbers, comma lists of numbers,
/// otherwise a string.
fn scalar(value: &str) -> Value {
    match value {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(n) = value.parse::<u64>() {
        return Value::from(n);
    }
    if let Ok(n) = value.parse::<i64>() {
        return Value::from(n);
    }
    if let Ok(x) = value.parse::<f64>() {
        return Value::from(x);
    }
    if value.contains(',') {
        return Value::Array(split_list(value).map(scalar).collect());
    }
    Value::String(value.to_string())
}

/// Replaces the named fields of `base` and deserializes the result.
fn overlay<T>(section: &str, base: &T, fields: &[(&str, &str)]) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Value::Object(mut map) = serde_json::to_value(base)? else {
        unreachable!("config sections are structs")
    };
    for &(field, value) in fields {
        let Some(slot) = map.get_mut(field) else {
            return Err(Error::Config(format!("unknown key \"{section}.{field}\"")));
        };
        *slot = match (&*slot, scalar(value)) {
            (Value::Array(_), v @ Value::Number(_)) => Value::Array(vec![v]),
            (_, v) => v,
        };
    }
    serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::Config(format!("section {section}: {e}")))
}
