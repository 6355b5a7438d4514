//! Run configuration: `key = value` files, named presets and CLI overrides.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{validate, RawParams, SystemParams};
use crate::train::Precision;
use crate::twin::TwinConfig;

/// Named presets shipped with the crate.
pub const PRESETS: &[(&str, &str)] = &[
    ("mnist-desk", include_str!("../presets/mnist-desk.conf")),
    ("seq-desk", include_str!("../presets/seq-desk.conf")),
    ("mnist-paper", include_str!("../presets/mnist-paper.conf")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Optimized,
    Shuffled,
    Random,
    Twin,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Optimized, Scenario::Shuffled, Scenario::Random, Scenario::Twin];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Optimized => "optimized",
            Scenario::Shuffled => "shuffled",
            Scenario::Random => "random",
            Scenario::Twin => "twin",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?} (optimized, shuffled, random, twin)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// IDX digit images, statically repeated for `repeats` periods.
    Mnist,
    /// Generated frame-labelled sequences, one frame per period.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: String,
    pub dataset: DatasetKind,
    pub scenario: Scenario,
    pub params: RawParams,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,

    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub augment: bool,
    /// Half-width of the uniform initialization of `m0` and `M`.
    pub init_scale: f64,
    pub checkpoint_every: usize,

    pub retrain_iterations: usize,
    pub retrain_batch_size: usize,
    pub retrain_learning_rate: f64,
    /// Candidate half-widths for the random-mask baseline.
    pub random_scales: Vec<f64>,

    /// Periods each image is held for.
    pub repeats: usize,
    pub mnist_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,

    /// Seed of the generated sequence task, independent of `seed` so that
    /// training seeds share one dataset.
    pub data_seed: u64,
    pub seq_length: usize,
    pub seq_classes: usize,
    /// Channels before delta features are appended.
    pub seq_base_channels: usize,
    pub seq_noise: f64,

    pub twin_delta_beta: f64,
    pub twin_phi_drift_amplitude: f64,
    pub twin_phi_drift_period: usize,
    pub twin_noise_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let twin = TwinConfig::default();
        RunConfig {
            task: "custom".into(),
            dataset: DatasetKind::Mnist,
            scenario: Scenario::Optimized,
            params: RawParams::default(),
            seed: 1,
            precision: Precision::F64,
            workers: 0,
            iterations: 1000,
            batch_size: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            augment: false,
            init_scale: 0.1,
            checkpoint_every: 0,
            retrain_iterations: 5000,
            retrain_batch_size: 100,
            retrain_learning_rate: 0.1,
            random_scales: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            repeats: 10,
            mnist_dir: None,
            n_train: 1000,
            n_validation: 200,
            n_test: 1000,
            data_seed: 39,
            seq_length: 50,
            seq_classes: 8,
            seq_base_channels: 13,
            seq_noise: 1.0,
            twin_delta_beta: twin.delta_beta,
            twin_phi_drift_amplitude: twin.phi_drift_amplitude,
            twin_phi_drift_period: 0,
            twin_noise_sigma: twin.noise_sigma,
        }
    }
}

impl RunConfig {
    /// Configuration of a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown task {name:?} (presets: {})", names.join(", ")))
            })?;
        let mut cfg = RunConfig::default();
        for (key, value) in parse_pairs(text, Path::new(name))? {
            cfg.set(&key, &value)?;
        }
        cfg.task = name.into();
        Ok(cfg)
    }

    /// Builds a configuration from an optional file and `(key, value)`
    /// overrides. A `task` naming a preset, in either source, selects the
    /// base configuration; all other keys are then applied in order with
    /// overrides last.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                parse_pairs(&text, path)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        let task = pairs.iter().rev().find(|(k, _)| k == "task").map(|(_, v)| v.clone());
        let mut cfg = match task.as_deref() {
            Some(t) if PRESETS.iter().any(|(n, _)| *n == t) => RunConfig::preset(t)?,
            _ => RunConfig::default(),
        };
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.params;
        match key {
            "task" => self.task = value.into(),
            "dataset" => {
                self.dataset = match value {
                    "mnist" => DatasetKind::Mnist,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => return Err(bad_value(key, value, "mnist or synthetic")),
                }
            }
            "scenario" => self.scenario = value.parse()?,
            "time_constant" => p.time_constant = parse_real(key, value)?,
            "beta" => p.beta = parse_real(key, value)?,
            "delay" => p.delay = parse_real(key, value)?,
            "phi" => p.phi = parse_real(key, value)?,
            "period" => p.period = parse_real(key, value)?,
            "mask_steps" => p.mask_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f64" | "64" => Precision::F64,
                    "f32" | "32" => Precision::F32,
                    _ => return Err(bad_value(key, value, "f64 or f32")),
                }
            }
            "workers" => self.workers = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse_real(key, value)?,
            "momentum" => self.momentum = parse_real(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "init_scale" => self.init_scale = parse_real(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "retrain_iterations" => self.retrain_iterations = parse(key, value)?,
            "retrain_batch_size" => self.retrain_batch_size = parse(key, value)?,
            "retrain_learning_rate" => self.retrain_learning_rate = parse_real(key, value)?,
            "random_scales" => {
                self.random_scales = value
                    .split(',')
                    .map(|v| parse_real(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "repeats" => self.repeats = parse(key, value)?,
            "mnist_dir" => self.mnist_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "n_train" => self.n_train = parse(key, value)?,
            "n_validation" => self.n_validation = parse(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "seq_length" => self.seq_length = parse(key, value)?,
            "seq_classes" => self.seq_classes = parse(key, value)?,
            "seq_base_channels" => self.seq_base_channels = parse(key, value)?,
            "seq_noise" => self.seq_noise = parse_real(key, value)?,
            "twin_delta_beta" => self.twin_delta_beta = parse_real(key, value)?,
            "twin_phi_drift_amplitude" => self.twin_phi_drift_amplitude = parse_real(key, value)?,
            "twin_phi_drift_period" => self.twin_phi_drift_period = parse(key, value)?,
            "twin_noise_sigma" => self.twin_noise_sigma = parse_real(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks invariants that do not depend on loaded data.
    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        validate(self.params)?;
        if !(self.learning_rate > 0.0) || !(self.retrain_learning_rate > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.batch_size == 0 || self.retrain_batch_size == 0 {
            return fail("batch sizes must be at least 1".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.random_scales.is_empty() || self.random_scales.iter().any(|s| !(*s > 0.0)) {
            return fail("random_scales must be a non-empty list of positive values".into());
        }
        if !(self.init_scale >= 0.0) {
            return fail("init_scale must be non-negative".into());
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_validation == 0 {
            return fail("n_train, n_validation and n_test must be at least 1".into());
        }
        if self.dataset == DatasetKind::Synthetic && (self.seq_length == 0 || self.seq_classes == 0) {
            return fail("seq_length and seq_classes must be at least 1".into());
        }
        self.twin().validate(&validate(self.params)?)?;
        Ok(())
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        validate(self.params)
    }

    pub fn twin(&self) -> TwinConfig {
        TwinConfig {
            delta_beta: self.twin_delta_beta,
            phi_drift_amplitude: self.twin_phi_drift_amplitude,
            phi_drift_period: (self.twin_phi_drift_period > 0).then_some(self.twin_phi_drift_period),
            noise_sigma: self.twin_noise_sigma,
            seed: self.seed ^ 0x7477_696E,
        }
    }

    /// Keys accepted by [`set`](Self::set).
    pub fn keys() -> BTreeSet<&'static str> {
        [
            "task", "dataset", "scenario", "time_constant", "beta", "delay", "phi", "period", "mask_steps",
            "seed", "precision", "workers", "iterations", "batch_size", "learning_rate", "momentum",
            "augment", "init_scale", "checkpoint_every", "retrain_iterations", "retrain_batch_size",
            "retrain_learning_rate", "random_scales", "repeats", "mnist_dir", "n_train", "n_validation",
            "n_test", "data_seed", "seq_length", "seq_classes", "seq_base_channels", "seq_noise", "twin_delta_beta",
            "twin_phi_drift_amplitude", "twin_phi_drift_period", "twin_noise_sigma",
        ]
        .into_iter()
        .collect()
    }
}

/// Splits `key = value` lines. `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `key = value`, got {line:?}", origin.display(), lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Turns `--key value` (or `--key=value`) arguments into pairs. Dashes in
/// keys are accepted in place of underscores.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, got {arg:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("missing value for --{key}")))?;
                (key.to_string(), v.clone())
            }
        };
        pairs.push((key.replace('-', "_"), value));
    }
    Ok(pairs)
}

fn bad_value(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key}: cannot parse {value:?} (expected {expected})"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, value, std::any::type_name::<T>()))
}

/// Parses a number, also accepting multiples and fractions of pi such as
/// `pi/4`, `3*pi/2` or `-pi`.
pub fn parse_real(key: &str, value: &str) -> Result<f64> {
    let err = || bad_value(key, value, "a number or an expression like pi/4");
    let s: String = value.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let lower = s.to_ascii_lowercase();
    let (num, den) = match lower.split_once('/') {
        Some((n, d)) => (n, Some(d.parse::<f64>().map_err(|_| err())?)),
        None => (lower.as_str(), None),
    };
    let coef = match num {
        "pi" => 1.0,
        "-pi" => -1.0,
        _ => num
            .strip_suffix("*pi")
            .ok_or_else(err)?
            .parse::<f64>()
            .map_err(|_| err())?,
    };
    Ok(coef * PI / den.unwrap_or(1.0))
}
