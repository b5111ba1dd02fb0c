//! Run configuration: flat `key = value` text with `[section]` headers.
//!
//! A key under `[optim]` named `lr` is addressed as `optim.lr` everywhere,
//! including `--set` overrides. Unknown keys are collected and reported
//! together.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::{EpsSchedule, LrSchedule, Method, OptimConfig};
use crate::quantize::SmolConfig;
use crate::sparsify::SearchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Blobs,
    Regression,
    /// Shortest-path labelling on small grids.
    Grid,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(TaskKind::Blobs),
            "regression" => Ok(TaskKind::Regression),
            "grid" => Ok(TaskKind::Grid),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
    pub grid_size: usize,
    pub max_distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    /// Train a template-shared square stack instead of a dense classifier.
    pub shared: bool,
}

/// Optimizer settings as written in a config; see [`OptimSection::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSection {
    pub method: Method,
    pub lr: f64,
    /// `lr / t^power` when positive.
    pub lr_power: f64,
    /// Step decay period; takes precedence over `lr_power` when nonzero.
    pub decay_every: u64,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub bias_correction: bool,
}

impl OptimSection {
    pub fn build(&self, horizon: u64) -> OptimConfig {
        let lr = if self.decay_every > 0 {
            LrSchedule::StepDecay {
                base: self.lr,
                every: self.decay_every,
                factor: self.decay_factor,
            }
        } else if self.lr_power > 0.0 {
            LrSchedule::InvPower {
                base: self.lr,
                power: self.lr_power,
            }
        } else {
            LrSchedule::Constant { base: self.lr }
        };
        OptimConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: EpsSchedule::constant(self.eps),
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            bias_correction: self.bias_correction,
            horizon,
            ..OptimConfig::new(self.method, self.lr)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub steps: usize,
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsifyMethod {
    Cs,
    Imp,
    Iss,
    SequentialCs,
    SupermaskCs,
    SupermaskSs,
}

impl FromStr for SparsifyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(SparsifyMethod::Cs),
            "imp" => Ok(SparsifyMethod::Imp),
            "iss" => Ok(SparsifyMethod::Iss),
            "sequential-cs" => Ok(SparsifyMethod::SequentialCs),
            "supermask-cs" => Ok(SparsifyMethod::SupermaskCs),
            "supermask-ss" => Ok(SparsifyMethod::SupermaskSs),
            other => Err(Error::Config(format!("unknown sparsification method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifySection {
    pub method: SparsifyMethod,
    pub search: SearchConfig,
    /// Pruning rate per round for the magnitude and sequential methods.
    pub tau: f64,
    /// Steps used to retrain the final mask from the rewind point.
    pub retrain_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareSection {
    pub layers: usize,
    pub width: usize,
    pub templates: usize,
    pub activation: Activation,
    pub lambda_r: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TunerKind {
    Grid,
    Random,
    Gld,
    Cgld,
}

impl FromStr for TunerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(TunerKind::Grid),
            "random" => Ok(TunerKind::Random),
            "gld" => Ok(TunerKind::Gld),
            "cgld" => Ok(TunerKind::Cgld),
            other => Err(Error::Config(format!("unknown tuner `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneSection {
    pub kind: TunerKind,
    pub budget: usize,
    /// Points per axis of the log-spaced grid.
    pub grid: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Training steps per trial.
    pub steps: usize,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    /// Preset name: adam, eps-adam, delayed-adam, amsgrad, sgd, avagrad.
    pub optimizer: String,
    pub eps: Option<f64>,
    pub lr: Option<f64>,
    pub steps: u64,
    pub w_init: f64,
    pub log_every: u64,
    pub c: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub sparsify: SparsifySection,
    pub quantize: SmolConfig,
    pub share: ShareSection,
    pub tune: TuneSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskSection {
                kind: TaskKind::Blobs,
                samples: 120,
                features: 8,
                classes: 3,
                separation: 10.0,
                noise: 0.0,
                grid_size: 6,
                max_distance: 4,
            },
            model: ModelSection {
                hidden: vec![16],
                activation: Activation::Relu,
                bias: true,
                shared: false,
            },
            optim: OptimSection {
                method: Method::Sgd,
                lr: 0.1,
                lr_power: 0.0,
                decay_every: 0,
                decay_factor: 0.2,
                beta1: 0.0,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
                momentum: 0.0,
                bias_correction: false,
            },
            train: TrainSection {
                steps: 200,
                log_every: 10,
            },
            sparsify: SparsifySection {
                method: SparsifyMethod::Cs,
                search: SearchConfig {
                    lambda: 1e-3,
                    s_init: 0.05,
                    rounds: 3,
                    steps: 100,
                    rewind_step: 5,
                    ..SearchConfig::default()
                },
                tau: 0.2,
                retrain_steps: 100,
            },
            quantize: SmolConfig::default(),
            share: ShareSection {
                layers: 6,
                width: 8,
                templates: 3,
                activation: Activation::Tanh,
                lambda_r: 1e-2,
                tau: 0.9,
            },
            tune: TuneSection {
                kind: TunerKind::Cgld,
                budget: 60,
                grid: 21,
                lr_min: 1e-4,
                lr_max: 1.0,
                eps_min: 1e-8,
                eps_max: 1.0,
                steps: 30,
                threads: 4,
            },
            synth: SynthSection {
                optimizer: "adam".into(),
                eps: None,
                lr: None,
                steps: 100_000,
                w_init: 0.5,
                log_every: 1000,
                c: 999.0,
                delta: 1.0,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_enum<T: FromStr<Err = Error>>(value: &str) -> Result<T> {
    value.parse()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Splits config text into `(dotted key, value)` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section", n + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Sets one dotted key. Returns `Ok(false)` when the key is unknown.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value;
        let k = key;
        match key {
            "seed" => self.seed = parse(k, v)?,
            "task.kind" => self.task.kind = parse_enum(v)?,
            "task.samples" => self.task.samples = parse(k, v)?,
            "task.features" => self.task.features = parse(k, v)?,
            "task.classes" => self.task.classes = parse(k, v)?,
            "task.separation" => self.task.separation = parse(k, v)?,
            "task.noise" => self.task.noise = parse(k, v)?,
            "task.grid_size" => self.task.grid_size = parse(k, v)?,
            "task.max_distance" => self.task.max_distance = parse(k, v)?,
            "model.hidden" => self.model.hidden = parse_list(k, v)?,
            "model.activation" => self.model.activation = parse_enum(v)?,
            "model.bias" => self.model.bias = parse_bool(k, v)?,
            "model.shared" => self.model.shared = parse_bool(k, v)?,
            "optim.method" => self.optim.method = parse_enum(v)?,
            "optim.lr" => self.optim.lr = parse(k, v)?,
            "optim.lr_power" => self.optim.lr_power = parse(k, v)?,
            "optim.decay_every" => self.optim.decay_every = parse(k, v)?,
            "optim.decay_factor" => self.optim.decay_factor = parse(k, v)?,
            "optim.beta1" => self.optim.beta1 = parse(k, v)?,
            "optim.beta2" => self.optim.beta2 = parse(k, v)?,
            "optim.eps" => self.optim.eps = parse(k, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(k, v)?,
            "optim.momentum" => self.optim.momentum = parse(k, v)?,
            "optim.bias_correction" => self.optim.bias_correction = parse_bool(k, v)?,
            "train.steps" => self.train.steps = parse(k, v)?,
            "train.log_every" => self.train.log_every = parse(k, v)?,
            "sparsify.method" => self.sparsify.method = parse_enum(v)?,
            "sparsify.beta_final" => self.sparsify.search.beta_final = parse(k, v)?,
            "sparsify.lambda" => self.sparsify.search.lambda = parse(k, v)?,
            "sparsify.s_init" => self.sparsify.search.s_init = parse(k, v)?,
            "sparsify.rounds" => self.sparsify.search.rounds = parse(k, v)?,
            "sparsify.steps" => self.sparsify.search.steps = parse(k, v)?,
            "sparsify.rewind_step" => self.sparsify.search.rewind_step = parse(k, v)?,
            "sparsify.finetune_steps" => self.sparsify.search.finetune_steps = parse(k, v)?,
            "sparsify.tau" => self.sparsify.tau = parse(k, v)?,
            "sparsify.retrain_steps" => self.sparsify.retrain_steps = parse(k, v)?,
            "quantize.lambda" => self.quantize.lambda = parse(k, v)?,
            "quantize.p_init" => self.quantize.p_init = parse(k, v)?,
            "quantize.granularity" => self.quantize.granularity = parse_enum(v)?,
            "quantize.samples" => self.quantize.samples = parse(k, v)?,
            "quantize.steps" => self.quantize.steps = parse(k, v)?,
            "quantize.precision_fraction" => self.quantize.precision_fraction = parse(k, v)?,
            "quantize.rounding" => self.quantize.rounding = parse_enum(v)?,
            "quantize.zero_precision" => self.quantize.zero_precision = parse_bool(k, v)?,
            "share.layers" => self.share.layers = parse(k, v)?,
            "share.width" => self.share.width = parse(k, v)?,
            "share.templates" => self.share.templates = parse(k, v)?,
            "share.activation" => self.share.activation = parse_enum(v)?,
            "share.lambda_r" => self.share.lambda_r = parse(k, v)?,
            "share.tau" => self.share.tau = parse(k, v)?,
            "tune.kind" => self.tune.kind = parse_enum(v)?,
            "tune.budget" => self.tune.budget = parse(k, v)?,
            "tune.grid" => self.tune.grid = parse(k, v)?,
            "tune.lr_min" => self.tune.lr_min = parse(k, v)?,
            "tune.lr_max" => self.tune.lr_max = parse(k, v)?,
            "tune.eps_min" => self.tune.eps_min = parse(k, v)?,
            "tune.eps_max" => self.tune.eps_max = parse(k, v)?,
            "tune.steps" => self.tune.steps = parse(k, v)?,
            "tune.threads" => self.tune.threads = parse(k, v)?,
            "synth.optimizer" => self.synth.optimizer = v.to_string(),
            "synth.eps" => self.synth.eps = parse_opt(k, v)?,
            "synth.lr" => self.synth.lr = parse_opt(k, v)?,
            "synth.steps" => self.synth.steps = parse(k, v)?,
            "synth.w_init" => self.synth.w_init = parse(k, v)?,
            "synth.log_every" => self.synth.log_every = parse(k, v)?,
            "synth.c" => self.synth.c = parse(k, v)?,
            "synth.delta" => self.synth.delta = parse(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies pairs in order; every unknown key is reported in one error.
    pub fn apply<I, K, V>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            if !self.set(k.as_ref(), v.as_ref())? {
                unknown.push(k.as_ref().to_string());
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownKeys(unknown))
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(parse_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Canonical JSON echo stored alongside results.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Output directory: explicit path, else `$SLIMNET_OUT`, else `./slimnet-out`.
pub fn output_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("slimnet-out"))
}

pub const OUTPUT_ENV: &str = "SLIMNET_OUT";
