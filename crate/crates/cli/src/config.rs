//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use diflo::{NegativeMode, SpiralConfig, TaskKind, TrainConfig};
use sha2::{Digest, Sha256};

/// Which objective trains the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Diflo,
    Fm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Diflo => "diflo",
            Method::Fm => "fm",
        })
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diflo" => Ok(Method::Diflo),
            "fm" => Ok(Method::Fm),
            other => bail!("unknown method {other:?} (expected diflo or fm)"),
        }
    }
}

/// Anomaly score fed to calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    Dot,
    /// Negative log-likelihood of the generated endpoint.
    Likelihood,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Dot => "dot",
            ScoreKind::Likelihood => "likelihood",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ScoreKind::Dot),
            "likelihood" => Ok(ScoreKind::Likelihood),
            other => bail!("unknown score {other:?} (expected dot or likelihood)"),
        }
    }
}

/// Floating-point width used for training and scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => bail!("unknown precision {other:?} (expected f32 or f64)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub method: Method,
    pub score: ScoreKind,
    pub precision: Precision,
    /// Training and inference hyperparameters. `train.seed` is the master seed
    /// every random stream of the run derives from.
    pub train: TrainConfig,
    pub spiral: SpiralConfig,
    /// Rows written to the train split by `gen-data`; training itself draws
    /// fresh pairs from the generator unless `train_from_file` is set.
    pub n_train: usize,
    pub n_cal: usize,
    pub n_id_test: usize,
    pub n_ood: usize,
    pub train_from_file: bool,
    /// Hutchinson probes per likelihood evaluation.
    pub n_probes: usize,
    /// Trajectories averaged per regression prediction.
    pub n_predict: usize,
    /// ID pairs used for the transport-energy diagnostic.
    pub n_energy: usize,
    /// Monte Carlo draws of `(x0, t)` per pair in that diagnostic.
    pub energy_draws: usize,
    /// Not part of the hash: the same experiment may be written anywhere.
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults: hidden width 256 and a shortened schedule.
    pub fn defaults(task: TaskKind) -> Self {
        let mut train = TrainConfig {
            hidden: 256,
            seed: 42,
            ..TrainConfig::default()
        };
        match task {
            TaskKind::Regression => train.iterations = 8_000,
            TaskKind::Generation => {
                train.iterations = 6_000;
                train.beta_curve = 0.05;
            }
        }
        Self {
            task,
            method: Method::Diflo,
            score: ScoreKind::Dot,
            precision: Precision::F32,
            train,
            spiral: SpiralConfig::default(),
            n_train: 10_000,
            n_cal: 1_000,
            n_id_test: 2_000,
            n_ood: 2_000,
            train_from_file: false,
            n_probes: 16,
            n_predict: 8,
            n_energy: 500,
            energy_draws: 4,
            out: PathBuf::from("runs/default"),
        }
    }

    /// Full-width settings: 512 hidden units, 20k / 10k iterations.
    pub fn paper_defaults(task: TaskKind) -> Self {
        let mut cfg = Self::defaults(task);
        cfg.apply_paper_scale();
        cfg
    }

    pub fn apply_paper_scale(&mut self) {
        self.train.hidden = 512;
        self.train.iterations = match self.task {
            TaskKind::Regression => 20_000,
            TaskKind::Generation => 10_000,
        };
    }

    /// Hyperparameters actually handed to the trainer: `method = fm` switches
    /// the contrastive terms and negative mining off.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.method == Method::Fm {
            t.lambda_repel = 0.0;
            t.beta_curve = 0.0;
            t.negative_mode = NegativeMode::None;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_train().validate()?;
        self.spiral.validate()?;
        if self.n_cal == 0 || self.n_id_test == 0 {
            bail!("n_cal and n_id_test must be positive");
        }
        if self.n_probes == 0 || self.n_predict == 0 || self.energy_draws == 0 {
            bail!("n_probes, n_predict and energy_draws must be positive");
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let s = &self.spiral;
        vec![
            ("task", self.task.to_string()),
            ("method", self.method.to_string()),
            ("score", self.score.to_string()),
            ("precision", self.precision.to_string()),
            ("seed", t.seed.to_string()),
            ("lambda_repel", t.lambda_repel.to_string()),
            ("beta_curve", t.beta_curve.to_string()),
            ("margin_r", t.margin_r.to_string()),
            ("margin_c", t.margin_c.to_string()),
            ("pgd_steps", t.pgd_steps.to_string()),
            ("pgd_eta", t.pgd_eta.to_string()),
            ("pgd_epsilon", t.pgd_epsilon.to_string()),
            ("negative_mode", t.negative_mode.to_string()),
            ("hidden", t.hidden.to_string()),
            ("depth", t.depth.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("iterations", t.iterations.to_string()),
            ("ode_steps", t.ode_steps.to_string()),
            ("ode_method", t.ode_method.to_string()),
            ("alpha", t.alpha.to_string()),
            ("theta_max", s.theta_max.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("epsilon_buffer", s.epsilon_buffer.to_string()),
            ("grid_resolution", s.grid_resolution.to_string()),
            ("distance_resolution", s.distance_resolution.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_cal", self.n_cal.to_string()),
            ("n_id_test", self.n_id_test.to_string()),
            ("n_ood", self.n_ood.to_string()),
            ("train_from_file", self.train_from_file.to_string()),
            ("n_probes", self.n_probes.to_string()),
            ("n_predict", self.n_predict.to_string()),
            ("n_energy", self.n_energy.to_string()),
            ("energy_draws", self.energy_draws.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    /// Sets one key. Unknown keys are errors so that typos cannot silently
    /// leave a hyperparameter at its default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(key: &str, value: &str) -> Result<V>
        where
            V::Err: fmt::Display,
        {
            value.parse().map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
        }
        let t = &mut self.train;
        let s = &mut self.spiral;
        match key {
            "task" => {
                let task: TaskKind = p(key, value)?;
                if task != self.task {
                    bail!("task is fixed once defaults are chosen; set it first");
                }
            }
            "method" => self.method = p(key, value)?,
            "score" => self.score = p(key, value)?,
            "precision" => self.precision = p(key, value)?,
            "seed" => t.seed = p(key, value)?,
            "lambda_repel" => t.lambda_repel = p(key, value)?,
            "beta_curve" => t.beta_curve = p(key, value)?,
            "margin_r" => t.margin_r = p(key, value)?,
            "margin_c" => t.margin_c = p(key, value)?,
            "pgd_steps" => t.pgd_steps = p(key, value)?,
            "pgd_eta" => t.pgd_eta = p(key, value)?,
            "pgd_epsilon" => t.pgd_epsilon = p(key, value)?,
            "negative_mode" => t.negative_mode = p(key, value)?,
            "hidden" => t.hidden = p(key, value)?,
            "depth" => t.depth = p(key, value)?,
            "lr" => t.lr = p(key, value)?,
            "weight_decay" => t.weight_decay = p(key, value)?,
            "adam_beta1" => t.adam_beta1 = p(key, value)?,
            "adam_beta2" => t.adam_beta2 = p(key, value)?,
            "adam_eps" => t.adam_eps = p(key, value)?,
            "batch_size" => t.batch_size = p(key, value)?,
            "iterations" => t.iterations = p(key, value)?,
            "ode_steps" => t.ode_steps = p(key, value)?,
            "ode_method" => t.ode_method = p(key, value)?,
            "alpha" => t.alpha = p(key, value)?,
            "theta_max" => s.theta_max = p(key, value)?,
            "noise_sigma" => s.noise_sigma = p(key, value)?,
            "epsilon_buffer" => s.epsilon_buffer = p(key, value)?,
            "grid_resolution" => s.grid_resolution = p(key, value)?,
            "distance_resolution" => s.distance_resolution = p(key, value)?,
            "n_train" => self.n_train = p(key, value)?,
            "n_cal" => self.n_cal = p(key, value)?,
            "n_id_test" => self.n_id_test = p(key, value)?,
            "n_ood" => self.n_ood = p(key, value)?,
            "train_from_file" => self.train_from_file = p(key, value)?,
            "n_probes" => self.n_probes = p(key, value)?,
            "n_predict" => self.n_predict = p(key, value)?,
            "n_energy" => self.n_energy = p(key, value)?,
            "energy_draws" => self.energy_draws = p(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// One `key = value` line per field, in a fixed order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parses a config text. `task` picks the default profile (regression when
    /// absent), `paper_scale` switches it to full width before the explicit
    /// keys are applied, so explicit keys always win.
    pub fn parse(text: &str, paper_scale: bool) -> Result<Self> {
        Self::parse_with_task(text, None, paper_scale)
    }

    /// Like [`parse`](Self::parse) with a task override from the command line.
    pub fn parse_with_task(text: &str, task: Option<TaskKind>, paper_scale: bool) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let task = match (task, pairs.get("task")) {
            (Some(t), _) => t,
            (None, Some((_, v))) => v.parse()?,
            (None, None) => TaskKind::Regression,
        };
        let mut cfg = if paper_scale {
            Self::paper_defaults(task)
        } else {
            Self::defaults(task)
        };
        let mut ordered: Vec<_> = pairs.into_iter().collect();
        ordered.sort_by_key(|(_, (line, _))| *line);
        for (key, (line, value)) in ordered {
            if key == "task" {
                continue;
            }
            cfg.set(&key, &value).with_context(|| format!("config line {line}"))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, task: Option<TaskKind>, paper_scale: bool) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_with_task(&text, task, paper_scale)
    }

    /// SHA-256 over the serialized config without the output path.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k == "out" {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// `key -> (line number, value)`; blank lines and `#` comments are skipped.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value, got {raw:?}", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        if out.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
            bail!("config line {}: duplicate key {k:?}", i + 1);
        }
    }
    Ok(out)
}
