//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. `include <path>` splices another
//! file in place, resolved relative to the including file. Later assignments
//! win. Sweep axes are comma-separated lists under `sweep.<axis>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use dskd::composer::CompositionConfig;
use dskd::corpus::SyntheticConfig;
use dskd::distill::DistillConfig;
use dskd::toylm::{AdamConfig, LmTrainConfig, ModelConfig};

use crate::CliError;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TotalLayers,
    TrainableLayers,
    K,
    Kappa,
    Beta,
    Alpha,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::TotalLayers,
        Axis::TrainableLayers,
        Axis::K,
        Axis::Kappa,
        Axis::Beta,
        Axis::Alpha,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Axis::TotalLayers => "total_layers",
            Axis::TrainableLayers => "trainable_layers",
            Axis::K => "k",
            Axis::Kappa => "kappa",
            Axis::Beta => "beta",
            Axis::Alpha => "alpha",
        }
    }

    /// Whether points on this axis need their own sense dictionary.
    pub fn rebuilds_dict(self) -> bool {
        self == Axis::K
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Axis::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| CliError::validation(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab: SyntheticConfig,

    pub num_sequences: usize,
    pub seq_len: usize,
    pub heldout_sequences: usize,
    pub cloze_items: usize,
    pub num_choices: usize,

    pub teacher_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub teacher_steps: usize,
    pub teacher_lr: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,

    pub total_layers: usize,
    pub trainable_layers: usize,
    pub student_steps: usize,
    pub student_lr: f64,
    /// Number of student seeds per mode; seed `i` trains with `seed + i`.
    pub student_seeds: usize,

    pub cap: usize,
    pub k: usize,
    pub m_max: usize,

    pub alpha: f64,
    pub t_kl: f64,
    pub kappa: usize,
    pub beta_p: f64,
    pub beta_n: f64,
    pub gamma: f64,
    pub supervision_fraction: f64,

    pub relations_file: Option<PathBuf>,
    pub base_file: Option<PathBuf>,

    pub sweep: BTreeMap<Axis, Vec<f64>>,
    pub sweep_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab: SyntheticConfig::default(),
            num_sequences: 1200,
            seq_len: 32,
            heldout_sequences: 100,
            cloze_items: 300,
            num_choices: 4,
            teacher_layers: 8,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            teacher_steps: 1000,
            teacher_lr: 2e-3,
            batch_size: 16,
            clip_norm: Some(1.0),
            total_layers: 4,
            trainable_layers: 2,
            student_steps: 300,
            student_lr: 1e-3,
            student_seeds: 1,
            cap: 2000,
            k: 5,
            m_max: 3,
            alpha: 1.0,
            t_kl: 2.0,
            kappa: 5,
            beta_p: 1.0,
            beta_n: 1.0,
            gamma: 1.0,
            supervision_fraction: 1.0,
            relations_file: None,
            base_file: None,
            sweep: BTreeMap::new(),
            sweep_seeds: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::validation(format!("bad value {value:?} for key {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    let list = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<Vec<f64>, _>>()?;
    if list.is_empty() {
        return Err(CliError::validation(format!("sweep axis {key} has no values")));
    }
    Ok(list)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_file(path, 0, &mut BTreeSet::new())?;
        Ok(cfg)
    }

    /// Parses configuration text; `include` paths resolve against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_text(text, base, "<config>", 0, &mut BTreeSet::new())?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path, depth: usize, stack: &mut BTreeSet<PathBuf>) -> Result<(), CliError> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(CliError::validation(format!("include nesting too deep at {}", path.display())));
        }
        let canonical = fs::canonicalize(path)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        if !stack.insert(canonical.clone()) {
            return Err(CliError::validation(format!("include cycle through {}", path.display())));
        }
        let text = fs::read_to_string(&canonical)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let base = canonical.parent().unwrap_or(Path::new(".")).to_path_buf();
        self.apply_text(&text, &base, &path.display().to_string(), depth, stack)?;
        stack.remove(&canonical);
        Ok(())
    }

    fn apply_text(
        &mut self,
        text: &str,
        base: &Path,
        source: &str,
        depth: usize,
        stack: &mut BTreeSet<PathBuf>,
    ) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("include ") {
                self.apply_file(&base.join(rest.trim()), depth + 1, stack)?;
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("{source}:{}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim(), base)
                .map_err(|e| CliError::validation(format!("{source}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Assigns one key. Relative file paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let v = &mut self.vocab;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "num_concepts" => v.num_concepts = parse(key, value)?,
            "antonym_pairs" => v.antonym_pairs = parse(key, value)?,
            "signal_per_concept" => v.signal_per_concept = parse(key, value)?,
            "words_per_concept" => v.words_per_concept = parse(key, value)?,
            "polysemous_words" => v.polysemous_words = parse(key, value)?,
            "negated_words" => v.negated_words = parse(key, value)?,
            "three_token_words" => v.three_token_words = parse(key, value)?,
            "four_token_words" => v.four_token_words = parse(key, value)?,
            "noise_tokens" => v.noise_tokens = parse(key, value)?,
            "vocab_m_max" => v.m_max = parse(key, value)?,
            "signal_ratio" => v.signal_ratio = parse(key, value)?,
            "contrast_prob" => v.contrast_prob = parse(key, value)?,
            "num_sequences" => self.num_sequences = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "heldout_sequences" => self.heldout_sequences = parse(key, value)?,
            "cloze_items" => self.cloze_items = parse(key, value)?,
            "num_choices" => self.num_choices = parse(key, value)?,
            "teacher_layers" => self.teacher_layers = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "teacher_steps" => self.teacher_steps = parse(key, value)?,
            "teacher_lr" => self.teacher_lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "off" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "total_layers" => self.total_layers = parse(key, value)?,
            "trainable_layers" => self.trainable_layers = parse(key, value)?,
            "student_steps" => self.student_steps = parse(key, value)?,
            "student_lr" => self.student_lr = parse(key, value)?,
            "student_seeds" => self.student_seeds = parse(key, value)?,
            "cap" => self.cap = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "m_max" => self.m_max = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "T_kl" => self.t_kl = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "beta" => {
                self.beta_p = parse(key, value)?;
                self.beta_n = self.beta_p;
            }
            "beta_p" => self.beta_p = parse(key, value)?,
            "beta_n" => self.beta_n = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "supervision_fraction" => self.supervision_fraction = parse(key, value)?,
            "relations_file" => self.relations_file = Some(base.join(value)),
            "base_file" => self.base_file = Some(base.join(value)),
            "sweep_seeds" => self.sweep_seeds = parse(key, value)?,
            _ => match key.strip_prefix("sweep.") {
                Some(axis) => {
                    let axis: Axis = axis.parse()?;
                    self.sweep.insert(axis, parse_list(key, value)?);
                }
                None => return Err(CliError::validation(format!("unknown key {key:?}"))),
            },
        }
        Ok(())
    }

    /// Pre-flight checks run before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::validation(m));
        self.vocab.validate().map_err(CliError::validation)?;
        self.teacher_model(0).validate().map_err(CliError::validation)?;
        self.distill(0).validate().map_err(CliError::validation)?;
        self.composition().validate().map_err(CliError::validation)?;
        if self.total_layers > self.teacher_layers {
            return bad(format!(
                "student total_layers {} exceeds teacher_layers {}",
                self.total_layers, self.teacher_layers
            ));
        }
        if self.trainable_layers > self.total_layers {
            return bad(format!(
                "trainable_layers {} exceeds total_layers {}",
                self.trainable_layers, self.total_layers
            ));
        }
        if self.seq_len < 2 || self.num_sequences == 0 || self.heldout_sequences == 0 {
            return bad("need seq_len >= 2 and non-empty training and held-out corpora".into());
        }
        if self.cloze_items == 0 || self.num_choices < 2 {
            return bad("need at least one cloze item with two or more choices".into());
        }
        if self.cap == 0 || self.student_seeds == 0 || self.sweep_seeds == 0 {
            return bad("cap, student_seeds and sweep_seeds must be at least 1".into());
        }
        if self.relations_file.is_some() != self.base_file.is_some() {
            return bad("relations_file and base_file must be given together".into());
        }
        for p in self.relations_file.iter().chain(&self.base_file) {
            if !p.is_file() {
                return bad(format!("file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn axis_values(&self, axis: Axis) -> Result<&[f64], CliError> {
        match self.sweep.get(&axis) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(CliError::validation(format!("config declares no values for sweep.{axis}"))),
        }
    }

    /// Copy of the configuration with one axis set to `value`.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<Self, CliError> {
        let mut c = self.clone();
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::validation(format!("sweep.{axis} value {v} is not a count")))
            }
        };
        match axis {
            Axis::TotalLayers => c.total_layers = as_count(value)?,
            Axis::TrainableLayers => c.trainable_layers = as_count(value)?,
            Axis::K => c.k = as_count(value)?,
            Axis::Kappa => c.kappa = as_count(value)?,
            Axis::Beta => {
                c.beta_p = value;
                c.beta_n = value;
            }
            Axis::Alpha => c.alpha = value,
        }
        Ok(c)
    }

    pub fn teacher_model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.teacher_layers,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            vocab_size: vocab_size.max(1),
            max_seq_len: self.seq_len,
            seed: self.seed,
        }
    }

    pub fn teacher_training(&self) -> LmTrainConfig {
        LmTrainConfig {
            steps: self.teacher_steps,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.teacher_lr,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
        }
    }

    pub fn composition(&self) -> CompositionConfig {
        CompositionConfig {
            m_max: self.m_max,
            k: self.k,
        }
    }

    /// Distillation settings for student seed index `i`.
    pub fn distill(&self, i: usize) -> DistillConfig {
        DistillConfig {
            alpha: self.alpha,
            temperature: self.t_kl,
            kappa: self.kappa,
            beta_p: self.beta_p,
            beta_n: self.beta_n,
            gamma: self.gamma,
            supervision_fraction: self.supervision_fraction,
            seed: self.seed.wrapping_add(i as u64),
            steps: self.student_steps,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.student_lr,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            ..self.vocab.clone()
        }
    }

    /// Whether the corpus, teacher and shared dictionary built under `other`
    /// would equal those built under `self`. Student and sweep keys are ignored.
    pub fn same_shared_inputs(&self, other: &RunConfig) -> bool {
        let mut o = other.clone();
        o.total_layers = self.total_layers;
        o.trainable_layers = self.trainable_layers;
        o.student_steps = self.student_steps;
        o.student_lr = self.student_lr;
        o.student_seeds = self.student_seeds;
        o.alpha = self.alpha;
        o.t_kl = self.t_kl;
        o.kappa = self.kappa;
        o.beta_p = self.beta_p;
        o.beta_n = self.beta_n;
        o.gamma = self.gamma;
        o.supervision_fraction = self.supervision_fraction;
        o.sweep = self.sweep.clone();
        o.sweep_seeds = self.sweep_seeds;
        &o == self
    }
}
