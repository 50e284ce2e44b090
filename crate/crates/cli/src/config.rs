//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! seed = 3
//! rho = 0.9
//! augment.rm_re_choices = 4, 8, 16
//! experiment.variants = ce-only, augment, full
//! ```
//!
//! Every key has a default; unknown and repeated keys are rejected. Relative
//! paths resolve against the directory holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ciatr_core::{AugmentConfig, ConfoundConfig, ExperimentConfig, TrainConfig, Variant};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: ConfoundConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub experiment_seeds: Vec<u64>,
    pub experiment_n_values: Vec<usize>,
    pub experiment_variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: ConfoundConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            experiment_seeds: vec![0, 1, 2, 3, 4],
            experiment_n_values: vec![5, 10, 25],
            experiment_variants: Variant::ALL.to_vec(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "num_classes",
    "n_per_class",
    "height",
    "width",
    "rho",
    "num_ic_buckets",
    "test_per_class",
    "augment.enabled",
    "augment.fixed",
    "augment.ra_max",
    "augment.rm_re_choices",
    "augment.include_prob",
    "augment.sigma_rotate",
    "augment.sigma_scale",
    "augment.sigma_translate",
    "augment.sigma_flip_h",
    "augment.sigma_flip_v",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "margin",
    "lambda_d",
    "augment_on",
    "ld_on",
    "data_dir",
    "out_dir",
    "checkpoint",
    "experiment.seeds",
    "experiment.n_values",
    "experiment.variants",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value for `{key}`: `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("`{key}` must list at least one value")));
    }
    Ok(items)
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        cfg.data_dir = base_dir.join(&cfg.data_dir);
        cfg.out_dir = base_dir.join(&cfg.out_dir);
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value, base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = || base.join(value);
        match key {
            "seed" => self.train.seed = parse_value(key, value)?,
            "num_classes" => self.data.num_classes = parse_value(key, value)?,
            "n_per_class" => self.data.n_per_class = parse_value(key, value)?,
            "height" => self.data.height = parse_value(key, value)?,
            "width" => self.data.width = parse_value(key, value)?,
            "rho" => self.data.rho = parse_value(key, value)?,
            "num_ic_buckets" => self.data.num_ic_buckets = parse_value(key, value)?,
            "test_per_class" => self.data.test_per_class = parse_value(key, value)?,
            "augment.enabled" => self.augment.enabled = parse_value(key, value)?,
            "augment.fixed" => self.augment.fixed = parse_value(key, value)?,
            "augment.ra_max" => self.augment.ra_max = parse_value(key, value)?,
            "augment.rm_re_choices" => self.augment.rm_re_choices = parse_list(key, value)?,
            "augment.include_prob" => self.augment.include_prob = parse_value(key, value)?,
            "augment.sigma_rotate" => self.augment.sigmas.rotate = parse_value(key, value)?,
            "augment.sigma_scale" => self.augment.sigmas.scale = parse_value(key, value)?,
            "augment.sigma_translate" => self.augment.sigmas.translate = parse_value(key, value)?,
            "augment.sigma_flip_h" => self.augment.sigmas.flip_h = parse_value(key, value)?,
            "augment.sigma_flip_v" => self.augment.sigmas.flip_v = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "lr" => self.train.lr = parse_value(key, value)?,
            "momentum" => self.train.momentum = parse_value(key, value)?,
            "margin" => self.train.margin = parse_value(key, value)?,
            "lambda_d" => self.train.lambda_d = parse_value(key, value)?,
            "augment_on" => self.train.augment_on = parse_value(key, value)?,
            "ld_on" => self.train.ld_on = parse_value(key, value)?,
            "data_dir" => self.data_dir = path(),
            "out_dir" => self.out_dir = path(),
            "checkpoint" => self.checkpoint = Some(path()),
            "experiment.seeds" => self.experiment_seeds = parse_list(key, value)?,
            "experiment.n_values" => self.experiment_n_values = parse_list(key, value)?,
            "experiment.variants" => {
                self.experiment_variants = parse_list::<String>(key, value)?
                    .iter()
                    .map(|v| v.parse::<Variant>().map_err(CliError::from))
                    .collect::<Result<_, _>>()?
            }
            _ => unreachable!("key list and match arms agree"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.validate()?;
        self.train.validate()?;
        self.augment.validate(self.data.height, self.data.width)?;
        if self.experiment_n_values.contains(&0) {
            return Err(CliError::Config("invalid value for `experiment.n_values`: must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            data: self.data.clone(),
            train: self.train.clone(),
            augment: self.augment.clone(),
            seeds: self.experiment_seeds.clone(),
            n_values: self.experiment_n_values.clone(),
            variants: self.experiment_variants.clone(),
        }
    }
}
