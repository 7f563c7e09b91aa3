//! Flat key=value experiment configuration with strict unknown-key
//! rejection. Reproducibility over flexibility: every run is fully
//! described by one small file plus the seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::train::{TrainConfig, Variant};

/// Everything a run needs: dataset, model, training and attack settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Dataset spec: `synthetic:C:TRAIN:VAL:Y:X:NOISE`, `fmnist:DIR` or
    /// `cifar10:DIR`.
    pub dataset: String,
    /// Subset of the train split (0 = all).
    pub train_count: usize,
    /// Subset of the validation split (0 = all).
    pub val_count: usize,
    /// Model token list; when absent the reference network is used.
    pub model: Option<String>,
    pub train: TrainConfig,
    pub epsilons: Vec<f64>,
    pub attack_iterations: usize,
    /// Images attacked per epsilon (0 = whole validation subset).
    pub attack_count: usize,
    pub attack_batch: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            train_count: 0,
            val_count: 0,
            model: None,
            train: TrainConfig::default(),
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            attack_iterations: 40,
            attack_count: 0,
            attack_batch: 100,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }

        let mut config = ExperimentConfig::default();
        for (key, value) in entries {
            config.apply(&key, &value)?;
        }
        if config.dataset.is_empty() {
            return Err(Error::Config("missing required key 'dataset'".into()));
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.to_string(),
            "train_count" => self.train_count = parse_num(key, value)?,
            "val_count" => self.val_count = parse_num(key, value)?,
            "model" => self.model = Some(value.to_string()),
            "variant" => self.train.variant = Variant::parse(value)?,
            "tn" => self.train.tn_enabled = parse_bool(key, value)?,
            "lr" => self.train.lr = parse_float(key, value)?,
            "momentum" => self.train.momentum = parse_float(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_float(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "lr_drop_period" => self.train.lr_drop_period = parse_num(key, value)?,
            "lr_drop_factor" => self.train.lr_drop_factor = parse_float(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)? as u64,
            "shift" => self.train.augment.max_shift = parse_num(key, value)?,
            "flip_prob" => self.train.augment.flip_prob = parse_float(key, value)?,
            "stop_at_accuracy" => self.train.stop_at_accuracy = Some(parse_float(key, value)?),
            "epsilons" => self.epsilons = parse_float_list(key, value)?,
            "attack_iterations" => self.attack_iterations = parse_num(key, value)?,
            "attack_count" => self.attack_count = parse_num(key, value)?,
            "attack_batch" => self.attack_batch = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(Error::Config(format!("unknown key '{other}'")));
            }
        }
        self.validate(key)
    }

    fn validate(&self, key: &str) -> Result<()> {
        let t = &self.train;
        let bad = |msg: String| Err(Error::Config(msg));
        match key {
            "lr" if t.lr <= 0.0 => bad(format!("lr must be > 0, got {}", t.lr)),
            "momentum" if !(0.0..1.0).contains(&t.momentum) => {
                bad(format!("momentum must be in [0, 1), got {}", t.momentum))
            }
            "weight_decay" if t.weight_decay < 0.0 => {
                bad(format!("weight_decay must be >= 0, got {}", t.weight_decay))
            }
            "batch_size" if t.batch_size == 0 => bad("batch_size must be >= 1".into()),
            "epochs" if t.epochs == 0 => bad("epochs must be >= 1".into()),
            "lr_drop_period" if t.lr_drop_period == 0 => {
                bad("lr_drop_period must be >= 1".into())
            }
            "flip_prob" if !(0.0..=1.0).contains(&t.augment.flip_prob) => {
                bad(format!("flip_prob must be in [0, 1], got {}", t.augment.flip_prob))
            }
            "epsilons" if self.epsilons.iter().any(|&e| e < 0.0) => {
                bad("epsilons must be >= 0".into())
            }
            "attack_iterations" if self.attack_iterations == 0 => {
                bad("attack_iterations must be >= 1".into())
            }
            "attack_batch" if self.attack_batch == 0 => bad("attack_batch must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

fn parse_num(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("key '{key}': '{value}' is not a non-negative integer")))
}

fn parse_float(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key '{key}': '{value}' is not a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "key '{key}': '{other}' is not a boolean"
        ))),
    }
}

fn parse_float_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let list: Vec<f64> = value
        .split(',')
        .map(|v| parse_float(key, v.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config(format!("key '{key}': empty list")));
    }
    Ok(list)
}

/// Default augmentation used when a config never mentions it.
pub fn default_augment() -> AugmentConfig {
    AugmentConfig::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse("dataset = synthetic:2:40:20:6:6:10\n").unwrap();
        assert_eq!(cfg.dataset, "synthetic:2:40:20:6:6:10");
        assert_eq!(cfg.train.lr, 0.1);
        assert_eq!(cfg.epsilons, vec![1e-1, 1e-2, 1e-3, 1e-4]);
    }

    #[test]
    fn parses_full_config_with_comments() {
        let text = "
# experiment
dataset = fmnist:data/fashion-mnist
train_count = 5000
val_count = 1000
variant = fdt
tn = true
lr = 0.1        # keep the published value
epochs = 15
seed = 3
epsilons = 0.1, 0.0001
out_dir = runs/exp
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.train_count, 5000);
        assert_eq!(cfg.train.variant.name(), "fdt");
        assert!(cfg.train.tn_enabled);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.epsilons, vec![0.1, 0.0001]);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/exp"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("dataset = x\nlearningrate = 0.1\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("learningrate"), "{msg}"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = ExperimentConfig::parse("dataset = a\ndataset = b\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_dataset_rejected() {
        let err = ExperimentConfig::parse("lr = 0.1\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("dataset"), "{msg}"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(ExperimentConfig::parse("dataset = x\nmomentum = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("dataset = x\nlr = 0\n").is_err());
        assert!(ExperimentConfig::parse("dataset = x\nepsilons = -0.1\n").is_err());
        assert!(ExperimentConfig::parse("dataset = x\nbatch_size = 0\n").is_err());
    }
}
