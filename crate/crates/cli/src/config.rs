//! Training configuration file.

use std::path::Path;

use serde::Deserialize;

use mpdc_core::train::{AdamParams, Architecture, MaskAlignment, Optimizer, TrainConfig};

use crate::CliError;

/// JSON layout of a training config. Layers in `masked_layers` are numbered
/// from 1; `k` gives the block count for each of them, or a single value for
/// all of them.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub arch: Vec<usize>,
    #[serde(default)]
    pub masked_layers: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "yes")]
    pub permute: bool,
    #[serde(default)]
    pub align_masks: bool,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn default_optimizer() -> String {
    "sgd".into()
}

fn yes() -> bool {
    true
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        let ks: Vec<usize> = match (self.k.len(), self.masked_layers.len()) {
            (1, n) => vec![self.k[0]; n],
            (a, b) if a == b => self.k.clone(),
            (a, b) => {
                return Err(CliError::Config(format!(
                    "{a} values of k for {b} masked layers"
                )))
            }
        };
        let masked: Vec<(usize, usize)> = self.masked_layers.iter().copied().zip(ks).collect();
        let alignment = if self.align_masks {
            MaskAlignment::Aligned
        } else {
            MaskAlignment::Independent
        };
        Ok(Architecture::new(self.arch.clone(), &masked)?
            .with_permutation(self.permute)
            .with_alignment(alignment))
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let optimizer = match self.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam(AdamParams::default()),
            other => return Err(CliError::Config(format!("unknown optimizer {other:?}"))),
        };
        let mut config = TrainConfig::new(self.batch_size, self.lr, self.epochs, self.seed).with_optimizer(optimizer);
        config.shuffle = self.shuffle;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LENET: &str = r#"{"arch": [784, 300, 100, 10], "masked_layers": [1, 2], "k": [10, 10],
        "batch_size": 50, "lr": 0.001, "epochs": 20, "seed": 1}"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ConfigFile::parse(LENET).unwrap();
        assert_eq!(cfg.optimizer, "sgd");
        assert!(cfg.permute && cfg.shuffle && !cfg.align_masks);
        assert_eq!(cfg.architecture().unwrap(), Architecture::lenet_300_100(10));
        let tc = cfg.train_config().unwrap();
        assert_eq!((tc.batch_size, tc.epochs, tc.master_seed), (50, 20, 1));
    }

    #[test]
    fn single_k_applies_to_all() {
        let cfg = ConfigFile::parse(&LENET.replace("[10, 10]", "[10]")).unwrap();
        assert_eq!(cfg.architecture().unwrap(), Architecture::lenet_300_100(10));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ConfigFile::parse(&LENET.replace("\"seed\"", "\"sead\"")).is_err());
        let cfg = ConfigFile::parse(&LENET.replace("[10, 10]", "[10, 10, 10]")).unwrap();
        assert!(cfg.architecture().is_err());
        let cfg = ConfigFile::parse(&LENET.replace("\"epochs\"", "\"optimizer\": \"rmsprop\", \"epochs\"")).unwrap();
        assert!(cfg.train_config().is_err());
    }
}
