//! JSON run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, DatasetLayout};
use crate::error::{Error, Result};
use crate::pipeline::EvalConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Seed of the validation draw.
    pub split_seed: u64,
    /// Overrides the directory layout implied by the dataset kind.
    pub layout: Option<DatasetLayout>,
}

impl DatasetConfig {
    pub fn layout_for(&self, kind: DatasetKind) -> DatasetLayout {
        self.layout.clone().unwrap_or_else(|| DatasetLayout::for_kind(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub metrics: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            metrics: EvalConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The fully resolved configuration, suitable for echoing next to outputs.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::WorkingSpace;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"max_epochs": 7, "color_space": "hsv"}}"#).unwrap();
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.train.color_space, WorkingSpace::Hsv);
        assert_eq!(cfg.train.lr, 3e-4);
        assert!(cfg.metrics.quantize);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"trian": {}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"train": {"lr": -1}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load("/no/such.json"), Err(Error::FileNotFound(_))));
    }

    #[test]
    fn layout_override() {
        let cfg = RunConfig::from_json(r#"{"dataset": {"layout": {"val_count": 3}}}"#).unwrap();
        assert_eq!(cfg.dataset.layout_for(DatasetKind::Lolv2).val_count, 3);
        assert_eq!(RunConfig::default().dataset.layout_for(DatasetKind::Lolv2).val_count, 188);
    }
}
