//! Run configuration: one flat TOML document holding the training and data keys.

#[cfg(test)]
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use npnet::data::SyntheticKind;
use npnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Synthetic,
    Idx,
    Csv,
    Amat,
}

/// Where the data comes from and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub data_format: DataFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// CSV or amat file with the training (and, via `split`, validation/test) points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// CSV label column; defaults to the last column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<usize>,
    pub has_header: bool,
    /// Standardize features on the training split; defaults to on for CSV and amat data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    pub synthetic_kind: SyntheticKind,
    pub synthetic_n: usize,
    pub synthetic_dim: usize,
    pub synthetic_classes: usize,
    pub synthetic_noise: f64,
    /// Sizes of the train/valid(/test) parts of the training source. Empty means 80/20
    /// train/valid.
    pub split: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            data_format: DataFormat::Synthetic,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_path: None,
            test_path: None,
            label_column: None,
            has_header: false,
            standardize: None,
            synthetic_kind: SyntheticKind::XorQuadrants,
            synthetic_n: 4000,
            synthetic_dim: 2,
            synthetic_classes: 2,
            synthetic_noise: 0.0,
            split: Vec::new(),
        }
    }
}

pub const DATA_KEYS: &[&str] = &[
    "data_format",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_path",
    "test_path",
    "label_column",
    "has_header",
    "standardize",
    "synthetic_kind",
    "synthetic_n",
    "synthetic_dim",
    "synthetic_classes",
    "synthetic_noise",
    "split",
];

pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "hidden_layers",
    "initial_units",
    "hidden_dims",
    "norm",
    "optimizer",
    "lambda",
    "alpha_phi",
    "alpha_r",
    "alpha",
    "beta_arith",
    "beta_quad",
    "epsilon",
    "batch_size",
    "large_dataset",
    "nu",
    "nu_freq",
    "patience_grow",
    "patience_settle",
    "patience_tune",
    "patience_anneal",
    "anneal_factor",
    "max_annealings",
    "grow_epochs",
    "settle_epochs",
    "max_epochs",
    "stats_momentum",
    "log_unit_norms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| usage(format!("invalid config: {e}")))?;
        let (mut train, mut data) = (toml::Table::new(), toml::Table::new());
        for (k, v) in table {
            if TRAIN_KEYS.contains(&k.as_str()) {
                train.insert(k, v);
            } else if DATA_KEYS.contains(&k.as_str()) {
                data.insert(k, v);
            } else if v.is_table() {
                return Err(usage(format!(
                    "config key `{k}`: sections are not supported; use flat keys"
                )));
            } else {
                return Err(usage(format!("config key `{k}`: unknown key")));
            }
        }
        let train: TrainConfig = typed(train)?;
        let data: DataConfig = typed(data)?;
        train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(RunConfig { train, data })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        // Absolute paths keep the copy saved next to the run outputs valid.
        let dir = std::fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf());
        cfg.data.resolve_paths(&dir);
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        let mut t = toml::Table::try_from(&self.train).expect("train config serializes");
        t.extend(toml::Table::try_from(&self.data).expect("data config serializes"));
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("config serializes")
    }

    #[cfg(test)]
    pub fn keys(&self) -> BTreeSet<String> {
        self.to_table().keys().cloned().collect()
    }
}

/// Deserializes a flat table; on failure, retries key by key so the message names the culprit.
fn typed<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T, CliError> {
    match toml::Value::Table(table.clone()).try_into::<T>() {
        Ok(v) => Ok(v),
        Err(e) => {
            for (k, v) in table {
                let single = toml::Table::from_iter([(k.clone(), v)]);
                if let Err(e) = toml::Value::Table(single).try_into::<T>() {
                    return Err(usage(format!("config key `{k}`: {}", e.message().trim())));
                }
            }
            Err(usage(format!("invalid config: {}", e.message().trim())))
        }
    }
}

impl DataConfig {
    /// Makes relative data paths relative to the directory holding the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.train_images,
            &mut self.train_labels,
            &mut self.test_images,
            &mut self.test_labels,
            &mut self.train_path,
            &mut self.test_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn required<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value.as_deref().ok_or_else(|| {
            usage(format!(
                "config key `{key}`: required for data_format {:?}",
                self.data_format
            ))
        })
    }

    /// Checks that every referenced file exists before anything is loaded.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let mut paths: Vec<(&str, &Path)> = Vec::new();
        match self.data_format {
            DataFormat::Synthetic => {}
            DataFormat::Idx => {
                paths.push(("train_images", self.required(&self.train_images, "train_images")?));
                paths.push(("train_labels", self.required(&self.train_labels, "train_labels")?));
                if self.test_images.is_some() || self.test_labels.is_some() {
                    paths.push(("test_images", self.required(&self.test_images, "test_images")?));
                    paths.push(("test_labels", self.required(&self.test_labels, "test_labels")?));
                }
            }
            DataFormat::Csv | DataFormat::Amat => {
                paths.push(("train_path", self.required(&self.train_path, "train_path")?));
                if let Some(p) = &self.test_path {
                    paths.push(("test_path", p));
                }
            }
        }
        for (key, p) in paths {
            if !p.is_file() {
                return Err(usage(format!("config key `{key}`: no such file {}", p.display())));
            }
        }
        if !(self.split.is_empty() || self.split.len() == 2 || self.split.len() == 3) {
            return Err(usage(
                "config key `split`: expected [train, valid] or [train, valid, test] sizes",
            ));
        }
        Ok(())
    }
}
