//! Turns a [`DataConfig`] into train/valid/test sets.

use npnet::data::{gen_synthetic, load_amat, load_csv, load_idx, split, Dataset, FeatureScaling, SyntheticSpec};

use crate::config::{DataConfig, DataFormat};
use crate::CliError;

pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Option<Dataset>,
    pub scaling: Option<FeatureScaling>,
}

fn load_source(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Option<Dataset>), CliError> {
    let path = |p: &Option<std::path::PathBuf>| p.clone().expect("checked by check_paths");
    Ok(match cfg.data_format {
        DataFormat::Synthetic => {
            let spec = SyntheticSpec {
                kind: cfg.synthetic_kind,
                n: cfg.synthetic_n,
                input_dim: cfg.synthetic_dim,
                classes: cfg.synthetic_classes,
                noise: cfg.synthetic_noise,
            };
            (
                gen_synthetic(&spec, seed).map_err(|e| CliError::Usage(e.to_string()))?,
                None,
            )
        }
        DataFormat::Idx => {
            let train = load_idx(path(&cfg.train_images), path(&cfg.train_labels))?;
            let test = match (&cfg.test_images, &cfg.test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l)?),
                _ => None,
            };
            (train, test)
        }
        DataFormat::Csv => {
            let train = load_csv(path(&cfg.train_path), cfg.label_column, cfg.has_header)?;
            let test = cfg
                .test_path
                .as_ref()
                .map(|p| load_csv(p, cfg.label_column, cfg.has_header))
                .transpose()?;
            (train, test)
        }
        DataFormat::Amat => {
            let train = load_amat(path(&cfg.train_path))?;
            let test = cfg.test_path.as_ref().map(load_amat).transpose()?;
            (train, test)
        }
    })
}

/// Loads the data, splits the training source with `seed`, and standardizes on the training
/// split when requested.
pub fn load_splits(cfg: &DataConfig, seed: u64) -> Result<Splits, CliError> {
    cfg.check_paths()?;
    let (source, test_file) = load_source(cfg, seed)?;
    let sizes = if cfg.split.is_empty() {
        let valid = source.len() / 5;
        vec![source.len() - valid, valid]
    } else {
        cfg.split.clone()
    };
    if sizes.iter().sum::<usize>() != source.len() {
        return Err(CliError::Usage(format!(
            "config key `split`: sizes {sizes:?} do not add up to the {} available points",
            source.len()
        )));
    }
    let mut parts = split(&source, &sizes, seed)?.into_iter();
    let mut train = parts.next().expect("at least two parts");
    let mut valid = parts.next().expect("at least two parts");
    let mut test = parts.next().or(test_file);
    let standardize = cfg
        .standardize
        .unwrap_or(matches!(cfg.data_format, DataFormat::Csv | DataFormat::Amat));
    let scaling = standardize.then(|| train.fit_scaling());
    if let Some(s) = &scaling {
        train.apply_scaling(s)?;
        valid.apply_scaling(s)?;
        if let Some(t) = &mut test {
            t.apply_scaling(s)?;
        }
    }
    Ok(Splits {
        train,
        valid,
        test,
        scaling,
    })
}
