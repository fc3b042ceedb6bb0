use std::path::{Path, PathBuf};

use clap::ValueEnum;
use npnet::data::{load_amat, load_csv, load_idx, Dataset};
use npnet::train::{evaluate, SavedModel};

use crate::config::RunConfig;
use crate::data::load_splits;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

pub enum Source {
    Config {
        path: PathBuf,
        split: SplitName,
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: Option<usize>,
        header: bool,
    },
    Amat {
        path: PathBuf,
    },
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file {}", p.display())))
    }
}

fn load(source: Source, model: &SavedModel) -> Result<Dataset, CliError> {
    let mut data = match source {
        Source::Config { path, split, seed } => {
            let cfg = RunConfig::load(&path)?;
            let splits = load_splits(&cfg.data, seed.unwrap_or(cfg.train.seed))?;
            // Already scaled with the training split of this configuration.
            return match split {
                SplitName::Train => Ok(splits.train),
                SplitName::Valid => Ok(splits.valid),
                SplitName::Test => splits
                    .test
                    .ok_or_else(|| CliError::Usage("the configuration defines no test set".into())),
            };
        }
        Source::Idx { images, labels } => {
            require_file(&images)?;
            require_file(&labels)?;
            load_idx(images, labels)?
        }
        Source::Csv {
            path,
            label_column,
            header,
        } => {
            require_file(&path)?;
            load_csv(path, label_column, header)?
        }
        Source::Amat { path } => {
            require_file(&path)?;
            load_amat(path)?
        }
    };
    if let Some(s) = &model.scaling {
        data.apply_scaling(s)?;
    }
    Ok(data)
}

pub fn cmd_eval(model_path: &Path, source: Source, json: bool, parallel: bool) -> Result<(), CliError> {
    require_file(model_path)?;
    let model = SavedModel::load(model_path)?;
    let data = load(source, &model)?;
    if data.input_dim() != model.config.input_dim {
        return Err(CliError::Runtime(format!(
            "data has {} features but the model expects {}",
            data.input_dim(),
            model.config.input_dim
        )));
    }
    let ev = evaluate(&model.params, &model.config, &data, parallel)?;
    if json {
        println!(
            "{}",
            serde_json::json!({ "ce": ev.ce, "error": ev.error, "rows": data.len() })
        );
    } else {
        println!("rows  {}", data.len());
        println!("ce    {:?}", ev.ce);
        println!("error {:?}", ev.error);
    }
    Ok(())
}
