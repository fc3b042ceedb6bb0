use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use npnet::train::{config_hash, evaluate, MetricsLog, SavedModel, Trainer};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::load_splits;
use crate::{io_error, CliError};

pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub quiet: bool,
    pub parallel: bool,
}

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const METRICS: &str = "metrics.csv";
pub const EVENTS: &str = "unit_events.csv";
pub const REWINDS: &str = "rewinds.csv";
pub const NORMS: &str = "unit_norms.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const MODEL: &str = "model.bin";
pub const SUMMARY: &str = "summary.json";

struct Sink {
    path: PathBuf,
    file: BufWriter<File>,
}

impl Sink {
    fn create(path: PathBuf, header: &str) -> Result<Self, CliError> {
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut sink = Sink {
            path,
            file: BufWriter::new(file),
        };
        sink.line(header)?;
        Ok(sink)
    }

    fn line(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.file, "{line}").map_err(|e| io_error(&self.path, e))
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.file.flush().map_err(|e| io_error(&self.path, e))
    }
}

/// Append-only CSV outputs, written from the metrics log as it grows.
struct RunFiles {
    metrics: Sink,
    events: Sink,
    rewinds: Sink,
    norms: Option<Sink>,
    written: [usize; 4],
}

impl RunFiles {
    fn create(out: &Path, hidden_layers: usize, norms: bool) -> Result<Self, CliError> {
        Ok(RunFiles {
            metrics: Sink::create(out.join(METRICS), &MetricsLog::epoch_header(hidden_layers))?,
            events: Sink::create(out.join(EVENTS), MetricsLog::EVENT_HEADER)?,
            rewinds: Sink::create(out.join(REWINDS), "epoch,to_epoch")?,
            norms: norms
                .then(|| Sink::create(out.join(NORMS), MetricsLog::NORM_HEADER))
                .transpose()?,
            written: [0; 4],
        })
    }

    fn sync(&mut self, log: &MetricsLog) -> Result<(), CliError> {
        for r in &log.rows[self.written[0]..] {
            self.metrics.line(&MetricsLog::epoch_line(r))?;
        }
        for e in &log.events[self.written[1]..] {
            self.events.line(&MetricsLog::event_line(e))?;
        }
        for r in &log.rewinds[self.written[2]..] {
            self.rewinds.line(&format!("{},{}", r.epoch, r.to_epoch))?;
        }
        if let Some(n) = &mut self.norms {
            for row in &log.norms[self.written[3]..] {
                n.line(&MetricsLog::norm_line(row))?;
            }
            n.flush()?;
        }
        self.written = [log.rows.len(), log.events.len(), log.rewinds.len(), log.norms.len()];
        self.metrics.flush()?;
        self.events.flush()?;
        self.rewinds.flush()
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if args.checkpoint_every == 0 {
        return Err(CliError::Usage("--checkpoint-every must be at least 1".into()));
    }
    let seed = cfg.train.seed;
    let splits = load_splits(&cfg.data, seed)?;
    let resolved = cfg.train.resolve(splits.train.len())?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;

    let mut trainer = match &args.resume {
        Some(path) => Trainer::restore_checkpoint(path, &resolved)?,
        None => Trainer::new(&cfg.train, &splits.train, &splits.valid)?,
    }
    .with_parallel_eval(args.parallel);

    let mut config_json = serde_json::to_value(&resolved).expect("config serializes");
    let data_json = serde_json::to_value(&cfg.data).expect("config serializes");
    if let (Some(c), serde_json::Value::Object(d)) = (config_json.as_object_mut(), data_json) {
        c.extend(d);
    }
    let config_path = args.out.join(CONFIG);
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| io_error(&config_path, e))?;
    let dataset = |d: &npnet::data::Dataset| json!({ "rows": d.len(), "features": d.input_dim(), "fingerprint": d.fingerprint() });
    let out = |name: &str| args.out.join(name).display().to_string();
    write_json(
        &args.out.join(MANIFEST),
        &json!({
            "tool": "npnet",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config_json,
            "config_hash": hex(&config_hash(&resolved)),
            "resumed_from": args.resume.as_ref().map(|p| p.display().to_string()),
            "datasets": {
                "train": dataset(&splits.train),
                "valid": dataset(&splits.valid),
                "test": splits.test.as_ref().map(dataset),
            },
            "outputs": {
                "metrics": out(METRICS),
                "unit_events": out(EVENTS),
                "rewinds": out(REWINDS),
                "unit_norms": resolved.log_unit_norms.then(|| out(NORMS)),
                "checkpoint": out(CHECKPOINT),
                "model": out(MODEL),
                "summary": out(SUMMARY),
            },
        }),
    )?;

    let mut files = RunFiles::create(&args.out, resolved.hidden_layers, resolved.log_unit_norms)?;
    files.sync(trainer.log())?;
    let checkpoint = args.out.join(CHECKPOINT);
    while !trainer.is_done() {
        let row = trainer.run_one_epoch(&splits.train, &splits.valid)?.clone();
        files.sync(trainer.log())?;
        if trainer.epoch() % args.checkpoint_every == 0 || trainer.is_done() {
            trainer.save_checkpoint(&checkpoint)?;
        }
        if !args.quiet {
            eprintln!(
                "epoch {:>5} {:<6} train_err {:.4} valid_err {:.4} dims {:?}",
                row.epoch,
                row.phase.name(),
                row.train_err,
                row.valid_err,
                row.dims
            );
        }
    }

    let model = SavedModel {
        config: *trainer.model_config(),
        params: trainer.params().clone(),
        scaling: splits.scaling.clone(),
    };
    model.save(&args.out.join(MODEL))?;
    let test = splits
        .test
        .as_ref()
        .map(|t| evaluate(&model.params, &model.config, t, args.parallel))
        .transpose()?;
    let summary = json!({
        "epochs": trainer.epoch(),
        "model_epoch": trainer.model_epoch(),
        "hidden_dims": trainer.params().hidden_dims(),
        "valid_err": trainer.valid_err(),
        "test_err": test.map(|t| t.error),
        "test_ce": test.map(|t| t.ce),
    });
    write_json(&args.out.join(SUMMARY), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("json serializes"));
    Ok(())
}
