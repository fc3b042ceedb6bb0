use ndarray::Axis;
use rand::Rng;
use rayon::prelude::*;

use super::batch::Batch;
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{backward, forward, loss_sum_and_errors, Mode, ModelConfig, NetworkParams};
use crate::optim::{adarad_step, adaradm_step, rmsprop_step, sgd_step, OptimizerState, StepReport, UnitEventKind};
use crate::topology::{UnitLedger, UnitState};

use super::metrics::UnitEventRow;

/// Rows per forward pass in [`evaluate`]. Fixed so that results do not depend on the threading.
pub const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub ce: f64,
    /// Fraction of misclassified points.
    pub error: f64,
}

/// Eval-mode loss and error over `data`, split into chunks of [`EVAL_CHUNK`] rows. With
/// `parallel`, chunks run on the rayon pool; the sums are still formed in chunk order, so the
/// result is bit-identical either way.
pub fn evaluate(params: &NetworkParams, config: &ModelConfig, data: &Dataset, parallel: bool) -> Result<Evaluation> {
    let n = data.len();
    let features = data.features();
    let chunk = |k: usize| -> Result<(f64, usize)> {
        let lo = k * EVAL_CHUNK;
        let hi = (lo + EVAL_CHUNK).min(n);
        let x = features.slice_axis(Axis(0), (lo..hi).into());
        let cache = forward(params, config, x, Mode::Eval)?;
        loss_sum_and_errors(&cache, &data.labels()[lo..hi])
    };
    let chunks = n.div_ceil(EVAL_CHUNK);
    let parts: Vec<Result<(f64, usize)>> = if parallel {
        (0..chunks).into_par_iter().map(chunk).collect()
    } else {
        (0..chunks).map(chunk).collect()
    };
    let (mut ce, mut errors) = (0.0, 0usize);
    for p in parts {
        let (c, e) = p?;
        ce += c;
        errors += e;
    }
    let n = n.max(1) as f64;
    Ok(Evaluation {
        ce: ce / n,
        error: errors as f64 / n,
    })
}

/// How each mini-batch gradient is turned into a parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// AdaRad or AdaRad-M, according to the optimizer state.
    Radial(crate::optim::AdaRadHyper),
    /// SGD with fan-in shrinkage `alpha · lambda · batch_fraction`.
    Sgd {
        alpha: f64,
        lambda: f64,
    },
    RmsProp {
        alpha: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochReport {
    /// Train-mode loss and error, accumulated over the batches before each update.
    pub train_ce: f64,
    pub train_err: f64,
    pub events: Vec<UnitEventRow>,
    pub removed: usize,
    pub added: usize,
}

/// Mutable state touched by an epoch.
pub struct EpochState<'a, R: Rng + ?Sized> {
    pub params: &'a mut NetworkParams,
    pub optimizer: &'a mut OptimizerState,
    pub ledger: &'a mut UnitLedger,
    /// Optimizer step counter, shared across epochs.
    pub step: &'a mut u64,
    pub rng: &'a mut R,
}

fn record(report: &StepReport, dims_before: &[usize], ledger: &mut UnitLedger, out: &mut EpochReport) {
    let mut dims = dims_before.to_vec();
    for e in &report.events {
        let unit_id = match e.kind {
            UnitEventKind::Added => {
                ledger.push_unit(e.layer, &dims);
                dims[e.layer] += 1;
                out.added += 1;
                ledger.alive[e.layer - 1].last().expect("just pushed").id
            }
            UnitEventKind::Removed => {
                let id = ledger.id_of(e.layer, e.index);
                ledger.remove_unit(e.layer, e.index);
                dims[e.layer] -= 1;
                out.removed += 1;
                id
            }
        };
        out.events.push(UnitEventRow {
            epoch: ledger.epoch,
            layer: e.layer,
            unit_id,
            kind: e.kind,
        });
    }
}

/// One pass over `batches`: train-mode forward, backward scaled by the batch fraction, running
/// statistics update, optimizer step. Unit births and deaths are stamped with `ledger.epoch`.
pub fn run_epoch<R: Rng + ?Sized>(
    state: EpochState<'_, R>,
    rule: &StepRule,
    config: &ModelConfig,
    train: &Dataset,
    batches: &[Batch],
    stats_momentum: f64,
) -> Result<EpochReport> {
    let EpochState {
        params,
        optimizer,
        ledger,
        step,
        rng,
    } = state;
    let mut out = EpochReport::default();
    let (mut ce, mut errors, mut seen) = (0.0, 0usize, 0usize);
    for batch in batches {
        let x = train.features().select(Axis(0), &batch.indices);
        let y: Vec<usize> = batch.indices.iter().map(|&i| train.labels()[i]).collect();
        let cache = forward(params, config, x.view(), Mode::Train)?;
        let (c, e) = loss_sum_and_errors(&cache, &y)?;
        ce += c;
        errors += e;
        seen += y.len();
        let grads = backward(params, config, &cache, &y, batch.fraction)?;
        params.update_running_stats(&cache, stats_momentum);
        *step += 1;
        let dims_before = params.dims().to_vec();
        let report = match (rule, &mut *optimizer) {
            (StepRule::Radial(h), OptimizerState::AdaRad(s)) => {
                adarad_step(params, s, &grads, h, batch.fraction, *step, rng)?
            }
            (StepRule::Radial(h), OptimizerState::AdaRadM(s)) => {
                adaradm_step(params, s, &grads, h, batch.fraction, *step, rng)?
            }
            (StepRule::Sgd { alpha, lambda }, OptimizerState::Sgd) => {
                sgd_step(params, &grads, *alpha, alpha * lambda * batch.fraction)?;
                StepReport::default()
            }
            (StepRule::RmsProp { alpha }, OptimizerState::RmsProp(s)) => {
                rmsprop_step(params, s, &grads, *alpha)?;
                StepReport::default()
            }
            _ => {
                return Err(crate::Error::InvalidArgument(
                    "step rule does not match the optimizer state".into(),
                ))
            }
        };
        record(&report, &dims_before, ledger, &mut out);
    }
    if seen > 0 {
        out.train_ce = ce / seen as f64;
        out.train_err = errors as f64 / seen as f64;
    }
    Ok(out)
}
