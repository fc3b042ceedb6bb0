use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::{epoch_rng, minibatches};
use super::config::{OptimizerKind, ResolvedConfig, TrainConfig};
use super::epoch::{evaluate, run_epoch, EpochReport, EpochState, Evaluation, StepRule};
use super::metrics::{EpochRow, MetricsLog, NormRow, Phase, RewindRow, UnitEventRow};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NetworkParams};
use crate::optim::{AdaRadMState, AdaRadState, OptimizerState, RmsPropState, UnitEventKind};
use crate::topology::UnitLedger;

/// Everything a rewind restores.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    pub ledger: UnitLedger,
    /// Epoch at whose end the snapshot was taken.
    pub epoch: u64,
    pub valid_err: f64,
    pub valid_ce: f64,
}

/// Position in the staged schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phase: Phase,
    /// Epochs since the last improvement (or, while settling, the last elimination).
    pub since_improve: u64,
    /// Epochs spent in the current phase.
    pub phase_epochs: u64,
    pub annealings: u32,
    /// Best validation error when the current annealing started.
    pub anneal_start_err: f64,
    pub lambda: f64,
    /// `alpha_phi` for AdaRad(-M), `alpha` for the baselines.
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub model: ModelConfig,
    pub ledger: UnitLedger,
    pub log: MetricsLog,
    /// Validation error of the returned model, as measured when it was saved.
    pub valid_err: f64,
    pub epochs: u64,
}

/// Resumable training run: the model, the best model so far, the schedule and the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub(crate) config: ResolvedConfig,
    pub(crate) model: ModelConfig,
    pub(crate) current: Snapshot,
    pub(crate) best: Snapshot,
    pub(crate) schedule: Schedule,
    pub(crate) epoch: u64,
    pub(crate) step: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) log: MetricsLog,
    parallel_eval: bool,
}

/// SHA-256 of the canonical JSON form of a resolved configuration.
pub fn config_hash(config: &ResolvedConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).into()
}

fn check_sets(train: &Dataset, valid: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    if train.input_dim() != valid.input_dim() {
        return Err(Error::shape(format!(
            "training inputs have {} features but validation inputs have {}",
            train.input_dim(),
            valid.input_dim()
        )));
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: &TrainConfig, train: &Dataset, valid: &Dataset) -> Result<Self> {
        check_sets(train, valid)?;
        let config = config.resolve(train.len())?;
        let classes = train.num_classes().max(valid.num_classes());
        let model = ModelConfig::new(config.hidden_layers + 1, train.input_dim(), classes, config.norm_mode())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hidden = config.initial_hidden();
        let params = NetworkParams::init(&model, &hidden, &mut rng)?;
        let optimizer = match config.optimizer {
            OptimizerKind::AdaRad => OptimizerState::AdaRad(AdaRadState::new(&params)),
            OptimizerKind::AdaRadM => OptimizerState::AdaRadM(AdaRadMState::new(&params)),
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::RmsProp => {
                OptimizerState::RmsProp(RmsPropState::new(&params, config.beta_quad, config.epsilon))
            }
        };
        let eval = evaluate(&params, &model, valid, false)?;
        let current = Snapshot {
            params,
            optimizer,
            ledger: UnitLedger::new(&hidden),
            epoch: 0,
            valid_err: eval.error,
            valid_ce: eval.ce,
        };
        let nonparametric = config.optimizer.is_nonparametric();
        let schedule = Schedule {
            phase: if nonparametric { Phase::Grow } else { Phase::Train },
            since_improve: 0,
            phase_epochs: 0,
            annealings: 0,
            anneal_start_err: eval.error,
            lambda: config.lambda,
            step_size: if nonparametric { config.alpha_phi } else { config.alpha },
        };
        let mut log = MetricsLog::default();
        for (k, units) in current.ledger.alive.iter().enumerate() {
            log.events.extend(units.iter().map(|u| UnitEventRow {
                epoch: 0,
                layer: k + 1,
                unit_id: u.id,
                kind: UnitEventKind::Added,
            }));
        }
        Ok(Trainer {
            model,
            best: current.clone(),
            current,
            schedule,
            epoch: 0,
            step: 0,
            rng,
            log,
            parallel_eval: false,
            config,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: ResolvedConfig,
        model: ModelConfig,
        current: Snapshot,
        best: Snapshot,
        schedule: Schedule,
        epoch: u64,
        step: u64,
        rng: ChaCha8Rng,
        log: MetricsLog,
    ) -> Self {
        Trainer {
            config,
            model,
            current,
            best,
            schedule,
            epoch,
            step,
            rng,
            log,
            parallel_eval: false,
        }
    }

    /// Evaluates the validation set on the rayon pool. Results are unchanged.
    pub fn with_parallel_eval(mut self, parallel: bool) -> Self {
        self.parallel_eval = parallel;
        self
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn params(&self) -> &NetworkParams {
        &self.current.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.current.optimizer
    }

    pub fn ledger(&self) -> &UnitLedger {
        &self.current.ledger
    }

    /// Epoch at whose end the current parameters were produced; differs from [`Self::epoch`]
    /// after a rewind.
    pub fn model_epoch(&self) -> u64 {
        self.current.epoch
    }

    /// Validation error of the current parameters.
    pub fn valid_err(&self) -> f64 {
        self.current.valid_err
    }

    pub fn best(&self) -> &Snapshot {
        &self.best
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.schedule.phase == Phase::Done
    }

    fn fixed(&self) -> bool {
        self.config.grow_epochs.is_some()
    }

    fn step_rule(&self) -> StepRule {
        let s = &self.schedule;
        match self.config.optimizer {
            OptimizerKind::AdaRad | OptimizerKind::AdaRadM => {
                StepRule::Radial(self.config.hyper(s.step_size, s.lambda, s.phase == Phase::Grow))
            }
            OptimizerKind::Sgd => StepRule::Sgd {
                alpha: s.step_size,
                lambda: s.lambda,
            },
            OptimizerKind::RmsProp => StepRule::RmsProp { alpha: s.step_size },
        }
    }

    /// Trains one epoch, evaluates, logs and advances the schedule.
    pub fn run_one_epoch(&mut self, train: &Dataset, valid: &Dataset) -> Result<&EpochRow> {
        if self.is_done() {
            return Err(Error::InvalidArgument("training has already finished".into()));
        }
        check_sets(train, valid)?;
        self.epoch += 1;
        self.current.ledger.epoch = self.epoch;
        let phase = self.schedule.phase;
        let rule = self.step_rule();
        let batches = minibatches(
            train.len(),
            self.config.batch_size,
            &mut epoch_rng(self.config.seed, self.epoch),
        );
        let report = run_epoch(
            EpochState {
                params: &mut self.current.params,
                optimizer: &mut self.current.optimizer,
                ledger: &mut self.current.ledger,
                step: &mut self.step,
                rng: &mut self.rng,
            },
            &rule,
            &self.model,
            train,
            &batches,
            self.config.stats_momentum,
        )?;
        let eval = evaluate(&self.current.params, &self.model, valid, self.parallel_eval)?;
        self.current.epoch = self.epoch;
        self.current.valid_err = eval.error;
        self.current.valid_ce = eval.ce;
        self.record(phase, &report, eval);
        self.advance(&report, valid.len());
        Ok(self.log.rows.last().expect("row just pushed"))
    }

    fn record(&mut self, phase: Phase, report: &EpochReport, eval: Evaluation) {
        let s = &self.schedule;
        self.log.rows.push(EpochRow {
            epoch: self.epoch,
            phase,
            train_ce: report.train_ce,
            train_err: report.train_err,
            valid_ce: eval.ce,
            valid_err: eval.error,
            dims: self.current.params.hidden_dims().to_vec(),
            alpha_phi: s.step_size,
            lambda: s.lambda,
        });
        self.log.events.extend(report.events.iter().cloned());
        if self.config.log_unit_norms {
            let p = &self.current.params;
            for l in 1..p.num_layers() {
                let (w_in, w_out) = (p.weight(l), p.weight(l + 1));
                for j in 0..p.dims()[l] {
                    let (fi, fo) = (w_in.column(j), w_out.row(j));
                    self.log.norms.push(NormRow {
                        epoch: self.epoch,
                        layer: l,
                        unit_id: self.current.ledger.id_of(l, j),
                        fan_in: fi.dot(&fi).sqrt(),
                        fan_out: fo.dot(&fo).sqrt(),
                    });
                }
            }
        }
    }

    fn save_best(&mut self) {
        self.best = self.current.clone();
    }

    fn rewind(&mut self) {
        let next_id = self.current.ledger.next_id;
        self.log.rewinds.push(RewindRow {
            epoch: self.epoch,
            to_epoch: self.best.epoch,
        });
        self.current = self.best.clone();
        // Ids of units from the abandoned branch are never handed out again.
        self.current.ledger.next_id = next_id;
    }

    fn enter(&mut self, phase: Phase) {
        self.schedule.phase = phase;
        self.schedule.since_improve = 0;
        self.schedule.phase_epochs = 0;
    }

    fn advance(&mut self, report: &EpochReport, valid_len: usize) {
        let improved = self.current.valid_err < self.best.valid_err;
        let fixed = self.fixed();
        let s = &mut self.schedule;
        s.phase_epochs += 1;
        let reset = improved || (s.phase == Phase::Settle && report.removed > 0 && !fixed);
        if reset {
            s.since_improve = 0;
        } else {
            s.since_improve += 1;
        }
        let since = s.since_improve;
        let phase_epochs = s.phase_epochs;
        if reset || (fixed && improved) {
            self.save_best();
        }
        let factor = self.config.anneal_factor;
        match self.schedule.phase {
            Phase::Grow if fixed => {
                if phase_epochs >= self.config.grow_epochs.expect("fixed") {
                    self.enter(Phase::Settle);
                }
            }
            Phase::Settle if fixed => {
                if phase_epochs >= self.config.settle_epochs.expect("fixed") {
                    self.enter(Phase::Done);
                }
            }
            Phase::Grow => {
                if since >= self.config.patience_grow() {
                    self.rewind();
                    self.enter(Phase::Settle);
                }
            }
            Phase::Settle => {
                if since >= self.config.patience_settle() {
                    self.rewind();
                    self.schedule.lambda = 0.0;
                    self.enter(Phase::Tune);
                }
            }
            Phase::Tune | Phase::Train => {
                if since >= self.config.patience_tune() {
                    self.rewind();
                    self.schedule.step_size /= factor;
                    self.schedule.annealings = 1;
                    self.schedule.anneal_start_err = self.best.valid_err;
                    self.enter(Phase::Anneal);
                }
            }
            Phase::Anneal => {
                if since >= self.config.patience_anneal() {
                    self.rewind();
                    let gain = self.schedule.anneal_start_err - self.best.valid_err;
                    if gain < 0.5 / valid_len as f64 || self.schedule.annealings >= self.config.max_annealings {
                        self.enter(Phase::Done);
                    } else {
                        self.schedule.step_size /= factor;
                        self.schedule.annealings += 1;
                        self.schedule.anneal_start_err = self.best.valid_err;
                        self.enter(Phase::Anneal);
                    }
                }
            }
            Phase::Done => {}
        }
        if !self.is_done() && self.config.max_epochs.is_some_and(|m| self.epoch >= m) {
            if !fixed {
                self.rewind();
            }
            self.enter(Phase::Done);
        }
    }

    /// Runs until the schedule finishes, calling `on_epoch` after every epoch.
    pub fn run<F>(&mut self, train: &Dataset, valid: &Dataset, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.is_done() {
            self.run_one_epoch(train, valid)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            params: self.current.params,
            model: self.model,
            ledger: self.current.ledger,
            log: self.log,
            valid_err: self.current.valid_err,
            epochs: self.epoch,
        }
    }
}

/// Runs the full staged schedule and returns the final model.
pub fn train(config: &TrainConfig, train: &Dataset, valid: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, train, valid)?;
    trainer.run(train, valid, |_| Ok(()))?;
    Ok(trainer.finish())
}
