use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NormMode;
use crate::optim::AdaRadHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[serde(rename = "adarad")]
    AdaRad,
    #[serde(rename = "adarad_m")]
    AdaRadM,
    Sgd,
    #[serde(rename = "rmsprop")]
    RmsProp,
}

impl OptimizerKind {
    /// Whether the optimizer grows and prunes the network.
    pub fn is_nonparametric(self) -> bool {
        matches!(self, OptimizerKind::AdaRad | OptimizerKind::AdaRadM)
    }
}

/// Flat spelling of [`NormMode`] for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[serde(rename = "capnorm")]
    CapNorm,
    #[serde(rename = "batchnorm")]
    BatchNorm,
    #[serde(rename = "batchnorm_affine")]
    BatchNormAffine,
    None,
}

impl From<NormKind> for NormMode {
    fn from(k: NormKind) -> Self {
        match k {
            NormKind::CapNorm => NormMode::CapNorm,
            NormKind::BatchNorm => NormMode::BatchNorm { affine: false },
            NormKind::BatchNormAffine => NormMode::BatchNorm { affine: true },
            NormKind::None => NormMode::None,
        }
    }
}

impl From<NormMode> for NormKind {
    fn from(m: NormMode) -> Self {
        match m {
            NormMode::CapNorm => NormKind::CapNorm,
            NormMode::BatchNorm { affine: false } => NormKind::BatchNorm,
            NormMode::BatchNorm { affine: true } => NormKind::BatchNormAffine,
            NormMode::None => NormKind::None,
        }
    }
}

/// Training hyperparameters. Optional fields are derived from the others (and from the training
/// set size) by [`TrainConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden_layers: usize,
    /// Starting width of every hidden layer.
    pub initial_units: usize,
    /// Explicit starting widths; overrides `initial_units`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dims: Option<Vec<usize>>,
    pub norm: NormKind,
    pub optimizer: OptimizerKind,
    pub lambda: f64,
    /// Starting angular step size (AdaRad, AdaRad-M).
    pub alpha_phi: f64,
    /// Radial step size; defaults to `1/(50 λ)`, or `1/(5 λ)` in large-dataset mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_r: Option<f64>,
    /// Starting step size of the parametric baselines.
    pub alpha: f64,
    pub beta_arith: f64,
    pub beta_quad: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Switches the derived defaults to the large-dataset protocol.
    pub large_dataset: bool,
    /// Units added to each hidden layer per addition event.
    pub nu: usize,
    /// Optimizer steps between additions; defaults to once per epoch (ten times in large mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_freq: Option<u64>,
    /// Patience values in epochs; fractional values are rounded down to at least one epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience_grow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience_settle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience_tune: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience_anneal: Option<f64>,
    pub anneal_factor: f64,
    pub max_annealings: u32,
    /// Fixed schedule: grow for exactly this many epochs, then settle for `settle_epochs`, then
    /// stop without rewinding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grow_epochs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_epochs: Option<u64>,
    /// Hard cap on the number of epochs; when reached, training rewinds to the best model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<u64>,
    pub stats_momentum: f64,
    /// Record per-unit fan-in/fan-out lengths every epoch.
    pub log_unit_norms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            hidden_layers: 2,
            initial_units: 10,
            hidden_dims: None,
            norm: NormKind::CapNorm,
            optimizer: OptimizerKind::AdaRad,
            lambda: 3e-4,
            alpha_phi: 30.0,
            alpha_r: None,
            alpha: 1.0,
            beta_arith: 0.1,
            beta_quad: 0.005,
            epsilon: 1e-8,
            batch_size: 1000,
            large_dataset: false,
            nu: 1,
            nu_freq: None,
            patience_grow: None,
            patience_settle: None,
            patience_tune: None,
            patience_anneal: None,
            anneal_factor: 3.0,
            max_annealings: 12,
            grow_epochs: None,
            settle_epochs: None,
            max_epochs: None,
            stats_momentum: crate::model::DEFAULT_STATS_MOMENTUM,
            log_unit_norms: false,
        }
    }
}

fn require(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.batch_size >= 2, "batch_size", "must be at least 2")?;
        require(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            "must be finite and >= 0",
        )?;
        require(
            self.alpha_phi > 0.0 && self.alpha_phi.is_finite(),
            "alpha_phi",
            "must be finite and > 0",
        )?;
        require(
            self.alpha > 0.0 && self.alpha.is_finite(),
            "alpha",
            "must be finite and > 0",
        )?;
        require(
            self.beta_arith > 0.0 && self.beta_arith <= 1.0,
            "beta_arith",
            "must be in (0, 1]",
        )?;
        require(
            self.beta_quad > 0.0 && self.beta_quad <= 1.0,
            "beta_quad",
            "must be in (0, 1]",
        )?;
        require(self.epsilon > 0.0, "epsilon", "must be > 0")?;
        require(self.anneal_factor > 1.0, "anneal_factor", "must be > 1")?;
        require(
            self.stats_momentum > 0.0 && self.stats_momentum <= 1.0,
            "stats_momentum",
            "must be in (0, 1]",
        )?;
        if let Some(a) = self.alpha_r {
            require(a > 0.0 && a.is_finite(), "alpha_r", "must be finite and > 0")?;
        } else if self.optimizer.is_nonparametric() {
            require(self.lambda > 0.0, "alpha_r", "must be given when lambda is 0")?;
        }
        if let Some(f) = self.nu_freq {
            require(f >= 1, "nu_freq", "must be >= 1")?;
        }
        for (name, p) in [
            ("patience_grow", self.patience_grow),
            ("patience_settle", self.patience_settle),
            ("patience_tune", self.patience_tune),
            ("patience_anneal", self.patience_anneal),
        ] {
            if let Some(p) = p {
                require(p > 0.0 && p.is_finite(), name, "must be finite and > 0")?;
            }
        }
        require(
            self.grow_epochs.is_some() == self.settle_epochs.is_some(),
            "settle_epochs",
            "grow_epochs and settle_epochs must be given together",
        )?;
        if let Some(dims) = &self.hidden_dims {
            require(
                dims.len() == self.hidden_layers,
                "hidden_dims",
                "needs one width per hidden layer",
            )?;
        }
        if self.optimizer.is_nonparametric() {
            require(
                self.norm != NormKind::BatchNormAffine,
                "norm",
                "affine batch normalization has parameters AdaRad cannot train",
            )?;
        }
        if self.optimizer == OptimizerKind::RmsProp {
            require(
                self.lambda == 0.0,
                "lambda",
                "RMSprop is trained without regularization; set lambda = 0",
            )?;
        }
        if !self.optimizer.is_nonparametric() {
            require(
                self.grow_epochs.is_none(),
                "grow_epochs",
                "only applies to AdaRad and AdaRad-M",
            )?;
        }
        Ok(())
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm.into()
    }

    pub fn initial_hidden(&self) -> Vec<usize> {
        self.hidden_dims
            .clone()
            .unwrap_or_else(|| vec![self.initial_units; self.hidden_layers])
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> u64 {
        crate::train::batch::batch_sizes(train_len, self.batch_size).len() as u64
    }

    /// Fills every derived default, validating first.
    pub fn resolve(&self, train_len: usize) -> Result<ResolvedConfig> {
        self.validate()?;
        let large = self.large_dataset;
        let alpha_r = self.alpha_r.unwrap_or_else(|| {
            if self.lambda > 0.0 {
                1.0 / ((if large { 5.0 } else { 50.0 }) * self.lambda)
            } else {
                0.0
            }
        });
        let steps = self.steps_per_epoch(train_len).max(1);
        let per_epoch = if large { 10 } else { 1 };
        let nu_freq = self.nu_freq.unwrap_or((steps / per_epoch).max(1));
        let (grow, anneal) = if large { (10.0, 0.5) } else { (100.0, 5.0) };
        let mut resolved = self.clone();
        resolved.alpha_r = Some(alpha_r);
        resolved.nu_freq = Some(nu_freq);
        resolved.patience_grow = Some(self.patience_grow.unwrap_or(grow));
        resolved.patience_settle = Some(self.patience_settle.unwrap_or(grow));
        resolved.patience_tune = Some(self.patience_tune.unwrap_or(grow));
        resolved.patience_anneal = Some(self.patience_anneal.unwrap_or(anneal));
        Ok(ResolvedConfig(resolved))
    }
}

/// A [`TrainConfig`] whose optional fields are all filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResolvedConfig(TrainConfig);

fn patience_epochs(p: Option<f64>) -> u64 {
    (p.expect("resolved").floor() as u64).max(1)
}

impl ResolvedConfig {
    pub fn config(&self) -> &TrainConfig {
        &self.0
    }

    pub fn alpha_r(&self) -> f64 {
        self.0.alpha_r.expect("resolved")
    }

    pub fn nu_freq(&self) -> u64 {
        self.0.nu_freq.expect("resolved")
    }

    pub fn patience_grow(&self) -> u64 {
        patience_epochs(self.0.patience_grow)
    }

    pub fn patience_settle(&self) -> u64 {
        patience_epochs(self.0.patience_settle)
    }

    pub fn patience_tune(&self) -> u64 {
        patience_epochs(self.0.patience_tune)
    }

    pub fn patience_anneal(&self) -> u64 {
        patience_epochs(self.0.patience_anneal)
    }

    pub fn hyper(&self, alpha_phi: f64, lambda: f64, adding: bool) -> AdaRadHyper {
        let c = &self.0;
        AdaRadHyper {
            alpha_r: self.alpha_r(),
            alpha_phi,
            lambda,
            beta_quad: c.beta_quad,
            beta_arith: c.beta_arith,
            epsilon: c.epsilon,
            nu: if adding { c.nu } else { 0 },
            nu_freq: self.nu_freq(),
        }
    }
}

impl std::ops::Deref for ResolvedConfig {
    type Target = TrainConfig;

    fn deref(&self) -> &TrainConfig {
        &self.0
    }
}
