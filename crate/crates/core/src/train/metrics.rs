use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::optim::UnitEventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Units are added; λ > 0.
    Grow,
    /// No additions; λ > 0 until units stop dying.
    Settle,
    /// λ = 0 at the starting step size.
    Tune,
    /// First phase of a parametric run.
    Train,
    Anneal,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Grow => "grow",
            Phase::Settle => "settle",
            Phase::Tune => "tune",
            Phase::Train => "train",
            Phase::Anneal => "anneal",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub phase: Phase,
    pub train_ce: f64,
    pub train_err: f64,
    pub valid_ce: f64,
    pub valid_err: f64,
    /// Hidden widths at the end of the epoch.
    pub dims: Vec<usize>,
    /// Current step size: `alpha_phi` for AdaRad(-M), `alpha` for the baselines.
    pub alpha_phi: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitEventRow {
    pub epoch: u64,
    pub layer: usize,
    pub unit_id: u64,
    pub kind: UnitEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub epoch: u64,
    pub layer: usize,
    pub unit_id: u64,
    pub fan_in: f64,
    pub fan_out: f64,
}

/// A rewind at the end of `epoch` back to the model saved at the end of `to_epoch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewindRow {
    pub epoch: u64,
    pub to_epoch: u64,
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
    pub events: Vec<UnitEventRow>,
    pub norms: Vec<NormRow>,
    pub rewinds: Vec<RewindRow>,
}

fn fmt_f64(x: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{x:?}")
}

impl MetricsLog {
    pub fn epoch_header(hidden_layers: usize) -> String {
        let mut h = String::from("epoch,phase,train_ce,train_err,valid_ce,valid_err");
        for l in 1..=hidden_layers {
            let _ = write!(h, ",d_{l}");
        }
        h.push_str(",alpha_phi,lambda");
        h
    }

    pub fn epoch_line(row: &EpochRow) -> String {
        let mut s = format!(
            "{},{},{},{},{},{}",
            row.epoch,
            row.phase.name(),
            fmt_f64(row.train_ce),
            fmt_f64(row.train_err),
            fmt_f64(row.valid_ce),
            fmt_f64(row.valid_err)
        );
        for d in &row.dims {
            let _ = write!(s, ",{d}");
        }
        let _ = write!(s, ",{},{}", fmt_f64(row.alpha_phi), fmt_f64(row.lambda));
        s
    }

    pub const EVENT_HEADER: &'static str = "epoch,layer,unit_id,kind";
    pub const NORM_HEADER: &'static str = "epoch,layer,unit_id,fan_in,fan_out";

    pub fn event_line(e: &UnitEventRow) -> String {
        let kind = match e.kind {
            UnitEventKind::Added => "added",
            UnitEventKind::Removed => "removed",
        };
        format!("{},{},{},{kind}", e.epoch, e.layer, e.unit_id)
    }

    pub fn norm_line(n: &NormRow) -> String {
        format!(
            "{},{},{},{},{}",
            n.epoch,
            n.layer,
            n.unit_id,
            fmt_f64(n.fan_in),
            fmt_f64(n.fan_out)
        )
    }

    pub fn epochs_csv(&self, hidden_layers: usize) -> String {
        let mut s = Self::epoch_header(hidden_layers);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::epoch_line(r));
            s.push('\n');
        }
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = format!("{}\n", Self::EVENT_HEADER);
        for e in &self.events {
            s.push_str(&Self::event_line(e));
            s.push('\n');
        }
        s
    }

    pub fn norms_csv(&self) -> String {
        let mut s = format!("{}\n", Self::NORM_HEADER);
        for n in &self.norms {
            s.push_str(&Self::norm_line(n));
            s.push('\n');
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        assert_eq!(
            MetricsLog::epoch_header(2),
            "epoch,phase,train_ce,train_err,valid_ce,valid_err,d_1,d_2,alpha_phi,lambda"
        );
        let row = EpochRow {
            epoch: 3,
            phase: Phase::Grow,
            train_ce: 0.5,
            train_err: 0.1,
            valid_ce: 0.25,
            valid_err: 0.125,
            dims: vec![11, 12],
            alpha_phi: 30.0,
            lambda: 0.001,
        };
        assert_eq!(
            MetricsLog::epoch_line(&row),
            "3,grow,0.5,0.1,0.25,0.125,11,12,30.0,0.001"
        );
    }
}
