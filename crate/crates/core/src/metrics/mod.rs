//! Continual-learning metrics over run records, and attention analytics.

mod attention;

pub use attention::{
    attention_cosine_similarity, cosine, first_clause_attention, mean_attention_patterns,
    preceding_clause_attention,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::RunRecord;
use crate::models::ModelError;

/// Epochs averaged by TA, GA and PM windows.
pub const WINDOW: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.9;
/// Canonical positions scored by TA and GA (one-based).
pub const TRAIN_POSITION: usize = 4;
pub const GENERALIZATION_POSITION: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("out of range: {0}")]
    Range(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("not comparable: {0}")]
    Comparability(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// First epoch at which a threshold was crossed, or the phase-length
/// sentinel when it never was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tau {
    Reached(usize),
    NotReached,
}

impl Tau {
    pub fn epoch(self) -> Option<usize> {
        match self {
            Tau::Reached(k) => Some(k),
            Tau::NotReached => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CLMetrics {
    pub TA: f64,
    pub GA: f64,
    pub FT: f64,
    /// False when either threshold epoch was missing and the sentinel used.
    pub FT_reached: bool,
    pub PM_corrected: f64,
    pub PM_literal: f64,
    /// True when a PM denominator was zero and -1 was substituted.
    pub PM_flag: bool,
    pub alpha: f64,
}

fn check_position(record: &RunRecord, j: usize) -> Result<(), MetricsError> {
    if (1..=record.positions).contains(&j) {
        Ok(())
    } else {
        Err(MetricsError::Range(format!("position {j} not in 1..={}", record.positions)))
    }
}

fn check_experience(record: &RunRecord, i: usize) -> Result<(), MetricsError> {
    if (1..=record.num_experiences()).contains(&i) {
        Ok(())
    } else {
        Err(MetricsError::Range(format!("experience {i} not in 1..={}", record.num_experiences())))
    }
}

/// First global epoch of phase `i` with `C_j^i(k) > alpha`.
pub fn tau(record: &RunRecord, j: usize, i: usize, alpha: f64) -> Result<Tau, MetricsError> {
    check_position(record, j)?;
    check_experience(record, i)?;
    let (first, last) = record.phase(i);
    Ok((first..=last).find(|&k| record.c(j, i, k) > alpha).map_or(Tau::NotReached, Tau::Reached))
}

/// Mean of `C_j^i(k)` over global epochs `first..first + WINDOW`.
fn window_mean(record: &RunRecord, j: usize, i: usize, first: usize) -> Result<f64, MetricsError> {
    check_position(record, j)?;
    check_experience(record, i)?;
    if first == 0 || first + WINDOW - 1 > record.num_epochs() {
        return Err(MetricsError::InsufficientData(format!(
            "window starting at epoch {first} runs past {} epochs",
            record.num_epochs()
        )));
    }
    let vals: Vec<f64> = (first..first + WINDOW).map(|k| record.c(j, i, k)).collect();
    if vals.iter().any(|v| v.is_nan()) {
        return Err(MetricsError::InsufficientData(format!("epochs {first}.. were not all evaluated")));
    }
    Ok(vals.iter().sum::<f64>() / WINDOW as f64)
}

fn final_window(record: &RunRecord, j: usize) -> Result<f64, MetricsError> {
    if record.epochs_per_experience < WINDOW {
        return Err(MetricsError::InsufficientData(format!(
            "phases of {} epochs are shorter than {WINDOW}",
            record.epochs_per_experience
        )));
    }
    window_mean(record, j, record.num_experiences(), record.num_epochs() + 1 - WINDOW)
}

/// Mean `a_4` accuracy on the last experience over the final ten epochs.
pub fn task_accuracy(record: &RunRecord) -> Result<f64, MetricsError> {
    final_window(record, TRAIN_POSITION)
}

/// As [`task_accuracy`] for `a_5`.
pub fn generalization_accuracy(record: &RunRecord) -> Result<f64, MetricsError> {
    final_window(record, GENERALIZATION_POSITION)
}

/// Ratio of within-phase epochs to exceed `alpha` on `a_4` in phase 1 and
/// phase 2. A missing crossing counts as `phase_length + 1` and clears the
/// reached flag.
pub fn forward_transfer(record: &RunRecord, alpha: f64) -> Result<(f64, bool), MetricsError> {
    if record.num_experiences() < 2 {
        return Err(MetricsError::Range("forward transfer needs two phases".into()));
    }
    let within = |i: usize| -> Result<(f64, bool), MetricsError> {
        Ok(match tau(record, TRAIN_POSITION, i, alpha)? {
            Tau::Reached(k) => ((k + 1 - record.phase(i).0) as f64, true),
            Tau::NotReached => ((record.epochs_per_experience + 1) as f64, false),
        })
    };
    let (t1, r1) = within(1)?;
    let (t2, r2) = within(2)?;
    Ok((t1 / t2, r1 && r2))
}

fn normalized_difference(after: f64, before: f64) -> (f64, bool) {
    let den = after + before;
    if den == 0.0 {
        (-1.0, true)
    } else {
        ((after - before) / den, false)
    }
}

/// `(corrected, literal, zero_denominator)`.
///
/// The corrected form compares the final windows of phases 1 and 2 on
/// experience 1. The literal form compares the first ten epochs of phase 2
/// with the first ten of phase 1 and keeps the extra factor of 1/10.
pub fn performance_maintenance(record: &RunRecord) -> Result<(f64, f64, bool), MetricsError> {
    if record.num_experiences() < 2 {
        return Err(MetricsError::Range("performance maintenance needs two phases".into()));
    }
    if record.epochs_per_experience < WINDOW {
        return Err(MetricsError::InsufficientData("phases shorter than the window".into()));
    }
    let p = record.epochs_per_experience;
    let before = window_mean(record, TRAIN_POSITION, 1, p + 1 - WINDOW)?;
    let after = window_mean(record, TRAIN_POSITION, 1, 2 * p + 1 - WINDOW)?;
    let (corrected, f1) = normalized_difference(after, before);

    let start1 = window_mean(record, TRAIN_POSITION, 1, 1)?;
    let start2 = window_mean(record, TRAIN_POSITION, 1, p + 1)?;
    let (ratio, f2) = normalized_difference(start2, start1);
    let literal = if f2 { -1.0 } else { ratio / WINDOW as f64 };
    Ok((corrected, literal, f1 || f2))
}

pub fn cl_metrics(record: &RunRecord, alpha: f64) -> Result<CLMetrics, MetricsError> {
    let (ft, reached) = forward_transfer(record, alpha)?;
    let (pm, pm_literal, flag) = performance_maintenance(record)?;
    Ok(CLMetrics {
        TA: task_accuracy(record)?,
        GA: generalization_accuracy(record)?,
        FT: ft,
        FT_reached: reached,
        PM_corrected: pm,
        PM_literal: pm_literal,
        PM_flag: flag,
        alpha,
    })
}

/// Field-wise mean over seeds; flags combine conservatively.
pub fn mean_metrics(runs: &[CLMetrics]) -> Option<CLMetrics> {
    let n = runs.len() as f64;
    let first = runs.first()?;
    let avg = |f: fn(&CLMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Some(CLMetrics {
        TA: avg(|m| m.TA),
        GA: avg(|m| m.GA),
        FT: avg(|m| m.FT),
        FT_reached: runs.iter().all(|m| m.FT_reached),
        PM_corrected: avg(|m| m.PM_corrected),
        PM_literal: avg(|m| m.PM_literal),
        PM_flag: runs.iter().any(|m| m.PM_flag),
        alpha: first.alpha,
    })
}
