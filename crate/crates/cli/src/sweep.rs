//! `sweep`: every (family, layers, heads) cell and seed, resumable.

use std::fs;
use std::path::{Path, PathBuf};

use clego::metrics::{mean_metrics, CLMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{workers, ExperimentConfig, Family};
use crate::data;
use crate::error::{CliError, Context, Result};
use crate::run::{completed_seed, run_seed, seed_dir, write_config, SeedSummary};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub seeds: usize,
    #[serde(rename = "TA")]
    pub ta: Option<f64>,
    #[serde(rename = "GA")]
    pub ga: Option<f64>,
    #[serde(rename = "FT")]
    pub ft: Option<f64>,
    pub log10_ft: Option<f64>,
    #[serde(rename = "FT_flag")]
    pub ft_flag: Option<bool>,
    #[serde(rename = "PM_corrected")]
    pub pm_corrected: Option<f64>,
    #[serde(rename = "PM_literal")]
    pub pm_literal: Option<f64>,
    pub alpha: f64,
    pub status: String,
}

/// What a sweep did for one (cell, seed) job.
#[derive(Debug, Clone, PartialEq)]
pub enum JobOutcome {
    Trained(SeedSummary),
    Resumed(SeedSummary),
    Failed(String),
}

impl JobOutcome {
    fn summary(&self) -> Option<&SeedSummary> {
        match self {
            JobOutcome::Trained(s) | JobOutcome::Resumed(s) => Some(s),
            JobOutcome::Failed(_) => None,
        }
    }
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub jobs: Vec<((Family, usize, usize, u64), JobOutcome)>,
}

impl SweepReport {
    pub fn trained(&self) -> usize {
        self.jobs.iter().filter(|(_, o)| matches!(o, JobOutcome::Trained(_))).count()
    }
}

pub fn cell_dir(out: &Path, family: Family, layers: usize, heads: usize) -> PathBuf {
    out.join("cells").join(format!("{}-L{layers}-H{heads}", family.name()))
}

fn cell_config(cfg: &ExperimentConfig, family: Family, layers: usize, heads: usize) -> ExperimentConfig {
    ExperimentConfig { family, layers, heads, out: cell_dir(&cfg.out, family, layers, heads), ..cfg.clone() }
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    write_config(cfg, &cfg.out)?;
    let data = data::build(cfg)?;
    let cells = cfg.grid.cells();
    let mut jobs = Vec::new();
    for &(f, l, h) in &cells {
        let cc = cell_config(cfg, f, l, h);
        let mc = cfg.model_config(f, l, h, &data.vocab)?;
        write_config(&cc, &cc.out)?;
        for &s in &cfg.train.seeds {
            jobs.push((f, l, h, s, cc.clone(), mc.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers()?)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(f, l, h, s, cc, mc)| {
                let dir = seed_dir(&cc.out, *s);
                let outcome = match completed_seed(&dir, &cc.digest(), mc) {
                    Some(done) => {
                        log::info!("{}-L{l}-H{h} seed {s}: already complete", f.name());
                        JobOutcome::Resumed(done)
                    }
                    None => match run_seed(cc, mc, *f, &data, *s, &dir) {
                        Ok((summary, _)) => JobOutcome::Trained(summary),
                        Err(e) => {
                            log::error!("{}-L{l}-H{h} seed {s}: {e}", f.name());
                            JobOutcome::Failed(e.to_string())
                        }
                    },
                };
                ((*f, *l, *h, *s), outcome)
            })
            .collect()
    });

    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|&(f, l, h)| {
            let mine: Vec<&JobOutcome> =
                outcomes.iter().filter(|((a, b, c, _), _)| (*a, *b, *c) == (f, l, h)).map(|(_, o)| o).collect();
            cell_row(cfg, f, l, h, &mine)
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).expect("in-memory csv");
    }
    let p = cfg.out.join(SWEEP_FILE);
    fs::write(&p, w.into_inner().expect("in-memory csv")).training(|| format!("writing {}", p.display()))?;
    Ok(SweepReport { rows, jobs: outcomes })
}

fn cell_row(cfg: &ExperimentConfig, f: Family, l: usize, h: usize, jobs: &[&JobOutcome]) -> SweepRow {
    let failures: Vec<&str> =
        jobs.iter().filter_map(|o| if let JobOutcome::Failed(e) = o { Some(e.as_str()) } else { None }).collect();
    let metrics: Vec<CLMetrics> = jobs.iter().filter_map(|o| o.summary().and_then(|s| s.metrics)).collect();
    let mean = if failures.is_empty() && metrics.len() == jobs.len() { mean_metrics(&metrics) } else { None };
    let status = if !failures.is_empty() {
        format!("failed: {}", failures.join("; "))
    } else if mean.is_none() {
        let note = jobs.iter().find_map(|o| o.summary().and_then(|s| s.metrics_note.clone()));
        format!("no metrics: {}", note.unwrap_or_default())
    } else {
        "ok".into()
    };
    SweepRow {
        family: f.name().into(),
        layers: l,
        heads: h,
        hidden: cfg.hidden_for(h),
        seeds: jobs.len(),
        ta: mean.map(|m| m.TA),
        ga: mean.map(|m| m.GA),
        ft: mean.map(|m| m.FT),
        log10_ft: mean.map(|m| m.FT.log10()),
        ft_flag: mean.map(|m| !m.FT_reached),
        pm_corrected: mean.map(|m| m.PM_corrected),
        pm_literal: mean.map(|m| m.PM_literal),
        alpha: cfg.alpha,
        status,
    }
}
