//! `analyze`: attention summaries and metric tables for finished runs.

use std::fs;
use std::path::{Path, PathBuf};

use clego::harness::load_checkpoint;
use clego::lego::TokenizedExample;
use clego::metrics::{attention_cosine_similarity, first_clause_attention, preceding_clause_attention};
use serde::Serialize;

use crate::data;
use crate::error::{CliError, Context, Result};
use crate::run::{read_config, read_summary, seed_dir, SeedSummary};

pub const PRECEDING_FILE: &str = "preceding_clause.csv";
pub const FIRST_FILE: &str = "first_clause.csv";
pub const COSINE_FILE: &str = "attention_cosine.csv";
pub const RUN_METRICS_FILE: &str = "cl_metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecedingRow {
    pub family: String,
    pub seed: u64,
    pub after_experience: usize,
    pub layer: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstClauseRow {
    pub family: String,
    pub seed: u64,
    pub after_experience: usize,
    pub layer: usize,
    pub clause: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineRow {
    pub family: String,
    pub seed: u64,
    pub replay_fraction: f64,
    pub layer: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct MetricsRow {
    pub family: String,
    pub seed: u64,
    pub TA: Option<f64>,
    pub GA: Option<f64>,
    pub FT: Option<f64>,
    pub FT_flag: Option<bool>,
    pub PM_corrected: Option<f64>,
    pub PM_literal: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Default)]
pub struct Analysis {
    pub preceding: Vec<PrecedingRow>,
    pub first_clause: Vec<FirstClauseRow>,
    pub cosine: Vec<CosineRow>,
    pub metrics: Vec<MetricsRow>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    fs::write(path, w.into_inner().expect("in-memory csv")).analysis(|| format!("writing {}", path.display()))
}

/// Analyzes every seed of the run at `run`, writing tables to
/// `run/analysis`.
pub fn analyze_run(run: &Path) -> Result<Analysis> {
    let cfg = read_config(run).map_err(|e| CliError::Analysis(e.to_string()))?;
    let summary = read_summary(run)?;
    let data = data::build(&cfg).map_err(|e| CliError::Analysis(e.to_string()))?;
    let probe: Vec<&TokenizedExample> =
        data.test[0].examples.iter().take(cfg.probe_size).map(|e| &e.tokens).collect();

    let missing: Vec<String> = summary
        .seeds
        .iter()
        .flat_map(|s| s.checkpoints.iter().map(move |c| seed_dir(run, s.seed).join(&c.path)))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Analysis(format!("missing checkpoints: {}", missing.join(", "))));
    }

    let mut out = Analysis::default();
    for s in &summary.seeds {
        analyze_seed(run, s, &probe, cfg.train.replay_fraction, &mut out)?;
        let m = s.metrics;
        out.metrics.push(MetricsRow {
            family: s.family.name().into(),
            seed: s.seed,
            TA: m.map(|m| m.TA),
            GA: m.map(|m| m.GA),
            FT: m.map(|m| m.FT),
            FT_flag: m.map(|m| !m.FT_reached),
            PM_corrected: m.map(|m| m.PM_corrected),
            PM_literal: m.map(|m| m.PM_literal),
            alpha: cfg.alpha,
        });
    }
    let dir = run.join("analysis");
    fs::create_dir_all(&dir).analysis(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join(PRECEDING_FILE), &out.preceding)?;
    write_csv(&dir.join(FIRST_FILE), &out.first_clause)?;
    write_csv(&dir.join(COSINE_FILE), &out.cosine)?;
    write_csv(&dir.join(RUN_METRICS_FILE), &out.metrics)?;
    Ok(out)
}

fn analyze_seed(
    run: &Path,
    s: &SeedSummary,
    probe: &[&TokenizedExample],
    replay: f64,
    out: &mut Analysis,
) -> Result<()> {
    let dir = seed_dir(run, s.seed);
    let family = s.family.name().to_string();
    let mut models = Vec::new();
    for c in &s.checkpoints {
        let m = load_checkpoint(&dir.join(&c.path), Some(&c.digest), None)
            .analysis(|| format!("loading {}", c.path))?;
        let recs = m.attention(probe).analysis(|| "attention".into())?;
        for (layer, score) in preceding_clause_attention(&recs).analysis(|| "preceding clause".into())?.iter().enumerate() {
            out.preceding.push(PrecedingRow {
                family: family.clone(),
                seed: s.seed,
                after_experience: c.experience,
                layer: layer + 1,
                score: *score,
            });
        }
        for (layer, row) in first_clause_attention(&recs).analysis(|| "first clause".into())?.iter().enumerate() {
            for (clause, score) in row.iter().enumerate() {
                out.first_clause.push(FirstClauseRow {
                    family: family.clone(),
                    seed: s.seed,
                    after_experience: c.experience,
                    layer: layer + 1,
                    clause: clause + 1,
                    score: *score,
                });
            }
        }
        models.push(m);
    }
    if models.len() >= 2 {
        let cos = attention_cosine_similarity(&models[0], &models[1], probe).analysis(|| "cosine".into())?;
        for (layer, c) in cos.iter().enumerate() {
            out.cosine.push(CosineRow {
                family: family.clone(),
                seed: s.seed,
                replay_fraction: replay,
                layer: layer + 1,
                cosine: *c,
            });
        }
    }
    Ok(())
}

pub fn cmd_analyze(runs: &[PathBuf]) -> Result<Vec<Analysis>> {
    if runs.is_empty() {
        return Err(CliError::Analysis("no run directories given".into()));
    }
    runs.iter().map(|r| analyze_run(r)).collect()
}
