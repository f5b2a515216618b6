//! `train`: one model configuration, every seed, one run directory.

use std::fs;
use std::path::{Path, PathBuf};

use clego::harness::{evaluate, load_checkpoint, train_sequential, CheckpointEntry, EvalResult, RunRecord};
use clego::metrics::{cl_metrics, mean_metrics, CLMetrics};
use clego::models::{ModelConfig, TransformerModel};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Family};
use crate::data::{self, Datasets};
use crate::error::{CliError, Context, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FULL_TASK_FILE: &str = "full_task.csv";

/// Per-seed artifacts besides the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub family: Family,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub config_digest: String,
    pub experiences: Vec<String>,
    pub epochs_per_experience: usize,
    pub train_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub checkpoints: Vec<CheckpointEntry>,
    /// Parameter digest of the final model.
    pub final_params: String,
    pub metrics: Option<CLMetrics>,
    /// Why metrics are missing, when they are.
    pub metrics_note: Option<String>,
    /// Accuracy on the full task after the last phase, for compositional
    /// and incremental schedules.
    pub full_task: Option<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub seeds: Vec<SeedSummary>,
    pub mean: Option<CLMetrics>,
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

/// Trains one seed into `dir` and writes its metrics table and summary.
pub fn run_seed(
    cfg: &ExperimentConfig,
    model_cfg: &ModelConfig,
    family: Family,
    data: &Datasets,
    seed: u64,
    dir: &Path,
) -> Result<(SeedSummary, RunRecord)> {
    fs::create_dir_all(dir).training(|| format!("creating {}", dir.display()))?;
    let mut model = TransformerModel::<f32>::init(model_cfg, seed).training(|| "initializing model".into())?;
    let label = format!("{}-L{}-H{} seed {seed}", family.name(), model_cfg.num_layers, model_cfg.num_heads);
    let mut on_epoch = |r: &clego::harness::EpochReport| {
        let acc = r.eval.as_ref().map(|e| {
            e.iter().map(|x| x.accuracy.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join(" | ")
        });
        log::info!(
            "{label} epoch {} (exp {}) loss {:.4} lr {:.2e} {}",
            r.global_epoch,
            r.experience,
            r.train_loss,
            r.lr,
            acc.unwrap_or_default()
        );
    };
    let record = train_sequential(&mut model, &data.train, &data.test, &cfg.train, seed, Some(dir), &mut on_epoch)
        .training(|| label.clone())?;

    let (metrics, metrics_note) = match cl_metrics(&record, cfg.alpha) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let full_task = match &data.full_test {
        Some(t) => Some(evaluate(&model, t, cfg.train.eval_limit).training(|| "full-task evaluation".into())?),
        None => None,
    };
    let summary = SeedSummary {
        seed,
        family,
        layers: model_cfg.num_layers,
        heads: model_cfg.num_heads,
        hidden: model_cfg.hidden,
        config_digest: cfg.digest(),
        experiences: record.experiences.clone(),
        epochs_per_experience: record.epochs_per_experience,
        train_loss: record.train_loss.clone(),
        lr: record.lr.clone(),
        checkpoints: record.checkpoints.clone(),
        final_params: model.params().digest(),
        metrics,
        metrics_note,
        full_task,
    };
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).training(|| format!("writing {}", p.display()))
    };
    write(METRICS_FILE, record.to_csv())?;
    if let Some(f) = &summary.full_task {
        let mut text = String::from("family,seed,position,accuracy\n");
        for (j, a) in f.accuracy.iter().enumerate() {
            text.push_str(&format!("{},{seed},{},{a}\n", family.name(), j + 1));
        }
        write(FULL_TASK_FILE, text)?;
    }
    write(SUMMARY_FILE, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok((summary, record))
}

/// Reads a finished seed's summary when its final checkpoint still hashes
/// to the recorded parameter digest.
pub fn completed_seed(dir: &Path, config_digest: &str, model_cfg: &ModelConfig) -> Option<SeedSummary> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE)).ok()?;
    let s: SeedSummary = serde_json::from_str(&text).ok()?;
    if s.config_digest != config_digest {
        return None;
    }
    let last = s.checkpoints.last()?;
    let model = load_checkpoint(&dir.join(&last.path), Some(&last.digest), Some(model_cfg)).ok()?;
    (model.params().digest() == s.final_params).then_some(s)
}

pub fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).training(|| format!("creating {}", dir.display()))?;
    let p = dir.join(CONFIG_FILE);
    fs::write(&p, serde_json::to_string_pretty(cfg).expect("config serializes"))
        .training(|| format!("writing {}", p.display()))
}

pub fn read_config(dir: &Path) -> Result<ExperimentConfig> {
    let p = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&p).config(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).config(|| format!("parsing {}", p.display()))
}

/// Every seed of the configured model, into `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.out;
    write_config(cfg, out)?;
    let data = data::build(cfg)?;
    data::write(&data, &out.join("data"))?;
    let model_cfg = cfg.model_config(cfg.family, cfg.layers, cfg.heads, &data.vocab)?;
    let mut seeds = Vec::new();
    for &seed in &cfg.train.seeds {
        let (s, _) = run_seed(cfg, &model_cfg, cfg.family, &data, seed, &seed_dir(out, seed))?;
        seeds.push(s);
    }
    let summary = summarize(cfg.digest(), seeds);
    let p = out.join(SUMMARY_FILE);
    fs::write(&p, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .training(|| format!("writing {}", p.display()))?;
    Ok(summary)
}

pub fn summarize(config_digest: String, seeds: Vec<SeedSummary>) -> RunSummary {
    let ms: Vec<CLMetrics> = seeds.iter().filter_map(|s| s.metrics).collect();
    let mean = if ms.len() == seeds.len() { mean_metrics(&ms) } else { None };
    RunSummary { config_digest, seeds, mean }
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let p = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&p).map_err(|e| CliError::Analysis(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).analysis(|| format!("parsing {}", p.display()))
}
