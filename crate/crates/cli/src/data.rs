use std::path::Path;

use clego::groups::GroupSpec;
use clego::lego::{generate_dataset, Dataset, ExperienceSpec, VocabSpec};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Context, Result};

/// Train and test sets for every experience in a schedule.
pub struct Datasets {
    pub group: GroupSpec,
    pub vocab: VocabSpec,
    pub train: Vec<Dataset>,
    pub test: Vec<Dataset>,
    /// Test set of the full task for compositional schedules.
    pub full_test: Option<Dataset>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub experience: String,
    pub split: String,
    pub file: String,
    pub seed: u64,
    pub examples: usize,
    pub length: usize,
}

fn train_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.data_seed * 1000 + 2 * i as u64
}

fn test_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.data_seed * 1000 + 2 * i as u64 + 1
}

fn full_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.data_seed * 1000 + 999
}

pub fn build(cfg: &ExperimentConfig) -> Result<Datasets> {
    let group = cfg.group();
    let vocab = cfg.vocab(&group);
    let exps = cfg.experiences(&group)?;
    let make = |e: &ExperienceSpec, n, len, seed| {
        generate_dataset(e, &group, &vocab, n, len, seed).data(|| format!("generating {}", e.name))
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, e) in exps.iter().enumerate() {
        train.push(make(e, cfg.train_size, cfg.train_length, train_seed(cfg, i))?);
        test.push(make(e, cfg.test_size, cfg.test_length, test_seed(cfg, i))?);
    }
    let full_test = match cfg.full_task(&group)? {
        Some(e) => Some(make(&e, cfg.test_size, cfg.test_length, full_seed(cfg))?),
        None => None,
    };
    Ok(Datasets { group, vocab, train, test, full_test })
}

/// Writes every dataset under `dir` with a `manifest.json`.
pub fn write(data: &Datasets, dir: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).data(|| format!("creating {}", dir.display()))?;
    let mut manifest = Vec::new();
    let mut put = |i: usize, split: &str, d: &Dataset| -> Result<()> {
        let file = format!("exp{}-{}-{split}.tsv", i + 1, d.experience.name);
        d.save(&dir.join(&file)).data(|| format!("writing {file}"))?;
        manifest.push(ManifestEntry {
            experience: d.experience.name.clone(),
            split: split.into(),
            file,
            seed: d.seed,
            examples: d.len(),
            length: d.length,
        });
        Ok(())
    };
    for (i, (tr, te)) in data.train.iter().zip(&data.test).enumerate() {
        put(i, "train", tr)?;
        put(i, "test", te)?;
    }
    if let Some(f) = &data.full_test {
        put(data.train.len(), "test", f)?;
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .data(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}
