//! Experiment configuration: scale preset, then config file, then flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use clego::groups::{build_dihedral, GroupSpec};
use clego::harness::{ExperienceSchedule, TrainConfig};
use clego::lego::{
    make_compositional_experiences, make_flipflop_experiences, make_full_experience, make_incremental_experiences,
    ExperienceSpec, VocabSpec, DEFAULT_SYMBOLS,
};
use clego::models::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Context, Result};

/// Environment variable holding the worker count for sweeps.
pub const WORKERS_ENV: &str = "CLEGO_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Paper,
    Desk,
}

/// Weight sharing across layers: `shared` is ALBERT-like, `unshared` BERT-like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Shared,
    Unshared,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Shared => "albert",
            Family::Unshared => "bert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub families: Vec<Family>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { layers: vec![2, 4, 6, 8, 12], heads: vec![1, 2, 4, 8, 12], families: vec![Family::Shared, Family::Unshared] }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(Family, usize, usize)> {
        let mut out = Vec::new();
        for &f in &self.families {
            for &l in &self.layers {
                for &h in &self.heads {
                    out.push((f, l, h));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub schedule: ExperienceSchedule,
    pub family: Family,
    pub layers: usize,
    pub heads: usize,
    /// Requested width; rounded up to a multiple of `heads` when resolved.
    pub hidden: usize,
    pub symbols: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_length: usize,
    pub test_length: usize,
    pub data_seed: u64,
    /// Examples in the attention probe set.
    pub probe_size: usize,
    pub alpha: f64,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub grid: SweepGrid,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self {
                scale,
                schedule: ExperienceSchedule::Flipflop,
                family: Family::Shared,
                layers: 6,
                heads: 1,
                hidden: clego::models::DESK_HIDDEN,
                symbols: DEFAULT_SYMBOLS,
                train_size: 5_000,
                test_size: 1_000,
                train_length: 4,
                test_length: 6,
                data_seed: 0,
                probe_size: 50,
                alpha: clego::metrics::DEFAULT_ALPHA,
                out: PathBuf::from("runs"),
                train: TrainConfig { seeds: vec![0, 1], ..TrainConfig::desk() },
                grid: SweepGrid { layers: vec![2, 4, 6], heads: vec![1, 2, 4], ..SweepGrid::default() },
            },
            Scale::Paper => Self {
                scale,
                layers: 12,
                heads: 12,
                hidden: clego::models::PAPER_FULL_HIDDEN,
                train_size: 60_000,
                test_size: 6_000,
                train: TrainConfig::paper(),
                grid: SweepGrid::default(),
                ..Self::preset(Scale::Desk)
            },
        }
    }

    /// Preset for `scale` (or the file's `scale` key, or desk) overlaid with
    /// the TOML or JSON document at `path`.
    pub fn load(path: Option<&Path>, scale: Option<Scale>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(read_document(p)?),
            None => None,
        };
        let file_scale = match file.as_ref().and_then(|f| f.get("scale")) {
            Some(v) => Some(Scale::deserialize(v).config(|| "`scale`".into())?),
            None => None,
        };
        let scale = scale.or(file_scale).unwrap_or(Scale::Desk);
        let mut base = serde_json::to_value(Self::preset(scale)).expect("config serializes");
        if let Some(mut f) = file {
            if let Some(obj) = f.as_object_mut() {
                obj.insert("scale".into(), serde_json::to_value(scale).expect("scale serializes"));
            }
            merge(&mut base, f);
        }
        let cfg: Self = serde_json::from_value(base).config(|| "config".into())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 {
            return bad("layers, heads and hidden must be positive".into());
        }
        if self.train.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.train_length < 2 || self.test_length < self.train_length {
            return bad(format!("lengths {} / {} are not usable", self.train_length, self.test_length));
        }
        if self.test_length < clego::metrics::GENERALIZATION_POSITION {
            log::warn!("test length {} has no a_5 position; GA will be unavailable", self.test_length);
        }
        if self.grid.cells().is_empty() {
            return bad("sweep grid is empty".into());
        }
        self.train.validate(self.train_size).config(|| "train".into())?;
        Ok(())
    }

    pub fn group(&self) -> GroupSpec {
        build_dihedral(3).expect("D3 builds")
    }

    pub fn vocab(&self, group: &GroupSpec) -> VocabSpec {
        VocabSpec::new(group, self.symbols)
    }

    /// Experiences trained in order under the configured schedule.
    pub fn experiences(&self, group: &GroupSpec) -> Result<Vec<ExperienceSpec>> {
        let ctx = || format!("building {} schedule", self.schedule);
        Ok(match self.schedule {
            ExperienceSchedule::Flipflop => make_flipflop_experiences(group).data(ctx)?,
            ExperienceSchedule::Compositional => make_compositional_experiences(group).data(ctx)?,
            ExperienceSchedule::Incremental => {
                let comp = make_compositional_experiences(group).data(ctx)?;
                let full = make_full_experience(&comp, group).data(ctx)?;
                make_incremental_experiences(&comp, &full, group).data(ctx)?
            }
            ExperienceSchedule::Full => {
                let comp = make_compositional_experiences(group).data(ctx)?;
                vec![make_full_experience(&comp, group).data(ctx)?]
            }
        })
    }

    /// The full task, scored after training on compositional or
    /// incremental schedules.
    pub fn full_task(&self, group: &GroupSpec) -> Result<Option<ExperienceSpec>> {
        match self.schedule {
            ExperienceSchedule::Compositional | ExperienceSchedule::Incremental => {
                let comp = make_compositional_experiences(group).data(|| "compositional".into())?;
                Ok(Some(make_full_experience(&comp, group).data(|| "full task".into())?))
            }
            _ => Ok(None),
        }
    }

    /// Width used for `heads` heads: `hidden` rounded up to a multiple.
    pub fn hidden_for(&self, heads: usize) -> usize {
        self.hidden.div_ceil(heads) * heads
    }

    pub fn model_config(&self, family: Family, layers: usize, heads: usize, vocab: &VocabSpec) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(layers, heads, self.hidden_for(heads), vocab.len(), vocab.num_elements())
            .shared(family == Family::Shared);
        cfg.max_positions = cfg.max_positions.max(clego::lego::TokenizedExample::token_count(self.test_length));
        cfg.validate().config(|| "model".into())?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON snapshot, ignoring the output path.
    pub fn digest(&self) -> String {
        let located = Self { out: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(serde_json::to_vec(&located).expect("config serializes")))
    }
}

fn read_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).config(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(&text).config(|| format!("parsing {}", path.display()))
    } else {
        let v: toml::Value = toml::from_str(&text).config(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(v).config(|| format!("converting {}", path.display()))
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Seeds from a count (`4` means 0..4) or a comma list (`3,7`).
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    if s.contains(',') {
        s.split(',').map(|x| x.trim().parse::<u64>().map_err(|e| format!("seed `{x}`: {e}"))).collect()
    } else {
        let n: u64 = s.parse().map_err(|e| format!("seed count `{s}`: {e}"))?;
        if n == 0 {
            return Err("seed count must be positive".into());
        }
        Ok((0..n).collect())
    }
}

/// Worker count from the environment, defaulting to 1.
pub fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV}=`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(1),
    }
}
