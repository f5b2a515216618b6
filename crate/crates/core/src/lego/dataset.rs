//! Line-oriented dataset files.
//!
//! ```text
//! #clego-dataset v1
//! #experience flipflop-1 elements=spin,mirror relations=val,reflect
//! #params seed=7 length=4 count=5000 symbols=26
//! #group group D3 order=6 identity=val
//! #group elements val rotate spin flip reflect mirror
//! #group row val : val rotate spin flip reflect mirror
//! ...
//! #vocab val rotate spin ... = ∘ ; <pad>
//! id	experience	seed	clauses	permutation	tokens	labels
//! 0	flipflop-1	7	a=spin;b=a∘val;...	2 0 3 1	...	...
//! ```
//!
//! Columns are tab separated. `clauses` lists the chain in canonical order,
//! `permutation` the canonical clause index of each presented clause, `tokens`
//! the token ids, and `labels` the target element name per token (`.` for
//! unlabeled positions). Example `i` is drawn from the ChaCha stream `i` of
//! the dataset seed, so generation does not depend on how work is split.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    sample_sequence, shuffle_presentation, tokenize, ExperienceSpec, LegoError, LegoSequence, TokenizedExample,
    VocabSpec,
};
use crate::groups::GroupSpec;

pub const DATASET_MAGIC: &str = "#clego-dataset v1";
const COLUMNS: &str = "id\texperience\tseed\tclauses\tpermutation\ttokens\tlabels";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: usize,
    pub sequence: LegoSequence,
    pub tokens: TokenizedExample,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub group: GroupSpec,
    pub vocab: VocabSpec,
    pub experience: ExperienceSpec,
    pub seed: u64,
    pub length: usize,
    pub examples: Vec<Example>,
}

/// `n` shuffled, tokenized chains of `length` clauses drawn from `exp`.
pub fn generate_dataset(
    exp: &ExperienceSpec,
    group: &GroupSpec,
    vocab: &VocabSpec,
    n: usize,
    length: usize,
    seed: u64,
) -> Result<Dataset, LegoError> {
    if n == 0 {
        return Err(LegoError::Construction("dataset size must be at least 1".into()));
    }
    let examples = (0..n)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let seq = sample_sequence(exp, group, length, vocab.num_symbols(), &mut rng)?;
            let sequence = shuffle_presentation(&seq, &mut rng);
            let tokens = tokenize(&sequence, vocab)?;
            Ok(Example { id, sequence, tokens })
        })
        .collect::<Result<Vec<_>, LegoError>>()?;
    Ok(Dataset {
        group: group.clone(),
        vocab: vocab.clone(),
        experience: exp.clone(),
        seed,
        length,
        examples,
    })
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(DATASET_MAGIC);
        out.push('\n');
        out.push_str(&format!("#experience {}\n", self.experience.describe(&self.group)));
        out.push_str(&format!(
            "#params seed={} length={} count={} symbols={}\n",
            self.seed,
            self.length,
            self.examples.len(),
            self.vocab.num_symbols()
        ));
        for line in self.group.to_manifest().lines() {
            out.push_str(&format!("#group {line}\n"));
        }
        out.push_str(&format!("#vocab {}\n", self.vocab.tokens().join(" ")));
        out.push_str(COLUMNS);
        out.push('\n');
        for ex in &self.examples {
            let labels = ex
                .tokens
                .labels
                .iter()
                .map(|l| l.map_or(".", |x| self.group.element_name(x).unwrap_or("?")));
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                ex.id,
                self.experience.name,
                self.seed,
                ex.sequence.render(&self.group, &self.vocab),
                join(&ex.sequence.presentation),
                join(&ex.tokens.tokens),
                join(labels),
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LegoError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| LegoError::Io { path: dir.display().to_string(), source })?;
        }
        fs::write(path, self.to_text()).map_err(|source| LegoError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, LegoError> {
        let text =
            fs::read_to_string(path).map_err(|source| LegoError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text).map_err(|e| match e {
            LegoError::DatasetFormat { reason, .. } => LegoError::DatasetFormat { path: path.display().to_string(), reason },
            other => LegoError::DatasetFormat { path: path.display().to_string(), reason: other.to_string() },
        })
    }

    /// Parses a dataset and checks every stored token and label against a
    /// fresh tokenization of its clauses.
    pub fn from_text(text: &str) -> Result<Self, LegoError> {
        let bad = |reason: String| LegoError::DatasetFormat { path: "<memory>".into(), reason };
        let mut lines = text.lines();
        if lines.next() != Some(DATASET_MAGIC) {
            return Err(bad("missing header".into()));
        }
        let mut experience_line = None;
        let mut params = None;
        let mut group_text = String::new();
        let mut vocab_line = None;
        for line in lines.by_ref() {
            if line == COLUMNS {
                break;
            }
            if let Some(rest) = line.strip_prefix("#experience ") {
                experience_line = Some(rest);
            } else if let Some(rest) = line.strip_prefix("#params ") {
                params = Some(rest);
            } else if let Some(rest) = line.strip_prefix("#group ") {
                group_text.push_str(rest);
                group_text.push('\n');
            } else if let Some(rest) = line.strip_prefix("#vocab ") {
                vocab_line = Some(rest);
            } else {
                return Err(bad(format!("unexpected header line `{line}`")));
            }
        }
        let group = GroupSpec::from_manifest(&group_text)?;
        let experience = ExperienceSpec::parse(experience_line.ok_or_else(|| bad("missing #experience".into()))?, &group)?;
        let params = params.ok_or_else(|| bad("missing #params".into()))?;
        let field = |key: &str| -> Result<u64, LegoError> {
            params
                .split_whitespace()
                .find_map(|p| p.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("missing or invalid `{key}`")))
        };
        let seed = field("seed")?;
        let length = field("length")? as usize;
        let count = field("count")? as usize;
        let vocab = VocabSpec::new(&group, field("symbols")? as usize);
        if vocab_line.map(|v| v.split(' ').collect::<Vec<_>>()) != Some(vocab.tokens().iter().map(String::as_str).collect())
        {
            return Err(bad("vocabulary does not match group and symbol count".into()));
        }

        let mut examples = Vec::with_capacity(count);
        for (row, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(bad(format!("row {row}: expected 7 columns, got {}", cols.len())));
            }
            let id: usize = cols[0].parse().map_err(|_| bad(format!("row {row}: bad id")))?;
            if cols[1] != experience.name || cols[2] != seed.to_string() {
                return Err(bad(format!("row {row}: experience or seed differs from header")));
            }
            let mut sequence = LegoSequence::parse(cols[3], &group, &vocab)?;
            sequence.presentation = cols[4]
                .split(' ')
                .map(|p| p.parse().map_err(|_| bad(format!("row {row}: bad permutation"))))
                .collect::<Result<_, _>>()?;
            let mut sorted = sequence.presentation.clone();
            sorted.sort_unstable();
            if sorted != (0..sequence.len()).collect::<Vec<_>>() {
                return Err(bad(format!("row {row}: permutation is not a permutation")));
            }
            let tokens = tokenize(&sequence, &vocab)?;
            if join(&tokens.tokens) != cols[5] {
                return Err(bad(format!("row {row}: tokens do not match clauses")));
            }
            let labels = join(tokens.labels.iter().map(|l| l.map_or(".", |x| group.element_name(x).unwrap_or("?"))));
            if labels != cols[6] {
                return Err(bad(format!("row {row}: labels do not match clauses")));
            }
            if sequence.len() != length {
                return Err(bad(format!("row {row}: length {} != {length}", sequence.len())));
            }
            examples.push(Example { id, sequence, tokens });
        }
        if examples.len() != count {
            return Err(bad(format!("expected {count} rows, found {}", examples.len())));
        }
        Ok(Self { group, vocab, experience, seed, length, examples })
    }

    /// The dataset restricted to the given example indices (ids preserved).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            group: self.group.clone(),
            vocab: self.vocab.clone(),
            experience: self.experience.clone(),
            seed: self.seed,
            length: self.length,
            examples: Vec::new(),
        }
    }
}
