//! Transformer encoder classifiers over LEGO token sequences.

mod batch;
mod transformer;

pub use batch::Batch;
pub use transformer::{AttentionRecord, Forward, TransformerModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lego::TokenizedExample;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input of {len} tokens exceeds max_positions {max}")]
    Length { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Where layer normalization sits relative to the residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// Normalize each sublayer's input; one final norm before the head.
    Pre,
    /// Normalize after each residual sum, as in the original BERT.
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    /// One encoder block reused at every depth (ALBERT-style).
    pub weight_sharing: bool,
    pub dropout: f64,
    pub init_std: f64,
    pub norm: NormPlacement,
    /// Shift each training sequence to a random start position so every row
    /// of the position table is trained.
    pub position_jitter: bool,
}

/// Token length of the longest test chain (T = 6).
pub const DESK_MAX_POSITIONS: usize = 33;
pub const DESK_HIDDEN: usize = 128;
/// 128 is not divisible by 12, so the 12-head preset uses 144 at desk scale.
pub const DESK_FULL_HIDDEN: usize = 144;
pub const PAPER_FULL_HIDDEN: usize = 768;

impl ModelConfig {
    pub fn new(num_layers: usize, num_heads: usize, hidden: usize, vocab_size: usize, num_classes: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            hidden,
            ffn: 4 * hidden,
            max_positions: DESK_MAX_POSITIONS,
            vocab_size,
            num_classes,
            weight_sharing: false,
            dropout: 0.0,
            init_std: 0.02,
            norm: NormPlacement::Pre,
            position_jitter: true,
        }
    }

    pub fn shared(mut self, weight_sharing: bool) -> Self {
        self.weight_sharing = weight_sharing;
        self
    }

    pub fn family(&self) -> &'static str {
        if self.weight_sharing {
            "albert"
        } else {
            "bert"
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden == 0 || self.ffn == 0 {
            return bad("layers, heads, hidden and ffn must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.num_heads) {
            return bad(format!("hidden {} is not divisible by {} heads", self.hidden, self.num_heads));
        }
        if self.max_positions == 0 || self.vocab_size == 0 || self.num_classes == 0 {
            return bad("max_positions, vocab_size and num_classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.init_std > 0.0) {
            return bad(format!("init_std {} must be positive", self.init_std));
        }
        Ok(())
    }
}

/// BERT-minimal and ALBERT-minimal: 6 layers, 1 head, d = 128.
pub fn minimal_configs(vocab_size: usize, num_classes: usize) -> (ModelConfig, ModelConfig) {
    let base = ModelConfig::new(6, 1, DESK_HIDDEN, vocab_size, num_classes);
    (base.clone().shared(false), base.shared(true))
}

/// The 12-layer, 12-head preset at the given hidden width.
pub fn full_config(vocab_size: usize, num_classes: usize, hidden: usize, weight_sharing: bool) -> ModelConfig {
    ModelConfig::new(12, 12, hidden, vocab_size, num_classes).shared(weight_sharing)
}

/// Anything that scores every token of an example against every class.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    /// Row-major `[len, num_classes]` logits for each example.
    fn logits(&self, examples: &[&TokenizedExample]) -> Result<Vec<Vec<f64>>, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Canonical clause index (0 for a_1).
    pub position: usize,
    pub predicted: usize,
    pub target: usize,
    pub correct: bool,
}

/// Argmax prediction at each labeled position, in canonical clause order.
/// Ties resolve to the lowest class id.
pub fn assignments_from_logits(logits: &[f64], num_classes: usize, example: &TokenizedExample) -> Vec<Assignment> {
    example
        .label_positions
        .iter()
        .enumerate()
        .map(|(position, &tok)| {
            let row = &logits[tok * num_classes..(tok + 1) * num_classes];
            let predicted = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            let target = example.labels[tok].expect("label positions carry labels");
            Assignment { position, predicted, target, correct: predicted == target }
        })
        .collect()
}

pub fn predict_assignments<C: Classifier + ?Sized>(
    model: &C,
    example: &TokenizedExample,
) -> Result<Vec<Assignment>, ModelError> {
    let logits = model.logits(&[example])?;
    Ok(assignments_from_logits(&logits[0], model.num_classes(), example))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::build_dihedral;
    use crate::lego::{make_flipflop_experiences, sample_sequence, shuffle_presentation, tokenize, VocabSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Perfect;
    impl Classifier for Perfect {
        fn num_classes(&self) -> usize {
            6
        }
        fn logits(&self, examples: &[&TokenizedExample]) -> Result<Vec<Vec<f64>>, ModelError> {
            Ok(examples
                .iter()
                .map(|ex| {
                    let mut out = vec![0.0; ex.len() * 6];
                    for (i, l) in ex.labels.iter().enumerate() {
                        if let Some(l) = l {
                            out[i * 6 + l] = 1.0;
                        }
                    }
                    out
                })
                .collect())
        }
    }

    struct Constant(usize);
    impl Classifier for Constant {
        fn num_classes(&self) -> usize {
            6
        }
        fn logits(&self, examples: &[&TokenizedExample]) -> Result<Vec<Vec<f64>>, ModelError> {
            Ok(examples
                .iter()
                .map(|ex| (0..ex.len() * 6).map(|i| if i % 6 == self.0 { 1.0 } else { 0.0 }).collect())
                .collect())
        }
    }

    fn examples(n: usize) -> Vec<TokenizedExample> {
        let g = build_dihedral(3).unwrap();
        let v = VocabSpec::new(&g, 26);
        let e = make_flipflop_experiences(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|_| {
                let s = sample_sequence(&e[0], &g, 6, 26, &mut rng).unwrap();
                tokenize(&shuffle_presentation(&s, &mut rng), &v).unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_stub_is_always_right() {
        for ex in examples(20) {
            assert!(predict_assignments(&Perfect, &ex).unwrap().iter().all(|a| a.correct));
        }
    }

    #[test]
    fn constant_stub_matches_label_marginal() {
        let exs = examples(400);
        let spin = 2;
        let (mut hits, mut spins, mut total) = (0, 0, 0);
        for ex in &exs {
            for a in predict_assignments(&Constant(spin), ex).unwrap() {
                assert_eq!(a.predicted, spin);
                hits += a.correct as usize;
                spins += (a.target == spin) as usize;
                total += 1;
            }
        }
        assert_eq!(hits, spins);
        // two-element experience: always guessing one element is right about half the time
        let rate = hits as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn assignments_are_in_canonical_order() {
        for ex in examples(10) {
            let a = predict_assignments(&Perfect, &ex).unwrap();
            assert_eq!(a.iter().map(|x| x.position).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn presets() {
        let (b, a) = minimal_configs(35, 6);
        assert_eq!((b.num_layers, b.num_heads, b.weight_sharing), (6, 1, false));
        assert_eq!((a.num_layers, a.num_heads, a.weight_sharing), (6, 1, true));
        let f = full_config(35, 6, DESK_FULL_HIDDEN, false);
        assert_eq!((f.num_layers, f.num_heads), (12, 12));
        f.validate().unwrap();
        assert!(full_config(35, 6, DESK_HIDDEN, false).validate().is_err());
    }
}
