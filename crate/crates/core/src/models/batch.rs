use rand::Rng;

use super::ModelError;
use crate::lego::TokenizedExample;

/// Examples padded to a common length, flattened row-major `[size, len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    pub tokens: Vec<usize>,
    /// `false` at padding, which attention never reads.
    pub keep: Vec<bool>,
    pub targets: Vec<Option<usize>>,
    pub positions: Vec<usize>,
}

impl Batch {
    pub fn new(examples: &[&TokenizedExample], pad: u32) -> Result<Self, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        let size = examples.len();
        let mut b = Batch {
            size,
            len,
            tokens: Vec::with_capacity(size * len),
            keep: Vec::with_capacity(size * len),
            targets: Vec::with_capacity(size * len),
            positions: (0..size).flat_map(|_| 0..len).collect(),
        };
        for ex in examples {
            for i in 0..len {
                let real = i < ex.len();
                b.tokens.push(if real { ex.tokens[i] } else { pad } as usize);
                b.keep.push(real);
                b.targets.push(if real { ex.labels[i] } else { None });
            }
        }
        Ok(b)
    }

    /// Moves each example to a uniformly drawn start offset so that its
    /// positions stay below `max_positions`.
    pub fn jitter_positions<R: Rng + ?Sized>(&mut self, max_positions: usize, rng: &mut R) {
        let room = max_positions.saturating_sub(self.len);
        for row in self.positions.chunks_mut(self.len.max(1)) {
            let off = rng.gen_range(0..=room);
            for (i, p) in row.iter_mut().enumerate() {
                *p = i + off;
            }
        }
    }

    pub fn labeled(&self) -> usize {
        self.targets.iter().flatten().count()
    }
}
