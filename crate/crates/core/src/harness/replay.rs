use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use super::HarnessError;
use crate::lego::{Dataset, Example};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayEntry {
    /// Zero-based index of the experience the example came from.
    pub experience: usize,
    pub example: Example,
}

/// Examples retained from finished experiences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Stored example count per source experience.
    pub fn counts(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.experience).or_insert(0) += 1;
        }
        out
    }

    /// Per-experience capacity for a train set of `n` examples.
    pub fn capacity(fraction: f64, n: usize) -> usize {
        // the epsilon keeps products such as 0.07 * 100 from flooring to 6
        (fraction * n as f64 + 1e-9).floor() as usize
    }
}

/// Adds `floor(fraction * |finished|)` examples drawn uniformly without
/// replacement from the experience that just ended.
pub fn update_buffer<R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer,
    finished: &Dataset,
    experience: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(), HarnessError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(HarnessError::Contract(format!("replay fraction {fraction} outside [0, 1]")));
    }
    if buffer.entries.iter().any(|e| e.experience == experience) {
        return Err(HarnessError::Contract(format!("experience {experience} is already in the replay buffer")));
    }
    let n = finished.len();
    let cap = ReplayBuffer::capacity(fraction, n);
    let mut picked = index::sample(rng, n, cap).into_vec();
    picked.sort_unstable();
    buffer
        .entries
        .extend(picked.into_iter().map(|i| ReplayEntry { experience, example: finished.examples[i].clone() }));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchItem {
    /// Index into the current experience's train set.
    Current(usize),
    /// Index into the replay buffer.
    Replay(usize),
}

/// `batch_size` distinct draws, uniform over the current train set together
/// with the buffer contents.
pub fn build_batch<R: Rng + ?Sized>(
    current: &Dataset,
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BatchItem>, HarnessError> {
    if current.is_empty() {
        return Err(HarnessError::Contract("current train set is empty".into()));
    }
    let n = current.len();
    let pool = n + buffer.len();
    if batch_size > pool {
        return Err(HarnessError::Contract(format!("batch size {batch_size} exceeds pool of {pool}")));
    }
    Ok(index::sample(rng, pool, batch_size)
        .into_iter()
        .map(|i| if i < n { BatchItem::Current(i) } else { BatchItem::Replay(i - n) })
        .collect())
}
