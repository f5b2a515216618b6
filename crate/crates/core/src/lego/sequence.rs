use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExperienceSpec, LegoError, VocabSpec};
use crate::groups::GroupSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClauseRhs {
    /// `a = x_1`
    Literal(usize),
    /// `a_t = a_{t-1} ∘ x_t`
    Apply { prev: usize, relation: usize },
}

/// One clause. Symbols are indices into the vocabulary's symbol library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub lhs: usize,
    pub rhs: ClauseRhs,
    pub value: usize,
}

/// A clause chain in canonical order plus the order it is presented in.
/// `presentation[k]` is the canonical index of the k-th presented clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegoSequence {
    pub clauses: Vec<Clause>,
    pub presentation: Vec<usize>,
}

impl LegoSequence {
    /// Builds the chain `start, start∘r_2, ...` over the given symbols, in
    /// canonical presentation order.
    pub fn from_draws(
        group: &GroupSpec,
        start: usize,
        relations: &[usize],
        symbols: &[usize],
    ) -> Result<Self, LegoError> {
        if symbols.len() != relations.len() + 1 {
            return Err(LegoError::Malformed(format!(
                "{} symbols for {} clauses",
                symbols.len(),
                relations.len() + 1
            )));
        }
        let mut clauses = Vec::with_capacity(symbols.len());
        let mut state = start;
        group.element_name(start)?;
        clauses.push(Clause { lhs: symbols[0], rhs: ClauseRhs::Literal(start), value: start });
        for (t, &r) in relations.iter().enumerate() {
            state = group.compose(state, r)?;
            clauses.push(Clause {
                lhs: symbols[t + 1],
                rhs: ClauseRhs::Apply { prev: symbols[t], relation: r },
                value: state,
            });
        }
        let presentation = (0..clauses.len()).collect();
        Ok(Self { clauses, presentation })
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.clauses.iter().map(|c| c.value).collect()
    }

    /// `a=spin;b=a∘val;...` in canonical order.
    pub fn render(&self, group: &GroupSpec, vocab: &VocabSpec) -> String {
        self.clauses
            .iter()
            .map(|c| {
                let lhs = vocab.symbol_name(c.lhs);
                match c.rhs {
                    ClauseRhs::Literal(x) => format!("{lhs}={}", group.element_name(x).unwrap_or("?")),
                    ClauseRhs::Apply { prev, relation } => format!(
                        "{lhs}={}∘{}",
                        vocab.symbol_name(prev),
                        group.element_name(relation).unwrap_or("?")
                    ),
                }
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Inverse of [`render`](Self::render); values are recomputed.
    pub fn parse(text: &str, group: &GroupSpec, vocab: &VocabSpec) -> Result<Self, LegoError> {
        let malformed = |c: &str| LegoError::Malformed(format!("clause `{c}`"));
        let mut symbols = Vec::new();
        let mut relations = Vec::new();
        let mut start = None;
        for (t, clause) in text.split(';').enumerate() {
            let (lhs, rhs) = clause.split_once('=').ok_or_else(|| malformed(clause))?;
            symbols.push(vocab.symbol_index(lhs)?);
            match rhs.split_once('∘') {
                None if t == 0 => start = Some(group.element_id(rhs)?),
                Some((prev, rel)) if t > 0 => {
                    if vocab.symbol_index(prev)? != symbols[t - 1] {
                        return Err(malformed(clause));
                    }
                    relations.push(group.element_id(rel)?);
                }
                _ => return Err(malformed(clause)),
            }
        }
        let start = start.ok_or_else(|| malformed(text))?;
        Self::from_draws(group, start, &relations, &symbols)
    }
}

/// Draws a chain of length `length` from `exp`: the start uniformly from the
/// elements, each relation uniformly from those applicable at the current
/// state, and distinct symbols without replacement. Presentation is canonical.
pub fn sample_sequence<R: Rng + ?Sized>(
    exp: &ExperienceSpec,
    group: &GroupSpec,
    length: usize,
    num_symbols: usize,
    rng: &mut R,
) -> Result<LegoSequence, LegoError> {
    if length == 0 {
        return Err(LegoError::EmptySequence);
    }
    if length >= num_symbols {
        return Err(LegoError::InsufficientSymbols { length, available: num_symbols });
    }
    let start = *exp.elements.choose(rng).expect("experience has elements");
    let mut state = start;
    let mut relations = Vec::with_capacity(length - 1);
    for _ in 1..length {
        let options = exp.applicable(group, state);
        let r = *options.choose(rng).expect("identity is always applicable");
        state = group.compose(state, r)?;
        relations.push(r);
    }
    let symbols = index::sample(rng, num_symbols, length).into_vec();
    LegoSequence::from_draws(group, start, &relations, &symbols)
}

/// Replaces the presentation order with a uniformly random permutation.
pub fn shuffle_presentation<R: Rng + ?Sized>(seq: &LegoSequence, rng: &mut R) -> LegoSequence {
    let mut out = seq.clone();
    out.presentation = (0..seq.len()).collect();
    out.presentation.shuffle(rng);
    out
}

/// Recomputes the targets by interpreting the clauses one at a time against
/// the Cayley table, ignoring stored values.
pub fn oracle_solve(seq: &LegoSequence, group: &GroupSpec) -> Result<Vec<usize>, LegoError> {
    let mut bound: HashMap<usize, usize> = HashMap::new();
    let mut out = Vec::with_capacity(seq.len());
    for clause in &seq.clauses {
        let value = match clause.rhs {
            ClauseRhs::Literal(x) => x,
            ClauseRhs::Apply { prev, relation } => {
                let base = bound
                    .get(&prev)
                    .ok_or_else(|| LegoError::Malformed(format!("symbol {prev} used before assignment")))?;
                group.compose(*base, relation)?
            }
        };
        if bound.insert(clause.lhs, value).is_some() {
            return Err(LegoError::Malformed(format!("symbol {} assigned twice", clause.lhs)));
        }
        out.push(value);
    }
    Ok(out)
}
