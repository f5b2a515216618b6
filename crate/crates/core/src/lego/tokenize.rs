use serde::{Deserialize, Serialize};

use super::{Clause, ClauseRhs, LegoError, LegoSequence, VocabSpec};
use crate::groups::GroupSpec;

/// Token ids for one sequence in presentation order.
///
/// Layout per clause: `[sym, =, elem]` for the opening clause and
/// `[sym, =, prev, ∘, rel]` otherwise, with `;` between clauses. The label of a
/// clause sits on its leading symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub tokens: Vec<u32>,
    /// Target element id at each clause's leading symbol, `None` elsewhere.
    pub labels: Vec<Option<usize>>,
    /// Canonical clause index of each token; `None` for separators.
    pub clause_index: Vec<Option<usize>>,
    /// Token position of canonical clause `t`'s leading symbol.
    pub label_positions: Vec<usize>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_clauses(&self) -> usize {
        self.label_positions.len()
    }

    /// Token count for a chain of `t` clauses.
    pub fn token_count(t: usize) -> usize {
        if t == 0 {
            0
        } else {
            3 + 5 * (t - 1) + (t - 1)
        }
    }
}

pub fn tokenize(seq: &LegoSequence, vocab: &VocabSpec) -> Result<TokenizedExample, LegoError> {
    let n = TokenizedExample::token_count(seq.len());
    let mut tokens = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut clause_index = Vec::with_capacity(n);
    let mut label_positions = vec![0; seq.len()];
    let check_symbol = |s: usize| {
        if s < vocab.num_symbols() {
            Ok(vocab.symbol(s))
        } else {
            Err(LegoError::UnknownToken(format!("symbol #{s}")))
        }
    };
    let check_element = |x: usize| {
        if x < vocab.num_elements() {
            Ok(vocab.element(x))
        } else {
            Err(LegoError::UnknownToken(format!("element #{x}")))
        }
    };
    for (k, &c) in seq.presentation.iter().enumerate() {
        let clause = seq.clauses.get(c).ok_or_else(|| LegoError::Malformed(format!("presentation index {c}")))?;
        if k > 0 {
            tokens.push(vocab.sep());
            labels.push(None);
            clause_index.push(None);
        }
        label_positions[c] = tokens.len();
        let body: Vec<u32> = match clause.rhs {
            ClauseRhs::Literal(x) => vec![check_symbol(clause.lhs)?, vocab.assign(), check_element(x)?],
            ClauseRhs::Apply { prev, relation } => vec![
                check_symbol(clause.lhs)?,
                vocab.assign(),
                check_symbol(prev)?,
                vocab.apply(),
                check_element(relation)?,
            ],
        };
        labels.push(Some(clause.value));
        labels.extend(std::iter::repeat_n(None, body.len() - 1));
        clause_index.extend(std::iter::repeat_n(Some(c), body.len()));
        tokens.extend(body);
    }
    Ok(TokenizedExample { tokens, labels, clause_index, label_positions })
}

/// Parses presentation-order tokens back into a sequence, recovering the
/// canonical order by following symbol references from the opening clause.
pub fn detokenize(tokens: &[u32], vocab: &VocabSpec, group: &GroupSpec) -> Result<LegoSequence, LegoError> {
    let malformed = |m: &str| LegoError::Malformed(m.to_string());
    let mut presented: Vec<(usize, ClauseRhs)> = Vec::new();
    for chunk in tokens.split(|&t| t == vocab.sep()) {
        let sym = |t: u32| vocab.as_symbol(t).ok_or_else(|| malformed("expected symbol"));
        let elem = |t: u32| vocab.as_element(t).ok_or_else(|| malformed("expected element"));
        match *chunk {
            [lhs, a, x] if a == vocab.assign() => presented.push((sym(lhs)?, ClauseRhs::Literal(elem(x)?))),
            [lhs, a, prev, o, rel] if a == vocab.assign() && o == vocab.apply() => {
                presented.push((sym(lhs)?, ClauseRhs::Apply { prev: sym(prev)?, relation: elem(rel)? }))
            }
            _ => return Err(malformed("clause has an unexpected shape")),
        }
    }
    let first = presented
        .iter()
        .position(|(_, rhs)| matches!(rhs, ClauseRhs::Literal(_)))
        .ok_or_else(|| malformed("no opening clause"))?;
    let mut canonical_of = vec![usize::MAX; presented.len()];
    let mut order = vec![first];
    canonical_of[first] = 0;
    while order.len() < presented.len() {
        let current = presented[*order.last().expect("non-empty")].0;
        let next = presented
            .iter()
            .position(|(_, rhs)| matches!(rhs, ClauseRhs::Apply { prev, .. } if *prev == current))
            .ok_or_else(|| malformed("chain is broken"))?;
        if canonical_of[next] != usize::MAX {
            return Err(malformed("chain has a cycle"));
        }
        canonical_of[next] = order.len();
        order.push(next);
    }
    let mut clauses = Vec::with_capacity(order.len());
    let mut state = 0;
    for &p in &order {
        let (lhs, rhs) = presented[p];
        state = match rhs {
            ClauseRhs::Literal(x) => x,
            ClauseRhs::Apply { relation, .. } => group.compose(state, relation)?,
        };
        clauses.push(Clause { lhs, rhs, value: state });
    }
    Ok(LegoSequence { clauses, presentation: canonical_of })
}
