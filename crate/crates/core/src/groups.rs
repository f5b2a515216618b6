//! Finite groups given by Cayley tables.
//!
//! Dihedral groups are built from their permutation representation on the
//! vertices of a regular k-gon. Composition follows the clause semantics of
//! the task: `compose(a, b)` is the state `a` acted on by `b`, i.e. the
//! permutation `a` followed by the permutation `b`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical D3 token names, in id order. `val` is the identity.
pub const D3_NAMES: [&str; 6] = ["val", "rotate", "spin", "flip", "reflect", "mirror"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("dihedral order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("element id {id} out of range for group of order {order}")]
    InvalidElement { id: usize, order: usize },
    #[error("unknown element name `{0}`")]
    UnknownName(String),
    #[error("duplicate element name `{0}`")]
    DuplicateName(String),
    #[error("cayley table must be {n}x{n}, got {rows} rows")]
    TableShape { n: usize, rows: usize },
    #[error("no assignment of D3 names satisfies the reference compositions")]
    NoNameBinding,
    #[error("malformed group manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub id: usize,
    pub name: String,
}

/// `table[a * n + b]` is the id of `a ∘ b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CayleyTable {
    n: usize,
    table: Vec<usize>,
}

impl CayleyTable {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self, GroupError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GroupError::TableShape { n, rows: rows.len() });
        }
        Ok(Self { n, table: rows.into_iter().flatten().collect() })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Raw entry; may be out of range for a corrupted table.
    pub fn entry(&self, a: usize, b: usize) -> usize {
        self.table[a * self.n + b]
    }

    pub fn set_entry(&mut self, a: usize, b: usize, value: usize) {
        self.table[a * self.n + b] = value;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    name: String,
    elements: Vec<GroupElement>,
    identity: usize,
    cayley: CayleyTable,
}

/// A failed group axiom together with its witnesses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Closure { a: usize, b: usize, value: usize },
    Associativity { a: usize, b: usize, c: usize },
    Identity { x: usize },
    Inverse { x: usize, left: usize, right: usize },
    LatinSquare { row: Option<usize>, column: Option<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Closure { a, b, value } => {
                write!(f, "closure: {a}∘{b} = {value} is not an element")
            }
            Violation::Associativity { a, b, c } => {
                write!(f, "associativity: ({a}∘{b})∘{c} != {a}∘({b}∘{c})")
            }
            Violation::Identity { x } => write!(f, "identity: e∘{x} or {x}∘e differs from {x}"),
            Violation::Inverse { x, left, right } => write!(
                f,
                "inverse: {x} has {left} left and {right} right inverses (expected one two-sided)"
            ),
            Violation::LatinSquare { row: Some(r), .. } => {
                write!(f, "closure: row {r} is not a permutation")
            }
            Violation::LatinSquare { column, .. } => {
                write!(f, "closure: column {} is not a permutation", column.unwrap_or(0))
            }
        }
    }
}

impl GroupSpec {
    /// Assembles a group from names, table rows and identity. Only shape and
    /// name uniqueness are checked here; use [`validate_group`] for axioms.
    pub fn from_parts(
        name: impl Into<String>,
        names: &[&str],
        rows: Vec<Vec<usize>>,
        identity: usize,
    ) -> Result<Self, GroupError> {
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(*n) {
                return Err(GroupError::DuplicateName(n.to_string()));
            }
        }
        let cayley = CayleyTable::from_rows(rows)?;
        if cayley.order() != names.len() {
            return Err(GroupError::TableShape { n: names.len(), rows: cayley.order() });
        }
        if identity >= names.len() {
            return Err(GroupError::InvalidElement { id: identity, order: names.len() });
        }
        let elements = names
            .iter()
            .enumerate()
            .map(|(id, n)| GroupElement { id, name: n.to_string() })
            .collect();
        Ok(Self { name: name.into(), elements, identity, cayley })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn cayley(&self) -> &CayleyTable {
        &self.cayley
    }

    pub fn cayley_mut(&mut self) -> &mut CayleyTable {
        &mut self.cayley
    }

    pub fn element_name(&self, id: usize) -> Result<&str, GroupError> {
        self.check(id)?;
        Ok(&self.elements[id].name)
    }

    pub fn element_id(&self, name: &str) -> Result<usize, GroupError> {
        self.elements
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.id)
            .ok_or_else(|| GroupError::UnknownName(name.to_string()))
    }

    fn check(&self, id: usize) -> Result<(), GroupError> {
        if id < self.order() {
            Ok(())
        } else {
            Err(GroupError::InvalidElement { id, order: self.order() })
        }
    }

    /// `a ∘ b`: state `a` acted on by `b`.
    pub fn compose(&self, a: usize, b: usize) -> Result<usize, GroupError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.cayley.entry(a, b))
    }

    pub fn compose_names(&self, a: &str, b: &str) -> Result<&str, GroupError> {
        let c = self.compose(self.element_id(a)?, self.element_id(b)?)?;
        self.element_name(c)
    }

    pub fn inverse(&self, a: usize) -> Result<usize, GroupError> {
        self.check(a)?;
        (0..self.order())
            .find(|&b| self.cayley.entry(a, b) == self.identity && self.cayley.entry(b, a) == self.identity)
            .ok_or(GroupError::InvalidElement { id: a, order: self.order() })
    }

    pub fn element_order(&self, a: usize) -> Result<usize, GroupError> {
        self.check(a)?;
        let mut acc = a;
        for m in 1..=self.order() {
            if acc == self.identity {
                return Ok(m);
            }
            acc = self.compose(acc, a)?;
        }
        // a group element's order divides the group order; reaching here means
        // the table is not a group
        Err(GroupError::InvalidElement { id: a, order: self.order() })
    }

    /// Text manifest: a header line, the element names in id order, and one
    /// table row of names per element.
    pub fn to_manifest(&self) -> String {
        let names: Vec<&str> = self.elements.iter().map(|e| e.name.as_str()).collect();
        let mut out = format!(
            "group {} order={} identity={}\nelements {}\n",
            self.name,
            self.order(),
            names[self.identity],
            names.join(" ")
        );
        for a in 0..self.order() {
            let row: Vec<&str> = (0..self.order()).map(|b| names[self.cayley.entry(a, b)]).collect();
            out.push_str(&format!("row {} : {}\n", names[a], row.join(" ")));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self, GroupError> {
        let bad = |m: &str| GroupError::Manifest(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty manifest"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("group") {
            return Err(bad("expected `group` header"));
        }
        let gname = parts.next().ok_or_else(|| bad("missing group name"))?;
        let identity_name = parts
            .find_map(|p| p.strip_prefix("identity="))
            .ok_or_else(|| bad("missing identity"))?;
        let elem_line = lines.next().ok_or_else(|| bad("missing elements line"))?;
        let names: Vec<&str> = elem_line
            .strip_prefix("elements ")
            .ok_or_else(|| bad("expected `elements` line"))?
            .split_whitespace()
            .collect();
        let lookup = |n: &str| {
            names.iter().position(|x| *x == n).ok_or_else(|| GroupError::UnknownName(n.to_string()))
        };
        let mut rows = Vec::with_capacity(names.len());
        for (a, line) in lines.take(names.len()).enumerate() {
            let (head, body) = line.split_once(':').ok_or_else(|| bad("expected `row x : ...`"))?;
            if head.trim() != format!("row {}", names[a]) {
                return Err(bad(&format!("row {a} out of order")));
            }
            rows.push(body.split_whitespace().map(lookup).collect::<Result<Vec<_>, _>>()?);
        }
        if rows.len() != names.len() {
            return Err(GroupError::TableShape { n: names.len(), rows: rows.len() });
        }
        let identity = lookup(identity_name)?;
        Self::from_parts(gname, &names, rows, identity)
    }
}

/// Symmetries of a regular k-gon as vertex permutations. Rotation `r_i` maps
/// vertex `v` to `v + i`, reflection `s_i` maps `v` to `i - v` (mod k).
fn dihedral_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 2 {
        // a 2-gon's vertices alone cannot tell its four symmetries apart, so
        // also track which face is up: point v + 2 * side
        let rotations = (0..2).map(|i| (0..4).map(|p| (p % 2 + i) % 2 + 2 * (p / 2)).collect());
        let reflections = (0..2).map(|i| (0..4).map(|p| (i + 2 - p % 2) % 2 + 2 * (1 - p / 2)).collect());
        return rotations.chain(reflections).collect();
    }
    let rotations = (0..k).map(|i| (0..k).map(|v| (v + i) % k).collect());
    let reflections = (0..k).map(|i| (0..k).map(|v| (i + k - v) % k).collect());
    rotations.chain(reflections).collect()
}

/// `a` followed by `b`.
fn then(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().map(|&v| b[v]).collect()
}

fn table_from_perms(perms: &[Vec<usize>]) -> Vec<Vec<usize>> {
    perms
        .iter()
        .map(|a| {
            perms
                .iter()
                .map(|b| {
                    let c = then(a, b);
                    perms.iter().position(|p| *p == c).expect("dihedral set is closed")
                })
                .collect()
        })
        .collect()
}

/// Compositions every D3 name binding must reproduce: the three worked
/// flip-flop experiences (element ∘ relation pairs in both directions) and the
/// stated inverse facts.
pub const D3_REFERENCE_COMPOSITIONS: [(&str, &str, &str); 14] = [
    ("spin", "val", "spin"),
    ("spin", "reflect", "mirror"),
    ("mirror", "reflect", "spin"),
    ("rotate", "val", "rotate"),
    ("rotate", "mirror", "reflect"),
    ("reflect", "mirror", "rotate"),
    ("val", "flip", "flip"),
    ("flip", "flip", "val"),
    ("rotate", "spin", "val"),
    ("spin", "rotate", "val"),
    ("reflect", "reflect", "val"),
    ("mirror", "mirror", "val"),
    ("val", "val", "val"),
    ("reflect", "val", "reflect"),
];

fn bind_d3_names(perms: &[Vec<usize>]) -> Result<Vec<Vec<usize>>, GroupError> {
    let ident: Vec<usize> = (0..3).collect();
    let is_cycle = |p: &Vec<usize>| *p != ident && p.iter().enumerate().all(|(i, &v)| v != i);
    let cycles: Vec<&Vec<usize>> = perms.iter().filter(|p| is_cycle(p)).collect();
    let transpositions: Vec<&Vec<usize>> =
        perms.iter().filter(|p| **p != ident && !is_cycle(p)).collect();

    let orders2 = [[0, 1], [1, 0]];
    let orders3 = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for c in &orders2 {
        for t in &orders3 {
            // id order follows D3_NAMES
            let candidate: Vec<Vec<usize>> = vec![
                ident.clone(),
                cycles[c[0]].clone(),
                cycles[c[1]].clone(),
                transpositions[t[0]].clone(),
                transpositions[t[1]].clone(),
                transpositions[t[2]].clone(),
            ];
            let id = |n: &str| D3_NAMES.iter().position(|x| *x == n).unwrap();
            let ok = D3_REFERENCE_COMPOSITIONS
                .iter()
                .all(|(a, b, c)| then(&candidate[id(a)], &candidate[id(b)]) == candidate[id(c)]);
            if ok {
                return Ok(candidate);
            }
        }
    }
    Err(GroupError::NoNameBinding)
}

/// The dihedral group of order `2k`.
///
/// For `k = 3` the elements carry the task vocabulary (`val`, `rotate`,
/// `spin`, `flip`, `reflect`, `mirror`) in that id order, bound by searching
/// for the assignment under which every reference composition holds. Other
/// orders use `r0..r{k-1}` for rotations and `s0..s{k-1}` for reflections.
pub fn build_dihedral(k: usize) -> Result<GroupSpec, GroupError> {
    if k < 2 {
        return Err(GroupError::InvalidOrder(k));
    }
    let perms = dihedral_permutations(k);
    if k == 3 {
        let bound = bind_d3_names(&perms)?;
        return GroupSpec::from_parts("D3", &D3_NAMES, table_from_perms(&bound), 0);
    }
    let names: Vec<String> = (0..k).map(|i| format!("r{i}")).chain((0..k).map(|i| format!("s{i}"))).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    GroupSpec::from_parts(format!("D{k}"), &refs, table_from_perms(&perms), 0)
}

/// Checks closure, the Latin-square property, identity, inverses and
/// associativity. Returns every violation found; empty means `g` is a group.
pub fn validate_group(g: &GroupSpec) -> Vec<Violation> {
    let n = g.order();
    let t = g.cayley();
    let e = g.identity();
    let mut out = Vec::new();

    for a in 0..n {
        for b in 0..n {
            let v = t.entry(a, b);
            if v >= n {
                out.push(Violation::Closure { a, b, value: v });
            }
        }
    }
    if !out.is_empty() {
        // further checks index the table with its own entries
        return out;
    }

    for r in 0..n {
        let mut seen = vec![false; n];
        if (0..n).any(|c| std::mem::replace(&mut seen[t.entry(r, c)], true)) {
            out.push(Violation::LatinSquare { row: Some(r), column: None });
        }
    }
    for c in 0..n {
        let mut seen = vec![false; n];
        if (0..n).any(|r| std::mem::replace(&mut seen[t.entry(r, c)], true)) {
            out.push(Violation::LatinSquare { row: None, column: Some(c) });
        }
    }
    for x in 0..n {
        if t.entry(e, x) != x || t.entry(x, e) != x {
            out.push(Violation::Identity { x });
        }
    }
    for x in 0..n {
        let right = (0..n).filter(|&y| t.entry(x, y) == e).count();
        let left = (0..n).filter(|&y| t.entry(y, x) == e).count();
        let two_sided = (0..n).any(|y| t.entry(x, y) == e && t.entry(y, x) == e);
        if right != 1 || left != 1 || !two_sided {
            out.push(Violation::Inverse { x, left, right });
        }
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if t.entry(t.entry(a, b), c) != t.entry(a, t.entry(b, c)) {
                    out.push(Violation::Associativity { a, b, c });
                }
            }
        }
    }
    out
}
