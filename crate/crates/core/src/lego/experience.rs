use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::LegoError;
use crate::groups::{GroupSpec, D3_NAMES};

/// One phase of the continual task: the states a chain may visit and the
/// relations it may apply.
///
/// A relation is *applicable* at a state when it keeps the chain inside
/// `elements`. Flip-flop experiences are closed (every relation applies at
/// every state); stitched and full experiences are not, and sampling draws
/// uniformly among the relations applicable at the current state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceSpec {
    pub name: String,
    pub elements: Vec<usize>,
    pub relations: Vec<usize>,
}

impl ExperienceSpec {
    /// Validates ids, membership of the identity among the relations, and
    /// that the non-identity transitions connect every element to every other.
    pub fn new(
        name: impl Into<String>,
        elements: Vec<usize>,
        relations: Vec<usize>,
        group: &GroupSpec,
    ) -> Result<Self, LegoError> {
        let name = name.into();
        let invalid = |reason: String| LegoError::InvalidExperience { name: name.clone(), reason };
        let mut elements = elements;
        let mut relations = relations;
        elements.sort_unstable();
        elements.dedup();
        relations.sort_unstable();
        relations.dedup();
        if elements.is_empty() {
            return Err(invalid("no elements".into()));
        }
        for &x in elements.iter().chain(&relations) {
            group.element_name(x)?;
        }
        if !relations.contains(&group.identity()) {
            return Err(invalid("relations must contain the identity".into()));
        }
        let exp = Self { name: name.clone(), elements, relations };
        if !exp.is_connected(group) {
            return Err(invalid("elements are not mutually reachable under the relations".into()));
        }
        Ok(exp)
    }

    pub fn applicable(&self, group: &GroupSpec, state: usize) -> Vec<usize> {
        self.relations
            .iter()
            .copied()
            .filter(|&r| group.compose(state, r).map(|s| self.elements.contains(&s)).unwrap_or(false))
            .collect()
    }

    /// Every element composed with every relation stays in the element set.
    pub fn is_closed(&self, group: &GroupSpec) -> bool {
        self.elements.iter().all(|&s| self.applicable(group, s).len() == self.relations.len())
    }

    fn is_connected(&self, group: &GroupSpec) -> bool {
        self.elements.iter().all(|&start| {
            let mut seen = BTreeSet::from([start]);
            let mut frontier = vec![start];
            while let Some(s) = frontier.pop() {
                for r in self.applicable(group, s) {
                    let next = group.compose(s, r).expect("applicable relations are valid");
                    if seen.insert(next) {
                        frontier.push(next);
                    }
                }
            }
            seen.len() == self.elements.len()
        })
    }

    pub fn describe(&self, group: &GroupSpec) -> String {
        let names = |ids: &[usize]| {
            ids.iter().map(|&i| group.element_name(i).unwrap_or("?")).collect::<Vec<_>>().join(",")
        };
        format!("{} elements={} relations={}", self.name, names(&self.elements), names(&self.relations))
    }

    /// Inverse of [`describe`](Self::describe).
    pub fn parse(line: &str, group: &GroupSpec) -> Result<Self, LegoError> {
        let malformed = || LegoError::Malformed(format!("experience line `{line}`"));
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(malformed)?;
        let mut ids = |prefix: &str| -> Result<Vec<usize>, LegoError> {
            let field = parts.next().and_then(|p| p.strip_prefix(prefix)).ok_or_else(malformed)?;
            field.split(',').map(|n| group.element_id(n).map_err(LegoError::from)).collect()
        };
        let elements = ids("elements=")?;
        let relations = ids("relations=")?;
        Self::new(name, elements, relations, group)
    }
}

fn require_d3(group: &GroupSpec) -> Result<(), LegoError> {
    let names: Vec<&str> = group.elements().iter().map(|e| e.name.as_str()).collect();
    if names != D3_NAMES {
        return Err(LegoError::UnsupportedGroup(group.name().to_string()));
    }
    Ok(())
}

fn named(group: &GroupSpec, names: &[&str]) -> Result<Vec<usize>, LegoError> {
    names.iter().map(|n| group.element_id(n).map_err(LegoError::from)).collect()
}

/// The three flip-flop experiences over D3.
pub fn make_flipflop_experiences(group: &GroupSpec) -> Result<Vec<ExperienceSpec>, LegoError> {
    require_d3(group)?;
    let defs: [(&str, [&str; 2], [&str; 2]); 3] = [
        ("flipflop-1", ["spin", "mirror"], ["val", "reflect"]),
        ("flipflop-2", ["rotate", "reflect"], ["val", "mirror"]),
        ("flipflop-3", ["val", "flip"], ["val", "flip"]),
    ];
    defs.iter()
        .map(|(name, els, rels)| {
            let exp = ExperienceSpec::new(*name, named(group, els)?, named(group, rels)?, group)?;
            debug_assert!(exp.is_closed(group));
            Ok(exp)
        })
        .collect()
}

/// All two-element flip-flops: pairs `{x, x∘r}` swapped by an involution `r`,
/// enumerated by relation id, then by smaller element id.
fn flipflop_candidates(group: &GroupSpec) -> Vec<(usize, [usize; 2])> {
    let e = group.identity();
    let mut out = Vec::new();
    for r in 0..group.order() {
        if r == e || group.element_order(r).ok() != Some(2) {
            continue;
        }
        for x in 0..group.order() {
            let y = group.compose(x, r).expect("valid ids");
            if x < y {
                out.push((r, [x, y]));
            }
        }
    }
    out
}

/// Compositional flip-flop experiences with the default anchor (the first
/// flip-flop experience) and two experiences.
pub fn make_compositional_experiences(group: &GroupSpec) -> Result<Vec<ExperienceSpec>, LegoError> {
    let anchor = make_flipflop_experiences(group)?.remove(0);
    make_compositional_experiences_with(group, &anchor, 2)
}

/// Greedy search for `count` flip-flop experiences starting at `anchor`. Each
/// new experience shares exactly one element with the previous one, adds one
/// element not yet covered, and uses a relation not used so far.
pub fn make_compositional_experiences_with(
    group: &GroupSpec,
    anchor: &ExperienceSpec,
    count: usize,
) -> Result<Vec<ExperienceSpec>, LegoError> {
    require_d3(group)?;
    let e = group.identity();
    let anchor_rel: Vec<usize> = anchor.relations.iter().copied().filter(|&r| r != e).collect();
    if anchor.elements.len() != 2 || anchor_rel.len() != 1 || !anchor.is_closed(group) {
        return Err(LegoError::Construction(format!("anchor `{}` is not a flip-flop experience", anchor.name)));
    }
    let mut out = vec![ExperienceSpec { name: "compositional-1".into(), ..anchor.clone() }];
    let mut used_relations = anchor_rel;
    let mut covered: BTreeSet<usize> = anchor.elements.iter().copied().collect();
    let candidates = flipflop_candidates(group);
    while out.len() < count {
        let prev = &out.last().expect("non-empty").elements;
        let next = candidates.iter().find(|(r, pair)| {
            let shared = pair.iter().filter(|x| prev.contains(x)).count();
            let fresh = pair.iter().filter(|x| !covered.contains(x)).count();
            !used_relations.contains(r) && shared == 1 && fresh == 1
        });
        let Some(&(r, pair)) = next else {
            return Err(LegoError::Construction(format!(
                "no flip-flop overlaps compositional-{} in exactly one element",
                out.len()
            )));
        };
        used_relations.push(r);
        covered.extend(pair);
        let name = format!("compositional-{}", out.len() + 1);
        out.push(ExperienceSpec::new(name, pair.to_vec(), vec![e, r], group)?);
    }
    Ok(out)
}

fn union(name: &str, parts: &[ExperienceSpec], group: &GroupSpec) -> Result<ExperienceSpec, LegoError> {
    let elements: BTreeSet<usize> = parts.iter().flat_map(|p| p.elements.iter().copied()).collect();
    let relations: BTreeSet<usize> = parts
        .iter()
        .flat_map(|p| p.relations.iter().copied())
        .chain([group.identity()])
        .collect();
    ExperienceSpec::new(name, elements.into_iter().collect(), relations.into_iter().collect(), group)
        .map_err(|err| LegoError::Construction(format!("cannot complete `{name}`: {err}")))
}

/// The full task: the union of the compositional experiences' elements, with
/// the identity and every compositional relation. Chains move between
/// experiences through the shared elements.
pub fn make_full_experience(
    compositional: &[ExperienceSpec],
    group: &GroupSpec,
) -> Result<ExperienceSpec, LegoError> {
    if compositional.is_empty() {
        return Err(LegoError::Construction("no compositional experiences".into()));
    }
    union("full", compositional, group)
}

/// Incremental schedule: the first compositional experience, then the union
/// of the experiences seen so far at each later step, ending with the full
/// task.
pub fn make_incremental_experiences(
    compositional: &[ExperienceSpec],
    full: &ExperienceSpec,
    group: &GroupSpec,
) -> Result<Vec<ExperienceSpec>, LegoError> {
    if compositional.is_empty() {
        return Err(LegoError::Construction("no compositional experiences".into()));
    }
    let mut out = vec![ExperienceSpec { name: "incremental-1".into(), ..compositional[0].clone() }];
    for k in 2..=compositional.len() {
        out.push(union(&format!("incremental-{k}"), &compositional[..k], group)?);
    }
    out.push(full.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::build_dihedral;

    fn ids(g: &GroupSpec, names: &[&str]) -> Vec<usize> {
        let mut v = named(g, names).unwrap();
        v.sort();
        v
    }

    #[test]
    fn flipflop_definitions() {
        let g = build_dihedral(3).unwrap();
        let exps = make_flipflop_experiences(&g).unwrap();
        assert_eq!(exps.len(), 3);
        assert_eq!(exps[0].relations, ids(&g, &["val", "reflect"]));
        assert_eq!(exps[0].elements, ids(&g, &["spin", "mirror"]));
        assert_eq!(exps[1].elements, ids(&g, &["rotate", "reflect"]));
        assert_eq!(exps[1].relations, ids(&g, &["val", "mirror"]));
        assert_eq!(exps[2].elements, ids(&g, &["val", "flip"]));
        assert_eq!(exps[2].elements, exps[2].relations);
        assert!(exps.iter().all(|e| e.is_closed(&g)));
    }

    #[test]
    fn flipflop_needs_d3() {
        let g = build_dihedral(4).unwrap();
        assert!(matches!(make_flipflop_experiences(&g), Err(LegoError::UnsupportedGroup(_))));
    }

    #[test]
    fn compositional_default() {
        let g = build_dihedral(3).unwrap();
        let c = make_compositional_experiences(&g).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].elements, ids(&g, &["spin", "mirror"]));
        assert_eq!(c[0].relations, ids(&g, &["val", "reflect"]));
        assert_eq!(c[1].elements, ids(&g, &["rotate", "mirror"]));
        assert_eq!(c[1].relations, ids(&g, &["val", "flip"]));
        assert_eq!(g.compose_names("mirror", "flip").unwrap(), "rotate");
        let shared = c[0].elements.iter().filter(|x| c[1].elements.contains(x)).count();
        assert_eq!(shared, 1);
        assert!(c.iter().all(|e| e.is_closed(&g)));
    }

    #[test]
    fn compositional_three_and_too_many() {
        let g = build_dihedral(3).unwrap();
        let anchor = make_flipflop_experiences(&g).unwrap().remove(0);
        let c = make_compositional_experiences_with(&g, &anchor, 3).unwrap();
        assert_eq!(c.len(), 3);
        assert!(make_compositional_experiences_with(&g, &anchor, 4).is_err());
    }

    #[test]
    fn full_and_incremental() {
        let g = build_dihedral(3).unwrap();
        let c = make_compositional_experiences(&g).unwrap();
        let full = make_full_experience(&c, &g).unwrap();
        assert_eq!(full.elements, ids(&g, &["rotate", "spin", "mirror"]));
        assert_eq!(full.relations, ids(&g, &["val", "flip", "reflect"]));
        assert!(!full.is_closed(&g));
        let inc = make_incremental_experiences(&c, &full, &g).unwrap();
        assert_eq!(inc.len(), 3);
        assert_eq!(inc[0].elements, c[0].elements);
        assert_eq!(inc[0].relations, c[0].relations);
        assert_eq!(inc.last().unwrap(), &full);
    }

    #[test]
    fn rejects_disconnected_or_identity_free() {
        let g = build_dihedral(3).unwrap();
        let r = ExperienceSpec::new("x", ids(&g, &["spin", "mirror"]), ids(&g, &["reflect"]), &g);
        assert!(r.is_err());
        let r = ExperienceSpec::new("x", ids(&g, &["spin", "flip"]), ids(&g, &["val", "reflect"]), &g);
        assert!(r.is_err());
    }

    #[test]
    fn describe_parse_round_trip() {
        let g = build_dihedral(3).unwrap();
        for e in make_flipflop_experiences(&g).unwrap() {
            assert_eq!(ExperienceSpec::parse(&e.describe(&g), &g).unwrap(), e);
        }
    }
}
