//! Finite probability spaces with partition-generated sigma-algebras.
//!
//! A space is a triple (outcomes, atoms, measure): the atoms are a partition of
//! the outcome set and generate the sigma-algebra, so an event is measurable
//! exactly when it is a union of atom blocks. Measures assign an exact
//! nonnegative rational mass to each atom and must total 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::rational::{format_rational, Rat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("space `{space}`: duplicate outcome `{outcome}`")]
    DuplicateOutcome { space: String, outcome: String },
    #[error("space `{space}`: atoms do not partition the outcomes: {detail}")]
    NotAPartition { space: String, detail: String },
    #[error("space `{space}`: atom {} has negative mass {}", block_label(atom), format_rational(mass))]
    NegativeMass {
        space: String,
        atom: BTreeSet<String>,
        mass: Rat,
    },
    #[error("space `{space}`: atom masses sum to {} (deficit {})", format_rational(total), format_rational(deficit))]
    MassNotOne {
        space: String,
        total: Rat,
        deficit: Rat,
    },
    #[error("space `{space}`: unknown outcome `{outcome}`")]
    UnknownOutcome { space: String, outcome: String },
    #[error("space `{space}`: event {} straddles atom {}", block_label(event), block_label(atom))]
    NotMeasurable {
        space: String,
        event: BTreeSet<String>,
        atom: BTreeSet<String>,
    },
    #[error("map is not total: outcome `{outcome}` of `{space}` has no image")]
    MissingImage { space: String, outcome: String },
}

pub(crate) fn block_label(block: &BTreeSet<String>) -> String {
    let mut s = String::from("{");
    for (i, o) in block.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(o);
    }
    s.push('}');
    s
}

/// Outcomes and generating partition of a space, without a measure.
///
/// Used as the target description when building a pushforward: the measure is
/// what the pushforward computes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceSkeleton {
    id: String,
    outcomes: Vec<String>,
    atoms: Vec<BTreeSet<String>>,
    atom_of: HashMap<String, usize>,
}

impl SpaceSkeleton {
    pub fn new(
        id: impl Into<String>,
        outcomes: Vec<String>,
        atoms: Vec<BTreeSet<String>>,
    ) -> Result<Self, MeasureError> {
        let id = id.into();
        if outcomes.is_empty() {
            return Err(MeasureError::NotAPartition {
                space: id,
                detail: "outcome list is empty".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for o in &outcomes {
            if !seen.insert(o.clone()) {
                return Err(MeasureError::DuplicateOutcome {
                    space: id,
                    outcome: o.clone(),
                });
            }
        }
        let mut atom_of = HashMap::new();
        for (i, block) in atoms.iter().enumerate() {
            if block.is_empty() {
                return Err(MeasureError::NotAPartition {
                    space: id,
                    detail: format!("atom #{i} is empty"),
                });
            }
            for o in block {
                if !seen.contains(o) {
                    return Err(MeasureError::UnknownOutcome {
                        space: id,
                        outcome: o.clone(),
                    });
                }
                if atom_of.insert(o.clone(), i).is_some() {
                    return Err(MeasureError::NotAPartition {
                        space: id,
                        detail: format!("outcome `{o}` appears in two atoms"),
                    });
                }
            }
        }
        if atom_of.len() != outcomes.len() {
            let missing = outcomes
                .iter()
                .find(|o| !atom_of.contains_key(*o))
                .expect("count mismatch implies an uncovered outcome");
            return Err(MeasureError::NotAPartition {
                space: id,
                detail: format!("outcome `{missing}` is not covered by any atom"),
            });
        }
        Ok(SpaceSkeleton {
            id,
            outcomes,
            atoms,
            atom_of,
        })
    }

    /// Skeleton with singleton atoms (the full powerset sigma-algebra).
    pub fn discrete(id: impl Into<String>, outcomes: Vec<String>) -> Result<Self, MeasureError> {
        let atoms = outcomes
            .iter()
            .map(|o| BTreeSet::from([o.clone()]))
            .collect();
        SpaceSkeleton::new(id, outcomes, atoms)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn atoms(&self) -> &[BTreeSet<String>] {
        &self.atoms
    }

    pub fn has_outcome(&self, outcome: &str) -> bool {
        self.atom_of.contains_key(outcome)
    }

    pub fn atom_index_of(&self, outcome: &str) -> Option<usize> {
        self.atom_of.get(outcome).copied()
    }

    /// True iff `members` is a union of atom blocks; on failure returns the
    /// first straddled atom.
    pub fn union_of_atoms(&self, members: &BTreeSet<String>) -> Result<(), BTreeSet<String>> {
        for (i, block) in self.atoms.iter().enumerate() {
            let inside = block.intersection(members).count();
            if inside != 0 && inside != block.len() {
                return Err(self.atoms[i].clone());
            }
        }
        Ok(())
    }
}

/// A labeled finite probability space: sample space, generating partition, and
/// an exact measure on the partition's atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteProbSpace {
    skeleton: SpaceSkeleton,
    masses: Vec<Rat>,
}

impl FiniteProbSpace {
    pub fn new(
        id: impl Into<String>,
        outcomes: Vec<String>,
        atoms: Vec<BTreeSet<String>>,
        masses: Vec<Rat>,
    ) -> Result<Self, MeasureError> {
        let skeleton = SpaceSkeleton::new(id, outcomes, atoms)?;
        FiniteProbSpace::from_skeleton(skeleton, masses)
    }

    pub fn from_skeleton(skeleton: SpaceSkeleton, masses: Vec<Rat>) -> Result<Self, MeasureError> {
        if masses.len() != skeleton.atoms.len() {
            return Err(MeasureError::NotAPartition {
                space: skeleton.id,
                detail: format!(
                    "{} atoms but {} masses",
                    skeleton.atoms.len(),
                    masses.len()
                ),
            });
        }
        for (block, mass) in skeleton.atoms.iter().zip(&masses) {
            if mass < &Rat::zero() {
                return Err(MeasureError::NegativeMass {
                    space: skeleton.id,
                    atom: block.clone(),
                    mass: mass.clone(),
                });
            }
        }
        let total: Rat = masses.iter().sum();
        if !total.is_one() {
            let deficit = Rat::one() - &total;
            return Err(MeasureError::MassNotOne {
                space: skeleton.id,
                total,
                deficit,
            });
        }
        Ok(FiniteProbSpace { skeleton, masses })
    }

    /// Space over singleton atoms with the given per-outcome masses.
    pub fn discrete(
        id: impl Into<String>,
        outcomes: Vec<(String, Rat)>,
    ) -> Result<Self, MeasureError> {
        let (labels, masses): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
        let skeleton = SpaceSkeleton::discrete(id, labels)?;
        FiniteProbSpace::from_skeleton(skeleton, masses)
    }

    pub fn id(&self) -> &str {
        &self.skeleton.id
    }

    pub fn outcomes(&self) -> &[String] {
        &self.skeleton.outcomes
    }

    pub fn atoms(&self) -> &[BTreeSet<String>] {
        &self.skeleton.atoms
    }

    pub fn masses(&self) -> &[Rat] {
        &self.masses
    }

    pub fn skeleton(&self) -> &SpaceSkeleton {
        &self.skeleton
    }

    pub fn atom_mass(&self, index: usize) -> &Rat {
        &self.masses[index]
    }

    /// Measure of a measurable event (a union of atom blocks).
    pub fn measure_of(&self, event: &Event) -> Result<Rat, MeasureError> {
        if event.space_id != self.skeleton.id {
            return Err(MeasureError::UnknownOutcome {
                space: self.skeleton.id.clone(),
                outcome: format!("<event for space `{}`>", event.space_id),
            });
        }
        self.measure_of_members(&event.members)
    }

    pub fn measure_of_members(&self, members: &BTreeSet<String>) -> Result<Rat, MeasureError> {
        for o in members {
            if !self.skeleton.has_outcome(o) {
                return Err(MeasureError::UnknownOutcome {
                    space: self.skeleton.id.clone(),
                    outcome: o.clone(),
                });
            }
        }
        if let Err(atom) = self.skeleton.union_of_atoms(members) {
            return Err(MeasureError::NotMeasurable {
                space: self.skeleton.id.clone(),
                event: members.clone(),
                atom,
            });
        }
        let mut total = Rat::zero();
        for (block, mass) in self.skeleton.atoms.iter().zip(&self.masses) {
            if block.iter().all(|o| members.contains(o)) {
                total += mass;
            }
        }
        Ok(total)
    }

    /// Orders a set of outcomes by their position in this space's outcome list.
    pub fn in_outcome_order<'a>(&self, members: &'a BTreeSet<String>) -> Vec<&'a String> {
        let mut v: Vec<&String> = members.iter().collect();
        v.sort_by_key(|o| {
            self.skeleton
                .outcomes
                .iter()
                .position(|x| x == *o)
                .unwrap_or(usize::MAX)
        });
        v
    }
}

impl fmt::Display for FiniteProbSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [", self.skeleton.id)?;
        for (i, (block, mass)) in self.skeleton.atoms.iter().zip(&self.masses).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}={}", block_label(block), format_rational(mass))?;
        }
        write!(f, "]")
    }
}

/// A set of outcomes at a named space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub space_id: String,
    pub members: BTreeSet<String>,
}

impl Event {
    pub fn new<I, S>(space_id: impl Into<String>, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Event {
            space_id: space_id.into(),
            members: members.into_iter().map(Into::into).collect(),
        }
    }
}

/// Coarsest partition of `outcomes` such that every generator event is a union
/// of cells: two outcomes share a cell iff they lie in exactly the same
/// generators. Cells are ordered by first member's position in `outcomes`.
pub fn sigma_closure(
    outcomes: &[String],
    generators: &[BTreeSet<String>],
) -> Result<Vec<BTreeSet<String>>, MeasureError> {
    let known: BTreeSet<&String> = outcomes.iter().collect();
    for g in generators {
        for o in g {
            if !known.contains(o) {
                return Err(MeasureError::UnknownOutcome {
                    space: "<sigma-closure>".into(),
                    outcome: o.clone(),
                });
            }
        }
    }
    let mut cells: Vec<BTreeSet<String>> = Vec::new();
    let mut cell_of_signature: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
    for o in outcomes {
        let signature: Vec<bool> = generators.iter().map(|g| g.contains(o)).collect();
        let idx = *cell_of_signature.entry(signature).or_insert_with(|| {
            cells.push(BTreeSet::new());
            cells.len() - 1
        });
        cells[idx].insert(o.clone());
    }
    Ok(cells)
}

/// Result of checking a map for measurability between two partitioned spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurabilityReport {
    /// (dst atom, straddled src atom) pairs; empty iff the map is measurable.
    pub violations: Vec<(BTreeSet<String>, BTreeSet<String>)>,
}

impl MeasurabilityReport {
    pub fn measurable(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_map_totality(
    src: &SpaceSkeleton,
    dst: &SpaceSkeleton,
    map: &BTreeMap<String, String>,
) -> Result<(), MeasureError> {
    for o in src.outcomes() {
        match map.get(o) {
            None => {
                return Err(MeasureError::MissingImage {
                    space: src.id().to_string(),
                    outcome: o.clone(),
                })
            }
            Some(img) if !dst.has_outcome(img) => {
                return Err(MeasureError::UnknownOutcome {
                    space: dst.id().to_string(),
                    outcome: img.clone(),
                })
            }
            Some(_) => {}
        }
    }
    for o in map.keys() {
        if !src.has_outcome(o) {
            return Err(MeasureError::UnknownOutcome {
                space: src.id().to_string(),
                outcome: o.clone(),
            });
        }
    }
    Ok(())
}

/// Preimage of `members ⊆ dst` under `map`.
pub fn preimage(map: &BTreeMap<String, String>, members: &BTreeSet<String>) -> BTreeSet<String> {
    map.iter()
        .filter(|(_, img)| members.contains(*img))
        .map(|(o, _)| o.clone())
        .collect()
}

/// Checks that the preimage of every dst atom is a union of src atoms.
pub fn check_measurable_map(
    src: &SpaceSkeleton,
    dst: &SpaceSkeleton,
    map: &BTreeMap<String, String>,
) -> Result<MeasurabilityReport, MeasureError> {
    check_map_totality(src, dst, map)?;
    let mut violations = Vec::new();
    for dst_atom in dst.atoms() {
        let pre = preimage(map, dst_atom);
        for src_atom in src.atoms() {
            let inside = src_atom.intersection(&pre).count();
            if inside != 0 && inside != src_atom.len() {
                violations.push((dst_atom.clone(), src_atom.clone()));
            }
        }
    }
    Ok(MeasurabilityReport { violations })
}

/// Builds the pushforward space: dst atom mass = src measure of its preimage.
pub fn pushforward(
    src: &FiniteProbSpace,
    map: &BTreeMap<String, String>,
    dst: &SpaceSkeleton,
) -> Result<FiniteProbSpace, MeasureError> {
    let report = check_measurable_map(src.skeleton(), dst, map)?;
    if let Some((dst_atom, src_atom)) = report.violations.first() {
        return Err(MeasureError::NotMeasurable {
            space: src.id().to_string(),
            event: dst_atom.clone(),
            atom: src_atom.clone(),
        });
    }
    let mut masses = Vec::with_capacity(dst.atoms().len());
    for dst_atom in dst.atoms() {
        let pre = preimage(map, dst_atom);
        masses.push(src.measure_of_members(&pre)?);
    }
    let total: Rat = masses.iter().sum();
    assert!(total.is_one(), "pushforward mass must total 1, got {total}");
    FiniteProbSpace::from_skeleton(dst.clone(), masses)
}
