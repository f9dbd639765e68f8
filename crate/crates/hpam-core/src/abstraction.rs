//! The three foundational abstraction kinds between finite probability spaces:
//! direct (bijective relabeling), divergent (one source feeding several
//! targets, with a unified mixture space over their tagged disjoint union),
//! and convergent (several sources aggregated into one target by weighted
//! preimage sums).

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::measure::{
    block_label, check_measurable_map, preimage, pushforward, FiniteProbSpace,
    MeasurabilityReport, MeasureError, SpaceSkeleton,
};
use crate::rational::{format_rational, Rat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MapKind {
    Direct,
    DivergentBranch,
    ConvergentLeg,
    Generic,
}

impl MapKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MapKind::Direct => "direct",
            MapKind::DivergentBranch => "divergent-branch",
            MapKind::ConvergentLeg => "convergent-leg",
            MapKind::Generic => "generic",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<MapKind> {
        match s {
            "direct" => Some(MapKind::Direct),
            "divergent-branch" => Some(MapKind::DivergentBranch),
            "convergent-leg" => Some(MapKind::ConvergentLeg),
            "generic" => Some(MapKind::Generic),
            _ => None,
        }
    }
}

/// A total function between the outcome sets of two named spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractionMap {
    pub src_id: String,
    pub dst_id: String,
    pub mapping: BTreeMap<String, String>,
    pub kind: MapKind,
}

impl AbstractionMap {
    pub fn new(
        src_id: impl Into<String>,
        dst_id: impl Into<String>,
        mapping: BTreeMap<String, String>,
        kind: MapKind,
    ) -> Self {
        AbstractionMap {
            src_id: src_id.into(),
            dst_id: dst_id.into(),
            mapping,
            kind,
        }
    }

    pub fn identity(space: &FiniteProbSpace) -> Self {
        AbstractionMap {
            src_id: space.id().to_string(),
            dst_id: space.id().to_string(),
            mapping: space
                .outcomes()
                .iter()
                .map(|o| (o.clone(), o.clone()))
                .collect(),
            kind: MapKind::Direct,
        }
    }

    pub fn apply(&self, outcome: &str) -> Option<&String> {
        self.mapping.get(outcome)
    }

    /// Pointwise composition `other ∘ self` (self first, then other).
    pub fn compose(&self, other: &AbstractionMap) -> AbstractionMap {
        let mapping = self
            .mapping
            .iter()
            .filter_map(|(o, mid)| other.mapping.get(mid).map(|img| (o.clone(), img.clone())))
            .collect();
        AbstractionMap {
            src_id: self.src_id.clone(),
            dst_id: other.dst_id.clone(),
            mapping,
            kind: MapKind::Generic,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("branch {index}: {source}")]
    BranchFailed { index: usize, source: MeasureError },
    #[error("leg {index}: {source}")]
    LegFailed { index: usize, source: MeasureError },
    #[error("weights sum to {} (deficit {})", format_rational(total), format_rational(deficit))]
    WeightsNotNormalized { total: Rat, deficit: Rat },
    #[error("weight #{index} is not positive: {}", format_rational(weight))]
    NonPositiveWeight { index: usize, weight: Rat },
    #[error("family is empty")]
    EmptyFamily,
    #[error("family has {members} members but {weights} weights")]
    WeightCountMismatch { members: usize, weights: usize },
    #[error("member #{index} has source `{found}`, expected `{expected}`")]
    MismatchedSource {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("member #{index} has target `{found}`, expected `{expected}`")]
    MismatchedTarget {
        index: usize,
        expected: String,
        found: String,
    },
}

fn check_weights(count: usize, weights: &[Rat]) -> Result<(), AbstractionError> {
    if count == 0 {
        return Err(AbstractionError::EmptyFamily);
    }
    if weights.len() != count {
        return Err(AbstractionError::WeightCountMismatch {
            members: count,
            weights: weights.len(),
        });
    }
    for (i, w) in weights.iter().enumerate() {
        if w <= &Rat::zero() {
            return Err(AbstractionError::NonPositiveWeight {
                index: i,
                weight: w.clone(),
            });
        }
    }
    let total: Rat = weights.iter().sum();
    if !total.is_one() {
        let deficit = Rat::one() - &total;
        return Err(AbstractionError::WeightsNotNormalized { total, deficit });
    }
    Ok(())
}

/// Uniform weight vector 1/n, ..., 1/n.
pub fn uniform_weights(n: usize) -> Vec<Rat> {
    let w = Rat::new(1.into(), (n as i64).into());
    vec![w; n]
}

/// Per-verdict result of checking a map against Definition-style direct
/// abstraction: bijective on outcomes, measurable, and pushforward-equal.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectReport {
    pub bijective: bool,
    pub measurability: MeasurabilityReport,
    /// (dst atom, mass at dst, src measure of preimage) for each mismatch.
    /// Only populated when the map is measurable.
    pub pushforward_mismatches: Vec<(BTreeSet<String>, Rat, Rat)>,
    pub pushforward_checked: bool,
}

impl DirectReport {
    pub fn passes(&self) -> bool {
        self.bijective
            && self.measurability.measurable()
            && self.pushforward_checked
            && self.pushforward_mismatches.is_empty()
    }
}

pub fn validate_direct(
    src: &FiniteProbSpace,
    dst: &FiniteProbSpace,
    map: &AbstractionMap,
) -> Result<DirectReport, MeasureError> {
    let measurability = check_measurable_map(src.skeleton(), dst.skeleton(), &map.mapping)?;

    let images: BTreeSet<&String> = map.mapping.values().collect();
    let injective = images.len() == map.mapping.len();
    let surjective = dst.outcomes().iter().all(|o| images.contains(o));
    let bijective = injective && surjective;

    let mut mismatches = Vec::new();
    let pushforward_checked = measurability.measurable();
    if pushforward_checked {
        for (dst_atom, dst_mass) in dst.atoms().iter().zip(dst.masses()) {
            let pre = preimage(&map.mapping, dst_atom);
            let src_mass = src.measure_of_members(&pre)?;
            if &src_mass != dst_mass {
                mismatches.push((dst_atom.clone(), dst_mass.clone(), src_mass));
            }
        }
    }
    Ok(DirectReport {
        bijective,
        measurability,
        pushforward_mismatches: mismatches,
        pushforward_checked,
    })
}

/// One branch of a divergent family: the map and its target's skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergentBranch {
    pub map: AbstractionMap,
    pub target: SpaceSkeleton,
}

/// One source space branching into several targets, with mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergentFamily {
    pub src_id: String,
    pub branches: Vec<DivergentBranch>,
    pub weights: Vec<Rat>,
}

impl DivergentFamily {
    pub fn uniform(src_id: impl Into<String>, branches: Vec<DivergentBranch>) -> Self {
        let weights = uniform_weights(branches.len().max(1));
        DivergentFamily {
            src_id: src_id.into(),
            branches,
            weights,
        }
    }
}

/// The mixture space over the tagged disjoint union of divergent branch
/// targets. Outcomes are tagged `"<i>:<outcome>"` with 1-based branch index;
/// each tagged branch atom carries weight_i times its branch mass.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedSpace {
    pub space: FiniteProbSpace,
    pub weights: Vec<Rat>,
}

pub fn tagged_outcome(branch_index: usize, outcome: &str) -> String {
    format!("{}:{}", branch_index + 1, outcome)
}

pub fn build_divergent(
    src: &FiniteProbSpace,
    family: &DivergentFamily,
) -> Result<(Vec<FiniteProbSpace>, UnifiedSpace), AbstractionError> {
    check_weights(family.branches.len(), &family.weights)?;
    if family.src_id != src.id() {
        return Err(AbstractionError::MismatchedSource {
            index: 0,
            expected: family.src_id.clone(),
            found: src.id().to_string(),
        });
    }
    let mut targets = Vec::with_capacity(family.branches.len());
    for (i, branch) in family.branches.iter().enumerate() {
        if branch.map.src_id != family.src_id {
            return Err(AbstractionError::MismatchedSource {
                index: i,
                expected: family.src_id.clone(),
                found: branch.map.src_id.clone(),
            });
        }
        let target = pushforward(src, &branch.map.mapping, &branch.target)
            .map_err(|source| AbstractionError::BranchFailed { index: i, source })?;
        targets.push(target);
    }

    let mut outcomes = Vec::new();
    let mut atoms = Vec::new();
    let mut masses = Vec::new();
    for (i, (target, weight)) in targets.iter().zip(&family.weights).enumerate() {
        for o in target.outcomes() {
            outcomes.push(tagged_outcome(i, o));
        }
        for (block, mass) in target.atoms().iter().zip(target.masses()) {
            atoms.push(block.iter().map(|o| tagged_outcome(i, o)).collect());
            masses.push(weight * mass);
        }
    }
    let unified_id = format!("{}+unified", family.src_id);
    let space = FiniteProbSpace::new(unified_id, outcomes, atoms, masses)
        .map_err(AbstractionError::Measure)?;
    Ok((
        targets,
        UnifiedSpace {
            space,
            weights: family.weights.clone(),
        },
    ))
}

/// One leg of a convergent family: a source space and its map into the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergentLeg {
    pub source: FiniteProbSpace,
    pub map: AbstractionMap,
}

/// Several source spaces aggregated into one target by weighted preimage sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergentFamily {
    pub dst_id: String,
    pub legs: Vec<ConvergentLeg>,
    pub weights: Vec<Rat>,
}

impl ConvergentFamily {
    pub fn uniform(dst_id: impl Into<String>, legs: Vec<ConvergentLeg>) -> Self {
        let weights = uniform_weights(legs.len().max(1));
        ConvergentFamily {
            dst_id: dst_id.into(),
            legs,
            weights,
        }
    }
}

pub fn build_convergent(
    family: &ConvergentFamily,
    dst: &SpaceSkeleton,
) -> Result<FiniteProbSpace, AbstractionError> {
    check_weights(family.legs.len(), &family.weights)?;
    if family.dst_id != dst.id() {
        return Err(AbstractionError::MismatchedTarget {
            index: 0,
            expected: family.dst_id.clone(),
            found: dst.id().to_string(),
        });
    }
    for (i, leg) in family.legs.iter().enumerate() {
        if leg.map.dst_id != family.dst_id {
            return Err(AbstractionError::MismatchedTarget {
                index: i,
                expected: family.dst_id.clone(),
                found: leg.map.dst_id.clone(),
            });
        }
        let report = check_measurable_map(leg.source.skeleton(), dst, &leg.map.mapping)
            .map_err(|source| AbstractionError::LegFailed { index: i, source })?;
        if let Some((dst_atom, src_atom)) = report.violations.first() {
            return Err(AbstractionError::LegFailed {
                index: i,
                source: MeasureError::NotMeasurable {
                    space: leg.source.id().to_string(),
                    event: dst_atom.clone(),
                    atom: src_atom.clone(),
                },
            });
        }
    }
    let mut masses = Vec::with_capacity(dst.atoms().len());
    for dst_atom in dst.atoms() {
        let mut mass = Rat::zero();
        for (i, (leg, weight)) in family.legs.iter().zip(&family.weights).enumerate() {
            let pre = preimage(&leg.map.mapping, dst_atom);
            let leg_mass = leg
                .source
                .measure_of_members(&pre)
                .map_err(|source| AbstractionError::LegFailed { index: i, source })?;
            mass += weight * leg_mass;
        }
        masses.push(mass);
    }
    let total: Rat = masses.iter().sum();
    assert!(
        total.is_one(),
        "convergent aggregation of {} must total 1, got {}",
        block_label(&dst.atoms().iter().flatten().cloned().collect()),
        total
    );
    FiniteProbSpace::from_skeleton(dst.clone(), masses).map_err(AbstractionError::Measure)
}
