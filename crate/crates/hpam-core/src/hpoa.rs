//! Highest possible abstraction: the coarsest quotient of a space that keeps a
//! declared set of essential events measurable with their probabilities intact.
//!
//! `compute_hpoa` builds the quotient from membership signatures;
//! `brute_force_hpoa` independently enumerates every partition of the outcome
//! set and selects the unique coarsest preserving one. The two must agree
//! (and do, by construction; the acceptance suite checks it exhaustively at
//! small sizes).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::abstraction::{AbstractionMap, MapKind};
use crate::dag::{DagError, HpamDag};
use crate::measure::{preimage, Event, FiniteProbSpace, MeasureError};
use crate::rational::Rat;

/// Events at a space whose probabilities must remain recoverable after
/// abstraction. Names key the pipeline's observed-outcome comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EssentialEvent {
    pub name: String,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EssentialEventSet {
    pub space_id: String,
    pub events: Vec<EssentialEvent>,
}

impl EssentialEventSet {
    pub fn new(space_id: impl Into<String>, events: Vec<EssentialEvent>) -> Self {
        EssentialEventSet {
            space_id: space_id.into(),
            events,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-event entry of the preservation certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCertificate {
    pub name: String,
    pub source_members: BTreeSet<String>,
    /// Image of the event in the quotient: the cells it is made of.
    pub image_cells: BTreeSet<String>,
    pub probability: Rat,
}

/// Witness that merging two quotient cells breaks an essential event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeWitness {
    pub cell_a: String,
    pub cell_b: String,
    pub broken_event: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoaResult {
    pub quotient: FiniteProbSpace,
    pub quotient_map: AbstractionMap,
    pub certificate: Vec<EventCertificate>,
    pub maximality_witnesses: Vec<MergeWitness>,
}

impl HpoaResult {
    /// Cells of the quotient as sets of source outcomes.
    pub fn cells(&self) -> Vec<BTreeSet<String>> {
        let mut by_label: BTreeMap<&String, BTreeSet<String>> = BTreeMap::new();
        for (src, cell) in &self.quotient_map.mapping {
            by_label.entry(cell).or_default().insert(src.clone());
        }
        // keep quotient outcome order
        self.quotient
            .outcomes()
            .iter()
            .map(|label| by_label.get(label).cloned().unwrap_or_default())
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpoaError {
    #[error("essential event set is empty; pass allow_trivial to accept the one-cell quotient")]
    EmptyEssentials,
    #[error("space has {n} outcomes, above the brute-force guard of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("no unique coarsest preserving partition exists")]
    NoCoarsestUnique,
    #[error("essential events declared for `{expected}`, got space `{found}`")]
    WrongSpace { expected: String, found: String },
    #[error("result was computed from `{expected}`, got `{found}`")]
    MismatchedInput { expected: String, found: String },
    #[error("no path from `{from}` to `{to}`")]
    NoPath { from: String, to: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

/// Joins a cell's members in source outcome order, e.g. `"a+b"`.
fn cell_label(space: &FiniteProbSpace, members: &BTreeSet<String>) -> String {
    space
        .in_outcome_order(members)
        .into_iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("+")
}

fn validate_essentials(
    space: &FiniteProbSpace,
    essentials: &EssentialEventSet,
) -> Result<(), HpoaError> {
    if essentials.space_id != space.id() {
        return Err(HpoaError::WrongSpace {
            expected: essentials.space_id.clone(),
            found: space.id().to_string(),
        });
    }
    for ev in &essentials.events {
        // must be measurable (a union of atoms) at the source
        space.measure_of(&Event {
            space_id: space.id().to_string(),
            members: ev.members.clone(),
        })?;
    }
    Ok(())
}

/// Assembles an `HpoaResult` from quotient cells given in canonical order
/// (by first member's position in the source outcome list).
fn result_from_cells(
    space: &FiniteProbSpace,
    essentials: &EssentialEventSet,
    cells: &[BTreeSet<String>],
) -> Result<HpoaResult, HpoaError> {
    let labels: Vec<String> = cells.iter().map(|c| cell_label(space, c)).collect();
    let mut mapping = BTreeMap::new();
    for (cell, label) in cells.iter().zip(&labels) {
        for o in cell {
            mapping.insert(o.clone(), label.clone());
        }
    }
    let mut masses = Vec::with_capacity(cells.len());
    for cell in cells {
        masses.push(space.measure_of_members(cell)?);
    }
    let quotient_id = format!("{}^", space.id());
    let atoms = labels.iter().map(|l| BTreeSet::from([l.clone()])).collect();
    let quotient = FiniteProbSpace::new(quotient_id.clone(), labels.clone(), atoms, masses)?;
    let quotient_map = AbstractionMap::new(space.id(), quotient_id, mapping, MapKind::Generic);

    let mut certificate = Vec::with_capacity(essentials.events.len());
    for ev in &essentials.events {
        let image_cells: BTreeSet<String> = cells
            .iter()
            .zip(&labels)
            .filter(|(cell, _)| cell.iter().all(|o| ev.members.contains(o)))
            .map(|(_, label)| label.clone())
            .collect();
        let probability = space.measure_of_members(&ev.members)?;
        certificate.push(EventCertificate {
            name: ev.name.clone(),
            source_members: ev.members.clone(),
            image_cells,
            probability,
        });
    }

    let mut witnesses = Vec::new();
    for i in 0..cells.len() {
        for j in (i + 1)..cells.len() {
            let broken = essentials.events.iter().find(|ev| {
                let a_in = cells[i].iter().all(|o| ev.members.contains(o));
                let b_in = cells[j].iter().all(|o| ev.members.contains(o));
                a_in != b_in
            });
            if let Some(ev) = broken {
                witnesses.push(MergeWitness {
                    cell_a: labels[i].clone(),
                    cell_b: labels[j].clone(),
                    broken_event: ev.name.clone(),
                });
            }
        }
    }

    Ok(HpoaResult {
        quotient,
        quotient_map,
        certificate,
        maximality_witnesses: witnesses,
    })
}

/// Coarsest quotient preserving every essential event: outcomes share a cell
/// iff they have identical membership across the essential events.
pub fn compute_hpoa(
    space: &FiniteProbSpace,
    essentials: &EssentialEventSet,
    allow_trivial: bool,
) -> Result<HpoaResult, HpoaError> {
    if essentials.is_empty() && !allow_trivial {
        return Err(HpoaError::EmptyEssentials);
    }
    validate_essentials(space, essentials)?;
    let generators: Vec<BTreeSet<String>> = essentials
        .events
        .iter()
        .map(|e| e.members.clone())
        .collect();
    let cells = crate::measure::sigma_closure(space.outcomes(), &generators)?;
    let result = result_from_cells(space, essentials, &cells)?;
    debug_assert_eq!(
        result.maximality_witnesses.len(),
        cells.len() * cells.len().saturating_sub(1) / 2,
        "every pair of distinct cells needs a merge witness"
    );
    Ok(result)
}

/// All partitions of `n` items as restricted growth strings (cell index per
/// item, first occurrence of each index in increasing order).
pub fn enumerate_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn rec(current: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for cell in 0..=max_used + 1 {
            current[pos] = cell;
            rec(current, pos + 1, max_used.max(cell), out);
        }
    }
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    current[0] = 0;
    rec(&mut current, 1, 0, &mut out);
    out
}

fn cells_of_assignment(space: &FiniteProbSpace, assignment: &[usize]) -> Vec<BTreeSet<String>> {
    let n_cells = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut cells = vec![BTreeSet::new(); n_cells];
    for (o, &c) in space.outcomes().iter().zip(assignment) {
        cells[c].insert(o.clone());
    }
    cells
}

/// True iff every block of `finer` is contained in a block of `coarser`.
fn refines(finer: &[BTreeSet<String>], coarser: &[BTreeSet<String>]) -> bool {
    finer.iter().all(|block| {
        coarser
            .iter()
            .any(|big| block.iter().all(|o| big.contains(o)))
    })
}

const BRUTE_FORCE_MAX: usize = 10;

/// Independent oracle: enumerates every partition of the outcome set, keeps
/// those under which each essential event and each cell is a union of source
/// atoms, and returns the unique coarsest. Guarded to |outcomes| <= 10.
pub fn brute_force_hpoa(
    space: &FiniteProbSpace,
    essentials: &EssentialEventSet,
    allow_trivial: bool,
) -> Result<HpoaResult, HpoaError> {
    let n = space.outcomes().len();
    if n > BRUTE_FORCE_MAX {
        return Err(HpoaError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    if essentials.is_empty() && !allow_trivial {
        return Err(HpoaError::EmptyEssentials);
    }
    validate_essentials(space, essentials)?;

    let preserving: Vec<Vec<BTreeSet<String>>> = enumerate_partitions(n)
        .into_iter()
        .map(|assignment| cells_of_assignment(space, &assignment))
        .filter(|cells| {
            // every essential event must be a union of cells
            let events_ok = essentials.events.iter().all(|ev| {
                cells.iter().all(|cell| {
                    let inside = cell.iter().filter(|o| ev.members.contains(*o)).count();
                    inside == 0 || inside == cell.len()
                })
            });
            // every cell must be a union of source atoms (quotient map measurable)
            let cells_ok = cells
                .iter()
                .all(|cell| space.skeleton().union_of_atoms(cell).is_ok());
            events_ok && cells_ok
        })
        .collect();

    let mut coarsest: Option<&Vec<BTreeSet<String>>> = None;
    for candidate in &preserving {
        if preserving.iter().all(|p| refines(p, candidate)) {
            if coarsest.is_some() {
                return Err(HpoaError::NoCoarsestUnique);
            }
            coarsest = Some(candidate);
        }
    }
    let coarsest = coarsest.ok_or(HpoaError::NoCoarsestUnique)?;

    // canonical cell order: by first member's position in the outcome list
    let mut cells = coarsest.clone();
    cells.sort_by_key(|cell| {
        space
            .outcomes()
            .iter()
            .position(|o| cell.contains(o))
            .unwrap_or(usize::MAX)
    });

    let result = result_from_cells(space, essentials, &cells)?;
    // re-verify maximality directly: merging any two cells must break an event
    for i in 0..cells.len() {
        for j in (i + 1)..cells.len() {
            let mut merged: Vec<BTreeSet<String>> = cells.clone();
            let absorbed = merged.remove(j);
            merged[i].extend(absorbed);
            let still_preserving = essentials.events.iter().all(|ev| {
                merged.iter().all(|cell| {
                    let inside = cell.iter().filter(|o| ev.members.contains(*o)).count();
                    inside == 0 || inside == cell.len()
                })
            });
            assert!(
                !still_preserving,
                "merging cells {i} and {j} should break an essential event"
            );
        }
    }
    Ok(result)
}

/// Result of checking criterion-1 integrity of an HPoA against an ancestor.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrityReport {
    pub path: Vec<String>,
    /// (cell, hpoa mass, ancestor preimage mass) for each mismatch.
    pub mismatches: Vec<(String, Rat, Rat)>,
}

impl IntegrityReport {
    pub fn passes(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares each HPoA atom against the ancestor's measure of its composed
/// preimage along a DAG path from `ancestor_id` to the HPoA's source vertex.
pub fn check_integrity(
    dag: &HpamDag,
    ancestor_id: &str,
    hpoa: &HpoaResult,
) -> Result<IntegrityReport, HpoaError> {
    let source_id = &hpoa.quotient_map.src_id;
    let path = dag
        .find_path(ancestor_id, source_id)
        .ok_or_else(|| HpoaError::NoPath {
            from: ancestor_id.to_string(),
            to: source_id.clone(),
        })?;
    let composition = dag.compose_path(&path)?;
    let to_hpoa = composition.map.compose(&hpoa.quotient_map);
    let ancestor = dag
        .vertex(ancestor_id)
        .ok_or_else(|| DagError::UnknownVertex(ancestor_id.to_string()))
        .map_err(HpoaError::Dag)?;
    let mut mismatches = Vec::new();
    for (atom, hpoa_mass) in hpoa.quotient.atoms().iter().zip(hpoa.quotient.masses()) {
        let pre = preimage(&to_hpoa.mapping, atom);
        let ancestor_mass = ancestor.measure_of_members(&pre)?;
        if &ancestor_mass != hpoa_mass {
            let label = atom.iter().next().cloned().unwrap_or_default();
            mismatches.push((label, hpoa_mass.clone(), ancestor_mass));
        }
    }
    Ok(IntegrityReport { path, mismatches })
}

/// Minimality status of one space in a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceMinimality {
    pub space_id: String,
    /// First atom pair whose merge keeps every essential preimage measurable,
    /// if any; such a pair means the space is finer than it needs to be.
    pub mergeable_pair: Option<(BTreeSet<String>, BTreeSet<String>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityReport {
    pub entries: Vec<SpaceMinimality>,
}

impl MinimalityReport {
    pub fn passes(&self) -> bool {
        self.entries.iter().all(|e| e.mergeable_pair.is_none())
    }
}

/// Checks each space along a DAG path for per-step mass preservation (the edge
/// admission invariant, re-verified) and minimality relative to the essential
/// events declared at the chain's end: no two atom blocks may be mergeable
/// without making some essential event's preimage non-measurable.
pub fn check_minimality(
    dag: &HpamDag,
    chain: &[String],
    essentials: &EssentialEventSet,
) -> Result<MinimalityReport, HpoaError> {
    let last = chain.last().ok_or(DagError::EmptyPath).map_err(HpoaError::Dag)?;
    if &essentials.space_id != last {
        return Err(HpoaError::WrongSpace {
            expected: essentials.space_id.clone(),
            found: last.clone(),
        });
    }
    let end = dag
        .vertex(last)
        .ok_or_else(|| DagError::UnknownVertex(last.clone()))
        .map_err(HpoaError::Dag)?;
    validate_essentials(end, essentials)?;

    let mut entries = Vec::with_capacity(chain.len());
    for (idx, id) in chain.iter().enumerate() {
        let space = dag
            .vertex(id)
            .ok_or_else(|| DagError::UnknownVertex(id.clone()))
            .map_err(HpoaError::Dag)?;
        // per-step mass preservation: composing from here to the end must exist
        let tail = &chain[idx..];
        let composition = dag.compose_path(tail)?; // NoSuchEdge if the chain breaks

        // essential preimages at this space
        let preimages: Vec<BTreeSet<String>> = essentials
            .events
            .iter()
            .map(|ev| preimage(&composition.map.mapping, &ev.members))
            .collect();

        // a pair of atoms is mergeable when no essential preimage separates them
        let mut mergeable = None;
        'outer: for i in 0..space.atoms().len() {
            for j in (i + 1)..space.atoms().len() {
                let separated = preimages.iter().any(|pre| {
                    let a_in = space.atoms()[i].iter().all(|o| pre.contains(o));
                    let b_in = space.atoms()[j].iter().all(|o| pre.contains(o));
                    a_in != b_in
                });
                if !separated {
                    mergeable = Some((space.atoms()[i].clone(), space.atoms()[j].clone()));
                    break 'outer;
                }
            }
        }
        entries.push(SpaceMinimality {
            space_id: id.clone(),
            mergeable_pair: mergeable,
        });
    }
    Ok(MinimalityReport { entries })
}

/// A strictly intermediate factorization of a quotient map.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub pre_map: AbstractionMap,
    pub mid_space: FiniteProbSpace,
    pub post_map: AbstractionMap,
}

/// Splits the quotient map into two mass-preserving steps through a space that
/// performs exactly one merge (the lexicographically first pair of outcomes
/// sharing a quotient cell). Returns `None` when the quotient performs at most
/// one merge, so nothing strictly intermediate exists.
pub fn factor_intermediate(
    space: &FiniteProbSpace,
    hpoa: &HpoaResult,
) -> Result<Option<Factorization>, HpoaError> {
    if hpoa.quotient_map.src_id != space.id() {
        return Err(HpoaError::MismatchedInput {
            expected: hpoa.quotient_map.src_id.clone(),
            found: space.id().to_string(),
        });
    }
    for o in space.outcomes() {
        if !hpoa.quotient_map.mapping.contains_key(o) {
            return Err(HpoaError::MismatchedInput {
                expected: format!("mapping covering `{o}`"),
                found: "partial quotient map".into(),
            });
        }
    }
    let merges = space.outcomes().len() - hpoa.quotient.outcomes().len();
    if merges <= 1 {
        return Ok(None);
    }

    // lexicographically first pair of distinct outcomes in the same cell
    let mut sorted: Vec<&String> = space.outcomes().iter().collect();
    sorted.sort();
    let mut chosen = None;
    'search: for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if hpoa.quotient_map.mapping[*a] == hpoa.quotient_map.mapping[*b] {
                chosen = Some(((*a).clone(), (*b).clone()));
                break 'search;
            }
        }
    }
    let (a, b) = chosen.expect("merges >= 2 implies a mergeable pair");

    // mid space: singletons except {a, b} merged
    let merged_members: BTreeSet<String> = BTreeSet::from([a.clone(), b.clone()]);
    let merged_label = cell_label(space, &merged_members);
    let mid_id = format!("{}~", space.id());
    let mut mid_outcomes = Vec::new();
    let mut pre_mapping = BTreeMap::new();
    for o in space.outcomes() {
        if o == &a {
            mid_outcomes.push(merged_label.clone());
            pre_mapping.insert(o.clone(), merged_label.clone());
        } else if o == &b {
            pre_mapping.insert(o.clone(), merged_label.clone());
        } else {
            mid_outcomes.push(o.clone());
            pre_mapping.insert(o.clone(), o.clone());
        }
    }
    let mid_atoms: Vec<BTreeSet<String>> = mid_outcomes
        .iter()
        .map(|o| BTreeSet::from([o.clone()]))
        .collect();
    let mut mid_masses = Vec::with_capacity(mid_outcomes.len());
    for mo in &mid_outcomes {
        let pre: BTreeSet<String> = pre_mapping
            .iter()
            .filter(|(_, img)| *img == mo)
            .map(|(o, _)| o.clone())
            .collect();
        mid_masses.push(space.measure_of_members(&pre)?);
    }
    let mid_space = FiniteProbSpace::new(mid_id.clone(), mid_outcomes, mid_atoms, mid_masses)?;

    let mut post_mapping = BTreeMap::new();
    for mo in mid_space.outcomes() {
        // any source outcome in the mid cell determines the quotient cell
        let representative = pre_mapping
            .iter()
            .find(|(_, img)| *img == mo)
            .map(|(o, _)| o)
            .expect("mid outcomes come from the pre map");
        post_mapping.insert(mo.clone(), hpoa.quotient_map.mapping[representative].clone());
    }

    let pre_map = AbstractionMap::new(space.id(), mid_id.clone(), pre_mapping, MapKind::Generic);
    let post_map = AbstractionMap::new(
        mid_id,
        hpoa.quotient_map.dst_id.clone(),
        post_mapping,
        MapKind::Generic,
    );
    Ok(Some(Factorization {
        pre_map,
        mid_space,
        post_map,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{pushforward, SpaceSkeleton};
    use crate::rational::rat;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn uniform4() -> FiniteProbSpace {
        FiniteProbSpace::discrete(
            "u4",
            vec![
                ("a".into(), rat(1, 4)),
                ("b".into(), rat(1, 4)),
                ("c".into(), rat(1, 4)),
                ("d".into(), rat(1, 4)),
            ],
        )
        .unwrap()
    }

    fn essentials(space: &str, events: &[(&str, &[&str])]) -> EssentialEventSet {
        EssentialEventSet::new(
            space,
            events
                .iter()
                .map(|(name, members)| EssentialEvent {
                    name: name.to_string(),
                    members: set(members),
                })
                .collect(),
        )
    }

    #[test]
    fn quotient_of_single_event() {
        let space = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"])]);
        let result = compute_hpoa(&space, &ess, false).unwrap();
        assert_eq!(result.cells(), vec![set(&["a", "b"]), set(&["c", "d"])]);
        assert_eq!(result.quotient.masses(), &[rat(1, 2), rat(1, 2)]);
        assert_eq!(result.certificate[0].probability, rat(1, 2));
        assert_eq!(result.maximality_witnesses.len(), 1);
    }

    #[test]
    fn singleton_essentials_keep_everything() {
        let space = uniform4();
        let ess = essentials(
            "u4",
            &[("a", &["a"]), ("b", &["b"]), ("c", &["c"]), ("d", &["d"])],
        );
        let result = compute_hpoa(&space, &ess, false).unwrap();
        assert_eq!(result.quotient.outcomes().len(), 4);
        assert_eq!(result.quotient.masses(), space.masses());
    }

    #[test]
    fn overlapping_events_force_singletons() {
        let space = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"]), ("bc", &["b", "c"])]);
        let result = compute_hpoa(&space, &ess, false).unwrap();
        assert_eq!(result.quotient.outcomes().len(), 4);
        assert_eq!(
            result.quotient.masses(),
            &[rat(1, 4), rat(1, 4), rat(1, 4), rat(1, 4)]
        );
    }

    #[test]
    fn empty_essentials_rejected_without_flag() {
        let space = uniform4();
        let ess = EssentialEventSet::new("u4", vec![]);
        assert!(matches!(
            compute_hpoa(&space, &ess, false),
            Err(HpoaError::EmptyEssentials)
        ));
        let trivial = compute_hpoa(&space, &ess, true).unwrap();
        assert_eq!(trivial.quotient.outcomes().len(), 1);
        assert_eq!(trivial.quotient.masses(), &[rat(1, 1)]);
    }

    #[test]
    fn partition_counts_are_bell_numbers() {
        // Bell numbers: 1, 1, 2, 5, 15, 52, 203
        assert_eq!(enumerate_partitions(0).len(), 1);
        assert_eq!(enumerate_partitions(1).len(), 1);
        assert_eq!(enumerate_partitions(2).len(), 2);
        assert_eq!(enumerate_partitions(3).len(), 5);
        assert_eq!(enumerate_partitions(4).len(), 15);
        assert_eq!(enumerate_partitions(5).len(), 52);
        assert_eq!(enumerate_partitions(6).len(), 203);
    }

    #[test]
    fn oracle_agrees_on_single_event() {
        let space = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"])]);
        let fast = compute_hpoa(&space, &ess, false).unwrap();
        let slow = brute_force_hpoa(&space, &ess, false).unwrap();
        assert_eq!(fast.cells(), slow.cells());
        assert_eq!(fast.quotient.masses(), slow.quotient.masses());
    }

    #[test]
    fn oracle_on_singleton_space() {
        let space = FiniteProbSpace::discrete("pt", vec![("a".into(), rat(1, 1))]).unwrap();
        let ess = essentials("pt", &[("a", &["a"])]);
        let result = brute_force_hpoa(&space, &ess, false).unwrap();
        assert_eq!(result.quotient.outcomes().len(), 1);
    }

    #[test]
    fn oracle_guard_rejects_large_spaces() {
        let outcomes: Vec<(String, Rat)> = (0..11)
            .map(|i| (format!("o{i}"), rat(1, 11)))
            .collect();
        let space = FiniteProbSpace::discrete("big", outcomes).unwrap();
        let ess = essentials("big", &[("e", &["o0"])]);
        assert!(matches!(
            brute_force_hpoa(&space, &ess, false),
            Err(HpoaError::TooLarge { n: 11, .. })
        ));
    }

    #[test]
    fn integrity_along_chain() {
        let base = uniform4();
        let mid = FiniteProbSpace::discrete(
            "mid",
            vec![
                ("p".into(), rat(1, 2)),
                ("q".into(), rat(1, 4)),
                ("r".into(), rat(1, 4)),
            ],
        )
        .unwrap();
        let m1 = AbstractionMap::new(
            "u4",
            "mid",
            [("a", "p"), ("b", "p"), ("c", "q"), ("d", "r")]
                .iter()
                .map(|(x, y)| (x.to_string(), y.to_string()))
                .collect(),
            MapKind::Generic,
        );
        let dag = HpamDag::new()
            .add_vertex(base)
            .unwrap()
            .add_vertex(mid.clone())
            .unwrap()
            .add_edge("u4", "mid", m1)
            .unwrap();
        let ess = essentials("mid", &[("p", &["p"])]);
        let hpoa = compute_hpoa(&mid, &ess, false).unwrap();
        let report = check_integrity(&dag, "u4", &hpoa).unwrap();
        assert!(report.passes());
        assert_eq!(report.path, vec!["u4".to_string(), "mid".to_string()]);
        // ancestor = source itself
        let self_report = check_integrity(&dag, "mid", &hpoa).unwrap();
        assert!(self_report.passes());
    }

    #[test]
    fn integrity_no_path() {
        let dag = HpamDag::new()
            .add_vertex(uniform4())
            .unwrap()
            .add_vertex(
                FiniteProbSpace::discrete("iso", vec![("z".into(), rat(1, 1))]).unwrap(),
            )
            .unwrap();
        let iso = dag.vertex("iso").unwrap().clone();
        let ess = essentials("iso", &[("z", &["z"])]);
        let hpoa = compute_hpoa(&iso, &ess, false).unwrap();
        assert!(matches!(
            check_integrity(&dag, "u4", &hpoa),
            Err(HpoaError::NoPath { .. })
        ));
    }

    #[test]
    fn minimality_flags_undistinguished_split() {
        // intermediate space splits c,d although no essential event cares
        let base = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"]), ("cd", &["c", "d"])]);
        let dag = HpamDag::new().add_vertex(base.clone()).unwrap();
        let report = check_minimality(&dag, &["u4".to_string()], &ess).unwrap();
        // u4 keeps a and b split, but only {a,b} jointly matters
        let entry = &report.entries[0];
        assert_eq!(entry.space_id, "u4");
        assert_eq!(entry.mergeable_pair, Some((set(&["a"]), set(&["b"]))));
        assert!(!report.passes());
    }

    #[test]
    fn hpoa_quotient_chain_is_minimal() {
        let base = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"])]);
        let hpoa = compute_hpoa(&base, &ess, false).unwrap();
        let dag = HpamDag::new()
            .add_vertex(hpoa.quotient.clone())
            .unwrap();
        let quotient_ess = EssentialEventSet::new(
            hpoa.quotient.id(),
            hpoa.certificate
                .iter()
                .map(|c| EssentialEvent {
                    name: c.name.clone(),
                    members: c.image_cells.clone(),
                })
                .collect(),
        );
        let report =
            check_minimality(&dag, &[hpoa.quotient.id().to_string()], &quotient_ess).unwrap();
        assert!(report.passes());
    }

    #[test]
    fn identity_chain_with_singleton_essentials_is_minimal() {
        let base = uniform4();
        let ess = essentials(
            "u4",
            &[("a", &["a"]), ("b", &["b"]), ("c", &["c"]), ("d", &["d"])],
        );
        let dag = HpamDag::new().add_vertex(base).unwrap();
        let report = check_minimality(&dag, &["u4".to_string()], &ess).unwrap();
        assert!(report.passes());
    }

    #[test]
    fn factorization_two_merges() {
        let space = uniform4();
        let ess = essentials("u4", &[("ab", &["a", "b"])]);
        let hpoa = compute_hpoa(&space, &ess, false).unwrap();
        let fact = factor_intermediate(&space, &hpoa).unwrap().unwrap();
        assert_eq!(
            fact.mid_space.outcomes(),
            &["a+b".to_string(), "c".to_string(), "d".to_string()]
        );
        assert_eq!(
            fact.mid_space.masses(),
            &[rat(1, 2), rat(1, 4), rat(1, 4)]
        );
        // composition equals the quotient map pointwise
        let composed = fact.pre_map.compose(&fact.post_map);
        assert_eq!(composed.mapping, hpoa.quotient_map.mapping);
        // stepwise pushforwards chain to the quotient measure
        let mid = pushforward(&space, &fact.pre_map.mapping, fact.mid_space.skeleton()).unwrap();
        assert_eq!(mid, fact.mid_space);
        let top_skel = SpaceSkeleton::new(
            hpoa.quotient.id(),
            hpoa.quotient.outcomes().to_vec(),
            hpoa.quotient.atoms().to_vec(),
        )
        .unwrap();
        let top = pushforward(&mid, &fact.post_map.mapping, &top_skel).unwrap();
        assert_eq!(top.masses(), hpoa.quotient.masses());
    }

    #[test]
    fn factorization_none_for_identity_quotient() {
        let space = uniform4();
        let ess = essentials(
            "u4",
            &[("a", &["a"]), ("b", &["b"]), ("c", &["c"]), ("d", &["d"])],
        );
        let hpoa = compute_hpoa(&space, &ess, false).unwrap();
        assert!(factor_intermediate(&space, &hpoa).unwrap().is_none());
    }

    #[test]
    fn factorization_none_for_single_merge() {
        let space = FiniteProbSpace::discrete(
            "s2",
            vec![("a".into(), rat(1, 2)), ("b".into(), rat(1, 2))],
        )
        .unwrap();
        let ess = EssentialEventSet::new("s2", vec![]);
        let hpoa = compute_hpoa(&space, &ess, true).unwrap();
        assert_eq!(hpoa.quotient.outcomes().len(), 1);
        assert!(factor_intermediate(&space, &hpoa).unwrap().is_none());
    }

    #[test]
    fn mismatched_input_rejected() {
        let space = uniform4();
        let other = FiniteProbSpace::discrete("other", vec![("z".into(), rat(1, 1))]).unwrap();
        let ess = essentials("u4", &[("ab", &["a", "b"])]);
        let hpoa = compute_hpoa(&space, &ess, false).unwrap();
        assert!(matches!(
            factor_intermediate(&other, &hpoa),
            Err(HpoaError::MismatchedInput { .. })
        ));
    }
}
