//! The abstraction DAG: vertices are probability spaces, edges are maps that
//! are admitted only if measurable, measure-preserving on every target atom,
//! and acyclicity-safe. A DAG value is immutable; `add_vertex`/`add_edge`
//! return a new value.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::abstraction::AbstractionMap;
use crate::measure::{check_measurable_map, preimage, FiniteProbSpace, MeasureError};
use crate::rational::{format_rational, Rat};

#[derive(Debug, Clone, PartialEq)]
pub struct DagEdge {
    pub src: String,
    pub dst: String,
    pub map: AbstractionMap,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("vertex `{0}` already exists")]
    DuplicateVertex(String),
    #[error("vertex `{0}` does not exist")]
    UnknownVertex(String),
    #[error("edge `{src}` -> `{dst}` already exists")]
    DuplicateEdge { src: String, dst: String },
    #[error("admitting the edge would create cycle {}", cycle.join(" -> "))]
    CycleIntroduced { cycle: Vec<String> },
    #[error(
        "measure not preserved on edge `{src}` -> `{dst}` at atom {}: target has {}, source preimage has {}",
        crate::measure::block_label(atom), format_rational(dst_mass), format_rational(src_mass)
    )]
    Eq1Violation {
        src: String,
        dst: String,
        atom: BTreeSet<String>,
        dst_mass: Rat,
        src_mass: Rat,
    },
    #[error("edge `{src}` -> `{dst}` is not measurable: preimage of {} straddles {}",
        crate::measure::block_label(dst_atom), crate::measure::block_label(src_atom))]
    NotMeasurable {
        src: String,
        dst: String,
        dst_atom: BTreeSet<String>,
        src_atom: BTreeSet<String>,
    },
    #[error("no edge `{src}` -> `{dst}`")]
    NoSuchEdge { src: String, dst: String },
    #[error("path must contain at least one vertex")]
    EmptyPath,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One invariant violation found by `check_dag`.
#[derive(Debug, Clone, PartialEq)]
pub enum DagViolation {
    UnknownVertexRef { edge: (String, String) },
    DuplicateEdge { edge: (String, String) },
    Cycle { vertices: Vec<String> },
    NotMeasurable {
        edge: (String, String),
        dst_atom: BTreeSet<String>,
        src_atom: BTreeSet<String>,
    },
    MeasureNotPreserved {
        edge: (String, String),
        atom: BTreeSet<String>,
        dst_mass: Rat,
        src_mass: Rat,
    },
    MalformedMap { edge: (String, String), detail: String },
}

impl DagViolation {
    pub fn describe(&self) -> String {
        match self {
            DagViolation::UnknownVertexRef { edge } => {
                format!("edge {} -> {} references a missing vertex", edge.0, edge.1)
            }
            DagViolation::DuplicateEdge { edge } => {
                format!("duplicate edge {} -> {}", edge.0, edge.1)
            }
            DagViolation::Cycle { vertices } => format!("cycle: {}", vertices.join(" -> ")),
            DagViolation::NotMeasurable {
                edge,
                dst_atom,
                src_atom,
            } => format!(
                "edge {} -> {} not measurable: preimage of {} straddles {}",
                edge.0,
                edge.1,
                crate::measure::block_label(dst_atom),
                crate::measure::block_label(src_atom)
            ),
            DagViolation::MeasureNotPreserved {
                edge,
                atom,
                dst_mass,
                src_mass,
            } => format!(
                "edge {} -> {} breaks measure preservation at {}: target {}, source preimage {}",
                edge.0,
                edge.1,
                crate::measure::block_label(atom),
                format_rational(dst_mass),
                format_rational(src_mass)
            ),
            DagViolation::MalformedMap { edge, detail } => {
                format!("edge {} -> {} has malformed map: {}", edge.0, edge.1, detail)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<DagViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A root-to-target path with its composed outcome function.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComposition {
    pub vertices: Vec<String>,
    pub map: AbstractionMap,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HpamDag {
    vertices: BTreeMap<String, FiniteProbSpace>,
    edges: Vec<DagEdge>,
}

impl HpamDag {
    pub fn new() -> Self {
        HpamDag::default()
    }

    /// Assembles a DAG without admission checks; pair with `check_dag` to
    /// surface every violation (used after loading hand-edited files).
    pub fn from_parts(vertices: Vec<FiniteProbSpace>, edges: Vec<DagEdge>) -> Self {
        HpamDag {
            vertices: vertices
                .into_iter()
                .map(|s| (s.id().to_string(), s))
                .collect(),
            edges,
        }
    }

    pub fn vertex(&self, id: &str) -> Option<&FiniteProbSpace> {
        self.vertices.get(id)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &FiniteProbSpace> {
        self.vertices.values()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn edge(&self, src: &str, dst: &str) -> Option<&DagEdge> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst)
    }

    pub fn add_vertex(&self, space: FiniteProbSpace) -> Result<HpamDag, DagError> {
        if self.vertices.contains_key(space.id()) {
            return Err(DagError::DuplicateVertex(space.id().to_string()));
        }
        let mut next = self.clone();
        next.vertices.insert(space.id().to_string(), space);
        Ok(next)
    }

    /// Admits an edge only if it is measurable, preserves the measure on every
    /// target atom, and keeps the graph acyclic.
    pub fn add_edge(
        &self,
        src_id: &str,
        dst_id: &str,
        map: AbstractionMap,
    ) -> Result<HpamDag, DagError> {
        let src = self
            .vertices
            .get(src_id)
            .ok_or_else(|| DagError::UnknownVertex(src_id.to_string()))?;
        let dst = self
            .vertices
            .get(dst_id)
            .ok_or_else(|| DagError::UnknownVertex(dst_id.to_string()))?;
        if self.edge(src_id, dst_id).is_some() {
            return Err(DagError::DuplicateEdge {
                src: src_id.to_string(),
                dst: dst_id.to_string(),
            });
        }
        let report = check_measurable_map(src.skeleton(), dst.skeleton(), &map.mapping)?;
        if let Some((dst_atom, src_atom)) = report.violations.first() {
            return Err(DagError::NotMeasurable {
                src: src_id.to_string(),
                dst: dst_id.to_string(),
                dst_atom: dst_atom.clone(),
                src_atom: src_atom.clone(),
            });
        }
        for (atom, dst_mass) in dst.atoms().iter().zip(dst.masses()) {
            let pre = preimage(&map.mapping, atom);
            let src_mass = src.measure_of_members(&pre)?;
            if &src_mass != dst_mass {
                return Err(DagError::Eq1Violation {
                    src: src_id.to_string(),
                    dst: dst_id.to_string(),
                    atom: atom.clone(),
                    dst_mass: dst_mass.clone(),
                    src_mass,
                });
            }
        }
        // dst ->* src would close a cycle through the new edge
        if src_id == dst_id {
            return Err(DagError::CycleIntroduced {
                cycle: vec![src_id.to_string(), src_id.to_string()],
            });
        }
        if let Some(mut path) = self.find_path(dst_id, src_id) {
            path.push(dst_id.to_string());
            return Err(DagError::CycleIntroduced { cycle: path });
        }
        let mut next = self.clone();
        next.edges.push(DagEdge {
            src: src_id.to_string(),
            dst: dst_id.to_string(),
            map,
        });
        Ok(next)
    }

    /// Deterministic path search (DFS, successors in lexicographic order).
    pub fn find_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        if !self.vertices.contains_key(from) || !self.vertices.contains_key(to) {
            return None;
        }
        let mut stack = vec![vec![from.to_string()]];
        let mut visited = BTreeSet::new();
        while let Some(path) = stack.pop() {
            let last = path.last().expect("paths are nonempty");
            if last == to {
                return Some(path);
            }
            if !visited.insert(last.clone()) {
                continue;
            }
            let mut successors: Vec<&String> = self
                .edges
                .iter()
                .filter(|e| &e.src == last)
                .map(|e| &e.dst)
                .collect();
            successors.sort();
            // push in reverse so the lexicographically first successor pops first
            for succ in successors.into_iter().rev() {
                if !visited.contains(succ) {
                    let mut next = path.clone();
                    next.push(succ.clone());
                    stack.push(next);
                }
            }
        }
        None
    }

    /// Composes the edge maps along `ids`; a single vertex yields the identity.
    pub fn compose_path(&self, ids: &[String]) -> Result<PathComposition, DagError> {
        let first = ids.first().ok_or(DagError::EmptyPath)?;
        let start = self
            .vertices
            .get(first)
            .ok_or_else(|| DagError::UnknownVertex(first.clone()))?;
        let mut composed = AbstractionMap::identity(start);
        for pair in ids.windows(2) {
            let edge = self
                .edge(&pair[0], &pair[1])
                .ok_or_else(|| DagError::NoSuchEdge {
                    src: pair[0].clone(),
                    dst: pair[1].clone(),
                })?;
            composed = composed.compose(&edge.map);
        }
        // Edge-wise preservation must carry over to the composed map.
        let end = self
            .vertices
            .get(ids.last().expect("nonempty"))
            .ok_or_else(|| DagError::UnknownVertex(ids.last().unwrap().clone()))?;
        for (atom, dst_mass) in end.atoms().iter().zip(end.masses()) {
            let pre = preimage(&composed.mapping, atom);
            let src_mass = start.measure_of_members(&pre)?;
            assert_eq!(
                &src_mass, dst_mass,
                "composed map along {ids:?} must preserve the measure"
            );
        }
        Ok(PathComposition {
            vertices: ids.to_vec(),
            map: composed,
        })
    }

    /// Re-verifies every invariant, listing all violations (empty = valid).
    pub fn check_dag(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut seen_pairs = BTreeSet::new();
        for edge in &self.edges {
            let key = (edge.src.clone(), edge.dst.clone());
            if !seen_pairs.insert(key.clone()) {
                violations.push(DagViolation::DuplicateEdge { edge: key.clone() });
            }
            let (src, dst) = match (self.vertices.get(&edge.src), self.vertices.get(&edge.dst)) {
                (Some(s), Some(d)) => (s, d),
                _ => {
                    violations.push(DagViolation::UnknownVertexRef { edge: key });
                    continue;
                }
            };
            match check_measurable_map(src.skeleton(), dst.skeleton(), &edge.map.mapping) {
                Err(e) => {
                    violations.push(DagViolation::MalformedMap {
                        edge: key,
                        detail: e.to_string(),
                    });
                    continue;
                }
                Ok(report) if !report.measurable() => {
                    for (dst_atom, src_atom) in report.violations {
                        violations.push(DagViolation::NotMeasurable {
                            edge: key.clone(),
                            dst_atom,
                            src_atom,
                        });
                    }
                    continue;
                }
                Ok(_) => {}
            }
            for (atom, dst_mass) in dst.atoms().iter().zip(dst.masses()) {
                let pre = preimage(&edge.map.mapping, atom);
                match src.measure_of_members(&pre) {
                    Ok(src_mass) if &src_mass == dst_mass => {}
                    Ok(src_mass) => violations.push(DagViolation::MeasureNotPreserved {
                        edge: key.clone(),
                        atom: atom.clone(),
                        dst_mass: dst_mass.clone(),
                        src_mass,
                    }),
                    Err(e) => violations.push(DagViolation::MalformedMap {
                        edge: key.clone(),
                        detail: e.to_string(),
                    }),
                }
            }
        }
        if let Some(cycle) = self.find_cycle() {
            violations.push(DagViolation::Cycle { vertices: cycle });
        }
        ValidationReport { violations }
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        // DFS with coloring; deterministic by starting from sorted vertex ids.
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let mut color: BTreeMap<&String, Color> =
            self.vertices.keys().map(|v| (v, Color::White)).collect();
        let mut parent: BTreeMap<&String, &String> = BTreeMap::new();

        fn visit<'a>(
            dag: &'a HpamDag,
            v: &'a String,
            color: &mut BTreeMap<&'a String, Color>,
            parent: &mut BTreeMap<&'a String, &'a String>,
        ) -> Option<Vec<String>> {
            color.insert(v, Color::Gray);
            let mut successors: Vec<&String> = dag
                .edges
                .iter()
                .filter(|e| &e.src == v)
                .map(|e| &e.dst)
                .collect();
            successors.sort();
            for succ in successors {
                match color.get(succ).copied() {
                    Some(Color::Gray) => {
                        // unwind v back to succ
                        let mut cycle = vec![succ.clone(), v.clone()];
                        let mut cur = v;
                        while cur != succ {
                            match parent.get(cur) {
                                Some(p) => {
                                    cur = p;
                                    if cur != succ {
                                        cycle.push(cur.clone());
                                    }
                                }
                                None => break,
                            }
                        }
                        cycle.push(succ.clone());
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Some(Color::White) => {
                        parent.insert(succ, v);
                        if let Some(c) = visit(dag, succ, color, parent) {
                            return Some(c);
                        }
                    }
                    _ => {}
                }
            }
            color.insert(v, Color::Black);
            None
        }

        let ids: Vec<&String> = self.vertices.keys().collect();
        for v in ids {
            if color.get(v) == Some(&Color::White) {
                if let Some(c) = visit(self, v, &mut color, &mut parent) {
                    return Some(c);
                }
            }
        }
        None
    }

    /// Topological order with lexicographic tie-breaking.
    pub fn topo_order(&self) -> Result<Vec<String>, DagError> {
        let mut indegree: BTreeMap<&String, usize> =
            self.vertices.keys().map(|v| (v, 0)).collect();
        for e in &self.edges {
            if let Some(d) = indegree.get_mut(&e.dst) {
                *d += 1;
            }
        }
        let mut ready: BTreeSet<&String> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(v, _)| *v)
            .collect();
        let mut order = Vec::with_capacity(self.vertices.len());
        while let Some(v) = ready.iter().next().copied() {
            ready.remove(v);
            order.push(v.clone());
            for e in self.edges.iter().filter(|e| &e.src == v) {
                if let Some(d) = indegree.get_mut(&e.dst) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(&e.dst);
                    }
                }
            }
        }
        if order.len() != self.vertices.len() {
            let cycle = self.find_cycle().unwrap_or_default();
            return Err(DagError::CycleIntroduced { cycle });
        }
        Ok(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::MapKind;
    use crate::rational::rat;
    use std::collections::BTreeMap;

    fn pairs(entries: &[(&str, &str)]) -> BTreeMap<String, String> {
        entries
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn abc() -> FiniteProbSpace {
        FiniteProbSpace::discrete(
            "abc",
            vec![
                ("a".into(), rat(1, 2)),
                ("b".into(), rat(1, 4)),
                ("c".into(), rat(1, 4)),
            ],
        )
        .unwrap()
    }

    fn xy(mass_x: (i64, i64)) -> FiniteProbSpace {
        FiniteProbSpace::discrete(
            "xy",
            vec![
                ("x".into(), rat(mass_x.0, mass_x.1)),
                (
                    "y".into(),
                    rat(1, 1) - rat(mass_x.0, mass_x.1),
                ),
            ],
        )
        .unwrap()
    }

    fn merge_map() -> AbstractionMap {
        AbstractionMap::new(
            "abc",
            "xy",
            pairs(&[("a", "x"), ("b", "x"), ("c", "y")]),
            MapKind::Generic,
        )
    }

    #[test]
    fn add_vertex_and_duplicate() {
        let dag = HpamDag::new().add_vertex(abc()).unwrap();
        assert_eq!(dag.vertex_count(), 1);
        assert!(matches!(
            dag.add_vertex(abc()),
            Err(DagError::DuplicateVertex(_))
        ));
    }

    #[test]
    fn independent_vertices_no_edges() {
        let dag = HpamDag::new()
            .add_vertex(abc())
            .unwrap()
            .add_vertex(xy((3, 4)))
            .unwrap();
        assert_eq!(dag.vertex_count(), 2);
        assert!(dag.edges().is_empty());
        assert!(dag.vertex("abc").is_some());
        assert!(dag.vertex("xy").is_some());
    }

    #[test]
    fn edge_admitted_when_measure_preserved() {
        let dag = HpamDag::new()
            .add_vertex(abc())
            .unwrap()
            .add_vertex(xy((3, 4)))
            .unwrap()
            .add_edge("abc", "xy", merge_map())
            .unwrap();
        assert_eq!(dag.edges().len(), 1);
        assert!(dag.check_dag().is_clean());
    }

    #[test]
    fn edge_rejected_on_mass_mismatch() {
        let dag = HpamDag::new()
            .add_vertex(abc())
            .unwrap()
            .add_vertex(xy((1, 2)))
            .unwrap();
        match dag.add_edge("abc", "xy", merge_map()).unwrap_err() {
            DagError::Eq1Violation {
                atom,
                dst_mass,
                src_mass,
                ..
            } => {
                assert_eq!(atom, BTreeSet::from(["x".to_string()]));
                assert_eq!(dst_mass, rat(1, 2));
                assert_eq!(src_mass, rat(3, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reverse_edge_rejected_as_cycle() {
        let s = FiniteProbSpace::discrete(
            "s",
            vec![("a".into(), rat(1, 2)), ("b".into(), rat(1, 2))],
        )
        .unwrap();
        let t = FiniteProbSpace::discrete(
            "t",
            vec![("p".into(), rat(1, 2)), ("q".into(), rat(1, 2))],
        )
        .unwrap();
        let fwd = AbstractionMap::new("s", "t", pairs(&[("a", "p"), ("b", "q")]), MapKind::Direct);
        let back = AbstractionMap::new("t", "s", pairs(&[("p", "a"), ("q", "b")]), MapKind::Direct);
        let dag = HpamDag::new()
            .add_vertex(s)
            .unwrap()
            .add_vertex(t)
            .unwrap()
            .add_edge("s", "t", fwd)
            .unwrap();
        match dag.add_edge("t", "s", back).unwrap_err() {
            DagError::CycleIntroduced { cycle } => {
                assert_eq!(cycle.first(), cycle.last());
                assert!(cycle.contains(&"s".to_string()) && cycle.contains(&"t".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compose_identity_on_single_vertex() {
        let dag = HpamDag::new().add_vertex(abc()).unwrap();
        let comp = dag.compose_path(&["abc".to_string()]).unwrap();
        assert_eq!(comp.map.mapping.get("a"), Some(&"a".to_string()));
        assert_eq!(comp.vertices, vec!["abc".to_string()]);
    }

    #[test]
    fn compose_two_merges() {
        let base = FiniteProbSpace::discrete(
            "base",
            vec![
                ("a".into(), rat(1, 4)),
                ("b".into(), rat(1, 4)),
                ("c".into(), rat(1, 4)),
                ("d".into(), rat(1, 4)),
            ],
        )
        .unwrap();
        let mid = FiniteProbSpace::discrete(
            "mid",
            vec![
                ("p".into(), rat(1, 2)),
                ("q".into(), rat(1, 4)),
                ("r".into(), rat(1, 4)),
            ],
        )
        .unwrap();
        let top = FiniteProbSpace::discrete(
            "top",
            vec![("s".into(), rat(3, 4)), ("t".into(), rat(1, 4))],
        )
        .unwrap();
        let m1 = AbstractionMap::new(
            "base",
            "mid",
            pairs(&[("a", "p"), ("b", "p"), ("c", "q"), ("d", "r")]),
            MapKind::Generic,
        );
        let m2 = AbstractionMap::new(
            "mid",
            "top",
            pairs(&[("p", "s"), ("q", "s"), ("r", "t")]),
            MapKind::Generic,
        );
        let dag = HpamDag::new()
            .add_vertex(base)
            .unwrap()
            .add_vertex(mid)
            .unwrap()
            .add_vertex(top)
            .unwrap()
            .add_edge("base", "mid", m1)
            .unwrap()
            .add_edge("mid", "top", m2)
            .unwrap();
        let comp = dag
            .compose_path(&["base".to_string(), "mid".to_string(), "top".to_string()])
            .unwrap();
        assert_eq!(
            comp.map.mapping,
            pairs(&[("a", "s"), ("b", "s"), ("c", "s"), ("d", "t")])
        );
    }

    #[test]
    fn compose_missing_edge() {
        let dag = HpamDag::new()
            .add_vertex(abc())
            .unwrap()
            .add_vertex(xy((3, 4)))
            .unwrap();
        assert!(matches!(
            dag.compose_path(&["abc".to_string(), "xy".to_string()]),
            Err(DagError::NoSuchEdge { .. })
        ));
    }

    #[test]
    fn check_dag_reports_broken_mass_in_loaded_file() {
        // hand-assembled: target masses edited away from the pushforward
        let dag = HpamDag::from_parts(
            vec![abc(), xy((1, 2))],
            vec![DagEdge {
                src: "abc".into(),
                dst: "xy".into(),
                map: merge_map(),
            }],
        );
        let report = dag.check_dag();
        assert_eq!(report.violations.len(), 2); // both atoms off by 1/4
        assert!(matches!(
            report.violations[0],
            DagViolation::MeasureNotPreserved { .. }
        ));
    }

    #[test]
    fn check_dag_reports_cycle() {
        let s = FiniteProbSpace::discrete("s", vec![("a".into(), rat(1, 1))]).unwrap();
        let t = FiniteProbSpace::discrete("t", vec![("b".into(), rat(1, 1))]).unwrap();
        let fwd = AbstractionMap::new("s", "t", pairs(&[("a", "b")]), MapKind::Direct);
        let back = AbstractionMap::new("t", "s", pairs(&[("b", "a")]), MapKind::Direct);
        let dag = HpamDag::from_parts(
            vec![s, t],
            vec![
                DagEdge {
                    src: "s".into(),
                    dst: "t".into(),
                    map: fwd,
                },
                DagEdge {
                    src: "t".into(),
                    dst: "s".into(),
                    map: back,
                },
            ],
        );
        let report = dag.check_dag();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, DagViolation::Cycle { .. })));
    }

    #[test]
    fn topo_order_lexicographic_ties() {
        let mk = |id: &str| FiniteProbSpace::discrete(id, vec![("o".into(), rat(1, 1))]).unwrap();
        let dag = HpamDag::new()
            .add_vertex(mk("b"))
            .unwrap()
            .add_vertex(mk("a"))
            .unwrap()
            .add_vertex(mk("c"))
            .unwrap();
        assert_eq!(dag.topo_order().unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn add_edge_does_not_mutate_original() {
        let dag = HpamDag::new()
            .add_vertex(abc())
            .unwrap()
            .add_vertex(xy((3, 4)))
            .unwrap();
        let with_edge = dag.add_edge("abc", "xy", merge_map()).unwrap();
        assert!(dag.edges().is_empty());
        assert_eq!(with_edge.edges().len(), 1);
        assert_eq!(dag.vertex("abc").unwrap().masses(), abc().masses());
    }
}
