//! Deterministic Graphviz (DOT) export for DAGs and pipeline runs. Output is
//! byte-stable for equal inputs: vertices are sorted by id and edges by
//! (src, dst).

use std::fmt::Write as _;

use crate::dag::HpamDag;
use crate::hpoa::HpoaResult;
use crate::pipeline::PipelineOutcome;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn vertex_line(out: &mut String, id: &str, atom_count: usize, extra_attrs: &str) {
    let _ = writeln!(
        out,
        "    \"{}\" [label=\"{}\\n{} atom{}\"{}];",
        escape(id),
        escape(id),
        atom_count,
        if atom_count == 1 { "" } else { "s" },
        extra_attrs
    );
}

fn edge_lines(out: &mut String, dag: &HpamDag) {
    let mut edges: Vec<_> = dag.edges().iter().collect();
    edges.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
    for e in edges {
        let _ = writeln!(
            out,
            "    \"{}\" -> \"{}\" [label=\"{}\"];",
            escape(&e.src),
            escape(&e.dst),
            e.map.kind.as_str()
        );
    }
}

/// Renders the DAG; when an optimal-abstraction result is supplied its
/// quotient is drawn as an extra, visually distinct vertex hanging off the
/// source space.
pub fn export_dot(dag: &HpamDag, hpoa: Option<&HpoaResult>) -> String {
    let mut out = String::from("digraph hpam {\n    rankdir=TB;\n    node [shape=box];\n");
    for space in dag.vertices() {
        vertex_line(&mut out, space.id(), space.atoms().len(), "");
    }
    edge_lines(&mut out, dag);
    if let Some(h) = hpoa {
        vertex_line(
            &mut out,
            h.quotient.id(),
            h.quotient.atoms().len(),
            ", style=dashed",
        );
        let _ = writeln!(
            out,
            "    \"{}\" -> \"{}\" [label=\"optimal\", style=dashed];",
            escape(&h.quotient_map.src_id),
            escape(h.quotient.id())
        );
    }
    out.push_str("}\n");
    out
}

/// Renders a pipeline run with one cluster per stage, grouping the vertices
/// that stage added. Vertices created outside any stage (the base space) sit
/// at the top level.
pub fn export_pipeline_dot(outcome: &PipelineOutcome) -> String {
    let mut out = String::from("digraph pipeline {\n    rankdir=TB;\n    node [shape=box];\n");
    let staged: Vec<&String> = outcome
        .snapshots
        .iter()
        .flat_map(|s| s.added_vertices.iter())
        .collect();
    for space in outcome.dag.vertices() {
        if !staged.iter().any(|v| *v == space.id()) {
            vertex_line(&mut out, space.id(), space.atoms().len(), "");
        }
    }
    for snap in &outcome.snapshots {
        let _ = writeln!(out, "    subgraph cluster_stage_{} {{", snap.stage);
        let _ = writeln!(
            out,
            "        label=\"stage {} ({})\";",
            snap.stage,
            escape(&snap.kind)
        );
        let mut ids = snap.added_vertices.clone();
        ids.sort();
        for id in &ids {
            if let Some(space) = outcome.dag.vertices().find(|s| s.id() == id) {
                let _ = writeln!(
                    out,
                    "        \"{}\" [label=\"{}\\n{} atom{}\"];",
                    escape(id),
                    escape(id),
                    space.atoms().len(),
                    if space.atoms().len() == 1 { "" } else { "s" },
                );
            }
        }
        out.push_str("    }\n");
    }
    edge_lines(&mut out, &outcome.dag);
    if let Some(h) = &outcome.hpoa {
        vertex_line(
            &mut out,
            h.quotient.id(),
            h.quotient.atoms().len(),
            ", style=dashed",
        );
        let _ = writeln!(
            out,
            "    \"{}\" -> \"{}\" [label=\"optimal\", style=dashed];",
            escape(&h.quotient_map.src_id),
            escape(h.quotient.id())
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::HpamDag;
    use crate::measure::FiniteProbSpace;
    use crate::rational::rat;

    fn two_space_dag() -> HpamDag {
        use crate::abstraction::{AbstractionMap, MapKind};
        use std::collections::BTreeMap;
        let src = FiniteProbSpace::discrete(
            "src",
            vec![
                ("a".to_string(), rat(1, 2)),
                ("b".to_string(), rat(1, 2)),
            ],
        )
        .unwrap();
        let dst =
            FiniteProbSpace::discrete("dst", vec![("x".to_string(), rat(1, 1))]).unwrap();
        let mut mapping = BTreeMap::new();
        mapping.insert("a".to_string(), "x".to_string());
        mapping.insert("b".to_string(), "x".to_string());
        let map = AbstractionMap::new("src", "dst", mapping, MapKind::Direct);
        HpamDag::new()
            .add_vertex(src)
            .unwrap()
            .add_vertex(dst)
            .unwrap()
            .add_edge("src", "dst", map)
            .unwrap()
    }

    #[test]
    fn export_is_deterministic() {
        let dag = two_space_dag();
        assert_eq!(export_dot(&dag, None), export_dot(&dag, None));
    }

    #[test]
    fn export_contains_vertices_and_edge() {
        let text = export_dot(&two_space_dag(), None);
        assert!(text.starts_with("digraph hpam {"));
        assert!(text.contains("\"src\" [label=\"src\\n2 atoms\"];"));
        assert!(text.contains("\"dst\" [label=\"dst\\n1 atom\"];"));
        assert!(text.contains("\"src\" -> \"dst\" [label=\"direct\"];"));
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn quotes_are_escaped() {
        let dag = HpamDag::new()
            .add_vertex(
                FiniteProbSpace::discrete("we\"ird", vec![("a".to_string(), rat(1, 1))]).unwrap(),
            )
            .unwrap();
        let text = export_dot(&dag, None);
        assert!(text.contains("\\\"ird"));
    }
}
