//! The model file format: a JSON-surface document describing spaces, maps,
//! DAG edges, divergent/convergent families, essential events, and an optional
//! pipeline section. Probabilities are strings, either `"num/den"` or decimals
//! with at most twelve fractional digits (converted exactly). Serialization
//! always emits rationals.
//!
//! Parsing is strict about unknown fields when asked (`strict`), otherwise it
//! collects warnings. Semantic errors carry the document path of the offending
//! element.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::abstraction::{
    uniform_weights, AbstractionMap, ConvergentFamily, ConvergentLeg, DivergentBranch,
    DivergentFamily, MapKind,
};
use crate::dag::{DagEdge, HpamDag};
use crate::hpoa::{EssentialEvent, EssentialEventSet, HpoaResult};
use crate::measure::{FiniteProbSpace, SpaceSkeleton};
use crate::pipeline::{
    ComparisonReport, PipelineOutcome, PipelineSpec, StageConfig, StageSnapshot, TargetSkeleton,
    Verdict,
};
use crate::rational::{format_rational, parse_rational, Rat};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Semantic { path: String, message: String },
}

fn semantic(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Semantic {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceDecl {
    pub id: String,
    pub outcomes: Vec<String>,
    pub atoms: Vec<Vec<String>>,
    pub masses: Option<Vec<Rat>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDecl {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub kind: MapKind,
    pub pairs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDecl {
    pub src: String,
    pub dst: String,
    pub map: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecl {
    pub map: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergentDecl {
    pub name: String,
    pub src: String,
    pub branches: Vec<StepDecl>,
    pub weights: Option<Vec<Rat>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergentLegDecl {
    pub src: String,
    pub map: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergentDecl {
    pub name: String,
    pub dst: String,
    pub legs: Vec<ConvergentLegDecl>,
    pub weights: Option<Vec<Rat>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedEventDecl {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialDecl {
    pub space: String,
    pub events: Vec<NamedEventDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageDecl {
    Direct {
        map: String,
        target: String,
    },
    Sequential {
        steps: Vec<StepDecl>,
    },
    Divergent {
        branches: Vec<StepDecl>,
        weights: Option<Vec<Rat>>,
    },
    Convergent {
        legs: Vec<String>,
        target: String,
        weights: Option<Vec<Rat>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineDecl {
    pub base: String,
    pub stages: Vec<StageDecl>,
    pub essentials: Vec<NamedEventDecl>,
    pub observed: BTreeMap<String, Rat>,
    pub tolerance: Rat,
    pub max_iterations: u32,
    pub update_hook: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub version: u64,
    pub description: Option<String>,
    pub spaces: Vec<SpaceDecl>,
    pub maps: Vec<MapDecl>,
    pub edges: Vec<EdgeDecl>,
    pub divergent: Vec<DivergentDecl>,
    pub convergent: Vec<ConvergentDecl>,
    pub essentials: Vec<EssentialDecl>,
    pub pipeline: Option<PipelineDecl>,
}

struct Parser {
    strict: bool,
    warnings: Vec<String>,
}

impl Parser {
    fn check_keys(
        &mut self,
        obj: &Map<String, Value>,
        path: &str,
        allowed: &[&str],
    ) -> Result<(), ModelError> {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                if self.strict {
                    return Err(semantic(path, format!("unknown field `{key}`")));
                }
                self.warnings.push(format!("{path}: unknown field `{key}`"));
            }
        }
        Ok(())
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ModelError> {
    v.as_object()
        .ok_or_else(|| semantic(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ModelError> {
    v.as_array()
        .ok_or_else(|| semantic(path, "expected an array"))
}

fn req<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, ModelError> {
    obj.get(key)
        .ok_or_else(|| semantic(path, format!("missing required field `{key}`")))
}

fn get_string(obj: &Map<String, Value>, path: &str, key: &str) -> Result<String, ModelError> {
    req(obj, path, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| semantic(format!("{path}.{key}"), "expected a string"))
}

fn get_string_list(
    obj: &Map<String, Value>,
    path: &str,
    key: &str,
) -> Result<Vec<String>, ModelError> {
    let p = format!("{path}.{key}");
    as_array(req(obj, path, key)?, &p)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| semantic(format!("{p}[{i}]"), "expected a string"))
        })
        .collect()
}

fn parse_rat_value(v: &Value, path: &str) -> Result<Rat, ModelError> {
    match v {
        Value::String(s) => parse_rational(s).map_err(|e| semantic(path, e.to_string())),
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            parse_rational(&n.to_string()).map_err(|e| semantic(path, e.to_string()))
        }
        _ => Err(semantic(
            path,
            "expected a rational string like \"7/10\" or \"0.7\"",
        )),
    }
}

fn get_rat_list(
    obj: &Map<String, Value>,
    path: &str,
    key: &str,
) -> Result<Vec<Rat>, ModelError> {
    let p = format!("{path}.{key}");
    as_array(req(obj, path, key)?, &p)?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_rat_value(v, &format!("{p}[{i}]")))
        .collect()
}

fn parse_space(p: &mut Parser, v: &Value, path: &str) -> Result<SpaceDecl, ModelError> {
    let obj = as_object(v, path)?;
    p.check_keys(obj, path, &["id", "outcomes", "atoms", "masses"])?;
    let id = get_string(obj, path, "id")?;
    let outcomes = get_string_list(obj, path, "outcomes")?;
    let atoms = match obj.get("atoms") {
        Some(v) => {
            let ap = format!("{path}.atoms");
            as_array(v, &ap)?
                .iter()
                .enumerate()
                .map(|(i, block)| {
                    let bp = format!("{ap}[{i}]");
                    as_array(block, &bp)?
                        .iter()
                        .enumerate()
                        .map(|(j, o)| {
                            o.as_str()
                                .map(str::to_string)
                                .ok_or_else(|| semantic(format!("{bp}[{j}]"), "expected a string"))
                        })
                        .collect()
                })
                .collect::<Result<Vec<Vec<String>>, _>>()?
        }
        None => outcomes.iter().map(|o| vec![o.clone()]).collect(),
    };
    let masses = match obj.get("masses") {
        Some(_) => Some(get_rat_list(obj, path, "masses")?),
        None => None,
    };
    Ok(SpaceDecl {
        id,
        outcomes,
        atoms,
        masses,
    })
}

fn parse_map(p: &mut Parser, v: &Value, path: &str) -> Result<MapDecl, ModelError> {
    let obj = as_object(v, path)?;
    p.check_keys(obj, path, &["name", "src", "dst", "kind", "pairs"])?;
    let kind = match obj.get("kind") {
        Some(Value::String(s)) => MapKind::from_str_opt(s)
            .ok_or_else(|| semantic(format!("{path}.kind"), format!("unknown map kind `{s}`")))?,
        Some(_) => return Err(semantic(format!("{path}.kind"), "expected a string")),
        None => MapKind::Generic,
    };
    let pairs_path = format!("{path}.pairs");
    let pairs_obj = as_object(req(obj, path, "pairs")?, &pairs_path)?;
    let mut pairs = BTreeMap::new();
    for (k, val) in pairs_obj {
        let img = val
            .as_str()
            .ok_or_else(|| semantic(format!("{pairs_path}.{k}"), "expected a string"))?;
        pairs.insert(k.clone(), img.to_string());
    }
    Ok(MapDecl {
        name: get_string(obj, path, "name")?,
        src: get_string(obj, path, "src")?,
        dst: get_string(obj, path, "dst")?,
        kind,
        pairs,
    })
}

fn parse_step(p: &mut Parser, v: &Value, path: &str) -> Result<StepDecl, ModelError> {
    let obj = as_object(v, path)?;
    p.check_keys(obj, path, &["map", "target"])?;
    Ok(StepDecl {
        map: get_string(obj, path, "map")?,
        target: get_string(obj, path, "target")?,
    })
}

fn parse_weights(
    obj: &Map<String, Value>,
    path: &str,
) -> Result<Option<Vec<Rat>>, ModelError> {
    match obj.get("weights") {
        Some(_) => Ok(Some(get_rat_list(obj, path, "weights")?)),
        None => Ok(None),
    }
}

fn parse_named_event(p: &mut Parser, v: &Value, path: &str) -> Result<NamedEventDecl, ModelError> {
    let obj = as_object(v, path)?;
    p.check_keys(obj, path, &["name", "members"])?;
    Ok(NamedEventDecl {
        name: get_string(obj, path, "name")?,
        members: get_string_list(obj, path, "members")?,
    })
}

fn parse_stage(p: &mut Parser, v: &Value, path: &str) -> Result<StageDecl, ModelError> {
    let obj = as_object(v, path)?;
    let kind = get_string(obj, path, "kind")?;
    match kind.as_str() {
        "direct" => {
            p.check_keys(obj, path, &["kind", "map", "target"])?;
            Ok(StageDecl::Direct {
                map: get_string(obj, path, "map")?,
                target: get_string(obj, path, "target")?,
            })
        }
        "sequential" => {
            p.check_keys(obj, path, &["kind", "steps"])?;
            let sp = format!("{path}.steps");
            let steps = as_array(req(obj, path, "steps")?, &sp)?
                .iter()
                .enumerate()
                .map(|(i, s)| parse_step(p, s, &format!("{sp}[{i}]")))
                .collect::<Result<_, _>>()?;
            Ok(StageDecl::Sequential { steps })
        }
        "divergent" => {
            p.check_keys(obj, path, &["kind", "branches", "weights"])?;
            let bp = format!("{path}.branches");
            let branches = as_array(req(obj, path, "branches")?, &bp)?
                .iter()
                .enumerate()
                .map(|(i, s)| parse_step(p, s, &format!("{bp}[{i}]")))
                .collect::<Result<_, _>>()?;
            Ok(StageDecl::Divergent {
                branches,
                weights: parse_weights(obj, path)?,
            })
        }
        "convergent" => {
            p.check_keys(obj, path, &["kind", "legs", "target", "weights"])?;
            Ok(StageDecl::Convergent {
                legs: get_string_list(obj, path, "legs")?,
                target: get_string(obj, path, "target")?,
                weights: parse_weights(obj, path)?,
            })
        }
        other => Err(semantic(
            format!("{path}.kind"),
            format!("unknown stage kind `{other}`"),
        )),
    }
}

pub fn parse_model(text: &str, strict: bool) -> Result<(ModelDocument, Vec<String>), ModelError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut p = Parser {
        strict,
        warnings: Vec::new(),
    };
    let root = as_object(&value, "$")?;
    p.check_keys(
        root,
        "$",
        &[
            "version",
            "description",
            "spaces",
            "maps",
            "edges",
            "divergent",
            "convergent",
            "essentials",
            "pipeline",
        ],
    )?;
    let version = req(root, "$", "version")?
        .as_u64()
        .ok_or_else(|| semantic("$.version", "expected an integer"))?;
    if version != FORMAT_VERSION {
        return Err(semantic(
            "$.version",
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }

    let description = match root.get("description") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(semantic("$.description", "expected a string")),
        None => None,
    };

    let mut doc = ModelDocument {
        version,
        description,
        spaces: Vec::new(),
        maps: Vec::new(),
        edges: Vec::new(),
        divergent: Vec::new(),
        convergent: Vec::new(),
        essentials: Vec::new(),
        pipeline: None,
    };

    if let Some(v) = root.get("spaces") {
        for (i, s) in as_array(v, "$.spaces")?.iter().enumerate() {
            doc.spaces.push(parse_space(&mut p, s, &format!("$.spaces[{i}]"))?);
        }
    }
    if let Some(v) = root.get("maps") {
        for (i, m) in as_array(v, "$.maps")?.iter().enumerate() {
            doc.maps.push(parse_map(&mut p, m, &format!("$.maps[{i}]"))?);
        }
    }
    if let Some(v) = root.get("edges") {
        for (i, e) in as_array(v, "$.edges")?.iter().enumerate() {
            let path = format!("$.edges[{i}]");
            let obj = as_object(e, &path)?;
            p.check_keys(obj, &path, &["src", "dst", "map"])?;
            doc.edges.push(EdgeDecl {
                src: get_string(obj, &path, "src")?,
                dst: get_string(obj, &path, "dst")?,
                map: get_string(obj, &path, "map")?,
            });
        }
    }
    if let Some(v) = root.get("divergent") {
        for (i, d) in as_array(v, "$.divergent")?.iter().enumerate() {
            let path = format!("$.divergent[{i}]");
            let obj = as_object(d, &path)?;
            p.check_keys(obj, &path, &["name", "src", "branches", "weights"])?;
            let bp = format!("{path}.branches");
            let branches = as_array(req(obj, &path, "branches")?, &bp)?
                .iter()
                .enumerate()
                .map(|(j, s)| parse_step(&mut p, s, &format!("{bp}[{j}]")))
                .collect::<Result<_, _>>()?;
            doc.divergent.push(DivergentDecl {
                name: get_string(obj, &path, "name")?,
                src: get_string(obj, &path, "src")?,
                branches,
                weights: parse_weights(obj, &path)?,
            });
        }
    }
    if let Some(v) = root.get("convergent") {
        for (i, c) in as_array(v, "$.convergent")?.iter().enumerate() {
            let path = format!("$.convergent[{i}]");
            let obj = as_object(c, &path)?;
            p.check_keys(obj, &path, &["name", "dst", "legs", "weights"])?;
            let lp = format!("{path}.legs");
            let legs = as_array(req(obj, &path, "legs")?, &lp)?
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    let lpath = format!("{lp}[{j}]");
                    let lobj = as_object(l, &lpath)?;
                    p.check_keys(lobj, &lpath, &["src", "map"])?;
                    Ok(ConvergentLegDecl {
                        src: get_string(lobj, &lpath, "src")?,
                        map: get_string(lobj, &lpath, "map")?,
                    })
                })
                .collect::<Result<_, ModelError>>()?;
            doc.convergent.push(ConvergentDecl {
                name: get_string(obj, &path, "name")?,
                dst: get_string(obj, &path, "dst")?,
                legs,
                weights: parse_weights(obj, &path)?,
            });
        }
    }
    if let Some(v) = root.get("essentials") {
        for (i, e) in as_array(v, "$.essentials")?.iter().enumerate() {
            let path = format!("$.essentials[{i}]");
            let obj = as_object(e, &path)?;
            p.check_keys(obj, &path, &["space", "events"])?;
            let ep = format!("{path}.events");
            let events = as_array(req(obj, &path, "events")?, &ep)?
                .iter()
                .enumerate()
                .map(|(j, ev)| parse_named_event(&mut p, ev, &format!("{ep}[{j}]")))
                .collect::<Result<_, _>>()?;
            doc.essentials.push(EssentialDecl {
                space: get_string(obj, &path, "space")?,
                events,
            });
        }
    }
    if let Some(v) = root.get("pipeline") {
        let path = "$.pipeline";
        let obj = as_object(v, path)?;
        p.check_keys(
            obj,
            path,
            &[
                "base",
                "stages",
                "essentials",
                "observed",
                "tolerance",
                "max_iterations",
                "update_hook",
            ],
        )?;
        let sp = format!("{path}.stages");
        let stages = as_array(req(obj, path, "stages")?, &sp)?
            .iter()
            .enumerate()
            .map(|(i, s)| parse_stage(&mut p, s, &format!("{sp}[{i}]")))
            .collect::<Result<_, _>>()?;
        let ep = format!("{path}.essentials");
        let essentials = as_array(req(obj, path, "essentials")?, &ep)?
            .iter()
            .enumerate()
            .map(|(i, e)| parse_named_event(&mut p, e, &format!("{ep}[{i}]")))
            .collect::<Result<_, _>>()?;
        let op = format!("{path}.observed");
        let observed_obj = as_object(req(obj, path, "observed")?, &op)?;
        let mut observed = BTreeMap::new();
        for (k, val) in observed_obj {
            observed.insert(k.clone(), parse_rat_value(val, &format!("{op}.{k}"))?);
        }
        let tolerance = match obj.get("tolerance") {
            Some(t) => {
                let t = parse_rat_value(t, &format!("{path}.tolerance"))?;
                if t < Rat::from_integer(0.into()) {
                    return Err(semantic(
                        format!("{path}.tolerance"),
                        "tolerance must be nonnegative",
                    ));
                }
                t
            }
            None => Rat::from_integer(0.into()),
        };
        let max_iterations = match obj.get("max_iterations") {
            Some(m) => m
                .as_u64()
                .filter(|m| *m > 0)
                .ok_or_else(|| {
                    semantic(format!("{path}.max_iterations"), "expected a positive integer")
                })? as u32,
            None => 1,
        };
        let update_hook = match obj.get("update_hook") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(semantic(format!("{path}.update_hook"), "expected a string"))
            }
            None => "identity".to_string(),
        };
        doc.pipeline = Some(PipelineDecl {
            base: get_string(obj, path, "base")?,
            stages,
            essentials,
            observed,
            tolerance,
            max_iterations,
            update_hook,
        });
    }
    Ok((doc, p.warnings))
}

fn rat_value(r: &Rat) -> Value {
    Value::String(format_rational(r))
}

fn step_value(s: &StepDecl) -> Value {
    let mut m = Map::new();
    m.insert("map".into(), Value::String(s.map.clone()));
    m.insert("target".into(), Value::String(s.target.clone()));
    Value::Object(m)
}

fn event_value(e: &NamedEventDecl) -> Value {
    let mut m = Map::new();
    m.insert("name".into(), Value::String(e.name.clone()));
    m.insert(
        "members".into(),
        Value::Array(e.members.iter().cloned().map(Value::String).collect()),
    );
    Value::Object(m)
}

pub fn model_to_value(doc: &ModelDocument) -> Value {
    let mut root = Map::new();
    root.insert("version".into(), Value::Number(doc.version.into()));
    if let Some(d) = &doc.description {
        root.insert("description".into(), Value::String(d.clone()));
    }
    root.insert(
        "spaces".into(),
        Value::Array(
            doc.spaces
                .iter()
                .map(|s| {
                    let mut m = Map::new();
                    m.insert("id".into(), Value::String(s.id.clone()));
                    m.insert(
                        "outcomes".into(),
                        Value::Array(s.outcomes.iter().cloned().map(Value::String).collect()),
                    );
                    m.insert(
                        "atoms".into(),
                        Value::Array(
                            s.atoms
                                .iter()
                                .map(|b| {
                                    Value::Array(b.iter().cloned().map(Value::String).collect())
                                })
                                .collect(),
                        ),
                    );
                    if let Some(masses) = &s.masses {
                        m.insert(
                            "masses".into(),
                            Value::Array(masses.iter().map(rat_value).collect()),
                        );
                    }
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    root.insert(
        "maps".into(),
        Value::Array(
            doc.maps
                .iter()
                .map(|md| {
                    let mut m = Map::new();
                    m.insert("name".into(), Value::String(md.name.clone()));
                    m.insert("src".into(), Value::String(md.src.clone()));
                    m.insert("dst".into(), Value::String(md.dst.clone()));
                    m.insert("kind".into(), Value::String(md.kind.as_str().to_string()));
                    let pairs: Map<String, Value> = md
                        .pairs
                        .iter()
                        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                        .collect();
                    m.insert("pairs".into(), Value::Object(pairs));
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    root.insert(
        "edges".into(),
        Value::Array(
            doc.edges
                .iter()
                .map(|e| {
                    let mut m = Map::new();
                    m.insert("src".into(), Value::String(e.src.clone()));
                    m.insert("dst".into(), Value::String(e.dst.clone()));
                    m.insert("map".into(), Value::String(e.map.clone()));
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    root.insert(
        "divergent".into(),
        Value::Array(
            doc.divergent
                .iter()
                .map(|d| {
                    let mut m = Map::new();
                    m.insert("name".into(), Value::String(d.name.clone()));
                    m.insert("src".into(), Value::String(d.src.clone()));
                    m.insert(
                        "branches".into(),
                        Value::Array(d.branches.iter().map(step_value).collect()),
                    );
                    if let Some(w) = &d.weights {
                        m.insert("weights".into(), Value::Array(w.iter().map(rat_value).collect()));
                    }
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    root.insert(
        "convergent".into(),
        Value::Array(
            doc.convergent
                .iter()
                .map(|c| {
                    let mut m = Map::new();
                    m.insert("name".into(), Value::String(c.name.clone()));
                    m.insert("dst".into(), Value::String(c.dst.clone()));
                    m.insert(
                        "legs".into(),
                        Value::Array(
                            c.legs
                                .iter()
                                .map(|l| {
                                    let mut lm = Map::new();
                                    lm.insert("src".into(), Value::String(l.src.clone()));
                                    lm.insert("map".into(), Value::String(l.map.clone()));
                                    Value::Object(lm)
                                })
                                .collect(),
                        ),
                    );
                    if let Some(w) = &c.weights {
                        m.insert("weights".into(), Value::Array(w.iter().map(rat_value).collect()));
                    }
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    root.insert(
        "essentials".into(),
        Value::Array(
            doc.essentials
                .iter()
                .map(|e| {
                    let mut m = Map::new();
                    m.insert("space".into(), Value::String(e.space.clone()));
                    m.insert(
                        "events".into(),
                        Value::Array(e.events.iter().map(event_value).collect()),
                    );
                    Value::Object(m)
                })
                .collect(),
        ),
    );
    if let Some(pd) = &doc.pipeline {
        let mut m = Map::new();
        m.insert("base".into(), Value::String(pd.base.clone()));
        m.insert(
            "stages".into(),
            Value::Array(
                pd.stages
                    .iter()
                    .map(|s| {
                        let mut sm = Map::new();
                        match s {
                            StageDecl::Direct { map, target } => {
                                sm.insert("kind".into(), Value::String("direct".into()));
                                sm.insert("map".into(), Value::String(map.clone()));
                                sm.insert("target".into(), Value::String(target.clone()));
                            }
                            StageDecl::Sequential { steps } => {
                                sm.insert("kind".into(), Value::String("sequential".into()));
                                sm.insert(
                                    "steps".into(),
                                    Value::Array(steps.iter().map(step_value).collect()),
                                );
                            }
                            StageDecl::Divergent { branches, weights } => {
                                sm.insert("kind".into(), Value::String("divergent".into()));
                                sm.insert(
                                    "branches".into(),
                                    Value::Array(branches.iter().map(step_value).collect()),
                                );
                                if let Some(w) = weights {
                                    sm.insert(
                                        "weights".into(),
                                        Value::Array(w.iter().map(rat_value).collect()),
                                    );
                                }
                            }
                            StageDecl::Convergent {
                                legs,
                                target,
                                weights,
                            } => {
                                sm.insert("kind".into(), Value::String("convergent".into()));
                                sm.insert(
                                    "legs".into(),
                                    Value::Array(
                                        legs.iter().cloned().map(Value::String).collect(),
                                    ),
                                );
                                sm.insert("target".into(), Value::String(target.clone()));
                                if let Some(w) = weights {
                                    sm.insert(
                                        "weights".into(),
                                        Value::Array(w.iter().map(rat_value).collect()),
                                    );
                                }
                            }
                        }
                        Value::Object(sm)
                    })
                    .collect(),
            ),
        );
        m.insert(
            "essentials".into(),
            Value::Array(pd.essentials.iter().map(event_value).collect()),
        );
        let observed: Map<String, Value> = pd
            .observed
            .iter()
            .map(|(k, v)| (k.clone(), rat_value(v)))
            .collect();
        m.insert("observed".into(), Value::Object(observed));
        m.insert("tolerance".into(), rat_value(&pd.tolerance));
        m.insert(
            "max_iterations".into(),
            Value::Number((pd.max_iterations as u64).into()),
        );
        m.insert("update_hook".into(), Value::String(pd.update_hook.clone()));
        root.insert("pipeline".into(), Value::Object(m));
    }
    Value::Object(root)
}

pub fn serialize_model(doc: &ModelDocument) -> String {
    let mut text = serde_json::to_string_pretty(&model_to_value(doc))
        .expect("document serialization cannot fail");
    text.push('\n');
    text
}

// ---- resolution into core objects ----

impl ModelDocument {
    pub fn space_decl(&self, id: &str) -> Result<&SpaceDecl, ModelError> {
        self.spaces
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| semantic("$.spaces", format!("no space with id `{id}`")))
    }

    pub fn map_decl(&self, name: &str) -> Result<&MapDecl, ModelError> {
        self.maps
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| semantic("$.maps", format!("no map named `{name}`")))
    }

    pub fn resolve_skeleton(&self, id: &str) -> Result<SpaceSkeleton, ModelError> {
        let decl = self.space_decl(id)?;
        SpaceSkeleton::new(
            decl.id.clone(),
            decl.outcomes.clone(),
            decl.atoms
                .iter()
                .map(|b| b.iter().cloned().collect::<BTreeSet<String>>())
                .collect(),
        )
        .map_err(|e| semantic(format!("$.spaces[{id}]"), e.to_string()))
    }

    pub fn resolve_space(&self, id: &str) -> Result<FiniteProbSpace, ModelError> {
        let decl = self.space_decl(id)?;
        let skeleton = self.resolve_skeleton(id)?;
        let masses = decl
            .masses
            .clone()
            .ok_or_else(|| semantic(format!("$.spaces[{id}]"), "space has no masses"))?;
        FiniteProbSpace::from_skeleton(skeleton, masses)
            .map_err(|e| semantic(format!("$.spaces[{id}]"), e.to_string()))
    }

    pub fn resolve_target(&self, id: &str) -> Result<TargetSkeleton, ModelError> {
        let decl = self.space_decl(id)?;
        Ok(TargetSkeleton {
            skeleton: self.resolve_skeleton(id)?,
            declared_masses: decl.masses.clone(),
        })
    }

    pub fn resolve_map(&self, name: &str) -> Result<AbstractionMap, ModelError> {
        let decl = self.map_decl(name)?;
        Ok(AbstractionMap::new(
            decl.src.clone(),
            decl.dst.clone(),
            decl.pairs.clone(),
            decl.kind,
        ))
    }

    /// Vertices are the spaces that carry masses; edges come from the edge
    /// section. No admission checks: pair with `check_dag`.
    pub fn resolve_dag(&self) -> Result<HpamDag, ModelError> {
        let mut vertices = Vec::new();
        for s in &self.spaces {
            if s.masses.is_some() {
                vertices.push(self.resolve_space(&s.id)?);
            }
        }
        let mut edges = Vec::new();
        for e in &self.edges {
            let map = self.resolve_map(&e.map)?;
            edges.push(DagEdge {
                src: e.src.clone(),
                dst: e.dst.clone(),
                map,
            });
        }
        Ok(HpamDag::from_parts(vertices, edges))
    }

    pub fn resolve_essentials(&self, space_id: &str) -> Result<EssentialEventSet, ModelError> {
        let decl = self
            .essentials
            .iter()
            .find(|e| e.space == space_id)
            .ok_or_else(|| {
                semantic(
                    "$.essentials",
                    format!("no essential events declared for space `{space_id}`"),
                )
            })?;
        Ok(EssentialEventSet::new(
            space_id,
            decl.events
                .iter()
                .map(|e| EssentialEvent {
                    name: e.name.clone(),
                    members: e.members.iter().cloned().collect(),
                })
                .collect(),
        ))
    }

    pub fn resolve_divergent(
        &self,
        decl: &DivergentDecl,
    ) -> Result<(FiniteProbSpace, DivergentFamily), ModelError> {
        let src = self.resolve_space(&decl.src)?;
        let branches = decl
            .branches
            .iter()
            .map(|b| {
                Ok(DivergentBranch {
                    map: self.resolve_map(&b.map)?,
                    target: self.resolve_skeleton(&b.target)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let weights = decl
            .weights
            .clone()
            .unwrap_or_else(|| uniform_weights(branches.len().max(1)));
        Ok((
            src,
            DivergentFamily {
                src_id: decl.src.clone(),
                branches,
                weights,
            },
        ))
    }

    pub fn resolve_convergent(
        &self,
        decl: &ConvergentDecl,
    ) -> Result<(ConvergentFamily, SpaceSkeleton), ModelError> {
        let legs = decl
            .legs
            .iter()
            .map(|l| {
                Ok(ConvergentLeg {
                    source: self.resolve_space(&l.src)?,
                    map: self.resolve_map(&l.map)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let weights = decl
            .weights
            .clone()
            .unwrap_or_else(|| uniform_weights(legs.len().max(1)));
        Ok((
            ConvergentFamily {
                dst_id: decl.dst.clone(),
                legs,
                weights,
            },
            self.resolve_skeleton(&decl.dst)?,
        ))
    }

    pub fn resolve_pipeline(&self) -> Result<PipelineSpec, ModelError> {
        let decl = self
            .pipeline
            .as_ref()
            .ok_or_else(|| semantic("$.pipeline", "document has no pipeline section"))?;
        let base = self.resolve_space(&decl.base)?;
        let mut stages = Vec::with_capacity(decl.stages.len());
        for stage in &decl.stages {
            stages.push(match stage {
                StageDecl::Direct { map, target } => StageConfig::Direct {
                    map: self.resolve_map(map)?,
                    target: self.resolve_target(target)?,
                },
                StageDecl::Sequential { steps } => StageConfig::Sequential {
                    steps: steps
                        .iter()
                        .map(|s| Ok((self.resolve_map(&s.map)?, self.resolve_target(&s.target)?)))
                        .collect::<Result<_, ModelError>>()?,
                },
                StageDecl::Divergent { branches, weights } => {
                    let resolved: Vec<(AbstractionMap, TargetSkeleton)> = branches
                        .iter()
                        .map(|b| Ok((self.resolve_map(&b.map)?, self.resolve_target(&b.target)?)))
                        .collect::<Result<_, ModelError>>()?;
                    let weights = weights
                        .clone()
                        .unwrap_or_else(|| uniform_weights(resolved.len().max(1)));
                    StageConfig::Divergent {
                        branches: resolved,
                        weights,
                    }
                }
                StageDecl::Convergent {
                    legs,
                    target,
                    weights,
                } => {
                    let resolved: Vec<AbstractionMap> = legs
                        .iter()
                        .map(|l| self.resolve_map(l))
                        .collect::<Result<_, ModelError>>()?;
                    let weights = weights
                        .clone()
                        .unwrap_or_else(|| uniform_weights(resolved.len().max(1)));
                    StageConfig::Convergent {
                        legs: resolved,
                        target: self.resolve_target(target)?,
                        weights,
                    }
                }
            });
        }
        Ok(PipelineSpec {
            base,
            stages,
            essentials: decl
                .essentials
                .iter()
                .map(|e| EssentialEvent {
                    name: e.name.clone(),
                    members: e.members.iter().cloned().collect(),
                })
                .collect(),
            observed: decl.observed.clone(),
            tolerance: decl.tolerance.clone(),
            max_iterations: decl.max_iterations,
            update_hook: decl.update_hook.clone(),
        })
    }
}

// ---- machine-readable trace output ----

fn space_value(space: &FiniteProbSpace) -> Value {
    let mut m = Map::new();
    m.insert("id".into(), Value::String(space.id().to_string()));
    m.insert(
        "outcomes".into(),
        Value::Array(space.outcomes().iter().cloned().map(Value::String).collect()),
    );
    m.insert(
        "atoms".into(),
        Value::Array(
            space
                .atoms()
                .iter()
                .map(|b| Value::Array(b.iter().cloned().map(Value::String).collect()))
                .collect(),
        ),
    );
    m.insert(
        "masses".into(),
        Value::Array(space.masses().iter().map(rat_value).collect()),
    );
    Value::Object(m)
}

fn comparison_value(report: &ComparisonReport) -> Value {
    let mut m = Map::new();
    m.insert(
        "entries".into(),
        Value::Array(
            report
                .entries
                .iter()
                .map(|e| {
                    let mut em = Map::new();
                    em.insert("event".into(), Value::String(e.name.clone()));
                    em.insert("computed".into(), rat_value(&e.computed));
                    em.insert("observed".into(), rat_value(&e.observed));
                    em.insert("difference".into(), rat_value(&e.difference));
                    Value::Object(em)
                })
                .collect(),
        ),
    );
    m.insert("tolerance".into(), rat_value(&report.tolerance));
    m.insert("matches".into(), Value::Bool(report.matches()));
    Value::Object(m)
}

fn hpoa_value(hpoa: &HpoaResult) -> Value {
    let mut m = Map::new();
    m.insert("quotient".into(), space_value(&hpoa.quotient));
    let mapping: Map<String, Value> = hpoa
        .quotient_map
        .mapping
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
        .collect();
    m.insert("quotient_map".into(), Value::Object(mapping));
    m.insert(
        "certificate".into(),
        Value::Array(
            hpoa.certificate
                .iter()
                .map(|c| {
                    let mut cm = Map::new();
                    cm.insert("event".into(), Value::String(c.name.clone()));
                    cm.insert(
                        "image_cells".into(),
                        Value::Array(c.image_cells.iter().cloned().map(Value::String).collect()),
                    );
                    cm.insert("probability".into(), rat_value(&c.probability));
                    Value::Object(cm)
                })
                .collect(),
        ),
    );
    m.insert(
        "maximality_witnesses".into(),
        Value::Array(
            hpoa.maximality_witnesses
                .iter()
                .map(|w| {
                    let mut wm = Map::new();
                    wm.insert("cell_a".into(), Value::String(w.cell_a.clone()));
                    wm.insert("cell_b".into(), Value::String(w.cell_b.clone()));
                    wm.insert("broken_event".into(), Value::String(w.broken_event.clone()));
                    Value::Object(wm)
                })
                .collect(),
        ),
    );
    Value::Object(m)
}

fn snapshot_value(s: &StageSnapshot) -> Value {
    let mut m = Map::new();
    m.insert("stage".into(), Value::Number((s.stage as u64).into()));
    m.insert("kind".into(), Value::String(s.kind.clone()));
    m.insert(
        "added_vertices".into(),
        Value::Array(s.added_vertices.iter().cloned().map(Value::String).collect()),
    );
    Value::Object(m)
}

/// Serializes a pipeline run to the trace document (same format family as the
/// model file: JSON with rationals as strings). Deterministic.
pub fn outcome_to_value(outcome: &PipelineOutcome) -> Value {
    let mut m = Map::new();
    let verdict = match &outcome.verdict {
        Verdict::Success => Value::String("success".into()),
        Verdict::IterationLimit => Value::String("iteration-limit".into()),
        Verdict::Failure { reason } => {
            let mut fm = Map::new();
            fm.insert("failure".into(), Value::String(reason.clone()));
            Value::Object(fm)
        }
    };
    m.insert("verdict".into(), verdict);
    m.insert(
        "iterations".into(),
        Value::Number((outcome.iterations_run as u64).into()),
    );
    m.insert(
        "stages".into(),
        Value::Array(outcome.snapshots.iter().map(snapshot_value).collect()),
    );
    if let Some(id) = &outcome.final_space_id {
        m.insert("final_space".into(), Value::String(id.clone()));
    }
    if let Some(h) = &outcome.hpoa {
        m.insert("hpoa".into(), hpoa_value(h));
    }
    if let Some(c) = &outcome.comparison {
        m.insert("comparison".into(), comparison_value(c));
    }
    Value::Object(m)
}

pub fn outcome_to_string(outcome: &PipelineOutcome) -> String {
    let mut text = serde_json::to_string_pretty(&outcome_to_value(outcome))
        .expect("trace serialization cannot fail");
    text.push('\n');
    text
}
