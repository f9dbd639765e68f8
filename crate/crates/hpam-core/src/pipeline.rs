//! Staged hybrid abstraction runs: a base space is pushed through an ordered
//! list of stages (direct, sequential, divergent, convergent), the quotient at
//! the final vertex is computed against declared essential events, and the
//! result is compared with an observed distribution, iterating through an
//! update hook on mismatch.
//!
//! Stage kinds and update hooks are strategies behind common traits, looked up
//! by name in registries, so model files select them at runtime and callers
//! can register their own.

use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::abstraction::{
    build_convergent, build_divergent, AbstractionError, AbstractionMap, ConvergentFamily,
    ConvergentLeg, DivergentBranch, DivergentFamily, UnifiedSpace,
};
use crate::dag::{DagError, HpamDag};
use crate::hpoa::{compute_hpoa, EssentialEventSet, HpoaError, HpoaResult};
use crate::measure::{pushforward, FiniteProbSpace, MeasureError, SpaceSkeleton};
use crate::rational::{abs_diff, format_rational, Rat};

/// A stage target: the skeleton to push onto plus optionally the masses the
/// model claims it will carry. Declared masses are checked against the
/// computed pushforward and rejected on mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSkeleton {
    pub skeleton: SpaceSkeleton,
    pub declared_masses: Option<Vec<Rat>>,
}

impl TargetSkeleton {
    pub fn bare(skeleton: SpaceSkeleton) -> Self {
        TargetSkeleton {
            skeleton,
            declared_masses: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageConfig {
    Direct {
        map: AbstractionMap,
        target: TargetSkeleton,
    },
    Sequential {
        steps: Vec<(AbstractionMap, TargetSkeleton)>,
    },
    Divergent {
        branches: Vec<(AbstractionMap, TargetSkeleton)>,
        weights: Vec<Rat>,
    },
    Convergent {
        legs: Vec<AbstractionMap>,
        target: TargetSkeleton,
        weights: Vec<Rat>,
    },
}

impl StageConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            StageConfig::Direct { .. } => "direct",
            StageConfig::Sequential { .. } => "sequential",
            StageConfig::Divergent { .. } => "divergent",
            StageConfig::Convergent { .. } => "convergent",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("stage {stage}: expected {expected}, found {found}")]
    StageTypeMismatch {
        stage: usize,
        expected: String,
        found: String,
    },
    #[error("stage {stage}: declared target masses differ from the pushforward at atom #{atom}: declared {}, computed {}", format_rational(declared), format_rational(computed))]
    DeclaredMassMismatch {
        stage: usize,
        atom: usize,
        declared: Rat,
        computed: Rat,
    },
    #[error("stage {stage}: {source}")]
    StageFailed { stage: usize, source: DagError },
    #[error("stage {stage}: {source}")]
    StageAbstraction {
        stage: usize,
        source: AbstractionError,
    },
    #[error("stage {stage}: {source}")]
    StageMeasure { stage: usize, source: MeasureError },
    #[error("unknown stage kind `{0}`")]
    UnknownStageKind(String),
    #[error("unknown update hook `{0}`")]
    UnknownHook(String),
    #[error("observed and computed distributions cover different events: {detail}")]
    EventSetMismatch { detail: String },
    #[error("pipeline has no stages")]
    NoStages,
    #[error("max_iterations must be positive")]
    ZeroIterations,
    #[error(transparent)]
    Hpoa(#[from] HpoaError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// What the pipeline is currently standing on between stages.
#[derive(Debug, Clone, PartialEq)]
pub enum CurrentState {
    Single(String),
    Branches(Vec<String>),
}

impl CurrentState {
    fn describe(&self) -> String {
        match self {
            CurrentState::Single(id) => format!("single space `{id}`"),
            CurrentState::Branches(ids) => format!("{} divergent branches", ids.len()),
        }
    }
}

/// Record of what one stage added.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSnapshot {
    pub stage: usize,
    pub kind: String,
    pub added_vertices: Vec<String>,
}

/// Mutable state threaded through the stages of one pipeline iteration.
#[derive(Debug, Clone)]
pub struct PipelineCtx {
    pub dag: HpamDag,
    pub current: CurrentState,
    pub snapshots: Vec<StageSnapshot>,
    /// Mixture spaces built by divergent stages, kept for the trace; they are
    /// not DAG vertices because their mass is a weighted mixture, not a
    /// pushforward along any single admissible edge.
    pub unified_spaces: Vec<UnifiedSpace>,
}

impl PipelineCtx {
    fn new(base: FiniteProbSpace) -> Result<Self, PipelineError> {
        let id = base.id().to_string();
        let dag = HpamDag::new()
            .add_vertex(base)
            .map_err(|source| PipelineError::StageFailed { stage: 0, source })?;
        Ok(PipelineCtx {
            dag,
            current: CurrentState::Single(id),
            snapshots: Vec::new(),
            unified_spaces: Vec::new(),
        })
    }

    fn require_single(&self, stage: usize) -> Result<String, PipelineError> {
        match &self.current {
            CurrentState::Single(id) => Ok(id.clone()),
            other => Err(PipelineError::StageTypeMismatch {
                stage,
                expected: "single space".into(),
                found: other.describe(),
            }),
        }
    }

    fn require_branches(&self, stage: usize) -> Result<Vec<String>, PipelineError> {
        match &self.current {
            CurrentState::Branches(ids) => Ok(ids.clone()),
            other => Err(PipelineError::StageTypeMismatch {
                stage,
                expected: "divergent branches".into(),
                found: other.describe(),
            }),
        }
    }
}

/// One interchangeable stage kind. Implementations read their variant of
/// `StageConfig` and advance the context.
pub trait StageStrategy: Send + Sync {
    fn kind(&self) -> &'static str;
    fn apply(
        &self,
        ctx: &mut PipelineCtx,
        stage: usize,
        config: &StageConfig,
    ) -> Result<(), PipelineError>;
}

fn wrong_config(stage: usize, expected: &str, config: &StageConfig) -> PipelineError {
    PipelineError::StageTypeMismatch {
        stage,
        expected: format!("{expected} stage config"),
        found: format!("{} stage config", config.kind()),
    }
}

fn check_declared(
    stage: usize,
    target: &TargetSkeleton,
    computed: &FiniteProbSpace,
) -> Result<(), PipelineError> {
    if let Some(declared) = &target.declared_masses {
        for (i, (d, c)) in declared.iter().zip(computed.masses()).enumerate() {
            if d != c {
                return Err(PipelineError::DeclaredMassMismatch {
                    stage,
                    atom: i,
                    declared: d.clone(),
                    computed: c.clone(),
                });
            }
        }
        if declared.len() != computed.masses().len() {
            return Err(PipelineError::StageTypeMismatch {
                stage,
                expected: format!("{} declared masses", computed.masses().len()),
                found: format!("{}", declared.len()),
            });
        }
    }
    Ok(())
}

fn apply_direct_step(
    ctx: &mut PipelineCtx,
    stage: usize,
    map: &AbstractionMap,
    target: &TargetSkeleton,
) -> Result<(), PipelineError> {
    let src_id = ctx.require_single(stage)?;
    let src = ctx
        .dag
        .vertex(&src_id)
        .expect("current vertex exists")
        .clone();
    let computed = pushforward(&src, &map.mapping, &target.skeleton)
        .map_err(|source| PipelineError::StageMeasure { stage, source })?;
    check_declared(stage, target, &computed)?;
    let target_id = computed.id().to_string();
    ctx.dag = ctx
        .dag
        .add_vertex(computed)
        .and_then(|d| d.add_edge(&src_id, &target_id, map.clone()))
        .map_err(|source| PipelineError::StageFailed { stage, source })?;
    ctx.current = CurrentState::Single(target_id);
    Ok(())
}

struct DirectStage;

impl StageStrategy for DirectStage {
    fn kind(&self) -> &'static str {
        "direct"
    }

    fn apply(
        &self,
        ctx: &mut PipelineCtx,
        stage: usize,
        config: &StageConfig,
    ) -> Result<(), PipelineError> {
        let StageConfig::Direct { map, target } = config else {
            return Err(wrong_config(stage, self.kind(), config));
        };
        apply_direct_step(ctx, stage, map, target)?;
        let added = match &ctx.current {
            CurrentState::Single(id) => vec![id.clone()],
            _ => unreachable!(),
        };
        ctx.snapshots.push(StageSnapshot {
            stage,
            kind: self.kind().into(),
            added_vertices: added,
        });
        Ok(())
    }
}

struct SequentialStage;

impl StageStrategy for SequentialStage {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn apply(
        &self,
        ctx: &mut PipelineCtx,
        stage: usize,
        config: &StageConfig,
    ) -> Result<(), PipelineError> {
        let StageConfig::Sequential { steps } = config else {
            return Err(wrong_config(stage, self.kind(), config));
        };
        let mut added = Vec::with_capacity(steps.len());
        for (map, target) in steps {
            apply_direct_step(ctx, stage, map, target)?;
            if let CurrentState::Single(id) = &ctx.current {
                added.push(id.clone());
            }
        }
        ctx.snapshots.push(StageSnapshot {
            stage,
            kind: self.kind().into(),
            added_vertices: added,
        });
        Ok(())
    }
}

struct DivergentStage;

impl StageStrategy for DivergentStage {
    fn kind(&self) -> &'static str {
        "divergent"
    }

    fn apply(
        &self,
        ctx: &mut PipelineCtx,
        stage: usize,
        config: &StageConfig,
    ) -> Result<(), PipelineError> {
        let StageConfig::Divergent { branches, weights } = config else {
            return Err(wrong_config(stage, self.kind(), config));
        };
        let src_id = ctx.require_single(stage)?;
        let src = ctx
            .dag
            .vertex(&src_id)
            .expect("current vertex exists")
            .clone();
        let family = DivergentFamily {
            src_id: src_id.clone(),
            branches: branches
                .iter()
                .map(|(map, target)| DivergentBranch {
                    map: map.clone(),
                    target: target.skeleton.clone(),
                })
                .collect(),
            weights: weights.clone(),
        };
        let (targets, unified) = build_divergent(&src, &family)
            .map_err(|source| PipelineError::StageAbstraction { stage, source })?;
        let mut ids = Vec::with_capacity(targets.len());
        for ((map, target_cfg), computed) in branches.iter().zip(targets) {
            check_declared(stage, target_cfg, &computed)?;
            let id = computed.id().to_string();
            ctx.dag = ctx
                .dag
                .add_vertex(computed)
                .and_then(|d| d.add_edge(&src_id, &id, map.clone()))
                .map_err(|source| PipelineError::StageFailed { stage, source })?;
            ids.push(id);
        }
        ctx.unified_spaces.push(unified);
        ctx.snapshots.push(StageSnapshot {
            stage,
            kind: self.kind().into(),
            added_vertices: ids.clone(),
        });
        ctx.current = CurrentState::Branches(ids);
        Ok(())
    }
}

struct ConvergentStage;

impl StageStrategy for ConvergentStage {
    fn kind(&self) -> &'static str {
        "convergent"
    }

    fn apply(
        &self,
        ctx: &mut PipelineCtx,
        stage: usize,
        config: &StageConfig,
    ) -> Result<(), PipelineError> {
        let StageConfig::Convergent {
            legs,
            target,
            weights,
        } = config
        else {
            return Err(wrong_config(stage, self.kind(), config));
        };
        let branch_ids = ctx.require_branches(stage)?;
        if legs.len() != branch_ids.len() {
            return Err(PipelineError::StageTypeMismatch {
                stage,
                expected: format!("{} convergent legs", branch_ids.len()),
                found: format!("{}", legs.len()),
            });
        }
        let family = ConvergentFamily {
            dst_id: target.skeleton.id().to_string(),
            legs: legs
                .iter()
                .zip(&branch_ids)
                .map(|(map, id)| ConvergentLeg {
                    source: ctx.dag.vertex(id).expect("branch vertex exists").clone(),
                    map: map.clone(),
                })
                .collect(),
            weights: weights.clone(),
        };
        let computed = build_convergent(&family, &target.skeleton)
            .map_err(|source| PipelineError::StageAbstraction { stage, source })?;
        check_declared(stage, target, &computed)?;
        let target_id = computed.id().to_string();
        ctx.dag = ctx
            .dag
            .add_vertex(computed)
            .map_err(|source| PipelineError::StageFailed { stage, source })?;
        // every leg becomes an edge and must individually preserve the measure
        for (map, id) in legs.iter().zip(&branch_ids) {
            ctx.dag = ctx
                .dag
                .add_edge(id, &target_id, map.clone())
                .map_err(|source| PipelineError::StageFailed { stage, source })?;
        }
        ctx.snapshots.push(StageSnapshot {
            stage,
            kind: self.kind().into(),
            added_vertices: vec![target_id.clone()],
        });
        ctx.current = CurrentState::Single(target_id);
        Ok(())
    }
}

/// Stage kinds by name. The default registry holds the four built-in kinds.
pub struct StageRegistry {
    strategies: BTreeMap<&'static str, Box<dyn StageStrategy>>,
}

impl StageRegistry {
    pub fn empty() -> Self {
        StageRegistry {
            strategies: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, strategy: Box<dyn StageStrategy>) {
        self.strategies.insert(strategy.kind(), strategy);
    }

    pub fn get(&self, kind: &str) -> Option<&dyn StageStrategy> {
        self.strategies.get(kind).map(|b| b.as_ref())
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}

impl Default for StageRegistry {
    fn default() -> Self {
        let mut r = StageRegistry::empty();
        r.register(Box::new(DirectStage));
        r.register(Box::new(SequentialStage));
        r.register(Box::new(DivergentStage));
        r.register(Box::new(ConvergentStage));
        r
    }
}

/// Pure model-update rule applied between iterations on comparison mismatch.
pub trait UpdateHook: Send + Sync {
    fn name(&self) -> &'static str;
    fn update(
        &self,
        base: &FiniteProbSpace,
        comparison: &ComparisonReport,
        base_to_final: &AbstractionMap,
        essentials: &EssentialEventSet,
    ) -> Result<FiniteProbSpace, PipelineError>;
}

/// Leaves the base space untouched; a persistent mismatch then runs to the
/// iteration limit.
pub struct IdentityHook;

impl UpdateHook for IdentityHook {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn update(
        &self,
        base: &FiniteProbSpace,
        _comparison: &ComparisonReport,
        _base_to_final: &AbstractionMap,
        _essentials: &EssentialEventSet,
    ) -> Result<FiniteProbSpace, PipelineError> {
        Ok(base.clone())
    }
}

/// Rescales each base atom by observed/computed of the first essential event
/// containing its image, then renormalizes. When the essential events are a
/// disjoint cover of the final space this lands exactly on the observed
/// distribution in one step.
pub struct ProportionalFittingHook;

impl UpdateHook for ProportionalFittingHook {
    fn name(&self) -> &'static str {
        "proportional-fitting"
    }

    fn update(
        &self,
        base: &FiniteProbSpace,
        comparison: &ComparisonReport,
        base_to_final: &AbstractionMap,
        essentials: &EssentialEventSet,
    ) -> Result<FiniteProbSpace, PipelineError> {
        let ratios: BTreeMap<&String, Option<Rat>> = comparison
            .entries
            .iter()
            .map(|e| {
                let r = if e.computed.is_zero() {
                    None
                } else {
                    Some(&e.observed / &e.computed)
                };
                (&e.name, r)
            })
            .collect();
        let mut masses: Vec<Rat> = Vec::with_capacity(base.atoms().len());
        for (block, mass) in base.atoms().iter().zip(base.masses()) {
            // a measurable base atom maps entirely into one final atom
            let image = block
                .iter()
                .next()
                .and_then(|o| base_to_final.mapping.get(o));
            let factor = image
                .and_then(|img| {
                    essentials
                        .events
                        .iter()
                        .find(|ev| ev.members.contains(img))
                        .and_then(|ev| ratios.get(&ev.name).cloned().flatten())
                })
                .unwrap_or_else(|| Rat::from_integer(1.into()));
            masses.push(mass * factor);
        }
        let total: Rat = masses.iter().sum();
        if total.is_zero() {
            // nothing left to rescale; keep the base unchanged
            return Ok(base.clone());
        }
        let masses = masses.into_iter().map(|m| m / &total).collect();
        FiniteProbSpace::new(
            base.id(),
            base.outcomes().to_vec(),
            base.atoms().to_vec(),
            masses,
        )
        .map_err(PipelineError::Measure)
    }
}

/// Update hooks by name.
pub struct HookRegistry {
    hooks: BTreeMap<&'static str, Box<dyn UpdateHook>>,
}

impl HookRegistry {
    pub fn empty() -> Self {
        HookRegistry {
            hooks: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, hook: Box<dyn UpdateHook>) {
        self.hooks.insert(hook.name(), hook);
    }

    pub fn get(&self, name: &str) -> Option<&dyn UpdateHook> {
        self.hooks.get(name).map(|b| b.as_ref())
    }
}

impl Default for HookRegistry {
    fn default() -> Self {
        let mut r = HookRegistry::empty();
        r.register(Box::new(IdentityHook));
        r.register(Box::new(ProportionalFittingHook));
        r
    }
}

/// Declarative description of a hybrid abstraction run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub base: FiniteProbSpace,
    pub stages: Vec<StageConfig>,
    /// Essential events at the final space, by name.
    pub essentials: Vec<crate::hpoa::EssentialEvent>,
    /// Observed probability per essential event name.
    pub observed: BTreeMap<String, Rat>,
    pub tolerance: Rat,
    pub max_iterations: u32,
    pub update_hook: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub name: String,
    pub computed: Rat,
    pub observed: Rat,
    pub difference: Rat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub entries: Vec<ComparisonEntry>,
    pub tolerance: Rat,
}

impl ComparisonReport {
    pub fn matches(&self) -> bool {
        self.entries.iter().all(|e| e.difference <= self.tolerance)
    }
}

/// Per-event absolute differences; a match means every difference is within
/// the tolerance (exactly zero by default).
pub fn compare_outcomes(
    computed: &BTreeMap<String, Rat>,
    observed: &BTreeMap<String, Rat>,
    tolerance: &Rat,
) -> Result<ComparisonReport, PipelineError> {
    let computed_keys: Vec<&String> = computed.keys().collect();
    let observed_keys: Vec<&String> = observed.keys().collect();
    if computed_keys != observed_keys {
        return Err(PipelineError::EventSetMismatch {
            detail: format!("computed {computed_keys:?} vs observed {observed_keys:?}"),
        });
    }
    let entries = computed
        .iter()
        .map(|(name, c)| {
            let o = &observed[name];
            ComparisonEntry {
                name: name.clone(),
                computed: c.clone(),
                observed: o.clone(),
                difference: abs_diff(c, o),
            }
        })
        .collect();
    Ok(ComparisonReport {
        entries,
        tolerance: tolerance.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Success,
    /// The quotient cannot be constructed (essential events unrecoverable at
    /// the final space).
    Failure { reason: String },
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub verdict: Verdict,
    pub iterations_run: u32,
    pub hpoa: Option<HpoaResult>,
    pub snapshots: Vec<StageSnapshot>,
    pub comparison: Option<ComparisonReport>,
    pub final_space_id: Option<String>,
    /// DAG of the last iteration.
    pub dag: HpamDag,
}

/// Runs the staged loop: build the DAG, quotient the final vertex, compare,
/// and on mismatch apply the update hook and repeat, up to `max_iterations`.
pub fn run_pipeline(
    spec: &PipelineSpec,
    stages: &StageRegistry,
    hooks: &HookRegistry,
) -> Result<PipelineOutcome, PipelineError> {
    if spec.stages.is_empty() {
        return Err(PipelineError::NoStages);
    }
    if spec.max_iterations == 0 {
        return Err(PipelineError::ZeroIterations);
    }
    let hook = hooks
        .get(&spec.update_hook)
        .ok_or_else(|| PipelineError::UnknownHook(spec.update_hook.clone()))?;

    let mut base = spec.base.clone();
    let mut iterations = 0u32;
    loop {
        iterations += 1;
        let mut ctx = PipelineCtx::new(base.clone())?;
        for (i, config) in spec.stages.iter().enumerate() {
            let strategy = stages
                .get(config.kind())
                .ok_or_else(|| PipelineError::UnknownStageKind(config.kind().into()))?;
            strategy.apply(&mut ctx, i + 1, config)?;
        }
        let final_id = ctx.require_single(spec.stages.len() + 1)?;
        let final_space = ctx.dag.vertex(&final_id).expect("final vertex").clone();
        let essentials = EssentialEventSet::new(final_id.clone(), spec.essentials.clone());

        let hpoa = match compute_hpoa(&final_space, &essentials, false) {
            Ok(h) => h,
            Err(HpoaError::Measure(e)) => {
                return Ok(PipelineOutcome {
                    verdict: Verdict::Failure {
                        reason: format!("quotient cannot be constructed: {e}"),
                    },
                    iterations_run: iterations,
                    hpoa: None,
                    snapshots: ctx.snapshots,
                    comparison: None,
                    final_space_id: Some(final_id),
                    dag: ctx.dag,
                });
            }
            Err(e) => return Err(e.into()),
        };

        let computed: BTreeMap<String, Rat> = hpoa
            .certificate
            .iter()
            .map(|c| (c.name.clone(), c.probability.clone()))
            .collect();
        let comparison = compare_outcomes(&computed, &spec.observed, &spec.tolerance)?;

        if comparison.matches() {
            return Ok(PipelineOutcome {
                verdict: Verdict::Success,
                iterations_run: iterations,
                hpoa: Some(hpoa),
                snapshots: ctx.snapshots,
                comparison: Some(comparison),
                final_space_id: Some(final_id),
                dag: ctx.dag,
            });
        }
        if iterations >= spec.max_iterations {
            return Ok(PipelineOutcome {
                verdict: Verdict::IterationLimit,
                iterations_run: iterations,
                hpoa: Some(hpoa),
                snapshots: ctx.snapshots,
                comparison: Some(comparison),
                final_space_id: Some(final_id),
                dag: ctx.dag,
            });
        }
        let path = ctx
            .dag
            .find_path(base.id(), &final_id)
            .ok_or_else(|| HpoaError::NoPath {
                from: base.id().to_string(),
                to: final_id.clone(),
            })?;
        let base_to_final = ctx.dag.compose_path(&path).map_err(HpoaError::Dag)?;
        base = hook.update(&base, &comparison, &base_to_final.map, &essentials)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::MapKind;
    use crate::rational::rat;
    use crate::hpoa::EssentialEvent;
    use std::collections::BTreeSet;

    fn pairs(entries: &[(&str, &str)]) -> BTreeMap<String, String> {
        entries
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn base() -> FiniteProbSpace {
        FiniteProbSpace::discrete(
            "base",
            vec![
                ("a".into(), rat(1, 2)),
                ("b".into(), rat(1, 4)),
                ("c".into(), rat(1, 4)),
            ],
        )
        .unwrap()
    }

    fn direct_stage() -> StageConfig {
        let target =
            SpaceSkeleton::discrete("mid", vec!["x".into(), "y".into()]).unwrap();
        StageConfig::Direct {
            map: AbstractionMap::new(
                "base",
                "mid",
                pairs(&[("a", "x"), ("b", "x"), ("c", "y")]),
                MapKind::Direct,
            ),
            target: TargetSkeleton::bare(target),
        }
    }

    fn simple_spec(observed_x: Rat, hook: &str, max_iterations: u32) -> PipelineSpec {
        let mut observed = BTreeMap::new();
        observed.insert("ex".to_string(), observed_x.clone());
        observed.insert("ey".to_string(), rat(1, 1) - observed_x);
        PipelineSpec {
            base: base(),
            stages: vec![direct_stage()],
            essentials: vec![
                EssentialEvent {
                    name: "ex".into(),
                    members: BTreeSet::from(["x".to_string()]),
                },
                EssentialEvent {
                    name: "ey".into(),
                    members: BTreeSet::from(["y".to_string()]),
                },
            ],
            observed,
            tolerance: rat(0, 1),
            max_iterations,
            update_hook: hook.into(),
        }
    }

    #[test]
    fn self_consistent_spec_succeeds_in_one_iteration() {
        let spec = simple_spec(rat(3, 4), "identity", 3);
        let out = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap();
        assert_eq!(out.verdict, Verdict::Success);
        assert_eq!(out.iterations_run, 1);
        assert!(out.dag.check_dag().is_clean());
    }

    #[test]
    fn perturbed_spec_hits_iteration_limit_with_identity_hook() {
        let spec = simple_spec(rat(3, 4) - rat(1, 100), "identity", 3);
        let out = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap();
        assert_eq!(out.verdict, Verdict::IterationLimit);
        assert_eq!(out.iterations_run, 3);
        let report = out.comparison.unwrap();
        assert!(!report.matches());
        assert_eq!(report.entries[0].difference, rat(1, 100));
    }

    #[test]
    fn proportional_fitting_converges() {
        let spec = simple_spec(rat(1, 2), "proportional-fitting", 5);
        let out = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap();
        assert_eq!(out.verdict, Verdict::Success);
        assert!(out.iterations_run <= 2);
    }

    #[test]
    fn declared_mass_mismatch_reported_with_stage() {
        let target =
            SpaceSkeleton::discrete("mid", vec!["x".into(), "y".into()]).unwrap();
        let stage = StageConfig::Direct {
            map: AbstractionMap::new(
                "base",
                "mid",
                pairs(&[("a", "x"), ("b", "x"), ("c", "y")]),
                MapKind::Direct,
            ),
            target: TargetSkeleton {
                skeleton: target,
                declared_masses: Some(vec![rat(1, 2), rat(1, 2)]),
            },
        };
        let mut spec = simple_spec(rat(3, 4), "identity", 1);
        spec.stages = vec![stage];
        let err = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap_err();
        match err {
            PipelineError::DeclaredMassMismatch {
                stage,
                declared,
                computed,
                ..
            } => {
                assert_eq!(stage, 1);
                assert_eq!(declared, rat(1, 2));
                assert_eq!(computed, rat(3, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn convergent_without_branches_is_type_mismatch() {
        let target = SpaceSkeleton::discrete("t", vec!["z".into()]).unwrap();
        let stage = StageConfig::Convergent {
            legs: vec![],
            target: TargetSkeleton::bare(target),
            weights: vec![],
        };
        let mut spec = simple_spec(rat(3, 4), "identity", 1);
        spec.stages = vec![stage];
        let err = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap_err();
        assert!(matches!(err, PipelineError::StageTypeMismatch { stage: 1, .. }));
    }

    #[test]
    fn compare_outcomes_tolerance() {
        let mut computed = BTreeMap::new();
        computed.insert("e".to_string(), rat(3, 4));
        let mut observed = BTreeMap::new();
        observed.insert("e".to_string(), rat(74, 100));
        let exact = compare_outcomes(&computed, &observed, &rat(0, 1)).unwrap();
        assert!(!exact.matches());
        assert_eq!(exact.entries[0].difference, rat(1, 100));
        let loose = compare_outcomes(&computed, &observed, &rat(1, 100)).unwrap();
        assert!(loose.matches());
    }

    #[test]
    fn compare_outcomes_event_set_mismatch() {
        let mut computed = BTreeMap::new();
        computed.insert("e".to_string(), rat(1, 1));
        let observed = BTreeMap::new();
        assert!(matches!(
            compare_outcomes(&computed, &observed, &rat(0, 1)),
            Err(PipelineError::EventSetMismatch { .. })
        ));
    }

    #[test]
    fn determinism_identical_specs_identical_outcomes() {
        let spec = simple_spec(rat(3, 4), "identity", 3);
        let a = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap();
        let b = run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default())
            .unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.comparison, b.comparison);
        assert_eq!(a.dag, b.dag);
    }
}
