//! Finite probability spaces and hierarchical measure-preserving abstraction.
//!
//! The crate models finite sample spaces with partition-generated sigma-algebras
//! and exact rational measures, abstraction maps between them (direct, divergent,
//! convergent), a validated DAG of such maps, quotient construction for the
//! coarsest abstraction that keeps a declared set of events recoverable, and a
//! staged pipeline that chains the abstraction kinds end to end.
//!
//! All probability arithmetic is exact; preservation checks are rational
//! equalities, never tolerances (the pipeline's observed-outcome comparison is
//! the one place a tolerance is allowed, and it defaults to zero).

pub mod abstraction;
pub mod dag;
pub mod dot;
pub mod hpoa;
pub mod measure;
pub mod model;
pub mod pipeline;
pub mod rational;

pub use abstraction::{
    build_convergent, build_divergent, validate_direct, AbstractionError, AbstractionMap,
    ConvergentFamily, ConvergentLeg, DirectReport, DivergentBranch, DivergentFamily, MapKind,
    UnifiedSpace,
};
pub use dag::{DagError, DagViolation, HpamDag, PathComposition, ValidationReport};
pub use dot::{export_dot, export_pipeline_dot};
pub use hpoa::{
    brute_force_hpoa, check_integrity, check_minimality, compute_hpoa, factor_intermediate,
    EssentialEvent, EssentialEventSet, Factorization, HpoaError, HpoaResult, IntegrityReport,
    MinimalityReport,
};
pub use model::{
    outcome_to_string, outcome_to_value, parse_model, serialize_model, ModelDocument, ModelError,
};
pub use measure::{
    check_measurable_map, pushforward, sigma_closure, Event, FiniteProbSpace, MeasurabilityReport,
    MeasureError, SpaceSkeleton,
};
pub use pipeline::{
    compare_outcomes, run_pipeline, ComparisonReport, HookRegistry, PipelineCtx, PipelineError,
    PipelineOutcome, PipelineSpec, StageConfig, StageRegistry, StageStrategy, TargetSkeleton,
    UpdateHook, Verdict,
};
pub use rational::{format_rational, parse_rational, Rat};
