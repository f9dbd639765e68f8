//! Command-line front end for hpam-core.
//!
//! Exit codes: 0 success, 1 usage/read/syntax errors, 2 validation or
//! semantic failures, 3 pipeline runs that do not end in success.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpam_core::dot::{export_dot, export_pipeline_dot};
use hpam_core::measure::pushforward;
use hpam_core::model::{outcome_to_string, parse_model, ModelDocument, ModelError};
use hpam_core::pipeline::{run_pipeline, HookRegistry, StageRegistry, Verdict};
use hpam_core::rational::{format_rational, parse_rational};
use hpam_core::{build_convergent, build_divergent, compute_hpoa};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser)]
#[command(name = "hpam", version, about = "Hierarchical probabilistic abstraction models")]
struct Cli {
    /// Reject unknown fields in model files instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FileArg {
    /// Path to a model file.
    file: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model file and check every declared structure.
    Validate(FileArg),
    /// Push a space's measure forward along one DAG edge.
    Pushforward {
        #[command(flatten)]
        file: FileArg,
        /// Source and destination vertex ids.
        #[arg(long, num_args = 2, value_names = ["SRC", "DST"])]
        edge: Vec<String>,
    },
    /// Compute the coarsest abstraction preserving the declared events.
    Hpoa {
        #[command(flatten)]
        file: FileArg,
        /// Space id; the model must declare essential events for it.
        #[arg(long)]
        space: String,
    },
    /// Compose the abstraction maps along a vertex path.
    Compose {
        #[command(flatten)]
        file: FileArg,
        /// Comma-separated vertex ids, e.g. base,mid,top.
        #[arg(long, value_delimiter = ',', required = true)]
        path: Vec<String>,
    },
    /// Run the staged abstraction pipeline.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Render the model's DAG as Graphviz DOT.
    ExportDot {
        #[command(flatten)]
        file: FileArg,
        /// Write DOT here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Annotate with the optimal abstraction of this space.
        #[arg(long, value_name = "SPACE")]
        hpoa: Option<String>,
        /// Run the model's pipeline and render the staged graph instead.
        #[arg(long)]
        pipeline: bool,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Execute the pipeline section and report the verdict.
    Run {
        #[command(flatten)]
        file: FileArg,
        /// Write a machine-readable trace of the run to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Override the pipeline's comparison tolerance (rational or decimal).
        #[arg(long)]
        tolerance: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}

fn load(path: &PathBuf, strict: bool) -> Result<ModelDocument, u8> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(EXIT_USAGE);
        }
    };
    match parse_model(&text, strict) {
        Ok((doc, warnings)) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(doc)
        }
        Err(e @ ModelError::Syntax { .. }) => {
            eprintln!("error: {e}");
            Err(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_INVALID)
        }
    }
}

fn block_label(block: &BTreeSet<String>) -> String {
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

fn write_or_print(output: Option<&PathBuf>, text: &str) -> u8 {
    match output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_USAGE;
            }
            EXIT_OK
        }
        None => {
            print!("{text}");
            EXIT_OK
        }
    }
}

fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Validate(f) => cmd_validate(&f.file, cli.strict),
        Command::Pushforward { file, edge } => cmd_pushforward(&file.file, cli.strict, &edge),
        Command::Hpoa { file, space } => cmd_hpoa(&file.file, cli.strict, &space),
        Command::Compose { file, path } => cmd_compose(&file.file, cli.strict, &path),
        Command::Pipeline {
            command: PipelineCommand::Run {
                file,
                trace,
                tolerance,
            },
        } => cmd_pipeline_run(&file.file, cli.strict, trace.as_ref(), tolerance.as_deref()),
        Command::ExportDot {
            file,
            output,
            hpoa,
            pipeline,
        } => cmd_export_dot(&file.file, cli.strict, output.as_ref(), hpoa.as_deref(), pipeline),
    }
}

fn cmd_validate(path: &PathBuf, strict: bool) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let mut failures = 0usize;
    let dag = match doc.resolve_dag() {
        Ok(d) => d,
        Err(e) => {
            println!("invalid: {e}");
            return EXIT_INVALID;
        }
    };
    let report = dag.check_dag();
    for v in &report.violations {
        println!("violation: {}", v.describe());
        failures += 1;
    }
    for decl in &doc.divergent {
        match doc
            .resolve_divergent(decl)
            .map_err(|e| e.to_string())
            .and_then(|(src, family)| {
                build_divergent(&src, &family).map_err(|e| e.to_string())
            }) {
            Ok(_) => {}
            Err(e) => {
                println!("violation: divergent family `{}`: {e}", decl.name);
                failures += 1;
            }
        }
    }
    for decl in &doc.convergent {
        match doc
            .resolve_convergent(decl)
            .map_err(|e| e.to_string())
            .and_then(|(family, dst)| {
                build_convergent(&family, &dst).map_err(|e| e.to_string())
            }) {
            Ok(_) => {}
            Err(e) => {
                println!("violation: convergent family `{}`: {e}", decl.name);
                failures += 1;
            }
        }
    }
    if doc.pipeline.is_some() {
        if let Err(e) = doc.resolve_pipeline() {
            println!("violation: pipeline: {e}");
            failures += 1;
        }
    }
    if failures == 0 {
        println!(
            "valid: {} vertices, {} edges, {} divergent, {} convergent{}",
            dag.vertex_count(),
            dag.edges().len(),
            doc.divergent.len(),
            doc.convergent.len(),
            if doc.pipeline.is_some() {
                ", pipeline"
            } else {
                ""
            }
        );
        EXIT_OK
    } else {
        EXIT_INVALID
    }
}

fn cmd_pushforward(path: &PathBuf, strict: bool, edge: &[String]) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let dag = match doc.resolve_dag() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let (src_id, dst_id) = (&edge[0], &edge[1]);
    let Some(edge) = dag.edge(src_id, dst_id) else {
        eprintln!("error: no edge from `{src_id}` to `{dst_id}`");
        return EXIT_INVALID;
    };
    let Some(src) = dag.vertex(src_id) else {
        eprintln!("error: unknown vertex `{src_id}`");
        return EXIT_INVALID;
    };
    let dst = match doc.resolve_skeleton(dst_id) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match pushforward(src, &edge.map.mapping, &dst) {
        Ok(space) => {
            println!("pushforward {} -> {}", src_id, dst_id);
            for (block, mass) in space.atoms().iter().zip(space.masses()) {
                println!("{}: {}", block_label(block), format_rational(mass));
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn cmd_hpoa(path: &PathBuf, strict: bool, space_id: &str) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let space = match doc.resolve_space(space_id) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let essentials = match doc.resolve_essentials(space_id) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match compute_hpoa(&space, &essentials, false) {
        Ok(result) => {
            println!("optimal abstraction of {}: {}", space_id, result.quotient.id());
            for (block, mass) in result.quotient.atoms().iter().zip(result.quotient.masses()) {
                println!("cell {}: {}", block_label(block), format_rational(mass));
            }
            for c in &result.certificate {
                println!(
                    "event {}: cells [{}], probability {}",
                    c.name,
                    c.image_cells
                        .iter()
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(", "),
                    format_rational(&c.probability)
                );
            }
            for w in &result.maximality_witnesses {
                println!(
                    "maximal: merging {} with {} breaks {}",
                    w.cell_a, w.cell_b, w.broken_event
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn cmd_compose(path: &PathBuf, strict: bool, ids: &[String]) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let dag = match doc.resolve_dag() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let report = dag.check_dag();
    if !report.is_clean() {
        for v in &report.violations {
            eprintln!("violation: {}", v.describe());
        }
        return EXIT_INVALID;
    }
    match dag.compose_path(ids) {
        Ok(composition) => {
            println!("path: {}", composition.vertices.join(" -> "));
            for (outcome, image) in &composition.map.mapping {
                println!("{outcome} -> {image}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn cmd_pipeline_run(
    path: &PathBuf,
    strict: bool,
    trace: Option<&PathBuf>,
    tolerance: Option<&str>,
) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let mut spec = match doc.resolve_pipeline() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Some(t) = tolerance {
        match parse_rational(t) {
            Ok(t) => spec.tolerance = t,
            Err(e) => {
                eprintln!("error: invalid --tolerance: {e}");
                return EXIT_USAGE;
            }
        }
    }
    let outcome = match run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let iterations = outcome.iterations_run;
    let plural = if iterations == 1 { "" } else { "s" };
    match &outcome.verdict {
        Verdict::Success => println!("verdict: success after {iterations} iteration{plural}"),
        Verdict::IterationLimit => {
            println!("verdict: iteration limit after {iterations} iteration{plural}")
        }
        Verdict::Failure { reason } => println!("verdict: failure ({reason})"),
    }
    if let Some(report) = &outcome.comparison {
        for e in &report.entries {
            println!(
                "event {}: computed {}, observed {}, difference {}",
                e.name,
                format_rational(&e.computed),
                format_rational(&e.observed),
                format_rational(&e.difference)
            );
        }
    }
    if let Some(trace_path) = trace {
        if let Err(e) = std::fs::write(trace_path, outcome_to_string(&outcome)) {
            eprintln!("error: cannot write {}: {e}", trace_path.display());
            return EXIT_USAGE;
        }
    }
    match outcome.verdict {
        Verdict::Success => EXIT_OK,
        _ => EXIT_PIPELINE,
    }
}

fn cmd_export_dot(
    path: &PathBuf,
    strict: bool,
    output: Option<&PathBuf>,
    hpoa_space: Option<&str>,
    from_pipeline: bool,
) -> u8 {
    let doc = match load(path, strict) {
        Ok(d) => d,
        Err(code) => return code,
    };
    if from_pipeline {
        let spec = match doc.resolve_pipeline() {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        };
        let outcome =
            match run_pipeline(&spec, &StageRegistry::default(), &HookRegistry::default()) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INVALID;
                }
            };
        return write_or_print(output, &export_pipeline_dot(&outcome));
    }
    let dag = match doc.resolve_dag() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let annotation = match hpoa_space {
        Some(id) => {
            let space = match doc.resolve_space(id) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INVALID;
                }
            };
            let essentials = match doc.resolve_essentials(id) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INVALID;
                }
            };
            match compute_hpoa(&space, &essentials, false) {
                Ok(r) => Some(r),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_INVALID;
                }
            }
        }
        None => None,
    };
    write_or_print(output, &export_dot(&dag, annotation.as_ref()))
}
