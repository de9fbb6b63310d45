//! Command-line driver: analyze a program for leaks, run the randomized
//! soundness harness, or check a corpus of fixtures against their
//! expected verdicts.
//!
//! Exit codes for `analyze`: 0 when every sink is safe, 2 when some sink
//! may leak, 3 when some verdict is unknown, 1 on usage or input errors.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use microdroid_core::absdom::{Domain, DEFAULT_CONST_CAP};
use microdroid_core::activity::{dump_traces, initial_config, run_bounded_with, RunLimits};
use microdroid_core::engine::Limits;
use microdroid_core::harness::run_harness;
use microdroid_core::parse::parse_program;
use microdroid_core::smt;
use microdroid_core::taint::{analyze, load_db, EngineChoice, SourceSinkDB, Verdict};
use microdroid_core::wf::check_well_formed;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "microdroid", version, about = "Information-flow analysis for an activity-based register machine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one program against a sources/sinks database.
    Analyze(AnalyzeArgs),
    /// Generate random programs and check the saturated model covers
    /// every concretely reachable configuration.
    Soundness(SoundnessArgs),
    /// Run every fixture in a directory and compare the verdicts with
    /// the `; expected <domain> <sink> <verdict>` headers.
    Corpus(CorpusArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Program file.
    program: PathBuf,
    /// Sources/sinks database (`source <Class> <method>` / `sink ...`).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Abstract domain: `taint` or `const:<k>`.
    #[arg(long, default_value = "taint")]
    domain: String,
    /// `builtin` or `chc:<solver command>`.
    #[arg(long, default_value = "builtin")]
    engine: String,
    /// Write the constrained-Horn-clause script to this path.
    #[arg(long)]
    emit_smt: Option<PathBuf>,
    /// Print the generated clauses.
    #[arg(long)]
    dump_clauses: bool,
    /// Print the saturated model.
    #[arg(long)]
    dump_model: bool,
    /// Machine-readable report on stdout.
    #[arg(long)]
    json: bool,
    /// Widen a fact key after this many strict increases.
    #[arg(long, default_value_t = 8)]
    widen_after: u32,
    /// Merge a method's calling contexts beyond this count.
    #[arg(long, default_value_t = 64)]
    context_cap: usize,
    /// Abort saturation after this many derivations.
    #[arg(long, default_value_t = 1_000_000)]
    max_derivations: u64,
    /// Also run the interpreter and write line-delimited JSON traces.
    #[arg(long)]
    dump_traces: Option<PathBuf>,
    /// Exploration depth for `--dump-traces`.
    #[arg(long, default_value_t = 20)]
    trace_depth: usize,
}

#[derive(Args)]
struct SoundnessArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    programs: usize,
    #[arg(long, default_value_t = 20)]
    depth: usize,
    /// Abstract domain: `taint` or `const:<k>`.
    #[arg(long, default_value = "const:32")]
    domain: String,
    #[arg(long, default_value_t = 48)]
    branch_cap: usize,
    #[arg(long, default_value_t = 1200)]
    max_configs: usize,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory of fixture files (`*.mdr`).
    dir: PathBuf,
    /// Database; defaults to `<dir>/sources_sinks.txt`.
    #[arg(long)]
    db: Option<PathBuf>,
    /// `builtin` or `chc:<solver command>`.
    #[arg(long, default_value = "builtin")]
    engine: String,
}

fn parse_domain(s: &str) -> Result<Domain> {
    if s == "taint" {
        return Ok(Domain::taint_only());
    }
    if s == "const" {
        return Ok(Domain::const_set(DEFAULT_CONST_CAP));
    }
    if let Some(k) = s.strip_prefix("const:") {
        let k: usize = k.parse().with_context(|| format!("invalid constant cap in `{s}`"))?;
        if k == 0 {
            bail!("constant cap must be positive");
        }
        return Ok(Domain::const_set(k));
    }
    bail!("unknown domain `{s}`; use `taint` or `const:<k>`")
}

fn parse_engine(s: &str) -> Result<EngineChoice> {
    if s == "builtin" {
        return Ok(EngineChoice::Builtin);
    }
    if let Some(cmd) = s.strip_prefix("chc:") {
        if cmd.trim().is_empty() {
            bail!("empty solver command in `{s}`");
        }
        return Ok(EngineChoice::External { command: cmd.to_string() });
    }
    bail!("unknown engine `{s}`; use `builtin` or `chc:<command>`")
}

fn load_program(path: &Path) -> Result<microdroid_core::syntax::Program> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let p = parse_program(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let diags = check_well_formed(&p);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| format!("  {d}")).collect();
        bail!("{} is not well-formed:\n{}", path.display(), lines.join("\n"));
    }
    Ok(p)
}

fn load_db_file(path: Option<&Path>) -> Result<SourceSinkDB> {
    match path {
        None => Ok(SourceSinkDB::default()),
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            load_db(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
        }
    }
}

fn run_analyze(args: &AnalyzeArgs) -> Result<ExitCode> {
    let domain = parse_domain(&args.domain)?;
    let engine = parse_engine(&args.engine)?;
    let p = load_program(&args.program)?;
    let db = load_db_file(args.db.as_deref())?;
    let limits = Limits {
        widen_after: args.widen_after,
        context_cap: args.context_cap,
        max_derivations: args.max_derivations,
    };
    let analysis = analyze(&p, &db, domain, &engine, limits)?;

    if args.dump_clauses {
        print!("{}", analysis.abstract_program.dump());
    }
    if args.dump_model {
        print!("{}", analysis.model.dump());
    }
    if let Some(path) = &args.emit_smt {
        let doc = smt::emit_chc(&p, &analysis.abstract_program, &db.sinks, Some(&analysis.model))?;
        std::fs::write(path, &doc.text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &args.dump_traces {
        let limits = RunLimits { depth: args.trace_depth, ..RunLimits::default() };
        let report = run_bounded_with(&p, initial_config(&p), limits, &db.sources);
        std::fs::write(path, dump_traces(&report))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&analysis.report)?);
    } else {
        print!("{}", analysis.report.render_text());
    }
    Ok(match analysis.report.worst() {
        Verdict::NoLeak => ExitCode::SUCCESS,
        Verdict::LeakPossible => ExitCode::from(2),
        Verdict::Unknown => ExitCode::from(3),
    })
}

fn run_soundness(args: &SoundnessArgs) -> Result<ExitCode> {
    let domain = parse_domain(&args.domain)?;
    let run_limits = RunLimits {
        depth: args.depth,
        branch_cap: args.branch_cap,
        max_configs: args.max_configs,
        seed: args.seed,
    };
    let summary = run_harness(args.seed, args.programs, domain, run_limits, Limits::default());
    println!(
        "checked {} programs, {} configurations, {} facts ({} truncated, {} partial runs)",
        summary.programs, summary.configs, summary.facts, summary.truncated_runs, summary.partial_runs
    );
    if summary.failures.is_empty() {
        println!("coverage holds everywhere");
        return Ok(ExitCode::SUCCESS);
    }
    for f in &summary.failures {
        let path = format!("soundness-failure-{}.mdr", f.seed);
        std::fs::write(&path, &f.program_text)?;
        println!(
            "VIOLATION seed {}: configuration {} has uncovered fact {}\n  program written to {path}\n  replay: microdroid soundness --seed {} --programs 1 --depth {}",
            f.seed, f.config_index, f.fact, f.seed, args.depth
        );
    }
    Ok(ExitCode::from(1))
}

fn parse_expectations(text: &str) -> Result<Vec<(String, String, Verdict)>> {
    microdroid_core::taint::parse_expectation_headers(text).map_err(|e| anyhow!(e))
}

fn run_corpus(args: &CorpusArgs) -> Result<ExitCode> {
    let engine = parse_engine(&args.engine)?;
    let db_path = args.db.clone().unwrap_or_else(|| args.dir.join("sources_sinks.txt"));
    let db = load_db_file(Some(&db_path))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.dir)
        .with_context(|| format!("cannot read {}", args.dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mdr"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no .mdr fixtures under {}", args.dir.display());
    }

    let mut checked = 0usize;
    let mut failed = 0usize;
    for path in &entries {
        let text = std::fs::read_to_string(path)?;
        let expectations = parse_expectations(&text)?;
        if expectations.is_empty() {
            bail!("{} has no `; expected` headers", path.display());
        }
        let p = load_program(path)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut domains: BTreeSet<String> = expectations.iter().map(|(d, _, _)| d.clone()).collect();
        // `any` means: check the same verdict under both shipped domains.
        let expand = domains.remove("any");
        if expand {
            domains.insert("taint".into());
            domains.insert("const".into());
        }
        for dname in &domains {
            let domain = parse_domain(dname)?;
            let analysis = analyze(&p, &db, domain, &engine, Limits::default())?;
            for (edomain, sink, expected) in &expectations {
                if edomain != dname && edomain != "any" {
                    continue;
                }
                checked += 1;
                let got = analysis
                    .report
                    .verdicts
                    .get(sink)
                    .map(|sv| sv.verdict)
                    .ok_or_else(|| anyhow!("{name}: sink {sink} not in the database"))?;
                let ok = got == *expected;
                if !ok {
                    failed += 1;
                }
                println!(
                    "{} {name} [{dname}] {sink}: expected {expected}, got {got}",
                    if ok { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    println!("{checked} expectations checked, {failed} failed");
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Soundness(a) => run_soundness(a),
        Command::Corpus(a) => run_corpus(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
