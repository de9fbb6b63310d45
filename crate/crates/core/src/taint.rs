//! Sources, sinks and the leak verdict.
//!
//! A source method's return value always carries secret taint; a sink
//! leaks when some register at its entry point may hold a secret value
//! in the saturated model. Verdicts are per sink: `no_leak` only when
//! every register of every recorded context is public and the model is
//! complete.

use crate::absdom::{abs_config, AbsVal, Domain, PrimAbs};
use crate::activity::initial_config;
use crate::clauses::{self, translate_program, AbstractProgram, Atom, Clause, Head, RuleTag, Term, VecTerm};
use crate::engine::{check_postfixpoint, saturate, Limits, Model};
use crate::hier;
use crate::syntax::{Pp, Program};
use crate::values::Taint;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Source and sink methods, as `(class, method)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceSinkDB {
    pub sources: BTreeSet<(String, String)>,
    pub sinks: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct DbError {
    pub line: usize,
    pub msg: String,
}

/// Parses the line format: `source <Class> <method>` / `sink <Class>
/// <method>`, `#` comments, blank lines ignored. Duplicates collapse.
pub fn load_db(text: &str) -> Result<SourceSinkDB, DbError> {
    let mut db = SourceSinkDB::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["source", c, m] => {
                db.sources.insert((c.to_string(), m.to_string()));
            }
            ["sink", c, m] => {
                db.sinks.insert((c.to_string(), m.to_string()));
            }
            _ => {
                return Err(DbError {
                    line: i + 1,
                    msg: format!("malformed entry `{line}`, expected `source <Class> <method>` or `sink <Class> <method>`"),
                })
            }
        }
    }
    Ok(db)
}

/// Entries that do not resolve against the program; loaded with a
/// warning rather than an error, since real databases overshoot.
pub fn resolution_warnings(db: &SourceSinkDB, p: &Program) -> Vec<String> {
    let mut out = Vec::new();
    for (kind, set) in [("source", &db.sources), ("sink", &db.sinks)] {
        for (c, m) in set {
            if hier::lookup(p, c, m).is_none() {
                out.push(format!("{kind} {c}.{m} does not resolve in the program"));
            }
        }
    }
    out
}

/// The secret top value sources return.
fn secret_top() -> AbsVal {
    AbsVal { prims: PrimAbs::Top(Taint::Secret), annots: BTreeSet::new() }
}

/// Adds, for every resolvable source, a clause deriving a secret result
/// summary for each calling context that reaches the source's entry.
pub fn seed_sources(ap: &mut AbstractProgram, db: &SourceSinkDB, p: &Program) {
    for (c, m) in &db.sources {
        let Some((def_cls, _)) = hier::lookup(p, c, m) else { continue };
        let ctx = 0;
        let regs = 1;
        ap.clauses.push(Clause {
            tag: RuleTag::Source,
            body: vec![Atom::R { pp: Pp::new(def_cls.name.clone(), m.clone(), 0), ctx, regs }],
            head: Head::Res {
                class: def_cls.name.clone(),
                method: m.clone(),
                ctx: VecTerm::Var(ctx),
                ret: Term::Const(secret_top()),
            },
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoLeak,
    LeakPossible,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NoLeak => "no_leak",
            Verdict::LeakPossible => "leak_possible",
            Verdict::Unknown => "unknown",
        })
    }
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "no_leak" => Some(Verdict::NoLeak),
            "leak_possible" => Some(Verdict::LeakPossible),
            "unknown" => Some(Verdict::Unknown),
            _ => None,
        }
    }
}

/// A register at a sink entry that may carry secret data.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LeakWitness {
    pub register: usize,
    pub context: String,
    pub value: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct SinkVerdict {
    pub verdict: Verdict,
    pub witnesses: Vec<LeakWitness>,
    /// Diagnostics, e.g. solver output on unknown verdicts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// The per-sink verdict table; keys are `Class.method`.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LeakReport {
    pub domain: String,
    pub engine: String,
    pub verdicts: BTreeMap<String, SinkVerdict>,
    pub warnings: Vec<String>,
}

impl LeakReport {
    pub fn worst(&self) -> Verdict {
        let mut worst = Verdict::NoLeak;
        for v in self.verdicts.values() {
            if v.verdict == Verdict::LeakPossible {
                return Verdict::LeakPossible;
            }
            if v.verdict == Verdict::Unknown {
                worst = Verdict::Unknown;
            }
        }
        worst
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("domain: {}\nengine: {}\n", self.domain, self.engine));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        if self.verdicts.is_empty() {
            out.push_str("no sinks configured; nothing to check\n");
        }
        for (sink, sv) in &self.verdicts {
            out.push_str(&format!("{sink}: {}\n", sv.verdict));
            for w in &sv.witnesses {
                out.push_str(&format!("  register {} (ctx {}) = {}\n", w.register, w.context, w.value));
            }
            if let Some(n) = &sv.note {
                out.push_str(&format!("  note: {n}\n"));
            }
        }
        out
    }
}

/// How the saturated model is produced.
#[derive(Debug, Clone)]
pub enum EngineChoice {
    Builtin,
    /// External CHC solver invoked as `<command> <file>`.
    External { command: String },
}

impl EngineChoice {
    pub fn name(&self) -> String {
        match self {
            EngineChoice::Builtin => "builtin".into(),
            EngineChoice::External { command } => format!("chc:{command}"),
        }
    }
}

/// Everything a run produces: the report plus the artifacts the CLI can
/// dump.
#[derive(Debug)]
pub struct Analysis {
    pub report: LeakReport,
    pub abstract_program: AbstractProgram,
    pub model: Model,
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("solver configuration error: {0}")]
    SolverConfig(String),
}

/// Translates, seeds sources, saturates (or defers to an external
/// solver) and evaluates every sink.
pub fn analyze(
    p: &Program,
    db: &SourceSinkDB,
    domain: Domain,
    engine: &EngineChoice,
    limits: Limits,
) -> Result<Analysis, AnalyzeError> {
    let mut ap = translate_program(p, domain);
    seed_sources(&mut ap, db, p);
    let seeds = abs_config(&domain, &initial_config(p));
    let model = saturate(p, &ap, &seeds, limits);
    let warnings = resolution_warnings(db, p);

    let mut verdicts = BTreeMap::new();
    match engine {
        EngineChoice::Builtin => {
            for (c, m) in &db.sinks {
                let key = format!("{c}.{m}");
                let Some((def_cls, _)) = hier::lookup(p, c, m) else {
                    verdicts.insert(
                        key,
                        SinkVerdict {
                            verdict: Verdict::NoLeak,
                            witnesses: vec![],
                            note: Some("sink does not resolve; vacuously safe".into()),
                        },
                    );
                    continue;
                };
                if !model.complete {
                    verdicts.insert(
                        key,
                        SinkVerdict {
                            verdict: Verdict::Unknown,
                            witnesses: vec![],
                            note: Some("saturation hit a limit; model incomplete".into()),
                        },
                    );
                    continue;
                }
                let mut witnesses = Vec::new();
                for (ctx, regs) in model.r_entries(&def_cls.name, m) {
                    for (k, v) in regs.iter().enumerate() {
                        if model.taint_of(v) == Taint::Secret {
                            let ctx: Vec<String> = ctx.iter().map(|c| c.to_string()).collect();
                            witnesses.push(LeakWitness {
                                register: k,
                                context: format!("({})", ctx.join(",")),
                                value: v.to_string(),
                            });
                        }
                    }
                }
                let verdict = if witnesses.is_empty() { Verdict::NoLeak } else { Verdict::LeakPossible };
                verdicts.insert(key, SinkVerdict { verdict, witnesses, note: None });
            }
        }
        EngineChoice::External { command } => {
            // The builtin model is still computed above: it supplies the
            // constant table for the encoding, and postfixpoint debugging.
            let doc = crate::smt::emit_chc(p, &ap, &db.sinks, Some(&model))
                .map_err(|e| AnalyzeError::SolverConfig(e.to_string()))?;
            let resolvable: Vec<(String, String)> = db
                .sinks
                .iter()
                .filter(|(c, m)| hier::lookup(p, c, m).is_some())
                .cloned()
                .collect();
            let outcome = crate::smt::run_external(&doc.text, command)
                .map_err(|e| AnalyzeError::SolverConfig(e.to_string()))?;
            for (c, m) in &db.sinks {
                let key = format!("{c}.{m}");
                if hier::lookup(p, c, m).is_none() {
                    verdicts.insert(
                        key,
                        SinkVerdict {
                            verdict: Verdict::NoLeak,
                            witnesses: vec![],
                            note: Some("sink does not resolve; vacuously safe".into()),
                        },
                    );
                }
            }
            for (i, (c, m)) in resolvable.iter().enumerate() {
                let key = format!("{c}.{m}");
                let (verdict, note) = match outcome.verdicts.get(i) {
                    Some(crate::smt::SolverVerdict::Sat) => (Verdict::LeakPossible, None),
                    Some(crate::smt::SolverVerdict::Unsat) => (Verdict::NoLeak, None),
                    Some(crate::smt::SolverVerdict::Unknown) | None => {
                        (Verdict::Unknown, Some(outcome.diagnostics.clone()))
                    }
                };
                verdicts.insert(key, SinkVerdict { verdict, witnesses: vec![], note });
            }
        }
    }

    Ok(Analysis {
        report: LeakReport {
            domain: domain.name(),
            engine: engine.name(),
            verdicts,
            warnings,
        },
        abstract_program: ap,
        model,
    })
}

/// Parses the `; expected <domain> <Class.method> <verdict>` headers of a
/// corpus fixture. The domain is `taint`, `const`, `const:<k>` or `any`.
pub fn parse_expectation_headers(text: &str) -> Result<Vec<(String, String, Verdict)>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("; expected ") else { continue };
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [domain, sink, verdict] = parts.as_slice() else {
            return Err(format!("malformed expectation `{line}`"));
        };
        let v = Verdict::parse(verdict).ok_or_else(|| format!("unknown verdict in `{line}`"))?;
        out.push((domain.to_string(), sink.to_string(), v));
    }
    Ok(out)
}

/// Debug-level audit entry point used by tests and the harness.
pub fn audit(p: &Program, analysis: &Analysis) -> Result<(), crate::engine::Counterexample> {
    let seeds = abs_config(&analysis.model.domain, &initial_config(p));
    check_postfixpoint(p, &analysis.abstract_program, &seeds, &analysis.model)
}

/// Shorthand for tests: count the clauses a DB adds.
pub fn source_clause_count(ap: &AbstractProgram) -> usize {
    ap.clauses.iter().filter(|c| c.tag == clauses::RuleTag::Source).count()
}
