//! The randomized soundness harness: every configuration reached by
//! bounded concrete exploration must be covered by the saturated model
//! seeded from the initial configuration. This is the preservation
//! property of the analysis exercised as a test, with the single
//! saturated model standing in for the derivable fact sets it
//! upper-bounds.

use crate::absdom::{abs_config, Domain, GroundFact};
use crate::activity::{initial_config, run_bounded, Config, RunLimits, RunReport};
use crate::clauses::{translate_program, AbstractProgram, RuleTag};
use crate::engine::{saturate, Limits, Model};
use crate::gen::{gen_program, GenConfig};
use crate::hier;
use crate::interp::Frame;
use crate::syntax::*;
use crate::values::{get_type, Block, Value};

/// A reached configuration with an uncovered represented fact.
#[derive(Debug, Clone)]
pub struct Violation {
    pub config_index: usize,
    pub fact: String,
}

#[derive(Debug, Clone)]
pub struct CoverageOutcome {
    pub configs_checked: usize,
    pub facts_checked: usize,
    pub violation: Option<Violation>,
    pub truncated: bool,
    pub partial: bool,
    pub faults: usize,
    pub model_complete: bool,
}

/// Explores the program and checks coverage of every reached
/// configuration against the model saturated from the initial one.
pub fn check_coverage(
    p: &Program,
    domain: Domain,
    run_limits: RunLimits,
    engine_limits: Limits,
) -> CoverageOutcome {
    let ap = translate_program(p, domain);
    check_coverage_with(p, &ap, domain, run_limits, engine_limits)
}

/// Same check against a caller-supplied clause set; the mutation tests
/// use this to confirm that dropping a rule family surfaces violations.
pub fn check_coverage_with(
    p: &Program,
    ap: &AbstractProgram,
    domain: Domain,
    run_limits: RunLimits,
    engine_limits: Limits,
) -> CoverageOutcome {
    let init = initial_config(p);
    let seeds = abs_config(&domain, &init);
    let model = saturate(p, ap, &seeds, engine_limits);
    let report = run_bounded(p, init, run_limits);
    let mut outcome = CoverageOutcome {
        configs_checked: 0,
        facts_checked: 0,
        violation: None,
        truncated: report.truncated,
        partial: report.partial,
        faults: report.faults.len(),
        model_complete: model.complete,
    };
    if !model.complete {
        return outcome;
    }
    for (i, cfg) in report.reached.iter().enumerate() {
        outcome.configs_checked += 1;
        for fact in abs_config(&domain, cfg) {
            outcome.facts_checked += 1;
            if !model.covers_fact(&fact) {
                outcome.violation = Some(Violation { config_index: i, fact: fact.to_string() });
                return outcome;
            }
        }
    }
    outcome
}

/// One uncovered program found by the randomized harness, serialized for
/// replay.
#[derive(Debug, Clone)]
pub struct HarnessFailure {
    pub seed: u64,
    pub program_text: String,
    pub fact: String,
    pub config_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct HarnessSummary {
    pub programs: usize,
    pub configs: usize,
    pub facts: usize,
    pub truncated_runs: usize,
    pub partial_runs: usize,
    pub failures: Vec<HarnessFailure>,
}

/// Runs the soundness harness over `n` generated programs. Failures
/// carry the full program text; replaying a seed reproduces them.
pub fn run_harness(
    base_seed: u64,
    n: usize,
    domain: Domain,
    run_limits: RunLimits,
    engine_limits: Limits,
) -> HarnessSummary {
    let mut summary = HarnessSummary::default();
    for i in 0..n {
        let seed = base_seed.wrapping_add(i as u64);
        let p = gen_program(seed, GenConfig::default());
        let limits = RunLimits { seed, ..run_limits };
        let outcome = check_coverage(&p, domain, limits, engine_limits);
        summary.programs += 1;
        summary.configs += outcome.configs_checked;
        summary.facts += outcome.facts_checked;
        summary.truncated_runs += usize::from(outcome.truncated);
        summary.partial_runs += usize::from(outcome.partial);
        if let Some(v) = outcome.violation {
            summary.failures.push(HarnessFailure {
                seed,
                program_text: crate::parse::pretty_print(&p),
                fact: v.fact,
                config_index: v.config_index,
            });
        } else if !outcome.model_complete {
            summary.failures.push(HarnessFailure {
                seed,
                program_text: crate::parse::pretty_print(&p),
                fact: "<saturation hit a limit; model incomplete>".into(),
                config_index: 0,
            });
        }
    }
    summary
}

/// Strips one rule family from an abstract program; the harness mutation
/// tests expect coverage to break afterwards.
pub fn drop_rule_family(ap: &AbstractProgram, tag: RuleTag) -> AbstractProgram {
    AbstractProgram {
        domain: ap.domain,
        clauses: ap.clauses.iter().filter(|c| c.tag != tag).cloned().collect(),
        sub_facts: ap.sub_facts.clone(),
        universe: ap.universe.clone(),
    }
}

/// Run-time invariants of the concrete semantics, checked over a whole
/// exploration report: frame discipline, heap typing, and call-stack
/// well-formation (non-top activations suspended at the call that pushed
/// the activation above them).
pub fn check_runtime_invariants(p: &Program, report: &RunReport) -> Result<(), String> {
    for (i, cfg) in report.reached.iter().enumerate() {
        if cfg.frames.iter().filter(|f| f.active).count() > 1 {
            return Err(format!("configuration {i}: more than one active frame"));
        }
        for frame in &cfg.frames {
            let crate::values::Annot::Class(c) = &frame.loc.annot else {
                return Err(format!("configuration {i}: frame location lacks a class annotation"));
            };
            let ok = matches!(cfg.heap.get(&frame.loc),
                Some(crate::values::Block::Obj { class, .. }) if class == c && hier::is_activity_class(p, class));
            if !ok {
                return Err(format!("configuration {i}: frame does not own an activity object of its class"));
            }
        }
        for (loc, block) in &cfg.heap {
            if let Block::Obj { class, fields } = block {
                for decl in hier::fields_of(p, class) {
                    let Some(v) = fields.get(&decl.name) else {
                        return Err(format!("configuration {i}: {loc} lacks field {}", decl.name));
                    };
                    let ok = match v {
                        Value::Prim(PrimLit::Null, _) => !decl.ty.is_primitive(),
                        _ => get_type(&cfg.heap, v).is_some_and(|t| hier::subtype(&t, &decl.ty, p)),
                    };
                    if !ok {
                        return Err(format!(
                            "configuration {i}: field {}.{} holds ill-typed value {v}",
                            class, decl.name
                        ));
                    }
                }
            }
        }
        for frame in &cfg.frames {
            if let Err(e) = check_stack_wellformed(p, cfg, &frame.stack) {
                return Err(format!("configuration {i}: {e}"));
            }
        }
    }
    Ok(())
}

fn check_stack_wellformed(p: &Program, cfg: &Config, stack: &[Frame]) -> Result<(), String> {
    for i in 0..stack.len().saturating_sub(1) {
        let callee = &stack[i];
        let caller = &stack[i + 1];
        let stmt = p
            .class(&caller.pp.class)
            .and_then(|c| c.method(&caller.pp.method))
            .and_then(|m| m.body.get(caller.pp.pc));
        let (method, args, defining) = match stmt {
            Some(Stmt::Invoke { method, args, recv }) => {
                // Virtual dispatch: the activation's class must be the
                // definition the receiver's dynamic class resolves to.
                let dyn_class = caller
                    .read(*recv)
                    .and_then(|v| v.as_loc())
                    .and_then(|l| match cfg.heap.get(l) {
                        Some(Block::Obj { class, .. }) => Some(class.clone()),
                        _ => None,
                    });
                let def = dyn_class.and_then(|c| hier::lookup(p, &c, method)).map(|(k, _)| k.name.clone());
                (method.clone(), args.clone(), def)
            }
            Some(Stmt::SInvoke { class, method, args }) => {
                let def = hier::resolve_static(p, class, method).map(|(k, _)| k.name.clone());
                (method.clone(), args.clone(), def)
            }
            other => {
                return Err(format!(
                    "suspended activation at {} does not sit on a call statement ({other:?})",
                    caller.pp
                ))
            }
        };
        if callee.pp.method != method {
            return Err(format!("activation {} was not pushed by the call at {}", callee.pp, caller.pp));
        }
        if defining.as_deref() != Some(callee.pp.class.as_str()) {
            return Err(format!(
                "call at {} resolves to {:?}, not to the suspended activation class {}",
                caller.pp, defining, callee.pp.class
            ));
        }
        let caller_args: Vec<Value> = args.iter().filter_map(|r| caller.read(*r).cloned()).collect();
        if caller_args != callee.call_args {
            return Err(format!(
                "recorded call arguments at {} diverge from the caller registers",
                callee.pp
            ));
        }
    }
    Ok(())
}

/// Shared helper for tests: saturate a program and return the model.
pub fn saturated_model(p: &Program, domain: Domain) -> (AbstractProgram, Vec<GroundFact>, Model) {
    let ap = translate_program(p, domain);
    let seeds = abs_config(&domain, &initial_config(p));
    let model = saturate(p, &ap, &seeds, Limits::default());
    (ap, seeds, model)
}

/// Shared helper for tests: explore a program with the given limits.
pub fn explore(p: &Program, limits: RunLimits) -> (Config, RunReport) {
    let init = initial_config(p);
    let report = run_bounded(p, init.clone(), limits);
    (init, report)
}
