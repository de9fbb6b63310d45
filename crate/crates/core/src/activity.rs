//! Configuration-level reduction: the activity stack, lifecycle steps,
//! inter-component communication, and bounded exploration.
//!
//! A configuration holds a stack of activity frames over a shared heap
//! and static heap. At most one frame is active; the reduction relation
//! enumerates every nondeterministic choice (lifecycle transitions,
//! callback dispatch, callback arguments, back button) as a set of
//! successor configurations.

use crate::hier;
use crate::interp::*;
use crate::interp::Sources;
use crate::syntax::*;
use crate::values::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// One activity on the stack: its object location, lifecycle state,
/// pending intents and call stack. `active` marks execution priority.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActFrame {
    pub loc: Location,
    pub state: ActState,
    pub pending: Vec<Block>,
    pub stack: Vec<Frame>,
    pub active: bool,
}

/// A whole-machine state: activity stack (index 0 on top), heap, static
/// heap and allocation counters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Config {
    pub frames: Vec<ActFrame>,
    pub heap: Heap,
    pub statics: Statics,
    pub counters: Counters,
}

impl Config {
    /// The frame's view as a local configuration.
    pub fn local(&self, idx: usize) -> LocalConfig {
        let f = &self.frames[idx];
        LocalConfig {
            owner: f.loc.clone(),
            stack: f.stack.clone(),
            pending: f.pending.clone(),
            heap: self.heap.clone(),
            statics: self.statics.clone(),
            counters: self.counters.clone(),
        }
    }

    fn store_local(&mut self, idx: usize, lc: LocalConfig) {
        self.frames[idx].stack = lc.stack;
        self.frames[idx].pending = lc.pending;
        self.heap = lc.heap;
        self.statics = lc.statics;
        self.counters = lc.counters;
    }

    pub fn active_index(&self) -> Option<usize> {
        self.frames.iter().position(|f| f.active)
    }

    fn activity_class(&self, idx: usize) -> &str {
        let Annot::Class(c) = &self.frames[idx].loc.annot else {
            panic!("activity location not annotated with a class");
        };
        c
    }

    fn finished(&self, idx: usize) -> bool {
        let Some(Block::Obj { fields, .. }) = self.heap.get(&self.frames[idx].loc) else {
            return false;
        };
        matches!(fields.get(FINISHED_FIELD), Some(Value::Prim(PrimLit::Bool(true), _)))
    }
}

/// A call stack that has completed its computation: empty, or a single
/// activation resting on a `return` statement.
pub fn successful(p: &Program, stack: &[Frame]) -> bool {
    match stack {
        [] => true,
        [f] => p
            .class(&f.pp.class)
            .and_then(|c| c.method(&f.pp.method))
            .and_then(|m| m.body.get(f.pp.pc))
            .is_some_and(|st| matches!(st, Stmt::Return)),
        _ => false,
    }
}

/// Sample values for statically-unknown callback arguments, per type.
/// The abstract side covers them with the top element of each type.
pub fn callback_samples(ty: &Ty) -> Vec<Value> {
    match ty {
        Ty::Int => vec![Value::int(0), Value::int(1), Value::int(-1)],
        Ty::Bool => vec![Value::public(PrimLit::Bool(true)), Value::public(PrimLit::Bool(false))],
        Ty::Class(_) | Ty::Array(_) => vec![Value::public(PrimLit::Null)],
    }
}

/// Every admissible callback stack for dispatching state `s` on the
/// activity at `loc`: one per callback method and argument sample tuple.
/// An activity with no callback for `s` yields the empty stack, which is
/// immediately successful.
pub fn callback_stacks(p: &Program, loc: &Location, class: &str, s: ActState) -> Vec<Vec<Frame>> {
    let methods = hier::callbacks(p, class, s);
    if methods.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for m in methods {
        let Some((def, d)) = hier::lookup(p, class, &m) else { continue };
        let mut tuples: Vec<Vec<Value>> = vec![Vec::new()];
        for ty in &d.params {
            let samples = callback_samples(ty);
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    samples.iter().map(move |v| {
                        let mut t2 = t.clone();
                        t2.push(v.clone());
                        t2
                    })
                })
                .collect();
        }
        for args in tuples {
            let mut regs = vec![Value::int(0); d.locals];
            regs.push(Value::Loc(loc.clone()));
            regs.extend(args.iter().cloned());
            out.push(vec![Frame {
                pp: Pp::new(def.name.clone(), m.clone(), 0),
                regs,
                ret: Value::int(0),
                call_args: args,
            }]);
        }
    }
    out
}

fn fresh_activity_object(p: &Program, class: &str) -> BTreeMap<String, Value> {
    hier::fields_of(p, class)
        .into_iter()
        .map(|f| (f.name.clone(), default_value(&f.ty)))
        .collect()
}

/// The initial configuration: a single constructor frame of the entry
/// activity over an otherwise empty heap. The constructor callback stack
/// is the first admissible choice, making the seed deterministic.
pub fn initial_config(p: &Program) -> Config {
    let entry = p.entry.clone();
    let mut counters = Counters::new();
    let loc = fresh(&mut counters, Annot::Class(entry.clone()));
    let mut heap = Heap::new();
    heap.insert(loc.clone(), Block::Obj { class: entry.clone(), fields: fresh_activity_object(p, &entry) });
    let statics: Statics = p
        .classes
        .iter()
        .flat_map(|c| {
            hier::fields_of(p, &c.name)
                .into_iter()
                .map(|f| ((c.name.clone(), f.name.clone()), default_value(&f.ty)))
                .collect::<Vec<_>>()
        })
        .collect();
    let stack = callback_stacks(p, &loc, &entry, ActState::Constructor)
        .into_iter()
        .next()
        .unwrap_or_default();
    Config {
        frames: vec![ActFrame { loc, state: ActState::Constructor, pending: vec![], stack, active: true }],
        heap,
        statics,
        counters,
    }
}

/// All configurations reachable in one reduction step, plus the faults
/// that terminated trace branches. An empty set means the configuration
/// is stuck.
pub fn step_config(p: &Program, cfg: &Config, sources: &Sources) -> (BTreeSet<Config>, Vec<Fault>) {
    let mut out = BTreeSet::new();
    let mut faults = Vec::new();

    if let Some(idx) = cfg.active_index() {
        // Only the active frame may act: run a statement or deactivate.
        let lc = cfg.local(idx);
        match step_local(p, &lc, sources) {
            LocalOutcome::Stepped(next) => {
                let mut c = cfg.clone();
                c.store_local(idx, next);
                out.insert(c);
            }
            LocalOutcome::Terminal => {}
            LocalOutcome::Fault(f) => faults.push(f),
        }
        if successful(p, &cfg.frames[idx].stack) {
            let mut c = cfg.clone();
            c.frames[idx].active = false;
            out.insert(c);
        }
        return (out, faults);
    }

    // No active frame: lifecycle rules apply.
    let top_successful = !cfg.frames.is_empty() && successful(p, &cfg.frames[0].stack);

    // Lifecycle transition of the top activity.
    if top_successful {
        let idx = 0;
        let class = cfg.activity_class(idx).to_string();
        let s = cfg.frames[idx].state;
        for &(from, to) in &p.lifecycle {
            if from != s {
                continue;
            }
            if !cfg.frames[idx].pending.is_empty() && (from, to) != (ActState::Running, ActState::OnPause) {
                continue;
            }
            if cfg.finished(idx) {
                let allowed = [
                    (ActState::Running, ActState::OnPause),
                    (ActState::OnPause, ActState::OnStop),
                    (ActState::OnStop, ActState::OnDestroy),
                ];
                if !allowed.contains(&(from, to)) {
                    continue;
                }
            }
            for stack in callback_stacks(p, &cfg.frames[idx].loc, &class, to) {
                let mut c = cfg.clone();
                c.frames[idx].state = to;
                c.frames[idx].stack = stack;
                c.frames[idx].active = true;
                out.insert(c);
            }
        }
    }

    // Removal of a finished, destroyed activity (any position).
    for idx in 0..cfg.frames.len() {
        if cfg.frames[idx].state == ActState::OnDestroy
            && successful(p, &cfg.frames[idx].stack)
            && cfg.finished(idx)
        {
            let mut c = cfg.clone();
            c.frames.remove(idx);
            out.insert(c);
        }
    }

    // Back button: the running foreground activity is marked finished.
    if top_successful
        && cfg.frames[0].state == ActState::Running
        && cfg.frames[0].pending.is_empty()
    {
        let mut c = cfg.clone();
        if let Some(Block::Obj { fields, .. }) = c.heap.get_mut(&c.frames[0].loc) {
            fields.insert(FINISHED_FIELD.into(), Value::public(PrimLit::Bool(true)));
        }
        out.insert(c);
    }

    // Screen orientation change: the destroyed foreground activity is
    // replaced by a fresh instance of the same class.
    if top_successful && cfg.frames[0].state == ActState::OnDestroy {
        let class = cfg.activity_class(0).to_string();
        let mut base = cfg.clone();
        let loc = fresh(&mut base.counters, Annot::Class(class.clone()));
        base.heap
            .insert(loc.clone(), Block::Obj { class: class.clone(), fields: fresh_activity_object(p, &class) });
        for stack in callback_stacks(p, &loc, &class, ActState::Constructor) {
            let mut c = base.clone();
            c.frames[0] = ActFrame {
                loc: loc.clone(),
                state: ActState::Constructor,
                pending: cfg.frames[0].pending.clone(),
                stack,
                active: true,
            };
            out.insert(c);
        }
    }

    // A background activity hidden by the foreground one is stopped or
    // destroyed by the system.
    if top_successful && matches!(cfg.frames[0].state, ActState::OnResume | ActState::OnPause) {
        for idx in 1..cfg.frames.len() {
            if !successful(p, &cfg.frames[idx].stack) {
                continue;
            }
            let next_state = match cfg.frames[idx].state {
                ActState::OnPause => ActState::OnStop,
                ActState::OnStop => ActState::OnDestroy,
                _ => continue,
            };
            let class = cfg.activity_class(idx).to_string();
            for stack in callback_stacks(p, &cfg.frames[idx].loc, &class, next_state) {
                let mut c = cfg.clone();
                c.frames[idx].state = next_state;
                c.frames[idx].stack = stack;
                c.frames[idx].active = true;
                out.insert(c);
            }
        }
    }

    // Starting a pending activity: serialize the intent, allocate the
    // child instance and push its constructor frame.
    if top_successful
        && matches!(cfg.frames[0].state, ActState::OnPause | ActState::OnStop)
        && !cfg.frames[0].pending.is_empty()
    {
        let intent = cfg.frames[0].pending[0].clone();
        let Block::Intent { target, .. } = &intent else { unreachable!() };
        if hier::is_activity_class(p, target) {
            let target = target.clone();
            let mut base = cfg.clone();
            base.frames[0].pending.remove(0);
            let mut visited = BTreeMap::new();
            let mut extension = Heap::new();
            let copied =
                serialize_block(&cfg.heap, &intent, &mut base.counters, &mut extension, &mut visited);
            base.heap.extend(extension);
            let intent_loc = fresh(&mut base.counters, Annot::In(target.clone()));
            base.heap.insert(intent_loc.clone(), copied);
            let child_loc = fresh(&mut base.counters, Annot::Class(target.clone()));
            let mut fields = fresh_activity_object(p, &target);
            fields.insert(INTENT_FIELD.into(), Value::Loc(intent_loc));
            fields.insert(PARENT_FIELD.into(), Value::Loc(cfg.frames[0].loc.clone()));
            base.heap.insert(child_loc.clone(), Block::Obj { class: target.clone(), fields });
            for stack in callback_stacks(p, &child_loc, &target, ActState::Constructor) {
                let mut c = base.clone();
                c.frames.insert(
                    0,
                    ActFrame {
                        loc: child_loc.clone(),
                        state: ActState::Constructor,
                        pending: vec![],
                        stack,
                        active: true,
                    },
                );
                out.insert(c);
            }
        }
    }

    // A finished child swaps below a parent that still has activities to
    // start, so the start rule can fire again.
    if cfg.frames.len() >= 2 {
        let child = &cfg.frames[0];
        let parent = &cfg.frames[1];
        let parent_of_child = match cfg.heap.get(&child.loc) {
            Some(Block::Obj { fields, .. }) => fields.get(PARENT_FIELD).cloned(),
            _ => None,
        };
        if child.state == ActState::OnPause
            && child.pending.is_empty()
            && successful(p, &child.stack)
            && cfg.finished(0)
            && parent_of_child == Some(Value::Loc(parent.loc.clone()))
            && matches!(parent.state, ActState::OnPause | ActState::OnStop)
            && successful(p, &parent.stack)
        {
            if !parent.pending.is_empty() {
                let mut c = cfg.clone();
                c.frames.swap(0, 1);
                out.insert(c);
            } else {
                // The finished child hands its result to the parent,
                // which resumes on the result callback.
                let result = match cfg.heap.get(&child.loc) {
                    Some(Block::Obj { fields, .. }) => {
                        fields.get(RESULT_FIELD).cloned().unwrap_or(Value::public(PrimLit::Null))
                    }
                    _ => Value::public(PrimLit::Null),
                };
                let mut base = cfg.clone();
                let mut visited = BTreeMap::new();
                let mut extension = Heap::new();
                let copied =
                    serialize_value(&cfg.heap, &result, &mut base.counters, &mut extension, &mut visited);
                base.heap.extend(extension);
                if let Some(Block::Obj { fields, .. }) = base.heap.get_mut(&parent.loc) {
                    fields.insert(RESULT_FIELD.into(), copied);
                }
                let class = cfg.activity_class(1).to_string();
                let parent_state = parent.state;
                for stack in callback_stacks(p, &parent.loc, &class, ActState::OnActivityResult) {
                    let mut c = base.clone();
                    c.frames.swap(0, 1);
                    c.frames[0].state = parent_state;
                    c.frames[0].stack = stack;
                    c.frames[0].active = true;
                    out.insert(c);
                }
            }
        }
    }

    (out, faults)
}

/// Limits for bounded exploration.
#[derive(Debug, Clone, Copy)]
pub struct RunLimits {
    pub depth: usize,
    /// Maximum successors expanded per configuration; further choices are
    /// sampled away deterministically.
    pub branch_cap: usize,
    /// Maximum number of distinct configurations visited.
    pub max_configs: usize,
    pub seed: u64,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { depth: 20, branch_cap: 64, max_configs: 4000, seed: 0 }
    }
}

/// Result of a bounded breadth-first exploration.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Every distinct configuration reached, in visit order.
    pub reached: Vec<Config>,
    /// Depth at which each configuration was first reached.
    pub depths: Vec<usize>,
    pub faults: Vec<Fault>,
    /// Some nondeterministic fanout was sampled away.
    pub truncated: bool,
    /// The visit limit was hit; the reached set is a prefix.
    pub partial: bool,
}

/// Breadth-first closure of `step_config` up to the depth limit, with
/// deterministic seeded truncation of excess fanout.
pub fn run_bounded(p: &Program, init: Config, limits: RunLimits) -> RunReport {
    run_bounded_with(p, init, limits, &Sources::new())
}

/// `run_bounded` with secret-returning source methods instrumented.
pub fn run_bounded_with(p: &Program, init: Config, limits: RunLimits, sources: &Sources) -> RunReport {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(limits.seed);
    let mut report = RunReport {
        reached: vec![init.clone()],
        depths: vec![0],
        faults: Vec::new(),
        truncated: false,
        partial: false,
    };
    let mut seen: BTreeSet<Config> = BTreeSet::new();
    seen.insert(init.clone());
    let mut frontier = VecDeque::new();
    frontier.push_back((init, 0usize));
    while let Some((cfg, depth)) = frontier.pop_front() {
        if depth >= limits.depth {
            continue;
        }
        let (succ, faults) = step_config(p, &cfg, sources);
        report.faults.extend(faults);
        let mut succ: Vec<Config> = succ.into_iter().collect();
        if succ.len() > limits.branch_cap {
            report.truncated = true;
            let mut keep: Vec<usize> = (0..succ.len()).collect();
            keep.shuffle(&mut rng);
            keep.truncate(limits.branch_cap);
            keep.sort_unstable();
            succ = keep.into_iter().map(|i| succ[i].clone()).collect();
        }
        for s in succ {
            if seen.len() >= limits.max_configs {
                report.partial = true;
                break;
            }
            if seen.insert(s.clone()) {
                report.reached.push(s.clone());
                report.depths.push(depth + 1);
                frontier.push_back((s, depth + 1));
            }
        }
        if report.partial {
            break;
        }
    }
    report.faults.sort();
    report.faults.dedup();
    report
}

/// A concrete leak: an active frame sits at the entry of a sink method
/// with a secret-tainted register.
pub fn leak_witness(cfg: &Config, sinks: &BTreeSet<(String, String)>) -> Option<(Pp, usize)> {
    let idx = cfg.active_index()?;
    let top = cfg.frames[idx].stack.first()?;
    if top.pp.pc != 0 || !sinks.contains(&(top.pp.class.clone(), top.pp.method.clone())) {
        return None;
    }
    for (k, v) in top.regs.iter().chain(Some(&top.ret)).enumerate() {
        if taint_of(v, &cfg.heap) == Taint::Secret {
            return Some((top.pp.clone(), k));
        }
    }
    None
}

/// One line of the machine-readable trace dump.
#[derive(Debug, Serialize)]
pub struct TraceLine {
    pub index: usize,
    pub depth: usize,
    pub heap_size: usize,
    pub stack: Vec<TraceFrame>,
}

#[derive(Debug, Serialize)]
pub struct TraceFrame {
    pub class: String,
    pub state: String,
    pub active: bool,
    pub pps: Vec<String>,
}

/// Renders a run as line-delimited JSON, one object per configuration.
pub fn dump_traces(report: &RunReport) -> String {
    let mut out = String::new();
    for (i, cfg) in report.reached.iter().enumerate() {
        let line = TraceLine {
            index: i,
            depth: report.depths[i],
            heap_size: cfg.heap.len(),
            stack: cfg
                .frames
                .iter()
                .map(|f| TraceFrame {
                    class: f.loc.annot.to_string(),
                    state: f.state.to_string(),
                    active: f.active,
                    pps: f.stack.iter().map(|fr| fr.pp.to_string()).collect(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace serialization"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    #[test]
    fn depth_zero_reaches_only_the_initial_configuration() {
        let p = parse_program("(program (entry A) (class A (super Activity)))").unwrap();
        let init = initial_config(&p);
        let report = run_bounded(&p, init.clone(), RunLimits { depth: 0, ..Default::default() });
        assert_eq!(report.reached, vec![init]);
    }

    #[test]
    fn straight_line_callback_runs_through_its_body() {
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (activity (callbacks (onCreate boot)))
                   (field x int)
                   (method boot (args) (returns int) (locals 1)
                     (0 (move (reg 0) (prim int 1)))
                     (1 (move (field (reg 1) x) (reg 0)))
                     (2 (return)))))"#,
        )
        .unwrap();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 5, ..Default::default() });
        // Hand simulation: constructor has no callback, so the initial
        // frame deactivates (depth 1), steps to onCreate with boot's frame
        // (depth 2), and executes pc 0 and pc 1 (depths 3 and 4); at depth
        // 5 the successful stack deactivates. The boot frame is observed
        // at pcs 0, 1 and 2: four local configurations along the path
        // counting the deactivated rest state.
        let boot_pcs: BTreeSet<usize> = report
            .reached
            .iter()
            .flat_map(|c| c.frames.iter().flat_map(|f| f.stack.iter()))
            .filter(|f| f.pp.method == "boot")
            .map(|f| f.pp.pc)
            .collect();
        assert_eq!(boot_pcs, BTreeSet::from([0, 1, 2]));
        // The field write landed on the heap in some reached state.
        assert!(report.reached.iter().any(|c| {
            c.heap.values().any(|b| matches!(b,
                Block::Obj { fields, .. } if fields.get("x") == Some(&Value::int(1))))
        }));
        assert!(report.faults.is_empty());
    }

    /// An intent is only started once the sender reaches onPause, so the
    /// sending callback runs in the running state.
    fn starter_program() -> Program {
        parse_program(
            r#"(program (entry A)
                 (class B (super Activity))
                 (class A (super Activity)
                   (activity (callbacks (running go)))
                   (method go (args) (returns int) (locals 1)
                     (0 (newintent (reg 0) B))
                     (1 (start-activity (reg 0)))
                     (2 (return)))))"#,
        )
        .unwrap()
    }

    #[test]
    fn start_activity_pushes_a_child() {
        let p = starter_program();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 16, ..Default::default() });
        // Some reached configuration has a B child on top of the A parent.
        assert!(report.reached.iter().any(|c| c.frames.len() == 2
            && c.frames[0].loc.annot == Annot::Class("B".into())
            && c.frames[0].state == ActState::Constructor));
        // The serialized intent carries the in(B) annotation.
        assert!(report
            .reached
            .iter()
            .any(|c| c.heap.keys().any(|l| l.annot == Annot::In("B".into()))));
    }

    #[test]
    fn started_intent_is_a_serialized_copy() {
        // The child receives a deep copy of the sent intent under the
        // in(B) annotation, identical to what the serializer produces.
        let p = parse_program(
            r#"(program (entry A)
                 (class B (super Activity))
                 (class A (super Activity)
                   (activity (callbacks (running go)))
                   (method go (args) (returns int) (locals 2)
                     (0 (newintent (reg 0) B))
                     (1 (move (reg 1) (prim int 7)))
                     (2 (put-extra (reg 0) (reg 1) (reg 1)))
                     (3 (start-activity (reg 0)))
                     (4 (return)))))"#,
        )
        .unwrap();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 20, ..Default::default() });
        let mut found = false;
        for cfg in &report.reached {
            for (loc, block) in &cfg.heap {
                if loc.annot != Annot::In("B".into()) {
                    continue;
                }
                found = true;
                let Block::Intent { target, extras } = block else { panic!("not an intent: {block:?}") };
                assert_eq!(target, "B");
                assert_eq!(extras.get(&PrimLit::Int(7)), Some(&Value::int(7)));
                // The copy is what serializing the original produces,
                // minus the fresh pointer identity.
                let original = cfg
                    .heap
                    .iter()
                    .find(|(l, _)| matches!(&l.annot, Annot::Pp(pp) if pp.method == "go"))
                    .map(|(_, b)| b.clone())
                    .expect("allocation site block present");
                let mut counters = cfg.counters.clone();
                let mut ext = Heap::new();
                let copied =
                    serialize_block(&cfg.heap, &original, &mut counters, &mut ext, &mut BTreeMap::new());
                assert_eq!(&copied, block);
            }
        }
        assert!(found, "no child configuration with a serialized intent reached");
    }

    #[test]
    fn at_most_one_active_frame_everywhere() {
        let p = starter_program();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 14, ..Default::default() });
        for cfg in &report.reached {
            assert!(cfg.frames.iter().filter(|f| f.active).count() <= 1);
        }
    }

    #[test]
    fn excess_fanout_is_truncated_and_reported() {
        // Three handlers plus lifecycle choices exceed a branch cap of
        // one; the run must flag the truncation.
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (activity (callbacks (running h1) (running h2) (running h3)))
                   (method h1 (args) (returns int) (locals 0) (0 (return)))
                   (method h2 (args) (returns int) (locals 0) (0 (return)))
                   (method h3 (args) (returns int) (locals 0) (0 (return)))))"#,
        )
        .unwrap();
        let report = run_bounded(
            &p,
            initial_config(&p),
            RunLimits { depth: 12, branch_cap: 1, max_configs: 50, seed: 5 },
        );
        assert!(report.truncated);
        // Identical limits and seed give an identical exploration.
        let again = run_bounded(
            &p,
            initial_config(&p),
            RunLimits { depth: 12, branch_cap: 1, max_configs: 50, seed: 5 },
        );
        assert_eq!(report.reached, again.reached);
    }

    #[test]
    fn lifecycle_override_restricts_transitions() {
        // The program pins a lifecycle with a single edge; the activity
        // can never get past onCreate.
        let p = parse_program(
            "(program (entry A) (lifecycle (constructor onCreate)) (class A (super Activity)))",
        )
        .unwrap();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 20, ..Default::default() });
        let states: BTreeSet<ActState> = report
            .reached
            .iter()
            .flat_map(|c| c.frames.iter().map(|f| f.state))
            .collect();
        assert_eq!(states, BTreeSet::from([ActState::Constructor, ActState::OnCreate]));
    }

    #[test]
    fn local_step_is_a_function() {
        let p = starter_program();
        let init = initial_config(&p);
        for cfg in run_bounded(&p, init, RunLimits { depth: 10, ..Default::default() }).reached {
            if let Some(idx) = cfg.active_index() {
                let lc = cfg.local(idx);
                let once = step_local(&p, &lc, &Sources::new());
                let twice = step_local(&p, &lc, &Sources::new());
                assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn finished_child_delivers_its_result_to_the_parent() {
        // A starts B; B parks an intent in its result field and is
        // finished by the back button; the parent resumes on the result
        // callback with a serialized copy of the child's result.
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (activity (callbacks (running go) (onActivityResult got)))
                   (method go (args) (returns int) (locals 1)
                     (0 (newintent (reg 0) B))
                     (1 (start-activity (reg 0)))
                     (2 (return)))
                   (method got (args) (returns int) (locals 0)
                     (0 (return))))
                 (class B (super Activity)
                   (activity (callbacks (running fill)))
                   (method fill (args) (returns int) (locals 1)
                     (0 (newintent (reg 0) A))
                     (1 (move (field (reg 1) result) (reg 0)))
                     (2 (return)))))"#,
        )
        .unwrap();
        let report = run_bounded(
            &p,
            initial_config(&p),
            RunLimits { depth: 42, branch_cap: 64, max_configs: 6000, seed: 2 },
        );
        let mut handed_over = false;
        for cfg in &report.reached {
            let Some(idx) = cfg.active_index() else { continue };
            let frame = &cfg.frames[idx];
            let at_result_callback = frame
                .stack
                .first()
                .is_some_and(|f| f.pp == Pp::new("A", "got", 0));
            if frame.loc.annot != Annot::Class("A".into()) || !at_result_callback {
                continue;
            }
            let Some(Block::Obj { fields, .. }) = cfg.heap.get(&frame.loc) else { continue };
            // The parent's result points at a copy annotated with the
            // child's allocation site.
            if let Some(Value::Loc(l)) = fields.get(RESULT_FIELD) {
                assert_eq!(l.annot, Annot::Pp(Pp::new("B", "fill", 0)));
                assert!(matches!(cfg.heap.get(l), Some(Block::Intent { target, .. }) if target == "A"));
                handed_over = true;
            }
        }
        assert!(handed_over, "no configuration delivered the child result");
        assert!(report.faults.is_empty());
    }

    #[test]
    fn back_button_sets_finished_and_destroy_removes() {
        let p = parse_program("(program (entry A) (class A (super Activity)))").unwrap();
        let report = run_bounded(&p, initial_config(&p), RunLimits { depth: 20, ..Default::default() });
        assert!(report
            .reached
            .iter()
            .any(|c| !c.frames.is_empty() && c.finished(0)));
        // A finished activity that reached onDestroy disappears.
        assert!(report.reached.iter().any(|c| c.frames.is_empty()));
    }
}
