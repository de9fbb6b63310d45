//! Bottom-up saturation of an abstract program to a least post-fixpoint
//! model.
//!
//! The store keeps one joined summary per fact key (program point and
//! context for registers, annotation for heap entries, and so on), which
//! is sound because clause bodies and coverage queries are monotone in
//! the value order. Scheduling is delta-driven: a clause re-runs only
//! when a store family it reads from has grown. Widening kicks in per
//! key after a configurable number of strict increases, and the number
//! of distinct calling contexts per method is capped, after which they
//! are merged.

use crate::absdom::{AbsBlock, AbsVal, Domain, GroundFact};
use crate::clauses::*;
use crate::hier;
use crate::syntax::*;
use crate::values::Annot;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

/// Engine limits; all overridable from the command line.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Strict increases of one store key before widening applies to it.
    pub widen_after: u32,
    /// Distinct calling contexts per method before merging.
    pub context_cap: usize,
    /// Hard bound on store growth events.
    pub max_derivations: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { widen_after: 8, context_cap: 64, max_derivations: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub derivations: u64,
    pub clause_runs: u64,
    pub widenings: u64,
    pub context_merges: u64,
}

/// Identifies one stored fact; used by dumps, the post-fixpoint audit
/// and the mutation tests.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum FactKey {
    R(Pp, Vec<AbsVal>),
    Res(String, String, Vec<AbsVal>),
    H(Annot),
    S(String, String),
    Rhs(Pp),
    I(String, String),
}

/// The saturated fact store.
#[derive(Debug, Clone)]
pub struct Model {
    pub domain: Domain,
    pub r: BTreeMap<Pp, BTreeMap<Vec<AbsVal>, Vec<AbsVal>>>,
    pub res: BTreeMap<(String, String), BTreeMap<Vec<AbsVal>, AbsVal>>,
    pub h: BTreeMap<Annot, AbsBlock>,
    pub s: BTreeMap<(String, String), AbsVal>,
    pub rhs: BTreeMap<Pp, AbsVal>,
    pub i: BTreeMap<(String, String), AbsVal>,
    pub sub: BTreeSet<(Ty, Ty)>,
    /// False when a limit stopped saturation before the fixpoint.
    pub complete: bool,
    pub stats: Stats,
    /// Methods whose calling contexts were merged after hitting the cap.
    merged_methods: BTreeSet<(String, String)>,
    method_ctxs: BTreeMap<(String, String), BTreeSet<Vec<AbsVal>>>,
    strict_counts: BTreeMap<FactKey, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DepKey {
    RAt,
    RhsAt,
    SAt,
    ResAt,
    HAny,
    IAny,
}

impl Model {
    fn new(domain: Domain) -> Model {
        Model {
            domain,
            r: BTreeMap::new(),
            res: BTreeMap::new(),
            h: BTreeMap::new(),
            s: BTreeMap::new(),
            rhs: BTreeMap::new(),
            i: BTreeMap::new(),
            sub: BTreeSet::new(),
            complete: true,
            stats: Stats::default(),
            merged_methods: BTreeSet::new(),
            method_ctxs: BTreeMap::new(),
            strict_counts: BTreeMap::new(),
        }
    }

    pub fn is_merged(&self, class: &str, method: &str) -> bool {
        self.merged_methods.contains(&(class.to_string(), method.to_string()))
    }

    fn bump_strict(&mut self, key: FactKey, limits: &Limits) -> bool {
        let n = self.strict_counts.entry(key).or_insert(0);
        *n += 1;
        *n >= limits.widen_after
    }

    fn widen_val(&mut self, old: &AbsVal, new: &AbsVal, widen: bool) -> AbsVal {
        if widen {
            self.stats.widenings += 1;
            self.domain.widen(old, new)
        } else {
            self.domain.join(old, new)
        }
    }

    /// Joins a register fact into the store; returns true on growth.
    fn insert_r(&mut self, pp: Pp, mut ctx: Vec<AbsVal>, regs: Vec<AbsVal>, limits: &Limits) -> bool {
        let method = (pp.class.clone(), pp.method.clone());
        if self.merged_methods.contains(&method) {
            ctx = self.merged_ctx_tuple(&method, &ctx);
        } else {
            let known = self.method_ctxs.entry(method.clone()).or_default();
            if !known.contains(&ctx) && known.len() >= limits.context_cap {
                self.merge_method_contexts(&method);
                ctx = self.merged_ctx_tuple(&method, &ctx);
            } else {
                known.insert(ctx.clone());
            }
        }
        let entry = self.r.entry(pp.clone()).or_default();
        match entry.get(&ctx) {
            None => {
                entry.insert(ctx.clone(), regs);
                self.strict_counts.insert(FactKey::R(pp, ctx), 0);
                true
            }
            Some(old) if crate::absdom::leq_seq(&regs, old) => false,
            Some(old) => {
                let old = old.clone();
                let widen = self.bump_strict(FactKey::R(pp.clone(), ctx.clone()), limits);
                let joined: Vec<AbsVal> = old
                    .iter()
                    .zip(&regs)
                    .map(|(o, n)| self.widen_val(o, n, widen))
                    .collect();
                self.r.get_mut(&pp).unwrap().insert(ctx, joined);
                true
            }
        }
    }

    /// All contexts of a method collapse into their join.
    fn merge_method_contexts(&mut self, method: &(String, String)) {
        self.stats.context_merges += 1;
        self.merged_methods.insert(method.clone());
    }

    fn merged_ctx_tuple(&self, method: &(String, String), incoming: &[AbsVal]) -> Vec<AbsVal> {
        let mut acc: Vec<AbsVal> = incoming.to_vec();
        let fold = |tuple: &Vec<AbsVal>, acc: &mut Vec<AbsVal>| {
            if tuple.len() == acc.len() {
                for (a, t) in acc.iter_mut().zip(tuple) {
                    *a = self.domain.join(a, t);
                }
            }
        };
        if let Some(known) = self.method_ctxs.get(method) {
            for t in known {
                fold(t, &mut acc);
            }
        }
        for (pp, entries) in &self.r {
            if pp.class == method.0 && pp.method == method.1 {
                for t in entries.keys() {
                    fold(t, &mut acc);
                }
            }
        }
        acc
    }

    fn insert_res(&mut self, class: String, method: String, ctx: Vec<AbsVal>, ret: AbsVal, limits: &Limits) -> bool {
        let key = (class.clone(), method.clone());
        let ctx = if self.merged_methods.contains(&key) { self.merged_ctx_tuple(&key, &ctx) } else { ctx };
        let entry = self.res.entry(key).or_default();
        match entry.get(&ctx) {
            None => {
                entry.insert(ctx, ret);
                true
            }
            Some(old) if ret.leq(old) => false,
            Some(old) => {
                let old = old.clone();
                let widen = self.bump_strict(FactKey::Res(class.clone(), method.clone(), ctx.clone()), limits);
                let joined = self.widen_val(&old, &ret, widen);
                self.res.get_mut(&(class, method)).unwrap().insert(ctx, joined);
                true
            }
        }
    }

    fn insert_h(&mut self, annot: Annot, block: AbsBlock, limits: &Limits) -> bool {
        let old = match self.h.get(&annot) {
            None => {
                self.h.insert(annot, block);
                return true;
            }
            Some(old) if block.leq(old) => return false,
            Some(old) => old.clone(),
        };
        let joined = old
            .join(&block, &self.domain)
            .unwrap_or_else(|| panic!("heap summary shape clash at {annot}: {old} vs {block}"));
        let widen = self.bump_strict(FactKey::H(annot.clone()), limits);
        let final_block = if widen {
            self.stats.widenings += 1;
            widen_block(&self.domain, &old, &joined)
        } else {
            joined
        };
        self.h.insert(annot, final_block);
        true
    }

    fn insert_h_field(&mut self, annot: &Annot, field: &str, val: &AbsVal, limits: &Limits) -> bool {
        let (class, mut fields, old) = match self.h.get(annot) {
            Some(AbsBlock::Obj { class, fields }) => match fields.get(field) {
                Some(old) => (class.clone(), fields.clone(), old.clone()),
                None => return false,
            },
            _ => return false,
        };
        if val.leq(&old) {
            return false;
        }
        let widen = self.bump_strict(FactKey::H(annot.clone()), limits);
        let joined = self.widen_val(&old, val, widen);
        fields.insert(field.to_string(), joined);
        self.h.insert(annot.clone(), AbsBlock::Obj { class, fields });
        true
    }

    fn insert_h_summary_join(&mut self, annot: &Annot, add: &AbsVal, limits: &Limits) -> bool {
        let updated = match self.h.get(annot) {
            Some(AbsBlock::Arr { elem, val }) if !add.leq(val) => {
                AbsBlock::Arr { elem: elem.clone(), val: self.domain.join(val, add) }
            }
            Some(AbsBlock::Intent { target, val }) if !add.leq(val) => {
                AbsBlock::Intent { target: target.clone(), val: self.domain.join(val, add) }
            }
            _ => return false,
        };
        self.bump_strict(FactKey::H(annot.clone()), limits);
        self.h.insert(annot.clone(), updated);
        true
    }

    fn insert_s(&mut self, class: String, field: String, val: AbsVal, limits: &Limits) -> bool {
        let key = (class, field);
        match self.s.get(&key) {
            None => {
                self.s.insert(key, val);
                true
            }
            Some(old) if val.leq(old) => false,
            Some(old) => {
                let old = old.clone();
                let widen = self.bump_strict(FactKey::S(key.0.clone(), key.1.clone()), limits);
                let joined = self.widen_val(&old, &val, widen);
                self.s.insert(key, joined);
                true
            }
        }
    }

    fn insert_rhs(&mut self, pp: Pp, val: AbsVal, limits: &Limits) -> bool {
        match self.rhs.get(&pp) {
            None => {
                self.rhs.insert(pp, val);
                true
            }
            Some(old) if val.leq(old) => false,
            Some(old) => {
                let old = old.clone();
                let widen = self.bump_strict(FactKey::Rhs(pp.clone()), limits);
                let joined = self.widen_val(&old, &val, widen);
                self.rhs.insert(pp, joined);
                true
            }
        }
    }

    fn insert_i(&mut self, owner: String, target: String, val: AbsVal, limits: &Limits) -> bool {
        let key = (owner, target);
        match self.i.get(&key) {
            None => {
                self.i.insert(key, val);
                true
            }
            Some(old) if val.leq(old) => false,
            Some(old) => {
                let old = old.clone();
                let widen = self.bump_strict(FactKey::I(key.0.clone(), key.1.clone()), limits);
                let joined = self.widen_val(&old, &val, widen);
                self.i.insert(key, joined);
                true
            }
        }
    }

    /// Injects one represented fact; used for seeding and by tests.
    pub fn insert_ground(&mut self, f: &GroundFact, limits: &Limits) -> bool {
        match f {
            GroundFact::R { pp, ctx, regs } => self.insert_r(pp.clone(), ctx.clone(), regs.clone(), limits),
            GroundFact::H { annot, block } => self.insert_h(annot.clone(), block.clone(), limits),
            GroundFact::S { class, field, val } => {
                self.insert_s(class.clone(), field.clone(), val.clone(), limits)
            }
            GroundFact::I { owner, target, val } => {
                self.insert_i(owner.clone(), target.clone(), val.clone(), limits)
            }
        }
    }

    /// Like `covers_fact`, but register facts must be dominated at their
    /// exact context key (unless merged); the post-fixpoint audit uses
    /// this so that retracting any stored entry is observable.
    pub fn covers_fact_exact(&self, f: &GroundFact) -> bool {
        match f {
            GroundFact::R { pp, ctx, regs } => {
                let Some(entries) = self.r.get(pp) else { return false };
                if self.is_merged(&pp.class, &pp.method) {
                    entries.iter().any(|(c, r)| {
                        crate::absdom::leq_seq(ctx, c) && crate::absdom::leq_seq(regs, r)
                    })
                } else {
                    entries.get(ctx).is_some_and(|r| crate::absdom::leq_seq(regs, r))
                }
            }
            other => self.covers_fact(other),
        }
    }

    /// True when the stored facts dominate the given represented fact.
    pub fn covers_fact(&self, f: &GroundFact) -> bool {
        match f {
            GroundFact::R { pp, ctx, regs } => self.r.get(pp).is_some_and(|entries| {
                entries.iter().any(|(c, r)| {
                    crate::absdom::leq_seq(ctx, c) && crate::absdom::leq_seq(regs, r)
                })
            }),
            GroundFact::H { annot, block } => self.h.get(annot).is_some_and(|b| block.leq(b)),
            GroundFact::S { class, field, val } => self
                .s
                .get(&(class.clone(), field.clone()))
                .is_some_and(|v| val.leq(v)),
            GroundFact::I { owner, target, val } => self
                .i
                .get(&(owner.clone(), target.clone()))
                .is_some_and(|v| val.leq(v)),
        }
    }

    /// Register facts at the entry point of a method, one per context.
    pub fn r_entries(&self, class: &str, method: &str) -> Vec<(&Vec<AbsVal>, &Vec<AbsVal>)> {
        let pp = Pp::new(class, method, 0);
        self.r.get(&pp).map(|e| e.iter().collect()).unwrap_or_default()
    }

    pub fn h_block(&self, annot: &Annot) -> Option<&AbsBlock> {
        self.h.get(annot)
    }

    /// Abstract taint of a value against this model's heap summaries.
    pub fn taint_of(&self, v: &AbsVal) -> crate::values::Taint {
        crate::absdom::taint_of_abs(v, &|a: &Annot| self.h.get(a).cloned())
    }

    /// Every stored fact key, in deterministic order.
    pub fn fact_keys(&self) -> Vec<FactKey> {
        let mut out = Vec::new();
        for (pp, entries) in &self.r {
            for ctx in entries.keys() {
                out.push(FactKey::R(pp.clone(), ctx.clone()));
            }
        }
        for ((c, m), entries) in &self.res {
            for ctx in entries.keys() {
                out.push(FactKey::Res(c.clone(), m.clone(), ctx.clone()));
            }
        }
        out.extend(self.h.keys().map(|a| FactKey::H(a.clone())));
        out.extend(self.s.keys().map(|(c, f)| FactKey::S(c.clone(), f.clone())));
        out.extend(self.rhs.keys().map(|pp| FactKey::Rhs(pp.clone())));
        out.extend(self.i.keys().map(|(o, t)| FactKey::I(o.clone(), t.clone())));
        out
    }

    /// Removes one stored fact. This exists for the post-fixpoint
    /// mutation tests; a retracted model must fail the audit.
    pub fn retract(&mut self, key: &FactKey) {
        match key {
            FactKey::R(pp, ctx) => {
                if let Some(e) = self.r.get_mut(pp) {
                    e.remove(ctx);
                }
            }
            FactKey::Res(c, m, ctx) => {
                if let Some(e) = self.res.get_mut(&(c.clone(), m.clone())) {
                    e.remove(ctx);
                }
            }
            FactKey::H(a) => {
                self.h.remove(a);
            }
            FactKey::S(c, f) => {
                self.s.remove(&(c.clone(), f.clone()));
            }
            FactKey::Rhs(pp) => {
                self.rhs.remove(pp);
            }
            FactKey::I(o, t) => {
                self.i.remove(&(o.clone(), t.clone()));
            }
        }
    }

    /// Deterministic textual dump, same fact syntax as the clause dump.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (pp, entries) in &self.r {
            for (ctx, regs) in entries {
                let ctx: Vec<String> = ctx.iter().map(|v| v.to_string()).collect();
                let regs: Vec<String> = regs.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("R_{{{pp}}}({}; {})\n", ctx.join(","), regs.join(",")));
            }
        }
        for ((c, m), entries) in &self.res {
            for (ctx, ret) in entries {
                let ctx: Vec<String> = ctx.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("Res_{{{c}.{m}}}({}; {ret})\n", ctx.join(",")));
            }
        }
        for (a, b) in &self.h {
            out.push_str(&format!("H({a}, {b})\n"));
        }
        for ((c, f), v) in &self.s {
            out.push_str(&format!("S_{{{c}.{f}}}({v})\n"));
        }
        for (pp, v) in &self.rhs {
            out.push_str(&format!("RHS_{{{pp}}}({v})\n"));
        }
        for ((o, t), v) in &self.i {
            out.push_str(&format!("I({o}, {{|@{t}; {v}|}})\n"));
        }
        out
    }
}

fn widen_block(d: &Domain, old: &AbsBlock, new: &AbsBlock) -> AbsBlock {
    match (old, new) {
        (AbsBlock::Obj { fields: fo, .. }, AbsBlock::Obj { class, fields }) => AbsBlock::Obj {
            class: class.clone(),
            fields: fields
                .iter()
                .map(|(f, v)| {
                    let w = fo.get(f).map(|o| d.widen(o, v)).unwrap_or_else(|| v.clone());
                    (f.clone(), w)
                })
                .collect(),
        },
        (AbsBlock::Arr { val: vo, .. }, AbsBlock::Arr { elem, val }) => {
            AbsBlock::Arr { elem: elem.clone(), val: d.widen(vo, val) }
        }
        (AbsBlock::Intent { val: vo, .. }, AbsBlock::Intent { target, val }) => {
            AbsBlock::Intent { target: target.clone(), val: d.widen(vo, val) }
        }
        _ => new.clone(),
    }
}

// ---------------------------------------------------------------------
// Clause evaluation

#[derive(Debug, Clone)]
enum Bind {
    Val(AbsVal),
    Vec(Vec<AbsVal>),
    Ann(Annot),
}

type Env = BTreeMap<VarId, Bind>;

fn env_val(env: &Env, v: VarId) -> AbsVal {
    match env.get(&v) {
        Some(Bind::Val(x)) => x.clone(),
        other => panic!("variable x{v} is not an abstract value: {other:?}"),
    }
}

fn env_vec(env: &Env, v: VarId) -> Vec<AbsVal> {
    match env.get(&v) {
        Some(Bind::Vec(x)) => x.clone(),
        other => panic!("variable x{v} is not a vector: {other:?}"),
    }
}

fn env_ann(env: &Env, v: VarId) -> Annot {
    match env.get(&v) {
        Some(Bind::Ann(a)) => a.clone(),
        other => panic!("variable x{v} is not an annotation: {other:?}"),
    }
}

fn eval_term(d: &Domain, env: &Env, t: &Term) -> AbsVal {
    match t {
        Term::Const(v) => v.clone(),
        Term::Var(v) => env_val(env, *v),
        Term::Proj(v, i) => {
            let vec = env_vec(env, *v);
            vec.get(*i).cloned().unwrap_or_else(AbsVal::bottom)
        }
        Term::AnnSet(v) => AbsVal::annot(env_ann(env, *v)),
        Term::InSet(v) => match env_ann(env, *v) {
            Annot::Class(c) => AbsVal::annot(Annot::In(c)),
            a => panic!("in(_) applied to non-class annotation {a}"),
        },
        Term::Binop(op, a, b) => d.binop(*op, &eval_term(d, env, a), &eval_term(d, env, b)),
        Term::Unop(op, a) => d.unop(*op, &eval_term(d, env, a)),
    }
}

fn eval_vecterm(d: &Domain, env: &Env, t: &VecTerm) -> Vec<AbsVal> {
    match t {
        VecTerm::Var(v) => env_vec(env, *v),
        VecTerm::Build(ts) => ts.iter().map(|t| eval_term(d, env, t)).collect(),
        VecTerm::Update(v, i, t) => {
            let mut vec = env_vec(env, *v);
            if *i < vec.len() {
                vec[*i] = eval_term(d, env, t);
            }
            vec
        }
    }
}

fn eval_annterm(env: &Env, t: &AnnTerm) -> Annot {
    match t {
        AnnTerm::Var(v) => env_ann(env, *v),
        AnnTerm::In(v) => match env_ann(env, *v) {
            Annot::Class(c) => Annot::In(c),
            a => panic!("in(_) applied to non-class annotation {a}"),
        },
        AnnTerm::Const(a) => a.clone(),
    }
}

/// A fully evaluated head, ready to be joined into the store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Derivation {
    R(Pp, Vec<AbsVal>, Vec<AbsVal>),
    Rhs(Pp, AbsVal),
    S(String, String, AbsVal),
    Res(String, String, Vec<AbsVal>, AbsVal),
    HBlock(Annot, AbsBlock),
    HField(Annot, String, AbsVal),
    HSummaryJoin(Annot, AbsVal),
    I(String, String, AbsVal),
}

struct Engine<'p> {
    p: &'p Program,
    d: Domain,
    /// When set, register/result atoms match only these context keys;
    /// the stale-context pruning pass runs with this restriction.
    restrict_r: Option<&'p BTreeSet<(Pp, Vec<AbsVal>)>>,
    restrict_res: Option<&'p BTreeSet<(String, String, Vec<AbsVal>)>>,
}

impl<'p> Engine<'p> {
    fn block_matches(&self, key: &Annot, block: &AbsBlock, pat: &BlockPat, env: &mut Env) -> bool {
        match pat {
            BlockPat::Any => true,
            BlockPat::Arr { val } => match block {
                AbsBlock::Arr { val: v, .. } => {
                    env.insert(*val, Bind::Val(v.clone()));
                    true
                }
                _ => false,
            },
            BlockPat::Intent { target, val } => match block {
                AbsBlock::Intent { target: t, val: v } => {
                    env.insert(*target, Bind::Ann(Annot::Class(t.clone())));
                    env.insert(*val, Bind::Val(v.clone()));
                    true
                }
                _ => false,
            },
            BlockPat::Obj { class, binds } => match block {
                AbsBlock::Obj { class: c, fields } => {
                    match class {
                        ClassPat::Bind(v) => {
                            env.insert(*v, Bind::Ann(Annot::Class(c.clone())));
                        }
                        ClassPat::EqualsKey => {
                            if *key != Annot::Class(c.clone()) {
                                return false;
                            }
                        }
                    }
                    for (f, v) in binds {
                        let Some(fv) = fields.get(f) else { return false };
                        env.insert(*v, Bind::Val(fv.clone()));
                    }
                    true
                }
                _ => false,
            },
        }
    }

    fn eval_guard(&self, model: &Model, env: &Env, g: &Guard) -> bool {
        match g {
            Guard::Cmp { op, lhs, rhs, expect } => {
                let (may_true, may_false) =
                    self.d.compare(*op, &eval_term(&self.d, env, lhs), &eval_term(&self.d, env, rhs));
                if *expect {
                    may_true
                } else {
                    may_false
                }
            }
            Guard::BlockTypeLe { ann, ty, expect } => {
                let a = env_ann(env, *ann);
                let Some(block) = model.h.get(&a) else { return false };
                let le = hier::subtype(&block.ty(), ty, self.p);
                le == *expect
            }
            Guard::ClassLe { class, sup } => match env_ann(env, *class) {
                Annot::Class(c) => hier::subtype(&Ty::Class(c), &Ty::Class(sup.clone()), self.p),
                _ => false,
            },
            Guard::IsActivity { class } => match env_ann(env, *class) {
                Annot::Class(c) => hier::is_activity_class(self.p, &c),
                _ => false,
            },
        }
    }

    /// Enumerates all bindings of the clause body against the frozen
    /// model, emitting one derivation per complete match.
    fn eval_clause(&self, model: &Model, clause: &Clause, out: &mut Vec<Derivation>) {
        let mut env = Env::new();
        self.eval_atoms(model, &clause.body, 0, &mut env, &clause.head, out);
    }

    fn eval_atoms(
        &self,
        model: &Model,
        atoms: &[Atom],
        idx: usize,
        env: &mut Env,
        head: &Head,
        out: &mut Vec<Derivation>,
    ) {
        let Some(atom) = atoms.get(idx) else {
            out.push(self.eval_head(env, head));
            return;
        };
        match atom {
            Atom::R { pp, ctx, regs } => {
                if let Some(entries) = model.r.get(pp) {
                    for (c, r) in entries {
                        if let Some(kept) = self.restrict_r {
                            if !kept.contains(&(pp.clone(), c.clone())) {
                                continue;
                            }
                        }
                        env.insert(*ctx, Bind::Vec(c.clone()));
                        env.insert(*regs, Bind::Vec(r.clone()));
                        self.eval_atoms(model, atoms, idx + 1, env, head, out);
                    }
                }
            }
            Atom::Rhs { pp, val } => {
                if let Some(v) = model.rhs.get(pp) {
                    env.insert(*val, Bind::Val(v.clone()));
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
            Atom::SFld { class, field, val } => {
                if let Some(v) = model.s.get(&(class.clone(), field.clone())) {
                    env.insert(*val, Bind::Val(v.clone()));
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
            Atom::Res { class, method, ctx, ret } => {
                let tuple = eval_vecterm(&self.d, env, ctx);
                let key = (class.clone(), method.clone());
                let Some(entries) = model.res.get(&key) else { return };
                let bound = if model.merged_methods.contains(&key) {
                    // Merged contexts: any recorded result may flow back.
                    entries.values().fold(None, |acc: Option<AbsVal>, v| {
                        Some(match acc {
                            None => v.clone(),
                            Some(a) => self.d.join(&a, v),
                        })
                    })
                } else if self.restrict_res.is_some_and(|kept| {
                    !kept.contains(&(class.clone(), method.clone(), tuple.clone()))
                }) {
                    None
                } else {
                    entries.get(&tuple).cloned()
                };
                if let Some(v) = bound {
                    env.insert(*ret, Bind::Val(v));
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
            Atom::Member { of, ann } => {
                let v = eval_term(&self.d, env, of);
                for a in &v.annots {
                    env.insert(*ann, Bind::Ann(a.clone()));
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
            Atom::H { key, pat } => {
                // A bound or constant key selects one entry; an unbound
                // variable ranges over every heap summary.
                let fixed: Option<Annot> = match key {
                    AnnTerm::Const(a) => Some(a.clone()),
                    AnnTerm::In(v) => Some(eval_annterm(env, &AnnTerm::In(*v))),
                    AnnTerm::Var(v) => match env.get(v) {
                        Some(Bind::Ann(a)) => Some(a.clone()),
                        _ => None,
                    },
                };
                match fixed {
                    Some(a) => {
                        if let Some(block) = model.h.get(&a) {
                            if self.block_matches(&a, block, pat, env) {
                                self.eval_atoms(model, atoms, idx + 1, env, head, out);
                            }
                        }
                    }
                    None => {
                        let AnnTerm::Var(kv) = key else { unreachable!() };
                        for (a, block) in &model.h {
                            env.insert(*kv, Bind::Ann(a.clone()));
                            if self.block_matches(a, block, pat, env) {
                                self.eval_atoms(model, atoms, idx + 1, env, head, out);
                            }
                        }
                    }
                }
            }
            Atom::I { owner, target, val } => {
                for ((o, t), v) in &model.i {
                    env.insert(*owner, Bind::Ann(Annot::Class(o.clone())));
                    env.insert(*target, Bind::Ann(Annot::Class(t.clone())));
                    env.insert(*val, Bind::Val(v.clone()));
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
            Atom::Guard(g) => {
                if self.eval_guard(model, env, g) {
                    // A firing comparison refines the compared register
                    // slots to the literals consistent with the branch.
                    // The refinement may outlive this branch in `env`,
                    // which is harmless with the generated clause shapes:
                    // comparison guards only follow the register atom
                    // directly, and every atom alternative rebinds its
                    // variables wholesale.
                    if let Guard::Cmp {
                        op,
                        lhs: Term::Proj(va, i),
                        rhs: Term::Proj(vb, j),
                        expect,
                    } = g
                    {
                        let a = eval_term(&self.d, env, &Term::Proj(*va, *i));
                        let b = eval_term(&self.d, env, &Term::Proj(*vb, *j));
                        if let Some((ra, rb)) = self.d.refine_cmp(*op, *expect, &a, &b) {
                            let mut vec_a = env_vec(env, *va);
                            if *i < vec_a.len() {
                                vec_a[*i] = ra;
                            }
                            env.insert(*va, Bind::Vec(vec_a));
                            let mut vec_b = env_vec(env, *vb);
                            if *j < vec_b.len() {
                                vec_b[*j] = rb;
                            }
                            env.insert(*vb, Bind::Vec(vec_b));
                        }
                    }
                    self.eval_atoms(model, atoms, idx + 1, env, head, out);
                }
            }
        }
    }

    fn fresh_object(&self, class: &str, env: &Env, fields: &FreshFields) -> AbsBlock {
        let mut map: BTreeMap<String, AbsVal> = hier::fields_of(self.p, class)
            .into_iter()
            .map(|f| (f.name.clone(), self.d.default_abs(&f.ty)))
            .collect();
        for (name, t) in &fields.overrides {
            map.insert(name.clone(), eval_term(&self.d, env, t));
        }
        AbsBlock::Obj { class: class.to_string(), fields: map }
    }

    fn eval_head(&self, env: &Env, head: &Head) -> Derivation {
        match head {
            Head::R { pp, ctx, regs } => Derivation::R(
                pp.clone(),
                eval_vecterm(&self.d, env, ctx),
                eval_vecterm(&self.d, env, regs),
            ),
            Head::Rhs { pp, val } => Derivation::Rhs(pp.clone(), eval_term(&self.d, env, val)),
            Head::SFld { class, field, val } => {
                Derivation::S(class.clone(), field.clone(), eval_term(&self.d, env, val))
            }
            Head::Res { class, method, ctx, ret } => Derivation::Res(
                class.clone(),
                method.clone(),
                eval_vecterm(&self.d, env, ctx),
                eval_term(&self.d, env, ret),
            ),
            Head::HObjField { key, field, val } => Derivation::HField(
                env_ann(env, *key),
                field.clone(),
                eval_term(&self.d, env, val),
            ),
            Head::HFreshObj { key, class, fields } => {
                let annot = eval_annterm(env, key);
                let cls = match class {
                    Some(c) => c.clone(),
                    None => match &annot {
                        Annot::Class(c) => c.clone(),
                        a => panic!("fresh object at non-class annotation {a}"),
                    },
                };
                Derivation::HBlock(annot, self.fresh_object(&cls, env, fields))
            }
            Head::HFreshArr { key, elem, init } => Derivation::HBlock(
                key.clone(),
                AbsBlock::Arr { elem: elem.clone(), val: eval_term(&self.d, env, init) },
            ),
            Head::HFreshIntent { key, target, val } => {
                let annot = eval_annterm(env, key);
                let tgt = match target {
                    Some(t) => t.clone(),
                    None => match &annot {
                        Annot::In(c) => c.clone(),
                        a => panic!("fresh intent at unexpected annotation {a}"),
                    },
                };
                Derivation::HBlock(
                    annot,
                    AbsBlock::Intent { target: tgt, val: eval_term(&self.d, env, val) },
                )
            }
            Head::HArrJoin { key, add, .. } | Head::HIntentJoin { key, add, .. } => {
                Derivation::HSummaryJoin(env_ann(env, *key), eval_term(&self.d, env, add))
            }
            Head::I { owner, target, val } => {
                let Annot::Class(t) = env_ann(env, *target) else {
                    panic!("intent target bound to a non-class annotation");
                };
                Derivation::I(owner.clone(), t, eval_term(&self.d, env, val))
            }
        }
    }
}

fn apply(model: &mut Model, deriv: &Derivation, limits: &Limits) -> bool {
    match deriv {
        Derivation::R(pp, ctx, regs) => model.insert_r(pp.clone(), ctx.clone(), regs.clone(), limits),
        Derivation::Rhs(pp, v) => model.insert_rhs(pp.clone(), v.clone(), limits),
        Derivation::S(c, f, v) => model.insert_s(c.clone(), f.clone(), v.clone(), limits),
        Derivation::Res(c, m, ctx, v) => {
            model.insert_res(c.clone(), m.clone(), ctx.clone(), v.clone(), limits)
        }
        Derivation::HBlock(a, b) => model.insert_h(a.clone(), b.clone(), limits),
        Derivation::HField(a, f, v) => model.insert_h_field(a, f, v, limits),
        Derivation::HSummaryJoin(a, v) => model.insert_h_summary_join(a, v, limits),
        Derivation::I(o, t, v) => model.insert_i(o.clone(), t.clone(), v.clone(), limits),
    }
}

fn deriv_dep(deriv: &Derivation) -> Dep {
    match deriv {
        Derivation::R(pp, ..) => (DepKey::RAt, Some(pp.clone()), None),
        Derivation::Rhs(pp, _) => (DepKey::RhsAt, Some(pp.clone()), None),
        Derivation::S(c, f, _) => (DepKey::SAt, None, Some((c.clone(), f.clone()))),
        Derivation::Res(c, m, ..) => (DepKey::ResAt, None, Some((c.clone(), m.clone()))),
        Derivation::HBlock(..) | Derivation::HField(..) | Derivation::HSummaryJoin(..) => {
            (DepKey::HAny, None, None)
        }
        Derivation::I(..) => (DepKey::IAny, None, None),
    }
}

/// Which store family a clause reads, plus the static key for keyed
/// families.
type Dep = (DepKey, Option<Pp>, Option<(String, String)>);

/// Dependency shape of a body atom.
fn atom_dep(a: &Atom) -> Option<Dep> {
    match a {
        Atom::R { pp, .. } => Some((DepKey::RAt, Some(pp.clone()), None)),
        Atom::Rhs { pp, .. } => Some((DepKey::RhsAt, Some(pp.clone()), None)),
        Atom::SFld { class, field, .. } => {
            Some((DepKey::SAt, None, Some((class.clone(), field.clone()))))
        }
        Atom::Res { class, method, .. } => {
            Some((DepKey::ResAt, None, Some((class.clone(), method.clone()))))
        }
        Atom::H { .. } => Some((DepKey::HAny, None, None)),
        Atom::I { .. } => Some((DepKey::IAny, None, None)),
        Atom::Member { .. } | Atom::Guard(Guard::BlockTypeLe { .. }) => Some((DepKey::HAny, None, None)),
        Atom::Guard(_) => None,
    }
}

/// Saturates the clause set from the seed facts to a post-fixpoint
/// model. Chaotic iteration with delta-driven scheduling; the model is
/// flagged incomplete when a limit interrupts it.
pub fn saturate(p: &Program, ap: &AbstractProgram, seeds: &[GroundFact], limits: Limits) -> Model {
    let engine = Engine { p, d: ap.domain, restrict_r: None, restrict_res: None };
    let mut model = Model::new(ap.domain);
    model.sub = ap.sub_facts.clone();
    for f in seeds {
        model.insert_ground(f, &limits);
    }

    // Dependency index from store families to clause indices.
    let mut deps: Vec<(usize, Dep)> = Vec::new();
    for (i, c) in ap.clauses.iter().enumerate() {
        for a in &c.body {
            if let Some(dep) = atom_dep(a) {
                deps.push((i, dep));
            }
        }
    }

    let mut queue: VecDeque<usize> = (0..ap.clauses.len()).collect();
    let mut queued: Vec<bool> = vec![true; ap.clauses.len()];
    let mut derivations: Vec<Derivation> = Vec::new();

    while let Some(ci) = queue.pop_front() {
        queued[ci] = false;
        model.stats.clause_runs += 1;
        derivations.clear();
        engine.eval_clause(&model, &ap.clauses[ci], &mut derivations);
        derivations.sort();
        derivations.dedup();
        for deriv in &derivations {
            if !apply(&mut model, deriv, &limits) {
                continue;
            }
            model.stats.derivations += 1;
            if model.stats.derivations > limits.max_derivations {
                model.complete = false;
                return model;
            }
            let (dk, dpp, dkey) = deriv_dep(deriv);
            for (i, (k, pp, key)) in &deps {
                if *k != dk || queued[*i] {
                    continue;
                }
                let hit = match dk {
                    DepKey::RAt | DepKey::RhsAt => pp.as_ref() == dpp.as_ref(),
                    DepKey::SAt | DepKey::ResAt => key.as_ref() == dkey.as_ref(),
                    DepKey::HAny | DepKey::IAny => true,
                };
                if hit {
                    queue.push_back(*i);
                    queued[*i] = true;
                }
            }
        }
    }
    prune_stale_contexts(p, ap, seeds, &mut model);
    model
}

/// Chaotic iteration can park register/result summaries under context
/// keys built from intermediate store states; at the fixpoint those keys
/// are no longer one-step derivable. This pass keeps only the context
/// keys reachable from the seeds under the final store, so that every
/// stored fact is re-derivable and single-fact retraction is observable.
/// Merged-context methods keep all their entries.
fn prune_stale_contexts(p: &Program, ap: &AbstractProgram, seeds: &[GroundFact], model: &mut Model) {
    let mut kept_r: BTreeSet<(Pp, Vec<AbsVal>)> = BTreeSet::new();
    let mut kept_res: BTreeSet<(String, String, Vec<AbsVal>)> = BTreeSet::new();
    for f in seeds {
        if let GroundFact::R { pp, ctx, .. } = f {
            kept_r.insert((pp.clone(), ctx.clone()));
        }
    }
    for (pp, entries) in &model.r {
        if model.merged_methods.contains(&(pp.class.clone(), pp.method.clone())) {
            for ctx in entries.keys() {
                kept_r.insert((pp.clone(), ctx.clone()));
            }
        }
    }
    for ((c, m), entries) in &model.res {
        if model.merged_methods.contains(&(c.clone(), m.clone())) {
            for ctx in entries.keys() {
                kept_res.insert((c.clone(), m.clone(), ctx.clone()));
            }
        }
    }
    loop {
        let engine = Engine { p, d: ap.domain, restrict_r: Some(&kept_r), restrict_res: Some(&kept_res) };
        let mut new_r = Vec::new();
        let mut new_res = Vec::new();
        let mut derivations = Vec::new();
        for clause in &ap.clauses {
            derivations.clear();
            engine.eval_clause(model, clause, &mut derivations);
            for d in &derivations {
                match d {
                    Derivation::R(pp, ctx, _) => {
                        let key = (pp.clone(), ctx.clone());
                        if model.r.get(pp).is_some_and(|e| e.contains_key(ctx)) && !kept_r.contains(&key) {
                            new_r.push(key);
                        }
                    }
                    Derivation::Res(c, m, ctx, _) => {
                        let key = (c.clone(), m.clone(), ctx.clone());
                        let stored = model
                            .res
                            .get(&(c.clone(), m.clone()))
                            .is_some_and(|e| e.contains_key(ctx));
                        if stored && !kept_res.contains(&key) {
                            new_res.push(key);
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut grew = false;
        for k in new_r {
            grew |= kept_r.insert(k);
        }
        for k in new_res {
            grew |= kept_res.insert(k);
        }
        if !grew {
            break;
        }
    }
    for (pp, entries) in &mut model.r {
        entries.retain(|ctx, _| kept_r.contains(&(pp.clone(), ctx.clone())));
    }
    model.r.retain(|_, e| !e.is_empty());
    for ((c, m), entries) in &mut model.res {
        entries.retain(|ctx, _| kept_res.contains(&(c.clone(), m.clone(), ctx.clone())));
    }
    model.res.retain(|_, e| !e.is_empty());
}

/// A clause instance whose head the model does not cover.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub clause_index: usize,
    pub clause: String,
    pub derived: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "clause {}: `{}` derives uncovered `{}`", self.clause_index, self.clause, self.derived)
    }
}

fn derivation_covered(model: &Model, d: &Derivation) -> bool {
    match d {
        Derivation::R(pp, ctx, regs) => {
            // The context key must be present exactly unless the method's
            // contexts were merged away; anything weaker would let the
            // mutation tests slip a retracted entry past the audit.
            let Some(entries) = model.r.get(pp) else { return false };
            if model.is_merged(&pp.class, &pp.method) {
                entries
                    .iter()
                    .any(|(c2, r2)| crate::absdom::leq_seq(ctx, c2) && crate::absdom::leq_seq(regs, r2))
            } else {
                entries.get(ctx).is_some_and(|r2| crate::absdom::leq_seq(regs, r2))
            }
        }
        Derivation::Rhs(pp, v) => model.rhs.get(pp).is_some_and(|s| v.leq(s)),
        Derivation::S(c, f, v) => model.s.get(&(c.clone(), f.clone())).is_some_and(|s| v.leq(s)),
        Derivation::Res(c, m, ctx, v) => model.res.get(&(c.clone(), m.clone())).is_some_and(|entries| {
            if model.is_merged(c, m) {
                entries.iter().any(|(c2, v2)| crate::absdom::leq_seq(ctx, c2) && v.leq(v2))
            } else {
                entries.get(ctx).is_some_and(|v2| v.leq(v2))
            }
        }),
        Derivation::HBlock(a, b) => model.h.get(a).is_some_and(|s| b.leq(s)),
        Derivation::HField(a, f, v) => match model.h.get(a) {
            Some(AbsBlock::Obj { fields, .. }) => fields.get(f).is_some_and(|s| v.leq(s)),
            _ => false,
        },
        Derivation::HSummaryJoin(a, v) => match model.h.get(a) {
            Some(AbsBlock::Arr { val, .. }) | Some(AbsBlock::Intent { val, .. }) => v.leq(val),
            _ => false,
        },
        Derivation::I(o, t, v) => model.i.get(&(o.clone(), t.clone())).is_some_and(|s| v.leq(s)),
    }
}

/// Independent audit: re-evaluates every clause and every seed against
/// the frozen store and reports the first uncovered head.
pub fn check_postfixpoint(
    p: &Program,
    ap: &AbstractProgram,
    seeds: &[GroundFact],
    model: &Model,
) -> Result<(), Counterexample> {
    for (i, f) in seeds.iter().enumerate() {
        if !model.covers_fact_exact(f) {
            return Err(Counterexample {
                clause_index: i,
                clause: "<seed>".into(),
                derived: f.to_string(),
            });
        }
    }
    let engine = Engine { p, d: ap.domain, restrict_r: None, restrict_res: None };
    for (i, clause) in ap.clauses.iter().enumerate() {
        let mut derivations = Vec::new();
        engine.eval_clause(model, clause, &mut derivations);
        for d in &derivations {
            if !derivation_covered(model, d) {
                return Err(Counterexample {
                    clause_index: i,
                    clause: clause.to_string(),
                    derived: format!("{d:?}"),
                });
            }
        }
    }
    Ok(())
}

/// Query patterns against a saturated model.
#[derive(Debug, Clone)]
pub enum QueryPattern {
    /// Register facts at the entry of a method.
    REntry { class: String, method: String },
    /// The heap summary at an annotation.
    HAt(Annot),
    /// A static field summary.
    SAt { class: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub description: String,
    pub value: AbsVal,
}

/// All stored values matching the pattern whose payload satisfies the
/// predicate; deterministic order.
pub fn query(model: &Model, pattern: &QueryPattern, pred: &dyn Fn(&AbsVal) -> bool) -> Vec<Witness> {
    let mut out = Vec::new();
    match pattern {
        QueryPattern::REntry { class, method } => {
            for (ctx, regs) in model.r_entries(class, method) {
                for (k, v) in regs.iter().enumerate() {
                    if pred(v) {
                        let ctx: Vec<String> = ctx.iter().map(|c| c.to_string()).collect();
                        out.push(Witness {
                            description: format!("R_{{{class}.{method}:0}} ctx=({}) reg {k}", ctx.join(",")),
                            value: v.clone(),
                        });
                    }
                }
            }
        }
        QueryPattern::HAt(a) => {
            if let Some(b) = model.h.get(a) {
                for v in b.values() {
                    if pred(v) {
                        out.push(Witness { description: format!("H({a})"), value: v.clone() });
                    }
                }
            }
        }
        QueryPattern::SAt { class, field } => {
            if let Some(v) = model.s.get(&(class.clone(), field.clone())) {
                if pred(v) {
                    out.push(Witness { description: format!("S_{{{class}.{field}}}"), value: v.clone() });
                }
            }
        }
    }
    out
}
