//! Abstract values, the pluggable primitive domains, the representation
//! of concrete states as facts, and the orderings used by the coverage
//! check.
//!
//! An abstract value is a finite set mixing abstract primitives with
//! location annotations. The primitive part is supplied by a domain:
//! either taint-only (every literal collapses to a tainted top) or
//! constant sets up to a size cap. The empty set is bottom and set union
//! is join, so all joins are monotone by construction.
//!
//! # Domain contract
//!
//! A primitive domain is a pure function table over the `PrimAbs`
//! carrier. The shipped domains are selected on the command line
//! (`--domain taint | const:<k>`); a third-party domain must provide the
//! same operations with the same obligations:
//!
//! - `beta_prim` abstracts one tainted literal;
//! - `leq` is a pre-order with the empty part as bottom and `join` as a
//!   least upper bound on it;
//! - `binop`/`unop`/`compare` over-approximate the concrete operators:
//!   whenever the concrete operator is defined, the abstraction of its
//!   result (with joined operand taints) is below the abstract result,
//!   and the concrete comparison outcome is among the reported branches;
//!   all three must be monotone in their arguments;
//! - `widen` bounds both arguments and stabilizes every ascending chain
//!   within a documented number of strict steps (`cap + 2` here);
//! - `refine_cmp` may strengthen a firing comparison's operands but must
//!   keep every concrete operand pair consistent with the branch.

use crate::syntax::*;
use crate::values::{Annot, Block, Heap, Statics, Taint, Value};
use crate::{hier, interp};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

fn taint_tag(t: Taint) -> &'static str {
    match t {
        Taint::Public => "pub",
        Taint::Secret => "sec",
    }
}

/// The primitive part of an abstract value: a finite literal-to-taint
/// map, or a tainted top once the domain cap is exceeded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimAbs {
    Consts(BTreeMap<PrimLit, Taint>),
    Top(Taint),
}

impl PrimAbs {
    pub fn empty() -> PrimAbs {
        PrimAbs::Consts(BTreeMap::new())
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PrimAbs::Consts(m) if m.is_empty())
    }

    /// Join of every taint in the part; `None` when empty.
    pub fn taint(&self) -> Option<Taint> {
        match self {
            PrimAbs::Top(h) => Some(*h),
            PrimAbs::Consts(m) => m.values().copied().reduce(Taint::join),
        }
    }

    pub fn leq(&self, other: &PrimAbs) -> bool {
        match (self, other) {
            (PrimAbs::Consts(a), PrimAbs::Consts(b)) => {
                a.iter().all(|(l, h)| b.get(l).is_some_and(|h2| h <= h2))
            }
            (PrimAbs::Consts(a), PrimAbs::Top(h2)) => a.values().all(|h| h <= h2),
            (PrimAbs::Top(h), PrimAbs::Top(h2)) => h <= h2,
            (PrimAbs::Top(_), PrimAbs::Consts(_)) => false,
        }
    }
}

/// An abstract value: abstract primitives plus location annotations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbsVal {
    pub prims: PrimAbs,
    pub annots: BTreeSet<Annot>,
}

impl AbsVal {
    pub fn bottom() -> AbsVal {
        AbsVal { prims: PrimAbs::empty(), annots: BTreeSet::new() }
    }

    pub fn is_bottom(&self) -> bool {
        self.prims.is_empty() && self.annots.is_empty()
    }

    pub fn annot(a: Annot) -> AbsVal {
        AbsVal { prims: PrimAbs::empty(), annots: BTreeSet::from([a]) }
    }

    /// Pointwise pre-order: primitive part dominated and annotations
    /// included.
    pub fn leq(&self, other: &AbsVal) -> bool {
        self.prims.leq(&other.prims) && self.annots.is_subset(&other.annots)
    }
}

impl fmt::Display for AbsVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bottom() {
            return f.write_str("bot");
        }
        let mut parts: Vec<String> = Vec::new();
        match &self.prims {
            PrimAbs::Top(h) => parts.push(format!("T@{}", taint_tag(*h))),
            PrimAbs::Consts(m) => {
                parts.extend(m.iter().map(|(l, h)| format!("{l}@{}", taint_tag(*h))));
            }
        }
        parts.extend(self.annots.iter().map(|a| a.to_string()));
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Which primitive domain backs the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Only taint is tracked: every literal abstracts to a tainted top.
    TaintOnly,
    /// Exact literal sets up to the cap, then collapse to a tainted top.
    ConstSet,
}

/// A primitive-domain plugin: literal abstraction, ordering, join,
/// abstract operators, tops and widening over `PrimAbs` carriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain {
    pub kind: DomainKind,
    pub cap: usize,
}

pub const DEFAULT_CONST_CAP: usize = 32;

impl Domain {
    pub fn taint_only() -> Domain {
        Domain { kind: DomainKind::TaintOnly, cap: 0 }
    }

    pub fn const_set(cap: usize) -> Domain {
        Domain { kind: DomainKind::ConstSet, cap }
    }

    pub fn name(&self) -> String {
        match self.kind {
            DomainKind::TaintOnly => "taint".into(),
            DomainKind::ConstSet => format!("const:{}", self.cap),
        }
    }

    fn normalize(&self, p: PrimAbs) -> PrimAbs {
        match p {
            PrimAbs::Top(h) => PrimAbs::Top(h),
            PrimAbs::Consts(m) => {
                let over = match self.kind {
                    DomainKind::TaintOnly => !m.is_empty(),
                    DomainKind::ConstSet => m.len() > self.cap,
                };
                if over {
                    PrimAbs::Top(m.values().copied().fold(Taint::Public, Taint::join))
                } else {
                    PrimAbs::Consts(m)
                }
            }
        }
    }

    /// Abstraction of one tainted literal.
    pub fn beta_prim(&self, lit: PrimLit, taint: Taint) -> AbsVal {
        let prims = self.normalize(PrimAbs::Consts(BTreeMap::from([(lit, taint)])));
        AbsVal { prims, annots: BTreeSet::new() }
    }

    fn join_prims(&self, a: &PrimAbs, b: &PrimAbs) -> PrimAbs {
        let joined = match (a, b) {
            (PrimAbs::Consts(m1), PrimAbs::Consts(m2)) => {
                let mut m = m1.clone();
                for (l, h) in m2 {
                    m.entry(*l).and_modify(|h0| *h0 = h0.join(*h)).or_insert(*h);
                }
                PrimAbs::Consts(m)
            }
            (PrimAbs::Top(h), other) | (other, PrimAbs::Top(h)) => {
                PrimAbs::Top(other.taint().map_or(*h, |h2| h.join(h2)))
            }
        };
        self.normalize(joined)
    }

    pub fn join(&self, a: &AbsVal, b: &AbsVal) -> AbsVal {
        AbsVal {
            prims: self.join_prims(&a.prims, &b.prims),
            annots: a.annots.union(&b.annots).cloned().collect(),
        }
    }

    pub fn join_all(&self, vals: impl IntoIterator<Item = AbsVal>) -> AbsVal {
        vals.into_iter().fold(AbsVal::bottom(), |acc, v| self.join(&acc, &v))
    }

    /// Widening: a join whose primitive part levels all taints to their
    /// join whenever it grows. Ascending chains of width-capped constant
    /// sets then stabilize within cap + 2 strict steps.
    pub fn widen(&self, old: &AbsVal, new: &AbsVal) -> AbsVal {
        let j = self.join(old, new);
        if j.leq(old) {
            return old.clone();
        }
        let prims = match j.prims {
            PrimAbs::Top(h) => PrimAbs::Top(h),
            PrimAbs::Consts(m) => {
                let h = m.values().copied().fold(Taint::Public, Taint::join);
                PrimAbs::Consts(m.keys().map(|l| (*l, h)).collect())
            }
        };
        AbsVal { prims, annots: j.annots }
    }

    /// Abstract default of a typed field.
    pub fn default_abs(&self, ty: &Ty) -> AbsVal {
        let Value::Prim(lit, taint) = crate::values::default_value(ty) else { unreachable!() };
        self.beta_prim(lit, taint)
    }

    /// Abstract default for untyped register slots.
    pub fn zero_reg(&self) -> AbsVal {
        self.beta_prim(PrimLit::Int(0), Taint::Public)
    }

    pub fn bool_abs(&self, b: bool) -> AbsVal {
        self.beta_prim(PrimLit::Bool(b), Taint::Public)
    }

    /// Top of the boolean abstraction, used when a flag can no longer be
    /// tracked.
    pub fn top_bool(&self) -> AbsVal {
        AbsVal { prims: PrimAbs::Top(Taint::Public), annots: BTreeSet::new() }
    }

    /// Top element per type: for primitives the tainted-top primitive;
    /// for reference types every annotation whose block type fits, plus
    /// null.
    pub fn top_for(&self, ty: &Ty, p: &Program, universe: &BTreeMap<Annot, Ty>) -> AbsVal {
        if ty.is_primitive() {
            return AbsVal { prims: PrimAbs::Top(Taint::Public), annots: BTreeSet::new() };
        }
        let annots = universe
            .iter()
            .filter(|(_, bt)| hier::subtype(bt, ty, p))
            .map(|(a, _)| a.clone())
            .collect();
        let null = self.beta_prim(PrimLit::Null, Taint::Public);
        AbsVal { prims: null.prims, annots }
    }

    /// Abstract binary operator: image of the operand pairs, with top
    /// absorbing unknown operands and division by a possible zero.
    /// Annotations do not flow into the result; the concrete operation
    /// faults on locations.
    pub fn binop(&self, op: BinOp, a: &AbsVal, b: &AbsVal) -> AbsVal {
        let prims = self.binop_prims(op, &a.prims, &b.prims);
        AbsVal { prims: self.normalize(prims), annots: BTreeSet::new() }
    }

    fn binop_prims(&self, op: BinOp, a: &PrimAbs, b: &PrimAbs) -> PrimAbs {
        if a.is_empty() || b.is_empty() {
            return PrimAbs::empty();
        }
        match (a, b) {
            (PrimAbs::Consts(m1), PrimAbs::Consts(m2)) => {
                let mut out: BTreeMap<PrimLit, Taint> = BTreeMap::new();
                let mut top: Option<Taint> = None;
                for (l1, h1) in m1 {
                    for (l2, h2) in m2 {
                        let h = h1.join(*h2);
                        match op.apply(*l1, *l2) {
                            Some(r) => {
                                out.entry(r).and_modify(|h0| *h0 = h0.join(h)).or_insert(h);
                            }
                            None => {
                                let div_zero = matches!(op, BinOp::Div | BinOp::Rem)
                                    && matches!(l2, PrimLit::Int(0))
                                    && matches!(l1, PrimLit::Int(_));
                                if div_zero {
                                    top = Some(top.map_or(h, |t| t.join(h)));
                                }
                            }
                        }
                    }
                }
                match top {
                    Some(h) => {
                        PrimAbs::Top(out.values().copied().fold(h, Taint::join))
                    }
                    None => PrimAbs::Consts(out),
                }
            }
            _ => {
                let h = a.taint().unwrap_or(Taint::Public).join(b.taint().unwrap_or(Taint::Public));
                PrimAbs::Top(h)
            }
        }
    }

    /// Abstract unary operator; same conventions as `binop`.
    pub fn unop(&self, op: UnOp, a: &AbsVal) -> AbsVal {
        let prims = match &a.prims {
            PrimAbs::Consts(m) => {
                let mut out: BTreeMap<PrimLit, Taint> = BTreeMap::new();
                for (l, h) in m {
                    if let Some(r) = op.apply(*l) {
                        out.entry(r).and_modify(|h0| *h0 = h0.join(*h)).or_insert(*h);
                    }
                }
                PrimAbs::Consts(out)
            }
            PrimAbs::Top(h) => PrimAbs::Top(*h),
        };
        AbsVal { prims: self.normalize(prims), annots: BTreeSet::new() }
    }

    /// Branch refinement: when a comparison with outcome `expect` fires
    /// over two pure constant sets, each side keeps only the literals
    /// with a consistent partner on the other side. Top elements and
    /// annotations disable the refinement.
    pub fn refine_cmp(&self, op: CmpOp, expect: bool, a: &AbsVal, b: &AbsVal) -> Option<(AbsVal, AbsVal)> {
        if !a.annots.is_empty() || !b.annots.is_empty() {
            return None;
        }
        let (PrimAbs::Consts(ma), PrimAbs::Consts(mb)) = (&a.prims, &b.prims) else {
            return None;
        };
        let keep_a: BTreeMap<PrimLit, Taint> = ma
            .iter()
            .filter(|(l, _)| mb.keys().any(|l2| op.apply(**l, *l2) == Some(expect)))
            .map(|(l, h)| (*l, *h))
            .collect();
        let keep_b: BTreeMap<PrimLit, Taint> = mb
            .iter()
            .filter(|(l2, _)| ma.keys().any(|l| op.apply(*l, **l2) == Some(expect)))
            .map(|(l, h)| (*l, *h))
            .collect();
        Some((
            AbsVal { prims: PrimAbs::Consts(keep_a), annots: BTreeSet::new() },
            AbsVal { prims: PrimAbs::Consts(keep_b), annots: BTreeSet::new() },
        ))
    }

    /// Abstract comparison: which branches may fire. Location annotations
    /// make both branches possible; bottoms fire neither.
    pub fn compare(&self, op: CmpOp, a: &AbsVal, b: &AbsVal) -> (bool, bool) {
        if !a.annots.is_empty() || !b.annots.is_empty() {
            return (true, true);
        }
        if a.prims.is_empty() || b.prims.is_empty() {
            return (false, false);
        }
        match (&a.prims, &b.prims) {
            (PrimAbs::Consts(m1), PrimAbs::Consts(m2)) => {
                let mut may_true = false;
                let mut may_false = false;
                for l1 in m1.keys() {
                    for l2 in m2.keys() {
                        match op.apply(*l1, *l2) {
                            Some(true) => may_true = true,
                            Some(false) => may_false = true,
                            None => {}
                        }
                    }
                }
                (may_true, may_false)
            }
            _ => (true, true),
        }
    }
}

/// Abstract memory blocks: field-sensitive objects, summarized arrays
/// and intents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbsBlock {
    Obj { class: String, fields: BTreeMap<String, AbsVal> },
    Arr { elem: Ty, val: AbsVal },
    Intent { target: String, val: AbsVal },
}

impl AbsBlock {
    /// The static type of the abstracted block.
    pub fn ty(&self) -> Ty {
        match self {
            AbsBlock::Obj { class, .. } => Ty::Class(class.clone()),
            AbsBlock::Arr { elem, .. } => Ty::Array(Box::new(elem.clone())),
            AbsBlock::Intent { .. } => Ty::Class(INTENT_CLASS.into()),
        }
    }

    pub fn leq(&self, other: &AbsBlock) -> bool {
        match (self, other) {
            (AbsBlock::Obj { class: c1, fields: f1 }, AbsBlock::Obj { class: c2, fields: f2 }) => {
                c1 == c2
                    && f1.len() == f2.len()
                    && f1.iter().all(|(f, v)| f2.get(f).is_some_and(|v2| v.leq(v2)))
            }
            (AbsBlock::Arr { elem: e1, val: v1 }, AbsBlock::Arr { elem: e2, val: v2 }) => {
                e1 == e2 && v1.leq(v2)
            }
            (AbsBlock::Intent { target: t1, val: v1 }, AbsBlock::Intent { target: t2, val: v2 }) => {
                t1 == t2 && v1.leq(v2)
            }
            _ => false,
        }
    }

    /// Join of two blocks of the same shape.
    pub fn join(&self, other: &AbsBlock, d: &Domain) -> Option<AbsBlock> {
        match (self, other) {
            (AbsBlock::Obj { class: c1, fields: f1 }, AbsBlock::Obj { class: c2, fields: f2 })
                if c1 == c2 && f1.len() == f2.len() =>
            {
                let mut fields = BTreeMap::new();
                for (f, v1) in f1 {
                    fields.insert(f.clone(), d.join(v1, f2.get(f)?));
                }
                Some(AbsBlock::Obj { class: c1.clone(), fields })
            }
            (AbsBlock::Arr { elem: e1, val: v1 }, AbsBlock::Arr { elem: e2, val: v2 }) if e1 == e2 => {
                Some(AbsBlock::Arr { elem: e1.clone(), val: d.join(v1, v2) })
            }
            (AbsBlock::Intent { target: t1, val: v1 }, AbsBlock::Intent { target: t2, val: v2 })
                if t1 == t2 =>
            {
                Some(AbsBlock::Intent { target: t1.clone(), val: d.join(v1, v2) })
            }
            _ => None,
        }
    }

    /// Every abstract value stored in the block.
    pub fn values(&self) -> Vec<&AbsVal> {
        match self {
            AbsBlock::Obj { fields, .. } => fields.values().collect(),
            AbsBlock::Arr { val, .. } | AbsBlock::Intent { val, .. } => vec![val],
        }
    }
}

impl fmt::Display for AbsBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbsBlock::Obj { class, fields } => {
                write!(f, "{{|{class};")?;
                for (i, (name, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, " {name}: {v}")?;
                }
                f.write_str(" |}}")
            }
            AbsBlock::Arr { elem, val } => write!(f, "arr[{elem}]({val})"),
            AbsBlock::Intent { target, val } => write!(f, "{{|@{target}; {val} |}}"),
        }
    }
}

/// Representation of a concrete value.
pub fn abs_value(d: &Domain, v: &Value) -> AbsVal {
    match v {
        Value::Prim(lit, taint) => d.beta_prim(*lit, *taint),
        Value::Loc(loc) => AbsVal::annot(loc.annot.clone()),
    }
}

/// Representation of a concrete block: objects keep their field map,
/// arrays and intents join all member values.
pub fn abs_block(d: &Domain, b: &Block) -> AbsBlock {
    match b {
        Block::Obj { class, fields } => AbsBlock::Obj {
            class: class.clone(),
            fields: fields.iter().map(|(f, v)| (f.clone(), abs_value(d, v))).collect(),
        },
        Block::Arr { elem, cells } => AbsBlock::Arr {
            elem: elem.clone(),
            val: d.join_all(cells.iter().map(|v| abs_value(d, v))),
        },
        Block::Intent { target, extras } => AbsBlock::Intent {
            target: target.clone(),
            val: d.join_all(extras.values().map(|v| abs_value(d, v))),
        },
    }
}

/// Ground facts produced by representing concrete machine states; the
/// same shapes are stored by the saturation engine.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroundFact {
    R { pp: Pp, ctx: Vec<AbsVal>, regs: Vec<AbsVal> },
    H { annot: Annot, block: AbsBlock },
    S { class: String, field: String, val: AbsVal },
    I { owner: String, target: String, val: AbsVal },
}

impl fmt::Display for GroundFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundFact::R { pp, ctx, regs } => {
                let ctx: Vec<String> = ctx.iter().map(|v| v.to_string()).collect();
                let regs: Vec<String> = regs.iter().map(|v| v.to_string()).collect();
                write!(f, "R_{{{pp}}}({}; {})", ctx.join(","), regs.join(","))
            }
            GroundFact::H { annot, block } => write!(f, "H({annot}, {block})"),
            GroundFact::S { class, field, val } => write!(f, "S_{{{class}.{field}}}({val})"),
            GroundFact::I { owner, target, val } => write!(f, "I({owner}, {{|@{target}; {val} |}})"),
        }
    }
}

/// Pointwise sequence order; sequences of different length are unrelated.
pub fn leq_seq(a: &[AbsVal], b: &[AbsVal]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.leq(y))
}

/// Fact pre-order: compares only facts of the same predicate at the same
/// key, pointwise on the payload.
pub fn leq_fact(a: &GroundFact, b: &GroundFact) -> bool {
    match (a, b) {
        (GroundFact::R { pp: p1, ctx: c1, regs: r1 }, GroundFact::R { pp: p2, ctx: c2, regs: r2 }) => {
            p1 == p2 && leq_seq(c1, c2) && leq_seq(r1, r2)
        }
        (GroundFact::H { annot: a1, block: b1 }, GroundFact::H { annot: a2, block: b2 }) => {
            a1 == a2 && b1.leq(b2)
        }
        (GroundFact::S { class: c1, field: f1, val: v1 }, GroundFact::S { class: c2, field: f2, val: v2 }) => {
            c1 == c2 && f1 == f2 && v1.leq(v2)
        }
        (GroundFact::I { owner: o1, target: t1, val: v1 }, GroundFact::I { owner: o2, target: t2, val: v2 }) => {
            o1 == o2 && t1 == t2 && v1.leq(v2)
        }
        _ => false,
    }
}

/// The coverage relation on fact sets: every fact of `delta` is dominated
/// by some fact of `delta2`.
pub fn covers(delta: &[GroundFact], delta2: &[GroundFact]) -> bool {
    delta.iter().all(|f| delta2.iter().any(|g| leq_fact(f, g)))
}

/// Representation of one activation: an entry-register fact at its
/// program point, keyed by the recorded call arguments.
pub fn abs_frame(d: &Domain, frame: &interp::Frame) -> GroundFact {
    let ctx: Vec<AbsVal> = frame.call_args.iter().map(|v| abs_value(d, v)).collect();
    let mut regs: Vec<AbsVal> = frame.regs.iter().map(|v| abs_value(d, v)).collect();
    regs.push(abs_value(d, &frame.ret));
    GroundFact::R { pp: frame.pp.clone(), ctx, regs }
}

pub fn abs_heap(d: &Domain, heap: &Heap) -> Vec<GroundFact> {
    heap.iter()
        .map(|(loc, b)| GroundFact::H { annot: loc.annot.clone(), block: abs_block(d, b) })
        .collect()
}

pub fn abs_statics(d: &Domain, statics: &Statics) -> Vec<GroundFact> {
    statics
        .iter()
        .map(|((c, f), v)| GroundFact::S { class: c.clone(), field: f.clone(), val: abs_value(d, v) })
        .collect()
}

fn abs_pending(d: &Domain, owner: &Annot, pending: &[Block]) -> Vec<GroundFact> {
    let Annot::Class(owner) = owner else { return Vec::new() };
    pending
        .iter()
        .filter_map(|b| match b {
            Block::Intent { target, .. } => {
                let AbsBlock::Intent { val, .. } = abs_block(d, b) else { unreachable!() };
                Some(GroundFact::I { owner: owner.clone(), target: target.clone(), val })
            }
            _ => None,
        })
        .collect()
}

/// Representation of a local configuration: frame facts, pending-intent
/// facts, heap and static-heap facts.
pub fn abs_local_config(d: &Domain, lc: &interp::LocalConfig) -> Vec<GroundFact> {
    let mut out: Vec<GroundFact> = lc.stack.iter().map(|f| abs_frame(d, f)).collect();
    out.extend(abs_pending(d, &lc.owner.annot, &lc.pending));
    out.extend(abs_heap(d, &lc.heap));
    out.extend(abs_statics(d, &lc.statics));
    out
}

/// Representation of a whole configuration.
pub fn abs_config(d: &Domain, cfg: &crate::activity::Config) -> Vec<GroundFact> {
    let mut out = Vec::new();
    for frame in &cfg.frames {
        out.extend(frame.stack.iter().map(|f| abs_frame(d, f)));
        out.extend(abs_pending(d, &frame.loc.annot, &frame.pending));
    }
    out.extend(abs_heap(d, &cfg.heap));
    out.extend(abs_statics(d, &cfg.statics));
    out
}

/// Abstract taint extraction: join over the primitive taints and over
/// everything reachable through heap summaries. Cycle-safe.
pub fn taint_of_abs(v: &AbsVal, h: &impl Fn(&Annot) -> Option<AbsBlock>) -> Taint {
    fn go(v: &AbsVal, h: &impl Fn(&Annot) -> Option<AbsBlock>, seen: &mut BTreeSet<Annot>) -> Taint {
        let mut t = v.prims.taint().unwrap_or(Taint::Public);
        for a in &v.annots {
            if t == Taint::Secret {
                return t;
            }
            if !seen.insert(a.clone()) {
                continue;
            }
            if let Some(block) = h(a) {
                for inner in block.values() {
                    t = t.join(go(inner, h, seen));
                }
            }
        }
        t
    }
    go(v, h, &mut BTreeSet::new())
}

/// Annotation universe of a program: every allocation site with its block
/// type, every activity class, and the started-intent name of every
/// activity class.
pub fn annot_universe(p: &Program) -> BTreeMap<Annot, Ty> {
    let mut out = BTreeMap::new();
    for class in &p.classes {
        for m in &class.methods {
            for (pc, st) in m.body.iter().enumerate() {
                let pp = Pp::new(class.name.clone(), m.name.clone(), pc);
                match st {
                    Stmt::New { class: c, .. } => {
                        out.insert(Annot::Pp(pp), Ty::Class(c.clone()));
                    }
                    Stmt::NewArray { elem, .. } => {
                        out.insert(Annot::Pp(pp), Ty::array(elem.clone()));
                    }
                    Stmt::NewIntent { .. } => {
                        out.insert(Annot::Pp(pp), Ty::class(INTENT_CLASS));
                    }
                    _ => {}
                }
            }
        }
    }
    for a in hier::activity_classes(p) {
        out.insert(Annot::Class(a.name.clone()), Ty::Class(a.name.clone()));
        out.insert(Annot::In(a.name.clone()), Ty::class(INTENT_CLASS));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::Location;

    fn cs() -> Domain {
        Domain::const_set(DEFAULT_CONST_CAP)
    }

    fn consts(d: &Domain, lits: &[(i64, Taint)]) -> AbsVal {
        d.join_all(lits.iter().map(|(l, h)| d.beta_prim(PrimLit::Int(*l), *h)))
    }

    #[test]
    fn beta_on_literals_and_locations() {
        let d = cs();
        let v = abs_value(&d, &Value::int(5));
        assert_eq!(v, d.beta_prim(PrimLit::Int(5), Taint::Public));
        let pp = Pp::new("c", "m", 3);
        let loc = Location { annot: Annot::Pp(pp.clone()), idx: 0 };
        assert_eq!(abs_value(&d, &Value::Loc(loc)), AbsVal::annot(Annot::Pp(pp)));
        // Taint-only collapses literals to tainted top.
        let t = Domain::taint_only();
        assert_eq!(t.beta_prim(PrimLit::Int(5), Taint::Secret).prims, PrimAbs::Top(Taint::Secret));
    }

    #[test]
    fn intent_abstraction_joins_members() {
        let d = cs();
        let mut extras = BTreeMap::new();
        extras.insert(PrimLit::Int(0), Value::int(1));
        extras.insert(PrimLit::Int(1), Value::Prim(PrimLit::Int(2), Taint::Secret));
        let b = Block::Intent { target: "B".into(), extras };
        let AbsBlock::Intent { val, .. } = abs_block(&d, &b) else { panic!() };
        assert_eq!(val, consts(&d, &[(1, Taint::Public), (2, Taint::Secret)]));
    }

    #[test]
    fn leq_is_a_preorder_with_bottom() {
        let d = cs();
        let samples = [
            AbsVal::bottom(),
            consts(&d, &[(1, Taint::Public)]),
            consts(&d, &[(1, Taint::Secret), (2, Taint::Public)]),
            AbsVal { prims: PrimAbs::Top(Taint::Public), annots: BTreeSet::new() },
            AbsVal { prims: PrimAbs::Top(Taint::Secret), annots: BTreeSet::from([Annot::Class("A".into())]) },
            AbsVal::annot(Annot::In("B".into())),
        ];
        for a in &samples {
            assert!(AbsVal::bottom().leq(a));
            assert!(a.leq(a));
            for b in &samples {
                let j = d.join(a, b);
                assert!(a.leq(&j) && b.leq(&j), "join is an upper bound");
                for c in &samples {
                    if a.leq(b) && b.leq(c) {
                        assert!(a.leq(c), "transitivity");
                    }
                    // Join is the least upper bound on these points.
                    if a.leq(c) && b.leq(c) {
                        assert!(j.leq(c));
                    }
                }
            }
        }
    }

    #[test]
    fn fact_comparison_requires_matching_keys() {
        let d = cs();
        let r1 = GroundFact::R { pp: Pp::new("c", "m", 1), ctx: vec![], regs: vec![consts(&d, &[(1, Taint::Public)])] };
        let r2 = GroundFact::R {
            pp: Pp::new("c", "m", 1),
            ctx: vec![],
            regs: vec![consts(&d, &[(1, Taint::Public), (2, Taint::Public)])],
        };
        let r3 = GroundFact::R { pp: Pp::new("c", "m", 2), ctx: vec![], regs: vec![consts(&d, &[(1, Taint::Public)])] };
        assert!(leq_fact(&r1, &r2));
        assert!(!leq_fact(&r2, &r1));
        assert!(!leq_fact(&r1, &r3), "facts at different program points are unrelated");
        assert!(covers(&[], &[r1.clone()]));
        assert!(covers(&[r1.clone()], &[r1.clone()]));
        assert!(!covers(&[r2], &[r1]));
    }

    #[test]
    fn abstract_ops_on_const_sets() {
        let d = cs();
        let two = consts(&d, &[(2, Taint::Public)]);
        let three = consts(&d, &[(3, Taint::Secret)]);
        let five = d.binop(BinOp::Add, &two, &three);
        assert_eq!(five, consts(&d, &[(5, Taint::Secret)]));
        // Division by a set containing zero goes to top.
        let zero_one = consts(&d, &[(0, Taint::Public), (1, Taint::Public)]);
        let div = d.binop(BinOp::Div, &two, &zero_one);
        assert_eq!(div.prims, PrimAbs::Top(Taint::Public));
        // Top propagates taint joins.
        let t = Domain::taint_only();
        let top_sec = t.beta_prim(PrimLit::Int(1), Taint::Secret);
        let top_pub = t.beta_prim(PrimLit::Int(2), Taint::Public);
        assert_eq!(t.binop(BinOp::Add, &top_sec, &top_pub).prims, PrimAbs::Top(Taint::Secret));
        // Bottom annihilates.
        assert!(d.binop(BinOp::Add, &two, &AbsVal::bottom()).is_bottom());
    }

    #[test]
    fn abstract_compare_is_exact_on_singletons() {
        let d = cs();
        let zero = consts(&d, &[(0, Taint::Public)]);
        assert_eq!(d.compare(CmpOp::Eq, &zero, &zero), (true, false));
        let one = consts(&d, &[(1, Taint::Public)]);
        assert_eq!(d.compare(CmpOp::Eq, &zero, &one), (false, true));
        let both = consts(&d, &[(0, Taint::Public), (1, Taint::Public)]);
        assert_eq!(d.compare(CmpOp::Eq, &zero, &both), (true, true));
        // Annotations force both branches.
        let l = AbsVal::annot(Annot::Class("A".into()));
        assert_eq!(d.compare(CmpOp::Eq, &zero, &l), (true, true));
        // Bottom fires nothing.
        assert_eq!(d.compare(CmpOp::Eq, &zero, &AbsVal::bottom()), (false, false));
    }

    #[test]
    fn widening_stabilizes_within_cap_plus_two() {
        let k = 6;
        let d = Domain::const_set(k);
        // Adversarial ascending chain: grow one literal at a time, then
        // raise a taint, then overflow the cap.
        let mut chain: Vec<AbsVal> = Vec::new();
        let mut acc = AbsVal::bottom();
        for i in 0..k {
            acc = d.join(&acc, &d.beta_prim(PrimLit::Int(i as i64), Taint::Public));
            chain.push(acc.clone());
        }
        acc = d.join(&acc, &d.beta_prim(PrimLit::Int(0), Taint::Secret));
        chain.push(acc.clone());
        acc = d.join(&acc, &d.beta_prim(PrimLit::Int(999), Taint::Public));
        chain.push(acc.clone());
        chain.push(acc);

        let mut w = AbsVal::bottom();
        let mut strict_steps = 0;
        for v in &chain {
            let next = d.widen(&w, v);
            assert!(w.leq(&next) && v.leq(&next), "widening bounds both arguments");
            if !next.leq(&w) {
                strict_steps += 1;
            }
            w = next;
        }
        assert!(strict_steps <= k + 2, "chain took {strict_steps} strict steps");
        // Re-widening with any chain element is now a no-op.
        for v in &chain {
            assert_eq!(d.widen(&w, v), w);
        }
    }

    mod laws {
        use super::*;
        use proptest::prelude::*;

        fn arb_absval() -> impl Strategy<Value = AbsVal> {
            let lit = prop_oneof![
                (-4i64..=4).prop_map(PrimLit::Int),
                any::<bool>().prop_map(PrimLit::Bool),
                Just(PrimLit::Null),
            ];
            let taint = prop_oneof![Just(Taint::Public), Just(Taint::Secret)];
            let prims = prop_oneof![
                3 => proptest::collection::btree_map(lit, taint.clone(), 0..3).prop_map(PrimAbs::Consts),
                1 => taint.prop_map(PrimAbs::Top),
            ];
            let annot = prop_oneof![
                Just(Annot::Class("A".into())),
                Just(Annot::In("B".into())),
                Just(Annot::Pp(Pp::new("c", "m", 1))),
            ];
            let annots = proptest::collection::btree_set(annot, 0..3);
            (prims, annots).prop_map(|(prims, annots)| AbsVal { prims, annots })
        }

        proptest! {
            #[test]
            fn join_is_the_least_upper_bound(a in arb_absval(), b in arb_absval(), c in arb_absval()) {
                let d = Domain::const_set(16);
                let j = d.join(&a, &b);
                prop_assert!(a.leq(&j) && b.leq(&j));
                if a.leq(&c) && b.leq(&c) {
                    prop_assert!(j.leq(&c));
                }
                prop_assert!(AbsVal::bottom().leq(&a));
            }

            #[test]
            fn leq_is_transitive(a in arb_absval(), b in arb_absval(), c in arb_absval()) {
                if a.leq(&b) && b.leq(&c) {
                    prop_assert!(a.leq(&c));
                }
            }

            #[test]
            fn widen_bounds_both_arguments(a in arb_absval(), b in arb_absval()) {
                let d = Domain::const_set(16);
                let w = d.widen(&a, &b);
                prop_assert!(a.leq(&w) && b.leq(&w));
            }

            #[test]
            fn operators_are_monotone_in_their_arguments(
                a in arb_absval(), b in arb_absval(), extra in arb_absval()
            ) {
                let d = Domain::const_set(16);
                let bigger = d.join(&a, &extra);
                for op in BinOp::ALL {
                    prop_assert!(d.binop(op, &a, &b).leq(&d.binop(op, &bigger, &b)));
                }
                for op in CmpOp::ALL {
                    let (t1, f1) = d.compare(op, &a, &b);
                    let (t2, f2) = d.compare(op, &bigger, &b);
                    prop_assert!(!t1 || t2);
                    prop_assert!(!f1 || f2);
                }
            }
        }
    }

    #[test]
    fn abstract_taint_reads_heap_summaries() {
        let d = cs();
        let arr = AbsBlock::Arr { elem: Ty::Int, val: consts(&d, &[(3, Taint::Secret)]) };
        let annot = Annot::Pp(Pp::new("c", "m", 0));
        let store = move |a: &Annot| (a == &annot).then(|| arr.clone());
        let v = AbsVal::annot(Annot::Pp(Pp::new("c", "m", 0)));
        assert_eq!(taint_of_abs(&v, &store), Taint::Secret);
        assert_eq!(taint_of_abs(&AbsVal::bottom(), &store), Taint::Public);
        assert_eq!(
            taint_of_abs(&consts(&d, &[(1, Taint::Secret)]), &store),
            Taint::Secret
        );
    }
}
