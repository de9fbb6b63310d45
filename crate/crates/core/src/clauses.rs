//! Translation of a program into its abstract program: a finite set of
//! Horn clauses over analysis facts.
//!
//! Facts track register files per program point and calling context (R),
//! heap summaries per annotation (H), static fields (S), move right-hand
//! sides (RHS), return values per context (Res), sent intents (I), and
//! ground subtyping axioms. Register facts are flow- and context-
//! sensitive; heap, static-field and intent facts are flow-insensitive,
//! which is what makes the callback-driven lifecycle sound to abstract.
//!
//! Clauses are kept symbolic so they can be printed, audited against the
//! statement rows, evaluated by the built-in engine, and emitted as
//! SMT-LIB rules.

use crate::absdom::{annot_universe, AbsVal, Domain};
use crate::hier;
use crate::syntax::*;
use crate::values::Annot;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type VarId = u32;

/// A term evaluating to an abstract value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Const(AbsVal),
    Var(VarId),
    /// Element of a register/context vector variable.
    Proj(VarId, usize),
    /// Singleton abstract value of a bound annotation variable.
    AnnSet(VarId),
    /// `in(c)` of a bound class-annotation variable, as a singleton.
    InSet(VarId),
    Binop(BinOp, Box<Term>, Box<Term>),
    Unop(UnOp, Box<Term>),
}

/// A term evaluating to a vector of abstract values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VecTerm {
    Var(VarId),
    Build(Vec<Term>),
    Update(VarId, usize, Box<Term>),
}

/// A term evaluating to a heap annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnTerm {
    Var(VarId),
    /// `in(c)` of a bound class annotation.
    In(VarId),
    Const(Annot),
}

/// How an object pattern constrains the block's class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassPat {
    /// Any class; binds it.
    Bind(VarId),
    /// The block's class must equal the class naming the heap key,
    /// which is the shape of activity instances tracked under their
    /// class annotation.
    EqualsKey,
}

/// Patterns over stored heap blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockPat {
    Obj { class: ClassPat, binds: Vec<(String, VarId)> },
    Arr { val: VarId },
    Intent { target: VarId, val: VarId },
    /// Any block; used where only its type is consulted.
    Any,
}

/// Side conditions evaluated against the domain and the class hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    Cmp { op: CmpOp, lhs: Term, rhs: Term, expect: bool },
    /// Type of the block stored at the bound annotation related to `ty`.
    BlockTypeLe { ann: VarId, ty: Ty, expect: bool },
    /// Bound class annotation is a subclass of the named class.
    ClassLe { class: VarId, sup: String },
    /// Bound class annotation names an activity class.
    IsActivity { class: VarId },
}

/// Body atoms: facts to match (binding variables) and guards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    R { pp: Pp, ctx: VarId, regs: VarId },
    Rhs { pp: Pp, val: VarId },
    SFld { class: String, field: String, val: VarId },
    /// Matches the return summary for the computed context tuple.
    Res { class: String, method: String, ctx: VecTerm, ret: VarId },
    /// `ann ∈ of`: one annotation drawn from an abstract value.
    Member { of: Term, ann: VarId },
    /// A heap fact at `key` matching the pattern.
    H { key: AnnTerm, pat: BlockPat },
    /// A sent-intent fact; binds owner and target class annotations.
    I { owner: VarId, target: VarId, val: VarId },
    Guard(Guard),
}

/// The fields of a freshly abstracted object: per-type defaults, with
/// selected fields overridden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreshFields {
    pub overrides: Vec<(String, Term)>,
}

/// Clause heads: the derived fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    R { pp: Pp, ctx: VecTerm, regs: VecTerm },
    Rhs { pp: Pp, val: Term },
    SFld { class: String, field: String, val: Term },
    Res { class: String, method: String, ctx: VecTerm, ret: Term },
    /// Strong update of one object field (joined per key in the store).
    HObjField { key: VarId, field: String, val: Term },
    /// A fresh object summary; the class is a constant or the class
    /// naming the key, fields are defaults plus overrides.
    HFreshObj { key: AnnTerm, class: Option<String>, fields: FreshFields },
    HFreshArr { key: Annot, elem: Ty, init: Term },
    HFreshIntent { key: AnnTerm, target: Option<String>, val: Term },
    /// Summary-join update of an array or intent block.
    HArrJoin { key: VarId, old: VarId, add: Term },
    HIntentJoin { key: VarId, old: VarId, add: Term },
    /// A sent-intent fact for a fixed owner activity class.
    I { owner: String, target: VarId, val: Term },
}

/// Which rule family produced a clause; used by dumps and by the
/// mutation tests of the soundness harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RuleTag {
    Stmt,
    Cbk,
    Fin,
    Rep,
    Act,
    ResLife,
    /// Secret result summaries injected for source methods.
    Source,
}

impl fmt::Display for RuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleTag::Stmt => "stmt",
            RuleTag::Cbk => "cbk",
            RuleTag::Fin => "fin",
            RuleTag::Rep => "rep",
            RuleTag::Act => "act",
            RuleTag::ResLife => "res",
            RuleTag::Source => "source",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub tag: RuleTag,
    pub body: Vec<Atom>,
    pub head: Head,
}

/// The abstract program: clauses, ground subtyping axioms, and the
/// annotation universe the top elements were built from.
#[derive(Debug, Clone)]
pub struct AbstractProgram {
    pub domain: Domain,
    pub clauses: Vec<Clause>,
    pub sub_facts: BTreeSet<(Ty, Ty)>,
    pub universe: BTreeMap<Annot, Ty>,
}

// ---------------------------------------------------------------------
// Variable bookkeeping

struct VarGen {
    next: VarId,
}

impl VarGen {
    fn new() -> VarGen {
        VarGen { next: 0 }
    }

    fn fresh(&mut self) -> VarId {
        let v = self.next;
        self.next += 1;
        v
    }
}

/// The register-file width of a method, including the trailing return
/// slot.
pub fn reg_width(m: &MethodDef) -> usize {
    m.reg_count() + 1
}

/// Slot of a register operand within the fact's register vector.
pub fn reg_slot(m: &MethodDef, r: Reg) -> usize {
    match r {
        Reg::Idx(i) => i,
        Reg::Ret => m.reg_count(),
    }
}

/// Type of an abstract memory block, per its three shapes.
pub fn get_type_hat(b: &crate::absdom::AbsBlock) -> Ty {
    b.ty()
}

// ---------------------------------------------------------------------
// Translation

struct Cx<'p> {
    p: &'p Program,
    d: Domain,
    universe: BTreeMap<Annot, Ty>,
}

impl<'p> Cx<'p> {
    fn top_for(&self, ty: &Ty) -> AbsVal {
        self.d.top_for(ty, self.p, &self.universe)
    }

    /// Body prefix `R_pp(ctx; regs)` with fresh vector variables.
    fn r_atom(&self, g: &mut VarGen, pp: &Pp) -> (Atom, VarId, VarId) {
        let ctx = g.fresh();
        let regs = g.fresh();
        (Atom::R { pp: pp.clone(), ctx, regs }, ctx, regs)
    }
}

/// Clauses abstracting the evaluation of a right-hand side at `pp` into
/// an `RHS` fact.
pub fn translate_rhs(p: &Program, d: Domain, method: &MethodDef, rhs: &Rhs, pp: &Pp) -> Vec<Clause> {
    let cx = Cx { p, d, universe: annot_universe(p) };
    rhs_clauses(&cx, method, rhs, pp)
}

fn rhs_clauses(cx: &Cx, m: &MethodDef, rhs: &Rhs, pp: &Pp) -> Vec<Clause> {
    let mut g = VarGen::new();
    match rhs {
        Rhs::Prim(lit) => vec![Clause {
            tag: RuleTag::Stmt,
            body: vec![],
            head: Head::Rhs {
                pp: pp.clone(),
                val: Term::Const(cx.d.beta_prim(*lit, crate::values::Taint::Public)),
            },
        }],
        Rhs::Lhs(Lhs::Reg(r)) => {
            let (ra, _, regs) = cx.r_atom(&mut g, pp);
            vec![Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::Rhs { pp: pp.clone(), val: Term::Proj(regs, reg_slot(m, *r)) },
            }]
        }
        Rhs::Lhs(Lhs::Static { class, field }) => {
            let v = g.fresh();
            vec![Clause {
                tag: RuleTag::Stmt,
                body: vec![Atom::SFld { class: class.clone(), field: field.clone(), val: v }],
                head: Head::Rhs { pp: pp.clone(), val: Term::Var(v) },
            }]
        }
        Rhs::Lhs(Lhs::Field { obj, field }) => {
            let (ra, _, regs) = cx.r_atom(&mut g, pp);
            let lam = g.fresh();
            let cls = g.fresh();
            let fv = g.fresh();
            vec![Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Member { of: Term::Proj(regs, reg_slot(m, *obj)), ann: lam },
                    Atom::H {
                        key: AnnTerm::Var(lam),
                        pat: BlockPat::Obj { class: ClassPat::Bind(cls), binds: vec![(field.clone(), fv)] },
                    },
                ],
                head: Head::Rhs { pp: pp.clone(), val: Term::Var(fv) },
            }]
        }
        Rhs::Lhs(Lhs::ArrayCell { arr, .. }) => {
            // Arrays are summarized: the index plays no role.
            let (ra, _, regs) = cx.r_atom(&mut g, pp);
            let lam = g.fresh();
            let av = g.fresh();
            vec![Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Member { of: Term::Proj(regs, reg_slot(m, *arr)), ann: lam },
                    Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Arr { val: av } },
                ],
                head: Head::Rhs { pp: pp.clone(), val: Term::Var(av) },
            }]
        }
    }
}

/// The plain fall-through clause `R_pp => R_pp+1`.
fn advance(cx: &Cx, pp: &Pp) -> Clause {
    let mut g = VarGen::new();
    let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
    Clause {
        tag: RuleTag::Stmt,
        body: vec![ra],
        head: Head::R { pp: pp.next(), ctx: VecTerm::Var(ctx), regs: VecTerm::Var(regs) },
    }
}

/// Fall-through clause that also writes `val` into a destination slot.
fn advance_with(cx: &Cx, m: &MethodDef, pp: &Pp, dst: Reg, val: Term) -> Clause {
    let mut g = VarGen::new();
    let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
    Clause {
        tag: RuleTag::Stmt,
        body: vec![ra],
        head: Head::R {
            pp: pp.next(),
            ctx: VecTerm::Var(ctx),
            regs: VecTerm::Update(regs, reg_slot(m, dst), Box::new(val)),
        },
    }
}

/// Clauses over-approximating one statement at `pp`.
pub fn translate_stmt(p: &Program, d: Domain, method: &MethodDef, st: &Stmt, pp: &Pp) -> Vec<Clause> {
    let cx = Cx { p, d, universe: annot_universe(p) };
    stmt_clauses(&cx, method, st, pp)
}

fn stmt_clauses(cx: &Cx, m: &MethodDef, st: &Stmt, pp: &Pp) -> Vec<Clause> {
    let d = cx.d;
    let mut out = Vec::new();
    let mut g = VarGen::new();
    match st {
        Stmt::Goto { target } => {
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::R { pp: pp.at(*target), ctx: VecTerm::Var(ctx), regs: VecTerm::Var(regs) },
            });
        }
        Stmt::If { op, lhs, rhs, target } => {
            for (expect, dest) in [(true, pp.at(*target)), (false, pp.next())] {
                let mut g = VarGen::new();
                let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
                out.push(Clause {
                    tag: RuleTag::Stmt,
                    body: vec![
                        ra,
                        Atom::Guard(Guard::Cmp {
                            op: *op,
                            lhs: Term::Proj(regs, reg_slot(m, *lhs)),
                            rhs: Term::Proj(regs, reg_slot(m, *rhs)),
                            expect,
                        }),
                    ],
                    head: Head::R { pp: dest, ctx: VecTerm::Var(ctx), regs: VecTerm::Var(regs) },
                });
            }
        }
        Stmt::Binop { op, dst, lhs, rhs } => {
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            let val = Term::Binop(
                *op,
                Box::new(Term::Proj(regs, reg_slot(m, *lhs))),
                Box::new(Term::Proj(regs, reg_slot(m, *rhs))),
            );
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::R {
                    pp: pp.next(),
                    ctx: VecTerm::Var(ctx),
                    regs: VecTerm::Update(regs, reg_slot(m, *dst), Box::new(val)),
                },
            });
        }
        Stmt::Unop { op, dst, src } => {
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            let val = Term::Unop(*op, Box::new(Term::Proj(regs, reg_slot(m, *src))));
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::R {
                    pp: pp.next(),
                    ctx: VecTerm::Var(ctx),
                    regs: VecTerm::Update(regs, reg_slot(m, *dst), Box::new(val)),
                },
            });
        }
        Stmt::Move { dst, src } => {
            out.extend(rhs_clauses(cx, m, src, pp));
            match dst {
                Lhs::Reg(r) => {
                    let v = g.fresh();
                    let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
                    out.push(Clause {
                        tag: RuleTag::Stmt,
                        body: vec![Atom::Rhs { pp: pp.clone(), val: v }, ra],
                        head: Head::R {
                            pp: pp.next(),
                            ctx: VecTerm::Var(ctx),
                            regs: VecTerm::Update(regs, reg_slot(m, *r), Box::new(Term::Var(v))),
                        },
                    });
                }
                Lhs::ArrayCell { arr, .. } => {
                    let v = g.fresh();
                    let (ra, _, regs) = cx.r_atom(&mut g, pp);
                    let lam = g.fresh();
                    let old = g.fresh();
                    out.push(Clause {
                        tag: RuleTag::Stmt,
                        body: vec![
                            Atom::Rhs { pp: pp.clone(), val: v },
                            ra,
                            Atom::Member { of: Term::Proj(regs, reg_slot(m, *arr)), ann: lam },
                            Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Arr { val: old } },
                        ],
                        head: Head::HArrJoin { key: lam, old, add: Term::Var(v) },
                    });
                    out.push(advance(cx, pp));
                }
                Lhs::Field { obj, field } => {
                    let v = g.fresh();
                    let (ra, _, regs) = cx.r_atom(&mut g, pp);
                    let lam = g.fresh();
                    let cls = g.fresh();
                    let old = g.fresh();
                    out.push(Clause {
                        tag: RuleTag::Stmt,
                        body: vec![
                            Atom::Rhs { pp: pp.clone(), val: v },
                            ra,
                            Atom::Member { of: Term::Proj(regs, reg_slot(m, *obj)), ann: lam },
                            Atom::H {
                                key: AnnTerm::Var(lam),
                                pat: BlockPat::Obj {
                                    class: ClassPat::Bind(cls),
                                    binds: vec![(field.clone(), old)],
                                },
                            },
                        ],
                        head: Head::HObjField { key: lam, field: field.clone(), val: Term::Var(v) },
                    });
                    out.push(advance(cx, pp));
                }
                Lhs::Static { class, field } => {
                    let v = g.fresh();
                    out.push(Clause {
                        tag: RuleTag::Stmt,
                        body: vec![Atom::Rhs { pp: pp.clone(), val: v }],
                        head: Head::SFld { class: class.clone(), field: field.clone(), val: Term::Var(v) },
                    });
                    out.push(advance(cx, pp));
                }
            }
        }
        Stmt::InstOf { dst, src, ty } => {
            for (expect, result) in [(true, d.bool_abs(true)), (false, d.bool_abs(false))] {
                let mut g = VarGen::new();
                let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
                let lam = g.fresh();
                out.push(Clause {
                    tag: RuleTag::Stmt,
                    body: vec![
                        ra,
                        Atom::Member { of: Term::Proj(regs, reg_slot(m, *src)), ann: lam },
                        Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Any },
                        Atom::Guard(Guard::BlockTypeLe { ann: lam, ty: ty.clone(), expect }),
                    ],
                    head: Head::R {
                        pp: pp.next(),
                        ctx: VecTerm::Var(ctx),
                        regs: VecTerm::Update(regs, reg_slot(m, *dst), Box::new(Term::Const(result))),
                    },
                });
            }
        }
        Stmt::CheckCast { src, ty } => {
            // Only the successful cast has a successor.
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            let lam = g.fresh();
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Member { of: Term::Proj(regs, reg_slot(m, *src)), ann: lam },
                    Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Any },
                    Atom::Guard(Guard::BlockTypeLe { ann: lam, ty: ty.clone(), expect: true }),
                ],
                head: Head::R { pp: pp.next(), ctx: VecTerm::Var(ctx), regs: VecTerm::Var(regs) },
            });
        }
        Stmt::Invoke { recv, method, args } => {
            // One call clause and one result clause per class defining a
            // matching method; the receiver-class guard prunes at
            // saturation time.
            let candidates = hier::defining_classes(cx.p, method, args.len());
            for c_def in candidates {
                let Some((def_cls, def)) = hier::lookup(cx.p, &c_def, method) else { continue };
                if def.is_static {
                    continue;
                }
                let callee_entry = Pp::new(def_cls.name.clone(), method.clone(), 0);
                let mut g = VarGen::new();
                let (ra, _, regs) = cx.r_atom(&mut g, pp);
                let lam = g.fresh();
                let cls = g.fresh();
                let arg_terms: Vec<Term> =
                    args.iter().map(|r| Term::Proj(regs, reg_slot(m, *r))).collect();
                let mut callee_regs: Vec<Term> =
                    (0..def.locals).map(|_| Term::Const(d.zero_reg())).collect();
                callee_regs.push(Term::AnnSet(lam));
                callee_regs.extend(arg_terms.clone());
                callee_regs.push(Term::Const(d.zero_reg()));
                out.push(Clause {
                    tag: RuleTag::Stmt,
                    body: vec![
                        ra,
                        Atom::Member { of: Term::Proj(regs, reg_slot(m, *recv)), ann: lam },
                        Atom::H {
                            key: AnnTerm::Var(lam),
                            pat: BlockPat::Obj { class: ClassPat::Bind(cls), binds: vec![] },
                        },
                        Atom::Guard(Guard::ClassLe { class: cls, sup: c_def.clone() }),
                    ],
                    head: Head::R {
                        pp: callee_entry,
                        ctx: VecTerm::Build(arg_terms),
                        regs: VecTerm::Build(callee_regs),
                    },
                });

                let mut g = VarGen::new();
                let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
                let lam = g.fresh();
                let cls = g.fresh();
                let ret = g.fresh();
                let arg_terms: Vec<Term> =
                    args.iter().map(|r| Term::Proj(regs, reg_slot(m, *r))).collect();
                out.push(Clause {
                    tag: RuleTag::Stmt,
                    body: vec![
                        ra,
                        Atom::Member { of: Term::Proj(regs, reg_slot(m, *recv)), ann: lam },
                        Atom::H {
                            key: AnnTerm::Var(lam),
                            pat: BlockPat::Obj { class: ClassPat::Bind(cls), binds: vec![] },
                        },
                        Atom::Guard(Guard::ClassLe { class: cls, sup: c_def.clone() }),
                        Atom::Res {
                            class: c_def.clone(),
                            method: method.clone(),
                            ctx: VecTerm::Build(arg_terms),
                            ret,
                        },
                    ],
                    head: Head::R {
                        pp: pp.next(),
                        ctx: VecTerm::Var(ctx),
                        regs: VecTerm::Update(regs, reg_slot(m, Reg::Ret), Box::new(Term::Var(ret))),
                    },
                });
            }
        }
        Stmt::SInvoke { class, method, args } => {
            let Some((def_cls, def)) = hier::resolve_static(cx.p, class, method) else {
                return out;
            };
            let callee_entry = Pp::new(def_cls.name.clone(), method.clone(), 0);
            let (ra, _, regs) = cx.r_atom(&mut g, pp);
            let arg_terms: Vec<Term> = args.iter().map(|r| Term::Proj(regs, reg_slot(m, *r))).collect();
            let mut callee_regs: Vec<Term> =
                (0..def.locals).map(|_| Term::Const(d.zero_reg())).collect();
            callee_regs.extend(arg_terms.clone());
            callee_regs.push(Term::Const(d.zero_reg()));
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::R {
                    pp: callee_entry.clone(),
                    ctx: VecTerm::Build(arg_terms),
                    regs: VecTerm::Build(callee_regs),
                },
            });

            let mut g = VarGen::new();
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            let ret = g.fresh();
            let arg_terms: Vec<Term> = args.iter().map(|r| Term::Proj(regs, reg_slot(m, *r))).collect();
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Res {
                        class: def_cls.name.clone(),
                        method: method.clone(),
                        ctx: VecTerm::Build(arg_terms),
                        ret,
                    },
                ],
                head: Head::R {
                    pp: pp.next(),
                    ctx: VecTerm::Var(ctx),
                    regs: VecTerm::Update(regs, reg_slot(m, Reg::Ret), Box::new(Term::Var(ret))),
                },
            });
        }
        Stmt::Return => {
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::Res {
                    class: pp.class.clone(),
                    method: pp.method.clone(),
                    ctx: VecTerm::Var(ctx),
                    ret: Term::Proj(regs, reg_slot(m, Reg::Ret)),
                },
            });
        }
        Stmt::New { dst, class } => {
            let (ra, _, _) = cx.r_atom(&mut g, pp);
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::HFreshObj {
                    key: AnnTerm::Const(Annot::Pp(pp.clone())),
                    class: Some(class.clone()),
                    fields: FreshFields { overrides: vec![] },
                },
            });
            out.push(advance_with(cx, m, pp, *dst, Term::Const(AbsVal::annot(Annot::Pp(pp.clone())))));
        }
        Stmt::NewArray { dst, elem, .. } => {
            let (ra, _, _) = cx.r_atom(&mut g, pp);
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::HFreshArr {
                    key: Annot::Pp(pp.clone()),
                    elem: elem.clone(),
                    init: Term::Const(d.default_abs(elem)),
                },
            });
            out.push(advance_with(cx, m, pp, *dst, Term::Const(AbsVal::annot(Annot::Pp(pp.clone())))));
        }
        Stmt::NewIntent { dst, target } => {
            let (ra, _, _) = cx.r_atom(&mut g, pp);
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![ra],
                head: Head::HFreshIntent {
                    key: AnnTerm::Const(Annot::Pp(pp.clone())),
                    target: Some(target.clone()),
                    val: Term::Const(AbsVal::bottom()),
                },
            });
            out.push(advance_with(cx, m, pp, *dst, Term::Const(AbsVal::annot(Annot::Pp(pp.clone())))));
        }
        Stmt::PutExtra { intent, value, .. } => {
            let (ra, _, regs) = cx.r_atom(&mut g, pp);
            let lam = g.fresh();
            let tgt = g.fresh();
            let old = g.fresh();
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Member { of: Term::Proj(regs, reg_slot(m, *intent)), ann: lam },
                    Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Intent { target: tgt, val: old } },
                ],
                head: Head::HIntentJoin { key: lam, old, add: Term::Proj(regs, reg_slot(m, *value)) },
            });
            out.push(advance(cx, pp));
        }
        Stmt::GetExtra { intent, .. } => {
            // The declared type filter is dropped: the whole intent
            // summary propagates to the return register.
            let (ra, ctx, regs) = cx.r_atom(&mut g, pp);
            let lam = g.fresh();
            let tgt = g.fresh();
            let val = g.fresh();
            out.push(Clause {
                tag: RuleTag::Stmt,
                body: vec![
                    ra,
                    Atom::Member { of: Term::Proj(regs, reg_slot(m, *intent)), ann: lam },
                    Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Intent { target: tgt, val } },
                ],
                head: Head::R {
                    pp: pp.next(),
                    ctx: VecTerm::Var(ctx),
                    regs: VecTerm::Update(regs, reg_slot(m, Reg::Ret), Box::new(Term::Var(val))),
                },
            });
        }
        Stmt::StartActivity { intent } => {
            // The frame owning this statement is not identifiable from
            // the statement alone (the enclosing method may run on behalf
            // of any activity), so an intent fact is emitted for every
            // possible owner class.
            for owner in hier::activity_classes(cx.p) {
                let mut g = VarGen::new();
                let (ra, _, regs) = cx.r_atom(&mut g, pp);
                let lam = g.fresh();
                let tgt = g.fresh();
                let val = g.fresh();
                out.push(Clause {
                    tag: RuleTag::Stmt,
                    body: vec![
                        ra,
                        Atom::Member { of: Term::Proj(regs, reg_slot(m, *intent)), ann: lam },
                        Atom::H { key: AnnTerm::Var(lam), pat: BlockPat::Intent { target: tgt, val } },
                    ],
                    head: Head::I { owner: owner.name.clone(), target: tgt, val: Term::Var(val) },
                });
            }
            out.push(advance(cx, pp));
        }
    }
    out
}

/// The bytecode-independent clause families abstracting the activity
/// lifecycle.
pub fn lifecycle_rules(p: &Program, d: Domain) -> Vec<Clause> {
    let cx = Cx { p, d, universe: annot_universe(p) };
    let mut out = Vec::new();

    // Callback dispatch: any tracked activity instance of a subclass of
    // the declaring class may have any declared callback invoked with
    // unknown arguments of the right type.
    for cls in hier::activity_classes(p) {
        let mut methods: Vec<String> = Vec::new();
        for s in ActState::ALL {
            for mname in hier::callbacks(p, &cls.name, s) {
                if !methods.contains(&mname) {
                    methods.push(mname);
                }
            }
        }
        for mname in methods {
            let Some((def_cls, def)) = hier::lookup(p, &cls.name, &mname) else { continue };
            let mut g = VarGen::new();
            let act = g.fresh();
            let tops: Vec<Term> = def.params.iter().map(|t| Term::Const(cx.top_for(t))).collect();
            let mut regs: Vec<Term> = (0..def.locals).map(|_| Term::Const(d.zero_reg())).collect();
            regs.push(Term::AnnSet(act));
            regs.extend(tops.clone());
            regs.push(Term::Const(d.zero_reg()));
            out.push(Clause {
                tag: RuleTag::Cbk,
                body: vec![
                    Atom::H {
                        key: AnnTerm::Var(act),
                        pat: BlockPat::Obj { class: ClassPat::EqualsKey, binds: vec![] },
                    },
                    Atom::Guard(Guard::ClassLe { class: act, sup: cls.name.clone() }),
                ],
                head: Head::R {
                    pp: Pp::new(def_cls.name.clone(), mname.clone(), 0),
                    ctx: VecTerm::Build(tops),
                    regs: VecTerm::Build(regs),
                },
            });
        }
    }

    // The finished flag of any tracked activity may flip at any time.
    {
        let mut g = VarGen::new();
        let act = g.fresh();
        out.push(Clause {
            tag: RuleTag::Fin,
            body: vec![Atom::H {
                key: AnnTerm::Var(act),
                pat: BlockPat::Obj { class: ClassPat::EqualsKey, binds: vec![] },
            }],
            head: Head::HObjField { key: act, field: FINISHED_FIELD.into(), val: Term::Const(d.top_bool()) },
        });
    }

    // Screen orientation changes: fields may reset to their defaults.
    {
        let mut g = VarGen::new();
        let act = g.fresh();
        out.push(Clause {
            tag: RuleTag::Rep,
            body: vec![Atom::H {
                key: AnnTerm::Var(act),
                pat: BlockPat::Obj { class: ClassPat::EqualsKey, binds: vec![] },
            }],
            head: Head::HFreshObj {
                key: AnnTerm::Var(act),
                class: None,
                fields: FreshFields { overrides: vec![] },
            },
        });
    }

    // Starting a sent intent: the serialized intent is tracked under
    // in(c) and a fresh activity instance under c.
    {
        let mut g = VarGen::new();
        let owner = g.fresh();
        let tgt = g.fresh();
        let val = g.fresh();
        out.push(Clause {
            tag: RuleTag::Act,
            body: vec![
                Atom::I { owner, target: tgt, val },
                Atom::Guard(Guard::IsActivity { class: tgt }),
            ],
            head: Head::HFreshIntent { key: AnnTerm::In(tgt), target: None, val: Term::Var(val) },
        });
        let mut g = VarGen::new();
        let owner = g.fresh();
        let tgt = g.fresh();
        let val = g.fresh();
        out.push(Clause {
            tag: RuleTag::Act,
            body: vec![
                Atom::I { owner, target: tgt, val },
                Atom::Guard(Guard::IsActivity { class: tgt }),
            ],
            head: Head::HFreshObj {
                key: AnnTerm::Var(tgt),
                class: None,
                fields: FreshFields {
                    overrides: vec![
                        (FINISHED_FIELD.into(), Term::Const(d.bool_abs(false))),
                        (INTENT_FIELD.into(), Term::InSet(tgt)),
                        (PARENT_FIELD.into(), Term::AnnSet(owner)),
                    ],
                },
            },
        });
    }

    // A finished child hands its result pointer to its parent.
    {
        let mut g = VarGen::new();
        let child = g.fresh();
        let parent_val = g.fresh();
        let result_val = g.fresh();
        let parent_ann = g.fresh();
        let parent_result = g.fresh();
        out.push(Clause {
            tag: RuleTag::ResLife,
            body: vec![
                Atom::H {
                    key: AnnTerm::Var(child),
                    pat: BlockPat::Obj {
                        class: ClassPat::EqualsKey,
                        binds: vec![
                            (PARENT_FIELD.into(), parent_val),
                            (RESULT_FIELD.into(), result_val),
                        ],
                    },
                },
                Atom::Member { of: Term::Var(parent_val), ann: parent_ann },
                Atom::H {
                    key: AnnTerm::Var(parent_ann),
                    pat: BlockPat::Obj {
                        class: ClassPat::EqualsKey,
                        binds: vec![(RESULT_FIELD.into(), parent_result)],
                    },
                },
            ],
            head: Head::HObjField { key: parent_ann, field: RESULT_FIELD.into(), val: Term::Var(result_val) },
        });
    }

    out
}

/// Ground subtyping axioms over every type occurring in the program,
/// closed under one array constructor.
pub fn sub_facts(p: &Program) -> BTreeSet<(Ty, Ty)> {
    let mut tys: BTreeSet<Ty> = BTreeSet::new();
    tys.insert(Ty::Int);
    tys.insert(Ty::Bool);
    tys.insert(Ty::class(ACTIVITY_CLASS));
    tys.insert(Ty::class(INTENT_CLASS));
    for class in &p.classes {
        tys.insert(Ty::Class(class.name.clone()));
        for i in &class.interfaces {
            tys.insert(Ty::Class(i.clone()));
        }
        for f in &class.fields {
            tys.insert(f.ty.clone());
        }
        for m in &class.methods {
            for t in m.params.iter().chain(Some(&m.ret_ty)) {
                tys.insert(t.clone());
            }
            for st in &m.body {
                match st {
                    Stmt::NewArray { elem, .. } => {
                        tys.insert(elem.clone());
                    }
                    Stmt::CheckCast { ty, .. } | Stmt::InstOf { ty, .. } | Stmt::GetExtra { ty, .. } => {
                        tys.insert(ty.clone());
                    }
                    _ => {}
                }
            }
        }
    }
    let base: Vec<Ty> = tys.iter().cloned().collect();
    for t in base {
        tys.insert(Ty::array(t));
    }
    let mut out = BTreeSet::new();
    for a in &tys {
        for b in &tys {
            if hier::subtype(a, b, p) {
                out.insert((a.clone(), b.clone()));
            }
        }
    }
    out
}

/// Translates a whole program: every statement of every method plus the
/// lifecycle rule families. Output order is deterministic.
pub fn translate_program(p: &Program, d: Domain) -> AbstractProgram {
    let mut clauses = Vec::new();
    for class in &p.classes {
        for m in &class.methods {
            for (pc, st) in m.body.iter().enumerate() {
                let pp = Pp::new(class.name.clone(), m.name.clone(), pc);
                clauses.extend(translate_stmt(p, d, m, st, &pp));
            }
        }
    }
    clauses.extend(lifecycle_rules(p, d));
    let ap = AbstractProgram { domain: d, clauses, sub_facts: sub_facts(p), universe: annot_universe(p) };
    for (i, c) in ap.clauses.iter().enumerate() {
        if let Err(e) = validate_clause(c) {
            panic!("generated clause {i} violates the head-variable condition: {e}\n  {c}");
        }
    }
    ap
}

// ---------------------------------------------------------------------
// Variable hygiene

fn term_vars(t: &Term, out: &mut BTreeSet<VarId>) {
    match t {
        Term::Const(_) => {}
        Term::Var(v) | Term::AnnSet(v) | Term::InSet(v) | Term::Proj(v, _) => {
            out.insert(*v);
        }
        Term::Binop(_, a, b) => {
            term_vars(a, out);
            term_vars(b, out);
        }
        Term::Unop(_, a) => term_vars(a, out),
    }
}

fn vecterm_vars(t: &VecTerm, out: &mut BTreeSet<VarId>) {
    match t {
        VecTerm::Var(v) => {
            out.insert(*v);
        }
        VecTerm::Build(ts) => ts.iter().for_each(|t| term_vars(t, out)),
        VecTerm::Update(v, _, t) => {
            out.insert(*v);
            term_vars(t, out);
        }
    }
}

fn annterm_vars(t: &AnnTerm, out: &mut BTreeSet<VarId>) {
    match t {
        AnnTerm::Var(v) | AnnTerm::In(v) => {
            out.insert(*v);
        }
        AnnTerm::Const(_) => {}
    }
}

/// Variables an atom binds.
fn atom_binds(a: &Atom, out: &mut BTreeSet<VarId>) {
    match a {
        Atom::R { ctx, regs, .. } => {
            out.insert(*ctx);
            out.insert(*regs);
        }
        Atom::Rhs { val, .. } | Atom::SFld { val, .. } => {
            out.insert(*val);
        }
        Atom::Res { ret, .. } => {
            out.insert(*ret);
        }
        Atom::Member { ann, .. } => {
            out.insert(*ann);
        }
        Atom::H { key, pat } => {
            if let AnnTerm::Var(v) = key {
                out.insert(*v);
            }
            match pat {
                BlockPat::Obj { class, binds } => {
                    if let ClassPat::Bind(v) = class {
                        out.insert(*v);
                    }
                    for (_, v) in binds {
                        out.insert(*v);
                    }
                }
                BlockPat::Arr { val } => {
                    out.insert(*val);
                }
                BlockPat::Intent { target, val } => {
                    out.insert(*target);
                    out.insert(*val);
                }
                BlockPat::Any => {}
            }
        }
        Atom::I { owner, target, val } => {
            out.insert(*owner);
            out.insert(*target);
            out.insert(*val);
        }
        Atom::Guard(_) => {}
    }
}

fn atom_uses(a: &Atom, out: &mut BTreeSet<VarId>) {
    match a {
        Atom::Res { ctx, .. } => vecterm_vars(ctx, out),
        Atom::Member { of, .. } => term_vars(of, out),
        // A plain variable key may be bound by the atom itself (the
        // match then ranges over all heap keys); an `in(c)` key needs
        // its class variable bound already.
        Atom::H { key: AnnTerm::In(v), .. } => {
            out.insert(*v);
        }
        Atom::H { .. } => {}
        Atom::Guard(g) => match g {
            Guard::Cmp { lhs, rhs, .. } => {
                term_vars(lhs, out);
                term_vars(rhs, out);
            }
            Guard::BlockTypeLe { ann, .. } => {
                out.insert(*ann);
            }
            Guard::ClassLe { class, .. } | Guard::IsActivity { class } => {
                out.insert(*class);
            }
        },
        _ => {}
    }
}

fn head_vars(h: &Head) -> BTreeSet<VarId> {
    let mut out = BTreeSet::new();
    match h {
        Head::R { ctx, regs, .. } => {
            vecterm_vars(ctx, &mut out);
            vecterm_vars(regs, &mut out);
        }
        Head::Rhs { val, .. } | Head::SFld { val, .. } => term_vars(val, &mut out),
        Head::Res { ctx, ret, .. } => {
            vecterm_vars(ctx, &mut out);
            term_vars(ret, &mut out);
        }
        Head::HObjField { key, val, .. } => {
            out.insert(*key);
            term_vars(val, &mut out);
        }
        Head::HFreshObj { key, fields, .. } => {
            annterm_vars(key, &mut out);
            for (_, t) in &fields.overrides {
                term_vars(t, &mut out);
            }
        }
        Head::HFreshArr { init, .. } => term_vars(init, &mut out),
        Head::HFreshIntent { key, val, .. } => {
            annterm_vars(key, &mut out);
            term_vars(val, &mut out);
        }
        Head::HArrJoin { key, old, add } | Head::HIntentJoin { key, old, add } => {
            out.insert(*key);
            out.insert(*old);
            term_vars(add, &mut out);
        }
        Head::I { target, val, .. } => {
            out.insert(*target);
            term_vars(val, &mut out);
        }
    }
    out
}

/// Checks the head-variable condition: every variable used by a guard or
/// the head must be bound by an earlier body atom.
pub fn validate_clause(c: &Clause) -> Result<(), String> {
    let mut bound = BTreeSet::new();
    for a in &c.body {
        let mut used = BTreeSet::new();
        atom_uses(a, &mut used);
        for v in used {
            if !bound.contains(&v) {
                return Err(format!("variable x{v} used before being bound"));
            }
        }
        atom_binds(a, &mut bound);
    }
    for v in head_vars(&c.head) {
        if !bound.contains(&v) {
            return Err(format!("head variable x{v} does not occur in the body"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Display

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(v) => write!(f, "{v}"),
            Term::Var(v) => write!(f, "x{v}"),
            Term::Proj(v, i) => write!(f, "x{v}[{i}]"),
            Term::AnnSet(v) => write!(f, "{{x{v}}}"),
            Term::InSet(v) => write!(f, "{{in(x{v})}}"),
            Term::Binop(op, a, b) => write!(f, "{}^({a}, {b})", op.name()),
            Term::Unop(op, a) => write!(f, "{}^({a})", op.name()),
        }
    }
}

impl fmt::Display for VecTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VecTerm::Var(v) => write!(f, "x{v}"),
            VecTerm::Build(ts) => {
                let items: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                write!(f, "[{}]", items.join(","))
            }
            VecTerm::Update(v, i, t) => write!(f, "x{v}[{i} := {t}]"),
        }
    }
}

impl fmt::Display for AnnTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnTerm::Var(v) => write!(f, "x{v}"),
            AnnTerm::In(v) => write!(f, "in(x{v})"),
            AnnTerm::Const(a) => write!(f, "{a}"),
        }
    }
}

impl fmt::Display for BlockPat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockPat::Obj { class, binds } => {
                match class {
                    ClassPat::Bind(v) => write!(f, "{{|x{v};")?,
                    ClassPat::EqualsKey => write!(f, "{{|cls(key);")?,
                }
                if binds.is_empty() {
                    write!(f, " _|}}")
                } else {
                    let items: Vec<String> = binds.iter().map(|(n, v)| format!("{n} -> x{v}")).collect();
                    write!(f, " {}, _|}}", items.join(", "))
                }
            }
            BlockPat::Arr { val } => write!(f, "arr(x{val})"),
            BlockPat::Intent { target, val } => write!(f, "{{|@x{target}; x{val}|}}"),
            BlockPat::Any => write!(f, "_"),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::R { pp, ctx, regs } => write!(f, "R_{{{pp}}}(x{ctx}; x{regs})"),
            Atom::Rhs { pp, val } => write!(f, "RHS_{{{pp}}}(x{val})"),
            Atom::SFld { class, field, val } => write!(f, "S_{{{class}.{field}}}(x{val})"),
            Atom::Res { class, method, ctx, ret } => {
                write!(f, "Res_{{{class}.{method}}}({ctx}; x{ret})")
            }
            Atom::Member { of, ann } => write!(f, "x{ann} in {of}"),
            Atom::H { key, pat } => write!(f, "H({key}, {pat})"),
            Atom::I { owner, target, val } => write!(f, "I(x{owner}, {{|@x{target}; x{val}|}})"),
            Atom::Guard(g) => match g {
                Guard::Cmp { op, lhs, rhs, expect } => {
                    if *expect {
                        write!(f, "{}^({lhs}, {rhs})", op.name())
                    } else {
                        write!(f, "not {}^({lhs}, {rhs})", op.name())
                    }
                }
                Guard::BlockTypeLe { ann, ty, expect } => {
                    if *expect {
                        write!(f, "type^(x{ann}) <= {ty}")
                    } else {
                        write!(f, "not type^(x{ann}) <= {ty}")
                    }
                }
                Guard::ClassLe { class, sup } => write!(f, "x{class} <= {sup}"),
                Guard::IsActivity { class } => write!(f, "activity(x{class})"),
            },
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::R { pp, ctx, regs } => write!(f, "R_{{{pp}}}({ctx}; {regs})"),
            Head::Rhs { pp, val } => write!(f, "RHS_{{{pp}}}({val})"),
            Head::SFld { class, field, val } => write!(f, "S_{{{class}.{field}}}({val})"),
            Head::Res { class, method, ctx, ret } => {
                write!(f, "Res_{{{class}.{method}}}({ctx}; {ret})")
            }
            Head::HObjField { key, field, val } => write!(f, "H(x{key}, obj[{field} := {val}])"),
            Head::HFreshObj { key, class, fields } => {
                let cls = class.clone().unwrap_or_else(|| "cls(key)".into());
                write!(f, "H({key}, {{|{cls}; defaults")?;
                for (name, t) in &fields.overrides {
                    write!(f, ", {name} := {t}")?;
                }
                write!(f, "|}})")
            }
            Head::HFreshArr { key, elem, init } => write!(f, "H({key}, arr[{elem}]({init}))"),
            Head::HFreshIntent { key, target, val } => {
                let tgt = target.clone().unwrap_or_else(|| "cls(key)".into());
                write!(f, "H({key}, {{|@{tgt}; {val}|}})")
            }
            Head::HArrJoin { key, old, add } => write!(f, "H(x{key}, arr(x{old} u {add}))"),
            Head::HIntentJoin { key, old, add } => write!(f, "H(x{key}, intent(x{old} u {add}))"),
            Head::I { owner, target, val } => write!(f, "I({owner}, {{|@x{target}; {val}|}})"),
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            write!(f, "true => {}", self.head)
        } else {
            let body: Vec<String> = self.body.iter().map(|a| a.to_string()).collect();
            write!(f, "{} => {}", body.join(" /\\ "), self.head)
        }
    }
}

impl AbstractProgram {
    /// One clause per line, bodies before heads; the documented debug
    /// dump format.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.clauses {
            out.push_str(&format!("[{}] {c}\n", c.tag));
        }
        for (a, b) in &self.sub_facts {
            out.push_str(&format!("[sub] {a} <= {b}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    fn prog() -> Program {
        parse_program(
            r#"(program (entry A)
                 (class D
                   (method m (args int) (returns int) (locals 1)
                     (0 (move (reg ret) (reg 2)))
                     (1 (return))))
                 (class C (super D)
                   (method m (args int) (returns int) (locals 0)
                     (0 (return))))
                 (class A (super Activity)
                   (activity (callbacks (onCreate boot)))
                   (method boot (args) (returns int) (locals 2)
                     (0 (goto 0)))))"#,
        )
        .unwrap()
    }

    fn clauses_for(p: &Program, class: &str, method: &str, st: &Stmt, pc: usize) -> Vec<Clause> {
        let m = p.class(class).unwrap().method(method).unwrap();
        translate_stmt(p, Domain::const_set(32), m, st, &Pp::new(class, method, pc))
    }

    #[test]
    fn goto_propagates_registers() {
        let p = prog();
        let cs = clauses_for(&p, "A", "boot", &Stmt::Goto { target: 0 }, 0);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].to_string(), "R_{A.boot:0}(x0; x1) => R_{A.boot:0}(x0; x1)");
    }

    #[test]
    fn prim_rhs_is_unconditional() {
        let p = prog();
        let m = p.class("A").unwrap().method("boot").unwrap();
        let cs =
            translate_rhs(&p, Domain::const_set(32), m, &Rhs::Prim(PrimLit::Int(5)), &Pp::new("A", "boot", 0));
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].to_string(), "true => RHS_{A.boot:0}({5@pub})");
    }

    #[test]
    fn register_rhs_projects() {
        let p = prog();
        let m = p.class("A").unwrap().method("boot").unwrap();
        let cs = translate_rhs(
            &p,
            Domain::const_set(32),
            m,
            &Rhs::Lhs(Lhs::Reg(Reg::Idx(1))),
            &Pp::new("A", "boot", 0),
        );
        assert_eq!(cs[0].to_string(), "R_{A.boot:0}(x0; x1) => RHS_{A.boot:0}(x1[1])");
    }

    #[test]
    fn field_rhs_goes_through_the_heap() {
        let p = prog();
        let m = p.class("A").unwrap().method("boot").unwrap();
        let cs = translate_rhs(
            &p,
            Domain::const_set(32),
            m,
            &Rhs::Lhs(Lhs::Field { obj: Reg::Idx(0), field: "f".into() }),
            &Pp::new("A", "boot", 0),
        );
        assert_eq!(
            cs[0].to_string(),
            "R_{A.boot:0}(x0; x1) /\\ x2 in x1[0] /\\ H(x2, {|x3; f -> x4, _|}) => RHS_{A.boot:0}(x4)"
        );
    }

    #[test]
    fn return_emits_the_result_summary() {
        let p = prog();
        let cs = clauses_for(&p, "D", "m", &Stmt::Return, 1);
        // D.m has 1 local + receiver + 1 arg = slots 0..=2, ret at 3.
        assert_eq!(cs[0].to_string(), "R_{D.m:1}(x0; x1) => Res_{D.m}(x0; x1[3])");
    }

    #[test]
    fn put_extra_joins_the_summary() {
        let p = prog();
        let st = Stmt::PutExtra { intent: Reg::Idx(0), key: Reg::Idx(1), value: Reg::Idx(1) };
        let cs = clauses_for(&p, "A", "boot", &st, 0);
        assert_eq!(cs.len(), 2);
        assert_eq!(
            cs[0].to_string(),
            "R_{A.boot:0}(x0; x1) /\\ x2 in x1[0] /\\ H(x2, {|@x3; x4|}) => H(x2, intent(x4 u x1[1]))"
        );
        assert_eq!(cs[1].to_string(), "R_{A.boot:0}(x0; x1) => R_{A.boot:1}(x0; x1)");
    }

    #[test]
    fn invoke_emits_call_and_result_clauses_per_definer() {
        let p = prog();
        let st = Stmt::Invoke { recv: Reg::Idx(0), method: "m".into(), args: vec![Reg::Idx(1)] };
        let cs = clauses_for(&p, "A", "boot", &st, 0);
        // m is defined on C and D: two call clauses and two result clauses.
        assert_eq!(cs.len(), 4);
        let text = cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("\n");
        assert!(text.contains("=> R_{C.m:0}("));
        assert!(text.contains("=> R_{D.m:0}("));
        assert!(text.contains("Res_{C.m}("));
        assert!(text.contains("Res_{D.m}("));
        assert!(text.contains("x3 <= C"));
        assert!(text.contains("x3 <= D"));
        // Call clause shape for the D candidate: locals, receiver
        // annotation, argument, return default.
        let call_d = cs
            .iter()
            .find(|c| matches!(&c.head, Head::R { pp, .. } if pp.class == "D"))
            .unwrap();
        assert_eq!(
            call_d.to_string(),
            "R_{A.boot:0}(x0; x1) /\\ x2 in x1[0] /\\ H(x2, {|x3; _|}) /\\ x3 <= D \
             => R_{D.m:0}([x1[1]]; [{0@pub},{x2},x1[1],{0@pub}])"
        );
    }

    #[test]
    fn lifecycle_rules_cover_all_families() {
        let p = prog();
        let rules = lifecycle_rules(&p, Domain::const_set(32));
        let tags: BTreeSet<RuleTag> = rules.iter().map(|c| c.tag).collect();
        assert_eq!(
            tags,
            BTreeSet::from([RuleTag::Cbk, RuleTag::Fin, RuleTag::Rep, RuleTag::Act, RuleTag::ResLife])
        );
        let cbk = rules.iter().find(|c| c.tag == RuleTag::Cbk).unwrap();
        assert_eq!(
            cbk.to_string(),
            "H(x0, {|cls(key); _|}) /\\ x0 <= A => R_{A.boot:0}([]; [{0@pub},{0@pub},{x0},{0@pub}])"
        );
    }

    #[test]
    fn block_types_follow_the_three_shapes() {
        use crate::absdom::{AbsBlock, AbsVal};
        let obj = AbsBlock::Obj { class: "C".into(), fields: Default::default() };
        assert_eq!(get_type_hat(&obj), Ty::class("C"));
        let arr = AbsBlock::Arr { elem: Ty::Int, val: AbsVal::bottom() };
        assert_eq!(get_type_hat(&arr), Ty::array(Ty::Int));
        let intent = AbsBlock::Intent { target: "C".into(), val: AbsVal::bottom() };
        assert_eq!(get_type_hat(&intent), Ty::class(INTENT_CLASS));
    }

    #[test]
    fn sub_facts_are_reflexive_on_occurring_types() {
        let p = prog();
        let subs = sub_facts(&p);
        for t in [Ty::Int, Ty::class("C"), Ty::array(Ty::class("C"))] {
            assert!(subs.contains(&(t.clone(), t.clone())));
        }
        assert!(subs.contains(&(Ty::class("C"), Ty::class("D"))));
        assert!(subs.contains(&(Ty::array(Ty::class("C")), Ty::array(Ty::class("D")))));
        assert!(!subs.contains(&(Ty::class("D"), Ty::class("C"))));
    }

    #[test]
    fn translation_is_deterministic_and_validated() {
        let p = prog();
        let a = translate_program(&p, Domain::const_set(32));
        let b = translate_program(&p, Domain::const_set(32));
        assert_eq!(a.dump(), b.dump());
        for c in &a.clauses {
            validate_clause(c).unwrap();
        }
    }

    #[test]
    fn clause_count_is_the_per_statement_sum_plus_lifecycle() {
        let p = prog();
        let ap = translate_program(&p, Domain::const_set(32));
        let mut expected = 0;
        for class in &p.classes {
            for m in &class.methods {
                for (pc, st) in m.body.iter().enumerate() {
                    expected +=
                        translate_stmt(&p, Domain::const_set(32), m, st, &Pp::new(&class.name, &m.name, pc))
                            .len();
                }
            }
        }
        expected += lifecycle_rules(&p, Domain::const_set(32)).len();
        assert_eq!(ap.clauses.len(), expected);
    }
}
