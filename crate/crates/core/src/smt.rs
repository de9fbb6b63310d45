//! SMT-LIB emission of the abstract program as constrained Horn clauses,
//! plus the bridge to an external CHC solver.
//!
//! Abstract values are encoded as fixed-width bit-vectors: one bit per
//! table constant (split by taint), two top bits, and one bit per
//! annotation; set union is bitwise or. Every annotation variable is
//! grounded at emission time against the finite annotation universe, so
//! the emitted rules quantify only over bit-vector values. One relation
//! is declared per predicate/key family (registers and results per
//! method, heap entries per annotation, static fields per field). A
//! nullary `leak` relation per sink is reachable exactly when some
//! register at the sink entry can carry secret data; the script queries
//! them in order, and the solver answers one `sat`/`unsat` line each,
//! `sat` meaning the leak is derivable.
//!
//! The document is byte-deterministic for a given program, domain and
//! constant table. The constant table is taken from the clause constants
//! plus (when supplied) the literals of a saturated model, which keeps
//! the bit-vector image computations exact on everything the analysis
//! actually derives; image literals outside the table conservatively
//! produce the top element.

use crate::absdom::{AbsVal, Domain, PrimAbs};
use crate::clauses::*;
use crate::engine::Model;
use crate::hier;
use crate::syntax::*;
use crate::values::{Annot, Taint};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("constant table too large to encode ({0} literals, at most 128 supported)")]
    TooManyConsts(usize),
    #[error("annotation universe too large to encode ({0} annotations, at most 128 supported)")]
    TooManyAnnots(usize),
    #[error("literal {0} does not occur in the constant table")]
    UnknownConst(PrimLit),
    #[error("annotation {0} does not occur in the universe")]
    UnknownAnnot(Annot),
}

/// The bijective tables behind the bit-vector encoding.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub annots: Vec<Annot>,
    pub consts: Vec<PrimLit>,
    pub types: Vec<Ty>,
    /// Mangled relation names, for debugging the emitted script.
    pub relation_names: BTreeMap<String, String>,
}

/// A concrete encoded abstract value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncVal {
    /// Constants present with public taint.
    pub pc: u128,
    /// Constants present with secret taint.
    pub sc: u128,
    pub top_pub: bool,
    pub top_sec: bool,
    pub an: u128,
}

impl Encoding {
    pub fn build(p: &Program, ap: &AbstractProgram, model: Option<&Model>) -> Result<Encoding, EmitError> {
        let mut consts: BTreeSet<PrimLit> =
            BTreeSet::from([PrimLit::Int(0), PrimLit::Bool(false), PrimLit::Bool(true), PrimLit::Null]);
        let mut harvest = |v: &AbsVal| {
            if let PrimAbs::Consts(m) = &v.prims {
                consts.extend(m.keys().copied());
            }
        };
        for c in &ap.clauses {
            for a in &c.body {
                visit_atom_consts(a, &mut harvest);
            }
            visit_head_consts(&c.head, &mut harvest);
        }
        if let Some(model) = model {
            for entries in model.r.values() {
                for (ctx, regs) in entries {
                    ctx.iter().chain(regs).for_each(&mut harvest);
                }
            }
            for entries in model.res.values() {
                for (ctx, ret) in entries {
                    ctx.iter().chain(Some(ret)).for_each(&mut harvest);
                }
            }
            for b in model.h.values() {
                b.values().into_iter().for_each(&mut harvest);
            }
            model.s.values().for_each(&mut harvest);
            model.rhs.values().for_each(&mut harvest);
            model.i.values().for_each(&mut harvest);
        }
        let consts: Vec<PrimLit> = consts.into_iter().collect();
        if consts.len() > 128 {
            return Err(EmitError::TooManyConsts(consts.len()));
        }
        let annots: Vec<Annot> = ap.universe.keys().cloned().collect();
        if annots.len() > 128 {
            return Err(EmitError::TooManyAnnots(annots.len()));
        }
        let types: Vec<Ty> = {
            let mut t: BTreeSet<Ty> = BTreeSet::new();
            for (a, b) in &ap.sub_facts {
                t.insert(a.clone());
                t.insert(b.clone());
            }
            t.into_iter().collect()
        };
        let _ = p;
        Ok(Encoding { annots, consts, types, relation_names: BTreeMap::new() })
    }

    /// Constant-bit width (at least 1).
    pub fn cw(&self) -> usize {
        self.consts.len().max(1)
    }

    /// Annotation-bit width (at least 1).
    pub fn aw(&self) -> usize {
        self.annots.len().max(1)
    }

    /// Type-index width for the subtyping relation.
    pub fn tw(&self) -> usize {
        usize::BITS as usize - (self.types.len().max(2) - 1).leading_zeros() as usize
    }

    pub fn const_idx(&self, l: &PrimLit) -> Option<usize> {
        self.consts.iter().position(|x| x == l)
    }

    pub fn annot_idx(&self, a: &Annot) -> Option<usize> {
        self.annots.iter().position(|x| x == a)
    }

    pub fn encode_val(&self, v: &AbsVal) -> Result<EncVal, EmitError> {
        let mut e = EncVal { pc: 0, sc: 0, top_pub: false, top_sec: false, an: 0 };
        match &v.prims {
            PrimAbs::Top(Taint::Public) => e.top_pub = true,
            PrimAbs::Top(Taint::Secret) => e.top_sec = true,
            PrimAbs::Consts(m) => {
                for (l, h) in m {
                    let i = self.const_idx(l).ok_or(EmitError::UnknownConst(*l))?;
                    match h {
                        Taint::Public => e.pc |= 1 << i,
                        Taint::Secret => e.sc |= 1 << i,
                    }
                }
            }
        }
        for a in &v.annots {
            let i = self.annot_idx(a).ok_or_else(|| EmitError::UnknownAnnot(a.clone()))?;
            e.an |= 1 << i;
        }
        Ok(e)
    }

    pub fn decode_val(&self, e: &EncVal) -> AbsVal {
        let prims = if e.top_sec {
            PrimAbs::Top(Taint::Secret)
        } else if e.top_pub {
            PrimAbs::Top(Taint::Public)
        } else {
            let mut m = BTreeMap::new();
            for (i, l) in self.consts.iter().enumerate() {
                if e.sc & (1 << i) != 0 {
                    m.insert(*l, Taint::Secret);
                } else if e.pc & (1 << i) != 0 {
                    m.insert(*l, Taint::Public);
                }
            }
            PrimAbs::Consts(m)
        };
        let annots = self
            .annots
            .iter()
            .enumerate()
            .filter(|(i, _)| e.an & (1 << i) != 0)
            .map(|(_, a)| a.clone())
            .collect();
        AbsVal { prims, annots }
    }
}

fn visit_term_consts(t: &Term, f: &mut impl FnMut(&AbsVal)) {
    match t {
        Term::Const(v) => f(v),
        Term::Binop(_, a, b) => {
            visit_term_consts(a, f);
            visit_term_consts(b, f);
        }
        Term::Unop(_, a) => visit_term_consts(a, f),
        _ => {}
    }
}

fn visit_atom_consts(a: &Atom, f: &mut impl FnMut(&AbsVal)) {
    match a {
        Atom::Res { ctx, .. } => visit_vec_consts(ctx, f),
        Atom::Member { of, .. } => visit_term_consts(of, f),
        Atom::Guard(Guard::Cmp { lhs, rhs, .. }) => {
            visit_term_consts(lhs, f);
            visit_term_consts(rhs, f);
        }
        _ => {}
    }
}

fn visit_vec_consts(t: &VecTerm, f: &mut impl FnMut(&AbsVal)) {
    match t {
        VecTerm::Build(ts) => ts.iter().for_each(|t| visit_term_consts(t, f)),
        VecTerm::Update(_, _, t) => visit_term_consts(t, f),
        VecTerm::Var(_) => {}
    }
}

fn visit_head_consts(h: &Head, f: &mut impl FnMut(&AbsVal)) {
    match h {
        Head::R { ctx, regs, .. } => {
            visit_vec_consts(ctx, f);
            visit_vec_consts(regs, f);
        }
        Head::Rhs { val, .. } | Head::SFld { val, .. } => visit_term_consts(val, f),
        Head::Res { ctx, ret, .. } => {
            visit_vec_consts(ctx, f);
            visit_term_consts(ret, f);
        }
        Head::HObjField { val, .. } => visit_term_consts(val, f),
        Head::HFreshObj { fields, .. } => {
            fields.overrides.iter().for_each(|(_, t)| visit_term_consts(t, f))
        }
        Head::HFreshArr { init, .. } => visit_term_consts(init, f),
        Head::HFreshIntent { val, .. } => visit_term_consts(val, f),
        Head::HArrJoin { add, .. } | Head::HIntentJoin { add, .. } => visit_term_consts(add, f),
        Head::I { val, .. } => visit_term_consts(val, f),
    }
}

// ---------------------------------------------------------------------
// Expression building

fn bv_lit(bits: u128, w: usize) -> String {
    let mut s = String::with_capacity(w + 2);
    s.push_str("#b");
    for i in (0..w).rev() {
        s.push(if bits & (1 << i) != 0 { '1' } else { '0' });
    }
    s
}

fn bv_zero(w: usize) -> String {
    bv_lit(0, w)
}

fn or_all(mut terms: Vec<String>) -> String {
    match terms.len() {
        0 => "false".into(),
        1 => terms.pop().unwrap(),
        _ => format!("(or {})", terms.join(" ")),
    }
}

fn and_all(mut terms: Vec<String>) -> String {
    match terms.len() {
        0 => "true".into(),
        1 => terms.pop().unwrap(),
        _ => format!("(and {})", terms.join(" ")),
    }
}

fn bvor_all(terms: Vec<String>, w: usize) -> String {
    let mut acc: Option<String> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => format!("(bvor {a} {t})"),
        });
    }
    acc.unwrap_or_else(|| bv_zero(w))
}

fn nonzero(e: &str, w: usize) -> String {
    format!("(not (= {e} {}))", bv_zero(w))
}

fn ite(c: &str, t: &str, e: &str) -> String {
    format!("(ite {c} {t} {e})")
}

fn bit_test(expr: &str, bit: usize) -> String {
    format!("(= ((_ extract {bit} {bit}) {expr}) #b1)")
}

/// A symbolic encoded value: one expression per component.
#[derive(Debug, Clone)]
struct SVal {
    pc: String,
    sc: String,
    tp: String, // boolean expression
    ts: String, // boolean expression
    an: String,
}

#[derive(Debug, Clone)]
enum SBind {
    Val(SVal),
    Vec(Vec<SVal>),
    Ann(Annot),
}

fn mangle(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn annot_name(a: &Annot) -> String {
    match a {
        Annot::Pp(pp) => format!("pp_{}_{}_{}", mangle(&pp.class), mangle(&pp.method), pp.pc),
        Annot::Class(c) => format!("cls_{}", mangle(c)),
        Annot::In(c) => format!("in_{}", mangle(c)),
    }
}

/// Shape of each heap relation: the component labels of the stored block.
#[derive(Debug, Clone, PartialEq, Eq)]
enum HShape {
    Obj { class: String, fields: Vec<String> },
    Arr,
    Intent { target: String },
}

pub struct ChcDoc {
    pub text: String,
    pub encoding: Encoding,
    /// Sinks queried, in emission order.
    pub queries: Vec<(String, String)>,
}

struct Emitter<'a> {
    p: &'a Program,
    ap: &'a AbstractProgram,
    enc: Encoding,
    d: Domain,
    shapes: BTreeMap<Annot, HShape>,
    i_pairs: Vec<(String, String)>,
    rules: Vec<String>,
    /// Per-width variable pools: maximum index used.
    pools: BTreeMap<usize, usize>,
    bool_pool: usize,
    next_vars: BTreeMap<usize, usize>,
    next_bool: usize,
}

impl<'a> Emitter<'a> {
    fn fresh_bv(&mut self, w: usize) -> String {
        let n = self.next_vars.entry(w).or_insert(0);
        let name = format!("v{}_bv{w}", *n);
        *n += 1;
        let max = self.pools.entry(w).or_insert(0);
        *max = (*max).max(*n);
        name
    }

    fn reset_rule_vars(&mut self) {
        self.next_vars.clear();
        self.next_bool = 0;
    }

    fn fresh_val(&mut self) -> SVal {
        let cw = self.enc.cw();
        let aw = self.enc.aw();
        let pc = self.fresh_bv(cw);
        let sc = self.fresh_bv(cw);
        let tp = self.fresh_bool();
        let ts = self.fresh_bool();
        let an = self.fresh_bv(aw);
        SVal { pc, sc, tp, ts, an }
    }

    fn fresh_bool(&mut self) -> String {
        let name = format!("b{}", self.next_bool);
        self.next_bool += 1;
        self.bool_pool = self.bool_pool.max(self.next_bool);
        name
    }

    fn const_val(&self, v: &AbsVal) -> Result<SVal, EmitError> {
        let e = self.enc.encode_val(v)?;
        Ok(SVal {
            pc: bv_lit(e.pc, self.enc.cw()),
            sc: bv_lit(e.sc, self.enc.cw()),
            tp: if e.top_pub { "true".into() } else { "false".into() },
            ts: if e.top_sec { "true".into() } else { "false".into() },
            an: bv_lit(e.an, self.enc.aw()),
        })
    }

    fn pres(&self, v: &SVal) -> String {
        format!("(bvor {} {})", v.pc, v.sc)
    }

    fn has_prims(&self, v: &SVal) -> String {
        or_all(vec![nonzero(&self.pres(v), self.enc.cw()), v.tp.clone(), v.ts.clone()])
    }

    fn has_top(&self, v: &SVal) -> String {
        or_all(vec![v.tp.clone(), v.ts.clone()])
    }

    fn side_secret(&self, v: &SVal) -> String {
        or_all(vec![nonzero(&v.sc, self.enc.cw()), v.ts.clone()])
    }

    /// The bitwise-or join of two symbolic values.
    fn join_val(&self, a: &SVal, b: &SVal) -> SVal {
        SVal {
            pc: format!("(bvor {} {})", a.pc, b.pc),
            sc: format!("(bvor {} {})", a.sc, b.sc),
            tp: or_all(vec![a.tp.clone(), b.tp.clone()]),
            ts: or_all(vec![a.ts.clone(), b.ts.clone()]),
            an: format!("(bvor {} {})", a.an, b.an),
        }
    }

    /// Mirrors the abstract binary operator over encoded components.
    fn binop_val(&self, op: BinOp, a: &SVal, b: &SVal) -> SVal {
        let cw = self.enc.cw();
        let empty = format!("(not {})", and_all(vec![self.has_prims(a), self.has_prims(b)]));
        // Pairs producing each table literal, split by taint.
        let mut pc_bits: Vec<String> = Vec::new();
        let mut sc_bits: Vec<String> = Vec::new();
        let mut oot: Vec<String> = Vec::new(); // image outside the table
        let mut div0: Vec<String> = Vec::new();
        let pres_a = self.pres(a);
        let pres_b = self.pres(b);
        for (ia, la) in self.enc.consts.iter().enumerate() {
            for (ib, lb) in self.enc.consts.iter().enumerate() {
                match op.apply(*la, *lb) {
                    Some(r) => {
                        let pair_pub = and_all(vec![bit_test(&a.pc, ia), bit_test(&b.pc, ib)]);
                        let pair_any = and_all(vec![bit_test(&pres_a, ia), bit_test(&pres_b, ib)]);
                        let pair_sec = and_all(vec![
                            pair_any.clone(),
                            or_all(vec![bit_test(&a.sc, ia), bit_test(&b.sc, ib)]),
                        ]);
                        match self.enc.const_idx(&r) {
                            Some(ir) => {
                                pc_bits.push(ite(&pair_pub, &bv_lit(1 << ir, cw), &bv_zero(cw)));
                                sc_bits.push(ite(&pair_sec, &bv_lit(1 << ir, cw), &bv_zero(cw)));
                            }
                            None => oot.push(pair_any),
                        }
                    }
                    None => {
                        let is_div0 = matches!(op, BinOp::Div | BinOp::Rem)
                            && matches!(lb, PrimLit::Int(0))
                            && matches!(la, PrimLit::Int(_));
                        if is_div0 {
                            div0.push(and_all(vec![bit_test(&pres_a, ia), bit_test(&pres_b, ib)]));
                        }
                    }
                }
            }
        }
        let top_case = or_all(vec![
            self.has_top(a),
            self.has_top(b),
            or_all(oot),
            or_all(div0),
        ]);
        let sec_out = or_all(vec![self.side_secret(a), self.side_secret(b)]);
        let image_pc = bvor_all(pc_bits, cw);
        let image_sc = bvor_all(sc_bits, cw);
        SVal {
            pc: ite(&empty, &bv_zero(cw), &ite(&top_case, &bv_zero(cw), &image_pc)),
            sc: ite(&empty, &bv_zero(cw), &ite(&top_case, &bv_zero(cw), &image_sc)),
            tp: and_all(vec![
                format!("(not {empty})"),
                top_case.clone(),
                format!("(not {sec_out})"),
            ]),
            ts: and_all(vec![format!("(not {empty})"), top_case, sec_out]),
            an: bv_zero(self.enc.aw()),
        }
    }

    fn unop_val(&self, op: UnOp, a: &SVal) -> SVal {
        let cw = self.enc.cw();
        let mut pc_bits = Vec::new();
        let mut sc_bits = Vec::new();
        let mut oot = Vec::new(); // image outside the table
        let pres_a = self.pres(a);
        for (ia, la) in self.enc.consts.iter().enumerate() {
            if let Some(r) = op.apply(*la) {
                match self.enc.const_idx(&r) {
                    Some(ir) => {
                        pc_bits.push(ite(&bit_test(&a.pc, ia), &bv_lit(1 << ir, cw), &bv_zero(cw)));
                        sc_bits.push(ite(&bit_test(&a.sc, ia), &bv_lit(1 << ir, cw), &bv_zero(cw)));
                    }
                    None => oot.push(bit_test(&pres_a, ia)),
                }
            }
        }
        let top_case = or_all(vec![self.has_top(a), or_all(oot)]);
        let sec_out = self.side_secret(a);
        SVal {
            pc: ite(&top_case, &bv_zero(cw), &bvor_all(pc_bits, cw)),
            sc: ite(&top_case, &bv_zero(cw), &bvor_all(sc_bits, cw)),
            tp: and_all(vec![top_case.clone(), format!("(not {sec_out})")]),
            ts: and_all(vec![top_case, sec_out]),
            an: bv_zero(self.enc.aw()),
        }
    }

    /// `may-fire` condition of a comparison with the given polarity.
    fn cmp_may(&self, op: CmpOp, expect: bool, a: &SVal, b: &SVal) -> String {
        let aw = self.enc.aw();
        let mut pairs = Vec::new();
        let pres_a = self.pres(a);
        let pres_b = self.pres(b);
        for (ia, la) in self.enc.consts.iter().enumerate() {
            for (ib, lb) in self.enc.consts.iter().enumerate() {
                if op.apply(*la, *lb) == Some(expect) {
                    pairs.push(and_all(vec![bit_test(&pres_a, ia), bit_test(&pres_b, ib)]));
                }
            }
        }
        or_all(vec![
            nonzero(&a.an, aw),
            nonzero(&b.an, aw),
            and_all(vec![
                self.has_prims(a),
                self.has_prims(b),
                or_all(vec![self.has_top(a), self.has_top(b), or_all(pairs)]),
            ]),
        ])
    }

    /// Branch refinement over encoded components, mirroring the engine.
    fn refine_pair(&self, op: CmpOp, expect: bool, a: &SVal, b: &SVal) -> (SVal, SVal) {
        let cw = self.enc.cw();
        let aw = self.enc.aw();
        let refinable = and_all(vec![
            format!("(= {} {})", a.an, bv_zero(aw)),
            format!("(= {} {})", b.an, bv_zero(aw)),
            format!("(not {})", self.has_top(a)),
            format!("(not {})", self.has_top(b)),
        ]);
        let keep_mask = |other: &SVal, flip: bool| -> String {
            let pres_other = self.pres(other);
            let mut bits = Vec::new();
            for (i, l) in self.enc.consts.iter().enumerate() {
                // Partner constants on the other side consistent with
                // the branch.
                let mut partner: u128 = 0;
                for (j, l2) in self.enc.consts.iter().enumerate() {
                    let ok = if flip { op.apply(*l2, *l) } else { op.apply(*l, *l2) };
                    if ok == Some(expect) {
                        partner |= 1 << j;
                    }
                }
                let keep = nonzero(&format!("(bvand {} {})", pres_other, bv_lit(partner, cw)), cw);
                bits.push(ite(&keep, &bv_lit(1 << i, cw), &bv_zero(cw)));
            }
            bvor_all(bits, cw)
        };
        let mask_a = keep_mask(b, false);
        let mask_b = keep_mask(a, true);
        let refined = |v: &SVal, mask: &String| SVal {
            pc: ite(&refinable, &format!("(bvand {} {mask})", v.pc), &v.pc),
            sc: ite(&refinable, &format!("(bvand {} {mask})", v.sc), &v.sc),
            tp: v.tp.clone(),
            ts: v.ts.clone(),
            an: v.an.clone(),
        };
        (refined(a, &mask_a), refined(b, &mask_b))
    }

    fn eval_term(&mut self, env: &BTreeMap<VarId, SBind>, t: &Term) -> Result<SVal, EmitError> {
        Ok(match t {
            Term::Const(v) => self.const_val(v)?,
            Term::Var(v) => match env.get(v) {
                Some(SBind::Val(x)) => x.clone(),
                other => panic!("emission: x{v} is not a value: {other:?}"),
            },
            Term::Proj(v, i) => match env.get(v) {
                Some(SBind::Vec(xs)) => xs
                    .get(*i)
                    .cloned()
                    .unwrap_or_else(|| self.const_val(&AbsVal::bottom()).unwrap()),
                other => panic!("emission: x{v} is not a vector: {other:?}"),
            },
            Term::AnnSet(v) => {
                let a = env_ann(env, *v);
                self.const_val(&AbsVal::annot(a))?
            }
            Term::InSet(v) => match env_ann(env, *v) {
                Annot::Class(c) => self.const_val(&AbsVal::annot(Annot::In(c)))?,
                a => panic!("emission: in(_) of non-class annotation {a}"),
            },
            Term::Binop(op, a, b) => {
                let a = self.eval_term(env, a)?;
                let b = self.eval_term(env, b)?;
                self.binop_val(*op, &a, &b)
            }
            Term::Unop(op, a) => {
                let a = self.eval_term(env, a)?;
                self.unop_val(*op, &a)
            }
        })
    }

    fn eval_vecterm(&mut self, env: &BTreeMap<VarId, SBind>, t: &VecTerm) -> Result<Vec<SVal>, EmitError> {
        Ok(match t {
            VecTerm::Var(v) => match env.get(v) {
                Some(SBind::Vec(xs)) => xs.clone(),
                other => panic!("emission: x{v} is not a vector: {other:?}"),
            },
            VecTerm::Build(ts) => {
                let mut out = Vec::new();
                for t in ts {
                    out.push(self.eval_term(env, t)?);
                }
                out
            }
            VecTerm::Update(v, i, t) => {
                let mut xs = match env.get(v) {
                    Some(SBind::Vec(xs)) => xs.clone(),
                    other => panic!("emission: x{v} is not a vector: {other:?}"),
                };
                let val = self.eval_term(env, t)?;
                if *i < xs.len() {
                    xs[*i] = val;
                }
                xs
            }
        })
    }

    fn val_args(v: &SVal) -> String {
        format!("{} {} {} {} {}", v.pc, v.sc, v.tp, v.ts, v.an)
    }

    fn r_rel(&self, class: &str, method: &str) -> String {
        format!("R_{}_{}", mangle(class), mangle(method))
    }

    fn res_rel(&self, class: &str, method: &str) -> String {
        format!("Res_{}_{}", mangle(class), mangle(method))
    }

    fn rhs_rel(&self, class: &str, method: &str) -> String {
        format!("RHS_{}_{}", mangle(class), mangle(method))
    }

    fn s_rel(&self, class: &str, field: &str) -> String {
        format!("S_{}_{}", mangle(class), mangle(field))
    }

    fn h_rel(&self, a: &Annot) -> String {
        format!("H_{}", annot_name(a))
    }

    fn i_rel(&self, owner: &str, target: &str) -> String {
        format!("I_{}_{}", mangle(owner), mangle(target))
    }

    fn pc_width(&self, class: &str, method: &str) -> usize {
        let len = self
            .p
            .class(class)
            .and_then(|c| c.method(method))
            .map(|m| m.body.len() + 1)
            .unwrap_or(2);
        (usize::BITS - (len - 1).max(1).leading_zeros()) as usize
    }

    fn r_app(&mut self, class: &str, method: &str, pc: usize, comps: &[SVal]) -> String {
        let w = self.pc_width(class, method);
        let args: Vec<String> = comps.iter().map(Self::val_args).collect();
        format!("({} {} {})", self.r_rel(class, method), bv_lit(pc as u128, w), args.join(" "))
    }

    /// Emits one grounded rule; `body` holds relation atoms and
    /// constraints.
    fn push_rule(&mut self, body: Vec<String>, head: String) {
        let rule = if body.is_empty() {
            format!("(rule {head})")
        } else {
            format!("(rule (=> {} {head}))", and_all(body))
        };
        self.rules.push(rule);
    }

    /// Recursively grounds and emits one clause.
    fn emit_clause(&mut self, clause: &Clause) -> Result<(), EmitError> {
        self.reset_rule_vars();
        let mut env = BTreeMap::new();
        let mut body = Vec::new();
        let mut tuples = BTreeMap::new();
        self.emit_atoms(&clause.body, 0, &mut env, &mut tuples, &mut body, &clause.head)
    }

    #[allow(clippy::too_many_arguments)]
    fn emit_atoms(
        &mut self,
        atoms: &[Atom],
        idx: usize,
        env: &mut BTreeMap<VarId, SBind>,
        tuples: &mut BTreeMap<Annot, Vec<SVal>>,
        body: &mut Vec<String>,
        head: &Head,
    ) -> Result<(), EmitError> {
        let Some(atom) = atoms.get(idx) else {
            let head_app = self.emit_head(env, tuples, head)?;
            if let Some(head_app) = head_app {
                self.push_rule(body.clone(), head_app);
            }
            return Ok(());
        };
        match atom {
            Atom::R { pp, ctx, regs } => {
                let Some(m) = self.p.class(&pp.class).and_then(|c| c.method(&pp.method)) else {
                    return Ok(());
                };
                let arity = m.params.len();
                let width = reg_width(m);
                let ctx_vals: Vec<SVal> = (0..arity).map(|_| self.fresh_val()).collect();
                let reg_vals: Vec<SVal> = (0..width).map(|_| self.fresh_val()).collect();
                let mut comps = ctx_vals.clone();
                comps.extend(reg_vals.clone());
                let app = self.r_app(&pp.class, &pp.method, pp.pc, &comps);
                body.push(app);
                env.insert(*ctx, SBind::Vec(ctx_vals));
                env.insert(*regs, SBind::Vec(reg_vals));
                self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                body.pop();
            }
            Atom::Rhs { pp, val } => {
                let v = self.fresh_val();
                let w = self.pc_width(&pp.class, &pp.method);
                body.push(format!(
                    "({} {} {})",
                    self.rhs_rel(&pp.class, &pp.method),
                    bv_lit(pp.pc as u128, w),
                    Self::val_args(&v)
                ));
                env.insert(*val, SBind::Val(v));
                self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                body.pop();
            }
            Atom::SFld { class, field, val } => {
                let v = self.fresh_val();
                body.push(format!("({} {})", self.s_rel(class, field), Self::val_args(&v)));
                env.insert(*val, SBind::Val(v));
                self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                body.pop();
            }
            Atom::Res { class, method, ctx, ret } => {
                let tuple = self.eval_vecterm(env, ctx)?;
                let v = self.fresh_val();
                let mut args: Vec<String> = tuple.iter().map(Self::val_args).collect();
                args.push(Self::val_args(&v));
                body.push(format!("({} {})", self.res_rel(class, method), args.join(" ")));
                env.insert(*ret, SBind::Val(v));
                self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                body.pop();
            }
            Atom::Member { of, ann } => {
                let v = self.eval_term(env, of)?;
                for (i, a) in self.enc.annots.clone().iter().enumerate() {
                    body.push(bit_test(&v.an, i));
                    env.insert(*ann, SBind::Ann(a.clone()));
                    self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                    body.pop();
                }
            }
            Atom::H { key, pat } => {
                let candidates: Vec<Annot> = match key {
                    AnnTerm::Const(a) => vec![a.clone()],
                    AnnTerm::In(v) => match env_ann(env, *v) {
                        Annot::Class(c) => vec![Annot::In(c)],
                        _ => vec![],
                    },
                    AnnTerm::Var(v) => match env.get(v) {
                        Some(SBind::Ann(a)) => vec![a.clone()],
                        _ => self.enc.annots.clone(),
                    },
                };
                for a in candidates {
                    let Some(shape) = self.shapes.get(&a).cloned() else { continue };
                    if !self.h_pattern_ok(&a, &shape, pat) {
                        continue;
                    }
                    let comps: Vec<SVal> = (0..shape_width(&shape)).map(|_| self.fresh_val()).collect();
                    let args: Vec<String> = comps.iter().map(Self::val_args).collect();
                    body.push(format!("({} {})", self.h_rel(&a), args.join(" ")));
                    if let AnnTerm::Var(v) = key {
                        env.insert(*v, SBind::Ann(a.clone()));
                    }
                    self.bind_h_pattern(&a, &shape, pat, &comps, env);
                    // Remember the matched tuple for rebuilding heads.
                    let prev = tuples.insert(a.clone(), comps);
                    self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                    if let Some(prev) = prev {
                        tuples.insert(a.clone(), prev);
                    } else {
                        tuples.remove(&a);
                    }
                    body.pop();
                }
            }
            Atom::I { owner, target, val } => {
                for (o, t) in self.i_pairs.clone() {
                    let v = self.fresh_val();
                    body.push(format!("({} {})", self.i_rel(&o, &t), Self::val_args(&v)));
                    env.insert(*owner, SBind::Ann(Annot::Class(o.clone())));
                    env.insert(*target, SBind::Ann(Annot::Class(t.clone())));
                    env.insert(*val, SBind::Val(v));
                    self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                    body.pop();
                }
            }
            Atom::Guard(g) => match g {
                Guard::ClassLe { class, sup } => {
                    if let Annot::Class(c) = env_ann(env, *class) {
                        if hier::subtype(&Ty::Class(c), &Ty::Class(sup.clone()), self.p) {
                            self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                        }
                    }
                }
                Guard::IsActivity { class } => {
                    if let Annot::Class(c) = env_ann(env, *class) {
                        if hier::is_activity_class(self.p, &c) {
                            self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                        }
                    }
                }
                Guard::BlockTypeLe { ann, ty, expect } => {
                    let a = env_ann(env, *ann);
                    let Some(bt) = self.ap.universe.get(&a) else { return Ok(()) };
                    if hier::subtype(bt, ty, self.p) == *expect {
                        self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                    }
                }
                Guard::Cmp { op, lhs, rhs, expect } => {
                    let a = self.eval_term(env, lhs)?;
                    let b = self.eval_term(env, rhs)?;
                    body.push(self.cmp_may(*op, *expect, &a, &b));
                    // Refinement mirrors the engine: rebind compared
                    // register slots to the branch-consistent literals.
                    let saved_a = refine_slot(env, lhs);
                    let saved_b = refine_slot(env, rhs);
                    if saved_a.is_some() || saved_b.is_some() {
                        let (ra, rb) = self.refine_pair(*op, *expect, &a, &b);
                        apply_refined(env, lhs, ra);
                        apply_refined(env, rhs, rb);
                    }
                    self.emit_atoms(atoms, idx + 1, env, tuples, body, head)?;
                    restore_slot(env, lhs, saved_a);
                    restore_slot(env, rhs, saved_b);
                    body.pop();
                }
            },
        }
        Ok(())
    }

    fn h_pattern_ok(&self, a: &Annot, shape: &HShape, pat: &BlockPat) -> bool {
        match pat {
            BlockPat::Any => true,
            BlockPat::Arr { .. } => matches!(shape, HShape::Arr),
            BlockPat::Intent { .. } => matches!(shape, HShape::Intent { .. }),
            BlockPat::Obj { class, .. } => match shape {
                HShape::Obj { class: c, .. } => match class {
                    ClassPat::Bind(_) => true,
                    ClassPat::EqualsKey => *a == Annot::Class(c.clone()),
                },
                _ => false,
            },
        }
    }

    fn bind_h_pattern(
        &self,
        _a: &Annot,
        shape: &HShape,
        pat: &BlockPat,
        comps: &[SVal],
        env: &mut BTreeMap<VarId, SBind>,
    ) {
        match (pat, shape) {
            (BlockPat::Arr { val }, HShape::Arr) => {
                env.insert(*val, SBind::Val(comps[0].clone()));
            }
            (BlockPat::Intent { target, val }, HShape::Intent { target: t }) => {
                env.insert(*target, SBind::Ann(Annot::Class(t.clone())));
                env.insert(*val, SBind::Val(comps[0].clone()));
            }
            (BlockPat::Obj { class, binds }, HShape::Obj { class: c, fields }) => {
                if let ClassPat::Bind(v) = class {
                    env.insert(*v, SBind::Ann(Annot::Class(c.clone())));
                }
                for (f, v) in binds {
                    if let Some(i) = fields.iter().position(|g| g == f) {
                        env.insert(*v, SBind::Val(comps[i].clone()));
                    }
                }
            }
            _ => {}
        }
    }

    /// Builds the head application; `None` drops the grounded rule (for
    /// instance a field update against a block lacking the field).
    fn emit_head(
        &mut self,
        env: &BTreeMap<VarId, SBind>,
        tuples: &BTreeMap<Annot, Vec<SVal>>,
        head: &Head,
    ) -> Result<Option<String>, EmitError> {
        Ok(match head {
            Head::R { pp, ctx, regs } => {
                if self.p.class(&pp.class).and_then(|c| c.method(&pp.method)).is_none() {
                    return Ok(None);
                }
                let mut comps = self.eval_vecterm(env, ctx)?;
                comps.extend(self.eval_vecterm(env, regs)?);
                Some(self.r_app(&pp.class, &pp.method, pp.pc, &comps))
            }
            Head::Rhs { pp, val } => {
                let v = self.eval_term(env, val)?;
                let w = self.pc_width(&pp.class, &pp.method);
                Some(format!(
                    "({} {} {})",
                    self.rhs_rel(&pp.class, &pp.method),
                    bv_lit(pp.pc as u128, w),
                    Self::val_args(&v)
                ))
            }
            Head::SFld { class, field, val } => {
                let v = self.eval_term(env, val)?;
                Some(format!("({} {})", self.s_rel(class, field), Self::val_args(&v)))
            }
            Head::Res { class, method, ctx, ret } => {
                let tuple = self.eval_vecterm(env, ctx)?;
                let v = self.eval_term(env, ret)?;
                let mut args: Vec<String> = tuple.iter().map(Self::val_args).collect();
                args.push(Self::val_args(&v));
                Some(format!("({} {})", self.res_rel(class, method), args.join(" ")))
            }
            Head::HObjField { key, field, val } => {
                let a = env_ann(env, *key);
                let Some(HShape::Obj { fields, .. }) = self.shapes.get(&a).cloned() else {
                    return Ok(None);
                };
                let Some(i) = fields.iter().position(|f| f == field) else { return Ok(None) };
                let Some(tuple) = tuples.get(&a) else { return Ok(None) };
                let mut comps = tuple.clone();
                comps[i] = self.eval_term(env, val)?;
                let args: Vec<String> = comps.iter().map(Self::val_args).collect();
                Some(format!("({} {})", self.h_rel(&a), args.join(" ")))
            }
            Head::HFreshObj { key, class, fields } => {
                let a = eval_annterm_emit(env, key);
                let cls = match class {
                    Some(c) => c.clone(),
                    None => match &a {
                        Annot::Class(c) => c.clone(),
                        _ => return Ok(None),
                    },
                };
                if !self.shapes.contains_key(&a) {
                    return Ok(None);
                }
                let mut comps = Vec::new();
                for f in hier::fields_of(self.p, &cls) {
                    let mut v = self.const_val(&self.d.default_abs(&f.ty))?;
                    for (name, t) in &fields.overrides {
                        if *name == f.name {
                            v = self.eval_term(env, t)?;
                        }
                    }
                    comps.push(v);
                }
                let args: Vec<String> = comps.iter().map(Self::val_args).collect();
                Some(format!("({} {})", self.h_rel(&a), args.join(" ")))
            }
            Head::HFreshArr { key, init, .. } => {
                let v = self.eval_term(env, init)?;
                Some(format!("({} {})", self.h_rel(key), Self::val_args(&v)))
            }
            Head::HFreshIntent { key, val, .. } => {
                let a = eval_annterm_emit(env, key);
                if !self.shapes.contains_key(&a) {
                    return Ok(None);
                }
                let v = self.eval_term(env, val)?;
                Some(format!("({} {})", self.h_rel(&a), Self::val_args(&v)))
            }
            Head::HArrJoin { key, old, add } | Head::HIntentJoin { key, old, add } => {
                let a = env_ann(env, *key);
                let old = match env.get(old) {
                    Some(SBind::Val(v)) => v.clone(),
                    _ => return Ok(None),
                };
                let add = self.eval_term(env, add)?;
                let v = self.join_val(&old, &add);
                Some(format!("({} {})", self.h_rel(&a), Self::val_args(&v)))
            }
            Head::I { owner, target, val } => {
                let Annot::Class(t) = env_ann(env, *target) else { return Ok(None) };
                if !self.i_pairs.iter().any(|(o, t2)| o == owner && *t2 == t) {
                    return Ok(None);
                }
                let v = self.eval_term(env, val)?;
                Some(format!("({} {})", self.i_rel(owner, &t), Self::val_args(&v)))
            }
        })
    }
}

fn env_ann(env: &BTreeMap<VarId, SBind>, v: VarId) -> Annot {
    match env.get(&v) {
        Some(SBind::Ann(a)) => a.clone(),
        other => panic!("emission: x{v} is not an annotation: {other:?}"),
    }
}

fn eval_annterm_emit(env: &BTreeMap<VarId, SBind>, t: &AnnTerm) -> Annot {
    match t {
        AnnTerm::Var(v) => env_ann(env, *v),
        AnnTerm::In(v) => match env_ann(env, *v) {
            Annot::Class(c) => Annot::In(c),
            a => panic!("emission: in(_) of non-class annotation {a}"),
        },
        AnnTerm::Const(a) => a.clone(),
    }
}

/// If the guard term is a register projection, returns the saved slot.
fn refine_slot(env: &BTreeMap<VarId, SBind>, t: &Term) -> Option<SVal> {
    if let Term::Proj(v, i) = t {
        if let Some(SBind::Vec(xs)) = env.get(v) {
            return xs.get(*i).cloned();
        }
    }
    None
}

fn apply_refined(env: &mut BTreeMap<VarId, SBind>, t: &Term, refined: SVal) {
    if let Term::Proj(v, i) = t {
        if let Some(SBind::Vec(xs)) = env.get_mut(v) {
            if *i < xs.len() {
                xs[*i] = refined;
            }
        }
    }
}

fn restore_slot(env: &mut BTreeMap<VarId, SBind>, t: &Term, saved: Option<SVal>) {
    if let (Term::Proj(v, i), Some(saved)) = (t, saved) {
        if let Some(SBind::Vec(xs)) = env.get_mut(v) {
            if *i < xs.len() {
                xs[*i] = saved;
            }
        }
    }
}

fn shape_width(s: &HShape) -> usize {
    match s {
        HShape::Obj { fields, .. } => fields.len(),
        HShape::Arr | HShape::Intent { .. } => 1,
    }
}

fn block_shapes(p: &Program, ap: &AbstractProgram) -> BTreeMap<Annot, HShape> {
    let mut out = BTreeMap::new();
    for (a, ty) in &ap.universe {
        let shape = match (a, ty) {
            (_, Ty::Array(_)) => HShape::Arr,
            (Annot::In(c), _) => HShape::Intent { target: c.clone() },
            (_, Ty::Class(c)) if c == INTENT_CLASS => {
                // Intent allocation site: the target is the class named
                // by the statement.
                let target = intent_target_at(p, a).unwrap_or_else(|| INTENT_CLASS.into());
                HShape::Intent { target }
            }
            (_, Ty::Class(c)) => HShape::Obj {
                class: c.clone(),
                fields: hier::fields_of(p, c).into_iter().map(|f| f.name.clone()).collect(),
            },
            _ => continue,
        };
        out.insert(a.clone(), shape);
    }
    out
}

fn intent_target_at(p: &Program, a: &Annot) -> Option<String> {
    let Annot::Pp(pp) = a else { return None };
    let st = p.class(&pp.class)?.method(&pp.method)?.body.get(pp.pc)?;
    match st {
        Stmt::NewIntent { target, .. } => Some(target.clone()),
        _ => None,
    }
}

/// Emits the abstract program and sink queries as a deterministic
/// fixedpoint script.
pub fn emit_chc(
    p: &Program,
    ap: &AbstractProgram,
    sinks: &BTreeSet<(String, String)>,
    model: Option<&Model>,
) -> Result<ChcDoc, EmitError> {
    let enc = Encoding::build(p, ap, model)?;
    let shapes = block_shapes(p, ap);
    let i_pairs: Vec<(String, String)> = {
        let owners: Vec<String> = hier::activity_classes(p).iter().map(|c| c.name.clone()).collect();
        let mut targets: BTreeSet<String> = owners.iter().cloned().collect();
        for s in shapes.values() {
            if let HShape::Intent { target } = s {
                targets.insert(target.clone());
            }
        }
        owners
            .iter()
            .flat_map(|o| targets.iter().map(move |t| (o.clone(), t.clone())))
            .collect()
    };
    let d = ap.domain;
    let mut em = Emitter {
        p,
        ap,
        enc,
        d,
        shapes,
        i_pairs,
        rules: Vec::new(),
        pools: BTreeMap::new(),
        bool_pool: 0,
        next_vars: BTreeMap::new(),
        next_bool: 0,
    };

    for clause in &ap.clauses {
        em.emit_clause(clause)?;
    }

    // Secret-reachability per annotation, for the leak queries.
    let universe = em.enc.annots.clone();
    for a in &universe {
        let Some(shape) = em.shapes.get(a).cloned() else { continue };
        let rel = em.h_rel(a);
        let secret = format!("secret_{}", annot_name(a));
        for k in 0..shape_width(&shape) {
            em.reset_rule_vars();
            let comps: Vec<SVal> = (0..shape_width(&shape)).map(|_| em.fresh_val()).collect();
            let args: Vec<String> = comps.iter().map(Emitter::val_args).collect();
            let app = format!("({rel} {})", args.join(" "));
            let direct = em.side_secret(&comps[k]);
            em.push_rule(vec![app.clone(), direct], secret.clone());
            for (i, a2) in universe.iter().enumerate() {
                if em.shapes.contains_key(a2) {
                    em.push_rule(
                        vec![
                            app.clone(),
                            bit_test(&comps[k].an, i),
                            format!("secret_{}", annot_name(a2)),
                        ],
                        secret.clone(),
                    );
                }
            }
        }
    }

    // Leak queries per sink register slot.
    let mut queries: Vec<(String, String)> = Vec::new();
    for (c, m) in sinks {
        let Some((def_cls, def)) = hier::lookup(p, c, m) else { continue };
        let leak = format!("leak_{}_{}", mangle(c), mangle(m));
        let width = reg_width(def);
        let arity = def.params.len();
        for k in 0..width {
            em.reset_rule_vars();
            let comps: Vec<SVal> = (0..arity + width).map(|_| em.fresh_val()).collect();
            let app = em.r_app(&def_cls.name, &m.clone(), 0, &comps);
            let reg = &comps[arity + k];
            em.push_rule(vec![app.clone(), em.side_secret(reg)], leak.clone());
            for (i, a) in universe.iter().enumerate() {
                if em.shapes.contains_key(a) {
                    em.push_rule(
                        vec![app.clone(), bit_test(&reg.an, i), format!("secret_{}", annot_name(a))],
                        leak.clone(),
                    );
                }
            }
        }
        queries.push((c.clone(), m.clone()));
    }

    // Assemble: declarations, variables, rules, queries.
    let mut text = String::new();
    let _ = writeln!(text, "; constrained Horn clauses over bit-vector value encodings");
    let _ = writeln!(
        text,
        "; domain {} | {} constants | {} annotations",
        d.name(),
        em.enc.consts.len(),
        em.enc.annots.len()
    );
    let _ = writeln!(text, "; constants: {}", em.enc.consts.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(text, "; annotations: {}", em.enc.annots.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "));

    let cw = em.enc.cw();
    let aw = em.enc.aw();
    let tw = em.enc.tw();
    let comp_sorts = format!("(_ BitVec {cw}) (_ BitVec {cw}) Bool Bool (_ BitVec {aw})");
    let val_sort_list = |n: usize| -> String {
        (0..n).map(|_| comp_sorts.clone()).collect::<Vec<_>>().join(" ")
    };

    let _ = writeln!(text, "(declare-rel sub ((_ BitVec {tw}) (_ BitVec {tw})))");
    for class in &p.classes {
        for m in &class.methods {
            let w = em.pc_width(&class.name, &m.name);
            let arity = m.params.len();
            let width = reg_width(m);
            let _ = writeln!(
                text,
                "(declare-rel {} ((_ BitVec {w}) {}))",
                em.r_rel(&class.name, &m.name),
                val_sort_list(arity + width)
            );
            let _ = writeln!(
                text,
                "(declare-rel {} ({}))",
                em.res_rel(&class.name, &m.name),
                val_sort_list(arity + 1)
            );
            let _ = writeln!(
                text,
                "(declare-rel {} ((_ BitVec {w}) {}))",
                em.rhs_rel(&class.name, &m.name),
                val_sort_list(1)
            );
        }
        for f in hier::fields_of(p, &class.name) {
            let _ = writeln!(text, "(declare-rel {} ({}))", em.s_rel(&class.name, &f.name), val_sort_list(1));
        }
    }
    for (a, shape) in &em.shapes {
        let _ = writeln!(text, "(declare-rel {} ({}))", em.h_rel(a), val_sort_list(shape_width(shape)));
    }
    for (o, t) in &em.i_pairs {
        let _ = writeln!(text, "(declare-rel {} ({}))", em.i_rel(o, t), val_sort_list(1));
    }
    for a in &universe {
        if em.shapes.contains_key(a) {
            let _ = writeln!(text, "(declare-rel secret_{} ())", annot_name(a));
        }
    }
    for (c, m) in &queries {
        let _ = writeln!(text, "(declare-rel leak_{}_{} ())", mangle(c), mangle(m));
    }

    for (w, n) in &em.pools {
        for i in 0..*n {
            let _ = writeln!(text, "(declare-var v{i}_bv{w} (_ BitVec {w}))");
        }
    }
    for i in 0..em.bool_pool {
        let _ = writeln!(text, "(declare-var b{i} Bool)");
    }

    // Ground subtyping axioms.
    for (a, b) in &ap.sub_facts {
        let ia = em.enc.types.iter().position(|t| t == a);
        let ib = em.enc.types.iter().position(|t| t == b);
        if let (Some(ia), Some(ib)) = (ia, ib) {
            let _ = writeln!(text, "(rule (sub {} {}))", bv_lit(ia as u128, tw), bv_lit(ib as u128, tw));
        }
    }

    for r in &em.rules {
        let _ = writeln!(text, "{r}");
    }
    for (c, m) in &queries {
        let _ = writeln!(text, "(query leak_{}_{})", mangle(c), mangle(m));
    }

    let mut encoding = em.enc;
    for class in &p.classes {
        for m in &class.methods {
            encoding
                .relation_names
                .insert(format!("R {}.{}", class.name, m.name), format!("R_{}_{}", mangle(&class.name), mangle(&m.name)));
        }
    }
    Ok(ChcDoc { text, encoding, queries })
}

// ---------------------------------------------------------------------
// External solver bridge

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVerdict {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    /// One verdict per emitted query, in order.
    pub verdicts: Vec<SolverVerdict>,
    pub diagnostics: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("empty solver command")]
    EmptyCommand,
    #[error("cannot launch solver `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("cannot write solver input: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs `<command> <file>` on the document and parses one
/// `sat`/`unsat`/`unknown` line per query from standard output. Missing
/// or garbled answers degrade to unknown with the solver output attached.
pub fn run_external(doc: &str, command: &str) -> Result<SolverOutcome, SolverError> {
    let mut parts = command.split_whitespace();
    let program = parts.next().ok_or(SolverError::EmptyCommand)?;
    let args: Vec<&str> = parts.collect();

    let path = std::env::temp_dir().join(format!(
        "microdroid-chc-{}-{}.smt2",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::write(&path, doc)?;
    let result = std::process::Command::new(program).args(&args).arg(&path).output();
    let _ = std::fs::remove_file(&path);
    let output = result.map_err(|source| SolverError::Spawn { command: command.to_string(), source })?;

    let stdout = String::from_utf8_lossy(&output.stdout);
    let stderr = String::from_utf8_lossy(&output.stderr);
    let mut verdicts = Vec::new();
    for line in stdout.lines() {
        match line.trim() {
            "sat" => verdicts.push(SolverVerdict::Sat),
            "unsat" => verdicts.push(SolverVerdict::Unsat),
            "unknown" => verdicts.push(SolverVerdict::Unknown),
            _ => {}
        }
    }
    Ok(SolverOutcome { verdicts, diagnostics: format!("{stdout}{stderr}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absdom::DEFAULT_CONST_CAP;
    use crate::parse::parse_program;

    fn fixture() -> (Program, AbstractProgram) {
        let p = parse_program(
            r#"(program (entry A)
                 (class Log
                   (method leak (static) (args int) (returns int) (locals 0)
                     (0 (return))))
                 (class A (super Activity)
                   (activity (callbacks (onCreate boot)))
                   (method boot (args) (returns int) (locals 1)
                     (0 (move (reg 0) (prim int 5)))
                     (1 (sinvoke Log leak (reg 0)))
                     (2 (return)))))"#,
        )
        .unwrap();
        let ap = translate_program(&p, Domain::const_set(DEFAULT_CONST_CAP));
        (p, ap)
    }

    #[test]
    fn encode_decode_round_trip() {
        let (p, ap) = fixture();
        let enc = Encoding::build(&p, &ap, None).unwrap();
        let d = Domain::const_set(DEFAULT_CONST_CAP);
        let mut samples: Vec<AbsVal> = vec![
            AbsVal::bottom(),
            d.beta_prim(PrimLit::Int(5), Taint::Public),
            d.beta_prim(PrimLit::Null, Taint::Secret),
            AbsVal { prims: PrimAbs::Top(Taint::Secret), annots: Default::default() },
        ];
        samples.push(d.join(&samples[1], &d.beta_prim(PrimLit::Bool(true), Taint::Secret)));
        for a in &enc.annots {
            samples.push(AbsVal::annot(a.clone()));
        }
        for v in &samples {
            let e = enc.encode_val(v).unwrap();
            assert_eq!(enc.decode_val(&e), *v, "round trip failed for {v}");
        }
    }

    #[test]
    fn unknown_constant_is_reported() {
        let (p, ap) = fixture();
        let enc = Encoding::build(&p, &ap, None).unwrap();
        let d = Domain::const_set(DEFAULT_CONST_CAP);
        let v = d.beta_prim(PrimLit::Int(424242), Taint::Public);
        assert!(matches!(enc.encode_val(&v), Err(EmitError::UnknownConst(_))));
    }

    #[test]
    fn emission_is_wellformed_and_deterministic() {
        let (p, ap) = fixture();
        let sinks = BTreeSet::from([("Log".to_string(), "leak".to_string())]);
        let doc1 = emit_chc(&p, &ap, &sinks, None).unwrap();
        let doc2 = emit_chc(&p, &ap, &sinks, None).unwrap();
        assert_eq!(doc1.text, doc2.text, "emission must be byte-deterministic");
        // The document parses as a sequence of s-expressions.
        let forms = crate::sexp::read_all(&doc1.text).expect("script must be balanced");
        assert!(forms.iter().any(|f| f.to_string().starts_with("(rule")));
        assert!(forms.iter().any(|f| f.to_string() == "(query leak_Log_leak)"));
        assert_eq!(doc1.queries, vec![("Log".to_string(), "leak".to_string())]);
    }

    #[test]
    fn empty_query_list_emits_rules_only() {
        let (p, ap) = fixture();
        let doc = emit_chc(&p, &ap, &BTreeSet::new(), None).unwrap();
        assert!(!doc.text.contains("(query"));
        assert!(doc.text.contains("(rule"));
    }

    /// A tiny evaluator for the closed expressions the emitter builds,
    /// so the operator encodings can be checked against the domain
    /// without a solver.
    mod expr {
        use crate::sexp::{read_all, Sexp};

        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum V {
            Bits(u128, usize),
            Bool(bool),
        }

        impl V {
            pub fn bits(self) -> u128 {
                match self {
                    V::Bits(b, _) => b,
                    V::Bool(_) => panic!("expected bits"),
                }
            }

            pub fn truth(self) -> bool {
                match self {
                    V::Bool(b) => b,
                    V::Bits(..) => panic!("expected bool"),
                }
            }
        }

        pub fn eval_str(s: &str) -> V {
            let forms = read_all(s).expect("closed expression");
            assert_eq!(forms.len(), 1, "one expression expected in `{s}`");
            eval(&forms[0])
        }

        fn eval(e: &Sexp) -> V {
            match e {
                Sexp::Atom { text, .. } => match text.as_str() {
                    "true" => V::Bool(true),
                    "false" => V::Bool(false),
                    t if t.starts_with("#b") => {
                        let w = t.len() - 2;
                        V::Bits(u128::from_str_radix(&t[2..], 2).unwrap(), w)
                    }
                    t => panic!("unbound atom `{t}`"),
                },
                Sexp::List { items, .. } => {
                    let head = items[0].atom().unwrap_or("");
                    match head {
                        "bvor" => {
                            let (a, b) = (eval(&items[1]), eval(&items[2]));
                            match (a, b) {
                                (V::Bits(x, w), V::Bits(y, _)) => V::Bits(x | y, w),
                                _ => panic!("bvor on bools"),
                            }
                        }
                        "bvand" => {
                            let (a, b) = (eval(&items[1]), eval(&items[2]));
                            match (a, b) {
                                (V::Bits(x, w), V::Bits(y, _)) => V::Bits(x & y, w),
                                _ => panic!("bvand on bools"),
                            }
                        }
                        "ite" => {
                            if eval(&items[1]).truth() {
                                eval(&items[2])
                            } else {
                                eval(&items[3])
                            }
                        }
                        "=" => V::Bool(eval(&items[1]) == eval(&items[2])),
                        "not" => V::Bool(!eval(&items[1]).truth()),
                        "or" => V::Bool(items[1..].iter().any(|x| eval(x).truth())),
                        "and" => V::Bool(items[1..].iter().all(|x| eval(x).truth())),
                        "_" => panic!("indexed identifier outside application"),
                        _ => {
                            // ((_ extract i i) x)
                            if let Some(parts) = items[0].list() {
                                if parts.first().and_then(|p| p.atom()) == Some("_")
                                    && parts.get(1).and_then(|p| p.atom()) == Some("extract")
                                {
                                    let hi: usize = parts[2].atom().unwrap().parse().unwrap();
                                    let lo: usize = parts[3].atom().unwrap().parse().unwrap();
                                    let x = eval(&items[1]).bits();
                                    let width = hi - lo + 1;
                                    let mask = if width >= 128 { u128::MAX } else { (1 << width) - 1 };
                                    return V::Bits((x >> lo) & mask, width);
                                }
                            }
                            panic!("unknown operator `{head}` in `{e}`")
                        }
                    }
                }
            }
        }
    }

    mod operator_encodings {
        use super::expr::{eval_str, V};
        use super::*;
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        use std::collections::BTreeSet;

        fn setup() -> (Program, AbstractProgram, Encoding, Emitter<'static>) {
            // Leak the fixture so the emitter can borrow it for the
            // whole test; fine in test code.
            let (p, ap) = super::fixture();
            let p: &'static Program = Box::leak(Box::new(p));
            let ap: &'static AbstractProgram = Box::leak(Box::new(ap));
            let enc = Encoding::build(p, ap, None).unwrap();
            let emitter = Emitter {
                p,
                ap,
                enc: enc.clone(),
                d: ap.domain,
                shapes: super::block_shapes(p, ap),
                i_pairs: vec![],
                rules: vec![],
                pools: Default::default(),
                bool_pool: 0,
                next_vars: Default::default(),
                next_bool: 0,
            };
            (p.clone(), ap.clone(), enc, emitter)
        }

        fn random_val(rng: &mut ChaCha8Rng, enc: &Encoding, d: &Domain) -> AbsVal {
            if rng.gen_bool(0.15) {
                let taint = if rng.gen_bool(0.5) { Taint::Secret } else { Taint::Public };
                return AbsVal { prims: PrimAbs::Top(taint), annots: BTreeSet::new() };
            }
            let mut v = AbsVal::bottom();
            for _ in 0..rng.gen_range(0..3) {
                let l = enc.consts[rng.gen_range(0..enc.consts.len())];
                let h = if rng.gen_bool(0.4) { Taint::Secret } else { Taint::Public };
                v = d.join(&v, &d.beta_prim(l, h));
            }
            if rng.gen_bool(0.25) {
                let a = enc.annots[rng.gen_range(0..enc.annots.len())].clone();
                v.annots.insert(a);
            }
            v
        }

        fn sval_of(em: &Emitter<'_>, v: &AbsVal) -> SVal {
            em.const_val(v).unwrap()
        }

        fn decode_sval(enc: &Encoding, s: &SVal) -> AbsVal {
            let e = EncVal {
                pc: eval_str(&s.pc).bits(),
                sc: eval_str(&s.sc).bits(),
                top_pub: eval_str(&s.tp).truth(),
                top_sec: eval_str(&s.ts).truth(),
                an: eval_str(&s.an).bits(),
            };
            enc.decode_val(&e)
        }

        /// Whether the abstract binary result uses only table literals,
        /// in which case the encoding must be exact.
        fn image_in_table(enc: &Encoding, v: &AbsVal) -> bool {
            match &v.prims {
                PrimAbs::Top(_) => false,
                PrimAbs::Consts(m) => m.keys().all(|l| enc.const_idx(l).is_some()),
            }
        }

        #[test]
        fn binary_operator_encodings_cover_the_domain() {
            let (_, ap, enc, em) = setup();
            let d = ap.domain;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut exact = 0;
            for _ in 0..400 {
                let a = random_val(&mut rng, &enc, &d);
                let b = random_val(&mut rng, &enc, &d);
                for op in BinOp::ALL {
                    let want = d.binop(op, &a, &b);
                    let got = decode_sval(&enc, &em.binop_val(op, &sval_of(&em, &a), &sval_of(&em, &b)));
                    assert!(
                        want.leq(&got),
                        "binop {op:?} encoding lost {want} (got {got}) on {a} / {b}"
                    );
                    let tops =
                        matches!(a.prims, PrimAbs::Top(_)) || matches!(b.prims, PrimAbs::Top(_));
                    if !tops && image_in_table(&enc, &want) && !matches!(got.prims, PrimAbs::Top(_)) {
                        assert_eq!(want.prims, got.prims, "binop {op:?} imprecise without cause");
                        exact += 1;
                    }
                }
            }
            assert!(exact > 100, "the exactness path was barely exercised: {exact}");
        }

        #[test]
        fn unary_operator_encodings_cover_the_domain() {
            let (_, ap, enc, em) = setup();
            let d = ap.domain;
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..400 {
                let a = random_val(&mut rng, &enc, &d);
                for op in UnOp::ALL {
                    let want = d.unop(op, &a);
                    let got = decode_sval(&enc, &em.unop_val(op, &sval_of(&em, &a)));
                    assert!(want.leq(&got), "unop {op:?} encoding lost {want} (got {got}) on {a}");
                }
            }
        }

        #[test]
        fn comparison_encodings_match_the_domain_exactly() {
            let (_, ap, enc, em) = setup();
            let d = ap.domain;
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for _ in 0..400 {
                let a = random_val(&mut rng, &enc, &d);
                let b = random_val(&mut rng, &enc, &d);
                for op in CmpOp::ALL {
                    let (want_t, want_f) = d.compare(op, &a, &b);
                    let got_t = eval_str(&em.cmp_may(op, true, &sval_of(&em, &a), &sval_of(&em, &b))).truth();
                    let got_f = eval_str(&em.cmp_may(op, false, &sval_of(&em, &a), &sval_of(&em, &b))).truth();
                    assert_eq!((want_t, want_f), (got_t, got_f), "compare {op:?} differs on {a} / {b}");
                }
            }
        }

        #[test]
        fn refinement_encodings_match_the_domain() {
            let (_, ap, enc, em) = setup();
            let d = ap.domain;
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            for _ in 0..400 {
                let a = random_val(&mut rng, &enc, &d);
                let b = random_val(&mut rng, &enc, &d);
                for op in CmpOp::ALL {
                    for expect in [true, false] {
                        let (ra, rb) = em.refine_pair(op, expect, &sval_of(&em, &a), &sval_of(&em, &b));
                        let (got_a, got_b) = (decode_sval(&enc, &ra), decode_sval(&enc, &rb));
                        match d.refine_cmp(op, expect, &a, &b) {
                            Some((want_a, want_b)) => {
                                assert_eq!(want_a, got_a, "{op:?}/{expect} refinement differs on lhs {a}");
                                assert_eq!(want_b, got_b, "{op:?}/{expect} refinement differs on rhs {b}");
                            }
                            None => {
                                assert_eq!(got_a, a, "{op:?}/{expect} must not refine {a}");
                                assert_eq!(got_b, b, "{op:?}/{expect} must not refine {b}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn external_runner_parses_verdict_lines() {
        let script = std::env::temp_dir().join(format!("fake-solver-{}.sh", std::process::id()));
        std::fs::write(&script, "#!/bin/sh\necho sat\necho unsat\necho unknown\n").unwrap();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        }
        let out = run_external("; no-op", script.to_str().unwrap()).unwrap();
        assert_eq!(
            out.verdicts,
            vec![SolverVerdict::Sat, SolverVerdict::Unsat, SolverVerdict::Unknown]
        );
        let _ = std::fs::remove_file(&script);
    }

    #[test]
    fn missing_solver_binary_is_a_configuration_error() {
        let err = run_external("; no-op", "/nonexistent/solver-binary").unwrap_err();
        assert!(matches!(err, SolverError::Spawn { .. }));
    }
}
