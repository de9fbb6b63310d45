//! Concrete small-step semantics: statement reduction, the activity-stack
//! reduction relation, serialization across components, and bounded
//! exploration. The interpreter is the soundness oracle for the analysis.

use crate::hier;
use crate::syntax::*;
use crate::values::*;
use std::collections::BTreeMap;
use std::fmt;

/// Per-annotation allocation counters; `fresh` hands out deterministic
/// pointers, which makes replays reproducible.
pub type Counters = BTreeMap<Annot, u64>;

pub fn fresh(counters: &mut Counters, annot: Annot) -> Location {
    let n = counters.entry(annot.clone()).or_insert(0);
    let idx = *n;
    *n += 1;
    Location { annot, idx }
}

/// One suspended or running method activation. The defining class and
/// method of `pp` identify the body; `call_args` records the actual
/// arguments passed when the activation was pushed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame {
    pub pp: Pp,
    pub regs: Vec<Value>,
    pub ret: Value,
    pub call_args: Vec<Value>,
}

impl Frame {
    pub fn read(&self, r: Reg) -> Option<&Value> {
        match r {
            Reg::Idx(i) => self.regs.get(i),
            Reg::Ret => Some(&self.ret),
        }
    }

    pub fn write(&mut self, r: Reg, v: Value) -> bool {
        match r {
            Reg::Idx(i) => match self.regs.get_mut(i) {
                Some(slot) => {
                    *slot = v;
                    true
                }
                None => false,
            },
            Reg::Ret => {
                self.ret = v;
                true
            }
        }
    }
}

/// The machine state of a single activity: call stack, pending intents,
/// heap and static heap, plus the location of the owning activity object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalConfig {
    pub owner: Location,
    /// Call stack, index 0 on top. Non-top frames are suspended at the
    /// invoke statement whose resolution produced the frame above them.
    pub stack: Vec<Frame>,
    /// Pending activity stack: intents sent but not yet started.
    pub pending: Vec<Block>,
    pub heap: Heap,
    pub statics: Statics,
    pub counters: Counters,
}

/// A run-time fault: the offending trace branch stops.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fault {
    pub pp: Pp,
    pub reason: String,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fault at {}: {}", self.pp, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalOutcome {
    Stepped(LocalConfig),
    /// A lone activation executed `return`: the activity has completed
    /// its current computation.
    Terminal,
    Fault(Fault),
}

fn fault<T>(pp: &Pp, reason: impl Into<String>) -> Result<T, Fault> {
    Err(Fault { pp: pp.clone(), reason: reason.into() })
}

/// Looks up the statement the top activation is about to execute.
pub fn current_stmt<'p>(p: &'p Program, lc: &LocalConfig) -> Option<&'p Stmt> {
    let top = lc.stack.first()?;
    p.class(&top.pp.class)?.method(&top.pp.method)?.body.get(top.pp.pc)
}

/// Evaluates a right-hand side against the top activation. Reads only the
/// top-most frame's registers; array and field reads go through the heap.
pub fn eval_rhs(_p: &Program, lc: &LocalConfig, rhs: &Rhs) -> Result<Value, Fault> {
    let top = lc.stack.first().expect("eval_rhs needs an activation");
    let pp = &top.pp;
    let read_reg = |r: Reg| -> Result<Value, Fault> {
        top.read(r).cloned().ok_or_else(|| Fault { pp: pp.clone(), reason: format!("register {r:?} out of range") })
    };
    match rhs {
        Rhs::Prim(lit) => Ok(Value::public(*lit)),
        Rhs::Lhs(Lhs::Reg(r)) => read_reg(*r),
        Rhs::Lhs(Lhs::ArrayCell { arr, idx }) => {
            let Value::Loc(loc) = read_reg(*arr)? else {
                return fault(pp, "array read through a non-location");
            };
            let Some(Block::Arr { cells, .. }) = lc.heap.get(&loc) else {
                return fault(pp, "array read on a non-array block");
            };
            let Some((PrimLit::Int(i), _)) = read_reg(*idx)?.as_prim() else {
                return fault(pp, "array index is not an int");
            };
            let Ok(i) = usize::try_from(i) else {
                return fault(pp, "negative array index");
            };
            cells.get(i).cloned().ok_or_else(|| Fault { pp: pp.clone(), reason: format!("array index {i} out of bounds") })
        }
        Rhs::Lhs(Lhs::Field { obj, field }) => {
            let Value::Loc(loc) = read_reg(*obj)? else {
                return fault(pp, "field read through a non-location");
            };
            let Some(Block::Obj { fields, .. }) = lc.heap.get(&loc) else {
                return fault(pp, "field read on a non-object block");
            };
            fields
                .get(field)
                .cloned()
                .ok_or_else(|| Fault { pp: pp.clone(), reason: format!("object has no field `{field}`") })
        }
        Rhs::Lhs(Lhs::Static { class, field }) => lc
            .statics
            .get(&(class.clone(), field.clone()))
            .cloned()
            .ok_or_else(|| Fault { pp: pp.clone(), reason: format!("unknown static field `{class}.{field}`") }),
    }
}

/// Checks that a value may be stored at declared type `ty`: null fits any
/// reference type, everything else goes through subtyping on the dynamic
/// type.
fn assignable(p: &Program, h: &Heap, v: &Value, ty: &Ty) -> bool {
    match v {
        Value::Prim(PrimLit::Null, _) => !ty.is_primitive(),
        _ => get_type(h, v).is_some_and(|t| hier::subtype(&t, ty, p)),
    }
}

/// Deep-copies a value for inter-component transfer: fresh pointers with
/// the same annotations, memoized so cycles and sharing are preserved.
pub fn serialize_value(
    h: &Heap,
    v: &Value,
    counters: &mut Counters,
    extension: &mut Heap,
    visited: &mut BTreeMap<Location, Location>,
) -> Value {
    match v {
        Value::Prim(..) => v.clone(),
        Value::Loc(loc) => {
            if let Some(copy) = visited.get(loc) {
                return Value::Loc(copy.clone());
            }
            let copy = fresh(counters, loc.annot.clone());
            visited.insert(loc.clone(), copy.clone());
            let Some(block) = h.get(loc) else {
                // Dangling pointers cannot occur in well-formed runs.
                return Value::Loc(copy);
            };
            let copied = serialize_block(h, block, counters, extension, visited);
            extension.insert(copy.clone(), copied);
            Value::Loc(copy)
        }
    }
}

pub fn serialize_block(
    h: &Heap,
    b: &Block,
    counters: &mut Counters,
    extension: &mut Heap,
    visited: &mut BTreeMap<Location, Location>,
) -> Block {
    match b {
        Block::Obj { class, fields } => Block::Obj {
            class: class.clone(),
            fields: fields
                .iter()
                .map(|(f, v)| (f.clone(), serialize_value(h, v, counters, extension, visited)))
                .collect(),
        },
        Block::Arr { elem, cells } => Block::Arr {
            elem: elem.clone(),
            cells: cells.iter().map(|v| serialize_value(h, v, counters, extension, visited)).collect(),
        },
        Block::Intent { target, extras } => Block::Intent {
            target: target.clone(),
            extras: extras
                .iter()
                .map(|(k, v)| (*k, serialize_value(h, v, counters, extension, visited)))
                .collect(),
        },
    }
}

/// Methods whose return values always carry secret taint.
pub type Sources = std::collections::BTreeSet<(String, String)>;

/// One reduction step of the top activation. Deterministic: all
/// nondeterminism lives in the configuration-level relation. `sources`
/// names the methods whose return values are secret-tainted.
pub fn step_local(p: &Program, lc: &LocalConfig, sources: &Sources) -> LocalOutcome {
    match try_step_local(p, lc, sources) {
        Ok(Some(next)) => LocalOutcome::Stepped(next),
        Ok(None) => LocalOutcome::Terminal,
        Err(f) => LocalOutcome::Fault(f),
    }
}

fn try_step_local(p: &Program, lc: &LocalConfig, sources: &Sources) -> Result<Option<LocalConfig>, Fault> {
    let Some(top) = lc.stack.first() else {
        return Ok(None); // empty callback stack: nothing to run
    };
    let pp = top.pp.clone();
    let Some(st) = current_stmt(p, lc) else {
        return fault(&pp, "program counter past the end of the body");
    };
    let mut next = lc.clone();
    let advance = |next: &mut LocalConfig| next.stack[0].pp.pc += 1;
    let read = |r: Reg| -> Result<Value, Fault> {
        top.read(r).cloned().ok_or_else(|| Fault { pp: pp.clone(), reason: format!("register {r:?} out of range") })
    };
    let read_prim = |r: Reg| -> Result<(PrimLit, Taint), Fault> {
        read(r)?.as_prim().ok_or_else(|| Fault { pp: pp.clone(), reason: "operand is not a primitive".into() })
    };
    let read_loc = |r: Reg| -> Result<Location, Fault> {
        match read(r)? {
            Value::Loc(l) => Ok(l),
            Value::Prim(..) => fault(&pp, "operand is not a location"),
        }
    };

    match st {
        Stmt::Goto { target } => {
            next.stack[0].pp.pc = *target;
        }
        Stmt::If { op, lhs, rhs, target } => {
            let (a, _) = read_prim(*lhs)?;
            let (b, _) = read_prim(*rhs)?;
            let Some(taken) = op.apply(a, b) else {
                return fault(&pp, format!("comparison {} undefined on {a} and {b}", op.name()));
            };
            if taken {
                next.stack[0].pp.pc = *target;
            } else {
                advance(&mut next);
            }
        }
        Stmt::Move { dst, src } => {
            let v = eval_rhs(p, lc, src)?;
            match dst {
                Lhs::Reg(r) => {
                    advance(&mut next);
                    next.stack[0].write(*r, v);
                }
                Lhs::Field { obj, field } => {
                    let loc = read_loc(*obj)?;
                    let Some(Block::Obj { class, .. }) = lc.heap.get(&loc) else {
                        return fault(&pp, "field write on a non-object block");
                    };
                    let Some(decl) = hier::fields_of(p, class).into_iter().find(|f| f.name == *field) else {
                        return fault(&pp, format!("object has no field `{field}`"));
                    };
                    if !assignable(p, &lc.heap, &v, &decl.ty) {
                        return fault(&pp, format!("value of wrong type stored in field `{field}`"));
                    }
                    advance(&mut next);
                    let Some(Block::Obj { fields, .. }) = next.heap.get_mut(&loc) else { unreachable!() };
                    fields.insert(field.clone(), v);
                }
                Lhs::ArrayCell { arr, idx } => {
                    let loc = read_loc(*arr)?;
                    let Some(Block::Arr { elem, cells }) = lc.heap.get(&loc) else {
                        return fault(&pp, "array write on a non-array block");
                    };
                    // Dynamic type check compensating covariant arrays.
                    if !assignable(p, &lc.heap, &v, elem) {
                        return fault(&pp, "value of wrong type stored in array");
                    }
                    let Some((PrimLit::Int(i), _)) = read(*idx)?.as_prim() else {
                        return fault(&pp, "array index is not an int");
                    };
                    let in_range = usize::try_from(i).is_ok_and(|i| i < cells.len());
                    if !in_range {
                        return fault(&pp, format!("array index {i} out of bounds"));
                    }
                    advance(&mut next);
                    let Some(Block::Arr { cells, .. }) = next.heap.get_mut(&loc) else { unreachable!() };
                    cells[usize::try_from(i).unwrap()] = v;
                }
                Lhs::Static { class, field } => {
                    let Some(decl) = hier::fields_of(p, class).into_iter().find(|f| f.name == *field) else {
                        return fault(&pp, format!("unknown static field `{class}.{field}`"));
                    };
                    if !assignable(p, &lc.heap, &v, &decl.ty) {
                        return fault(&pp, format!("value of wrong type stored in static `{class}.{field}`"));
                    }
                    advance(&mut next);
                    next.statics.insert((class.clone(), field.clone()), v);
                }
            }
        }
        Stmt::Unop { op, dst, src } => {
            let (a, taint) = read_prim(*src)?;
            let Some(r) = op.apply(a) else {
                return fault(&pp, format!("unary {} undefined on {a}", op.name()));
            };
            advance(&mut next);
            next.stack[0].write(*dst, Value::Prim(r, taint));
        }
        Stmt::Binop { op, dst, lhs, rhs } => {
            let (a, ta) = read_prim(*lhs)?;
            let (b, tb) = read_prim(*rhs)?;
            let Some(r) = op.apply(a, b) else {
                return fault(&pp, format!("binary {} undefined on {a} and {b}", op.name()));
            };
            // The result is raised to the highest operand taint.
            advance(&mut next);
            next.stack[0].write(*dst, Value::Prim(r, ta.join(tb)));
        }
        Stmt::New { dst, class } => {
            let fields = hier::fields_of(p, class)
                .into_iter()
                .map(|f| (f.name.clone(), default_value(&f.ty)))
                .collect();
            let loc = fresh(&mut next.counters, Annot::Pp(pp.clone()));
            next.heap.insert(loc.clone(), Block::Obj { class: class.clone(), fields });
            advance(&mut next);
            next.stack[0].write(*dst, Value::Loc(loc));
        }
        Stmt::NewArray { dst, len, elem } => {
            let Some((PrimLit::Int(n), _)) = read(*len)?.as_prim() else {
                return fault(&pp, "array length is not an int");
            };
            let Ok(n) = usize::try_from(n) else {
                return fault(&pp, "negative array length");
            };
            // Exhaustion stops the trace branch like any other fault.
            if n > 4096 {
                return fault(&pp, format!("array allocation of {n} cells exceeds the supported bound"));
            }
            let loc = fresh(&mut next.counters, Annot::Pp(pp.clone()));
            next.heap
                .insert(loc.clone(), Block::Arr { elem: elem.clone(), cells: vec![default_value(elem); n] });
            advance(&mut next);
            next.stack[0].write(*dst, Value::Loc(loc));
        }
        Stmt::CheckCast { src, ty } => {
            let loc = read_loc(*src)?;
            let Some(t) = get_type(&lc.heap, &Value::Loc(loc)) else {
                return fault(&pp, "cast through a dangling location");
            };
            if !hier::subtype(&t, ty, p) {
                return fault(&pp, format!("cast of {t} to {ty} failed"));
            }
            advance(&mut next);
        }
        Stmt::InstOf { dst, src, ty } => {
            let loc = read_loc(*src)?;
            let Some(t) = get_type(&lc.heap, &Value::Loc(loc)) else {
                return fault(&pp, "instance test through a dangling location");
            };
            advance(&mut next);
            next.stack[0].write(*dst, Value::public(PrimLit::Bool(hier::subtype(&t, ty, p))));
        }
        Stmt::Invoke { recv, method, args } => {
            let loc = read_loc(*recv)?;
            let Some(Ty::Class(dyn_class)) = get_type(&lc.heap, &Value::Loc(loc.clone())) else {
                return fault(&pp, "invoke on a non-object value");
            };
            let Some((def, m)) = hier::lookup(p, &dyn_class, method) else {
                return fault(&pp, format!("method `{method}` does not resolve on {dyn_class}"));
            };
            if m.is_static {
                return fault(&pp, format!("virtual call to static method `{method}`"));
            }
            if m.params.len() != args.len() {
                return fault(&pp, format!("arity mismatch calling `{method}`"));
            }
            let arg_vals: Vec<Value> = args.iter().map(|r| read(*r)).collect::<Result<_, _>>()?;
            let mut regs = vec![Value::int(0); m.locals];
            regs.push(Value::Loc(loc));
            regs.extend(arg_vals.iter().cloned());
            // The caller suspends at the invoke; return advances it.
            next.stack.insert(
                0,
                Frame {
                    pp: Pp::new(def.name.clone(), method.clone(), 0),
                    regs,
                    ret: Value::int(0),
                    call_args: arg_vals,
                },
            );
        }
        Stmt::SInvoke { class, method, args } => {
            let Some((def, m)) = hier::resolve_static(p, class, method) else {
                return fault(&pp, format!("static call `{class}.{method}` does not resolve"));
            };
            if m.params.len() != args.len() {
                return fault(&pp, format!("arity mismatch calling `{class}.{method}`"));
            }
            let arg_vals: Vec<Value> = args.iter().map(|r| read(*r)).collect::<Result<_, _>>()?;
            let mut regs = vec![Value::int(0); m.locals];
            regs.extend(arg_vals.iter().cloned());
            next.stack.insert(
                0,
                Frame {
                    pp: Pp::new(def.name.clone(), method.clone(), 0),
                    regs,
                    ret: Value::int(0),
                    call_args: arg_vals,
                },
            );
        }
        Stmt::Return => {
            if lc.stack.len() == 1 {
                return Ok(None);
            }
            let mut ret = top.ret.clone();
            // A source's return value always carries secret taint.
            if sources.contains(&(pp.class.clone(), pp.method.clone())) {
                if let Value::Prim(lit, _) = ret {
                    ret = Value::Prim(lit, Taint::Secret);
                }
            }
            next.stack.remove(0);
            next.stack[0].ret = ret;
            next.stack[0].pp.pc += 1;
        }
        Stmt::NewIntent { dst, target } => {
            let loc = fresh(&mut next.counters, Annot::Pp(pp.clone()));
            next.heap
                .insert(loc.clone(), Block::Intent { target: target.clone(), extras: Default::default() });
            advance(&mut next);
            next.stack[0].write(*dst, Value::Loc(loc));
        }
        Stmt::PutExtra { intent, key, value } => {
            let loc = read_loc(*intent)?;
            let Some(Block::Intent { .. }) = lc.heap.get(&loc) else {
                return fault(&pp, "put-extra on a non-intent block");
            };
            let (k, _) = read_prim(*key)?;
            let v = read(*value)?;
            advance(&mut next);
            let Some(Block::Intent { extras, .. }) = next.heap.get_mut(&loc) else { unreachable!() };
            extras.insert(k, v);
        }
        Stmt::GetExtra { intent, key, ty } => {
            let loc = read_loc(*intent)?;
            let Some(Block::Intent { extras, .. }) = lc.heap.get(&loc) else {
                return fault(&pp, "get-extra on a non-intent block");
            };
            let (k, _) = read_prim(*key)?;
            let Some(v) = extras.get(&k).cloned() else {
                return fault(&pp, format!("intent has no extra for key {k}"));
            };
            if !assignable(p, &lc.heap, &v, ty) {
                return fault(&pp, format!("extra for key {k} does not have type {ty}"));
            }
            advance(&mut next);
            next.stack[0].ret = v;
        }
        Stmt::StartActivity { intent } => {
            let loc = read_loc(*intent)?;
            let Some(b @ Block::Intent { .. }) = lc.heap.get(&loc) else {
                return fault(&pp, "start-activity on a non-intent block");
            };
            next.pending.insert(0, b.clone());
            advance(&mut next);
        }
    }
    Ok(Some(next))
}
