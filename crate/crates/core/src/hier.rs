//! Class-hierarchy services shared by the interpreter and the clause
//! generator: subtyping, method lookup and signatures, virtual-dispatch
//! candidate sets, and the flattened field layout of a class.

use crate::syntax::*;
use std::collections::BTreeSet;

/// Direct supertypes of a class: the superclass plus implemented
/// interfaces. Built-in roots have none.
fn direct_supers<'p>(p: &'p Program, c: &str) -> Vec<&'p str> {
    let Some(class) = p.class(c) else { return Vec::new() };
    let mut out: Vec<&str> = Vec::new();
    if let Some(s) = &class.superclass {
        out.push(s);
    }
    out.extend(class.interfaces.iter().map(|i| i.as_str()));
    out
}

/// Reflexive-transitive class-level subtyping over extends/implements.
fn class_le(p: &Program, c: &str, d: &str) -> bool {
    if c == d {
        return true;
    }
    let mut seen = BTreeSet::new();
    let mut work = vec![c];
    while let Some(cur) = work.pop() {
        if !seen.insert(cur.to_string()) {
            continue;
        }
        for s in direct_supers(p, cur) {
            if s == d {
                return true;
            }
            work.push(s);
        }
    }
    false
}

/// Subtyping: reflexive, transitive, extends/implements on classes,
/// covariant on arrays.
pub fn subtype(a: &Ty, b: &Ty, p: &Program) -> bool {
    match (a, b) {
        (Ty::Bool, Ty::Bool) | (Ty::Int, Ty::Int) => true,
        (Ty::Class(c), Ty::Class(d)) => class_le(p, c, d),
        (Ty::Array(x), Ty::Array(y)) => subtype(x, y, p),
        _ => false,
    }
}

/// Walks the superclass chain starting at `c` (inclusive). Stops on
/// unknown classes and cycles.
fn super_chain<'p>(p: &'p Program, c: &str) -> Vec<&'p ClassDef> {
    let mut out = Vec::new();
    let mut cur = c.to_string();
    while let Some(class) = p.class(&cur) {
        if out.iter().any(|k: &&ClassDef| k.name == class.name) {
            break;
        }
        out.push(class);
        match &class.superclass {
            Some(s) => cur = s.clone(),
            None => break,
        }
    }
    out
}

/// Method lookup: the definition dispatched for `m` on a receiver of
/// class `c`, i.e. the nearest definition on the superclass chain.
pub fn lookup<'p>(p: &'p Program, c: &str, m: &str) -> Option<(&'p ClassDef, &'p MethodDef)> {
    super_chain(p, c).into_iter().find_map(|k| k.method(m).map(|d| (k, d)))
}

/// Signature of the method dispatched for `(c, m)`: argument types,
/// return type and local-register count.
pub fn sign<'p>(p: &'p Program, c: &str, m: &str) -> Option<(&'p [Ty], &'p Ty, usize)> {
    lookup(p, c, m).map(|(_, d)| (d.params.as_slice(), &d.ret_ty, d.locals))
}

/// Classes that define or inherit a method named `m` with `arity`
/// arguments. Used by the invoke translation to enumerate dispatch
/// candidates.
pub fn lookup_hat(p: &Program, m: &str, arity: usize) -> BTreeSet<String> {
    p.classes
        .iter()
        .filter(|c| lookup(p, &c.name, m).is_some_and(|(_, d)| d.params.len() == arity))
        .map(|c| c.name.clone())
        .collect()
}

/// The deduplicated defining classes behind `lookup_hat`: for each
/// candidate receiver class the class whose body is actually dispatched.
/// Entry facts and result facts are keyed by these.
pub fn defining_classes(p: &Program, m: &str, arity: usize) -> BTreeSet<String> {
    lookup_hat(p, m, arity)
        .iter()
        .filter_map(|c| lookup(p, c, m).map(|(k, _)| k.name.clone()))
        .collect()
}

/// Flattened instance-field layout of `c`: superclass fields first, then
/// the class's own. Field shadowing is rejected by well-formedness, so
/// names are unique here.
pub fn fields_of<'p>(p: &'p Program, c: &str) -> Vec<&'p FieldDef> {
    let mut chain = super_chain(p, c);
    chain.reverse();
    let mut out: Vec<&FieldDef> = Vec::new();
    for class in chain {
        for f in &class.fields {
            if !out.iter().any(|g| g.name == f.name) {
                out.push(f);
            }
        }
    }
    out
}

/// True when `c` is an activity class: it transitively extends the
/// built-in activity root.
pub fn is_activity_class(p: &Program, c: &str) -> bool {
    c != ACTIVITY_CLASS && class_le(p, c, ACTIVITY_CLASS)
}

/// All activity classes of the program, in declaration order.
pub fn activity_classes(p: &Program) -> Vec<&ClassDef> {
    p.classes.iter().filter(|c| is_activity_class(p, &c.name)).collect()
}

/// Callback methods the system may dispatch on class `c` in lifecycle
/// state `s`.
pub fn callbacks(p: &Program, c: &str, s: ActState) -> Vec<String> {
    let mut out = Vec::new();
    for class in super_chain(p, c) {
        if let Some(act) = &class.activity {
            for (st, m) in &act.callbacks {
                if *st == s && !out.contains(m) {
                    out.push(m.clone());
                }
            }
        }
    }
    out
}

/// Resolves a statically-dispatched call: the defining class and method
/// for `(c, m)`, requiring a static method.
pub fn resolve_static<'p>(p: &'p Program, c: &str, m: &str) -> Option<(&'p ClassDef, &'p MethodDef)> {
    lookup(p, c, m).filter(|(_, d)| d.is_static)
}
