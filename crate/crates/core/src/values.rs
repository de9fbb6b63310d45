//! Runtime values, memory blocks and heaps.
//!
//! Every primitive carries a taint from the two-point secrecy lattice.
//! Locations are pointers extended with an annotation naming either the
//! allocating program point, an activity class, or `in(c)` for intents
//! that started an activity of class `c`. Annotations have no run-time
//! meaning; they are the static names the analysis abstracts locations to.

use crate::syntax::{PrimLit, Pp, Ty};
use std::collections::BTreeMap;
use std::fmt;

/// Two-point secrecy lattice; `Secret` is the top element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Taint {
    Public,
    Secret,
}

impl Taint {
    pub fn join(self, other: Taint) -> Taint {
        self.max(other)
    }
}

impl fmt::Display for Taint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Taint::Public => "public",
            Taint::Secret => "secret",
        })
    }
}

/// The static name of a heap location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Annot {
    /// Allocated by the statement at this program point.
    Pp(Pp),
    /// An activity instance of this class.
    Class(String),
    /// The intent that started an activity of this class.
    In(String),
}

impl fmt::Display for Annot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annot::Pp(pp) => write!(f, "{pp}"),
            Annot::Class(c) => write!(f, "{c}"),
            Annot::In(c) => write!(f, "in({c})"),
        }
    }
}

/// A heap pointer: annotation plus a per-annotation allocation index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location {
    pub annot: Annot,
    pub idx: u64,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}_{{{}}}", self.idx, self.annot)
    }
}

/// A runtime value: a tainted primitive or a location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Prim(PrimLit, Taint),
    Loc(Location),
}

impl Value {
    pub fn public(lit: PrimLit) -> Value {
        Value::Prim(lit, Taint::Public)
    }

    pub fn int(i: i64) -> Value {
        Value::public(PrimLit::Int(i))
    }

    pub fn as_loc(&self) -> Option<&Location> {
        match self {
            Value::Loc(l) => Some(l),
            Value::Prim(..) => None,
        }
    }

    pub fn as_prim(&self) -> Option<(PrimLit, Taint)> {
        match self {
            Value::Prim(l, t) => Some((*l, *t)),
            Value::Loc(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Prim(l, t) => write!(f, "{l}@{t}"),
            Value::Loc(l) => write!(f, "{l}"),
        }
    }
}

/// Default (zero) value of a type: 0, false, or null for references.
pub fn default_value(ty: &Ty) -> Value {
    match ty {
        Ty::Int => Value::public(PrimLit::Int(0)),
        Ty::Bool => Value::public(PrimLit::Bool(false)),
        Ty::Class(_) | Ty::Array(_) => Value::public(PrimLit::Null),
    }
}

/// A memory block: an object, an array, or an intent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Obj { class: String, fields: BTreeMap<String, Value> },
    Arr { elem: Ty, cells: Vec<Value> },
    Intent { target: String, extras: BTreeMap<PrimLit, Value> },
}

impl Block {
    /// Every value stored directly in the block.
    pub fn values(&self) -> Vec<&Value> {
        match self {
            Block::Obj { fields, .. } => fields.values().collect(),
            Block::Arr { cells, .. } => cells.iter().collect(),
            Block::Intent { extras, .. } => extras.values().collect(),
        }
    }
}

pub type Heap = BTreeMap<Location, Block>;
/// Static heap: `(class, field)` to value.
pub type Statics = BTreeMap<(String, String), Value>;

/// Dynamic type of a block.
pub fn block_type(b: &Block) -> Ty {
    match b {
        Block::Obj { class, .. } => Ty::Class(class.clone()),
        Block::Arr { elem, .. } => Ty::Array(Box::new(elem.clone())),
        Block::Intent { .. } => Ty::Class(crate::syntax::INTENT_CLASS.into()),
    }
}

/// Dynamic type of a value; `None` for null and dangling locations.
pub fn get_type(h: &Heap, v: &Value) -> Option<Ty> {
    match v {
        Value::Prim(l, _) => l.ty(),
        Value::Loc(loc) => h.get(loc).map(block_type),
    }
}

/// Taint of a value: its own taint for primitives, the join of every
/// taint reachable through the heap for locations. Cycle-safe.
pub fn taint_of(v: &Value, h: &Heap) -> Taint {
    fn go(v: &Value, h: &Heap, seen: &mut std::collections::BTreeSet<Location>) -> Taint {
        match v {
            Value::Prim(_, t) => *t,
            Value::Loc(loc) => {
                if !seen.insert(loc.clone()) {
                    return Taint::Public;
                }
                match h.get(loc) {
                    None => Taint::Public,
                    Some(b) => b
                        .values()
                        .into_iter()
                        .map(|u| go(u, h, seen))
                        .fold(Taint::Public, Taint::join),
                }
            }
        }
    }
    go(v, h, &mut Default::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(annot: Annot, idx: u64) -> Location {
        Location { annot, idx }
    }

    #[test]
    fn get_type_cases() {
        let mut h = Heap::new();
        let li = loc(Annot::Pp(Pp::new("A", "m", 0)), 0);
        h.insert(li.clone(), Block::Intent { target: "B".into(), extras: Default::default() });
        assert_eq!(get_type(&h, &Value::int(5)), Some(Ty::Int));
        assert_eq!(get_type(&h, &Value::Loc(li)), Some(Ty::class("Intent")));
        let dangling = loc(Annot::Class("A".into()), 9);
        assert_eq!(get_type(&h, &Value::Loc(dangling)), None);
        assert_eq!(get_type(&h, &Value::public(PrimLit::Null)), None);
    }

    #[test]
    fn taint_reaches_through_heap() {
        let mut h = Heap::new();
        let la = loc(Annot::Pp(Pp::new("A", "m", 1)), 0);
        h.insert(
            la.clone(),
            Block::Arr { elem: Ty::Int, cells: vec![Value::Prim(PrimLit::Int(7), Taint::Secret)] },
        );
        assert_eq!(taint_of(&Value::Prim(PrimLit::Int(5), Taint::Secret), &h), Taint::Secret);
        assert_eq!(taint_of(&Value::Loc(la), &h), Taint::Secret);
        assert_eq!(taint_of(&Value::int(3), &h), Taint::Public);
    }

    #[test]
    fn taint_handles_cycles() {
        let mut h = Heap::new();
        let lo = loc(Annot::Pp(Pp::new("A", "m", 2)), 0);
        let mut fields = BTreeMap::new();
        fields.insert("self_ref".to_string(), Value::Loc(lo.clone()));
        h.insert(lo.clone(), Block::Obj { class: "C".into(), fields });
        assert_eq!(taint_of(&Value::Loc(lo), &h), Taint::Public);
    }
}
