//! Object-language definitions: programs, classes, methods, statements.
//!
//! A program is a set of classes for a register machine with an activity
//! (event-driven component) layer on top. Statements operate on an untyped
//! register file; methods declare a number of scratch locals, the actual
//! argument slots follow them, and a distinguished `ret` register carries
//! return values across calls.

use std::collections::BTreeMap;
use std::fmt;

/// Name of the built-in root class all activities extend.
pub const ACTIVITY_CLASS: &str = "Activity";
/// Name of the built-in class of intent blocks.
pub const INTENT_CLASS: &str = "Intent";

/// Implicit fields present on every activity instance.
pub const FINISHED_FIELD: &str = "finished";
pub const INTENT_FIELD: &str = "intent";
pub const RESULT_FIELD: &str = "result";
pub const PARENT_FIELD: &str = "parent";

/// Types: primitives, class references and covariant arrays.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ty {
    Bool,
    Int,
    Class(String),
    Array(Box<Ty>),
}

impl Ty {
    pub fn is_primitive(&self) -> bool {
        matches!(self, Ty::Bool | Ty::Int)
    }

    pub fn class(name: &str) -> Ty {
        Ty::Class(name.to_string())
    }

    pub fn array(elem: Ty) -> Ty {
        Ty::Array(Box::new(elem))
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Bool => write!(f, "bool"),
            Ty::Int => write!(f, "int"),
            Ty::Class(c) => write!(f, "{c}"),
            Ty::Array(t) => write!(f, "(array {t})"),
        }
    }
}

/// Primitive literals. `Null` is the default value of reference-typed
/// fields and registers; reads through it fault the interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimLit {
    Bool(bool),
    Int(i64),
    Null,
}

impl PrimLit {
    pub fn ty(&self) -> Option<Ty> {
        match self {
            PrimLit::Bool(_) => Some(Ty::Bool),
            PrimLit::Int(_) => Some(Ty::Int),
            PrimLit::Null => None,
        }
    }
}

impl fmt::Display for PrimLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimLit::Bool(b) => write!(f, "{b}"),
            PrimLit::Int(i) => write!(f, "{i}"),
            PrimLit::Null => write!(f, "null"),
        }
    }
}

/// Comparison operators for `if` statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn name(&self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Gt => "gt",
            CmpOp::Le => "le",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }

    /// Comparison on literals; `None` when the pair is not comparable
    /// (ordering operators require two ints).
    pub fn apply(&self, a: PrimLit, b: PrimLit) -> Option<bool> {
        use PrimLit::*;
        match self {
            CmpOp::Eq => Some(a == b),
            CmpOp::Ne => Some(a != b),
            _ => match (a, b) {
                (Int(x), Int(y)) => Some(match self {
                    CmpOp::Lt => x < y,
                    CmpOp::Gt => x > y,
                    CmpOp::Le => x <= y,
                    CmpOp::Ge => x >= y,
                    _ => unreachable!(),
                }),
                _ => None,
            },
        }
    }
}

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub const ALL: [BinOp; 5] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Rem];

    pub fn name(&self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
        }
    }

    /// Integer semantics with wrapping overflow; `None` on non-int operands
    /// or division by zero.
    pub fn apply(&self, a: PrimLit, b: PrimLit) -> Option<PrimLit> {
        let (PrimLit::Int(x), PrimLit::Int(y)) = (a, b) else {
            return None;
        };
        let r = match self {
            BinOp::Add => x.wrapping_add(y),
            BinOp::Sub => x.wrapping_sub(y),
            BinOp::Mul => x.wrapping_mul(y),
            BinOp::Div => {
                if y == 0 {
                    return None;
                }
                x.wrapping_div(y)
            }
            BinOp::Rem => {
                if y == 0 {
                    return None;
                }
                x.wrapping_rem(y)
            }
        };
        Some(PrimLit::Int(r))
    }
}

/// Unary operators: integer negation and boolean not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

impl UnOp {
    pub const ALL: [UnOp; 2] = [UnOp::Neg, UnOp::Not];

    pub fn name(&self) -> &'static str {
        match self {
            UnOp::Neg => "neg",
            UnOp::Not => "not",
        }
    }

    pub fn apply(&self, a: PrimLit) -> Option<PrimLit> {
        match (self, a) {
            (UnOp::Neg, PrimLit::Int(x)) => Some(PrimLit::Int(x.wrapping_neg())),
            (UnOp::Not, PrimLit::Bool(b)) => Some(PrimLit::Bool(!b)),
            _ => None,
        }
    }
}

/// A register operand: an indexed slot or the distinguished return register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reg {
    Idx(usize),
    Ret,
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::Idx(i) => write!(f, "(reg {i})"),
            Reg::Ret => write!(f, "(reg ret)"),
        }
    }
}

/// Move destinations: register, array cell, object field or static field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lhs {
    Reg(Reg),
    ArrayCell { arr: Reg, idx: Reg },
    Field { obj: Reg, field: String },
    Static { class: String, field: String },
}

/// Move sources: any destination shape, or a literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rhs {
    Lhs(Lhs),
    Prim(PrimLit),
}

/// The statement forms of the object language.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stmt {
    Goto { target: usize },
    Move { dst: Lhs, src: Rhs },
    If { op: CmpOp, lhs: Reg, rhs: Reg, target: usize },
    Unop { op: UnOp, dst: Reg, src: Reg },
    Binop { op: BinOp, dst: Reg, lhs: Reg, rhs: Reg },
    New { dst: Reg, class: String },
    NewArray { dst: Reg, len: Reg, elem: Ty },
    CheckCast { src: Reg, ty: Ty },
    InstOf { dst: Reg, src: Reg, ty: Ty },
    Invoke { recv: Reg, method: String, args: Vec<Reg> },
    SInvoke { class: String, method: String, args: Vec<Reg> },
    Return,
    NewIntent { dst: Reg, target: String },
    PutExtra { intent: Reg, key: Reg, value: Reg },
    GetExtra { intent: Reg, key: Reg, ty: Ty },
    StartActivity { intent: Reg },
}

/// States of the activity lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActState {
    Constructor,
    OnCreate,
    OnStart,
    OnResume,
    Running,
    OnPause,
    OnStop,
    OnDestroy,
    OnActivityResult,
}

impl ActState {
    pub const ALL: [ActState; 9] = [
        ActState::Constructor,
        ActState::OnCreate,
        ActState::OnStart,
        ActState::OnResume,
        ActState::Running,
        ActState::OnPause,
        ActState::OnStop,
        ActState::OnDestroy,
        ActState::OnActivityResult,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ActState::Constructor => "constructor",
            ActState::OnCreate => "onCreate",
            ActState::OnStart => "onStart",
            ActState::OnResume => "onResume",
            ActState::Running => "running",
            ActState::OnPause => "onPause",
            ActState::OnStop => "onStop",
            ActState::OnDestroy => "onDestroy",
            ActState::OnActivityResult => "onActivityResult",
        }
    }

    pub fn from_name(s: &str) -> Option<ActState> {
        ActState::ALL.iter().copied().find(|a| a.name() == s)
    }
}

impl fmt::Display for ActState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Default lifecycle transition table. The running-state self service of
/// user input is modelled by the callbacks bound to `running`, not by an
/// edge here. Overridable per program file.
pub fn default_lifecycle() -> Vec<(ActState, ActState)> {
    use ActState::*;
    vec![
        (Constructor, OnCreate),
        (OnCreate, OnStart),
        (OnStart, OnResume),
        (OnResume, Running),
        (Running, OnPause),
        (OnPause, OnResume),
        (OnPause, OnStop),
        (OnStop, OnStart),
        (OnStop, OnDestroy),
    ]
}

/// A field declaration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: Ty,
}

/// A method declaration. `locals` scratch registers come first in the
/// register file, then (for instance methods) the receiver, then the
/// arguments; the `ret` register is a separate distinguished slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDef {
    pub name: String,
    pub is_static: bool,
    pub params: Vec<Ty>,
    pub ret_ty: Ty,
    pub locals: usize,
    pub body: Vec<Stmt>,
}

impl MethodDef {
    /// Number of indexed registers (locals + receiver slot + arguments),
    /// excluding `ret`.
    pub fn reg_count(&self) -> usize {
        self.locals + usize::from(!self.is_static) + self.params.len()
    }

    /// Slot of the receiver, for instance methods.
    pub fn receiver_slot(&self) -> Option<usize> {
        (!self.is_static).then_some(self.locals)
    }

    /// Slot of the k-th argument (0-based).
    pub fn arg_slot(&self, k: usize) -> usize {
        self.locals + usize::from(!self.is_static) + k
    }
}

/// Callback declarations of an activity class: which methods the system
/// may dispatch in each lifecycle state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivityDecl {
    pub callbacks: Vec<(ActState, String)>,
}

/// A class declaration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    /// Direct superclass; `None` for hierarchy roots.
    pub superclass: Option<String>,
    pub interfaces: Vec<String>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
    /// Present when the class declares lifecycle callbacks.
    pub activity: Option<ActivityDecl>,
}

impl ClassDef {
    pub fn method(&self, name: &str) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// A parsed program: classes, the entry activity and the lifecycle table.
#[derive(Debug, Clone)]
pub struct Program {
    pub classes: Vec<ClassDef>,
    pub entry: String,
    pub lifecycle: Vec<(ActState, ActState)>,
    class_index: BTreeMap<String, usize>,
}

impl Program {
    pub fn new(classes: Vec<ClassDef>, entry: String, lifecycle: Vec<(ActState, ActState)>) -> Program {
        let class_index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect();
        Program { classes, entry, lifecycle, class_index }
    }

    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.class_index.get(name).map(|&i| &self.classes[i])
    }

    /// True for the built-in root classes that exist without declaration.
    pub fn is_builtin(name: &str) -> bool {
        name == ACTIVITY_CLASS || name == INTENT_CLASS
    }

    /// A class name is known when declared or built in.
    pub fn class_exists(&self, name: &str) -> bool {
        Self::is_builtin(name) || self.class_index.contains_key(name)
    }
}

/// A program point: class, method, statement index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pp {
    pub class: String,
    pub method: String,
    pub pc: usize,
}

impl Pp {
    pub fn new(class: impl Into<String>, method: impl Into<String>, pc: usize) -> Pp {
        Pp { class: class.into(), method: method.into(), pc }
    }

    pub fn at(&self, pc: usize) -> Pp {
        Pp { class: self.class.clone(), method: self.method.clone(), pc }
    }

    pub fn next(&self) -> Pp {
        self.at(self.pc + 1)
    }
}

impl fmt::Display for Pp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:{}", self.class, self.method, self.pc)
    }
}
