//! Textual program format: parser and pretty-printer.
//!
//! ```text
//! (program
//!   (entry Main)
//!   (lifecycle (constructor onCreate) ...)?        ; optional override
//!   (class C (super D)? (implements I J)?
//!     (activity (callbacks (onCreate init) (running onClick)))?
//!     (field f int)
//!     (method m (static)? (args int (array int)) (returns int) (locals 2)
//!       (0 (move (reg 0) (prim int 5)))
//!       (1 (return))))
//!   ...)
//! ```
//!
//! Statement forms mirror the object language one to one, e.g.
//! `(if lt (reg 0) (reg 1) 7)`, `(invoke (reg 2) m (reg 0))`,
//! `(move (field (reg 0) x) (reg 1))`, `(get-extra (reg 0) (reg 1) int)`.
//! Activity classes receive the implicit `finished`/`intent`/`result`/
//! `parent` fields during parsing; the pretty-printer elides them.

use crate::sexp::{read_all, Pos, Sexp};
use crate::syntax::*;
use std::fmt::Write as _;

#[derive(Debug, Clone, thiserror::Error)]
#[error("{pos}: {msg}")]
pub struct ParseError {
    pub pos: Pos,
    pub msg: String,
}

fn err<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, msg: msg.into() })
}

type PResult<T> = Result<T, ParseError>;

fn expect_list<'a>(s: &'a Sexp, what: &str) -> PResult<&'a [Sexp]> {
    s.list().ok_or_else(|| ParseError { pos: s.pos(), msg: format!("expected {what}, found atom `{s}`") })
}

fn expect_atom<'a>(s: &'a Sexp, what: &str) -> PResult<&'a str> {
    s.atom().ok_or_else(|| ParseError { pos: s.pos(), msg: format!("expected {what}, found list `{s}`") })
}

fn head_is(s: &Sexp, kw: &str) -> bool {
    s.list()
        .and_then(|items| items.first())
        .and_then(|h| h.atom())
        .is_some_and(|a| a == kw)
}

/// Parses the body of a keyword form, checking the head.
fn keyword_form<'a>(s: &'a Sexp, kw: &str) -> PResult<&'a [Sexp]> {
    let items = expect_list(s, &format!("({kw} ...)"))?;
    match items.first().and_then(|h| h.atom()) {
        Some(a) if a == kw => Ok(&items[1..]),
        _ => err(s.pos(), format!("expected ({kw} ...), found `{s}`")),
    }
}

fn parse_usize(s: &Sexp, what: &str) -> PResult<usize> {
    let a = expect_atom(s, what)?;
    a.parse().map_err(|_| ParseError { pos: s.pos(), msg: format!("expected {what}, found `{a}`") })
}

fn parse_ty(s: &Sexp) -> PResult<Ty> {
    match s {
        Sexp::Atom { text, pos } => match text.as_str() {
            "int" => Ok(Ty::Int),
            "bool" => Ok(Ty::Bool),
            t if t.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_') => {
                Ok(Ty::Class(t.to_string()))
            }
            t => err(*pos, format!("malformed type `{t}`")),
        },
        Sexp::List { items, pos } => {
            if items.len() == 2 && items[0].atom() == Some("array") {
                Ok(Ty::Array(Box::new(parse_ty(&items[1])?)))
            } else {
                err(*pos, format!("malformed type `{s}`"))
            }
        }
    }
}

fn parse_reg(s: &Sexp) -> PResult<Reg> {
    let items = keyword_form(s, "reg")?;
    if items.len() != 1 {
        return err(s.pos(), "register operand takes one index");
    }
    match expect_atom(&items[0], "register index")? {
        "ret" => Ok(Reg::Ret),
        n => n
            .parse()
            .map(Reg::Idx)
            .map_err(|_| ParseError { pos: items[0].pos(), msg: format!("malformed register index `{n}`") }),
    }
}

fn parse_lhs(s: &Sexp) -> PResult<Lhs> {
    let items = expect_list(s, "a move destination")?;
    let head = items.first().and_then(|h| h.atom()).unwrap_or("");
    match head {
        "reg" => Ok(Lhs::Reg(parse_reg(s)?)),
        "arr" if items.len() == 3 => Ok(Lhs::ArrayCell { arr: parse_reg(&items[1])?, idx: parse_reg(&items[2])? }),
        "field" if items.len() == 3 => Ok(Lhs::Field {
            obj: parse_reg(&items[1])?,
            field: expect_atom(&items[2], "field name")?.to_string(),
        }),
        "sfield" if items.len() == 3 => Ok(Lhs::Static {
            class: expect_atom(&items[1], "class name")?.to_string(),
            field: expect_atom(&items[2], "field name")?.to_string(),
        }),
        _ => err(s.pos(), format!("malformed move destination `{s}`")),
    }
}

fn parse_prim(items: &[Sexp], pos: Pos) -> PResult<PrimLit> {
    match items.first().and_then(|s| s.atom()) {
        Some("int") if items.len() == 2 => {
            let a = expect_atom(&items[1], "integer literal")?;
            a.parse()
                .map(PrimLit::Int)
                .map_err(|_| ParseError { pos: items[1].pos(), msg: format!("malformed integer `{a}`") })
        }
        Some("bool") if items.len() == 2 => match expect_atom(&items[1], "boolean literal")? {
            "true" => Ok(PrimLit::Bool(true)),
            "false" => Ok(PrimLit::Bool(false)),
            b => err(items[1].pos(), format!("malformed boolean `{b}`")),
        },
        Some("null") if items.len() == 1 => Ok(PrimLit::Null),
        _ => err(pos, "malformed literal, expected (prim int n), (prim bool b) or (prim null)"),
    }
}

fn parse_rhs(s: &Sexp) -> PResult<Rhs> {
    if head_is(s, "prim") {
        let items = keyword_form(s, "prim")?;
        Ok(Rhs::Prim(parse_prim(items, s.pos())?))
    } else {
        Ok(Rhs::Lhs(parse_lhs(s)?))
    }
}

fn parse_cmp(s: &Sexp) -> PResult<CmpOp> {
    let a = expect_atom(s, "comparison operator")?;
    CmpOp::ALL
        .iter()
        .copied()
        .find(|op| op.name() == a)
        .ok_or_else(|| ParseError { pos: s.pos(), msg: format!("malformed comparison operator `{a}`") })
}

fn parse_stmt(s: &Sexp) -> PResult<Stmt> {
    let items = expect_list(s, "a statement")?;
    let Some(head) = items.first().and_then(|h| h.atom()) else {
        return err(s.pos(), format!("malformed statement `{s}`"));
    };
    let args = &items[1..];
    let arity_err = || ParseError { pos: s.pos(), msg: format!("wrong operand count in `{s}`") };
    match head {
        "goto" => {
            let [t] = args else { return Err(arity_err()) };
            Ok(Stmt::Goto { target: parse_usize(t, "a statement index")? })
        }
        "move" => {
            let [d, r] = args else { return Err(arity_err()) };
            Ok(Stmt::Move { dst: parse_lhs(d)?, src: parse_rhs(r)? })
        }
        "if" => {
            let [op, a, b, t] = args else { return Err(arity_err()) };
            Ok(Stmt::If {
                op: parse_cmp(op)?,
                lhs: parse_reg(a)?,
                rhs: parse_reg(b)?,
                target: parse_usize(t, "a statement index")?,
            })
        }
        "unop" => {
            let [op, d, sr] = args else { return Err(arity_err()) };
            let name = expect_atom(op, "unary operator")?;
            let op = UnOp::ALL
                .iter()
                .copied()
                .find(|o| o.name() == name)
                .ok_or_else(|| ParseError { pos: op.pos(), msg: format!("malformed unary operator `{name}`") })?;
            Ok(Stmt::Unop { op, dst: parse_reg(d)?, src: parse_reg(sr)? })
        }
        "binop" => {
            let [op, d, a, b] = args else { return Err(arity_err()) };
            let name = expect_atom(op, "binary operator")?;
            let op = BinOp::ALL
                .iter()
                .copied()
                .find(|o| o.name() == name)
                .ok_or_else(|| ParseError { pos: op.pos(), msg: format!("malformed binary operator `{name}`") })?;
            Ok(Stmt::Binop { op, dst: parse_reg(d)?, lhs: parse_reg(a)?, rhs: parse_reg(b)? })
        }
        "new" => {
            let [d, c] = args else { return Err(arity_err()) };
            Ok(Stmt::New { dst: parse_reg(d)?, class: expect_atom(c, "class name")?.to_string() })
        }
        "newarray" => {
            let [d, l, t] = args else { return Err(arity_err()) };
            Ok(Stmt::NewArray { dst: parse_reg(d)?, len: parse_reg(l)?, elem: parse_ty(t)? })
        }
        "checkcast" => {
            let [sr, t] = args else { return Err(arity_err()) };
            Ok(Stmt::CheckCast { src: parse_reg(sr)?, ty: parse_ty(t)? })
        }
        "instof" => {
            let [d, sr, t] = args else { return Err(arity_err()) };
            Ok(Stmt::InstOf { dst: parse_reg(d)?, src: parse_reg(sr)?, ty: parse_ty(t)? })
        }
        "invoke" => {
            if args.len() < 2 {
                return Err(arity_err());
            }
            Ok(Stmt::Invoke {
                recv: parse_reg(&args[0])?,
                method: expect_atom(&args[1], "method name")?.to_string(),
                args: args[2..].iter().map(parse_reg).collect::<PResult<_>>()?,
            })
        }
        "sinvoke" => {
            if args.len() < 2 {
                return Err(arity_err());
            }
            Ok(Stmt::SInvoke {
                class: expect_atom(&args[0], "class name")?.to_string(),
                method: expect_atom(&args[1], "method name")?.to_string(),
                args: args[2..].iter().map(parse_reg).collect::<PResult<_>>()?,
            })
        }
        "return" => {
            if !args.is_empty() {
                return Err(arity_err());
            }
            Ok(Stmt::Return)
        }
        "newintent" => {
            let [d, c] = args else { return Err(arity_err()) };
            Ok(Stmt::NewIntent { dst: parse_reg(d)?, target: expect_atom(c, "class name")?.to_string() })
        }
        "put-extra" => {
            let [i, k, v] = args else { return Err(arity_err()) };
            Ok(Stmt::PutExtra { intent: parse_reg(i)?, key: parse_reg(k)?, value: parse_reg(v)? })
        }
        "get-extra" => {
            let [i, k, t] = args else { return Err(arity_err()) };
            Ok(Stmt::GetExtra { intent: parse_reg(i)?, key: parse_reg(k)?, ty: parse_ty(t)? })
        }
        "start-activity" => {
            let [i] = args else { return Err(arity_err()) };
            Ok(Stmt::StartActivity { intent: parse_reg(i)? })
        }
        _ => err(s.pos(), format!("unknown statement form `{head}`")),
    }
}

fn parse_method(items: &[Sexp], pos: Pos) -> PResult<MethodDef> {
    if items.is_empty() {
        return err(pos, "method declaration needs a name");
    }
    let name = expect_atom(&items[0], "method name")?.to_string();
    let mut rest = &items[1..];
    let is_static = rest.first().is_some_and(|s| head_is(s, "static") || s.atom() == Some("static"));
    if is_static {
        rest = &rest[1..];
    }
    let mut params = None;
    let mut ret_ty = None;
    let mut locals = None;
    let mut body = Vec::new();
    for s in rest {
        if head_is(s, "args") {
            let tys = keyword_form(s, "args")?;
            params = Some(tys.iter().map(parse_ty).collect::<PResult<Vec<_>>>()?);
        } else if head_is(s, "returns") {
            let t = keyword_form(s, "returns")?;
            let [t] = t else { return err(s.pos(), "(returns ...) takes one type") };
            ret_ty = Some(parse_ty(t)?);
        } else if head_is(s, "locals") {
            let n = keyword_form(s, "locals")?;
            let [n] = n else { return err(s.pos(), "(locals ...) takes one count") };
            locals = Some(parse_usize(n, "a register count")?);
        } else {
            // (<pc> <stmt>) pair; indices must be contiguous from 0.
            let pair = expect_list(s, "(<pc> <stmt>)")?;
            let [pc, stmt] = pair else { return err(s.pos(), "expected (<pc> <stmt>)") };
            let pc = parse_usize(pc, "a statement index")?;
            if pc != body.len() {
                return err(s.pos(), format!("statement index {pc} out of order, expected {}", body.len()));
            }
            body.push(parse_stmt(stmt)?);
        }
    }
    Ok(MethodDef {
        name,
        is_static,
        params: params.unwrap_or_default(),
        ret_ty: ret_ty.unwrap_or(Ty::Int),
        locals: locals.unwrap_or(0),
        body,
    })
}

fn parse_class(items: &[Sexp], pos: Pos) -> PResult<ClassDef> {
    if items.is_empty() {
        return err(pos, "class declaration needs a name");
    }
    let name = expect_atom(&items[0], "class name")?.to_string();
    let mut superclass = None;
    let mut interfaces = Vec::new();
    let mut fields = Vec::new();
    let mut methods = Vec::new();
    let mut activity = None;
    for s in &items[1..] {
        let list = expect_list(s, "a class member")?;
        let head = list.first().and_then(|h| h.atom()).unwrap_or("");
        match head {
            "super" => {
                let [c] = &list[1..] else { return err(s.pos(), "(super ...) takes one class") };
                superclass = Some(expect_atom(c, "class name")?.to_string());
            }
            "implements" => {
                for c in &list[1..] {
                    interfaces.push(expect_atom(c, "interface name")?.to_string());
                }
            }
            "activity" => {
                let mut decl = ActivityDecl::default();
                for member in &list[1..] {
                    let cbs = keyword_form(member, "callbacks")?;
                    for cb in cbs {
                        let pair = expect_list(cb, "(<state> <method>)")?;
                        let [st, m] = pair else { return err(cb.pos(), "expected (<state> <method>)") };
                        let st_name = expect_atom(st, "lifecycle state")?;
                        let state = ActState::from_name(st_name)
                            .ok_or_else(|| ParseError { pos: st.pos(), msg: format!("unknown lifecycle state `{st_name}`") })?;
                        decl.callbacks.push((state, expect_atom(m, "method name")?.to_string()));
                    }
                }
                activity = Some(decl);
            }
            "field" => {
                let [f, t] = &list[1..] else { return err(s.pos(), "(field <name> <type>)") };
                fields.push(FieldDef { name: expect_atom(f, "field name")?.to_string(), ty: parse_ty(t)? });
            }
            "method" => methods.push(parse_method(&list[1..], s.pos())?),
            _ => return err(s.pos(), format!("unknown class member `{head}`")),
        }
    }
    Ok(ClassDef { name, superclass, interfaces, fields, methods, activity })
}

/// True when `class` (transitively) extends the built-in activity root.
fn extends_activity(class: &ClassDef, all: &[ClassDef]) -> bool {
    let mut cur = class.superclass.clone();
    let mut steps = 0;
    while let Some(c) = cur {
        if c == ACTIVITY_CLASS {
            return true;
        }
        steps += 1;
        if steps > all.len() {
            return false; // cyclic hierarchy, reported by well-formedness
        }
        cur = all.iter().find(|k| k.name == c).and_then(|k| k.superclass.clone());
    }
    false
}

/// The implicit fields carried by every activity instance.
pub fn activity_implicit_fields() -> Vec<FieldDef> {
    vec![
        FieldDef { name: FINISHED_FIELD.into(), ty: Ty::Bool },
        FieldDef { name: INTENT_FIELD.into(), ty: Ty::class(INTENT_CLASS) },
        FieldDef { name: RESULT_FIELD.into(), ty: Ty::class(INTENT_CLASS) },
        FieldDef { name: PARENT_FIELD.into(), ty: Ty::class(ACTIVITY_CLASS) },
    ]
}

/// Parses a whole program file.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let forms = read_all(text).map_err(|e| {
        let pos = match e {
            crate::sexp::SexpError::UnexpectedClose { pos } | crate::sexp::SexpError::UnclosedParen { pos } => pos,
        };
        ParseError { pos, msg: e.to_string() }
    })?;
    let origin = Pos { line: 1, col: 1 };
    let [prog] = &forms[..] else {
        return err(forms.get(1).map(|s| s.pos()).unwrap_or(origin), "expected exactly one (program ...) form");
    };
    let items = keyword_form(prog, "program")?;

    let mut entry = None;
    let mut lifecycle = None;
    let mut classes: Vec<ClassDef> = Vec::new();
    for s in items {
        let list = expect_list(s, "a program member")?;
        let head = list.first().and_then(|h| h.atom()).unwrap_or("");
        match head {
            "entry" => {
                let [c] = &list[1..] else { return err(s.pos(), "(entry ...) takes one class") };
                entry = Some(expect_atom(c, "class name")?.to_string());
            }
            "lifecycle" => {
                let mut edges = Vec::new();
                for e in &list[1..] {
                    let pair = expect_list(e, "(<state> <state>)")?;
                    let [a, b] = pair else { return err(e.pos(), "expected (<state> <state>)") };
                    let parse_state = |s: &Sexp| -> PResult<ActState> {
                        let n = expect_atom(s, "lifecycle state")?;
                        ActState::from_name(n)
                            .ok_or_else(|| ParseError { pos: s.pos(), msg: format!("unknown lifecycle state `{n}`") })
                    };
                    edges.push((parse_state(a)?, parse_state(b)?));
                }
                lifecycle = Some(edges);
            }
            "class" => classes.push(parse_class(&list[1..], s.pos())?),
            _ => return err(s.pos(), format!("unknown program member `{head}`")),
        }
    }
    let Some(entry) = entry else {
        return err(prog.pos(), "program has no (entry ...) declaration");
    };

    // Activity classes carry the implicit fields from here on.
    let snapshot = classes.clone();
    for class in &mut classes {
        if extends_activity(class, &snapshot) {
            for f in activity_implicit_fields() {
                if !class.fields.iter().any(|g| g.name == f.name) {
                    class.fields.push(f);
                }
            }
        }
    }

    Ok(Program::new(classes, entry, lifecycle.unwrap_or_else(default_lifecycle)))
}

fn write_lhs(out: &mut String, lhs: &Lhs) {
    match lhs {
        Lhs::Reg(r) => {
            let _ = write!(out, "{r}");
        }
        Lhs::ArrayCell { arr, idx } => {
            let _ = write!(out, "(arr {arr} {idx})");
        }
        Lhs::Field { obj, field } => {
            let _ = write!(out, "(field {obj} {field})");
        }
        Lhs::Static { class, field } => {
            let _ = write!(out, "(sfield {class} {field})");
        }
    }
}

fn write_rhs(out: &mut String, rhs: &Rhs) {
    match rhs {
        Rhs::Lhs(l) => write_lhs(out, l),
        Rhs::Prim(PrimLit::Int(i)) => {
            let _ = write!(out, "(prim int {i})");
        }
        Rhs::Prim(PrimLit::Bool(b)) => {
            let _ = write!(out, "(prim bool {b})");
        }
        Rhs::Prim(PrimLit::Null) => out.push_str("(prim null)"),
    }
}

fn write_stmt(out: &mut String, st: &Stmt) {
    match st {
        Stmt::Goto { target } => {
            let _ = write!(out, "(goto {target})");
        }
        Stmt::Move { dst, src } => {
            out.push_str("(move ");
            write_lhs(out, dst);
            out.push(' ');
            write_rhs(out, src);
            out.push(')');
        }
        Stmt::If { op, lhs, rhs, target } => {
            let _ = write!(out, "(if {} {lhs} {rhs} {target})", op.name());
        }
        Stmt::Unop { op, dst, src } => {
            let _ = write!(out, "(unop {} {dst} {src})", op.name());
        }
        Stmt::Binop { op, dst, lhs, rhs } => {
            let _ = write!(out, "(binop {} {dst} {lhs} {rhs})", op.name());
        }
        Stmt::New { dst, class } => {
            let _ = write!(out, "(new {dst} {class})");
        }
        Stmt::NewArray { dst, len, elem } => {
            let _ = write!(out, "(newarray {dst} {len} {elem})");
        }
        Stmt::CheckCast { src, ty } => {
            let _ = write!(out, "(checkcast {src} {ty})");
        }
        Stmt::InstOf { dst, src, ty } => {
            let _ = write!(out, "(instof {dst} {src} {ty})");
        }
        Stmt::Invoke { recv, method, args } => {
            let _ = write!(out, "(invoke {recv} {method}");
            for a in args {
                let _ = write!(out, " {a}");
            }
            out.push(')');
        }
        Stmt::SInvoke { class, method, args } => {
            let _ = write!(out, "(sinvoke {class} {method}");
            for a in args {
                let _ = write!(out, " {a}");
            }
            out.push(')');
        }
        Stmt::Return => out.push_str("(return)"),
        Stmt::NewIntent { dst, target } => {
            let _ = write!(out, "(newintent {dst} {target})");
        }
        Stmt::PutExtra { intent, key, value } => {
            let _ = write!(out, "(put-extra {intent} {key} {value})");
        }
        Stmt::GetExtra { intent, key, ty } => {
            let _ = write!(out, "(get-extra {intent} {key} {ty})");
        }
        Stmt::StartActivity { intent } => {
            let _ = write!(out, "(start-activity {intent})");
        }
    }
}

/// Renders a program in the textual format; `parse_program` of the output
/// reproduces the same structure.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(program");
    let _ = writeln!(out, "  (entry {})", p.entry);
    if p.lifecycle != default_lifecycle() {
        let edges: Vec<String> = p.lifecycle.iter().map(|(a, b)| format!("({a} {b})")).collect();
        let _ = writeln!(out, "  (lifecycle {})", edges.join(" "));
    }
    for class in &p.classes {
        let _ = write!(out, "  (class {}", class.name);
        if let Some(s) = &class.superclass {
            let _ = write!(out, " (super {s})");
        }
        if !class.interfaces.is_empty() {
            let _ = write!(out, " (implements {})", class.interfaces.join(" "));
        }
        let _ = writeln!(out);
        if let Some(act) = &class.activity {
            let cbs: Vec<String> = act.callbacks.iter().map(|(s, m)| format!("({s} {m})")).collect();
            let _ = writeln!(out, "    (activity (callbacks {}))", cbs.join(" "));
        }
        let implicit = activity_implicit_fields();
        let is_activity = class.fields.iter().any(|f| f.name == FINISHED_FIELD && f.ty == Ty::Bool);
        for f in &class.fields {
            if is_activity && implicit.iter().any(|g| g == f) {
                continue;
            }
            let _ = writeln!(out, "    (field {} {})", f.name, f.ty);
        }
        for m in &class.methods {
            let _ = write!(out, "    (method {}", m.name);
            if m.is_static {
                let _ = write!(out, " (static)");
            }
            let params: Vec<String> = m.params.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, " (args {}) (returns {}) (locals {})", params.join(" "), m.ret_ty, m.locals);
            for (pc, st) in m.body.iter().enumerate() {
                let _ = write!(out, "      ({pc} ");
                write_stmt(&mut out, st);
                let _ = writeln!(out, ")");
            }
            let _ = writeln!(out, "    )");
        }
        let _ = writeln!(out, "  )");
    }
    out.push_str(")\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_accepted_program() {
        let p = parse_program("(program (entry A) (class A (super Activity)))").unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.entry, "A");
        // Implicit activity fields were added.
        let a = p.class("A").unwrap();
        assert_eq!(a.fields.len(), 4);
        assert!(a.fields.iter().any(|f| f.name == FINISHED_FIELD));
    }

    #[test]
    fn single_statement_body() {
        let p = parse_program(
            "(program (entry A) (class A (super Activity) (method m (args) (returns int) (locals 0) (0 (goto 0)))))",
        )
        .unwrap();
        let m = p.class("A").unwrap().method("m").unwrap();
        assert_eq!(m.body, vec![Stmt::Goto { target: 0 }]);
    }

    #[test]
    fn duplicate_classes_parse() {
        // Well-formedness rejects this later; the parser is structural.
        let p = parse_program("(program (entry A) (class A (super Activity)) (class A (super Activity)))").unwrap();
        assert_eq!(p.classes.len(), 2);
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_program("(program (entry A)\n (class A (field x 9bad)))").unwrap_err();
        assert_eq!(e.pos.line, 2);
        assert!(e.msg.contains("malformed type"));
    }

    #[test]
    fn unknown_statement_form_rejected() {
        let e = parse_program(
            "(program (entry A) (class A (super Activity) (method m (args) (returns int) (locals 0) (0 (jump 3)))))",
        )
        .unwrap_err();
        assert!(e.msg.contains("unknown statement form"));
    }

    #[test]
    fn statement_operands_round_trip() {
        let text = r#"
(program (entry A)
  (class Helper
    (field data (array int))
    (method work (static) (args int bool) (returns (array int)) (locals 2)
      (0 (move (reg 0) (prim int -7)))
      (1 (move (sfield Helper data) (reg 0)))
      (2 (if ge (reg 0) (reg 1) 5))
      (3 (binop rem (reg 0) (reg 1) (reg 2)))
      (4 (unop not (reg 1) (reg 1)))
      (5 (newarray (reg 1) (reg 0) int))
      (6 (move (arr (reg 1) (reg 0)) (prim int 3)))
      (7 (move (reg ret) (reg 1)))
      (8 (return))))
  (class A (super Activity)
    (activity (callbacks (onCreate boot) (running tap)))
    (field n int)
    (method boot (args) (returns int) (locals 1)
      (0 (sinvoke Helper work (reg 0) (reg 0)))
      (1 (newintent (reg 0) A))
      (2 (put-extra (reg 0) (reg 0) (reg 0)))
      (3 (get-extra (reg 0) (reg 0) int))
      (4 (start-activity (reg 0)))
      (5 (checkcast (reg 0) A))
      (6 (instof (reg 0) (reg 0) Intent))
      (7 (new (reg 0) Helper))
      (8 (invoke (reg 0) boot))
      (9 (move (field (reg 0) n) (prim bool true)))
      (10 (move (reg 0) (prim null)))
      (11 (return))))
)"#;
        let p = parse_program(text).unwrap();
        let printed = pretty_print(&p);
        let p2 = parse_program(&printed).unwrap();
        assert_eq!(p.classes, p2.classes);
        assert_eq!(p.entry, p2.entry);
        assert_eq!(p.lifecycle, p2.lifecycle);
        // Printing is a fixed point.
        assert_eq!(printed, pretty_print(&p2));
    }
}
