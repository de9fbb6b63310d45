//! Well-formedness checking.
//!
//! A program is well-formed when class names are pairwise distinct,
//! per-class field and method names are pairwise distinct, the hierarchy
//! is acyclic and closed, every branch target and register index is in
//! range, statically named classes/fields/methods resolve, callbacks
//! resolve to instance methods, and the entry class is an activity.

use crate::hier;
use crate::parse::activity_implicit_fields;
use crate::syntax::*;
use std::collections::BTreeSet;
use std::fmt;

/// One violated condition, naming the offending class/method/pc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub class: Option<String>,
    pub method: Option<String>,
    pub pc: Option<usize>,
    pub msg: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.class, &self.method, self.pc) {
            (Some(c), Some(m), Some(pc)) => write!(f, "{c}.{m}:{pc}: {}", self.msg),
            (Some(c), Some(m), None) => write!(f, "{c}.{m}: {}", self.msg),
            (Some(c), None, None) => write!(f, "{c}: {}", self.msg),
            _ => f.write_str(&self.msg),
        }
    }
}

struct Check<'p> {
    p: &'p Program,
    out: Vec<Diagnostic>,
}

impl<'p> Check<'p> {
    fn global(&mut self, msg: impl Into<String>) {
        self.out.push(Diagnostic { class: None, method: None, pc: None, msg: msg.into() });
    }

    fn class(&mut self, c: &str, msg: impl Into<String>) {
        self.out.push(Diagnostic { class: Some(c.into()), method: None, pc: None, msg: msg.into() });
    }

    fn method(&mut self, c: &str, m: &str, msg: impl Into<String>) {
        self.out
            .push(Diagnostic { class: Some(c.into()), method: Some(m.into()), pc: None, msg: msg.into() });
    }

    fn stmt(&mut self, c: &str, m: &str, pc: usize, msg: impl Into<String>) {
        self.out.push(Diagnostic {
            class: Some(c.into()),
            method: Some(m.into()),
            pc: Some(pc),
            msg: msg.into(),
        });
    }

    fn check_ty(&mut self, ty: &Ty, c: &str, m: Option<&str>, pc: Option<usize>) {
        let mut t = ty;
        while let Ty::Array(inner) = t {
            t = inner;
        }
        if let Ty::Class(name) = t {
            if !self.p.class_exists(name) {
                let msg = format!("unknown class `{name}` in type `{ty}`");
                match (m, pc) {
                    (Some(m), Some(pc)) => self.stmt(c, m, pc, msg),
                    (Some(m), None) => self.method(c, m, msg),
                    _ => self.class(c, msg),
                }
            }
        }
    }

    fn check_hierarchy(&mut self) {
        let names: Vec<&str> = self.p.classes.iter().map(|c| c.name.as_str()).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(*n) {
                self.class(n, "duplicate class name");
            }
            if Program::is_builtin(n) {
                self.class(n, "class name collides with a built-in class");
            }
        }
        for class in &self.p.classes {
            for s in class.superclass.iter().chain(class.interfaces.iter()) {
                if !self.p.class_exists(s) {
                    self.class(&class.name, format!("unknown supertype `{s}`"));
                }
            }
            // Cycle detection along the superclass chain.
            let mut cur = class.superclass.clone();
            let mut steps = 0;
            while let Some(c) = cur {
                if c == class.name {
                    self.class(&class.name, "cyclic superclass chain");
                    break;
                }
                steps += 1;
                if steps > self.p.classes.len() {
                    break;
                }
                cur = self.p.class(&c).and_then(|k| k.superclass.clone());
            }
        }
    }

    fn check_class_members(&mut self, class: &ClassDef) {
        let c = &class.name;
        let mut fields = BTreeSet::new();
        for f in &class.fields {
            if !fields.insert(f.name.as_str()) {
                self.class(c, format!("duplicate field `{}`", f.name));
            }
            self.check_ty(&f.ty, c, None, None);
        }
        // Shadowing an inherited field would make the flat layout ambiguous.
        if let Some(sup) = &class.superclass {
            for inherited in hier::fields_of(self.p, sup) {
                if class.fields.iter().any(|f| f.name == inherited.name) {
                    self.class(c, format!("field `{}` shadows an inherited field", inherited.name));
                }
            }
        }
        let is_activity = hier::is_activity_class(self.p, c);
        if is_activity {
            for imp in activity_implicit_fields() {
                match class.fields.iter().find(|f| f.name == imp.name) {
                    Some(f) if f.ty != imp.ty => {
                        self.class(c, format!("activity field `{}` must have type {}", imp.name, imp.ty))
                    }
                    Some(_) => {}
                    None => self.class(c, format!("activity class lacks implicit field `{}`", imp.name)),
                }
            }
        } else {
            if class.activity.is_some() {
                self.class(c, "callbacks declared on a class that does not extend Activity");
            }
            for imp in activity_implicit_fields() {
                if class.fields.iter().any(|f| f.name == imp.name) {
                    self.class(c, format!("field name `{}` is reserved for activities", imp.name));
                }
            }
        }

        let mut methods = BTreeSet::new();
        for m in &class.methods {
            if !methods.insert(m.name.as_str()) {
                self.class(c, format!("duplicate method `{}`", m.name));
            }
            self.check_method(class, m);
        }

        if let Some(act) = &class.activity {
            for (state, name) in &act.callbacks {
                match hier::lookup(self.p, c, name) {
                    None => self.class(c, format!("callback `{name}` for state {state} does not resolve")),
                    Some((_, d)) if d.is_static => {
                        self.class(c, format!("callback `{name}` for state {state} resolves to a static method"))
                    }
                    Some(_) => {}
                }
            }
        }
    }

    fn check_method(&mut self, class: &ClassDef, m: &MethodDef) {
        let c = &class.name;
        for t in m.params.iter().chain(Some(&m.ret_ty)) {
            self.check_ty(t, c, Some(&m.name), None);
        }
        if m.body.is_empty() {
            self.method(c, &m.name, "empty method body");
            return;
        }
        let len = m.body.len();
        let regs = m.reg_count();
        for (pc, st) in m.body.iter().enumerate() {
            let check_target = |this: &mut Self, target: usize| {
                if target >= len {
                    this.stmt(c, &m.name, pc, format!("branch target {target} out of range (body has {len} statements)"));
                }
            };
            let check_reg = |this: &mut Self, r: &Reg| {
                if let Reg::Idx(i) = r {
                    if *i >= regs {
                        this.stmt(c, &m.name, pc, format!("register {i} out of range (method has {regs} registers)"));
                    }
                }
            };
            let check_lhs = |this: &mut Self, lhs: &Lhs| match lhs {
                Lhs::Reg(r) => check_reg(this, r),
                Lhs::ArrayCell { arr, idx } => {
                    check_reg(this, arr);
                    check_reg(this, idx);
                }
                Lhs::Field { obj, .. } => check_reg(this, obj),
                Lhs::Static { class, field } => {
                    if !this.p.class_exists(class) {
                        this.stmt(c, &m.name, pc, format!("unknown class `{class}` in static access"));
                    } else if !hier::fields_of(this.p, class).iter().any(|f| f.name == *field) {
                        this.stmt(c, &m.name, pc, format!("unknown static field `{class}.{field}`"));
                    }
                }
            };
            match st {
                Stmt::Goto { target } => check_target(self, *target),
                Stmt::If { lhs, rhs, target, .. } => {
                    check_reg(self, lhs);
                    check_reg(self, rhs);
                    check_target(self, *target);
                }
                Stmt::Move { dst, src } => {
                    check_lhs(self, dst);
                    if let Rhs::Lhs(l) = src {
                        check_lhs(self, l);
                    }
                }
                Stmt::Unop { dst, src, .. } => {
                    check_reg(self, dst);
                    check_reg(self, src);
                }
                Stmt::Binop { dst, lhs, rhs, .. } => {
                    check_reg(self, dst);
                    check_reg(self, lhs);
                    check_reg(self, rhs);
                }
                Stmt::New { dst, class: cls } => {
                    check_reg(self, dst);
                    if !self.p.class_exists(cls) {
                        self.stmt(c, &m.name, pc, format!("unknown class `{cls}`"));
                    } else if Program::is_builtin(cls) {
                        self.stmt(c, &m.name, pc, format!("built-in class `{cls}` cannot be instantiated with new"));
                    }
                }
                Stmt::NewArray { dst, len: l, elem } => {
                    check_reg(self, dst);
                    check_reg(self, l);
                    self.check_ty(elem, c, Some(&m.name), Some(pc));
                }
                Stmt::CheckCast { src, ty } => {
                    check_reg(self, src);
                    self.check_ty(ty, c, Some(&m.name), Some(pc));
                }
                Stmt::InstOf { dst, src, ty } => {
                    check_reg(self, dst);
                    check_reg(self, src);
                    self.check_ty(ty, c, Some(&m.name), Some(pc));
                }
                Stmt::Invoke { recv, args, .. } => {
                    check_reg(self, recv);
                    for a in args {
                        check_reg(self, a);
                    }
                }
                Stmt::SInvoke { class: cls, method, args } => {
                    for a in args {
                        check_reg(self, a);
                    }
                    if !self.p.class_exists(cls) {
                        self.stmt(c, &m.name, pc, format!("unknown class `{cls}` in static call"));
                    } else {
                        match hier::lookup(self.p, cls, method) {
                            None => self.stmt(c, &m.name, pc, format!("static call `{cls}.{method}` does not resolve")),
                            Some((_, d)) if !d.is_static => {
                                self.stmt(c, &m.name, pc, format!("static call to instance method `{cls}.{method}`"))
                            }
                            Some((_, d)) if d.params.len() != args.len() => {
                                self.stmt(c, &m.name, pc, format!("static call `{cls}.{method}` arity mismatch"))
                            }
                            Some(_) => {}
                        }
                    }
                }
                Stmt::NewIntent { dst, target } => {
                    check_reg(self, dst);
                    if !self.p.class_exists(target) {
                        self.stmt(c, &m.name, pc, format!("unknown class `{target}` as intent target"));
                    }
                }
                Stmt::PutExtra { intent, key, value } => {
                    check_reg(self, intent);
                    check_reg(self, key);
                    check_reg(self, value);
                }
                Stmt::GetExtra { intent, key, ty } => {
                    check_reg(self, intent);
                    check_reg(self, key);
                    self.check_ty(ty, c, Some(&m.name), Some(pc));
                }
                Stmt::StartActivity { intent } => check_reg(self, intent),
                Stmt::Return => {}
            }
        }
    }
}

/// Checks every well-formedness condition; an empty result means ok.
pub fn check_well_formed(p: &Program) -> Vec<Diagnostic> {
    let mut ck = Check { p, out: Vec::new() };
    ck.check_hierarchy();
    for class in &p.classes {
        ck.check_class_members(class);
    }
    match p.class(&p.entry) {
        None => ck.global(format!("entry class `{}` is not declared", p.entry)),
        Some(_) if !hier::is_activity_class(p, &p.entry) => {
            ck.global(format!("entry class `{}` is not an activity", p.entry))
        }
        Some(_) => {}
    }
    ck.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    #[test]
    fn accepts_two_class_program() {
        let p = parse_program(
            r#"(program (entry A)
                 (class Util
                   (method id (static) (args int) (returns int) (locals 0)
                     (0 (move (reg ret) (reg 0)))
                     (1 (return))))
                 (class A (super Activity)
                   (activity (callbacks (onCreate boot)))
                   (method boot (args) (returns int) (locals 1)
                     (0 (sinvoke Util id (reg 0)))
                     (1 (return)))))"#,
        )
        .unwrap();
        assert_eq!(check_well_formed(&p), vec![]);
    }

    #[test]
    fn duplicate_class_names_rejected() {
        let p = parse_program("(program (entry C) (class C (super Activity)) (class C (super Activity)))").unwrap();
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.msg.contains("duplicate class name") && d.class.as_deref() == Some("C")));
    }

    #[test]
    fn branch_target_out_of_range() {
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (method m (args) (returns int) (locals 0)
                     (0 (goto 99))
                     (1 (move (reg ret) (prim int 0)))
                     (2 (return)))))"#,
        )
        .unwrap();
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.pc == Some(0) && d.msg.contains("target 99 out of range")));
    }

    #[test]
    fn register_bounds_enforced() {
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (method m (args int) (returns int) (locals 1)
                     (0 (move (reg 3) (prim int 0)))
                     (1 (return)))))"#,
        )
        .unwrap();
        // locals 1 + receiver + 1 arg = 3 registers, so index 3 is out.
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.msg.contains("register 3 out of range")));
    }

    #[test]
    fn unresolvable_callback_rejected() {
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (activity (callbacks (onCreate missing)))))"#,
        )
        .unwrap();
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.msg.contains("callback `missing`")));
    }

    #[test]
    fn entry_must_be_an_activity() {
        let p = parse_program("(program (entry C) (class C))").unwrap();
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.msg.contains("not an activity")));
    }

    #[test]
    fn static_call_discipline() {
        let p = parse_program(
            r#"(program (entry A)
                 (class A (super Activity)
                   (method inst (args) (returns int) (locals 0) (0 (return)))
                   (method m (args) (returns int) (locals 0)
                     (0 (sinvoke A inst))
                     (1 (return)))))"#,
        )
        .unwrap();
        let ds = check_well_formed(&p);
        assert!(ds.iter().any(|d| d.msg.contains("static call to instance method")));
    }
}
