//! Seeded random program generator over a bounded grammar.
//!
//! Programs stay small enough for exhaustive concrete exploration (at
//! most three classes, two methods per class, ten statements per method,
//! four indexed registers, constants in [-3, 3]) while every statement
//! form appears with nonzero probability. Generated programs are always
//! well-formed; the generator is the front end of the soundness harness,
//! so a failing program must be reproducible from its seed alone.

use crate::syntax::*;
use crate::wf::check_well_formed;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_classes: usize,
    pub max_methods_per_class: usize,
    pub max_stmts: usize,
    pub max_const: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_classes: 3, max_methods_per_class: 2, max_stmts: 10, max_const: 3 }
    }
}

struct MethodSig {
    class: String,
    name: String,
    is_static: bool,
    arity: usize,
}

fn gen_ty(rng: &mut ChaCha8Rng, classes: &[String]) -> Ty {
    match rng.gen_range(0..5) {
        0 => Ty::Bool,
        1 | 2 => Ty::Int,
        3 => Ty::array(Ty::Int),
        _ => Ty::Class(classes.choose(rng).cloned().unwrap_or_else(|| INTENT_CLASS.into())),
    }
}

/// Generates one well-formed program from a seed.
pub fn gen_program(seed: u64, cfg: GenConfig) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = rng.gen_range(1..=cfg.max_classes);
    // Class 0 is the entry activity; class 1 (when present) is a second
    // activity half the time; the rest are plain classes.
    let mut names = Vec::new();
    let mut is_act = Vec::new();
    for i in 0..n_classes {
        names.push(format!("K{i}"));
        is_act.push(i == 0 || (i == 1 && rng.gen_bool(0.5)));
    }

    // Signatures first, so call statements can reference them.
    let mut sigs: Vec<MethodSig> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n_methods = rng.gen_range(1..=cfg.max_methods_per_class);
        for j in 0..n_methods {
            sigs.push(MethodSig {
                class: name.clone(),
                name: format!("m{j}"),
                // Callbacks must be instance methods; keep m0 virtual.
                is_static: j > 0 && rng.gen_bool(0.4),
                arity: rng.gen_range(0..=1),
            });
        }
        let _ = i;
    }

    let mut classes = Vec::new();
    for (i, cname) in names.iter().enumerate() {
        let mut fields = Vec::new();
        for f in 0..rng.gen_range(0..=2usize) {
            fields.push(FieldDef { name: format!("f{f}"), ty: gen_ty(&mut rng, &names) });
        }
        let my_sigs: Vec<&MethodSig> = sigs.iter().filter(|s| s.class == *cname).collect();
        let mut methods = Vec::new();
        for sig in &my_sigs {
            let locals = rng.gen_range(1..=2usize);
            let m = MethodDef {
                name: sig.name.clone(),
                is_static: sig.is_static,
                params: (0..sig.arity).map(|_| Ty::Int).collect(),
                ret_ty: Ty::Int,
                locals,
                body: vec![],
            };
            methods.push(m);
        }
        let activity = if is_act[i] {
            let mut callbacks = Vec::new();
            let candidates: Vec<&&MethodSig> = my_sigs.iter().filter(|s| !s.is_static).collect();
            if !candidates.is_empty() {
                for state in [ActState::OnCreate, ActState::Running, ActState::OnPause] {
                    if rng.gen_bool(0.6) {
                        let m = candidates.choose(&mut rng).unwrap();
                        callbacks.push((state, m.name.clone()));
                    }
                }
            }
            Some(ActivityDecl { callbacks })
        } else {
            None
        };
        classes.push(ClassDef {
            name: cname.clone(),
            superclass: is_act[i].then(|| ACTIVITY_CLASS.to_string()),
            interfaces: vec![],
            fields,
            methods,
            activity,
        });
    }

    // Bodies, now that the whole skeleton exists.
    let skeleton = Program::new(classes.clone(), names[0].clone(), default_lifecycle());
    for class in &mut classes {
        let class_name = class.name.clone();
        for m in &mut class.methods {
            let body = gen_body(&mut rng, &skeleton, &class_name, m, &sigs, &names, cfg);
            m.body = body;
        }
    }

    // Activity classes grow their implicit fields, exactly as parsing
    // does.
    for class in &mut classes {
        if class.superclass.as_deref() == Some(ACTIVITY_CLASS) {
            for f in crate::parse::activity_implicit_fields() {
                class.fields.push(f);
            }
        }
    }

    let p = Program::new(classes, names[0].clone(), default_lifecycle());
    let diags = check_well_formed(&p);
    assert!(diags.is_empty(), "generator produced an ill-formed program (seed {seed}): {diags:?}");
    p
}

fn gen_body(
    rng: &mut ChaCha8Rng,
    skeleton: &Program,
    class: &str,
    m: &MethodDef,
    sigs: &[MethodSig],
    class_names: &[String],
    cfg: GenConfig,
) -> Vec<Stmt> {
    let len = rng.gen_range(2..=cfg.max_stmts);
    let regs = m.reg_count();
    let reg = |rng: &mut ChaCha8Rng| Reg::Idx(rng.gen_range(0..regs));
    let any_reg = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.1) {
            Reg::Ret
        } else {
            Reg::Idx(rng.gen_range(0..regs))
        }
    };
    let lit = |rng: &mut ChaCha8Rng| match rng.gen_range(0..6) {
        0 => PrimLit::Bool(rng.gen_bool(0.5)),
        1 => PrimLit::Null,
        _ => PrimLit::Int(rng.gen_range(-cfg.max_const..=cfg.max_const)),
    };
    let mut body = Vec::new();
    for _pc in 0..len - 1 {
        let target = rng.gen_range(0..len);
        let st = match rng.gen_range(0..20) {
            0 => Stmt::Goto { target },
            1 => Stmt::If {
                op: *CmpOp::ALL.choose(rng).unwrap(),
                lhs: reg(rng),
                rhs: reg(rng),
                target,
            },
            2 => Stmt::Unop { op: *UnOp::ALL.choose(rng).unwrap(), dst: any_reg(rng), src: reg(rng) },
            3 => Stmt::Binop {
                op: *BinOp::ALL.choose(rng).unwrap(),
                dst: any_reg(rng),
                lhs: reg(rng),
                rhs: reg(rng),
            },
            4 => {
                // Objects come from plain declared classes.
                let candidates: Vec<&String> = class_names.iter().filter(|c| skeleton.class(c).is_some()).collect();
                Stmt::New { dst: reg(rng), class: (*candidates.choose(rng).unwrap()).clone() }
            }
            5 => Stmt::NewArray { dst: reg(rng), len: reg(rng), elem: Ty::Int },
            6 => Stmt::CheckCast { src: reg(rng), ty: gen_ty(rng, class_names) },
            7 => Stmt::InstOf { dst: reg(rng), src: reg(rng), ty: gen_ty(rng, class_names) },
            8 => {
                // Virtual call to a known instance method.
                let candidates: Vec<&MethodSig> = sigs.iter().filter(|s| !s.is_static).collect();
                let s = candidates.choose(rng).unwrap();
                Stmt::Invoke {
                    recv: reg(rng),
                    method: s.name.clone(),
                    args: (0..s.arity).map(|_| reg(rng)).collect(),
                }
            }
            9 => {
                let candidates: Vec<&MethodSig> = sigs.iter().filter(|s| s.is_static).collect();
                match candidates.choose(rng) {
                    Some(s) => Stmt::SInvoke {
                        class: s.class.clone(),
                        method: s.name.clone(),
                        args: (0..s.arity).map(|_| reg(rng)).collect(),
                    },
                    None => Stmt::Goto { target },
                }
            }
            10 => Stmt::NewIntent { dst: reg(rng), target: class_names.choose(rng).unwrap().clone() },
            11 => Stmt::PutExtra { intent: reg(rng), key: reg(rng), value: reg(rng) },
            12 => Stmt::GetExtra { intent: reg(rng), key: reg(rng), ty: gen_ty(rng, class_names) },
            13 => Stmt::StartActivity { intent: reg(rng) },
            14 => Stmt::Return,
            15 => {
                // Field write against a declared field somewhere.
                match gen_field_ref(rng, skeleton, class_names) {
                    Some((_, fname)) => Stmt::Move {
                        dst: Lhs::Field { obj: reg(rng), field: fname },
                        src: Rhs::Prim(lit(rng)),
                    },
                    None => Stmt::Goto { target },
                }
            }
            16 => match gen_field_ref(rng, skeleton, class_names) {
                Some((cname, fname)) => Stmt::Move {
                    dst: Lhs::Reg(any_reg(rng)),
                    src: Rhs::Lhs(Lhs::Static { class: cname, field: fname }),
                },
                None => Stmt::Goto { target },
            },
            17 => match gen_field_ref(rng, skeleton, class_names) {
                Some((cname, fname)) => Stmt::Move {
                    dst: Lhs::Static { class: cname, field: fname },
                    src: Rhs::Lhs(Lhs::Reg(reg(rng))),
                },
                None => Stmt::Goto { target },
            },
            18 => Stmt::Move {
                dst: Lhs::ArrayCell { arr: reg(rng), idx: reg(rng) },
                src: Rhs::Prim(PrimLit::Int(rng.gen_range(-cfg.max_const..=cfg.max_const))),
            },
            _ => Stmt::Move { dst: Lhs::Reg(any_reg(rng)), src: Rhs::Prim(lit(rng)) },
        };
        body.push(st);
    }
    body.push(Stmt::Return);
    let _ = class;
    body
}

fn gen_field_ref(rng: &mut ChaCha8Rng, skeleton: &Program, class_names: &[String]) -> Option<(String, String)> {
    let mut candidates = Vec::new();
    for c in class_names {
        if let Some(class) = skeleton.class(c) {
            for f in &class.fields {
                candidates.push((c.clone(), f.name.clone()));
            }
        }
    }
    candidates.choose(rng).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn generated_programs_are_well_formed_and_reproducible() {
        for seed in 0..50 {
            let p1 = gen_program(seed, GenConfig::default());
            let p2 = gen_program(seed, GenConfig::default());
            assert_eq!(crate::parse::pretty_print(&p1), crate::parse::pretty_print(&p2));
            assert!(check_well_formed(&p1).is_empty());
        }
    }

    #[test]
    fn every_statement_form_eventually_appears() {
        let mut seen: BTreeSet<&'static str> = BTreeSet::new();
        for seed in 0..300 {
            let p = gen_program(seed, GenConfig::default());
            for class in &p.classes {
                for m in &class.methods {
                    for st in &m.body {
                        seen.insert(match st {
                            Stmt::Goto { .. } => "goto",
                            Stmt::Move { .. } => "move",
                            Stmt::If { .. } => "if",
                            Stmt::Unop { .. } => "unop",
                            Stmt::Binop { .. } => "binop",
                            Stmt::New { .. } => "new",
                            Stmt::NewArray { .. } => "newarray",
                            Stmt::CheckCast { .. } => "checkcast",
                            Stmt::InstOf { .. } => "instof",
                            Stmt::Invoke { .. } => "invoke",
                            Stmt::SInvoke { .. } => "sinvoke",
                            Stmt::Return => "return",
                            Stmt::NewIntent { .. } => "newintent",
                            Stmt::PutExtra { .. } => "put-extra",
                            Stmt::GetExtra { .. } => "get-extra",
                            Stmt::StartActivity { .. } => "start-activity",
                        });
                    }
                }
            }
        }
        assert_eq!(seen.len(), 16, "missing forms: {seen:?}");
    }

    #[test]
    fn round_trips_through_the_textual_format() {
        for seed in 0..20 {
            let p = gen_program(seed, GenConfig::default());
            let text = crate::parse::pretty_print(&p);
            let q = crate::parse::parse_program(&text).unwrap();
            assert_eq!(p.classes, q.classes);
            assert_eq!(p.entry, q.entry);
        }
    }
}
