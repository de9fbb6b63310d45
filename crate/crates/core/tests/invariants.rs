//! Cross-module invariants run against the fixture corpus and random
//! programs: the taint-only domain never under-approximates the
//! constant-set domain, concrete leaks are always flagged, and
//! representation is reflexive under coverage.

use microdroid_core::absdom::{abs_config, covers, Domain};
use microdroid_core::activity::{initial_config, leak_witness, run_bounded, run_bounded_with, RunLimits};
use microdroid_core::engine::Limits;
use microdroid_core::gen::{gen_program, GenConfig};
use microdroid_core::parse::parse_program;
use microdroid_core::taint::{analyze, load_db, EngineChoice, Verdict};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn fixtures() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(corpus_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|x| x == "mdr") {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn taint_only_is_never_more_permissive_than_const_sets() {
    let db = load_db(&std::fs::read_to_string(corpus_dir().join("sources_sinks.txt")).unwrap()).unwrap();
    for (name, text) in fixtures() {
        let p = parse_program(&text).unwrap();
        let coarse = analyze(&p, &db, Domain::taint_only(), &EngineChoice::Builtin, Limits::default())
            .unwrap()
            .report;
        let fine = analyze(&p, &db, Domain::const_set(32), &EngineChoice::Builtin, Limits::default())
            .unwrap()
            .report;
        for (sink, sv) in &fine.verdicts {
            if sv.verdict == Verdict::LeakPossible {
                assert_eq!(
                    coarse.verdicts[sink].verdict,
                    Verdict::LeakPossible,
                    "{name}: {sink} leaks under const sets but not under taint-only"
                );
            }
        }
    }
}

#[test]
fn concrete_leaks_are_always_flagged() {
    // The contrapositive of the no-leak lemma, checked on the corpus:
    // whenever bounded exploration reaches a sink entry with a secret
    // register, the analysis must report the leak.
    let db = load_db(&std::fs::read_to_string(corpus_dir().join("sources_sinks.txt")).unwrap()).unwrap();
    let mut witnessed = 0;
    for (name, text) in fixtures() {
        let p = parse_program(&text).unwrap();
        // Sinks are named by their defining class in frames.
        let sinks: BTreeSet<(String, String)> = db.sinks.clone();
        let limits = RunLimits { depth: 44, branch_cap: 32, max_configs: 5000, seed: 9 };
        let report = run_bounded_with(&p, initial_config(&p), limits, &db.sources);
        let mut leaked_sinks = BTreeSet::new();
        for cfg in &report.reached {
            if let Some((pp, _)) = leak_witness(cfg, &sinks) {
                leaked_sinks.insert(format!("{}.{}", pp.class, pp.method));
            }
        }
        if leaked_sinks.is_empty() {
            continue;
        }
        for domain in [Domain::taint_only(), Domain::const_set(32)] {
            let analysis = analyze(&p, &db, domain, &EngineChoice::Builtin, Limits::default()).unwrap();
            for sink in &leaked_sinks {
                assert_eq!(
                    analysis.report.verdicts[sink].verdict,
                    Verdict::LeakPossible,
                    "{name}: concrete trace leaks into {sink} but {} missed it",
                    domain.name()
                );
                witnessed += 1;
            }
        }
    }
    assert!(witnessed >= 6, "the corpus should exhibit several concrete leaks, saw {witnessed}");
}

#[test]
fn abstract_taint_dominates_concrete_taint_on_random_heaps() {
    use microdroid_core::absdom::{abs_block, abs_value, taint_of_abs};
    use microdroid_core::syntax::{PrimLit, Pp, Ty};
    use microdroid_core::values::{taint_of, Annot, Block, Heap, Location, Taint, Value};
    use rand::prelude::*;

    let d = Domain::const_set(16);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        // A small random heap with possible cycles and mixed taints.
        let n = rng.gen_range(1..=5usize);
        let locations: Vec<Location> = (0..n)
            .map(|k| Location { annot: Annot::Pp(Pp::new("C", "m", k)), idx: 0 })
            .collect();
        let mut heap = Heap::new();
        let mut rand_value = |rng: &mut rand_chacha::ChaCha8Rng| match rng.gen_range(0..4) {
            0 => Value::Loc(locations[rng.gen_range(0..n)].clone()),
            1 => Value::Prim(PrimLit::Int(rng.gen_range(-5..5)), Taint::Secret),
            2 => Value::Prim(PrimLit::Bool(true), Taint::Public),
            _ => Value::Prim(PrimLit::Null, Taint::Public),
        };
        for loc in &locations {
            let block = if rng.gen_bool(0.5) {
                Block::Obj {
                    class: "C".into(),
                    fields: (0..rng.gen_range(0..3))
                        .map(|i| (format!("f{i}"), rand_value(&mut rng)))
                        .collect(),
                }
            } else {
                Block::Arr {
                    elem: Ty::Int,
                    cells: (0..rng.gen_range(0..3)).map(|_| rand_value(&mut rng)).collect(),
                }
            };
            heap.insert(loc.clone(), block);
        }
        // A heap-summary lookup standing in for a model covering the heap.
        let summaries: std::collections::BTreeMap<Annot, microdroid_core::absdom::AbsBlock> = heap
            .iter()
            .map(|(l, b)| (l.annot.clone(), abs_block(&d, b)))
            .collect();
        let lookup = |a: &Annot| summaries.get(a).cloned();
        for loc in &locations {
            let v = Value::Loc(loc.clone());
            let concrete = taint_of(&v, &heap);
            let abstracted = taint_of_abs(&abs_value(&d, &v), &lookup);
            assert!(concrete <= abstracted, "abstract taint lost the concrete one at {loc}");
        }
    }
}

#[test]
fn every_corpus_fixture_emits_a_wellformed_script() {
    use microdroid_core::sexp::read_all;
    let db = load_db(&std::fs::read_to_string(corpus_dir().join("sources_sinks.txt")).unwrap()).unwrap();
    for (name, text) in fixtures() {
        let p = parse_program(&text).unwrap();
        for domain in [Domain::taint_only(), Domain::const_set(32)] {
            let analysis = analyze(&p, &db, domain, &EngineChoice::Builtin, Limits::default()).unwrap();
            let emit = || {
                microdroid_core::smt::emit_chc(
                    &p,
                    &analysis.abstract_program,
                    &db.sinks,
                    Some(&analysis.model),
                )
                .unwrap_or_else(|e| panic!("{name} [{}]: emission failed: {e}", domain.name()))
            };
            let doc = emit();
            let forms = read_all(&doc.text)
                .unwrap_or_else(|e| panic!("{name} [{}]: unbalanced script: {e}", domain.name()));
            let rules = forms.iter().filter(|f| f.to_string().starts_with("(rule")).count();
            assert!(rules > 0, "{name}: no rules emitted");
            // One query per resolvable sink, in order.
            let queries = forms.iter().filter(|f| f.to_string().starts_with("(query")).count();
            assert_eq!(queries, doc.queries.len());
            assert_eq!(doc.text, emit().text, "{name}: emission not deterministic");
        }
    }
}

#[test]
fn corpus_model_values_encode_and_decode_exactly() {
    use microdroid_core::smt::Encoding;
    let db = load_db(&std::fs::read_to_string(corpus_dir().join("sources_sinks.txt")).unwrap()).unwrap();
    for (name, text) in fixtures() {
        let p = parse_program(&text).unwrap();
        for domain in [Domain::taint_only(), Domain::const_set(32)] {
            let analysis = analyze(&p, &db, domain, &EngineChoice::Builtin, Limits::default()).unwrap();
            let enc = Encoding::build(&p, &analysis.abstract_program, Some(&analysis.model)).unwrap();
            let model = &analysis.model;
            let mut values: Vec<microdroid_core::absdom::AbsVal> = Vec::new();
            for entries in model.r.values() {
                for (ctx, regs) in entries {
                    values.extend(ctx.iter().cloned());
                    values.extend(regs.iter().cloned());
                }
            }
            for b in model.h.values() {
                values.extend(b.values().into_iter().cloned());
            }
            values.extend(model.s.values().cloned());
            values.extend(model.rhs.values().cloned());
            values.extend(model.i.values().cloned());
            for v in values {
                let e = enc.encode_val(&v).unwrap_or_else(|err| {
                    panic!("{name} [{}]: cannot encode {v}: {err}", domain.name())
                });
                assert_eq!(enc.decode_val(&e), v, "{name}: round trip changed {v}");
            }
        }
    }
}

#[test]
fn representation_is_reflexive_under_coverage() {
    let d = Domain::const_set(8);
    for seed in 20..35 {
        let p = gen_program(seed, GenConfig::default());
        let limits = RunLimits { depth: 10, branch_cap: 16, max_configs: 200, seed };
        let report = run_bounded(&p, initial_config(&p), limits);
        for cfg in &report.reached {
            let facts = abs_config(&d, cfg);
            assert!(covers(&facts, &facts));
        }
    }
}
