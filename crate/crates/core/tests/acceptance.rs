//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tqr::config::RunConfig;
use tqr::embed::{
    cmul, conj, evaluate_link_prediction, holdout_split, tcomplex, time_score_decomposed, train_on, EmbedConfig,
    EmbeddingStore,
};
use tqr::forge::{answer_oracle, generate_dataset, generate_unseen_combos, Mix, Question, TemplateBank};
use tqr::harness::lab::{summarize, Lab, Outcome, Record, Regime, MAIN_VARIANTS};
use tqr::harness::render::records_jsonl;
use tqr::model::{vocab_for, Arch, QaModel, Variant};
use tqr::seed::{derive_seed, rng_for};
use tqr::supervision::hard_time_ids;
use tqr::synth::{generate_kg, SynthConfig};
use tqr::tkg::{EntityId, TemporalKg};
use tqr_tensor::{grad_check, Graph, NodeId, OpKind, ParamSet, Tensor};

type Verdict = Result<String, String>;

struct Gate {
    failures: usize,
}

impl Gate {
    fn run(&mut self, id: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let mut verdict = f();
        let took = start.elapsed();
        if let (Ok(msg), Some(b)) = (&verdict, budget) {
            if took > b {
                verdict = Err(format!("{msg}; took {took:.1?} over the {b:?} budget"));
            }
        }
        match verdict {
            Ok(msg) => println!("PASS criterion {id}: {msg} [{took:.1?}]"),
            Err(msg) => {
                self.failures += 1;
                println!("FAIL criterion {id}: {msg} [{took:.1?}]");
            }
        }
    }
}

fn ensure(ok: bool, msg: String) -> Verdict {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---- 1: timestamp decomposition ------------------------------------------

fn as_complex(x: &[f64]) -> Vec<Complex64> {
    let h = x.len() / 2;
    (0..h).map(|d| Complex64::new(x[d], x[h + d])).collect()
}

/// Re <e_s, v, t, conj(e_o)> evaluated with library complex arithmetic.
fn tcomplex_oracle(es: &[f64], v: &[f64], t: &[f64], eo: &[f64]) -> f64 {
    let (a, b, c, e) = (as_complex(es), as_complex(v), as_complex(t), as_complex(eo));
    (0..a.len()).map(|d| (a[d] * b[d] * c[d] * e[d].conj()).re).sum()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for d in [4usize, 64] {
        for _ in 0..1000 {
            let mut draw = || (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (es, v, t, eo) = (draw(), draw(), draw(), draw());
            let full = tcomplex(&es, &v, &t, &eo);
            let dec = time_score_decomposed(&es, &cmul(&v, &conj(&eo)), &t);
            worst = worst.max((full - dec).abs());
            worst_oracle = worst_oracle.max((full - tcomplex_oracle(&es, &v, &t, &eo)).abs());
        }
    }
    ensure(
        worst < 1e-9 && worst_oracle < 1e-9,
        format!("max |decomposed - full| = {worst:.2e}, max |full - complex oracle| = {worst_oracle:.2e} (< 1e-9)"),
    )
}

// ---- 2: gradients ----------------------------------------------------------

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type OpFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> tqr_tensor::Result<NodeId>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let d = 8;
    let mut m = |r: usize, c: usize| random(rng, r, c, -1.0, 1.0);
    let (a, b, c8, row) = (m(5, d), m(5, d), m(d, 3), m(1, d));
    let (q, k, v) = (m(4, d), m(6, d), m(6, 5));
    let (gain, bias) = (m(1, d), m(1, d));
    // Keep maximum away from ties.
    let b_far = Tensor::matrix(5, d, a.data().iter().zip(b.data()).map(|(x, y)| x + 0.2 * y.signum() + 0.3 * y).collect()).unwrap();
    let pos = Tensor::matrix(5, d, a.data().iter().map(|x| x.abs() + 0.3).collect()).unwrap();
    vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|g, x| g.add(x[0], x[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, x| g.sub(x[0], x[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, x| g.mul(x[0], x[1]))),
        ("add_row", vec![a.clone(), row], Box::new(|g, x| g.add_row(x[0], x[1]))),
        ("scale", vec![a.clone()], Box::new(|g, x| g.scale(x[0], 2.5))),
        ("matmul", vec![a.clone(), c8], Box::new(|g, x| g.matmul(x[0], x[1]))),
        ("transpose", vec![a.clone()], Box::new(|g, x| g.transpose(x[0]))),
        ("concat", vec![a.clone(), b.clone()], Box::new(|g, x| {
            let r = g.concat_rows(&[x[0], x[1]])?;
            let c = g.concat_cols(&[x[1], x[0]])?;
            let c = g.transpose(c)?;
            let s1 = g.sum(r)?;
            let c = g.mul(c, c)?;
            let s2 = g.sum(c)?;
            g.add(s1, s2)
        })),
        ("slice_rows", vec![a.clone()], Box::new(|g, x| g.slice_rows(x[0], 1, 4))),
        ("slice_cols", vec![a.clone()], Box::new(|g, x| g.slice_cols(x[0], 2, 7))),
        ("gather", vec![a.clone()], Box::new(|g, x| g.gather_rows(x[0], &[4, 0, 4, 2]))),
        ("stack_rows", vec![a.clone(), b.clone()], Box::new(|g, x| g.stack_rows(&[(x[0], 1), (x[1], 3), (x[0], 1)]))),
        ("sum", vec![a.clone()], Box::new(|g, x| g.sum(x[0]))),
        ("softmax", vec![a.clone()], Box::new(|g, x| g.softmax(x[0]))),
        ("log", vec![pos.clone()], Box::new(|g, x| g.log(x[0]))),
        ("log_softmax", vec![a.clone()], Box::new(|g, x| g.log_softmax(x[0]))),
        ("cross_entropy", vec![a.clone()], Box::new(|g, x| g.cross_entropy(x[0], &[0, 7, 3, 3, 5]))),
        ("layer_norm", vec![a.clone(), gain, bias], Box::new(|g, x| g.layer_norm(x[0], x[1], x[2]))),
        ("attention", vec![q, k, v], Box::new(|g, x| g.attention(x[0], x[1], x[2]))),
        ("gelu", vec![a.clone()], Box::new(|g, x| g.gelu(x[0]))),
        ("maximum", vec![a.clone(), b_far], Box::new(|g, x| g.maximum(x[0], x[1]))),
        ("complex_mul", vec![a.clone(), b.clone()], Box::new(|g, x| g.complex_mul(x[0], x[1]))),
        ("complex_conj", vec![a], Box::new(|g, x| g.complex_conj(x[0]))),
        ("pow", vec![pos], Box::new(|g, x| g.pow(x[0], 2.5))),
    ]
}

const ALL_OPS: [OpKind; 26] = [
    OpKind::Input,
    OpKind::Param,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::AddRow,
    OpKind::Scale,
    OpKind::MatMul,
    OpKind::Transpose,
    OpKind::Concat,
    OpKind::SliceRows,
    OpKind::SliceCols,
    OpKind::Gather,
    OpKind::StackRows,
    OpKind::Sum,
    OpKind::Softmax,
    OpKind::Log,
    OpKind::LogSoftmax,
    OpKind::CrossEntropy,
    OpKind::LayerNorm,
    OpKind::Attention,
    OpKind::Gelu,
    OpKind::Maximum,
    OpKind::ComplexMul,
    OpKind::ComplexConj,
    OpKind::Pow,
];

fn smoke_model(variant: Variant, d: usize) -> (QaModel, Vec<Question>) {
    let kg = generate_kg(&SynthConfig::smoke()).unwrap();
    let mut store = EmbeddingStore::init(&kg, d, 0.4, 2).unwrap();
    store.freeze();
    let bank = TemplateBank::default();
    let qs = generate_dataset(&kg, &Mix::proportional(40), &bank, 4).unwrap();
    let arch = Arch {
        d_b: 8,
        text_layers: 1,
        text_heads: 2,
        fusion_layers: 1,
        fusion_heads: 2,
    };
    let m = QaModel::new(variant, arch, vocab_for(&bank), Arc::new(store), Arc::new(kg), 3).unwrap();
    (m, qs)
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen: HashSet<OpKind> = HashSet::new();
    let mut worst = (0.0f64, String::new());
    for (name, inputs, op) in op_cases(&mut rng) {
        let mut ps = ParamSet::new();
        let ids: Vec<_> = inputs.into_iter().enumerate().map(|(i, t)| ps.add(format!("x{i}"), t)).collect();
        let w = random(&mut rng, 1, 1, 0.5, 1.5).data()[0];
        let build = |g: &mut Graph, ps: &ParamSet| {
            let xs: Vec<_> = ids.iter().map(|id| g.param(ps, *id)).collect();
            let out = op(g, &xs)?;
            let n = g.value(out).numel();
            let weights = Tensor::new(g.shape(out).to_vec(), (0..n).map(|i| w + (i as f64 * 0.37).sin()).collect())?;
            let wn = g.input(weights);
            let y = g.mul(out, wn)?;
            g.sum(y)
        };
        let mut g = Graph::new();
        build(&mut g, &ps).map_err(|e| format!("{name}: {e}"))?;
        seen.extend(g.op_kinds());
        let r = grad_check(&mut ps, 1e-5, 1e-8, build).map_err(|e| format!("{name}: {e}"))?;
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, name.to_string());
        }
    }
    let missing: Vec<_> = ALL_OPS.iter().filter(|k| !seen.contains(k)).collect();
    if !missing.is_empty() {
        return Err(format!("ops without a gradient check: {missing:?}"));
    }

    let mut full = Vec::new();
    for v in [Variant::TEMPOQR_HARD, Variant::TEMPOQR_SOFT] {
        let (model, qs) = smoke_model(v, 8);
        let q = qs.iter().find(|q| q.qtype.is_complex() && q.entity_ids().len() >= 2).unwrap_or(&qs[0]);
        let trace = model.trace(q).map_err(|e| e.to_string())?;
        for k in [OpKind::StackRows, OpKind::Attention, OpKind::ComplexMul, OpKind::Maximum] {
            if !trace.contains(&k) && !(k == OpKind::Maximum && q.entity_ids().len() < 2) {
                return Err(format!("{v} forward does not reach {k:?}"));
            }
        }
        let p = model.prepare(q).map_err(|e| e.to_string())?;
        let target = p.gold[0];
        let mut ps = model.params().clone();
        let r = grad_check(&mut ps, 1e-5, 1e-8, |g, ps| {
            let batch = [(&p, target)];
            Ok(model
                .loss_graph_with(ps, g, &batch, &mut rng_for(0, "gradcheck"))
                .expect("loss graph"))
        })
        .map_err(|e| e.to_string())?;
        full.push(format!("{v} {:.1e} over {} scalars", r.max_rel_error, r.checked));
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, format!("{v} forward ({})", r.worst_param));
        }
    }
    ensure(
        worst.0 < 1e-4,
        format!("{} op kinds covered; worst rel. error {:.2e} at {}; {}", seen.len(), worst.0, worst.1, full.join(", ")),
    )
}

// ---- 3: embedding quality --------------------------------------------------

fn criterion_3() -> Verdict {
    let kg = generate_kg(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let cfg = EmbedConfig::default();
    let quads = kg.expand_intervals(cfg.interval_cap).map_err(|e| e.to_string())?;
    let known: HashSet<_> = quads.iter().copied().collect();
    let (train, test) = holdout_split(&quads, 0.1, 3).map_err(|e| e.to_string())?;
    let (store, _) = train_on(&kg, &train, &cfg).map_err(|e| e.to_string())?;
    let trained = evaluate_link_prediction(&store, &test, &known).map_err(|e| e.to_string())?;
    let mut untrained = EmbeddingStore::init(&kg, cfg.dim, cfg.init_std, cfg.seed).map_err(|e| e.to_string())?;
    untrained.freeze();
    let base = evaluate_link_prediction(&untrained, &test, &known).map_err(|e| e.to_string())?;
    ensure(
        trained.mrr >= 0.5 && trained.mrr - base.mrr >= 0.3,
        format!(
            "{} entities, {} relations, {} years, {} facts; filtered MRR {:.3} (Hits@1 {:.3}, Hits@10 {:.3}) vs untrained {:.3} (need >= 0.5 and +0.3)",
            kg.num_entities(),
            kg.num_relations(),
            kg.num_years(),
            kg.facts().len(),
            trained.mrr,
            trained.hits1,
            trained.hits10,
            base.mrr
        ),
    )
}

// ---- 4, 5, 6, 9: the QA experiments ---------------------------------------

fn mean(s: &[tqr::harness::Summary], setting: &str, v: Variant, group: &str) -> f64 {
    let name = v.to_string();
    s.iter()
        .find(|x| x.setting == setting && x.variant == name)
        .and_then(|x| x.mean(group, 1))
        .unwrap_or(f64::NAN)
}

fn criterion_4(s: &[tqr::harness::Summary], runtime: Duration) -> Verdict {
    let [cron, ent, soft, hard] = MAIN_VARIANTS.map(|v| mean(s, "test", v, "complex"));
    let ok = hard > soft && soft >= ent && ent > cron && hard - cron >= 0.15;
    let msg = format!(
        "complex Hits@1 over 3 seeds: CronKGQA {cron:.3} < EntityQR {ent:.3} <= TempoQR-Soft {soft:.3} < TempoQR-Hard {hard:.3}, gap {:.3} (>= 0.15); pipeline {runtime:.0?}",
        hard - cron
    );
    ensure(ok && runtime < Duration::from_secs(30 * 60), msg)
}

fn criterion_5(s: &[tqr::harness::Summary]) -> Verdict {
    let vals: Vec<(Variant, f64)> = MAIN_VARIANTS.iter().map(|&v| (v, mean(s, "test", v, "simple"))).collect();
    let text: Vec<String> = vals.iter().map(|(v, x)| format!("{v} {x:.3}")).collect();
    ensure(vals.iter().all(|(_, x)| *x >= 0.90), format!("simple Hits@1: {} (>= 0.90)", text.join(", ")))
}

fn criterion_6(lab: &Lab, base: &[tqr::harness::Trained]) -> Verdict {
    let ps = [0.0, 0.2, 0.5, 0.8];
    let out = lab.run_corruption(Regime::QaOnly, &ps, &MAIN_VARIANTS, base).map_err(|e| e.to_string())?;
    let s = summarize(&out.records);
    let series = |v: Variant, group: &str| -> Vec<f64> { ps.iter().map(|p| mean(&s, &format!("p={p}"), v, group)).collect() };
    // Exact constancy: every report cell, every repeat.
    let constant = |v: Variant| -> bool {
        let rows: Vec<&Record> = out.records.iter().filter(|r| r.variant == v.to_string()).collect();
        rows.iter().all(|r| {
            let twin = rows.iter().find(|o| o.repeat == r.repeat && o.setting == "p=0").unwrap();
            r.report.cells == twin.report.cells
        })
    };
    let hard = series(Variant::TEMPOQR_HARD, "complex");
    let monotone = hard.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let (soft_c, ent_c) = (constant(Variant::TEMPOQR_SOFT), constant(Variant::ENTITYQR));
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    ensure(
        soft_c && ent_c && monotone,
        format!(
            "p = 0/.2/.5/.8: TempoQR-Hard complex {} (non-increasing within 0.02: {monotone}); TempoQR-Soft {} constant: {soft_c}; EntityQR {} constant: {ent_c}; CronKGQA {}",
            fmt(&hard),
            fmt(&series(Variant::TEMPOQR_SOFT, "complex")),
            fmt(&series(Variant::ENTITYQR, "complex")),
            fmt(&series(Variant::CRONKGQA, "complex")),
        ),
    )
}

fn criterion_9(lab: &Lab, models: &[tqr::harness::Trained], main: &Outcome) -> Verdict {
    let s = &summarize(&main.records);
    let combos = generate_unseen_combos(&lab.kg, &lab.bank, derive_seed(lab.config.seed, "unseen"), Some(250)).map_err(|e| e.to_string())?;
    let out = lab.run_unseen(models, &combos).map_err(|e| e.to_string())?;
    let monotone = out.records.iter().chain(&main.records).all(|r| {
        r.report.cells.values().all(|c| c.hits.windows(2).all(|w| w[0] <= w[1]))
    });
    let us = summarize(&out.records);
    let mut parts = Vec::new();
    let mut below = true;
    for v in MAIN_VARIANTS {
        let unseen = us.iter().find(|x| x.variant == v.to_string()).and_then(|x| x.mean("all", 1)).unwrap_or(f64::NAN);
        let seen = mean(s, "test", v, "complex");
        below &= unseen < seen;
        parts.push(format!("{v} {unseen:.3} < {seen:.3}"));
    }
    ensure(
        below && monotone,
        format!("{} unseen questions; Hits@1 unseen vs seen complex: {}; Hits@k monotone in k: {monotone}", combos.len(), parts.join(", ")),
    )
}

// ---- 7: hard-supervision oracle -------------------------------------------

/// Brute force over every fact: all-mode match, else any-mode, else NO_TIME.
fn brute_scope(kg: &TemporalKg, ents: &[EntityId]) -> (Option<i32>, Option<i32>) {
    let touches = |f: &tqr::tkg::Fact, e: EntityId| f.subject == e || f.object == e;
    let all: Vec<_> = kg.facts().iter().filter(|f| ents.iter().all(|&e| touches(f, e))).collect();
    let matched = if all.is_empty() {
        kg.facts().iter().filter(|f| ents.iter().any(|&e| touches(f, e))).collect()
    } else {
        all
    };
    let years: Vec<(i32, i32)> = matched.iter().filter_map(|f| f.span.years()).collect();
    (years.iter().map(|y| y.0).min(), years.iter().map(|y| y.1).max())
}

fn criterion_7(kg: &TemporalKg, questions: &[Question]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..1000 {
        let q = &questions[rng.random_range(0..questions.len())];
        let ents = q.entity_ids();
        let (a, b) = hard_time_ids(kg, &ents).map_err(|e| e.to_string())?;
        let got = (kg.year_of(a), kg.year_of(b));
        let want = brute_scope(kg, &ents);
        if got != want {
            return Err(format!("question {:?}: retrieved {got:?}, brute force {want:?}", q.text()));
        }
        checked += 1;
    }
    Ok(format!("{checked}/1000 sampled questions match the brute-force min/max"))
}

// ---- 8: generator oracle ---------------------------------------------------

fn criterion_8(kg: &TemporalKg, questions: &[Question], combos: &[Question]) -> Verdict {
    let mut per_type: BTreeMap<String, usize> = BTreeMap::new();
    for q in questions.iter().chain(combos) {
        let want = answer_oracle(kg, q).map_err(|e| e.to_string())?;
        let mut got = q.answers.clone();
        got.sort_unstable();
        let mut want = want;
        want.sort_unstable();
        if got != want {
            return Err(format!("{} question {:?}: stored {got:?}, oracle {want:?}", q.qtype, q.text()));
        }
        *per_type.entry(q.qtype.to_string()).or_default() += 1;
    }
    ensure(
        per_type.len() == 7,
        format!(
            "{} questions agree with the oracle across {} types ({})",
            questions.len() + combos.len(),
            per_type.len(),
            per_type.iter().map(|(k, v)| format!("{k} {v}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---- 10: determinism -------------------------------------------------------

fn smoke_outcome() -> Result<String, String> {
    let cfg = RunConfig::smoke();
    let lab = Lab::synthesize(&cfg).map_err(|e| e.to_string())?;
    let (mut out, models) = lab.run_main("main", &MAIN_VARIANTS, &[]).map_err(|e| e.to_string())?;
    out.extend(lab.run_corruption(Regime::QaOnly, &[0.0, 0.5], &MAIN_VARIANTS, &models).map_err(|e| e.to_string())?);
    let combos = generate_unseen_combos(&lab.kg, &lab.bank, 1, Some(5)).map_err(|e| e.to_string())?;
    out.extend(lab.run_unseen(&models, &combos).map_err(|e| e.to_string())?);
    out.extend(lab.run_training_size(&[0.5], &[Variant::ENTITYQR], &[]).map_err(|e| e.to_string())?);
    records_jsonl(&out.records).map_err(|e| e.to_string())
}

fn criterion_10(main: &Outcome, lab: &Lab, models: &[tqr::harness::Trained]) -> Verdict {
    let a = smoke_outcome()?;
    let b = smoke_outcome()?;
    if a != b {
        return Err("smoke experiment reports differ between identical runs".into());
    }
    // Re-evaluating the main models reproduces their records byte for byte.
    let again = lab.run_main("main", &MAIN_VARIANTS, models).map_err(|e| e.to_string())?.0;
    let (x, y) = (records_jsonl(&main.records).unwrap(), records_jsonl(&again.records).unwrap());
    ensure(
        x == y,
        format!("smoke suite reruns identical ({} bytes); main report re-evaluation identical: {}", a.len(), x == y),
    )
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    gate.run("1 (decomposition identity)", Some(Duration::from_secs(5)), criterion_1);
    gate.run("2 (gradient suite)", Some(Duration::from_secs(120)), criterion_2);
    gate.run("3 (embedding quality)", Some(Duration::from_secs(300)), criterion_3);

    let cfg = RunConfig::default();
    let start = Instant::now();
    let lab = match Lab::synthesize(&cfg) {
        Ok(l) => l,
        Err(e) => {
            println!("FAIL: could not build the QA dataset: {e}");
            return ExitCode::FAILURE;
        }
    };
    let all: Vec<Question> = [lab.splits.train.clone(), lab.splits.dev.clone(), lab.splits.test.clone()].concat();
    let combos = generate_unseen_combos(&lab.kg, &lab.bank, derive_seed(cfg.seed, "unseen"), Some(250)).unwrap_or_default();
    gate.run("7 (hard-supervision oracle)", None, || criterion_7(&lab.kg, &all));
    gate.run("8 (generator oracle)", None, || criterion_8(&lab.kg, &all, &combos));

    println!(
        "  dataset: {} entities, {} facts; {} train / {} dev / {} test questions",
        lab.kg.num_entities(),
        lab.kg.facts().len(),
        lab.splits.train.len(),
        lab.splits.dev.len(),
        lab.splits.test.len()
    );
    let (main, models) = match lab.run_main("main", &MAIN_VARIANTS, &[]) {
        Ok(x) => x,
        Err(e) => {
            println!("FAIL criterion 4: main comparison errored: {e}");
            return ExitCode::FAILURE;
        }
    };
    let runtime = start.elapsed();
    let s = summarize(&main.records);
    gate.run("4 (main ordering)", None, || criterion_4(&s, runtime));
    gate.run("5 (simple ceiling)", None, || criterion_5(&s));
    gate.run("6 (corruption, qa_only)", None, || criterion_6(&lab, &models));
    gate.run("9 (unseen types)", None, || criterion_9(&lab, &models, &main));
    gate.run("10 (determinism)", None, || criterion_10(&main, &lab, &models));

    if gate.failures == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}
