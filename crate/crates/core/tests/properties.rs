//! Property suites for the store, embeddings, generator, supervision,
//! encoder stages, model scoring and metrics.

use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use tqr::embed::{conj, time_score_decomposed, train_on, EmbedConfig, EmbeddingStore};
use tqr::forge::{
    answer_oracle, generate_dataset, split_dataset, Constraint, Mix, QType, Question, TemplateBank,
};
use tqr::harness::metrics::{evaluate, hits_at_k};
use tqr::model::{rank, train_qa, vocab_for, Arch, QaModel, TrainConfig, Variant};
use tqr::supervision::{hard_time_ids, soft_time};
use tqr::synth::{generate_kg, SynthConfig};
use tqr::tkg::{EntityId, MatchMode, Span, TemporalKg, TkgBuilder};

fn fact_list() -> impl Strategy<Value = Vec<(u8, u8, u8, Option<(i32, u8)>)>> {
    prop::collection::vec((0u8..12, 0u8..3, 0u8..12, prop::option::weighted(0.8, (1990i32..2010, 0u8..6))), 1..40)
}

fn build(facts: &[(u8, u8, u8, Option<(i32, u8)>)]) -> TemporalKg {
    let mut b = TkgBuilder::new();
    for &(s, r, o, span) in facts {
        let span = match span {
            Some((start, len)) => Span::Interval {
                start,
                end: start + len as i32,
            },
            None => Span::NoTime,
        };
        let _ = b.add(&format!("e{s}"), &format!("r{r}"), &format!("e{o}"), span).unwrap();
    }
    b.build()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corruption_keeps_facts_and_triples(facts in fact_list(), p in 0.0f64..=1.0, seed in any::<u64>()) {
        let kg = build(&facts);
        let bad = kg.corrupt_timestamps(p, seed).unwrap();
        prop_assert_eq!(bad.facts().len(), kg.facts().len());
        for (a, b) in kg.facts().iter().zip(bad.facts()) {
            prop_assert_eq!((a.subject, a.relation, a.object), (b.subject, b.relation, b.object));
            prop_assert!(b.span == a.span || b.span == Span::NoTime);
        }
        prop_assert_eq!(bad.num_timestamps(), kg.num_timestamps());
    }

    #[test]
    fn expansion_size(facts in fact_list(), cap in 1usize..8) {
        let kg = build(&facts);
        let want: usize = kg
            .facts()
            .iter()
            .map(|f| match f.span.years() {
                Some((a, b)) => ((b - a + 1) as usize).min(cap),
                None => 1,
            })
            .sum();
        prop_assert_eq!(kg.expand_intervals(cap).unwrap().len(), want);
    }

    #[test]
    fn all_mode_is_within_any_mode(facts in fact_list(), picks in prop::collection::vec(0u8..12, 1..3)) {
        let kg = build(&facts);
        let ids: Vec<EntityId> = picks.iter().filter_map(|p| kg.entity_by_name(&format!("e{p}"))).collect();
        prop_assume!(!ids.is_empty());
        let all: HashSet<usize> = kg.facts_with_entities(&ids, MatchMode::All).unwrap().iter().map(|m| m.index).collect();
        let any: HashSet<usize> = kg.facts_with_entities(&ids, MatchMode::Any).unwrap().iter().map(|m| m.index).collect();
        prop_assert!(all.is_subset(&any));
    }

    #[test]
    fn hard_scope_brackets_every_matched_fact(facts in fact_list(), picks in prop::collection::vec(0u8..12, 1..3)) {
        let kg = build(&facts);
        let ids: Vec<EntityId> = picks.iter().filter_map(|p| kg.entity_by_name(&format!("e{p}"))).collect();
        prop_assume!(!ids.is_empty());
        let (a, b) = hard_time_ids(&kg, &ids).unwrap();
        let mut matched = kg.facts_with_entities(&ids, MatchMode::All).unwrap();
        if matched.is_empty() {
            matched = kg.facts_with_entities(&ids, MatchMode::Any).unwrap();
        }
        match (kg.year_of(a), kg.year_of(b)) {
            (Some(lo), Some(hi)) => {
                for m in &matched {
                    if let Some((s, e)) = m.fact.span.years() {
                        prop_assert!(lo <= s && e <= hi);
                    }
                }
            }
            _ => prop_assert!(matched.iter().all(|m| !m.fact.is_timed())),
        }
    }

    #[test]
    fn fully_corrupted_kg_gives_the_sentinel(facts in fact_list(), pick in 0usize..40) {
        let kg = build(&facts).corrupt_timestamps(1.0, 0).unwrap();
        let f = kg.facts()[pick % kg.facts().len()];
        prop_assert_eq!(hard_time_ids(&kg, &[f.subject]).unwrap(), (kg.no_time(), kg.no_time()));
    }

    #[test]
    fn soft_estimate_maximizes_the_score(
        es in prop::collection::vec(-1.0f64..1.0, 8),
        u in prop::collection::vec(-1.0f64..1.0, 8),
        other in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = soft_time(&es, &u);
        prop_assume!(norm(&t) > 1e-6 && norm(&other) > 1e-6);
        let unit = |x: &[f64]| { let n = norm(x); x.iter().map(|v| v / n).collect::<Vec<_>>() };
        let best = time_score_decomposed(&es, &u, &unit(&t));
        prop_assert!(time_score_decomposed(&es, &u, &unit(&other)) <= best + 1e-12);
        prop_assert!(time_score_decomposed(&es, &u, &unit(&conj(&t))) <= best + 1e-12);
    }

    #[test]
    fn hits_at_k_is_monotone(perm in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle(), gold in prop::collection::vec(0usize..20, 1..4)) {
        let mut prev = false;
        for k in 1..=20 {
            let h = hits_at_k(&perm, &gold, k).unwrap();
            prop_assert!(h || !prev);
            prev = h;
        }
        prop_assert!(prev);
    }

    #[test]
    fn ranking_ignores_a_constant_shift(raw in prop::collection::vec(-64i32..64, 1..30), c in -16i32..16) {
        // Multiples of 1/8 keep the shifted sums exact.
        let s: Vec<f64> = raw.iter().map(|&x| x as f64 / 8.0).collect();
        let shifted: Vec<f64> = s.iter().map(|x| x + c as f64).collect();
        prop_assert_eq!(rank(&s), rank(&shifted));
    }
}

// ---- generator -------------------------------------------------------------

fn smoke_kg() -> &'static TemporalKg {
    static KG: OnceLock<TemporalKg> = OnceLock::new();
    KG.get_or_init(|| generate_kg(&SynthConfig::smoke()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_answers_match_the_oracle_and_splits_are_clean(seed in any::<u64>()) {
        let kg = smoke_kg();
        let qs = generate_dataset(kg, &Mix::proportional(120), &TemplateBank::default(), seed).unwrap();
        for q in &qs {
            prop_assert_eq!(&answer_oracle(kg, q).unwrap(), &q.answers);
            prop_assert!(q.entities().next().is_some());
        }
        for q in qs.iter().filter(|q| q.qtype == QType::BeforeAfter) {
            let (s, x) = q.roles();
            let (s, x) = (s.unwrap(), x.unwrap());
            let r = q.relation.unwrap();
            let starts = |o: EntityId| -> Vec<i32> {
                kg.facts().iter().filter(|f| f.relation.0 == r && f.subject == s && f.object == o).filter_map(|f| f.span.start()).collect()
            };
            let reference = starts(x).into_iter().min().unwrap();
            let after = q.constraint == Some(Constraint::After);
            for &g in &q.answers {
                let strict = starts(EntityId(g)).into_iter().any(|y| if after { y > reference } else { y < reference });
                prop_assert!(strict, "gold {} of {:?} has no start strictly past {}", g, q.text(), reference);
            }
        }
        let splits = split_dataset(qs, (0.7, 0.1), seed ^ 1).unwrap();
        let sig = |v: &[Question]| v.iter().map(|q| q.signature()).collect::<HashSet<_>>();
        let (a, b, c) = (sig(&splits.train), sig(&splits.dev), sig(&splits.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }
}

// ---- encoder stages and scoring ------------------------------------------

struct Fixture {
    store: Arc<EmbeddingStore>,
    kg: Arc<TemporalKg>,
    questions: Vec<Question>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let kg = smoke_kg().clone();
        let mut store = EmbeddingStore::init(&kg, 8, 0.4, 5).unwrap();
        store.freeze();
        let questions = generate_dataset(&kg, &Mix::proportional(60), &TemplateBank::default(), 9).unwrap();
        Fixture {
            store: Arc::new(store),
            kg: Arc::new(kg),
            questions,
        }
    })
}

fn model(v: &str, seed: u64) -> QaModel {
    let f = fixture();
    let arch = Arch {
        d_b: 8,
        text_layers: 1,
        text_heads: 2,
        fusion_layers: 1,
        fusion_heads: 2,
    };
    QaModel::new(v.parse().unwrap(), arch, vocab_for(&TemplateBank::default()), Arc::clone(&f.store), Arc::clone(&f.kg), seed).unwrap()
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn injection_touches_only_annotated_rows(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = fixture();
        let q = pick.get(&f.questions);
        let st = model("entityqr", seed).stages(q).unwrap();
        let q_e = st.q_e.unwrap();
        let annotated: HashSet<usize> = st.annotated_rows.iter().copied().collect();
        for r in 0..st.q_b.rows() {
            let same = same_bits(st.q_b.row_slice(r), q_e.row_slice(r));
            prop_assert_eq!(same, !annotated.contains(&r), "row {}", r);
        }
    }

    #[test]
    fn sum_fusion_adds_t1_plus_t2_to_entity_rows(seed in any::<u64>(), pick in any::<prop::sample::Index>(), hard in any::<bool>()) {
        let f = fixture();
        let q = pick.get(&f.questions);
        let st = model(if hard { "tempoqr-hard" } else { "tempoqr-soft" }, seed).stages(q).unwrap();
        let (q_e, q_t) = (st.q_e.unwrap(), st.q_t.unwrap());
        let (t1, t2) = (st.t1.unwrap(), st.t2.unwrap());
        let rows: HashSet<usize> = st.entity_rows.iter().copied().collect();
        for r in 0..q_e.rows() {
            if rows.contains(&r) {
                for j in 0..q_e.cols() {
                    let want = q_e.get(r, j) + t1.data()[j] + t2.data()[j];
                    prop_assert!((q_t.get(r, j) - want).abs() < 1e-12);
                }
            } else {
                prop_assert!(same_bits(q_e.row_slice(r), q_t.row_slice(r)));
            }
        }
    }

    #[test]
    fn attention_fusion_appends_two_tokens(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = fixture();
        let st = model("tempoqr-hard+att", seed).stages(pick.get(&f.questions)).unwrap();
        prop_assert_eq!(st.q_t.unwrap().rows(), st.q_e.unwrap().rows() + 2);
    }

    #[test]
    fn cronkgqa_uses_the_projected_cls(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = fixture();
        let st = model("cronkgqa", seed).stages(pick.get(&f.questions)).unwrap();
        prop_assert!(st.q_e.is_none() && st.q_t.is_none());
        prop_assert!(same_bits(st.q.data(), st.q_b.row_slice(0)));
    }

    #[test]
    fn score_softmax_is_normalized(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = fixture();
        let s = model("tempoqr-soft", seed).scores(pick.get(&f.questions)).unwrap();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        let total: f64 = s.iter().map(|x| (x - m).exp() / z).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn report_groups_partition_the_questions() {
    let f = fixture();
    let r = evaluate(&model("tempoqr-hard", 1), &f.questions, &[1, 2, 5, 10]).unwrap();
    let n = f.questions.len();
    assert_eq!(r.count("all"), n);
    assert_eq!(r.count("entity") + r.count("time"), n);
    assert_eq!(r.count("simple") + r.count("complex"), n);
    let by_type: usize = QType::ALL.iter().map(|t| r.count(t.name())).sum();
    assert_eq!(by_type, n);
    for c in r.cells.values() {
        assert!(c.hits.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn tempoqr_without_supervision_matches_entityqr_bitwise() {
    let f = fixture();
    let (a, b) = (model("tempoqr-none", 4), model("entityqr", 4));
    for q in &f.questions {
        assert!(same_bits(&a.scores(q).unwrap(), &b.scores(q).unwrap()));
    }
    assert_eq!(a.trace(&f.questions[0]).unwrap(), b.trace(&f.questions[0]).unwrap());
    let v: Variant = "tempoqr-none".parse().unwrap();
    assert!(!v.fuses_time());
}

#[test]
fn training_leaves_the_store_untouched() {
    let f = fixture();
    let mut m = model("tempoqr-hard", 2);
    let before = m.store_checksum();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        lr: 1e-3,
        seed: 2,
    };
    train_qa(&mut m, &f.questions[..40], &f.questions[40..], &cfg).unwrap();
    assert_eq!(m.store_checksum(), before);
    assert_eq!(f.store.checksum(), before);
}

#[test]
fn smoothness_weight_pulls_neighbouring_years_together() {
    let kg = smoke_kg();
    let quads = kg.expand_intervals(10).unwrap();
    let roughness = |w: f64| {
        let cfg = EmbedConfig {
            dim: 8,
            epochs: 5,
            lr: 0.02,
            batch_size: 64,
            smooth_weight: w,
            ..EmbedConfig::default()
        };
        let (store, _) = train_on(kg, &quads, &cfg).unwrap();
        let years = store.num_timestamps() - 1;
        let t = store.timestamp_table();
        (1..years)
            .map(|i| t.row_slice(i).iter().zip(t.row_slice(i - 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
    };
    let r: Vec<f64> = [0.0, 0.1, 1.0].into_iter().map(roughness).collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}
