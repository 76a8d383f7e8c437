use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AnnKind, Annotation, AnswerKind, Constraint, QType, Question, Role, TemplateBank};
use crate::seed::rng_for;
use crate::tkg::{EntityId, RelationId, TemporalKg};
use crate::{Result, TqrError};

/// Requested number of questions per type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mix(pub Vec<(QType, usize)>);

impl Mix {
    /// Seen types in roughly the proportions of the reference corpus.
    pub fn proportional(total: usize) -> Mix {
        let weights = [
            (QType::SimpleEntity, 26),
            (QType::SimpleTime, 17),
            (QType::BeforeAfter, 7),
            (QType::FirstLast, 34),
            (QType::TimeJoin, 16),
        ];
        let mut out: Vec<(QType, usize)> = weights.iter().map(|(q, w)| (*q, total * w / 100)).collect();
        let short = total - out.iter().map(|(_, n)| n).sum::<usize>();
        out[3].1 += short;
        Mix(out)
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|(_, n)| n).sum()
    }
}

impl FromStr for Mix {
    type Err = TqrError;

    /// `simple_entity=5,first_last=3`
    fn from_str(s: &str) -> Result<Self> {
        let mut out: Vec<(QType, usize)> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, n) = part
                .split_once('=')
                .ok_or_else(|| TqrError::invalid(format!("mix entry {part:?} is not type=count")))?;
            let q: QType = name.trim().parse()?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| TqrError::invalid(format!("bad count in mix entry {part:?}")))?;
            if out.iter().any(|(x, _)| *x == q) {
                return Err(TqrError::invalid(format!("{q} listed twice in mix")));
            }
            out.push((q, n));
        }
        if out.is_empty() {
            return Err(TqrError::invalid("empty mix"));
        }
        Ok(Mix(out))
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(q, n)| format!("{q}={n}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// A satisfiable question before rendering.
#[derive(Clone, Debug)]
struct Instance {
    qtype: QType,
    constraint: Option<Constraint>,
    answer_kind: AnswerKind,
    relation: RelationId,
    subject: EntityId,
    object: Option<EntityId>,
    object2: Option<EntityId>,
    year: Option<i32>,
    gold: Vec<u32>,
}

/// Timed facts grouped by `(relation, subject)` and `(relation, object)`.
struct Index {
    by_subject: BTreeMap<(RelationId, EntityId), Vec<(i32, i32, EntityId)>>,
    by_object: BTreeMap<(RelationId, EntityId), Vec<(i32, i32, EntityId)>>,
}

impl Index {
    fn new(kg: &TemporalKg) -> Self {
        let mut by_subject: BTreeMap<_, Vec<_>> = BTreeMap::new();
        let mut by_object: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for f in kg.facts() {
            if let Some((a, b)) = f.span.years() {
                by_subject.entry((f.relation, f.subject)).or_default().push((a, b, f.object));
                by_object.entry((f.relation, f.object)).or_default().push((a, b, f.subject));
            }
        }
        for v in by_subject.values_mut().chain(by_object.values_mut()) {
            v.sort();
        }
        Index { by_subject, by_object }
    }
}

fn base(qtype: QType, relation: RelationId, subject: EntityId) -> Instance {
    Instance {
        qtype,
        constraint: None,
        answer_kind: AnswerKind::Entity,
        relation,
        subject,
        object: None,
        object2: None,
        year: None,
        gold: Vec::new(),
    }
}

/// Min start per distinct object of a subject group.
fn references(items: &[(i32, i32, EntityId)]) -> BTreeMap<EntityId, i32> {
    let mut m: BTreeMap<EntityId, i32> = BTreeMap::new();
    for &(a, _, o) in items {
        m.entry(o).and_modify(|y| *y = (*y).min(a)).or_insert(a);
    }
    m
}

fn candidates(kg: &TemporalKg, idx: &Index, qtype: QType) -> Vec<Instance> {
    let mut out = Vec::new();
    match qtype {
        QType::SimpleEntity => {
            for (&(r, s), items) in &idx.by_subject {
                let years: BTreeSet<i32> = items.iter().flat_map(|&(a, b, _)| a..=b).collect();
                for y in years {
                    let gold: BTreeSet<u32> =
                        items.iter().filter(|&&(a, b, _)| a <= y && y <= b).map(|&(_, _, o)| o.0).collect();
                    out.push(Instance {
                        year: Some(y),
                        gold: gold.into_iter().collect(),
                        ..base(qtype, r, s)
                    });
                }
            }
        }
        QType::SimpleTime => {
            for (&(r, s), items) in &idx.by_subject {
                for &o in references(items).keys() {
                    let gold: BTreeSet<u32> = items
                        .iter()
                        .filter(|it| it.2 == o)
                        .flat_map(|&(a, b, _)| a..=b)
                        .map(|y| kg.time_id(y).expect("year").0)
                        .collect();
                    out.push(Instance {
                        answer_kind: AnswerKind::Time,
                        object: Some(o),
                        gold: gold.into_iter().collect(),
                        ..base(qtype, r, s)
                    });
                }
            }
        }
        QType::BeforeAfter => {
            for (&(r, s), items) in &idx.by_subject {
                for (&x, &ref_year) in &references(items) {
                    for c in [Constraint::After, Constraint::Before] {
                        let gold: BTreeSet<u32> = items
                            .iter()
                            .filter(|&&(a, _, o)| o != x && if c == Constraint::After { a > ref_year } else { a < ref_year })
                            .map(|&(_, _, o)| o.0)
                            .collect();
                        if !gold.is_empty() {
                            out.push(Instance {
                                constraint: Some(c),
                                object: Some(x),
                                gold: gold.into_iter().collect(),
                                ..base(qtype, r, s)
                            });
                        }
                    }
                }
            }
        }
        QType::FirstLast => {
            for (&(r, s), items) in &idx.by_subject {
                let starts: BTreeSet<i32> = items.iter().map(|it| it.0).collect();
                if starts.len() < 2 {
                    continue;
                }
                for (c, y) in [(Constraint::First, starts.first()), (Constraint::Last, starts.last())] {
                    let y = *y.expect("non-empty");
                    let ents: BTreeSet<u32> = items.iter().filter(|it| it.0 == y).map(|it| it.2 .0).collect();
                    out.push(Instance {
                        constraint: Some(c),
                        gold: ents.into_iter().collect(),
                        ..base(qtype, r, s)
                    });
                    out.push(Instance {
                        constraint: Some(c),
                        answer_kind: AnswerKind::Time,
                        gold: vec![kg.time_id(y).expect("year").0],
                        ..base(qtype, r, s)
                    });
                }
            }
        }
        QType::TimeJoin => {
            for (&(r, o), items) in &idx.by_object {
                let subjects: BTreeSet<EntityId> = items.iter().map(|it| it.2).collect();
                for &s in &subjects {
                    let mine: Vec<(i32, i32)> = items.iter().filter(|it| it.2 == s).map(|it| (it.0, it.1)).collect();
                    let gold: BTreeSet<u32> = items
                        .iter()
                        .filter(|&&(a, b, x)| x != s && mine.iter().any(|&(c, d)| a <= d && c <= b))
                        .map(|it| it.2 .0)
                        .collect();
                    if !gold.is_empty() {
                        out.push(Instance {
                            object: Some(o),
                            gold: gold.into_iter().collect(),
                            ..base(qtype, r, s)
                        });
                    }
                }
            }
        }
        QType::BeforeAndAfter | QType::BeforeAfterFirstLast => {
            for (&(r, s), items) in &idx.by_subject {
                let distinct: BTreeSet<i32> = items.iter().map(|it| it.0).collect();
                if distinct.len() < 4 {
                    continue;
                }
                let refs = references(items);
                for (&x, &ref_year) in &refs {
                    for after in [true, false] {
                        let side: Vec<&(i32, i32, EntityId)> = items
                            .iter()
                            .filter(|it| it.2 != x && if after { it.0 > ref_year } else { it.0 < ref_year })
                            .collect();
                        // Distinct start years ordered by closeness to the reference.
                        let mut years: Vec<i32> = side.iter().map(|it| it.0).collect::<BTreeSet<_>>().into_iter().collect();
                        if !after {
                            years.reverse();
                        }
                        if qtype == QType::BeforeAfterFirstLast {
                            let Some(&closest) = years.first() else { continue };
                            let gold: BTreeSet<u32> = side.iter().filter(|it| it.0 == closest).map(|it| it.2 .0).collect();
                            out.push(Instance {
                                constraint: Some(if after { Constraint::AfterFirst } else { Constraint::BeforeLast }),
                                object: Some(x),
                                gold: gold.into_iter().collect(),
                                ..base(qtype, r, s)
                            });
                            continue;
                        }
                        let Some(&far) = years.get(2) else { continue };
                        // The boundary entity must be anchored at that year.
                        let Some(y) = side.iter().map(|it| it.2).filter(|e| refs[e] == far).min() else {
                            continue;
                        };
                        let (lo, hi) = if after { (ref_year, far) } else { (far, ref_year) };
                        let gold: BTreeSet<u32> = side
                            .iter()
                            .filter(|it| it.2 != y && lo < it.0 && it.0 < hi)
                            .map(|it| it.2 .0)
                            .collect();
                        if !gold.is_empty() {
                            out.push(Instance {
                                constraint: Some(if after { Constraint::AfterAndBefore } else { Constraint::BeforeAndAfter }),
                                object: Some(x),
                                object2: Some(y),
                                gold: gold.into_iter().collect(),
                                ..base(qtype, r, s)
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn mention(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn render(kg: &TemporalKg, bank: &TemplateBank, inst: &Instance, rng: &mut ChaCha8Rng) -> Result<Question> {
    let choices = bank.matching(inst.qtype, inst.constraint, inst.answer_kind);
    if choices.is_empty() {
        return Err(TqrError::Unsatisfiable {
            qtype: inst.qtype.to_string(),
            msg: "template bank has no matching template".into(),
        });
    }
    let t = choices[rng.random_range(0..choices.len())];
    let mut tokens = Vec::new();
    let mut annotations = Vec::new();
    for w in t.text.split_whitespace() {
        let (words, ann) = match w {
            "{head}" => (mention(kg.entity_name(inst.subject)), Some((AnnKind::Entity, inst.subject.0, Role::Subject))),
            "{tail}" => {
                let o = inst.object.expect("template needs an object");
                (mention(kg.entity_name(o)), Some((AnnKind::Entity, o.0, Role::Object)))
            }
            "{tail2}" => {
                let o = inst.object2.expect("template needs a second object");
                (mention(kg.entity_name(o)), Some((AnnKind::Entity, o.0, Role::Other)))
            }
            "{time}" => {
                let y = inst.year.expect("template needs a year");
                let t = kg.time_id(y).expect("year");
                (vec![y.to_string()], Some((AnnKind::Timestamp, t.0, Role::Other)))
            }
            "{rel}" => (bank.phrase(kg.relation_name(inst.relation)), None),
            other => (vec![other.to_string()], None),
        };
        let lo = tokens.len();
        tokens.extend(words);
        if let Some((kind, id, role)) = ann {
            annotations.push(Annotation {
                span: [lo, tokens.len()],
                kind,
                id,
                role,
            });
        }
    }
    let q = Question {
        tokens,
        annotations,
        qtype: inst.qtype,
        answer_kind: inst.answer_kind,
        answers: inst.gold.clone(),
        relation: Some(inst.relation.0),
        constraint: inst.constraint,
    };
    q.validate()?;
    Ok(q)
}

pub fn generate_dataset(kg: &TemporalKg, mix: &Mix, bank: &TemplateBank, seed: u64) -> Result<Vec<Question>> {
    bank.validate()?;
    let idx = Index::new(kg);
    let mut pools = Vec::new();
    let mut deficient = Vec::new();
    for &(q, n) in &mix.0 {
        let mut c = candidates(kg, &idx, q);
        c.retain(|i| !bank.matching(i.qtype, i.constraint, i.answer_kind).is_empty());
        if c.len() < n {
            deficient.push(format!("{q} (have {}, want {n})", c.len()));
        }
        pools.push((q, n, c));
    }
    if !deficient.is_empty() {
        return Err(TqrError::Unsatisfiable {
            qtype: deficient.join(", "),
            msg: "not enough distinct instances in the KG".into(),
        });
    }
    let mut templates = rng_for(seed, "forge.templates");
    let mut out = Vec::with_capacity(mix.total());
    for (q, n, mut pool) in pools {
        pool.shuffle(&mut rng_for(seed, &format!("forge.{q}")));
        for inst in pool.iter().take(n) {
            out.push(render(kg, bank, inst, &mut templates)?);
        }
    }
    Ok(out)
}

/// Questions of the two combined types, at most `limit` per type.
pub fn generate_unseen_combos(kg: &TemporalKg, bank: &TemplateBank, seed: u64, limit: Option<usize>) -> Result<Vec<Question>> {
    bank.validate()?;
    let idx = Index::new(kg);
    let mut templates = rng_for(seed, "forge.templates.unseen");
    let mut out = Vec::new();
    for q in QType::UNSEEN {
        let mut pool = candidates(kg, &idx, q);
        if pool.is_empty() {
            return Err(TqrError::Unsatisfiable {
                qtype: q.to_string(),
                msg: "no relation chain has four distinct start years with enough spread".into(),
            });
        }
        pool.shuffle(&mut rng_for(seed, &format!("forge.{q}")));
        for inst in pool.iter().take(limit.unwrap_or(usize::MAX)) {
            out.push(render(kg, bank, inst, &mut templates)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::answer_oracle;
    use crate::tkg::{Span, TkgBuilder};

    fn kg(facts: &[(&str, &str, &str, i32, i32)]) -> TemporalKg {
        let mut b = TkgBuilder::new();
        for (s, r, o, a, e) in facts {
            b.add(s, r, o, Span::Interval { start: *a, end: *e }).unwrap();
        }
        b.build()
    }

    #[test]
    fn mix_parse() {
        let m: Mix = "simple_entity=5, first_last=3".parse().unwrap();
        assert_eq!(m.0, vec![(QType::SimpleEntity, 5), (QType::FirstLast, 3)]);
        assert_eq!(m.to_string().parse::<Mix>().unwrap(), m);
        assert!("simple_entity".parse::<Mix>().is_err());
        assert!("simple_entity=x".parse::<Mix>().is_err());
        assert!("simple_entity=1,simple_entity=2".parse::<Mix>().is_err());
        assert_eq!(Mix::proportional(1000).total(), 1000);
    }

    #[test]
    fn simple_entity_example() {
        let g = kg(&[("BestPicture", "wonBy", "Sting", 1973, 1973)]);
        let qs = generate_dataset(&g, &Mix(vec![(QType::SimpleEntity, 1)]), &TemplateBank::default(), 0).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].answers, vec![g.entity_by_name("Sting").unwrap().0]);
    }

    #[test]
    fn time_join_example() {
        let g = kg(&[("S", "member", "T", 1999, 2007), ("H", "member", "T", 2003, 2010)]);
        let qs = generate_dataset(&g, &Mix(vec![(QType::TimeJoin, 2)]), &TemplateBank::default(), 0).unwrap();
        let s = g.entity_by_name("S").unwrap();
        let q = qs.iter().find(|q| q.roles().0 == Some(s)).unwrap();
        assert_eq!(q.answers, vec![g.entity_by_name("H").unwrap().0]);
    }

    #[test]
    fn exact_counts_and_deficiency() {
        let g = kg(&[("A", "r", "B", 1990, 1995), ("A", "r", "C", 1996, 1999)]);
        let bank = TemplateBank::default();
        let qs = generate_dataset(&g, &Mix(vec![(QType::SimpleEntity, 5)]), &bank, 1).unwrap();
        assert_eq!(qs.len(), 5);
        assert!(qs.iter().all(|q| q.qtype == QType::SimpleEntity));
        let err = generate_dataset(&g, &Mix(vec![(QType::TimeJoin, 1), (QType::SimpleTime, 1)]), &bank, 1).unwrap_err();
        assert!(err.to_string().contains("time_join"), "{err}");
        assert!(!err.to_string().contains("simple_time"), "{err}");
    }

    fn chain() -> TemporalKg {
        kg(&[
            ("P", "held", "H", 1972, 1972),
            ("P", "held", "A", 1973, 1976),
            ("P", "held", "B", 1977, 1979),
            ("P", "held", "C", 1980, 1985),
        ])
    }

    #[test]
    fn third_closest_boundary() {
        let g = chain();
        let qs = generate_unseen_combos(&g, &TemplateBank::default(), 0, None).unwrap();
        let h = g.entity_by_name("H").unwrap();
        let q = qs
            .iter()
            .find(|q| q.qtype == QType::BeforeAndAfter && q.roles().1 == Some(h))
            .unwrap();
        assert_eq!(q.second_object(), g.entity_by_name("C"));
        let mut want = vec![g.entity_by_name("A").unwrap().0, g.entity_by_name("B").unwrap().0];
        want.sort();
        assert_eq!(q.answers, want);
        let q = qs
            .iter()
            .find(|q| q.qtype == QType::BeforeAfterFirstLast && q.roles().1 == Some(h))
            .unwrap();
        assert_eq!(q.constraint, Some(Constraint::AfterFirst));
        assert_eq!(q.answers, vec![g.entity_by_name("A").unwrap().0]);
        for q in &qs {
            assert_eq!(answer_oracle(&g, q).unwrap(), q.answers);
        }
    }

    #[test]
    fn short_chains_skipped() {
        let g = kg(&[("P", "held", "H", 1972, 1972), ("P", "held", "A", 1973, 1976)]);
        assert!(generate_unseen_combos(&g, &TemplateBank::default(), 0, None).is_err());
    }

    #[test]
    fn seeded() {
        let g = chain();
        let bank = TemplateBank::default();
        let mix = Mix(vec![(QType::SimpleEntity, 6), (QType::BeforeAfter, 3)]);
        assert_eq!(generate_dataset(&g, &mix, &bank, 3).unwrap(), generate_dataset(&g, &mix, &bank, 3).unwrap());
    }
}
