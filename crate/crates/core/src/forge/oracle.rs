use std::collections::BTreeSet;

use super::{AnswerKind, Constraint, QType, Question};
use crate::tkg::{EntityId, Fact, RelationId, TemporalKg};
use crate::{Result, TqrError};

/// Gold answers by exhaustive scan over every fact, sorted by id.
pub fn answer_oracle(kg: &TemporalKg, q: &Question) -> Result<Vec<u32>> {
    let unresolved = |msg: &str| TqrError::Unsatisfiable {
        qtype: q.qtype.to_string(),
        msg: msg.to_string(),
    };
    let r = RelationId(q.relation.ok_or_else(|| unresolved("question records no relation"))?);
    kg.check_relation(r)?;
    for e in q.entity_ids() {
        kg.check_entity(e)?;
    }
    if let Some(t) = q.time() {
        kg.check_time(t)?;
    }
    let (s, o) = q.roles();
    let s = s.ok_or_else(|| unresolved("question has no subject"))?;
    let need_o = || o.ok_or_else(|| unresolved("question has no object"));
    let need_c = || q.constraint.ok_or_else(|| unresolved("question has no constraint"));
    let timed = |f: &&Fact| f.relation == r && f.is_timed();
    let starts = |x: EntityId| -> Vec<i32> {
        kg.facts()
            .iter()
            .filter(timed)
            .filter(|f| f.subject == s && f.object == x)
            .filter_map(|f| f.span.start())
            .collect()
    };
    let reference = |x: EntityId| -> Result<i32> {
        starts(x).into_iter().min().ok_or_else(|| unresolved("reference entity has no timed fact"))
    };
    let mut gold = BTreeSet::new();
    match q.qtype {
        QType::SimpleEntity => {
            let t = q.time().ok_or_else(|| unresolved("question has no timestamp"))?;
            let y = kg.year_of(t).ok_or_else(|| unresolved("question timestamp is NO_TIME"))?;
            for f in kg.facts().iter().filter(timed).filter(|f| f.subject == s) {
                let (a, b) = f.span.years().expect("timed");
                if a <= y && y <= b {
                    gold.insert(f.object.0);
                }
            }
        }
        QType::SimpleTime => {
            let o = need_o()?;
            for f in kg.facts().iter().filter(timed).filter(|f| f.subject == s && f.object == o) {
                let (a, b) = f.span.years().expect("timed");
                for y in a..=b {
                    gold.insert(kg.time_id(y).expect("year in table").0);
                }
            }
        }
        QType::BeforeAfter => {
            let x = need_o()?;
            let ref_year = reference(x)?;
            let after = match need_c()? {
                Constraint::After => true,
                Constraint::Before => false,
                _ => return Err(unresolved("before_after needs before or after")),
            };
            for f in kg.facts().iter().filter(timed).filter(|f| f.subject == s && f.object != x) {
                let a = f.span.start().expect("timed");
                if (after && a > ref_year) || (!after && a < ref_year) {
                    gold.insert(f.object.0);
                }
            }
        }
        QType::FirstLast => {
            let facts: Vec<&Fact> = kg.facts().iter().filter(timed).filter(|f| f.subject == s).collect();
            let years = facts.iter().filter_map(|f| f.span.start());
            let target = match need_c()? {
                Constraint::First => years.min(),
                Constraint::Last => years.max(),
                _ => return Err(unresolved("first_last needs first or last")),
            }
            .ok_or_else(|| unresolved("subject has no timed fact"))?;
            match q.answer_kind {
                AnswerKind::Entity => {
                    gold.extend(facts.iter().filter(|f| f.span.start() == Some(target)).map(|f| f.object.0))
                }
                AnswerKind::Time => {
                    gold.insert(kg.time_id(target).expect("year in table").0);
                }
            }
        }
        QType::TimeJoin => {
            let o = need_o()?;
            let mine: Vec<&Fact> = kg.facts().iter().filter(timed).filter(|f| f.subject == s && f.object == o).collect();
            for f in kg.facts().iter().filter(timed).filter(|f| f.object == o && f.subject != s) {
                if mine.iter().any(|m| m.span.overlaps(f.span)) {
                    gold.insert(f.subject.0);
                }
            }
        }
        QType::BeforeAndAfter => {
            let x = need_o()?;
            let y = q.second_object().ok_or_else(|| unresolved("question has no second boundary"))?;
            let (rx, ry) = (reference(x)?, reference(y)?);
            let (lo, hi) = match need_c()? {
                Constraint::AfterAndBefore => (rx, ry),
                Constraint::BeforeAndAfter => (ry, rx),
                _ => return Err(unresolved("before_and_after needs a two-sided constraint")),
            };
            for f in kg.facts().iter().filter(timed).filter(|f| f.subject == s && f.object != x && f.object != y) {
                let a = f.span.start().expect("timed");
                if lo < a && a < hi {
                    gold.insert(f.object.0);
                }
            }
        }
        QType::BeforeAfterFirstLast => {
            let x = need_o()?;
            let ref_year = reference(x)?;
            let after = match need_c()? {
                Constraint::AfterFirst => true,
                Constraint::BeforeLast => false,
                _ => return Err(unresolved("before_after_first_last needs after_first or before_last")),
            };
            let qualifying: Vec<&Fact> = kg
                .facts()
                .iter()
                .filter(timed)
                .filter(|f| f.subject == s && f.object != x)
                .filter(|f| {
                    let a = f.span.start().expect("timed");
                    if after {
                        a > ref_year
                    } else {
                        a < ref_year
                    }
                })
                .collect();
            let years = qualifying.iter().filter_map(|f| f.span.start());
            if let Some(closest) = if after { years.min() } else { years.max() } {
                gold.extend(qualifying.iter().filter(|f| f.span.start() == Some(closest)).map(|f| f.object.0));
            }
        }
    }
    Ok(gold.into_iter().collect())
}

