//! Temporal knowledge graph: interned entities and relations, integer-year
//! interval facts, and the `NO_TIME` sentinel.
//!
//! The timestamp table is the contiguous year range covered by the facts
//! (optionally widened by a `#!years <first> <last>` pragma line), followed
//! by one extra id for `NO_TIME`. Keeping the table contiguous means every
//! year of an interval has an id and consecutive ids are consecutive years.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_for;
use crate::{Result, TqrError};

pub const NO_TIME: &str = "NO_TIME";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TimeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Span {
    Interval { start: i32, end: i32 },
    NoTime,
}

impl Span {
    pub fn years(self) -> Option<(i32, i32)> {
        match self {
            Span::Interval { start, end } => Some((start, end)),
            Span::NoTime => None,
        }
    }

    pub fn start(self) -> Option<i32> {
        self.years().map(|(s, _)| s)
    }

    /// Closed-interval intersection.
    pub fn overlaps(self, other: Span) -> bool {
        match (self.years(), other.years()) {
            (Some((a0, a1)), Some((b0, b1))) => a0 <= b1 && b0 <= a1,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub span: Span,
}

impl Fact {
    pub fn is_timed(&self) -> bool {
        matches!(self.span, Span::Interval { .. })
    }

    pub fn involves(&self, e: EntityId) -> bool {
        self.subject == e || self.object == e
    }
}

/// Point-in-time fact produced by interval expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: TimeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Facts whose {subject, object} contains every requested entity.
    All,
    /// Facts touching at least one requested entity.
    Any,
}

#[derive(Clone, Copy, Debug)]
pub struct MatchedFact<'a> {
    pub index: usize,
    pub fact: &'a Fact,
    pub untimed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalKg {
    entities: Interner,
    relations: Interner,
    /// Inclusive year range; `None` when no fact is timed.
    years: Option<(i32, i32)>,
    facts: Vec<Fact>,
    by_entity: Vec<Vec<usize>>,
}

/// Incremental construction by name. Duplicate facts are dropped.
#[derive(Debug, Default)]
pub struct TkgBuilder {
    entities: Interner,
    relations: Interner,
    years: Option<(i32, i32)>,
    facts: Vec<Fact>,
    seen: HashSet<Fact>,
}

impl TkgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Widen the timestamp table to cover `first..=last`.
    pub fn cover_years(&mut self, first: i32, last: i32) -> &mut Self {
        self.widen(first, last);
        self
    }

    fn widen(&mut self, a: i32, b: i32) {
        self.years = Some(match self.years {
            Some((lo, hi)) => (lo.min(a), hi.max(b)),
            None => (a, b),
        });
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    pub fn add(&mut self, subject: &str, relation: &str, object: &str, span: Span) -> Result<bool> {
        if let Span::Interval { start, end } = span {
            if start > end {
                return Err(TqrError::invalid(format!("start {start} > end {end}")));
            }
        }
        for (what, n) in [("subject", subject), ("relation", relation), ("object", object)] {
            if n.is_empty() || n.contains(['\t', '\n', '\r']) || n.starts_with('#') {
                return Err(TqrError::invalid(format!("invalid {what} name {n:?}")));
            }
        }
        let fact = Fact {
            subject: self.entity(subject),
            relation: self.relation(relation),
            object: self.entity(object),
            span,
        };
        Ok(self.push(fact))
    }

    fn push(&mut self, fact: Fact) -> bool {
        if !self.seen.insert(fact) {
            return false;
        }
        if let Span::Interval { start, end } = fact.span {
            self.widen(start, end);
        }
        self.facts.push(fact);
        true
    }

    pub fn build(self) -> TemporalKg {
        TemporalKg::from_parts(self.entities, self.relations, self.years, self.facts)
    }
}

impl TemporalKg {
    fn from_parts(entities: Interner, relations: Interner, years: Option<(i32, i32)>, facts: Vec<Fact>) -> Self {
        let mut by_entity = vec![Vec::new(); entities.len()];
        for (i, f) in facts.iter().enumerate() {
            by_entity[f.subject.index()].push(i);
            if f.object != f.subject {
                by_entity[f.object.index()].push(i);
            }
        }
        TemporalKg {
            entities,
            relations,
            years,
            facts,
            by_entity,
        }
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Number of real years in the timestamp table (excludes `NO_TIME`).
    pub fn num_years(&self) -> usize {
        self.years.map_or(0, |(a, b)| (b - a + 1) as usize)
    }

    /// Including the `NO_TIME` sentinel.
    pub fn num_timestamps(&self) -> usize {
        self.num_years() + 1
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        self.years
    }

    pub fn no_time(&self) -> TimeId {
        TimeId(self.num_years() as u32)
    }

    pub fn time_id(&self, year: i32) -> Option<TimeId> {
        let (lo, hi) = self.years?;
        (lo..=hi).contains(&year).then(|| TimeId((year - lo) as u32))
    }

    /// `None` for `NO_TIME` or out-of-range ids.
    pub fn year_of(&self, t: TimeId) -> Option<i32> {
        let (lo, _) = self.years?;
        (t.index() < self.num_years()).then(|| lo + t.0 as i32)
    }

    pub fn time_label(&self, t: TimeId) -> String {
        self.year_of(t).map_or_else(|| NO_TIME.to_string(), |y| y.to_string())
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).unwrap_or("?")
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0).unwrap_or("?")
    }

    pub fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.num_entities() {
            Ok(())
        } else {
            Err(TqrError::UnknownId { kind: "entity", id: e.0 })
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.index() < self.num_relations() {
            Ok(())
        } else {
            Err(TqrError::UnknownId { kind: "relation", id: r.0 })
        }
    }

    pub fn check_time(&self, t: TimeId) -> Result<()> {
        if t.index() < self.num_timestamps() {
            Ok(())
        } else {
            Err(TqrError::UnknownId { kind: "timestamp", id: t.0 })
        }
    }

    /// Indices of facts touching `e`, in fact order.
    pub fn facts_of(&self, e: EntityId) -> &[usize] {
        self.by_entity.get(e.index()).map_or(&[], Vec::as_slice)
    }

    // ---- file format -------------------------------------------------

    pub fn parse_tsv(src: &str) -> Result<Self> {
        let mut b = TkgBuilder::new();
        for (i, raw) in src.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if let Some(rest) = line.strip_prefix("#!years") {
                let nums: Vec<i32> = rest
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(line_no, "bad #!years pragma"))?;
                match nums[..] {
                    [a, z] if a <= z => {
                        b.cover_years(a, z);
                    }
                    _ => return Err(parse_err(line_no, "bad #!years pragma")),
                }
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(parse_err(line_no, &format!("expected 5 tab-separated fields, got {}", cols.len())));
            }
            let span = match (cols[3], cols[4]) {
                (NO_TIME, NO_TIME) => Span::NoTime,
                (NO_TIME, _) | (_, NO_TIME) => {
                    return Err(parse_err(line_no, "NO_TIME must appear in both time columns"))
                }
                (s, e) => {
                    let start: i32 = s.trim().parse().map_err(|_| parse_err(line_no, &format!("bad start year {s:?}")))?;
                    let end: i32 = e.trim().parse().map_err(|_| parse_err(line_no, &format!("bad end year {e:?}")))?;
                    if start > end {
                        return Err(parse_err(line_no, &format!("start {start} > end {end}")));
                    }
                    Span::Interval { start, end }
                }
            };
            b.add(cols[0], cols[1], cols[2], span)
                .map_err(|e| parse_err(line_no, &e.to_string()))?;
        }
        Ok(b.build())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some((a, z)) = self.years {
            writeln!(out, "#!years {a} {z}").unwrap();
        }
        for f in &self.facts {
            let (s, e) = match f.span {
                Span::Interval { start, end } => (start.to_string(), end.to_string()),
                Span::NoTime => (NO_TIME.to_string(), NO_TIME.to_string()),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                self.entity_name(f.subject),
                self.relation_name(f.relation),
                self.entity_name(f.object),
                s,
                e
            )
            .unwrap();
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| TqrError::io(path, e))?;
        Self::parse_tsv(&src)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| TqrError::io(path, e))
    }

    // ---- derived views -----------------------------------------------

    /// One quadruple per covered year, at most `cap` years per fact (the
    /// earliest ones); untimed facts yield one `NO_TIME` quadruple.
    pub fn expand_intervals(&self, cap: usize) -> Result<Vec<Quadruple>> {
        if cap == 0 {
            return Err(TqrError::invalid("interval cap must be at least 1"));
        }
        let mut out = Vec::new();
        for f in &self.facts {
            match f.span {
                Span::Interval { start, end } => {
                    for year in (start..=end).take(cap) {
                        out.push(Quadruple {
                            subject: f.subject,
                            relation: f.relation,
                            object: f.object,
                            time: self.time_id(year).expect("year in table"),
                        });
                    }
                }
                Span::NoTime => out.push(Quadruple {
                    subject: f.subject,
                    relation: f.relation,
                    object: f.object,
                    time: self.no_time(),
                }),
            }
        }
        Ok(out)
    }

    /// Independently replace each fact's interval by `NO_TIME` with
    /// probability `p`. Tables (including the year range) are unchanged.
    pub fn corrupt_timestamps(&self, p: f64, seed: u64) -> Result<TemporalKg> {
        if !(0.0..=1.0).contains(&p) {
            return Err(TqrError::invalid(format!("corruption probability {p} outside [0, 1]")));
        }
        let mut rng = rng_for(seed, "corrupt");
        let facts = self
            .facts
            .iter()
            .map(|f| {
                // Draw for every fact so the stream does not depend on p.
                let u: f64 = rng.random();
                if u < p {
                    Fact { span: Span::NoTime, ..*f }
                } else {
                    *f
                }
            })
            .collect();
        Ok(TemporalKg::from_parts(
            self.entities.clone(),
            self.relations.clone(),
            self.years,
            facts,
        ))
    }

    pub fn facts_with_entities(&self, ids: &[EntityId], mode: MatchMode) -> Result<Vec<MatchedFact<'_>>> {
        if ids.is_empty() {
            return Err(TqrError::invalid("facts_with_entities needs at least one entity"));
        }
        for &e in ids {
            self.check_entity(e)?;
        }
        let mut idx: Vec<usize> = match mode {
            MatchMode::Any => {
                let mut v: Vec<usize> = ids.iter().flat_map(|e| self.facts_of(*e).iter().copied()).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            MatchMode::All => {
                let distinct: HashSet<EntityId> = ids.iter().copied().collect();
                if distinct.len() > 2 {
                    Vec::new()
                } else {
                    let pivot = ids.iter().min_by_key(|e| self.facts_of(**e).len()).expect("non-empty");
                    self.facts_of(*pivot)
                        .iter()
                        .copied()
                        .filter(|&i| distinct.iter().all(|e| self.facts[i].involves(*e)))
                        .collect()
                }
            }
        };
        idx.sort_unstable();
        Ok(idx
            .into_iter()
            .map(|i| MatchedFact {
                index: i,
                fact: &self.facts[i],
                untimed: !self.facts[i].is_timed(),
            })
            .collect())
    }

    /// Subset of facts by index, keeping tables intact (used for splits).
    pub fn with_facts(&self, facts: Vec<Fact>) -> TemporalKg {
        TemporalKg::from_parts(self.entities.clone(), self.relations.clone(), self.years, facts)
    }
}

fn parse_err(line: usize, msg: &str) -> TqrError {
    TqrError::Parse {
        line,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(lines: &[&str]) -> TemporalKg {
        TemporalKg::parse_tsv(&lines.join("\n")).unwrap()
    }

    #[test]
    fn single_line_kg() {
        let g = kg(&["A\twon\tB\t1972\t1972"]);
        assert_eq!(g.num_entities(), 2);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.num_years(), 1);
        assert_eq!(g.facts().len(), 1);
        assert_eq!(g.no_time(), TimeId(1));
    }

    #[test]
    fn no_time_line() {
        let g = kg(&["A\twon\tB\tNO_TIME\tNO_TIME"]);
        assert_eq!(g.facts()[0].span, Span::NoTime);
        assert_eq!(g.num_years(), 0);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = TemporalKg::parse_tsv("# c\nA\tr\tB\t1972\t1972\nA\tr\tB\t1972").unwrap_err();
        assert!(matches!(err, TqrError::Parse { line: 3, .. }), "{err}");
        let err = TemporalKg::parse_tsv("A\tr\tB\t1980\t1972").unwrap_err();
        assert!(matches!(err, TqrError::Parse { line: 1, .. }));
        assert!(TemporalKg::parse_tsv("A\tr\tB\tNO_TIME\t1972").is_err());
        assert!(TemporalKg::parse_tsv("A\tr\tB\tabc\t1972").is_err());
    }

    #[test]
    fn duplicates_are_dropped() {
        let g = kg(&["A\tr\tB\t1972\t1974", "A\tr\tB\t1972\t1974", "A\tr\tB\t1972\t1975"]);
        assert_eq!(g.facts().len(), 2);
    }

    #[test]
    fn save_load_identity() {
        let g = kg(&["#!years 1960 1990", "A\tr\tB\t1972\t1974", "C\ts\tA\tNO_TIME\tNO_TIME"]);
        let back = TemporalKg::parse_tsv(&g.to_tsv()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.num_years(), 31);
    }

    #[test]
    fn expansion_and_cap() {
        let g = kg(&["A\tr\tB\t1972\t1974", "A\tr\tC\t1972\t1972", "A\tr\tD\t1972\t1976", "E\tr\tF\tNO_TIME\tNO_TIME"]);
        let q = g.expand_intervals(10).unwrap();
        let years: Vec<i32> = q.iter().filter(|q| q.object == EntityId(1)).map(|q| g.year_of(q.time).unwrap()).collect();
        assert_eq!(years, vec![1972, 1973, 1974]);
        assert_eq!(q.iter().filter(|q| q.object == EntityId(2)).count(), 1);
        let capped = g.expand_intervals(2).unwrap();
        let d: Vec<i32> = capped.iter().filter(|q| q.object == EntityId(3)).map(|q| g.year_of(q.time).unwrap()).collect();
        assert_eq!(d, vec![1972, 1973]);
        assert_eq!(capped.iter().filter(|q| q.time == g.no_time()).count(), 1);
        assert!(g.expand_intervals(0).is_err());
    }

    #[test]
    fn corruption_extremes() {
        let g = kg(&["A\tr\tB\t1972\t1974", "A\tr\tC\t1980\t1982"]);
        assert_eq!(g.corrupt_timestamps(0.0, 1).unwrap(), g);
        let all = g.corrupt_timestamps(1.0, 1).unwrap();
        assert!(all.facts().iter().all(|f| f.span == Span::NoTime));
        assert_eq!(all.num_years(), g.num_years());
        assert!(g.corrupt_timestamps(1.5, 1).is_err());
        assert!(g.corrupt_timestamps(-0.1, 1).is_err());
    }

    #[test]
    fn entity_lookup_modes() {
        let g = kg(&["A\tr\tB\t1972\t1972", "A\tr\tC\t1994\t1994"]);
        let (a, b) = (EntityId(0), EntityId(1));
        let all = g.facts_with_entities(&[a, b], MatchMode::All).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].index, 0);
        let g2 = kg(&["A\tr\tC\t1994\t1994", "A\tr\tB\tNO_TIME\tNO_TIME"]);
        let c_only = g2.facts_with_entities(&[EntityId(0), EntityId(2)], MatchMode::All).unwrap();
        assert_eq!(c_only.len(), 1);
        let none = kg(&["A\tr\tC\t1994\t1994", "B\tr\tD\t1990\t1990"]);
        let (a, b) = (none.entity_by_name("A").unwrap(), none.entity_by_name("B").unwrap());
        assert!(none.facts_with_entities(&[a, b], MatchMode::All).unwrap().is_empty());
        assert_eq!(none.facts_with_entities(&[a, b], MatchMode::Any).unwrap().len(), 2);
        assert!(none.facts_with_entities(&[EntityId(99)], MatchMode::Any).is_err());
        assert!(none.facts_with_entities(&[], MatchMode::Any).is_err());
        let flagged = g2.facts_with_entities(&[EntityId(0)], MatchMode::Any).unwrap();
        assert!(flagged.iter().any(|m| m.untimed));
    }
}
