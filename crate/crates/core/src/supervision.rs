//! Question-specific time embeddings `t1`, `t2`.
//!
//! Hard scopes come from TKG facts about the annotated entities, soft scopes
//! from embedding algebra on a learned virtual relation, and the ablation
//! kinds replace the retrieved embeddings by other vectors for the same
//! years.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use tqr_tensor::Tensor;

use crate::embed::{cmul, conj, EmbeddingStore};
use crate::encoder::sinusoidal;
use crate::seed::rng_for;
use crate::tkg::{EntityId, MatchMode, TemporalKg, TimeId};
use crate::{Result, TqrError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationKind {
    /// One year sampled inside the retrieved scope, embedded by the store.
    TcomplexSampled,
    /// Sinusoidal vectors indexed by year rank.
    PositionalStartEnd,
    /// Fixed random vector per year.
    RandomStartEnd,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [
        AblationKind::TcomplexSampled,
        AblationKind::PositionalStartEnd,
        AblationKind::RandomStartEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::TcomplexSampled => "tcomplex_sampled",
            AblationKind::PositionalStartEnd => "positional_start_end",
            AblationKind::RandomStartEnd => "random_start_end",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = TqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcomplex_sampled" | "sampled" => Ok(AblationKind::TcomplexSampled),
            "positional_start_end" | "positional" => Ok(AblationKind::PositionalStartEnd),
            "random_start_end" | "random" => Ok(AblationKind::RandomStartEnd),
            _ => Err(TqrError::UnknownName {
                kind: "time ablation",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Hard,
    Soft,
    Ensemble,
    Ablation(AblationKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeScope {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub provenance: Provenance,
    /// Start and end timestamp ids when retrieved from facts.
    pub resolved: Option<(TimeId, TimeId)>,
}

impl TimeScope {
    pub fn width(&self) -> usize {
        self.t1.len()
    }
}

/// Start and end timestamp ids by the all, then any, then `NO_TIME` chain.
/// A non-empty match whose facts are all untimed yields `NO_TIME` twice.
pub fn hard_time_ids(kg: &TemporalKg, entities: &[EntityId]) -> Result<(TimeId, TimeId)> {
    if entities.is_empty() {
        return Err(TqrError::invalid("hard supervision needs at least one annotated entity"));
    }
    let mut matched = kg.facts_with_entities(entities, MatchMode::All)?;
    if matched.is_empty() {
        matched = kg.facts_with_entities(entities, MatchMode::Any)?;
    }
    let years = matched.iter().filter_map(|m| m.fact.span.years());
    let (lo, hi) = years.fold((None, None), |(lo, hi): (Option<i32>, Option<i32>), (a, b)| {
        (Some(lo.map_or(a, |x| x.min(a))), Some(hi.map_or(b, |x| x.max(b))))
    });
    match (lo, hi) {
        (Some(a), Some(b)) => Ok((kg.time_id(a).expect("year"), kg.time_id(b).expect("year"))),
        _ => Ok((kg.no_time(), kg.no_time())),
    }
}

pub fn hard_time_scope(kg: &TemporalKg, store: &EmbeddingStore, entities: &[EntityId]) -> Result<TimeScope> {
    require_frozen(store)?;
    let (a, b) = hard_time_ids(kg, entities)?;
    Ok(TimeScope {
        t1: store.timestamp(a)?.to_vec(),
        t2: store.timestamp(b)?.to_vec(),
        provenance: Provenance::Hard,
        resolved: Some((a, b)),
    })
}

/// The vector `t` that the timestamp decomposition scores as `sum |t|^2`
/// for subject `es` and `u = q_time * conj(e_o)`.
pub fn soft_time(es: &[f64], u: &[f64]) -> Vec<f64> {
    conj(&cmul(es, u))
}

/// `t1` with `(s, o)`, `t2` with the roles swapped; missing roles take the
/// dummy entity.
pub fn soft_time_scope(
    store: &EmbeddingStore,
    q_time: &[f64],
    subject: Option<EntityId>,
    object: Option<EntityId>,
) -> Result<TimeScope> {
    require_frozen(store)?;
    if q_time.len() != store.dim() {
        return Err(TqrError::invalid("virtual relation width differs from the store"));
    }
    let dummy = store.dummy_entity();
    let es = store.entity(subject.unwrap_or(dummy))?;
    let eo = store.entity(object.unwrap_or(dummy))?;
    let t1 = soft_time(es, &cmul(q_time, &conj(eo)));
    let t2 = soft_time(eo, &cmul(q_time, &conj(es)));
    Ok(TimeScope {
        t1,
        t2,
        provenance: Provenance::Soft,
        resolved: None,
    })
}

pub fn ensemble_time_scope(hard: &TimeScope, soft: &TimeScope) -> Result<TimeScope> {
    if hard.width() != soft.width() || hard.t2.len() != soft.t2.len() {
        return Err(TqrError::invalid(format!(
            "time scope widths differ: {} vs {}",
            hard.width(),
            soft.width()
        )));
    }
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
    Ok(TimeScope {
        t1: add(&hard.t1, &soft.t1),
        t2: add(&hard.t2, &soft.t2),
        provenance: Provenance::Ensemble,
        resolved: hard.resolved,
    })
}

/// Per-timestamp vectors used by the positional and random ablations.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTables {
    pub positional: Tensor,
    pub random: Tensor,
}

impl AblationTables {
    /// Random vectors match the spread of the store's timestamp table.
    pub fn new(store: &EmbeddingStore, seed: u64) -> Self {
        let (n, d) = (store.num_timestamps(), store.dim());
        let data = store.timestamp_table().data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / data.len() as f64;
        let normal = Normal::new(0.0, var.sqrt().max(1e-3)).expect("std");
        let mut rng = rng_for(seed, "ablation.random");
        let random = Tensor::new(vec![n, d], (0..n * d).map(|_| normal.sample(&mut rng)).collect()).expect("shape");
        AblationTables {
            positional: sinusoidal(n, d),
            random,
        }
    }
}

pub fn ablation_time_scope(
    kind: AblationKind,
    kg: &TemporalKg,
    store: &EmbeddingStore,
    tables: &AblationTables,
    entities: &[EntityId],
    rng: &mut impl Rng,
) -> Result<TimeScope> {
    require_frozen(store)?;
    let (a, b) = hard_time_ids(kg, entities)?;
    let (t1, t2) = match kind {
        AblationKind::TcomplexSampled => {
            let t = sample_between(kg, a, b, rng);
            let v = store.timestamp(t)?.to_vec();
            (v.clone(), v)
        }
        AblationKind::PositionalStartEnd => (
            tables.positional.row_slice(a.index()).to_vec(),
            tables.positional.row_slice(b.index()).to_vec(),
        ),
        AblationKind::RandomStartEnd => (
            tables.random.row_slice(a.index()).to_vec(),
            tables.random.row_slice(b.index()).to_vec(),
        ),
    };
    Ok(TimeScope {
        t1,
        t2,
        provenance: Provenance::Ablation(kind),
        resolved: Some((a, b)),
    })
}

/// Uniform year in `[a, b]`; `NO_TIME` scopes stay `NO_TIME`.
pub fn sample_between(kg: &TemporalKg, a: TimeId, b: TimeId, rng: &mut impl Rng) -> TimeId {
    if a == kg.no_time() || b == kg.no_time() || a >= b {
        return a;
    }
    TimeId(rng.random_range(a.0..=b.0))
}

fn require_frozen(store: &EmbeddingStore) -> Result<()> {
    if store.is_frozen() {
        Ok(())
    } else {
        Err(TqrError::invalid("time supervision needs a frozen embedding store"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::time_score_decomposed;
    use crate::tkg::{Span, TkgBuilder};
    use tqr_tensor::Tensor;

    fn kg() -> TemporalKg {
        let mut b = TkgBuilder::new();
        for (o, y) in [("B", 1972), ("C", 1994), ("D", 1979)] {
            b.add("A", "r", o, Span::Interval { start: y, end: y }).unwrap();
        }
        b.add("E", "r", "F", Span::NoTime).unwrap();
        b.build()
    }

    fn store(kg: &TemporalKg) -> EmbeddingStore {
        let mut s = EmbeddingStore::init(kg, 4, 0.3, 1).unwrap();
        s.freeze();
        s
    }

    fn ids(kg: &TemporalKg, names: &[&str]) -> Vec<EntityId> {
        names.iter().map(|n| kg.entity_by_name(n).unwrap()).collect()
    }

    fn years(kg: &TemporalKg, names: &[&str]) -> (Option<i32>, Option<i32>) {
        let (a, b) = hard_time_ids(kg, &ids(kg, names)).unwrap();
        (kg.year_of(a), kg.year_of(b))
    }

    #[test]
    fn hard_examples() {
        let g = kg();
        assert_eq!(years(&g, &["A", "B"]), (Some(1972), Some(1972)));
        assert_eq!(years(&g, &["A"]), (Some(1972), Some(1994)));
        assert_eq!(years(&g, &["A", "E"]), (Some(1972), Some(1994)));
        assert_eq!(years(&g, &["E"]), (None, None));
        assert!(hard_time_ids(&g, &[]).is_err());
        let s = store(&g);
        let scope = hard_time_scope(&g, &s, &ids(&g, &["E", "F"])).unwrap();
        assert_eq!(scope.t1, s.timestamp(g.no_time()).unwrap());
        assert_eq!(scope.t2, scope.t1);
    }

    #[test]
    fn soft_identities() {
        assert_eq!(soft_time(&[1.0, 0.0], &[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(soft_time(&[0.0, 1.0], &[0.0, 1.0]), vec![-1.0, 0.0]);
        let es = [0.3, -1.2, 0.5, 0.7];
        let u = [1.1, 0.4, -0.2, 0.9];
        let t = soft_time(&es, &u);
        let norm2: f64 = t.iter().map(|x| x * x).sum();
        assert!((time_score_decomposed(&es, &u, &t) - norm2).abs() < 1e-12);
    }

    #[test]
    fn soft_missing_roles_use_dummy() {
        let g = kg();
        let s = store(&g);
        let q = vec![0.2, 0.1, -0.3, 0.4];
        let a = soft_time_scope(&s, &q, Some(EntityId(0)), None).unwrap();
        let b = soft_time_scope(&s, &q, Some(EntityId(0)), Some(s.dummy_entity())).unwrap();
        assert_eq!(a, b);
        assert!(soft_time_scope(&s, &[0.0; 2], None, None).is_err());
    }

    #[test]
    fn ensemble_sums() {
        let h = TimeScope {
            t1: vec![1.0, 2.0],
            t2: vec![3.0, 4.0],
            provenance: Provenance::Hard,
            resolved: None,
        };
        let zero = TimeScope {
            t1: vec![0.0; 2],
            t2: vec![0.0; 2],
            provenance: Provenance::Soft,
            resolved: None,
        };
        assert_eq!(ensemble_time_scope(&h, &zero).unwrap().t1, h.t1);
        let twice = ensemble_time_scope(&h, &h).unwrap();
        assert_eq!(twice.t2, vec![6.0, 8.0]);
        let narrow = TimeScope { t1: vec![0.0], ..zero };
        assert!(ensemble_time_scope(&h, &narrow).is_err());
    }

    #[test]
    fn ablations() {
        let g = kg();
        let s = store(&g);
        let tables = AblationTables::new(&s, 3);
        let mut rng = rng_for(0, "t");
        let b = ids(&g, &["A", "B"]);
        let sampled = ablation_time_scope(AblationKind::TcomplexSampled, &g, &s, &tables, &b, &mut rng).unwrap();
        assert_eq!(sampled.t1, s.timestamp(g.time_id(1972).unwrap()).unwrap());
        let r1 = ablation_time_scope(AblationKind::RandomStartEnd, &g, &s, &tables, &b, &mut rng).unwrap();
        let r2 = ablation_time_scope(AblationKind::RandomStartEnd, &g, &s, &tables, &b, &mut rng).unwrap();
        assert_eq!(r1, r2);
        let wide = ablation_time_scope(AblationKind::PositionalStartEnd, &g, &s, &tables, &ids(&g, &["A"]), &mut rng).unwrap();
        assert_ne!(wide.t1, wide.t2);
        assert_eq!(tables.positional, Tensor::clone(&sinusoidal(g.num_timestamps(), 4)));
        assert!("gaussian".parse::<AblationKind>().is_err());
    }
}
