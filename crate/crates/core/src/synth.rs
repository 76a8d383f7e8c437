//! Seeded synthetic temporal KG with the shapes the question types need:
//! succession chains (positions and chairs, one holder at a time), yearly
//! awards, and overlapping multi-year memberships and employments.
//!
//! Entities belong to communities so the graph has learnable structure:
//! people only join teams and organizations of their own community, and
//! positions and awards go to members of the owning community.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed::rng_for;
use crate::tkg::{Span, TemporalKg, TkgBuilder};
use crate::{Result, TqrError};

pub const HELD_BY: &str = "held_by";
pub const WON_BY: &str = "won_by";
pub const MEMBER_OF: &str = "member_of";
pub const EMPLOYED_BY: &str = "employed_by";
pub const CHAIRED_BY: &str = "chaired_by";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub persons: usize,
    pub teams: usize,
    pub orgs: usize,
    pub positions: usize,
    pub awards: usize,
    pub communities: usize,
    pub first_year: i32,
    pub num_years: usize,
    pub max_term: usize,
    pub max_stint: usize,
    /// Percent chance an award is handed out in a given year.
    pub award_rate: u32,
    /// Typical career length in years; people only hold facts inside their
    /// career. 0 means everyone is active for the whole range.
    pub career_years: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 200 entities, 5 relations, 50 years, roughly 3000 facts.
    fn default() -> Self {
        SynthConfig {
            persons: 150,
            teams: 20,
            orgs: 10,
            positions: 12,
            awards: 8,
            communities: 10,
            first_year: 1970,
            num_years: 50,
            max_term: 8,
            max_stint: 7,
            award_rate: 85,
            career_years: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Roughly 50 entities, 3 relations, 20 years and 400 facts.
    pub fn toy() -> Self {
        SynthConfig {
            persons: 38,
            teams: 6,
            orgs: 0,
            positions: 3,
            awards: 3,
            communities: 3,
            first_year: 2000,
            num_years: 20,
            max_term: 5,
            max_stint: 2,
            award_rate: 90,
            career_years: 0,
            seed: 0,
        }
    }

    /// Larger graph for question answering: enough distinct instances of
    /// every question type for a 6.5k-question dataset.
    pub fn qa() -> Self {
        SynthConfig {
            persons: 500,
            teams: 50,
            orgs: 25,
            positions: 30,
            awards: 20,
            career_years: 16,
            ..SynthConfig::default()
        }
    }

    /// The 1-minute fixture used by CLI smoke tests.
    pub fn smoke() -> Self {
        SynthConfig {
            persons: 30,
            teams: 4,
            orgs: 2,
            positions: 3,
            awards: 2,
            communities: 2,
            first_year: 1990,
            num_years: 15,
            max_term: 4,
            max_stint: 4,
            award_rate: 90,
            career_years: 0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn last_year(&self) -> i32 {
        self.first_year + self.num_years as i32 - 1
    }
}

pub fn generate_kg(cfg: &SynthConfig) -> Result<TemporalKg> {
    if cfg.persons == 0 || cfg.communities == 0 || cfg.num_years == 0 {
        return Err(TqrError::invalid("synthetic KG needs persons, communities and years"));
    }
    if cfg.max_term == 0 || cfg.max_stint == 0 {
        return Err(TqrError::invalid("term and stint lengths must be positive"));
    }
    let mut rng = rng_for(cfg.seed, "synth");
    let mut b = TkgBuilder::new();
    b.cover_years(cfg.first_year, cfg.last_year());
    let c = cfg.communities;
    let persons: Vec<String> = (0..cfg.persons).map(|i| format!("person_{i}")).collect();
    let community_of = |i: usize| i % c;
    let members: Vec<Vec<usize>> = (0..c).map(|k| (0..cfg.persons).filter(|&i| community_of(i) == k).collect()).collect();
    for p in &persons {
        b.entity(p);
    }

    let careers = careers(&mut rng, cfg);
    let active = |i: usize, y: i32| careers[i].0 <= y && y <= careers[i].1;

    for (kind, rel, n) in [("post", HELD_BY, cfg.positions), ("org", CHAIRED_BY, cfg.orgs)] {
        for i in 0..n {
            let subject = format!("{kind}_{i}");
            succession(&mut b, &mut rng, cfg, &subject, rel, &members[i % c], &persons, &careers)?;
        }
    }

    for i in 0..cfg.awards {
        let award = format!("award_{i}");
        for y in cfg.first_year..=cfg.last_year() {
            if rng.random_range(0..100) < cfg.award_rate {
                let m: Vec<usize> = members[i % c].iter().copied().filter(|&p| active(p, y)).collect();
                if !m.is_empty() {
                    let w = m[rng.random_range(0..m.len())];
                    b.add(&award, WON_BY, &persons[w], Span::Interval { start: y, end: y })?;
                }
            }
        }
    }

    for (kind, rel, n) in [("team", MEMBER_OF, cfg.teams), ("org", EMPLOYED_BY, cfg.orgs)] {
        if n == 0 {
            continue;
        }
        for (i, person) in persons.iter().enumerate() {
            let k = community_of(i);
            let own: Vec<usize> = (0..n).filter(|j| j % c == k).collect();
            let pool = if own.is_empty() { (0..n).collect() } else { own };
            stints(&mut b, &mut rng, cfg, person, rel, kind, &pool, careers[i])?;
        }
    }
    Ok(b.build())
}

/// Active window per person; the whole range when careers are disabled.
fn careers(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<(i32, i32)> {
    let (lo, hi) = (cfg.first_year, cfg.last_year());
    (0..cfg.persons)
        .map(|_| {
            if cfg.career_years == 0 {
                return (lo, hi);
            }
            let n = cfg.career_years as i32;
            let len = rng.random_range(n / 2..=n + n / 2).max(1);
            let start = rng.random_range(lo - len / 2..=hi - len / 2);
            (start.max(lo), (start + len - 1).min(hi))
        })
        .collect()
}

/// One holder at a time, each person at most once per chain.
#[allow(clippy::too_many_arguments)]
fn succession(
    b: &mut TkgBuilder,
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    subject: &str,
    rel: &str,
    pool: &[usize],
    persons: &[String],
    careers: &[(i32, i32)],
) -> Result<()> {
    let mut free: Vec<usize> = pool.to_vec();
    let mut y = cfg.first_year + rng.random_range(0..3);
    while y <= cfg.last_year() && !free.is_empty() {
        let len = rng.random_range(1..=cfg.max_term) as i32;
        let open: Vec<usize> = (0..free.len()).filter(|&j| careers[free[j]].0 <= y && y <= careers[free[j]].1).collect();
        if open.is_empty() {
            y += 1;
            continue;
        }
        let who = free.swap_remove(open[rng.random_range(0..open.len())]);
        let end = (y + len - 1).min(careers[who].1).min(cfg.last_year());
        b.add(subject, rel, &persons[who], Span::Interval { start: y, end })?;
        y = end + 1;
        if rng.random_range(0..10) >= 7 {
            y += rng.random_range(1..=3);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stints(
    b: &mut TkgBuilder,
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    person: &str,
    rel: &str,
    kind: &str,
    pool: &[usize],
    career: (i32, i32),
) -> Result<()> {
    let mut y = if cfg.career_years == 0 {
        cfg.first_year + rng.random_range(0..(cfg.num_years as i32 / 3).max(1))
    } else {
        career.0 + rng.random_range(0..=2)
    };
    let mut prev = usize::MAX;
    while y <= career.1 {
        let mut j = pool[rng.random_range(0..pool.len())];
        if j == prev && pool.len() > 1 {
            j = pool[(pool.iter().position(|&x| x == j).unwrap() + 1) % pool.len()];
        }
        let len = rng.random_range(1..=cfg.max_stint) as i32;
        let end = (y + len - 1).min(career.1);
        b.add(person, rel, &format!("{kind}_{j}"), Span::Interval { start: y, end })?;
        prev = j;
        y = end + 1 + rng.random_range(0..=2);
    }
    Ok(())
}
