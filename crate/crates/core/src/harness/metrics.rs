//! Hits@k and the grouped evaluation report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::hex;
use crate::forge::{to_jsonl, Question};
use crate::model::{rank, QaModel};
use crate::{Result, TqrError};

/// 1 iff any gold id is among the first `k` of `ranked`.
pub fn hits_at_k(ranked: &[usize], gold: &[usize], k: usize) -> Result<bool> {
    if ranked.is_empty() {
        return Err(TqrError::invalid("empty ranking"));
    }
    if k == 0 {
        return Err(TqrError::invalid("k must be at least 1"));
    }
    Ok(ranked.iter().take(k).any(|r| gold.contains(r)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub count: usize,
    /// One value per entry of the report's `ks`.
    pub hits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub ks: Vec<usize>,
    /// Keyed by group: `all`, `complex`, `simple`, `entity`, `time`, each
    /// question type, and `<type>:<answer kind>`.
    pub cells: BTreeMap<String, Cell>,
}

impl EvalReport {
    pub fn hits(&self, group: &str, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        self.cells.get(group).map(|c| c.hits[i])
    }

    pub fn count(&self, group: &str) -> usize {
        self.cells.get(group).map_or(0, |c| c.count)
    }
}

/// Short content hash of a question list.
pub fn fingerprint(questions: &[Question]) -> String {
    let digest = Sha256::digest(to_jsonl(questions).as_bytes());
    hex(&digest[..8])
}

/// Per-question hit vectors in input order.
pub fn hit_table(model: &QaModel, questions: &[Question], ks: &[usize]) -> Result<Vec<Vec<bool>>> {
    let one = |q: &Question| -> Result<Vec<bool>> {
        let p = model.prepare(q)?;
        let ranked = rank(&model.scores_of(&p)?);
        ks.iter().map(|&k| hits_at_k(&ranked, &p.gold, k)).collect()
    };
    let threads = threads().min(questions.len().max(1));
    if threads <= 1 {
        return questions.iter().map(one).collect();
    }
    let chunk = questions.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = questions
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(questions.len());
        for h in handles {
            out.extend(h.join().expect("evaluation thread panicked")?);
        }
        Ok(out)
    })
}

/// `TQR_THREADS` if set, else the available parallelism.
pub fn threads() -> usize {
    std::env::var("TQR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn evaluate(model: &QaModel, questions: &[Question], ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(TqrError::invalid("ks must be non-empty and positive"));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let table = hit_table(model, questions, &ks)?;
    let mut sums: BTreeMap<String, (usize, Vec<usize>)> = BTreeMap::new();
    for (q, hits) in questions.iter().zip(&table) {
        let group = if q.qtype.is_complex() { "complex" } else { "simple" };
        let kind = q.answer_kind.name();
        for g in ["all".to_string(), group.into(), kind.into(), q.qtype.name().into(), format!("{}:{kind}", q.qtype)] {
            let e = sums.entry(g).or_insert_with(|| (0, vec![0; ks.len()]));
            e.0 += 1;
            for (acc, &h) in e.1.iter_mut().zip(hits) {
                *acc += h as usize;
            }
        }
    }
    let cells = sums
        .into_iter()
        .map(|(g, (n, h))| {
            let hits = h.iter().map(|&x| x as f64 / n as f64).collect();
            (g, Cell { count: n, hits })
        })
        .collect();
    Ok(EvalReport {
        variant: model.variant().to_string(),
        dataset: fingerprint(questions),
        seed: model.seed(),
        ks,
        cells,
    })
}
