use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{AnnKind, QType, Question};
use crate::seed::rng_for;
use crate::{Result, TqrError};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Question>,
    pub dev: Vec<Question>,
    pub test: Vec<Question>,
}

/// Split by signature groups so that no `(qtype, annotation ids)` signature
/// lands in two splits. `fractions` are train and dev shares; test gets the
/// rest.
pub fn split_dataset(questions: Vec<Question>, fractions: (f64, f64), seed: u64) -> Result<Splits> {
    let (ftrain, fdev) = fractions;
    if !(0.0..=1.0).contains(&ftrain) || !(0.0..=1.0).contains(&fdev) || ftrain + fdev > 1.0 + 1e-12 {
        return Err(TqrError::invalid(format!("split fractions {ftrain} + {fdev} must lie in [0, 1]")));
    }
    let mut order: Vec<(QType, Vec<(AnnKind, u32)>)> = Vec::new();
    let mut groups: HashMap<(QType, Vec<(AnnKind, u32)>), Vec<Question>> = HashMap::new();
    for q in questions {
        let sig = q.signature();
        let g = groups.entry(sig.clone()).or_insert_with(|| {
            order.push(sig);
            Vec::new()
        });
        g.push(q);
    }
    order.shuffle(&mut rng_for(seed, "split"));
    let total: usize = groups.values().map(Vec::len).sum();
    let want_train = (ftrain * total as f64).round() as usize;
    let want_dev = (fdev * total as f64).round() as usize;
    let mut s = Splits::default();
    for sig in order {
        let g = groups.remove(&sig).expect("group");
        let dst = if s.train.len() < want_train {
            &mut s.train
        } else if s.dev.len() < want_dev {
            &mut s.dev
        } else {
            &mut s.test
        };
        dst.extend(g);
    }
    Ok(s)
}
