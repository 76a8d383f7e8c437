//! Experiment suite over one dataset: main comparison, corruption, unseen
//! types, training size and the time/fusion ablations.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use crate::config::RunConfig;
use crate::embed::{train_embeddings, EmbeddingStore};
use crate::forge::{generate_dataset, split_dataset, Question, Splits, TemplateBank};
use crate::model::{train_qa, vocab_for, Base, Fusion, QaModel, Supervision, TrainReport, Variant};
use crate::seed::{derive_seed, rng_for};
use crate::supervision::AblationKind;
use crate::synth::generate_kg;
use crate::tkg::TemporalKg;
use crate::{Result, TqrError};

pub const MAIN_KS: [usize; 2] = [1, 10];
pub const UNSEEN_KS: [usize; 4] = [1, 2, 5, 10];

/// Baseline and TempoQR variants compared in the main experiment.
pub const MAIN_VARIANTS: [Variant; 4] = [Variant::CRONKGQA, Variant::ENTITYQR, Variant::TEMPOQR_SOFT, Variant::TEMPOQR_HARD];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    QaOnly,
    PretrainAndQa,
}

impl std::str::FromStr for Regime {
    type Err = TqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa_only" => Ok(Regime::QaOnly),
            "pretrain_and_qa" => Ok(Regime::PretrainAndQa),
            _ => Err(TqrError::UnknownName {
                kind: "corruption regime",
                name: s.into(),
            }),
        }
    }
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::QaOnly => "qa_only",
            Regime::PretrainAndQa => "pretrain_and_qa",
        }
    }
}

/// One evaluated (experiment, setting, variant, repeat) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub setting: String,
    /// Numeric x for curves (corruption p, training fraction).
    pub x: Option<f64>,
    pub variant: String,
    pub repeat: usize,
    pub report: EvalReport,
}

/// Wall-clock cost of a cell; kept apart from records so reports stay
/// byte-identical across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub experiment: String,
    pub setting: String,
    pub variant: String,
    pub repeat: usize,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub records: Vec<Record>,
    pub timings: Vec<Timing>,
}

impl Outcome {
    pub fn extend(&mut self, other: Outcome) {
        self.records.extend(other.records);
        self.timings.extend(other.timings);
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub variant: Variant,
    pub repeat: usize,
    pub model: QaModel,
    pub log: TrainReport,
    pub train_seconds: f64,
}

pub struct Lab {
    pub config: RunConfig,
    pub kg: Arc<TemporalKg>,
    pub store: Arc<EmbeddingStore>,
    pub splits: Splits,
    pub bank: TemplateBank,
}

impl Lab {
    /// Generate the KG, pre-train embeddings and build the question splits.
    pub fn synthesize(config: &RunConfig) -> Result<Lab> {
        config.validate()?;
        let kg = generate_kg(&config.synth()?)?;
        let mut store = train_embeddings(&kg, &config.embed())?;
        store.freeze();
        let bank = TemplateBank::default();
        let questions = generate_dataset(&kg, &config.question_mix(), &bank, derive_seed(config.seed, "questions"))?;
        let splits = split_dataset(
            questions,
            (config.train_fraction, config.dev_fraction),
            derive_seed(config.seed, "split"),
        )?;
        Lab::new(config.clone(), kg, store, splits)
    }

    pub fn new(config: RunConfig, kg: TemporalKg, store: EmbeddingStore, splits: Splits) -> Result<Lab> {
        store.check_id_space(&kg)?;
        if splits.train.is_empty() || splits.test.is_empty() {
            return Err(TqrError::invalid("need non-empty train and test splits"));
        }
        Ok(Lab {
            config,
            kg: Arc::new(kg),
            store: Arc::new(store),
            splits,
            bank: TemplateBank::default(),
        })
    }

    pub fn train_model(
        &self,
        variant: Variant,
        repeat: usize,
        kg: &Arc<TemporalKg>,
        store: &Arc<EmbeddingStore>,
        train: &[Question],
    ) -> Result<Trained> {
        let c = &self.config;
        let start = Instant::now();
        let mut model = QaModel::new(
            variant,
            c.arch(),
            vocab_for(&self.bank),
            Arc::clone(store),
            Arc::clone(kg),
            c.model_seed(repeat),
        )?;
        let log = train_qa(&mut model, train, &self.splits.dev, &c.train(repeat))?;
        Ok(Trained {
            variant,
            repeat,
            model,
            log,
            train_seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn record(&self, experiment: &str, setting: &str, x: Option<f64>, t: &Trained, qs: &[Question], ks: &[usize], out: &mut Outcome) -> Result<()> {
        let start = Instant::now();
        let report = evaluate(&t.model, qs, ks)?;
        out.timings.push(Timing {
            experiment: experiment.into(),
            setting: setting.into(),
            variant: t.variant.to_string(),
            repeat: t.repeat,
            train_seconds: t.train_seconds,
            eval_seconds: start.elapsed().as_secs_f64(),
        });
        out.records.push(Record {
            experiment: experiment.into(),
            setting: setting.into(),
            x,
            variant: t.variant.to_string(),
            repeat: t.repeat,
            report,
        });
        Ok(())
    }

    fn reuse<'a>(base: &'a [Trained], v: Variant, repeat: usize) -> Option<&'a Trained> {
        base.iter().find(|t| t.variant == v && t.repeat == repeat)
    }

    /// Train and evaluate every variant for every repeat on the test split.
    pub fn run_main(&self, experiment: &str, variants: &[Variant], base: &[Trained]) -> Result<(Outcome, Vec<Trained>)> {
        let mut out = Outcome::default();
        let mut models = Vec::new();
        for repeat in 0..self.config.repeats {
            for &v in variants {
                let t = match Lab::reuse(base, v, repeat) {
                    Some(t) => t.clone(),
                    None => self.train_model(v, repeat, &self.kg, &self.store, &self.splits.train)?,
                };
                self.record(experiment, "test", None, &t, &self.splits.test, &MAIN_KS, &mut out)?;
                models.push(t);
            }
        }
        Ok((out, models))
    }

    /// Corruption study. Under `qa_only` only retrieval variants see the
    /// corrupted KG and are retrained; the others keep their clean models.
    pub fn run_corruption(&self, regime: Regime, ps: &[f64], variants: &[Variant], base: &[Trained]) -> Result<Outcome> {
        if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(TqrError::invalid(format!("corruption probability {p} outside [0, 1]")));
        }
        let experiment = format!("corruption_{}", regime.name());
        let mut out = Outcome::default();
        let mut clean: Vec<Trained> = base.to_vec();
        for repeat in 0..self.config.repeats {
            for &v in variants {
                if Lab::reuse(&clean, v, repeat).is_none() {
                    let t = self.train_model(v, repeat, &self.kg, &self.store, &self.splits.train)?;
                    clean.push(t);
                }
            }
            for &p in ps {
                let setting = format!("p={p}");
                let kg_p = Arc::new(self.kg.corrupt_timestamps(p, derive_seed(self.config.model_seed(repeat), &format!("corrupt/{p}")))?);
                let store_p = match regime {
                    Regime::PretrainAndQa if p > 0.0 => {
                        let mut s = train_embeddings(&kg_p, &self.config.embed())?;
                        s.freeze();
                        Some(Arc::new(s))
                    }
                    _ => None,
                };
                for &v in variants {
                    let retrain = p > 0.0 && (regime == Regime::PretrainAndQa || v.uses_retrieval());
                    let t = if retrain {
                        let store = store_p.as_ref().unwrap_or(&self.store);
                        self.train_model(v, repeat, &kg_p, store, &self.splits.train)?
                    } else {
                        // Same weights; evaluation still runs against the corrupted KG.
                        let mut t = Lab::reuse(&clean, v, repeat).expect("clean model trained above").clone();
                        t.model.set_kg(Arc::clone(&kg_p))?;
                        t
                    };
                    self.record(&experiment, &setting, Some(p), &t, &self.splits.test, &MAIN_KS, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    /// Evaluate trained models on combination types never seen in training.
    pub fn run_unseen(&self, models: &[Trained], combos: &[Question]) -> Result<Outcome> {
        let seen: HashSet<_> = self.splits.train.iter().map(|q| q.signature()).collect();
        if combos.iter().any(|q| seen.contains(&q.signature())) {
            return Err(TqrError::invalid("unseen set overlaps training signatures"));
        }
        if combos.is_empty() {
            return Err(TqrError::invalid("no unseen questions to evaluate"));
        }
        let mut out = Outcome::default();
        for t in models {
            self.record("unseen", "combos", None, t, combos, &UNSEEN_KS, &mut out)?;
        }
        Ok(out)
    }

    /// Train on seeded subsamples of the training split.
    pub fn run_training_size(&self, fractions: &[f64], variants: &[Variant], base: &[Trained]) -> Result<Outcome> {
        if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(TqrError::invalid(format!("training fraction {f} outside (0, 1]")));
        }
        let mut out = Outcome::default();
        for repeat in 0..self.config.repeats {
            for &f in fractions {
                let subset = self.subsample(f, repeat);
                for &v in variants {
                    let t = match Lab::reuse(base, v, repeat).filter(|_| f >= 1.0) {
                        Some(t) => t.clone(),
                        None => self.train_model(v, repeat, &self.kg, &self.store, &subset)?,
                    };
                    self.record("trainsize", &format!("fraction={f}"), Some(f), &t, &self.splits.test, &MAIN_KS, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    /// Order-preserving seeded subsample; the full split at fraction 1.
    pub fn subsample(&self, fraction: f64, repeat: usize) -> Vec<Question> {
        let train = &self.splits.train;
        if fraction >= 1.0 {
            return train.clone();
        }
        let n = ((fraction * train.len() as f64).ceil() as usize).clamp(1, train.len());
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut rng_for(self.config.model_seed(repeat), &format!("trainsize/{fraction}")));
        let mut keep = idx[..n].to_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| train[i].clone()).collect()
    }

    /// TempoQR-Hard against alternative time embeddings.
    pub fn run_ablate_time(&self, kinds: &[AblationKind], base: &[Trained]) -> Result<Outcome> {
        let mut variants = vec![Variant::TEMPOQR_HARD];
        variants.extend(kinds.iter().map(|&k| Variant::new(Base::TempoQr, Supervision::Ablation(k))));
        Ok(self.run_main("ablate_time", &variants, base)?.0)
    }

    /// TempoQR-Hard with sum, concatenation or attention fusion.
    pub fn run_ablate_fusion(&self, modes: &[Fusion], base: &[Trained]) -> Result<Outcome> {
        let mut variants = vec![Variant::TEMPOQR_HARD];
        for &m in modes {
            let v = Variant {
                fusion: m,
                ..Variant::TEMPOQR_HARD
            };
            if !variants.contains(&v) {
                variants.push(v);
            }
        }
        Ok(self.run_main("ablate_fusion", &variants, base)?.0)
    }
}

/// Mean over repeats for one (experiment, setting, variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub setting: String,
    pub x: Option<f64>,
    pub variant: String,
    pub repeats: usize,
    /// `<group>@<k>` to mean Hits@k, e.g. `complex@1`.
    pub means: BTreeMap<String, f64>,
}

impl Summary {
    pub fn mean(&self, group: &str, k: usize) -> Option<f64> {
        self.means.get(&format!("{group}@{k}")).copied()
    }
}

/// Group records in first-appearance order and average every cell.
pub fn summarize(records: &[Record]) -> Vec<Summary> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, String, String), (Option<f64>, usize, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in records {
        let key = (r.experiment.clone(), r.setting.clone(), r.variant.clone());
        if !acc.contains_key(&key) {
            order.push(key.clone());
        }
        let e = acc.entry(key).or_insert_with(|| (r.x, 0, BTreeMap::new()));
        e.1 += 1;
        for (g, c) in &r.report.cells {
            for (k, h) in r.report.ks.iter().zip(&c.hits) {
                *e.2.entry(format!("{g}@{k}")).or_default() += h;
            }
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (x, n, sums) = acc.remove(&key).expect("key recorded");
            Summary {
                experiment: key.0,
                setting: key.1,
                variant: key.2,
                x,
                repeats: n,
                means: sums.into_iter().map(|(k, v)| (k, v / n as f64)).collect(),
            }
        })
        .collect()
}
