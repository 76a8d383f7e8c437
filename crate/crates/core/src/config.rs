//! Flat `key = value` run configuration shared by the CLI and the harness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::embed::EmbedConfig;
use crate::forge::Mix;
use crate::model::{Arch, TrainConfig, Variant};
use crate::seed::derive_seed;
use crate::synth::SynthConfig;
use crate::{Result, TqrError};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kg: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Synthetic KG preset: `default`, `toy`, `qa` or `smoke`.
    pub preset: String,
    pub variant: Variant,
    pub dim: usize,
    pub d_b: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub embed_epochs: usize,
    pub embed_lr: f64,
    pub embed_batch: usize,
    pub interval_cap: usize,
    pub n3_weight: f64,
    pub smooth_weight: f64,
    pub init_std: f64,
    pub num_questions: usize,
    /// Explicit per-type counts; overrides `num_questions` when set.
    pub mix: Option<Mix>,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    /// Number of model seeds each experiment averages over.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    /// Desk-scale settings that finish the main comparison on one core in
    /// well under half an hour.
    fn default() -> Self {
        RunConfig {
            kg: None,
            questions: None,
            store: None,
            checkpoint: None,
            reports: None,
            preset: "qa".into(),
            variant: Variant::TEMPOQR_HARD,
            dim: 64,
            d_b: 32,
            text_layers: 1,
            text_heads: 4,
            fusion_layers: 1,
            fusion_heads: 4,
            lr: 1e-3,
            epochs: 20,
            batch: 32,
            embed_epochs: 50,
            embed_lr: 3e-3,
            embed_batch: 32,
            interval_cap: 10,
            n3_weight: 0.0,
            smooth_weight: 1e-2,
            init_std: 0.05,
            num_questions: 6500,
            mix: None,
            train_fraction: 0.77,
            dev_fraction: 0.077,
            repeats: 3,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "kg",
    "questions",
    "store",
    "checkpoint",
    "reports",
    "preset",
    "variant",
    "dim",
    "d_b",
    "text_layers",
    "text_heads",
    "fusion_layers",
    "fusion_heads",
    "lr",
    "epochs",
    "batch",
    "embed_epochs",
    "embed_lr",
    "embed_batch",
    "interval_cap",
    "n3_weight",
    "smooth_weight",
    "init_std",
    "num_questions",
    "mix",
    "train_fraction",
    "dev_fraction",
    "repeats",
    "seed",
];

impl RunConfig {
    /// The shipped smoke fixture: tiny KG, 100 questions, seconds to run.
    pub fn smoke() -> Self {
        RunConfig {
            preset: "smoke".into(),
            dim: 8,
            d_b: 8,
            text_layers: 1,
            text_heads: 2,
            fusion_layers: 1,
            fusion_heads: 2,
            lr: 5e-3,
            epochs: 2,
            batch: 16,
            embed_epochs: 5,
            embed_lr: 0.02,
            embed_batch: 64,
            num_questions: 100,
            train_fraction: 0.7,
            dev_fraction: 0.1,
            repeats: 1,
            ..RunConfig::default()
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| TqrError::invalid(format!("config key {key}: expected {what}, got {value:?}"));
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        macro_rules! num {
            ($t:ty, $what:expr) => {
                value.parse::<$t>().map_err(|_| bad($what))?
            };
        }
        match key {
            "kg" => self.kg = path(value),
            "questions" => self.questions = path(value),
            "store" => self.store = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "reports" => self.reports = path(value),
            "preset" => {
                synth_preset(value)?;
                self.preset = value.into();
            }
            "variant" => self.variant = value.parse()?,
            "dim" => self.dim = num!(usize, "an integer"),
            "d_b" => self.d_b = num!(usize, "an integer"),
            "text_layers" => self.text_layers = num!(usize, "an integer"),
            "text_heads" => self.text_heads = num!(usize, "an integer"),
            "fusion_layers" => self.fusion_layers = num!(usize, "an integer"),
            "fusion_heads" => self.fusion_heads = num!(usize, "an integer"),
            "lr" => self.lr = num!(f64, "a number"),
            "epochs" => self.epochs = num!(usize, "an integer"),
            "batch" => self.batch = num!(usize, "an integer"),
            "embed_epochs" => self.embed_epochs = num!(usize, "an integer"),
            "embed_lr" => self.embed_lr = num!(f64, "a number"),
            "embed_batch" => self.embed_batch = num!(usize, "an integer"),
            "interval_cap" => self.interval_cap = num!(usize, "an integer"),
            "n3_weight" => self.n3_weight = num!(f64, "a number"),
            "smooth_weight" => self.smooth_weight = num!(f64, "a number"),
            "init_std" => self.init_std = num!(f64, "a number"),
            "num_questions" => self.num_questions = num!(usize, "an integer"),
            "mix" => self.mix = if value.is_empty() { None } else { Some(value.parse()?) },
            "train_fraction" => self.train_fraction = num!(f64, "a number"),
            "dev_fraction" => self.dev_fraction = num!(f64, "a number"),
            "repeats" => self.repeats = num!(usize, "an integer"),
            "seed" => self.seed = num!(u64, "an integer"),
            _ => {
                return Err(TqrError::UnknownName {
                    kind: "config key",
                    name: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Merge `key = value` lines over `self`. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| TqrError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| TqrError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TqrError::io(path, e))?;
        self.merge_text(&text)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "kg" => p(&self.kg),
            "questions" => p(&self.questions),
            "store" => p(&self.store),
            "checkpoint" => p(&self.checkpoint),
            "reports" => p(&self.reports),
            "preset" => self.preset.clone(),
            "variant" => self.variant.to_string(),
            "dim" => self.dim.to_string(),
            "d_b" => self.d_b.to_string(),
            "text_layers" => self.text_layers.to_string(),
            "text_heads" => self.text_heads.to_string(),
            "fusion_layers" => self.fusion_layers.to_string(),
            "fusion_heads" => self.fusion_heads.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "embed_epochs" => self.embed_epochs.to_string(),
            "embed_lr" => self.embed_lr.to_string(),
            "embed_batch" => self.embed_batch.to_string(),
            "interval_cap" => self.interval_cap.to_string(),
            "n3_weight" => self.n3_weight.to_string(),
            "smooth_weight" => self.smooth_weight.to_string(),
            "init_std" => self.init_std.to_string(),
            "num_questions" => self.num_questions.to_string(),
            "mix" => self.mix.as_ref().map(|m| m.to_string()).unwrap_or_default(),
            "train_fraction" => self.train_fraction.to_string(),
            "dev_fraction" => self.dev_fraction.to_string(),
            "repeats" => self.repeats.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Every key in a fixed order; parsing the dump reproduces `self`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(TqrError::invalid(format!("dim must be even and positive, got {}", self.dim)));
        }
        if self.batch == 0 || self.embed_batch == 0 {
            return Err(TqrError::invalid("batch sizes must be positive"));
        }
        if self.interval_cap == 0 {
            return Err(TqrError::invalid("interval_cap must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(TqrError::invalid("repeats must be at least 1"));
        }
        self.variant.validate()?;
        synth_preset(&self.preset)?;
        Ok(())
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(synth_preset(&self.preset)?.with_seed(derive_seed(self.seed, "kg")))
    }

    pub fn embed(&self) -> EmbedConfig {
        EmbedConfig {
            dim: self.dim,
            epochs: self.embed_epochs,
            lr: self.embed_lr,
            batch_size: self.embed_batch,
            n3_weight: self.n3_weight,
            smooth_weight: self.smooth_weight,
            interval_cap: self.interval_cap,
            init_std: self.init_std,
            seed: derive_seed(self.seed, "embed"),
        }
    }

    pub fn arch(&self) -> Arch {
        Arch {
            d_b: self.d_b,
            text_layers: self.text_layers,
            text_heads: self.text_heads,
            fusion_layers: self.fusion_layers,
            fusion_heads: self.fusion_heads,
        }
    }

    /// Training settings for repeat `i`.
    pub fn train(&self, i: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.model_seed(i),
        }
    }

    pub fn model_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, &format!("qa/{i}"))
    }

    pub fn question_mix(&self) -> Mix {
        self.mix.clone().unwrap_or_else(|| Mix::proportional(self.num_questions))
    }
}

pub fn synth_preset(name: &str) -> Result<SynthConfig> {
    match name {
        "default" => Ok(SynthConfig::default()),
        "toy" => Ok(SynthConfig::toy()),
        "qa" => Ok(SynthConfig::qa()),
        "smoke" => Ok(SynthConfig::smoke()),
        _ => Err(TqrError::UnknownName {
            kind: "KG preset",
            name: name.into(),
        }),
    }
}
