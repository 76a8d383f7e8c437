//! `tqr`: data generation, embedding pre-training, QA training, evaluation
//! and the experiment suite.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tqr::config::RunConfig;
use tqr::embed::{evaluate_link_prediction, holdout_split, train_embeddings, train_on, EmbeddingStore};
use tqr::forge::{generate_dataset, generate_unseen_combos, load_questions, save_questions, split_dataset, Mix, Question, Splits, TemplateBank};
use tqr::harness::lab::{summarize, Lab, Outcome, Regime, Trained, MAIN_KS, MAIN_VARIANTS};
use tqr::harness::{evaluate, render, write_reports};
use tqr::model::{train_qa, vocab_for, Fusion, QaModel, Variant};
use tqr::seed::derive_seed;
use tqr::supervision::AblationKind;
use tqr::synth::generate_kg;
use tqr::tkg::TemporalKg;

#[derive(Parser, Debug)]
#[command(name = "tqr", version, about = "Temporal KG question answering laboratory")]
struct Cli {
    /// `key = value` file merged over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the effective configuration here before running.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic KG generation and corruption.
    #[command(subcommand)]
    Kg(KgCmd),
    /// TComplEx pre-training and link-prediction evaluation.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Question generation.
    Qgen(QgenArgs),
    /// QA model training and evaluation.
    #[command(subcommand)]
    Qa(QaCmd),
    /// Experiment suite.
    #[command(subcommand)]
    Exp(ExpCmd),
}

#[derive(Subcommand, Debug)]
enum KgCmd {
    /// Generate the configured synthetic KG.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Drop each fact's timestamps with probability p.
    Corrupt {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum EmbedCmd {
    /// Train embeddings, optionally holding out a fraction of quadruples.
    Train {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        holdout: f64,
    },
    /// Filtered MRR / Hits on the holdout (or on all quadruples at 0).
    Eval {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        holdout: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
#[command(args_conflicts_with_subcommands = true)]
struct QgenArgs {
    #[command(subcommand)]
    unseen: Option<QgenCmd>,
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-type counts, e.g. `simple_entity=50,first_last=20`.
    #[arg(long)]
    mix: Option<String>,
}

#[derive(Subcommand, Debug)]
enum QgenCmd {
    /// The two combination types held out from training.
    Unseen {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct Inputs {
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    questions: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum QaCmd {
    /// Train on the train split, select on dev, write a checkpoint.
    Train {
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write the report as JSON.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `train`, `dev`, `test` or `all`.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ExpArgs {
    /// Comma-separated variants; defaults to the main four.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Also draw corruption / training-size curves as SVG.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand, Debug)]
enum ExpCmd {
    /// The main comparison.
    Main(ExpArgs),
    Corruption {
        #[arg(long, default_value = "qa_only")]
        regime: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8")]
        p: Vec<f64>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    Unseen {
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    Trainsize {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1")]
        fractions: Vec<f64>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    AblateTime {
        #[arg(long, value_delimiter = ',', default_value = "sampled,positional,random")]
        kind: Vec<String>,
        #[arg(long)]
        reports: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
    },
    AblateFusion {
        #[arg(long, value_delimiter = ',', default_value = "sum,cat,att")]
        mode: Vec<String>,
        #[arg(long)]
        reports: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.merge_file(p)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn override_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = p.as_deref().with_context(|| format!("no {what} path: pass --{what} or set `{what}` in the config"))?;
    if !p.exists() {
        bail!("{what} file {} does not exist", p.display());
    }
    Ok(p)
}

fn out_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("no {what} output path: pass --out or set `{what}` in the config"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = effective_config(&cli)?;
    match &cli.command {
        Command::Kg(KgCmd::Gen { preset: Some(p), .. }) => cfg.set("preset", p)?,
        Command::Qgen(QgenArgs { mix: Some(m), .. }) => cfg.mix = Some(m.parse::<Mix>()?),
        Command::Qa(QaCmd::Train { variant: Some(v), .. }) => cfg.variant = v.parse()?,
        _ => {}
    }
    cfg.validate()?;
    if let Some(p) = &cli.dump_config {
        fs::write(p, cfg.dump()).with_context(|| format!("writing {}", p.display()))?;
    }
    match cli.command {
        Command::Kg(cmd) => kg(cmd, cfg),
        Command::Embed(cmd) => embed(cmd, cfg),
        Command::Qgen(args) => qgen(args, cfg),
        Command::Qa(cmd) => qa(cmd, cfg),
        Command::Exp(cmd) => exp(cmd, cfg),
    }
}

fn kg(cmd: KgCmd, mut cfg: RunConfig) -> Result<()> {
    match cmd {
        KgCmd::Gen { out, .. } => {
            let kg = generate_kg(&cfg.synth()?)?;
            kg.save(&out)?;
            println!("{} entities, {} relations, {} facts -> {}", kg.num_entities(), kg.num_relations(), kg.facts().len(), out.display());
        }
        KgCmd::Corrupt { kg, p, out } => {
            override_path(&mut cfg.kg, &kg);
            let src = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let bad = src.corrupt_timestamps(p, cfg.seed)?;
            bad.save(&out)?;
            let dropped = bad.facts().iter().filter(|f| !f.is_timed()).count();
            println!("{dropped} of {} facts untimed -> {}", bad.facts().len(), out.display());
        }
    }
    Ok(())
}

fn embed(cmd: EmbedCmd, mut cfg: RunConfig) -> Result<()> {
    match cmd {
        EmbedCmd::Train { kg, out, holdout } => {
            override_path(&mut cfg.kg, &kg);
            override_path(&mut cfg.store, &out);
            let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let out = out_path(&cfg.store, "store")?;
            let store = if holdout > 0.0 {
                let quads = kg.expand_intervals(cfg.interval_cap)?;
                let (train, _) = holdout_split(&quads, holdout, derive_seed(cfg.seed, "holdout"))?;
                train_on(&kg, &train, &cfg.embed())?.0
            } else {
                train_embeddings(&kg, &cfg.embed())?
            };
            store.save(out)?;
            println!("store {} -> {}", store.checksum(), out.display());
        }
        EmbedCmd::Eval { kg, store, holdout, out } => {
            override_path(&mut cfg.kg, &kg);
            override_path(&mut cfg.store, &store);
            let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let store = EmbeddingStore::load(need(&cfg.store, "store")?)?;
            store.check_id_space(&kg)?;
            let quads = kg.expand_intervals(cfg.interval_cap)?;
            let known: HashSet<_> = quads.iter().copied().collect();
            let test = if holdout > 0.0 {
                holdout_split(&quads, holdout, derive_seed(cfg.seed, "holdout"))?.1
            } else {
                quads
            };
            let m = evaluate_link_prediction(&store, &test, &known)?;
            let line = format!(
                "{{\"mrr\":{},\"hits1\":{},\"hits10\":{},\"queries\":{}}}\n",
                m.mrr, m.hits1, m.hits10, m.queries
            );
            print!("{line}");
            if let Some(p) = out {
                fs::write(&p, line).with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    Ok(())
}

fn qgen(args: QgenArgs, mut cfg: RunConfig) -> Result<()> {
    let bank = TemplateBank::default();
    match args.unseen {
        Some(QgenCmd::Unseen { kg, out, limit }) => {
            override_path(&mut cfg.kg, &kg);
            let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let qs = generate_unseen_combos(&kg, &bank, derive_seed(cfg.seed, "unseen"), limit)?;
            save_questions(&out, &qs)?;
            println!("{} unseen questions -> {}", qs.len(), out.display());
        }
        None => {
            override_path(&mut cfg.kg, &args.kg);
            override_path(&mut cfg.questions, &args.out);
            let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let out = out_path(&cfg.questions, "questions")?;
            let qs = generate_dataset(&kg, &cfg.question_mix(), &bank, derive_seed(cfg.seed, "questions"))?;
            save_questions(out, &qs)?;
            println!("{} questions -> {}", qs.len(), out.display());
        }
    }
    Ok(())
}

struct Loaded {
    kg: Arc<TemporalKg>,
    store: Arc<EmbeddingStore>,
    splits: Splits,
}

fn load_inputs(cfg: &mut RunConfig, inputs: &Inputs) -> Result<Loaded> {
    override_path(&mut cfg.kg, &inputs.kg);
    override_path(&mut cfg.store, &inputs.store);
    override_path(&mut cfg.questions, &inputs.questions);
    let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
    let store = EmbeddingStore::load(need(&cfg.store, "store")?)?;
    store.check_id_space(&kg)?;
    let qs = load_questions(need(&cfg.questions, "questions")?)?;
    let splits = split_dataset(qs, (cfg.train_fraction, cfg.dev_fraction), derive_seed(cfg.seed, "split"))?;
    Ok(Loaded {
        kg: Arc::new(kg),
        store: Arc::new(store),
        splits,
    })
}

fn qa(cmd: QaCmd, mut cfg: RunConfig) -> Result<()> {
    match cmd {
        QaCmd::Train { inputs, out, .. } => {
            let l = load_inputs(&mut cfg, &inputs)?;
            override_path(&mut cfg.checkpoint, &out);
            let out = out_path(&cfg.checkpoint, "checkpoint")?;
            let mut model = QaModel::new(
                cfg.variant,
                cfg.arch(),
                vocab_for(&TemplateBank::default()),
                l.store,
                l.kg,
                cfg.model_seed(0),
            )?;
            let log = train_qa(&mut model, &l.splits.train, &l.splits.dev, &cfg.train(0))?;
            model.save(out)?;
            for (i, (loss, dev)) in log.epoch_loss.iter().zip(&log.dev_hits1).enumerate() {
                println!("epoch {:>3} loss {loss:.4} dev@1 {dev:.3}", i + 1);
            }
            println!("{} best epoch {} -> {}", cfg.variant, log.best_epoch, out.display());
        }
        QaCmd::Eval {
            inputs,
            checkpoint,
            split,
            out,
        } => {
            let l = load_inputs(&mut cfg, &inputs)?;
            override_path(&mut cfg.checkpoint, &checkpoint);
            let model = QaModel::load(need(&cfg.checkpoint, "checkpoint")?, l.store, l.kg)?;
            let qs: Vec<Question> = match split.as_str() {
                "train" => l.splits.train,
                "dev" => l.splits.dev,
                "test" => l.splits.test,
                "all" => [l.splits.train, l.splits.dev, l.splits.test].concat(),
                other => bail!("unknown split {other:?}; expected train, dev, test or all"),
            };
            let report = evaluate(&model, &qs, &MAIN_KS)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
            for g in ["all", "complex", "simple"] {
                println!("{g:<8} hits@1 {:.3}  hits@10 {:.3}", report.hits(g, 1).unwrap_or(0.0), report.hits(g, 10).unwrap_or(0.0));
            }
        }
    }
    Ok(())
}

/// Build the lab from config paths when all three are set, else synthesize.
fn lab(cfg: &RunConfig) -> Result<Lab> {
    match (&cfg.kg, &cfg.store, &cfg.questions) {
        (Some(_), Some(_), Some(_)) => {
            let kg = TemporalKg::load(need(&cfg.kg, "kg")?)?;
            let store = EmbeddingStore::load(need(&cfg.store, "store")?)?;
            let qs = load_questions(need(&cfg.questions, "questions")?)?;
            let splits = split_dataset(qs, (cfg.train_fraction, cfg.dev_fraction), derive_seed(cfg.seed, "split"))?;
            Ok(Lab::new(cfg.clone(), kg, store, splits)?)
        }
        (None, None, None) => Ok(Lab::synthesize(cfg)?),
        _ => bail!("set all of kg, store and questions to run on files, or none to synthesize"),
    }
}

fn variants(names: &[String]) -> Result<Vec<Variant>> {
    if names.is_empty() {
        return Ok(MAIN_VARIANTS.to_vec());
    }
    names.iter().map(|n| Ok(n.parse::<Variant>()?)).collect()
}

fn report(cfg: &mut RunConfig, flag: &Option<PathBuf>, plot: bool, name: &str, outcome: &Outcome) -> Result<()> {
    override_path(&mut cfg.reports, flag);
    print!("{}", render::table(&summarize(&outcome.records)));
    if let Some(dir) = &cfg.reports {
        for p in write_reports(dir, name, outcome, plot)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn exp(cmd: ExpCmd, mut cfg: RunConfig) -> Result<()> {
    let lab = lab(&cfg)?;
    let none: &[Trained] = &[];
    match cmd {
        ExpCmd::Main(a) => {
            let (out, _) = lab.run_main("main", &variants(&a.variants)?, none)?;
            report(&mut cfg, &a.reports, a.plot, "main", &out)
        }
        ExpCmd::Corruption { regime, p, exp } => {
            let regime: Regime = regime.parse()?;
            let out = lab.run_corruption(regime, &p, &variants(&exp.variants)?, none)?;
            report(&mut cfg, &exp.reports, exp.plot, &format!("corruption_{}", regime.name()), &out)
        }
        ExpCmd::Unseen { limit, exp } => {
            let (mut out, models) = lab.run_main("main", &variants(&exp.variants)?, none)?;
            let combos = generate_unseen_combos(&lab.kg, &lab.bank, derive_seed(cfg.seed, "unseen"), limit)?;
            out.extend(lab.run_unseen(&models, &combos)?);
            report(&mut cfg, &exp.reports, exp.plot, "unseen", &out)
        }
        ExpCmd::Trainsize { fractions, exp } => {
            let out = lab.run_training_size(&fractions, &variants(&exp.variants)?, none)?;
            report(&mut cfg, &exp.reports, exp.plot, "trainsize", &out)
        }
        ExpCmd::AblateTime { kind, reports, plot } => {
            let kinds = kind.iter().map(|k| k.parse::<AblationKind>()).collect::<Result<Vec<_>, _>>()?;
            let out = lab.run_ablate_time(&kinds, none)?;
            report(&mut cfg, &reports, plot, "ablate_time", &out)
        }
        ExpCmd::AblateFusion { mode, reports, plot } => {
            let modes = mode.iter().map(|m| m.parse::<Fusion>()).collect::<Result<Vec<_>, _>>()?;
            let out = lab.run_ablate_fusion(&modes, none)?;
            report(&mut cfg, &reports, plot, "ablate_fusion", &out)
        }
    }
}
