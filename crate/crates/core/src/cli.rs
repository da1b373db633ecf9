//! The `maskwise` command line.
//!
//! Every option can come from a flag or from the `--config` INI file, in
//! the section named after the subcommand (`[model]` for architecture keys).
//! Flags win. Exit status: 0 success, 1 usage or configuration error,
//! 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::ablation::{run_ablation, Experiment, ExperimentConfig, Suite};
use crate::config::Ini;
use crate::data::{self, FilterConfig};
use crate::error::Error;
use crate::eval::{evaluate_classification, evaluate_mc, predict, read_cls_items, read_mc_items, TemplateOptions};
use crate::manifest::{root_seed, RunManifest};
use crate::model::{ClassSample, ModelCheckpoint, ModelConfig};
use crate::objective::{self, frame, make_mlm_sample, ObjectiveMixConfig};
use crate::report;
use crate::templating::{classification_verbalizers, ClassificationMode};
use crate::tokenizer::{build_vocab, Scheme, Vocabulary};
use crate::train::{self, MetricsLog, Schedule, Stage, TrainConfig};
use crate::verbalizer::VerbalizerSet;

#[derive(Parser, Debug)]
#[command(name = "maskwise", version, about = "Generative classification with masked language models")]
struct Cli {
    /// INI configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Root seed (falls back to MASKWISE_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from a text corpus (one document per line).
    BuildVocab(BuildVocabArgs),
    /// Filter, exclude held-out tasks, downsample, and write the objective mix.
    Prepare(PrepareArgs),
    /// MLM pretraining on a text corpus.
    Pretrain(PretrainArgs),
    /// Masked instruction tuning on a mixed-objective shard.
    Instruct(InstructArgs),
    /// Single-task fine-tuning through the MLM head or a classification head.
    Finetune(FinetuneArgs),
    /// Verbalizer-constrained prediction for one prompt.
    Predict(PredictArgs),
    /// Evaluate on a multiple-choice or classification task file.
    Eval(EvalArgs),
    /// Objective-mix or backbone ablation on synthetic tasks.
    Ablate(AblateArgs),
    /// Render tables and plots from run directories.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    cap: Option<usize>,
    /// Comma-separated dataset tags to exclude.
    #[arg(long)]
    heldout: Option<String>,
    #[arg(long)]
    atp_fraction: Option<f64>,
    #[arg(long)]
    filler: Option<String>,
    #[arg(long)]
    mlm_rate: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Text corpus, one document per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    mlm_rate: Option<f64>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct InstructArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    shard: Option<PathBuf>,
    #[arg(long)]
    eval_shard: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// ATP-only shard, for the MLM head.
    #[arg(long)]
    shard: Option<PathBuf>,
    /// `mlm` (default) or `cls`.
    #[arg(long)]
    head: Option<String>,
    /// Classification task file `{text, label}`, for the `cls` head.
    #[arg(long)]
    task: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Comma-separated verbalizers.
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    /// `mc` or `cls`.
    #[arg(long)]
    format: Option<String>,
    /// Classification mode: `direct` or `letters`.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated class names; defaults to the labels in the task file.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    instructions: Option<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    suite: Option<String>,
    /// Number of seeds, counted up from the root seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    pretrain_sentences: Option<usize>,
    #[arg(long)]
    per_family: Option<usize>,
    #[arg(long)]
    eval_items: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories holding report.json or ablation.json.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Resolves options from flag, then config file, then default.
struct Settings {
    ini: Ini,
    section: &'static str,
    snapshot: BTreeMap<String, String>,
}

impl Settings {
    fn value<T>(&mut self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        self.value_in(self.section, flag, key)
    }

    fn value_in<T>(&mut self, section: &str, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.ini.parsed(section, key)?,
        };
        if let Some(v) = &v {
            self.snapshot.insert(format!("{section}.{key}"), v.to_string());
        }
        Ok(v)
    }

    fn or<T>(&mut self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = self.value(flag, key)?.unwrap_or(default);
        self.snapshot.insert(format!("{}.{key}", self.section), v.to_string());
        Ok(v)
    }

    fn required<T>(&mut self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        self.value(flag, key)?
            .ok_or_else(|| Failure::Usage(format!("missing required option --{}", key.replace('_', "-"))))
    }

    fn path(&mut self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        let s: String = self.required(flag.map(|p| p.display().to_string()), key)?;
        Ok(PathBuf::from(s))
    }

    fn opt_path(&mut self, flag: Option<PathBuf>, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.value(flag.map(|p| p.display().to_string()), key)?.map(PathBuf::from))
    }

    fn train_config(&mut self, stage: Stage, flags: TrainFlags, seed: u64) -> CliResult<TrainConfig> {
        let d = TrainConfig::new(stage);
        let schedule: String = self.or(flags.schedule, "schedule", "linear_warmup_decay".into())?;
        let cfg = TrainConfig {
            stage,
            epochs: self.or(flags.epochs, "epochs", d.epochs)?,
            learning_rate: self.or(flags.learning_rate, "learning_rate", d.learning_rate)?,
            batch_size: self.or(flags.batch_size, "batch_size", d.batch_size)?,
            weight_decay: self.or(flags.weight_decay, "weight_decay", d.weight_decay)?,
            beta1: self.or(flags.beta1, "beta1", d.beta1)?,
            beta2: self.or(flags.beta2, "beta2", d.beta2)?,
            epsilon: self.or(flags.epsilon, "epsilon", d.epsilon)?,
            schedule: schedule.parse::<Schedule>()?,
            warmup_fraction: self.or(flags.warmup_fraction, "warmup_fraction", d.warmup_fraction)?,
            seed,
            checkpoint_every: self.or(flags.checkpoint_every, "checkpoint_every", d.checkpoint_every)?,
            grad_clip: self.or(flags.grad_clip, "grad_clip", d.grad_clip)?,
            stop_after: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn new(out: &Path, command: &str, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(Error::io(out, e)))?;
        Ok(Run {
            out: out.to_path_buf(),
            manifest: RunManifest::new(command, BTreeMap::new(), seed),
        })
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        Ok(self.manifest.add_input(path)?)
    }

    fn write(&mut self, name: &str, body: &[u8]) -> CliResult<()> {
        let p = self.out.join(name);
        std::fs::write(&p, body).map_err(|e| Failure::Runtime(Error::io(&p, e)))?;
        self.manifest.add_output(name);
        Ok(())
    }

    fn finish(mut self, settings: Settings) -> CliResult<()> {
        self.manifest.config = settings.snapshot;
        Ok(self.manifest.write(&self.out)?)
    }
}

fn load_vocab(path: &Path, run: &mut Run) -> CliResult<Vocabulary> {
    run.input(path)?;
    Ok(Vocabulary::load(path)?)
}

fn load_ckpt(path: &Path, run: &mut Run) -> CliResult<ModelCheckpoint> {
    run.input(path)?;
    Ok(ModelCheckpoint::load(path)?)
}

fn write_training(run: &mut Run, ck: &ModelCheckpoint, log: &MetricsLog) -> CliResult<()> {
    run.write("model.mwckpt", &ck.to_bytes())?;
    run.write("metrics.jsonl", log.to_jsonl().as_bytes())
}

fn periodic_hook(out: PathBuf) -> impl FnMut(&ModelCheckpoint) -> crate::Result<()> {
    move |ck: &ModelCheckpoint| {
        let step = ck.training_state.as_ref().map_or(0, |s| s.step);
        ck.save(&out.join(format!("checkpoint-{step:06}.mwckpt")))
    }
}

fn build_vocab_cmd(a: BuildVocabArgs, mut s: Settings, run: &mut Run) -> CliResult<Settings> {
    let corpus = s.path(a.corpus, "corpus")?;
    let size = s.or(a.size, "size", 512)?;
    let scheme: Scheme = s.or(a.scheme, "scheme", "whitespace".to_string())?.parse()?;
    run.input(&corpus)?;
    let text = std::fs::read_to_string(&corpus).map_err(|e| Failure::Runtime(Error::io(&corpus, e)))?;
    let docs: Vec<&str> = text.lines().collect();
    let vocab = build_vocab(&docs, size, scheme)?;
    run.write("vocab.mwvocab", vocab.to_file_string().as_bytes())?;
    Ok(s)
}

fn prepare_cmd(a: PrepareArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let input = s.path(a.input, "in")?;
    let vocab = load_vocab(&s.path(a.vocab, "vocab")?, run)?;
    let mut filter = FilterConfig {
        seed,
        ..FilterConfig::default()
    };
    filter.per_dataset_cap = s.or(a.cap, "cap", filter.per_dataset_cap)?;
    if let Some(h) = s.value(a.heldout, "heldout")? {
        filter.heldout_datasets = list(&h).into_iter().collect();
    }
    let d = ObjectiveMixConfig::default();
    let mix_cfg = ObjectiveMixConfig {
        atp_fraction: s.or(a.atp_fraction, "atp_fraction", d.atp_fraction)?,
        filler: s.or(a.filler, "filler", d.filler.name().to_string())?.parse()?,
        mlm_rate: s.or(a.mlm_rate, "mlm_rate", d.mlm_rate)?,
        seed,
    };
    mix_cfg.validate()?;
    run.input(&input)?;
    let (records, stats) = data::prepare(data::ingest(&input)?, &vocab, &filter)?;
    let samples = objective::mix(&records, &mix_cfg, &vocab)?;
    run.write("prepared.jsonl", data::manifest_to_string(&records).as_bytes())?;
    run.write("train.mwshard", &objective::shard_to_bytes(&samples))?;
    let mut summary = serde_json::to_value(&stats).expect("stats serialize");
    summary["objective_counts"] = serde_json::to_value(objective::MixCounts::of(&samples)).expect("counts serialize");
    run.write("prepare_stats.json", (serde_json::to_string_pretty(&summary).unwrap() + "\n").as_bytes())?;
    Ok(s)
}

fn model_config(s: &mut Settings, f: ModelFlags, vocab_size: usize) -> CliResult<ModelConfig> {
    let d = ModelConfig::toy(vocab_size);
    let cfg = ModelConfig {
        vocab_size,
        hidden_dim: s.value_in("model", f.hidden_dim, "hidden_dim")?.unwrap_or(d.hidden_dim),
        num_layers: s.value_in("model", f.num_layers, "num_layers")?.unwrap_or(d.num_layers),
        num_heads: s.value_in("model", f.num_heads, "num_heads")?.unwrap_or(d.num_heads),
        ffn_dim: s.value_in("model", f.ffn_dim, "ffn_dim")?.unwrap_or(d.ffn_dim),
        max_seq_len: s.value_in("model", f.max_seq_len, "max_seq_len")?.unwrap_or(d.max_seq_len),
        dropout: s.value_in("model", f.dropout, "dropout")?.unwrap_or(d.dropout),
        tie_mlm_head: true,
        num_classes: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn pretrain_cmd(a: PretrainArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let vocab = load_vocab(&s.path(a.vocab, "vocab")?, run)?;
    let corpus = s.path(a.corpus, "corpus")?;
    let init = s.opt_path(a.init, "init")?;
    let mlm_rate = s.or(a.mlm_rate, "mlm_rate", ObjectiveMixConfig::default().mlm_rate)?;
    let mcfg = model_config(&mut s, a.model, vocab.len())?;
    let cfg = s.train_config(Stage::Pretrain, a.train, seed)?;
    let ck = match init {
        Some(p) => load_ckpt(&p, run)?,
        None => ModelCheckpoint::new(mcfg, seed)?,
    };
    run.input(&corpus)?;
    let text = std::fs::read_to_string(&corpus).map_err(|e| Failure::Runtime(Error::io(&corpus, e)))?;
    let masking = ObjectiveMixConfig {
        mlm_rate,
        seed,
        filler: objective::Objective::Mlm,
        ..ObjectiveMixConfig::default()
    };
    let (docs, short): (Vec<&str>, Vec<&str>) = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .partition(|l| vocab.encode(l).len() >= 2);
    s.snapshot.insert("pretrain.skipped_short_documents".into(), short.len().to_string());
    let samples = docs
        .iter()
        .enumerate()
        .map(|(i, l)| make_mlm_sample(l, &masking, &vocab, i as u64))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut ck = ck;
    ck.provenance.corpus = corpus.display().to_string();
    let mut hook = periodic_hook(run.out.clone());
    let out = train::train(ck, &samples, &[], &cfg, Some(&mut hook))?;
    write_training(run, &out.checkpoint, &out.log)?;
    Ok(s)
}

fn instruct_cmd(a: InstructArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let vocab = load_vocab(&s.path(a.vocab, "vocab")?, run)?;
    let ck = load_ckpt(&s.path(a.ckpt, "ckpt")?, run)?;
    let shard = s.path(a.shard, "shard")?;
    let eval_shard = s.opt_path(a.eval_shard, "eval_shard")?;
    let cfg = s.train_config(Stage::Instruct, a.train, seed)?;
    run.input(&shard)?;
    let data = objective::read_shard(&shard, &vocab)?;
    let eval = match eval_shard {
        Some(p) => {
            run.input(&p)?;
            objective::read_shard(&p, &vocab)?
        }
        None => Vec::new(),
    };
    let mut hook = periodic_hook(run.out.clone());
    let out = train::train(ck, &data, &eval, &cfg, Some(&mut hook))?;
    write_training(run, &out.checkpoint, &out.log)?;
    Ok(s)
}

fn finetune_cmd(a: FinetuneArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let vocab = load_vocab(&s.path(a.vocab, "vocab")?, run)?;
    let mut ck = load_ckpt(&s.path(a.ckpt, "ckpt")?, run)?;
    let head = s.or(a.head, "head", "mlm".to_string())?;
    match head.as_str() {
        "mlm" => {
            let shard = s.path(a.shard, "shard")?;
            let cfg = s.train_config(Stage::FinetuneMlm, a.train, seed)?;
            run.input(&shard)?;
            let data = objective::read_shard(&shard, &vocab)?;
            let mut hook = periodic_hook(run.out.clone());
            let out = train::train(ck, &data, &[], &cfg, Some(&mut hook))?;
            write_training(run, &out.checkpoint, &out.log)?;
        }
        "cls" => {
            let task = s.path(a.task, "task")?;
            let cfg = s.train_config(Stage::FinetuneCls, a.train, seed)?;
            run.input(&task)?;
            let items = read_cls_items(&task)?;
            let mut classes: Vec<String> = items.iter().map(|i| i.label.clone()).collect();
            classes.sort();
            classes.dedup();
            let data: Vec<ClassSample> = items
                .iter()
                .map(|it| {
                    let ids = frame(&it.text, &vocab);
                    ClassSample {
                        attention_mask: vec![true; ids.len()],
                        input_ids: ids,
                        label: classes.binary_search(&it.label).expect("label collected above"),
                    }
                })
                .collect();
            ck.params.attach_classifier(&mut ck.config, classes.len(), seed);
            ck.provenance.notes.insert("classes".into(), classes.join(","));
            let mut hook = periodic_hook(run.out.clone());
            let out = train::train_classifier(ck, &data, &[], &cfg, Some(&mut hook))?;
            write_training(run, &out.checkpoint, &out.log)?;
        }
        other => return Err(Failure::Usage(format!("unknown head {other:?}; expected mlm or cls"))),
    }
    Ok(s)
}

fn predict_cmd(a: PredictArgs, mut s: Settings) -> CliResult<()> {
    let vocab = Vocabulary::load(&s.path(a.vocab, "vocab")?)?;
    let ck = ModelCheckpoint::load(&s.path(a.ckpt, "ckpt")?)?;
    let prompt_path = s.path(a.prompt_file, "prompt_file")?;
    let labels: String = s.or(a.labels, "labels", "A,B,C,D".into())?;
    let prompt = std::fs::read_to_string(&prompt_path).map_err(|e| Failure::Runtime(Error::io(&prompt_path, e)))?;
    let vset = VerbalizerSet::direct(&list(&labels), &vocab).map_err(|e| Failure::Usage(e.to_string()))?;
    let p = predict(&ck, &vocab, &prompt, &vset)?;
    println!("{}", serde_json::to_string(&p).expect("prediction serializes"));
    Ok(())
}

fn eval_cmd(a: EvalArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let vocab = load_vocab(&s.path(a.vocab, "vocab")?, run)?;
    let ck = load_ckpt(&s.path(a.ckpt, "ckpt")?, run)?;
    let task = s.path(a.task, "task")?;
    let format: String = s.or(a.format, "format", "mc".into())?;
    let instructions = s.value(a.instructions, "instructions")?;
    run.input(&task)?;
    let name = task.file_stem().map_or("task".into(), |n| n.to_string_lossy().into_owned());
    let out = match format.as_str() {
        "mc" => {
            let mut opts = TemplateOptions::mc();
            if let Some(i) = instructions {
                opts.instructions = i;
            }
            evaluate_mc(&ck, &vocab, &name, &read_mc_items(&task)?, &opts, seed)?
        }
        "cls" => {
            let items = read_cls_items(&task)?;
            let mode = match s.or(a.mode, "mode", "direct".to_string())?.as_str() {
                "direct" => ClassificationMode::Direct,
                "letters" => ClassificationMode::Letters,
                other => return Err(Failure::Usage(format!("unknown mode {other:?}; expected direct or letters"))),
            };
            let classes = match s.value(a.labels, "labels")? {
                Some(l) => list(&l),
                None => {
                    let mut c: Vec<String> = items.iter().map(|i| i.label.clone()).collect();
                    c.sort();
                    c.dedup();
                    c
                }
            };
            let vset = classification_verbalizers(&classes, mode, &vocab)?;
            let instr = instructions.unwrap_or_else(|| TemplateOptions::cls().instructions);
            evaluate_classification(&ck, &vocab, &name, &items, &vset, &instr, seed)?
        }
        other => return Err(Failure::Usage(format!("unknown format {other:?}; expected mc or cls"))),
    };
    run.write("report.json", out.report.to_json().as_bytes())?;
    run.write("report.txt", out.report.to_text().as_bytes())?;
    run.write("predictions.jsonl", crate::eval::to_jsonl(&out.items).as_bytes())?;
    print!("{}", out.report.to_text());
    Ok(s)
}

fn ablate_cmd(a: AblateArgs, mut s: Settings, run: &mut Run, seed: u64) -> CliResult<Settings> {
    let suite: Suite = s.or(a.suite, "suite", "objective_mix".to_string())?.parse()?;
    let n_seeds = s.or(a.seeds, "seeds", 3)?;
    let mut cfg = ExperimentConfig::toy();
    cfg.pretrain_sentences = s.or(a.pretrain_sentences, "pretrain_sentences", cfg.pretrain_sentences)?;
    cfg.per_family = s.or(a.per_family, "per_family", cfg.per_family)?;
    cfg.eval_items = s.or(a.eval_items, "eval_items", cfg.eval_items)?;
    if n_seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let mut exp = Experiment::new(cfg)?;
    let table = run_ablation(&mut exp, suite.name(), &suite.variants(), &seeds)?;
    run.write(report::ABLATION_FILE, table.to_json().as_bytes())?;
    let text = report::ablation_table(&table)?.to_text();
    run.write("ablation.txt", text.as_bytes())?;
    print!("{text}");
    Ok(s)
}

fn report_cmd(a: ReportArgs, s: Settings, run: &mut Run) -> CliResult<Settings> {
    if a.runs.is_empty() {
        return Err(Failure::Usage("report needs at least one --runs directory".into()));
    }
    for dir in &a.runs {
        for f in [report::REPORT_FILE, report::ABLATION_FILE] {
            if dir.join(f).exists() {
                run.input(&dir.join(f))?;
            }
        }
    }
    for p in report::report(&a.runs, &run.out)? {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        run.manifest.add_output(name);
    }
    Ok(s)
}

fn execute(cli: Cli) -> CliResult<()> {
    let ini = match &cli.config {
        Some(p) => Ini::load(p)?,
        None => Ini::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => match ini.parsed::<u64>("", "seed")? {
            Some(s) => s,
            None => root_seed(None)?,
        },
    };
    let (section, name): (&'static str, &str) = match &cli.command {
        Command::BuildVocab(_) => ("build-vocab", "build-vocab"),
        Command::Prepare(_) => ("prepare", "prepare"),
        Command::Pretrain(_) => ("pretrain", "pretrain"),
        Command::Instruct(_) => ("instruct", "instruct"),
        Command::Finetune(_) => ("finetune", "finetune"),
        Command::Predict(_) => ("predict", "predict"),
        Command::Eval(_) => ("eval", "eval"),
        Command::Ablate(_) => ("ablate", "ablate"),
        Command::Report(_) => ("report", "report"),
    };
    let settings = Settings {
        ini,
        section,
        snapshot: BTreeMap::new(),
    };
    if let Command::Predict(a) = cli.command {
        return predict_cmd(a, settings);
    }
    let mut run = Run::new(&cli.out, name, seed)?;
    let settings = match cli.command {
        Command::BuildVocab(a) => build_vocab_cmd(a, settings, &mut run)?,
        Command::Prepare(a) => prepare_cmd(a, settings, &mut run, seed)?,
        Command::Pretrain(a) => pretrain_cmd(a, settings, &mut run, seed)?,
        Command::Instruct(a) => instruct_cmd(a, settings, &mut run, seed)?,
        Command::Finetune(a) => finetune_cmd(a, settings, &mut run, seed)?,
        Command::Eval(a) => eval_cmd(a, settings, &mut run, seed)?,
        Command::Ablate(a) => ablate_cmd(a, settings, &mut run, seed)?,
        Command::Report(a) => report_cmd(a, settings, &mut run)?,
        Command::Predict(_) => unreachable!("handled above"),
    };
    run.finish(settings)
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("maskwise: {m}");
            eprintln!("Run `maskwise --help` for usage.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("maskwise: {e}");
            2
        }
    }
}
