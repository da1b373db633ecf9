//! Objective-mix and backbone ablations on the synthetic task families.
//!
//! Backbones are pretrained once per corpus and shared across seeds; the
//! seeds vary instruction tuning (data order, masking, dropout) only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::eval::{evaluate_mc, EvalOutput, EvalReport, TemplateOptions};
use crate::model::{ModelCheckpoint, ModelConfig};
use crate::objective::{make_mlm_sample, mix, Objective, ObjectiveMixConfig};
use crate::synth::{self, CorpusKind, FAMILIES, SYNTH_INSTRUCTIONS};
use crate::templating::ANSWER_SLOT;
use crate::tokenizer::{build_vocab, Scheme, Vocabulary};
use crate::train::{train, Stage, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    ObjectiveMix,
    Backbone,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective_mix" => Ok(Suite::ObjectiveMix),
            "backbone" => Ok(Suite::Backbone),
            other => Err(Error::Config(format!("unknown ablation suite {other:?}"))),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::ObjectiveMix => "objective_mix",
            Suite::Backbone => "backbone",
        }
    }

    pub fn variants(self) -> Vec<Variant> {
        match self {
            Suite::ObjectiveMix => vec![
                Variant::new("atp_only", CorpusKind::Diverse, 1.0, Objective::Dummy),
                Variant::new("atp_mlm", CorpusKind::Diverse, 0.8, Objective::Mlm),
                Variant::new("atp_dummy", CorpusKind::Diverse, 0.8, Objective::Dummy),
            ],
            Suite::Backbone => vec![
                Variant::new("diverse", CorpusKind::Diverse, 0.8, Objective::Dummy),
                Variant::new("narrow", CorpusKind::Narrow, 0.8, Objective::Dummy),
            ],
        }
    }
}

/// One row of an ablation: which backbone, and which objective mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub corpus: CorpusKind,
    pub atp_fraction: f64,
    pub filler: Objective,
}

impl Variant {
    pub fn new(label: &str, corpus: CorpusKind, atp_fraction: f64, filler: Objective) -> Self {
        Variant {
            label: label.into(),
            corpus,
            atp_fraction,
            filler,
        }
    }

    /// Identifies the training run independently of the label.
    fn key(&self, seed: u64) -> String {
        format!("{:?}/{}/{}/{seed}", self.corpus, self.atp_fraction, self.filler.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub vocab_target: usize,
    /// `vocab_size` is filled in from the built vocabulary.
    pub model: ModelConfig,
    pub backbone_seed: u64,
    pub pretrain_sentences: usize,
    pub pretrain: TrainConfig,
    pub per_family: usize,
    pub instruct: TrainConfig,
    pub heldout_family: usize,
    pub eval_items: usize,
    pub eval_choices: usize,
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        let mut model = ModelConfig::toy(0);
        model.max_seq_len = 96;
        ExperimentConfig {
            vocab_target: 400,
            model,
            backbone_seed: 7,
            pretrain_sentences: 24_000,
            pretrain: TrainConfig {
                epochs: 4,
                learning_rate: 1e-3,
                ..TrainConfig::new(Stage::Pretrain)
            },
            per_family: 200,
            instruct: TrainConfig {
                epochs: 3,
                ..TrainConfig::new(Stage::Instruct)
            },
            heldout_family: synth::HELDOUT_FAMILY,
            eval_items: 200,
            eval_choices: 4,
        }
    }
}

/// Holds the vocabulary and caches backbones and finished runs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    backbones: BTreeMap<String, ModelCheckpoint>,
    runs: BTreeMap<String, EvalOutput>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        if config.heldout_family >= FAMILIES.len() {
            return Err(Error::Config(format!("held-out family {} does not exist", config.heldout_family)));
        }
        let vocab = build_vocab(&synth::vocab_corpus(), config.vocab_target, Scheme::Whitespace)?;
        Ok(Experiment {
            config,
            vocab,
            backbones: BTreeMap::new(),
            runs: BTreeMap::new(),
        })
    }

    pub fn eval_options() -> TemplateOptions {
        TemplateOptions {
            instructions: SYNTH_INSTRUCTIONS.into(),
            answer_slot_prefix: ANSWER_SLOT.into(),
        }
    }

    /// MLM-pretrained backbone for `kind`, trained on first use.
    pub fn backbone(&mut self, kind: CorpusKind) -> Result<&ModelCheckpoint> {
        let key = format!("{kind:?}");
        if !self.backbones.contains_key(&key) {
            let cfg = &self.config;
            let seed = cfg.backbone_seed;
            let mut model = cfg.model.clone();
            model.vocab_size = self.vocab.len();
            let mut ck = ModelCheckpoint::new(model, seed)?;
            ck.provenance.corpus = format!("synthetic_{}", key.to_lowercase());
            let masking = ObjectiveMixConfig {
                seed,
                filler: Objective::Mlm,
                ..ObjectiveMixConfig::default()
            };
            let samples = synth::corpus(kind, cfg.pretrain_sentences, seed)
                .iter()
                .enumerate()
                .map(|(i, text)| make_mlm_sample(text, &masking, &self.vocab, i as u64))
                .collect::<Result<Vec<_>>>()?;
            let pcfg = TrainConfig {
                seed,
                ..cfg.pretrain.clone()
            };
            let out = train(ck, &samples, &[], &pcfg, None)?;
            self.backbones.insert(key.clone(), out.checkpoint);
        }
        Ok(&self.backbones[&key])
    }

    /// Instruction-tuned checkpoint for one variant and seed.
    pub fn instruct(&mut self, variant: &Variant, seed: u64) -> Result<ModelCheckpoint> {
        let backbone = self.backbone(variant.corpus)?.clone();
        let cfg = &self.config;
        let records: Vec<Record> = synth::instruct_mix(cfg.heldout_family, cfg.per_family, seed)
            .into_iter()
            .enumerate()
            .map(|(i, e)| Record::new(e, i + 1))
            .collect();
        let mix_cfg = ObjectiveMixConfig {
            atp_fraction: variant.atp_fraction,
            filler: variant.filler,
            seed,
            ..ObjectiveMixConfig::default()
        };
        let samples = mix(&records, &mix_cfg, &self.vocab)?;
        let tcfg = TrainConfig {
            seed,
            ..cfg.instruct.clone()
        };
        Ok(train(backbone, &samples, &[], &tcfg, None)?.checkpoint)
    }

    /// Accuracy on the held-out family; the item set is fixed across runs.
    pub fn evaluate_heldout(&self, ckpt: &ModelCheckpoint, seed: u64) -> Result<EvalOutput> {
        let cfg = &self.config;
        let family = &FAMILIES[cfg.heldout_family];
        let items = synth::mc_items(family, cfg.eval_items, cfg.eval_choices, cfg.backbone_seed ^ 0xE7A1);
        evaluate_mc(ckpt, &self.vocab, family.name, &items, &Self::eval_options(), seed)
    }

    /// Trains and evaluates one cell, reusing identical earlier runs.
    pub fn run(&mut self, variant: &Variant, seed: u64) -> Result<EvalOutput> {
        let key = variant.key(seed);
        if let Some(done) = self.runs.get(&key) {
            return Ok(done.clone());
        }
        let ck = self.instruct(variant, seed)?;
        let out = self.evaluate_heldout(&ck, seed)?;
        self.runs.insert(key, out.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub reports: Vec<EvalReport>,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: String,
    pub task: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn from_reports(variant: &str, reports: Vec<EvalReport>) -> Self {
        let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        let (mean, stddev) = mean_std(&accs);
        AblationRow {
            variant: variant.into(),
            reports,
            mean,
            stddev,
        }
    }
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// Orderings between rows are only meaningful with two or more seeds.
    pub fn supports_ordering(&self) -> bool {
        self.seeds.len() >= 2
    }
}

pub fn run_ablation(exp: &mut Experiment, suite: &str, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let reports = seeds
            .iter()
            .map(|&s| exp.run(v, s).map(|o| o.report))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow::from_reports(&v.label, reports));
    }
    Ok(AblationTable {
        suite: suite.into(),
        task: FAMILIES[exp.config.heldout_family].name.into(),
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_deviation() {
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn suites_parse_and_list_variants() {
        assert_eq!("objective_mix".parse::<Suite>().unwrap().variants().len(), 3);
        assert_eq!("backbone".parse::<Suite>().unwrap().variants().len(), 2);
        assert!("other".parse::<Suite>().is_err());
    }
}
