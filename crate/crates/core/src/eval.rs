//! Verbalizer-constrained prediction and the zero-shot evaluation harnesses.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax, ModelCheckpoint};
use crate::objective::frame;
use crate::rng;
use crate::templating::{render_classification, render_inference, InferenceTask, ANSWER_SLOT, CLS_INSTRUCTIONS, MC_INSTRUCTIONS};
use crate::tokenizer::Vocabulary;
use crate::verbalizer::VerbalizerSet;

/// Anything that yields full-vocabulary logits at a mask position.
pub trait MaskScorer {
    fn mask_logits(&self, ids: &[u32], position: usize) -> Result<Vec<f64>>;
    fn max_seq_len(&self) -> usize;
    /// Identifies the scorer's weights in reports.
    fn fingerprint(&self) -> String;
}

impl MaskScorer for ModelCheckpoint {
    fn mask_logits(&self, ids: &[u32], position: usize) -> Result<Vec<f64>> {
        let mask = vec![true; ids.len()];
        Ok(self.mlm_logits_at(ids, &mask, &[position])?.remove(0))
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn fingerprint(&self) -> String {
        let mut ck = self.clone();
        ck.training_state = None;
        rng::fingerprint(&ck.to_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub token_id: u32,
    /// `(label, probability)` in verbalizer-set order.
    pub distribution: Vec<(String, f64)>,
}

impl Prediction {
    pub fn probability(&self, label: &str) -> Option<f64> {
        self.distribution.iter().find(|(l, _)| l == label).map(|&(_, p)| p)
    }
}

/// Softmax over the verbalizer logits; ties go to the lowest token id.
pub fn restrict(logits: &[f64], vset: &VerbalizerSet) -> Result<Prediction> {
    if vset.is_empty() {
        return Err(Error::Template("verbalizer set is empty".into()));
    }
    let mut scores = Vec::with_capacity(vset.len());
    for e in vset.entries() {
        let &s = logits.get(e.id as usize).ok_or_else(|| {
            Error::Shape(format!("verbalizer id {} outside {} logits", e.id, logits.len()))
        })?;
        scores.push(s);
    }
    let probs = softmax(&scores);
    let mut best = 0;
    for (i, e) in vset.entries().iter().enumerate() {
        let b = &vset.entries()[best];
        if scores[i] > scores[best] || (scores[i] == scores[best] && e.id < b.id) {
            best = i;
        }
    }
    let chosen = &vset.entries()[best];
    Ok(Prediction {
        label: chosen.label.clone(),
        token_id: chosen.id,
        distribution: vset.entries().iter().zip(probs).map(|(e, p)| (e.label.clone(), p)).collect(),
    })
}

/// Position of the single mask in a framed prompt.
pub fn mask_position(ids: &[u32], vocab: &Vocabulary) -> Result<usize> {
    let found: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == vocab.mask_id())
        .map(|(i, _)| i)
        .collect();
    match found[..] {
        [p] => Ok(p),
        _ => Err(Error::Prompt(format!("prompt must contain exactly one mask, found {}", found.len()))),
    }
}

pub fn predict(scorer: &dyn MaskScorer, vocab: &Vocabulary, prompt: &str, vset: &VerbalizerSet) -> Result<Prediction> {
    let ids = frame(prompt, vocab);
    let pos = mask_position(&ids, vocab)?;
    if ids.len() > scorer.max_seq_len() {
        return Err(Error::Shape(format!(
            "prompt is {} tokens, model accepts {}",
            ids.len(),
            scorer.max_seq_len()
        )));
    }
    restrict(&scorer.mask_logits(&ids, pos)?, vset)
}

/// One multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McItem {
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClsItem {
    pub text: String,
    pub label: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn read_mc_items(path: &Path) -> Result<Vec<McItem>> {
    read_jsonl(path)
}

pub fn read_cls_items(path: &Path) -> Result<Vec<ClsItem>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    pub instructions: String,
    pub answer_slot_prefix: String,
}

impl TemplateOptions {
    pub fn mc() -> Self {
        TemplateOptions {
            instructions: MC_INSTRUCTIONS.into(),
            answer_slot_prefix: ANSWER_SLOT.into(),
        }
    }

    pub fn cls() -> Self {
        TemplateOptions {
            instructions: CLS_INSTRUCTIONS.into(),
            answer_slot_prefix: ANSWER_SLOT.into(),
        }
    }
}

/// The row for one subject or class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub key: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n_examples: usize,
    /// Micro accuracy.
    pub accuracy: f64,
    /// Mean of per-subject accuracies, when subjects are present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_accuracy: Option<f64>,
    pub breakdown: Vec<Breakdown>,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "task {}  n={}  accuracy={:.4}",
            self.task, self.n_examples, self.accuracy
        );
        if let Some(m) = self.macro_accuracy {
            s.push_str(&format!("  macro={m:.4}"));
        }
        s.push('\n');
        s.push_str(&format!("{:<20} {:>6} {:>8} {:>9} {:>9}\n", "key", "n", "accuracy", "precision", "recall"));
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for b in &self.breakdown {
            s.push_str(&format!(
                "{:<20} {:>6} {:>8.4} {:>9} {:>9}\n",
                b.key,
                b.n,
                b.accuracy,
                opt(b.precision),
                opt(b.recall)
            ));
        }
        s
    }
}

/// Per-item record; accuracy is recomputable from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub index: usize,
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
    pub distribution: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub items: Vec<ItemPrediction>,
}

impl EvalOutput {
    /// Writes `report.json`, `report.txt`, and `predictions.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.json", self.report.to_json()),
            ("report.txt", self.report.to_text()),
            ("predictions.jsonl", to_jsonl(&self.items)),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn render_mc_item(item: &McItem, opts: &TemplateOptions) -> Result<String> {
    if !(2..=10).contains(&item.choices.len()) {
        return Err(Error::Format(format!("item has {} choices, expected 2 to 10", item.choices.len())));
    }
    if item.answer_index >= item.choices.len() {
        return Err(Error::Format(format!(
            "answer_index {} out of range for {} choices",
            item.answer_index,
            item.choices.len()
        )));
    }
    let mut task = InferenceTask::lettered(item.question.clone(), &item.choices);
    task.instructions = opts.instructions.clone();
    task.answer_slot_prefix = opts.answer_slot_prefix.clone();
    render_inference(&task)
}

pub fn evaluate_mc(
    scorer: &dyn MaskScorer,
    vocab: &Vocabulary,
    task_name: &str,
    items: &[McItem],
    opts: &TemplateOptions,
    seed: u64,
) -> Result<EvalOutput> {
    let mut preds = Vec::with_capacity(items.len());
    let mut subjects: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (index, item) in items.iter().enumerate() {
        let prompt = render_mc_item(item, opts)?;
        let vset = VerbalizerSet::choice_letters(item.choices.len(), vocab)?;
        let p = predict(scorer, vocab, &prompt, &vset)?;
        let gold = vset.entries()[item.answer_index].label.clone();
        let correct = p.label == gold;
        if let Some(s) = &item.subject {
            let e = subjects.entry(s.clone()).or_default();
            e.0 += 1;
            e.1 += correct as usize;
        }
        preds.push(ItemPrediction {
            index,
            gold,
            predicted: p.label,
            correct,
            distribution: p.distribution,
        });
    }
    let breakdown: Vec<Breakdown> = subjects
        .into_iter()
        .map(|(key, (n, correct))| Breakdown {
            key,
            n,
            correct,
            accuracy: ratio(correct, n),
            precision: None,
            recall: None,
        })
        .collect();
    let macro_accuracy = (!breakdown.is_empty())
        .then(|| breakdown.iter().map(|b| b.accuracy).sum::<f64>() / breakdown.len() as f64);
    let correct = preds.iter().filter(|p| p.correct).count();
    Ok(EvalOutput {
        report: EvalReport {
            task: task_name.into(),
            n_examples: items.len(),
            accuracy: ratio(correct, items.len()),
            macro_accuracy,
            breakdown,
            config_fingerprint: scorer.fingerprint(),
            seed,
        },
        items: preds,
    })
}

pub fn evaluate_classification(
    scorer: &dyn MaskScorer,
    vocab: &Vocabulary,
    task_name: &str,
    items: &[ClsItem],
    vset: &VerbalizerSet,
    instructions: &str,
    seed: u64,
) -> Result<EvalOutput> {
    let mut preds = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        if vset.position(&item.label).is_none() {
            return Err(Error::Format(format!("item {index}: label {:?} is not in the verbalizer set", item.label)));
        }
        let prompt = render_classification(&item.text, vset, instructions)?;
        let p = predict(scorer, vocab, &prompt, vset)?;
        preds.push(ItemPrediction {
            index,
            gold: item.label.clone(),
            correct: p.label == item.label,
            predicted: p.label,
            distribution: p.distribution,
        });
    }
    let breakdown = vset
        .entries()
        .iter()
        .map(|e| {
            let n = preds.iter().filter(|p| p.gold == e.label).count();
            let predicted = preds.iter().filter(|p| p.predicted == e.label).count();
            let tp = preds.iter().filter(|p| p.gold == e.label && p.correct).count();
            Breakdown {
                key: e.label.clone(),
                n,
                correct: tp,
                accuracy: ratio(tp, n),
                precision: Some(ratio(tp, predicted)),
                recall: Some(ratio(tp, n)),
            }
        })
        .collect();
    let correct = preds.iter().filter(|p| p.correct).count();
    Ok(EvalOutput {
        report: EvalReport {
            task: task_name.into(),
            n_examples: items.len(),
            accuracy: ratio(correct, items.len()),
            macro_accuracy: None,
            breakdown,
            config_fingerprint: scorer.fingerprint(),
            seed,
        },
        items: preds,
    })
}
