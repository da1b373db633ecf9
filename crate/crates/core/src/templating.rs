//! Training and inference prompt layouts.
//!
//! Training instances only gain the `[ANS] [MASK]` suffix; the phrasing
//! diversity comes from the instruction data itself. Inference instances
//! follow the instructions / QUESTION / CHOICES / answer-slot layout.

use serde::{Deserialize, Serialize};

use crate::data::InstructionExample;
use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, ANCHOR, MASK};
use crate::verbalizer::VerbalizerSet;

pub const MC_INSTRUCTIONS: &str = "You will be given a question as well as a list of options. Read the question carefully and select the right answer from the list.";
pub const CLS_INSTRUCTIONS: &str = "You will be given a text as well as a list of labels. Read the text carefully and select the right label from the list.";
pub const ANSWER_SLOT: &str = "ANSWER:\n\nAnswer:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceTask {
    pub instructions: String,
    pub question: String,
    /// `(verbalizer label, choice text)` in display order.
    pub choices: Vec<(String, String)>,
    pub answer_slot_prefix: String,
}

impl InferenceTask {
    pub fn new(question: impl Into<String>, choices: Vec<(String, String)>) -> Self {
        InferenceTask {
            instructions: MC_INSTRUCTIONS.to_string(),
            question: question.into(),
            choices,
            answer_slot_prefix: ANSWER_SLOT.to_string(),
        }
    }

    /// Choices labelled "A", "B", ... in order.
    pub fn lettered<S: AsRef<str>>(question: impl Into<String>, choices: &[S]) -> Self {
        let choices = choices
            .iter()
            .zip('A'..='Z')
            .map(|(c, l)| (l.to_string(), c.as_ref().to_string()))
            .collect();
        Self::new(question, choices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassificationMode {
    /// Class names are the verbalizers.
    Direct,
    /// Classes are listed behind letter verbalizers.
    Letters,
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

fn check_slot(rendered: &str) -> Result<()> {
    let slot = format!("{ANCHOR} {MASK}");
    if count(rendered, MASK) != 1 || count(rendered, ANCHOR) != 1 || !rendered.contains(&slot) {
        return Err(Error::Template(
            "rendered text must contain exactly one anchor immediately followed by one mask".into(),
        ));
    }
    Ok(())
}

/// `{input}\n[ANS] [MASK]`; the answer becomes the supervision label.
pub fn render_train(example: &InstructionExample, vocab: &Vocabulary) -> Result<String> {
    if !vocab.is_single_token(&example.answer) {
        return Err(Error::Template(format!(
            "answer {:?} is not a single token",
            example.answer
        )));
    }
    let out = format!("{}\n{ANCHOR} {MASK}", example.input);
    check_slot(&out)?;
    Ok(out)
}

pub fn render_inference(task: &InferenceTask) -> Result<String> {
    if task.choices.is_empty() {
        return Err(Error::Template("inference task has no choices".into()));
    }
    for (i, (label, _)) in task.choices.iter().enumerate() {
        if task.choices[..i].iter().any(|(l, _)| l == label) {
            return Err(Error::Template(format!("duplicate choice label {label:?}")));
        }
    }
    let lines: Vec<String> = task
        .choices
        .iter()
        .map(|(label, text)| format!("- {label}: {text}"))
        .collect();
    let out = render_skeleton(task, &lines);
    check_slot(&out)?;
    Ok(out)
}

fn render_skeleton(task: &InferenceTask, choice_lines: &[String]) -> String {
    format!(
        "{}\n\nQUESTION: {}\n\nCHOICES:\n{}\n\n{} {ANCHOR} {MASK}",
        task.instructions,
        task.question,
        choice_lines.join("\n"),
        task.answer_slot_prefix
    )
}

/// Document as the QUESTION body, classes as CHOICES. Direct sets list
/// bare class names; letter sets list `- A: class`.
pub fn render_classification(text: &str, labels: &VerbalizerSet, instruction: &str) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::Template("no labels".into()));
    }
    let task = InferenceTask {
        instructions: instruction.to_string(),
        question: text.to_string(),
        choices: Vec::new(),
        answer_slot_prefix: ANSWER_SLOT.to_string(),
    };
    let lines: Vec<String> = labels
        .entries()
        .iter()
        .map(|e| {
            if labels.is_direct() {
                format!("- {}", e.label)
            } else {
                format!("- {}: {}", e.token, e.label)
            }
        })
        .collect();
    let out = render_skeleton(&task, &lines);
    check_slot(&out)?;
    Ok(out)
}

/// Builds the verbalizer set for a classification task. Direct mode falls
/// back to letters when any class name is not a single token.
pub fn classification_verbalizers<S: AsRef<str>>(
    classes: &[S],
    mode: ClassificationMode,
    vocab: &Vocabulary,
) -> Result<VerbalizerSet> {
    match mode {
        ClassificationMode::Direct if classes.iter().all(|c| vocab.is_single_token(c.as_ref())) => {
            VerbalizerSet::direct(classes, vocab)
        }
        _ => VerbalizerSet::letters(classes, vocab),
    }
}
