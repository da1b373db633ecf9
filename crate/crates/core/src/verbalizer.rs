use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    /// Class label or answer name.
    pub label: String,
    /// Single-token surface form emitted at the mask.
    pub token: String,
    pub id: u32,
}

/// Ordered class → single-token verbalizer mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizerSet {
    entries: Vec<Verbalizer>,
}

impl VerbalizerSet {
    /// Each `(label, token)` pair must map to a distinct single token.
    pub fn new<L, T>(pairs: impl IntoIterator<Item = (L, T)>, vocab: &Vocabulary) -> Result<Self>
    where
        L: Into<String>,
        T: Into<String>,
    {
        let mut entries: Vec<Verbalizer> = Vec::new();
        for (label, token) in pairs {
            let (label, token) = (label.into(), token.into());
            let id = vocab.single_token_id(&token).ok_or_else(|| {
                Error::Template(format!("verbalizer {token:?} for {label:?} is not a single token"))
            })?;
            if entries.iter().any(|e| e.id == id) {
                return Err(Error::Template(format!("verbalizer {token:?} is used twice")));
            }
            if entries.iter().any(|e| e.label == label) {
                return Err(Error::Template(format!("label {label:?} is used twice")));
            }
            entries.push(Verbalizer { label, token, id });
        }
        if entries.is_empty() {
            return Err(Error::Template("verbalizer set is empty".into()));
        }
        Ok(VerbalizerSet { entries })
    }

    /// Classes verbalized by their own names.
    pub fn direct<S: AsRef<str>>(classes: &[S], vocab: &Vocabulary) -> Result<Self> {
        Self::new(classes.iter().map(|c| (c.as_ref(), c.as_ref())), vocab)
    }

    /// Classes verbalized by "A", "B", ... in order.
    pub fn letters<S: AsRef<str>>(classes: &[S], vocab: &Vocabulary) -> Result<Self> {
        if classes.len() > 26 {
            return Err(Error::Template(format!("{} classes exceed the letter range", classes.len())));
        }
        Self::new(
            classes
                .iter()
                .zip('A'..='Z')
                .map(|(c, l)| (c.as_ref().to_string(), l.to_string())),
            vocab,
        )
    }

    /// Plain letter labels, for multiple-choice items.
    pub fn choice_letters(n: usize, vocab: &Vocabulary) -> Result<Self> {
        let letters: Vec<String> = ('A'..='Z').take(n).map(String::from).collect();
        if letters.len() < n {
            return Err(Error::Template(format!("{n} choices exceed the letter range")));
        }
        Self::direct(&letters, vocab)
    }

    pub fn entries(&self) -> &[Verbalizer] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    /// True when every class is its own verbalizer.
    pub fn is_direct(&self) -> bool {
        self.entries.iter().all(|e| e.label == e.token)
    }

    /// Same entries in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        VerbalizerSet {
            entries: order.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, Scheme};

    #[test]
    fn rejects_multi_token_and_duplicates() {
        let v = build_vocab(&["Positive Negative"], 32, Scheme::Whitespace).unwrap();
        assert!(VerbalizerSet::direct(&["Positive", "Negative"], &v).is_ok());
        assert!(matches!(
            VerbalizerSet::direct(&["very good"], &v),
            Err(Error::Template(_))
        ));
        assert!(VerbalizerSet::direct(&["A", "A"], &v).is_err());
        assert!(VerbalizerSet::direct::<&str>(&[], &v).is_err());
    }

    #[test]
    fn letters_follow_order() {
        let v = build_vocab(&["x"], 32, Scheme::Whitespace).unwrap();
        let classes: Vec<String> = (0..10).map(|i| format!("topic {i}")).collect();
        let set = VerbalizerSet::letters(&classes, &v).unwrap();
        let tokens: Vec<&str> = set.entries().iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"]);
        assert!(!set.is_direct());
    }
}
