//! Answer Token Prediction, standard MLM and dummy-MLM samples, and the
//! seeded mix between them.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::rng;
use crate::templating::render_train;
use crate::tokenizer::{Vocabulary, MASK};

/// Label value for positions that carry no supervision.
pub const IGNORE: u32 = u32::MAX;

const SHARD_MAGIC: &[u8] = b"MWSHARD 1\n";
const MAX_MASK_DRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Atp,
    Mlm,
    Dummy,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Atp, Objective::Mlm, Objective::Dummy];

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Atp => "atp",
            Objective::Mlm => "mlm",
            Objective::Dummy => "dummy",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "atp" => Ok(Objective::Atp),
            "mlm" => Ok(Objective::Mlm),
            "dummy" => Ok(Objective::Dummy),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedSample {
    pub input_ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub objective: Objective,
    /// `true` for real tokens, `false` for padding.
    pub attention_mask: Vec<bool>,
}

impl TemplatedSample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn supervised(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != IGNORE)
            .map(|(i, &l)| (i, l))
    }

    pub fn num_supervised(&self) -> usize {
        self.supervised().count()
    }

    /// Checks the per-objective label invariants.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.input_ids.len();
        if self.labels.len() != n || self.attention_mask.len() != n {
            return Err(Error::Sample("length mismatch between ids, labels and mask".into()));
        }
        let mask_id = vocab.mask_id();
        let sup: Vec<(usize, u32)> = self.supervised().collect();
        if sup.is_empty() {
            return Err(Error::Sample("no supervised position".into()));
        }
        match self.objective {
            Objective::Atp => {
                let masks: Vec<usize> = (0..n).filter(|&i| self.input_ids[i] == mask_id).collect();
                if sup.len() != 1 || masks != [sup[0].0] {
                    return Err(Error::Sample("ATP sample must supervise exactly its mask".into()));
                }
            }
            Objective::Mlm | Objective::Dummy => {
                for &(i, l) in &sup {
                    if self.input_ids[i] != mask_id {
                        return Err(Error::Sample(format!("supervised position {i} is not masked")));
                    }
                    if self.objective == Objective::Dummy && l != mask_id {
                        return Err(Error::Sample("dummy label differs from the mask id".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMixConfig {
    pub atp_fraction: f64,
    pub filler: Objective,
    pub mlm_rate: f64,
    pub seed: u64,
}

impl Default for ObjectiveMixConfig {
    fn default() -> Self {
        ObjectiveMixConfig {
            atp_fraction: 0.8,
            filler: Objective::Dummy,
            mlm_rate: 0.30,
            seed: 0,
        }
    }
}

impl ObjectiveMixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.atp_fraction) {
            return Err(Error::Config(format!("atp_fraction {} outside [0,1]", self.atp_fraction)));
        }
        if !(self.mlm_rate > 0.0 && self.mlm_rate < 1.0) {
            return Err(Error::Config(format!("mlm_rate {} outside (0,1)", self.mlm_rate)));
        }
        if self.filler == Objective::Atp {
            return Err(Error::Config("filler objective must be mlm or dummy".into()));
        }
        Ok(())
    }
}

/// Ablation grid for the ATP share.
pub const ATP_FRACTION_GRID: [f64; 4] = [0.75, 0.80, 0.85, 0.90];

/// `[BOS] text [EOS]`.
pub fn frame(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::with_capacity(text.len() / 3 + 2);
    ids.push(vocab.bos_id());
    ids.extend(vocab.encode(text));
    ids.push(vocab.eos_id());
    ids
}

pub fn make_atp_sample(text: &str, answer: &str, vocab: &Vocabulary) -> Result<TemplatedSample> {
    let input_ids = frame(text, vocab);
    let masks: Vec<usize> = input_ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == vocab.mask_id())
        .map(|(i, _)| i)
        .collect();
    let [pos] = masks[..] else {
        return Err(Error::Sample(format!("expected exactly one mask, found {}", masks.len())));
    };
    let answer_id = vocab
        .single_token_id(answer)
        .ok_or_else(|| Error::Sample(format!("answer {answer:?} is not a single token")))?;
    let mut labels = vec![IGNORE; input_ids.len()];
    labels[pos] = answer_id;
    Ok(TemplatedSample {
        attention_mask: vec![true; input_ids.len()],
        input_ids,
        labels,
        objective: Objective::Atp,
    })
}

/// Independent Bernoulli(rate) over non-special positions, redrawn while
/// nothing is selected. After `MAX_MASK_DRAWS` empty draws a single
/// position is chosen uniformly.
fn draw_mask_positions<R: Rng>(eligible: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    for _ in 0..MAX_MASK_DRAWS {
        let picked: Vec<usize> = eligible.iter().copied().filter(|_| rng.gen::<f64>() < rate).collect();
        if !picked.is_empty() {
            return picked;
        }
    }
    vec![eligible[rng.gen_range(0..eligible.len())]]
}

fn masked_sample<R: Rng>(
    text: &str,
    cfg: &ObjectiveMixConfig,
    vocab: &Vocabulary,
    objective: Objective,
    rng: &mut R,
) -> Result<TemplatedSample> {
    let mut input_ids = frame(text, vocab);
    let eligible: Vec<usize> = (0..input_ids.len())
        .filter(|&i| !vocab.is_special(input_ids[i]))
        .collect();
    if eligible.len() < 2 {
        return Err(Error::Sample(format!(
            "text has {} maskable tokens, need at least 2",
            eligible.len()
        )));
    }
    let mut labels = vec![IGNORE; input_ids.len()];
    for pos in draw_mask_positions(&eligible, cfg.mlm_rate, rng) {
        labels[pos] = match objective {
            Objective::Dummy => vocab.mask_id(),
            _ => input_ids[pos],
        };
        input_ids[pos] = vocab.mask_id();
    }
    Ok(TemplatedSample {
        attention_mask: vec![true; input_ids.len()],
        input_ids,
        labels,
        objective,
    })
}

/// Masks with the stream seeded by `(cfg.seed, index)`.
pub fn make_mlm_sample(text: &str, cfg: &ObjectiveMixConfig, vocab: &Vocabulary, index: u64) -> Result<TemplatedSample> {
    masked_sample(text, cfg, vocab, Objective::Mlm, &mut rng::sample_rng(cfg.seed, index))
}

/// Same positions as [`make_mlm_sample`] for the same `(seed, index)`;
/// every label is the mask id.
pub fn make_dummy_sample(text: &str, cfg: &ObjectiveMixConfig, vocab: &Vocabulary, index: u64) -> Result<TemplatedSample> {
    masked_sample(text, cfg, vocab, Objective::Dummy, &mut rng::sample_rng(cfg.seed, index))
}

/// Training text with the answer written into the slot, used by fillers.
pub fn filled_text(rendered: &str, answer: &str) -> String {
    rendered.replacen(MASK, answer.trim(), 1)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixCounts {
    pub atp: usize,
    pub mlm: usize,
    pub dummy: usize,
}

impl MixCounts {
    pub fn add(&mut self, o: Objective) {
        match o {
            Objective::Atp => self.atp += 1,
            Objective::Mlm => self.mlm += 1,
            Objective::Dummy => self.dummy += 1,
        }
    }

    pub fn of(samples: &[TemplatedSample]) -> Self {
        let mut c = MixCounts::default();
        for s in samples {
            c.add(s.objective);
        }
        c
    }
}

/// Objective for the example at `index`.
pub fn assign_objective(cfg: &ObjectiveMixConfig, index: u64) -> Objective {
    let u: f64 = rng::sample_rng(cfg.seed, index).gen();
    if u < cfg.atp_fraction {
        Objective::Atp
    } else {
        cfg.filler
    }
}

/// Each record is ATP with probability `atp_fraction`, otherwise the filler
/// objective masks its answer-filled text.
pub fn mix(records: &[Record], cfg: &ObjectiveMixConfig, vocab: &Vocabulary) -> Result<Vec<TemplatedSample>> {
    cfg.validate()?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rendered = render_train(&r.example, vocab)?;
            let mut stream = rng::sample_rng(cfg.seed, i as u64);
            let u: f64 = stream.gen();
            if u < cfg.atp_fraction {
                make_atp_sample(&rendered, &r.example.answer, vocab)
            } else {
                let text = filled_text(&rendered, &r.example.answer);
                masked_sample(&text, cfg, vocab, cfg.filler, &mut stream)
            }
        })
        .collect()
}

pub fn shard_to_bytes(samples: &[TemplatedSample]) -> Vec<u8> {
    let mut out = Vec::from(SHARD_MAGIC);
    out.extend((samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend((s.input_ids.len() as u32).to_le_bytes());
        out.extend(s.objective.code().to_le_bytes());
        for &id in &s.input_ids {
            out.extend(id.to_le_bytes());
        }
        for &l in &s.labels {
            out.extend(l.to_le_bytes());
        }
    }
    out
}

/// Padding is recovered from the ids, since pad has a fixed id.
pub fn shard_from_bytes(bytes: &[u8], pad_id: u32) -> Result<Vec<TemplatedSample>> {
    let body = bytes
        .strip_prefix(SHARD_MAGIC)
        .ok_or_else(|| Error::Format("missing MWSHARD header".into()))?;
    let mut words = body
        .chunks(4)
        .map(|c| <[u8; 4]>::try_from(c).map(u32::from_le_bytes));
    let mut next = || -> Result<u32> {
        words
            .next()
            .and_then(|w| w.ok())
            .ok_or_else(|| Error::Format("truncated shard".into()))
    };
    let count = next()?;
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = next()? as usize;
        let objective = Objective::from_code(next()?).ok_or_else(|| Error::Format("bad objective code".into()))?;
        let input_ids = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let labels = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
        samples.push(TemplatedSample {
            attention_mask: input_ids.iter().map(|&t| t != pad_id).collect(),
            input_ids,
            labels,
            objective,
        });
    }
    if next().is_ok() {
        return Err(Error::Format("trailing bytes after shard records".into()));
    }
    Ok(samples)
}

pub fn write_shard(path: &Path, samples: &[TemplatedSample]) -> Result<()> {
    std::fs::write(path, shard_to_bytes(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: &Path, vocab: &Vocabulary) -> Result<Vec<TemplatedSample>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    shard_from_bytes(&bytes, vocab.pad_id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, Scheme};

    fn vocab() -> Vocabulary {
        build_vocab(&["x one two three four five six seven"], 32, Scheme::Whitespace).unwrap()
    }

    #[test]
    fn atp_supervises_only_the_mask() {
        let v = vocab();
        let s = make_atp_sample("x\n[ANS] [MASK]", "A", &v).unwrap();
        let sup: Vec<_> = s.supervised().collect();
        let mask_pos = s.input_ids.iter().position(|&t| t == v.mask_id()).unwrap();
        assert_eq!(sup, vec![(mask_pos, v.id("A").unwrap())]);
        assert_ne!(s.input_ids[mask_pos - 2], v.mask_id());
        s.validate(&v).unwrap();
    }

    #[test]
    fn atp_requires_one_mask() {
        let v = vocab();
        assert!(matches!(make_atp_sample("x", "A", &v), Err(Error::Sample(_))));
        assert!(make_atp_sample("[MASK] [MASK]", "A", &v).is_err());
    }

    #[test]
    fn short_text_rejected() {
        let v = vocab();
        let cfg = ObjectiveMixConfig::default();
        assert!(matches!(make_mlm_sample("x", &cfg, &v, 0), Err(Error::Sample(_))));
        assert!(make_mlm_sample("x one", &cfg, &v, 0).is_ok());
    }

    #[test]
    fn tiny_rate_still_masks_once() {
        let v = vocab();
        let cfg = ObjectiveMixConfig {
            mlm_rate: 1e-12,
            ..Default::default()
        };
        let text = "one two three four five six seven ".repeat(20);
        let s = make_mlm_sample(&text, &cfg, &v, 3).unwrap();
        assert_eq!(s.num_supervised(), 1);
    }

    #[test]
    fn mlm_and_dummy_share_positions() {
        let v = vocab();
        let cfg = ObjectiveMixConfig::default();
        let text = "one two three four five six seven x one two";
        for i in 0..20 {
            let m = make_mlm_sample(text, &cfg, &v, i).unwrap();
            let d = make_dummy_sample(text, &cfg, &v, i).unwrap();
            assert_eq!(m.input_ids, d.input_ids);
            let mp: Vec<usize> = m.supervised().map(|(p, _)| p).collect();
            let dp: Vec<usize> = d.supervised().map(|(p, _)| p).collect();
            assert_eq!(mp, dp);
            assert!(d.supervised().all(|(_, l)| l == v.mask_id()));
            m.validate(&v).unwrap();
            d.validate(&v).unwrap();
        }
    }

    #[test]
    fn specials_never_masked() {
        let v = vocab();
        let cfg = ObjectiveMixConfig {
            mlm_rate: 0.99,
            ..Default::default()
        };
        let s = make_mlm_sample("one [ANS] two [PAD] three", &cfg, &v, 1).unwrap();
        for (p, _) in s.supervised() {
            let original = frame("one [ANS] two [PAD] three", &v)[p];
            assert!(!v.is_special(original));
        }
    }

    #[test]
    fn config_validation() {
        let bad = ObjectiveMixConfig {
            mlm_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ObjectiveMixConfig {
            atp_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shard_rejects_garbage() {
        assert!(shard_from_bytes(b"nope", 0).is_err());
        let mut bytes = shard_to_bytes(&[]);
        bytes.extend([1, 2, 3, 4]);
        assert!(shard_from_bytes(&bytes, 0).is_err());
    }
}
