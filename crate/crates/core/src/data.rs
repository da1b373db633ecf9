//! Instruction-record ingestion and the filter → held-out → downsample flow.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::Vocabulary;

/// One instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub source_dataset: String,
    pub input: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl InstructionExample {
    fn is_valid(&self) -> bool {
        !self.input.trim().is_empty() && !self.answer.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    /// 1-based line in the ingested file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    #[serde(flatten)]
    pub example: InstructionExample,
    pub provenance: Provenance,
    pub split: String,
}

impl Record {
    pub fn new(example: InstructionExample, line: usize) -> Self {
        Record {
            provenance: Provenance {
                source_dataset: example.source_dataset.clone(),
                line,
            },
            example,
            split: "train".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<Record>,
    pub skipped: usize,
}

/// Fails when more than this fraction of non-blank lines is malformed.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

pub const DEFAULT_CAP: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub heldout_datasets: BTreeSet<String>,
    pub per_dataset_cap: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            heldout_datasets: default_heldout(),
            per_dataset_cap: DEFAULT_CAP,
            seed: 0,
        }
    }
}

/// MMLU, BBH and the classification tags the evaluation harness uses.
pub fn default_heldout() -> BTreeSet<String> {
    ["mmlu", "mmlu_pro", "bbh", "adev2", "nis", "ose"]
        .into_iter()
        .map(String::from)
        .collect()
}

pub fn parse_records(text: &str) -> Result<Ingested> {
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut total = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<InstructionExample>(line) {
            Ok(ex) if ex.is_valid() => records.push(Record::new(ex, i + 1)),
            _ => skipped += 1,
        }
    }
    if total > 0 && skipped as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Format(format!(
            "{skipped} of {total} lines are malformed"
        )));
    }
    Ok(Ingested { records, skipped })
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

pub fn filter_single_token(records: Vec<Record>, vocab: &Vocabulary) -> Vec<Record> {
    records
        .into_iter()
        .filter(|r| vocab.is_single_token(&r.example.answer))
        .collect()
}

pub fn exclude_heldout(records: Vec<Record>, cfg: &FilterConfig) -> Vec<Record> {
    let heldout: BTreeSet<String> = cfg.heldout_datasets.iter().map(|t| t.to_lowercase()).collect();
    records
        .into_iter()
        .filter(|r| !heldout.contains(&r.example.source_dataset.to_lowercase()))
        .collect()
}

/// Caps every dataset at `per_dataset_cap` and shuffles the result. The
/// output depends only on the input multiset, not its order.
pub fn downsample(records: Vec<Record>, cfg: &FilterConfig) -> Result<Vec<Record>> {
    if cfg.per_dataset_cap == 0 {
        return Err(Error::Config("per_dataset_cap must be at least 1".into()));
    }
    let mut groups: BTreeMap<String, Vec<Record>> = BTreeMap::new();
    for r in records {
        groups.entry(r.example.source_dataset.clone()).or_default().push(r);
    }
    let mut kept = Vec::new();
    for (tag, mut group) in groups {
        group.sort_by(|a, b| a.provenance.cmp(&b.provenance));
        if group.len() > cfg.per_dataset_cap {
            let mut rng = rng::rng(rng::seed_for_tag(cfg.seed, &tag));
            let mut picked = rand::seq::index::sample(&mut rng, group.len(), cfg.per_dataset_cap).into_vec();
            picked.sort_unstable();
            let mut slots: Vec<Option<Record>> = group.into_iter().map(Some).collect();
            group = picked.into_iter().map(|i| slots[i].take().unwrap()).collect();
        }
        kept.extend(group);
    }
    kept.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    kept.shuffle(&mut rng::rng(cfg.seed));
    Ok(kept)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub ingested: usize,
    pub skipped_malformed: usize,
    pub single_token: usize,
    pub after_heldout: usize,
    pub manifest: usize,
    pub per_dataset: BTreeMap<String, usize>,
}

/// Single-token filter first, then held-out exclusion, then the cap.
pub fn prepare(ingested: Ingested, vocab: &Vocabulary, cfg: &FilterConfig) -> Result<(Vec<Record>, PrepareStats)> {
    let mut stats = PrepareStats {
        ingested: ingested.records.len(),
        skipped_malformed: ingested.skipped,
        ..Default::default()
    };
    let records = filter_single_token(ingested.records, vocab);
    stats.single_token = records.len();
    let records = exclude_heldout(records, cfg);
    stats.after_heldout = records.len();
    let manifest = downsample(records, cfg)?;
    stats.manifest = manifest.len();
    for r in &manifest {
        *stats.per_dataset.entry(r.example.source_dataset.clone()).or_default() += 1;
    }
    Ok((manifest, stats))
}

pub fn manifest_to_string(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(manifest_to_string(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_examples(path: &Path, examples: &[InstructionExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, Scheme};

    fn rec(tag: &str, line: usize) -> Record {
        Record::new(
            InstructionExample {
                source_dataset: tag.into(),
                input: format!("input {line}"),
                answer: "A".into(),
                choices: None,
            },
            line,
        )
    }

    fn line(tag: &str, answer: &str) -> String {
        format!(r#"{{"source_dataset":"{tag}","input":"q","answer":"{answer}"}}"#)
    }

    #[test]
    fn ingest_keeps_order() {
        let text = [line("a", "1"), line("b", "2"), line("c", "3")].join("\n");
        let got = parse_records(&text).unwrap();
        assert_eq!(got.skipped, 0);
        let tags: Vec<_> = got.records.iter().map(|r| r.example.source_dataset.as_str()).collect();
        assert_eq!(tags, ["a", "b", "c"]);
        assert_eq!(got.records[2].provenance.line, 3);
    }

    #[test]
    fn one_bad_line_in_ten_is_skipped() {
        let mut lines: Vec<String> = (0..9).map(|_| line("a", "x")).collect();
        lines.insert(4, "{not json".into());
        let got = parse_records(&lines.join("\n")).unwrap();
        assert_eq!((got.records.len(), got.skipped), (9, 1));
    }

    #[test]
    fn too_many_bad_lines_fail() {
        let mut lines: Vec<String> = (0..8).map(|_| line("a", "x")).collect();
        lines.push("{}".into());
        lines.push(line("a", " "));
        assert!(matches!(parse_records(&lines.join("\n")), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(ingest(Path::new("/nonexistent/x.jsonl")), Err(Error::Io { .. })));
    }

    #[test]
    fn single_token_filter() {
        let v = build_vocab(&["gain in body mass"], 32, Scheme::Whitespace).unwrap();
        let mut a = rec("x", 1);
        a.example.answer = "B".into();
        let mut b = rec("x", 2);
        b.example.answer = "gain in body mass".into();
        let kept = filter_single_token(vec![a.clone(), b], &v);
        assert_eq!(kept, vec![a]);
        assert!(filter_single_token(vec![], &v).is_empty());
    }

    #[test]
    fn heldout_is_case_insensitive() {
        let cfg = FilterConfig {
            heldout_datasets: ["MMLU".to_string()].into(),
            ..Default::default()
        };
        let kept = exclude_heldout(vec![rec("mmlu", 1), rec("agnews", 2), rec("Mmlu", 3)], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].example.source_dataset, "agnews");
        let none = FilterConfig {
            heldout_datasets: BTreeSet::new(),
            ..Default::default()
        };
        assert_eq!(exclude_heldout(vec![rec("mmlu", 1)], &none).len(), 1);
    }

    #[test]
    fn cap_arithmetic() {
        let mut rs = Vec::new();
        let mut line = 0;
        for (tag, n) in [("d1", 10), ("d2", 5), ("d3", 2)] {
            for _ in 0..n {
                line += 1;
                rs.push(rec(tag, line));
            }
        }
        let cfg = FilterConfig {
            per_dataset_cap: 4,
            ..Default::default()
        };
        let out = downsample(rs, &cfg).unwrap();
        let mut counts = BTreeMap::new();
        for r in &out {
            *counts.entry(r.example.source_dataset.as_str()).or_insert(0) += 1;
        }
        assert_eq!(counts, BTreeMap::from([("d1", 4), ("d2", 4), ("d3", 2)]));
    }

    #[test]
    fn zero_cap_rejected() {
        let cfg = FilterConfig {
            per_dataset_cap: 0,
            ..Default::default()
        };
        assert!(downsample(vec![], &cfg).is_err());
    }
}
