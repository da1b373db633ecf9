//! Small subword vocabulary with reserved special tokens.
//!
//! Text is first cut into pieces: special-token literals, whitespace runs,
//! alphanumeric runs and single punctuation characters. A single space
//! between two word/punctuation pieces is implicit; a piece glued to the
//! previous one is stored in its continuation form (`##` prefix). Anything
//! the vocabulary cannot express falls back to `<0xNN>` byte tokens, so
//! `decode(encode(x)) == x` for every input.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const MASK: &str = "[MASK]";
/// Answer anchor. Reserved and never seen during pretraining.
pub const ANCHOR: &str = "[ANS]";

const MAGIC: &str = "MWVOCAB 1";
const CONT: &str = "##";
const WHITESPACE_TOKENS: [&str; 5] = [" ", "\n", "\t", "\r", "\n\n"];

/// Reserved token roles. Ids follow declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Unk,
    Bos,
    Eos,
    Mask,
    Anchor,
}

impl Special {
    pub const ALL: [Special; 6] = [
        Special::Pad,
        Special::Unk,
        Special::Bos,
        Special::Eos,
        Special::Mask,
        Special::Anchor,
    ];

    pub fn literal(self) -> &'static str {
        match self {
            Special::Pad => PAD,
            Special::Unk => UNK,
            Special::Bos => BOS,
            Special::Eos => EOS,
            Special::Mask => MASK,
            Special::Anchor => ANCHOR,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Special::Pad => "PAD",
            Special::Unk => "UNK",
            Special::Bos => "BOS",
            Special::Eos => "EOS",
            Special::Mask => "MASK",
            Special::Anchor => "ANCHOR",
        }
    }

    fn from_name(name: &str) -> Option<Special> {
        Special::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Whole pieces become tokens; unknown pieces fall back to bytes.
    Whitespace,
    /// Pieces are assembled from characters by learned merges.
    BytePair,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Whitespace => "whitespace",
            Scheme::BytePair => "bpe",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Scheme::Whitespace),
            "bpe" | "byte-pair" => Ok(Scheme::BytePair),
            other => Err(Error::Config(format!("unknown tokenizer scheme {other:?}"))),
        }
    }
}

/// Verbalizers that must always be single tokens.
pub fn forced_verbalizers() -> impl Iterator<Item = String> {
    ('A'..='J').chain('0'..='9').map(String::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PieceKind {
    Special(Special),
    Space,
    Word,
    Punct,
}

#[derive(Debug, Clone, Copy)]
struct Piece<'a> {
    kind: PieceKind,
    text: &'a str,
}

fn is_space(c: char) -> bool {
    matches!(c, ' ' | '\n' | '\t' | '\r')
}

fn pretokenize(text: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut pos = 0;
    'outer: while pos < text.len() {
        let rest = &text[pos..];
        if rest.starts_with('[') {
            for special in Special::ALL {
                if rest.starts_with(special.literal()) {
                    let len = special.literal().len();
                    pieces.push(Piece {
                        kind: PieceKind::Special(special),
                        text: &rest[..len],
                    });
                    pos += len;
                    continue 'outer;
                }
            }
        }
        let first = rest.chars().next().unwrap();
        let (kind, len) = if is_space(first) {
            let len = rest.find(|c: char| !is_space(c)).unwrap_or(rest.len());
            (PieceKind::Space, len)
        } else if first.is_alphanumeric() {
            let len = rest
                .find(|c: char| !c.is_alphanumeric())
                .unwrap_or(rest.len());
            (PieceKind::Word, len)
        } else {
            (PieceKind::Punct, first.len_utf8())
        };
        pieces.push(Piece {
            kind,
            text: &rest[..len],
        });
        pos += len;
    }
    pieces
}

fn is_content(kind: PieceKind) -> bool {
    matches!(kind, PieceKind::Word | PieceKind::Punct)
}

/// A content piece together with how it attaches to its left neighbour.
#[derive(Debug, Clone, Copy)]
enum Step<'a> {
    Special(Special),
    Space(&'a str),
    Content {
        text: &'a str,
        /// Glued to the previous content piece with no space.
        attached: bool,
        /// Preceded by an implicit single space.
        spaced: bool,
    },
}

fn plan(text: &str) -> Vec<Step<'_>> {
    let pieces = pretokenize(text);
    let mut steps = Vec::with_capacity(pieces.len());
    let mut prev_content = false;
    let mut pending_space = false;
    for (i, piece) in pieces.iter().enumerate() {
        match piece.kind {
            PieceKind::Special(s) => {
                steps.push(Step::Special(s));
                prev_content = false;
            }
            PieceKind::Space => {
                let next_content = pieces.get(i + 1).is_some_and(|p| is_content(p.kind));
                if piece.text == " " && prev_content && next_content {
                    pending_space = true;
                } else {
                    steps.push(Step::Space(piece.text));
                    prev_content = false;
                }
            }
            PieceKind::Word | PieceKind::Punct => {
                steps.push(Step::Content {
                    text: piece.text,
                    attached: prev_content && !pending_space,
                    spaced: pending_space,
                });
                pending_space = false;
                prev_content = true;
            }
        }
    }
    steps
}

fn surface(text: &str, attached: bool) -> String {
    if attached {
        format!("{CONT}{text}")
    } else {
        text.to_string()
    }
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenClass {
    Special,
    Space,
    Byte(u8),
    Continuation,
    Plain,
}

/// Immutable token inventory. Ids are dense `0..len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    scheme: Scheme,
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

impl Vocabulary {
    fn assemble(scheme: Scheme, tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Build(format!("duplicate token {t:?}")));
            }
        }
        for (i, s) in Special::ALL.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(s.literal()) {
                return Err(Error::Build(format!("special {} must have id {i}", s.name())));
            }
        }
        let byte_base = Special::ALL.len() + WHITESPACE_TOKENS.len();
        let classes = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i < Special::ALL.len() {
                    TokenClass::Special
                } else if i < byte_base {
                    TokenClass::Space
                } else if i < byte_base + 256 {
                    TokenClass::Byte((i - byte_base) as u8)
                } else if t.len() > CONT.len() && t.starts_with(CONT) {
                    TokenClass::Continuation
                } else {
                    TokenClass::Plain
                }
            })
            .collect();
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(r, m)| (m.clone(), r))
            .collect();
        Ok(Vocabulary {
            scheme,
            tokens,
            classes,
            index,
            merges,
            merge_rank,
        })
    }

    fn reserved() -> Vec<String> {
        let mut tokens: Vec<String> = Special::ALL.iter().map(|s| s.literal().to_string()).collect();
        tokens.extend(WHITESPACE_TOKENS.iter().map(|s| s.to_string()));
        tokens.extend((0..=255u8).map(byte_token));
        tokens.extend(forced_verbalizers());
        tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn special(&self, s: Special) -> u32 {
        s as u32
    }

    pub fn mask_id(&self) -> u32 {
        Special::Mask as u32
    }

    pub fn anchor_id(&self) -> u32 {
        Special::Anchor as u32
    }

    pub fn pad_id(&self) -> u32 {
        Special::Pad as u32
    }

    pub fn bos_id(&self) -> u32 {
        Special::Bos as u32
    }

    pub fn eos_id(&self) -> u32 {
        Special::Eos as u32
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < Special::ALL.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn piece_ids(&self, text: &str, attached: bool) -> Option<Vec<u32>> {
        if let Some(&id) = self.index.get(&surface(text, attached)) {
            return Some(vec![id]);
        }
        if self.scheme == Scheme::Whitespace {
            return None;
        }
        let mut symbols = initial_symbols(text, attached);
        apply_merges(&mut symbols, &self.merge_rank);
        symbols.iter().map(|s| self.index.get(s).copied()).collect()
    }

    fn push_bytes(&self, text: &str, out: &mut Vec<u32>) {
        let base = (Special::ALL.len() + WHITESPACE_TOKENS.len()) as u32;
        out.extend(text.bytes().map(|b| base + b as u32));
    }

    fn push_space(&self, run: &str, out: &mut Vec<u32>) {
        let mut rest = run;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("\n\n") {
                out.push(self.index["\n\n"]);
                rest = r;
            } else {
                let c = rest.chars().next().unwrap();
                out.push(self.index[&c.to_string()]);
                rest = &rest[c.len_utf8()..];
            }
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for step in plan(text) {
            match step {
                Step::Special(s) => out.push(s as u32),
                Step::Space(run) => self.push_space(run, &mut out),
                Step::Content {
                    text,
                    attached,
                    spaced,
                } => match self.piece_ids(text, attached) {
                    Some(ids) => out.extend(ids),
                    None => {
                        if spaced {
                            out.push(self.index[" "]);
                        }
                        self.push_bytes(text, &mut out);
                    }
                },
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        let mut prev_content = false;
        for &id in ids {
            let class = *self.classes.get(id as usize).ok_or(Error::Decode {
                id,
                size: self.len(),
            })?;
            let tok = &self.tokens[id as usize];
            match class {
                TokenClass::Special | TokenClass::Space => {
                    bytes.extend_from_slice(tok.as_bytes());
                    prev_content = false;
                }
                TokenClass::Byte(b) => {
                    bytes.push(b);
                    prev_content = true;
                }
                TokenClass::Continuation => {
                    bytes.extend_from_slice(&tok.as_bytes()[CONT.len()..]);
                    prev_content = true;
                }
                TokenClass::Plain => {
                    if prev_content {
                        bytes.push(b' ');
                    }
                    bytes.extend_from_slice(tok.as_bytes());
                    prev_content = true;
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Leading whitespace is ignored, so `" B"` and `"B"` agree.
    pub fn is_single_token(&self, text: &str) -> bool {
        self.encode(text.trim_start()).len() == 1
    }

    /// Id of a single-token string, if it is one.
    pub fn single_token_id(&self, text: &str) -> Option<u32> {
        match self.encode(text.trim_start()).as_slice() {
            [id] => Some(*id),
            _ => None,
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "scheme {}", self.scheme.as_str()).unwrap();
        for sp in Special::ALL {
            writeln!(s, "special {} {}", sp.name(), sp as u32).unwrap();
        }
        writeln!(s, "merges {}", self.merges.len()).unwrap();
        for (a, b) in &self.merges {
            writeln!(s, "{} {}", escape(a), escape(b)).unwrap();
        }
        writeln!(s, "tokens {}", self.tokens.len()).unwrap();
        for t in &self.tokens {
            writeln!(s, "{}", escape(t)).unwrap();
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("vocabulary file truncated before {what}")))
        };
        let (_, magic) = next("magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad vocabulary magic {magic:?}")));
        }
        let (n, line) = next("scheme")?;
        let scheme: Scheme = line
            .strip_prefix("scheme ")
            .ok_or_else(|| Error::Format(format!("line {}: expected scheme", n + 1)))?
            .parse()?;
        for expected in Special::ALL {
            let (n, line) = next("special")?;
            let mut parts = line.split(' ');
            let ok = parts.next() == Some("special")
                && parts.next().and_then(Special::from_name) == Some(expected)
                && parts.next().and_then(|v| v.parse::<u32>().ok()) == Some(expected as u32);
            if !ok {
                return Err(Error::Format(format!("line {}: bad special entry {line:?}", n + 1)));
            }
        }
        let count = |line: &str, key: &str, n: usize| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("line {}: expected {key}<count>", n + 1)))
        };
        let (n, line) = next("merges")?;
        let n_merges = count(line, "merges ", n)?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (n, line) = next("merge")?;
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("line {}: bad merge", n + 1)))?;
            merges.push((unescape(a), unescape(b)));
        }
        let (n, line) = next("tokens")?;
        let n_tokens = count(line, "tokens ", n)?;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(unescape(next("token")?.1));
        }
        Vocabulary::assemble(scheme, tokens, merges).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

fn escape(t: &str) -> String {
    let mut s = String::with_capacity(t.len());
    for c in t.chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            '\n' => s.push_str("\\n"),
            '\t' => s.push_str("\\t"),
            '\r' => s.push_str("\\r"),
            ' ' => s.push_str("\\s"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(t: &str) -> String {
    let mut s = String::with_capacity(t.len());
    let mut chars = t.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            s.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => s.push('\n'),
            Some('t') => s.push('\t'),
            Some('r') => s.push('\r'),
            Some('s') => s.push(' '),
            Some(other) => s.push(other),
            None => s.push('\\'),
        }
    }
    s
}

fn initial_symbols(text: &str, attached: bool) -> Vec<String> {
    text.chars()
        .enumerate()
        .map(|(i, c)| surface(c.encode_utf8(&mut [0; 4]), attached || i > 0))
        .collect()
}

fn merge_pair(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONT).unwrap_or(b))
}

fn apply_merges(symbols: &mut Vec<String>, ranks: &HashMap<(String, String), usize>) {
    loop {
        let best = symbols
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
            .min();
        let Some((_, i)) = best else { break };
        let merged = merge_pair(&symbols[i], &symbols[i + 1]);
        symbols[i] = merged;
        symbols.remove(i + 1);
    }
}

/// Fails if any document contains the anchor literal.
pub fn check_anchor_free<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Result<()> {
    for (line, doc) in corpus.into_iter().enumerate() {
        if doc.contains(ANCHOR) {
            return Err(Error::Build(format!(
                "document {} contains the reserved anchor {ANCHOR}",
                line + 1
            )));
        }
    }
    Ok(())
}

/// `target_size` is the budget for corpus-derived tokens; the reserved
/// inventory (specials, whitespace, bytes, forced verbalizers) comes on top.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize, scheme: Scheme) -> Result<Vocabulary> {
    if corpus.iter().all(|d| d.as_ref().trim().is_empty()) {
        return Err(Error::Build("corpus is empty".into()));
    }
    if target_size < 16 {
        return Err(Error::Build(format!("target size {target_size} below minimum 16")));
    }
    check_anchor_free(corpus.iter().map(AsRef::as_ref))?;

    let mut tokens = Vocabulary::reserved();
    let mut merges = Vec::new();
    let reserved: std::collections::HashSet<String> = tokens.iter().cloned().collect();

    // BTreeMap keeps counting order-independent of hash seeds.
    let mut pieces: BTreeMap<String, u64> = BTreeMap::new();
    let mut forms: BTreeMap<(String, bool), u64> = BTreeMap::new();
    for doc in corpus {
        for step in plan(doc.as_ref()) {
            if let Step::Content { text, attached, .. } = step {
                *pieces.entry(surface(text, attached)).or_default() += 1;
                *forms.entry((text.to_string(), attached)).or_default() += 1;
            }
        }
    }

    match scheme {
        Scheme::Whitespace => {
            let mut ranked: Vec<(String, u64)> = pieces
                .into_iter()
                .filter(|(t, _)| !reserved.contains(t))
                .collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            tokens.extend(ranked.into_iter().take(target_size).map(|(t, _)| t));
        }
        Scheme::BytePair => {
            let mut words: Vec<(Vec<String>, u64)> = forms
                .into_iter()
                .map(|((text, attached), n)| (initial_symbols(&text, attached), n))
                .collect();
            let mut alphabet: BTreeMap<String, u64> = BTreeMap::new();
            for (syms, n) in &words {
                for s in syms {
                    *alphabet.entry(s.clone()).or_default() += n;
                }
            }
            let mut ranked: Vec<(String, u64)> = alphabet
                .into_iter()
                .filter(|(t, _)| !reserved.contains(t))
                .collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let mut learned: Vec<String> = ranked.into_iter().take(target_size).map(|(t, _)| t).collect();
            let mut known: std::collections::HashSet<String> =
                reserved.iter().cloned().chain(learned.iter().cloned()).collect();
            while learned.len() < target_size {
                let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
                for (syms, n) in &words {
                    for w in syms.windows(2) {
                        if known.contains(&w[0]) && known.contains(&w[1]) {
                            *pairs.entry((w[0].clone(), w[1].clone())).or_default() += n;
                        }
                    }
                }
                // Highest count wins; BTreeMap order breaks ties lexicographically.
                let Some((pair, n)) = pairs
                    .into_iter()
                    .fold(None::<((String, String), u64)>, |best, (p, n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((p, n)),
                    })
                else {
                    break;
                };
                if n < 2 {
                    break;
                }
                let merged = merge_pair(&pair.0, &pair.1);
                for (syms, _) in words.iter_mut() {
                    let mut i = 0;
                    while i + 1 < syms.len() {
                        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
                            syms[i] = merged.clone();
                            syms.remove(i + 1);
                        }
                        i += 1;
                    }
                }
                if known.insert(merged.clone()) {
                    learned.push(merged);
                }
                merges.push(pair);
            }
            tokens.extend(learned);
        }
    }
    Vocabulary::assemble(scheme, tokens, merges)
}
