//! Synthetic corpora and task families for desk-scale experiments.
//!
//! Every multiple-choice family shares one latent rule: the correct option
//! is the only one whose word occurs in the question. Families differ in
//! word category and phrasing, so a held-out family tests transfer of the
//! rule rather than memorized content.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::InstructionExample;
use crate::eval::{ClsItem, McItem};
use crate::rng;
use crate::templating::ANSWER_SLOT;

pub struct Category {
    pub name: &'static str,
    pub words: &'static [&'static str],
}

pub const CATEGORIES: [Category; 9] = [
    Category {
        name: "color",
        words: &["red", "blue", "green", "yellow", "purple", "orange", "black", "white", "brown", "pink", "gray", "silver"],
    },
    Category {
        name: "animal",
        words: &["cat", "dog", "horse", "mouse", "tiger", "lion", "rabbit", "wolf", "bear", "fox", "goat", "sheep"],
    },
    Category {
        name: "fruit",
        words: &["apple", "banana", "cherry", "grape", "lemon", "mango", "peach", "pear", "plum", "melon", "kiwi", "lime"],
    },
    Category {
        name: "city",
        words: &["paris", "london", "berlin", "madrid", "rome", "vienna", "prague", "dublin", "oslo", "lisbon", "athens", "warsaw"],
    },
    Category {
        name: "person",
        words: &["alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry", "irene", "jack", "kate", "leo"],
    },
    Category {
        name: "tool",
        words: &["hammer", "saw", "drill", "wrench", "shovel", "rake", "chisel", "ladder", "pliers", "axe", "spade", "brush"],
    },
    Category {
        name: "instrument",
        words: &["piano", "violin", "guitar", "drum", "flute", "harp", "cello", "trumpet", "banjo", "organ", "oboe", "tuba"],
    },
    Category {
        name: "sport",
        words: &["tennis", "soccer", "hockey", "golf", "rugby", "boxing", "cricket", "rowing", "skiing", "judo", "karate", "polo"],
    },
    Category {
        name: "job",
        words: &["doctor", "nurse", "farmer", "baker", "pilot", "lawyer", "teacher", "painter", "sailor", "miner", "judge", "chef"],
    },
];

/// Question phrasings; `{x}` is the answer word, `{p}` a person, `{c}` a city.
pub struct Family {
    pub name: &'static str,
    pub category: usize,
    pub templates: &'static [&'static str],
}

pub const FAMILIES: [Family; 9] = [
    Family {
        name: "paint",
        category: 0,
        templates: &["{p} painted the door {x} in {c}. Which color did {p} use?", "The {x} car belongs to {p}. What color is it?"],
    },
    Family {
        name: "pets",
        category: 1,
        templates: &["{p} keeps a {x} at home in {c}. Which animal does {p} keep?", "A {x} was seen near the river. Which animal was seen?"],
    },
    Family {
        name: "market",
        category: 2,
        templates: &["{p} bought a {x} at the market. Which fruit was bought?", "The basket in {c} held one {x}. What fruit was in the basket?"],
    },
    Family {
        name: "travel",
        category: 3,
        templates: &["{p} flew to {x} last spring. Which city did {p} visit?", "The train stopped in {x} at noon. Where did the train stop?"],
    },
    Family {
        name: "meeting",
        category: 4,
        templates: &["In {c} the letter was written by {x}. Who wrote the letter?", "{x} won the prize this year. Who won the prize?"],
    },
    Family {
        name: "workshop",
        category: 5,
        templates: &["{p} fixed the shelf with a {x}. Which tool was used?", "The {x} lay on the bench in {c}. Which tool lay on the bench?"],
    },
    Family {
        name: "concert",
        category: 6,
        templates: &["{p} played the {x} in {c}. Which instrument did {p} play?", "Everyone heard the {x} last night. Which instrument was heard?"],
    },
    Family {
        name: "games",
        category: 7,
        templates: &["{p} trains for {x} every week. Which sport does {p} train for?", "The {x} match in {c} was long. Which sport was played?"],
    },
    Family {
        name: "careers",
        category: 8,
        templates: &["{p} works as a {x} in {c}. What is the job of {p}?", "The new {x} arrived this morning. Who arrived this morning?"],
    },
];

/// Index of the family held out of instruction tuning.
pub const HELDOUT_FAMILY: usize = 8;

/// Short instructions keep synthetic prompts compact.
pub const SYNTH_INSTRUCTIONS: &str = "Pick the right option.";

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn fill(template: &str, x: &str, rng: &mut ChaCha8Rng) -> String {
    let p = pick(rng, CATEGORIES[4].words);
    let c = pick(rng, CATEGORIES[3].words);
    template.replace("{x}", x).replace("{p}", p).replace("{c}", c)
}

/// Balanced items: the gold position cycles through every slot.
pub fn mc_items(family: &Family, n: usize, n_choices: usize, seed: u64) -> Vec<McItem> {
    let words = CATEGORIES[family.category].words;
    assert!(n_choices <= words.len(), "not enough words for {n_choices} choices");
    let mut rng = rng::rng(rng::seed_for_tag(seed, family.name));
    (0..n)
        .map(|i| {
            let mut options: Vec<&str> = words.choose_multiple(&mut rng, n_choices).copied().collect();
            options.shuffle(&mut rng);
            let answer_index = i % n_choices;
            let answer = options[answer_index];
            let template = family.templates[rng.gen_range(0..family.templates.len())];
            McItem {
                question: fill(template, answer, &mut rng),
                choices: options.iter().map(|s| s.to_string()).collect(),
                answer_index,
                subject: Some(family.name.to_string()),
            }
        })
        .collect()
}

/// The instruction-record input for an item, ending at the answer slot.
pub fn mc_input(item: &McItem, instructions: &str) -> String {
    let lines: Vec<String> = item
        .choices
        .iter()
        .zip('A'..)
        .map(|(c, l)| format!("- {l}: {c}"))
        .collect();
    format!(
        "{instructions}\n\nQUESTION: {}\n\nCHOICES:\n{}\n\n{ANSWER_SLOT}",
        item.question,
        lines.join("\n")
    )
}

pub fn mc_instruction_examples(family: &Family, n: usize, n_choices: usize, seed: u64) -> Vec<InstructionExample> {
    mc_items(family, n, n_choices, seed)
        .iter()
        .map(|item| InstructionExample {
            source_dataset: format!("synth_{}", family.name),
            input: mc_input(item, SYNTH_INSTRUCTIONS),
            answer: ((b'A' + item.answer_index as u8) as char).to_string(),
            choices: Some(item.choices.clone()),
        })
        .collect()
}

/// Instruction records from every family except `heldout`, interleaved.
pub fn instruct_mix(heldout: usize, per_family: usize, seed: u64) -> Vec<InstructionExample> {
    let per: Vec<Vec<InstructionExample>> = FAMILIES
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != heldout)
        .map(|(_, f)| mc_instruction_examples(f, per_family, 4, seed))
        .collect();
    let mut out = Vec::with_capacity(per.len() * per_family);
    for i in 0..per_family {
        out.extend(per.iter().map(|f| f[i].clone()));
    }
    out
}

/// Which pretraining corpus to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    /// Sentences mixing every word category, half of them lettered lists.
    Diverse,
    /// Colors and people only, in two fixed frames.
    Narrow,
}

const DIVERSE_FRAMES: [&str; 6] = [
    "{person} saw a {color} {animal} near {city} .",
    "{person} ate a {fruit} after {sport} practice .",
    "the {job} from {city} plays the {instrument} .",
    "{person} keeps a {tool} and a {fruit} in the shed .",
    "a {color} {instrument} was sold in {city} to the {job} .",
    "{person} and the {animal} watched {sport} with a {job} .",
];

const NARROW_FRAMES: [&str; 2] = ["{person} likes {color} .", "the wall is {color} and {color} ."];

fn fill_frame(frame: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = frame.to_string();
    for cat in &CATEGORIES {
        let slot = format!("{{{}}}", cat.name);
        while let Some(at) = out.find(&slot) {
            out.replace_range(at..at + slot.len(), pick(rng, cat.words));
        }
    }
    out
}

/// A lettered list of words from mixed categories followed by sentences
/// that refer back to items by letter.
fn catalog(rng: &mut ChaCha8Rng) -> String {
    let k = rng.gen_range(2..=5);
    let mut cats: Vec<usize> = (0..CATEGORIES.len()).collect();
    cats.shuffle(rng);
    let words: Vec<&str> = cats[..k].iter().map(|&c| pick(rng, CATEGORIES[c].words)).collect();
    let lines: Vec<String> = words.iter().zip('A'..).map(|(w, l)| format!("- {l}: {w}")).collect();
    let mut refs: Vec<usize> = (0..k).collect();
    refs.shuffle(rng);
    let refs: Vec<String> = refs[..rng.gen_range(1..=k.min(3))]
        .iter()
        .map(|&j| format!("{} is {} .", words[j], (b'A' + j as u8) as char))
        .collect();
    format!("{}\n{}", lines.join("\n"), refs.join(" "))
}

pub fn corpus(kind: CorpusKind, n: usize, seed: u64) -> Vec<String> {
    let mut rng = rng::rng(rng::seed_for_tag(seed, "corpus"));
    (0..n)
        .map(|_| match kind {
            CorpusKind::Diverse if rng.gen_bool(0.5) => catalog(&mut rng),
            CorpusKind::Diverse => fill_frame(DIVERSE_FRAMES[rng.gen_range(0..DIVERSE_FRAMES.len())], &mut rng),
            CorpusKind::Narrow => fill_frame(NARROW_FRAMES[rng.gen_range(0..NARROW_FRAMES.len())], &mut rng),
        })
        .collect()
}

/// Text covering every token the synthetic tasks use, for vocab building.
pub fn vocab_corpus() -> Vec<String> {
    let mut docs: Vec<String> = corpus(CorpusKind::Diverse, 200, 0);
    for f in &FAMILIES {
        for item in mc_items(f, 10, 4, 0) {
            docs.push(mc_input(&item, SYNTH_INSTRUCTIONS));
        }
        docs.extend(CATEGORIES[f.category].words.iter().map(|w| w.to_string()));
    }
    docs.extend(CATEGORIES.iter().map(|c| c.name.to_string()));
    docs.push(crate::templating::MC_INSTRUCTIONS.to_string());
    docs.push(crate::templating::CLS_INSTRUCTIONS.to_string());
    docs
}

/// Cloze records: a person and a color; the answer is the color.
pub fn cloze_examples(n: usize, seed: u64) -> Vec<InstructionExample> {
    let mut rng = rng::rng(rng::seed_for_tag(seed, "cloze"));
    let colors = CATEGORIES[0].words;
    (0..n)
        .map(|i| {
            let p = pick(&mut rng, CATEGORIES[4].words);
            let a = pick(&mut rng, CATEGORIES[1].words);
            let color = colors[i % colors.len()];
            InstructionExample {
                source_dataset: "synth_cloze".into(),
                input: format!("{p} has a {color} {a} . What color is the {a} of {p} ?"),
                answer: color.to_string(),
                choices: None,
            }
        })
        .collect()
}

/// Topic items: the label is the category of the one content word.
pub fn topic_items(categories: &[usize], n: usize, seed: u64) -> Vec<ClsItem> {
    let mut rng = rng::rng(rng::seed_for_tag(seed, "topic"));
    (0..n)
        .map(|i| {
            let cat = &CATEGORIES[categories[i % categories.len()]];
            let w = pick(&mut rng, cat.words);
            let p = pick(&mut rng, CATEGORIES[4].words);
            ClsItem {
                text: format!("{p} talked about the {w} all day ."),
                label: cat.name.to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_word_is_unique_to_the_question() {
        for f in &FAMILIES {
            for item in mc_items(f, 40, 4, 9) {
                let words: Vec<&str> = item
                    .question
                    .split(|c: char| !c.is_alphanumeric())
                    .collect();
                let present: Vec<usize> = (0..4).filter(|&j| words.contains(&item.choices[j].as_str())).collect();
                assert_eq!(present, vec![item.answer_index], "{}: {}", f.name, item.question);
            }
        }
    }

    #[test]
    fn gold_positions_are_balanced() {
        let items = mc_items(&FAMILIES[0], 400, 4, 1);
        for k in 0..4 {
            assert_eq!(items.iter().filter(|i| i.answer_index == k).count(), 100);
        }
    }

    #[test]
    fn corpora_are_deterministic() {
        assert_eq!(corpus(CorpusKind::Diverse, 20, 3), corpus(CorpusKind::Diverse, 20, 3));
        assert_ne!(corpus(CorpusKind::Diverse, 20, 3), corpus(CorpusKind::Diverse, 20, 4));
    }
}
