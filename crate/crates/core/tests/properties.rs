use maskwise::eval::restrict;
use maskwise::objective::{make_dummy_sample, make_mlm_sample, Objective, ObjectiveMixConfig, IGNORE};
use maskwise::tokenizer::{build_vocab, Scheme, Vocabulary};
use maskwise::verbalizer::VerbalizerSet;
use proptest::prelude::*;
use std::sync::OnceLock;

const LETTERS: [&str; 10] = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"];

fn vocab(scheme: Scheme) -> &'static Vocabulary {
    static WS: OnceLock<Vocabulary> = OnceLock::new();
    static BPE: OnceLock<Vocabulary> = OnceLock::new();
    let corpus = [
        "the quick brown fox jumps over the lazy dog .",
        "Answer: yes, no. Frühere Versionen (so dass) x+y",
        "QUESTION: what is it ? CHOICES: - A: red",
    ];
    match scheme {
        Scheme::Whitespace => WS.get_or_init(|| build_vocab(&corpus, 120, scheme).unwrap()),
        Scheme::BytePair => BPE.get_or_init(|| build_vocab(&corpus, 120, scheme).unwrap()),
    }
}

/// Reference argmax: highest score, ties to the lowest token id.
fn oracle_argmax(logits: &[f64], vset: &VerbalizerSet) -> String {
    let mut best: Option<&maskwise::verbalizer::Verbalizer> = None;
    for e in vset.entries() {
        let s = logits[e.id as usize];
        best = match best {
            None => Some(e),
            Some(b) => {
                let sb = logits[b.id as usize];
                if s > sb || (s == sb && e.id < b.id) {
                    Some(e)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.unwrap().label.clone()
}

fn letter_set(order: &[usize]) -> VerbalizerSet {
    let v = vocab(Scheme::Whitespace);
    VerbalizerSet::new(order.iter().map(|&i| (format!("class{i}"), LETTERS[i])), v).unwrap()
}

prop_compose! {
    /// Logits over the whole vocabulary, with few distinct values so ties occur.
    fn logits()(xs in prop::collection::vec(-4i32..4, 300)) -> Vec<f64> {
        xs.into_iter().map(|x| x as f64 * 0.5).collect()
    }
}

prop_compose! {
    fn subset_and_shuffle()(k in 2usize..=10)(
        picked in Just((0..10).collect::<Vec<_>>()).prop_shuffle().prop_map(move |v| v[..k].to_vec()),
        perm in Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
    ) -> (Vec<usize>, Vec<usize>) {
        (picked, perm)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn text_round_trips_through_both_schemes(s in "[a-zA-Z0-9 .,:!?()\n\tüé+\\-]{0,60}") {
        for scheme in [Scheme::Whitespace, Scheme::BytePair] {
            let v = vocab(scheme);
            prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s.clone());
        }
    }

    #[test]
    fn arbitrary_unicode_round_trips(s in any::<String>()) {
        let v = vocab(Scheme::Whitespace);
        prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
    }

    #[test]
    fn masking_keeps_specials_and_restores_originals(
        words in prop::collection::vec("[a-z]{1,6}", 2..30),
        seed in any::<u64>(),
        index in any::<u64>(),
    ) {
        let v = vocab(Scheme::Whitespace);
        let text = words.join(" ");
        let cfg = ObjectiveMixConfig { seed, ..ObjectiveMixConfig::default() };
        let original = maskwise::objective::frame(&text, v);
        let mlm = make_mlm_sample(&text, &cfg, v, index).unwrap();
        let dummy = make_dummy_sample(&text, &cfg, v, index).unwrap();
        prop_assert_eq!(mlm.objective, Objective::Mlm);
        prop_assert!(mlm.num_supervised() >= 1);
        prop_assert_eq!(&mlm.input_ids, &dummy.input_ids);
        for (i, &orig) in original.iter().enumerate() {
            let masked = mlm.input_ids[i] == v.mask_id();
            if v.is_special(orig) {
                prop_assert!(!masked && mlm.labels[i] == IGNORE);
            } else if masked {
                prop_assert_eq!(mlm.labels[i], orig);
                prop_assert_eq!(dummy.labels[i], v.mask_id());
            } else {
                prop_assert_eq!(mlm.input_ids[i], orig);
                prop_assert_eq!(mlm.labels[i], IGNORE);
                prop_assert_eq!(dummy.labels[i], IGNORE);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn argmax_ignores_verbalizer_order(l in logits(), (picked, perm) in subset_and_shuffle()) {
        let a = letter_set(&picked);
        let shuffled: Vec<usize> = perm.iter().map(|&i| picked[i]).collect();
        let b = letter_set(&shuffled);
        let pa = restrict(&l, &a).unwrap();
        let pb = restrict(&l, &b).unwrap();
        prop_assert_eq!(&pa.label, &pb.label);
        prop_assert_eq!(pa.label.clone(), oracle_argmax(&l, &a));
        for (label, p) in &pa.distribution {
            prop_assert!((p - pb.probability(label).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn raising_the_winner_or_lowering_a_loser_keeps_the_winner(
        l in logits(),
        (picked, _) in subset_and_shuffle(),
        bump in 0.0f64..10.0,
        which in any::<prop::sample::Index>(),
    ) {
        let set = letter_set(&picked);
        let won = restrict(&l, &set).unwrap();
        let mut up = l.clone();
        up[won.token_id as usize] += bump;
        let after = restrict(&up, &set).unwrap();
        prop_assert_eq!(&after.label, &won.label);
        prop_assert!(after.probability(&won.label).unwrap() >= won.probability(&won.label).unwrap());

        let loser = &set.entries()[which.index(set.len())];
        if loser.label != won.label {
            let mut down = l.clone();
            down[loser.id as usize] -= bump;
            prop_assert_eq!(restrict(&down, &set).unwrap().label, won.label.clone());
        }
    }

    #[test]
    fn negative_infinity_candidate_never_wins(
        l in logits(),
        (picked, _) in subset_and_shuffle(),
        which in any::<prop::sample::Index>(),
    ) {
        prop_assume!(picked.len() < 10);
        let set = letter_set(&picked);
        let before = restrict(&l, &set).unwrap();
        let extra = (0..10).find(|i| !picked.contains(i)).unwrap();
        let mut with = picked.clone();
        with.insert(which.index(with.len() + 1), extra);
        let mut l2 = l.clone();
        let extra_id = vocab(Scheme::Whitespace).id(LETTERS[extra]).unwrap();
        l2[extra_id as usize] = f64::NEG_INFINITY;
        let after = restrict(&l2, &letter_set(&with)).unwrap();
        prop_assert_eq!(&after.label, &before.label);
        prop_assert_eq!(after.probability(&format!("class{extra}")).unwrap(), 0.0);
    }
}
