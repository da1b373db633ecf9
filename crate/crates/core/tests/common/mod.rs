#![allow(dead_code)]

use maskwise::model::{loss_and_grads, Mode, ModelConfig, Params};
use maskwise::objective::{Objective, TemplatedSample, IGNORE};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative error. Below it, central differences are
/// dominated by round-off (about 1e-12 absolute at this step).
pub const REL_FLOOR: f64 = 1e-6;

pub fn small_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        hidden_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        max_seq_len: 12,
        dropout: 0.0,
        tie_mlm_head: true,
        num_classes: None,
    }
}

/// Random sample obeying the label invariants of `objective`.
pub fn random_sample(rng: &mut ChaCha8Rng, vocab: usize, len: usize, mask_id: u32, objective: Objective) -> TemplatedSample {
    let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(8..vocab as u32)).collect();
    let mut labels = vec![IGNORE; len];
    match objective {
        Objective::Atp => {
            let p = rng.gen_range(1..len);
            ids[p] = mask_id;
            labels[p] = rng.gen_range(8..vocab as u32);
        }
        Objective::Mlm | Objective::Dummy => {
            for p in 1..len {
                if rng.gen::<f64>() < 0.3 || p == 1 {
                    labels[p] = if objective == Objective::Dummy { mask_id } else { ids[p] };
                    ids[p] = mask_id;
                }
            }
        }
    }
    TemplatedSample {
        attention_mask: vec![true; len],
        input_ids: ids,
        labels,
        objective,
    }
}

/// Richardson-extrapolated central difference of `f` along one scalar
/// parameter. Truncation error is O(h^4), so high-curvature components do
/// not swamp the comparison.
pub fn numeric_grad(work: &mut Params, ti: usize, j: usize, f: impl Fn(&Params) -> f64) -> f64 {
    let orig = work.slices()[ti][j];
    let mut central = |h: f64| {
        work.slices_mut()[ti][j] = orig + h;
        let up = f(work);
        work.slices_mut()[ti][j] = orig - h;
        let down = f(work);
        work.slices_mut()[ti][j] = orig;
        (up - down) / (2.0 * h)
    };
    let coarse = central(FD_STEP);
    let fine = central(FD_STEP / 2.0);
    (4.0 * fine - coarse) / 3.0
}

pub fn loss(p: &Params, cfg: &ModelConfig, batch: &[TemplatedSample]) -> f64 {
    loss_and_grads(p, cfg, batch, Mode::Eval).unwrap().0
}

/// Worst relative error between analytic and central-difference gradients
/// over every scalar parameter, with the offending tensor name.
pub fn max_gradient_error(cfg: &ModelConfig, params: &Params, batch: &[TemplatedSample]) -> (f64, String) {
    let (_, grads) = loss_and_grads(params, cfg, batch, Mode::Eval).unwrap();
    let specs = params.specs(cfg);
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|t| t.to_vec()).collect();
    let mut work = params.clone();
    let mut worst = (0.0, String::new());
    for (ti, spec) in specs.iter().enumerate() {
        for (j, &a) in analytic[ti].iter().enumerate() {
            let numeric = numeric_grad(&mut work, ti, j, |w| loss(w, cfg, batch));
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{}[{j}] analytic {a:e} numeric {numeric:e}", spec.name));
            }
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod fixtures {
    use maskwise::data::Record;
    use maskwise::model::{ClassSample, ModelCheckpoint, ModelConfig};
    use maskwise::objective::{frame, make_atp_sample, mix, ObjectiveMixConfig, TemplatedSample};
    use maskwise::synth;
    use maskwise::templating::render_train;
    use maskwise::tokenizer::{build_vocab, Scheme, Vocabulary};

    pub fn vocab() -> Vocabulary {
        build_vocab(&synth::vocab_corpus(), 400, Scheme::Whitespace).unwrap()
    }

    pub fn records(examples: Vec<maskwise::data::InstructionExample>) -> Vec<Record> {
        examples.into_iter().enumerate().map(|(i, e)| Record::new(e, i + 1)).collect()
    }

    /// The cloze set under the default objective mix.
    pub fn cloze_mix(vocab: &Vocabulary, n: usize, seed: u64) -> (Vec<Record>, Vec<TemplatedSample>) {
        let recs = records(synth::cloze_examples(n, seed));
        let cfg = ObjectiveMixConfig { seed, ..ObjectiveMixConfig::default() };
        let samples = mix(&recs, &cfg, vocab).unwrap();
        (recs, samples)
    }

    /// ATP view of every record, for measuring answer accuracy.
    pub fn atp_view(vocab: &Vocabulary, recs: &[Record]) -> Vec<TemplatedSample> {
        recs.iter()
            .map(|r| make_atp_sample(&render_train(&r.example, vocab).unwrap(), &r.example.answer, vocab).unwrap())
            .collect()
    }

    pub fn tiny_config(vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 32,
            ..ModelConfig::toy(vocab.len())
        }
    }

    pub fn tiny(vocab: &Vocabulary, seed: u64) -> ModelCheckpoint {
        ModelCheckpoint::new(tiny_config(vocab), seed).unwrap()
    }

    /// Two topics, separable by their content word.
    pub fn two_class(vocab: &Vocabulary, n: usize, seed: u64) -> Vec<ClassSample> {
        synth::topic_items(&[1, 2], n, seed)
            .into_iter()
            .map(|it| {
                let ids = frame(&it.text, vocab);
                ClassSample {
                    attention_mask: vec![true; ids.len()],
                    input_ids: ids,
                    label: usize::from(it.label == "fruit"),
                }
            })
            .collect()
    }
}
