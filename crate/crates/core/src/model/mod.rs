//! Pre-norm bidirectional transformer encoder with a tied MLM head and an
//! optional first-token classification head.

mod checkpoint;
mod forward;
pub(crate) mod ops;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{CheckpointProvenance, ModelCheckpoint, TrainingState};
pub use forward::{forward_classifier, forward_mlm, loss_and_grads, classifier_loss_and_grads, ClassSample, Mode};
pub use ops::softmax;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub tie_mlm_head: bool,
    pub num_classes: Option<usize>,
}

impl ModelConfig {
    /// 2 layers, 64 hidden, 4 heads, 256 FFN, 256 positions.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_seq_len: 256,
            dropout: 0.0,
            tie_mlm_head: true,
            num_classes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.num_heads == 0 || self.max_seq_len == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.num_classes == Some(0) {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    /// Untied output projection, `vocab × hidden`. `None` when tied.
    pub mlm_proj: Option<Vec<f64>>,
    pub mlm_bias: Vec<f64>,
    pub cls_w: Option<Vec<f64>>,
    pub cls_b: Option<Vec<f64>>,
}

/// Name, shape, and whether weight decay applies.
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (h, f, v) = (cfg.hidden_dim, cfg.ffn_dim, cfg.vocab_size);
        let z = |n: usize| vec![0.0; n];
        Params {
            tok_emb: z(v * h),
            pos_emb: z(cfg.max_seq_len * h),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams {
                    ln1_g: z(h),
                    ln1_b: z(h),
                    wq: z(h * h),
                    bq: z(h),
                    wk: z(h * h),
                    bk: z(h),
                    wv: z(h * h),
                    bv: z(h),
                    wo: z(h * h),
                    bo: z(h),
                    ln2_g: z(h),
                    ln2_b: z(h),
                    w1: z(h * f),
                    b1: z(f),
                    w2: z(f * h),
                    b2: z(h),
                })
                .collect(),
            lnf_g: z(h),
            lnf_b: z(h),
            mlm_proj: (!cfg.tie_mlm_head).then(|| z(v * h)),
            mlm_bias: z(v),
            cls_w: cfg.num_classes.map(|c| z(h * c)),
            cls_b: cfg.num_classes.map(z),
        }
    }

    /// Normal(0, 0.02) matrices and embeddings, unit LayerNorm gains, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Params::zeros(cfg);
        let mut rng = rng::rng(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let specs = p.specs(cfg);
        for (spec, t) in specs.iter().zip(p.slices_mut()) {
            if spec.name.contains("ln") && spec.name.ends_with("_g") {
                t.fill(1.0);
            } else if spec.decay {
                t.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
        p
    }

    pub fn specs(&self, cfg: &ModelConfig) -> Vec<TensorSpec> {
        let (h, f, v) = (cfg.hidden_dim, cfg.ffn_dim, cfg.vocab_size);
        let spec = |name: String, shape: Vec<usize>| TensorSpec {
            decay: shape.len() == 2,
            name,
            shape,
        };
        let mut out = vec![
            spec("tok_emb".into(), vec![v, h]),
            spec("pos_emb".into(), vec![cfg.max_seq_len, h]),
        ];
        for (i, _) in self.layers.iter().enumerate() {
            let l = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                spec(l("ln1_g"), vec![h]),
                spec(l("ln1_b"), vec![h]),
                spec(l("wq"), vec![h, h]),
                spec(l("bq"), vec![h]),
                spec(l("wk"), vec![h, h]),
                spec(l("bk"), vec![h]),
                spec(l("wv"), vec![h, h]),
                spec(l("bv"), vec![h]),
                spec(l("wo"), vec![h, h]),
                spec(l("bo"), vec![h]),
                spec(l("ln2_g"), vec![h]),
                spec(l("ln2_b"), vec![h]),
                spec(l("w1"), vec![h, f]),
                spec(l("b1"), vec![f]),
                spec(l("w2"), vec![f, h]),
                spec(l("b2"), vec![h]),
            ]);
        }
        out.push(spec("lnf_g".into(), vec![h]));
        out.push(spec("lnf_b".into(), vec![h]));
        if self.mlm_proj.is_some() {
            out.push(spec("mlm_proj".into(), vec![v, h]));
        }
        out.push(spec("mlm_bias".into(), vec![v]));
        if let Some(c) = cfg.num_classes {
            out.push(spec("cls_w".into(), vec![h, c]));
            out.push(spec("cls_b".into(), vec![c]));
        }
        out
    }

    /// Tensors in [`Params::specs`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.ln1_g[..],
                &l.ln1_b,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln2_g,
                &l.ln2_b,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        out.push(&self.lnf_g);
        out.push(&self.lnf_b);
        if let Some(p) = &self.mlm_proj {
            out.push(p);
        }
        out.push(&self.mlm_bias);
        if let (Some(w), Some(b)) = (&self.cls_w, &self.cls_b) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        if let Some(p) = &mut self.mlm_proj {
            out.push(p);
        }
        out.push(&mut self.mlm_bias);
        if let (Some(w), Some(b)) = (&mut self.cls_w, &mut self.cls_b) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.slices_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.slices().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Output projection used by the MLM head; the token embedding when tied.
    pub fn mlm_projection(&self) -> &[f64] {
        self.mlm_proj.as_deref().unwrap_or(&self.tok_emb)
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    /// Adds a freshly initialized classification head.
    pub fn attach_classifier(&mut self, cfg: &mut ModelConfig, num_classes: usize, seed: u64) {
        let mut rng = rng::rng(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let w = (0..cfg.hidden_dim * num_classes).map(|_| normal.sample(&mut rng)).collect();
        self.cls_w = Some(w);
        self.cls_b = Some(vec![0.0; num_classes]);
        cfg.num_classes = Some(num_classes);
    }
}

/// Draws a dropout keep-mask scaled by `1/(1-p)`.
pub(crate) fn dropout_mask<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}
