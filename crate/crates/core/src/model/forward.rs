use rand_chacha::ChaCha8Rng;

use super::ops::{self, gemm, layer_norm, layer_norm_backward, linear, linear_backward, rm, tr, LayerNormCache};
use super::{dropout_mask, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::objective::{TemplatedSample, IGNORE};

/// Dropout is active only in `Train` mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSample {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    pub label: usize,
}

struct LayerTrace {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    ln2: LayerNormCache,
    b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    drop_ffn: Option<Vec<f64>>,
}

struct Trace {
    layers: Vec<LayerTrace>,
    lnf: LayerNormCache,
    hidden: Vec<f64>,
}

fn check_input(cfg: &ModelConfig, ids: &[u32], mask: &[bool]) -> Result<()> {
    if ids.len() > cfg.max_seq_len {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            ids.len(),
            cfg.max_seq_len
        )));
    }
    if ids.is_empty() || mask.len() != ids.len() {
        return Err(Error::Shape("empty sequence or attention mask length mismatch".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Shape("sequence has no real tokens".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

fn encode(p: &Params, cfg: &ModelConfig, ids: &[u32], mask: &[bool], mode: &mut Mode) -> Trace {
    let (t, h, f) = (ids.len(), cfg.hidden_dim, cfg.ffn_dim);
    let (nh, dh) = (cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; t * h];
    for (i, &id) in ids.iter().enumerate() {
        let e = &p.tok_emb[id as usize * h..(id as usize + 1) * h];
        let pe = &p.pos_emb[i * h..(i + 1) * h];
        for j in 0..h {
            x[i * h + j] = e[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (a, ln1) = layer_norm(&x, h, &lp.ln1_g, &lp.ln1_b);
        let q = linear(&a, t, &lp.wq, &lp.bq, h, h);
        let k = linear(&a, t, &lp.wk, &lp.bk, h, h);
        let v = linear(&a, t, &lp.wv, &lp.bv, h, h);
        let mut probs = vec![0.0; nh * t * t];
        let mut ctx = vec![0.0; t * h];
        for head in 0..nh {
            let off = head * dh;
            let ph = &mut probs[head * t * t..(head + 1) * t * t];
            gemm(t, dh, t, &q[off..], rm(h), &k[off..], tr(h), ph, rm(t), false);
            for row in ph.chunks_exact_mut(t) {
                for (s, &real) in row.iter_mut().zip(mask) {
                    *s = if real { *s * scale } else { f64::NEG_INFINITY };
                }
                ops::softmax_in_place(row);
            }
            gemm(t, t, dh, ph, rm(t), &v[off..], rm(h), &mut ctx[off..], rm(h), false);
        }
        let mut o = linear(&ctx, t, &lp.wo, &lp.bo, h, h);
        let drop_attn = match mode {
            Mode::Train(rng) if cfg.dropout > 0.0 => {
                let m = dropout_mask(t * h, cfg.dropout, *rng);
                o.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            }
            _ => None,
        };
        for (xv, ov) in x.iter_mut().zip(&o) {
            *xv += ov;
        }

        let (b, ln2) = layer_norm(&x, h, &lp.ln2_g, &lp.ln2_b);
        let u = linear(&b, t, &lp.w1, &lp.b1, h, f);
        let g: Vec<f64> = u.iter().map(|&z| ops::gelu(z)).collect();
        let mut y = linear(&g, t, &lp.w2, &lp.b2, f, h);
        let drop_ffn = match mode {
            Mode::Train(rng) if cfg.dropout > 0.0 => {
                let m = dropout_mask(t * h, cfg.dropout, *rng);
                y.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            }
            _ => None,
        };
        for (xv, yv) in x.iter_mut().zip(&y) {
            *xv += yv;
        }
        layers.push(LayerTrace {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            drop_attn,
            ln2,
            b,
            u,
            g,
            drop_ffn,
        });
    }
    let (hidden, lnf) = layer_norm(&x, h, &p.lnf_g, &p.lnf_b);
    Trace { layers, lnf, hidden }
}

/// Backpropagates `d_hidden` (gradient w.r.t. the final normalized states)
/// into `grads`.
fn encode_backward(p: &Params, cfg: &ModelConfig, ids: &[u32], trace: &Trace, d_hidden: &[f64], grads: &mut Params) {
    let (t, h, f) = (ids.len(), cfg.hidden_dim, cfg.ffn_dim);
    let (nh, dh) = (cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = layer_norm_backward(d_hidden, h, &trace.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

    for (li, (lp, lt)) in p.layers.iter().zip(&trace.layers).enumerate().rev() {
        let lg = &mut grads.layers[li];

        // feed-forward branch
        let mut dy = dx.clone();
        if let Some(m) = &lt.drop_ffn {
            dy.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let mut dg = linear_backward(&lt.g, &dy, t, &lp.w2, f, h, &mut lg.w2, &mut lg.b2);
        for (d, &z) in dg.iter_mut().zip(&lt.u) {
            *d *= ops::gelu_grad(z);
        }
        let db = linear_backward(&lt.b, &dg, t, &lp.w1, h, f, &mut lg.w1, &mut lg.b1);
        let dln2 = layer_norm_backward(&db, h, &lt.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);
        for (d, e) in dx.iter_mut().zip(&dln2) {
            *d += e;
        }

        // attention branch
        let mut do_ = dx.clone();
        if let Some(m) = &lt.drop_attn {
            do_.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let dctx = linear_backward(&lt.ctx, &do_, t, &lp.wo, h, h, &mut lg.wo, &mut lg.bo);
        let mut dq = vec![0.0; t * h];
        let mut dk = vec![0.0; t * h];
        let mut dv = vec![0.0; t * h];
        let mut dp = vec![0.0; t * t];
        for head in 0..nh {
            let off = head * dh;
            let ph = &lt.probs[head * t * t..(head + 1) * t * t];
            gemm(t, dh, t, &dctx[off..], rm(h), &lt.v[off..], tr(h), &mut dp, rm(t), false);
            gemm(t, t, dh, ph, tr(t), &dctx[off..], rm(h), &mut dv[off..], rm(h), false);
            for (prow, drow) in ph.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (d, &pv) in drow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot) * scale;
                }
            }
            gemm(t, t, dh, &dp, rm(t), &lt.k[off..], rm(h), &mut dq[off..], rm(h), false);
            gemm(t, t, dh, &dp, tr(t), &lt.q[off..], rm(h), &mut dk[off..], rm(h), false);
        }
        let mut da = linear_backward(&lt.a, &dq, t, &lp.wq, h, h, &mut lg.wq, &mut lg.bq);
        let dak = linear_backward(&lt.a, &dk, t, &lp.wk, h, h, &mut lg.wk, &mut lg.bk);
        let dav = linear_backward(&lt.a, &dv, t, &lp.wv, h, h, &mut lg.wv, &mut lg.bv);
        for ((d, x1), x2) in da.iter_mut().zip(&dak).zip(&dav) {
            *d += x1 + x2;
        }
        let dln1 = layer_norm_backward(&da, h, &lt.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        for (d, e) in dx.iter_mut().zip(&dln1) {
            *d += e;
        }
    }

    for (i, &id) in ids.iter().enumerate() {
        let row = &dx[i * h..(i + 1) * h];
        let te = &mut grads.tok_emb[id as usize * h..(id as usize + 1) * h];
        te.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        let pe = &mut grads.pos_emb[i * h..(i + 1) * h];
        pe.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
}

fn gather_rows(x: &[f64], dim: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().flat_map(|&r| x[r * dim..(r + 1) * dim].iter().copied()).collect()
}

fn mlm_head(p: &Params, cfg: &ModelConfig, hidden_rows: &[f64], n: usize) -> Vec<f64> {
    let (h, v) = (cfg.hidden_dim, cfg.vocab_size);
    let mut logits = Vec::with_capacity(n * v);
    for _ in 0..n {
        logits.extend_from_slice(&p.mlm_bias);
    }
    gemm(n, h, v, hidden_rows, rm(h), p.mlm_projection(), tr(h), &mut logits, rm(v), true);
    logits
}

/// MLM logits at the given positions only.
pub(crate) fn mlm_logits_at(
    p: &Params,
    cfg: &ModelConfig,
    ids: &[u32],
    mask: &[bool],
    positions: &[usize],
) -> Result<Vec<Vec<f64>>> {
    check_input(cfg, ids, mask)?;
    if !p.all_finite() {
        return Err(Error::Numerics("non-finite parameter".into()));
    }
    let trace = encode(p, cfg, ids, mask, &mut Mode::Eval);
    let rows = gather_rows(&trace.hidden, cfg.hidden_dim, positions);
    let logits = mlm_head(p, cfg, &rows, positions.len());
    Ok(logits.chunks_exact(cfg.vocab_size).map(<[f64]>::to_vec).collect())
}

/// Per-position vocabulary logits in evaluation mode.
pub fn forward_mlm(p: &Params, cfg: &ModelConfig, sample: &TemplatedSample) -> Result<Vec<Vec<f64>>> {
    let positions: Vec<usize> = (0..sample.len()).collect();
    mlm_logits_at(p, cfg, &sample.input_ids, &sample.attention_mask, &positions)
}

/// Class logits from the first-token representation.
pub fn forward_classifier(p: &Params, cfg: &ModelConfig, ids: &[u32], mask: &[bool]) -> Result<Vec<f64>> {
    let (Some(w), Some(b), Some(c)) = (&p.cls_w, &p.cls_b, cfg.num_classes) else {
        return Err(Error::Config("model has no classification head".into()));
    };
    check_input(cfg, ids, mask)?;
    if !p.all_finite() {
        return Err(Error::Numerics("non-finite parameter".into()));
    }
    let trace = encode(p, cfg, ids, mask, &mut Mode::Eval);
    Ok(linear(&trace.hidden[..cfg.hidden_dim], 1, w, b, cfg.hidden_dim, c))
}

/// Mean cross-entropy over every supervised position in the batch, and its
/// gradient for every parameter.
pub fn loss_and_grads(
    p: &Params,
    cfg: &ModelConfig,
    batch: &[TemplatedSample],
    mut mode: Mode,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Sample("empty batch".into()));
    }
    let mut total = 0usize;
    for s in batch {
        check_input(cfg, &s.input_ids, &s.attention_mask)?;
        if s.labels.len() != s.len() {
            return Err(Error::Sample("labels length differs from input length".into()));
        }
        let n = s.num_supervised();
        if n == 0 {
            return Err(Error::Sample("sample has no supervised position".into()));
        }
        if let Some((_, l)) = s.supervised().find(|&(_, l)| l as usize >= cfg.vocab_size) {
            return Err(Error::Sample(format!("label {l} outside vocabulary")));
        }
        total += n;
    }
    let (h, v) = (cfg.hidden_dim, cfg.vocab_size);
    let norm = 1.0 / total as f64;
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let trace = encode(p, cfg, &s.input_ids, &s.attention_mask, &mut mode);
        let (positions, labels): (Vec<usize>, Vec<u32>) = s.supervised().unzip();
        let n = positions.len();
        let rows = gather_rows(&trace.hidden, h, &positions);
        let mut dlogits = mlm_head(p, cfg, &rows, n);
        for (row, &label) in dlogits.chunks_exact_mut(v).zip(&labels) {
            loss += ops::log_sum_exp(row) - row[label as usize];
            ops::softmax_in_place(row);
            row[label as usize] -= 1.0;
            row.iter_mut().for_each(|d| *d *= norm);
        }
        for row in dlogits.chunks_exact(v) {
            grads.mlm_bias.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let mut drows = vec![0.0; n * h];
        gemm(n, v, h, &dlogits, rm(v), p.mlm_projection(), rm(h), &mut drows, rm(h), false);
        let dproj = match &mut grads.mlm_proj {
            Some(d) => d,
            None => &mut grads.tok_emb,
        };
        gemm(v, n, h, &dlogits, tr(v), &rows, rm(h), dproj, rm(h), true);
        let mut d_hidden = vec![0.0; s.len() * h];
        for (r, &pos) in positions.iter().enumerate() {
            d_hidden[pos * h..(pos + 1) * h].copy_from_slice(&drows[r * h..(r + 1) * h]);
        }
        encode_backward(p, cfg, &s.input_ids, &trace, &d_hidden, &mut grads);
    }
    debug_assert!(batch.iter().all(|s| s.labels.iter().all(|&l| l == IGNORE || (l as usize) < v)));
    Ok((loss * norm, grads))
}

/// Mean class cross-entropy over the batch, and gradients.
pub fn classifier_loss_and_grads(
    p: &Params,
    cfg: &ModelConfig,
    batch: &[ClassSample],
    mut mode: Mode,
) -> Result<(f64, Params)> {
    let (Some(w), Some(c)) = (&p.cls_w, cfg.num_classes) else {
        return Err(Error::Config("model has no classification head".into()));
    };
    if batch.is_empty() {
        return Err(Error::Sample("empty batch".into()));
    }
    for s in batch {
        check_input(cfg, &s.input_ids, &s.attention_mask)?;
        if s.label >= c {
            return Err(Error::Sample(format!("class {} outside {c} classes", s.label)));
        }
    }
    let h = cfg.hidden_dim;
    let norm = 1.0 / batch.len() as f64;
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let trace = encode(p, cfg, &s.input_ids, &s.attention_mask, &mut mode);
        let pooled = &trace.hidden[..h];
        let mut dl = linear(pooled, 1, w, p.cls_b.as_ref().unwrap(), h, c);
        loss += ops::log_sum_exp(&dl) - dl[s.label];
        ops::softmax_in_place(&mut dl);
        dl[s.label] -= 1.0;
        dl.iter_mut().for_each(|d| *d *= norm);
        let dpooled = linear_backward(
            pooled,
            &dl,
            1,
            w,
            h,
            c,
            grads.cls_w.as_mut().unwrap(),
            grads.cls_b.as_mut().unwrap(),
        );
        let mut d_hidden = vec![0.0; s.input_ids.len() * h];
        d_hidden[..h].copy_from_slice(&dpooled);
        encode_backward(p, cfg, &s.input_ids, &trace, &d_hidden, &mut grads);
    }
    Ok((loss * norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Objective;

    fn cfg(v: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: v,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            dropout: 0.0,
            tie_mlm_head: true,
            num_classes: Some(3),
        }
    }

    fn sample(ids: Vec<u32>, labels: Vec<u32>) -> TemplatedSample {
        TemplatedSample {
            attention_mask: vec![true; ids.len()],
            input_ids: ids,
            labels,
            objective: Objective::Mlm,
        }
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let c = cfg(12);
        let p = Params::zeros(&c);
        let logits = forward_mlm(&p, &c, &sample(vec![1, 2, 3], vec![IGNORE; 3])).unwrap();
        for row in logits {
            assert!(row.iter().all(|&v| v == row[0]));
        }
        let cls = forward_classifier(&p, &c, &[1, 2], &[true, true]).unwrap();
        assert!(cls.iter().all(|&v| v == cls[0]));
    }

    #[test]
    fn overlong_and_bad_ids_are_shape_errors() {
        let c = cfg(12);
        let p = Params::init(&c, 0);
        let long = sample(vec![1; 17], vec![IGNORE; 17]);
        assert!(matches!(forward_mlm(&p, &c, &long), Err(Error::Shape(_))));
        let bad = sample(vec![12], vec![IGNORE]);
        assert!(matches!(forward_mlm(&p, &c, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_parameter_is_numerics_error() {
        let c = cfg(12);
        let mut p = Params::init(&c, 0);
        p.layers[0].w1[3] = f64::NAN;
        let s = sample(vec![1, 2], vec![IGNORE; 2]);
        assert!(matches!(forward_mlm(&p, &c, &s), Err(Error::Numerics(_))));
    }

    #[test]
    fn missing_head_is_config_error() {
        let mut c = cfg(12);
        c.num_classes = None;
        let p = Params::init(&c, 0);
        assert!(matches!(forward_classifier(&p, &c, &[1], &[true]), Err(Error::Config(_))));
    }

    #[test]
    fn unsupervised_sample_rejected() {
        let c = cfg(12);
        let p = Params::init(&c, 0);
        let s = sample(vec![1, 2], vec![IGNORE; 2]);
        assert!(matches!(loss_and_grads(&p, &c, &[s], Mode::Eval), Err(Error::Sample(_))));
    }

    #[test]
    fn tied_head_follows_embedding() {
        let c = cfg(12);
        let mut p = Params::init(&c, 0);
        let s = sample(vec![1, 2], vec![IGNORE; 2]);
        let before = forward_mlm(&p, &c, &s).unwrap();
        p.tok_emb[7 * 8] += 1.0;
        let after = forward_mlm(&p, &c, &s).unwrap();
        assert_ne!(before[0][7], after[0][7]);
        assert_eq!(p.mlm_projection()[7 * 8], p.tok_emb[7 * 8]);
    }
}
