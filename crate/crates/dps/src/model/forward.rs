//! Forward pass. Pre-layer-norm decoder blocks, learned absolute
//! positional embeddings, GELU feed-forward, untied output head.
//!
//! Head ablation scales head (l, k)'s post-attention output vector by
//! `(1 - s_{l,k})` immediately before the layer's output projection. With
//! `mask_start > 0` the scaling only applies to positions at or past
//! `mask_start`, which restricts masking to decode steps.

use crate::error::{DpsError, Result};
use crate::math;
use crate::tokenizer::{Example, Role, Tokenizer, TokenSequence};

use super::config::SuppressionMap;
use super::ModelCheckpoint;

/// Per-position logit rows, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRows {
    pub vocab_size: usize,
    pub data: Vec<f32>,
}

impl LogitRows {
    pub fn num_rows(&self) -> usize {
        self.data.len() / self.vocab_size
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn last(&self) -> &[f32] {
        self.row(self.num_rows() - 1)
    }
}

/// Intermediate activations of one block, kept for backpropagation.
pub struct LayerCache {
    pub x_in: Vec<f32>,
    pub a: Vec<f32>,
    pub inv1: Vec<f32>,
    pub q: Vec<f32>,
    pub k: Vec<f32>,
    pub v: Vec<f32>,
    pub att: Vec<f32>, // H * S * S softmax rows
    pub ctx: Vec<f32>,
    pub x_mid: Vec<f32>,
    pub b: Vec<f32>,
    pub inv2: Vec<f32>,
    pub u: Vec<f32>,
    pub g: Vec<f32>,
}

pub struct ForwardCache {
    pub ids: Vec<u32>,
    pub layers: Vec<LayerCache>,
    pub x_final: Vec<f32>,
    pub h: Vec<f32>,
    pub invf: Vec<f32>,
}

pub struct ForwardOutput {
    pub logits: LogitRows,
    /// Post-final-layer-norm hidden states, row-major (S, d_model).
    pub final_hidden: Vec<f32>,
    pub cache: Option<ForwardCache>,
}

pub fn forward(
    ckpt: &ModelCheckpoint,
    tokens: &TokenSequence,
    suppression: Option<&SuppressionMap>,
    mask_start: usize,
    want_cache: bool,
) -> Result<ForwardOutput> {
    let cfg = &ckpt.config;
    let s_len = tokens.len();
    if s_len == 0 {
        return Err(DpsError::Input("empty token sequence".into()));
    }
    if s_len > cfg.max_seq_len {
        return Err(DpsError::SequenceTooLong {
            len: s_len,
            max: cfg.max_seq_len,
        });
    }
    if let Some(sup) = suppression {
        sup.validate(cfg)?;
    }
    for &id in &tokens.ids {
        if id as usize >= cfg.vocab_size {
            return Err(DpsError::Input(format!(
                "token id {id} outside vocabulary of size {}",
                cfg.vocab_size
            )));
        }
    }

    let d = cfg.d_model;
    let dh = cfg.d_head;
    let nh = cfg.num_heads;
    let p = &ckpt.params;

    let mut x = vec![0.0f32; s_len * d];
    for (t, &id) in tokens.ids.iter().enumerate() {
        let tok = &p.tok_emb[id as usize * d..(id as usize + 1) * d];
        let pos = &p.pos_emb[t * d..(t + 1) * d];
        let row = &mut x[t * d..(t + 1) * d];
        for j in 0..d {
            row[j] = tok[j] + pos[j];
        }
    }

    let scale = 1.0 / (dh as f32).sqrt();
    let mut layer_caches = Vec::new();

    for (li, lp) in p.layers.iter().enumerate() {
        let x_in = x.clone();
        let (a, inv1) = math::layer_norm(&x, &lp.ln1_g, &lp.ln1_b, d);
        let q = math::matmul(&a, &lp.wq, s_len, d, d);
        let k = math::matmul(&a, &lp.wk, s_len, d, d);
        let v = math::matmul(&a, &lp.wv, s_len, d, d);

        let mut att = vec![0.0f32; nh * s_len * s_len];
        let mut ctx = vec![0.0f32; s_len * d];
        for h in 0..nh {
            let off = h * dh;
            for t in 0..s_len {
                let qrow = &q[t * d + off..t * d + off + dh];
                let arow = &mut att[h * s_len * s_len + t * s_len..h * s_len * s_len + (t + 1) * s_len];
                for j in 0..=t {
                    let krow = &k[j * d + off..j * d + off + dh];
                    let mut dot = 0.0f32;
                    for e in 0..dh {
                        dot += qrow[e] * krow[e];
                    }
                    arow[j] = dot * scale;
                }
                math::softmax_inplace(&mut arow[..=t]);
                // context vector for (t, h)
                let gate = match suppression {
                    Some(sup) if t >= mask_start => {
                        1.0 - sup.weights[li * nh + h]
                    }
                    _ => 1.0,
                };
                let crow = &mut ctx[t * d + off..t * d + off + dh];
                for j in 0..=t {
                    let w = arow[j];
                    let vrow = &v[j * d + off..j * d + off + dh];
                    for e in 0..dh {
                        crow[e] += w * vrow[e];
                    }
                }
                for e in 0..dh {
                    crow[e] *= gate;
                }
            }
        }

        let attn_out = math::matmul(&ctx, &lp.wo, s_len, d, d);
        for i in 0..x.len() {
            x[i] += attn_out[i];
        }
        let x_mid = x.clone();

        let (b, inv2) = math::layer_norm(&x, &lp.ln2_g, &lp.ln2_b, d);
        let mut u = math::matmul(&b, &lp.w1, s_len, d, cfg.d_ff);
        for t in 0..s_len {
            for j in 0..cfg.d_ff {
                u[t * cfg.d_ff + j] += lp.b1[j];
            }
        }
        let g: Vec<f32> = u.iter().map(|&z| math::gelu(z)).collect();
        let mut f = math::matmul(&g, &lp.w2, s_len, cfg.d_ff, d);
        for t in 0..s_len {
            for j in 0..d {
                f[t * d + j] += lp.b2[j];
            }
        }
        for i in 0..x.len() {
            x[i] += f[i];
        }

        if want_cache {
            layer_caches.push(LayerCache {
                x_in,
                a,
                inv1,
                q,
                k,
                v,
                att,
                ctx,
                x_mid,
                b,
                inv2,
                u,
                g,
            });
        }
    }

    let x_final = x;
    let (h, invf) = math::layer_norm(&x_final, &p.lnf_g, &p.lnf_b, d);
    let logits = math::matmul(&h, &p.out_w, s_len, d, cfg.vocab_size);

    let cache = want_cache.then(|| ForwardCache {
        ids: tokens.ids.clone(),
        layers: layer_caches,
        x_final,
        h: h.clone(),
        invf,
    });
    Ok(ForwardOutput {
        logits: LogitRows {
            vocab_size: cfg.vocab_size,
            data: logits,
        },
        final_hidden: h,
        cache,
    })
}

/// Per-position logits; `suppression = None` and an all-zeros map produce
/// bitwise identical results.
pub fn forward_logits(
    ckpt: &ModelCheckpoint,
    tokens: &TokenSequence,
    suppression: Option<&SuppressionMap>,
) -> Result<LogitRows> {
    Ok(forward(ckpt, tokens, suppression, 0, false)?.logits)
}

/// Post-final-layer-norm hidden states with no suppression.
pub fn forward_hidden(ckpt: &ModelCheckpoint, tokens: &TokenSequence) -> Result<Vec<f32>> {
    Ok(forward(ckpt, tokens, None, 0, false)?.final_hidden)
}

/// Mean per-target-token negative log likelihood over an encoded sequence.
/// Position t is scored when its role is `Target`, using the logits at t-1.
pub fn nll_sequence(
    ckpt: &ModelCheckpoint,
    seq: &TokenSequence,
    suppression: Option<&SuppressionMap>,
) -> Result<f64> {
    let roles = seq
        .roles
        .as_ref()
        .ok_or_else(|| DpsError::Input("sequence has no role annotations".into()))?;
    let logits = forward_logits(ckpt, seq, suppression)?;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for t in 1..seq.len() {
        if roles[t] == Role::Target {
            total -= math::log_softmax_at(logits.row(t - 1), seq.ids[t] as usize);
            count += 1;
        }
    }
    if count == 0 {
        return Err(DpsError::Input("no target-role positions to score".into()));
    }
    Ok(total / count as f64)
}

/// Mean per-target-token NLL for a user-conditioned example.
pub fn nll(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    example: &Example,
    suppression: Option<&SuppressionMap>,
) -> Result<f64> {
    let seq = tokenizer.encode_example(example, ckpt.config.max_seq_len)?;
    nll_sequence(ckpt, &seq, suppression)
}
