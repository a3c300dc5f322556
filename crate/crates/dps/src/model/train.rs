//! Training. Plain Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight
//! decay, constant learning rate) over cross-entropy on target-role
//! positions. All randomness comes from the `seed` field, so a fixed
//! (config, corpus, hyperparameters) triple reproduces the trajectory
//! bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};
use crate::math;
use crate::rng::subseed;
use crate::tokenizer::{Example, Role, Tokenizer, TokenSequence};

use super::config::ModelConfig;
use super::forward::{forward, ForwardCache};
use super::params::Params;
use super::ModelCheckpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay, applied to matrix-shaped tensors only
    /// (embeddings, projections, FFN weights, output head). Presses the
    /// model to concentrate function instead of spreading it across
    /// redundant heads.
    pub weight_decay: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            batch_size: 8,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            seed: 0,
            log_every: 50,
        }
    }
}

/// Cross-entropy loss and parameter gradients for one encoded sequence.
/// Gradients are accumulated into `grads` scaled by `weight`; returns the
/// per-example mean-target-token loss.
pub fn loss_and_grads(
    ckpt: &ModelCheckpoint,
    seq: &TokenSequence,
    weight: f32,
    grads: &mut Params,
) -> Result<f64> {
    let cfg = &ckpt.config;
    let out = forward(ckpt, seq, None, 0, true)?;
    let cache = out.cache.unwrap();
    let roles = seq
        .roles
        .as_ref()
        .ok_or_else(|| DpsError::Input("training sequence has no roles".into()))?;

    let s_len = seq.len();
    let v = cfg.vocab_size;
    let targets: Vec<usize> = (1..s_len).filter(|&t| roles[t] == Role::Target).collect();
    if targets.is_empty() {
        return Err(DpsError::Input("no target positions in training sequence".into()));
    }

    // dLoss/dlogits: (softmax - onehot) / num_targets at predicting rows
    let mut loss = 0.0f64;
    let mut dlogits = vec![0.0f32; s_len * v];
    let inv_t = 1.0 / targets.len() as f32;
    for &t in &targets {
        let row = out.logits.row(t - 1);
        loss -= math::log_softmax_at(row, seq.ids[t] as usize);
        let drow = &mut dlogits[(t - 1) * v..t * v];
        drow.copy_from_slice(row);
        math::softmax_inplace(drow);
        for x in drow.iter_mut() {
            *x *= inv_t;
        }
        drow[seq.ids[t] as usize] -= inv_t;
    }
    loss /= targets.len() as f64;

    backward(ckpt, &cache, &dlogits, weight, grads);
    Ok(loss)
}

fn backward(ckpt: &ModelCheckpoint, cache: &ForwardCache, dlogits: &[f32], weight: f32, grads: &mut Params) {
    let cfg = &ckpt.config;
    let p = &ckpt.params;
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let f_dim = cfg.d_ff;
    let nh = cfg.num_heads;
    let dh = cfg.d_head;
    let s_len = cache.ids.len();
    let scale = 1.0 / (dh as f32).sqrt();

    // output head
    let mut scaled = dlogits.to_vec();
    for x in scaled.iter_mut() {
        *x *= weight;
    }
    math::matmul_at_b_acc(&cache.h, &scaled, &mut grads.out_w, s_len, d, v);
    let dh_hidden = math::matmul_a_bt(&scaled, &p.out_w, s_len, v, d);

    let mut dx = math::layer_norm_backward(
        &cache.x_final,
        &p.lnf_g,
        &cache.invf,
        &dh_hidden,
        d,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );

    for li in (0..cfg.num_layers).rev() {
        let lp = &p.layers[li];
        let lc = &cache.layers[li];
        let lg = &mut grads.layers[li];

        // FFN branch: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
        let df = &dx;
        for t in 0..s_len {
            for j in 0..d {
                lg.b2[j] += df[t * d + j];
            }
        }
        math::matmul_at_b_acc(&lc.g, df, &mut lg.w2, s_len, f_dim, d);
        let dg = math::matmul_a_bt(df, &lp.w2, s_len, d, f_dim);
        let mut du = dg;
        for (z, &uz) in du.iter_mut().zip(&lc.u) {
            *z *= math::gelu_grad(uz);
        }
        for t in 0..s_len {
            for j in 0..f_dim {
                lg.b1[j] += du[t * f_dim + j];
            }
        }
        math::matmul_at_b_acc(&lc.b, &du, &mut lg.w1, s_len, d, f_dim);
        let db = math::matmul_a_bt(&du, &lp.w1, s_len, f_dim, d);
        let dln2 = math::layer_norm_backward(
            &lc.x_mid,
            &lp.ln2_g,
            &lc.inv2,
            &db,
            d,
            &mut lg.ln2_g,
            &mut lg.ln2_b,
        );
        let mut dx_mid = dx;
        for i in 0..dx_mid.len() {
            dx_mid[i] += dln2[i];
        }

        // attention branch: x_mid = x_in + ctx Wo  (training runs ungated)
        math::matmul_at_b_acc(&lc.ctx, &dx_mid, &mut lg.wo, s_len, d, d);
        let dctx = math::matmul_a_bt(&dx_mid, &lp.wo, s_len, d, d);

        let mut dq = vec![0.0f32; s_len * d];
        let mut dk = vec![0.0f32; s_len * d];
        let mut dv = vec![0.0f32; s_len * d];
        for h in 0..nh {
            let off = h * dh;
            for t in 0..s_len {
                let arow = &lc.att[h * s_len * s_len + t * s_len..h * s_len * s_len + t * s_len + t + 1];
                let dcrow = &dctx[t * d + off..t * d + off + dh];
                // datt and dv
                let mut datt = vec![0.0f32; t + 1];
                for j in 0..=t {
                    let vrow = &lc.v[j * d + off..j * d + off + dh];
                    let mut acc = 0.0f32;
                    for e in 0..dh {
                        acc += dcrow[e] * vrow[e];
                    }
                    datt[j] = acc;
                    let dvrow = &mut dv[j * d + off..j * d + off + dh];
                    let w = arow[j];
                    for e in 0..dh {
                        dvrow[e] += w * dcrow[e];
                    }
                }
                // softmax backward
                let mut dot = 0.0f32;
                for j in 0..=t {
                    dot += datt[j] * arow[j];
                }
                let qrow = &lc.q[t * d + off..t * d + off + dh];
                let dqrow_acc: &mut [f32] = &mut dq[t * d + off..t * d + off + dh];
                for j in 0..=t {
                    let ds = arow[j] * (datt[j] - dot) * scale;
                    let krow = &lc.k[j * d + off..j * d + off + dh];
                    for e in 0..dh {
                        dqrow_acc[e] += ds * krow[e];
                    }
                    let dkrow = &mut dk[j * d + off..j * d + off + dh];
                    for e in 0..dh {
                        dkrow[e] += ds * qrow[e];
                    }
                }
            }
        }

        math::matmul_at_b_acc(&lc.a, &dq, &mut lg.wq, s_len, d, d);
        math::matmul_at_b_acc(&lc.a, &dk, &mut lg.wk, s_len, d, d);
        math::matmul_at_b_acc(&lc.a, &dv, &mut lg.wv, s_len, d, d);
        let mut da = math::matmul_a_bt(&dq, &lp.wq, s_len, d, d);
        let da_k = math::matmul_a_bt(&dk, &lp.wk, s_len, d, d);
        let da_v = math::matmul_a_bt(&dv, &lp.wv, s_len, d, d);
        for i in 0..da.len() {
            da[i] += da_k[i] + da_v[i];
        }
        let dln1 = math::layer_norm_backward(
            &lc.x_in,
            &lp.ln1_g,
            &lc.inv1,
            &da,
            d,
            &mut lg.ln1_g,
            &mut lg.ln1_b,
        );
        dx = dx_mid;
        for i in 0..dx.len() {
            dx[i] += dln1[i];
        }
    }

    // embeddings
    for (t, &id) in cache.ids.iter().enumerate() {
        let drow = &dx[t * d..(t + 1) * d];
        let tok = &mut grads.tok_emb[id as usize * d..(id as usize + 1) * d];
        let pos = &mut grads.pos_emb[t * d..(t + 1) * d];
        for j in 0..d {
            tok[j] += drow[j];
            pos[j] += drow[j];
        }
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: usize,
    /// Per-tensor flag: true for tensors subject to weight decay (rank-2
    /// shapes in the manifest; gains and biases are exempt).
    decay: Vec<bool>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(config: &ModelConfig) -> Self {
        Adam {
            m: Params::zeros_like(config),
            v: Params::zeros_like(config),
            t: 0,
            decay: super::params::manifest(config)
                .iter()
                .map(|(_, shape)| shape.len() >= 2)
                .collect(),
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let pv = params.flatten_mut();
        let gv = grads.flatten();
        let mv = self.m.flatten_mut();
        let vv = self.v.flatten_mut();
        for ((((pt, gt), mt), vt), &decay) in
            pv.into_iter().zip(gv).zip(mv).zip(vv).zip(&self.decay)
        {
            let wd = if decay { weight_decay } else { 0.0 };
            for i in 0..pt.len() {
                let g = gt[i] as f64;
                let m = Self::BETA1 * mt[i] as f64 + (1.0 - Self::BETA1) * g;
                let v2 = Self::BETA2 * vt[i] as f64 + (1.0 - Self::BETA2) * g * g;
                mt[i] = m as f32;
                vt[i] = v2 as f32;
                let p = pt[i] as f64;
                let update = lr * (m / bc1) / ((v2 / bc2).sqrt() + Self::EPS) + lr * wd * p;
                pt[i] = (p - update) as f32;
            }
        }
    }
}

/// Train a model from scratch on a corpus of user-conditioned examples.
/// `steps = 0` returns the seeded initialization unchanged.
pub fn train(
    config: ModelConfig,
    tokenizer: &Tokenizer,
    corpus: &[Example],
    hp: &TrainConfig,
) -> Result<ModelCheckpoint> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(DpsError::Input("training corpus is empty".into()));
    }
    if hp.learning_rate <= 0.0 {
        return Err(DpsError::Input("learning rate must be positive".into()));
    }
    if hp.batch_size == 0 {
        return Err(DpsError::Input("batch size must be >= 1".into()));
    }

    let sequences: Vec<TokenSequence> = corpus
        .iter()
        .map(|ex| tokenizer.encode_example(ex, config.max_seq_len))
        .collect::<Result<_>>()?;

    let mut ckpt = ModelCheckpoint::init(config.clone())?;
    let mut optimizer = Adam::new(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(hp.seed, "train"));

    for step in 0..hp.steps {
        let mut grads = Params::zeros_like(&config);
        let mut loss = 0.0f64;
        let weight = 1.0 / hp.batch_size as f32;
        for _ in 0..hp.batch_size {
            let idx = rng.random_range(0..sequences.len());
            loss += loss_and_grads(&ckpt, &sequences[idx], weight, &mut grads)?;
        }
        loss /= hp.batch_size as f64;
        if !loss.is_finite() {
            return Err(DpsError::TrainingDiverged { step });
        }
        optimizer.step(&mut ckpt.params, &grads, hp.learning_rate, hp.weight_decay);
        if hp.log_every > 0 && (step % hp.log_every == 0 || step + 1 == hp.steps) {
            log::info!("train step {step}: loss {loss:.4}");
        }
    }
    Ok(ckpt)
}
