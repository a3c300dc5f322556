//! Inference FLOPs cost model. Convention: 2 FLOPs per multiply-
//! accumulate over the effective (non-embedding) parameters, plus an
//! optional attention-quadratic term of `2 * num_layers * (2 * context *
//! hidden)` per token. Prefill is counted once regardless of how many
//! decode passes run; decoding is counted per pass.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsModel {
    pub num_params_effective: f64,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_head: usize,
    pub counts_attention_quadratic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    pub prefill_tflop: f64,
    pub decode_tflop: f64,
    pub total_tflop: f64,
}

const TERA: f64 = 1e12;

impl FlopsModel {
    /// An 8B-class decoder configuration; the effective-parameter count
    /// is meant to be calibrated against a reference total.
    pub fn llama8b_like() -> Self {
        FlopsModel {
            num_params_effective: 7.0e9,
            hidden_size: 4096,
            num_layers: 32,
            num_heads: 32,
            d_head: 128,
            counts_attention_quadratic: true,
        }
    }

    /// FLOPs to process the token at (1-based) context position `t`.
    fn per_token_flops(&self, t: usize) -> f64 {
        let mut f = 2.0 * self.num_params_effective;
        if self.counts_attention_quadratic {
            f += 2.0 * self.num_layers as f64 * 2.0 * t as f64 * self.hidden_size as f64;
        }
        f
    }

    fn phase_flops(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|t| self.per_token_flops(t)).sum()
    }

    /// Estimate for a prompt of `prompt_len` tokens and `gen_len` generated
    /// tokens with `passes` forward passes per decode step (1 = standard
    /// decoding, 2 = contrastive).
    pub fn estimate(&self, prompt_len: usize, gen_len: usize, passes: usize) -> FlopsEstimate {
        assert!(prompt_len >= 1 && gen_len >= 1);
        assert!(passes == 1 || passes == 2);
        let prefill = self.phase_flops(1, prompt_len) / TERA;
        let decode =
            passes as f64 * self.phase_flops(prompt_len + 1, prompt_len + gen_len) / TERA;
        FlopsEstimate {
            prefill_tflop: prefill,
            decode_tflop: decode,
            total_tflop: prefill + decode,
        }
    }

    /// Ratio of the two-pass total to the single-pass total.
    pub fn overhead_ratio(&self, prompt_len: usize, gen_len: usize) -> f64 {
        self.estimate(prompt_len, gen_len, 2).total_tflop
            / self.estimate(prompt_len, gen_len, 1).total_tflop
    }

    /// Solve the effective-parameter count so that the single-pass total
    /// at (prompt_len, gen_len) matches `target_tflop`.
    pub fn calibrate(&mut self, target_tflop: f64, prompt_len: usize, gen_len: usize) {
        let tokens = (prompt_len + gen_len) as f64;
        let quad = if self.counts_attention_quadratic {
            let saved = self.num_params_effective;
            self.num_params_effective = 0.0;
            let q = self.estimate(prompt_len, gen_len, 1).total_tflop;
            self.num_params_effective = saved;
            q
        } else {
            0.0
        };
        self.num_params_effective = (target_tflop - quad) * TERA / (2.0 * tokens);
    }
}
