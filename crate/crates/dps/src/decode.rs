//! Decoding. Vanilla single-pass decoding, Differential Preference
//! Steering (two passes per step over the identical context, combined as
//! `(1 + gamma) * pref - gamma * gen`), a lightweight context-contrast
//! comparator, and random-control suppression maps.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};

use crate::model::{forward, HeadId, ModelCheckpoint, SuppressionMap};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Temperature { temperature: f64 },
    TopK { k: usize, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    AllPositions,
    DecodeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub gamma: f64,
    pub max_new_tokens: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub mask_scope: MaskScope,
    /// Stop when this token is chosen (decided on the combined logits).
    pub eos_token: Option<u32>,
    /// Optional adaptive-plausibility filter: drop tokens whose pref logit
    /// is more than this margin (in log space) below the pref maximum.
    pub plausibility_margin: Option<f64>,
    /// How many top entries of each logit vector to record per step.
    pub trace_top_n: usize,
}

impl DecodeConfig {
    pub fn new(gamma: f64, max_new_tokens: usize, seed: u64) -> Self {
        DecodeConfig {
            gamma,
            max_new_tokens,
            strategy: Strategy::Greedy,
            seed,
            mask_scope: MaskScope::AllPositions,
            eos_token: None,
            plausibility_margin: None,
            trace_top_n: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(DpsError::Input("gamma must be nonnegative".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(DpsError::Input("max_new_tokens must be >= 1".into()));
        }
        let temp = match self.strategy {
            Strategy::Greedy => 1.0,
            Strategy::Temperature { temperature } | Strategy::TopK { temperature, .. } => temperature,
        };
        if temp <= 0.0 {
            return Err(DpsError::Input("sampling temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Top-`n` (token, logit) pairs of a logit vector, for trace records.
fn top_n(logits: &[f32], n: usize) -> Vec<(u32, f32)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    idx.into_iter()
        .take(n)
        .map(|i| (i as u32, logits[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pref_top: Vec<(u32, f32)>,
    pub gen_top: Vec<(u32, f32)>,
    pub combined_top: Vec<(u32, f32)>,
    pub chosen: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub config: DecodeConfig,
    pub steps: Vec<StepRecord>,
    /// Tokens emitted during decoding (excludes the prompt).
    pub tokens: Vec<u32>,
    /// Per-step combined logit rows, flattened; kept for bitwise
    /// identity checks between decoding modes.
    #[serde(skip)]
    pub combined_logits: Vec<Vec<f32>>,
}

impl DecodeTrace {
    /// One JSON record per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut w, step)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn choose_token(combined: &[f32], strategy: &Strategy, rng: &mut ChaCha8Rng) -> u32 {
    match strategy {
        Strategy::Greedy => {
            let mut best = 0usize;
            for i in 1..combined.len() {
                if combined[i] > combined[best] {
                    best = i;
                }
            }
            best as u32
        }
        Strategy::Temperature { temperature } => {
            sample_from(combined, *temperature, combined.len(), rng)
        }
        Strategy::TopK { k, temperature } => sample_from(combined, *temperature, *k, rng),
    }
}

/// Temperature-sample among the `k` highest logits.
fn sample_from(combined: &[f32], temperature: f64, k: usize, rng: &mut ChaCha8Rng) -> u32 {
    let keep = top_n(combined, k.max(1).min(combined.len()));
    let max = keep[0].1 as f64;
    let weights: Vec<f64> = keep
        .iter()
        .map(|(_, l)| ((*l as f64 - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for ((token, _), w) in keep.iter().zip(&weights) {
        if draw < *w {
            return *token;
        }
        draw -= w;
    }
    keep.last().unwrap().0
}

enum GenPass<'a> {
    /// No second pass: combined logits are the pref logits.
    None,
    /// Same context, heads suppressed.
    Suppressed(&'a SuppressionMap),
    /// Separate context (profile removed), no suppression.
    OtherContext(Vec<u32>),
}

fn run_decode(
    ckpt: &ModelCheckpoint,
    context: &TokenSequence,
    mut gen_pass: GenPass<'_>,
    config: &DecodeConfig,
) -> Result<DecodeTrace> {
    config.validate()?;
    if context.is_empty() {
        return Err(DpsError::Input("decode context is empty".into()));
    }
    let prompt_len = context.len();
    if prompt_len + config.max_new_tokens > ckpt.config.max_seq_len {
        return Err(DpsError::SequenceTooLong {
            len: prompt_len + config.max_new_tokens,
            max: ckpt.config.max_seq_len,
        });
    }
    if let GenPass::Suppressed(map) = &gen_pass {
        map.validate(&ckpt.config)?;
    }
    let mask_start = match config.mask_scope {
        MaskScope::AllPositions => 0,
        MaskScope::DecodeOnly => prompt_len,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ctx = context.ids.clone();
    let mut steps = Vec::new();
    let mut tokens = Vec::new();
    let mut combined_logits = Vec::new();

    for step in 0..config.max_new_tokens {
        let seq = TokenSequence::from_ids(ctx.clone());
        let pref = forward(ckpt, &seq, None, 0, false)?;
        let pref_row = pref.logits.last().to_vec();

        let gen_row: Vec<f32> = match &gen_pass {
            GenPass::None => pref_row.clone(),
            GenPass::Suppressed(map) => {
                let out = forward(ckpt, &seq, Some(map), mask_start, false)?;
                out.logits.last().to_vec()
            }
            GenPass::OtherContext(other) => {
                let oseq = TokenSequence::from_ids(other.clone());
                let out = forward(ckpt, &oseq, None, 0, false)?;
                out.logits.last().to_vec()
            }
        };

        // gamma = 0 reduces to the pref pass bitwise
        let mut combined: Vec<f32> = if config.gamma == 0.0 || matches!(gen_pass, GenPass::None) {
            pref_row.clone()
        } else {
            let g = config.gamma as f32;
            pref_row
                .iter()
                .zip(&gen_row)
                .map(|(&p, &q)| (1.0 + g) * p - g * q)
                .collect()
        };

        if let Some(margin) = config.plausibility_margin {
            let max = pref_row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let cutoff = max - margin as f32;
            for (c, &p) in combined.iter_mut().zip(&pref_row) {
                if p < cutoff {
                    *c = f32::NEG_INFINITY;
                }
            }
        }

        let chosen = choose_token(&combined, &config.strategy, &mut rng);
        steps.push(StepRecord {
            step,
            pref_top: top_n(&pref_row, config.trace_top_n),
            gen_top: top_n(&gen_row, config.trace_top_n),
            combined_top: top_n(&combined, config.trace_top_n),
            chosen,
        });
        combined_logits.push(combined);
        tokens.push(chosen);
        ctx.push(chosen);
        if let GenPass::OtherContext(other) = &mut gen_pass {
            other.push(chosen);
        }
        if config.eos_token == Some(chosen) {
            break;
        }
    }

    Ok(DecodeTrace {
        config: config.clone(),
        steps,
        tokens,
        combined_logits,
    })
}

/// Differential Preference Steering: at every step, one pass of the full
/// model and one with the suppression map applied, combined elementwise.
pub fn dps_decode(
    ckpt: &ModelCheckpoint,
    context: &TokenSequence,
    suppression: &SuppressionMap,
    config: &DecodeConfig,
) -> Result<DecodeTrace> {
    run_decode(ckpt, context, GenPass::Suppressed(suppression), config)
}

/// Unsteered autoregressive decoding.
pub fn vanilla_decode(
    ckpt: &ModelCheckpoint,
    context: &TokenSequence,
    config: &DecodeConfig,
) -> Result<DecodeTrace> {
    run_decode(ckpt, context, GenPass::None, config)
}

/// Context-contrast baseline: the second pass runs on a context with the
/// profile segment removed; emitted tokens are appended to both contexts.
pub fn context_contrast_decode(
    ckpt: &ModelCheckpoint,
    context_with_profile: &TokenSequence,
    context_without_profile: &TokenSequence,
    config: &DecodeConfig,
) -> Result<DecodeTrace> {
    run_decode(
        ckpt,
        context_with_profile,
        GenPass::OtherContext(context_without_profile.ids.clone()),
        config,
    )
}

/// Binary mask on `k` uniformly sampled heads.
pub fn random_head_mask(
    num_layers: usize,
    num_heads: usize,
    k: usize,
    seed: u64,
) -> Result<SuppressionMap> {
    let total = num_layers * num_heads;
    if k > total {
        return Err(DpsError::Input(format!(
            "cannot sample {k} heads out of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..total).collect();
    // partial Fisher-Yates: first k entries are a uniform k-subset
    for i in 0..k {
        let j = rng.random_range(i..total);
        indices.swap(i, j);
    }
    let heads: Vec<HeadId> = indices[..k]
        .iter()
        .map(|&flat| HeadId::new(flat / num_heads, flat % num_heads))
        .collect();
    Ok(SuppressionMap::from_heads(num_layers, num_heads, &heads))
}

/// Continuous random map with the same L1 mass as `reference`, random
/// placement, entries capped at 1 by iterative redistribution.
pub fn random_continuous_mask(reference: &SuppressionMap, seed: u64) -> SuppressionMap {
    let total = reference.weights.len();
    let mass = reference.l1_mass();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..total).map(|_| rng.random::<f64>()).collect();

    let mut weights = vec![0.0f64; total];
    let mut capped = vec![false; total];
    let mut remaining = mass.min(total as f64);
    // water-filling: scale uncapped entries to the leftover mass, cap
    // overflow at 1, repeat
    loop {
        let free: f64 = raw
            .iter()
            .zip(&capped)
            .filter(|(_, c)| !**c)
            .map(|(r, _)| *r)
            .sum();
        if remaining <= 0.0 || free <= 0.0 {
            break;
        }
        let scale = remaining / free;
        let mut overflow = false;
        for i in 0..total {
            if !capped[i] {
                let w = raw[i] * scale;
                if w >= 1.0 {
                    weights[i] = 1.0;
                    capped[i] = true;
                    remaining -= 1.0;
                    overflow = true;
                } else {
                    weights[i] = w;
                }
            }
        }
        if !overflow {
            break;
        }
    }
    SuppressionMap {
        num_layers: reference.num_layers,
        num_heads: reference.num_heads,
        weights: weights.into_iter().map(|w| w as f32).collect(),
    }
}
