//! Preference-head discovery: per-head contribution scores from causal
//! ablation, top-K selection, and head-set overlap analytics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};
use crate::model::{fingerprint, nll_sequence, HeadId, ModelCheckpoint, SuppressionMap};
use crate::tokenizer::{Example, Tokenizer};

/// Per-head contribution scores: mean NLL increase when the head is
/// fully ablated, over a user-conditioned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcsTable {
    pub num_layers: usize,
    pub num_heads: usize,
    /// Row-major (layer, head).
    pub scores: Vec<f64>,
    pub num_examples: usize,
    pub model_fingerprint: String,
}

impl PcsTable {
    pub fn get(&self, id: HeadId) -> f64 {
        self.scores[id.layer * self.num_heads + id.head]
    }

    /// Heads ordered by descending score, ties broken by ascending
    /// (layer, head).
    pub fn ranked_heads(&self) -> Vec<HeadId> {
        let mut heads: Vec<HeadId> = (0..self.num_layers)
            .flat_map(|l| (0..self.num_heads).map(move |k| HeadId::new(l, k)))
            .collect();
        heads.sort_by(|a, b| {
            self.get(*b)
                .partial_cmp(&self.get(*a))
                .unwrap()
                .then(a.cmp(b))
        });
        heads
    }
}

/// An ordered top-K head selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet {
    pub heads: Vec<HeadId>,
    pub k: usize,
}

impl HeadSet {
    pub fn contains(&self, id: HeadId) -> bool {
        self.heads.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// A head selection with per-head importance weights in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedHead {
    pub head: HeadId,
    pub importance: f64,
}

/// Eq. of the discovery phase: scores[l][k] = mean over the dataset of
/// [NLL with head (l,k) ablated] - [NLL unmodified]. Baseline NLLs are
/// computed once and reused for every head.
pub fn compute_pcs(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &[Example],
) -> Result<PcsTable> {
    let cfg = &ckpt.config;
    if dataset.is_empty() {
        return Err(DpsError::Input("PCS dataset is empty".into()));
    }
    let sequences: Vec<_> = dataset
        .iter()
        .map(|ex| tokenizer.encode_example(ex, cfg.max_seq_len))
        .collect::<Result<Vec<_>>>()?;

    let baselines: Vec<f64> = sequences
        .iter()
        .map(|seq| nll_sequence(ckpt, seq, None))
        .collect::<Result<_>>()?;

    // Per-head sweeps are independent; results land at fixed indices, so
    // parallel and sequential execution produce identical tables.
    let scores: Vec<f64> = (0..cfg.total_heads())
        .into_par_iter()
        .map(|flat| {
            let head = HeadId::new(flat / cfg.num_heads, flat % cfg.num_heads);
            let mask = SuppressionMap::from_heads(cfg.num_layers, cfg.num_heads, &[head]);
            let mut delta = 0.0f64;
            for (seq, &base) in sequences.iter().zip(&baselines) {
                delta += nll_sequence(ckpt, seq, Some(&mask))? - base;
            }
            Ok(delta / sequences.len() as f64)
        })
        .collect::<Result<_>>()?;

    Ok(PcsTable {
        num_layers: cfg.num_layers,
        num_heads: cfg.num_heads,
        scores,
        num_examples: dataset.len(),
        model_fingerprint: fingerprint(ckpt),
    })
}

/// Top-k heads by descending PCS; ties broken by ascending (layer, head).
/// Requests beyond the total head count return all heads with a warning,
/// as does a selection that dips into non-positive scores.
pub fn select_heads(pcs: &PcsTable, k: usize) -> HeadSet {
    let ranked = pcs.ranked_heads();
    let total = ranked.len();
    if k > total {
        log::warn!("requested top-{k} of {total} heads; returning all heads");
    }
    let take = k.min(total);
    let heads: Vec<HeadId> = ranked.into_iter().take(take).collect();
    if let Some(last) = heads.last() {
        if pcs.get(*last) <= 0.0 {
            log::warn!("top-{k} selection includes heads with non-positive PCS");
        }
    }
    HeadSet { heads, k }
}

/// Max-normalized importance weights for the top-k heads: importance(h) =
/// PCS(h) / max selected PCS, clamped to [0, 1] so non-positive scores
/// contribute no suppression.
pub fn head_importances(pcs: &PcsTable, k: usize) -> Vec<WeightedHead> {
    let set = select_heads(pcs, k);
    let max = set
        .heads
        .iter()
        .map(|h| pcs.get(*h))
        .fold(f64::NEG_INFINITY, f64::max);
    set.heads
        .iter()
        .map(|&head| WeightedHead {
            head,
            importance: if max > 0.0 {
                (pcs.get(head) / max).clamp(0.0, 1.0)
            } else {
                0.0
            },
        })
        .collect()
}

/// |A ∩ B| / |A ∪ B|; 1 when both sets are empty.
pub fn jaccard(a: &HeadSet, b: &HeadSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.heads.iter().filter(|h| b.contains(**h)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Symmetric pairwise Jaccard matrix with unit diagonal.
pub fn overlap_matrix(sets: &[HeadSet]) -> Vec<Vec<f64>> {
    let n = sets.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in (i + 1)..n {
            let v = jaccard(&sets[i], &sets[j]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Pairwise Jaccard between top-K selections at different K from one table.
pub fn k_sweep_stability(pcs: &PcsTable, ks: &[usize]) -> Vec<Vec<f64>> {
    let sets: Vec<HeadSet> = ks.iter().map(|&k| select_heads(pcs, k)).collect();
    overlap_matrix(&sets)
}
