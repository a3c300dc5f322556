//! Synthetic personalization benchmark. Clusters own disjoint blocks of
//! the content vocabulary; each user tilts target tokens toward the
//! cluster block with a known mixture weight, plus a couple of per-user
//! style-marker tokens. Ground truth is exact, so personalization
//! fidelity is measurable by counting.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};
use crate::rng::subseed;
use crate::tokenizer::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Discover,
    Eval,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Discover => write!(f, "discover"),
            Split::Eval => write!(f, "eval"),
        }
    }
}

/// Ground-truth preference structure for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSpec {
    pub cluster_id: usize,
    /// Sorted token ids of the cluster's preferred block.
    pub preferred_vocab: Vec<u32>,
    /// Probability mass tilted toward the preferred block, in (0, 1].
    pub preference_strength: f64,
    /// Per-user marker tokens from the generic pool.
    pub style_markers: Vec<u32>,
}

impl PreferenceSpec {
    pub fn is_preferred(&self, token: u32) -> bool {
        self.preferred_vocab.binary_search(&token).is_ok()
    }

    pub fn is_marker(&self, token: u32) -> bool {
        self.style_markers.contains(&token)
    }
}

/// Examples of one split plus the generator metadata needed to interpret
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub examples: Vec<Example>,
    pub split: Split,
    pub generator_seed: u64,
    pub specs: BTreeMap<String, PreferenceSpec>,
}

impl DatasetHandle {
    pub fn user_ids(&self) -> Vec<String> {
        self.specs.keys().cloned().collect()
    }

    pub fn examples_for(&self, user_id: &str) -> Vec<&Example> {
        self.examples
            .iter()
            .filter(|ex| ex.user_id == user_id)
            .collect()
    }
}

/// Generator parameters. Defaults: 256-token content vocabulary, 3
/// clusters of 8 users with 64-token preferred blocks, strength 0.8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub content_vocab: usize,
    pub num_clusters: usize,
    pub users_per_cluster: usize,
    pub block_size: usize,
    pub preference_strength: f64,
    pub strength_jitter: f64,
    pub marker_rate: f64,
    pub markers_per_user: usize,
    pub profile_snippets: usize,
    pub profile_snippet_len: usize,
    pub input_len: usize,
    pub target_len: usize,
    pub train_per_user: usize,
    pub discover_per_user: usize,
    pub eval_per_user: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            content_vocab: 256,
            num_clusters: 3,
            users_per_cluster: 8,
            block_size: 64,
            preference_strength: 0.8,
            strength_jitter: 0.05,
            marker_rate: 0.05,
            markers_per_user: 2,
            profile_snippets: 2,
            profile_snippet_len: 8,
            input_len: 6,
            target_len: 20,
            train_per_user: 200,
            discover_per_user: 64,
            eval_per_user: 64,
            seed: 0,
        }
    }
}

fn ids_to_text(ids: &[u32]) -> String {
    ids.iter().map(|&id| char::from_u32(id).unwrap()).collect()
}

/// Deterministic user map: cluster c owns content ids
/// `[c * block_size, (c + 1) * block_size)`; the remainder of the content
/// vocabulary is the shared generic pool. Users of a cluster share the
/// block but differ in style markers and jittered strength.
pub fn generate_users(config: &SynthConfig) -> Result<BTreeMap<String, PreferenceSpec>> {
    let blocks_end = config.num_clusters * config.block_size;
    if blocks_end >= config.content_vocab {
        return Err(DpsError::Input(format!(
            "{} clusters x {} block tokens do not leave a generic pool in a {}-token vocabulary",
            config.num_clusters, config.block_size, config.content_vocab
        )));
    }
    let generic: Vec<u32> = (blocks_end as u32..config.content_vocab as u32).collect();
    let mut specs = BTreeMap::new();
    for c in 0..config.num_clusters {
        let block: Vec<u32> =
            ((c * config.block_size) as u32..((c + 1) * config.block_size) as u32).collect();
        for u in 0..config.users_per_cluster {
            let user_id = format!("c{c}_u{u:02}");
            let mut rng =
                ChaCha8Rng::seed_from_u64(subseed(config.seed, &format!("user/{user_id}")));
            let jitter = (rng.random::<f64>() * 2.0 - 1.0) * config.strength_jitter;
            let strength = (config.preference_strength + jitter).clamp(0.05, 1.0);
            let mut markers = Vec::new();
            while markers.len() < config.markers_per_user.min(generic.len()) {
                let m = generic[rng.random_range(0..generic.len())];
                if !markers.contains(&m) {
                    markers.push(m);
                }
            }
            specs.insert(
                user_id,
                PreferenceSpec {
                    cluster_id: c,
                    preferred_vocab: block.clone(),
                    preference_strength: strength,
                    style_markers: markers,
                },
            );
        }
    }
    Ok(specs)
}

fn generic_pool(config: &SynthConfig) -> Vec<u32> {
    ((config.num_clusters * config.block_size) as u32..config.content_vocab as u32).collect()
}

fn sample_tilted(spec: &PreferenceSpec, generic: &[u32], rng: &mut ChaCha8Rng) -> u32 {
    if rng.random::<f64>() < spec.preference_strength {
        spec.preferred_vocab[rng.random_range(0..spec.preferred_vocab.len())]
    } else {
        generic[rng.random_range(0..generic.len())]
    }
}

fn sample_target_token(spec: &PreferenceSpec, generic: &[u32], rate: f64, rng: &mut ChaCha8Rng) -> u32 {
    if !spec.style_markers.is_empty() && rng.random::<f64>() < rate {
        spec.style_markers[rng.random_range(0..spec.style_markers.len())]
    } else {
        sample_tilted(spec, generic, rng)
    }
}

/// Generate one split. Each example draws from its own named RNG stream,
/// so splits are disjoint by construction and regeneration is
/// bit-identical.
pub fn generate_examples(
    specs: &BTreeMap<String, PreferenceSpec>,
    config: &SynthConfig,
    split: Split,
    count_per_user: usize,
) -> DatasetHandle {
    let generic = generic_pool(config);
    let mut examples = Vec::new();
    for (user_id, spec) in specs {
        for i in 0..count_per_user {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(
                config.seed,
                &format!("example/{split}/{user_id}/{i}"),
            ));
            let profile_texts: Vec<String> = (0..config.profile_snippets)
                .map(|_| {
                    let ids: Vec<u32> = (0..config.profile_snippet_len)
                        .map(|_| sample_tilted(spec, &generic, &mut rng))
                        .collect();
                    ids_to_text(&ids)
                })
                .collect();
            let input_ids: Vec<u32> = (0..config.input_len)
                .map(|_| generic[rng.random_range(0..generic.len())])
                .collect();
            let target_ids: Vec<u32> = (0..config.target_len)
                .map(|_| sample_target_token(spec, &generic, config.marker_rate, &mut rng))
                .collect();
            examples.push(Example {
                user_id: user_id.clone(),
                profile_texts,
                input_text: ids_to_text(&input_ids),
                target_text: ids_to_text(&target_ids),
            });
        }
    }
    DatasetHandle {
        examples,
        split,
        generator_seed: config.seed,
        specs: specs.clone(),
    }
}

/// Fraction of a token sequence falling in the user's preferred block.
pub fn alignment_score_tokens(tokens: &[u32], spec: &PreferenceSpec) -> Result<f64> {
    if tokens.is_empty() {
        return Err(DpsError::Input("empty sequence has no alignment score".into()));
    }
    let hits = tokens.iter().filter(|&&t| spec.is_preferred(t)).count();
    Ok(hits as f64 / tokens.len() as f64)
}

/// Probability mass a distribution places on the preferred block.
pub fn alignment_score_distribution(probs: &[f64], spec: &PreferenceSpec) -> f64 {
    spec.preferred_vocab
        .iter()
        .filter(|&&t| (t as usize) < probs.len())
        .map(|&t| probs[t as usize])
        .sum()
}
