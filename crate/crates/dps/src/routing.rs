//! Cluster-aware routing: profile embeddings from the base model,
//! seeded k-means, per-cluster head discovery, and weighted suppression
//! maps from hard or soft cluster assignments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discovery::{compute_pcs, head_importances, WeightedHead};
use crate::error::{DpsError, Result};
use crate::model::{forward_hidden, ModelCheckpoint, SuppressionMap};
use crate::tokenizer::{Example, Tokenizer, TokenSequence};

/// A user and their unit-normalized profile embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub profile_texts: Vec<String>,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMode {
    Hard,
    Soft,
}

/// Per-cluster routing weights; nonnegative, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingAssignment {
    pub weights: Vec<f64>,
    pub mode: RouteMode,
    pub temperature: f64,
}

/// Centroids plus cluster-specific weighted head sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ClusterModelJson", into = "ClusterModelJson")]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub cluster_heads: Vec<Vec<WeightedHead>>,
    pub num_clusters: usize,
    pub seed: u64,
}

/// On-disk form: head lists as [layer, head, importance] triples.
#[derive(Serialize, Deserialize)]
struct ClusterModelJson {
    centroids: Vec<Vec<f64>>,
    cluster_heads: Vec<Vec<(usize, usize, f64)>>,
    num_clusters: usize,
    seed: u64,
}

impl From<ClusterModelJson> for ClusterModel {
    fn from(j: ClusterModelJson) -> Self {
        ClusterModel {
            centroids: j.centroids,
            cluster_heads: j
                .cluster_heads
                .into_iter()
                .map(|heads| {
                    heads
                        .into_iter()
                        .map(|(layer, head, importance)| WeightedHead {
                            head: crate::model::HeadId::new(layer, head),
                            importance,
                        })
                        .collect()
                })
                .collect(),
            num_clusters: j.num_clusters,
            seed: j.seed,
        }
    }
}

impl From<ClusterModel> for ClusterModelJson {
    fn from(m: ClusterModel) -> Self {
        ClusterModelJson {
            centroids: m.centroids,
            cluster_heads: m
                .cluster_heads
                .into_iter()
                .map(|heads| {
                    heads
                        .into_iter()
                        .map(|w| (w.head.layer, w.head.head, w.importance))
                        .collect()
                })
                .collect(),
            num_clusters: m.num_clusters,
            seed: m.seed,
        }
    }
}

/// Mean over profile texts of mean-pooled final-layer hidden states of
/// the base model (no suppression), L2-normalized.
pub fn embed_profile(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    profile_texts: &[String],
) -> Result<Vec<f32>> {
    let texts: Vec<&String> = profile_texts.iter().filter(|t| !t.is_empty()).collect();
    if texts.is_empty() {
        return Err(DpsError::Input("profile has no non-empty texts".into()));
    }
    let d = ckpt.config.d_model;
    let mut acc = vec![0.0f64; d];
    for text in &texts {
        let mut ids = vec![tokenizer.bos()];
        ids.extend(tokenizer.encode_text(text)?);
        ids.truncate(ckpt.config.max_seq_len);
        let hidden = forward_hidden(ckpt, &TokenSequence::from_ids(ids.clone()))?;
        let rows = ids.len();
        for t in 0..rows {
            for j in 0..d {
                acc[j] += hidden[t * d + j] as f64 / rows as f64;
            }
        }
    }
    for v in acc.iter_mut() {
        *v /= texts.len() as f64;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(DpsError::Input("profile embedding is zero".into()));
    }
    Ok(acc.into_iter().map(|v| (v / norm) as f32).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

/// Seeded k-means: k-means++ initialization, Lloyd iterations until the
/// assignment reaches a fixed point or 100 iterations. Empty clusters are
/// re-seeded to the point farthest from its assigned centroid.
pub fn kmeans(embeddings: &[Vec<f32>], num_clusters: usize, seed: u64) -> Result<KmeansResult> {
    let n = embeddings.len();
    if num_clusters == 0 {
        return Err(DpsError::Input("num_clusters must be >= 1".into()));
    }
    if n < num_clusters {
        return Err(DpsError::Input(format!(
            "{n} points cannot form {num_clusters} clusters"
        )));
    }
    let points: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().map(|&v| v as f64).collect())
        .collect();
    for p in &points {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DpsError::Input("non-finite embedding".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < num_clusters {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if draw < w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
    }

    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::new();
    for _ in 0..100 {
        // assign
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        // update
        let dim = points[0].len();
        for c in 0..num_clusters {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, a)| **a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                // re-seed to the point farthest from its assigned centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assignments[a]])
                            .partial_cmp(&sq_dist(&points[b], &centroids[assignments[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                assignments[far] = c;
            } else {
                let mut mean = vec![0.0f64; dim];
                for m in &members {
                    for j in 0..dim {
                        mean[j] += m[j];
                    }
                }
                for v in mean.iter_mut() {
                    *v /= members.len() as f64;
                }
                centroids[c] = mean;
            }
        }
        let objective: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        objective_trace.push(objective);
        if !changed && objective_trace.len() > 1 {
            break;
        }
    }

    Ok(KmeansResult {
        centroids,
        assignments,
        objective_trace,
    })
}

/// Repeat PCS-based discovery per cluster; importance weights are the
/// cluster's max-normalized PCS values.
pub fn discover_cluster_heads(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    cluster_examples: &[Vec<Example>],
    k_per_cluster: usize,
) -> Result<Vec<Vec<WeightedHead>>> {
    cluster_examples
        .iter()
        .enumerate()
        .map(|(c, examples)| {
            if examples.is_empty() {
                return Err(DpsError::Input(format!("cluster {c} has no examples")));
            }
            let pcs = compute_pcs(ckpt, tokenizer, examples)?;
            Ok(head_importances(&pcs, k_per_cluster))
        })
        .collect()
}

/// Hard: weight 1 on the nearest centroid (squared Euclidean, ties to
/// the lowest cluster index). Soft: softmax(-distance^2 / temperature).
pub fn route(
    embedding: &[f32],
    clusters: &ClusterModel,
    mode: RouteMode,
    temperature: f64,
) -> Result<RoutingAssignment> {
    if mode == RouteMode::Soft && temperature <= 0.0 {
        return Err(DpsError::Input("soft routing needs temperature > 0".into()));
    }
    let e: Vec<f64> = embedding.iter().map(|&v| v as f64).collect();
    let d2: Vec<f64> = clusters.centroids.iter().map(|c| sq_dist(&e, c)).collect();
    let weights = match mode {
        RouteMode::Hard => {
            let mut best = 0usize;
            for (i, &d) in d2.iter().enumerate() {
                if d < d2[best] {
                    best = i;
                }
            }
            let mut w = vec![0.0; d2.len()];
            w[best] = 1.0;
            w
        }
        RouteMode::Soft => {
            let neg: Vec<f64> = d2.iter().map(|&d| -d / temperature).collect();
            let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = neg.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|x| x / sum).collect()
        }
    };
    Ok(RoutingAssignment {
        weights,
        mode,
        temperature,
    })
}

/// Routing-weighted aggregation of cluster head importances, clipped to
/// [0, 1] per head.
pub fn build_suppression(
    assignment: &RoutingAssignment,
    clusters: &ClusterModel,
    num_layers: usize,
    num_heads: usize,
) -> Result<SuppressionMap> {
    if assignment.weights.len() != clusters.num_clusters {
        return Err(DpsError::Config(format!(
            "assignment has {} weights for {} clusters",
            assignment.weights.len(),
            clusters.num_clusters
        )));
    }
    let mut acc = vec![0.0f64; num_layers * num_heads];
    for (w, heads) in assignment.weights.iter().zip(&clusters.cluster_heads) {
        for wh in heads {
            acc[wh.head.layer * num_heads + wh.head.head] += w * wh.importance;
        }
    }
    Ok(SuppressionMap {
        num_layers,
        num_heads,
        weights: acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    })
}

/// Suppression map for a single weighted head set (the global,
/// non-clustered pipeline).
pub fn suppression_from_weighted_heads(
    heads: &[WeightedHead],
    num_layers: usize,
    num_heads: usize,
) -> SuppressionMap {
    let model = ClusterModel {
        centroids: vec![],
        cluster_heads: vec![heads.to_vec()],
        num_clusters: 1,
        seed: 0,
    };
    let assignment = RoutingAssignment {
        weights: vec![1.0],
        mode: RouteMode::Hard,
        temperature: 1.0,
    };
    build_suppression(&assignment, &model, num_layers, num_heads).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadId;

    #[test]
    fn kmeans_exact_points() {
        let pts = vec![vec![0.0f32, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = kmeans(&pts, 3, 1).unwrap();
        assert!(r.objective_trace.last().unwrap() < &1e-12);
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let pts = vec![vec![0.0f32, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&pts, 1, 5).unwrap();
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-9);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        assert!(kmeans(&[vec![0.0f32]], 2, 0).is_err());
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f32>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random::<f32>()).collect())
            .collect();
        let r = kmeans(&pts, 4, 7).unwrap();
        for pair in r.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    fn two_cluster_model() -> ClusterModel {
        ClusterModel {
            centroids: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            cluster_heads: vec![
                vec![
                    WeightedHead {
                        head: HeadId::new(0, 0),
                        importance: 1.0,
                    },
                    WeightedHead {
                        head: HeadId::new(0, 1),
                        importance: 0.5,
                    },
                ],
                vec![WeightedHead {
                    head: HeadId::new(0, 1),
                    importance: 1.0,
                }],
            ],
            num_clusters: 2,
            seed: 0,
        }
    }

    #[test]
    fn hard_routing_at_centroid() {
        let m = two_cluster_model();
        let a = route(&[2.0, 0.0], &m, RouteMode::Hard, 1.0).unwrap();
        assert_eq!(a.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn soft_routing_equidistant_is_half_half() {
        let m = two_cluster_model();
        let a = route(&[1.0, 0.0], &m, RouteMode::Soft, 1.0).unwrap();
        assert!((a.weights[0] - 0.5).abs() < 1e-12);
        assert!((a.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_routing_matches_direct_softmax() {
        // centroids at distance^2 (1, 2) from the origin, temperature 1
        // -> weights (e^-1, e^-2) normalized = (0.7311, 0.2689)
        let mut m = two_cluster_model();
        m.centroids = vec![vec![1.0], vec![(2.0f64).sqrt()]];
        let a = route(&[0.0], &m, RouteMode::Soft, 1.0).unwrap();
        let expect0 = (-1.0f64).exp() / ((-1.0f64).exp() + (-2.0f64).exp());
        assert!((a.weights[0] - expect0).abs() < 1e-9, "{:?}", a.weights);
        assert!((a.weights[0] - 0.7311).abs() < 1e-4);
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_limit_matches_hard() {
        let m = two_cluster_model();
        let soft = route(&[0.4, 0.3], &m, RouteMode::Soft, 1e-6).unwrap();
        let hard = route(&[0.4, 0.3], &m, RouteMode::Hard, 1.0).unwrap();
        let argmax = |w: &[f64]| {
            w.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&soft.weights), argmax(&hard.weights));
    }

    #[test]
    fn suppression_aggregation() {
        let m = two_cluster_model();
        // weights (0.6, 0.4); head (0,1) in both with importances (0.5, 1.0)
        let a = RoutingAssignment {
            weights: vec![0.6, 0.4],
            mode: RouteMode::Soft,
            temperature: 1.0,
        };
        let sup = build_suppression(&a, &m, 1, 2).unwrap();
        assert!((sup.get(HeadId::new(0, 0)) - 0.6).abs() < 1e-6);
        assert!((sup.get(HeadId::new(0, 1)) as f64 - (0.6 * 0.5 + 0.4 * 1.0)).abs() < 1e-6);
    }

    #[test]
    fn hard_assignment_with_unit_importances_is_binary() {
        let mut m = two_cluster_model();
        m.cluster_heads[0][1].importance = 1.0;
        let a = RoutingAssignment {
            weights: vec![1.0, 0.0],
            mode: RouteMode::Hard,
            temperature: 1.0,
        };
        let sup = build_suppression(&a, &m, 1, 2).unwrap();
        assert_eq!(sup.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn cluster_model_round_trips_as_triples() {
        let m = two_cluster_model();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("[0,1,0.5]"), "{json}");
        let back: ClusterModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
