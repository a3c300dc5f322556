//! End-to-end benchmark pipeline: synth -> train -> discover -> cluster
//! -> sweeps -> report. The CLI `bench` subcommand is a thin shell over
//! [`run_bench`] and [`write_artifacts`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{
    causal_validation, context_contrast_sweep, emit_report, gamma_sweep, gamma_sweep_routed,
    k_sweep_alignment, pcs_sparsity_stats, write_matrix_csv, BenchReport, CausalValidationReport,
    EnvironmentSnapshot, GammaSweep, ReportRow, SparsityStats,
};
use crate::decode::{dps_decode, DecodeConfig};
use crate::discovery::{
    compute_pcs, head_importances, k_sweep_stability, overlap_matrix, select_heads, HeadSet,
    PcsTable,
};
use crate::error::{DpsError, Result};
use crate::model::{save_checkpoint, train, ModelCheckpoint, ModelConfig, SuppressionMap, TrainConfig};
use crate::rng::subseed;
use crate::routing::{
    build_suppression, discover_cluster_heads, embed_profile, kmeans, route,
    suppression_from_weighted_heads, ClusterModel, RouteMode,
};
use crate::synth::{generate_examples, generate_users, DatasetHandle, Split, SynthConfig};
use crate::tokenizer::Tokenizer;

/// Resolved configuration for one benchmark run. Every random choice
/// descends from `seed` through named sub-seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub train: TrainConfig,
    /// Global top-K head budget.
    pub topk: usize,
    pub gammas: Vec<f64>,
    pub ks: Vec<usize>,
    /// Gamma used for the K sweep and the sample decode trace.
    pub sweep_gamma: f64,
    pub num_control_seeds: usize,
    /// Per-user example caps (0 = all).
    pub discover_limit: usize,
    pub eval_limit: usize,
    pub soft_temperature: f64,
}

impl PipelineConfig {
    /// Default benchmark: 3 clusters x 8 users, 4-layer/4-head model.
    pub fn default_bench(seed: u64) -> Self {
        let mut synth = SynthConfig::default();
        synth.seed = subseed(seed, "synth");
        PipelineConfig {
            seed,
            synth,
            num_layers: 4,
            num_heads: 4,
            d_head: 4,
            d_ff: 64,
            max_seq_len: 64,
            train: TrainConfig {
                steps: 4000,
                weight_decay: 1.0,
                seed: subseed(seed, "train"),
                ..TrainConfig::default()
            },
            topk: 8,
            gammas: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            ks: vec![2, 4, 6, 8, 12, 16],
            sweep_gamma: 1.0,
            num_control_seeds: 20,
            discover_limit: 32,
            eval_limit: 8,
            soft_temperature: 0.25,
        }
    }

    /// Shrunk variant for smoke runs and determinism checks.
    pub fn small(seed: u64) -> Self {
        let mut cfg = PipelineConfig::default_bench(seed);
        cfg.synth.users_per_cluster = 2;
        cfg.synth.train_per_user = 40;
        cfg.synth.discover_per_user = 8;
        cfg.synth.eval_per_user = 8;
        cfg.train.steps = 60;
        cfg.gammas = vec![0.0, 0.5, 1.0];
        cfg.ks = vec![2, 8, 16];
        cfg.num_control_seeds = 5;
        cfg.discover_limit = 8;
        cfg.eval_limit = 4;
        cfg
    }

    pub fn model_config(&self, tokenizer: &Tokenizer) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.num_heads * self.d_head,
            d_head: self.d_head,
            d_ff: self.d_ff,
            vocab_size: tokenizer.vocab_size(),
            max_seq_len: self.max_seq_len,
            seed: subseed(self.seed, "init"),
        }
    }
}

/// Everything a benchmark run produces, in memory.
pub struct BenchArtifacts {
    pub config: PipelineConfig,
    pub tokenizer: Tokenizer,
    pub ckpt: ModelCheckpoint,
    pub train_set: DatasetHandle,
    pub discover_set: DatasetHandle,
    pub eval_set: DatasetHandle,
    pub pcs: PcsTable,
    pub global_suppression: SuppressionMap,
    pub user_head_sets: Vec<(String, HeadSet)>,
    pub user_jaccard: Vec<Vec<f64>>,
    pub cluster_model: ClusterModel,
    pub routed_hard: BTreeMap<String, SuppressionMap>,
    pub routed_soft: BTreeMap<String, SuppressionMap>,
    pub global_sweep: GammaSweep,
    pub causal: CausalValidationReport,
    pub k_alignment: Vec<(usize, f64)>,
    pub sparsity: SparsityStats,
    pub report: BenchReport,
}

fn limited<'a>(set: &'a DatasetHandle, user: &str, limit: usize) -> Vec<crate::tokenizer::Example> {
    let exs = set.examples_for(user);
    let take = if limit == 0 { exs.len() } else { limit.min(exs.len()) };
    exs.into_iter().take(take).cloned().collect()
}

/// Run the full benchmark pipeline. Deterministic for a fixed config.
pub fn run_bench(config: &PipelineConfig) -> Result<BenchArtifacts> {
    // Phase 0: synthetic data and tokenizer.
    let specs = generate_users(&config.synth)?;
    let train_set = generate_examples(&specs, &config.synth, Split::Train, config.synth.train_per_user);
    let discover_set =
        generate_examples(&specs, &config.synth, Split::Discover, config.synth.discover_per_user);
    let eval_set = generate_examples(&specs, &config.synth, Split::Eval, config.synth.eval_per_user);
    let user_ids: Vec<String> = specs.keys().cloned().collect();
    let tokenizer = Tokenizer::new(config.synth.content_vocab, user_ids.clone());

    // Phase 0b: training.
    let model_config = config.model_config(&tokenizer);
    log::info!("training {} steps on {} examples", config.train.steps, train_set.examples.len());
    let ckpt = train(model_config.clone(), &tokenizer, &train_set.examples, &config.train)?;

    // Phase 1: global head discovery.
    let discover_pool: Vec<_> = user_ids
        .iter()
        .flat_map(|u| limited(&discover_set, u, config.discover_limit))
        .collect();
    log::info!("global PCS sweep over {} examples", discover_pool.len());
    let pcs = compute_pcs(&ckpt, &tokenizer, &discover_pool)?;
    let global_heads = head_importances(&pcs, config.topk);
    let global_suppression = suppression_from_weighted_heads(
        &global_heads,
        model_config.num_layers,
        model_config.num_heads,
    );

    // Per-user head sets for the Jaccard structure analysis.
    let mut user_head_sets = Vec::new();
    for user in &user_ids {
        let exs = limited(&discover_set, user, config.discover_limit);
        let table = compute_pcs(&ckpt, &tokenizer, &exs)?;
        user_head_sets.push((user.clone(), select_heads(&table, config.topk)));
    }
    let sets: Vec<HeadSet> = user_head_sets.iter().map(|(_, s)| s.clone()).collect();
    let user_jaccard = overlap_matrix(&sets);

    // Phase 2: clustering and routing.
    let embeddings: Vec<Vec<f32>> = user_ids
        .iter()
        .map(|u| {
            let texts: Vec<String> = limited(&discover_set, u, 8)
                .into_iter()
                .flat_map(|ex| ex.profile_texts)
                .collect();
            embed_profile(&ckpt, &tokenizer, &texts)
        })
        .collect::<Result<_>>()?;
    let km = kmeans(&embeddings, config.synth.num_clusters, subseed(config.seed, "kmeans"))?;
    let mut cluster_examples: Vec<Vec<crate::tokenizer::Example>> =
        vec![Vec::new(); config.synth.num_clusters];
    for (user, &c) in user_ids.iter().zip(&km.assignments) {
        cluster_examples[c].extend(limited(&discover_set, user, config.discover_limit));
    }
    let cluster_heads = discover_cluster_heads(&ckpt, &tokenizer, &cluster_examples, config.topk)?;
    let cluster_model = ClusterModel {
        centroids: km.centroids,
        cluster_heads,
        num_clusters: config.synth.num_clusters,
        seed: subseed(config.seed, "kmeans"),
    };

    let mut routed_hard = BTreeMap::new();
    let mut routed_soft = BTreeMap::new();
    for (user, emb) in user_ids.iter().zip(&embeddings) {
        let hard = route(emb, &cluster_model, RouteMode::Hard, 1.0)?;
        let soft = route(emb, &cluster_model, RouteMode::Soft, config.soft_temperature)?;
        routed_hard.insert(
            user.clone(),
            build_suppression(&hard, &cluster_model, model_config.num_layers, model_config.num_heads)?,
        );
        routed_soft.insert(
            user.clone(),
            build_suppression(&soft, &cluster_model, model_config.num_layers, model_config.num_heads)?,
        );
    }

    // Phase 3: sweeps.
    log::info!("gamma sweeps");
    let global_sweep = gamma_sweep(
        &ckpt, &tokenizer, &eval_set, &global_suppression, &config.gammas, config.eval_limit,
    )?;
    let hard_sweep = gamma_sweep_routed(
        &ckpt, &tokenizer, &eval_set, &routed_hard, &config.gammas, config.eval_limit,
    )?;
    let soft_sweep = gamma_sweep_routed(
        &ckpt, &tokenizer, &eval_set, &routed_soft, &config.gammas, config.eval_limit,
    )?;
    let contrast_rows =
        context_contrast_sweep(&ckpt, &tokenizer, &eval_set, &config.gammas, config.eval_limit)?;
    let k_alignment = k_sweep_alignment(
        &ckpt, &tokenizer, &eval_set, &pcs, &config.ks, config.sweep_gamma, config.eval_limit,
    )?;
    let control_seeds: Vec<u64> = (0..config.num_control_seeds)
        .map(|i| subseed(config.seed, &format!("control/{i}")))
        .collect();
    log::info!("causal validation over {} control seeds", control_seeds.len());
    let causal: CausalValidationReport = causal_validation(
        &ckpt, &tokenizer, &eval_set, &pcs, config.topk, &control_seeds, config.eval_limit,
    )?;
    let sparsity = pcs_sparsity_stats(&pcs, config.topk);

    // Assemble the report.
    let mut rows = Vec::new();
    let vanilla = &global_sweep.rows[config.gammas.iter().position(|&g| g == 0.0).unwrap()];
    rows.push(ReportRow {
        method: "vanilla".into(),
        gamma: 0.0,
        k: 0,
        routing: "none".into(),
        mean_nll: vanilla.mean_nll,
        mean_alignment: vanilla.mean_alignment,
        seeds: vec![],
        ci_low: None,
        ci_high: None,
    });
    let sweep_rows = |label: &str, routing: &str, rows_in: &[crate::bench::GammaRow], k: usize| {
        rows_in
            .iter()
            .map(|r| ReportRow {
                method: label.into(),
                gamma: r.gamma,
                k,
                routing: routing.into(),
                mean_nll: r.mean_nll,
                mean_alignment: r.mean_alignment,
                seeds: vec![],
                ci_low: None,
                ci_high: None,
            })
            .collect::<Vec<_>>()
    };
    rows.extend(sweep_rows("dps-global", "none", &global_sweep.rows, config.topk));
    rows.extend(sweep_rows("dps-clustered", "hard", &hard_sweep.rows, config.topk));
    rows.extend(sweep_rows("dps-clustered", "soft", &soft_sweep.rows, config.topk));
    rows.extend(sweep_rows("context-contrast", "none", &contrast_rows, 0));
    for &(k, align) in &k_alignment {
        rows.push(ReportRow {
            method: "k-sweep".into(),
            gamma: config.sweep_gamma,
            k,
            routing: "none".into(),
            mean_nll: f64::NAN,
            mean_alignment: align,
            seeds: vec![],
            ci_low: None,
            ci_high: None,
        });
    }
    let ablation_row = |method: &str, nll: f64, ci: Option<(f64, f64)>, seeds: Vec<u64>| ReportRow {
        method: method.into(),
        gamma: 0.0,
        k: config.topk,
        routing: "none".into(),
        mean_nll: nll,
        mean_alignment: f64::NAN,
        seeds,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
    };
    rows.push(ablation_row("ablate-none", causal.baseline_nll, None, vec![]));
    rows.push(ablation_row(
        "ablate-top-pcs",
        causal.baseline_nll + causal.top_pcs_delta,
        None,
        vec![],
    ));
    rows.push(ablation_row(
        "ablate-random-heads",
        causal.baseline_nll + causal.random_heads.mean,
        Some((
            causal.baseline_nll + causal.random_heads.ci_low,
            causal.baseline_nll + causal.random_heads.ci_high,
        )),
        control_seeds.clone(),
    ));
    rows.push(ablation_row(
        "ablate-random-mask",
        causal.baseline_nll + causal.random_mask.mean,
        Some((
            causal.baseline_nll + causal.random_mask.ci_low,
            causal.baseline_nll + causal.random_mask.ci_high,
        )),
        control_seeds,
    ));

    let report = BenchReport {
        environment: EnvironmentSnapshot::new(config.seed),
        rows,
    };

    Ok(BenchArtifacts {
        config: config.clone(),
        tokenizer,
        ckpt,
        train_set,
        discover_set,
        eval_set,
        pcs,
        global_suppression,
        user_head_sets,
        user_jaccard,
        cluster_model,
        routed_hard,
        routed_soft,
        global_sweep,
        causal,
        k_alignment,
        sparsity,
        report,
    })
}

/// Write the run directory: config.json, model.dpsm, pcs.json,
/// clusters.json, trace.jsonl, report.{csv,json}, heatmaps/*.csv.
pub fn write_artifacts(art: &BenchArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("heatmaps"))?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&art.config)?)?;
    save_checkpoint(&art.ckpt, &dir.join("model.dpsm"))?;
    fs::write(dir.join("pcs.json"), serde_json::to_vec_pretty(&art.pcs)?)?;
    fs::write(dir.join("clusters.json"), serde_json::to_vec_pretty(&art.cluster_model)?)?;
    fs::write(dir.join("sparsity.json"), serde_json::to_vec_pretty(&art.sparsity)?)?;
    emit_report(&art.report, dir)?;

    // Sample decode trace: first eval user, routed suppression.
    let first_user = art.user_head_sets[0].0.clone();
    let ex = art
        .eval_set
        .examples_for(&first_user)
        .into_iter()
        .next()
        .ok_or_else(|| DpsError::Input("no eval example for trace".into()))?;
    let prompt = art.tokenizer.encode_prompt(
        ex,
        art.ckpt.config.max_seq_len,
        art.config.synth.target_len + 1,
    )?;
    let trace = dps_decode(
        &art.ckpt,
        &prompt,
        &art.routed_hard[&first_user],
        &DecodeConfig::new(
            art.config.sweep_gamma,
            art.config.synth.target_len,
            subseed(art.config.seed, "trace"),
        ),
    )?;
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf)?;
    fs::write(dir.join("trace.jsonl"), buf)?;

    // Heatmap grids.
    let layer_labels: Vec<String> = (0..art.pcs.num_layers).map(|l| format!("layer{l}")).collect();
    let head_labels: Vec<String> = (0..art.pcs.num_heads).map(|h| format!("head{h}")).collect();
    let pcs_grid: Vec<Vec<f64>> = (0..art.pcs.num_layers)
        .map(|l| (0..art.pcs.num_heads).map(|h| art.pcs.scores[l * art.pcs.num_heads + h]).collect())
        .collect();
    write_grid_csv(&dir.join("heatmaps").join("pcs.csv"), &layer_labels, &head_labels, &pcs_grid)?;

    let user_labels: Vec<String> = art.user_head_sets.iter().map(|(u, _)| u.clone()).collect();
    write_matrix_csv(&dir.join("heatmaps").join("user_jaccard.csv"), &user_labels, &art.user_jaccard)?;

    let k_labels: Vec<String> = art.config.ks.iter().map(|k| format!("k{k}")).collect();
    let stability = k_sweep_stability(&art.pcs, &art.config.ks);
    write_matrix_csv(&dir.join("heatmaps").join("k_stability.csv"), &k_labels, &stability)?;
    Ok(())
}

/// Rectangular labelled CSV grid (row labels may differ from columns).
fn write_grid_csv(
    path: &Path,
    row_labels: &[String],
    col_labels: &[String],
    grid: &[Vec<f64>],
) -> Result<()> {
    let mut out = String::from("label");
    for c in col_labels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (l, row) in row_labels.iter().zip(grid) {
        out.push_str(l);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Mean within-cluster and cross-cluster Jaccard over distinct user
/// pairs, using the generator's cluster labels.
pub fn within_cross_jaccard(art: &BenchArtifacts) -> (f64, f64) {
    let labels: Vec<usize> = art
        .user_head_sets
        .iter()
        .map(|(u, _)| art.eval_set.specs[u].cluster_id)
        .collect();
    let (mut wsum, mut wn, mut csum, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                wsum += art.user_jaccard[i][j];
                wn += 1;
            } else {
                csum += art.user_jaccard[i][j];
                cn += 1;
            }
        }
    }
    (wsum / wn.max(1) as f64, csum / cn.max(1) as f64)
}
