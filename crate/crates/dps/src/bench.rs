//! Evaluation metrics and experiment suite: causal validation against
//! random controls, gamma and K sweeps, PCS sparsity statistics, and
//! deterministic report emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{random_continuous_mask, random_head_mask};
use crate::discovery::{head_importances, select_heads, PcsTable};
use crate::error::{DpsError, Result};
use crate::math;
use crate::model::{forward_logits, LogitRows, ModelCheckpoint, SuppressionMap};
use crate::routing::suppression_from_weighted_heads;
use crate::synth::{DatasetHandle, PreferenceSpec};
use crate::tokenizer::{Role, Tokenizer, TokenSequence};

// ---------------------------------------------------------------------------
// statistics helpers
// ---------------------------------------------------------------------------

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-sided 95% Student-t quantile, by degrees of freedom.
fn t_quantile_95(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        TABLE[df - 1]
    } else {
        1.96
    }
}

/// Sample mean with a 95% t-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub label: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: Vec<f64>,
}

impl ConditionStats {
    pub fn from_samples(label: &str, samples: Vec<f64>) -> Self {
        let m = mean(&samples);
        let n = samples.len();
        let half = if n > 1 {
            let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            t_quantile_95(n - 1) * (var / n as f64).sqrt()
        } else {
            0.0
        };
        ConditionStats {
            label: label.to_string(),
            mean: m,
            ci_low: m - half,
            ci_high: m + half,
            samples,
        }
    }
}

// ---------------------------------------------------------------------------
// shared evaluation plumbing
// ---------------------------------------------------------------------------

/// A pre-encoded evaluation example.
pub struct EvalCase {
    pub user_id: String,
    pub seq: TokenSequence,
    /// Target positions t; the prediction row is t - 1.
    pub target_positions: Vec<usize>,
}

/// Encode up to `per_user_limit` examples per user (0 = no limit).
pub fn build_eval_cases(
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    max_seq_len: usize,
    per_user_limit: usize,
) -> Result<Vec<EvalCase>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cases = Vec::new();
    for ex in &dataset.examples {
        let c = counts.entry(ex.user_id.as_str()).or_insert(0);
        if per_user_limit > 0 && *c >= per_user_limit {
            continue;
        }
        *c += 1;
        let seq = tokenizer.encode_example(ex, max_seq_len)?;
        let roles = seq.roles.as_ref().unwrap();
        let target_positions: Vec<usize> =
            (1..seq.len()).filter(|&t| roles[t] == Role::Target).collect();
        cases.push(EvalCase {
            user_id: ex.user_id.clone(),
            seq,
            target_positions,
        });
    }
    Ok(cases)
}

/// Mean NLL of a set of cases under a suppression map (None = baseline).
pub fn mean_nll(
    ckpt: &ModelCheckpoint,
    cases: &[EvalCase],
    suppression: Option<&SuppressionMap>,
) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        let logits = forward_logits(ckpt, &case.seq, suppression)?;
        let mut nll = 0.0;
        for &t in &case.target_positions {
            nll -= math::log_softmax_at(logits.row(t - 1), case.seq.ids[t] as usize);
        }
        total += nll / case.target_positions.len() as f64;
    }
    Ok(total / cases.len() as f64)
}

/// Teacher-forced contrastive metrics for one case at one gamma, from
/// precomputed pref/gen logits: (mean target NLL, mean preferred-vocab
/// probability mass of the combined distribution at target positions).
fn contrast_metrics(
    case: &EvalCase,
    spec: &PreferenceSpec,
    pref: &LogitRows,
    gen: &LogitRows,
    gamma: f64,
) -> (f64, f64) {
    let v = pref.vocab_size;
    let mut nll = 0.0f64;
    let mut align = 0.0f64;
    let mut row = vec![0.0f32; v];
    for &t in &case.target_positions {
        let prow = pref.row(t - 1);
        if gamma == 0.0 {
            row.copy_from_slice(prow);
        } else {
            let grow = gen.row(t - 1);
            let g = gamma as f32;
            for i in 0..v {
                row[i] = (1.0 + g) * prow[i] - g * grow[i];
            }
        }
        nll -= math::log_softmax_at(&row, case.seq.ids[t] as usize);
        // combined distribution mass on the preferred block
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for &x in row.iter() {
            sum += (x as f64 - max).exp();
        }
        let mut mass = 0.0f64;
        for &tok in &spec.preferred_vocab {
            if (tok as usize) < v {
                mass += (row[tok as usize] as f64 - max).exp();
            }
        }
        align += mass / sum;
    }
    let n = case.target_positions.len() as f64;
    (nll / n, align / n)
}

// ---------------------------------------------------------------------------
// causal validation (true heads vs random controls)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalValidationReport {
    pub k: usize,
    pub baseline_nll: f64,
    /// NLL increase from ablating the top-k PCS heads (deterministic).
    pub top_pcs_delta: f64,
    pub random_heads: ConditionStats,
    pub random_mask: ConditionStats,
}

/// Compare NLL degradation from ablating top-PCS heads against (i)
/// random head sets of the same cardinality and (ii) random continuous
/// masks of matched L1 mass, over the given control seeds.
pub fn causal_validation(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    pcs: &PcsTable,
    k: usize,
    seeds: &[u64],
    per_user_limit: usize,
) -> Result<CausalValidationReport> {
    let cfg = &ckpt.config;
    let cases = build_eval_cases(tokenizer, dataset, cfg.max_seq_len, per_user_limit)?;
    if cases.is_empty() {
        return Err(DpsError::Input("causal validation needs examples".into()));
    }
    let baseline = mean_nll(ckpt, &cases, None)?;

    let top = select_heads(pcs, k);
    let top_mask = SuppressionMap::from_heads(cfg.num_layers, cfg.num_heads, &top.heads);
    let top_pcs_delta = mean_nll(ckpt, &cases, Some(&top_mask))? - baseline;

    let mut head_deltas = Vec::new();
    let mut mask_deltas = Vec::new();
    for &seed in seeds {
        let rand_heads = random_head_mask(cfg.num_layers, cfg.num_heads, k, seed)?;
        head_deltas.push(mean_nll(ckpt, &cases, Some(&rand_heads))? - baseline);
        let rand_mask = random_continuous_mask(&top_mask, seed);
        mask_deltas.push(mean_nll(ckpt, &cases, Some(&rand_mask))? - baseline);
    }

    Ok(CausalValidationReport {
        k,
        baseline_nll: baseline,
        top_pcs_delta,
        random_heads: ConditionStats::from_samples("random-heads", head_deltas),
        random_mask: ConditionStats::from_samples("random-mask", mask_deltas),
    })
}

// ---------------------------------------------------------------------------
// gamma and K sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub mean_nll: f64,
    pub mean_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGammaRow {
    pub user_id: String,
    /// (gamma, mean alignment, mean NLL), in sweep order.
    pub by_gamma: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub rows: Vec<GammaRow>,
    pub per_user: Vec<UserGammaRow>,
}

/// Teacher-forced gamma sweep on the eval split with one suppression map
/// shared by every user. The gamma = 0 entries coincide exactly with
/// unsteered metrics.
pub fn gamma_sweep(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    suppression: &SuppressionMap,
    gammas: &[f64],
    per_user_limit: usize,
) -> Result<GammaSweep> {
    let maps: BTreeMap<String, SuppressionMap> = dataset
        .user_ids()
        .into_iter()
        .map(|u| (u, suppression.clone()))
        .collect();
    gamma_sweep_routed(ckpt, tokenizer, dataset, &maps, gammas, per_user_limit)
}

/// Gamma sweep where each user carries their own (e.g. cluster-routed)
/// suppression map.
pub fn gamma_sweep_routed(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    maps: &BTreeMap<String, SuppressionMap>,
    gammas: &[f64],
    per_user_limit: usize,
) -> Result<GammaSweep> {
    if !gammas.contains(&0.0) {
        return Err(DpsError::Input("gamma sweep must include gamma = 0".into()));
    }
    let cases = build_eval_cases(tokenizer, dataset, ckpt.config.max_seq_len, per_user_limit)?;
    // (user -> gamma index -> (nll sum, align sum, count))
    let mut per_user: BTreeMap<String, Vec<(f64, f64, usize)>> = BTreeMap::new();
    for case in &cases {
        let spec = dataset
            .specs
            .get(&case.user_id)
            .ok_or_else(|| DpsError::Input(format!("no spec for user {}", case.user_id)))?;
        let suppression = maps
            .get(&case.user_id)
            .ok_or_else(|| DpsError::Input(format!("no routing map for {}", case.user_id)))?;
        let pref = forward_logits(ckpt, &case.seq, None)?;
        let gen = forward_logits(ckpt, &case.seq, Some(suppression))?;
        let acc = per_user
            .entry(case.user_id.clone())
            .or_insert_with(|| vec![(0.0, 0.0, 0); gammas.len()]);
        for (gi, &gamma) in gammas.iter().enumerate() {
            let (nll, align) = contrast_metrics(case, spec, &pref, &gen, gamma);
            acc[gi].0 += nll;
            acc[gi].1 += align;
            acc[gi].2 += 1;
        }
    }

    let per_user: Vec<UserGammaRow> = per_user
        .into_iter()
        .map(|(user_id, acc)| UserGammaRow {
            user_id,
            by_gamma: gammas
                .iter()
                .zip(&acc)
                .map(|(&g, &(nll, align, n))| (g, align / n as f64, nll / n as f64))
                .collect(),
        })
        .collect();

    let rows = gammas
        .iter()
        .enumerate()
        .map(|(gi, &gamma)| {
            let aligns: Vec<f64> = per_user.iter().map(|u| u.by_gamma[gi].1).collect();
            let nlls: Vec<f64> = per_user.iter().map(|u| u.by_gamma[gi].2).collect();
            GammaRow {
                gamma,
                mean_nll: mean(&nlls),
                mean_alignment: mean(&aligns),
            }
        })
        .collect();

    Ok(GammaSweep { rows, per_user })
}

/// Teacher-forced context-contrast baseline: the generic pass drops the
/// profile section instead of suppressing heads. Target ordinals are
/// matched across the two encodings. Returns rows in gamma order.
pub fn context_contrast_sweep(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    gammas: &[f64],
    per_user_limit: usize,
) -> Result<Vec<GammaRow>> {
    let max_len = ckpt.config.max_seq_len;
    let cases = build_eval_cases(tokenizer, dataset, max_len, per_user_limit)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut alts = Vec::new();
    for ex in &dataset.examples {
        let c = counts.entry(ex.user_id.as_str()).or_insert(0);
        if per_user_limit > 0 && *c >= per_user_limit {
            continue;
        }
        *c += 1;
        let mut stripped = ex.clone();
        stripped.profile_texts.clear();
        let seq = tokenizer.encode_example(&stripped, max_len)?;
        let roles = seq.roles.as_ref().unwrap();
        let positions: Vec<usize> =
            (1..seq.len()).filter(|&t| roles[t] == Role::Target).collect();
        alts.push((seq, positions));
    }

    let v = ckpt.config.vocab_size;
    let mut sums = vec![(0.0f64, 0.0f64); gammas.len()];
    for (case, (alt_seq, alt_pos)) in cases.iter().zip(&alts) {
        let spec = &dataset.specs[&case.user_id];
        let pref = forward_logits(ckpt, &case.seq, None)?;
        let gen = forward_logits(ckpt, alt_seq, None)?;
        let mut row = vec![0.0f32; v];
        for (gi, &gamma) in gammas.iter().enumerate() {
            let mut nll = 0.0f64;
            let mut align = 0.0f64;
            for (i, &t) in case.target_positions.iter().enumerate() {
                let prow = pref.row(t - 1);
                if gamma == 0.0 {
                    row.copy_from_slice(prow);
                } else {
                    let grow = gen.row(alt_pos[i] - 1);
                    let g = gamma as f32;
                    for j in 0..v {
                        row[j] = (1.0 + g) * prow[j] - g * grow[j];
                    }
                }
                nll -= math::log_softmax_at(&row, case.seq.ids[t] as usize);
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                let sum: f64 = row.iter().map(|&x| (x as f64 - max).exp()).sum();
                let mass: f64 = spec
                    .preferred_vocab
                    .iter()
                    .filter(|&&tok| (tok as usize) < v)
                    .map(|&tok| (row[tok as usize] as f64 - max).exp())
                    .sum();
                align += mass / sum;
            }
            let n = case.target_positions.len() as f64;
            sums[gi].0 += nll / n;
            sums[gi].1 += align / n;
        }
    }
    let n = cases.len() as f64;
    Ok(gammas
        .iter()
        .zip(&sums)
        .map(|(&gamma, &(nll, align))| GammaRow {
            gamma,
            mean_nll: nll / n,
            mean_alignment: align / n,
        })
        .collect())
}

/// Mean combined-distribution alignment for each K at a fixed gamma; the
/// pref pass is shared across K.
pub fn k_sweep_alignment(
    ckpt: &ModelCheckpoint,
    tokenizer: &Tokenizer,
    dataset: &DatasetHandle,
    pcs: &PcsTable,
    ks: &[usize],
    gamma: f64,
    per_user_limit: usize,
) -> Result<Vec<(usize, f64)>> {
    let cfg = &ckpt.config;
    let cases = build_eval_cases(tokenizer, dataset, cfg.max_seq_len, per_user_limit)?;
    let prefs: Vec<LogitRows> = cases
        .iter()
        .map(|c| forward_logits(ckpt, &c.seq, None))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for &k in ks {
        let sup = suppression_from_weighted_heads(
            &head_importances(pcs, k),
            cfg.num_layers,
            cfg.num_heads,
        );
        let mut align = 0.0f64;
        for (case, pref) in cases.iter().zip(&prefs) {
            let spec = &dataset.specs[&case.user_id];
            let gen = forward_logits(ckpt, &case.seq, Some(&sup))?;
            let (_, a) = contrast_metrics(case, spec, pref, &gen, gamma);
            align += a;
        }
        out.push((k, align / cases.len() as f64));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PCS sparsity statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub top_k_mass: f64,
    pub excess_kurtosis: f64,
    pub positive_fraction: f64,
    pub degenerate: bool,
}

/// top-K mass = sum of top-K positive scores / sum of all positive
/// scores; kurtosis over the raw score distribution.
pub fn pcs_sparsity_stats(pcs: &PcsTable, k: usize) -> SparsityStats {
    let mut positive: Vec<f64> = pcs.scores.iter().cloned().filter(|&s| s > 0.0).collect();
    positive.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let pos_sum: f64 = positive.iter().sum();
    let top_sum: f64 = positive.iter().take(k).sum();
    let degenerate = pos_sum == 0.0;
    let top_k_mass = if degenerate { 0.0 } else { top_sum / pos_sum };

    let m = mean(&pcs.scores);
    let m2 = pcs.scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / pcs.scores.len() as f64;
    let excess_kurtosis = if m2 > 0.0 {
        let m4 = pcs.scores.iter().map(|s| (s - m).powi(4)).sum::<f64>() / pcs.scores.len() as f64;
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    };
    SparsityStats {
        top_k_mass,
        excess_kurtosis,
        positive_fraction: positive.len() as f64 / pcs.scores.len() as f64,
        degenerate,
    }
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub gamma: f64,
    pub k: usize,
    pub routing: String,
    pub mean_nll: f64,
    pub mean_alignment: f64,
    pub seeds: Vec<u64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSnapshot {
    pub crate_version: String,
    pub root_seed: u64,
}

impl EnvironmentSnapshot {
    pub fn new(root_seed: u64) -> Self {
        EnvironmentSnapshot {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            root_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: EnvironmentSnapshot,
    pub rows: Vec<ReportRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report_to_csv(report: &BenchReport) -> String {
    let mut out = String::from("method,gamma,k,routing,mean_nll,mean_alignment,seeds,ci_low,ci_high\n");
    for r in &report.rows {
        let seeds = r
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.gamma,
            r.k,
            r.routing,
            r.mean_nll,
            r.mean_alignment,
            seeds,
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
        ));
    }
    out
}

pub fn report_rows_from_csv(csv: &str) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for line in csv.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(DpsError::Input(format!("bad report row: {line}")));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| DpsError::Input(e.to_string()))
            }
        };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| DpsError::Input(e.to_string()))
        };
        rows.push(ReportRow {
            method: f[0].to_string(),
            gamma: num(f[1])?,
            k: f[2].parse().map_err(|_| DpsError::Input("bad k".into()))?,
            routing: f[3].to_string(),
            mean_nll: num(f[4])?,
            mean_alignment: num(f[5])?,
            seeds: if f[6].is_empty() {
                vec![]
            } else {
                f[6].split(';')
                    .map(|s| s.parse().map_err(|_| DpsError::Input("bad seed".into())))
                    .collect::<Result<_>>()?
            },
            ci_low: parse_opt(f[7])?,
            ci_high: parse_opt(f[8])?,
        });
    }
    Ok(rows)
}

/// Write report.csv and report.json into `dir`.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report_to_csv(report))?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

/// CSV grid with row/column labels, for external heatmap plotting.
pub fn write_matrix_csv(path: &Path, labels: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from("label");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
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
