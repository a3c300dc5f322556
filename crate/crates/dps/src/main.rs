//! `dps` — Differential Preference Steering pipeline CLI.
//!
//! Every subcommand is a thin shell over the library; all randomness
//! descends from `--seed` through named sub-seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dps::bench::pcs_sparsity_stats;
use dps::decode::{dps_decode, vanilla_decode, DecodeConfig, Strategy};
use dps::discovery::{compute_pcs, head_importances, select_heads, PcsTable};
use dps::error::{DpsError, Result};
use dps::flops::FlopsModel;
use dps::model::{load_checkpoint, save_checkpoint, train, ModelConfig, TrainConfig};
use dps::pipeline::{run_bench, within_cross_jaccard, write_artifacts, PipelineConfig};
use dps::rng::subseed;
use dps::routing::suppression_from_weighted_heads;
use dps::synth::{generate_examples, generate_users, DatasetHandle, Split, SynthConfig};
use dps::tokenizer::Tokenizer;

#[derive(Parser)]
#[command(name = "dps", version, about = "Preference-head discovery and differential preference steering")]
struct Cli {
    /// Rayon thread count (1 keeps runs fully deterministic in timing too).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic personalization benchmark dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 8)]
        users_per_cluster: usize,
        #[arg(long, default_value_t = 200)]
        train_per_user: usize,
        #[arg(long, default_value_t = 64)]
        discover_per_user: usize,
        #[arg(long, default_value_t = 64)]
        eval_per_user: usize,
    },
    /// Train the toy transformer on a synth dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 4)]
        d_head: usize,
        #[arg(long, default_value_t = 64)]
        d_ff: usize,
        #[arg(long, default_value_t = 64)]
        max_seq_len: usize,
    },
    /// Compute Preference Contribution Scores and select top-K heads.
    Discover {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Discover)]
        split: SplitArg,
        #[arg(long, default_value_t = 8)]
        topk: usize,
        /// Per-user example cap (0 = all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
        /// Selected head set with importances (default: <out dir>/heads.json).
        #[arg(long)]
        heads_out: Option<PathBuf>,
    },
    /// Embed profiles, cluster users, and discover per-cluster heads.
    Cluster {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clusters: usize,
        #[arg(long, default_value_t = 8)]
        topk: usize,
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one example with differential preference steering.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// User id from the dataset; defaults to the first user.
        #[arg(long)]
        user: Option<String>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// PcsTable JSON produced by `discover`.
        #[arg(long)]
        heads: PathBuf,
        #[arg(long, default_value_t = 8)]
        topk: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_new_tokens: usize,
        /// JSONL step trace output path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Full pipeline: synth -> train -> discover -> cluster -> sweeps.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shrunk preset for smoke runs.
        #[arg(long)]
        small: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Inference FLOPs estimate under the calibrated cost model.
    Flops {
        #[arg(long, default_value_t = 1024)]
        prompt_len: usize,
        #[arg(long, default_value_t = 32)]
        gen_len: usize,
        #[arg(long, default_value_t = 2)]
        passes: usize,
        /// Baseline total (TFlop) the effective-parameter constant is
        /// calibrated against at prompt 1024, gen 32, one pass.
        #[arg(long, default_value_t = 13.04)]
        calibrate_to: f64,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    Train,
    Discover,
    Eval,
}

#[derive(Copy, Clone, ValueEnum)]
enum StrategyArg {
    Greedy,
    Sample,
}

/// Categorized exit codes: 3 input, 4 config, 5 io, 6 json, 7 checkpoint
/// format, 8 training divergence (clap itself uses 2 for flag errors).
fn exit_code(err: &DpsError) -> u8 {
    match err {
        DpsError::Input(_) | DpsError::SequenceTooLong { .. } => 3,
        DpsError::Config(_) => 4,
        DpsError::Io(_) => 5,
        DpsError::Json(_) => 6,
        DpsError::MagicMismatch { .. }
        | DpsError::VersionMismatch(_)
        | DpsError::Truncated(_)
        | DpsError::ShapeMismatch { .. } => 7,
        DpsError::TrainingDiverged { .. } => 8,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(fs::write(path, serde_json::to_vec_pretty(value)?)?)
}

fn load_split(data: &Path, split: Split) -> Result<DatasetHandle> {
    let name = match split {
        Split::Train => "train.json",
        Split::Discover => "discover.json",
        Split::Eval => "eval.json",
    };
    read_json(&data.join(name))
}

fn tokenizer_for(data: &Path) -> Result<(SynthConfig, Tokenizer)> {
    let synth: SynthConfig = read_json(&data.join("synth_config.json"))?;
    let specs = generate_users(&synth)?;
    let users: Vec<String> = specs.keys().cloned().collect();
    Ok((synth.clone(), Tokenizer::new(synth.content_vocab, users)))
}

fn limited_examples(set: &DatasetHandle, limit: usize) -> Vec<dps::tokenizer::Example> {
    let mut out = Vec::new();
    for user in set.user_ids() {
        let exs = set.examples_for(&user);
        let take = if limit == 0 { exs.len() } else { limit.min(exs.len()) };
        out.extend(exs.into_iter().take(take).cloned());
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Synth {
            out,
            seed,
            clusters,
            users_per_cluster,
            train_per_user,
            discover_per_user,
            eval_per_user,
        } => {
            let config = SynthConfig {
                num_clusters: clusters,
                users_per_cluster,
                train_per_user,
                discover_per_user,
                eval_per_user,
                seed: subseed(seed, "synth"),
                ..SynthConfig::default()
            };
            let specs = generate_users(&config)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("synth_config.json"), &config)?;
            for (split, count, name) in [
                (Split::Train, config.train_per_user, "train.json"),
                (Split::Discover, config.discover_per_user, "discover.json"),
                (Split::Eval, config.eval_per_user, "eval.json"),
            ] {
                let set = generate_examples(&specs, &config, split, count);
                write_json(&out.join(name), &set)?;
            }
            println!(
                "wrote {} users x ({} train / {} discover / {} eval) to {}",
                specs.len(),
                config.train_per_user,
                config.discover_per_user,
                config.eval_per_user,
                out.display()
            );
        }
        Cmd::Train {
            data,
            out,
            steps,
            batch_size,
            lr,
            weight_decay,
            seed,
            layers,
            heads,
            d_head,
            d_ff,
            max_seq_len,
        } => {
            let (_, tokenizer) = tokenizer_for(&data)?;
            let train_set = load_split(&data, Split::Train)?;
            let config = ModelConfig {
                num_layers: layers,
                num_heads: heads,
                d_model: heads * d_head,
                d_head,
                d_ff,
                vocab_size: tokenizer.vocab_size(),
                max_seq_len,
                seed: subseed(seed, "init"),
            };
            let hp = TrainConfig {
                steps,
                batch_size,
                learning_rate: lr,
                weight_decay,
                seed: subseed(seed, "train"),
                ..TrainConfig::default()
            };
            let ckpt = train(config.clone(), &tokenizer, &train_set.examples, &hp)?;
            save_checkpoint(&ckpt, &out)?;
            write_json(&out.with_extension("config.json"), &(&config, &hp))?;
            println!("saved checkpoint to {}", out.display());
        }
        Cmd::Discover {
            ckpt,
            data,
            split,
            topk,
            limit,
            out,
            heads_out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let (_, tokenizer) = tokenizer_for(&data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Discover => Split::Discover,
                SplitArg::Eval => Split::Eval,
            };
            let set = load_split(&data, split)?;
            let examples = limited_examples(&set, limit);
            let pcs = compute_pcs(&ckpt, &tokenizer, &examples)?;
            write_json(&out, &pcs)?;
            let head_set = select_heads(&pcs, topk);
            if topk == 0 {
                eprintln!("warning: --topk 0 selects an empty head set");
            }
            let heads_path = heads_out
                .unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).join("heads.json"));
            write_json(&heads_path, &(&head_set, &head_importances(&pcs, topk)))?;
            let stats = pcs_sparsity_stats(&pcs, topk.max(1));
            println!(
                "PCS over {} heads: top-{topk} mass {:.3}, positive fraction {:.3}",
                pcs.scores.len(),
                stats.top_k_mass,
                stats.positive_fraction
            );
        }
        Cmd::Cluster {
            ckpt,
            data,
            clusters,
            topk,
            limit,
            seed,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let (_, tokenizer) = tokenizer_for(&data)?;
            let set = load_split(&data, Split::Discover)?;
            let users = set.user_ids();
            let embeddings: Vec<Vec<f32>> = users
                .iter()
                .map(|u| {
                    let texts: Vec<String> = set
                        .examples_for(u)
                        .into_iter()
                        .take(8)
                        .flat_map(|ex| ex.profile_texts.clone())
                        .collect();
                    dps::routing::embed_profile(&ckpt, &tokenizer, &texts)
                })
                .collect::<Result<_>>()?;
            let km = dps::routing::kmeans(&embeddings, clusters, subseed(seed, "kmeans"))?;
            let mut cluster_examples = vec![Vec::new(); clusters];
            for (user, &c) in users.iter().zip(&km.assignments) {
                let exs = set.examples_for(user);
                let take = if limit == 0 { exs.len() } else { limit.min(exs.len()) };
                cluster_examples[c].extend(exs.into_iter().take(take).cloned());
            }
            let cluster_heads =
                dps::routing::discover_cluster_heads(&ckpt, &tokenizer, &cluster_examples, topk)?;
            let model = dps::routing::ClusterModel {
                centroids: km.centroids,
                cluster_heads,
                num_clusters: clusters,
                seed: subseed(seed, "kmeans"),
            };
            write_json(&out, &model)?;
            println!(
                "clustered {} users into {} clusters (assignments {:?})",
                users.len(),
                clusters,
                km.assignments
            );
        }
        Cmd::Decode {
            ckpt,
            data,
            user,
            index,
            gamma,
            heads,
            topk,
            strategy,
            temperature,
            seed,
            max_new_tokens,
            trace,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let (_, tokenizer) = tokenizer_for(&data)?;
            let set = load_split(&data, Split::Eval)?;
            let user = match user {
                Some(u) => u,
                None => set
                    .user_ids()
                    .first()
                    .ok_or_else(|| DpsError::Input("dataset has no users".into()))?
                    .clone(),
            };
            let examples = set.examples_for(&user);
            let example = examples
                .get(index)
                .ok_or_else(|| DpsError::Input(format!("user {user} has no example {index}")))?;
            let pcs: PcsTable = read_json(&heads)?;
            let suppression = suppression_from_weighted_heads(
                &head_importances(&pcs, topk),
                ckpt.config.num_layers,
                ckpt.config.num_heads,
            );
            let prompt =
                tokenizer.encode_prompt(example, ckpt.config.max_seq_len, max_new_tokens + 1)?;
            let mut config = DecodeConfig::new(gamma, max_new_tokens, subseed(seed, "decode"));
            config.strategy = match strategy {
                StrategyArg::Greedy => Strategy::Greedy,
                StrategyArg::Sample => Strategy::Temperature { temperature },
            };
            config.eos_token = Some(tokenizer.eos());
            let result = if gamma == 0.0 {
                vanilla_decode(&ckpt, &prompt, &config)?
            } else {
                dps_decode(&ckpt, &prompt, &suppression, &config)?
            };
            if let Some(path) = trace {
                let mut buf = Vec::new();
                result.write_jsonl(&mut buf)?;
                fs::write(path, buf)?;
            }
            let new_tokens = &result.tokens[..];
            let spec = &set.specs[&user];
            let align = dps::synth::alignment_score_tokens(new_tokens, spec).unwrap_or(0.0);
            println!("user {user} example {index} gamma {gamma}");
            println!("tokens: {new_tokens:?}");
            println!("alignment: {align:.3}");
        }
        Cmd::Bench { out, seed, small, steps } => {
            let mut config = if small {
                PipelineConfig::small(seed)
            } else {
                PipelineConfig::default_bench(seed)
            };
            if let Some(steps) = steps {
                config.train.steps = steps;
            }
            let artifacts = run_bench(&config)?;
            write_artifacts(&artifacts, &out)?;
            let (within, cross) = within_cross_jaccard(&artifacts);
            println!("bench complete: {}", out.display());
            println!(
                "top-{} PCS mass {:.3}; within-cluster Jaccard {:.3} vs cross {:.3}",
                config.topk, artifacts.sparsity.top_k_mass, within, cross
            );
            for row in &artifacts.global_sweep.rows {
                println!(
                    "gamma {:>5}: alignment {:.4}, nll {:.4}",
                    row.gamma, row.mean_alignment, row.mean_nll
                );
            }
        }
        Cmd::Flops {
            prompt_len,
            gen_len,
            passes,
            calibrate_to,
        } => {
            if !(1..=2).contains(&passes) {
                return Err(DpsError::Input("passes must be 1 or 2".into()));
            }
            let mut model = FlopsModel::llama8b_like();
            model.calibrate(calibrate_to, 1024, 32);
            let est = model.estimate(prompt_len, gen_len, passes);
            let ratio = model.overhead_ratio(prompt_len, gen_len);
            println!(
                "prompt {prompt_len} gen {gen_len} passes {passes}: prefill {:.2} + decode {:.2} = {:.2} TFlop",
                est.prefill_tflop, est.decode_tflop, est.total_tflop
            );
            println!("two-pass overhead ratio: {ratio:.3}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
