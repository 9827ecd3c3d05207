//! `reasoner`: command-line entry points for the post-training toolkit.
//!
//! Every subcommand accepts `--config` (TOML), `--seed` (overrides the
//! config) and `--out` (output directory). Errors exit with status 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use reasoner_core::data::{load_dataset, minhash_dedup, read_jsonl, save_dataset, zip_select, Compressor, DedupConfig, ZipSelectConfig};
use reasoner_core::harness::{
    benchmark, emit_report, evaluate, run_distillation, run_repetition_ablation, run_rl, ExperimentConfig, MetricsLog,
};
use reasoner_core::mars::{write_audit_log, AuditRecord, CodeScheme, ExactMatchJudge, ExpectedMode, Mars, MarsConfig};
use reasoner_core::params::{load_checkpoint, save_checkpoint};
use reasoner_core::policy::{TabularPolicy, TokenId, Vocab, NUM_TOY_PROBLEMS};
use reasoner_core::repetition::detect_local_repetition;
use reasoner_core::sched::{
    compare_schedulers, generate_trace, load_trace, save_trace, simulate, write_event_log, DurationModel, SchedMode,
};

#[derive(Parser)]
#[command(name = "reasoner", version, about = "Desk-scale reasoner post-training toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Iterative distillation with inter-iteration merging.
    Distill,
    /// GRPO training with curriculum mixing and guarded decoding.
    Rl {
        /// Start from a saved policy checkpoint instead of uniform.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score responses with the reward router and write an audit log.
    Rewards {
        /// Samples (JSONL).
        #[arg(long)]
        samples: PathBuf,
        /// Responses (JSONL of `{"sample_id", "response"}`).
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value = "staged")]
        scheme: String,
        #[arg(long, default_value = "any")]
        mode: ExpectedMode,
        /// Replace the total with -1 on a format violation.
        #[arg(long)]
        strict_reject: bool,
    },
    /// Near-duplicate removal over prompts.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        ngram: usize,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
    },
    /// Diversity-driven selection by compression ratio.
    Zipselect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value = "deflate-6")]
        compressor: String,
    },
    /// Simulate pipeline scheduling on a trace.
    SimulateScheduler {
        /// Trace (JSONL of stage tasks); generated when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Batches in a generated trace.
        #[arg(long, default_value_t = 64)]
        batches: usize,
        /// Median stage duration of a generated heavy-tail trace.
        #[arg(long, default_value_t = 40.0)]
        median: f64,
        #[arg(long, default_value_t = 6.0)]
        p95_ratio: f64,
        /// bsp or ssp; defaults to the config.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        staleness: Option<usize>,
        /// Workers per stage, e.g. `1,1,1,1`.
        #[arg(long, value_delimiter = ',')]
        workers: Option<Vec<usize>>,
        /// Also sweep BSP against SSP for s = 0..=N.
        #[arg(long)]
        compare: Option<usize>,
    },
    /// Accuracy of a saved policy under the minimum-sample rule.
    Evaluate {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run the repetition guard over token sequences, or the self-repair
    /// ablation when no input is given.
    DetectRepetition {
        /// JSONL of `{"id", "tokens"}`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        sequences: usize,
        #[arg(long, default_value_t = 16384)]
        max_len: usize,
    },
}

#[derive(Deserialize)]
struct ResponseRecord {
    sample_id: String,
    response: String,
}

#[derive(Deserialize)]
struct TokenRecord {
    id: String,
    tokens: Vec<TokenId>,
}

#[derive(Serialize)]
struct DetectionRecord {
    id: String,
    position: usize,
    similarity: f64,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_policy(cfg: &ExperimentConfig, path: &Path) -> Result<TabularPolicy> {
    let params = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(TabularPolicy::from_params(
        params,
        NUM_TOY_PROBLEMS,
        cfg.policy.horizon,
        Vocab::arithmetic().len(),
    )?)
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Distill => {
            let start = Instant::now();
            let report = run_distillation(&cfg)?;
            let mut log = MetricsLog::default();
            log.add_distillation(&report)?;
            log.wall_clock_secs.insert("distill".into(), start.elapsed().as_secs_f64());
            let mut written = emit_report(&log, None, out)?;
            let ckpt = out.join("policy.ckpt");
            save_checkpoint(report.policy.params(), &ckpt)?;
            written.push(ckpt);
            print_written(&written);
            println!(
                "iteration 0 accuracy {:.4}; final {:.4}",
                report.iteration0.accuracy,
                report.final_accuracy()
            );
            if let Some(c) = report.control_accuracy() {
                println!("no-merge control {c:.4}");
            }
        }
        Command::Rl { init } => {
            let init = init.map(|p| load_policy(&cfg, &p)).transpose()?;
            let start = Instant::now();
            let report = run_rl(&cfg, init)?;
            let mut log = MetricsLog::default();
            log.add_rl(&report)?;
            log.wall_clock_secs.insert("rl".into(), start.elapsed().as_secs_f64());
            let mut written = emit_report(&log, None, out)?;
            let ckpt = out.join("policy.ckpt");
            save_checkpoint(report.policy.params(), &ckpt)?;
            written.push(ckpt);
            print_written(&written);
            if let Some((first, last)) = report.reward_gain(20) {
                println!("mean reward first-20 {first:.4}, last-20 {last:.4}");
            }
        }
        Command::Rewards {
            samples,
            responses,
            scheme,
            mode,
            strict_reject,
        } => {
            let code_scheme = match scheme.as_str() {
                "staged" => CodeScheme::Staged,
                "continuous" => CodeScheme::Continuous,
                other => bail!("unknown code scheme `{other}` (staged|continuous)"),
            };
            let samples = load_dataset(&samples)?;
            let by_id: BTreeMap<&str, _> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
            let responses: Vec<ResponseRecord> = read_jsonl(&responses)?;
            let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            for r in &responses {
                if !by_id.contains_key(r.sample_id.as_str()) {
                    bail!("response refers to unknown sample `{}`", r.sample_id);
                }
                groups.entry(&r.sample_id).or_default().push(r.response.clone());
            }
            let mars = Mars::new(MarsConfig {
                code_scheme,
                strict_reject,
                ..MarsConfig::default()
            })
            .with_judge(ExactMatchJudge);
            let mut records = Vec::new();
            for (id, group) in &groups {
                for signal in mars.score_group(by_id[id], group, mode)? {
                    records.push(AuditRecord::new(*id, &signal));
                }
            }
            let path = out.join("rewards.jsonl");
            write_audit_log(&records, &path)?;
            let mean = records.iter().map(|r| r.total).sum::<f64>() / records.len().max(1) as f64;
            println!("scored {} responses, mean reward {mean:.4}", records.len());
            print_written(&[path]);
        }
        Command::Dedup { input, ngram, threshold } => {
            let samples = load_dataset(&input)?;
            let before = samples.len();
            let dcfg = DedupConfig {
                ngram_size: ngram,
                threshold,
                ..DedupConfig::default()
            };
            let kept = minhash_dedup(samples, &dcfg, cfg.seed)?;
            let path = out.join("dedup.jsonl");
            save_dataset(&kept, &path)?;
            println!("kept {} of {before}", kept.len());
            print_written(&[path]);
        }
        Command::Zipselect {
            input,
            budget,
            compressor,
        } => {
            let samples = load_dataset(&input)?;
            let zcfg = ZipSelectConfig {
                compressor: Compressor::parse(&compressor)?,
                ..ZipSelectConfig::new(budget)
            };
            let picked = zip_select(samples, &zcfg)?;
            let path = out.join("zipselect.jsonl");
            save_dataset(&picked, &path)?;
            println!("selected {}", picked.len());
            print_written(&[path]);
        }
        Command::SimulateScheduler {
            trace,
            batches,
            median,
            p95_ratio,
            mode,
            staleness,
            workers,
            compare,
        } => {
            let trace = match trace {
                Some(p) => load_trace(&p)?,
                None => {
                    let model = DurationModel::HeavyTail { median, p95_ratio };
                    let t = generate_trace(batches, &model, cfg.seed)?;
                    save_trace(&t, &out.join("trace.jsonl"))?;
                    t
                }
            };
            let mut scfg = cfg.scheduler.clone();
            if let Some(m) = mode {
                scfg.mode = match m.as_str() {
                    "bsp" => SchedMode::Bsp,
                    "ssp" => SchedMode::Ssp,
                    other => bail!("unknown mode `{other}` (bsp|ssp)"),
                };
            }
            if let Some(s) = staleness {
                scfg.staleness = s;
            }
            if let Some(w) = workers {
                scfg.workers_per_stage = w
                    .try_into()
                    .map_err(|w: Vec<usize>| anyhow::anyhow!("--workers needs 4 values, got {}", w.len()))?;
            }
            let result = simulate(&trace, &scfg)?;
            let events = out.join("events.csv");
            write_event_log(&result.events, &events)?;
            let metrics = out.join("metrics.json");
            write_json(&result.metrics, &metrics)?;
            let m = &result.metrics;
            println!(
                "makespan {} ticks, device idle {}, throughput {:.5} batches/tick, max staleness {}",
                m.makespan, m.device_idle, m.throughput, m.max_observed_staleness
            );
            let mut written = vec![events, metrics];
            if let Some(max_s) = compare {
                let rows = compare_schedulers(&trace, &(0..=max_s).collect::<Vec<_>>(), &scfg)?;
                let path = out.join("comparison.json");
                write_json(&rows, &path)?;
                for r in &rows {
                    println!(
                        "{:>8}: makespan {:>7} device idle {:>7} reduction {:>6.2}%",
                        r.label, r.makespan, r.device_idle, r.idle_reduction_pct
                    );
                }
                written.push(path);
            }
            print_written(&written);
        }
        Command::Evaluate { policy } => {
            let vocab = Vocab::arithmetic();
            let policy = match policy {
                Some(p) => load_policy(&cfg, &p)?,
                None => TabularPolicy::uniform(NUM_TOY_PROBLEMS, cfg.policy.horizon, vocab.len())?,
            };
            let pool = cfg.load_pool(cfg.data.pool_size)?;
            let bench = benchmark(&cfg, &pool);
            let r = evaluate(&policy, &bench, &cfg.eval.generation, cfg.eval.min_effective, cfg.seed)?;
            let path = out.join("eval.json");
            write_json(&r, &path)?;
            println!(
                "accuracy {:.4} ± {:.4} over {} runs of {} prompts",
                r.accuracy, r.stderr, r.runs, r.benchmark_size
            );
            print_written(&[path]);
        }
        Command::DetectRepetition {
            input,
            sequences,
            max_len,
        } => match input {
            Some(path) => {
                let det = &cfg.detector;
                let records: Vec<TokenRecord> = read_jsonl(&path)?;
                let mut found = Vec::new();
                for r in &records {
                    for end in (det.t_detect..=r.tokens.len()).step_by(det.t_detect) {
                        if let Some(e) = detect_local_repetition(&r.tokens[..end], end, det) {
                            found.push(DetectionRecord {
                                id: r.id.clone(),
                                position: e.position,
                                similarity: e.similarity,
                            });
                        }
                    }
                }
                let flagged = found
                    .iter()
                    .map(|d| d.id.as_str())
                    .collect::<std::collections::BTreeSet<_>>()
                    .len();
                let path = out.join("detections.json");
                write_json(&found, &path)?;
                println!("{flagged} of {} sequences flagged", records.len());
                print_written(&[path]);
            }
            None => {
                let start = Instant::now();
                let report = run_repetition_ablation(&cfg, sequences, max_len)?;
                let mut log = MetricsLog::default();
                log.add_ablation(&report)?;
                log.wall_clock_secs.insert("repetition".into(), start.elapsed().as_secs_f64());
                for r in &report.runs {
                    println!(
                        "{:>11}: flagged {} injected {} truncated {}",
                        r.setting, r.flagged, r.injected, r.truncated
                    );
                }
                print_written(&emit_report(&log, Some(&report), out)?);
            }
        },
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        let mut msg = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if !msg.contains(&cause) {
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
