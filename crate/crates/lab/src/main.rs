//! `dnkd` — command-line front end for the distillation lab.
//!
//! Subcommands mirror the offline stages: gen-corpus, train-baseline,
//! build-store, build-cache, train-student, evaluate, sweep, grad-report,
//! and verify. Errors print one machine-parsable line on stderr and exit
//! with a category-specific code (see `exit_code`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnkd_core::seq2seq::LossMode;
use dnkd_core::train::TrainError;
use dnkd_lab::config::{parse_axis, parse_mode, ExperimentConfig, Overrides};
use dnkd_lab::formats::FormatError;
use dnkd_lab::pipeline::{
    baseline_stage, build_cache_stage, build_store_stage, evaluate_stage, gen_corpus_stage,
    grad_report_stage, student_stage, sweep_stage, PipelineError, RunDir,
};
use dnkd_lab::verify::run_all;

#[derive(Parser)]
#[command(name = "dnkd", about = "Desk-scale non-parametric knowledge distillation lab", version)]
struct Cli {
    /// Experiment configuration file (defaults to `<run-dir>/config` when
    /// present, otherwise built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory holding corpus, checkpoints, datastore, cache, reports.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    /// Override every seed in the config (task seed and training seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the neighbor count k.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Override the teacher softmax temperature.
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Override the non-target distillation weight.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Override the CE/distillation mix.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Override self-exclusion during retrieval (on/off).
    #[arg(long, global = true, value_parser = parse_on_off)]
    self_exclude: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on/off, got {other:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/dev/test corpora.
    GenCorpus,
    /// Train the cross-entropy baseline for every seed.
    TrainBaseline,
    /// Build the kNN datastore from the first-seed baseline checkpoint.
    BuildStore,
    /// Precompute per-position neighbors over the datastore.
    BuildCache,
    /// Train students against the frozen datastore.
    TrainStudent {
        /// Training objective: ce, nkd, or dnkd.
        #[arg(long, value_parser = parse_mode)]
        mode: LossMode,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        /// Checkpoint path (relative paths resolve inside the run dir).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One full student run per value per seed along one axis.
    Sweep {
        /// Axis to sweep: k, beta, or tau.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Per-token gradient-norm comparison of the coupled and decoupled
    /// losses on sampled positions from both regimes.
    GradReport {
        /// Checkpoint to probe (defaults to the first-seed baseline).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the identity, oracle, and gradient self-check suites.
    Verify,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = if let Some(path) = &cli.config {
        ExperimentConfig::parse_file(path)?
    } else {
        let run_config = cli.run_dir.join("config");
        if run_config.exists() {
            ExperimentConfig::parse_file(&run_config)?
        } else {
            ExperimentConfig::default()
        }
    };
    let overrides = Overrides {
        seed: cli.seed,
        k: cli.k,
        tau: cli.tau,
        beta: cli.beta,
        lambda: cli.lambda,
        self_exclude: cli.self_exclude,
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Stable exit codes: 2 config, 3 missing input, 4 corrupt artifact,
/// 5 divergence, 1 anything else. Divergence covers both a non-finite loss
/// and non-finite activations reaching the loss.
fn exit_code(e: &PipelineError) -> u8 {
    use dnkd_core::distill::DistillError;
    use dnkd_core::seq2seq::Seq2SeqError;
    match e {
        PipelineError::Config(_) => 2,
        PipelineError::MissingInput { .. } => 3,
        PipelineError::Format(f) => match f {
            FormatError::Io { .. } => 3,
            _ => 4,
        },
        PipelineError::CacheChecksumMismatch { .. } => 4,
        PipelineError::Train(TrainError::Diverged { .. })
        | PipelineError::Train(TrainError::Model(Seq2SeqError::Distill(
            DistillError::NonFiniteLogit(_),
        ))) => 5,
        _ => 1,
    }
}

fn category(code: u8) -> &'static str {
    match code {
        2 => "config-error",
        3 => "missing-input",
        4 => "corrupt-artifact",
        5 => "divergence",
        _ => "failure",
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let run = RunDir::new(&cli.run_dir);
    let cfg = load_config(cli)?;
    println!("resolved config ({}):", run.root().join("config").display());
    print!("{}", cfg.to_text());

    match &cli.command {
        Command::GenCorpus => {
            let s = gen_corpus_stage(&run, &cfg)?;
            println!(
                "corpus: {} train / {} dev / {} test sentences, {} train target tokens, crc {:#010x}",
                s.train_sentences, s.dev_sentences, s.test_sentences, s.train_target_tokens, s.train_crc
            );
        }
        Command::TrainBaseline => {
            let report = baseline_stage(&run, &cfg)?;
            print!("{}", report.to_text());
        }
        Command::BuildStore => {
            let s = build_store_stage(&run, &cfg)?;
            println!(
                "datastore: {} entries ({} corpus target tokens), crc {:#010x}",
                s.entries, s.expected_tokens, s.crc
            );
        }
        Command::BuildCache => {
            let s = build_cache_stage(&run, &cfg)?;
            println!(
                "neighbor cache: {} positions, k = {}, datastore crc {:#010x}",
                s.positions, s.k, s.datastore_crc
            );
        }
        Command::TrainStudent { mode } => {
            let report = student_stage(&run, &cfg, *mode)?;
            print!("{}", report.to_text());
        }
        Command::Evaluate { checkpoint } => {
            let path = if checkpoint.is_absolute() {
                checkpoint.clone()
            } else {
                run.root().join(checkpoint)
            };
            let m = evaluate_stage(&run, &path)?;
            println!(
                "BLEU {:.3}  token-acc {:.4}  exact {:.4}",
                m.bleu, m.token_accuracy, m.exact_match
            );
        }
        Command::Sweep { axis, values } => {
            let axis = parse_axis(axis)
                .map_err(|e| PipelineError::Config(dnkd_lab::config::ConfigError::Invalid(e)))?;
            let report = sweep_stage(&run, &cfg, axis, values)?;
            for (v, m) in &report.medians {
                match m {
                    Some(m) => println!("{axis} = {v}: median BLEU {m:.3}"),
                    None => println!("{axis} = {v}: all seeds failed"),
                }
            }
            for (v, h) in &report.mean_entropy {
                println!("tau = {v}: mean teacher entropy {h:.4} nats");
            }
        }
        Command::GradReport { checkpoint } => {
            let resolved;
            let ckpt = match checkpoint {
                Some(p) if p.is_absolute() => Some(p.as_path()),
                Some(p) => {
                    resolved = run.root().join(p);
                    Some(resolved.as_path())
                }
                None => None,
            };
            let summary = grad_report_stage(&run, &cfg, ckpt, 4)?;
            println!(
                "sampled {} positions; reports written to {}",
                summary.positions.len(),
                run.report_path("grad-report.txt").display()
            );
            for p in &summary.positions {
                println!(
                    "  {} regime {} p_t {:.4} max ratio deviation {:.2e}",
                    p.origin, p.regime, p.p_target_teacher, p.max_ratio_error
                );
            }
        }
        Command::Verify => {
            let outcomes = run_all();
            let mut all_ok = true;
            for o in &outcomes {
                println!("{}", o.line());
                all_ok &= o.passed;
            }
            if !all_ok {
                return Err(PipelineError::Other("verification failed".to_string()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {}: {}", category(code), e);
            ExitCode::from(code)
        }
    }
}
