use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sidgen_cli::bench::to_csv;
use sidgen_cli::config::{Overrides, RunConfig};
use sidgen_cli::run::{run_eval, run_fold_bench, run_sample, run_train, EvalInputs};
use sidgen_core::alloc::CountingAlloc;
use sidgen_core::exec::Exec;
use sidgen_core::folding::ContextMode;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "sidgen", version, about = "Protein-conditioned masked diffusion over SMILES")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Coarse folding stride.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Streamlined,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and a JSON-lines log.
    Train {
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Sample molecules for a protein from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Denoising steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Target protein sequence.
        #[arg(long)]
        protein: Option<String>,
        /// SMILES output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generation, screening and affinity metrics.
    Eval {
        /// Generated SMILES, one per line.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Reference SMILES for novelty.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// TSV with score and label columns.
        #[arg(long)]
        screening: Option<PathBuf>,
        /// TSV with truth and pred columns.
        #[arg(long)]
        affinity: Option<PathBuf>,
        /// JSON report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pair-stage memory and time across lengths and strides.
    FoldBench {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
        lens: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        strides: Vec<usize>,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        seed: g.seed,
        mode: g.mode.map(|m| match m {
            Mode::Streamlined => ContextMode::Streamlined,
            Mode::Full => ContextMode::Full,
        }),
        stride: g.stride,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let exec = if cli.global.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.cmd {
        Command::Train { out, steps } => {
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let r = run_train(&cfg, exec)?;
            if let Some(i) = &r.ingest {
                eprintln!("ingest: {}", serde_json::to_string(i)?);
            }
            if let Some(last) = &r.last {
                eprintln!("final: {}", serde_json::to_string(last)?);
            }
            println!("{}", r.checkpoint.display());
        }
        Command::Sample {
            checkpoint,
            n,
            steps,
            protein,
            out,
        } => {
            if let Some(s) = steps {
                cfg.sample.steps = s;
            }
            if protein.is_some() {
                cfg.sample.protein = protein;
            }
            let n = n.unwrap_or(cfg.sample.n);
            let r = run_sample(&cfg, &checkpoint, n)?;
            let mut text = r.smiles.join("\n");
            text.push('\n');
            emit(out.as_deref(), &text)?;
            eprintln!("{}", serde_json::to_string(&r)?);
        }
        Command::Eval {
            generated,
            reference,
            screening,
            affinity,
            out,
        } => {
            let inputs = EvalInputs {
                generated,
                reference,
                screening,
                affinity,
            };
            let r = run_eval(&inputs, exec)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&r)? + "\n"))?;
        }
        Command::FoldBench { lens, strides, out } => {
            let rows = run_fold_bench(&cfg, &lens, &strides, exec)?;
            emit(out.as_deref(), &to_csv(&rows))?;
        }
        Command::InitConfig { out } => emit(out.as_deref(), &(cfg.to_json() + "\n"))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
