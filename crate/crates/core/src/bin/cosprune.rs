use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use cosprune::experiment::{self, Aggregate, CriterionKind, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cosprune", version, about = "Multi-task CNN training and structured filter pruning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and split the synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the unpruned base model.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Iteratively prune the base model.
    Prune {
        #[arg(long)]
        config: PathBuf,
        /// Override `prune.criterion` (cosprune, taylor_squared, taylor_raw, random).
        #[arg(long)]
        criterion: Option<String>,
    },
    /// Retrain a checkpoint's architecture from scratch over the learning-rate sweep.
    Retrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare result directories against the Taylor run at matched sizes.
    Report {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Agg::Best)]
        aggregate: Agg,
        #[arg(long, default_value_t = experiment::PAIR_TOLERANCE)]
        tolerance: f64,
    },
    /// Run gradient checks and oracle suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    Best,
    Mean,
}

fn config(path: &Path) -> cosprune::Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenData { config: c } => {
            let s = experiment::cmd_gen_data(&config(&c)?)?;
            println!("dataset {} train {} val {}", s.dir.display(), s.n_train, s.n_val);
            println!("checksum {}", s.checksum);
        }
        Cmd::Train { config: c } => {
            let s = experiment::cmd_train(&config(&c)?)?;
            println!("best epoch {} (pixel accuracy {:.4}, val loss {:.4})", s.best_epoch, s.best.metrics.pixel_accuracy, s.best.total_val_loss);
            println!("checkpoint {}", s.dir.display());
        }
        Cmd::Prune { config: c, criterion } => {
            let mut cfg = config(&c)?;
            if let Some(name) = criterion {
                cfg.prune.criterion = CriterionKind::parse(&name)
                    .ok_or_else(|| cosprune::Error::Config { path: "--criterion".into(), msg: format!("unknown criterion `{name}`") })?;
            }
            let s = experiment::cmd_prune(&cfg)?;
            for r in &s.repetitions {
                let last = r.levels.last().expect("base level");
                println!(
                    "rep {}: {} events, params {} -> {}, pixel accuracy {:.4}",
                    r.repetition,
                    r.victims.len(),
                    r.levels[0].params,
                    last.params,
                    last.metrics.pixel_accuracy
                );
            }
            println!("curves {}", s.curves.display());
        }
        Cmd::Retrain { config: c, checkpoint, out } => {
            let s = experiment::cmd_retrain(&config(&c)?, &checkpoint, out.as_deref())?;
            for r in &s.runs {
                println!("lr {:e}: best epoch {} value {:.4}{}", r.lr, r.best_epoch, r.best_value, if r.best { "  <- best" } else { "" });
            }
            println!("chosen lr {:e}", s.chosen_lr);
        }
        Cmd::Eval { config: c, checkpoint } => {
            let e = experiment::cmd_eval(&config(&c)?, &checkpoint)?;
            print_json(&e)?;
        }
        Cmd::Report { runs, out, aggregate, tolerance } => {
            let how = match aggregate {
                Agg::Best => Aggregate::Best,
                Agg::Mean => Aggregate::Mean,
            };
            let r = experiment::cmd_report(&runs, &out, how, tolerance)?;
            print!("{}", r.text);
            println!("wrote {}", r.csv_path.display());
        }
        Cmd::Selftest { seed } => {
            let checks = experiment::run_selftest(seed)?;
            for c in &checks {
                println!("[{}] {:<34} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                anyhow::bail!("{failed} self-test checks failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("cosprune failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<cosprune::Error>()).map_or(3, experiment::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
