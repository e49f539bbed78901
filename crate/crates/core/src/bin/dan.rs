use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dan::config::{Regime, TrainConfig, DEFAULT_LAMBDA_GRID};
use dan::experiment::{self, RunOptions, Task, DEFAULT_SEEDS};
use dan::{DomainTag, Error, NormKind, Result};

#[derive(Parser, Debug)]
#[command(name = "dan", version, about = "Domain agnostic normalization experiments")]
struct Cli {
    /// Seed for a single run; replaces the default seed set.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` training config applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    overwrite: bool,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Benchmark directory written by `gen-data`.
    #[arg(long, default_value = "data")]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the four-domain synthetic benchmark.
    GenData {
        #[arg(long, default_value = "default")]
        benchmark: String,
    },
    /// Train every normalization kind under every regime.
    CompareNorms {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "s2t")]
        task: String,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Source-only versus adversarial adaptation on one task.
    Adapt {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        task: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Retrieval curve of a trained checkpoint.
    Retrieval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "s2t")]
        task: String,
        #[arg(long, default_value_t = 500)]
        n_per_domain: usize,
        #[arg(long)]
        max_m: Option<usize>,
    },
    /// Target mIoU over a grid of lambda values.
    SweepLambda {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        task: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint on one domain's validation split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: String,
        /// source, target or unseen.
        #[arg(long, default_value = "unseen")]
        tag: String,
    },
}

fn parse_list<T>(items: Option<Vec<String>>, all: &[T]) -> Result<Vec<T>>
where
    T: Copy + std::str::FromStr<Err = Error>,
{
    match items {
        None => Ok(all.to_vec()),
        Some(v) => v.iter().map(|s| s.trim().parse()).collect(),
    }
}

fn parse_tag(s: &str) -> Result<DomainTag> {
    match s {
        "source" => Ok(DomainTag::Source),
        "target" => Ok(DomainTag::Target),
        "unseen" => Ok(DomainTag::Unseen),
        other => Err(Error::Usage(format!("unknown domain tag `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut base = TrainConfig::default();
    if let Some(path) = &cli.config {
        base = TrainConfig::from_text(&std::fs::read_to_string(path)?)?;
    }
    let seeds = |explicit: Option<Vec<u64>>| {
        explicit.unwrap_or_else(|| cli.seed.map(|s| vec![s]).unwrap_or_else(|| DEFAULT_SEEDS.to_vec()))
    };
    let opts = RunOptions {
        out: cli.out.clone(),
        overwrite: cli.overwrite,
        parallel: cli.parallel,
    };
    match cli.command {
        Command::GenData { benchmark } => {
            let files = experiment::cmd_gen_data(&benchmark, cli.seed.unwrap_or(1), &opts)?;
            println!("wrote {} files to {}", files.len(), opts.out.display());
        }
        Command::CompareNorms { data, task, kinds, regimes, seeds: s } => {
            let kinds = parse_list(kinds, &NormKind::ALL)?;
            let regimes = parse_list(regimes, &Regime::ALL)?;
            let rows = experiment::cmd_compare_norms(&data.data, task.parse()?, &base, &kinds, &regimes, &seeds(s), &opts)?;
            for r in rows {
                println!(
                    "{:<16} {:<15} source {:.3} target {:.3} [{:.3}, {:.3}]",
                    r.kind, r.regime, r.source.mean, r.target.mean, r.target.min, r.target.max
                );
            }
        }
        Command::Adapt { data, task, lambda, seeds: s } => {
            let task: Task = task.parse()?;
            if let Some(l) = lambda {
                base.lambda = l;
                base.validate()?;
            }
            let rows = experiment::cmd_adapt(&data.data, task, &base, &seeds(s), &opts)?;
            for r in rows {
                let cols: Vec<String> = r.miou.iter().map(|m| format!("{m:.3}")).collect();
                println!("{:<12} seed {} {} gap {:+.3}", r.regime, r.seed, cols.join(" "), r.gap_reduction);
            }
        }
        Command::Retrieval { data, checkpoint, task, n_per_domain, max_m } => {
            let report = experiment::cmd_retrieval(
                &checkpoint,
                &data.data,
                task.parse()?,
                n_per_domain,
                max_m,
                cli.seed.unwrap_or(1),
                &opts,
            )?;
            println!(
                "alignment deviation {:.4}, target mIoU {:.4}",
                report.alignment_deviation.unwrap_or(f64::NAN),
                report.miou
            );
        }
        Command::SweepLambda { data, task, values, seeds: s } => {
            let values = values.unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
            let rows = experiment::cmd_sweep_lambda(&data.data, task.parse()?, &base, &values, &seeds(s), &opts)?;
            for r in rows {
                println!("lambda {:<6} target {:.3} [{:.3}, {:.3}]", r.lambda, r.target.mean, r.target.min, r.target.max);
            }
        }
        Command::Eval { data, checkpoint, domain, tag } => {
            let report = experiment::cmd_eval(&checkpoint, &data.data, &domain, parse_tag(&tag)?, &opts)?;
            println!("{domain} mIoU {:.4}", report.miou);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
