use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use auxts::harness::{self, ExperimentConfig, DEFAULT_GRID};
use clap::{Args, Parser, Subcommand};

/// Adaptive auxiliary-loss weighting experiments on graph neural networks.
#[derive(Parser)]
#[command(name = "auxts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Root for relative `output_dir`s.
    #[arg(long, env = "AUXTS_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and write curves, summaries and the aggregate.
    Run(Common),
    /// Repeat the experiment over a grid of auxiliary loss scales.
    Rescale {
        #[command(flatten)]
        common: Common,
        /// Scale pair `EDGE,ATTR`; repeatable. Defaults to 1,1 1,5 5,1 5,5.
        #[arg(long, value_parser = parse_pair)]
        grid: Vec<(f64, f64)>,
        #[arg(long, default_value = "edge")]
        edge_task: String,
        #[arg(long, default_value = "attr")]
        attr_task: String,
    },
    /// Pre-train on the auxiliary tasks only and save a checkpoint per seed.
    Pretrain(Common),
    /// Print the report of a finished run or rescale directory.
    Report { dir: PathBuf },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected EDGE,ATTR, got `{s}`"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf, PathBuf)> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("in {}", common.config.display()))?;
    let base = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out = cfg.output_path(&common.output_root);
    Ok((cfg, base, out))
}

fn status(all_completed: bool, out: &Path) -> ExitCode {
    eprintln!("results in {}", out.display());
    if all_completed {
        ExitCode::SUCCESS
    } else {
        eprintln!("some seeds did not complete");
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let (cfg, base, out) = load(&common)?;
            let res = harness::run_experiment(&cfg, &base, &out, !common.sequential)?;
            println!("{}", serde_json::to_string_pretty(&res.aggregate)?);
            Ok(status(res.aggregate.all_completed(), &out))
        }
        Command::Rescale {
            common,
            grid,
            edge_task,
            attr_task,
        } => {
            let (cfg, base, out) = load(&common)?;
            let grid = if grid.is_empty() { DEFAULT_GRID.to_vec() } else { grid };
            let rep = harness::rescale_experiment(&cfg, &base, &edge_task, &attr_task, &grid, &out, !common.sequential)?;
            print!("{}", harness::report(&out)?);
            Ok(status(rep.all_completed(), &out))
        }
        Command::Pretrain(common) => {
            let (cfg, base, out) = load(&common)?;
            let seeds = harness::pretrain_experiment(&cfg, &base, &out, !common.sequential)?;
            for s in &seeds {
                match &s.failure {
                    None => println!("seed {}: {} steps", s.seed, s.record.rows.iter().map(|r| r.step).max().map_or(0, |m| m + 1)),
                    Some(f) => println!("seed {}: failed: {f}", s.seed),
                }
            }
            Ok(status(seeds.iter().all(|s| s.completed()), &out))
        }
        Command::Report { dir } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            print!("{}", harness::report(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
