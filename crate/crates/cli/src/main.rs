use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use efontl::harness::{
    evaluate_checkpoints, run, sarnd_demo, sweep_configs, EnvKind, ExperimentConfig, SWEEP_BUDGETS,
};

#[derive(Parser)]
#[command(
    name = "efontl",
    version,
    about = "Expert-free online transfer learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed; otherwise seeds 0..runs are executed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Greedy evaluation of saved checkpoints.
    Eval {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the metric table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimator sensitivity trace on two fixed predator states.
    SarndDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit the budget x source-selection x transfer-method matrix.
    Sweep {
        /// Axes of the grid; only B,SS,TM is defined.
        #[arg(long, default_value = "B,SS,TM")]
        grid: String,
        /// Budgets to sweep.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        /// Base configuration (defaults to the Cart-Pole preset).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value = "cartpole")]
        env: EnvKind,
        /// Directory for one config file per setting; prints a summary otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => train(&config, seed, &out),
        Command::Eval {
            checkpoints,
            episodes,
            max_steps,
            seed,
            out,
        } => {
            let report = evaluate_checkpoints(&checkpoints, episodes, max_steps, seed)?;
            let csv = report.to_csv();
            match out {
                Some(path) => std::fs::write(&path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::SarndDemo { out, seed } => {
            let trace = sarnd_demo(&out, seed)?;
            let [(rnd_a, sa_a), (rnd_b, sa_b)] = trace.jumps(20);
            println!("wrote {} rows to {}", trace.rows.len(), out.display());
            println!(
                "rnd   jumps: {:+.2} sd, {:+.2} sd",
                rnd_a.sigmas(),
                rnd_b.sigmas()
            );
            println!(
                "sarnd jumps: {:+.2} sd, {:+.2} sd",
                sa_a.sigmas(),
                sa_b.sigmas()
            );
            Ok(())
        }
        Command::Sweep {
            grid,
            budgets,
            base,
            env,
            out,
        } => sweep(&grid, budgets, base, env, out),
    }
}

fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let base = ExperimentConfig::load(config)?;
    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => (0..base.runs).collect(),
    };
    for s in seeds {
        let mut cfg = base.clone();
        cfg.seed = s;
        let dir = if seed.is_some() {
            out.to_path_buf()
        } else {
            out.join(format!("seed{s}"))
        };
        let result = run(&cfg)?;
        result.write(&dir)?;
        let tail: Vec<f64> = (0..cfg.agents)
            .flat_map(|a| {
                let r = result.returns_of(a);
                let from = r.len().saturating_sub(100);
                r[from..].to_vec()
            })
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        println!(
            "seed {s}: {} episodes, {} transfers, last-100 mean return {mean:.2} -> {}",
            result.episodes.len(),
            result.transfers.len(),
            dir.display()
        );
    }
    Ok(())
}

fn sweep(
    grid: &str,
    budgets: Option<Vec<usize>>,
    base: Option<PathBuf>,
    env: EnvKind,
    out: Option<PathBuf>,
) -> Result<()> {
    let axes: Vec<String> = grid
        .split(',')
        .map(|a| a.trim().to_ascii_uppercase())
        .collect();
    if axes != ["B", "SS", "TM"] {
        bail!("unsupported grid {grid:?}; expected B,SS,TM");
    }
    let base = match base {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::for_env(env),
    };
    let budgets = budgets.unwrap_or_else(|| SWEEP_BUDGETS.to_vec());
    let cfgs = sweep_configs(&base, &budgets);
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for c in &cfgs {
        let name = format!(
            "b{}_{}_{}",
            c.transfer.budget, c.transfer.selection, c.transfer.method
        )
        .to_lowercase();
        match &out {
            Some(dir) => {
                let path = dir.join(format!("{name}.cfg"));
                std::fs::write(&path, c.to_text())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            None => println!("{name}"),
        }
    }
    if out.is_some() {
        println!("wrote {} configurations", cfgs.len());
    }
    Ok(())
}
