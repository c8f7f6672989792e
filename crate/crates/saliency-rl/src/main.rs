use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use saliency_core::agent::{PerceptionParams, Variant};
use saliency_rl::compare::{compare_dirs, write_comparison, Threshold};
use saliency_rl::config::RunConfig;
use saliency_rl::demo::{dump_frames, pipeline_demo, DumpPolicy};
use saliency_rl::{checkpoint, run};

#[derive(Parser)]
#[command(name = "saliency-rl", version, about = "Task-relevant object discovery for recurrent Q-learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    Proposed,
    Oracle,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Proposed => Variant::Proposed,
            VariantArg::Oracle => Variant::Oracle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Scripted,
    Noop,
    Shoot,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seeds of the config.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Print evaluation progress to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate the final checkpoints of a run directory.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the perception pipeline on a directory of PPM frames.
    Demo {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config whose perception parameters are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Knowledge checkpoint used to label segments.
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate run directories into learning curves.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of the scripted policy's return used as threshold.
        #[arg(long, default_value_t = 0.8, conflicts_with = "threshold")]
        fraction: f64,
        /// Absolute return threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write env frames and truth masks for one episode.
    DumpFrames {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        steps: usize,
        #[arg(long, value_enum, default_value = "scripted")]
        policy: PolicyArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out, variant, verbose } => {
            let mut cfg = RunConfig::load(&config)?;
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            let runs = run::run_experiment(&cfg, &out, verbose)?;
            for r in &runs {
                let last = r.points.last().map(|p| p.summary.mean_std()).unwrap_or_default();
                println!("seed {}: final return {:.3} ± {:.3} (scripted {:.3})", r.seed, last.0, last.1, r.scripted_return);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { run, episodes } => {
            println!("seed,return_mean,return_std,episodes");
            for (seed, s) in run::evaluate_run(&run, episodes)? {
                let (m, sd) = s.mean_std();
                println!("{seed},{m},{sd},{}", s.returns.len());
            }
        }
        Command::Demo { frames, out, config, knowledge, seed } => {
            let params = match config {
                Some(p) => RunConfig::load(&p)?.perception,
                None => PerceptionParams::default(),
            };
            let kd = knowledge.map(|p| checkpoint::load_knowledge(&p, seed).with_context(|| format!("loading {}", p.display()))).transpose()?;
            for r in pipeline_demo(&frames, &out, &params, kd.as_ref(), seed)? {
                println!("frame {}: {} segments{}", r.frame, r.boxes.len(), if r.skipped { " (skipped)" } else { "" });
            }
        }
        Command::Compare { runs, out, fraction, threshold } => {
            let thr = threshold.map_or(Threshold::FractionOfScripted(fraction), Threshold::Absolute);
            let cmp = compare_dirs(&runs, thr)?;
            write_comparison(&cmp, &out)?;
            for o in &cmp.outcomes {
                let s = o.steps_to_threshold.map_or_else(|| "never".to_string(), |s| s.to_string());
                println!("{} seed {}: threshold {:.3} reached at {s}, final {:.3}", o.variant, o.seed, o.threshold, o.final_return);
            }
        }
        Command::DumpFrames { config, seed, steps, policy, out } => {
            let env = match config {
                Some(p) => RunConfig::load(&p)?.env,
                None => Default::default(),
            };
            let policy = match policy {
                PolicyArg::Scripted => DumpPolicy::Scripted,
                PolicyArg::Noop => DumpPolicy::Noop,
                PolicyArg::Shoot => DumpPolicy::Shoot,
            };
            let n = dump_frames(&env, seed, steps, policy, &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
    }
    Ok(())
}
