mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bads_core::acquisition::Strategy;
use bads_core::error::Result;
use bads_core::harness::grid::summarize_cell;
use bads_core::harness::{
    compare_strategies, run_grid, run_trial, write_comparison_outputs, write_grid_outputs, write_trial_outputs, BatchConfig,
    TrialRecord,
};
use bads_core::models::EvidenceMode;
use bads_core::sim::HearingLossClass;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "bads", version, about = "Active differential audiometry experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulated trial.
    Run(Flags),
    /// Every old/new class pair, repeated.
    Grid(Flags),
    /// Several strategies on one class pair with paired seeds.
    Compare(Flags),
    /// Start the HTTP session service.
    Serve(bads_server::ServeArgs),
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// JSON file with any of the flags below; flags given here win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    old: Option<HearingLossClass>,
    #[arg(long)]
    new: Option<HearingLossClass>,
    /// bads, bald, us or rnd.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated strategies for `compare` (default all four).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Trial seed for `run`, master seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Bayes-factor stopping threshold.
    #[arg(long)]
    bf: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Psychometric spread of the simulated listener, dB.
    #[arg(long = "spread-db")]
    spread_db: Option<f64>,
    #[arg(long = "evidence-mode", value_parser = parse_evidence_mode)]
    evidence_mode: Option<EvidenceMode>,
}

fn parse_evidence_mode(s: &str) -> std::result::Result<EvidenceMode, String> {
    match s {
        "conditional" => Ok(EvidenceMode::Conditional),
        "joint" => Ok(EvidenceMode::Joint),
        _ => Err(format!("expected conditional or joint, got '{s}'")),
    }
}

impl Flags {
    fn resolve(self) -> Result<FileConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(file.overridden_by(FileConfig {
            old: self.old,
            new: self.new,
            strategy: self.strategy,
            strategies: self.strategies,
            seed: self.seed,
            max_iter: self.max_iter,
            bf: self.bf,
            reps: self.reps,
            workers: self.workers,
            out: self.out,
            spread_db: self.spread_db,
            evidence_mode: self.evidence_mode,
            grid: None,
        }))
    }
}

const DEFAULT_REPS: usize = 10;

fn batch(cfg: &FileConfig) -> Result<BatchConfig> {
    let mut b = BatchConfig::new(cfg.seed.unwrap_or(0), cfg.reps.unwrap_or(DEFAULT_REPS), cfg.trial()?);
    b.workers = cfg.workers;
    Ok(b)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn cmd_run(cfg: FileConfig) -> Result<()> {
    let (old, new) = cfg.require_pair()?;
    let out = cfg.require_out()?;
    let trial = cfg.trial()?;
    let result = run_trial(&trial)?;
    let record = TrialRecord { old_class: old, new_class: new, strategy: trial.strategy, rep: 0, result };
    let summary = summarize_cell(&[&record], trial.max_iterations)?;
    write_trial_outputs(&out, &record, &summary)?;
    let r = &record.result;
    let last = r.trace.last();
    println!(
        "{} {}: {} iterations, winner {:?}, BF {:.3e}, threshold {}",
        record.cell_label(),
        trial.strategy,
        r.iterations(),
        r.winner,
        last.map_or(1.0, |e| e.bayes_factor()),
        r.iterations_to_threshold.map_or("not reached".to_string(), |k| format!("reached at {k}")),
    );
    if let Some(f) = &r.failure {
        eprintln!("trial failed at iteration {}: {}", f.iteration, f.message);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_grid(cfg: FileConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let b = batch(&cfg)?;
    let strategy = cfg.strategy.unwrap_or(Strategy::Bads);
    let summary = run_grid(&b, strategy)?;
    write_grid_outputs(&out, &summary)?;
    for c in &summary.cells {
        println!(
            "{:<40} mean {:>6} std {:>6} median {:>6} reached {}/{}{}",
            c.label(),
            fmt_opt(c.mean_iters),
            fmt_opt(c.std_iters),
            fmt_opt(c.median_iters),
            c.reached(),
            c.reps,
            if c.degenerate { " (degenerate)" } else { "" }
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(cfg: FileConfig) -> Result<()> {
    let (old, new) = cfg.require_pair()?;
    let out = cfg.require_out()?;
    let b = batch(&cfg)?;
    let strategies = cfg.strategies.clone().unwrap_or_else(|| vec![Strategy::Bads, Strategy::Bald, Strategy::Us, Strategy::Rnd]);
    let cmp = compare_strategies(&b, old, new, &strategies)?;
    write_comparison_outputs(&out, &cmp)?;
    for a in &cmp.arms {
        println!("{:<5} median {:>6} reached {}/{}", a.strategy, fmt_opt(a.median_iters), a.reached(), a.reps);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Serve(args) => {
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            return match rt.block_on(bads_server::serve(args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            };
        }
        Command::Run(f) => f.resolve().and_then(cmd_run),
        Command::Grid(f) => f.resolve().and_then(cmd_grid),
        Command::Compare(f) => f.resolve().and_then(cmd_compare),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
