use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcgap_harness::{report, run_sweep, HarnessError, Scale, SweepConfig, Tier};

#[derive(Parser)]
#[command(name = "pcgap", version, about = "Predictive-causal gap sweeps and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form checks on one or more parameter points.
    Verify(RunArgs),
    /// The 160-configuration linear grid.
    Grid(RunArgs),
    /// MLP encoder sweep over 2D linear-Gaussian dynamics.
    NnSweep(RunArgs),
    /// Sphere-constrained optimization in the high-dimensional family.
    Highdim(RunArgs),
    /// Information-bottleneck β sweep.
    Ib(RunArgs),
    /// Boundary bifurcation in the coupling.
    Bifurcation(RunArgs),
    /// GRU experiment on the Duffing oscillator with a hidden environment.
    Duffing(RunArgs),
    /// Recompute aggregates from a results directory or journal.
    Report {
        path: PathBuf,
    },
    /// Print the default configuration of a tier.
    Template {
        tier: String,
        #[arg(long, value_enum, default_value = "desk")]
        scale: Scale,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; defaults to the built-in template.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; the tier writes into a subdirectory of it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn effective_config(tier: Tier, args: &RunArgs) -> Result<SweepConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = SweepConfig::load(path)?;
            if cfg.tier != tier {
                return Err(HarnessError::InvalidConfig(format!(
                    "config is for tier '{}', not '{tier}'",
                    cfg.tier
                )));
            }
            if let Some(s) = args.scale {
                if s != cfg.scale {
                    return Err(HarnessError::InvalidConfig(
                        "--scale conflicts with the scale of the config file".into(),
                    ));
                }
            }
            cfg
        }
        None => SweepConfig::template(tier, args.scale.unwrap_or(Scale::Desk)),
    };
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.parallelism = jobs;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(tier: Tier, args: &RunArgs) -> Result<i32, HarnessError> {
    let cfg = effective_config(tier, args)?;
    let outcome = run_sweep(&cfg)?;
    print!("{}", pcgap_harness::aggregate::render_text(&outcome.summary));
    eprintln!(
        "{}: {} tasks, {} ok, {} failed, {} already complete; results in {}",
        tier,
        outcome.n_tasks,
        outcome.n_ok,
        outcome.n_failed,
        outcome.n_skipped,
        outcome.dir.display()
    );
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(a) => run(Tier::Verify, a),
        Command::Grid(a) => run(Tier::LinearGrid, a),
        Command::NnSweep(a) => run(Tier::NnSweep, a),
        Command::Highdim(a) => run(Tier::Highdim, a),
        Command::Ib(a) => run(Tier::Ib, a),
        Command::Bifurcation(a) => run(Tier::Bifurcation, a),
        Command::Duffing(a) => run(Tier::Duffing, a),
        Command::Report { path } => report(path).map(|(_, text)| {
            print!("{text}");
            0
        }),
        Command::Template { tier, scale } => tier.parse::<Tier>().map(|t| {
            println!("{}", SweepConfig::template(t, *scale).to_json());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
