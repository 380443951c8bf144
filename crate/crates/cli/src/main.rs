use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinshield::harness::{
    self, emit_proximity_trace, emit_report, emit_sweep, ExperimentSummary, ReportFormat, ScenarioConfig,
};
use kinshield::Error;

#[derive(Parser)]
#[command(name = "kinshield", version, about = "Run and check QP safety-corrected arm experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report per-episode results.
    Run(RunArgs),
    /// Repeat a scenario for several batch sizes n.
    SweepN(SweepArgs),
    /// Run a scenario with the corrector off, then on.
    Compare(Common),
    /// Invariant self-test battery on a scenario's arm and scene.
    Validate(ValidateArgs),
    /// Write the bundled scenario configs and scenes into a directory.
    Presets {
        #[arg(long, default_value = "configs")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    no_corrector: bool,
    /// Also write the per-episode closest-distance trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated batch sizes; defaults to 3, ceil(m/2) and m.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

const EXIT_USAGE: u8 = 1;
const EXIT_EPISODE_FAILURE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut config = ScenarioConfig::load(&common.config)?;
    if let Some(n) = common.episodes {
        config.episodes = n;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run(args) => {
            let mut config = load(&args.common)?;
            if args.no_corrector {
                config.corrector_enabled = false;
            }
            let summary = harness::run_experiment(&config, args.common.jobs)?;
            print_summary(&summary);
            if let Some(out) = &args.common.out {
                emit_report(&summary, out, args.format)?;
            }
            if let Some(trace) = &args.trace {
                emit_proximity_trace(&summary, trace)?;
            }
            Ok(episode_exit(&[&summary]))
        }
        Command::SweepN(args) => {
            let config = load(&args.common)?;
            let m = config.corrector.num_points();
            let n = if args.n.is_empty() { vec![3, m.div_ceil(2), m] } else { args.n };
            let rows = harness::n_sweep(&config, &n, args.common.jobs)?;
            println!("{:>3} {:>10} {:>10} {:>12} {:>12} {:>6}  risk", "n", "collide%", "success%", "mean_time_s", "closest_m", "under");
            for r in &rows {
                println!(
                    "{:>3} {:>10.1} {:>10.1} {:>12.3} {:>12.4} {:>6}  {}",
                    r.n,
                    r.collision_rate,
                    r.success_rate,
                    r.mean_episode_time,
                    r.min_proximity,
                    r.buffer_violations,
                    if r.risk { "RISK" } else { "-" }
                );
            }
            if let Some(out) = &args.common.out {
                emit_sweep(&rows, out)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(common) => {
            let config = load(&common)?;
            let cmp = harness::compare(&config, common.jobs)?;
            print_summary(&cmp.baseline);
            print_summary(&cmp.corrected);
            if let Some(out) = &common.out {
                write_json(out, &cmp)?;
            }
            Ok(episode_exit(&[&cmp.baseline, &cmp.corrected]))
        }
        Command::Validate(args) => {
            let config = ScenarioConfig::load(&args.config)?;
            let report = harness::validate(&config, args.seed)?;
            print!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VALIDATION) })
        }
        Command::Presets { out } => {
            for p in harness::write_presets(&out)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_summary(s: &ExperimentSummary) {
    println!(
        "{} corrector={} episodes={} collision_rate={:.1}% success_rate={:.1}% min_proximity={:.4} m mean_episode_time={:.3} s failed={}",
        s.name,
        if s.corrector_enabled { "on" } else { "off" },
        s.episodes,
        s.collision_rate,
        s.success_rate,
        s.min_proximity_overall,
        s.mean_episode_time,
        s.failed_episodes
    );
}

fn episode_exit(summaries: &[&ExperimentSummary]) -> ExitCode {
    if summaries.iter().any(|s| s.failed_episodes > 0) {
        ExitCode::from(EXIT_EPISODE_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
