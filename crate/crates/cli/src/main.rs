//! `codedrift` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input data or failed run, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codedrift::metrics;
use codedrift::optimizer::GenerationRecord;
use codedrift::popmodel::snapshot;
use codedrift::reportkit;
use codedrift::scenarios::{self, ScenarioConfig, ScenarioKind};
use codedrift::Error;

/// Default output directory when neither `--out` nor the config sets one.
const OUT_ENV: &str = "CODEDRIFT_OUT";
const DEFAULT_OUT: &str = "codedrift-out";

#[derive(Parser)]
#[command(name = "codedrift", version, about = "Shared codes under parasitic attack")]
struct Cli {
    /// Progress on standard error: -v every 100th generation, -vv every one.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads inside the GA (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (TOML). The kind's preset is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config, then $CODEDRIFT_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StagedArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Input population snapshot.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a population from scratch for mutual understanding.
    Evolve(RunArgs),
    /// Attack a host snapshot with one or more parasites.
    Attack(StagedArgs),
    /// Let the hosts of an attacked snapshot respond.
    Respond(StagedArgs),
    /// Attack synonym variants of a well-mixed population.
    Synonyms(RunArgs),
    /// Attack a host snapshot with several parasites at once.
    Multi {
        #[command(flatten)]
        staged: StagedArgs,
        /// Number of parasites.
        #[arg(long)]
        parasites: Option<usize>,
    },
    /// Run the four-state examples.
    Toy(RunArgs),
    /// Print every measure of a snapshot as JSON.
    Measure {
        #[arg(long)]
        snapshot: PathBuf,
        /// Include code types and sub-populations.
        #[arg(long)]
        structure: bool,
    },
    /// Print the planar embedding of a snapshot's code types as JSON.
    Mds {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Print average environmental information before and after shifting
    /// every host code.
    ProbeShift {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 16)]
        offset: usize,
    },
    /// Check a snapshot against every population invariant.
    Validate {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> codedrift::Result<ExitCode> {
    match &cli.command {
        Command::Evolve(a) => scenario(cli, ScenarioKind::Baseline, a, None, None),
        Command::Attack(s) => scenario(cli, ScenarioKind::Attack, &s.run, s.snapshot.as_deref(), None),
        Command::Respond(s) => scenario(cli, ScenarioKind::Respond, &s.run, s.snapshot.as_deref(), None),
        Command::Synonyms(a) => scenario(cli, ScenarioKind::SynonymSeries, a, None, None),
        Command::Multi { staged, parasites } => scenario(
            cli,
            ScenarioKind::MultiParasite,
            &staged.run,
            staged.snapshot.as_deref(),
            *parasites,
        ),
        Command::Toy(a) => scenario(cli, ScenarioKind::Toy, a, None, None),
        Command::Measure { snapshot, structure } => {
            let pop = snapshot::load(snapshot)?;
            let report = metrics::measure(&pop)?;
            let text = if *structure {
                reportkit::to_json(&serde_json::json!({
                    "measures": report,
                    "structure": metrics::analyze_structure(&pop),
                }))?
            } else {
                reportkit::to_json(&report)?
            };
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Mds { snapshot } => {
            let pop = snapshot::load(snapshot)?;
            print!("{}", reportkit::to_json(&reportkit::type_embedding(&pop)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::ProbeShift { snapshot, offset } => {
            let pop = snapshot::load(snapshot)?;
            print!("{}", reportkit::to_json(&scenarios::apply_shift_probe(&pop, *offset)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { snapshot } => {
            let pop = snapshot::load_unchecked(snapshot)?;
            match pop.validate() {
                Ok(()) => {
                    println!("valid");
                    Ok(ExitCode::SUCCESS)
                }
                Err(report) => {
                    println!("{report}");
                    Ok(ExitCode::from(1))
                }
            }
        }
    }
}

fn scenario(
    cli: &Cli,
    kind: ScenarioKind,
    args: &RunArgs,
    snapshot: Option<&Path>,
    parasites: Option<usize>,
) -> codedrift::Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::preset(kind),
    };
    if cfg.kind != kind {
        return Err(Error::Usage(format!(
            "configuration describes a {} scenario",
            cfg.kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(path) = snapshot {
        cfg.snapshot = Some(path.to_path_buf());
    }
    if let Some(k) = parasites {
        cfg.parasites = k;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.validate()?;

    let verbose = cli.verbose;
    let mut progress = |label: &str, r: &GenerationRecord| {
        if verbose >= 2 || (verbose == 1 && r.generation.is_multiple_of(100)) {
            eprintln!(
                "{label} generation {} best {:.6} mean {:.6}",
                r.generation, r.best_fitness, r.mean_fitness
            );
        }
    };
    let out = scenarios::run(&cfg, &mut progress)?;
    for path in scenarios::write_outputs(&out, &cfg, &out_dir)? {
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
