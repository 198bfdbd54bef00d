use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perclab_cli::{CliError, Experiment};

#[derive(Parser)]
#[command(name = "perclab", version, about = "Long-range percolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run { seed }` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PERCLAB_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a marked point cloud.
    Generate,
    /// Sample a cloud and build its percolation graph.
    Build,
    /// Percolation probability against the thinning parameter.
    ThetaSweep,
    /// Probability of a sublinear cluster joining two far regions.
    Sublinear,
    /// Percolation probability against the truncation length.
    TruncateSweep,
    /// Effective decay exponent of the integrated kernel.
    DeltaEff,
    /// Fractions of alive or good cubes per stage.
    RenormSurvey,
    /// Effective conductance to the outside of growing balls.
    Transience,
    /// Monte Carlo checks of the regularity and connection estimates.
    LemmaCheck,
    /// Check a config without running anything.
    Validate,
    /// Re-run the experiment recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

fn experiment(c: &Command) -> Option<Experiment> {
    Some(match c {
        Command::Generate => Experiment::Generate,
        Command::Build => Experiment::Build,
        Command::ThetaSweep => Experiment::ThetaSweep,
        Command::Sublinear => Experiment::Sublinear,
        Command::TruncateSweep => Experiment::TruncateSweep,
        Command::DeltaEff => Experiment::DeltaEff,
        Command::RenormSurvey => Experiment::RenormSurvey,
        Command::Transience => Experiment::Transience,
        Command::LemmaCheck => Experiment::LemmaCheck,
        Command::Validate => Experiment::Validate,
        Command::Replay { .. } => return None,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    let Some(exp) = experiment(&cli.command) else {
        let Command::Replay { manifest } = &cli.command else { unreachable!() };
        let m = perclab_cli::replay(manifest, &c.out)?;
        println!("{}", c.out.join(perclab_cli::MANIFEST).display());
        return Ok(if m.partial { ExitCode::FAILURE } else { ExitCode::SUCCESS });
    };
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?,
        None => String::new(),
    };
    let m = perclab_cli::run(exp, &text, c.seed, &c.out)?;
    if exp == Experiment::Validate {
        let report = std::fs::read_to_string(c.out.join("validation.json"))
            .map_err(|source| CliError::Io { path: c.out.join("validation.json"), source })?;
        print!("{report}");
        let v: serde_json::Value = serde_json::from_str(&report).expect("written by perclab");
        if v["valid"] != true {
            return Ok(ExitCode::from(1));
        }
    } else {
        for o in &m.outputs {
            println!("{}", c.out.join(o).display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
