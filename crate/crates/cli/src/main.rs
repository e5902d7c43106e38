use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otf_adapt::frontend::WindowSpec;
use otf_adapt::pipeline::{self, PipelineConfig, Stage, StageOutcome};
use otf_adapt::Error;

/// On-the-fly speaker adaptation experiments on a synthetic corpus.
#[derive(Parser, Debug)]
#[command(name = "otf-adapt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the work directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Rerun even when outputs for this configuration already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the corpus and extract features.
    Prep(StageArgs),
    /// Train the SBE and SVR embedding networks.
    TrainEmbed(StageArgs),
    /// Extract SVR features for every window size in use.
    ExtractSvr(StageArgs),
    /// Train the speaker-independent and SVR-input acoustic models.
    TrainAm(StageArgs),
    /// Speaker adaptive training with LHUC.
    Sat(StageArgs),
    /// Train the f-LHUC regression networks.
    TrainFlhuc(StageArgs),
    /// Estimate offline LHUC transforms for test speakers.
    Adapt(StageArgs),
    /// Score every system and write the grouped error table.
    Evaluate(StageArgs),
    /// Run every stage in order.
    Run(StageArgs),
    /// Measure streaming real-time factors.
    BenchRtf {
        #[command(flatten)]
        common: Common,
        /// Comma-separated window sizes, e.g. `10ms,100ms,utterance`.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<WindowSpec>>,
    },
    /// Combine evaluation tables from several work directories.
    Report {
        /// Work directories holding completed evaluations.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the online-average summary vectors of every test utterance.
    DumpM {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a configuration and print its hash.
    CheckConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = &c.work_dir {
        cfg.work_dir = w.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(a: &StageArgs, st: Stage) -> Result<(), Error> {
    let cfg = load(&a.common)?;
    match pipeline::run_stage(&cfg, st, a.force)? {
        StageOutcome::Ran => println!("{st}: done (config {})", cfg.hash()),
        StageOutcome::UpToDate => println!("{st}: up to date (config {}); use --force to rerun", cfg.hash()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prep(a) => stage(&a, Stage::Prep),
        Command::TrainEmbed(a) => stage(&a, Stage::TrainEmbed),
        Command::ExtractSvr(a) => stage(&a, Stage::ExtractSvr),
        Command::TrainAm(a) => stage(&a, Stage::TrainAm),
        Command::Sat(a) => stage(&a, Stage::Sat),
        Command::TrainFlhuc(a) => stage(&a, Stage::TrainFlhuc),
        Command::Adapt(a) => stage(&a, Stage::Adapt),
        Command::Evaluate(a) => stage(&a, Stage::Evaluate),
        Command::Run(a) => {
            for st in Stage::ALL {
                stage(&a, st)?;
            }
            let cfg = load(&a.common)?;
            print!(
                "{}",
                std::fs::read_to_string(cfg.work_dir.join(pipeline::eval::EVAL_CSV))?
            );
            Ok(())
        }
        Command::BenchRtf { common, windows } => {
            let cfg = load(&common)?;
            let windows = windows.unwrap_or_else(|| cfg.evaluate.rtf_windows.clone());
            let report = pipeline::bench_rtf(&cfg, &windows)?;
            print!("{}", String::from_utf8_lossy(&report.to_csv()?));
            if !report.strictly_increasing() {
                eprintln!("warning: RTF does not increase strictly with window size");
            }
            Ok(())
        }
        Command::Report { runs, out } => {
            let r = pipeline::report(&runs)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(p) => {
                    otf_adapt::io::write_atomic(&p, &r.csv)?;
                    print!("{}", r.text);
                }
                None => print!("{}", String::from_utf8_lossy(&r.csv)),
            }
            Ok(())
        }
        Command::DumpM { common, out } => {
            let cfg = load(&common)?;
            let n = pipeline::dump_m(&cfg, &out)?;
            println!("wrote {n} rows to {}", out.display());
            Ok(())
        }
        Command::CheckConfig { common } => {
            let cfg = load(&common)?;
            println!("config ok, hash {}", cfg.hash());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Usage(_) => 2,
        Error::Dependency { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
