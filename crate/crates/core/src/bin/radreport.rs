use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radreport::pipeline::{Pipeline, PipelineConfig, PipelineError, RunOptions, Stage};
use radreport::service::{self, ServiceConfig};

/// Radiology report dataset, generation and blind rating pipeline.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and parse every corpus into sections.
    Ingest(StageArgs),
    /// Normalize, filter and pair findings with impressions.
    Preprocess(StageArgs),
    /// Assign pairs to train/val/test.
    Split(StageArgs),
    /// Write instruction records and the training manifest.
    BuildDataset(StageArgs),
    /// Generate impressions for test reports with every configured model.
    Generate(StageArgs),
    /// Create the blind rating study and issue rater tokens.
    StudyCreate(StageArgs),
    /// Export aggregated study scores as CSV.
    StudyResults(StageArgs),
    /// Run ingest through study-create.
    Run(StageArgs),
    /// Serve the rating API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every split and the study, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run unchanged stages; export results of an incomplete study.
    #[arg(long)]
    force: bool,
    /// Continue an existing generation ledger.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "RADREPORT_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, env = "RADREPORT_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Environment variable holding the admin key.
    #[arg(long, default_value = "RADREPORT_ADMIN_KEY")]
    admin_key_env: String,
    #[arg(long, default_value_t = 720)]
    token_ttl_hours: u64,
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    let pipeline = Pipeline::new(
        config,
        RunOptions {
            force: args.force,
            resume: args.resume,
        },
    );
    for stage in stages {
        let summary = pipeline.run(*stage)?;
        println!("{}", serde_json::to_string(&summary).expect("serializable"));
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> ExitCode {
    let Some(admin_key) = std::env::var(&args.admin_key_env).ok().filter(|k| !k.is_empty()) else {
        eprintln!("error: environment variable {} must hold the admin key", args.admin_key_env);
        return ExitCode::from(1);
    };
    let config = ServiceConfig {
        data_dir: args.data_dir.clone(),
        bind: args.bind,
        admin_key,
        token_ttl: chrono::Duration::hours(args.token_ttl_hours as i64),
    };
    match service::run(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (args, stages): (&StageArgs, &[Stage]) = match &cli.command {
        Command::Ingest(a) => (a, &[Stage::Ingest]),
        Command::Preprocess(a) => (a, &[Stage::Preprocess]),
        Command::Split(a) => (a, &[Stage::Split]),
        Command::BuildDataset(a) => (a, &[Stage::BuildDataset]),
        Command::Generate(a) => (a, &[Stage::Generate]),
        Command::StudyCreate(a) => (a, &[Stage::StudyCreate]),
        Command::StudyResults(a) => (a, &[Stage::StudyResults]),
        Command::Run(a) => (a, &Stage::ALL[..6]),
        Command::Serve(a) => return serve(a),
    };
    match run_stages(args, stages) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
