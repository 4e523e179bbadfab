use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prbcast_bench::{harness, report, BenchmarkSpec, ModelTrainer};
use prbcast_core::models::EstimatorKind;
use prbcast_core::traffic::{write_scenario, ScenarioConfig, TenantProfile};
use prbcast_o1::{serve_odu, ServerOptions};
use prbcast_rapp::{run_connected, RappConfig};

#[derive(Parser)]
#[command(name = "prbcast", version, about = "PRB demand forecasting benchmark and rApp simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark grid over models and data lengths.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Write a scenario's demand series as CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulated O-DU until its scenario is replayed.
    ServeOdu(ServeArgs),
    /// The rApp control loop.
    #[command(subcommand)]
    Rapp(RappCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    Run(RunArgs),
    /// Re-render the table and plot CSVs from an output directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_delimiter = ',', default_value = "lstm,sff,deepar,transformer")]
    models: Vec<EstimatorKind>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,10,20")]
    weeks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    /// JSON tenant profile; the benchmark profile when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Run models concurrently. Timings are then not comparable.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 100)]
    telemetry_ms: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7700")]
    listen: String,
    /// Simulated hours per wall-clock hour.
    #[arg(long, default_value_t = 3600.0)]
    speedup: f64,
    #[arg(long, default_value = "allocations.csv")]
    allocation_log: PathBuf,
    /// Resume the replay at this hour.
    #[arg(long, default_value_t = 0)]
    start_hour: usize,
    /// Keep accepting allocations this long after the last report.
    #[arg(long, default_value_t = 10)]
    linger_secs: u64,
}

#[derive(Subcommand)]
enum RappCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn bench_run(args: RunArgs) -> Result<ExitCode> {
    let mut spec = BenchmarkSpec::new(&args.out);
    spec.models = args.models;
    spec.weeks = args.weeks;
    spec.seed = args.seed;
    spec.repetitions = args.reps;
    spec.parallel = args.parallel;
    spec.telemetry_interval_ms = args.telemetry_ms;
    if let Some(path) = args.profile {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        spec.profile = serde_json::from_str::<TenantProfile>(&text)?;
    }
    let outcome = harness::run(&spec, &ModelTrainer)?;
    let (table, failed) = report::report(&args.out)?;
    println!("{table}");
    println!("results: {}", outcome.results_csv.display());
    if spec.parallel {
        println!("note: --parallel run, timing columns are not comparable");
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let scenario = ScenarioConfig::load(&args.scenario)?;
    let options = ServerOptions {
        start_hour: args.start_hour,
        allocation_log: Some(args.allocation_log.clone()),
        ..ServerOptions::default()
    };
    let server = serve_odu(&scenario, &args.listen, args.speedup, options)?;
    eprintln!(
        "O-DU listening on {} ({} hours, {} tenants)",
        server.local_addr(),
        server.hours(),
        scenario.tenants.len()
    );
    while !server.wait_for_clock(server.hours(), Duration::from_secs(60)) {
        eprintln!("hour {}/{}", server.clock(), server.hours());
    }
    std::thread::sleep(Duration::from_secs(args.linger_secs));
    let log = server.shutdown()?;
    eprintln!("{} allocations written to {}", log.len(), args.allocation_log.display());
    Ok(ExitCode::SUCCESS)
}

fn rapp(config: PathBuf) -> Result<ExitCode> {
    let cfg = RappConfig::load(&config)?;
    let report = run_connected(&cfg)?;
    for rec in &report.records {
        println!("{}", serde_json::to_string(&rec.decision)?);
    }
    eprintln!(
        "ingested {} reports, rejected {}, {} decisions, {} errors",
        report.ingested,
        report.rejected,
        report.records.len(),
        report.errors.len()
    );
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    Ok(if report.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(BenchCommand::Run(args)) => bench_run(args),
        Command::Bench(BenchCommand::Report { dir }) => report::report(&dir)
            .map(|(table, failed)| {
                println!("{table}");
                if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS }
            })
            .map_err(Into::into),
        Command::Simulate { scenario, out } => (|| {
            let cfg = ScenarioConfig::load(&scenario)?;
            let (series, path) = write_scenario(&cfg, &out)?;
            if series.is_empty() {
                bail!("scenario has no tenants");
            }
            println!("{} tenants, {} hours -> {}", series.len(), cfg.hours(), path.display());
            Ok(ExitCode::SUCCESS)
        })(),
        Command::ServeOdu(args) => serve(args),
        Command::Rapp(RappCommand::Run { config }) => rapp(config),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
