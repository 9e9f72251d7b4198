use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use hjb_cli::output::{write_json, write_text};
use hjb_cli::{emit_scenario, parse_scenario, run_command, CliError, Command};
use serde_json::json;

/// Principal eigenvalues, solution branches and property suites for
/// discrete HJB operators.
#[derive(Debug, Parser)]
#[command(name = "hjb", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the first entry of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let sc = match parse_scenario(&args.scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let seed = sc.seed(args.seed);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(4);
        }
    };
    let start = Instant::now();
    let result = pool.install(|| run_command(args.command, &sc, &args.out, seed));
    let wall = start.elapsed().as_secs_f64();
    let (code, artifacts, error) = match result {
        Ok(o) => (o.exit_code, o.artifacts, None),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), Vec::new(), Some(e.to_string()))
        }
    };
    if let Err(e) = write_run_record(&args, &sc, seed, wall, code, &artifacts, error) {
        eprintln!("error: {e}");
        return ExitCode::from(4);
    }
    eprintln!("{} {}: exit {code} after {wall:.2}s, artifacts in {}", args.command.name(), sc.name, args.out.display());
    ExitCode::from(code as u8)
}

fn write_run_record(
    args: &Args,
    sc: &hjb_cli::Scenario,
    seed: u64,
    wall: f64,
    code: i32,
    artifacts: &[String],
    error: Option<String>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(format!("creating {}", args.out.display()), e))?;
    write_text(&args.out, "scenario.toml", &emit_scenario(sc)?)?;
    let record = json!({
        "command": args.command.name(),
        "scenario_file": args.scenario.display().to_string(),
        "scenario": sc,
        "seed": seed,
        "seeds": sc.seeds,
        "jobs": args.jobs,
        "versions": { "hjb-cli": env!("CARGO_PKG_VERSION"), "hjb-core": hjb_core::VERSION },
        "wall_time_s": wall,
        "exit_code": code,
        "error": error,
        "artifacts": artifacts,
    });
    write_json(&args.out, "run.json", &record)?;
    Ok(())
}
