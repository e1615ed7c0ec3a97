use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oll_cli::config::Format;
use oll_cli::report::{emit_report, load_reports};
use oll_cli::{run_experiment, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "oll", version, about = "Obstacle problems with measure data: solve, verify, sweep, report")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured problem and write the solution field
    Solve(Common),
    /// Run the selected checks at the base resolution
    Verify(Common),
    /// Run the selected checks at every configured resolution
    Sweep(Common),
    /// Re-emit reports.json from the output directory in other formats
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "OLL_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated list of csv, json, svg
    #[arg(long)]
    format: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    let (cmd, args) = match cli.command {
        Cmd::Solve(a) => (Some(Command::Solve), a),
        Cmd::Verify(a) => (Some(Command::Verify), a),
        Cmd::Sweep(a) => (Some(Command::Sweep), a),
        Cmd::Report(a) => (None, a),
    };
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = &args.format {
        cfg.formats = Format::parse_list(f)?;
    }
    let out = args.out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("oll-out"));
    let Some(cmd) = cmd else {
        let reports = load_reports(&out).map_err(|e| format!("{}: {e}", out.display()))?;
        emit_report(&reports, &cfg.formats, &out).map_err(|e| e.to_string())?;
        print_lines(&reports);
        return Ok(reports.iter().all(|r| r.passed));
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| e.to_string())?;
    let outcome = pool.install(|| run_experiment(&cfg, cmd)).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    for (name, text) in &outcome.files {
        std::fs::write(out.join(name), text).map_err(|e| e.to_string())?;
    }
    emit_report(&outcome.reports, &cfg.formats, &out).map_err(|e| e.to_string())?;
    print_lines(&outcome.reports);
    Ok(outcome.all_passed())
}

fn print_lines(reports: &[oll_core::verifier::VerificationReport]) {
    for r in reports {
        println!("{:<28} {} min_constant={}", r.name, if r.passed { "PASS" } else { "FAIL" }, oll_cli::report::fmt17(r.min_constant));
    }
}
