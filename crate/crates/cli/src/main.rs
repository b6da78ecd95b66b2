mod args;
mod commands;
mod output;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Ctx;
use crate::output::{config, runtime, CliResult, Failure};

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(config("--threads must be at least 1"));
    }
    if cli.max_minutes.is_some_and(|m| !(m > 0.0)) {
        return Err(config("--max-minutes must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().map_err(runtime)?;
    let ctx = Ctx { threads: cli.threads, max_minutes: cli.max_minutes, log_timing: cli.log_timing };
    match &cli.command {
        Command::Gen(a) => commands::gen(ctx, a),
        Command::Plan(a) => commands::plan(ctx, a),
        Command::Baseline(a) => commands::baseline(ctx, &a.algorithm),
        Command::Ablate(a) => commands::ablate(ctx, a),
        Command::HeuristicStudy(a) => commands::heuristic_study(ctx, a),
        Command::Sweep(a) => commands::sweep(ctx, a),
        Command::Serve(a) => commands::serve(ctx, a),
        Command::Eval(a) => commands::eval(ctx, a),
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("RZ_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            let f = Failure::Config(first.to_string());
            eprintln!("{}", f.line());
            std::process::exit(f.exit_code());
        }
    };
    if let Err(f) = run(cli) {
        eprintln!("{}", f.line());
        std::process::exit(f.exit_code());
    }
}
