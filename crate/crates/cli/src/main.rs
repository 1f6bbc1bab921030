mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, StreamMode};
use commands::CliResult;

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate { out, events, run } => commands::simulate(&out, events.as_deref(), &run),
        Command::Train {
            record,
            model,
            cv_folds,
            features_csv,
            run,
        } => commands::train(&record, &model, cv_folds, features_csv.as_deref(), &run),
        Command::Select { model, target, run } => commands::select(&model, target, &run),
        Command::Evaluate { report, run } => commands::evaluate(report.as_deref(), &run),
        Command::Inspect { path, events } => commands::inspect(&path, events),
        Command::Config { run } => commands::print_config(&run),
        Command::Stream { mode } => match mode {
            StreamMode::Serve { listen, speed, run } => commands::serve(&listen, speed, &run),
            StreamMode::Connect {
                connect,
                wait,
                report,
                run,
            } => commands::connect(&connect, wait, report.as_deref(), &run),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
