mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use fmcorr::ErrorKind;

use args::{Cli, Command};

fn init_logging(verbose: u8, json: bool) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).target(env_logger::Target::Stderr);
    if json {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Argument => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.log_json);
    let result = match &cli.command {
        Command::Match(a) => commands::run_match(a),
        Command::Eval(a) => commands::run_eval(a, cli.seed),
        Command::Benchmark(a) => commands::run_benchmark(a),
        Command::TransferColor(a) => commands::run_transfer_color(a),
        Command::TransferKeypoints(a) => commands::run_transfer_keypoints(a),
        Command::Descriptors(a) => commands::run_descriptors(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
