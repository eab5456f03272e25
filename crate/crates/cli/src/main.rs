use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use manyiv_cli::args::{Cli, Command};
use manyiv_cli::{designs, render, run, write_outputs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Designs { name } = &cli.command {
        return match name {
            None => {
                println!("{}", designs::names().join("\n"));
                ExitCode::SUCCESS
            }
            Some(n) => match designs::bundled(n) {
                Some(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                None => {
                    eprintln!("error: no bundled design {n:?}");
                    ExitCode::FAILURE
                }
            },
        };
    }
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(render(&report, cli.global.format).as_bytes());
    if let Err(e) = write_outputs(&cli, &report) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    if report.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
