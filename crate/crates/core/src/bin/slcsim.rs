use std::process::ExitCode;

use clap::Parser;
use slcsim::cli::{cmd_compare, cmd_reproduce, cmd_run, Cli, CliError, Command};
use slcsim::metrics::summary_kv;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Run(args) => {
            let cfgs = args.resolve()?;
            let [cfg] = cfgs.as_slice() else {
                return Err(CliError::Invalid("run takes at most one --config".into()));
            };
            let report = cmd_run(cfg)?;
            print!("{}", summary_kv(&report));
            println!("artifacts written to {}", cfg.out_dir().display());
            if report.device_full {
                eprintln!("error: device full, run stopped early");
            }
            Ok(!report.device_full)
        }
        Command::Compare(args) => {
            let out = cmd_compare(&args.resolve()?)?;
            print!("{}", out.table);
            for r in out.reports.iter().filter(|r| r.device_full) {
                eprintln!("error: device full under {}, run stopped early", r.scheme);
            }
            Ok(out.reports.iter().all(|r| !r.device_full))
        }
        Command::Reproduce { suites, seed, determinism } => {
            let (text, ok) = cmd_reproduce(&suites, seed, determinism)?;
            print!("{text}");
            Ok(ok)
        }
    }
}
