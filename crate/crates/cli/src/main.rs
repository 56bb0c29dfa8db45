mod args;
mod commands;
mod render;

use args::{Cli, Command};
use clap::Parser;
use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => commands::serve(&a).map(|()| None),
        Command::Analyze(a) => commands::analyze(&a).map(|o| Some((o, a.output.format))),
        Command::Test(a) => commands::test(&a).map(|o| Some((o, a.output.format))),
        Command::Select(a) => commands::select(&a).map(|o| Some((o, a.output.format))),
        Command::SimTwovar(a) => commands::sim_twovar(&a).map(|o| Some((o, a.output.format))),
        Command::SimPrior(a) => commands::sim_prior(&a).map(|o| Some((o, a.output.format))),
        Command::Xcrit(a) => commands::xcrit(&a).map(|o| Some((o, a.output.format))),
    };
    match result {
        Ok(Some((out, format))) => {
            let text = render::render(&out, format);
            let mut stdout = std::io::stdout().lock();
            // A closed pipe is not worth a panic.
            let _ = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
