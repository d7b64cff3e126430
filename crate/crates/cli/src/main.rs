use std::process::ExitCode;

use clap::Parser;
use diu_cli::{run, Cli};

fn main() -> ExitCode {
    let out = run(&Cli::parse());
    for d in &out.diagnostics {
        eprintln!("{d}");
    }
    if let Some(m) = out.manifest.as_ref().filter(|_| out.code == 0) {
        println!("{}", serde_json::to_string(&m.summary).unwrap_or_default());
    }
    ExitCode::from(out.code)
}
