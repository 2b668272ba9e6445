mod fit;
mod manifest;
mod simulate;
mod summarize;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "stbs", version, about = "Structural text-based scaling")]
struct Cli {
    /// Worker threads; falls back to STBS_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write its state, ELBO trace and run manifest.
    Fit(fit::FitArgs),
    /// Draw a synthetic corpus with known ground truth.
    Simulate(simulate::SimulateArgs),
    /// Write the report and plot data of a fitted state.
    Summarize(summarize::SummarizeArgs),
}

fn set_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("STBS_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| anyhow::anyhow!("STBS_THREADS must be a positive integer, got `{v}`"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        anyhow::ensure!(n > 0, "thread count must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = set_threads(cli.threads).and_then(|_| match cli.cmd {
        Command::Fit(a) => fit::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Summarize(a) => summarize::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
