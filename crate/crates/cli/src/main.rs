use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ulfm_sim::bench::{emit_csv, emit_plotscript, run_bench, BenchConfig};

#[derive(Parser)]
#[command(name = "bench", about = "Virtual-time benchmarks of fault-tolerant message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark family and write its records as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every simulation's event log to `<out>.trace`.
        #[arg(long)]
        trace: bool,
        /// Write a gnuplot script for the results.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn run(config: PathBuf, out: PathBuf, trace: bool, plot: Option<PathBuf>) -> Result<bool> {
    let mut cfg = BenchConfig::load(&config)?;
    cfg.trace |= trace;
    let report = run_bench(&cfg).with_context(|| format!("running {}", config.display()))?;
    emit_csv(&report.records, &out)?;
    if cfg.trace {
        let mut path = out.clone().into_os_string();
        path.push(".trace");
        let mut text = report.traces.join("\n");
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", PathBuf::from(&path).display()))?;
    }
    if let Some(plot) = plot {
        emit_plotscript(&report.records, &out, &plot)?;
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    eprintln!(
        "{}: {} records, {} violations",
        cfg.benchmark,
        report.records.len(),
        report.violations.len()
    );
    Ok(report.violations.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            trace,
            plot,
        } => run(config, out, trace, plot),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
