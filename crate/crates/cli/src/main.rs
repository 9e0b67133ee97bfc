//! Scenario-driven front end: `holonomy run <descriptor.toml>` executes one
//! scenario and writes machine-readable reports; `holonomy list` prints the
//! built-in model catalog.
//!
//! Exit codes: 0 all checks pass, 1 a threshold check failed, 2 descriptor
//! parse/validation error, 3 numeric failure while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use holonomy::error::HolonomyError;
use holonomy::scenario::{self, Kind, RunReport, ScenarioDescriptor};

#[derive(Parser)]
#[command(name = "holonomy", about = "Composite-bundle holonomy engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario descriptor file.
    Run {
        /// Path to the TOML descriptor (one file = one run).
        file: PathBuf,
        /// Override the descriptor's integrator step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the descriptor's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for report files (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Which machine-readable outputs to write.
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// List built-in scenario models and their parameters.
    List {
        /// Restrict to one kind (stokes-verify, cocycle-check, qphase, gravity).
        #[arg(long)]
        kind: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { file, steps, seed, out, format } => run(&file, steps, seed, &out, format),
        Command::List { kind } => {
            list(kind.as_deref());
            ExitCode::SUCCESS
        }
    }
}

fn list(kind: Option<&str>) {
    let kinds = match kind.map(Kind::parse) {
        Some(Some(k)) => Some(k),
        // Unknown kind: empty catalog, success (nothing matches).
        Some(None) => return,
        None => None,
    };
    for info in scenario::list_models(kinds) {
        println!("{:?} / {}", info.kind, info.model);
        println!("    {}", info.description);
        if info.defaults.is_empty() {
            println!("    params: none");
        } else {
            let params: Vec<String> =
                info.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("    params: {}", params.join(", "));
        }
    }
}

fn run(
    file: &Path,
    steps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    format: Format,
) -> ExitCode {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let mut descriptor = match ScenarioDescriptor::from_toml(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: descriptor {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = steps {
        descriptor.integrator.steps = n;
    }
    if let Some(s) = seed {
        descriptor.seed = s;
    }

    let started = Instant::now();
    let report = match scenario::run_descriptor(&descriptor) {
        Ok(r) => r,
        Err(HolonomyError::Descriptor(msg)) => {
            eprintln!("error: descriptor: {msg}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: numeric failure: {e}");
            return ExitCode::from(3);
        }
    };
    let elapsed = started.elapsed();

    if let Err(e) = write_outputs(&report, out, format, elapsed.as_secs_f64()) {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::from(3);
    }

    print!("{}", report.to_text());
    println!("timing: {:.3} s", elapsed.as_secs_f64());
    println!("outputs in {}", out.display());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

fn write_outputs(
    report: &RunReport,
    out: &Path,
    format: Format,
    elapsed_s: f64,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let json = matches!(format, Format::Json | Format::Both);
    let csv = matches!(format, Format::Csv | Format::Both);
    if json {
        write_atomic(&out.join("report.json"), &report.to_json())?;
    }
    if csv {
        for (name, table) in &report.tables {
            write_atomic(&out.join(format!("{name}.csv")), &table.to_csv())?;
        }
    }
    // Text body: deterministic section, then a marked non-deterministic
    // trailer carrying the timing.
    let mut text = report.to_text();
    text.push_str("# --- non-deterministic ---\n");
    text.push_str(&format!("timing_seconds: {elapsed_s:.3}\n"));
    write_atomic(&out.join("report.txt"), &text)
}
