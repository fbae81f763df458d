use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robinf_cli::panel::collapse_csv;
use robinf_cli::{run_analysis, AnalysisConfig, CliError, Overrides, Result};

/// Robust standard errors, multiple-testing corrections and resampling
/// inference for linear regressions over CSV data.
///
/// Flags given to `analyze` override the matching config-file entries.
/// Set ROBINF_VERBOSE=1 to echo warnings on standard error.
#[derive(Parser)]
#[command(name = "robinf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis described by a TOML config and emit a JSON report.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// conventional, hc0..hc3, bm, cluster, multiway, max_se
        #[arg(long)]
        vcov: Option<String>,
        /// bonferroni, holm, wy, rw, bh, bky
        #[arg(long)]
        mht: Option<String>,
        /// pairs, residual, wild, wild_cluster, ri
        #[arg(long)]
        boot: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// JSON report path (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the coefficient table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Omit the generation timestamp so reruns are byte-identical
        #[arg(long)]
        no_timestamp: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Average a panel into one pre-cutoff and one post-cutoff row per unit.
    CollapsePeriods {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        unit: String,
        #[arg(long)]
        period: String,
        /// Periods at or below the cutoff are "pre"
        #[arg(long)]
        cutoff: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn verbose() -> bool {
    std::env::var("ROBINF_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_all(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    let res = match path {
        Some(p) => create(p)?.write_all(bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    res.map_err(|e| CliError::Config(format!("cannot write output: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            config,
            vcov,
            mht,
            boot,
            reps,
            seed,
            alpha,
            out,
            csv,
            no_timestamp,
            workers,
        } => {
            let mut cfg = AnalysisConfig::load(&config)?;
            cfg.apply(&Overrides {
                vcov,
                mht,
                boot,
                reps,
                seed,
                alpha,
                out,
                csv,
                no_timestamp,
                workers,
            });
            let report = run_analysis(&cfg)?;
            if verbose() {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
            }
            let mut json = report.to_json()?;
            json.push('\n');
            write_all(cfg.output.path.as_ref(), json.as_bytes())?;
            if let Some(p) = &cfg.output.csv {
                report.write_csv(create(p)?)?;
            }
            Ok(())
        }
        Command::CollapsePeriods {
            input,
            unit,
            period,
            cutoff,
            out,
        } => {
            let file = File::open(&input).map_err(|e| CliError::Input {
                path: input.display().to_string(),
                message: e.to_string(),
            })?;
            let mut buf = Vec::new();
            let summary = collapse_csv(file, &mut buf, &unit, &period, cutoff)?;
            write_all(out.as_ref(), &buf)?;
            if summary.dropped_units > 0 || verbose() {
                eprintln!(
                    "kept {} unit(s), dropped {} with rows on only one side of the cutoff",
                    summary.units_kept, summary.dropped_units
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
