use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pmusim::capture::{self, sidecar_path};
use pmusim::session;
use pmusim::RunConfig;

#[derive(Parser)]
#[command(
    name = "pmusim",
    version,
    about = "PMU-like metering platform simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key=value` lines); defaults apply to missing keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synchronize, capture and write a raw `.bin` file plus its `.meta` sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Raw capture to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Decode a raw capture into `unix_us,inst_v,rms_v` CSV.
    Parse {
        /// Raw capture file.
        raw: PathBuf,
        /// Metadata sidecar; defaults to the raw path with a `.meta` extension.
        #[arg(long, value_name = "FILE")]
        meta: Option<PathBuf>,
        /// CSV destination; stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare a parsed CSV against the analytic reference meter.
    Report {
        /// Parsed capture CSV.
        csv: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Report destination; stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run repeated synchronizations, one per simulated second.
    Syncdemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        repetitions: u32,
        /// CSV destination; stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = common.load()?;
            let outcome = session::simulate(&cfg, &out)?;
            println!(
                "wrote {} frames to {} (offset {} ns, {} rebase(s)); metadata in {}",
                outcome.pipeline.written,
                outcome.bin_path.display(),
                outcome.sync.exchange.offset,
                outcome.metadata.rebases.len(),
                outcome.meta_path.display()
            );
        }
        Command::Parse { raw, meta, out } => {
            let meta = meta.unwrap_or_else(|| sidecar_path(&raw));
            let parsed = capture::parse_file(&raw, &meta)
                .with_context(|| format!("parsing {}", raw.display()))?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            capture::write_csv(&parsed.records, sink(out.as_deref())?)?;
        }
        Command::Report { csv, common, out } => {
            let cfg = common.load()?;
            let file = File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let records = capture::read_csv(file)?;
            let report = session::report_from_records(&cfg, &records, cfg.seed)?;
            report.write_csv(sink(out.as_deref())?)?;
        }
        Command::Syncdemo {
            common,
            repetitions,
            out,
        } => {
            let cfg = common.load()?;
            let rows = session::sync_demo(&cfg, repetitions)?;
            session::write_sync_csv(&rows, sink(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
