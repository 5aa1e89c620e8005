use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hadhash::cli::{self, ConfigMap, EvalInputs, EvalSettings, Metrics};
use hadhash::data::{FeatureFormat, Normalization};
use hadhash::Result;

#[derive(Parser)]
#[command(
    name = "hadhash",
    version,
    about = "Online hashing with Hadamard target codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    /// Master seed; sub-seeds not set explicitly derive from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma list from map, ph2, pk, pr.
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long, value_parser = ["mistake", "correct"])]
    mask_mode: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    kernel: Option<String>,
    /// Any other setting, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunFlags {
    fn config(&self) -> Result<ConfigMap> {
        let mut m = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        if let Some(b) = self.bits {
            m.set("bits", &b.to_string())?;
        }
        if let Some(s) = self.seed {
            m.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            m.set("out", &o.display().to_string())?;
        }
        if let Some(v) = &self.metrics {
            m.set("eval.metrics", v)?;
        }
        if let Some(v) = &self.mask_mode {
            m.set("mask_mode", v)?;
        }
        if let Some(v) = &self.kernel {
            m.set("kernel", v)?;
        }
        for pair in &self.set {
            m.set_pair(pair)?;
        }
        Ok(m)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured stream and save the model.
    Train(RunFlags),
    /// Train, encode, evaluate and write the report.
    Run(RunFlags),
    /// Encode a feature file with a saved model.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "idx")]
        format: FeatureFormat,
        #[arg(long, default_value = "none")]
        normalization: Normalization,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved query and database codes.
    Eval {
        #[arg(long)]
        query_codes: PathBuf,
        #[arg(long)]
        db_codes: PathBuf,
        #[arg(long)]
        query_labels: PathBuf,
        #[arg(long)]
        db_labels: PathBuf,
        /// IDX label files or one-line-per-item label text.
        #[arg(long, default_value = "text", value_parser = ["idx", "text"])]
        label_format: String,
        #[arg(long, default_value = "map,ph2")]
        metrics: String,
        #[arg(long)]
        map_at: Option<usize>,
        #[arg(long, default_value_t = 2)]
        radius: u32,
        #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
        precision_at: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step training time over a grid of sizes.
    Bench(RunFlags),
    /// Evaluate an untrained Gaussian projection on the configured data.
    BaselineLsh(RunFlags),
    /// Quick checks against naive implementations.
    Selfcheck,
}

fn run(cmd: Command) -> Result<bool> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Train(f) => {
            let path = cli::cmd_train(&f.config()?, &mut out)?;
            let _ = writeln!(out, "model written to {}", path.display());
        }
        Command::Run(f) => {
            cli::cmd_run(&f.config()?, &mut out)?;
        }
        Command::Encode {
            model,
            features,
            format,
            normalization,
            out: path,
        } => {
            let codes = cli::cmd_encode(&model, &features, format, normalization, &path)?;
            let _ = writeln!(out, "encoded {} items to {}", codes.len(), path.display());
        }
        Command::Eval {
            query_codes,
            db_codes,
            query_labels,
            db_labels,
            label_format,
            metrics,
            map_at,
            radius,
            precision_at,
            out: dir,
        } => {
            let inputs = EvalInputs {
                query_codes: &query_codes,
                db_codes: &db_codes,
                query_labels: &query_labels,
                db_labels: &db_labels,
                label_format: if label_format == "idx" {
                    FeatureFormat::Idx
                } else {
                    FeatureFormat::Csv
                },
                settings: EvalSettings {
                    metrics: Metrics::parse(&metrics)?,
                    map_at,
                    radius,
                    precision_at,
                    checkpoints: Vec::new(),
                },
                out: &dir,
            };
            cli::cmd_eval(&inputs, &mut out)?;
        }
        Command::Bench(f) => {
            cli::cmd_bench(&f.config()?, &mut out)?;
        }
        Command::BaselineLsh(f) => {
            cli::cmd_baseline_lsh(&f.config()?, &mut out)?;
        }
        Command::Selfcheck => {
            let results = cli::selfcheck(&mut out)?;
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Err(e) = cli::init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(args.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
