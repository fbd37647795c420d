use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use active_sampling::pilot_sample_size;
use active_sampling_harness::config::ExperimentConfig;
use active_sampling_harness::experiment::{run_benchmark, run_coverage, ResultTable};
use active_sampling_harness::synthetic::{generate_synthetic, sample_variance, Scenario, SyntheticSpec};
use active_sampling_harness::HarnessError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "active-sampling", version, about = "Active sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-process population as CSV (i,z,y,p).
    GenerateData {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        r2: f64,
        #[arg(long, default_value = "positive")]
        scenario: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// eRMSE of every configured method at every checkpoint.
    RunExperiment(ExperimentArgs),
    /// Interval coverage of every configured method and variance estimator.
    Coverage(ExperimentArgs),
    /// Sample size needed to reach a standard error from a pilot sample.
    Pilot {
        /// CSV with a `y` column.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied after the config file.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for pair in &args.set {
        config.apply_override(pair)?;
    }
    Ok(config)
}

fn write_table(table: &ResultTable, out: &Path) -> Result<(), HarnessError> {
    table.write_csv(BufWriter::new(File::create(out)?))?;
    let mut meta_path = out.as_os_str().to_owned();
    meta_path.push(".meta");
    table.write_meta(BufWriter::new(File::create(PathBuf::from(meta_path))?))?;
    for (method, reason) in &table.failures {
        eprintln!("warning: {method} skipped: {reason}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenerateData { sigma, r2, scenario, n, seed, out } => {
            let scenario: Scenario = scenario.parse()?;
            let mut spec = SyntheticSpec::new(sigma, r2, scenario, seed);
            spec.n = n;
            let data = generate_synthetic(&spec)?;
            let mut w = csv::Writer::from_path(out)?;
            w.write_record(["i", "z", "y", "p"])?;
            let p = 1.0 / n as f64;
            for (i, (z, y)) in data.z.iter().zip(&data.y).enumerate() {
                w.write_record([i.to_string(), z.to_string(), y.to_string(), p.to_string()])?;
            }
            w.flush()?;
        }
        Command::RunExperiment(args) => {
            let config = load_config(&args)?;
            let (pop, info) = config.build_population()?;
            write_table(&run_benchmark(&pop, &info, &config.experiment)?, &args.out)?;
        }
        Command::Coverage(args) => {
            let config = load_config(&args)?;
            let (pop, info) = config.build_population()?;
            write_table(&run_coverage(&pop, &info, &config.experiment)?, &args.out)?;
        }
        Command::Pilot { data, delta } => {
            let mut reader = csv::Reader::from_path(&data)?;
            let column = reader
                .headers()?
                .iter()
                .position(|h| h == "y")
                .ok_or_else(|| HarnessError::Config(format!("{} has no y column", data.display())))?;
            let mut y = Vec::new();
            for record in reader.records() {
                let record = record?;
                let value = record[column]
                    .parse::<f64>()
                    .map_err(|_| HarnessError::Config(format!("non-numeric y value '{}'", &record[column])))?;
                y.push(value);
            }
            if y.len() < 2 {
                return Err(HarnessError::Precondition("pilot needs at least two observations".into()));
            }
            let n = pilot_sample_size(sample_variance(&y), delta)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{n}")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
