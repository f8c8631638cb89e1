mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use tsmcd::bootstrap::bootstrap_se;
use tsmcd::io::{
    bic_scan_csv, coefficient_boxplot_csv, ingest, km_curves, km_curves_csv, replication_csv,
    sha256_hex, threshold_histogram_csv, FitRecord, IngestOptions, Ingested, ZColumn,
};
use tsmcd::simulation::{run_monte_carlo, ExampleId, SimDesign};
use tsmcd::{bic_scan, tsmcd, Error, MRule, PenaltyKind, PenaltySpec, TuningConfig};

use config::{ConfigFile, FloatList, LambdaGrid};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Multi-threshold detection for censored AFT regression.
#[derive(Debug, Parser)]
#[command(name = "tsmcd", version)]
struct Cli {
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate thresholds and coefficients for a dataset.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Also attach bootstrap standard errors with this many resamples.
        #[arg(long)]
        bootstrap_b: Option<usize>,
        /// Output file for the fit record (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run Monte Carlo replications of a simulation design.
    Simulate {
        /// ex1, ex2, ex3 or null.
        #[arg(long)]
        example: ExampleId,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Output directory for the report and plot tables (report to stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add bootstrap standard errors, intervals and p-values to a fit record.
    Bootstrap {
        /// Fit record produced by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        bootstrap_b: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate BIC over the full (kappa, lambda) grid.
    BicScan {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kaplan-Meier step data for the subgroups of a fit record.
    KmCurves {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Delimited file with a header row and columns y, delta and the regressors.
    #[arg(long)]
    data: PathBuf,
    /// Thresholding variable: column name, 1-based column index, or @row.
    #[arg(long)]
    z: Option<String>,
    /// Prepend an intercept column.
    #[arg(long)]
    intercept: bool,
    /// Field delimiter (comma or tab); detected from the header when omitted.
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Args)]
struct TuningArgs {
    #[arg(long)]
    penalty: Option<PenaltyKind>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated kappa values.
    #[arg(long)]
    kappa_grid: Option<FloatList>,
    /// Number of lambda values, or a comma-separated list of values.
    #[arg(long)]
    lambda_grid: Option<LambdaGrid>,
    /// sqrt-n or sqrt-nstar.
    #[arg(long)]
    m_rule: Option<MRule>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TuningArgs {
    fn as_config(&self) -> ConfigFile {
        ConfigFile {
            penalty: self.penalty,
            gamma: self.gamma,
            kappa_grid: self.kappa_grid.clone().map(|k| k.0),
            lambda_grid: self.lambda_grid.clone(),
            m_rule: self.m_rule,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, message) = match failure {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Data(m) => (EXIT_DATA, m),
                Failure::Numerical(m) => (EXIT_NUMERICAL, m),
            };
            eprintln!("error: {}", message.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(Failure::Usage)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Fit {
            data,
            tuning,
            bootstrap_b,
            out,
        } => {
            let merged = file.overlay(tuning.as_config());
            let cfg = merged.tuning().map_err(Failure::Usage)?;
            let (ingested, digest) = load(&data, &merged, None)?;
            let fit = tsmcd(&ingested.data, &cfg)?;
            info!("selected {} thresholds", fit.s_hat);
            let mut record = FitRecord::new(
                &ingested,
                &data.data.display().to_string(),
                digest,
                fit,
                cfg.clone(),
            );
            if let Some(b) = bootstrap_b.or(merged.bootstrap_b) {
                attach_bootstrap(&mut record, &ingested, b, cfg.seed)?;
            }
            emit(out.as_deref(), &record.to_json()?)
        }
        Command::Simulate {
            example,
            reps,
            tuning,
            out,
        } => {
            let merged = file.overlay(tuning.as_config());
            let cfg = merged.tuning().map_err(Failure::Usage)?;
            let reps = reps.or(merged.reps).unwrap_or(100);
            if reps == 0 {
                return Err(Failure::Usage("--reps must be at least 1".into()));
            }
            let design = SimDesign::example(example, cfg.seed);
            let report = run_monte_carlo(&design, reps, &cfg)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            match out {
                None => emit(None, &json),
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| Failure::Data(e.to_string()))?;
                    emit(Some(&dir.join("report.json")), &json)?;
                    emit(Some(&dir.join("replications.csv")), &replication_csv(&report)?)?;
                    emit(
                        Some(&dir.join("threshold_histogram.csv")),
                        &threshold_histogram_csv(&report, 20)?,
                    )?;
                    emit(
                        Some(&dir.join("coefficient_boxplot.csv")),
                        &coefficient_boxplot_csv(&report)?,
                    )
                }
            }
        }
        Command::Bootstrap {
            fit,
            data,
            bootstrap_b,
            seed,
            out,
        } => {
            let mut record = read_record(&fit)?;
            let (ingested, digest) = load(&data, &file, Some(&record))?;
            check_digest(&record, &digest)?;
            let b = bootstrap_b.or(file.bootstrap_b).unwrap_or(200);
            let seed = seed.or(file.seed).unwrap_or(record.tuning.seed);
            attach_bootstrap(&mut record, &ingested, b, seed)?;
            emit(out.as_deref(), &record.to_json()?)
        }
        Command::BicScan { data, tuning, out } => {
            let merged = file.overlay(tuning.as_config());
            let cfg = merged.tuning().map_err(Failure::Usage)?;
            let (ingested, _) = load(&data, &merged, None)?;
            let rows = bic_scan(&ingested.data, &cfg)?;
            emit(out.as_deref(), &bic_scan_csv(&rows)?)
        }
        Command::KmCurves { fit, data, out } => {
            let record = read_record(&fit)?;
            let (ingested, digest) = load(&data, &file, Some(&record))?;
            check_digest(&record, &digest)?;
            let groups = ingested.data.split_by_thresholds(&record.fit.a_hat);
            let curves = km_curves(&ingested.data, &groups);
            emit(out.as_deref(), &km_curves_csv(&curves)?)
        }
    }
}

fn load(
    args: &DataArgs,
    file: &ConfigFile,
    record: Option<&FitRecord>,
) -> Result<(Ingested, String), Failure> {
    let z = args
        .z
        .clone()
        .or_else(|| file.z.clone())
        .or_else(|| record.map(|r| r.input.z_column.clone()))
        .ok_or_else(|| Failure::Usage("--z is required".into()))?;
    let z: ZColumn = z.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let intercept = args.intercept
        || file.intercept.unwrap_or(false)
        || record.is_some_and(|r| r.input.intercept);
    let delimiter = match args.delimiter.as_deref() {
        None => None,
        Some("comma" | ",") => Some(b','),
        Some("tab" | "\\t" | "\t") => Some(b'\t'),
        Some(other) => {
            return Err(Failure::Usage(format!(
                "unknown delimiter '{other}' (use comma or tab)"
            )))
        }
    };
    let bytes = fs::read(&args.data)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", args.data.display())))?;
    let opts = IngestOptions {
        z,
        intercept,
        delimiter,
    };
    let ingested = ingest(&args.data, &opts)?;
    Ok((ingested, sha256_hex(&bytes)))
}

fn read_record(path: &Path) -> Result<FitRecord, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    FitRecord::from_json(&text)
        .map_err(|e| Failure::Data(format!("{} is not a fit record: {e}", path.display())))
}

fn check_digest(record: &FitRecord, digest: &str) -> Result<(), Failure> {
    if record.input.sha256 != digest {
        return Err(Failure::Data(
            "data file does not match the digest stored in the fit record".into(),
        ));
    }
    Ok(())
}

fn attach_bootstrap(
    record: &mut FitRecord,
    ingested: &Ingested,
    b: usize,
    seed: u64,
) -> Result<(), Failure> {
    if b < 2 {
        return Err(Failure::Usage("--bootstrap-b must be at least 2".into()));
    }
    let fit = &record.fit;
    let spec = PenaltySpec::new(fit.penalty, fit.final_lambda, fit.gamma)?;
    let tuning: &TuningConfig = &record.tuning;
    let boot = bootstrap_se(
        &ingested.data,
        &fit.a_hat,
        &spec,
        tuning.solver_options(),
        b,
        seed,
    )?;
    record.attach_bootstrap(&boot, seed)?;
    Ok(())
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            let written = out.write_all(text.as_bytes()).and_then(|()| {
                if text.ends_with('\n') {
                    Ok(())
                } else {
                    out.write_all(b"\n")
                }
            });
            match written.and_then(|()| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(Failure::Data(format!("cannot write to stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}
