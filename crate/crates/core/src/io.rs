//! Dataset ingestion, result documents and plot-data tables.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{quantile, BootstrapResult};
use crate::censored::response_order;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::refining::ThresholdFit;
use crate::selection::{ScanRow, TuningConfig};
use crate::simulation::SimulationReport;

pub const SOFTWARE: &str = "tsmcd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Column bound to the thresholding variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZColumn {
    Name(String),
    /// 1-based position in the header.
    Index(usize),
    /// The observation index `1..=n` (the `@row` spelling).
    Row,
}

impl FromStr for ZColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidDataset("empty z column".into()));
        }
        if s == "@row" {
            return Ok(ZColumn::Row);
        }
        match s.parse::<usize>() {
            Ok(0) => Err(Error::InvalidDataset("column indices start at 1".into())),
            Ok(k) => Ok(ZColumn::Index(k)),
            Err(_) => Ok(ZColumn::Name(s.to_string())),
        }
    }
}

impl fmt::Display for ZColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZColumn::Name(name) => f.write_str(name),
            ZColumn::Index(k) => write!(f, "{k}"),
            ZColumn::Row => f.write_str("@row"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub z: ZColumn,
    /// Prepend a column of ones named `intercept`.
    pub intercept: bool,
    /// Field delimiter; detected from the header line (tab or comma) when unset.
    pub delimiter: Option<u8>,
}

/// A dataset together with the names of its regressor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: SurvivalDataset,
    pub regressors: Vec<String>,
    /// Header name of the z column, or `@row`.
    pub z_name: String,
    pub intercept: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

pub fn ingest(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Ingested> {
    let text = fs::read_to_string(path)?;
    ingest_str(&text, opts)
}

/// Parses delimited text with a header row containing `y` and `delta`.
/// Every other column is a regressor.
pub fn ingest_str(text: &str, opts: &IngestOptions) -> Result<Ingested> {
    let first = text.lines().next().unwrap_or("");
    let delimiter = opts
        .delimiter
        .unwrap_or(if first.contains('\t') { b'\t' } else { b',' });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for (k, name) in header.iter().enumerate() {
        if name.is_empty() {
            return Err(parse_error(1, format!("column {} has an empty name", k + 1)));
        }
        if header[..k].contains(name) {
            return Err(parse_error(1, format!("duplicate column name '{name}'")));
        }
    }
    let find = |want: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(want))
            .ok_or_else(|| parse_error(1, format!("missing required column '{want}'")))
    };
    let y_col = find("y")?;
    let delta_col = find("delta")?;
    let regressor_cols: Vec<usize> = (0..header.len())
        .filter(|&k| k != y_col && k != delta_col)
        .collect();
    let z_col = match &opts.z {
        ZColumn::Row => None,
        ZColumn::Name(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_error(1, format!("no column named '{name}'")))?,
        ),
        ZColumn::Index(k) => {
            if *k > header.len() {
                return Err(parse_error(
                    1,
                    format!("z column {k} exceeds the {} header columns", header.len()),
                ));
            }
            Some(k - 1)
        }
    };
    if let Some(z) = z_col {
        if z == y_col || z == delta_col {
            return Err(parse_error(1, "z cannot be the y or delta column"));
        }
    }

    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut z = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let field = |k: usize| -> Result<f64> {
            let raw = &record[k];
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(parse_error(line, format!("missing value in column '{}'", header[k])));
            }
            let v: f64 = raw.parse().map_err(|_| {
                parse_error(line, format!("'{raw}' in column '{}' is not a number", header[k]))
            })?;
            if !v.is_finite() {
                return Err(parse_error(line, format!("non-finite value in column '{}'", header[k])));
            }
            Ok(v)
        };
        y.push(field(y_col)?);
        let d = field(delta_col)?;
        if d != 0.0 && d != 1.0 {
            return Err(parse_error(line, format!("delta must be 0 or 1, found {}", &record[delta_col])));
        }
        delta.push(d == 1.0);
        let row: Vec<f64> = regressor_cols.iter().map(|&k| field(k)).collect::<Result<_>>()?;
        z.push(match z_col {
            Some(k) => field(k)?,
            None => (y.len()) as f64,
        });
        rows.push(row);
    }
    if y.is_empty() {
        return Err(Error::InvalidDataset("no data rows".into()));
    }
    if !delta.iter().any(|&d| d) {
        return Err(Error::InvalidDataset("every observation is censored".into()));
    }

    let n = y.len();
    let offset = usize::from(opts.intercept);
    let p = regressor_cols.len() + offset;
    if p == 0 {
        return Err(Error::InvalidDataset("no regressor columns".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, c| {
        if c < offset {
            1.0
        } else {
            rows[i][c - offset]
        }
    });
    let mut regressors: Vec<String> = Vec::with_capacity(p);
    if opts.intercept {
        regressors.push("intercept".into());
    }
    regressors.extend(regressor_cols.iter().map(|&k| header[k].clone()));
    let z_name = match z_col {
        Some(k) => header[k].clone(),
        None => "@row".into(),
    };
    Ok(Ingested {
        data: SurvivalDataset::new(y, delta, x, z)?,
        regressors,
        z_name,
        intercept: opts.intercept,
    })
}

impl Ingested {
    /// Writes the file this dataset was read from: `y`, `delta`, then the
    /// regressor columns (without a prepended intercept).
    pub fn to_csv(&self) -> Result<String> {
        let offset = usize::from(self.intercept);
        let data = &self.data;
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["y".to_string(), "delta".to_string()];
        header.extend(self.regressors[offset..].iter().cloned());
        writer.write_record(&header).map_err(csv_error)?;
        for i in 0..data.n() {
            let mut row = vec![
                data.y()[i].to_string(),
                u8::from(data.delta()[i]).to_string(),
            ];
            row.extend((offset..data.p()).map(|c| data.x()[(i, c)].to_string()));
            writer.write_record(&row).map_err(csv_error)?;
        }
        finish(writer)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    pub n_events: usize,
    pub z_column: String,
    pub intercept: bool,
}

/// One coefficient of one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    /// 1-based subgroup number.
    pub subgroup: usize,
    /// Subgroup z-range `(lower, upper]`; `None` marks an unbounded side.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub b_requested: usize,
    pub b_used: usize,
    pub skipped: usize,
    pub seed: u64,
}

/// Result document of a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub software: String,
    pub version: String,
    pub input: InputInfo,
    pub fit: ThresholdFit,
    pub coefficients: Vec<CoefficientRow>,
    pub tuning: TuningConfig,
    pub bootstrap: Option<BootstrapInfo>,
}

impl FitRecord {
    pub fn new(
        ingested: &Ingested,
        path: &str,
        digest: String,
        fit: ThresholdFit,
        tuning: TuningConfig,
    ) -> Self {
        let data = &ingested.data;
        let mut coefficients = Vec::new();
        let bounds: Vec<f64> = std::iter::once(f64::NEG_INFINITY)
            .chain(fit.a_hat.iter().copied())
            .chain(std::iter::once(f64::INFINITY))
            .collect();
        for (j, beta) in fit.beta_by_group.iter().enumerate() {
            for (c, &estimate) in beta.iter().enumerate() {
                coefficients.push(CoefficientRow {
                    subgroup: j + 1,
                    lower: Some(bounds[j]).filter(|v| v.is_finite()),
                    upper: Some(bounds[j + 1]).filter(|v| v.is_finite()),
                    name: ingested.regressors[c].clone(),
                    estimate,
                    se: None,
                    ci_low: None,
                    ci_high: None,
                    p_value: None,
                });
            }
        }
        Self {
            software: SOFTWARE.into(),
            version: VERSION.into(),
            input: InputInfo {
                path: path.into(),
                sha256: digest,
                n: data.n(),
                p: data.p(),
                n_events: data.n_events(),
                z_column: ingested.z_name.clone(),
                intercept: ingested.intercept,
            },
            fit,
            coefficients,
            tuning,
            bootstrap: None,
        }
    }

    /// Fills the SE, interval and p-value columns from per-subgroup bootstrap summaries.
    pub fn attach_bootstrap(&mut self, boot: &BootstrapResult, seed: u64) -> Result<()> {
        let p = self.fit.p;
        if boot.by_group.len() != self.fit.beta_by_group.len() {
            return Err(Error::InvalidThresholds(format!(
                "bootstrap has {} subgroups, fit has {}",
                boot.by_group.len(),
                self.fit.beta_by_group.len()
            )));
        }
        // rows are stored subgroup by subgroup, p per subgroup
        for (k, row) in self.coefficients.iter_mut().enumerate() {
            let s = &boot.by_group[k / p][k % p];
            row.se = Some(s.se);
            row.ci_low = Some(s.ci_low);
            row.ci_high = Some(s.ci_high);
            row.p_value = Some(s.wald_p);
        }
        self.bootstrap = Some(BootstrapInfo {
            b_requested: boot.b_requested,
            b_used: boot.b_used,
            skipped: boot.skipped,
            seed,
        });
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Product-limit survival curve of one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// 1-based subgroup number.
    pub group: usize,
    /// `(time, survival)` after each distinct event time.
    pub steps: Vec<(f64, f64)>,
    /// `(time, survival)` at each censored observation.
    pub censor_ticks: Vec<(f64, f64)>,
}

/// Kaplan-Meier curves for the given index sets; empty sets are skipped.
pub fn km_curves(data: &SurvivalDataset, groups: &[Vec<usize>]) -> Vec<KmCurve> {
    let mut out = Vec::new();
    for (g, idx) in groups.iter().enumerate() {
        if idx.is_empty() {
            warn!("subgroup {} is empty; no survival curve emitted", g + 1);
            continue;
        }
        let order = response_order(data, idx);
        let mut at_risk = order.len() as f64;
        let mut surv = 1.0;
        let mut steps = Vec::new();
        let mut censor_ticks = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let t = data.y()[order[k]];
            let mut events = 0.0;
            let mut censored = 0.0;
            while k < order.len() && data.y()[order[k]] == t {
                if data.delta()[order[k]] {
                    events += 1.0;
                } else {
                    censored += 1.0;
                }
                k += 1;
            }
            if events > 0.0 {
                surv *= 1.0 - events / at_risk;
                steps.push((t, surv));
            }
            for _ in 0..censored as usize {
                censor_ticks.push((t, surv));
            }
            at_risk -= events + censored;
        }
        out.push(KmCurve {
            group: g + 1,
            steps,
            censor_ticks,
        });
    }
    out
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bic_scan_csv(rows: &[ScanRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kappa", "m", "lambda", "s_hat", "thresholds", "bic"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.kappa.to_string(),
            r.m.to_string(),
            r.lambda.to_string(),
            r.s_hat.to_string(),
            join(&r.thresholds),
            r.bic.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// Long format: one row per curve point, `kind` is `start`, `event` or `censor`.
pub fn km_curves_csv(curves: &[KmCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "kind", "time", "survival"])
        .map_err(csv_error)?;
    for c in curves {
        let first = c
            .steps
            .iter()
            .chain(&c.censor_ticks)
            .map(|s| s.0)
            .fold(f64::INFINITY, f64::min);
        let g = c.group.to_string();
        w.write_record([g.as_str(), "start", &first.to_string(), "1"])
            .map_err(csv_error)?;
        for (kind, points) in [("event", &c.steps), ("censor", &c.censor_ticks)] {
            for (t, s) in points.iter() {
                w.write_record([g.as_str(), kind, &t.to_string(), &s.to_string()])
                    .map_err(csv_error)?;
            }
        }
    }
    finish(w)
}

/// One row per replication; `a_hat` and `theta` are `;`-separated.
pub fn replication_csv(report: &SimulationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replication",
        "seed",
        "censor_rate",
        "s_hat",
        "a_hat",
        "bic",
        "m",
        "lambda",
        "theta",
        "error",
    ])
    .map_err(csv_error)?;
    for r in &report.records {
        w.write_record([
            r.replication.to_string(),
            r.seed.to_string(),
            r.censor_rate.to_string(),
            opt(r.s_hat),
            join(&r.a_hat),
            opt(r.bic),
            opt(r.m_used),
            opt(r.lambda_used),
            join(&r.theta_star),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// Histogram of each estimated threshold over replications with the true
/// number of thresholds: `bins` equal-width bins spanning the observed range.
pub fn threshold_histogram_csv(report: &SimulationReport, bins: usize) -> Result<String> {
    let bins = bins.max(1);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "bin_low", "bin_high", "count"])
        .map_err(csv_error)?;
    for j in 0..report.design.true_s() {
        let values: Vec<f64> = report.correct_records().map(|r| r.a_hat[j]).collect();
        if values.is_empty() {
            continue;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in &values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        for (k, count) in counts.iter().enumerate() {
            let a = lo + k as f64 * width;
            w.write_record([
                (j + 1).to_string(),
                a.to_string(),
                (a + width).to_string(),
                count.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    finish(w)
}

/// Five-number summary of each stacked coefficient over replications with
/// the true number of thresholds.
pub fn coefficient_boxplot_csv(report: &SimulationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coefficient", "truth", "n", "min", "q1", "median", "q3", "max"])
        .map_err(csv_error)?;
    for (k, truth) in report.design.theta_true.iter().enumerate() {
        let mut values: Vec<f64> = report.correct_records().map(|r| r.theta_star[k]).collect();
        if values.is_empty() {
            continue;
        }
        values.sort_by(f64::total_cmp);
        w.write_record([
            (k + 1).to_string(),
            truth.to_string(),
            values.len().to_string(),
            values[0].to_string(),
            quantile(&values, 0.25).to_string(),
            quantile(&values, 0.5).to_string(),
            quantile(&values, 0.75).to_string(),
            values[values.len() - 1].to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}
