//! Inference reports from snapshots, and their CSV / JSON serialization.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Snapshot;
use crate::error::{Error, Result};
use crate::inference::{critical_value, wald_report};
use crate::types::{parameter_names, InferenceReport, ReportRow};

pub const VALUE_ROW: &str = "V_opt";
pub const AIPW_ROW: &str = "V_opt_aipw";

pub const REPORT_COLUMNS: [&str; 7] = [
    "name", "estimate", "se", "ci_lo", "ci_hi", "t_value", "p_value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!(
                "unknown output format {other:?} (expected csv or json)"
            ))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub level: f64,
    pub ridge: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            level: 0.95,
            ridge: false,
        }
    }
}

/// Wald rows for every parameter followed by the value row. A singular
/// Hessian leaves the parameter statistics empty and adds a flag.
pub fn build_report(snapshot: &Snapshot, opts: &ReportOptions) -> Result<InferenceReport> {
    let p = snapshot.bar_beta.len() / 2;
    let names = parameter_names(p);
    let mut flags = Vec::new();
    let sandwich = if opts.ridge {
        snapshot.plugin.sandwich_covariance_ridged()
    } else {
        snapshot.plugin.sandwich_covariance()
    };
    let mut rows = match sandwich {
        Ok(sw) => {
            if let Some(lambda) = sw.ridge {
                flags.push(format!("ridge_applied:{lambda:e}"));
            }
            wald_report(&names, &snapshot.bar_beta, &sw.cov, opts.level, None)?
        }
        Err(Error::Singular { condition }) => {
            flags.push(format!("singular_hessian:{condition:e}"));
            names
                .iter()
                .zip(snapshot.bar_beta.iter())
                .map(|(n, &b)| ReportRow::estimate_only(n.clone(), b))
                .collect()
        }
        Err(e) => return Err(e),
    };

    let z = critical_value(opts.level)?;
    let v = snapshot.value.estimate()?;
    let var = snapshot.value.variance(snapshot.eps)?;
    if var.clamped {
        flags.push("value_variance_clamped".into());
    }
    let se = (var.variance / snapshot.value.t() as f64).sqrt();
    if se == 0.0 {
        flags.push("value_se_zero".into());
    }
    rows.push(interval_row(VALUE_ROW, v, se, z));

    if let Ok(a) = snapshot.value.aipw_estimate() {
        let avar = snapshot.value.aipw_variance()?;
        if avar.clamped {
            flags.push("aipw_variance_clamped".into());
        }
        flags.push("aipw_experimental".into());
        rows.push(interval_row(
            AIPW_ROW,
            a,
            snapshot.value.aipw_standard_error()?,
            z,
        ));
    }
    Ok(InferenceReport {
        t: snapshot.t,
        rows,
        flags,
    })
}

fn interval_row(name: &str, estimate: f64, se: f64, z: f64) -> ReportRow {
    ReportRow {
        name: name.into(),
        estimate,
        se: Some(se),
        ci_lo: Some(estimate - z * se),
        ci_hi: Some(estimate + z * se),
        t_value: None,
        p_value: None,
    }
}

/// Rounds to six significant digits and prints the shortest exact form.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if rounded == 0.0 || (1e-4..1e15).contains(&mag) {
        rounded.to_string()
    } else {
        format!("{rounded:e}")
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

pub fn write_report_csv<W: Write>(report: &InferenceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
    w.write_record(REPORT_COLUMNS).map_err(err)?;
    for r in &report.rows {
        w.write_record([
            r.name.clone(),
            sig6(r.estimate),
            opt_cell(r.se),
            opt_cell(r.ci_lo),
            opt_cell(r.ci_hi),
            opt_cell(r.t_value),
            opt_cell(r.p_value),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("report", e))
}

/// Reads back a report written by [`write_report_csv`].
pub fn read_report_csv(input: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(input.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let cell = |k: usize| -> Result<Option<f64>> {
            let s = rec.get(k).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("{}: not a number: {s:?}", REPORT_COLUMNS[k]),
            })
        };
        rows.push(ReportRow {
            name: rec.get(0).unwrap_or("").to_string(),
            estimate: cell(1)?.ok_or_else(|| Error::Parse {
                line,
                message: "missing estimate".into(),
            })?,
            se: cell(2)?,
            ci_lo: cell(3)?,
            ci_hi: cell(4)?,
            t_value: cell(5)?,
            p_value: cell(6)?,
        });
    }
    Ok(rows)
}

/// Creates `dir` and any missing parents.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::Numeric(format!("json: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes reports under `dir`: CSV gives one `report_t<t>.csv` per report;
/// JSON gives a single `report.json` holding all of them. Returns the paths
/// written.
pub fn emit_reports(
    reports: &[InferenceReport],
    format: OutputFormat,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    ensure_dir(dir)?;
    match format {
        OutputFormat::Csv => reports
            .iter()
            .map(|r| {
                let path = dir.join(format!("report_t{}.csv", r.t));
                let mut buf = Vec::new();
                write_report_csv(r, &mut buf)?;
                write_file(&path, &buf)?;
                Ok(path)
            })
            .collect(),
        OutputFormat::Json => {
            let path = dir.join("report.json");
            write_file(&path, &to_json(&reports)?)?;
            Ok(vec![path])
        }
    }
}
