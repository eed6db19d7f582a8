//! Tab-separated dataset ingestion and result tables.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::error::{DashError, Result};
use crate::federate::Labels;
use crate::linalg::DenseMatrix;
use crate::regress::RegressionResult;
use crate::scan::ScanResult;

pub const INTERCEPT: &str = "intercept";

/// Cells treated as missing. Missing values are rejected, never imputed.
const MISSING: &[&str] = &["", "NA", "N/A", "NaN", "nan", "."];

/// Which columns of a file play which role.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    /// Sample id column; row numbers are used when absent.
    pub sample_id: Option<String>,
    pub responses: Vec<String>,
    /// `None` selects every column not otherwise assigned, in file order.
    pub features: Option<Vec<String>>,
    pub covariates: Vec<String>,
    /// Prepend a column of ones named `intercept` to the covariates.
    pub intercept: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartyDataset {
    pub sample_ids: Vec<String>,
    pub labels: Labels,
    pub responses: DenseMatrix,
    pub features: DenseMatrix,
    pub covariates: DenseMatrix,
}

impl PartyDataset {
    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<PartyDataset> {
    let file = std::fs::File::open(path).map_err(|e| DashError::io_at(path, e))?;
    parse_dataset(file, schema).map_err(|e| match e {
        DashError::EmptyFile(_) => DashError::EmptyFile(path.display().to_string()),
        other => other,
    })
}

pub fn parse_dataset(input: impl Read, schema: &Schema) -> Result<PartyDataset> {
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        DashError::Parse { line, column: String::new(), message: e.to_string() }
    };
    let header: Vec<String> = match records.next() {
        Some(r) => r.map_err(csv_err)?.iter().map(|s| s.trim().to_owned()).collect(),
        None => return Err(DashError::EmptyFile("no header row".into())),
    };
    let mut names = HashSet::new();
    for h in &header {
        if !names.insert(h.as_str()) {
            return Err(DashError::DuplicateColumn(h.clone()));
        }
    }
    let index_of =
        |name: &str| header.iter().position(|h| h == name).ok_or_else(|| DashError::UnknownColumn(name.to_owned()));

    let id_col = schema.sample_id.as_deref().map(index_of).transpose()?;
    let resp: Vec<usize> = schema.responses.iter().map(|n| index_of(n)).collect::<Result<_>>()?;
    let cov: Vec<usize> = schema.covariates.iter().map(|n| index_of(n)).collect::<Result<_>>()?;
    let feat: Vec<usize> = match &schema.features {
        Some(list) => list.iter().map(|n| index_of(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|i| Some(*i) != id_col && !resp.contains(i) && !cov.contains(i)).collect(),
    };
    let mut used = HashSet::new();
    for &i in resp.iter().chain(&cov).chain(&feat).chain(id_col.iter()) {
        if !used.insert(i) {
            return Err(DashError::DuplicateColumn(header[i].clone()));
        }
    }
    if schema.intercept && header.iter().any(|h| h == INTERCEPT) && cov.iter().any(|&i| header[i] == INTERCEPT) {
        return Err(DashError::DuplicateColumn(INTERCEPT.into()));
    }

    let numeric: Vec<usize> = resp.iter().chain(&feat).chain(&cov).copied().collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); numeric.len()];
    let mut sample_ids = Vec::new();
    for (row, rec) in records.enumerate() {
        let line = row + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(DashError::Parse {
                line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        sample_ids.push(match id_col {
            Some(i) => rec[i].trim().to_owned(),
            None => (row + 1).to_string(),
        });
        for (dst, &i) in columns.iter_mut().zip(&numeric) {
            let cell = rec[i].trim();
            if MISSING.contains(&cell) {
                return Err(DashError::MissingValue { line, column: header[i].clone() });
            }
            let v: f64 = cell.parse().map_err(|_| DashError::Parse {
                line,
                column: header[i].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DashError::Parse {
                    line,
                    column: header[i].clone(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            dst.push(v);
        }
    }
    if sample_ids.is_empty() {
        return Err(DashError::EmptyFile("no data rows".into()));
    }
    let n = sample_ids.len();
    let mut it = columns.into_iter();
    let responses: Vec<Vec<f64>> = it.by_ref().take(resp.len()).collect();
    let features: Vec<Vec<f64>> = it.by_ref().take(feat.len()).collect();
    let mut covariates: Vec<Vec<f64>> = it.collect();
    let names = |idx: &[usize]| idx.iter().map(|&i| header[i].clone()).collect::<Vec<_>>();
    let mut covariate_names = names(&cov);
    if schema.intercept {
        covariates.insert(0, vec![1.0; n]);
        covariate_names.insert(0, INTERCEPT.to_owned());
    }
    Ok(PartyDataset {
        sample_ids,
        labels: Labels { responses: names(&resp), features: names(&feat), covariates: covariate_names },
        responses: DenseMatrix::from_columns(n, &responses)?,
        features: DenseMatrix::from_columns(n, &features)?,
        covariates: DenseMatrix::from_columns(n, &covariates)?,
    })
}

/// Writes a dataset back as TSV (`sample_id`, responses, features,
/// covariates) using shortest round-trip float formatting.
pub fn dataset_to_tsv(d: &PartyDataset) -> String {
    let mut s = String::from("sample_id");
    let l = &d.labels;
    for name in l.responses.iter().chain(&l.features).chain(&l.covariates) {
        s.push('\t');
        s.push_str(name);
    }
    s.push('\n');
    for (i, id) in d.sample_ids.iter().enumerate() {
        s.push_str(id);
        for m in [&d.responses, &d.features, &d.covariates] {
            for c in 0..m.cols() {
                let _ = write!(s, "\t{}", m.get(i, c));
            }
        }
        s.push('\n');
    }
    s
}

/// Fixed 17-significant-digit formatting so output is byte-reproducible and
/// parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

pub const SCAN_HEADER: &str = "feature\tresponse\tbeta\tse\tt\tp\tdf\tvalid";

/// One row per (feature, response), features outermost.
pub fn scan_to_tsv(result: &ScanResult, labels: &Labels) -> String {
    let mut s = String::with_capacity(64 + result.beta.len() * 120);
    s.push_str(SCAN_HEADER);
    s.push('\n');
    for m in 0..result.n_features {
        for t in 0..result.n_responses {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                labels.features[m],
                labels.responses[t],
                format_f64(result.beta(m, t)),
                format_f64(result.se(m, t)),
                format_f64(result.t_stat(m, t)),
                format_f64(result.p_value(m, t)),
                result.df,
                result.is_valid(m, t),
            );
        }
    }
    s
}

/// A parsed row of [`scan_to_tsv`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub feature: String,
    pub response: String,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub df: u64,
    pub valid: bool,
}

pub fn parse_scan_tsv(text: &str) -> Result<Vec<ScanRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCAN_HEADER) {
        return Err(DashError::Parse { line: 1, column: String::new(), message: "unexpected header".into() });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |column: &str| DashError::Parse {
                line: i + 2,
                column: column.into(),
                message: "malformed value".into(),
            };
            if f.len() != 8 {
                return Err(bad(""));
            }
            let num = |j: usize, c: &str| f[j].parse::<f64>().map_err(|_| bad(c));
            Ok(ScanRow {
                feature: f[0].into(),
                response: f[1].into(),
                beta: num(2, "beta")?,
                se: num(3, "se")?,
                t: num(4, "t")?,
                p: num(5, "p")?,
                df: f[6].parse().map_err(|_| bad("df"))?,
                valid: f[7].parse().map_err(|_| bad("valid"))?,
            })
        })
        .collect()
}

pub const REGRESSION_HEADER: &str = "covariate\testimate\tse\tt\tp\tdf";

/// Coefficient table; `τ̂²` is reported on a leading `#` line.
pub fn regression_to_tsv(result: &RegressionResult, names: &[String]) -> String {
    let mut s = format!("# tau2_hat={}\n{REGRESSION_HEADER}\n", format_f64(result.tau2_hat));
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            format_f64(result.gamma_hat[j]),
            format_f64(result.se[j]),
            format_f64(result.t_stats[j]),
            format_f64(result.p_values[j]),
            result.df
        );
    }
    s
}
