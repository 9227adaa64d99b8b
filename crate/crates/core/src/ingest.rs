//! FRED-MD / FRED-QD style panel ingestion.
//!
//! File layout: a header row (`sasdate,NAME1,NAME2,...`), a row holding one
//! transformation code per series (labelled `Transform:` in the public
//! files), then one row per period. Blank cells are missing values.
//!
//! Transformation codes:
//!
//! | code | transformation          | leading values lost |
//! |------|-------------------------|---------------------|
//! | 1    | `x_t`                   | 0 |
//! | 2    | `Δx_t`                  | 1 |
//! | 3    | `Δ²x_t`                 | 2 |
//! | 4    | `ln x_t`                | 0 |
//! | 5    | `Δ ln x_t`              | 1 |
//! | 6    | `Δ² ln x_t`             | 2 |
//! | 7    | `Δ(x_t / x_{t-1} - 1)`  | 2 |
//!
//! Missing values are stored as `NaN` inside the value matrix and surfaced as
//! `Option<f64>` by the accessors.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, median, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl Frequency {
    fn months(self) -> i32 {
        match self {
            Frequency::Monthly => 1,
            Frequency::Quarterly => 3,
        }
    }
}

/// A calendar month. Quarterly data is labelled by the first month of the
/// quarter, as in the public files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub year: i32,
    pub month: u32,
}

impl Period {
    pub fn new(year: i32, month: u32) -> Self {
        Period { year, month }
    }

    fn index(self) -> i32 {
        self.year * 12 + self.month as i32 - 1
    }

    /// Parses `m/d/yyyy`, `yyyy-mm-dd`, `yyyy-mm` and `yyyy:Qn`.
    pub fn parse(s: &str) -> Option<Period> {
        let s = s.trim();
        if let Some((y, q)) = s.split_once(":Q").or_else(|| s.split_once('Q')) {
            let year: i32 = y.trim_end_matches(':').parse().ok()?;
            let q: u32 = q.parse().ok()?;
            return (1..=4).contains(&q).then(|| Period::new(year, 3 * q - 2));
        }
        if s.contains('/') {
            let parts: Vec<&str> = s.split('/').collect();
            if parts.len() != 3 {
                return None;
            }
            let month: u32 = parts[0].parse().ok()?;
            let year: i32 = parts[2].parse().ok()?;
            return (1..=12).contains(&month).then(|| Period::new(year, month));
        }
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() < 2 || parts[0].len() != 4 {
            return None;
        }
        let year: i32 = parts[0].parse().ok()?;
        let month: u32 = parts[1].parse().ok()?;
        (1..=12).contains(&month).then(|| Period::new(year, month))
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// A dated panel with per-series transformation codes and missing values.
#[derive(Debug, Clone)]
pub struct RawPanel {
    /// Original period labels.
    pub dates: Vec<String>,
    pub periods: Vec<Period>,
    pub names: Vec<String>,
    pub tcodes: Vec<u8>,
    /// T×N, `NaN` marks a missing value.
    pub values: DMatrix<f64>,
    pub frequency: Frequency,
    /// Whether the transformation codes have already been applied.
    pub transformed: bool,
}

impl RawPanel {
    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        let v = self.values[(t, j)];
        (!v.is_nan()).then_some(v)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.n_periods()).map(|t| self.get(t, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> RawPanel {
        let mut values = DMatrix::zeros(self.n_periods(), keep.len());
        for (dst, &src) in keep.iter().enumerate() {
            values.set_column(dst, &self.values.column(src));
        }
        RawPanel {
            dates: self.dates.clone(),
            periods: self.periods.clone(),
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            tcodes: keep.iter().map(|&j| self.tcodes[j]).collect(),
            values,
            frequency: self.frequency,
            transformed: self.transformed,
        }
    }

    /// Drops the first `n` periods.
    pub fn drop_leading(&self, n: usize) -> RawPanel {
        let n = n.min(self.n_periods());
        RawPanel {
            dates: self.dates[n..].to_vec(),
            periods: self.periods[n..].to_vec(),
            names: self.names.clone(),
            tcodes: self.tcodes.clone(),
            values: self.values.rows(n, self.n_periods() - n).into_owned(),
            frequency: self.frequency,
            transformed: self.transformed,
        }
    }

    /// Drops the last `n` periods.
    pub fn drop_trailing(&self, n: usize) -> RawPanel {
        let keep = self.n_periods().saturating_sub(n);
        RawPanel {
            dates: self.dates[..keep].to_vec(),
            periods: self.periods[..keep].to_vec(),
            names: self.names.clone(),
            tcodes: self.tcodes.clone(),
            values: self.values.rows(0, keep).into_owned(),
            frequency: self.frequency,
            transformed: self.transformed,
        }
    }

    /// Serializes back to the FRED layout (header, `Transform:` row, data).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sasdate".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut codes = vec!["Transform:".to_string()];
        codes.extend(self.tcodes.iter().map(|c| c.to_string()));
        w.write_record(&codes)?;
        for t in 0..self.n_periods() {
            let mut row = vec![self.dates[t].clone()];
            row.extend((0..self.n_series()).map(|j| match self.get(t, j) {
                Some(v) => format!("{v}"),
                None => String::new(),
            }));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn parse_tcode(cell: &str) -> Option<std::result::Result<u8, i64>> {
    let v: f64 = cell.trim().parse().ok()?;
    if v.fract() != 0.0 {
        return None;
    }
    let code = v as i64;
    Some(if (1..=7).contains(&code) {
        Ok(code as u8)
    } else {
        Err(code)
    })
}

fn parse_value(cell: &str, row: usize) -> Result<f64> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    c.parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("`{c}` is not a number"),
    })
}

/// Parses a FRED-style CSV. See [`parse_fred_csv_with_warnings`].
pub fn parse_fred_csv(bytes: &[u8]) -> Result<RawPanel> {
    parse_fred_csv_with_warnings(bytes).map(|(p, _)| p)
}

/// Parses a FRED-style CSV and returns any warnings raised on the way.
///
/// Non-date rows between the header and the first dated row are metadata.
/// The one labelled `transform...` holds the codes; failing that, the first
/// metadata row made only of integers is used and a warning is emitted.
/// Row numbers in errors are 1-based line numbers of the file.
pub fn parse_fred_csv_with_warnings(bytes: &[u8]) -> Result<(RawPanel, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut warnings = Vec::new();
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(Error::Parse {
                row: 1,
                message: "empty file".into(),
            })
        }
    };
    let width = header.len();
    if width < 2 {
        return Err(Error::Parse {
            row: 1,
            message: "header needs a date column and at least one series".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = names.len();

    let mut labelled_codes: Option<Vec<u8>> = None;
    let mut fallback_codes: Option<(usize, Vec<u8>)> = None;
    let mut dates = Vec::new();
    let mut periods = Vec::new();
    let mut data: Vec<f64> = Vec::new();

    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                row: line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let label = rec[0].trim();
        if let Some(period) = Period::parse(label) {
            dates.push(label.to_string());
            periods.push(period);
            for cell in rec.iter().skip(1) {
                data.push(parse_value(cell, line)?);
            }
            continue;
        }
        if !dates.is_empty() {
            return Err(Error::Parse {
                row: line,
                message: format!("`{label}` is not a date"),
            });
        }
        let parsed: Option<Vec<_>> = rec.iter().skip(1).map(parse_tcode).collect();
        let is_transform = label.to_ascii_lowercase().starts_with("transform");
        match parsed {
            Some(codes) => {
                let codes: std::result::Result<Vec<u8>, i64> = codes.into_iter().collect();
                if is_transform {
                    labelled_codes = Some(codes.map_err(Error::InvalidTcode)?);
                } else if fallback_codes.is_none() {
                    if let Ok(c) = codes {
                        fallback_codes = Some((line, c));
                    }
                }
            }
            None if is_transform => {
                return Err(Error::Parse {
                    row: line,
                    message: "transformation codes must be integers".into(),
                })
            }
            None => {
                return Err(Error::Parse {
                    row: line,
                    message: format!("unrecognized metadata row `{label}`"),
                })
            }
        }
    }

    let tcodes = match (labelled_codes, fallback_codes) {
        (Some(c), _) => c,
        (None, Some((line, c))) => {
            let msg = format!("no row labelled `Transform:`; using integer row at line {line} as transformation codes");
            log::warn!("{msg}");
            warnings.push(msg);
            c
        }
        (None, None) => {
            return Err(Error::Parse {
                row: 2,
                message: "missing transformation-code row".into(),
            })
        }
    };
    if dates.is_empty() {
        return Err(Error::Parse {
            row: 3,
            message: "no dated rows".into(),
        });
    }
    let frequency = infer_frequency(&periods)?;
    let t = dates.len();
    let values = DMatrix::from_row_slice(t, n, &data);
    Ok((
        RawPanel {
            dates,
            periods,
            names,
            tcodes,
            values,
            frequency,
            transformed: false,
        },
        warnings,
    ))
}

fn infer_frequency(periods: &[Period]) -> Result<Frequency> {
    if periods.len() < 2 {
        return Ok(Frequency::Monthly);
    }
    let step = periods[1].index() - periods[0].index();
    let freq = match step {
        1 => Frequency::Monthly,
        3 => Frequency::Quarterly,
        _ => {
            return Err(Error::Parse {
                row: 4,
                message: format!("unsupported spacing of {step} months between periods"),
            })
        }
    };
    for (i, w) in periods.windows(2).enumerate() {
        if w[1].index() - w[0].index() != freq.months() {
            return Err(Error::Parse {
                row: i + 4,
                message: format!("dates not uniformly spaced at {}", w[1]),
            });
        }
    }
    Ok(freq)
}

/// Number of leading observations consumed by a transformation code.
pub fn tcode_lead(code: u8) -> usize {
    match code {
        2 | 5 => 1,
        3 | 6 | 7 => 2,
        _ => 0,
    }
}

/// A non-positive value met under a log transformation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcodeDomainError {
    pub index: usize,
    pub value: f64,
    pub code: u8,
}

/// Applies one of the seven FRED transformation codes.
pub fn apply_tcode(series: &[Option<f64>], code: u8) -> std::result::Result<Vec<Option<f64>>, TcodeDomainError> {
    assert!((1..=7).contains(&code), "tcode {code} outside 1..=7");
    let logged = || -> std::result::Result<Vec<Option<f64>>, TcodeDomainError> {
        series
            .iter()
            .enumerate()
            .map(|(index, v)| match *v {
                Some(x) if x <= 0.0 => Err(TcodeDomainError { index, value: x, code }),
                Some(x) => Ok(Some(x.ln())),
                None => Ok(None),
            })
            .collect()
    };
    let diff = |s: &[Option<f64>]| -> Vec<Option<f64>> {
        let mut out = vec![None; s.len()];
        for t in 1..s.len() {
            if let (Some(a), Some(b)) = (s[t], s[t - 1]) {
                out[t] = Some(a - b);
            }
        }
        out
    };
    Ok(match code {
        1 => series.to_vec(),
        2 => diff(series),
        3 => diff(&diff(series)),
        4 => logged()?,
        5 => diff(&logged()?),
        6 => diff(&diff(&logged()?)),
        7 => {
            let mut growth = vec![None; series.len()];
            for t in 1..series.len() {
                if let (Some(a), Some(b)) = (series[t], series[t - 1]) {
                    growth[t] = Some(a / b - 1.0);
                }
            }
            diff(&growth)
        }
        _ => unreachable!(),
    })
}

/// Applies every series' transformation code.
pub fn transform(panel: &RawPanel) -> Result<RawPanel> {
    if panel.transformed {
        return Ok(panel.clone());
    }
    let mut out = panel.clone();
    for j in 0..panel.n_series() {
        let col = apply_tcode(&panel.column(j), panel.tcodes[j]).map_err(|e| Error::Domain {
            series: panel.names[j].clone(),
            date: panel.dates[e.index].clone(),
            value: e.value,
            code: e.code,
        })?;
        for (t, v) in col.into_iter().enumerate() {
            out.values[(t, j)] = v.unwrap_or(f64::NAN);
        }
    }
    out.transformed = true;
    Ok(out)
}

/// Fraction of missing observations in column `j`, ignoring the leading
/// positions consumed by differencing when the panel is transformed.
pub fn missing_fraction(panel: &RawPanel, j: usize) -> f64 {
    let lead = if panel.transformed {
        tcode_lead(panel.tcodes[j])
    } else {
        0
    };
    let t = panel.n_periods();
    if t <= lead {
        return 1.0;
    }
    let missing = (lead..t).filter(|&i| panel.values[(i, j)].is_nan()).count();
    missing as f64 / (t - lead) as f64
}

/// Result of the missing-data filter.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub panel: RawPanel,
    pub dropped: Vec<String>,
}

/// Drops every series whose missing fraction exceeds `max_frac`.
pub fn filter_missing(panel: &RawPanel, max_frac: f64) -> Result<Filtered> {
    if !(0.0..=1.0).contains(&max_frac) {
        return Err(Error::InvalidArgument(format!("max_frac {max_frac} outside [0, 1]")));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..panel.n_series() {
        if missing_fraction(panel, j) > max_frac {
            dropped.push(panel.names[j].clone());
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok(Filtered {
        panel: panel.select_columns(&keep),
        dropped,
    })
}

/// A complete numeric panel: no missing entries.
#[derive(Debug, Clone)]
pub struct Panel {
    pub dates: Vec<String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    pub frequency: Frequency,
}

impl Panel {
    pub fn new(dates: Vec<String>, names: Vec<String>, values: DMatrix<f64>, frequency: Frequency) -> Result<Self> {
        if values.ncols() != names.len() || values.nrows() != dates.len() {
            return Err(Error::Dimension(format!(
                "{}×{} values for {} dates and {} names",
                values.nrows(),
                values.ncols(),
                dates.len(),
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("panel values must be finite".into()));
        }
        Ok(Panel {
            dates,
            names,
            values,
            frequency,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// A transformed [`RawPanel`] view (all codes 1) of a complete panel.
    pub fn to_raw(&self) -> Result<RawPanel> {
        let periods = self
            .dates
            .iter()
            .map(|d| Period::parse(d).ok_or_else(|| Error::InvalidArgument(format!("unparseable date {d}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(RawPanel {
            dates: self.dates.clone(),
            periods,
            names: self.names.clone(),
            tcodes: vec![1; self.names.len()],
            values: self.values.clone(),
            frequency: self.frequency,
            transformed: true,
        })
    }
}

impl RawPanel {
    /// Complete panel with each missing entry replaced by its column's
    /// full-sample median. Leading rows that are missing in every column
    /// should be dropped first.
    pub fn median_imputed(&self) -> Result<Panel> {
        let mut values = self.values.clone();
        for j in 0..values.ncols() {
            let observed: Vec<f64> = values.column(j).iter().cloned().filter(|v| !v.is_nan()).collect();
            if observed.is_empty() {
                return Err(Error::InsufficientData { column: j });
            }
            let fill = median(&observed);
            values
                .column_mut(j)
                .iter_mut()
                .filter(|v| v.is_nan())
                .for_each(|v| *v = fill);
        }
        Panel::new(self.dates.clone(), self.names.clone(), values, self.frequency)
    }
}

/// Per-column means and sample standard deviations of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationMoments {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Median-imputes missing predictor entries and standardizes every column
/// with this window's mean and sample standard deviation.
///
/// `target_col`, when given, is never imputed: a missing target entry is an
/// [`Error::MissingTarget`].
pub fn window_standardize(
    window: &DMatrix<f64>,
    target_col: Option<usize>,
) -> Result<(DMatrix<f64>, StandardizationMoments)> {
    let (rows, cols) = window.shape();
    let mut out = window.clone();
    let mut means = Vec::with_capacity(cols);
    let mut stds = Vec::with_capacity(cols);
    for j in 0..cols {
        let observed: Vec<f64> = window.column(j).iter().cloned().filter(|v| !v.is_nan()).collect();
        if Some(j) == target_col && observed.len() < rows {
            return Err(Error::MissingTarget);
        }
        if observed.len() < 2 {
            return Err(Error::InsufficientData { column: j });
        }
        if observed.len() < rows {
            let fill = median(&observed);
            for t in 0..rows {
                if out[(t, j)].is_nan() {
                    out[(t, j)] = fill;
                }
            }
        }
        let col: Vec<f64> = out.column(j).iter().cloned().collect();
        let m = mean(&col);
        let s = sample_std(&col);
        if !(s > 1e-12 * m.abs().max(1.0)) {
            return Err(Error::DegenerateColumn { column: j });
        }
        for t in 0..rows {
            out[(t, j)] = (out[(t, j)] - m) / s;
        }
        means.push(m);
        stds.push(s);
    }
    Ok((out, StandardizationMoments { means, stds }))
}
