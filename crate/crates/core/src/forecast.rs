//! Rolling out-of-sample comparison of the factor-kernel model (FK) with
//! the diffusion-index benchmark (FM).
//!
//! At origin `t` with window `W` and horizon `h` the regressor dates are
//! `t−W, …, t−1`; the pairs `(y_s, x_s) → y_{s+h}` whose lead is observed
//! by `t` (so `s ≤ t−h`) form the training sample. Standardization
//! moments, the Bai–Ng factor count and the factors all come from those
//! training rows, and the origin's factors are projections of `x_t` on the
//! estimated loadings. Origins run from `W` to `T−1−h`, which gives
//! `P = T − h − W` forecasts for a fully observed target. Nothing dated
//! after `t` is read.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::factors::{FactorModelFit, PcaDecomposition};
use crate::ingest::{Frequency, Period, RawPanel};
use crate::kernel::{build_factor_kernel, spd_factor, FactorKernel};
use crate::lab::fit_min_norm;
use crate::linalg::{mean, median, sample_std, sym_pinv};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window: usize,
    pub horizons: Vec<usize>,
    pub k_max: usize,
    /// Series to forecast; every series when absent.
    pub targets: Option<Vec<String>>,
    /// Boundaries between evaluation subsamples, as `YYYY-MM`.
    pub subsample_breaks: Vec<String>,
    /// Keep the target among the predictors used for factor extraction.
    pub include_target_in_predictors: bool,
    /// Replace FK by a second FM run; every ratio is then exactly one.
    pub self_test: bool,
    pub min_forecasts: usize,
}

impl EvalConfig {
    pub fn monthly() -> Self {
        EvalConfig {
            window: 120,
            horizons: vec![1, 3, 6, 12],
            k_max: 20,
            targets: None,
            subsample_breaks: Vec::new(),
            include_target_in_predictors: false,
            self_test: false,
            min_forecasts: 24,
        }
    }

    pub fn quarterly() -> Self {
        EvalConfig {
            window: 40,
            horizons: vec![1, 2, 4, 8],
            ..EvalConfig::monthly()
        }
    }

    pub fn for_frequency(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Monthly => Self::monthly(),
            Frequency::Quarterly => Self::quarterly(),
        }
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidArgument("horizons must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be positive".into()));
        }
        let h_max = *self.horizons.iter().max().expect("nonempty");
        if self.window < 3 || self.window + h_max >= t {
            return Err(Error::InvalidArgument(format!(
                "window {} plus horizon {h_max} must be below T = {t}",
                self.window
            )));
        }
        if h_max > self.window - 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon {h_max} leaves fewer than 3 training pairs in a window of {}",
                self.window
            )));
        }
        let p = t - h_max - self.window;
        if p < self.min_forecasts {
            return Err(Error::InvalidArgument(format!(
                "only {p} forecasts at h = {h_max}; at least {} required",
                self.min_forecasts
            )));
        }
        Ok(())
    }
}

/// Diffusion-index forecast: OLS of `y_{s+h}` on `(y_s, f̂_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmForecast {
    pub forecast: f64,
    /// `(φ̂, γ̂')`.
    pub coefficients: DVector<f64>,
    /// Collinear regressors forced the pseudoinverse.
    pub collinear: bool,
}

pub fn fm_forecast(
    dep: &DVector<f64>,
    lag: &DVector<f64>,
    factors: &DMatrix<f64>,
    lag_t: f64,
    f_t: &DVector<f64>,
) -> Result<FmForecast> {
    let n = dep.len();
    if lag.len() != n || factors.nrows() != n || f_t.len() != factors.ncols() {
        return Err(Error::Dimension("FM regressors do not line up".into()));
    }
    let k = factors.ncols();
    let mut design = DMatrix::zeros(n, k + 1);
    design.set_column(0, lag);
    design.columns_mut(1, k).copy_from(factors);
    let fit = fit_min_norm(&design, dep)?;
    let b = &fit.coefficients;
    let forecast = b[0] * lag_t + b.rows(1, k).dot(f_t);
    Ok(FmForecast {
        forecast,
        coefficients: fit.coefficients,
        collinear: fit.pseudoinverse_fallback,
    })
}

/// `y_h = φ y₋₁ + K α` fitted by generalized least squares in the metric
/// `(K + λI)⁺`.
#[derive(Debug, Clone)]
pub struct SemiparametricFit {
    pub phi: f64,
    pub alpha: DVector<f64>,
    pub kernel: FactorKernel,
}

type Solver = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;

fn regularized_solver(kernel: &FactorKernel) -> Solver {
    let mut m = kernel.k.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += kernel.ridge;
    }
    match spd_factor(m.clone(), "K + λI") {
        Ok(chol) => Box::new(move |v| chol.solve(v)),
        Err(_) => {
            let pinv = sym_pinv(&m);
            Box::new(move |v| &pinv * v)
        }
    }
}

pub fn fk_fit_gls(kernel: &FactorKernel, y_h: &DVector<f64>, y_lag: &DVector<f64>) -> Result<SemiparametricFit> {
    let w = kernel.size();
    if y_h.len() != w || y_lag.len() != w {
        return Err(Error::Dimension(format!("responses must have the kernel size {w}")));
    }
    if y_lag.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("lagged target is identically zero".into()));
    }
    let solve = regularized_solver(kernel);
    let a = solve(y_lag);
    let b = solve(y_h);
    let denom = y_lag.dot(&a);
    let scale = y_lag.norm_squared() * (a.norm() / y_lag.norm()).max(f64::MIN_POSITIVE);
    if !(denom.abs() > 1e-12 * scale) {
        return Err(Error::Singular(
            "lagged target is degenerate in the kernel metric".into(),
        ));
    }
    let phi = y_lag.dot(&b) / denom;
    let alpha = b - &a * phi;
    Ok(SemiparametricFit {
        phi,
        alpha,
        kernel: kernel.clone(),
    })
}

/// `ŷ = φ̂ y_t + k'α̂`.
pub fn fk_forecast(fit: &SemiparametricFit, k_vec: &DVector<f64>, y_t: f64) -> Result<f64> {
    if k_vec.len() != fit.alpha.len() {
        return Err(Error::Dimension(format!(
            "kernel vector of length {} for a window of {}",
            k_vec.len(),
            fit.alpha.len()
        )));
    }
    Ok(fit.phi * y_t + k_vec.dot(&fit.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub stat: f64,
    pub pvalue: f64,
}

/// Diebold–Mariano test on squared-error loss with a Bartlett HAC long-run
/// variance of `h − 1` lags. Positive statistics mean `a` is less accurate.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64], h: usize) -> Result<DmResult> {
    let p = errors_a.len();
    if p != errors_b.len() {
        return Err(Error::Dimension("error series differ in length".into()));
    }
    if p < 10 {
        return Err(Error::InvalidArgument(format!(
            "{p} forecast errors; at least 10 required"
        )));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a * a - b * b).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DmResult { stat: 0.0, pvalue: 1.0 });
    }
    let pf = p as f64;
    let m = mean(&d);
    let gamma = |l: usize| -> f64 { (l..p).map(|i| (d[i] - m) * (d[i - l] - m)).sum::<f64>() / pf };
    let mut lrv = gamma(0);
    for l in 1..h.min(p) {
        lrv += 2.0 * (1.0 - l as f64 / h as f64) * gamma(l);
    }
    if !(lrv > 1e-14 * m * m) {
        return Ok(if m == 0.0 {
            DmResult { stat: 0.0, pvalue: 1.0 }
        } else {
            DmResult {
                stat: m.signum() * f64::INFINITY,
                pvalue: 0.0,
            }
        });
    }
    let stat = m / (lrv / pf).sqrt();
    Ok(DmResult {
        stat,
        pvalue: erfc(stat.abs() / std::f64::consts::SQRT_2),
    })
}

/// Lag-1 autocorrelation over the second half of a series, computed from
/// consecutive pairs in which both values are observed (NaN = missing).
pub fn persistence(series: &[f64]) -> Result<f64> {
    let half = &series[series.len() / 2..];
    let pairs: Vec<(f64, f64)> = half
        .windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| (w[0], w[1]))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::UndefinedPersistence(format!(
            "{} consecutive observed pairs in the second half",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let scale = mx.abs().max(my.abs()).max(1.0);
    if !(sxx > 1e-24 * n * scale * scale && syy > 1e-24 * n * scale * scale) {
        return Err(Error::UndefinedPersistence("second half is constant".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub target: String,
    pub horizon: usize,
    pub origin: usize,
    pub origin_date: String,
    pub target_date: Period,
    pub actual: f64,
    pub fk: f64,
    pub fm: f64,
    pub k: usize,
}

impl ForecastRecord {
    pub fn error_fk(&self) -> f64 {
        self.actual - self.fk
    }

    pub fn error_fm(&self) -> f64 {
        self.actual - self.fm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub target: String,
    pub horizon: usize,
    pub origin_date: String,
    pub reason: String,
}

/// Accuracy summary of one (target, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub target: String,
    pub horizon: usize,
    pub msfe_fk: f64,
    pub msfe_fm: f64,
    pub rmse_ratio: f64,
    pub dm_stat: Option<f64>,
    pub dm_pvalue: Option<f64>,
    pub persistence: Option<f64>,
    pub n_forecasts: usize,
    pub n_skipped: usize,
}

impl CellReport {
    fn from_records(
        target: &str,
        horizon: usize,
        records: &[&ForecastRecord],
        persistence: Option<f64>,
        n_skipped: usize,
    ) -> Option<CellReport> {
        if records.is_empty() {
            return None;
        }
        let e_fk: Vec<f64> = records.iter().map(|r| r.error_fk()).collect();
        let e_fm: Vec<f64> = records.iter().map(|r| r.error_fm()).collect();
        let msfe = |e: &[f64]| e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
        let msfe_fk = msfe(&e_fk);
        let msfe_fm = msfe(&e_fm);
        let dm = dm_test(&e_fk, &e_fm, horizon).ok();
        Some(CellReport {
            target: target.to_string(),
            horizon,
            msfe_fk,
            msfe_fm,
            rmse_ratio: (msfe_fk / msfe_fm).sqrt(),
            dm_stat: dm.map(|d| d.stat),
            dm_pvalue: dm.map(|d| d.pvalue),
            persistence,
            n_forecasts: records.len(),
            n_skipped,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub label: String,
    /// Inclusive lower boundary, if any.
    pub start: Option<Period>,
    /// Exclusive upper boundary, if any.
    pub end: Option<Period>,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub t: usize,
    pub cells: Vec<CellReport>,
    pub records: Vec<ForecastRecord>,
    pub skips: Vec<SkipRecord>,
    pub subsamples: Vec<SubsampleReport>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, target: &str, horizon: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.target == target && c.horizon == horizon)
    }

    /// One row per cell for the full sample, then one per cell and subsample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "period,target,horizon,msfe_fk,msfe_fm,rmse_ratio,dm_stat,dm_pvalue,persistence,n_forecasts,n_skipped\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut push = |period: &str, c: &CellReport| {
            out.push_str(&format!(
                "{period},{},{},{},{},{},{},{},{},{},{}\n",
                c.target,
                c.horizon,
                c.msfe_fk,
                c.msfe_fm,
                c.rmse_ratio,
                opt(c.dm_stat),
                opt(c.dm_pvalue),
                opt(c.persistence),
                c.n_forecasts,
                c.n_skipped
            ));
        };
        for c in &self.cells {
            push("full", c);
        }
        for s in &self.subsamples {
            for c in &s.cells {
                push(&s.label, c);
            }
        }
        out
    }

    /// Fraction of cells with `rmse_ratio < 1` and the mean ratio, per horizon.
    pub fn win_summary(&self) -> Vec<(usize, f64, f64)> {
        let mut hs: Vec<usize> = self.cells.iter().map(|c| c.horizon).collect();
        hs.sort_unstable();
        hs.dedup();
        hs.into_iter()
            .map(|h| {
                let ratios: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.horizon == h)
                    .map(|c| c.rmse_ratio)
                    .collect();
                let wins = ratios.iter().filter(|&&r| r < 1.0).count() as f64 / ratios.len() as f64;
                (h, wins, mean(&ratios))
            })
            .collect()
    }
}

struct OriginFactors {
    fit: FactorModelFit,
    f_t: DVector<f64>,
}

/// Median-imputes, standardizes with training moments and extracts factors
/// for one origin. Columns that are constant or nearly unobserved in the
/// training rows are left out.
fn origin_factors(
    values: &DMatrix<f64>,
    cols: &[usize],
    rows: std::ops::Range<usize>,
    origin: usize,
    k_max: usize,
) -> Result<OriginFactors> {
    let n_rows = rows.len();
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut x_t = Vec::with_capacity(cols.len());
    for &j in cols {
        let window: Vec<f64> = rows.clone().map(|s| values[(s, j)]).collect();
        let observed: Vec<f64> = window.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.len() < 2 {
            continue;
        }
        let fill = if observed.len() < n_rows || values[(origin, j)].is_nan() {
            median(&observed)
        } else {
            0.0
        };
        let col: Vec<f64> = window.iter().map(|&v| if v.is_nan() { fill } else { v }).collect();
        let m = mean(&col);
        let s = sample_std(&col);
        if !(s > 1e-12 * m.abs().max(1.0)) {
            continue;
        }
        let origin_value = if values[(origin, j)].is_nan() {
            fill
        } else {
            values[(origin, j)]
        };
        kept.push(col.iter().map(|v| (v - m) / s).collect());
        x_t.push((origin_value - m) / s);
    }
    if kept.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let n = kept.len();
    let x = DMatrix::from_fn(n_rows, n, |i, j| kept[j][i]);
    let decomposition = PcaDecomposition::new(&x);
    let k_cap = k_max.min(n_rows.min(n).saturating_sub(1));
    let k = if k_cap == 0 {
        1
    } else {
        decomposition.select_k_bai_ng(k_cap)?.k
    };
    let fit = decomposition.fit(k)?;
    let f_t = fit.project(&DMatrix::from_row_slice(1, n, &x_t))?.row(0).transpose();
    Ok(OriginFactors { fit, f_t })
}

struct TargetWindow {
    dep: DVector<f64>,
    lag: DVector<f64>,
    lag_t: f64,
    actual: f64,
}

fn target_window(
    y: &[f64],
    rows: std::ops::Range<usize>,
    origin: usize,
    h: usize,
) -> std::result::Result<TargetWindow, String> {
    let dep_raw: Vec<f64> = rows.clone().map(|s| y[s + h]).collect();
    let lag_raw: Vec<f64> = rows.clone().map(|s| y[s]).collect();
    if dep_raw.iter().chain(&lag_raw).any(|v| v.is_nan()) || y[origin].is_nan() {
        return Err("missing target value in the window".into());
    }
    if y[origin + h].is_nan() {
        return Err("missing realized value".into());
    }
    let moments = |v: &[f64]| -> std::result::Result<(f64, f64), String> {
        let m = mean(v);
        let s = sample_std(v);
        if s > 1e-12 * m.abs().max(1.0) {
            Ok((m, s))
        } else {
            Err("target is constant in the window".into())
        }
    };
    let (md, sd) = moments(&dep_raw)?;
    let (ml, sl) = moments(&lag_raw)?;
    Ok(TargetWindow {
        dep: DVector::from_iterator(dep_raw.len(), dep_raw.iter().map(|v| (v - md) / sd)),
        lag: DVector::from_iterator(lag_raw.len(), lag_raw.iter().map(|v| (v - ml) / sl)),
        lag_t: (y[origin] - ml) / sl,
        actual: (y[origin + h] - md) / sd,
    })
}

fn forecast_pair(tw: &TargetWindow, of: &OriginFactors, self_test: bool) -> Result<(f64, f64)> {
    let fm = fm_forecast(&tw.dep, &tw.lag, &of.fit.factors, tw.lag_t, &of.f_t)?.forecast;
    if self_test {
        return Ok((fm, fm));
    }
    let window: Vec<usize> = (0..tw.dep.len()).collect();
    let kernel = build_factor_kernel(&of.fit, &window)?;
    let fit = fk_fit_gls(&kernel, &tw.dep, &tw.lag)?;
    let k_vec = kernel.kernel_vector(&of.f_t)?;
    Ok((fk_forecast(&fit, &k_vec, tw.lag_t)?, fm))
}

/// Runs the rolling evaluation for every target and horizon.
pub fn rolling_evaluate(panel: &RawPanel, config: &EvalConfig) -> Result<EvalReport> {
    let (t, n) = panel.values.shape();
    config.validate(t)?;
    let targets: Vec<usize> = match &config.targets {
        None => (0..n).collect(),
        Some(names) => names
            .iter()
            .map(|name| {
                panel
                    .column_index(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("target {name} is not in the panel")))
            })
            .collect::<Result<_>>()?,
    };
    let w = config.window;
    let mut records = Vec::new();
    let mut skips = Vec::new();
    let mut cells = Vec::new();
    let all_cols: Vec<usize> = (0..n).collect();
    for &h in &config.horizons {
        let origins: Vec<usize> = (w..t - h).collect();
        // one factor extraction per origin when every target shares the predictors
        let shared: HashMap<usize, std::result::Result<OriginFactors, String>> = if config.include_target_in_predictors
        {
            let built = par::map_slice(&origins, |&o| {
                origin_factors(&panel.values, &all_cols, o - w..o - h + 1, o, config.k_max).map_err(|e| e.to_string())
            });
            origins.iter().copied().zip(built).collect()
        } else {
            HashMap::new()
        };
        for &j in &targets {
            let y: Vec<f64> = panel.values.column(j).iter().copied().collect();
            let cols: Vec<usize> = (0..n).filter(|&c| c != j).collect();
            let outcomes = par::map_slice(&origins, |&o| -> std::result::Result<ForecastRecord, String> {
                let rows = o - w..o - h + 1;
                let tw = target_window(&y, rows.clone(), o, h)?;
                let local;
                let of = if config.include_target_in_predictors {
                    shared[&o].as_ref().map_err(|e| e.clone())?
                } else {
                    local = origin_factors(&panel.values, &cols, rows, o, config.k_max).map_err(|e| e.to_string())?;
                    &local
                };
                let (fk, fm) = forecast_pair(&tw, of, config.self_test).map_err(|e| e.to_string())?;
                Ok(ForecastRecord {
                    target: panel.names[j].clone(),
                    horizon: h,
                    origin: o,
                    origin_date: panel.dates[o].clone(),
                    target_date: panel.periods[o + h],
                    actual: tw.actual,
                    fk,
                    fm,
                    k: of.fit.k,
                })
            });
            let mut cell_records = Vec::new();
            let mut n_skipped = 0;
            for (o, outcome) in origins.iter().zip(outcomes) {
                match outcome {
                    Ok(r) => cell_records.push(r),
                    Err(reason) => {
                        n_skipped += 1;
                        log::info!("skip {} h={h} origin {}: {reason}", panel.names[j], panel.dates[*o]);
                        skips.push(SkipRecord {
                            target: panel.names[j].clone(),
                            horizon: h,
                            origin_date: panel.dates[*o].clone(),
                            reason,
                        });
                    }
                }
            }
            let rho = persistence(&y).ok();
            let refs: Vec<&ForecastRecord> = cell_records.iter().collect();
            if let Some(cell) = CellReport::from_records(&panel.names[j], h, &refs, rho, n_skipped) {
                cells.push(cell);
            }
            records.extend(cell_records);
        }
    }
    let mut report = EvalReport {
        config: config.clone(),
        t,
        cells,
        records,
        skips,
        subsamples: Vec::new(),
        notes: Vec::new(),
    };
    if !config.subsample_breaks.is_empty() {
        let breaks = config
            .subsample_breaks
            .iter()
            .map(|b| Period::parse(b).ok_or_else(|| Error::InvalidArgument(format!("bad subsample break {b}"))))
            .collect::<Result<Vec<_>>>()?;
        let (subs, notes) = subsample_report(&report, &breaks);
        report.subsamples = subs;
        report.notes.extend(notes);
    }
    Ok(report)
}

/// Recomputes every cell on the forecasts whose target dates fall in each
/// period delimited by `breaks`. Empty periods are omitted with a note.
pub fn subsample_report(report: &EvalReport, breaks: &[Period]) -> (Vec<SubsampleReport>, Vec<String>) {
    let mut bounds: Vec<Period> = breaks.to_vec();
    bounds.sort_unstable();
    bounds.dedup();
    let mut edges: Vec<(Option<Period>, Option<Period>)> = Vec::new();
    let mut lower = None;
    for b in &bounds {
        edges.push((lower, Some(*b)));
        lower = Some(*b);
    }
    edges.push((lower, None));
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for (start, end) in edges {
        let inside = |p: &Period| start.is_none_or(|s| *p >= s) && end.is_none_or(|e| *p < e);
        let label = format!(
            "{}..{}",
            start.map(|p| p.to_string()).unwrap_or_default(),
            end.map(|p| p.to_string()).unwrap_or_default()
        );
        let mut cells = Vec::new();
        for c in &report.cells {
            let recs: Vec<&ForecastRecord> = report
                .records
                .iter()
                .filter(|r| r.target == c.target && r.horizon == c.horizon && inside(&r.target_date))
                .collect();
            if let Some(cell) = CellReport::from_records(&c.target, c.horizon, &recs, c.persistence, 0) {
                cells.push(cell);
            }
        }
        if cells.is_empty() {
            notes.push(format!("subsample {label} has no forecasts and is omitted"));
        } else {
            out.push(SubsampleReport {
                label,
                start,
                end,
                cells,
            });
        }
    }
    (out, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{simulate_factor_panel, FactorSimSpec};
    use crate::rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn gls_reduces_to_ols_with_identity_metric() {
        let kernel = FactorKernel::from_matrix(DMatrix::zeros(4, 4), 1.0).unwrap();
        let lag = dv(&[1.0, -2.0, 0.5, 3.0]);
        let yh = dv(&[0.7, -1.1, 0.9, 2.0]);
        let fit = fk_fit_gls(&kernel, &yh, &lag).unwrap();
        let slope = lag.dot(&yh) / lag.dot(&lag);
        assert!((fit.phi - slope).abs() < 1e-14);
        assert!((&fit.alpha - (&yh - &lag * slope)).amax() < 1e-14);
        assert!((fk_forecast(&fit, &DVector::zeros(4), 2.0).unwrap() - 2.0 * slope).abs() < 1e-14);
        assert!(fk_forecast(&fit, &DVector::zeros(3), 2.0).is_err());
    }

    #[test]
    fn gls_exact_fit_and_orthogonality() {
        let mut r = rng::stream(3, 0);
        let f = DMatrix::from_fn(12, 2, |_, _| rng::normal(&mut r));
        let k = &f * f.transpose();
        let kernel = FactorKernel::from_matrix(k, 0.4).unwrap();
        let lag = DVector::from_fn(12, |_, _| rng::normal(&mut r));
        let fit = fk_fit_gls(&kernel, &(&lag * 0.8), &lag).unwrap();
        assert!((fit.phi - 0.8).abs() < 1e-12);
        assert!(fit.alpha.amax() < 1e-12);
        let yh = DVector::from_fn(12, |_, _| rng::normal(&mut r));
        let fit = fk_fit_gls(&kernel, &yh, &lag).unwrap();
        let mut m = kernel.k.clone();
        for i in 0..12 {
            m[(i, i)] += 0.4;
        }
        let resid = m.clone().cholesky().unwrap().solve(&(&yh - &lag * fit.phi));
        assert!(lag.dot(&resid).abs() < 1e-8 * yh.norm() * lag.norm());
        assert!(fk_fit_gls(&kernel, &yh, &DVector::zeros(12)).is_err());
    }

    #[test]
    fn dm_examples() {
        let mut r = rng::stream(5, 0);
        let e: Vec<f64> = (0..200).map(|_| rng::normal(&mut r)).collect();
        assert_eq!(dm_test(&e, &e, 1).unwrap(), DmResult { stat: 0.0, pvalue: 1.0 });
        let shifted: Vec<f64> = e.iter().map(|v| (v * v + 1.0).sqrt()).collect();
        let res = dm_test(&shifted, &e, 1).unwrap();
        assert_eq!(res.stat, f64::INFINITY);
        assert_eq!(res.pvalue, 0.0);
        let b: Vec<f64> = (0..200).map(|_| rng::normal(&mut r)).collect();
        let worse: Vec<f64> = b.iter().map(|v| 1.5 * v).collect();
        let res = dm_test(&worse, &e, 3).unwrap();
        assert!(res.stat > 0.0 && res.pvalue < 0.05);
        assert!(dm_test(&e[..9], &e[..9], 1).is_err());
    }

    #[test]
    fn persistence_examples() {
        let alt: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((persistence(&alt).unwrap() + 1.0).abs() < 1e-2);
        let mut r = rng::stream(6, 0);
        let mut y = vec![0.0; 2000];
        for i in 1..2000 {
            y[i] = 0.9 * y[i - 1] + rng::normal(&mut r);
        }
        let rho = persistence(&y).unwrap();
        assert!((0.85..=0.95).contains(&rho));
        assert!(matches!(persistence(&[1.0; 20]), Err(Error::UndefinedPersistence(_))));
        let mut gappy = y.clone();
        for i in (1000..2000).step_by(3) {
            gappy[i] = f64::NAN;
        }
        assert!(persistence(&gappy).is_ok());
    }

    #[test]
    fn noiseless_fm_is_exact() {
        // y_{s+1} = 0.5 y_s + f_s, x = f λ' with one factor and no noise
        let t = 60;
        let mut r = rng::stream(8, 0);
        let f: Vec<f64> = (0..t).map(|_| rng::normal(&mut r)).collect();
        let mut y = vec![0.3; t];
        for s in 0..t - 1 {
            y[s + 1] = 0.5 * y[s] + f[s];
        }
        let lambda = [1.0, -0.5, 2.0, 0.7, 1.3];
        let mut values = DMatrix::zeros(t, 6);
        for i in 0..t {
            values[(i, 0)] = y[i];
            for (j, l) in lambda.iter().enumerate() {
                values[(i, j + 1)] = f[i] * l;
            }
        }
        let names = std::iter::once("y".to_string())
            .chain((1..=5).map(|i| format!("x{i}")))
            .collect();
        let dates = (0..t)
            .map(|i| Period::new(2000 + i as i32 / 12, (i % 12) as u32 + 1).to_string())
            .collect();
        let panel = crate::ingest::Panel::new(dates, names, values, Frequency::Monthly)
            .unwrap()
            .to_raw()
            .unwrap();
        let config = EvalConfig {
            window: 30,
            horizons: vec![1],
            k_max: 2,
            targets: Some(vec!["y".into()]),
            min_forecasts: 10,
            ..EvalConfig::monthly()
        };
        let report = rolling_evaluate(&panel, &config).unwrap();
        assert_eq!(report.cells[0].n_forecasts, t - 1 - 30);
        for rec in &report.records {
            assert!(rec.error_fm().abs() < 1e-6, "FM error {}", rec.error_fm());
        }
    }

    #[test]
    fn accounting_and_self_test() {
        let mut spec = FactorSimSpec::homoscedastic(90, 12, 2, 0.8);
        spec.target_ar = 0.4;
        let panel = simulate_factor_panel(&spec, 2).unwrap().to_panel().to_raw().unwrap();
        let config = EvalConfig {
            window: 40,
            horizons: vec![1, 3],
            k_max: 4,
            targets: Some(vec!["y".into(), "x3".into()]),
            self_test: true,
            min_forecasts: 10,
            subsample_breaks: vec!["1965-01".into()],
            ..EvalConfig::monthly()
        };
        let report = rolling_evaluate(&panel, &config).unwrap();
        for c in &report.cells {
            assert_eq!(c.n_forecasts, 90 - c.horizon - 40);
            assert_eq!(c.rmse_ratio, 1.0);
        }
        assert_eq!(report.subsamples.len(), 2);
        for c in &report.cells {
            let total: usize = report
                .subsamples
                .iter()
                .filter_map(|s| s.cells.iter().find(|x| x.target == c.target && x.horizon == c.horizon))
                .map(|x| x.n_forecasts)
                .sum();
            assert_eq!(total, c.n_forecasts);
        }
        let whole = subsample_report(&report, &[]).0;
        assert_eq!(
            whole[0].cells.iter().map(|c| c.msfe_fk).collect::<Vec<_>>(),
            report.cells.iter().map(|c| c.msfe_fk).collect::<Vec<_>>()
        );
    }

    #[test]
    fn missing_target_skips_origin() {
        let spec = FactorSimSpec::homoscedastic(80, 10, 1, 0.8);
        let mut panel = simulate_factor_panel(&spec, 4).unwrap().to_panel().to_raw().unwrap();
        panel.values[(60, 0)] = f64::NAN;
        let config = EvalConfig {
            window: 30,
            horizons: vec![1],
            k_max: 3,
            targets: Some(vec!["y".into()]),
            min_forecasts: 10,
            ..EvalConfig::monthly()
        };
        let report = rolling_evaluate(&panel, &config).unwrap();
        let cell = &report.cells[0];
        assert!(cell.n_skipped > 0);
        assert_eq!(cell.n_forecasts + cell.n_skipped, 80 - 1 - 30);
        assert!(!report.skips.is_empty());
    }
}
