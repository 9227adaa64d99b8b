//! Run configuration, manifests and the four commands of the `ridgeless`
//! tool. Each command writes its artifacts, a `manifest.json` and a
//! `run.toml` holding the fully resolved configuration, into the output
//! directory; `ridgeless <command> --config run.toml` reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::forecast::{rolling_evaluate, EvalConfig, EvalReport};
use crate::ingest::{filter_missing, parse_fred_csv_with_warnings, tcode_lead, transform, RawPanel};
use crate::lab::{sweep_double_descent, Branch, SweepConfig};
use crate::spectral::{diagnose, tail_table, SplitIndex};
use crate::svg::{self, Line, LinePlot, RefLine};

pub const DEFAULT_MAX_MISSING: f64 = 0.2;
pub const DEFAULT_K_GRID: [usize; 7] = [6, 10, 15, 20, 25, 30, 35];

/// Parameters shared by every command. The config file uses the same keys
/// as the command-line flags (with `_` for `-`); flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub khill: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsamples: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_test: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_missing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_n_eff: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_target: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f),)* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `top` replace those of `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay!(
            self,
            top,
            input,
            out,
            seed,
            window,
            horizons,
            kmax,
            khill,
            b_const,
            b_grid,
            subsamples,
            target,
            self_test,
            k_grid,
            max_missing,
            train_len,
            extra_n_eff,
            include_target
        )
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--input is required".into()))
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
    }
}

/// Everything needed to understand and rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub details: serde_json::Value,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    /// Work items skipped along the way (origins, table rows).
    pub skipped: usize,
}

struct Writer {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(
        mut self,
        command: &str,
        config: &RunConfig,
        details: serde_json::Value,
        notes: Vec<String>,
        skipped: usize,
    ) -> Result<Outcome> {
        self.put("run.toml", &config.to_toml())?;
        self.outputs.push("manifest.json".into());
        let manifest = Manifest {
            tool: "ridgeless".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            outputs: self.outputs.clone(),
            details,
            notes,
        };
        fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(Outcome { manifest, skipped })
    }
}

/// A transformed, filtered panel together with what the cleaning removed.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: RawPanel,
    pub dropped: Vec<String>,
    /// Transformation codes of the surviving series as read from the file.
    pub tcodes: Vec<u8>,
    pub warnings: Vec<String>,
}

/// Parse, transform, apply the missing-data filter and drop the leading
/// rows consumed by differencing.
pub fn load_panel(path: &Path, max_missing: f64) -> Result<LoadedPanel> {
    let bytes =
        fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let (raw, warnings) = parse_fred_csv_with_warnings(&bytes)?;
    let transformed = transform(&raw)?;
    let filtered = filter_missing(&transformed, max_missing)?;
    let lead = filtered.panel.tcodes.iter().map(|&c| tcode_lead(c)).max().unwrap_or(0);
    let tcodes = filtered.panel.tcodes.clone();
    let mut panel = filtered.panel.drop_leading(lead);
    panel.tcodes = vec![1; panel.n_series()];
    Ok(LoadedPanel {
        panel,
        dropped: filtered.dropped,
        tcodes,
        warnings,
    })
}

fn resolve_max_missing(cfg: &mut RunConfig) -> f64 {
    *cfg.max_missing.get_or_insert(DEFAULT_MAX_MISSING)
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let max_missing = resolve_max_missing(&mut cfg);
    let loaded = load_panel(cfg.input()?, max_missing)?;
    let mut w = Writer::new(cfg.out()?)?;
    w.put("panel.csv", &loaded.panel.to_csv()?)?;
    let p = &loaded.panel;
    let tcodes: serde_json::Map<String, serde_json::Value> = p
        .names
        .iter()
        .zip(&loaded.tcodes)
        .map(|(n, c)| (n.clone(), json!(c)))
        .collect();
    let details = json!({
        "n_periods": p.n_periods(),
        "n_series": p.n_series(),
        "frequency": p.frequency,
        "date_range": [p.dates.first(), p.dates.last()],
        "dropped_series": loaded.dropped,
        "tcodes": tcodes,
    });
    w.finish("ingest", &cfg, details, loaded.warnings, 0)
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let max_missing = resolve_max_missing(&mut cfg);
    let k_grid = cfg.k_grid.get_or_insert_with(|| DEFAULT_K_GRID.to_vec()).clone();
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("k grid is empty".into()));
    }
    let k_h = *cfg.khill.get_or_insert(20);
    let b = *cfg.b_const.get_or_insert(1.0);
    let loaded = load_panel(cfg.input()?, max_missing)?;
    let panel = loaded.panel.median_imputed()?;
    let table = tail_table(&panel, &k_grid, k_h)?;
    let split = table
        .split_by_b
        .iter()
        .find(|(bb, _)| *bb == b)
        .map(|s| s.1)
        .map_or_else(|| crate::spectral::split_index(&table.eigenvalues, table.t, b), Ok)?;
    let summaries: Vec<_> = table
        .rows
        .iter()
        .filter_map(|r| diagnose(&panel.values, r.k, b, k_h).ok())
        .map(|d| {
            json!({
                "k": d.k, "r_k": d.r_k, "R_k": d.big_r_k, "concentration": d.concentration,
                "flatness": d.flatness, "theorem_case": d.theorem_case, "bllt_ratios": d.bllt_ratios,
            })
        })
        .collect();
    let mut w = Writer::new(cfg.out()?)?;
    w.put("tail_table.csv", &table.to_csv())?;
    let ranked: Vec<(f64, f64)> = table
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect();
    let plot = LinePlot {
        title: "Sample covariance spectrum".into(),
        x_label: "rank j".into(),
        y_label: "eigenvalue".into(),
        log_x: true,
        log_y: true,
        lines: vec![Line {
            label: "λ_j".into(),
            points: ranked,
            width: 1.5,
        }],
        horizontal: Vec::new(),
        vertical: match split {
            SplitIndex::At(k) => vec![RefLine {
                label: format!("k* = {k} (b = {b})"),
                value: (k + 1) as f64,
                dashed: true,
            }],
            SplitIndex::NoSplit => Vec::new(),
        },
    };
    w.put("spectrum.svg", &plot.render())?;
    let diagnostics = json!({
        "T": table.t, "N": table.n, "k_h": k_h, "b": b,
        "k_star": split, "k_star_by_b": table.split_by_b,
        "rows": table.rows, "summaries": summaries, "eigenvalues": table.eigenvalues,
    });
    w.put(
        "diagnostics.json",
        &(serde_json::to_string_pretty(&diagnostics)? + "\n"),
    )?;
    let skipped = table.notes.len();
    let details = json!({ "T": table.t, "N": table.n, "rows": table.rows.len(), "dropped_series": loaded.dropped });
    w.finish("diagnose", &cfg, details, table.notes.clone(), skipped)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let max_missing = resolve_max_missing(&mut cfg);
    let seed = cfg
        .seed
        .ok_or_else(|| Error::InvalidArgument("--seed is required for the stochastic sweep".into()))?;
    let target = match cfg.target.as_deref() {
        Some([t]) => t.clone(),
        _ => return Err(Error::InvalidArgument("the sweep needs exactly one --target".into())),
    };
    let defaults = SweepConfig::default();
    let sweep = SweepConfig {
        horizon: cfg.horizons.get_or_insert_with(|| vec![1])[0],
        train_len: cfg.train_len,
        b_grid: cfg.b_grid.get_or_insert(defaults.b_grid).clone(),
        extra_n_eff: cfg.extra_n_eff.clone().unwrap_or_default(),
        k_factors: None,
        k_max: *cfg.kmax.get_or_insert(defaults.k_max),
        seed,
    };
    let loaded = load_panel(cfg.input()?, max_missing)?;
    let panel = loaded.panel.median_imputed()?;
    let curve = sweep_double_descent(&panel, &target, &sweep)?;
    let mut w = Writer::new(cfg.out()?)?;
    w.put("curve.csv", &curve.to_csv())?;
    w.put("curve.json", &(serde_json::to_string_pretty(&curve)? + "\n"))?;
    let line = |b: Branch, label: &str, width: f64| Line {
        label: label.into(),
        points: curve.branch(b).map(|p| (p.n_eff as f64, p.msfe)).collect(),
        width,
    };
    let plot = LinePlot {
        title: format!("Double descent: {target}, h = {}", curve.horizon),
        x_label: "effective number of predictors".into(),
        y_label: "held-out MSFE (standardized)".into(),
        log_x: true,
        log_y: true,
        lines: vec![
            line(Branch::PcPath, "AR(1) + r PCs", 1.5),
            line(Branch::AugmentPath, "synthetic copies", 3.0),
        ],
        horizontal: vec![
            RefLine {
                label: "AR(1)".into(),
                value: curve.ar1_baseline,
                dashed: false,
            },
            RefLine {
                label: "kernel limit".into(),
                value: curve.kernel_asymptote,
                dashed: true,
            },
        ],
        vertical: vec![RefLine {
            label: format!("T_train = {}", curve.interpolation_threshold),
            value: curve.interpolation_threshold as f64,
            dashed: true,
        }],
    };
    w.put("curve.svg", &plot.render())?;
    let mut notes = loaded.warnings;
    notes.extend(
        curve
            .dropped_columns
            .iter()
            .map(|c| format!("{c} dropped: constant over the training block")),
    );
    let details = json!({
        "target": target, "T_train": curve.interpolation_threshold, "T_test": curve.t_test,
        "N": curve.n_predictors, "k_factors": curve.k_factors,
        "ar1_baseline": curve.ar1_baseline, "kernel_asymptote": curve.kernel_asymptote,
    });
    w.finish("sweep", &cfg, details, notes, 0)
}

/// Resolves the evaluation settings from the run configuration, filling in
/// the frequency defaults.
pub fn eval_config(cfg: &mut RunConfig, panel: &RawPanel) -> EvalConfig {
    let base = EvalConfig::for_frequency(panel.frequency);
    EvalConfig {
        window: *cfg.window.get_or_insert(base.window),
        horizons: cfg.horizons.get_or_insert(base.horizons).clone(),
        k_max: *cfg.kmax.get_or_insert(base.k_max),
        targets: cfg.target.clone(),
        subsample_breaks: cfg.subsamples.get_or_insert_with(Vec::new).clone(),
        include_target_in_predictors: *cfg.include_target.get_or_insert(false),
        self_test: *cfg.self_test.get_or_insert(false),
        min_forecasts: base.min_forecasts,
    }
}

fn forecasts_csv(report: &EvalReport) -> String {
    let mut out = String::from("target,horizon,origin_date,target_date,actual,fk,fm,k\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.target, r.horizon, r.origin_date, r.target_date, r.actual, r.fk, r.fm, r.k
        ));
    }
    out
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let max_missing = resolve_max_missing(&mut cfg);
    let loaded = load_panel(cfg.input()?, max_missing)?;
    let eval = eval_config(&mut cfg, &loaded.panel);
    let report = rolling_evaluate(&loaded.panel, &eval)?;
    let mut w = Writer::new(cfg.out()?)?;
    w.put("report.csv", &report.to_csv())?;
    let summary = json!({
        "config": report.config, "T": report.t, "cells": report.cells, "subsamples": report.subsamples,
        "notes": report.notes, "skipped_origins": report.skips.len(),
        "win_summary": report.win_summary().iter().map(|(h, wins, mean)| json!({"horizon": h, "fk_win_fraction": wins, "mean_rmse_ratio": mean})).collect::<Vec<_>>(),
    });
    w.put("report.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    w.put("forecasts.csv", &forecasts_csv(&report))?;
    let mut skips = String::from("target,horizon,origin_date,reason\n");
    for s in &report.skips {
        skips.push_str(&format!(
            "{},{},{},\"{}\"\n",
            s.target,
            s.horizon,
            s.origin_date,
            s.reason.replace('"', "'")
        ));
    }
    w.put("skips.csv", &skips)?;

    let mut hist = String::from("horizon,bin_lo,bin_hi,count\n");
    let mut scatter = String::from("target,horizon,persistence,rmse_ratio\n");
    for &h in &eval.horizons {
        let ratios: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.horizon == h)
            .map(|c| c.rmse_ratio)
            .collect();
        for (lo, hi, n) in svg::histogram_counts(&ratios, 20) {
            hist.push_str(&format!("{h},{lo},{hi},{n}\n"));
        }
        let mut points = Vec::new();
        for c in report.cells.iter().filter(|c| c.horizon == h) {
            if let Some(rho) = c.persistence {
                scatter.push_str(&format!("{},{h},{rho},{}\n", c.target, c.rmse_ratio));
                points.push((rho, c.rmse_ratio));
            }
        }
        w.put(
            &format!("histogram_h{h}.svg"),
            &svg::histogram(
                &format!("RMSE ratio FK/FM, h = {h}"),
                "RMSE ratio",
                &ratios,
                20,
                Some(1.0),
            ),
        )?;
        w.put(
            &format!("persistence_h{h}.svg"),
            &svg::scatter(
                &format!("Persistence and RMSE ratio, h = {h}"),
                "lag-1 autocorrelation",
                "RMSE ratio",
                &points,
                Some(1.0),
            ),
        )?;
    }
    w.put("histogram.csv", &hist)?;
    w.put("persistence.csv", &scatter)?;
    let mut notes = loaded.warnings;
    notes.extend(report.notes.iter().cloned());
    let details = json!({
        "T": report.t, "N": loaded.panel.n_series(), "cells": report.cells.len(),
        "forecasts": report.records.len(), "skipped_origins": report.skips.len(),
        "dropped_series": loaded.dropped,
    });
    w.finish("evaluate", &cfg, details, notes, report.skips.len())
}
