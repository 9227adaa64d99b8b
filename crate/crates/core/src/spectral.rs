//! Spectral diagnostics of a covariance: effective ranks, the split index,
//! tail concentration and tail-index estimators.
//!
//! Every quantity here depends on eigenvalues only through ratios, so all
//! diagnostics are invariant to rescaling the spectrum.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{window_standardize, Panel};
use crate::linalg::{mean, simple_regression, sym_eigen_desc};
use crate::{par, rng};

/// Eigenvalues below this fraction of the largest are numerical zeros.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

fn tail(eigs: &[f64], k: usize) -> Result<&[f64]> {
    if k >= eigs.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} leaves an empty tail of a {}-value spectrum",
            eigs.len()
        )));
    }
    if !(eigs[k] > 0.0) {
        return Err(Error::InvalidArgument(format!("eigenvalue {k} is not positive")));
    }
    Ok(&eigs[k..])
}

/// `(r_k, R_k)` with `r_k = Σ_{i>k} λ_i / λ_{k+1}` and
/// `R_k = (Σ_{i>k} λ_i)² / Σ_{i>k} λ_i²`.
pub fn effective_ranks(eigs: &[f64], k: usize) -> Result<(f64, f64)> {
    let t = tail(eigs, k)?;
    let s: f64 = t.iter().sum();
    let s2: f64 = t.iter().map(|v| v * v).sum();
    Ok((s / t[0], s * s / s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum SplitIndex {
    At(usize),
    NoSplit,
}

impl SplitIndex {
    pub fn value(&self) -> Option<usize> {
        match *self {
            SplitIndex::At(k) => Some(k),
            SplitIndex::NoSplit => None,
        }
    }
}

/// Smallest `k` with `r_k ≥ b T`.
pub fn split_index(eigs: &[f64], t: usize, b: f64) -> Result<SplitIndex> {
    if t == 0 || !(b > 0.0) {
        return Err(Error::InvalidArgument("split index needs T ≥ 1 and b > 0".into()));
    }
    let threshold = b * t as f64;
    // suffix sums give r_k in one pass
    let mut suffix = vec![0.0; eigs.len() + 1];
    for i in (0..eigs.len()).rev() {
        suffix[i] = suffix[i + 1] + eigs[i];
    }
    for k in 0..eigs.len() {
        if eigs[k] > 0.0 && suffix[k] / eigs[k] >= threshold {
            return Ok(SplitIndex::At(k));
        }
    }
    Ok(SplitIndex::NoSplit)
}

/// `C = mean(λ²) / mean(λ)²` over the tail beyond `k`.
pub fn concentration(eigs: &[f64], k: usize) -> Result<f64> {
    let t = tail(eigs, k)?;
    let m = mean(t);
    let m2 = t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
    Ok(m2 / (m * m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailCase {
    /// Flat tail.
    AHomoscedastic,
    /// Bounded concentration.
    BBounded,
    /// Slowly diverging concentration.
    CDiverging,
    Fail,
}

/// Tuning of the finite-sample case heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseThresholds {
    pub flat: f64,
    pub cap: f64,
}

impl Default for CaseThresholds {
    fn default() -> Self {
        CaseThresholds { flat: 1.05, cap: 10.0 }
    }
}

/// Concentration and flatness of nested sub-panels of increasing width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpanelEvidence {
    pub widths: Vec<usize>,
    pub concentration: Vec<f64>,
    pub flatness: Vec<f64>,
}

/// Heuristic mapping of finite-sample evidence onto the three benign
/// cases. `C < flat` is case a; `C ≤ cap` with flatness not increasing in
/// the panel width is case b; concentration growing with width while
/// flatness falls is case c; anything else fails.
pub fn classify_case(c: f64, evidence: Option<&SubpanelEvidence>, thresholds: CaseThresholds) -> TailCase {
    if c < thresholds.flat {
        return TailCase::AHomoscedastic;
    }
    let Some(ev) = evidence.filter(|e| e.flatness.len() >= 2) else {
        return if c <= thresholds.cap {
            TailCase::BBounded
        } else {
            TailCase::Fail
        };
    };
    let tol = 1e-9;
    let flat_nonincreasing = ev.flatness.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol));
    if c <= thresholds.cap && flat_nonincreasing {
        return TailCase::BBounded;
    }
    let c_grows = ev.concentration.last() > ev.concentration.first();
    let flat_falls = ev.flatness.last() < ev.flatness.first();
    if c_grows && flat_falls {
        TailCase::CDiverging
    } else {
        TailCase::Fail
    }
}

/// Concentration, flatness `T C / (N − k)` and the case implied by the
/// full spectrum alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub c: f64,
    pub flatness: f64,
    pub case: TailCase,
}

pub fn concentration_and_case(eigs: &[f64], k: usize, t: usize) -> Result<Concentration> {
    let c = concentration(eigs, k)?;
    let flatness = t as f64 * c / (eigs.len() - k) as f64;
    Ok(Concentration {
        c,
        flatness,
        case: classify_case(c, None, CaseThresholds::default()),
    })
}

/// Hill estimate from the top `k_h` order statistics:
/// `1/α = k_h⁻¹ Σ_{j ≤ k_h} log(λ_(j) / λ_(k_h+1))`.
pub fn hill_estimator(tail: &[f64], k_h: usize) -> Result<f64> {
    if k_h == 0 || k_h + 1 > tail.len() {
        return Err(Error::InvalidArgument(format!(
            "Hill cutoff {k_h} needs at least {} tail values, have {}",
            k_h + 1,
            tail.len()
        )));
    }
    if tail[..=k_h].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "Hill estimator needs positive order statistics".into(),
        ));
    }
    let anchor = tail[k_h].ln();
    let inv = tail[..k_h].iter().map(|v| v.ln() - anchor).sum::<f64>() / k_h as f64;
    Ok(1.0 / inv)
}

/// Log-rank estimate: least-squares slope of `log λ_(j)` on `−log(j/m)`
/// over the whole tail, `α = 1/slope`.
pub fn logrank_estimator(tail: &[f64]) -> Result<f64> {
    let m = tail.len();
    if m < 3 {
        return Err(Error::InvalidArgument("log-rank fit needs at least 3 values".into()));
    }
    if tail.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-rank fit needs positive values".into()));
    }
    let x: Vec<f64> = (1..=m).map(|j| -((j as f64) / m as f64).ln()).collect();
    let y: Vec<f64> = tail.iter().map(|v| v.ln()).collect();
    let (slope, _) = simple_regression(&x, &y)
        .ok_or_else(|| Error::InvalidArgument("log-rank regressor has zero variance".into()))?;
    Ok(1.0 / slope)
}

/// Eigenvalues of the sample covariance of a column-standardized panel,
/// descending, with numerical zeros removed.
pub fn panel_spectrum(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (z, _) = window_standardize(x, None)?;
    let cov = z.tr_mul(&z) / z.nrows() as f64;
    let (eigs, _) = sym_eigen_desc(&cov);
    Ok(drop_numerical_zeros(eigs.as_slice()))
}

pub fn drop_numerical_zeros(eigs: &[f64]) -> Vec<f64> {
    let top = eigs.first().copied().unwrap_or(0.0);
    eigs.iter()
        .copied()
        .filter(|&v| v > RELATIVE_EIGEN_FLOOR * top)
        .collect()
}

/// Full diagnostic summary of one spectrum at one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDiagnostics {
    pub eigenvalues: Vec<f64>,
    /// The split used for the tail quantities.
    pub k: usize,
    pub k_star: SplitIndex,
    pub r0: f64,
    pub r_k: f64,
    pub big_r_k: f64,
    pub concentration: f64,
    pub flatness: f64,
    /// `(r_0/T, k*/T, T/R_k)`.
    pub bllt_ratios: (f64, f64, f64),
    pub theorem_case: TailCase,
    pub hill_alpha: Option<f64>,
    pub logrank_alpha: Option<f64>,
}

/// Nested sub-panels made of the first `N/4, N/2, 3N/4, N` columns.
pub fn subpanel_evidence(x: &DMatrix<f64>, k: usize) -> Result<SubpanelEvidence> {
    let (t, n) = x.shape();
    let mut widths: Vec<usize> = [n / 4, n / 2, 3 * n / 4, n]
        .into_iter()
        .filter(|&w| w > k + 1)
        .collect();
    widths.dedup();
    let rows = par::map_slice(&widths, |&w| -> Result<(f64, f64)> {
        let eigs = panel_spectrum(&x.columns(0, w).into_owned())?;
        let c = concentration(&eigs, k)?;
        Ok((c, t as f64 * c / (w - k) as f64))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SubpanelEvidence {
        widths,
        concentration: rows.iter().map(|r| r.0).collect(),
        flatness: rows.iter().map(|r| r.1).collect(),
    })
}

/// Diagnostics of a raw panel (T×N) at split `k` with split constant `b`.
pub fn diagnose(x: &DMatrix<f64>, k: usize, b: f64, k_h: usize) -> Result<SpectrumDiagnostics> {
    let t = x.nrows();
    let eigs = panel_spectrum(x)?;
    let k_star = split_index(&eigs, t, b)?;
    let (r0, _) = effective_ranks(&eigs, 0)?;
    let (r_k, big_r_k) = effective_ranks(&eigs, k)?;
    let conc = concentration_and_case(&eigs, k, t)?;
    let evidence = subpanel_evidence(x, k)?;
    let tail = &eigs[k..];
    let tf = t as f64;
    Ok(SpectrumDiagnostics {
        k,
        k_star,
        r0,
        r_k,
        big_r_k,
        concentration: conc.c,
        flatness: conc.flatness,
        bllt_ratios: (
            r0 / tf,
            k_star.value().map_or(f64::NAN, |v| v as f64 / tf),
            tf / big_r_k,
        ),
        theorem_case: classify_case(conc.c, Some(&evidence), CaseThresholds::default()),
        hill_alpha: hill_estimator(tail, k_h).ok(),
        logrank_alpha: logrank_estimator(tail).ok(),
        eigenvalues: eigs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub k: usize,
    pub big_r_k: f64,
    pub t_over_r_k: f64,
    pub hill: f64,
    pub logrank: f64,
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub t: usize,
    pub n: usize,
    pub k_h: usize,
    pub rows: Vec<TailRow>,
    pub notes: Vec<String>,
    /// `k*` for `b ∈ {0.5, 1, 2}`.
    pub split_by_b: Vec<(f64, SplitIndex)>,
    pub eigenvalues: Vec<f64>,
}

impl TailTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k*,R_k,T/R_k,hill,logrank,C\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.k, r.big_r_k, r.t_over_r_k, r.hill, r.logrank, r.concentration
            ));
        }
        out
    }
}

/// One row per split: tail effective rank, flatness ratio and both tail
/// index estimates with cutoff `k_h`.
pub fn tail_table(panel: &Panel, k_grid: &[usize], k_h: usize) -> Result<TailTable> {
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("empty k grid".into()));
    }
    let (t, n) = panel.values.shape();
    let eigs = panel_spectrum(&panel.values)?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &k in k_grid {
        if k + k_h + 1 > eigs.len() {
            notes.push(format!(
                "k = {k}: tail of {} eigenvalues is too short for k_h = {k_h}",
                eigs.len().saturating_sub(k)
            ));
            continue;
        }
        let tail = &eigs[k..];
        let (_, big_r_k) = effective_ranks(&eigs, k)?;
        rows.push(TailRow {
            k,
            big_r_k,
            t_over_r_k: t as f64 / big_r_k,
            hill: hill_estimator(tail, k_h)?,
            logrank: logrank_estimator(tail)?,
            concentration: concentration(&eigs, k)?,
        });
    }
    let split_by_b = [0.5, 1.0, 2.0]
        .into_iter()
        .map(|b| split_index(&eigs, t, b).map(|s| (b, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TailTable {
        t,
        n,
        k_h,
        rows,
        notes,
        split_by_b,
        eigenvalues: eigs,
    })
}

/// `n` i.i.d. Pareto(α) draws with unit scale, sorted descending.
pub fn pareto_population(n: usize, alpha: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = 1.0 - r.random::<f64>();
            u.powf(-1.0 / alpha)
        })
        .collect();
    v.sort_by(|a, b| b.partial_cmp(a).expect("finite draws"));
    v
}

/// Log-log slope of the concentration of Pareto(α) spectra against their
/// size, using the mean of `log C` over `reps` draws per size.
pub fn concentration_growth_slope(alpha: f64, sizes: &[usize], reps: usize, seed: u64) -> Result<f64> {
    let log_c: Vec<f64> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let draws = par::map_indexed(reps, |r| {
                let s = rng::derive_seed(seed, (i * reps + r) as u64);
                concentration(&pareto_population(n, alpha, s), 0).map(f64::ln)
            });
            draws.into_iter().collect::<Result<Vec<_>>>().map(|v| mean(&v))
        })
        .collect::<Result<_>>()?;
    let log_n: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    simple_regression(&log_n, &log_c)
        .map(|(slope, _)| slope)
        .ok_or_else(|| Error::InvalidArgument("need at least two distinct sizes".into()))
}
