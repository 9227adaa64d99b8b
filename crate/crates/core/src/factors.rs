//! Static factor model by principal components.
//!
//! Normalization follows the Stock–Watson convention: `F'F / T = I_k` and
//! `Λ = X'F / T`, so `Λ'Λ` carries the spike scale. The eigenproblem is solved
//! on whichever of `XX'/T` (T×T) and `X'X/T` (N×N) is smaller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Frequency, Panel, Period};
use crate::linalg::sym_eigen_desc;
use crate::rng;

/// Eigen-decomposition of a panel, reusable across factor counts.
#[derive(Debug, Clone)]
pub struct PcaDecomposition {
    x: DMatrix<f64>,
    /// Eigenvalues of the smaller of `XX'/T` and `X'X/T`, descending.
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    time_side: bool,
}

impl PcaDecomposition {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (t, n) = x.shape();
        let tf = t as f64;
        let time_side = t < n;
        let gram = if time_side {
            let mut g = DMatrix::zeros(t, t);
            g.gemm(1.0 / tf, x, &x.transpose(), 0.0);
            g
        } else {
            x.tr_mul(x) / tf
        };
        let (mut eigenvalues, eigenvectors) = sym_eigen_desc(&gram);
        eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
        PcaDecomposition {
            x: x.clone(),
            eigenvalues,
            eigenvectors,
            time_side,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Numerical rank of the panel.
    pub fn rank(&self) -> usize {
        let (t, n) = self.x.shape();
        let top = self.eigenvalues.get(0).copied().unwrap_or(0.0);
        let tol = top * t.max(n) as f64 * f64::EPSILON * 10.0;
        self.eigenvalues.iter().filter(|&&d| d > tol).count()
    }

    /// Mean squared residual `V(k)` of the rank-k fit.
    pub fn residual_variance(&self, k: usize) -> f64 {
        let n = self.x.ncols() as f64;
        let tail: f64 = self.eigenvalues.iter().skip(k).sum();
        tail.max(0.0) / n
    }

    /// Bai–Ng `IC_p2` over `k = 1..=k_max`:
    /// `ln V(k) + k (N + T)/(N T) ln min(N, T)`.
    pub fn select_k_bai_ng(&self, k_max: usize) -> Result<BaiNgSelection> {
        let (t, n) = self.x.shape();
        if k_max < 1 || k_max + 1 > t.min(n) {
            return Err(Error::InvalidArgument(format!(
                "k_max = {k_max} must lie in 1..=min(T, N) - 1 = {}",
                t.min(n).saturating_sub(1)
            )));
        }
        let (tf, nf) = (t as f64, n as f64);
        let penalty = (nf + tf) / (nf * tf) * nf.min(tf).ln();
        let floor = 1e-12 * self.residual_variance(0);
        let mut criteria = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let v = self.residual_variance(k);
            if v <= floor {
                log::warn!("noiseless panel: V({k}) = 0, selecting k = {k}");
                return Ok(BaiNgSelection {
                    k,
                    degenerate: true,
                    criteria,
                });
            }
            criteria.push(v.ln() + k as f64 * penalty);
        }
        let mut best = 0;
        for (i, c) in criteria.iter().enumerate() {
            if *c < criteria[best] {
                best = i;
            }
        }
        Ok(BaiNgSelection {
            k: best + 1,
            degenerate: false,
            criteria,
        })
    }

    /// Extracts `k` factors.
    pub fn fit(&self, k: usize) -> Result<FactorModelFit> {
        let (t, n) = self.x.shape();
        if k < 1 || k > t.min(n) {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in 1..=min(T, N) = {}",
                t.min(n)
            )));
        }
        let rank = self.rank();
        if k > rank {
            return Err(Error::RankDeficient { requested: k, rank });
        }
        let tf = t as f64;
        let mut factors = DMatrix::zeros(t, k);
        let mut loadings = DMatrix::zeros(n, k);
        for j in 0..k {
            let v = self.eigenvectors.column(j);
            let d = self.eigenvalues[j];
            if self.time_side {
                factors.set_column(j, &(v * tf.sqrt()));
            } else {
                let f = &self.x * v / d.sqrt();
                factors.set_column(j, &f);
            }
        }
        loadings.gemm(1.0 / tf, &self.x.transpose(), &factors, 0.0);
        // sign: largest-magnitude loading of each factor is positive
        for j in 0..k {
            let col = loadings.column(j);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                loadings.column_mut(j).neg_mut();
                factors.column_mut(j).neg_mut();
            }
        }
        let residuals = &self.x - &factors * loadings.transpose();
        let idio_var = column_mean_squares(&residuals);
        Ok(FactorModelFit {
            k,
            loadings,
            factors,
            idio_var,
            residuals,
        })
    }
}

fn column_mean_squares(m: &DMatrix<f64>) -> DVector<f64> {
    let t = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared() / t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaiNgSelection {
    pub k: usize,
    /// Set when some `V(k)` is zero (noiseless panel).
    pub degenerate: bool,
    /// `IC_p2(k)` for `k = 1..` as far as evaluated.
    pub criteria: Vec<f64>,
}

/// Estimated loadings, factor path and idiosyncratic variances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorModelFit {
    pub k: usize,
    /// N×k.
    pub loadings: DMatrix<f64>,
    /// T×k, rows are `f_t'`.
    pub factors: DMatrix<f64>,
    /// ψ²_i = (1/T) Σ_t e²_it.
    pub idio_var: DVector<f64>,
    /// T×N, `X - F Λ'`.
    pub residuals: DMatrix<f64>,
}

impl FactorModelFit {
    /// Common component `F Λ'` (T×N).
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }

    /// `Λ'Λ` (k×k), the metric of the factor kernel.
    pub fn loading_gram(&self) -> DMatrix<f64> {
        self.loadings.tr_mul(&self.loadings)
    }

    /// Factor scores of new rows by least-squares projection on the
    /// loadings, `x Λ (Λ'Λ)⁻¹`. Reproduces the in-sample factors exactly.
    pub fn project(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.loadings.nrows() {
            return Err(Error::Dimension(format!(
                "{} columns for {} loadings",
                rows.ncols(),
                self.loadings.nrows()
            )));
        }
        let g = self.loading_gram();
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::Singular("loading Gram Λ'Λ is not positive definite".into()))?;
        let xl = rows * &self.loadings;
        Ok(chol.solve(&xl.transpose()).transpose())
    }

    /// Replaces (F, Λ) by (F Q, Λ Q). Residuals are unchanged.
    pub fn rotate(&self, q: &DMatrix<f64>) -> FactorModelFit {
        FactorModelFit {
            k: self.k,
            loadings: &self.loadings * q,
            factors: &self.factors * q,
            idio_var: self.idio_var.clone(),
            residuals: self.residuals.clone(),
        }
    }
}

/// Principal-components factor extraction with `k` factors.
pub fn extract_factors_pca(x: &DMatrix<f64>, k: usize) -> Result<FactorModelFit> {
    PcaDecomposition::new(x).fit(k)
}

/// Bai–Ng `IC_p2` factor count over `1..=k_max`.
pub fn select_k_bai_ng(x: &DMatrix<f64>, k_max: usize) -> Result<BaiNgSelection> {
    PcaDecomposition::new(x).select_k_bai_ng(k_max)
}

/// ψ̂²_i = (1/T) Σ_t ê²_it.
pub fn idio_variances(fit: &FactorModelFit) -> DVector<f64> {
    column_mean_squares(&fit.residuals)
}

/// Population spectrum of a simulated design, in its eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spectrum {
    Isotropic {
        scale: f64,
    },
    /// λ_j = q^(j-1).
    Geometric {
        q: f64,
    },
    /// λ_j = q^(j-1) for j ≤ head_size, τ afterwards.
    FlatTail {
        q: f64,
        head_size: usize,
        tail_level: f64,
    },
}

impl Spectrum {
    pub fn eigenvalues(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| match *self {
                Spectrum::Isotropic { scale } => scale,
                Spectrum::Geometric { q } => q.powi(j as i32),
                Spectrum::FlatTail {
                    q,
                    head_size,
                    tail_level,
                } => {
                    if j < head_size {
                        q.powi(j as i32)
                    } else {
                        tail_level
                    }
                }
            })
            .collect()
    }
}

/// Gaussian design `x ~ N(0, diag(λ))` with `y = x'β* + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub t: usize,
    pub n: usize,
    pub spectrum: Spectrum,
    /// β* restricted to its support, the first `signal.len()` coordinates.
    pub signal: Vec<f64>,
    pub noise_sd: f64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal.len() > self.n {
            return Err(Error::InvalidArgument(format!(
                "signal support {} exceeds N = {}",
                self.signal.len(),
                self.n
            )));
        }
        match self.spectrum {
            Spectrum::Isotropic { scale } if scale <= 0.0 => {
                Err(Error::InvalidArgument("isotropic scale must be positive".into()))
            }
            Spectrum::Geometric { q } | Spectrum::FlatTail { q, .. } if !(q > 0.0 && q < 1.0) => {
                Err(Error::InvalidArgument(format!("decay q = {q} outside (0, 1)")))
            }
            Spectrum::FlatTail { tail_level, .. } if tail_level <= 0.0 => {
                Err(Error::InvalidArgument("tail level must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn beta(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.n);
        for (i, &v) in self.signal.iter().enumerate() {
            b[i] = v;
        }
        b
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.spectrum.eigenvalues(self.n)
    }

    /// Draws a T×N design from stream `stream` of `seed`.
    pub fn draw_design(&self, seed: u64, stream: u64) -> DMatrix<f64> {
        let sd: Vec<f64> = self.eigenvalues().iter().map(|l| l.sqrt()).collect();
        let mut r = rng::stream(seed, stream);
        let mut x = DMatrix::zeros(self.t, self.n);
        for i in 0..self.t {
            for j in 0..self.n {
                x[(i, j)] = sd[j] * rng::normal(&mut r);
            }
        }
        x
    }
}

/// Draws `(X, y)` for a [`SimSpec`]; deterministic in `seed`.
pub fn simulate_panel(spec: &SimSpec, seed: u64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    spec.validate()?;
    let x = spec.draw_design(seed, 0);
    let mut y = &x * spec.beta();
    if spec.noise_sd > 0.0 {
        let mut r = rng::stream(seed, 1);
        y.iter_mut().for_each(|v| *v += spec.noise_sd * rng::normal(&mut r));
    }
    Ok((x, y))
}

/// Exact factor panel `x_t = Λ f_t + e_t` with a forecast target
/// `y_{t+h} = φ y_t + γ' f_t + ε_{t+h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSimSpec {
    pub t: usize,
    pub n: usize,
    pub k: usize,
    pub loading_sd: f64,
    /// One idiosyncratic standard deviation per series, or a single value
    /// repeated for a homoscedastic panel.
    pub idio_sd: Vec<f64>,
    /// AR(1) coefficient of each factor (unit stationary variance).
    pub factor_persistence: f64,
    pub target_ar: f64,
    pub target_loadings: Vec<f64>,
    pub target_noise_sd: f64,
    pub horizon: usize,
}

impl FactorSimSpec {
    pub fn homoscedastic(t: usize, n: usize, k: usize, idio_sd: f64) -> Self {
        FactorSimSpec {
            t,
            n,
            k,
            loading_sd: 1.0,
            idio_sd: vec![idio_sd],
            factor_persistence: 0.0,
            target_ar: 0.0,
            target_loadings: vec![1.0; k],
            target_noise_sd: 1.0,
            horizon: 1,
        }
    }

    fn idio(&self, i: usize) -> f64 {
        if self.idio_sd.len() == 1 {
            self.idio_sd[0]
        } else {
            self.idio_sd[i]
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorSample {
    pub x: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl FactorSample {
    /// Panel with the target in column `y` followed by `x1..xN`, dated
    /// monthly from 1960-01.
    pub fn to_panel(&self) -> Panel {
        let (t, n) = self.x.shape();
        let dates = (0..t)
            .map(|i| Period::new(1960 + (i / 12) as i32, (i % 12) as u32 + 1).to_string())
            .collect();
        let names = std::iter::once("y".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        let mut values = DMatrix::zeros(t, n + 1);
        values.set_column(0, &self.y);
        values.columns_mut(1, n).copy_from(&self.x);
        Panel::new(dates, names, values, Frequency::Monthly).expect("simulated panel is complete")
    }
}

pub fn simulate_factor_panel(spec: &FactorSimSpec, seed: u64) -> Result<FactorSample> {
    if spec.idio_sd.len() != 1 && spec.idio_sd.len() != spec.n {
        return Err(Error::InvalidArgument("idio_sd needs 1 or N entries".into()));
    }
    if spec.target_loadings.len() != spec.k || spec.horizon == 0 {
        return Err(Error::InvalidArgument(
            "target loadings need k entries, horizon ≥ 1".into(),
        ));
    }
    let (t, n, k) = (spec.t, spec.n, spec.k);
    let mut r = rng::stream(seed, 0);
    let loadings = DMatrix::from_fn(n, k, |_, _| spec.loading_sd * rng::normal(&mut r));
    let rho = spec.factor_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let mut r = rng::stream(seed, 1);
    let mut factors = DMatrix::zeros(t, k);
    for j in 0..k {
        factors[(0, j)] = rng::normal(&mut r);
        for i in 1..t {
            factors[(i, j)] = rho * factors[(i - 1, j)] + innov * rng::normal(&mut r);
        }
    }
    let mut x = &factors * loadings.transpose();
    let mut r = rng::stream(seed, 2);
    for i in 0..t {
        for j in 0..n {
            x[(i, j)] += spec.idio(j) * rng::normal(&mut r);
        }
    }
    let gamma = DVector::from_column_slice(&spec.target_loadings);
    let signal = &factors * gamma;
    let mut r = rng::stream(seed, 3);
    let mut y = DVector::zeros(t);
    for i in 0..t {
        let noise = spec.target_noise_sd * rng::normal(&mut r);
        y[i] = if i >= spec.horizon {
            spec.target_ar * y[i - spec.horizon] + signal[i - spec.horizon] + noise
        } else {
            noise
        };
    }
    Ok(FactorSample {
        x,
        factors,
        loadings,
        y,
    })
}
