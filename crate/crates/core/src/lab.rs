//! Minimum-norm and ridge estimation, Monte Carlo risk decomposition and
//! the double-descent sweep.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{PcaDecomposition, SimSpec};
use crate::ingest::Panel;
use crate::kernel::{dual_predict_from_gram, FactorKernel, KrrSolver, SyntheticSource};
use crate::linalg::{mean, mean_and_se, outer_gram, pinv_solve, pinv_tolerance, sample_std, sym_eigen_desc};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Under,
    Interpolation,
    Over,
}

impl Regime {
    pub fn of(t: usize, p: usize) -> Regime {
        match p.cmp(&t) {
            std::cmp::Ordering::Less => Regime::Under,
            std::cmp::Ordering::Equal => Regime::Interpolation,
            std::cmp::Ordering::Greater => Regime::Over,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgelessFit {
    pub coefficients: DVector<f64>,
    pub regime: Regime,
    /// Singular-value cutoff used for rank decisions.
    pub rank_tolerance: f64,
    pub rank: usize,
    /// Set when the nominal full-rank solve was abandoned for the
    /// thresholded SVD pseudoinverse.
    pub pseudoinverse_fallback: bool,
}

impl RidgelessFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.coefficients
    }
}

/// `β̂ = X⁺ y`: least squares when `P < T`, the minimum-norm interpolant
/// when `P ≥ T`.
///
/// Full-rank designs are solved by QR of `X` (P ≤ T) or of `X'` (P > T).
/// A numerically rank-deficient triangular factor triggers the SVD
/// pseudoinverse with cutoff `max(T, P)·ε·σ_max`, and the fit is flagged.
pub fn fit_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RidgelessFit> {
    let (t, p) = x.shape();
    if y.len() != t {
        return Err(Error::Dimension(format!("{t} design rows but {} responses", y.len())));
    }
    if t == 0 || p == 0 || x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("design matrix is zero or empty".into()));
    }
    let regime = Regime::of(t, p);
    let direct = match regime {
        Regime::Under | Regime::Interpolation => {
            let qr = x.clone().qr();
            let r = qr.r();
            full_rank_tolerance(&r, t, p).and_then(|tol| {
                let qty = qr.q().tr_mul(y);
                r.solve_upper_triangular(&qty).map(|b| (b, tol))
            })
        }
        Regime::Over => {
            let qr = x.transpose().qr();
            let r = qr.r();
            full_rank_tolerance(&r, t, p).and_then(|tol| r.tr_solve_upper_triangular(y).map(|z| (qr.q() * z, tol)))
        }
    };
    match direct {
        Some((coefficients, tol)) if coefficients.iter().all(|v| v.is_finite()) => Ok(RidgelessFit {
            coefficients,
            regime,
            rank_tolerance: tol,
            rank: t.min(p),
            pseudoinverse_fallback: false,
        }),
        _ => {
            let pinv = pinv_solve(x, y);
            log::debug!("rank-deficient {t}×{p} design: pseudoinverse with rank {}", pinv.rank);
            Ok(RidgelessFit {
                coefficients: pinv.solution,
                regime,
                rank_tolerance: pinv.tolerance,
                rank: pinv.rank,
                pseudoinverse_fallback: true,
            })
        }
    }
}

fn full_rank_tolerance(r: &DMatrix<f64>, t: usize, p: usize) -> Option<f64> {
    let diag = r.diagonal();
    let top = diag.amax();
    let tol = pinv_tolerance(t, p, top);
    (top > 0.0 && diag.iter().all(|d| d.abs() > tol)).then_some(tol)
}

/// `(X'X + λI)⁻¹ X'y`.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty {lambda} must be nonnegative"
        )));
    }
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} design rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let mut m = x.tr_mul(x);
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    let rhs = x.tr_mul(y);
    if lambda == 0.0 {
        let chol = crate::kernel::spd_factor(m, "X'X").map_err(|_| {
            Error::Singular("X'X is singular with λ = 0; use fit_min_norm for the ridgeless limit".into())
        })?;
        return Ok(chol.solve(&rhs));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular("X'X + λI is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Monte Carlo estimate of the out-of-sample risk and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub bias_sq: f64,
    pub variance: f64,
    /// σ².
    pub noise_floor: f64,
    pub msfe: f64,
    /// Standard error of `msfe`.
    pub mc_se: f64,
    pub bias_se: f64,
    pub variance_se: f64,
    pub reps: usize,
}

struct RiskDraw {
    bias_sq: f64,
    variance: f64,
    excess: f64,
}

/// Risk of the minimum-norm estimator that uses the first `p_used`
/// coordinates of a [`SimSpec`] design.
///
/// Each replication draws `(X, y)` and computes, conditionally on `X`, the
/// bias `‖Σ^{1/2}(X_S⁺Xβ* − β*)‖²` and variance `σ² tr(Σ_SS X_S⁺X_S⁺')`
/// exactly; the realized excess loss of `X_S⁺y` supplies the MSFE draw.
pub fn mc_risk(spec: &SimSpec, p_used: usize, reps: usize, seed: u64) -> Result<RiskEstimate> {
    spec.validate()?;
    if reps < 100 {
        return Err(Error::InvalidArgument(format!(
            "{reps} replications; at least 100 required"
        )));
    }
    if p_used == 0 || p_used > spec.n {
        return Err(Error::InvalidArgument(format!(
            "P_used = {p_used} outside 1..={}",
            spec.n
        )));
    }
    if p_used + 1 >= spec.t && p_used <= spec.t + 1 {
        log::warn!(
            "P_used = {p_used} is at the interpolation threshold T = {}; risk is near-singular",
            spec.t
        );
    }
    let lambda = spec.eigenvalues();
    let beta = spec.beta();
    let sigma2 = spec.noise_sd * spec.noise_sd;
    let draws = par::map_indexed(reps, |r| {
        let rep_seed = rng::derive_seed(seed, r as u64);
        let x = spec.draw_design(rep_seed, 0);
        let mut noise_rng = rng::stream(rep_seed, 1);
        let noise = DVector::from_fn(spec.t, |_, _| spec.noise_sd * rng::normal(&mut noise_rng));
        let signal = &x * &beta;
        let xs = x.columns(0, p_used).into_owned();
        let svd = SVD::new(xs, true, true);
        let s_max = svd.singular_values.amax();
        let tol = pinv_tolerance(spec.t, p_used, s_max);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let mut mean_coef = DVector::zeros(p_used);
        let mut realized = DVector::zeros(p_used);
        let mut variance = 0.0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let v = v_t.row(i).transpose();
            let u_i = u.column(i);
            mean_coef.axpy(u_i.dot(&signal) / s, &v, 1.0);
            realized.axpy(u_i.dot(&(&signal + &noise)) / s, &v, 1.0);
            let weighted: f64 = (0..p_used).map(|j| lambda[j] * v[j] * v[j]).sum();
            variance += weighted / (s * s);
        }
        let loss = |coef: &DVector<f64>| -> f64 {
            (0..spec.n)
                .map(|j| {
                    let b = if j < p_used { coef[j] } else { 0.0 };
                    lambda[j] * (b - beta[j]).powi(2)
                })
                .sum()
        };
        RiskDraw {
            bias_sq: loss(&mean_coef),
            variance: sigma2 * variance,
            excess: loss(&realized),
        }
    });
    let bias: Vec<f64> = draws.iter().map(|d| d.bias_sq).collect();
    let var: Vec<f64> = draws.iter().map(|d| d.variance).collect();
    let excess: Vec<f64> = draws.iter().map(|d| d.excess).collect();
    let (bias_sq, bias_se) = mean_and_se(&bias);
    let (variance, variance_se) = mean_and_se(&var);
    let (excess_mean, mc_se) = mean_and_se(&excess);
    Ok(RiskEstimate {
        bias_sq,
        variance,
        noise_floor: sigma2,
        msfe: excess_mean + sigma2,
        mc_se,
        bias_se,
        variance_se,
        reps,
    })
}

/// Monte Carlo mean and standard error of `tr((XX')⁻¹)` for a wide design.
pub fn mc_trace_inv_gram(spec: &SimSpec, reps: usize, seed: u64) -> Result<(f64, f64)> {
    spec.validate()?;
    if spec.n <= spec.t {
        return Err(Error::InvalidArgument("tr((XX')⁻¹) needs N > T".into()));
    }
    let draws: Vec<Result<f64>> = par::map_indexed(reps, |r| {
        let x = spec.draw_design(rng::derive_seed(seed, r as u64), 0);
        let chol = crate::kernel::spd_factor(outer_gram(&x), "XX'")?;
        Ok(chol.inverse().trace())
    });
    let values = draws.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    PcPath,
    AugmentPath,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::PcPath => "pc_path",
            Branch::AugmentPath => "augment_path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_eff: usize,
    /// Held-out MSFE in standardized units of the dependent variable.
    pub msfe: f64,
    pub branch: Branch,
    /// Number of complete synthetic copies (augment path only).
    pub copies: Option<usize>,
    /// The last copy contributes only some of its columns.
    pub partial: bool,
    /// The fit sits exactly at the interpolation threshold.
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub horizon: usize,
    /// Training pairs; defaults to half of the available pairs.
    pub train_len: Option<usize>,
    pub b_grid: Vec<usize>,
    /// Extra augment-path sizes reached with a partially used last copy.
    pub extra_n_eff: Vec<usize>,
    /// Factor count for the synthetic copies; Bai–Ng when absent.
    pub k_factors: Option<usize>,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            horizon: 1,
            train_len: None,
            b_grid: vec![1, 2, 4, 8, 16, 32],
            extra_n_eff: Vec::new(),
            k_factors: None,
            k_max: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleDescentCurve {
    pub target: String,
    pub horizon: usize,
    pub points: Vec<CurvePoint>,
    pub ar1_baseline: f64,
    pub kernel_asymptote: f64,
    /// `T_train`.
    pub interpolation_threshold: usize,
    pub t_test: usize,
    pub n_predictors: usize,
    pub k_factors: usize,
    /// Training standard deviation of the dependent variable; multiply a
    /// standardized MSFE by its square to return to data units.
    pub dep_scale: f64,
    pub dropped_columns: Vec<String>,
    pub seed: u64,
}

impl DoubleDescentCurve {
    pub fn branch(&self, branch: Branch) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(move |p| p.branch == branch)
    }

    pub fn point(&self, branch: Branch, n_eff: usize) -> Option<&CurvePoint> {
        self.branch(branch).find(|p| p.n_eff == n_eff)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_eff,msfe,branch,copies,partial,unstable\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.n_eff,
                p.msfe,
                p.branch.label(),
                p.copies.map(|c| c.to_string()).unwrap_or_default(),
                p.partial,
                p.unstable
            ));
        }
        out
    }
}

fn standardize_in_place(v: &mut [f64], train: usize) -> Option<(f64, f64)> {
    let m = mean(&v[..train]);
    let s = sample_std(&v[..train]);
    if !(s > 1e-12 * m.abs().max(1.0)) {
        return None;
    }
    v.iter_mut().for_each(|x| *x = (*x - m) / s);
    Some((m, s))
}

fn held_out_msfe(pred: &DVector<f64>, actual: &[f64]) -> f64 {
    pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / actual.len() as f64
}

fn primal_msfe(design: &DMatrix<f64>, dep: &[f64], train: usize) -> Result<f64> {
    let n_all = design.nrows();
    let y = DVector::from_column_slice(&dep[..train]);
    let fit = fit_min_norm(&design.rows(0, train).into_owned(), &y)?;
    let pred = design.rows(train, n_all - train) * &fit.coefficients;
    Ok(held_out_msfe(&pred, &dep[train..]))
}

/// Double-descent sweep of a single contiguous train/test split.
///
/// Pairs `(y_s, x_s) → y_{s+h}` are split into a training block and a
/// held-out block. The principal-components branch fits the lag plus the
/// first `r` principal components (`n_eff = r + 1`); the augmentation
/// branch fits the lag, every predictor and `B` synthetic copies
/// (`n_eff = (B+1)N + 1`). All fits are minimum norm and all variables
/// are standardized with training moments.
pub fn sweep_double_descent(panel: &Panel, target: &str, config: &SweepConfig) -> Result<DoubleDescentCurve> {
    let j_target = panel
        .column_index(target)
        .ok_or_else(|| Error::InvalidArgument(format!("target {target} is not in the panel")))?;
    let h = config.horizon;
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let t = panel.values.nrows();
    let n_pairs = t.saturating_sub(h);
    let train = config.train_len.unwrap_or(n_pairs / 2);
    if train < 3 || train >= n_pairs {
        return Err(Error::InvalidArgument(format!(
            "{n_pairs} pairs cannot be split with {train} training pairs"
        )));
    }
    let test = n_pairs - train;
    let y = panel.values.column(j_target);
    let mut dep: Vec<f64> = (0..n_pairs).map(|s| y[s + h]).collect();
    let mut lag: Vec<f64> = (0..n_pairs).map(|s| y[s]).collect();
    let (_, dep_scale) = standardize_in_place(&mut dep, train).ok_or(Error::DegenerateColumn { column: j_target })?;
    standardize_in_place(&mut lag, train).ok_or(Error::DegenerateColumn { column: j_target })?;

    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for j in (0..panel.values.ncols()).filter(|&j| j != j_target) {
        let mut col: Vec<f64> = (0..n_pairs).map(|s| panel.values[(s, j)]).collect();
        if standardize_in_place(&mut col, train).is_some() {
            columns.push(col);
        } else {
            log::warn!("dropping {}: constant over the training block", panel.names[j]);
            dropped.push(panel.names[j].clone());
        }
    }
    let n = columns.len();
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    let x_all = DMatrix::from_fn(n_pairs, n, |s, i| columns[i][s]);
    let x_tr = x_all.rows(0, train).into_owned();
    let lag_col = DVector::from_column_slice(&lag);

    // principal-components branch
    let (_, basis) = sym_eigen_desc(&x_tr.tr_mul(&x_tr));
    let scores = &x_all * basis;
    let pc = par::map_indexed(n, |i| {
        let r = i + 1;
        let mut design = DMatrix::zeros(n_pairs, r + 1);
        design.set_column(0, &lag_col);
        design.columns_mut(1, r).copy_from(&scores.columns(0, r));
        primal_msfe(&design, &dep, train).map(|msfe| CurvePoint {
            n_eff: r + 1,
            msfe,
            branch: Branch::PcPath,
            copies: None,
            partial: false,
            unstable: r + 1 == train,
        })
    });
    let mut points = pc.into_iter().collect::<Result<Vec<_>>>()?;

    let ar1_design = DMatrix::from_column_slice(n_pairs, 1, &lag);
    let ar1_baseline = primal_msfe(&ar1_design, &dep, train)?;

    // synthetic copies from a factor model of the training block
    let decomposition = PcaDecomposition::new(&x_tr);
    let k = match config.k_factors {
        Some(k) => k,
        None => {
            let k_max = config.k_max.min(train.min(n).saturating_sub(1)).max(1);
            decomposition.select_k_bai_ng(k_max)?.k
        }
    };
    let fit = decomposition.fit(k)?;
    let f_test = fit.project(&x_all.rows(train, test).into_owned())?;
    let mut f_all = DMatrix::zeros(n_pairs, k);
    f_all.rows_mut(0, train).copy_from(&fit.factors);
    f_all.rows_mut(train, test).copy_from(&f_test);
    let common = &f_all * fit.loadings.transpose();
    let source = SyntheticSource::new(common, &fit.idio_var, rng::derive_seed(config.seed, 1))?;

    let mut base = DMatrix::zeros(n_pairs, n + 1);
    base.set_column(0, &lag_col);
    base.columns_mut(1, n).copy_from(&x_all);

    let mut sizes: Vec<usize> = std::iter::once(0)
        .chain(config.b_grid.iter().copied())
        .map(|b| (b + 1) * n + 1)
        .chain(config.extra_n_eff.iter().copied().filter(|&m| m > n + 1))
        .collect();
    sizes.sort_unstable();
    sizes.dedup();

    let y_tr = DVector::from_column_slice(&dep[..train]);
    let mut gram = outer_gram(&base);
    let mut full_done = 0;
    for m in sizes {
        let synthetic_cols = m - 1 - n;
        let full = synthetic_cols / n;
        let extra = synthetic_cols % n;
        let msfe = if m <= train {
            let mut design = DMatrix::zeros(n_pairs, m);
            design.columns_mut(0, n + 1).copy_from(&base);
            for b in 1..=full {
                design.columns_mut(b * n + 1, n).copy_from(&source.block(b));
            }
            if extra > 0 {
                let block = source.block(full + 1);
                design
                    .columns_mut((full + 1) * n + 1, extra)
                    .copy_from(&block.columns(0, extra));
            }
            primal_msfe(&design, &dep, train)?
        } else {
            gram += source.gram_sum(full_done + 1..full + 1, n);
            full_done = full_done.max(full);
            let g = if extra > 0 {
                &gram + source.gram_sum(full + 1..full + 2, extra)
            } else {
                gram.clone()
            };
            let pred = dual_predict_from_gram(&g, train, &y_tr)?;
            held_out_msfe(&pred, &dep[train..])
        };
        points.push(CurvePoint {
            n_eff: m,
            msfe,
            branch: Branch::AugmentPath,
            copies: Some(full),
            partial: extra > 0,
            unstable: m == train,
        });
    }

    // the B → ∞ limit: kernel ridge regression on the factor kernel
    let metric = fit.loading_gram();
    let fm = &f_all * &metric;
    let k_all = &fm * f_all.transpose();
    let kernel = FactorKernel::from_matrix(k_all.view((0, 0), (train, train)).into_owned(), fit.idio_var.sum())?;
    let solver = KrrSolver::new(&kernel, &y_tr)?;
    let pred = k_all.view((train, 0), (test, train)) * solver.alpha();
    let kernel_asymptote = held_out_msfe(&pred, &dep[train..]);

    Ok(DoubleDescentCurve {
        target: target.to_string(),
        horizon: h,
        points,
        ar1_baseline,
        kernel_asymptote,
        interpolation_threshold: train,
        t_test: test,
        n_predictors: n,
        k_factors: k,
        dep_scale,
        dropped_columns: dropped,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{simulate_factor_panel, FactorSimSpec, Spectrum};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn min_norm_examples() {
        let fit = fit_min_norm(&DMatrix::identity(3, 3), &dv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(fit.regime, Regime::Interpolation);
        assert!((fit.coefficients - dv(&[1.0, 2.0, 3.0])).amax() < 1e-14);

        let fit = fit_min_norm(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &dv(&[2.0])).unwrap();
        assert_eq!(fit.regime, Regime::Over);
        assert!((fit.coefficients - dv(&[1.0, 1.0])).amax() < 1e-14);

        let fit = fit_min_norm(&DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), &dv(&[1.0, 3.0])).unwrap();
        assert_eq!(fit.regime, Regime::Under);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!(!fit.pseudoinverse_fallback);
    }

    #[test]
    fn zero_design_rejected_and_rank_deficiency_flagged() {
        assert!(fit_min_norm(&DMatrix::zeros(2, 2), &dv(&[1.0, 1.0])).is_err());
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let fit = fit_min_norm(&x, &dv(&[1.0, 2.0, 3.0])).unwrap();
        assert!(fit.pseudoinverse_fallback);
        assert_eq!(fit.rank, 1);
        assert!((fit.coefficients - dv(&[0.2, 0.4])).amax() < 1e-12);
    }

    #[test]
    fn ridge_examples() {
        let b = fit_ridge(&DMatrix::identity(2, 2), &dv(&[2.0, 4.0]), 1.0).unwrap();
        assert!((b - dv(&[1.0, 2.0])).amax() < 1e-14);
        let mut r = rng::stream(2, 0);
        let x = DMatrix::from_fn(20, 4, |_, _| rng::normal(&mut r));
        let y = DVector::from_fn(20, |_, _| rng::normal(&mut r));
        let ols = fit_min_norm(&x, &y).unwrap().coefficients;
        assert!((fit_ridge(&x, &y, 0.0).unwrap() - &ols).amax() < 1e-10);
        let mut last = f64::INFINITY;
        for lambda in [1e-2, 1e-4, 1e-6] {
            let d = (fit_ridge(&x, &y, lambda).unwrap() - &ols).norm();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-4);
        let singular = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(
            fit_ridge(&singular, &dv(&[1.0]), 0.0),
            Err(Error::Singular(_))
        ));
        assert!(fit_ridge(&singular, &dv(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn noiseless_variance_is_zero() {
        let spec = SimSpec {
            t: 30,
            n: 10,
            spectrum: Spectrum::Isotropic { scale: 1.0 },
            signal: vec![1.0, 0.5],
            noise_sd: 0.0,
        };
        let risk = mc_risk(&spec, 5, 100, 1).unwrap();
        assert_eq!(risk.variance, 0.0);
        assert!(risk.bias_sq > 0.0);
        assert!(mc_risk(&spec, 5, 10, 1).is_err());
    }

    #[test]
    fn underparameterized_variance_closed_form() {
        let spec = SimSpec {
            t: 50,
            n: 10,
            spectrum: Spectrum::Isotropic { scale: 1.0 },
            signal: vec![1.0],
            noise_sd: 1.0,
        };
        let risk = mc_risk(&spec, 10, 2000, 3).unwrap();
        assert!((risk.variance - 10.0 / 39.0).abs() < 3.0 * risk.variance_se);
        assert!(risk.bias_sq < 1e-20);
    }

    #[test]
    fn sweep_structure_on_simulated_panel() {
        let mut spec = FactorSimSpec::homoscedastic(121, 20, 2, 1.0);
        spec.target_ar = 0.3;
        let sample = simulate_factor_panel(&spec, 3).unwrap();
        let panel = sample.to_panel();
        let config = SweepConfig {
            b_grid: vec![1, 2, 4],
            extra_n_eff: vec![60],
            ..SweepConfig::default()
        };
        let curve = sweep_double_descent(&panel, "y", &config).unwrap();
        assert_eq!(curve.interpolation_threshold, 60);
        for branch in [Branch::PcPath, Branch::AugmentPath] {
            let ns: Vec<usize> = curve.branch(branch).map(|p| p.n_eff).collect();
            assert!(ns.windows(2).all(|w| w[0] < w[1]));
        }
        let pc: Vec<usize> = curve.branch(Branch::PcPath).map(|p| p.n_eff).collect();
        assert_eq!(pc, (2..=21).collect::<Vec<_>>());
        let aug: Vec<usize> = curve.branch(Branch::AugmentPath).map(|p| p.n_eff).collect();
        assert_eq!(aug, vec![21, 41, 60, 61, 101]);
        assert!(curve.point(Branch::AugmentPath, 60).unwrap().unstable);
        let end_pc = curve.point(Branch::PcPath, 21).unwrap().msfe;
        let start_aug = curve.point(Branch::AugmentPath, 21).unwrap().msfe;
        assert!((end_pc - start_aug).abs() < 1e-9 * end_pc);
        assert!(curve.to_csv().starts_with("n_eff,msfe,branch"));
        assert!(sweep_double_descent(&panel, "nope", &config).is_err());
    }

    #[test]
    fn sweep_rejects_constant_target() {
        let mut spec = FactorSimSpec::homoscedastic(40, 5, 1, 1.0);
        spec.target_noise_sd = 0.0;
        spec.target_loadings = vec![0.0];
        let panel = simulate_factor_panel(&spec, 1).unwrap().to_panel();
        assert!(matches!(
            sweep_double_descent(&panel, "y", &SweepConfig::default()),
            Err(Error::DegenerateColumn { .. })
        ));
    }
}
