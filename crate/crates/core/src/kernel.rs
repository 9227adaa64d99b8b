//! Synthetic augmentation and the factor-structured kernel.
//!
//! A synthetic copy of a panel keeps the estimated common component `F̂Λ̂'`
//! and redraws the idiosyncratic part from `N(0, Ψ̂)`. Stacking `B` copies
//! next to the original predictors and fitting by minimum norm is, as
//! `B → ∞`, kernel ridge regression with `K = F̂ Λ̂'Λ̂ F̂'` and ridge
//! `tr(Ψ̂)`. Copies are indexed `b = 1, 2, ...` and copy `b` always draws
//! from stream `b` of the seed, so growing `B` never changes earlier copies.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorModelFit;
use crate::linalg::outer_gram;
use crate::{par, rng};

/// Copies per parallel work item when summing Gram contributions.
const GRAM_CHUNK: usize = 8;

/// Generator of synthetic copies for a fixed set of rows.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    common: DMatrix<f64>,
    noise_sd: DVector<f64>,
    seed: u64,
}

impl SyntheticSource {
    /// `common` is rows×N, `idio_var` holds ψ̂²_i.
    pub fn new(common: DMatrix<f64>, idio_var: &DVector<f64>, seed: u64) -> Result<Self> {
        if common.ncols() != idio_var.len() {
            return Err(Error::Dimension(format!(
                "{} common-component columns for {} idiosyncratic variances",
                common.ncols(),
                idio_var.len()
            )));
        }
        Ok(SyntheticSource {
            common,
            noise_sd: idio_var.map(|v| v.max(0.0).sqrt()),
            seed,
        })
    }

    pub fn from_fit(fit: &FactorModelFit, seed: u64) -> Self {
        SyntheticSource {
            common: fit.common_component(),
            noise_sd: fit.idio_var.map(|v| v.max(0.0).sqrt()),
            seed,
        }
    }

    pub fn rows(&self) -> usize {
        self.common.nrows()
    }

    pub fn cols(&self) -> usize {
        self.common.ncols()
    }

    /// Copy `b` (b ≥ 1), rows×N.
    pub fn block(&self, b: usize) -> DMatrix<f64> {
        let mut r = rng::stream(self.seed, b as u64);
        let mut out = self.common.clone();
        for t in 0..out.nrows() {
            for i in 0..out.ncols() {
                out[(t, i)] += self.noise_sd[i] * rng::normal(&mut r);
            }
        }
        out
    }

    /// `Σ_{b ∈ blocks} X*(b)[:, ..cols] X*(b)[:, ..cols]'`.
    ///
    /// Copies are summed in fixed chunks and the chunk totals are added in
    /// index order, so the result does not depend on the thread count.
    pub fn gram_sum(&self, blocks: Range<usize>, cols: usize) -> DMatrix<f64> {
        let n = self.rows();
        let starts: Vec<usize> = blocks.clone().step_by(GRAM_CHUNK).collect();
        let partials = par::map_slice(&starts, |&start| {
            let end = (start + GRAM_CHUNK).min(blocks.end);
            let mut g = DMatrix::zeros(n, n);
            for b in start..end {
                let block = self.block(b);
                let view = block.columns(0, cols.min(self.cols()));
                g.gemm(1.0, &view, &view.transpose(), 1.0);
            }
            g
        });
        partials.into_iter().fold(DMatrix::zeros(n, n), |acc, g| acc + g)
    }
}

/// The original predictors followed by `B` synthetic copies.
#[derive(Debug, Clone)]
pub struct AugmentedDesign {
    /// T×(B+1)N.
    pub z: DMatrix<f64>,
    pub copies: usize,
    pub seed: u64,
}

pub fn gen_augmented(x: &DMatrix<f64>, fit: &FactorModelFit, copies: usize, seed: u64) -> Result<AugmentedDesign> {
    if x.shape() != fit.residuals.shape() {
        return Err(Error::Dimension(format!(
            "panel is {:?} but the factor fit is {:?}",
            x.shape(),
            fit.residuals.shape()
        )));
    }
    let (t, n) = x.shape();
    let source = SyntheticSource::from_fit(fit, seed);
    let blocks = par::map_indexed(copies, |i| source.block(i + 1));
    let mut z = DMatrix::zeros(t, (copies + 1) * n);
    z.columns_mut(0, n).copy_from(x);
    for (i, block) in blocks.iter().enumerate() {
        z.columns_mut((i + 1) * n, n).copy_from(block);
    }
    Ok(AugmentedDesign { z, copies, seed })
}

/// Expected Gram of one synthetic copy: `F̂Λ̂'Λ̂F̂' + tr(Ψ̂) I`.
pub fn expected_gram(fit: &FactorModelFit) -> DMatrix<f64> {
    let t = fit.factors.nrows();
    let fm = &fit.factors * fit.loading_gram();
    let mut g = DMatrix::zeros(t, t);
    g.gemm(1.0, &fm, &fit.factors.transpose(), 0.0);
    let trace = fit.idio_var.sum();
    for i in 0..t {
        g[(i, i)] += trace;
    }
    g
}

/// Relative Frobenius distance between `(1/B) Σ_b X*(b) X*(b)'` and
/// [`expected_gram`] for each `B` in an increasing grid.
pub fn gram_concentration_check(
    x: &DMatrix<f64>,
    fit: &FactorModelFit,
    b_grid: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if x.shape() != fit.residuals.shape() {
        return Err(Error::Dimension("panel and factor fit disagree".into()));
    }
    if b_grid.windows(2).any(|w| w[0] >= w[1]) || b_grid.first() == Some(&0) {
        return Err(Error::InvalidArgument("B grid must be positive and increasing".into()));
    }
    let target = expected_gram(fit);
    let norm = target.norm();
    let source = SyntheticSource::from_fit(fit, seed);
    let mut acc = DMatrix::zeros(x.nrows(), x.nrows());
    let mut done = 0;
    let mut out = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        acc += source.gram_sum(done + 1..b + 1, source.cols());
        done = b;
        let err = if norm > 0.0 {
            (&acc / b as f64 - &target).norm() / norm
        } else {
            (&acc / b as f64).norm()
        };
        out.push((b, err));
    }
    Ok(out)
}

/// `K(t, s) = f̂_t' M f̂_s` over a window, with `M = Λ̂'Λ̂` and ridge `tr(Ψ̂)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorKernel {
    pub k: DMatrix<f64>,
    pub ridge: f64,
    /// Factor path over the window (W×k); empty for kernels built directly.
    pub factors: DMatrix<f64>,
    /// `Λ̂'Λ̂`.
    pub metric: DMatrix<f64>,
}

impl FactorKernel {
    /// A kernel given as a matrix, without a factor representation.
    pub fn from_matrix(k: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::Dimension("kernel matrix must be square".into()));
        }
        if ridge < 0.0 {
            return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
        }
        let w = k.nrows();
        Ok(FactorKernel {
            k,
            ridge,
            factors: DMatrix::zeros(w, 0),
            metric: DMatrix::zeros(0, 0),
        })
    }

    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    /// `k_s = f̂_s' M f_new` for every window date `s`.
    pub fn kernel_vector(&self, f_new: &DVector<f64>) -> Result<DVector<f64>> {
        if self.factors.ncols() == 0 || f_new.len() != self.factors.ncols() {
            return Err(Error::Dimension(format!(
                "factor vector of length {} for a kernel with {} factors",
                f_new.len(),
                self.factors.ncols()
            )));
        }
        Ok(&self.factors * (&self.metric * f_new))
    }
}

pub fn build_factor_kernel(fit: &FactorModelFit, window: &[usize]) -> Result<FactorKernel> {
    let t = fit.factors.nrows();
    if let Some(&bad) = window.iter().find(|&&i| i >= t) {
        return Err(Error::InvalidArgument(format!(
            "window index {bad} outside a factor path of length {t}"
        )));
    }
    let k = fit.k;
    let mut factors = DMatrix::zeros(window.len(), k);
    for (row, &i) in window.iter().enumerate() {
        factors.set_row(row, &fit.factors.row(i));
    }
    let metric = fit.loading_gram();
    let fm = &factors * &metric;
    let mut kmat = DMatrix::zeros(window.len(), window.len());
    kmat.gemm(1.0, &fm, &factors.transpose(), 0.0);
    let kmat = (&kmat + kmat.transpose()) * 0.5;
    Ok(FactorKernel {
        k: kmat,
        ridge: fit.idio_var.sum(),
        factors,
        metric,
    })
}

/// Cholesky factor of a symmetric matrix that must be numerically
/// positive definite.
pub fn spd_factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let scale = m.diagonal().amax();
    let chol = Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if n > 0 && !(min_pivot > n as f64 * f64::EPSILON * scale) {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(chol)
}

/// `(K + λI)` factored once; predictions `k'(K + λI)⁻¹ y` for many `k`.
#[derive(Debug, Clone)]
pub struct KrrSolver {
    alpha: DVector<f64>,
}

impl KrrSolver {
    pub fn new(kernel: &FactorKernel, y: &DVector<f64>) -> Result<Self> {
        if y.len() != kernel.size() {
            return Err(Error::Dimension(format!(
                "{} responses for a {}×{} kernel",
                y.len(),
                kernel.size(),
                kernel.size()
            )));
        }
        let mut m = kernel.k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += kernel.ridge;
        }
        let chol = spd_factor(m, "K + λI").map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!("{msg}; a positive ridge is required")),
            other => other,
        })?;
        Ok(KrrSolver { alpha: chol.solve(y) })
    }

    /// Dual coefficients `(K + λI)⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn predict(&self, k_new: &DVector<f64>) -> Result<f64> {
        if k_new.len() != self.alpha.len() {
            return Err(Error::Dimension(format!(
                "kernel vector of length {} for window {}",
                k_new.len(),
                self.alpha.len()
            )));
        }
        Ok(k_new.dot(&self.alpha))
    }
}

/// `ŷ = k'(K + λI)⁻¹ y`.
pub fn krr_predict(kernel: &FactorKernel, y: &DVector<f64>, k_new: &DVector<f64>) -> Result<f64> {
    KrrSolver::new(kernel, y)?.predict(k_new)
}

/// Minimum-norm prediction through the Gram matrix: `ŷ = k'(ZZ')⁻¹ y`
/// with `k_s = ⟨z_new, z_s⟩`.
pub fn min_norm_predict_dual(z: &DMatrix<f64>, y: &DVector<f64>, z_new: &DVector<f64>) -> Result<f64> {
    let (t, p) = z.shape();
    if p <= t {
        return Err(Error::InvalidArgument(format!(
            "dual prediction needs P > T, got T = {t}, P = {p}"
        )));
    }
    if y.len() != t || z_new.len() != p {
        return Err(Error::Dimension("response or new point has the wrong length".into()));
    }
    let chol = spd_factor(outer_gram(z), "ZZ'")?;
    let k = z * z_new;
    Ok(k.dot(&chol.solve(y)))
}

/// Predictions at rows `n_train..` from a Gram matrix over stacked
/// training and evaluation rows: `G[new, train] G[train, train]⁻¹ y`.
pub fn dual_predict_from_gram(gram: &DMatrix<f64>, n_train: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = gram.nrows();
    if y.len() != n_train || n_train > n {
        return Err(Error::Dimension("training block does not match the responses".into()));
    }
    let g_tr = gram.view((0, 0), (n_train, n_train)).into_owned();
    let chol = spd_factor(g_tr, "training Gram")?;
    let alpha = chol.solve(y);
    Ok(gram.view((n_train, 0), (n - n_train, n_train)) * alpha)
}

/// Minimum-norm predictions of an augmented design for a growing sequence
/// of copy counts, computed through running Gram sums.
///
/// `base` holds the non-synthetic columns (for instance a lag and the
/// original predictors) over the stacked rows; `source` generates copies
/// over the same rows. Every requested `B` must exceed the training size
/// in total column count for the dual form to apply.
pub fn augmented_dual_predictions(
    base: &DMatrix<f64>,
    source: &SyntheticSource,
    n_train: usize,
    y: &DVector<f64>,
    b_grid: &[usize],
) -> Result<Vec<DVector<f64>>> {
    if base.nrows() != source.rows() {
        return Err(Error::Dimension("base design and synthetic rows differ".into()));
    }
    if b_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("B grid must be nondecreasing".into()));
    }
    let mut gram = outer_gram(base);
    let mut done = 0;
    let mut out = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        gram += source.gram_sum(done + 1..b + 1, source.cols());
        done = b;
        out.push(dual_predict_from_gram(&gram, n_train, y)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{extract_factors_pca, simulate_factor_panel, FactorSimSpec};
    use crate::lab::fit_min_norm;

    fn toy_fit(factors: &[f64], loadings: &[f64], idio: &[f64]) -> FactorModelFit {
        let t = factors.len();
        let n = loadings.len();
        FactorModelFit {
            k: 1,
            loadings: DMatrix::from_column_slice(n, 1, loadings),
            factors: DMatrix::from_column_slice(t, 1, factors),
            idio_var: DVector::from_column_slice(idio),
            residuals: DMatrix::zeros(t, n),
        }
    }

    fn sim(seed: u64) -> (DMatrix<f64>, FactorModelFit, DVector<f64>) {
        let spec = FactorSimSpec::homoscedastic(40, 15, 2, 0.7);
        let s = simulate_factor_panel(&spec, seed).unwrap();
        let fit = extract_factors_pca(&s.x, 2).unwrap();
        (s.x, fit, s.y)
    }

    #[test]
    fn expected_gram_examples() {
        let fit = toy_fit(&[2.0, 3.0], &[1.0, 1.0], &[0.5, 0.5]);
        let g = expected_gram(&fit);
        assert_eq!(g[(0, 1)], 12.0);
        assert_eq!(g[(0, 0)], 9.0);
        let zero = toy_fit(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(expected_gram(&zero), DMatrix::zeros(2, 2));
    }

    #[test]
    fn augmentation_keeps_original_and_common_component() {
        let (x, fit, _) = sim(1);
        let aug = gen_augmented(&x, &fit, 0, 3).unwrap();
        assert_eq!(aug.z, x);
        let aug = gen_augmented(&x, &fit, 3, 3).unwrap();
        assert_eq!(aug.z.columns(0, 15).into_owned(), x);
        let noiseless = FactorModelFit {
            idio_var: DVector::zeros(15),
            ..fit.clone()
        };
        let aug = gen_augmented(&x, &noiseless, 2, 3).unwrap();
        let c = fit.common_component();
        for b in 1..=2 {
            assert_eq!(aug.z.columns(b * 15, 15).into_owned(), c);
        }
    }

    #[test]
    fn adding_copies_keeps_earlier_blocks() {
        let (x, fit, _) = sim(2);
        let a = gen_augmented(&x, &fit, 2, 9).unwrap();
        let b = gen_augmented(&x, &fit, 5, 9).unwrap();
        assert_eq!(a.z, b.z.columns(0, 45).into_owned());
    }

    #[test]
    fn synthetic_noise_concentrates() {
        let t = 10_000;
        let factors: Vec<f64> = (0..t).map(|i| (i as f64 * 0.1).sin()).collect();
        let fit = FactorModelFit {
            residuals: DMatrix::zeros(t, 3),
            ..toy_fit(&factors, &[1.0, -0.5, 2.0], &[0.25, 1.0, 4.0])
        };
        let x = fit.common_component();
        let aug = gen_augmented(&x, &fit, 2, 5).unwrap();
        let c = fit.common_component();
        for b in 1..=2 {
            let diff = aug.z.columns(b * 3, 3) - &c;
            for i in 0..3 {
                let m = diff.column(i).mean();
                let psi = fit.idio_var[i].sqrt();
                assert!(m.abs() < 4.0 * psi / (t as f64).sqrt());
            }
        }
    }

    #[test]
    fn gram_check_examples() {
        let (x, fit, _) = sim(3);
        let errs = gram_concentration_check(&x, &fit, &[1, 10, 40, 160], 4).unwrap();
        assert!(errs[0].1 > 0.0);
        assert!(errs[3].1 < 0.5 * errs[1].1);
        let noiseless = FactorModelFit {
            idio_var: DVector::zeros(15),
            ..fit
        };
        for (_, e) in gram_concentration_check(&x, &noiseless, &[1, 5], 4).unwrap() {
            assert!(e < 1e-12);
        }
    }

    #[test]
    fn factor_kernel_example() {
        let fit = toy_fit(&[1.0, -1.0, 0.0], &[1.0, 1.0], &[0.3, 0.2]);
        let kern = build_factor_kernel(&fit, &[0, 1, 2]).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, -2.0, 0.0, -2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(kern.k, expected);
        assert!((kern.ridge - 0.5).abs() < 1e-15);
        assert!(build_factor_kernel(&fit, &[3]).is_err());
    }

    #[test]
    fn kernel_is_low_rank_psd_and_rotation_invariant() {
        let (_, fit, _) = sim(5);
        let window: Vec<usize> = (0..40).collect();
        let kern = build_factor_kernel(&fit, &window).unwrap();
        let (eigs, _) = crate::linalg::sym_eigen_desc(&kern.k);
        assert!(eigs[eigs.len() - 1] > -1e-10 * eigs[0]);
        assert!(eigs.iter().skip(2).all(|&e| e.abs() < 1e-9 * eigs[0]));
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let q = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        let rotated = build_factor_kernel(&fit.rotate(&q), &window).unwrap();
        assert!((rotated.k - &kern.k).amax() < 1e-10 * kern.k.amax());
    }

    #[test]
    fn krr_examples() {
        let kern = FactorKernel::from_matrix(DMatrix::identity(2, 2), 1.0).unwrap();
        let y = DVector::from_vec(vec![2.0, 4.0]);
        let p = krr_predict(&kern, &y, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((p - 1.0).abs() < 1e-14);

        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let near = FactorKernel::from_matrix(k.clone(), 1e-10).unwrap();
        let p = krr_predict(&near, &y, &k.row(1).transpose()).unwrap();
        assert!((p - 4.0).abs() < 1e-8);

        let c = 7.5;
        let scaled = FactorKernel::from_matrix(&k * c, 0.3 * c).unwrap();
        let base = FactorKernel::from_matrix(k.clone(), 0.3).unwrap();
        let kn = DVector::from_vec(vec![0.2, -1.0]);
        let a = krr_predict(&base, &y, &kn).unwrap();
        let b = krr_predict(&scaled, &y, &(&kn * c)).unwrap();
        assert!((a - b).abs() < 1e-12);

        let singular = FactorKernel::from_matrix(DMatrix::from_element(2, 2, 1.0), 0.0).unwrap();
        assert!(matches!(krr_predict(&singular, &y, &kn), Err(Error::Singular(_))));
    }

    #[test]
    fn dual_matches_primal() {
        let mut r = rng::stream(17, 0);
        let z = DMatrix::from_fn(8, 30, |_, _| rng::normal(&mut r));
        let y = DVector::from_fn(8, |_, _| rng::normal(&mut r));
        let z_new = DVector::from_fn(30, |_, _| rng::normal(&mut r));
        let primal = z_new.dot(&fit_min_norm(&z, &y).unwrap().coefficients);
        let dual = min_norm_predict_dual(&z, &y, &z_new).unwrap();
        assert!((primal - dual).abs() < 1e-9);
        let row = z.row(3).transpose();
        assert!((min_norm_predict_dual(&z, &y, &row).unwrap() - y[3]).abs() < 1e-9);
        assert!(min_norm_predict_dual(&z.columns(0, 8).into_owned(), &y, &z_new.rows(0, 8).into_owned()).is_err());
    }

    #[test]
    fn gram_sum_is_thread_independent() {
        let (_, fit, _) = sim(6);
        let source = SyntheticSource::from_fit(&fit, 8);
        let a = source.gram_sum(1..30, 15);
        let b = par::run_sequential(|| source.gram_sum(1..30, 15));
        assert_eq!(a, b);
        let mut c = DMatrix::zeros(40, 40);
        for bl in 1..30 {
            c += outer_gram(&source.block(bl));
        }
        assert!((a - c).amax() < 1e-9);
    }

    #[test]
    fn accumulated_dual_matches_explicit_design() {
        let (x, fit, y) = sim(7);
        let n_train = 30;
        let source = SyntheticSource::from_fit(&fit, 11);
        let preds =
            augmented_dual_predictions(&x, &source, n_train, &y.rows(0, n_train).into_owned(), &[2, 4]).unwrap();
        let aug = gen_augmented(&x, &fit, 4, 11).unwrap();
        let z_tr = aug.z.rows(0, n_train).into_owned();
        let beta = fit_min_norm(&z_tr, &y.rows(0, n_train).into_owned())
            .unwrap()
            .coefficients;
        let direct = aug.z.rows(n_train, 10) * beta;
        assert!((&preds[1] - direct).amax() < 1e-7);
    }
}
