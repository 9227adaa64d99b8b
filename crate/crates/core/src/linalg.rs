//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Ties keep their original index order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    // symmetrize to kill round-off asymmetry from products like X'X
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values below `max(rows, cols) * eps * s_max` are treated as zero.
pub fn pinv_tolerance(rows: usize, cols: usize, s_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * s_max
}

/// Tolerance-thresholded pseudoinverse solution `X⁺ y` via SVD.
#[derive(Debug, Clone)]
pub struct PinvSolution {
    pub solution: DVector<f64>,
    pub rank: usize,
    pub tolerance: f64,
}

pub fn pinv_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> PinvSolution {
    let (rows, cols) = x.shape();
    let svd = SVD::new(x.clone(), true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = pinv_tolerance(rows, cols, s_max);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut solution = DVector::zeros(cols);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            rank += 1;
            let coef = u.column(i).dot(y) / s;
            solution.axpy(coef, &v_t.row(i).transpose(), 1.0);
        }
    }
    PinvSolution {
        solution,
        rank,
        tolerance: tol,
    }
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix via its
/// eigen-decomposition, with the usual relative cutoff.
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let (vals, vecs) = sym_eigen_desc(m);
    let top = vals.iter().cloned().fold(0.0, |a: f64, b| a.max(b.abs()));
    let tol = pinv_tolerance(n, n, top);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        if vals[i].abs() > tol {
            let v = vecs.column(i);
            out.ger(1.0 / vals[i], &v, &v, 1.0);
        }
    }
    out
}

/// `X X'` without forming the transpose explicitly twice.
pub fn outer_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.nrows());
    g.gemm(1.0, x, &x.transpose(), 0.0);
    g
}

/// `X' X`.
pub fn inner_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and standard error of a sample of Monte Carlo draws.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    (m, sample_std(xs) / (xs.len() as f64).sqrt())
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn simple_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[5.0, 3.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, 2.0]);
        let sol = pinv_solve(&x, &y);
        assert_eq!(sol.rank, 1);
        assert!((sol.solution[0] - 1.0).abs() < 1e-12);
        assert!((sol.solution[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn sym_pinv_inverts_nonsingular() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = sym_pinv(&m);
        let id = &m * &p;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
