use nalgebra::{DMatrix, DVector, SVD};
use proptest::prelude::*;
use ridgeless::factors::{extract_factors_pca, idio_variances, select_k_bai_ng, simulate_factor_panel, FactorSimSpec};
use ridgeless::ingest::{apply_tcode, filter_missing, window_standardize, Frequency, Period, RawPanel};
use ridgeless::kernel::{build_factor_kernel, krr_predict, FactorKernel};
use ridgeless::lab::fit_min_norm;
use ridgeless::linalg::sym_eigen_desc;
use ridgeless::rng;
use ridgeless::spectral::{concentration, effective_ranks, hill_estimator, logrank_estimator, split_index};

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng::normal(&mut r))
}

fn orthogonal(k: usize, seed: u64) -> DMatrix<f64> {
    matrix(k, k, seed).qr().q()
}

fn descending(values: Vec<f64>) -> Vec<f64> {
    let mut v = values;
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

fn raw_panel(columns: Vec<Vec<Option<f64>>>) -> RawPanel {
    let t = columns[0].len();
    let n = columns.len();
    let values = DMatrix::from_fn(t, n, |i, j| columns[j][i].unwrap_or(f64::NAN));
    let periods: Vec<Period> = (0..t)
        .map(|i| Period::new(2000 + (i / 12) as i32, (i % 12) as u32 + 1))
        .collect();
    RawPanel {
        dates: periods.iter().map(|p| p.to_string()).collect(),
        periods,
        names: (0..n).map(|j| format!("s{j}")).collect(),
        tcodes: vec![1; n],
        values,
        frequency: Frequency::Monthly,
        transformed: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn min_norm_beats_every_null_space_shift(t in 3usize..12, extra in 1usize..20, seed in any::<u64>()) {
        let p = t + extra;
        let x = matrix(t, p, seed);
        let y = DVector::from_fn(t, |i, _| (i as f64).sin());
        let beta = fit_min_norm(&x, &y).unwrap().coefficients;
        let svd = SVD::new(x.clone(), false, true);
        let v_t = svd.v_t.unwrap();
        // the leading t rows of V' span the row space; projecting random
        // vectors off it gives null-space directions
        let row_space = v_t.rows(0, t).transpose();
        let mut r = rng::stream(seed, 7);
        for _ in 0..100 {
            let g = DVector::from_fn(p, |_, _| rng::normal(&mut r));
            let d = &g - &row_space * (row_space.transpose() * &g);
            let shifted = &beta + &d;
            prop_assert!((&x * &shifted - &y).norm() < 1e-8 * (1.0 + y.norm()));
            prop_assert!(shifted.norm() > beta.norm());
        }
    }

    #[test]
    fn projection_leaves_signal_in_row_space(t in 3usize..10, extra in 1usize..30, seed in any::<u64>()) {
        let x = matrix(t, t + extra, seed);
        let beta_star = DVector::from_fn(t + extra, |i, _| 1.0 / (1.0 + i as f64));
        let gram = &x * x.transpose();
        let projected = x.transpose() * gram.cholesky().unwrap().solve(&(&x * &beta_star));
        let residual = &x * (&beta_star - projected);
        prop_assert!(residual.amax() < 1e-10 * (1.0 + (&x * &beta_star).amax()));
    }

    #[test]
    fn krr_invariant_to_joint_scaling(w in 3usize..15, c in 0.01f64..100.0, seed in any::<u64>()) {
        let f = matrix(w, 2, seed);
        let k = &f * f.transpose();
        let y = DVector::from_fn(w, |i, _| i as f64 - 1.0);
        let k_new = k.column(0).into_owned();
        let a = krr_predict(&FactorKernel::from_matrix(k.clone(), 0.7).unwrap(), &y, &k_new).unwrap();
        let b = krr_predict(&FactorKernel::from_matrix(k * c, 0.7 * c).unwrap(), &y, &(k_new * c)).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn rank_identity_and_scale_invariance(values in prop::collection::vec(0.01f64..100.0, 6..60), c in 1e-3f64..1e3, k_frac in 0.0f64..0.8) {
        let eigs = descending(values);
        let n = eigs.len();
        let k = ((n - 3) as f64 * k_frac) as usize;
        let (r_k, big) = effective_ranks(&eigs, k).unwrap();
        let conc = concentration(&eigs, k).unwrap();
        prop_assert!((big * conc - (n - k) as f64).abs() < 1e-10 * n as f64);
        prop_assert!(r_k <= big + 1e-9 && big <= (n - k) as f64 + 1e-9);
        let scaled: Vec<f64> = eigs.iter().map(|v| v * c).collect();
        let (r2, big2) = effective_ranks(&scaled, k).unwrap();
        prop_assert!((r_k - r2).abs() < 1e-10 * r_k && (big - big2).abs() < 1e-10 * big);
        prop_assert!((conc - concentration(&scaled, k).unwrap()).abs() < 1e-10 * conc);
        let tail = &eigs[k..];
        let tail2 = &scaled[k..];
        if tail[0] > tail[tail.len() - 1] {
            let h1 = logrank_estimator(tail).unwrap();
            prop_assert!((h1 - logrank_estimator(tail2).unwrap()).abs() < 1e-9 * h1.abs());
            let kh = tail.len() - 1;
            if tail[0] > tail[kh] {
                let a = hill_estimator(tail, kh).unwrap();
                prop_assert!((a - hill_estimator(tail2, kh).unwrap()).abs() < 1e-9 * a);
            }
        }
        prop_assert_eq!(split_index(&eigs, 5, 1.0).unwrap(), split_index(&scaled, 5, 1.0).unwrap());
    }

    #[test]
    fn standardized_columns_have_unit_moments(t in 5usize..40, n in 1usize..6, seed in any::<u64>()) {
        let x = matrix(t, n, seed) * 3.0 + DMatrix::from_element(t, n, 5.0);
        let (z, _) = window_standardize(&x, None).unwrap();
        for j in 0..n {
            let col = z.column(j);
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t as f64 - 1.0)).sqrt();
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn standardization_ignores_rows_outside_the_window(t in 6usize..30, seed in any::<u64>(), bump in -1e6f64..1e6) {
        let mut full = matrix(t + 5, 3, seed);
        let (_, before) = window_standardize(&full.rows(0, t).into_owned(), None).unwrap();
        for i in t..t + 5 {
            full[(i, 1)] += bump;
        }
        let (_, after) = window_standardize(&full.rows(0, t).into_owned(), None).unwrap();
        prop_assert_eq!(before.means, after.means);
        prop_assert_eq!(before.stds, after.stds);
    }

    #[test]
    fn first_difference_round_trips(start in -50i32..50, steps in prop::collection::vec(-1000i32..1000, 2..40)) {
        // values on a 1/8 grid are exact in binary, so the round trip is exact
        let mut level = start as f64 / 8.0;
        let mut series = vec![Some(level)];
        for s in &steps {
            level += *s as f64 / 8.0;
            series.push(Some(level));
        }
        let diff = apply_tcode(&series, 2).unwrap();
        prop_assert!(diff[0].is_none());
        let mut rebuilt = series[0].unwrap();
        for (i, d) in diff.iter().enumerate().skip(1) {
            rebuilt += d.unwrap();
            prop_assert!((rebuilt - series[i].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_filter_is_idempotent(mask in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 1..6), frac in 0.0f64..1.0) {
        let columns: Vec<Vec<Option<f64>>> = mask
            .iter()
            .enumerate()
            .map(|(j, m)| m.iter().enumerate().map(|(i, &miss)| (!miss).then_some((i * 10 + j) as f64)).collect())
            .collect();
        let panel = raw_panel(columns);
        if let Ok(once) = filter_missing(&panel, frac) {
            let twice = filter_missing(&once.panel, frac).unwrap();
            prop_assert!(twice.dropped.is_empty());
            prop_assert_eq!(&twice.panel.names, &once.panel.names);
        }
    }

    #[test]
    fn factor_quantities_invariant_to_rotation(seed in any::<u64>()) {
        let spec = FactorSimSpec::homoscedastic(40, 12, 3, 0.8);
        let s = simulate_factor_panel(&spec, seed).unwrap();
        let fit = extract_factors_pca(&s.x, 3).unwrap();
        let rotated = fit.rotate(&orthogonal(3, seed ^ 0x55));
        let window: Vec<usize> = (0..40).collect();
        let k1 = build_factor_kernel(&fit, &window).unwrap();
        let k2 = build_factor_kernel(&rotated, &window).unwrap();
        prop_assert!((&k1.k - &k2.k).amax() < 1e-10 * (1.0 + k1.k.amax()));
        prop_assert!((idio_variances(&fit) - idio_variances(&rotated)).amax() < 1e-10);
        let (eigs, _) = sym_eigen_desc(&k1.k);
        prop_assert!(eigs.iter().all(|&e| e > -1e-10 * eigs[0]));
        prop_assert!(eigs.iter().skip(3).all(|&e| e.abs() < 1e-8 * eigs[0]));
    }

    #[test]
    fn bai_ng_ignores_column_order(seed in any::<u64>()) {
        let spec = FactorSimSpec::homoscedastic(60, 30, 2, 0.7);
        let x = simulate_factor_panel(&spec, seed).unwrap().x;
        let mut order: Vec<usize> = (0..30).collect();
        order.reverse();
        order.swap(3, 17);
        let permuted = x.select_columns(&order);
        prop_assert_eq!(select_k_bai_ng(&x, 6).unwrap().k, select_k_bai_ng(&permuted, 6).unwrap().k);
    }
}
