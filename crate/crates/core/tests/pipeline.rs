use nalgebra::{DMatrix, DVector, SVD};
use ridgeless::factors::{extract_factors_pca, simulate_factor_panel, FactorSimSpec, SimSpec, Spectrum};
use ridgeless::forecast::{fk_fit_gls, fk_forecast, rolling_evaluate, EvalConfig};
use ridgeless::kernel::FactorKernel;
use ridgeless::lab::{mc_risk, sweep_double_descent, Branch, SweepConfig};
use ridgeless::spectral::{concentration, pareto_population};

fn eval_panel() -> ridgeless::ingest::RawPanel {
    let mut spec = FactorSimSpec::homoscedastic(160, 12, 2, 1.0);
    spec.factor_persistence = 0.5;
    spec.target_ar = 0.4;
    simulate_factor_panel(&spec, 5).unwrap().to_panel().to_raw().unwrap()
}

fn small_config() -> EvalConfig {
    EvalConfig {
        window: 50,
        horizons: vec![1, 4],
        k_max: 5,
        targets: Some(vec!["y".into(), "x3".into()]),
        ..EvalConfig::monthly()
    }
}

#[test]
fn ratio_identity_holds_in_every_cell() {
    let report = rolling_evaluate(&eval_panel(), &small_config()).unwrap();
    assert!(!report.cells.is_empty());
    for c in &report.cells {
        let lhs = c.rmse_ratio * c.rmse_ratio * c.msfe_fm;
        assert!(
            (lhs - c.msfe_fk).abs() < 1e-12 * c.msfe_fk.max(1.0),
            "{}: {lhs} vs {}",
            c.target,
            c.msfe_fk
        );
    }
}

#[test]
fn forecasts_ignore_predictor_order() {
    let panel = eval_panel();
    let mut order: Vec<usize> = (0..panel.n_series()).collect();
    order.reverse();
    let shuffled = panel.select_columns(&order);
    let a = rolling_evaluate(&panel, &small_config()).unwrap();
    let b = rolling_evaluate(&shuffled, &small_config()).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(
            (x.target.as_str(), x.horizon, x.origin),
            (y.target.as_str(), y.horizon, y.origin)
        );
        assert!((x.fm - y.fm).abs() < 1e-8 * (1.0 + x.fm.abs()));
        assert!((x.fk - y.fk).abs() < 1e-8 * (1.0 + x.fk.abs()));
    }
}

#[test]
fn zero_kernel_reduces_to_gls_ar1() {
    let w = 12;
    let y_lag = DVector::from_fn(w, |i, _| (i as f64 * 0.7).cos());
    let y_h = &y_lag * 0.6 + DVector::from_fn(w, |i, _| 0.01 * (i as f64).sin());
    let kernel = FactorKernel::from_matrix(DMatrix::zeros(w, w), 2.5).unwrap();
    let fit = fk_fit_gls(&kernel, &y_h, &y_lag).unwrap();
    let ols = y_lag.dot(&y_h) / y_lag.dot(&y_lag);
    assert!((fit.phi - ols).abs() < 1e-12);
    let f = fk_forecast(&fit, &DVector::zeros(w), 1.5).unwrap();
    assert!((f - fit.phi * 1.5).abs() < 1e-12);
}

#[test]
fn risk_components_add_up() {
    for (n, p) in [(30, 10), (30, 30), (30, 12)] {
        let spec = SimSpec {
            t: 20,
            n,
            spectrum: Spectrum::FlatTail {
                q: 0.6,
                head_size: 4,
                tail_level: 0.2,
            },
            signal: vec![1.0, -0.5, 0.25],
            noise_sd: 0.8,
        };
        let r = mc_risk(&spec, p, 2_000, 17).unwrap();
        let gap = r.msfe - r.bias_sq - r.variance - r.noise_floor;
        let se = (r.mc_se.powi(2) + r.bias_se.powi(2) + r.variance_se.powi(2)).sqrt();
        assert!(gap.abs() < 4.0 * se, "P = {p}: gap {gap} vs se {se}");
        assert!(r.bias_sq >= 0.0 && r.variance >= 0.0);
    }
}

#[test]
fn common_component_is_the_best_low_rank_approximation() {
    let spec = FactorSimSpec::homoscedastic(50, 25, 3, 0.9);
    let x = simulate_factor_panel(&spec, 8).unwrap().x;
    for k in 1..=4 {
        let fit = extract_factors_pca(&x, k).unwrap();
        let svd = SVD::new(x.clone(), true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut oracle = DMatrix::zeros(50, 25);
        for i in 0..k {
            oracle += u.column(i) * v_t.row(i) * svd.singular_values[i];
        }
        assert!((fit.common_component() - oracle).norm() < 1e-8);
    }
}

#[test]
fn light_pareto_tails_keep_concentration_bounded() {
    // geometric mean over draws: the sample second moment of a Pareto(3)
    // population has infinite variance, so arithmetic means are erratic
    let mean_c = |n: usize| {
        let logs: f64 = (0..200)
            .map(|s| concentration(&pareto_population(n, 3.0, 900 + s), 0).unwrap().ln())
            .sum();
        (logs / 200.0).exp()
    };
    let c: Vec<f64> = [500, 1000, 2000].iter().map(|&n| mean_c(n)).collect();
    for w in c.windows(2) {
        assert!(w[1] / w[0] < 1.15, "{c:?}");
    }
}

#[test]
fn augment_path_starts_where_the_pc_path_ends() {
    let mut spec = FactorSimSpec::homoscedastic(161, 20, 2, 1.0);
    spec.target_ar = 0.3;
    let panel = simulate_factor_panel(&spec, 3).unwrap().to_panel();
    let cfg = SweepConfig {
        b_grid: vec![1, 2, 4, 8],
        seed: 4,
        ..SweepConfig::default()
    };
    let curve = sweep_double_descent(&panel, "y", &cfg).unwrap();
    let pc_end = curve.branch(Branch::PcPath).last().unwrap();
    let aug_start = curve.branch(Branch::AugmentPath).next().unwrap();
    assert_eq!(pc_end.n_eff, 21);
    assert_eq!(aug_start.n_eff, 21);
    assert!((pc_end.msfe - aug_start.msfe).abs() < 1e-9 * pc_end.msfe);
    assert_eq!(curve.interpolation_threshold, 80);
    for b in [Branch::PcPath, Branch::AugmentPath] {
        let n: Vec<usize> = curve.branch(b).map(|p| p.n_eff).collect();
        assert!(n.windows(2).all(|w| w[0] < w[1]));
    }
    let full: Vec<usize> = curve
        .branch(Branch::AugmentPath)
        .filter(|p| !p.partial)
        .map(|p| p.n_eff)
        .collect();
    assert_eq!(full, vec![21, 41, 61, 101, 181]);
}
