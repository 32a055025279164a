use rallyrecon::synthbench::{run_benchmark, BenchConfig, CalibMode, EvalReport, NoiseModel, ViewName};

fn side_suite(n: usize, sigma_p: f64, noisy: Vec<bool>) -> EvalReport {
    let cfg = BenchConfig {
        n_trajectories: n,
        seed: 11,
        views: vec![ViewName::Side],
        noisy,
        noise: NoiseModel { sigma_p, ..NoiseModel::standard() },
        ..BenchConfig::default()
    };
    run_benchmark(&cfg).unwrap()
}

fn mae(report: &EvalReport, view: ViewName, noisy: bool) -> f64 {
    report.row(view, noisy, CalibMode::Known).and_then(|r| r.mae_cm).unwrap()
}

#[test]
fn noiseless_tracks_with_true_calibration_all_succeed() {
    let cfg = BenchConfig { n_trajectories: 100, seed: 3, noisy: vec![false], ..BenchConfig::default() };
    let report = run_benchmark(&cfg).unwrap();
    for row in &report.rows {
        assert_eq!(row.successes, row.n, "{row:?}");
        assert!(row.mae_cm.unwrap() < 1.0, "{row:?}");
    }
}

#[test]
fn side_view_error_grows_with_pixel_noise() {
    let maes: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&s| mae(&side_suite(100, s, vec![true]), ViewName::Side, true)).collect();
    for w in maes.windows(2) {
        assert!(w[0] < w[1], "{maes:?}");
    }
}

#[test]
fn two_pixel_noise_less_than_doubles_side_view_error() {
    let report = side_suite(100, 2.0, vec![false, true]);
    let (clean, noisy) = (mae(&report, ViewName::Side, false), mae(&report, ViewName::Side, true));
    assert!(noisy < 2.0 * clean, "noiseless {clean:.2} cm, 2 px {noisy:.2} cm");
}
